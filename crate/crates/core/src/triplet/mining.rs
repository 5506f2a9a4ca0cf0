use crate::error::{Error, Result};

/// Indices of one (anchor, positive, negative) triple within a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mining {
    /// Nearest negative strictly farther than the positive; farthest
    /// negative when none is.
    #[default]
    SemiHard,
    /// Nearest negative.
    Hard,
    /// Every negative.
    AllValid,
}

impl std::str::FromStr for Mining {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semi-hard" | "semihard" => Ok(Mining::SemiHard),
            "hard" => Ok(Mining::Hard),
            "all-valid" | "all" => Ok(Mining::AllValid),
            other => Err(Error::Config(format!(
                "unknown mining `{}` (semi-hard, hard, all-valid)",
                other
            ))),
        }
    }
}

/// Squared Euclidean distances between the rows of an `n × dim` buffer;
/// symmetric with an exactly zero diagonal.
pub fn pairwise_sqdist(rows: &[f64], n: usize, dim: usize) -> Vec<f64> {
    crate::autodiff::sqdist_matrix(rows, n, dim)
}

/// Selects one negative per ordered (anchor, positive) pair. `dist` is the
/// `n × n` squared-distance matrix and `groups[i]` the group of row `i`.
/// Ties go to the lowest index.
pub fn mine_triples(dist: &[f64], groups: &[usize], mining: Mining) -> Result<Vec<Triple>> {
    let n = groups.len();
    if dist.len() != n * n {
        return Err(Error::Shape {
            op: "mine_triples",
            detail: format!("{} distances for {} rows", dist.len(), n),
        });
    }
    let has_pair = (0..n).any(|a| (0..n).any(|p| p != a && groups[p] == groups[a]));
    let distinct: std::collections::BTreeSet<usize> = groups.iter().copied().collect();
    if !has_pair || distinct.len() < 2 {
        return Err(Error::Mining(format!(
            "need a group with at least 2 members and at least 2 groups; got {} groups, pairs: {}",
            distinct.len(),
            has_pair
        )));
    }

    let mut out = Vec::new();
    for a in 0..n {
        let row = &dist[a * n..(a + 1) * n];
        for p in 0..n {
            if p == a || groups[p] != groups[a] {
                continue;
            }
            let negatives = (0..n).filter(|&j| groups[j] != groups[a]);
            match mining {
                Mining::AllValid => out.extend(negatives.map(|negative| Triple {
                    anchor: a,
                    positive: p,
                    negative,
                })),
                Mining::Hard => {
                    let negative = negatives
                        .fold(None, |best: Option<usize>, j| match best {
                            Some(b) if row[b] <= row[j] => Some(b),
                            _ => Some(j),
                        })
                        .expect("at least two groups");
                    out.push(Triple {
                        anchor: a,
                        positive: p,
                        negative,
                    });
                }
                Mining::SemiHard => {
                    let d_ap = row[p];
                    let mut semi: Option<usize> = None;
                    let mut far: Option<usize> = None;
                    for j in negatives {
                        if row[j] > d_ap && semi.is_none_or(|b| row[j] < row[b]) {
                            semi = Some(j);
                        }
                        if far.is_none_or(|b| row[j] > row[b]) {
                            far = Some(j);
                        }
                    }
                    out.push(Triple {
                        anchor: a,
                        positive: p,
                        negative: semi.or(far).expect("at least two groups"),
                    });
                }
            }
        }
    }
    Ok(out)
}
