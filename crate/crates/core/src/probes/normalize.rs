use std::collections::BTreeMap;

/// Centers each speaker's vectors at that speaker's mean, then scales each
/// to unit L2 norm. Zero vectors stay zero.
pub fn speaker_l2_normalize<S: AsRef<str>>(vectors: &[Vec<f64>], speaker_ids: &[S]) -> Vec<Vec<f64>> {
    let means = speaker_means(vectors.iter().zip(speaker_ids.iter().map(AsRef::as_ref)));
    vectors
        .iter()
        .zip(speaker_ids)
        .map(|(v, s)| center_and_scale(v, &means[s.as_ref()]))
        .collect()
}

fn speaker_means<'v, 's>(
    rows: impl Iterator<Item = (&'v Vec<f64>, &'s str)>,
) -> BTreeMap<&'s str, Vec<f64>> {
    let mut sums: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (v, s) in rows {
        let entry = sums.entry(s).or_insert_with(|| (vec![0.0; v.len()], 0));
        for (a, b) in entry.0.iter_mut().zip(v) {
            *a += b;
        }
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(s, (sum, n))| (s, sum.into_iter().map(|x| x / n as f64).collect()))
        .collect()
}

fn center_and_scale(v: &[f64], mean: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = v.iter().zip(mean).map(|(a, m)| a - m).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        c.iter_mut().for_each(|x| *x /= norm);
    }
    c
}

/// Normalizes both sides of a split. Speaker means come from training rows;
/// a speaker with no training rows is centered on its own test rows.
pub(crate) fn normalize_split(
    train: &mut [Vec<f64>],
    train_speakers: &[&str],
    test: &mut [Vec<f64>],
    test_speakers: &[&str],
) {
    let mut means = speaker_means(train.iter().zip(train_speakers.iter().copied()));
    let own = speaker_means(
        test.iter()
            .zip(test_speakers.iter().copied())
            .filter(|(_, s)| !means.contains_key(s)),
    );
    means.extend(own);
    for (v, s) in train.iter_mut().zip(train_speakers) {
        *v = center_and_scale(v, &means[s]);
    }
    for (v, s) in test.iter_mut().zip(test_speakers) {
        *v = center_and_scale(v, &means[s]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_pair_becomes_antipodes() {
        let m = [1.0, -2.0, 0.5];
        let v = vec![2.0, 1.0, 0.0];
        let w: Vec<f64> = v.iter().zip(&m).map(|(a, b)| -a + 2.0 * b).collect();
        let out = speaker_l2_normalize(&[v, w], &["s", "s"]);
        for (a, b) in out[0].iter().zip(&out[1]) {
            assert!((a + b).abs() < 1e-15);
        }
        assert!((out[0].iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singleton_speaker_is_zeroed() {
        let out = speaker_l2_normalize(&[vec![3.0, 4.0]], &["only"]);
        assert_eq!(out, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn matches_two_pass_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let speakers: Vec<String> = (0..30).map(|i| format!("s{}", i % 4)).collect();
        let vectors: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let out = speaker_l2_normalize(&vectors, &speakers);
        for s in 0..4 {
            let name = format!("s{}", s);
            let rows: Vec<usize> = (0..30).filter(|&i| speakers[i] == name).collect();
            let mut mean = [0.0; 5];
            for &i in &rows {
                for j in 0..5 {
                    mean[j] += vectors[i][j] / rows.len() as f64;
                }
            }
            for &i in &rows {
                let c: Vec<f64> = (0..5).map(|j| vectors[i][j] - mean[j]).collect();
                let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                for j in 0..5 {
                    assert!((out[i][j] - c[j] / n).abs() < 1e-12);
                }
            }
        }
    }
}
