use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst-case disagreement between reverse-mode and finite-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub max_abs_gradient: f64,
    pub checked: usize,
}

/// Compares [`Tape::backward`] against central differences for every entry of `params`.
///
/// `build` records a scalar loss on a fresh tape given one param node per
/// tensor. The relative error of each entry is measured against
/// `max(|analytic|, |numeric|, 1e-3 · largest gradient entry)`, so entries
/// that are negligible next to the overall gradient scale are judged on
/// absolute terms.
pub fn gradcheck<F>(params: &[Tensor], step: f64, build: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &ids)?;
        if tape.value(loss).len() != 1 {
            return Err(Error::Contract("gradcheck graph must end in a scalar".into()));
        }
        Ok((tape, ids, loss))
    };

    let (tape, ids, loss) = eval(params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get_or_zeros(&tape, id)).collect();

    let mut numeric = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for p in 0..params.len() {
        let mut g = vec![0.0; params[p].len()];
        for (i, slot) in g.iter_mut().enumerate() {
            let orig = params[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let (t, _, l) = eval(&work)?;
            let plus = t.value(l).item();
            work[p].data_mut()[i] = orig - step;
            let (t, _, l) = eval(&work)?;
            let minus = t.value(l).item();
            work[p].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        numeric.push(g);
    }

    let scale = analytic
        .iter()
        .flat_map(|t| t.data().iter())
        .chain(numeric.iter().flatten())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-12);
    let mut worst = 0.0_f64;
    let mut checked = 0;
    for (a, n) in analytic.iter().zip(&numeric) {
        for (&x, &y) in a.data().iter().zip(n) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradcheckReport {
        max_relative_error: worst,
        max_abs_gradient: scale,
        checked,
    })
}
