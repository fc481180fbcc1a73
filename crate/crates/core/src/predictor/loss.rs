use crate::error::{Error, Result};
use crate::grid::GridPmf;

/// Predicted probabilities are clipped to `[PROB_FLOOR, 1]` before the log.
pub const PROB_FLOOR: f64 = 1e-7;

/// Cross-entropy `-sum_i sum_k p_k(i) ln y_k(i)` over the unmasked target cells.
pub fn loss(predictions: &GridPmf, targets: &GridPmf) -> Result<f64> {
    if predictions.cells() != targets.cells() || predictions.classes() != targets.classes() {
        return Err(Error::data(format!(
            "prediction grid {}x{} does not match target grid {}x{}",
            predictions.cells(),
            predictions.classes(),
            targets.cells(),
            targets.classes()
        )));
    }
    let mut total = 0.0;
    for i in 0..targets.cells() {
        if targets.is_masked(i) {
            continue;
        }
        total += cell_loss(predictions.pmf(i), targets.pmf(i));
    }
    Ok(total)
}

#[inline]
fn cell_loss(y: &[f64], p: &[f64]) -> f64 {
    p.iter()
        .zip(y)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &yk)| -pk * yk.clamp(PROB_FLOOR, 1.0).ln())
        .sum()
}

/// Per-cell soft-max over `classes` logits.
pub(crate) fn softmax_cells(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = logits.to_vec();
    for cell in out.chunks_exact_mut(classes) {
        let max = cell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in cell.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        cell.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Loss of soft-maxed `probs` and its derivative with respect to the logits.
///
/// The derivative is that of the clipped loss: classes whose probability is
/// at or below the floor contribute no gradient through the log.
pub fn logit_gradient(probs: &[f64], targets: &GridPmf, d_logits: &mut [f64]) -> f64 {
    let k = targets.classes();
    let mut total = 0.0;
    let mut g = vec![0.0; k];
    for i in 0..targets.cells() {
        let out = &mut d_logits[i * k..(i + 1) * k];
        if targets.is_masked(i) {
            out.fill(0.0);
            continue;
        }
        let y = &probs[i * k..(i + 1) * k];
        let p = targets.pmf(i);
        total += cell_loss(y, p);
        for c in 0..k {
            g[c] = if p[c] > 0.0 && y[c] > PROB_FLOOR { -p[c] / y[c] } else { 0.0 };
        }
        let dot: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        for c in 0..k {
            out[c] = y[c] * (g[c] - dot);
        }
    }
    total
}
