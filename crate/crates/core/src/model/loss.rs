use crate::error::{Result, VrdError};
use crate::field::Field;
use crate::model::Labels;

/// Mean per-pixel softmax cross-entropy and its gradient with respect to
/// the scores.
pub fn softmax_xent(scores: &Field, labels: &Labels) -> Result<(f64, Field)> {
    if scores.height() != labels.height || scores.width() != labels.width {
        return Err(VrdError::shape("scores and labels lattices differ"));
    }
    let k = scores.channels();
    if let Some(&bad) = labels.data.iter().find(|&&l| l >= k) {
        return Err(VrdError::invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let n = scores.sites() as f64;
    let mut grad = scores.clone();
    let mut loss = 0.0;
    for (px, &label) in grad.data_mut().chunks_exact_mut(k).zip(&labels.data) {
        let (arg, max) =
            px.iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (c, v)| if v > b.1 { (c, v) } else { b },
                );
        let shifted_label = px[label] - max;
        // z = 1 + rest, the 1 coming from the max entry
        let mut rest = 0.0;
        for (c, v) in px.iter_mut().enumerate() {
            *v = (*v - max).exp();
            if c != arg {
                rest += *v;
            }
        }
        let z = 1.0 + rest;
        loss -= shifted_label - rest.ln_1p();
        for v in px.iter_mut() {
            *v /= z * n;
        }
        px[label] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}
