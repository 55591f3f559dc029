//! Actor and critic objectives with their gradients w.r.t. network outputs.

use crate::error::{Error, Result};

use super::layers::masked_log_softmax;
use super::Real;

/// Policy-gradient objective `J = (1/N) Σ_i A_i · log π(a_i | s_i)` over
/// `N` rows of masked logits, and `∂J/∂logits`.
///
/// The gradient for row `i` is `(A_i / N)(onehot(a_i) − π_i)` on legal
/// entries and zero on masked ones. Advantages are constants.
pub fn policy_objective<T: Real>(
    logits: &[T],
    masks: &[bool],
    actions: &[usize],
    advantages: &[T],
) -> Result<(T, Vec<T>)> {
    let rows = actions.len();
    if rows == 0 || advantages.len() != rows || !logits.len().is_multiple_of(rows) || masks.len() != logits.len() {
        return Err(Error::Shape(format!(
            "policy objective: {} logits, {} mask entries, {rows} actions, {} advantages",
            logits.len(),
            masks.len(),
            advantages.len()
        )));
    }
    let width = logits.len() / rows;
    let n = T::from_f64(rows as f64);
    let mut objective = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for i in 0..rows {
        let span = i * width..(i + 1) * width;
        let mask = &masks[span.clone()];
        if actions[i] >= width || !mask[actions[i]] {
            return Err(Error::Contract(format!("row {i}: action {} is masked", actions[i])));
        }
        let log_p = masked_log_softmax(&logits[span.clone()], mask)?;
        let scale = advantages[i] / n;
        objective += scale * log_p[actions[i]];
        for (j, g) in grad[span].iter_mut().enumerate() {
            if mask[j] {
                let onehot = if j == actions[i] { T::one() } else { T::zero() };
                *g = scale * (onehot - log_p[j].exp());
            }
        }
    }
    Ok((objective, grad))
}

/// Critic loss `L = (1/2N) Σ_i (V_i − G_i)²` and `∂L/∂V`.
pub fn value_loss<T: Real>(values: &[T], returns: &[T]) -> Result<(T, Vec<T>)> {
    if values.is_empty() || values.len() != returns.len() {
        return Err(Error::Shape(format!(
            "value loss: {} values, {} returns",
            values.len(),
            returns.len()
        )));
    }
    let n = T::from_f64(values.len() as f64);
    let half = T::from_f64(0.5);
    let mut loss = T::zero();
    let grad = values
        .iter()
        .zip(returns)
        .map(|(&v, &g)| {
            let diff = v - g;
            loss += half * diff * diff / n;
            diff / n
        })
        .collect();
    Ok((loss, grad))
}
