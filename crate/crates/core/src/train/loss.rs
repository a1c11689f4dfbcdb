use crate::net::{Scalar, Tensor};

use super::TrainError;

/// Label-smoothed target: `1 - eps` on `token`, `eps / (V - 1)` elsewhere.
pub fn smoothed_target(token: usize, vocab: usize, eps: f64) -> Vec<f64> {
    let off = if vocab > 1 { eps / (vocab - 1) as f64 } else { 0.0 };
    let mut q = vec![off; vocab];
    q[token] = 1.0 - eps;
    q
}

/// Output of [`loss_kl`].
#[derive(Clone, Debug)]
pub struct LossOutput<F> {
    /// Mean KL over counted positions.
    pub loss: f64,
    /// Number of counted (non-PAD) positions.
    pub count: usize,
    pub d_logits: Tensor<F>,
}

/// Mean over positions with `mask[t] == true` of KL(smoothed target || softmax).
pub fn loss_kl<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[usize],
    mask: &[bool],
    eps: f64,
) -> Result<LossOutput<F>, TrainError> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let (sum, d_logits) = kl_sum(logits, targets, mask, eps, 1.0 / count as f64)?;
    Ok(LossOutput {
        loss: sum / count as f64,
        count,
        d_logits,
    })
}

/// Summed KL over masked positions; gradients are scaled by `grad_scale`.
pub(crate) fn kl_sum<F: Scalar>(
    logits: &Tensor<F>,
    targets: &[usize],
    mask: &[bool],
    eps: f64,
    grad_scale: f64,
) -> Result<(f64, Tensor<F>), TrainError> {
    if logits.shape.len() != 2 || logits.shape[0] != targets.len() || targets.len() != mask.len() {
        return Err(TrainError::InvalidInput(format!(
            "logits {:?} vs {} targets and {} mask entries",
            logits.shape,
            targets.len(),
            mask.len()
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(TrainError::InvalidInput(format!("label smoothing {eps} outside [0, 1)")));
    }
    let v = logits.shape[1];
    let off = if v > 1 { eps / (v - 1) as f64 } else { 0.0 };
    // sum q ln q, the target entropy term
    let neg_entropy = xlogx(1.0 - eps) + (v - 1) as f64 * xlogx(off);
    let mut d = Tensor::zeros(&logits.shape);
    let mut total = 0.0;
    let mut row = vec![0.0f64; v];
    for (t, (&y, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if y >= v {
            return Err(TrainError::InvalidInput(format!("target {y} outside vocabulary {v}")));
        }
        let lr = logits.row(t);
        let mut max = f64::NEG_INFINITY;
        for (r, &z) in row.iter_mut().zip(lr) {
            *r = z.f64();
            max = max.max(*r);
        }
        let mut sum_exp = 0.0;
        let mut sum_z = 0.0;
        for &z in &row {
            sum_exp += (z - max).exp();
            sum_z += z;
        }
        let lse = max + sum_exp.ln();
        // sum q_j z_j
        let qz = (1.0 - eps) * row[y] + off * (sum_z - row[y]);
        total += neg_entropy - (qz - lse);
        let dr = d.row_mut(t);
        for (j, (g, &z)) in dr.iter_mut().zip(&row).enumerate() {
            let p = (z - lse).exp();
            let q = if j == y { 1.0 - eps } else { off };
            *g = F::of((p - q) * grad_scale);
        }
    }
    Ok((total, d))
}

fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}
