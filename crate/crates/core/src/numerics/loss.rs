use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Output of [`label_smoothed_ce_detailed`].
#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean loss over non-pad rows (0 when every row is pad).
    pub loss: f64,
    /// Unnormalized loss of each row; 0 for pad rows.
    pub row_losses: Vec<f64>,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Tensor,
    /// Number of non-pad rows.
    pub count: usize,
}

/// Label-smoothed cross-entropy over rows of `logits` (`batch × vocab`).
///
/// Per row: `(1-ε)·(-log p_target) + (ε/K)·Σ_k (-log p_k)` where the sum runs
/// over every class except `pad_id` (`K = vocab - 1`). Rows whose target is
/// `pad_id` contribute neither loss nor gradient.
pub fn label_smoothed_ce(
    logits: &Tensor,
    targets: &[u32],
    epsilon: f64,
    pad_id: u32,
) -> Result<(f64, Tensor)> {
    let out = label_smoothed_ce_detailed(logits, targets, epsilon, pad_id)?;
    Ok((out.loss, out.grad))
}

pub fn label_smoothed_ce_detailed(
    logits: &Tensor,
    targets: &[u32],
    epsilon: f64,
    pad_id: u32,
) -> Result<LossOutput> {
    if logits.rank() != 2 {
        return Err(Error::arg("label_smoothed_ce: logits must be batch x vocab"));
    }
    let (rows, vocab) = (logits.shape()[0], logits.shape()[1]);
    if targets.len() != rows {
        return Err(Error::arg(format!(
            "label_smoothed_ce: {} targets for {rows} rows",
            targets.len()
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::arg(format!(
            "label_smoothed_ce: epsilon {epsilon} outside [0, 1)"
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::arg(format!(
            "label_smoothed_ce: target id {bad} >= vocab size {vocab}"
        )));
    }
    let pad = pad_id as usize;
    let smooth_classes = if pad < vocab { vocab - 1 } else { vocab };
    let smooth_w = if smooth_classes > 0 {
        epsilon / smooth_classes as f64
    } else {
        0.0
    };

    let count = targets.iter().filter(|&&t| t != pad_id).count();
    let mut grad = Tensor::zeros(&[rows, vocab]);
    let mut row_losses = vec![0.0; rows];
    if count == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            row_losses,
            grad,
            count,
        });
    }
    let norm = 1.0 / count as f64;
    let data = logits.data();
    let gdata = grad.data_mut();
    let mut total = 0.0;
    for r in 0..rows {
        let t = targets[r] as usize;
        if t == pad {
            continue;
        }
        let row = &data[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let nll = lse - row[t];
        let smooth: f64 = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != pad)
            .map(|(_, z)| lse - z)
            .sum();
        let l = (1.0 - epsilon) * nll + smooth_w * smooth;
        row_losses[r] = l;
        total += l;
        let g = &mut gdata[r * vocab..(r + 1) * vocab];
        for (k, gk) in g.iter_mut().enumerate() {
            let p = (row[k] - lse).exp();
            let mut v = p;
            if k == t {
                v -= 1.0 - epsilon;
            }
            if k != pad {
                v -= smooth_w;
            }
            *gk = v * norm;
        }
    }
    Ok(LossOutput {
        loss: total * norm,
        row_losses,
        grad,
        count,
    })
}
