use super::tensor::{Real, Tensor};
use crate::class::UNLABELED;
use crate::error::{DialError, Result};
use crate::patch::LossWeights;
use crate::raster::LabelRaster;

/// Weighted cross-entropy summed over labeled pixels. When `grad` is given,
/// `scale · ∂sum/∂logits` is written into it. Returns `(sum, labeled)`.
pub fn loss_sum<F: Real>(
    logits: &Tensor<F>,
    target: &LabelRaster,
    weights: &LossWeights,
    mut grad: Option<(&mut Tensor<F>, f64)>,
) -> Result<(f64, u64)> {
    if target.dims() != (logits.w, logits.h) {
        return Err(DialError::DimensionMismatch {
            expected: (logits.w, logits.h),
            actual: target.dims(),
        });
    }
    let c = logits.c;
    let n = logits.plane_len();
    let mut z = vec![F::zero(); c];
    let mut sum = 0.0;
    let mut labeled = 0u64;
    for (i, &t) in target.as_raw().iter().enumerate() {
        if t == UNLABELED {
            continue;
        }
        let t = t as usize;
        if t >= c {
            return Err(DialError::InvalidLabel(t as u8));
        }
        labeled += 1;
        let mut max = F::neg_infinity();
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = logits.data[k * n + i];
            max = max.max(*zk);
        }
        let mut denom = F::zero();
        for zk in z.iter_mut() {
            *zk = (*zk - max).exp();
            denom += *zk;
        }
        let w = weights.get(t);
        let log_p = (z[t] / denom).ln();
        sum += -w * log_p.f64();
        if let Some((g, scale)) = grad.as_mut() {
            let s = F::of(*scale * w);
            for (k, &zk) in z.iter().enumerate() {
                let p = zk / denom;
                let onehot = if k == t { F::one() } else { F::zero() };
                g.data[k * n + i] = s * (p - onehot);
            }
        }
    }
    Ok((sum, labeled))
}

/// Mean weighted cross-entropy over labeled pixels.
pub fn loss<F: Real>(
    logits: &Tensor<F>,
    target: &LabelRaster,
    weights: &LossWeights,
) -> Result<f64> {
    let (sum, n) = loss_sum(logits, target, weights, None)?;
    if n == 0 {
        return Err(DialError::NoLabeledPixels);
    }
    Ok(sum / n as f64)
}

/// Softmax probabilities per pixel, channel-major like the logits.
pub fn softmax<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let n = logits.plane_len();
    let mut out = logits.clone();
    for i in 0..n {
        let max = (0..logits.c)
            .map(|k| logits.data[k * n + i])
            .fold(F::neg_infinity(), F::max);
        let mut denom = F::zero();
        for k in 0..logits.c {
            let e = (logits.data[k * n + i] - max).exp();
            out.data[k * n + i] = e;
            denom += e;
        }
        for k in 0..logits.c {
            out.data[k * n + i] = out.data[k * n + i] / denom;
        }
    }
    out
}
