use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::ssim::SsimParams;
use crate::tensor::{Element, Tape, Tensor, Var};

/// Weights of the MAE and DSSIM terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda1) || !ok(self.lambda2) || (self.lambda1 == 0.0 && self.lambda2 == 0.0) {
            return Err(MetricsError::InvalidWeights(*self));
        }
        Ok(())
    }
}

/// `λ1 · MAE(pred, target | region) + λ2 · (1 − SSIM(pred, target))`.
///
/// A term whose weight is zero is left out of the graph entirely, so its
/// preconditions (non-empty region, window fitting the volume) do not apply.
pub fn composite_loss<T: Element>(
    tape: &mut Tape<T>,
    pred: Var,
    target: &Tensor<T>,
    region: &[bool],
    weights: &LossWeights,
    ssim: &SsimParams,
) -> Result<Var, MetricsError> {
    weights.validate()?;
    let mut terms = Vec::with_capacity(2);
    if weights.lambda1 > 0.0 {
        let mae = tape.masked_mae(pred, target, region)?;
        terms.push(tape.scale(mae, T::lit(weights.lambda1)));
    }
    if weights.lambda2 > 0.0 {
        let s = tape.ssim3d(pred, target, ssim)?;
        let dssim = tape.affine(s, -T::one(), T::one());
        terms.push(tape.scale(dssim, T::lit(weights.lambda2)));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Forward-only composite loss.
pub fn composite_loss_value<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    region: &[bool],
    weights: &LossWeights,
    ssim: &SsimParams,
) -> Result<T, MetricsError> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let l = composite_loss(&mut tape, p, target, region, weights, ssim)?;
    Ok(tape.value(l).data()[0])
}
