use rand::seq::SliceRandom;

use super::loss::loss;
use super::net::{Network, PatchInput};
use crate::error::Result;
use crate::patch::LossWeights;
use crate::raster::LabelRaster;
use crate::seed::SeedBuilder;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub n_params: usize,
    pub h: f64,
    pub seed: u64,
    /// Denominator floor so parameters with near-zero gradient do not turn
    /// round-off into a large relative error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            n_params: 128,
            h: 1e-3,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters whose `±h` interval crossed a ReLU or pooling kink; the
    /// central difference is not a derivative there, so they are replaced
    /// by further random draws.
    pub skipped_kinks: usize,
}

/// Central differences against the supplied analytic gradient on randomly
/// drawn parameters.
pub fn grad_check_against(
    model: &Network<f64>,
    input: &PatchInput<f64>,
    target: &LabelRaster,
    weights: &LossWeights,
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut order: Vec<usize> = (0..model.params().len()).collect();
    order.shuffle(&mut SeedBuilder::new("grad-check").u64(opts.seed).rng());
    let base = model.activation_pattern(input)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport::default();
    for i in order {
        if report.checked == opts.n_params {
            break;
        }
        let orig = probe.params()[i];
        let mut side = |v: f64| -> Result<(f64, bool)> {
            probe.params_mut()[i] = v;
            let l = loss(&probe.forward(input)?, target, weights)?;
            Ok((l, probe.activation_pattern(input)? == base))
        };
        let (up, smooth_up) = side(orig + opts.h)?;
        let (down, smooth_down) = side(orig - opts.h)?;
        probe.params_mut()[i] = orig;
        if !(smooth_up && smooth_down) {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * opts.h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(opts.floor);
        report.max_rel_error = report.max_rel_error.max((a - numeric).abs() / denom);
        report.checked += 1;
    }
    Ok(report)
}

pub fn grad_check_report(
    model: &Network<f64>,
    input: &PatchInput<f64>,
    target: &LabelRaster,
    weights: &LossWeights,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_gradient(input, target, weights)?;
    grad_check_against(model, input, target, weights, &analytic, opts)
}

/// Max relative error between backprop and central differences.
pub fn grad_check(
    model: &Network<f64>,
    input: &PatchInput<f64>,
    target: &LabelRaster,
    weights: &LossWeights,
    opts: &GradCheckOptions,
) -> Result<f64> {
    Ok(grad_check_report(model, input, target, weights, opts)?.max_rel_error)
}
