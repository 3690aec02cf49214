//! Finite-difference verification of the hand-derived gradients.
//!
//! Every trainable parameter is perturbed by +/-h and the loss re-evaluated;
//! the central difference is compared against the analytic gradient from one
//! backward pass. Double precision only: at f32 the subtraction noise is the
//! same order as the quantity being measured.

use crate::error::Result;
use crate::loss::{loss_and_grad, loss_value, Loss};
use crate::net::Network;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Worst relative error observed for one named parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub max_relative_error: f64,
    pub elements: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub parameter_count: usize,
    pub per_param: Vec<ParamReport>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// Relative error with a small absolute floor so that structurally-zero
/// gradients do not blow up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Check every trainable parameter of `net` against central differences of
/// `loss(net(input), target)`. The network is restored to its original state.
///
/// The probe starts at h = 1e-5. A parameter whose error looks suspicious is
/// re-measured at smaller steps and the best agreement kept: an activation
/// kink inside the +/-h window produces an artifact that vanishes as h
/// shrinks, while a genuinely wrong gradient keeps its error at every step
/// size.
pub fn grad_check(
    net: &mut Network<f64>,
    input: &Tensor<f64>,
    target: &Tensor<f64>,
    loss: Loss,
) -> Result<GradCheckReport> {
    let values = net.forward_all(input)?;
    let (_, grad_out) = loss_and_grad(loss, values.last().unwrap(), target)?;
    let analytic = net.backward(&values, &grad_out)?;

    let mut report = GradCheckReport::default();
    for pi in 0..net.params().len() {
        if !net.params()[pi].trainable {
            continue;
        }
        let elems = net.params()[pi].value.len();
        let mut worst = 0.0f64;
        for ei in 0..elems {
            let reference = analytic.params[pi].data()[ei];
            let mut err = f64::INFINITY;
            for h in [DEFAULT_STEP, 1e-6, 1e-7] {
                let original = net.params()[pi].value.data()[ei];
                net.params_mut()[pi].value.data_mut()[ei] = original + h;
                let plus = loss_value(loss, &net.forward(input)?, target)?;
                net.params_mut()[pi].value.data_mut()[ei] = original - h;
                let minus = loss_value(loss, &net.forward(input)?, target)?;
                net.params_mut()[pi].value.data_mut()[ei] = original;

                let numeric = (plus - minus) / (2.0 * h);
                err = err.min(relative_error(reference, numeric));
                if err < 1e-5 {
                    break;
                }
            }
            if err > worst {
                worst = err;
            }
        }
        report.parameter_count += elems;
        if worst > report.max_relative_error {
            report.max_relative_error = worst;
        }
        report.per_param.push(ParamReport {
            name: net.params()[pi].name.clone(),
            max_relative_error: worst,
            elements: elems,
        });
    }
    Ok(report)
}

/// Deterministic random input/target pair for a network with the given input
/// shape and scale factor; used by the CLI `gradcheck` subcommand and tests.
pub fn seeded_pair(
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize, usize),
    seed: u64,
) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = Rng::new(seed ^ 0x6AD5_11FE_0F1E_77DA);
    let input = Tensor::from_fn(&[in_shape.0, in_shape.1, in_shape.2], |_| {
        rng.uniform(0.05, 0.95)
    });
    let target = Tensor::from_fn(&[out_shape.0, out_shape.1, out_shape.2], |_| {
        rng.uniform(0.05, 0.95)
    });
    (input, target)
}

/// Finite differences are meaningless where a PReLU pre-activation sits
/// within ~h of its kink, so walk the seed sequence until every
/// pre-activation clears this margin. Deterministic: the first qualifying
/// seed is a pure function of the network.
pub const KINK_MARGIN: f64 = 1e-3;

/// A [`seeded_pair`] whose input keeps PReLU pre-activations as far from
/// zero as the seed walk manages: the first seed beating [`KINK_MARGIN`]
/// wins, otherwise the best of the first 64 candidates. Deterministic.
pub fn conditioned_pair(
    net: &Network<f64>,
    in_shape: (usize, usize, usize),
    base_seed: u64,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let shapes = net.infer_shapes(in_shape)?;
    let out_shape = *shapes.last().expect("network has nodes");
    let mut best: Option<(f64, u64)> = None;
    for offset in 0..64u64 {
        let seed = base_seed.wrapping_add(offset);
        let (input, _) = seeded_pair(in_shape, out_shape, seed);
        let margin = net.prelu_margin(&input)?;
        if margin > KINK_MARGIN {
            return Ok(seeded_pair(in_shape, out_shape, seed));
        }
        if best.map(|(m, _)| margin > m).unwrap_or(true) {
            best = Some((margin, seed));
        }
    }
    let (_, seed) = best.expect("at least one candidate");
    Ok(seeded_pair(in_shape, out_shape, seed))
}
