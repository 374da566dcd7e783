//! Central finite-difference oracle for supernet gradients.
//!
//! Only [`SupernetState::loss`] is used here, so the check is independent of
//! the analytic reverse pass it validates.

use crate::arch::ArchParams;
use crate::data::{Sample, SpiralConfig, SyntheticDataset};
use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::supernet::{SupernetConfig, SupernetState};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Denominator floor for [`relative_error`]. Below this magnitude a
/// gradient coordinate is compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Samples whose relu pre-activations all lie closer than this to zero are
/// left out of [`CheckPoint::smooth`] batches. A step of `DEFAULT_STEP` on
/// any single coordinate moves a pre-activation by far less, so no unit
/// crosses its kink during a central difference.
pub const KINK_MARGIN: f64 = 1e-2;

/// A freshly initialized net, alpha uniform in `[-1, 1]` and a batch of
/// spiral training samples.
#[derive(Debug, Clone)]
pub struct CheckPoint {
    pub state: SupernetState,
    pub alpha: ArchParams,
    pub batch: Vec<Sample>,
}

impl CheckPoint {
    /// The first `batch_size` training samples (in split order) whose relu
    /// margin is at least [`KINK_MARGIN`].
    pub fn smooth(net: &SupernetConfig, seed: u64, batch_size: usize) -> Result<Self> {
        let root = RandomStream::new(seed);
        let spirals = SpiralConfig {
            num_classes: net.num_classes,
            ..SpiralConfig::default()
        };
        let data = SyntheticDataset::spirals(&spirals, &mut root.substream("data"))?;
        let state = SupernetState::new(net, &mut root.substream("init"))?;
        let mut alpha = ArchParams::zeros(state.layout());
        let mut alpha_rng = root.substream("alpha");
        for a in alpha.as_mut_slice() {
            *a = alpha_rng.uniform(-1.0, 1.0);
        }
        let mut batch = Vec::with_capacity(batch_size);
        for s in &data.train {
            if batch.len() == batch_size {
                break;
            }
            if state.relu_margin(&alpha, s)? >= KINK_MARGIN {
                batch.push(*s);
            }
        }
        if batch.len() < batch_size {
            return Err(Error::InvalidParameter(format!(
                "only {} samples clear the relu margin, wanted {batch_size}",
                batch.len()
            )));
        }
        Ok(Self {
            state,
            alpha,
            batch,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_weights: f64,
    pub worst_weight: usize,
    pub max_rel_alpha: f64,
    pub worst_alpha: usize,
    pub checked_weights: usize,
    pub checked_alpha: usize,
}

impl GradCheckReport {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_weights.max(self.max_rel_alpha)
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Central differences of the batch loss w.r.t. every weight.
pub fn numeric_grad_weights(
    state: &SupernetState,
    alpha: &ArchParams,
    batch: &[Sample],
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = state.clone();
    let mut out = Vec::with_capacity(state.num_weights());
    for i in 0..state.num_weights() {
        let w0 = probe.weights()[i];
        probe.weights_mut()[i] = w0 + step;
        let plus = probe.loss(alpha, batch)?;
        probe.weights_mut()[i] = w0 - step;
        let minus = probe.loss(alpha, batch)?;
        probe.weights_mut()[i] = w0;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Central differences of the batch loss w.r.t. every alpha entry.
pub fn numeric_grad_alpha(
    state: &SupernetState,
    alpha: &ArchParams,
    batch: &[Sample],
    step: f64,
) -> Result<Vec<f64>> {
    let mut probe = alpha.clone();
    let mut out = Vec::with_capacity(alpha.len());
    for i in 0..alpha.len() {
        let a0 = probe.as_slice()[i];
        probe.as_mut_slice()[i] = a0 + step;
        let plus = state.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = a0 - step;
        let minus = state.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = a0;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

fn worst(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold(
            (0.0, 0),
            |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) },
        )
}

/// Compares every coordinate of the analytic weight and alpha gradients with
/// central differences.
pub fn check_gradients(
    state: &SupernetState,
    alpha: &ArchParams,
    batch: &[Sample],
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = state.loss_and_grads(alpha, batch)?;
    let num_w = numeric_grad_weights(state, alpha, batch, step)?;
    let num_a = numeric_grad_alpha(state, alpha, batch, step)?;
    let (max_rel_weights, worst_weight) = worst(&analytic.weights, &num_w);
    let (max_rel_alpha, worst_alpha) = worst(&analytic.alpha, &num_a);
    Ok(GradCheckReport {
        max_rel_weights,
        worst_weight,
        max_rel_alpha,
        worst_alpha,
        checked_weights: num_w.len(),
        checked_alpha: num_a.len(),
    })
}
