//! Diversity-aware fitness: normalized loss, distance to an archive of past
//! generation bests, and entropy of the operation mix. Lower is better.

use std::collections::VecDeque;

use crate::arch::{decode_alpha, discretize, op_frequencies, ArchLayout};
use crate::error::{Error, Result};
use crate::icso::Swarm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessWeights {
    pub lambda_swarm: f64,
    pub lambda_op: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            lambda_swarm: 0.3,
            lambda_op: 0.2,
        }
    }
}

impl FitnessWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_swarm", self.lambda_swarm),
            ("lambda_op", self.lambda_op),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBounds {
    l_min: f64,
    l_max: f64,
}

impl LossBounds {
    pub fn new(l_min: f64, l_max: f64) -> Result<Self> {
        if !(l_min.is_finite() && l_max.is_finite() && l_min < l_max) {
            return Err(Error::InvalidParameter(format!(
                "loss bounds need l_min < l_max, got ({l_min}, {l_max})"
            )));
        }
        Ok(Self { l_min, l_max })
    }

    /// `[0, ln C]`: zero loss to the loss of a uniform prediction over C classes.
    pub fn cross_entropy(num_classes: usize) -> Result<Self> {
        Self::new(0.0, (num_classes as f64).ln())
    }

    pub fn l_min(&self) -> f64 {
        self.l_min
    }

    pub fn l_max(&self) -> f64 {
        self.l_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessReport {
    pub base: f64,
    pub swarm_div: f64,
    pub op_div: f64,
    pub combined: f64,
}

impl FitnessReport {
    pub fn new(base: f64, swarm_div: f64, op_div: f64, weights: &FitnessWeights) -> Self {
        Self {
            base,
            swarm_div,
            op_div,
            combined: combined_fitness(base, swarm_div, op_div, weights),
        }
    }
}

/// Min-max normalized loss clamped into `[0, 1]`.
pub fn base_fitness(loss: f64, bounds: &LossBounds) -> Result<f64> {
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(((loss - bounds.l_min) / (bounds.l_max - bounds.l_min)).clamp(0.0, 1.0))
}

pub fn combined_fitness(base: f64, swarm_div: f64, op_div: f64, weights: &FitnessWeights) -> f64 {
    base - weights.lambda_swarm * swarm_div - weights.lambda_op * op_div
}

/// Ring buffer of past generation-best positions.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryArchive {
    entries: VecDeque<Vec<f64>>,
    capacity: usize,
    dim: usize,
}

impl HistoryArchive {
    pub const DEFAULT_CAPACITY: usize = 200;

    pub fn new(dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "history archive needs positive dimension and capacity".into(),
            ));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(Vec::as_slice)
    }

    pub fn push(&mut self, position: Vec<f64>) -> Result<()> {
        if position.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: position.len(),
            });
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(position);
        Ok(())
    }
}

/// `tanh(min_h ||x - h|| / sqrt(D))`; an empty archive gives 1.
pub fn swarm_diversity(x: &[f64], history: &HistoryArchive) -> Result<f64> {
    if x.len() != history.dim {
        return Err(Error::DimensionMismatch {
            expected: history.dim,
            found: x.len(),
        });
    }
    if history.is_empty() {
        return Ok(1.0);
    }
    let nearest_sq = history
        .entries()
        .map(|h| x.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok((nearest_sq.sqrt() / (x.len() as f64).sqrt()).tanh())
}

/// Normalized Shannon entropy of per-op selection frequencies.
pub fn entropy_diversity(frequencies: &[f64]) -> f64 {
    if frequencies.len() < 2 {
        return 0.0;
    }
    let h: f64 = frequencies
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    (h / (frequencies.len() as f64).ln()).clamp(0.0, 1.0)
}

/// Operation diversity of the argmax genotype encoded by `x`.
pub fn op_diversity(x: &[f64], layout: &ArchLayout) -> Result<f64> {
    let genotype = discretize(&decode_alpha(x, layout)?);
    Ok(entropy_diversity(&op_frequencies(
        &genotype,
        layout.num_ops(),
    )))
}

/// Archives the best particle of the swarm's latest evaluation.
pub fn update_history(history: &mut HistoryArchive, swarm: &Swarm) -> Result<()> {
    if let Some(best) = &swarm.generation_best {
        history.push(best.position.clone())?;
    }
    Ok(())
}
