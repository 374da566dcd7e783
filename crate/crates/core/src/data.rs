//! Interleaved-spiral classification data.

use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub features: [f64; 2],
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpiralConfig {
    pub num_classes: usize,
    pub train_size: usize,
    pub val_size: usize,
    /// Revolutions each arm makes from the center to radius 1.
    pub turns: f64,
    /// Standard deviation of the angular jitter, in radians.
    pub noise: f64,
}

impl Default for SpiralConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            train_size: 600,
            val_size: 300,
            turns: 0.75,
            noise: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub num_classes: usize,
}

impl SyntheticDataset {
    /// Spiral arms with class-balanced splits. Split sizes must be multiples
    /// of the class count.
    pub fn spirals(config: &SpiralConfig, rng: &mut RandomStream) -> Result<Self> {
        let c = config.num_classes;
        if c < 2 {
            return Err(Error::InvalidParameter("need at least 2 classes".into()));
        }
        for (name, n) in [
            ("train_size", config.train_size),
            ("val_size", config.val_size),
        ] {
            if n == 0 || n % c != 0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {n} must be a positive multiple of num_classes = {c}"
                )));
            }
        }
        let mut train = spiral_split(config, config.train_size / c, rng);
        let mut val = spiral_split(config, config.val_size / c, rng);
        rng.shuffle(&mut train);
        rng.shuffle(&mut val);
        Ok(Self {
            train,
            val,
            num_classes: c,
        })
    }
}

fn spiral_split(config: &SpiralConfig, per_class: usize, rng: &mut RandomStream) -> Vec<Sample> {
    let c = config.num_classes;
    let mut out = Vec::with_capacity(per_class * c);
    for label in 0..c {
        let phase = std::f64::consts::TAU * label as f64 / c as f64;
        for _ in 0..per_class {
            let t = 0.05 + 0.95 * rng.unit();
            let theta =
                phase + std::f64::consts::TAU * config.turns * t + config.noise * rng.normal();
            out.push(Sample {
                features: [t * theta.cos(), t * theta.sin()],
                label,
            });
        }
    }
    out
}
