//! Standard test functions and an equal-budget comparison harness for the
//! triplet swarm, the pairwise baseline and uniform random search.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::icso::{init_population, Bounds, SwarmConfig};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Sphere,
    Rastrigin,
    Ackley,
    Rosenbrock,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [
        TestFunction::Sphere,
        TestFunction::Rastrigin,
        TestFunction::Ackley,
        TestFunction::Rosenbrock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Sphere => "sphere",
            TestFunction::Rastrigin => "rastrigin",
            TestFunction::Ackley => "ackley",
            TestFunction::Rosenbrock => "rosenbrock",
        }
    }

    /// Every function has its global minimum 0 at the origin, except
    /// Rosenbrock (at all ones).
    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Sphere => sphere(x),
            TestFunction::Rastrigin => rastrigin(x),
            TestFunction::Ackley => ackley(x),
            TestFunction::Rosenbrock => rosenbrock(x),
        }
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestFunction::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown test function {s:?}")))
    }
}

pub fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
            .sum::<f64>()
}

pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cs = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + std::f64::consts::E
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Icso,
    Cso,
    Random,
}

impl Optimizer {
    pub const ALL: [Optimizer; 3] = [Optimizer::Icso, Optimizer::Cso, Optimizer::Random];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Icso => "icso",
            Optimizer::Cso => "cso",
            Optimizer::Random => "random",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub pop_size: usize,
    pub phi: f64,
    /// Total objective evaluations per run, shared by all optimizers.
    pub evaluations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dim: 224,
            lower: -3.0,
            upper: 3.0,
            pop_size: 60,
            phi: 0.15,
            evaluations: 60 * 8 * 15,
        }
    }
}

impl BenchConfig {
    fn generations(&self) -> Result<usize> {
        if self.evaluations < self.pop_size {
            return Err(Error::InvalidParameter(format!(
                "budget of {} evaluations is below one generation of {}",
                self.evaluations, self.pop_size
            )));
        }
        Ok(self.evaluations / self.pop_size)
    }
}

/// Best objective value found by one run. Swarms spend `pop_size`
/// evaluations per generation; random search spends the same total.
pub fn run_once(
    optimizer: Optimizer,
    function: TestFunction,
    config: &BenchConfig,
    seed: u64,
) -> Result<f64> {
    let bounds = Bounds::uniform(config.dim, config.lower, config.upper)?;
    let mut rng = RandomStream::new(seed).substream("swarm");
    let swarm_cfg = SwarmConfig {
        pop_size: config.pop_size,
        phi: config.phi,
        generations_per_epoch: 1,
        rng_seed: seed,
    };
    let objective = |_: usize, x: &[f64]| Ok(function.eval(x));
    match optimizer {
        Optimizer::Icso => {
            let mut swarm = init_population(&bounds, &swarm_cfg, &mut rng)?;
            for _ in 0..config.generations()? {
                swarm.evolve(objective, config.phi, &bounds, &mut rng)?;
            }
            swarm.best_fitness().ok_or(Error::EmptySwarm)
        }
        Optimizer::Cso => {
            let mut swarm = init_population(&bounds, &swarm_cfg, &mut rng)?;
            for _ in 0..config.generations()? {
                swarm.evolve_cso(objective, config.phi, &bounds, &mut rng)?;
            }
            swarm.best_fitness().ok_or(Error::EmptySwarm)
        }
        Optimizer::Random => {
            let budget = config.generations()? * config.pop_size;
            let mut best = f64::INFINITY;
            let mut x = vec![0.0; config.dim];
            for _ in 0..budget {
                for v in x.iter_mut() {
                    *v = rng.uniform(config.lower, config.upper);
                }
                best = best.min(function.eval(&x));
            }
            Ok(best)
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub function: TestFunction,
    pub optimizer: Optimizer,
    pub best_per_seed: Vec<f64>,
}

impl BenchRow {
    pub fn median(&self) -> f64 {
        median(&self.best_per_seed)
    }
}

/// Runs every optimizer on `function` for seeds `0..seeds`.
pub fn compare(function: TestFunction, config: &BenchConfig, seeds: u64) -> Result<Vec<BenchRow>> {
    Optimizer::ALL
        .into_iter()
        .map(|optimizer| {
            let best_per_seed = (0..seeds)
                .map(|s| run_once(optimizer, function, config, s))
                .collect::<Result<Vec<_>>>()?;
            Ok(BenchRow {
                function,
                optimizer,
                best_per_seed,
            })
        })
        .collect()
}
