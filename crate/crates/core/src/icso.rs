//! Improved Competitive Swarm Optimizer with triplet competition.
//!
//! Each generation the whole swarm is evaluated, shuffled and cut into
//! triplets. Inside a triplet the winner is carried over verbatim, the
//! second-best moves toward the winner and the swarm centroid half of the
//! time, and the loser always moves toward the winner and the global best.
//! Leftover particles (`pop_size % 3`) are carried over like winners.
//!
//! All random draws of a generation come from one stream in a fixed order:
//! the shuffle, then for each triplet in partition order the second-best's
//! coin and its per-dimension `(r1, r2, r3)` triples, then the loser's
//! per-dimension triples.

use crate::error::{Error, Result};
use crate::rng::{RandomStream, UnitSource};

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Last evaluated fitness; cleared when the particle moves.
    pub fitness: Option<f64>,
}

impl Particle {
    pub fn at(position: Vec<f64>) -> Self {
        let velocity = vec![0.0; position.len()];
        Self {
            position,
            velocity,
            fitness: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }
}

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidParameter(
                "bounds must have dimension >= 1".into(),
            ));
        }
        for (dim, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidBounds {
                    dim,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| l <= v && v <= u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmConfig {
    pub pop_size: usize,
    pub phi: f64,
    pub generations_per_epoch: usize,
    pub rng_seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        Self {
            pop_size: 60,
            phi: 0.15,
            generations_per_epoch: 8,
            rng_seed: 0,
        }
    }
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 3 {
            return Err(Error::InvalidParameter(format!(
                "pop_size must be >= 3, got {}",
                self.pop_size
            )));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::InvalidParameter(format!(
                "phi must lie in [0, 1], got {}",
                self.phi
            )));
        }
        if self.generations_per_epoch == 0 {
            return Err(Error::InvalidParameter(
                "generations_per_epoch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of shuffling the swarm into competition groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition<const K: usize> {
    pub groups: Vec<[usize; K]>,
    pub leftovers: Vec<usize>,
}

pub type Triplets = Partition<3>;

/// Winner, second-best and loser of one triplet, as particle indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankedTriplet {
    pub winner: usize,
    pub second: usize,
    pub loser: usize,
}

/// What happened during one generation; used by callers for logging and by
/// tests to check the winner-preservation contract.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSummary {
    pub fitness: Vec<f64>,
    pub ranked: Vec<RankedTriplet>,
    pub leftovers: Vec<usize>,
    pub generation_best: f64,
}

#[derive(Debug, Clone)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    /// Best particle ever evaluated (min-tracking).
    pub global_best: Option<Particle>,
    /// Best particle of the most recent evaluation.
    pub generation_best: Option<Particle>,
    pub generation: u64,
}

/// Uniform initial population with zero velocities.
pub fn init_population(
    bounds: &Bounds,
    config: &SwarmConfig,
    rng: &mut RandomStream,
) -> Result<Swarm> {
    config.validate()?;
    let particles = (0..config.pop_size)
        .map(|_| {
            let position = bounds
                .lower
                .iter()
                .zip(&bounds.upper)
                .map(|(&l, &u)| rng.uniform(l, u))
                .collect();
            Particle::at(position)
        })
        .collect();
    Ok(Swarm {
        particles,
        global_best: None,
        generation_best: None,
        generation: 0,
    })
}

fn partition<const K: usize>(n: usize, rng: &mut RandomStream) -> Partition<K> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let full = n / K * K;
    let groups = order[..full]
        .chunks_exact(K)
        .map(|c| c.try_into().expect("chunk of K"))
        .collect();
    Partition {
        groups,
        leftovers: order[full..].to_vec(),
    }
}

/// Random permutation of `0..pop_size` cut into triplets plus 0-2 leftovers.
pub fn partition_triplets(pop_size: usize, rng: &mut RandomStream) -> Triplets {
    partition::<3>(pop_size, rng)
}

/// Orders three particles by fitness (ascending), ties to the lower index.
pub fn rank_triplet(indices: [usize; 3], fitness: [f64; 3]) -> Result<RankedTriplet> {
    if fitness.iter().any(|f| !f.is_finite()) {
        return Err(Error::NonFinite("triplet fitness"));
    }
    let mut slots = [0usize, 1, 2];
    slots.sort_by(|&a, &b| {
        fitness[a]
            .total_cmp(&fitness[b])
            .then(indices[a].cmp(&indices[b]))
    });
    Ok(RankedTriplet {
        winner: indices[slots[0]],
        second: indices[slots[1]],
        loser: indices[slots[2]],
    })
}

fn check_len(expected: usize, vectors: &[&[f64]]) -> Result<()> {
    for v in vectors {
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// `v' = r1*v + r2*(leader - x) + phi*r3*(attractor - x)`, `x' = x + v'`,
/// then clamped. Shared by all three learning rules.
fn learn(
    x: &[f64],
    v: &[f64],
    leader: &[f64],
    attractor: &[f64],
    phi: f64,
    bounds: &Bounds,
    draws: &mut impl UnitSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = x.len();
    check_len(d, &[v, leader, attractor])?;
    check_len(bounds.dim(), &[x])?;
    let mut pos = Vec::with_capacity(d);
    let mut vel = Vec::with_capacity(d);
    for i in 0..d {
        let r1 = draws.next_unit();
        let r2 = draws.next_unit();
        let r3 = draws.next_unit();
        let nv = r1 * v[i] + r2 * (leader[i] - x[i]) + phi * r3 * (attractor[i] - x[i]);
        vel.push(nv);
        pos.push(x[i] + nv);
    }
    clamp_to_bounds(&mut pos, &mut vel, bounds);
    Ok((pos, vel))
}

/// Second-best rule: with probability 0.5 (draw < 0.5) learn from the winner
/// and the centroid, otherwise return the inputs unchanged.
#[allow(clippy::too_many_arguments)]
pub fn update_second_best(
    x_m: &[f64],
    v_m: &[f64],
    x_w: &[f64],
    x_mean: &[f64],
    phi: f64,
    bounds: &Bounds,
    draws: &mut impl UnitSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(x_m.len(), &[v_m, x_w, x_mean])?;
    if draws.next_unit() < 0.5 {
        learn(x_m, v_m, x_w, x_mean, phi, bounds, draws)
    } else {
        Ok((x_m.to_vec(), v_m.to_vec()))
    }
}

/// Loser rule: learn from the winner and the global best.
pub fn update_loser(
    x_l: &[f64],
    v_l: &[f64],
    x_w: &[f64],
    x_best: &[f64],
    phi: f64,
    bounds: &Bounds,
    draws: &mut impl UnitSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    learn(x_l, v_l, x_w, x_best, phi, bounds, draws)
}

/// Classic pairwise CSO loser rule: learn from the winner and the centroid.
pub fn cso_loser_update(
    x_l: &[f64],
    v_l: &[f64],
    x_w: &[f64],
    x_mean: &[f64],
    phi: f64,
    bounds: &Bounds,
    draws: &mut impl UnitSource,
) -> Result<(Vec<f64>, Vec<f64>)> {
    learn(x_l, v_l, x_w, x_mean, phi, bounds, draws)
}

/// Clips each coordinate into the box and zeroes the velocity of every
/// clipped coordinate. Coordinates exactly on the boundary are not clipped.
pub fn clamp_to_bounds(position: &mut [f64], velocity: &mut [f64], bounds: &Bounds) {
    for i in 0..position.len() {
        let (l, u) = (bounds.lower[i], bounds.upper[i]);
        if position[i] < l {
            position[i] = l;
            velocity[i] = 0.0;
        } else if position[i] > u {
            position[i] = u;
            velocity[i] = 0.0;
        }
    }
}

impl Swarm {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles.first().map_or(0, Particle::dim)
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.particles.len() as f64;
        let mut mean = vec![0.0; self.dim()];
        for p in &self.particles {
            for (m, x) in mean.iter_mut().zip(&p.position) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.global_best.as_ref().and_then(|p| p.fitness)
    }

    /// Evaluates every particle in index order and updates the min-tracked
    /// global best. Non-finite values are stored as `None` and reported as
    /// `f64::MAX` so they rank last.
    pub fn evaluate<F>(&mut self, mut fitness_fn: F) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &[f64]) -> Result<f64>,
    {
        let mut values = Vec::with_capacity(self.particles.len());
        for (i, p) in self.particles.iter_mut().enumerate() {
            let f = fitness_fn(i, &p.position)?;
            if f.is_finite() {
                p.fitness = Some(f);
                values.push(f);
            } else {
                log::warn!(
                    "particle {i} returned non-finite fitness {f} in generation {}; ranking it last",
                    self.generation
                );
                p.fitness = None;
                values.push(f64::MAX);
            }
        }
        let best_idx = argmin(&values).ok_or(Error::EmptySwarm)?;
        if self.particles[best_idx].fitness.is_some() {
            let candidate = self.particles[best_idx].clone();
            self.generation_best = Some(candidate.clone());
            let improves = match self.best_fitness() {
                Some(best) => values[best_idx] < best,
                None => true,
            };
            if improves {
                self.global_best = Some(candidate);
            }
        }
        Ok(values)
    }

    /// One ICSO generation: evaluate, partition, rank, update.
    pub fn evolve<F>(
        &mut self,
        fitness_fn: F,
        phi: f64,
        bounds: &Bounds,
        rng: &mut RandomStream,
    ) -> Result<GenerationSummary>
    where
        F: FnMut(usize, &[f64]) -> Result<f64>,
    {
        if self.particles.len() < 3 {
            return Err(Error::EmptySwarm);
        }
        let fitness = self.evaluate(fitness_fn)?;
        self.advance(fitness, phi, bounds, rng)
    }

    /// The update half of a generation, given fitness values already
    /// computed for the current positions.
    pub fn advance(
        &mut self,
        fitness: Vec<f64>,
        phi: f64,
        bounds: &Bounds,
        rng: &mut RandomStream,
    ) -> Result<GenerationSummary> {
        check_len(self.particles.len(), &[&fitness])?;
        let x_mean = self.centroid();
        let x_best = match &self.global_best {
            Some(p) => p.position.clone(),
            None => x_mean.clone(),
        };
        let parts = partition_triplets(self.particles.len(), rng);
        let mut ranked = Vec::with_capacity(parts.groups.len());
        for group in &parts.groups {
            let r = rank_triplet(*group, group.map(|i| fitness[i]))?;
            let winner = self.particles[r.winner].position.clone();

            let m = &self.particles[r.second];
            let (x, v) =
                update_second_best(&m.position, &m.velocity, &winner, &x_mean, phi, bounds, rng)?;
            self.relocate(r.second, x, v);

            let l = &self.particles[r.loser];
            let (x, v) =
                update_loser(&l.position, &l.velocity, &winner, &x_best, phi, bounds, rng)?;
            self.relocate(r.loser, x, v);
            ranked.push(r);
        }
        self.generation += 1;
        let generation_best = fitness.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(GenerationSummary {
            fitness,
            ranked,
            leftovers: parts.leftovers,
            generation_best,
        })
    }

    /// Classic pairwise CSO generation, kept as a comparison baseline.
    pub fn evolve_cso<F>(
        &mut self,
        fitness_fn: F,
        phi: f64,
        bounds: &Bounds,
        rng: &mut RandomStream,
    ) -> Result<f64>
    where
        F: FnMut(usize, &[f64]) -> Result<f64>,
    {
        if self.particles.len() < 2 {
            return Err(Error::EmptySwarm);
        }
        let fitness = self.evaluate(fitness_fn)?;
        let x_mean = self.centroid();
        let pairs = partition::<2>(self.particles.len(), rng);
        for [a, b] in pairs.groups {
            let (w, l) = if (fitness[a], a) <= (fitness[b], b) {
                (a, b)
            } else {
                (b, a)
            };
            let winner = self.particles[w].position.clone();
            let p = &self.particles[l];
            let (x, v) =
                cso_loser_update(&p.position, &p.velocity, &winner, &x_mean, phi, bounds, rng)?;
            self.relocate(l, x, v);
        }
        self.generation += 1;
        Ok(fitness.iter().copied().fold(f64::INFINITY, f64::min))
    }

    fn relocate(&mut self, idx: usize, position: Vec<f64>, velocity: Vec<f64>) {
        let p = &mut self.particles[idx];
        if p.position != position || p.velocity != velocity {
            p.fitness = None;
        }
        p.position = position;
        p.velocity = velocity;
    }
}

/// Index of the smallest value, ties to the lowest index.
pub(crate) fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] <= *v => {}
            _ => best = Some(i),
        }
    }
    best
}
