//! The three-stage search loop: warm-up, swarm exploration, stability.
//!
//! Every epoch, whatever its stage, produces one [`EpochRecord`] and counts
//! toward `max_total_epochs`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{decode_alpha, discretize, encode_alpha, ArchLayout, ArchParams, Genotype};
use crate::data::{Sample, SpiralConfig, SyntheticDataset};
use crate::error::{Error, Result};
use crate::fitness::{
    base_fitness, op_diversity, swarm_diversity, update_history, FitnessReport, FitnessWeights,
    HistoryArchive, LossBounds,
};
use crate::icso::{argmin, init_population, Bounds, GenerationSummary, Swarm, SwarmConfig};
use crate::logging::EpochRecord;
use crate::rng::RandomStream;
use crate::supernet::{SupernetConfig, SupernetState};
use crate::tabular::{QueryBudget, QuerySession, TabularSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    WarmUp,
    Exploration,
    Stability,
    Done,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::WarmUp => "warmup",
            Stage::Exploration => "exploration",
            Stage::Stability => "stability",
            Stage::Done => "done",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Stage::WarmUp,
            Stage::Exploration,
            Stage::Stability,
            Stage::Done,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

/// Which bound the windowed mean of `V_t` is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopMode {
    Hoeffding,
    Absolute,
    /// `min(epsilon, abs_threshold)`.
    #[default]
    Strict,
}

impl fmt::Display for StopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopMode::Hoeffding => "hoeffding",
            StopMode::Absolute => "absolute",
            StopMode::Strict => "strict",
        })
    }
}

impl FromStr for StopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hoeffding" => Ok(StopMode::Hoeffding),
            "absolute" => Ok(StopMode::Absolute),
            "strict" => Ok(StopMode::Strict),
            other => Err(Error::InvalidParameter(format!(
                "stop mode must be hoeffding, absolute or strict, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub eta_w: f64,
    /// Always 0: alpha is frozen during warm-up.
    pub warmup_arch_lr: f64,
    pub exploration_eta_alpha: f64,
    pub stability_threshold: f64,
    pub stability_arch_lr: f64,
    pub min_stability_epochs: usize,
    pub window_n: usize,
    pub delta: f64,
    pub abs_alpha_threshold: f64,
    pub max_total_epochs: usize,
    pub stop_mode: StopMode,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 5,
            batch_size: 64,
            eta_w: 0.025,
            warmup_arch_lr: 0.0,
            exploration_eta_alpha: 0.3,
            stability_threshold: 0.82,
            stability_arch_lr: 1e-5,
            min_stability_epochs: 5,
            window_n: 5,
            delta: 0.05,
            abs_alpha_threshold: 1e-3,
            max_total_epochs: 100,
            stop_mode: StopMode::Strict,
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be positive".into()));
        }
        if !(self.eta_w.is_finite() && self.eta_w > 0.0) {
            return Err(invalid(format!("eta_w must be > 0, got {}", self.eta_w)));
        }
        if self.warmup_arch_lr != 0.0 {
            return Err(invalid(format!(
                "warmup_arch_lr is fixed at 0, got {}",
                self.warmup_arch_lr
            )));
        }
        if !(0.0..=1.0).contains(&self.exploration_eta_alpha) {
            return Err(invalid(format!(
                "exploration_eta_alpha must lie in [0, 1], got {}",
                self.exploration_eta_alpha
            )));
        }
        if !(self.stability_threshold > 0.0 && self.stability_threshold < 1.0) {
            return Err(invalid(format!(
                "stability_threshold must lie in (0, 1), got {}",
                self.stability_threshold
            )));
        }
        if !(self.stability_arch_lr.is_finite() && self.stability_arch_lr >= 0.0) {
            return Err(invalid(format!(
                "stability_arch_lr must be >= 0, got {}",
                self.stability_arch_lr
            )));
        }
        if self.window_n == 0 {
            return Err(invalid("window_n must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.abs_alpha_threshold.is_finite() && self.abs_alpha_threshold > 0.0) {
            return Err(invalid(format!(
                "abs_alpha_threshold must be > 0, got {}",
                self.abs_alpha_threshold
            )));
        }
        Ok(())
    }
}

/// Everything the controller needs besides the backend itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub stage: StageConfig,
    pub swarm: SwarmConfig,
    pub fitness: FitnessWeights,
    /// `None` uses the backend's natural loss range.
    pub loss_bounds: Option<LossBounds>,
    pub swarm_lower: f64,
    pub swarm_upper: f64,
    pub history_capacity: usize,
    /// When false, `wall_ms` is logged as 0 so logs are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            stage: StageConfig::default(),
            swarm: SwarmConfig::default(),
            fitness: FitnessWeights::default(),
            loss_bounds: None,
            swarm_lower: -3.0,
            swarm_upper: 3.0,
            history_capacity: HistoryArchive::DEFAULT_CAPACITY,
            record_wall_time: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.stage.validate()?;
        self.swarm.validate()?;
        self.fitness.validate()?;
        if !(self.swarm_lower.is_finite()
            && self.swarm_upper.is_finite()
            && self.swarm_lower < self.swarm_upper)
        {
            return Err(invalid(format!(
                "swarm bounds need lower < upper, got [{}, {}]",
                self.swarm_lower, self.swarm_upper
            )));
        }
        if self.history_capacity == 0 {
            return Err(invalid("history_capacity must be positive".into()));
        }
        Ok(())
    }
}

/// What the controller needs from a search space.
pub trait Backend {
    fn layout(&self) -> &ArchLayout;

    fn default_loss_bounds(&self) -> LossBounds;

    /// One pass of weight updates at fixed alpha. Returns the mean training
    /// loss, or `None` when the backend has no weights.
    fn train_epoch(
        &mut self,
        alpha: &ArchParams,
        config: &StageConfig,
        rng: &mut RandomStream,
    ) -> Result<Option<f64>>;

    /// Called before each swarm generation; all particles of the generation
    /// are scored on the same data.
    fn begin_generation(&mut self, config: &StageConfig, rng: &mut RandomStream) -> Result<()>;

    /// Loss of one particle in the current generation.
    fn particle_loss(&mut self, alpha: &ArchParams) -> Result<f64>;

    /// Loss used to pick the particle alpha is pulled toward.
    fn selection_loss(&mut self, alpha: &ArchParams) -> Result<f64>;

    fn validation_accuracy(&mut self, alpha: &ArchParams) -> Result<f64>;

    /// Alternating weight and alpha updates for one stability epoch.
    fn stability_epoch(
        &mut self,
        alpha: &mut ArchParams,
        config: &StageConfig,
        rng: &mut RandomStream,
    ) -> Result<()>;

    fn queries_used(&self) -> u64 {
        0
    }
}

/// The differentiable toy supernet trained on spiral data.
#[derive(Debug, Clone)]
pub struct SupernetBackend {
    state: SupernetState,
    data: SyntheticDataset,
    batch: Vec<Sample>,
}

impl SupernetBackend {
    pub fn new(state: SupernetState, data: SyntheticDataset) -> Result<Self> {
        if state.num_classes() != data.num_classes {
            return Err(Error::DimensionMismatch {
                expected: state.num_classes(),
                found: data.num_classes,
            });
        }
        Ok(Self {
            state,
            data,
            batch: Vec::new(),
        })
    }

    /// Dataset from the `data` sub-stream of `dataset_seed`, weights from
    /// the `init` sub-stream of `seed`.
    pub fn build(
        net: &SupernetConfig,
        spirals: &SpiralConfig,
        dataset_seed: u64,
        seed: u64,
    ) -> Result<Self> {
        let data = SyntheticDataset::spirals(
            spirals,
            &mut RandomStream::new(dataset_seed).substream("data"),
        )?;
        let state = SupernetState::new(net, &mut RandomStream::new(seed).substream("init"))?;
        Self::new(state, data)
    }

    pub fn state(&self) -> &SupernetState {
        &self.state
    }

    pub fn data(&self) -> &SyntheticDataset {
        &self.data
    }

    fn shuffled(len: usize, rng: &mut RandomStream) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        rng.shuffle(&mut order);
        order
    }

    fn weight_step(&mut self, alpha: &ArchParams, batch: &[Sample], eta: f64) -> Result<f64> {
        let g = self.state.loss_and_grads(alpha, batch)?;
        self.state.sgd_step_weights(&g.weights, eta)?;
        Ok(g.loss)
    }
}

impl Backend for SupernetBackend {
    fn layout(&self) -> &ArchLayout {
        self.state.layout()
    }

    fn default_loss_bounds(&self) -> LossBounds {
        LossBounds::cross_entropy(self.state.num_classes()).expect("at least two classes")
    }

    fn train_epoch(
        &mut self,
        alpha: &ArchParams,
        config: &StageConfig,
        rng: &mut RandomStream,
    ) -> Result<Option<f64>> {
        let order = Self::shuffled(self.data.train.len(), rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| self.data.train[i]).collect();
            total += self.weight_step(alpha, &batch, config.eta_w)?;
            batches += 1;
        }
        Ok(Some(total / batches as f64))
    }

    fn begin_generation(&mut self, config: &StageConfig, rng: &mut RandomStream) -> Result<()> {
        let order = Self::shuffled(self.data.val.len(), rng);
        self.batch = order
            .iter()
            .take(config.batch_size)
            .map(|&i| self.data.val[i])
            .collect();
        Ok(())
    }

    fn particle_loss(&mut self, alpha: &ArchParams) -> Result<f64> {
        self.state.loss(alpha, &self.batch)
    }

    fn selection_loss(&mut self, alpha: &ArchParams) -> Result<f64> {
        self.state.loss(alpha, &self.data.val)
    }

    fn validation_accuracy(&mut self, alpha: &ArchParams) -> Result<f64> {
        self.state.validation_accuracy(alpha, &self.data.val)
    }

    fn stability_epoch(
        &mut self,
        alpha: &mut ArchParams,
        config: &StageConfig,
        rng: &mut RandomStream,
    ) -> Result<()> {
        let train_order = Self::shuffled(self.data.train.len(), rng);
        let val_order = Self::shuffled(self.data.val.len(), rng);
        let mut val_cycle = val_order.iter().cycle();
        for chunk in train_order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| self.data.train[i]).collect();
            self.weight_step(alpha, &batch, config.eta_w)?;
            let val_batch: Vec<Sample> = val_cycle
                .by_ref()
                .take(config.batch_size.min(self.data.val.len()))
                .map(|&i| self.data.val[i])
                .collect();
            if config.stability_arch_lr > 0.0 {
                let g = self.state.grad_alpha(alpha, &val_batch)?;
                for (a, d) in alpha.as_mut_slice().iter_mut().zip(&g) {
                    *a -= config.stability_arch_lr * d;
                }
            }
        }
        Ok(())
    }
}

/// A tabular space behind a query budget. The loss of an architecture is
/// `1 - valid_acc` of its argmax genotype; there are no weights to train and
/// no gradient for alpha.
#[derive(Debug)]
pub struct TabularBackend<'a> {
    session: QuerySession<'a>,
}

impl<'a> TabularBackend<'a> {
    pub fn new(space: &'a TabularSpace, budget: QueryBudget) -> Self {
        Self {
            session: QuerySession::new(space, budget),
        }
    }

    pub fn session(&self) -> &QuerySession<'a> {
        &self.session
    }

    fn accuracy(&self, alpha: &ArchParams) -> Result<f64> {
        Ok(self.session.query(&discretize(alpha))?.valid_acc)
    }
}

impl Backend for TabularBackend<'_> {
    fn layout(&self) -> &ArchLayout {
        self.session.space().layout()
    }

    fn default_loss_bounds(&self) -> LossBounds {
        LossBounds::new(0.0, 1.0).expect("valid bounds")
    }

    fn train_epoch(
        &mut self,
        _: &ArchParams,
        _: &StageConfig,
        _: &mut RandomStream,
    ) -> Result<Option<f64>> {
        Ok(None)
    }

    fn begin_generation(&mut self, _: &StageConfig, _: &mut RandomStream) -> Result<()> {
        Ok(())
    }

    fn particle_loss(&mut self, alpha: &ArchParams) -> Result<f64> {
        Ok(1.0 - self.accuracy(alpha)?)
    }

    fn selection_loss(&mut self, alpha: &ArchParams) -> Result<f64> {
        Ok(1.0 - self.accuracy(alpha)?)
    }

    fn validation_accuracy(&mut self, alpha: &ArchParams) -> Result<f64> {
        self.accuracy(alpha)
    }

    fn stability_epoch(
        &mut self,
        _: &mut ArchParams,
        _: &StageConfig,
        _: &mut RandomStream,
    ) -> Result<()> {
        Ok(())
    }

    fn queries_used(&self) -> u64 {
        self.session.budget().queries_used
    }
}

/// `sqrt(D ln(2/delta) / (2n))`.
pub fn hoeffding_epsilon(dim: usize, delta: f64, n: usize) -> Result<f64> {
    if dim == 0 || n == 0 {
        return Err(invalid(format!(
            "need D >= 1 and n >= 1, got D={dim}, n={n}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok((dim as f64 * (2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

/// Ring of the most recent `V_t` values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceWindow {
    values: VecDeque<f64>,
    capacity: usize,
}

impl ConvergenceWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            values: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, v: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(v);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() == self.capacity
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }
}

/// True when the window mean is strictly below the mode's bound.
pub fn should_stop(
    window: &ConvergenceWindow,
    epsilon: f64,
    abs_threshold: f64,
    mode: StopMode,
) -> Result<bool> {
    if !window.is_full() {
        return Err(Error::IncompleteWindow {
            have: window.len(),
            need: window.capacity,
        });
    }
    let bound = match mode {
        StopMode::Hoeffding => epsilon,
        StopMode::Absolute => abs_threshold,
        StopMode::Strict => epsilon.min(abs_threshold),
    };
    Ok(window.mean() < bound)
}

/// Index of the lowest base fitness, ties to the lowest index.
pub fn select_best(base_fitness: &[f64]) -> Result<usize> {
    if base_fitness.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("base fitness"));
    }
    argmin(base_fitness).ok_or(Error::EmptySwarm)
}

/// `(1 - eta) alpha + eta x*`, which is exact at both `eta = 0` and `eta = 1`.
pub fn soft_update_alpha(alpha: &ArchParams, x_star: &[f64], eta: f64) -> Result<ArchParams> {
    if x_star.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: x_star.len(),
        });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("eta_alpha must lie in [0, 1], got {eta}")));
    }
    let mut out = alpha.clone();
    for (a, &x) in out.as_mut_slice().iter_mut().zip(x_star) {
        *a = (1.0 - eta) * *a + eta * x;
    }
    Ok(out)
}

/// Fitness of every particle in one generation, in particle order.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub reports: Vec<FitnessReport>,
    pub summary: GenerationSummary,
}

/// What happened inside the most recent exploration epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationTrace {
    pub generations: Vec<GenerationTrace>,
    /// Base fitness of the evolved population, used for selection.
    pub selection_base: Vec<f64>,
    pub selected: usize,
    pub x_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub genotype: Genotype,
    pub alpha: ArchParams,
    pub log: Vec<EpochRecord>,
    pub termination: Termination,
    pub reached_stage: Stage,
}

#[derive(Debug)]
pub struct SearchState<B: Backend> {
    config: SearchConfig,
    backend: B,
    stage: Stage,
    alpha: ArchParams,
    swarm: Option<Swarm>,
    history: HistoryArchive,
    bounds: Bounds,
    loss_bounds: LossBounds,
    epoch: u64,
    stage_epochs: usize,
    window: ConvergenceWindow,
    epsilon: f64,
    swarm_rng: RandomStream,
    batch_rng: RandomStream,
    last_exploration: Option<ExplorationTrace>,
    last_train_loss: Option<f64>,
}

impl<B: Backend> SearchState<B> {
    /// Validates the configuration and starts in warm-up with alpha = 0, or
    /// directly in exploration when `warmup_epochs` is 0.
    pub fn new(config: SearchConfig, backend: B, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = backend.layout().clone();
        let dim = layout.dimension();
        let bounds = Bounds::uniform(dim, config.swarm_lower, config.swarm_upper)?;
        let loss_bounds = config
            .loss_bounds
            .unwrap_or_else(|| backend.default_loss_bounds());
        let epsilon = hoeffding_epsilon(dim, config.stage.delta, config.stage.window_n)?;
        let root = RandomStream::new(seed);
        let stage = if config.stage.warmup_epochs == 0 {
            Stage::Exploration
        } else {
            Stage::WarmUp
        };
        Ok(Self {
            history: HistoryArchive::new(dim, config.history_capacity)?,
            window: ConvergenceWindow::new(config.stage.window_n),
            alpha: ArchParams::zeros(&layout),
            config,
            backend,
            stage,
            swarm: None,
            bounds,
            loss_bounds,
            epoch: 0,
            stage_epochs: 0,
            epsilon,
            swarm_rng: root.substream("swarm"),
            batch_rng: root.substream("batches"),
            last_exploration: None,
            last_train_loss: None,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn alpha(&self) -> &ArchParams {
        &self.alpha
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn swarm(&self) -> Option<&Swarm> {
        self.swarm.as_ref()
    }

    pub fn history(&self) -> &HistoryArchive {
        &self.history
    }

    pub fn window(&self) -> &ConvergenceWindow {
        &self.window
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn last_exploration(&self) -> Option<&ExplorationTrace> {
        self.last_exploration.as_ref()
    }

    /// Mean training loss of the latest weight-training pass, if any.
    pub fn last_train_loss(&self) -> Option<f64> {
        self.last_train_loss
    }

    pub fn genotype(&self) -> Genotype {
        discretize(&self.alpha)
    }

    fn expect_stage(&self, stage: Stage) -> Result<()> {
        if self.stage != stage {
            return Err(invalid(format!(
                "{stage} epoch requested while in {}",
                self.stage
            )));
        }
        Ok(())
    }

    fn enter(&mut self, stage: Stage) {
        debug_assert!(stage > self.stage);
        log::info!("epoch {}: entering {stage}", self.epoch);
        self.stage = stage;
        self.stage_epochs = 0;
    }

    fn record(&self, stage: Stage, started: Instant) -> EpochRecord {
        EpochRecord {
            epoch: self.epoch,
            stage,
            best_base_fitness: None,
            best_combined_fitness: None,
            validation_accuracy: None,
            v_t: None,
            epsilon: None,
            queries_used: self.backend.queries_used(),
            wall_ms: if self.config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        }
    }

    /// Weight training with alpha frozen.
    pub fn warmup_epoch(&mut self) -> Result<EpochRecord> {
        self.expect_stage(Stage::WarmUp)?;
        let started = Instant::now();
        self.last_train_loss =
            self.backend
                .train_epoch(&self.alpha, &self.config.stage, &mut self.batch_rng)?;
        let acc = self.backend.validation_accuracy(&self.alpha)?;
        self.epoch += 1;
        self.stage_epochs += 1;
        let mut rec = self.record(Stage::WarmUp, started);
        rec.validation_accuracy = Some(acc);
        if self.stage_epochs >= self.config.stage.warmup_epochs {
            self.enter(Stage::Exploration);
        }
        Ok(rec)
    }

    fn init_swarm(&mut self) -> Result<Swarm> {
        let mut swarm = init_population(&self.bounds, &self.config.swarm, &mut self.swarm_rng)?;
        let mut seed_pos = encode_alpha(&self.alpha);
        for ((x, &lo), &hi) in seed_pos
            .iter_mut()
            .zip(self.bounds.lower())
            .zip(self.bounds.upper())
        {
            *x = x.clamp(lo, hi);
        }
        swarm.particles[0] = crate::icso::Particle::at(seed_pos);
        Ok(swarm)
    }

    /// Swarm generations on combined fitness, selection on base fitness,
    /// soft alpha update, then one epoch of weight training.
    pub fn exploration_epoch(&mut self) -> Result<EpochRecord> {
        self.expect_stage(Stage::Exploration)?;
        let started = Instant::now();
        let mut swarm = match self.swarm.take() {
            Some(s) => s,
            None => self.init_swarm()?,
        };
        let layout = self.backend.layout().clone();
        let weights = self.config.fitness;
        let mut generations = Vec::with_capacity(self.config.swarm.generations_per_epoch);
        for _ in 0..self.config.swarm.generations_per_epoch {
            self.backend
                .begin_generation(&self.config.stage, &mut self.batch_rng)?;
            let mut reports = Vec::with_capacity(swarm.len());
            let backend = &mut self.backend;
            let history = &self.history;
            let lb = &self.loss_bounds;
            let summary = swarm.evolve(
                |_, x| {
                    let loss = backend.particle_loss(&decode_alpha(x, &layout)?)?;
                    let report = if loss.is_finite() {
                        let base = base_fitness(loss, lb)?;
                        let s = swarm_diversity(x, history)?;
                        let o = op_diversity(x, &layout)?;
                        FitnessReport::new(base, s, o, &weights)
                    } else {
                        FitnessReport::new(f64::NAN, f64::NAN, f64::NAN, &weights)
                    };
                    reports.push(report);
                    Ok(report.combined)
                },
                self.config.swarm.phi,
                &self.bounds,
                &mut self.swarm_rng,
            )?;
            update_history(&mut self.history, &swarm)?;
            generations.push(GenerationTrace { reports, summary });
        }

        let mut selection_base = Vec::with_capacity(swarm.len());
        for p in &swarm.particles {
            let loss = self
                .backend
                .selection_loss(&decode_alpha(&p.position, &layout)?)?;
            selection_base.push(base_fitness(loss, &self.loss_bounds)?);
        }
        let selected = select_best(&selection_base)?;
        let x_star = swarm.particles[selected].position.clone();
        self.alpha = soft_update_alpha(
            &self.alpha,
            &x_star,
            self.config.stage.exploration_eta_alpha,
        )?;
        if !self.alpha.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        self.swarm = Some(swarm);
        self.last_train_loss =
            self.backend
                .train_epoch(&self.alpha, &self.config.stage, &mut self.batch_rng)?;
        let acc = self.backend.validation_accuracy(&self.alpha)?;

        let best_combined = generations
            .iter()
            .flat_map(|g| g.reports.iter().map(|r| r.combined))
            .filter(|v| v.is_finite())
            .fold(f64::INFINITY, f64::min);
        self.epoch += 1;
        self.stage_epochs += 1;
        let mut rec = self.record(Stage::Exploration, started);
        rec.best_base_fitness = Some(selection_base[selected]);
        rec.best_combined_fitness = best_combined.is_finite().then_some(best_combined);
        rec.validation_accuracy = Some(acc);
        self.last_exploration = Some(ExplorationTrace {
            generations,
            selection_base,
            selected,
            x_star,
        });
        if acc > self.config.stage.stability_threshold {
            self.enter(Stage::Stability);
        }
        Ok(rec)
    }

    /// Alternating weight and small-step alpha updates. `V_t` enters the
    /// convergence window only after `min_stability_epochs` stability epochs.
    pub fn stability_epoch(&mut self) -> Result<EpochRecord> {
        self.expect_stage(Stage::Stability)?;
        let started = Instant::now();
        let previous = self.alpha.clone();
        self.backend
            .stability_epoch(&mut self.alpha, &self.config.stage, &mut self.batch_rng)?;
        if !self.alpha.is_finite() {
            return Err(Error::NonFinite("alpha"));
        }
        let v_t = self.alpha.distance(&previous);
        let acc = self.backend.validation_accuracy(&self.alpha)?;
        self.epoch += 1;
        self.stage_epochs += 1;
        if self.stage_epochs > self.config.stage.min_stability_epochs {
            self.window.push(v_t);
        }
        let mut rec = self.record(Stage::Stability, started);
        rec.validation_accuracy = Some(acc);
        rec.v_t = Some(v_t);
        rec.epsilon = Some(self.epsilon);
        if self.window.is_full()
            && should_stop(
                &self.window,
                self.epsilon,
                self.config.stage.abs_alpha_threshold,
                self.config.stage.stop_mode,
            )?
        {
            self.enter(Stage::Done);
        }
        Ok(rec)
    }

    /// Runs one epoch of whatever stage is current.
    pub fn step(&mut self) -> Result<EpochRecord> {
        match self.stage {
            Stage::WarmUp => self.warmup_epoch(),
            Stage::Exploration => self.exploration_epoch(),
            Stage::Stability => self.stability_epoch(),
            Stage::Done => Err(invalid("search already finished".into())),
        }
    }
}

/// Full search, calling `observer` after every epoch (for example to append
/// to a log file).
pub fn run_search_with<B, F>(
    config: SearchConfig,
    backend: B,
    seed: u64,
    mut observer: F,
) -> Result<SearchResult>
where
    B: Backend,
    F: FnMut(&EpochRecord) -> Result<()>,
{
    let max_epochs = config.stage.max_total_epochs as u64;
    let mut state = SearchState::new(config, backend, seed)?;
    let mut log = Vec::new();
    let termination = loop {
        if state.stage() == Stage::Done {
            break Termination::EarlyStop;
        }
        if state.epoch() >= max_epochs {
            break Termination::MaxEpochs;
        }
        let rec = state.step()?;
        observer(&rec)?;
        log.push(rec);
    };
    Ok(SearchResult {
        genotype: state.genotype(),
        alpha: state.alpha.clone(),
        log,
        termination,
        reached_stage: state.stage(),
    })
}

pub fn run_search<B: Backend>(config: SearchConfig, backend: B, seed: u64) -> Result<SearchResult> {
    run_search_with(config, backend, seed, |_| Ok(()))
}
