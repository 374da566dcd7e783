use std::collections::BTreeSet;

use icsonas::arch::{discretize, encode_alpha, ArchLayout, ArchParams, Genotype};
use icsonas::controller::{
    run_search, Backend, SearchConfig, SearchState, Stage, StageConfig, SupernetBackend,
    TabularBackend, Termination,
};
use icsonas::data::SpiralConfig;
use icsonas::fitness::LossBounds;
use icsonas::rng::RandomStream;
use icsonas::supernet::SupernetConfig;
use icsonas::tabular::{generate_space, GeneratorConfig, QueryBudget, TabularSpace};
use icsonas::Result;

fn space(edges: usize, ops: usize, seed: u64) -> TabularSpace {
    let cfg = GeneratorConfig::new(edges, GeneratorConfig::default_ops(ops));
    generate_space("t", &cfg, seed).unwrap()
}

fn toy_backend(seed: u64) -> SupernetBackend {
    SupernetBackend::build(
        &SupernetConfig::default(),
        &SpiralConfig::default(),
        0,
        seed,
    )
    .unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Call {
    Particle,
    Selection,
}

/// Records which loss entry point produced each value and every genotype
/// the inner backend was asked about.
struct Probe<B> {
    inner: B,
    calls: Vec<(Call, Vec<f64>, f64)>,
    genotypes: Vec<Genotype>,
}

impl<B: Backend> Probe<B> {
    fn new(inner: B) -> Self {
        Self {
            inner,
            calls: Vec::new(),
            genotypes: Vec::new(),
        }
    }
}

impl<B: Backend> Backend for Probe<B> {
    fn layout(&self) -> &ArchLayout {
        self.inner.layout()
    }

    fn default_loss_bounds(&self) -> LossBounds {
        self.inner.default_loss_bounds()
    }

    fn train_epoch(
        &mut self,
        alpha: &ArchParams,
        config: &StageConfig,
        rng: &mut RandomStream,
    ) -> Result<Option<f64>> {
        self.inner.train_epoch(alpha, config, rng)
    }

    fn begin_generation(&mut self, config: &StageConfig, rng: &mut RandomStream) -> Result<()> {
        self.inner.begin_generation(config, rng)
    }

    fn particle_loss(&mut self, alpha: &ArchParams) -> Result<f64> {
        let v = self.inner.particle_loss(alpha)?;
        self.genotypes.push(discretize(alpha));
        self.calls.push((Call::Particle, encode_alpha(alpha), v));
        Ok(v)
    }

    fn selection_loss(&mut self, alpha: &ArchParams) -> Result<f64> {
        let v = self.inner.selection_loss(alpha)?;
        self.genotypes.push(discretize(alpha));
        self.calls.push((Call::Selection, encode_alpha(alpha), v));
        Ok(v)
    }

    fn validation_accuracy(&mut self, alpha: &ArchParams) -> Result<f64> {
        self.genotypes.push(discretize(alpha));
        self.inner.validation_accuracy(alpha)
    }

    fn stability_epoch(
        &mut self,
        alpha: &mut ArchParams,
        config: &StageConfig,
        rng: &mut RandomStream,
    ) -> Result<()> {
        self.inner.stability_epoch(alpha, config, rng)
    }

    fn queries_used(&self) -> u64 {
        self.inner.queries_used()
    }
}

#[test]
fn warmup_freezes_alpha_bitwise() {
    let mut state = SearchState::new(SearchConfig::default(), toy_backend(3), 3).unwrap();
    let before: Vec<u64> = state
        .alpha()
        .as_slice()
        .iter()
        .map(|v| v.to_bits())
        .collect();
    while state.stage() == Stage::WarmUp {
        state.step().unwrap();
        let now: Vec<u64> = state
            .alpha()
            .as_slice()
            .iter()
            .map(|v| v.to_bits())
            .collect();
        assert_eq!(now, before);
    }
    assert_eq!(state.stage(), Stage::Exploration);
    assert_eq!(state.epoch(), 5);
}

#[test]
fn warmup_loss_decreases_in_most_seeds() {
    let mut decreasing = 0;
    for seed in 0..10 {
        let mut state = SearchState::new(SearchConfig::default(), toy_backend(seed), seed).unwrap();
        let mut losses = Vec::new();
        while state.stage() == Stage::WarmUp {
            state.step().unwrap();
            losses.push(state.last_train_loss().unwrap());
        }
        assert_eq!(losses.len(), 5);
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 8, "{decreasing}/10 seeds strictly decreasing");
}

#[test]
fn zero_warmup_starts_in_exploration() {
    let mut cfg = SearchConfig::default();
    cfg.stage.warmup_epochs = 0;
    let s = space(4, 4, 1);
    let state =
        SearchState::new(cfg, TabularBackend::new(&s, QueryBudget::unlimited()), 0).unwrap();
    assert_eq!(state.stage(), Stage::Exploration);
}

#[test]
fn epoch_cap_at_warmup_stops_before_stability() {
    let mut cfg = SearchConfig::default();
    cfg.stage.max_total_epochs = cfg.stage.warmup_epochs;
    let r = run_search(cfg, toy_backend(0), 0).unwrap();
    assert_eq!(r.termination, Termination::MaxEpochs);
    assert!(r.reached_stage <= Stage::Exploration);
    assert_eq!(r.log.len(), 5);
}

#[test]
fn stages_never_move_backward() {
    let s = space(5, 5, 4);
    for seed in 0..5 {
        let r = run_search(
            SearchConfig::default(),
            TabularBackend::new(&s, QueryBudget::unlimited()),
            seed,
        )
        .unwrap();
        assert!(r.log.windows(2).all(|w| w[0].stage <= w[1].stage));
        assert!(r
            .log
            .iter()
            .enumerate()
            .all(|(i, rec)| rec.epoch == i as u64 + 1));
        assert_eq!(r.reached_stage, Stage::Done);
        assert_eq!(r.termination, Termination::EarlyStop);
    }
}

#[test]
fn swarm_sees_combined_fitness_and_selection_sees_base() {
    let s = space(5, 5, 7);
    let mut state = SearchState::new(
        SearchConfig::default(),
        Probe::new(TabularBackend::new(&s, QueryBudget::unlimited())),
        11,
    )
    .unwrap();
    let mut checked = 0;
    while state.stage() != Stage::Done && state.epoch() < 40 {
        let stage = state.stage();
        let before = state.backend().calls.len();
        state.step().unwrap();
        if stage != Stage::Exploration {
            continue;
        }
        let trace = state.last_exploration().unwrap().clone();
        let calls = &state.backend().calls[before..];
        let pop = SearchConfig::default().swarm.pop_size;
        let gens = trace.generations.len();
        assert_eq!(calls.len(), pop * gens + pop);

        for (g, gen) in trace.generations.iter().enumerate() {
            let slice = &calls[g * pop..(g + 1) * pop];
            assert!(slice.iter().all(|c| c.0 == Call::Particle));
            for (i, report) in gen.reports.iter().enumerate() {
                assert_eq!(gen.summary.fitness[i].to_bits(), report.combined.to_bits());
                assert_eq!(report.base.to_bits(), slice[i].2.to_bits());
            }
        }
        let sel = &calls[pop * gens..];
        assert!(sel.iter().all(|c| c.0 == Call::Selection));
        for (i, c) in sel.iter().enumerate() {
            assert_eq!(trace.selection_base[i].to_bits(), c.2.to_bits());
        }
        let min = trace
            .selection_base
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let first_min = trace.selection_base.iter().position(|&v| v == min).unwrap();
        assert_eq!(trace.selected, first_min);
        assert_eq!(trace.x_star, sel[trace.selected].1);
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn selection_ignores_a_better_combined_score() {
    // With heavy diversity weights the combined ranking departs from the
    // base ranking; x* must still be the base argmin.
    let s = space(5, 5, 9);
    let mut cfg = SearchConfig::default();
    cfg.fitness.lambda_swarm = 5.0;
    cfg.fitness.lambda_op = 5.0;
    let mut state =
        SearchState::new(cfg, TabularBackend::new(&s, QueryBudget::unlimited()), 2).unwrap();
    while state.stage() == Stage::WarmUp {
        state.step().unwrap();
    }
    state.step().unwrap();
    let trace = state.last_exploration().unwrap();
    let base = &trace.selection_base;
    assert!(base.iter().all(|&b| base[trace.selected] <= b));
}

#[test]
fn budget_identity_on_tabular_backend() {
    let s = space(5, 5, 12);
    let mut state = SearchState::new(
        SearchConfig::default(),
        Probe::new(TabularBackend::new(&s, QueryBudget::unlimited())),
        5,
    )
    .unwrap();
    let mut seen = BTreeSet::new();
    let mut total_new = 0u64;
    while state.stage() != Stage::Done && state.epoch() < 100 {
        let before = state.backend().genotypes.len();
        let rec = state.step().unwrap();
        let new_this_epoch = state.backend().genotypes[before..]
            .iter()
            .filter(|g| seen.insert((*g).clone()))
            .count() as u64;
        total_new += new_this_epoch;
        assert_eq!(rec.queries_used, total_new);
    }
    assert_eq!(state.backend().queries_used(), seen.len() as u64);
}

#[test]
fn exhausted_budget_is_an_error() {
    let s = space(5, 5, 12);
    let err = run_search(
        SearchConfig::default(),
        TabularBackend::new(&s, QueryBudget::new(10)),
        0,
    )
    .unwrap_err();
    assert!(err.to_string().contains("budget"), "{err}");
}

fn first_exploration<B: Backend>(cfg: SearchConfig, backend: B) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut state = SearchState::new(cfg, backend, 4).unwrap();
    while state.stage() == Stage::WarmUp {
        state.step().unwrap();
    }
    let before = state.alpha().as_slice().to_vec();
    state.step().unwrap();
    let x_star = state.last_exploration().unwrap().x_star.clone();
    (before, state.alpha().as_slice().to_vec(), x_star)
}

#[test]
fn eta_zero_keeps_alpha_and_eta_one_copies_x_star() {
    let s = space(4, 8, 3);
    let mut cfg = SearchConfig::default();
    cfg.stage.exploration_eta_alpha = 0.0;
    let (before, after, _) = first_exploration(
        cfg.clone(),
        TabularBackend::new(&s, QueryBudget::unlimited()),
    );
    assert_eq!(before, after);

    cfg.stage.exploration_eta_alpha = 1.0;
    let (_, after, x_star) =
        first_exploration(cfg, TabularBackend::new(&s, QueryBudget::unlimited()));
    assert_eq!(after, x_star);
}

/// Drives the toy net straight into stability (near-zero accuracy threshold) and
/// returns the V_t of the first `epochs` stability epochs.
fn stability_steps(seed: u64, lr: f64, epochs: usize) -> Vec<f64> {
    let mut cfg = SearchConfig::default();
    cfg.stage.stability_threshold = 1e-9;
    cfg.stage.stability_arch_lr = lr;
    let mut state = SearchState::new(cfg, toy_backend(seed), seed).unwrap();
    while state.stage() != Stage::Stability {
        state.step().unwrap();
    }
    (0..epochs)
        .map(|_| state.step().unwrap().v_t.unwrap())
        .collect()
}

#[test]
fn zero_stability_lr_gives_zero_movement() {
    for v in stability_steps(1, 0.0, 3) {
        assert_eq!(v, 0.0);
    }
}

#[test]
fn small_stability_lr_settles_quickly() {
    let min_epochs = StageConfig::default().min_stability_epochs;
    let mut settled = 0;
    for seed in 0..10 {
        let v = stability_steps(seed, StageConfig::default().stability_arch_lr, min_epochs);
        assert!(v.iter().all(|x| x.is_finite() && *x >= 0.0));
        if v.iter().any(|&x| x < 1e-3) {
            settled += 1;
        }
    }
    assert!(settled >= 8, "{settled}/10 seeds settled");
}

#[test]
fn identical_seeds_give_identical_logs() {
    let s = space(6, 4, 2);
    let run = |seed| {
        run_search(
            SearchConfig::default(),
            TabularBackend::new(&s, QueryBudget::unlimited()),
            seed,
        )
        .unwrap()
    };
    let (a, b) = (run(8), run(8));
    assert_eq!(a, b);
    let csv = |r: &icsonas::controller::SearchResult| {
        r.log
            .iter()
            .map(|x| x.to_csv())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(csv(&a), csv(&b));
    assert_ne!(csv(&a), csv(&run(9)));
}

#[test]
fn invalid_config_fails_before_compute() {
    let mut cfg = SearchConfig::default();
    cfg.stage.warmup_arch_lr = 0.1;
    assert!(SearchState::new(cfg, toy_backend(0), 0).is_err());
    let mut cfg = SearchConfig::default();
    cfg.swarm.pop_size = 2;
    assert!(SearchState::new(cfg, toy_backend(0), 0).is_err());
}
