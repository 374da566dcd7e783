//! Tabular architecture spaces: an exhaustive genotype -> metrics table with
//! budgeted, cached queries and a brute-force oracle.
//!
//! # File format
//!
//! UTF-8 text. Three header lines, then one row per genotype:
//!
//! ```text
//! name=toy
//! edges=2
//! ops=none,conv
//! 0-0,0.1,0.09,0
//! 0-1,0.9,0.88,1
//! 1-0,0.5,0.52,1
//! 1-1,0.7,0.69,2
//! ```
//!
//! A row is `<op index per edge joined by '-'>,<valid_acc>,<test_acc>,<cost>`.
//! Accuracies are fractions in `[0, 1]`. The table must cover the full
//! cross-product of per-edge choices exactly once. [`TabularSpace::to_text`]
//! writes rows in lexicographic genotype order using the shortest decimal
//! form that round-trips, so load followed by save reproduces a file written
//! by this module byte for byte. External converters (for example from a
//! published benchmark release) only need to emit this format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use crate::arch::{decode_alpha, discretize, ArchLayout, Genotype};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub valid_acc: f64,
    pub test_acc: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularSpace {
    name: String,
    layout: ArchLayout,
    table: BTreeMap<Vec<usize>, Metrics>,
}

pub fn genotype_key(ops: &[usize]) -> String {
    ops.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

fn parse_key(key: &str, line: usize) -> Result<Vec<usize>> {
    key.split('-')
        .map(|t| {
            t.parse::<usize>().map_err(|_| Error::SpaceFormat {
                line,
                message: format!("bad genotype key {key:?}"),
            })
        })
        .collect()
}

impl TabularSpace {
    /// Builds a space from rows, validating exhaustiveness and ranges.
    pub fn from_rows(
        name: impl Into<String>,
        layout: ArchLayout,
        rows: impl IntoIterator<Item = (Vec<usize>, Metrics)>,
    ) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (i, (ops, m)) in rows.into_iter().enumerate() {
            insert_row(&mut table, &layout, ops, m, i + 1)?;
        }
        let space = Self {
            name: name.into(),
            layout,
            table,
        };
        space.check_exhaustive()?;
        Ok(space)
    }

    fn check_exhaustive(&self) -> Result<()> {
        let expected = self.size_of_cross_product();
        if self.table.len() != expected {
            let missing = all_genotypes(self.layout.edges_per_cell(), self.layout.num_ops())
                .find(|g| !self.table.contains_key(g))
                .expect("a row is missing");
            return Err(Error::MissingGenotype(genotype_key(&missing)));
        }
        Ok(())
    }

    fn size_of_cross_product(&self) -> usize {
        self.layout
            .num_ops()
            .pow(self.layout.edges_per_cell() as u32)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines.next().ok_or(Error::SpaceFormat {
                line: 0,
                message: format!("missing header `{key}=`"),
            })?;
            line.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| Error::SpaceFormat {
                    line: n,
                    message: format!("expected header `{key}=...`"),
                })
        };
        let name = header("name")?;
        let edges_text = header("edges")?;
        let edges = edges_text
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::SpaceFormat {
                line: 2,
                message: format!("edges must be a positive integer, got {edges_text:?}"),
            })?;
        let ops: Vec<String> = header("ops")?.split(',').map(str::to_string).collect();
        let layout = ArchLayout::single_cell(edges, ops).map_err(|e| Error::SpaceFormat {
            line: 3,
            message: e.to_string(),
        })?;

        let mut table = BTreeMap::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::SpaceFormat {
                    line: n,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let ops = parse_key(fields[0], n)?;
            let num = |i: usize, what: &str| -> Result<f64> {
                fields[i]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::SpaceFormat {
                        line: n,
                        message: format!("bad {what} {:?}", fields[i]),
                    })
            };
            let m = Metrics {
                valid_acc: num(1, "valid_acc")?,
                test_acc: num(2, "test_acc")?,
                cost: num(3, "cost")?,
            };
            insert_row(&mut table, &layout, ops, m, n)?;
        }
        let space = Self {
            name,
            layout,
            table,
        };
        space.check_exhaustive()?;
        Ok(space)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "name={}", self.name).unwrap();
        writeln!(out, "edges={}", self.layout.edges_per_cell()).unwrap();
        writeln!(out, "ops={}", self.layout.ops().join(",")).unwrap();
        for (ops, m) in &self.table {
            writeln!(
                out,
                "{},{},{},{}",
                genotype_key(ops),
                m.valid_acc,
                m.test_acc,
                m.cost
            )
            .unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layout(&self) -> &ArchLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &Metrics)> {
        self.table.iter()
    }

    /// Unbudgeted lookup.
    pub fn lookup(&self, genotype: &Genotype) -> Result<Metrics> {
        let ops = single_cell(genotype)?;
        self.table
            .get(ops)
            .copied()
            .ok_or_else(|| Error::UnknownGenotype(genotype_key(ops)))
    }

    /// 1-based rank by validation accuracy: one plus the number of genotypes
    /// that are strictly better.
    pub fn rank_of(&self, genotype: &Genotype) -> Result<usize> {
        let acc = self.lookup(genotype)?.valid_acc;
        Ok(1 + self.table.values().filter(|m| m.valid_acc > acc).count())
    }
}

fn single_cell(genotype: &Genotype) -> Result<&[usize]> {
    match genotype.cells.as_slice() {
        [cell] => Ok(cell),
        _ => Err(Error::GenotypeFormat(format!(
            "tabular genotypes have one cell, got {}",
            genotype.cells.len()
        ))),
    }
}

fn insert_row(
    table: &mut BTreeMap<Vec<usize>, Metrics>,
    layout: &ArchLayout,
    ops: Vec<usize>,
    m: Metrics,
    line: usize,
) -> Result<()> {
    let key = genotype_key(&ops);
    let fail = |message: String| Error::SpaceFormat { line, message };
    if ops.len() != layout.edges_per_cell() {
        return Err(fail(format!(
            "genotype {key} has {} edges, expected {}",
            ops.len(),
            layout.edges_per_cell()
        )));
    }
    if ops.iter().any(|&o| o >= layout.num_ops()) {
        return Err(fail(format!(
            "genotype {key} uses an op index out of range"
        )));
    }
    for (what, v) in [("valid_acc", m.valid_acc), ("test_acc", m.test_acc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(fail(format!(
                "{what} {v} out of range [0, 1] for genotype {key}"
            )));
        }
    }
    if table.insert(ops, m).is_some() {
        return Err(fail(format!("duplicate genotype {key}")));
    }
    Ok(())
}

/// Every genotype of the cross-product, in lexicographic order.
pub fn all_genotypes(edges: usize, num_ops: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = num_ops.pow(edges as u32);
    (0..total).map(move |mut code| {
        let mut ops = vec![0; edges];
        for slot in ops.iter_mut().rev() {
            *slot = code % num_ops;
            code /= num_ops;
        }
        ops
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryBudget {
    pub queries_used: u64,
    pub queries_max: u64,
}

impl QueryBudget {
    pub fn new(queries_max: u64) -> Self {
        Self {
            queries_used: 0,
            queries_max,
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }
}

#[derive(Debug)]
struct SessionState {
    budget: QueryBudget,
    seen: BTreeSet<Vec<usize>>,
}

/// A budgeted view of a space. Each distinct genotype costs one query;
/// repeats are served from the cache for free. Safe to share across threads.
#[derive(Debug)]
pub struct QuerySession<'a> {
    space: &'a TabularSpace,
    state: Mutex<SessionState>,
}

impl<'a> QuerySession<'a> {
    pub fn new(space: &'a TabularSpace, budget: QueryBudget) -> Self {
        Self {
            space,
            state: Mutex::new(SessionState {
                budget,
                seen: BTreeSet::new(),
            }),
        }
    }

    pub fn space(&self) -> &TabularSpace {
        self.space
    }

    pub fn budget(&self) -> QueryBudget {
        self.state.lock().expect("session lock").budget
    }

    pub fn query(&self, genotype: &Genotype) -> Result<Metrics> {
        let metrics = self.space.lookup(genotype)?;
        let ops = single_cell(genotype)?;
        let mut state = self.state.lock().expect("session lock");
        if !state.seen.contains(ops) {
            if state.budget.queries_used >= state.budget.queries_max {
                return Err(Error::BudgetExhausted {
                    max: state.budget.queries_max,
                });
            }
            state.budget.queries_used += 1;
            state.seen.insert(ops.to_vec());
        }
        Ok(metrics)
    }

    /// Decodes a continuous position, discretizes it by per-edge argmax and
    /// queries the result. The loss proxy is `1 - valid_acc`.
    pub fn evaluate_position(&self, position: &[f64]) -> Result<(f64, Genotype)> {
        let genotype = discretize(&decode_alpha(position, self.space.layout())?);
        let m = self.query(&genotype)?;
        Ok((1.0 - m.valid_acc, genotype))
    }
}

/// Exhaustive scan for the highest validation accuracy; ties go to the
/// lexicographically smallest genotype.
pub fn brute_force_best(space: &TabularSpace) -> (Genotype, Metrics) {
    let mut best: Option<(&Vec<usize>, &Metrics)> = None;
    for (ops, m) in &space.table {
        if best.is_none_or(|(_, b)| m.valid_acc > b.valid_acc) {
            best = Some((ops, m));
        }
    }
    let (ops, m) = best.expect("spaces are never empty");
    (
        Genotype {
            cells: vec![ops.clone()],
        },
        *m,
    )
}

/// Parameters of the synthetic landscape generator.
///
/// Raw score of a genotype `g`:
/// `sum_e u[e][g_e] + sum_{e<f} J[e][f][g_e][g_f] + noise`, with `u`, `J` and
/// `noise` i.i.d. normal scaled by `unary_scale`, `pair_scale`, `noise_scale`.
/// Scores are standardized over the whole space and mapped to validation
/// accuracy by `acc_floor + (acc_ceiling - acc_floor) * sigmoid(sharpness * z + offset)`.
/// Test accuracy is validation accuracy plus `N(0, test_jitter)`, clamped.
/// Cost counts the ops whose index is >= 2 (ops 0 and 1 play the role of
/// parameter-free `none` / `skip`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub edges: usize,
    pub ops: Vec<String>,
    pub unary_scale: f64,
    pub pair_scale: f64,
    pub noise_scale: f64,
    pub acc_floor: f64,
    pub acc_ceiling: f64,
    pub sharpness: f64,
    pub offset: f64,
    pub test_jitter: f64,
}

impl GeneratorConfig {
    pub fn new(edges: usize, ops: Vec<String>) -> Self {
        Self {
            edges,
            ops,
            unary_scale: 1.0,
            pair_scale: 0.6,
            noise_scale: 0.3,
            acc_floor: 0.10,
            acc_ceiling: 0.95,
            sharpness: 1.5,
            offset: 1.0,
            test_jitter: 0.005,
        }
    }

    /// `n` op names: the five cell-search op names for `n = 5`, otherwise
    /// `none, skip, op2, op3, ...`.
    pub fn default_ops(n: usize) -> Vec<String> {
        if n == 5 {
            return [
                "none",
                "skip_connect",
                "nor_conv_1x1",
                "nor_conv_3x3",
                "avg_pool_3x3",
            ]
            .map(String::from)
            .to_vec();
        }
        (0..n)
            .map(|i| match i {
                0 => "none".to_string(),
                1 => "skip".to_string(),
                _ => format!("op{i}"),
            })
            .collect()
    }
}

/// Seeded synthetic space with pairwise interactions, so that choosing the
/// best op per edge independently is generally not optimal.
pub fn generate_space(name: &str, config: &GeneratorConfig, seed: u64) -> Result<TabularSpace> {
    let layout = ArchLayout::single_cell(config.edges, config.ops.clone())?;
    let (e, k) = (config.edges, config.ops.len());
    if (k as f64).powi(e as i32) > 1e7 {
        return Err(Error::InvalidParameter(format!(
            "{k}^{e} genotypes is too large to tabulate"
        )));
    }
    let mut rng = RandomStream::new(seed).substream("space");
    let unary: Vec<Vec<f64>> = (0..e)
        .map(|_| (0..k).map(|_| config.unary_scale * rng.normal()).collect())
        .collect();
    let mut pair = vec![vec![0.0; k * k]; e * e];
    for a in 0..e {
        for b in a + 1..e {
            for v in pair[a * e + b].iter_mut() {
                *v = config.pair_scale * rng.normal();
            }
        }
    }
    let genotypes: Vec<Vec<usize>> = all_genotypes(e, k).collect();
    let raw: Vec<f64> = genotypes
        .iter()
        .map(|g| {
            let mut s: f64 = g.iter().enumerate().map(|(i, &o)| unary[i][o]).sum();
            for a in 0..e {
                for b in a + 1..e {
                    s += pair[a * e + b][g[a] * k + g[b]];
                }
            }
            s + config.noise_scale * rng.normal()
        })
        .collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let span = config.acc_ceiling - config.acc_floor;
    let rows: Vec<(Vec<usize>, Metrics)> = genotypes
        .into_iter()
        .zip(raw)
        .map(|(g, r)| {
            let z = (r - mean) / sd;
            let sig = 1.0 / (1.0 + (-(config.sharpness * z + config.offset)).exp());
            let valid = round6(config.acc_floor + span * sig).clamp(0.0, 1.0);
            let test = round6(valid + config.test_jitter * rng.normal()).clamp(0.0, 1.0);
            let cost = g.iter().filter(|&&o| o >= 2).count() as f64;
            (
                g,
                Metrics {
                    valid_acc: valid,
                    test_acc: test,
                    cost,
                },
            )
        })
        .collect();
    TabularSpace::from_rows(name, layout, rows)
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "name=toy\nedges=2\nops=none,conv\n0-0,0.1,0.09,0\n0-1,0.9,0.88,1\n1-0,0.5,0.52,1\n1-1,0.7,0.69,2\n";

    fn g(ops: &[usize]) -> Genotype {
        Genotype {
            cells: vec![ops.to_vec()],
        }
    }

    #[test]
    fn loads_toy_space() {
        let s = TabularSpace::parse(TOY).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.name(), "toy");
        assert_eq!(s.to_text(), TOY);
    }

    #[test]
    fn missing_row_rejected() {
        let text = TOY.replace("1-0,0.5,0.52,1\n", "");
        let err = TabularSpace::parse(&text).unwrap_err();
        assert_eq!(err.to_string(), "missing genotype 1-0");
    }

    #[test]
    fn out_of_range_rejected() {
        let text = TOY.replace("0-1,0.9,", "0-1,1.2,");
        let err = TabularSpace::parse(&text).unwrap_err().to_string();
        assert!(
            err.contains("out of range") && err.contains("line 5"),
            "{err}"
        );
    }

    #[test]
    fn duplicate_rejected() {
        let text = format!("{TOY}0-1,0.3,0.3,1\n");
        let err = TabularSpace::parse(&text).unwrap_err().to_string();
        assert!(
            err.contains("duplicate genotype 0-1") && err.contains("line 8"),
            "{err}"
        );
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(TabularSpace::parse("edges=2\n").is_err());
        assert!(TabularSpace::parse(&TOY.replace("0-0,0.1,0.09,0", "0-0,0.1")).is_err());
        assert!(TabularSpace::parse(&TOY.replace("0-0,0.1", "0-x,0.1")).is_err());
        assert!(TabularSpace::parse(&TOY.replace("0-0,0.1", "0-2,0.1")).is_err());
    }

    #[test]
    fn query_and_cache() {
        let s = TabularSpace::parse(TOY).unwrap();
        let session = QuerySession::new(&s, QueryBudget::new(10));
        let m = session.query(&g(&[0, 1])).unwrap();
        assert_eq!(m.valid_acc, 0.9);
        assert_eq!(session.budget().queries_used, 1);
        let again = session.query(&g(&[0, 1])).unwrap();
        assert_eq!(again, m);
        assert_eq!(session.budget().queries_used, 1);
        assert!(matches!(
            session.query(&g(&[0, 1, 1])),
            Err(Error::UnknownGenotype(_))
        ));
    }

    #[test]
    fn zero_budget_exhausted() {
        let s = TabularSpace::parse(TOY).unwrap();
        let session = QuerySession::new(&s, QueryBudget::new(0));
        assert!(matches!(
            session.query(&g(&[0, 0])),
            Err(Error::BudgetExhausted { max: 0 })
        ));
    }

    #[test]
    fn evaluate_position_funnels_through_argmax() {
        let s = TabularSpace::parse(TOY).unwrap();
        let session = QuerySession::new(&s, QueryBudget::unlimited());
        let (loss, geno) = session.evaluate_position(&[0.5, -0.2, -1.0, 2.0]).unwrap();
        assert_eq!(geno, g(&[0, 1]));
        assert!((loss - 0.1).abs() < 1e-15);
        let (loss2, geno2) = session.evaluate_position(&[3.0, 0.0, 0.0, 0.1]).unwrap();
        assert_eq!((loss2, geno2), (loss, geno));
        assert!(session.evaluate_position(&[0.0; 3]).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let s = TabularSpace::parse(TOY).unwrap();
        let (best, m) = brute_force_best(&s);
        assert_eq!((best, m.valid_acc), (g(&[0, 1]), 0.9));

        let flat = "name=flat\nedges=2\nops=a,b\n0-0,0.5,0.5,0\n0-1,0.5,0.5,0\n1-0,0.5,0.5,0\n1-1,0.5,0.5,0\n";
        let s = TabularSpace::parse(flat).unwrap();
        assert_eq!(brute_force_best(&s).0, g(&[0, 0]));
    }

    #[test]
    fn brute_force_dominates_enumeration() {
        let cfg = GeneratorConfig::new(4, GeneratorConfig::default_ops(5));
        let s = generate_space("gen", &cfg, 3).unwrap();
        let (best, m) = brute_force_best(&s);
        assert_eq!(s.rank_of(&best).unwrap(), 1);
        for (_, other) in s.iter() {
            assert!(other.valid_acc <= m.valid_acc);
        }
    }

    #[test]
    fn generator_is_exhaustive_and_round_trips() {
        let cfg = GeneratorConfig::new(6, GeneratorConfig::default_ops(4));
        let s = generate_space("six-by-four", &cfg, 11).unwrap();
        assert_eq!(s.len(), 4096);
        let text = s.to_text();
        let back = TabularSpace::parse(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_text(), text);
        assert_eq!(generate_space("six-by-four", &cfg, 11).unwrap(), s);
    }

    #[test]
    fn generator_landscape_is_not_separable() {
        // Greedy per-edge choice (best op per edge with others at their
        // greedy value, one pass) should not hit the optimum on every seed.
        let cfg = GeneratorConfig::new(5, GeneratorConfig::default_ops(5));
        let mut greedy_hits = 0;
        for seed in 0..10 {
            let s = generate_space("g", &cfg, seed).unwrap();
            let mut cur = vec![0usize; 5];
            for e in 0..5 {
                let best_op = (0..5)
                    .max_by(|&a, &b| {
                        let mut ga = cur.clone();
                        ga[e] = a;
                        let mut gb = cur.clone();
                        gb[e] = b;
                        let ma = s.lookup(&g(&ga)).unwrap().valid_acc;
                        let mb = s.lookup(&g(&gb)).unwrap().valid_acc;
                        ma.total_cmp(&mb)
                    })
                    .unwrap();
                cur[e] = best_op;
            }
            if s.rank_of(&g(&cur)).unwrap() == 1 {
                greedy_hits += 1;
            }
        }
        assert!(greedy_hits < 10);
    }

    #[test]
    fn concurrent_queries_count_once() {
        let cfg = GeneratorConfig::new(4, GeneratorConfig::default_ops(4));
        let s = generate_space("c", &cfg, 1).unwrap();
        let session = QuerySession::new(&s, QueryBudget::unlimited());
        std::thread::scope(|scope| {
            for t in 0..4 {
                let session = &session;
                scope.spawn(move || {
                    for ops in all_genotypes(4, 4).skip(t * 10).take(100) {
                        session.query(&g(&ops)).unwrap();
                    }
                });
            }
        });
        assert_eq!(session.budget().queries_used, 130);
    }
}
