//! Command-line front end.
//!
//! ```text
//! icsonas search     [--config FILE] [--seed N] [--backend supernet|tabular] [--space FILE]
//!                    [--out DIR] [--log-format csv|jsonl] [--max-epochs N] [--<any-config-key> V]
//! icsonas bench      [--function NAME|all] [--dim D] [--pop P] [--evaluations E] [--seeds S]
//! icsonas gen-space  --out FILE [--edges E] [--num-ops K] [--seed N] [--name NAME]
//! icsonas oracle     --space FILE
//! icsonas check-grad [--seed N] [--batch-size B] [--step H] [--tolerance T]
//! ```
//!
//! `search` writes `log.csv` (or `log.jsonl`), `genotype.txt`, `alpha.txt`
//! and the resolved `config.txt` into the output directory.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgMatches, Command};

use crate::arch::{export_genotype, ArchParams};
use crate::bench::{compare, BenchConfig, TestFunction};
use crate::config::{parse_config, BackendKind, RunConfig, KEYS};
use crate::controller::{run_search_with, SearchResult, SupernetBackend, TabularBackend};
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, CheckPoint, DEFAULT_STEP};
use crate::logging::LogSink;
use crate::supernet::SupernetConfig;
use crate::tabular::{
    brute_force_best, generate_space, genotype_key, GeneratorConfig, QueryBudget, TabularSpace,
};

fn kebab(key: &str) -> String {
    key.replace('_', "-")
}

fn search_command() -> Command {
    let mut cmd = Command::new("search")
        .about("Run the three-stage search")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(value_parser!(PathBuf)),
        );
    for key in KEYS {
        let mut arg = Arg::new(*key)
            .long(kebab(key))
            .value_name("VALUE")
            .allow_hyphen_values(true);
        arg = match *key {
            "rng_seed" => arg.visible_alias("seed"),
            "max_total_epochs" => arg.visible_alias("max-epochs"),
            _ => arg,
        };
        cmd = cmd.arg(arg);
    }
    cmd
}

fn command() -> Command {
    Command::new("icsonas")
        .about("Hybrid gradient and competitive-swarm architecture search")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(search_command())
        .subcommand(
            Command::new("bench")
                .about(
                    "Compare the triplet swarm, pairwise swarm and random search on test functions",
                )
                .arg(
                    Arg::new("function")
                        .long("function")
                        .default_value("sphere"),
                )
                .arg(
                    Arg::new("dim")
                        .long("dim")
                        .default_value("224")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("pop")
                        .long("pop")
                        .default_value("60")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("evaluations")
                        .long("evaluations")
                        .default_value("7200")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .default_value("10")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("phi")
                        .long("phi")
                        .default_value("0.15")
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("lower")
                        .long("lower")
                        .default_value("-3")
                        .allow_hyphen_values(true)
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("upper")
                        .long("upper")
                        .default_value("3")
                        .allow_hyphen_values(true)
                        .value_parser(value_parser!(f64)),
                ),
        )
        .subcommand(
            Command::new("gen-space")
                .about("Write a seeded synthetic tabular space")
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("edges")
                        .long("edges")
                        .default_value("6")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("num-ops")
                        .long("num-ops")
                        .default_value("4")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .value_parser(value_parser!(u64)),
                )
                .arg(Arg::new("name").long("name").default_value("synthetic")),
        )
        .subcommand(
            Command::new("oracle")
                .about("Brute-force the best genotype of a tabular space")
                .arg(
                    Arg::new("space")
                        .long("space")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                ),
        )
        .subcommand(
            Command::new("check-grad")
                .about("Compare supernet gradients with central finite differences")
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .value_parser(value_parser!(u64)),
                )
                .arg(
                    Arg::new("batch-size")
                        .long("batch-size")
                        .default_value("16")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("step")
                        .long("step")
                        .default_value(DEFAULT_STEP.to_string())
                        .value_parser(value_parser!(f64)),
                )
                .arg(
                    Arg::new("tolerance")
                        .long("tolerance")
                        .default_value("1e-5")
                        .value_parser(value_parser!(f64)),
                ),
        )
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match matches.subcommand() {
        Some(("search", m)) => cmd_search(m, out),
        Some(("bench", m)) => cmd_bench(m, out),
        Some(("gen-space", m)) => cmd_gen_space(m, out),
        Some(("oracle", m)) => cmd_oracle(m, out),
        Some(("check-grad", m)) => cmd_check_grad(m, out),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn alpha_text(alpha: &ArchParams) -> String {
    let mut s = String::new();
    for cell in 0..alpha.num_cells() {
        for edge in 0..alpha.edges_per_cell() {
            let row: Vec<String> = alpha.edge(cell, edge).iter().map(f64::to_string).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_search(m: &ArgMatches, out: &mut dyn Write) -> Result<i32> {
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let cfg = parse_config(
        m.get_one::<PathBuf>("config").map(PathBuf::as_path),
        &overrides,
    )?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_file(&cfg.out.join("config.txt"), &cfg.to_text())?;
    let log_path = cfg.out.join(format!("log.{}", cfg.log_format.extension()));
    let mut sink = LogSink::create(&log_path, cfg.log_format)?;
    let observer = |rec: &crate::logging::EpochRecord| sink.log_epoch(rec);

    let search = cfg.search_config()?;
    let (result, layout) = match cfg.backend {
        BackendKind::Supernet => {
            let backend =
                SupernetBackend::build(&cfg.net, &cfg.spirals, cfg.dataset_seed, cfg.rng_seed)?;
            let layout = cfg.net.layout()?;
            (
                run_search_with(search, backend, cfg.rng_seed, observer)?,
                layout,
            )
        }
        BackendKind::Tabular => {
            let path = cfg.space.as_ref().expect("validated");
            let space = TabularSpace::load(path)?;
            let budget = cfg
                .query_budget
                .map_or_else(QueryBudget::unlimited, QueryBudget::new);
            let backend = TabularBackend::new(&space, budget);
            (
                run_search_with(search, backend, cfg.rng_seed, observer)?,
                space.layout().clone(),
            )
        }
    };
    export_genotype(&result.genotype, &layout, &cfg.out.join("genotype.txt"))?;
    write_file(&cfg.out.join("alpha.txt"), &alpha_text(&result.alpha))?;
    report_search(&cfg, &result, &log_path, &layout, out).map_err(io_err)?;
    Ok(0)
}

fn report_search(
    cfg: &RunConfig,
    result: &SearchResult,
    log_path: &Path,
    layout: &crate::arch::ArchLayout,
    out: &mut dyn Write,
) -> std::io::Result<()> {
    writeln!(out, "backend: {}", cfg.backend.name())?;
    writeln!(out, "epochs: {}", result.log.len())?;
    writeln!(out, "termination: {:?}", result.termination)?;
    writeln!(out, "reached stage: {}", result.reached_stage)?;
    if let Some(acc) = result.log.last().and_then(|r| r.validation_accuracy) {
        writeln!(out, "validation accuracy: {acc}")?;
    }
    writeln!(out, "log: {}", log_path.display())?;
    writeln!(out, "genotype:")?;
    write!(out, "{}", result.genotype.to_text(layout))
}

fn cmd_bench(m: &ArgMatches, out: &mut dyn Write) -> Result<i32> {
    let name = m.get_one::<String>("function").expect("default");
    let functions: Vec<TestFunction> = if name == "all" {
        TestFunction::ALL.to_vec()
    } else {
        vec![name.parse()?]
    };
    let cfg = BenchConfig {
        dim: *m.get_one("dim").expect("default"),
        lower: *m.get_one("lower").expect("default"),
        upper: *m.get_one("upper").expect("default"),
        pop_size: *m.get_one("pop").expect("default"),
        phi: *m.get_one("phi").expect("default"),
        evaluations: *m.get_one("evaluations").expect("default"),
    };
    let seeds: u64 = *m.get_one("seeds").expect("default");
    writeln!(
        out,
        "# dim={} pop={} evaluations={} seeds={seeds} bounds=[{}, {}]",
        cfg.dim, cfg.pop_size, cfg.evaluations, cfg.lower, cfg.upper
    )
    .map_err(io_err)?;
    writeln!(out, "function,optimizer,median_best,min_best,max_best").map_err(io_err)?;
    for f in functions {
        for row in compare(f, &cfg, seeds)? {
            let lo = row
                .best_per_seed
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let hi = row
                .best_per_seed
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            writeln!(
                out,
                "{},{},{},{lo},{hi}",
                f,
                row.optimizer.name(),
                row.median()
            )
            .map_err(io_err)?;
        }
    }
    Ok(0)
}

fn cmd_gen_space(m: &ArgMatches, out: &mut dyn Write) -> Result<i32> {
    let path = m.get_one::<PathBuf>("out").expect("required");
    let edges: usize = *m.get_one("edges").expect("default");
    let num_ops: usize = *m.get_one("num-ops").expect("default");
    let seed: u64 = *m.get_one("seed").expect("default");
    let name = m.get_one::<String>("name").expect("default");
    let gen = GeneratorConfig::new(edges, GeneratorConfig::default_ops(num_ops));
    let space = generate_space(name, &gen, seed)?;
    space.save(path)?;
    writeln!(out, "wrote {} genotypes to {}", space.len(), path.display()).map_err(io_err)?;
    Ok(0)
}

fn cmd_oracle(m: &ArgMatches, out: &mut dyn Write) -> Result<i32> {
    let space = TabularSpace::load(m.get_one::<PathBuf>("space").expect("required"))?;
    let (best, metrics) = brute_force_best(&space);
    let key = genotype_key(&best.cells[0]);
    let names = best.to_text(space.layout());
    writeln!(out, "best genotype: {key} ({})", names.trim_end()).map_err(io_err)?;
    writeln!(out, "valid_acc: {}", metrics.valid_acc).map_err(io_err)?;
    writeln!(out, "test_acc: {}", metrics.test_acc).map_err(io_err)?;
    writeln!(out, "cost: {}", metrics.cost).map_err(io_err)?;
    Ok(0)
}

fn cmd_check_grad(m: &ArgMatches, out: &mut dyn Write) -> Result<i32> {
    let seed: u64 = *m.get_one("seed").expect("default");
    let batch_size: usize = *m.get_one("batch-size").expect("default");
    let step: f64 = *m.get_one("step").expect("default");
    let tolerance: f64 = *m.get_one("tolerance").expect("default");
    let CheckPoint {
        state,
        alpha,
        batch,
    } = CheckPoint::smooth(&SupernetConfig::default(), seed, batch_size)?;
    let report = check_gradients(&state, &alpha, &batch, step)?;
    writeln!(
        out,
        "checked {} weight and {} alpha coordinates (step {step}, batch {batch_size})",
        report.checked_weights, report.checked_alpha
    )
    .map_err(io_err)?;
    writeln!(
        out,
        "max relative error: weights {:e} (index {}), alpha {:e} (index {})",
        report.max_rel_weights, report.worst_weight, report.max_rel_alpha, report.worst_alpha
    )
    .map_err(io_err)?;
    writeln!(out, "max relative error: {:e}", report.max_rel()).map_err(io_err)?;
    Ok(if report.max_rel() < tolerance { 0 } else { 1 })
}
