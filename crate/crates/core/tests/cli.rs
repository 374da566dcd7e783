use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use icsonas::arch::{load_genotype, ArchLayout};
use icsonas::logging::{read_log, LogFormat};
use icsonas::tabular::TabularSpace;

const TOY: &str = "name=toy\nedges=2\nops=none,conv\n\
0-0,0.1,0.09,0\n0-1,0.9,0.88,1\n1-0,0.5,0.52,1\n1-1,0.7,0.69,2\n";

fn icsonas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icsonas"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn oracle_prints_the_best_toy_genotype() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("toy.space");
    fs::write(&file, TOY).unwrap();
    let o = icsonas(&["oracle", "--space", path(&file)]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("best genotype: 0-1 (none,conv)"), "{text}");
    assert!(text.contains("valid_acc: 0.9"), "{text}");
}

#[test]
fn check_grad_passes_on_default_layout() {
    let o = icsonas(&["check-grad"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    let line = text
        .lines()
        .find(|l| l.starts_with("max relative error: ") && !l.contains("weights"))
        .expect("error line");
    let value: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(value < 1e-5, "{value}");
}

#[test]
fn usage_errors_exit_nonzero_with_help() {
    let o = icsonas(&[]);
    assert!(!o.status.success());
    let o = icsonas(&["search", "--no-such-flag", "1"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--no-such-flag"));
    let o = icsonas(&["search", "--pop-size", "two"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pop_size"));
}

#[test]
fn gen_space_then_tabular_search_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("s.space");
    let o = icsonas(&[
        "gen-space",
        "--out",
        path(&space),
        "--edges",
        "5",
        "--num-ops",
        "5",
        "--seed",
        "3",
    ]);
    assert!(o.status.success());
    let parsed = TabularSpace::load(&space).unwrap();
    assert_eq!(parsed.len(), 3125);

    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = icsonas(&[
            "search",
            "--backend",
            "tabular",
            "--space",
            path(&space),
            "--seed",
            "7",
            "--log-format",
            "jsonl",
            "--out",
            path(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["log.jsonl", "genotype.txt", "alpha.txt"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let log = read_log(&a.join("log.jsonl"), LogFormat::Jsonl).unwrap();
    assert!(!log.is_empty());
    let g = load_genotype(&a.join("genotype.txt"), parsed.layout()).unwrap();
    assert!(parsed.lookup(&g).is_ok());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# toy run\nphi = 0.5\nmax_total_epochs = 2\n").unwrap();
    let out = dir.path().join("out");
    let o = icsonas(&[
        "search",
        "--config",
        path(&cfg),
        "--phi",
        "0.2",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let written = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(written.lines().any(|l| l == "phi = 0.2"), "{written}");
    let log = read_log(&out.join("log.csv"), LogFormat::Csv).unwrap();
    assert_eq!(log.len(), 2);
    let csv = fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn supernet_genotype_export_has_two_cells_of_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = icsonas(&["search", "--max-epochs", "6", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("genotype.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    for l in &lines {
        assert_eq!(l.split(',').count(), 5, "{l}");
    }
    let ops = ["zero", "skip", "linear", "relu_linear", "tanh_linear"]
        .map(String::from)
        .to_vec();
    let layout = ArchLayout::cells(2, ops).unwrap();
    let g = load_genotype(&out.join("genotype.txt"), &layout).unwrap();
    assert_eq!(g.cells.len(), 2);
}
