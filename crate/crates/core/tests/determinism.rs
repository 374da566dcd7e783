use std::fs;
use std::path::Path;

use icsonas::controller::{run_search, SearchConfig, TabularBackend};
use icsonas::rng::RandomStream;
use icsonas::tabular::{generate_space, GeneratorConfig, QueryBudget};

fn sources(dir: &Path, out: &mut Vec<(String, String)>) {
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            sources(&p, out);
        } else if p.extension().is_some_and(|e| e == "rs") {
            out.push((p.display().to_string(), fs::read_to_string(&p).unwrap()));
        }
    }
}

#[test]
fn no_ambient_entropy_in_sources() {
    let mut files = Vec::new();
    sources(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("src"),
        &mut files,
    );
    assert!(!files.is_empty());
    let banned = [
        "thread_rng",
        "from_entropy",
        "OsRng",
        "getrandom",
        "SystemTime",
        "HashMap",
        "HashSet",
        "RandomState",
        "rand::random",
    ];
    for (name, text) in &files {
        for b in banned {
            assert!(!text.contains(b), "{name} uses {b}");
        }
    }
}

#[test]
fn streams_are_reproducible_and_independent() {
    let draw = |s: &mut RandomStream| (0..16).map(|_| s.next_u64()).collect::<Vec<_>>();
    let root = RandomStream::new(42);
    let a = draw(&mut root.substream("swarm"));
    assert_eq!(a, draw(&mut RandomStream::new(42).substream("swarm")));
    assert_ne!(a, draw(&mut root.substream("data")));
    assert_ne!(a, draw(&mut RandomStream::new(43).substream("swarm")));
}

#[test]
fn wall_time_is_off_by_default() {
    let cfg = GeneratorConfig::new(4, GeneratorConfig::default_ops(4));
    let space = generate_space("t", &cfg, 0).unwrap();
    let r = run_search(
        SearchConfig::default(),
        TabularBackend::new(&space, QueryBudget::unlimited()),
        1,
    )
    .unwrap();
    assert!(r.log.iter().all(|rec| rec.wall_ms == 0));
}
