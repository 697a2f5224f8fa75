use std::path::Path;

use seqstein::harness::ExperimentConfig;

fn shipped() -> Vec<(String, ExperimentConfig)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| (p.display().to_string(), ExperimentConfig::load(&p).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn shipped_configs_validate_and_round_trip() {
    let configs = shipped();
    assert!(configs.len() >= 3);
    for (path, cfg) in configs {
        cfg.validate().unwrap_or_else(|e| panic!("{path}: {e}"));
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg, "{path}");
        assert_eq!(back.hash(), cfg.hash(), "{path}");
    }
}

#[test]
fn hash_ignores_threads_but_not_seed() {
    let (_, cfg) = shipped().remove(0);
    let mut threaded = cfg.clone();
    threaded.threads = Some(7);
    assert_eq!(threaded.hash(), cfg.hash());
    let mut reseeded = cfg.clone();
    reseeded.seed += 1;
    assert_ne!(reseeded.hash(), cfg.hash());
}
