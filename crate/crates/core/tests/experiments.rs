use std::path::Path;

use icl_lens::experiments::{run_experiment, ExperimentConfig};
use icl_lens::io::{Manifest, RunLock};
use icl_lens::model::ModelConfig;
use icl_lens::training::TrainConfig;
use icl_lens::Error;

fn tiny(kind: &str, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        kind: kind.into(),
        out_dir: Some(dir.display().to_string()),
        tasks: vec![
            "next_letter".into(),
            "prev_letter".into(),
            "to_upper".into(),
        ],
        n: 6,
        k: 3,
        k_grid: vec![1, 2, 3, 4],
        model: ModelConfig {
            layers: 2,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            max_len: 40,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            steps: 3,
            batch_size: 6,
            k_train: 3,
            eval_every: 0,
            eval_instances: 2,
            eval_k: 3,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.override_seed(11);
    cfg
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR"))
        .join("experiments")
        .join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn same_config_gives_identical_tables() {
    let a = scratch("tdnv-a");
    let b = scratch("tdnv-b");
    let ra = run_experiment(tiny("tdnv", &a)).unwrap();
    let rb = run_experiment(tiny("tdnv", &b)).unwrap();
    assert!(ra.manifest.complete && ra.manifest.error.is_none() && rb.manifest.complete);
    assert!(ra.manifest.verify(&a).unwrap().is_empty());
    let csvs: Vec<&str> = ra
        .manifest
        .artifacts
        .iter()
        .map(|x| x.path.as_str())
        .filter(|p| p.ends_with(".csv"))
        .collect();
    assert!(csvs.contains(&"tdnv_curve.csv"));
    for name in csvs {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
    assert!(a.join("config.toml").exists());
    assert!(!a.join(".lock").exists());
    assert_eq!(Manifest::read(&a).unwrap(), ra.manifest);
    let back = ExperimentConfig::load(a.join("config.toml")).unwrap();
    assert_eq!(back, tiny("tdnv", &a));
}

#[test]
fn failure_is_recorded_in_the_manifest() {
    let dir = scratch("ingest-missing");
    let err = run_experiment(tiny("ingest", &dir)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    let m = Manifest::read(&dir).unwrap();
    assert!(!m.complete);
    assert!(m.error.is_some());
    assert!(!dir.join(".lock").exists());
}

#[test]
fn unknown_kind_and_locked_dir_are_refused() {
    let dir = scratch("locked");
    assert!(run_experiment(tiny("no_such_kind", &dir)).is_err());
    let held = RunLock::acquire(&dir).unwrap();
    assert!(run_experiment(tiny("theorem", &dir)).is_err());
    drop(held);
    let mut cfg = tiny("theorem", &dir);
    cfg.theorem.m = 200;
    cfg.theorem.m_inf = Some(400);
    cfg.theorem.k_grid = vec![0, 1, 2, 4, 8];
    run_experiment(cfg).unwrap();
    assert!(dir.join("theorem_report.csv").exists());
}

#[test]
fn gen_data_writes_a_verifiable_dump() {
    let dir = scratch("gen");
    run_experiment(tiny("gen_data", &dir)).unwrap();
    let file = std::fs::File::open(dir.join("dataset.tsv")).unwrap();
    let insts = icl_lens::taskgen::read_dump(std::io::BufReader::new(file)).unwrap();
    let tasks =
        icl_lens::taskgen::TaskSpec::list(&["next_letter", "prev_letter", "to_upper"]).unwrap();
    icl_lens::taskgen::verify_labels(&insts, &tasks).unwrap();
    assert_eq!(insts.len(), 18);
    assert!(insts.iter().all(|i| i.k() == 3));
}
