use std::path::{Path, PathBuf};

use svsa_harness::{read_summary, run_experiment_in, summary_path, ExperimentConfig, HarnessError, REGISTRY};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(configs().join(name)).unwrap()
}

#[test]
fn every_shipped_config_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = std::collections::BTreeSet::new();
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        let s = run_experiment_in(&cfg, tmp.path()).unwrap();
        assert!(s.pass, "{}: {:?}", path.display(), s.checks);
        assert_eq!(read_summary(&summary_path(&cfg, tmp.path())).unwrap(), s);
        seen.insert(cfg.id);
    }
    for e in REGISTRY {
        assert!(seen.contains(e.id), "no shipped config for {}", e.id);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for name in ["fixed-point.toml", "projective-demo.toml", "saa-demo.toml"] {
        let cfg = load(name);
        let sa = run_experiment_in(&cfg, a.path()).unwrap();
        let sb = run_experiment_in(&cfg, b.path()).unwrap();
        assert_eq!(sa.config_hash, sb.config_hash);
        assert_eq!(sa.metrics, sb.metrics);
        assert_eq!(sa.checks, sb.checks);
        for file in ["trace.csv", "plot.csv", "config.json"] {
            let fa = std::fs::read(cfg.output_dir(a.path()).join(file)).unwrap();
            let fb = std::fs::read(cfg.output_dir(b.path()).join(file)).unwrap();
            assert!(fa == fb, "{name}/{file} differs");
        }
    }
}

#[test]
fn different_seed_changes_hash_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("saa-demo.toml");
    let other = cfg.with_seed(99);
    assert_ne!(cfg.hash(), other.hash());
    run_experiment_in(&cfg, tmp.path()).unwrap();
    run_experiment_in(&other, tmp.path()).unwrap();
    let ta = std::fs::read(cfg.output_dir(tmp.path()).join("trace.csv")).unwrap();
    let tb = std::fs::read(other.output_dir(tmp.path()).join("trace.csv")).unwrap();
    assert_ne!(ta, tb);
}

#[test]
fn missing_output_directory_is_created() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("a").join("b").join("c");
    let cfg = load("lyapunov-build.toml");
    run_experiment_in(&cfg, &root).unwrap();
    assert!(root.join("lyapunov-build").join("seed-0").join("summary.json").is_file());
}

#[test]
fn numeric_columns_carry_seventeen_digits() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = load("noise-window.toml");
    run_experiment_in(&cfg, tmp.path()).unwrap();
    let text = std::fs::read_to_string(cfg.output_dir(tmp.path()).join("trace.csv")).unwrap();
    let row = text.lines().nth(2).unwrap();
    let t_n = row.split(',').nth(1).unwrap();
    let mantissa = t_n.split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{t_n}");
}

#[test]
fn json_export_round_trips_params() {
    let cfg = load("avi-ssp.toml");
    let json = cfg.to_json();
    assert_eq!(json["id"], "avi-ssp");
    assert_eq!(json["seed"], 7);
    assert_eq!(json["params"]["nu"]["weights"][3], 1.0);
    assert_eq!(json["params"]["mdp"], "../data/mdp_ssp4.json");
}

#[test]
fn errors_leave_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "id = \"avi-discounted\"\nseed = 1\n[params]\nmdp = \"missing.json\"\nepsilon = 0.1\nn_iter = 10\n",
        "id = \"avi-discounted\"\nseed = 1\n[params]\nepsilon = 0.1\nn_iter = 10\n",
        "id = \"epsilon-sweep\"\nseed = 1\n[params]\nmdp = \"x.json\"\nepsilons = [0.1, 0.5]\nn_iter = 10\n",
        "id = \"unregistered\"\nseed = 1\n",
    ];
    for text in cases {
        let cfg = ExperimentConfig::from_toml_str(text, configs()).unwrap();
        let err = run_experiment_in(&cfg, tmp.path()).unwrap_err();
        assert!(err.is_config_error(), "{err}");
    }
    // a numerically invalid run is a runtime error, still with nothing written
    let cfg = ExperimentConfig::from_toml_str(
        "id = \"saa-demo\"\nseed = 1\n[params]\nx0 = [0.0]\nn_iter = 10\n\
         schedule = { kind = \"polynomial\", a0 = 1.0, q = 0.3 }\n[params.field]\na = [[-1.0]]\n",
        configs(),
    )
    .unwrap();
    let err = run_experiment_in(&cfg, tmp.path()).unwrap_err();
    assert!(matches!(err, HarnessError::Core(_)), "{err}");
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 0);
}
