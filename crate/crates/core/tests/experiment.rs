use std::fs;

use ssdn_core::experiment::{
    parse_config, read_metrics, run, write_metrics, DatasetSource, ExperimentConfig, ExperimentKind, Manifest,
    MetricsRow, RunOptions, METRICS_HEADER,
};
use ssdn_core::nn::ArchConfig;
use ssdn_core::regimes::RegimeKind;
use ssdn_core::shifts::{CorruptionKind, CorruptionSpec};
use ssdn_core::Error;

const SMALL: &str = r#"
regime = "standard"
seeds = [3, 4]

[arch]
c0_channels = 4
group_widths = [4, 4, 4, 4]
norm_groups = 1

[train]
epochs = 1
max_steps = 4
batch_size = 8

[dataset]
source = "synthetic"
train_per_class = 8
test_per_class = 5
"#;

fn small() -> ExperimentConfig {
    parse_config(SMALL).unwrap()
}

fn quiet() -> RunOptions {
    RunOptions { quiet: true, ..RunOptions::default() }
}

fn config_err(text: &str) -> String {
    match parse_config(text) {
        Err(Error::Config(msg)) => msg,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn unknown_keys_are_named() {
    let msg = config_err(&format!("{SMALL}\nlearning_rate = 0.1\n"));
    assert!(msg.contains("learning_rate"), "{msg}");
    let msg = config_err(&SMALL.replace("epochs = 1", "epochs = 1\nepochz = 2"));
    assert!(msg.contains("epochz"), "{msg}");
    let msg = config_err(&SMALL.replace("source = \"synthetic\"", "source = \"synthetic\"\nsize = 3"));
    assert!(msg.contains("size"), "{msg}");
}

#[test]
fn dataset_is_required_and_paths_must_exist() {
    let msg = config_err("regime = \"standard\"\n");
    assert!(msg.contains("dataset"), "{msg}");
    let msg = config_err("[dataset]\nsource = \"cifar10\"\ntrain = \"/no/such/train.bin\"\ntest = \"/no/such/test.bin\"\n");
    assert!(msg.contains("dataset.train") && msg.contains("/no/such/train.bin"), "{msg}");
}

#[test]
fn semantic_checks() {
    assert!(config_err(&format!("{SMALL}\n[bridge]\ng1 = true\n")).contains("bridge"));
    assert!(config_err(&SMALL.replace("seeds = [3, 4]", "seeds = []")).contains("seeds"));
    let bad_severity = format!("{SMALL}\n[[corruptions]]\nkind = \"contrast\"\nseverity = 9\n");
    assert!(config_err(&bad_severity).contains("corruptions[0]"));
    let mut cfg = small();
    cfg.kind = ExperimentKind::Alphas;
    assert!(cfg.validate().is_err(), "alphas needs a bridged regime");
    cfg.kind = ExperimentKind::Sensitivity;
    assert!(cfg.validate().is_err(), "sensitivity needs corruptions");
    cfg.kind = ExperimentKind::Ablation;
    cfg.validate().unwrap();
}

#[test]
fn serialize_parse_round_trip() {
    let mut cfg = ExperimentConfig::new(DatasetSource::synthetic(9));
    cfg.kind = ExperimentKind::Sensitivity;
    cfg.regime = RegimeKind::SsdnPlusTtt;
    cfg.seeds = vec![1, 2, 3];
    cfg.arch = ArchConfig::resnet26(4);
    cfg.blocks = vec!["g2".into()];
    cfg.corruptions = vec![CorruptionSpec::new(CorruptionKind::Pixelate, 2, 5).unwrap()];
    let text = cfg.to_toml().unwrap();
    assert_eq!(parse_config(&text).unwrap(), cfg);
    assert_eq!(parse_config(&small().to_toml().unwrap()).unwrap(), small());
}

#[test]
fn metrics_csv_header_and_round_trip() {
    let rows = vec![
        MetricsRow {
            regime: "standard".into(),
            shift: "clean".into(),
            severity: 0,
            seed: 1,
            main_error_pct: 12.5,
            ss_error_pct: 0.1 + 0.2,
            wall_ms: 0,
        },
        MetricsRow {
            regime: "ssdn_one_pass:010".into(),
            shift: "gaussian_noise".into(),
            severity: 5,
            seed: u64::MAX,
            main_error_pct: 100.0,
            ss_error_pct: 1.0 / 3.0,
            wall_ms: 42,
        },
    ];
    let mut buf = Vec::new();
    write_metrics(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "regime,shift,severity,seed,main_error_pct,ss_error_pct,wall_ms");
    assert_eq!(METRICS_HEADER.join(","), text.lines().next().unwrap());
    assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows);
    let mut empty = Vec::new();
    write_metrics(&mut empty, &[]).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap().trim(), METRICS_HEADER.join(","));
}

#[test]
fn eval_standard_gives_one_row_per_seed_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.kind = ExperimentKind::Eval;
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let sa = run(cfg.clone(), &RunOptions { out_dir: Some(a.clone()), ..quiet() }).unwrap();
    run(cfg.clone(), &RunOptions { out_dir: Some(b.clone()), ..quiet() }).unwrap();
    assert_eq!(sa.rows.len(), 2);
    assert!(sa.rows.iter().all(|r| r.regime == "standard" && r.shift == "clean" && r.severity == 0));
    assert_eq!(sa.rows.iter().map(|r| r.seed).collect::<Vec<_>>(), [3, 4]);
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(read_metrics(ma.as_slice()).unwrap(), sa.rows);
    let manifest: Manifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.seeds, [3, 4]);
    assert_eq!(manifest.seed_override, None);
    assert_eq!(manifest.kind, ExperimentKind::Eval);
    assert_eq!(manifest.config.out_dir.as_deref(), Some(a.as_path()));
}

#[test]
fn existing_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let err = run(small(), &RunOptions { out_dir: Some(dir.path().to_path_buf()), ..quiet() }).unwrap_err();
    assert!(err.to_string().contains("already exists"), "{err}");
    assert_eq!(fs::read_to_string(dir.path().join("keep.txt")).unwrap(), "x");
    assert!(!dir.path().join("metrics.csv").exists());
    assert!(run(small(), &quiet()).is_err(), "no output directory at all");
}

#[test]
fn seed_override_replaces_the_list() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let s = run(small(), &RunOptions { out_dir: Some(out), seed: Some(7), ..quiet() }).unwrap();
    assert_eq!(s.manifest.seeds, [7]);
    assert_eq!(s.manifest.seed_override, Some(7));
    assert!(s.rows.iter().all(|r| r.seed == 7));
}

#[test]
fn ablation_enumerates_seven_flag_rows_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.corruptions = vec![CorruptionSpec::new(CorruptionKind::Brightness, 1, 0).unwrap()];
    let opts = RunOptions { kind: Some(ExperimentKind::Ablation), out_dir: Some(dir.path().join("abl")), seed: Some(0), quiet: true };
    let s = run(cfg, &opts).unwrap();
    let mut codes: Vec<String> = Vec::new();
    for r in &s.rows {
        let code = r.regime.strip_prefix("ssdn_one_pass:").unwrap().to_string();
        if codes.last() != Some(&code) {
            codes.push(code);
        }
    }
    assert_eq!(codes, ["001", "010", "011", "100", "101", "110", "111"]);
    assert_eq!(s.rows.len(), 7 * 2);
}

#[test]
fn train_then_eval_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.regime = RegimeKind::JointTraining;
    cfg.kind = ExperimentKind::Train;
    let trained = run(cfg.clone(), &RunOptions { out_dir: Some(dir.path().join("t")), ..quiet() }).unwrap();
    assert!(dir.path().join("t/model-seed3.ckpt").exists());
    assert!(dir.path().join("t/losses.csv").exists());
    cfg.kind = ExperimentKind::Eval;
    cfg.checkpoint_dir = Some(dir.path().join("t"));
    let evaluated = run(cfg, &RunOptions { out_dir: Some(dir.path().join("e")), ..quiet() }).unwrap();
    assert_eq!(trained.rows, evaluated.rows);
    assert!(!dir.path().join("e/losses.csv").exists());
}

#[test]
fn sensitivity_and_alpha_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.regime = RegimeKind::SsdnOnePass;
    cfg.corruptions = vec![CorruptionSpec::new(CorruptionKind::GaussianNoise, 3, 0).unwrap()];
    cfg.sensitivity.tune_steps = 2;
    cfg.sensitivity.probe_size = 16;
    cfg.blocks = vec!["c0".into(), "g4".into()];
    let opts = |name: &str, kind| RunOptions { kind: Some(kind), out_dir: Some(dir.path().join(name)), ..quiet() };
    run(cfg.clone(), &opts("s", ExperimentKind::Sensitivity)).unwrap();
    let text = fs::read_to_string(dir.path().join("s/sensitivity.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "block,corruption,seed,score");
    // 2 seeds × 2 blocks, then one control pair per block.
    assert_eq!(lines.len(), 1 + 4 + 2);
    assert!(lines[1].starts_with("c0,gaussian_noise-3,3,"));
    assert!(lines.iter().filter(|l| l.contains(",control,")).count() == 2);

    run(cfg, &opts("a", ExperimentKind::Alphas)).unwrap();
    let alphas = fs::read_to_string(dir.path().join("a/alphas-seed4.csv")).unwrap();
    assert_eq!(alphas.lines().next().unwrap(), "sample,pc1,pc2,shift,silhouette");
    assert_eq!(alphas.lines().count(), 1 + 2 * 20);
    assert!(dir.path().join("a/alphas_summary.csv").exists());
}
