use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use super::metrics::{write_metrics, MetricsRow};
use crate::analysis::{
    alpha_projection, block_sensitivity, collect_alphas, control_from_models, SensitivityReport, SensitivityScore,
};
use crate::error::{Error, Result};
use crate::model::{build_model, BridgeConfig, Model};
use crate::regimes::{evaluate, joint_train, Metrics, RegimeKind};
use crate::shifts::{corrupt_dataset, ImageDataset};

type Net = Model<f32>;

/// Command-line overrides applied on top of a parsed config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub kind: Option<ExperimentKind>,
    pub out_dir: Option<PathBuf>,
    /// Replaces the seed list with this single seed.
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    pub seed_override: Option<u64>,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub manifest: Manifest,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    quiet: bool,
    outputs: Vec<String>,
}

impl Ctx<'_> {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn elapsed(&self, start: Instant) -> u64 {
        if self.cfg.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 }
    }
}

/// The clean test set followed by each configured corruption of it.
fn shifted_sets(cfg: &ExperimentConfig, test: &ImageDataset) -> Result<Vec<(String, u8, ImageDataset)>> {
    let mut sets = vec![("clean".to_string(), 0, test.clone())];
    for c in &cfg.corruptions {
        sets.push((c.kind.to_string(), c.severity, corrupt_dataset(test, c)?));
    }
    Ok(sets)
}

fn checkpoint_name(seed: u64) -> String {
    format!("model-seed{seed}.ckpt")
}

/// A model for `seed`: loaded from `checkpoint_dir` when set, else trained.
fn prepare(ctx: &Ctx, bridge: &BridgeConfig, train: &ImageDataset, seed: u64) -> Result<(Net, Option<Metrics>)> {
    if let Some(dir) = &ctx.cfg.checkpoint_dir {
        let path = dir.join(checkpoint_name(seed));
        ctx.log(format!("seed {seed}: loading {}", path.display()));
        let model = Net::load(&path)?;
        if model.bridge != *bridge || model.arch != ctx.cfg.arch {
            return Err(Error::Config(format!("checkpoint `{}` does not match arch/bridge", path.display())));
        }
        return Ok((model, None));
    }
    ctx.log(format!("seed {seed}: training {} [{}]", ctx.cfg.regime, bridge.flags_code()));
    let mut model = build_model::<f32>(&ctx.cfg.arch, bridge, seed)?;
    let m = joint_train(&mut model, train, &ctx.cfg.train_config(), seed)?;
    Ok((model, Some(m)))
}

fn eval_rows(
    ctx: &Ctx,
    model: &Net,
    regime: RegimeKind,
    label: &str,
    sets: &[(String, u8, ImageDataset)],
    seed: u64,
) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::with_capacity(sets.len());
    for (shift, severity, data) in sets {
        let start = Instant::now();
        let m = evaluate(model, data, regime, &ctx.cfg.eval())?;
        ctx.log(format!("seed {seed}: {label} on {shift}-{severity}: {:.2}% main error", m.main_error_pct));
        rows.push(MetricsRow {
            regime: label.to_string(),
            shift: shift.clone(),
            severity: *severity,
            seed,
            main_error_pct: m.main_error_pct,
            ss_error_pct: m.ss_error_pct,
            wall_ms: ctx.elapsed(start),
        });
    }
    Ok(rows)
}

/// Applies `opts`, validates, creates the output directory (refusing an
/// existing one) and runs the experiment.
pub fn run(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    if let Some(kind) = opts.kind {
        cfg.kind = kind;
    }
    if let Some(seed) = opts.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(dir) = &opts.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone().ok_or_else(|| Error::Config("out_dir: no output directory given".into()))?;
    if out.exists() {
        return Err(Error::Config(format!("output directory `{}` already exists", out.display())));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::create_dir(&out)?;

    let (train, test) = cfg.dataset.load()?;
    let mut ctx = Ctx { cfg: &cfg, out: &out, quiet: opts.quiet, outputs: vec![] };
    ctx.log(format!("{} run: {} train / {} test images, seeds {:?}", cfg.kind, train.len(), test.len(), cfg.seeds));
    let rows = match cfg.kind {
        ExperimentKind::Train | ExperimentKind::Eval => run_eval(&mut ctx, &train, &test)?,
        ExperimentKind::Ablation => run_ablation(&mut ctx, &train, &test)?,
        ExperimentKind::Sensitivity => run_sensitivity(&mut ctx, &train, &test)?,
        ExperimentKind::Alphas => run_alphas(&mut ctx, &train, &test)?,
    };
    write_metrics(ctx.create("metrics.csv")?, &rows)?;
    ctx.outputs.push("manifest.json".into());
    let manifest = Manifest {
        kind: cfg.kind,
        seeds: cfg.seeds.clone(),
        seed_override: opts.seed,
        versions: BTreeMap::from([
            ("ssdn-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("ssdn-engine".to_string(), ssdn_engine::VERSION.to_string()),
        ]),
        outputs: ctx.outputs.clone(),
        config: cfg.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(out.join("manifest.json"))?), &manifest)?;
    Ok(RunSummary { out_dir: out, rows, manifest })
}

fn run_eval(ctx: &mut Ctx, train: &ImageDataset, test: &ImageDataset) -> Result<Vec<MetricsRow>> {
    let cfg = ctx.cfg;
    let sets = shifted_sets(cfg, test)?;
    let mut rows = Vec::new();
    let mut losses = Vec::new();
    for &seed in &cfg.seeds {
        let (model, trained) = prepare(ctx, &cfg.bridge(), train, seed)?;
        if let Some(m) = trained {
            losses.push((seed, m));
        }
        if cfg.kind == ExperimentKind::Train {
            let name = checkpoint_name(seed);
            model.save(output_path(ctx, &name))?;
        }
        rows.extend(eval_rows(ctx, &model, cfg.regime, cfg.regime.as_str(), &sets, seed)?);
    }
    if !losses.is_empty() {
        let mut w = csv::Writer::from_writer(ctx.create("losses.csv")?);
        w.write_record(["seed", "step", "main_loss", "ss_loss"])?;
        for (seed, m) in &losses {
            for (step, l) in m.main_losses.iter().enumerate() {
                let ss = m.ss_losses.get(step).map_or(String::new(), |v| format!("{v:.6}"));
                w.write_record([seed.to_string(), step.to_string(), format!("{l:.6}"), ss])?;
            }
        }
        w.flush()?;
    }
    Ok(rows)
}

fn output_path(ctx: &mut Ctx, name: &str) -> PathBuf {
    ctx.outputs.push(name.to_string());
    ctx.out.join(name)
}

/// One bridged model per (C0, G1, G2) row and seed, evaluated in one pass
/// (or with TTT when the configured regime asks for it).
fn run_ablation(ctx: &mut Ctx, train: &ImageDataset, test: &ImageDataset) -> Result<Vec<MetricsRow>> {
    let cfg = ctx.cfg;
    let regime = if cfg.regime.is_bridged() { cfg.regime } else { RegimeKind::SsdnOnePass };
    let sets = shifted_sets(cfg, test)?;
    let mut rows = Vec::new();
    for row in BridgeConfig::ablation_rows() {
        let bridge = match cfg.bridge {
            Some(b) if b.is_enabled() => BridgeConfig { c0: row.c0, g1: row.g1, g2: row.g2, ..b },
            _ => row,
        };
        let label = format!("{}:{}", regime, bridge.flags_code());
        for &seed in &cfg.seeds {
            let (model, _) = prepare_fresh(ctx, &bridge, train, seed)?;
            rows.extend(eval_rows(ctx, &model, regime, &label, &sets, seed)?);
        }
    }
    Ok(rows)
}

fn prepare_fresh(ctx: &Ctx, bridge: &BridgeConfig, train: &ImageDataset, seed: u64) -> Result<(Net, Metrics)> {
    ctx.log(format!("seed {seed}: training bridges [{}]", bridge.flags_code()));
    let mut model = build_model::<f32>(&ctx.cfg.arch, bridge, seed)?;
    let m = joint_train(&mut model, train, &ctx.cfg.train_config(), seed)?;
    Ok((model, m))
}

fn run_sensitivity(ctx: &mut Ctx, train: &ImageDataset, test: &ImageDataset) -> Result<Vec<MetricsRow>> {
    let cfg = ctx.cfg;
    let sets = shifted_sets(cfg, test)?;
    let mut report = SensitivityReport { seeds: cfg.seeds.clone(), ..Default::default() };
    let mut models = Vec::new();
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let (model, _) = prepare(ctx, &cfg.bridge(), train, seed)?;
        rows.extend(eval_rows(ctx, &model, cfg.regime, cfg.regime.as_str(), &sets, seed)?);
        let blocks = if cfg.blocks.is_empty() { model.stages() } else { cfg.block_ids()? };
        for spec in &cfg.corruptions {
            let shifted = corrupt_dataset(train, spec)?;
            let probe = corrupt_dataset(test, spec)?;
            for &block in &blocks {
                let score = block_sensitivity(&model, &shifted, block, &probe, &cfg.sensitivity, seed)?;
                ctx.log(format!("seed {seed}: {block} under {}: CKA {score:.4}", spec.label()));
                report.scores.push(SensitivityScore { block: block.to_string(), corruption: spec.label(), seed, score });
            }
        }
        models.push(model);
    }
    if models.len() >= 2 {
        let blocks = if cfg.blocks.is_empty() { models[0].stages() } else { cfg.block_ids()? };
        report.control = control_from_models(&models, &blocks, test, &cfg.sensitivity)?;
    } else {
        ctx.log("single seed: no control band");
    }
    report.write_csv(ctx.create("sensitivity.csv")?)?;
    Ok(rows)
}

fn run_alphas(ctx: &mut Ctx, train: &ImageDataset, test: &ImageDataset) -> Result<Vec<MetricsRow>> {
    let cfg = ctx.cfg;
    let sets = shifted_sets(cfg, test)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &seed in &cfg.seeds {
        let (model, _) = prepare(ctx, &cfg.bridge(), train, seed)?;
        rows.extend(eval_rows(ctx, &model, cfg.regime, cfg.regime.as_str(), &sets, seed)?);
        let mut records = Vec::new();
        for (shift, severity, data) in &sets {
            let label = if *severity == 0 { shift.clone() } else { format!("{shift}-{severity}") };
            records.extend(collect_alphas(&model, data, &label)?);
        }
        let report = alpha_projection(&records)?;
        ctx.log(format!("seed {seed}: mean silhouette {:.4}", report.mean_silhouette));
        report.write_csv(ctx.create(&format!("alphas-seed{seed}.csv"))?)?;
        for (shift, s) in &report.per_shift {
            summary.push((seed, shift.clone(), *s));
        }
        summary.push((seed, "all".to_string(), report.mean_silhouette));
    }
    let mut w = csv::Writer::from_writer(ctx.create("alphas_summary.csv")?);
    w.write_record(["seed", "shift", "silhouette"])?;
    for (seed, shift, s) in summary {
        w.write_record([seed.to_string(), shift, format!("{s:.6}")])?;
    }
    w.flush()?;
    Ok(rows)
}
