//! Experiment orchestration behind the `datf` command line: training runs,
//! evaluation, ablation sweeps, the gradient suite, parameter inspection,
//! attention export and timing.

mod config;
mod gradsuite;
mod report;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{ExperimentConfig, ModelSection, OptimizerSection, Splits, TaskSpec};
pub use gradsuite::{
    run_suite, suite_cases, SuiteCase, SuiteLine, SuiteReport, GRADCHECK_TOLERANCE,
};
pub use report::{run_id, EpochRecord, LayerHeads, RunReport};

use crate::attention::AdjustmentStrategy;
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::distance::MappingKind;
use crate::error::{argument, Error, Result};
use crate::model::{
    attention_weights, evaluate, mean_row_entropy, model_forward, train_epoch, AdamState,
    EvalMetrics, ModelConfig, ModelParams,
};

/// Environment variable bounding worker threads.
pub const THREADS_ENV: &str = "DATF_THREADS";

/// Sizes the global worker pool from `DATF_THREADS`, if set. Returns the
/// thread count in effect.
pub fn configure_threads() -> Result<usize> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().map_err(|_| {
            Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {raw:?}"
            ))
        })?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        // A pool may already exist (tests, repeated calls); keep it.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Everything a finished training run produced.
pub struct RunOutcome {
    pub report: RunReport,
    pub model: ModelConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub splits: Splits,
}

/// Trains according to `cfg` without touching the file system.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let splits = cfg.load_data()?;
    let model = cfg.model_config(splits.train.vocab, splits.train.classes, cfg.max_len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut params = ModelParams::init(&model, &mut rng)?;
    let mut adam = AdamState::new(&params, cfg.optimizer.lr);
    let per_epoch_eval = cfg.eval_every_epoch || cfg.stop_at_test_accuracy.is_some();

    let mut epochs = Vec::new();
    let mut seconds = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let m = train_epoch(
            &mut params,
            &model,
            &splits.train.examples,
            &mut adam,
            cfg.batch_size,
            epoch,
            &mut rng,
        )?;
        let (dev, test) = if per_epoch_eval {
            let dev = match &splits.dev {
                Some(d) => Some(evaluate(&params, &model, &d.examples)?),
                None => None,
            };
            (dev, Some(evaluate(&params, &model, &splits.test.examples)?))
        } else {
            (None, None)
        };
        seconds.push(start.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4}{}",
            m.loss,
            m.accuracy,
            test.map(|t| format!(" test acc {:.4}", t.accuracy))
                .unwrap_or_default()
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss: m.loss,
            train_accuracy: m.accuracy,
            dev,
            test,
        });
        if let (Some(target), Some(t)) = (cfg.stop_at_test_accuracy, test) {
            if t.accuracy >= target {
                stopped_early = epoch + 1 < cfg.epochs;
                break;
            }
        }
    }

    let last = epochs.last().expect("epochs > 0");
    let final_test = match last.test {
        Some(t) => t,
        None => evaluate(&params, &model, &splits.test.examples)?,
    };
    let final_dev = match (&splits.dev, last.dev) {
        (_, Some(d)) => Some(d),
        (Some(d), None) => Some(evaluate(&params, &model, &d.examples)?),
        (None, None) => None,
    };
    let report = RunReport {
        run_id: run_id(cfg)?,
        seed: cfg.seed,
        config: cfg.clone(),
        model: model.clone(),
        epochs_completed: epochs.len(),
        stopped_early,
        epochs,
        final_dev,
        final_test,
        heads: LayerHeads::from_params(&params),
        epoch_seconds: seconds,
    };
    Ok(RunOutcome {
        report,
        model,
        params,
        adam,
        splits,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Writes `report.json`, `metrics.csv` and `checkpoint.datf` into `out`.
pub fn write_run(outcome: &RunOutcome, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write(&out.join("report.json"), outcome.report.to_json()?)?;
    write(&out.join("metrics.csv"), outcome.report.metrics_csv())?;
    save_checkpoint(
        &out.join("checkpoint.datf"),
        &outcome.model,
        &outcome.params,
        Some(&outcome.adam),
    )
}

/// `--seed` and `--out` overrides applied to a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = overrides.seed {
        cfg.seed = s;
    }
    if let Some(o) = &overrides.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

pub fn cmd_train(config: &Path, overrides: &Overrides) -> Result<RunReport> {
    let cfg = load_config(config, overrides)?;
    let outcome = run_experiment(&cfg)?;
    write_run(&outcome, &cfg.out_dir)?;
    Ok(outcome.report)
}

/// Evaluates a checkpoint on the dev (if any) and test split of a config.
pub fn cmd_eval(config: &Path, checkpoint: &Path, overrides: &Overrides) -> Result<EvalSummary> {
    let cfg = load_config(config, overrides)?;
    let Checkpoint {
        config: model,
        params,
        ..
    } = load_checkpoint(checkpoint)?;
    let splits = cfg.load_data()?;
    let expected = cfg.model_config(splits.train.vocab, splits.train.classes, cfg.max_len())?;
    params.check_shapes(&expected)?;
    let dev = match &splits.dev {
        Some(d) => Some(evaluate(&params, &model, &d.examples)?),
        None => None,
    };
    let test = evaluate(&params, &model, &splits.test.examples)?;
    Ok(EvalSummary { dev, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub dev: Option<EvalMetrics>,
    pub test: EvalMetrics,
}

/// The variable swept by `cmd_ablate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Mapping,
    Adjustment,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mapping" => Ok(AblationAxis::Mapping),
            "adjustment" => Ok(AblationAxis::Adjustment),
            other => Err(argument(format!(
                "unknown axis {other:?}; expected mapping or adjustment"
            ))),
        }
    }
}

/// One variant of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub mapping: MappingKind,
    pub strategy: AdjustmentStrategy,
}

pub fn ablation_variants(axis: AblationAxis, base: &ModelSection) -> Result<Vec<Variant>> {
    match axis {
        AblationAxis::Mapping => {
            if base.strategy == AdjustmentStrategy::Vanilla {
                return Err(Error::Config(
                    "a mapping sweep needs a distance-aware strategy".into(),
                ));
            }
            let kinds = [
                MappingKind::LearnableSigmoid,
                MappingKind::Clip { threshold: 10.0 },
                MappingKind::Linear {
                    slope: 1.0,
                    intercept: 0.0,
                },
                MappingKind::Exponent,
                MappingKind::StandardSigmoid,
            ];
            Ok(kinds
                .into_iter()
                .map(|mapping| Variant {
                    name: mapping.name().to_string(),
                    mapping,
                    strategy: base.strategy,
                })
                .collect())
        }
        AblationAxis::Adjustment => Ok(AdjustmentStrategy::ALL
            .into_iter()
            .map(|strategy| Variant {
                name: strategy.name().to_string(),
                mapping: base.mapping,
                strategy,
            })
            .collect()),
    }
}

/// Outcome of one (variant, seed) cell.
#[derive(Clone, Debug, Serialize)]
pub struct AblationCell {
    pub variant: String,
    pub seed: u64,
    pub test: Option<EvalMetrics>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f_mean: f64,
    pub macro_f_std: f64,
}

/// Mean and sample standard deviation; the deviation of fewer than two
/// values is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(variants: &[Variant], cells: &[AblationCell]) -> Vec<AblationRow> {
    variants
        .iter()
        .map(|v| {
            let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.variant == v.name).collect();
            let ok: Vec<EvalMetrics> = mine.iter().filter_map(|c| c.test).collect();
            let (accuracy_mean, accuracy_std) =
                mean_std(&ok.iter().map(|m| m.accuracy).collect::<Vec<_>>());
            let (macro_f_mean, macro_f_std) =
                mean_std(&ok.iter().map(|m| m.macro_f).collect::<Vec<_>>());
            AblationRow {
                variant: v.name.clone(),
                runs: mine.len(),
                failed: mine.len() - ok.len(),
                accuracy_mean,
                accuracy_std,
                macro_f_mean,
                macro_f_std,
            }
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out =
        String::from("variant,runs,failed,accuracy_mean,accuracy_std,macro_f_mean,macro_f_std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.variant,
            r.runs,
            r.failed,
            r.accuracy_mean,
            r.accuracy_std,
            r.macro_f_mean,
            r.macro_f_std
        );
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub axis: String,
    pub seeds: usize,
    pub rows: Vec<AblationRow>,
    pub cells: Vec<AblationCell>,
}

/// Runs every variant of `axis` for seeds `seed..seed + seeds`. Each cell
/// writes its run into `out/<variant>/seed<k>`; failures are recorded in
/// the table rather than aborting the sweep.
pub fn run_ablation(
    base: &ExperimentConfig,
    axis: AblationAxis,
    seeds: usize,
    out: &Path,
) -> Result<AblationReport> {
    base.validate()?;
    if seeds == 0 {
        return Err(argument("seeds must be positive"));
    }
    let variants = ablation_variants(axis, &base.model)?;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|v| (0..seeds as u64).map(move |s| (v.clone(), base.seed + s)))
        .collect();
    let run_cell = |(variant, seed): &(Variant, u64)| {
        let mut cfg = base.clone();
        cfg.seed = *seed;
        cfg.model.mapping = variant.mapping;
        cfg.model.strategy = variant.strategy;
        cfg.out_dir = out.join(&variant.name).join(format!("seed{seed}"));
        let result = run_experiment(&cfg).and_then(|o| {
            write_run(&o, &cfg.out_dir)?;
            Ok(o.report.final_test)
        });
        if let Err(e) = &result {
            log::warn!("ablation cell {} seed {seed} failed: {e}", variant.name);
        }
        AblationCell {
            variant: variant.name.clone(),
            seed: *seed,
            test: result.as_ref().ok().copied(),
            error: result.err().map(|e| e.to_string()),
        }
    };
    let cells: Vec<AblationCell> = if rayon::current_num_threads() > 1 {
        jobs.par_iter().map(run_cell).collect()
    } else {
        jobs.iter().map(run_cell).collect()
    };
    let rows = aggregate(&variants, &cells);
    let axis_name = match axis {
        AblationAxis::Mapping => "mapping",
        AblationAxis::Adjustment => "adjustment",
    };
    fs::create_dir_all(out)?;
    write(
        &out.join(format!("ablation_{axis_name}.csv")),
        ablation_csv(&rows),
    )?;
    let report = AblationReport {
        axis: axis_name.to_string(),
        seeds,
        rows,
        cells,
    };
    write(
        &out.join(format!("ablation_{axis_name}.json")),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

pub fn cmd_ablate(
    config: &Path,
    axis: AblationAxis,
    seeds: usize,
    overrides: &Overrides,
) -> Result<AblationReport> {
    let cfg = load_config(config, overrides)?;
    let out = cfg.out_dir.clone();
    run_ablation(&cfg, axis, seeds, &out)
}

pub fn cmd_gradcheck() -> Result<SuiteReport> {
    run_suite(&suite_cases(), GRADCHECK_TOLERANCE)
}

#[derive(Clone, Debug, Serialize)]
pub struct HeadDump {
    pub head: usize,
    pub w: f64,
    pub v: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerDump {
    pub layer: usize,
    /// Heads sorted by ascending `w`.
    pub heads: Vec<HeadDump>,
    pub positive_w: usize,
    pub negative_w: usize,
}

pub fn inspect_params(params: &ModelParams) -> Vec<LayerDump> {
    (0..params.blocks.len())
        .map(|layer| {
            let mut heads: Vec<HeadDump> = params
                .distance_params(layer)
                .iter()
                .enumerate()
                .map(|(head, p)| HeadDump {
                    head,
                    w: p.w,
                    v: p.v,
                })
                .collect();
            heads.sort_by(|a, b| a.w.total_cmp(&b.w));
            LayerDump {
                layer,
                positive_w: heads.iter().filter(|h| h.w > 0.0).count(),
                negative_w: heads.iter().filter(|h| h.w < 0.0).count(),
                heads,
            }
        })
        .collect()
}

/// Writes `inspect.json` and `inspect.csv` of the distance parameters.
pub fn cmd_inspect(checkpoint: &Path, out: &Path) -> Result<Vec<LayerDump>> {
    let ck = load_checkpoint(checkpoint)?;
    let dump = inspect_params(&ck.params);
    write(
        &out.join("inspect.json"),
        serde_json::to_string_pretty(&dump)?,
    )?;
    let mut csv = String::from("layer,head,w,v\n");
    for layer in &dump {
        for h in &layer.heads {
            let _ = writeln!(csv, "{},{},{},{}", layer.layer, h.head, h.w, h.v);
        }
    }
    write(&out.join("inspect.csv"), csv)?;
    Ok(dump)
}

#[derive(Clone, Debug, Serialize)]
pub struct AttentionSummary {
    pub tokens: Vec<usize>,
    pub layer: usize,
    pub head_entropy: Vec<f64>,
    pub mean_entropy: f64,
}

/// Writes `heatmap_head{i}.csv` (post-softmax weights of head `i`) and
/// `attention_summary.json` with the mean row entropy per head.
pub fn export_attention(
    params: &ModelParams,
    model: &ModelConfig,
    tokens: &[usize],
    layer: usize,
    out: &Path,
) -> Result<AttentionSummary> {
    let maps = attention_weights(params, model, tokens, layer)?;
    fs::create_dir_all(out)?;
    let mut head_entropy = Vec::with_capacity(maps.len());
    for (i, m) in maps.iter().enumerate() {
        let mut csv = String::new();
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write(&out.join(format!("heatmap_head{i}.csv")), csv)?;
        head_entropy.push(mean_row_entropy(m));
    }
    let mean_entropy = head_entropy.iter().sum::<f64>() / head_entropy.len() as f64;
    let summary = AttentionSummary {
        tokens: tokens.to_vec(),
        layer,
        head_entropy,
        mean_entropy,
    };
    write(
        &out.join("attention_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

pub fn cmd_export_attention(
    checkpoint: &Path,
    tokens: &[usize],
    layer: usize,
    out: &Path,
) -> Result<AttentionSummary> {
    let ck = load_checkpoint(checkpoint)?;
    export_attention(&ck.params, &ck.config, tokens, layer, out)
}

/// Parses a comma- or space-separated list of token ids.
pub fn parse_tokens(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| argument(format!("bad token id {s:?}")))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub vanilla_ms: f64,
    pub da_ms: f64,
    pub overhead_ratio: f64,
}

pub const BENCH_REPEATS: usize = 7;

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

/// Median times of vanilla and DA forward passes; the two are interleaved
/// so machine load drifts affect both alike.
fn time_pair(
    params: &ModelParams,
    vanilla: &ModelConfig,
    da: &ModelConfig,
    tokens: &[usize],
) -> Result<(f64, f64)> {
    model_forward(params, vanilla, tokens)?;
    model_forward(params, da, tokens)?;
    let mut times = (
        Vec::with_capacity(BENCH_REPEATS),
        Vec::with_capacity(BENCH_REPEATS),
    );
    for _ in 0..BENCH_REPEATS {
        for (cfg, out) in [(vanilla, &mut times.0), (da, &mut times.1)] {
            let start = Instant::now();
            std::hint::black_box(model_forward(params, cfg, std::hint::black_box(tokens))?);
            out.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok((median(times.0), median(times.1)))
}

/// Median-of-7 wall time of one full forward pass (embedding to logits)
/// with default dimensions, vanilla against early-multiply DA.
pub fn run_bench(n_values: &[usize]) -> Result<Vec<BenchRow>> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(argument("bench needs positive sequence lengths"));
    }
    let max_n = *n_values.iter().max().expect("non-empty");
    let mut rows = Vec::new();
    for &n in n_values {
        let mut vanilla = ModelConfig::new(1000, 2, max_n);
        vanilla.strategy = AdjustmentStrategy::Vanilla;
        let mut da = vanilla.clone();
        da.strategy = AdjustmentStrategy::EarlyMultiply;
        // Same weights for both; vanilla ignores the distance parameters.
        let params = ModelParams::init(&da, &mut ChaCha8Rng::seed_from_u64(n as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tokens: Vec<usize> = (0..n)
            .map(|_| rand::Rng::gen_range(&mut rng, 2..1000))
            .collect();
        let (vanilla_ms, da_ms) = time_pair(&params, &vanilla, &da, &tokens)?;
        rows.push(BenchRow {
            n,
            vanilla_ms,
            da_ms,
            overhead_ratio: da_ms / vanilla_ms,
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,vanilla_ms,da_ms,overhead_ratio\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4}",
            r.n, r.vanilla_ms, r.da_ms, r.overhead_ratio
        );
    }
    out
}

pub fn cmd_bench(n_values: &[usize], out: &Path) -> Result<Vec<BenchRow>> {
    let rows = run_bench(n_values)?;
    write(&out.join("bench.csv"), bench_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(strategy: AdjustmentStrategy) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_json(
            r#"{
                "task": {"kind": "local", "seq_len": 6, "vocab": 10, "train": 40, "dev": 10, "test": 20},
                "model": {"d_model": 8, "heads": 2, "head_dim": 4, "d_ff": 8},
                "epochs": 2,
                "batch_size": 8,
                "seed": 3
            }"#,
        )
        .unwrap();
        cfg.model.strategy = strategy;
        cfg
    }

    #[test]
    fn report_shapes() {
        let o = run_experiment(&tiny(AdjustmentStrategy::EarlyMultiply)).unwrap();
        assert_eq!(o.report.epochs.len(), 2);
        assert_eq!(o.report.epoch_seconds.len(), 2);
        assert_eq!(o.report.heads[0].w.len(), 2);
        assert!(o.report.final_dev.is_some());
        let csv = o.report.metrics_csv();
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn same_seed_same_canonical_report() {
        let cfg = tiny(AdjustmentStrategy::LateMultiply);
        let a = run_experiment(&cfg)
            .unwrap()
            .report
            .canonical_json()
            .unwrap();
        let b = run_experiment(&cfg)
            .unwrap()
            .report
            .canonical_json()
            .unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 4;
        let c = run_experiment(&other).unwrap().report;
        assert_ne!(c.run_id, run_experiment(&cfg).unwrap().report.run_id);
    }

    #[test]
    fn lr_zero_keeps_initial_accuracy() {
        let mut cfg = tiny(AdjustmentStrategy::EarlyMultiply);
        cfg.optimizer.lr = 0.0;
        cfg.eval_every_epoch = true;
        let o = run_experiment(&cfg).unwrap();
        let initial = {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
            let p = ModelParams::init(&o.model, &mut rng).unwrap();
            evaluate(&p, &o.model, &o.splits.test.examples).unwrap()
        };
        assert_eq!(o.report.final_test, initial);
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ablation_shapes_and_failed_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(AdjustmentStrategy::EarlyMultiply);
        cfg.epochs = 1;
        let report = run_ablation(&cfg, AblationAxis::Adjustment, 1, dir.path()).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert!(report
            .rows
            .iter()
            .all(|r| r.runs == 1 && r.failed == 0 && r.accuracy_std == 0.0));
        let csv = fs::read_to_string(dir.path().join("ablation_adjustment.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);

        let report = run_ablation(&cfg, AblationAxis::Mapping, 2, dir.path()).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert_eq!(report.cells.len(), 10);

        let variants = ablation_variants(AblationAxis::Mapping, &cfg.model).unwrap();
        let cells = vec![
            AblationCell {
                variant: variants[0].name.clone(),
                seed: 0,
                test: None,
                error: Some("diverged".into()),
            },
            AblationCell {
                variant: variants[0].name.clone(),
                seed: 1,
                test: Some(EvalMetrics {
                    accuracy: 0.5,
                    macro_f: 0.4,
                }),
                error: None,
            },
        ];
        let rows = aggregate(&variants, &cells);
        assert_eq!((rows[0].runs, rows[0].failed), (2, 1));
        assert_eq!(rows[1].runs, 0);
    }

    #[test]
    fn inspect_and_export() {
        let dir = tempfile::tempdir().unwrap();
        let o = run_experiment(&tiny(AdjustmentStrategy::EarlyMultiply)).unwrap();
        write_run(&o, dir.path()).unwrap();
        let ck_path = dir.path().join("checkpoint.datf");
        let dump = cmd_inspect(&ck_path, dir.path()).unwrap();
        assert_eq!(dump[0].heads.len(), 2);
        assert!(dump[0].heads[0].w <= dump[0].heads[1].w);

        let fresh = ModelParams::init(&o.model, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let dump = inspect_params(&fresh);
        assert_eq!((dump[0].positive_w, dump[0].negative_w), (1, 1));

        let summary = cmd_export_attention(&ck_path, &[2, 3, 4, 5], 0, dir.path()).unwrap();
        assert_eq!(summary.head_entropy.len(), 2);
        for h in 0..2 {
            let csv = fs::read_to_string(dir.path().join(format!("heatmap_head{h}.csv"))).unwrap();
            for line in csv.lines() {
                let s: f64 = line.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-9);
            }
        }
        assert!(cmd_export_attention(&ck_path, &[2, 99], 0, dir.path()).is_err());
    }

    #[test]
    fn bench_columns() {
        let rows = run_bench(&[4, 16]).unwrap();
        for r in &rows {
            assert_eq!(r.overhead_ratio, r.da_ms / r.vanilla_ms);
        }
        assert!(bench_csv(&rows).starts_with("n,vanilla_ms,da_ms,overhead_ratio\n"));
    }

    #[test]
    fn token_parsing() {
        assert_eq!(parse_tokens("2, 3 4").unwrap(), vec![2, 3, 4]);
        assert!(parse_tokens("2,x").is_err());
    }
}
