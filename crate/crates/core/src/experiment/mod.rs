//! Experiment protocols: training the toy editor, reconstruction and editing
//! evaluations, corrector ablations, the (M, alpha) sweep, proposition
//! verification and the overhead count. Every function here is deterministic
//! in its configuration; the `cmd_*` wrappers write their results under the
//! configured output directory.

mod config;
mod output;
mod verify;

use std::fs;
use std::path::Path;

use serde_json::json;

pub use config::ExperimentConfig;
pub use output::{sweep_svg, write_csv};
pub use verify::{run_verification, VerifyEntry, VerifyReport, VerifySettings};

use crate::error::{Error, Result};
use crate::metrics::{kernel_mmd, mean_capped, psnr, ssim, MetricReport};
use crate::rng::{derive, standard_normal, stream, Stream};
use crate::sampler::{sample, ConditionImage, CorrectorConfig, CorrectorKind, SampleStats, TrajectoryRecord};
use crate::synth::{build_dataset, export_dataset, EditSample, Split};
use crate::tensor::Tensor;
use crate::velocity::{
    load_checkpoint, save_checkpoint, train_flow_matching, PromptId, TrainReport, TrainingPair, VelocityField,
};

/// Which image a method's output is scored against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reference {
    Input,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Method {
    pub name: String,
    pub prompt: PromptId,
    pub corrector: CorrectorConfig,
}

impl Method {
    pub fn new(name: &str, prompt: PromptId, corrector: CorrectorConfig) -> Self {
        Self {
            name: name.into(),
            prompt,
            corrector,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub method: String,
    pub index: usize,
    pub sample_seed: u64,
    pub psnr_full: f64,
    pub ssim_full: f64,
    pub psnr_region: f64,
    pub ssim_region: f64,
}

impl SampleScore {
    pub const CSV_HEADER: &'static str = "method,index,sample_seed,psnr_full,ssim_full,psnr_region,ssim_region";

    pub fn csv_row(&self) -> String {
        use crate::metrics::fmt_metric as f;
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.index,
            self.sample_seed,
            f(self.psnr_full),
            f(self.ssim_full),
            f(self.psnr_region),
            f(self.ssim_region)
        )
    }
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub scores: Vec<SampleScore>,
    /// Sampler outputs clamped to [0, 1].
    pub outputs: Vec<Tensor>,
    pub trajectories: Vec<TrajectoryRecord>,
}

impl MethodResult {
    pub fn mean_psnr_full(&self) -> f64 {
        mean_capped(&self.scores.iter().map(|s| s.psnr_full).collect::<Vec<_>>())
    }

    pub fn mean_psnr_region(&self) -> f64 {
        mean_capped(&self.scores.iter().map(|s| s.psnr_region).collect::<Vec<_>>())
    }

    pub fn summary(&self, cfg: &ExperimentConfig, model: &str, references: &[Tensor]) -> Result<MetricReport> {
        let mean = |f: fn(&SampleScore) -> f64| mean_capped(&self.scores.iter().map(f).collect::<Vec<_>>());
        let mmd = if self.outputs.len() >= 2 {
            Some(kernel_mmd(&self.outputs, references)?)
        } else {
            None
        };
        Ok(MetricReport {
            method: self.method.name.clone(),
            model: model.into(),
            task: cfg.task.as_str().into(),
            m: if self.method.corrector.kind == CorrectorKind::None {
                0
            } else {
                self.method.corrector.m
            },
            alpha: if self.method.corrector.kind == CorrectorKind::None {
                0.0
            } else {
                self.method.corrector.alpha
            },
            psnr_full: mean(|s| s.psnr_full),
            ssim_full: mean(|s| s.ssim_full),
            psnr_region: mean(|s| s.psnr_region),
            ssim_region: mean(|s| s.ssim_region),
            mmd,
            n_samples: self.scores.len(),
            seed: cfg.seed,
        })
    }
}

/// Initial noise for eval sample `index`; shared by every method so that
/// comparisons are paired.
pub fn initial_noise(seed: u64, index: usize, shape: &[usize]) -> Tensor {
    let mut rng = stream(derive(seed, Stream::Noise, index as u64), Stream::Noise);
    standard_normal(&mut rng, shape)
}

pub fn dataset(cfg: &ExperimentConfig) -> Result<Vec<EditSample>> {
    build_dataset(cfg.dataset_size(), cfg.task, cfg.data_seed, cfg.size)
}

pub fn eval_split(samples: &[EditSample]) -> Vec<EditSample> {
    samples.iter().filter(|s| s.split == Split::Eval).cloned().collect()
}

/// Editing pairs under the task prompt plus reconstruction pairs of both
/// images under the empty prompt, from the train split.
pub fn training_pairs(samples: &[EditSample]) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for s in samples.iter().filter(|s| s.split == Split::Train) {
        pairs.push(TrainingPair {
            x_in: s.x_in.clone(),
            x_target: s.x_gt.clone(),
            prompt: s.prompt,
        });
        for img in [&s.x_in, &s.x_gt] {
            pairs.push(TrainingPair {
                x_in: img.clone(),
                x_target: img.clone(),
                prompt: PromptId::Empty,
            });
        }
    }
    pairs
}

pub fn train_model(cfg: &ExperimentConfig) -> Result<(VelocityField, TrainReport)> {
    cfg.validate()?;
    let pairs = training_pairs(&dataset(cfg)?);
    train_flow_matching(&pairs, &cfg.train)
}

/// Samples every eval image with `method` and scores it. The region metrics
/// use the sample's text region.
pub fn run_method(
    field: &VelocityField,
    eval: &[EditSample],
    method: &Method,
    cfg: &ExperimentConfig,
    reference: Reference,
) -> Result<MethodResult> {
    let grid = cfg.grid()?;
    let mut scores = Vec::with_capacity(eval.len());
    let mut outputs = Vec::with_capacity(eval.len());
    let mut trajectories = Vec::with_capacity(eval.len());
    for s in eval {
        let z0 = initial_noise(cfg.seed, s.index, s.x_in.shape());
        let x_in = ConditionImage::new(s.x_in.clone())?;
        let (out, record) = sample(field, &x_in, method.prompt, &grid, &method.corrector, &z0)?;
        let out = out.map(|v| v.clamp(0.0, 1.0));
        let target = match reference {
            Reference::Input => &s.x_in,
            Reference::GroundTruth => &s.x_gt,
        };
        scores.push(SampleScore {
            method: method.name.clone(),
            index: s.index,
            sample_seed: s.seed,
            psnr_full: psnr(&out, target, None)?,
            ssim_full: ssim(&out, target, None)?,
            psnr_region: psnr(&out, target, Some(&s.region))?,
            ssim_region: ssim(&out, target, Some(&s.region))?,
        });
        outputs.push(out);
        trajectories.push(record);
    }
    Ok(MethodResult {
        method: method.clone(),
        scores,
        outputs,
        trajectories,
    })
}

/// Empty-prompt reconstruction with and without the proposed corrector.
pub fn reconstruction_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    let corrected = CorrectorConfig {
        kind: CorrectorKind::EmptyPrompt,
        ..cfg.corrector.clone()
    };
    vec![
        Method::new("none", PromptId::Empty, CorrectorConfig::baseline()),
        Method::new("empty-prompt", PromptId::Empty, corrected),
    ]
}

/// Editing with the task prompt under every corrector and the noise-inversion
/// baseline.
pub fn edit_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    let prompt = cfg.task.prompt();
    let mut methods: Vec<Method> = CorrectorKind::ALL
        .iter()
        .map(|&kind| {
            let corrector = if kind == CorrectorKind::None {
                CorrectorConfig::baseline()
            } else {
                CorrectorConfig {
                    kind,
                    ..cfg.corrector.clone()
                }
            };
            Method::new(kind.as_str(), prompt, corrector)
        })
        .collect();
    methods.push(Method::new(
        "noise-inversion",
        prompt,
        CorrectorConfig {
            noise_inversion_i: cfg.noise_inversion_i,
            ..CorrectorConfig::baseline()
        },
    ));
    methods
}

/// Baseline followed by `M in {1,3,5,7,9}` at `alpha = 0.01` and
/// `alpha in {0.001, 0.1}` at `M = 3`.
pub fn sweep_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    let prompt = cfg.task.prompt();
    let mut points: Vec<(usize, f64)> = [1, 3, 5, 7, 9].iter().map(|&m| (m, 0.01)).collect();
    for alpha in [0.001, 0.01, 0.1] {
        if !points.contains(&(3, alpha)) {
            points.push((3, alpha));
        }
    }
    let mut methods = vec![Method::new("none", prompt, CorrectorConfig::baseline())];
    methods.extend(points.into_iter().map(|(m, alpha)| {
        Method::new(
            "empty-prompt",
            prompt,
            CorrectorConfig {
                kind: CorrectorKind::EmptyPrompt,
                m,
                alpha,
                ..cfg.corrector.clone()
            },
        )
    }));
    methods
}

pub fn evaluate(
    field: &VelocityField,
    cfg: &ExperimentConfig,
    methods: &[Method],
    reference: Reference,
) -> Result<Vec<MethodResult>> {
    cfg.validate()?;
    for m in methods {
        m.corrector.validate(&cfg.grid()?)?;
    }
    let eval = eval_split(&dataset(cfg)?);
    methods
        .iter()
        .map(|m| run_method(field, &eval, m, cfg, reference))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct OverheadReport {
    pub dim: usize,
    pub grid_n: usize,
    pub m: usize,
    pub baseline: SampleStats,
    pub corrected: SampleStats,
    pub extra_dual_slots: usize,
    pub extra_blends: usize,
    pub expected_blend_flops: usize,
    pub exact: bool,
}

/// Counts network slots and blend arithmetic for baseline and corrected
/// sampling of one eval image.
pub fn overhead(field: &VelocityField, cfg: &ExperimentConfig) -> Result<OverheadReport> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let eval = eval_split(&build_dataset(10, cfg.task, cfg.data_seed, cfg.size)?);
    let s = &eval[0];
    let z0 = initial_noise(cfg.seed, s.index, s.x_in.shape());
    let x_in = ConditionImage::new(s.x_in.clone())?;
    let corrected_cfg = CorrectorConfig {
        kind: CorrectorKind::EmptyPrompt,
        ..cfg.corrector.clone()
    };
    let prompt = cfg.task.prompt();
    let (_, base) = sample(field, &x_in, prompt, &grid, &CorrectorConfig::baseline(), &z0)?;
    let (_, corr) = sample(field, &x_in, prompt, &grid, &corrected_cfg, &z0)?;
    let (b, c) = (base.stats, corr.stats);
    let m = corrected_cfg.m;
    let expected_blend_flops = 3 * field.dim() * m;
    let extra_dual_slots = c.empty_slots - b.empty_slots;
    let extra_blends = c.blends - b.blends;
    let reevaluations = if corrected_cfg.reevaluate_v { m } else { 0 };
    Ok(OverheadReport {
        dim: field.dim(),
        grid_n: cfg.grid_n,
        m,
        baseline: b,
        corrected: c,
        extra_dual_slots,
        extra_blends,
        expected_blend_flops,
        exact: extra_dual_slots == m
            && c.dual_calls == m
            && extra_blends == m
            && c.blend_flops - b.blend_flops == expected_blend_flops
            && c.prompt_slots == b.prompt_slots + reevaluations
            && c.network_calls == b.network_calls + reevaluations,
    })
}

fn out_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out)?;
    Ok(&cfg.out)
}

pub fn load_model(cfg: &ExperimentConfig) -> Result<VelocityField> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --checkpoint".into()))?;
    load_checkpoint(path)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Trains a model; writes `model.ckpt` and `train_loss.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainReport> {
    let (field, report) = train_model(cfg)?;
    let dir = out_dir(cfg)?;
    save_checkpoint(&field, &dir.join("model.ckpt"))?;
    let rows: Vec<String> = report
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{i},{l}"))
        .collect();
    write_csv(&dir.join("train_loss.csv"), "step,loss", &rows)?;
    Ok(report)
}

fn write_results(
    dir: &Path,
    stem: &str,
    cfg: &ExperimentConfig,
    field: &VelocityField,
    results: &[MethodResult],
    reference: Reference,
) -> Result<Vec<MetricReport>> {
    let eval = eval_split(&dataset(cfg)?);
    let refs: Vec<Tensor> = eval
        .iter()
        .map(|s| match reference {
            Reference::Input => s.x_in.clone(),
            Reference::GroundTruth => s.x_gt.clone(),
        })
        .collect();
    let rows: Vec<String> = results
        .iter()
        .flat_map(|r| r.scores.iter().map(SampleScore::csv_row))
        .collect();
    write_csv(&dir.join(format!("{stem}_samples.csv")), SampleScore::CSV_HEADER, &rows)?;
    let summaries = results
        .iter()
        .map(|r| r.summary(cfg, field.kind(), &refs))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<String> = summaries.iter().map(MetricReport::csv_row).collect();
    write_csv(
        &dir.join(format!("{stem}_summary.csv")),
        MetricReport::CSV_HEADER,
        &rows,
    )?;
    Ok(summaries)
}

fn write_trajectories(dir: &Path, cfg: &ExperimentConfig, results: &[MethodResult]) -> Result<()> {
    let tdir = dir.join("trajectories");
    fs::create_dir_all(&tdir)?;
    for r in results {
        let doc: Vec<_> = r
            .trajectories
            .iter()
            .zip(&r.scores)
            .map(|(t, s)| json!({"index": s.index, "trajectory": t.to_json(cfg.record_states)}))
            .collect();
        write_json(&tdir.join(format!("{}.json", r.method.name)), &doc)?;
    }
    Ok(())
}

/// Empty-prompt reconstruction: `reconstruct_samples.csv` and
/// `reconstruct_summary.csv`.
pub fn cmd_reconstruct(cfg: &ExperimentConfig, field: &VelocityField) -> Result<Vec<MetricReport>> {
    let results = evaluate(field, cfg, &reconstruction_methods(cfg), Reference::Input)?;
    let dir = out_dir(cfg)?;
    write_results(dir, "reconstruct", cfg, field, &results, Reference::Input)
}

/// Editing comparison across correctors: `edit_eval_samples.csv`,
/// `edit_eval_summary.csv` and one trajectory file per method.
pub fn cmd_edit_eval(cfg: &ExperimentConfig, field: &VelocityField) -> Result<Vec<MetricReport>> {
    let results = evaluate(field, cfg, &edit_methods(cfg), Reference::GroundTruth)?;
    let dir = out_dir(cfg)?;
    write_trajectories(dir, cfg, &results)?;
    write_results(dir, "edit_eval", cfg, field, &results, Reference::GroundTruth)
}

/// (M, alpha) sweep: `sweep.csv` (baseline first) and `sweep.svg`.
pub fn cmd_sweep(cfg: &ExperimentConfig, field: &VelocityField) -> Result<Vec<MetricReport>> {
    let results = evaluate(field, cfg, &sweep_methods(cfg), Reference::GroundTruth)?;
    let dir = out_dir(cfg)?;
    let eval = eval_split(&dataset(cfg)?);
    let refs: Vec<Tensor> = eval.iter().map(|s| s.x_gt.clone()).collect();
    let summaries = results
        .iter()
        .map(|r| r.summary(cfg, field.kind(), &refs))
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<String> = summaries.iter().map(MetricReport::csv_row).collect();
    write_csv(&dir.join("sweep.csv"), MetricReport::CSV_HEADER, &rows)?;
    fs::write(dir.join("sweep.svg"), sweep_svg(&summaries))?;
    Ok(summaries)
}

/// Proposition, gradient-relation and decomposition checks: `verify.json`.
/// Returns the report; `passed` is false on any tolerance breach.
pub fn cmd_verify(cfg: &ExperimentConfig, field: Option<&VelocityField>) -> Result<VerifyReport> {
    let report = run_verification(field, &VerifySettings::from_config(cfg))?;
    write_json(&out_dir(cfg)?.join("verify.json"), &report)?;
    Ok(report)
}

/// Operation counts: `overhead.json`.
pub fn cmd_overhead(cfg: &ExperimentConfig, field: &VelocityField) -> Result<OverheadReport> {
    let report = overhead(field, cfg)?;
    write_json(&out_dir(cfg)?.join("overhead.json"), &report)?;
    Ok(report)
}

/// Dataset export: PGM images and `manifest.json` under `data/`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<usize> {
    let samples = dataset(cfg)?;
    export_dataset(&samples, cfg.task, cfg.data_seed, &out_dir(cfg)?.join("data"))?;
    Ok(samples.len())
}
