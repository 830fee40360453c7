//! Dataset generation, rendering, cross-validation and comparison.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tfmd_core::cnn::{
    self, Architecture, Dataset, EpochRecord, Network, Tensor, TrainConfig, TrainingHistory,
};
use tfmd_core::eval::{self, ComparisonTable, EvalReport, FoldPlan};
use tfmd_core::imaging::{self, ImageConfig};
use tfmd_core::motorsim::{self, FaultClass, Load, MotorSpec, SeparabilityReport};
use tfmd_core::seed;
use tfmd_core::tfr::{self, Method, TfrConfig};

use crate::config::RunConfig;
use crate::container::{read_json, write_json};
use crate::formats::{self, CheckpointHeader};
use crate::{Error, Result};

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const IMAGE_MANIFEST: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
/// Images are rendered for the whole corpus; folds are drawn at CV time.
pub const SPLIT: &str = "all";

const INIT_TAG: u64 = 0x494E_4954;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEntry {
    /// Relative to the dataset directory.
    pub path: String,
    pub class: FaultClass,
    pub label: usize,
    pub load: Load,
    pub index: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub per_cell: usize,
    pub motor: MotorSpec,
    pub entries: Vec<SignalEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    /// Relative to the image directory.
    pub path: String,
    pub label: usize,
    pub class: FaultClass,
    pub load: Load,
    pub method: Method,
    /// Generator seed of the source segment.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifest {
    pub method: Method,
    pub tfr: TfrConfig,
    pub image: ImageConfig,
    pub dataset_seed: u64,
    pub entries: Vec<ImageEntry>,
}

fn rel(path: &str) -> PathBuf {
    path.split('/').collect()
}

fn check_unique<'a>(paths: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for p in paths {
        if !seen.insert(p) {
            return Err(Error::Config(format!(
                "two segments map to {p}; choose another seed"
            )));
        }
    }
    Ok(())
}

/// Synthesize `per_cell` segments for every (class, load) cell and write
/// them as raw signals plus `dataset.json`.
pub fn generate_dataset(
    spec: &MotorSpec,
    per_cell: usize,
    seed: u64,
    out: &Path,
) -> Result<DatasetManifest> {
    spec.validate()?;
    let plan = motorsim::dataset_plan(per_cell, seed)?;
    let entries: Vec<SignalEntry> = plan
        .iter()
        .map(|p| SignalEntry {
            path: format!(
                "signals/{}/{}/{}.f32",
                p.class.name(),
                p.load.percent(),
                p.seed
            ),
            class: p.class,
            label: p.class.index(),
            load: p.load,
            index: p.index,
            seed: p.seed,
        })
        .collect();
    check_unique(entries.iter().map(|e| e.path.as_str()))?;
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let ts = motorsim::synth_signal(e.class, e.load, spec, e.seed)?;
        formats::write_timeseries(
            &out.join(rel(&e.path)),
            &ts,
            Some(e.class),
            Some(e.load),
            Some(e.seed),
        )
    })?;
    let manifest = DatasetManifest {
        seed,
        per_cell,
        motor: spec.clone(),
        entries,
    };
    write_json(&out.join(DATASET_MANIFEST), &manifest)?;
    log::info!(
        "generated {} segments in {}",
        manifest.entries.len(),
        out.display()
    );
    Ok(manifest)
}

/// Render every segment of a generated dataset with `method`.
pub fn render_corpus(
    dataset: &Path,
    method: Method,
    tfr_cfg: &TfrConfig,
    img_cfg: &ImageConfig,
    out: &Path,
) -> Result<ImageManifest> {
    let ds: DatasetManifest = read_json(&dataset.join(DATASET_MANIFEST))?;
    let entries: Vec<ImageEntry> = ds
        .entries
        .iter()
        .map(|e| ImageEntry {
            path: format!(
                "{SPLIT}/{}/{}/{}.png",
                e.class.name(),
                e.load.percent(),
                e.seed
            ),
            label: e.label,
            class: e.class,
            load: e.load,
            method,
            seed: e.seed,
        })
        .collect();
    check_unique(entries.iter().map(|e| e.path.as_str()))?;
    ds.entries
        .par_iter()
        .zip(&entries)
        .try_for_each(|(src, dst)| -> Result<()> {
            let (ts, _) = formats::read_timeseries(&dataset.join(rel(&src.path)))?;
            let spec = tfr::transform(&ts, method, tfr_cfg)?;
            let img = imaging::render(&spec, img_cfg)?;
            formats::write_png(&out.join(rel(&dst.path)), &img)
        })?;
    let manifest = ImageManifest {
        method,
        tfr: tfr_cfg.clone(),
        image: img_cfg.clone(),
        dataset_seed: ds.seed,
        entries,
    };
    write_json(&out.join(IMAGE_MANIFEST), &manifest)?;
    log::info!(
        "rendered {} {} images into {}",
        manifest.entries.len(),
        method,
        out.display()
    );
    Ok(manifest)
}

/// A rendered corpus in memory, images as planar `f32` in `[0, 1]`.
pub struct Corpus {
    pub manifest: ImageManifest,
    pub shape: [usize; 3],
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Corpus {
    pub fn dataset(&self) -> Result<Dataset<'_, f32>> {
        Ok(Dataset::new(self.shape, &self.images, &self.labels)?)
    }

    pub fn loads(&self) -> Vec<usize> {
        self.manifest
            .entries
            .iter()
            .map(|e| Load::ALL.iter().position(|&l| l == e.load).unwrap())
            .collect()
    }
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: ImageManifest = read_json(&dir.join(IMAGE_MANIFEST))?;
    if manifest.entries.is_empty() {
        return Err(Error::format(
            dir.join(IMAGE_MANIFEST),
            "manifest lists no images",
        ));
    }
    let imgs = manifest
        .entries
        .par_iter()
        .map(|e| formats::read_png(&dir.join(rel(&e.path))))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = (imgs[0].width(), imgs[0].height());
    let mut images = Vec::with_capacity(imgs.len() * 3 * w * h);
    for (img, e) in imgs.iter().zip(&manifest.entries) {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::format(
                dir.join(rel(&e.path)),
                "image size differs from the rest of the corpus",
            ));
        }
        images.extend(img.to_chw::<f32>());
    }
    let labels = manifest.entries.iter().map(|e| e.label).collect();
    Ok(Corpus {
        manifest,
        shape: [3, h, w],
        images,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub architecture: Architecture,
}

impl CvOptions {
    pub fn new(k: usize, seed: u64, train: TrainConfig) -> Self {
        CvOptions {
            k,
            seed,
            train,
            architecture: Architecture::default_for_images(),
        }
    }
}

/// Fold plan plus its class and load balance, written next to each report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAudit {
    pub plan: FoldPlan,
    /// `class_counts[fold][class]` of held-out samples.
    pub class_counts: Vec<Vec<usize>>,
    /// `load_counts[fold][load]`; audited, not enforced.
    pub load_counts: Vec<Vec<usize>>,
}

pub fn init_seed(fold_seed: u64) -> u64 {
    seed::derive(fold_seed, &[INIT_TAG])
}

/// Train one fold from scratch and predict its held-out samples.
///
/// Only `train` indices reach the optimizer; the held-out fold is
/// evaluated after every epoch for the history's `val_*` columns.
pub fn fit_fold(
    data: &Dataset<'_, f32>,
    opts: &CvOptions,
    fold_seed: u64,
    train: &[usize],
    test: &[usize],
    out: Option<&Path>,
) -> tfmd_core::Result<(Vec<usize>, TrainingHistory)> {
    let init = init_seed(fold_seed);
    let mut net = Network::<f32>::new(opts.architecture.clone(), init)?;
    let cfg = TrainConfig {
        seed: fold_seed,
        ..opts.train.clone()
    };
    let mut partial = Vec::<EpochRecord>::new();
    let result = cnn::train_with(&mut net, data, train, test, &cfg, |r| {
        partial.push(r.clone())
    });
    let history = TrainingHistory { epochs: partial };
    let header = |note: Option<String>| CheckpointHeader {
        architecture: opts.architecture.clone(),
        seed: init,
        epoch: history.epochs.len(),
        note,
    };
    if let Err(e) = result {
        if let Some(dir) = out {
            // state dump for post-mortem; failures here must not mask `e`
            let _ = formats::write_history(&dir.join("history.csv"), &history);
            let _ = formats::write_checkpoint(
                &dir.join("diverged.ckpt"),
                &header(Some(e.to_string())),
                &net,
            );
        }
        return Err(e);
    }
    let mut preds = Vec::with_capacity(test.len());
    for chunk in test.chunks(64) {
        let (x, _): (Tensor<f32>, _) = data.batch(chunk)?;
        preds.extend(net.predict(&x)?.into_iter().map(|p| p.label));
    }
    if let Some(dir) = out {
        let io = |e: Error| tfmd_core::Error::InvalidArgument(e.to_string());
        formats::write_history(&dir.join("history.csv"), &history).map_err(io)?;
        formats::write_checkpoint(&dir.join("model.ckpt"), &header(None), &net).map_err(io)?;
    }
    Ok((preds, history))
}

/// k-fold cross-validation of one rendered corpus; folds run in parallel
/// on the current thread pool.
pub fn cross_validate_corpus(
    images: &Path,
    method: Option<Method>,
    opts: &CvOptions,
    out: &Path,
) -> Result<EvalReport> {
    let corpus = load_corpus(images)?;
    let method = match method {
        Some(m) if m != corpus.manifest.method => {
            return Err(Error::Usage(format!(
                "{} holds {} images, not {}",
                images.display(),
                corpus.manifest.method,
                m
            )))
        }
        _ => corpus.manifest.method,
    };
    opts.architecture
        .check_contract(corpus.shape, FaultClass::COUNT)?;
    let data = corpus.dataset()?;
    let plan = eval::stratified_kfold(&corpus.labels, opts.k, opts.seed)?;
    let audit = FoldAudit {
        class_counts: plan.group_counts(&corpus.labels)?,
        load_counts: plan.group_counts(&corpus.loads())?,
        plan: plan.clone(),
    };
    write_json(&out.join("fold_plan.json"), &audit)?;

    let started = Instant::now();
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let dir = out.join(format!("fold_{f:02}"));
            let mut fit = |_fold: usize, seed: u64, train: &[usize], test: &[usize]| {
                fit_fold(&data, opts, seed, train, test, Some(&dir)).map(|(p, _)| p)
            };
            let r = eval::run_fold(&corpus.labels, FaultClass::COUNT, &plan, f, &mut fit)?;
            match (&r.accuracy, &r.error) {
                (Some(a), _) => log::info!("{method} fold {f}: accuracy {a:.4}"),
                (_, Some(e)) => log::warn!("{method} fold {f} failed: {e}"),
                _ => {}
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::assemble(method, &plan, FaultClass::COUNT, folds)?;
    log::info!(
        "{method}: mean accuracy {:.4} ± {:.4} ({} failed) in {:.0} s",
        report.mean_accuracy,
        report.std_accuracy,
        report.failed_folds,
        started.elapsed().as_secs_f64()
    );
    write_report(out, &report)?;
    Ok(report)
}

/// `report.json` plus CSV views for plotting: per-fold accuracies and the
/// pooled confusion matrix.
pub fn write_report(out: &Path, report: &EvalReport) -> Result<()> {
    write_json(&out.join(REPORT_FILE), report)?;
    formats::write_csv(
        &out.join("folds.csv"),
        "method,fold,accuracy,failed",
        report.folds.iter().map(|f| {
            format!(
                "{},{},{},{}",
                report.method.code(),
                f.fold,
                f.accuracy.map(|a| a.to_string()).unwrap_or_default(),
                f.accuracy.is_none()
            )
        }),
    )?;
    let names: Vec<&str> = FaultClass::ALL.iter().map(|c| c.name()).collect();
    formats::write_csv(
        &out.join("confusion.csv"),
        &format!("true\\predicted,{}", names.join(",")),
        report.confusion.counts.iter().zip(&names).map(|(row, n)| {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            format!("{n},{}", cells.join(","))
        }),
    )
}

fn find_reports(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

/// Collect every `report.json` below `dir`.
pub fn load_reports(dir: &Path) -> Result<Vec<EvalReport>> {
    let mut paths = Vec::new();
    find_reports(dir, &mut paths)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for p in paths {
        let r: EvalReport = read_json(&p)?;
        if reports.iter().any(|o| o.method == r.method) {
            return Err(Error::format(&p, format!("second report for {}", r.method)));
        }
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::Usage(format!(
            "no {REPORT_FILE} found under {}",
            dir.display()
        )));
    }
    Ok(reports)
}

/// Write the comparison as JSON or CSV, chosen by the extension of `out`.
pub fn write_comparison(out: &Path, table: &ComparisonTable) -> Result<()> {
    match out.extension().and_then(|e| e.to_str()) {
        Some("csv") => crate::container::write_bytes(out, table.to_csv().as_bytes()),
        Some("json") => write_json(out, table),
        _ => Err(Error::Usage(format!(
            "{}: comparison output must end in .json or .csv",
            out.display()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub stages: Vec<StageRecord>,
}

impl RunLog {
    fn record<T>(
        &mut self,
        stage: &str,
        method: Option<Method>,
        f: impl FnOnce() -> Result<T>,
    ) -> Option<T> {
        let t = Instant::now();
        let r = f();
        let (status, error, value) = match r {
            Ok(v) => (StageStatus::Ok, None, Some(v)),
            Err(e) => {
                log::error!(
                    "{stage}{}: {e}",
                    method.map(|m| format!(" {m}")).unwrap_or_default()
                );
                (
                    StageStatus::Failed,
                    Some(format!("{}: {e}", e.kind())),
                    None,
                )
            }
        };
        self.stages.push(StageRecord {
            stage: stage.into(),
            method,
            status,
            error,
            seconds: t.elapsed().as_secs_f64(),
        });
        value
    }

    fn skip(&mut self, stage: &str, method: Option<Method>) {
        self.stages.push(StageRecord {
            stage: stage.into(),
            method,
            status: StageStatus::Skipped,
            error: None,
            seconds: 0.0,
        });
    }

    pub fn failures(&self) -> usize {
        self.stages
            .iter()
            .filter(|s| s.status == StageStatus::Failed)
            .count()
    }
}

/// Separability of the generator at full load for every configured method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeparabilitySummary {
    pub load: Load,
    pub per_class: usize,
    pub methods: Vec<(Method, SeparabilityReport)>,
}

pub fn separability_summary(cfg: &RunConfig, per_class: usize) -> Result<SeparabilitySummary> {
    let methods = cfg
        .methods
        .par_iter()
        .map(|&m| {
            motorsim::generator_separability(
                &cfg.motor,
                m,
                &cfg.tfr,
                &cfg.image,
                Load::P100,
                per_class,
                cfg.seed,
            )
            .map(|r| (m, r))
            .map_err(Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparabilitySummary {
        load: Load::P100,
        per_class,
        methods,
    })
}

pub struct RunOutcome {
    pub log: RunLog,
    pub reports: Vec<EvalReport>,
    pub comparison: Option<ComparisonTable>,
}

/// Generate, render every configured method, cross-validate, compare.
///
/// A failing stage is logged and only its dependants are skipped.
pub fn run_all(cfg: &RunConfig, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    write_json(&out.join("config.json"), cfg)?;
    let mut log = RunLog { stages: Vec::new() };
    let dataset = out.join("dataset");
    let generated = log
        .record("gen", None, || {
            generate_dataset(&cfg.motor, cfg.per_cell, cfg.seed, &dataset)
        })
        .is_some();
    log.record("separability", None, || {
        let s = separability_summary(cfg, motorsim::MIN_PER_CLASS.max(cfg.per_cell))?;
        write_json(&out.join("separability.json"), &s)
    });

    let mut reports = Vec::new();
    for &m in &cfg.methods {
        let images = out.join("images").join(m.slug());
        let rendered = generated
            && log
                .record("render", Some(m), || {
                    render_corpus(&dataset, m, &cfg.tfr, &cfg.image, &images)
                })
                .is_some();
        if !generated {
            log.skip("render", Some(m));
        }
        if !rendered {
            log.skip("cv", Some(m));
            continue;
        }
        let opts = CvOptions::new(cfg.k, cfg.seed, cfg.train.clone());
        let cv_dir = out.join("cv").join(m.slug());
        if let Some(r) = log.record("cv", Some(m), || {
            cross_validate_corpus(&images, Some(m), &opts, &cv_dir)
        }) {
            reports.push(r);
        }
    }

    let comparison = if reports.is_empty() {
        log.skip("compare", None);
        None
    } else {
        log.record("compare", None, || {
            let table = eval::compare_methods(&reports)?;
            write_comparison(&out.join("comparison.json"), &table)?;
            write_comparison(&out.join("comparison.csv"), &table)?;
            crate::container::write_bytes(&out.join("comparison.txt"), table.to_text().as_bytes())?;
            Ok(table)
        })
    };
    write_json(&out.join("run_log.json"), &log)?;
    Ok(RunOutcome {
        log,
        reports,
        comparison,
    })
}

/// Thread pool honouring `TFMD_THREADS` (unset or empty: rayon's default).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env()? {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var("TFMD_THREADS") {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "TFMD_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}
