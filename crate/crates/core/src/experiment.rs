//! Registration variants, experiment configs and the batch drivers behind
//! the command-line tool: dataset generation, per-instance registration,
//! parameter sweeps and evaluation.
//!
//! Instances are identified by `(level index, instance index)`; their seeds
//! are derived from the master seed, so a sweep is reproducible regardless
//! of the number of worker threads. Output order never depends on
//! scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, fmt_f64};
use crate::kernels::KernelSpec;
use crate::metrics::{self, Subset};
use crate::registration::register;
use crate::synthdata::{self, PerturbationSpec, SyntheticInstance, WarpSpec};
use crate::types::{CorrespondenceMode, PointSet, RegistrationConfig, RegistrationResult, ThresholdMode, VarianceMode};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
/// `reference` value selecting the procedural 98-point fish.
pub const BUILTIN_FISH: &str = "builtin:fish";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SFGP_Full")]
    SfgpFull,
    #[serde(rename = "SFGP_bcpdReg")]
    SfgpBcpdReg,
    #[serde(rename = "GPReg_noTresh")]
    GpRegNoThresh,
    #[serde(rename = "GPClosestPnt")]
    GpClosestPnt,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::SfgpFull,
        Variant::SfgpBcpdReg,
        Variant::GpRegNoThresh,
        Variant::GpClosestPnt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::SfgpFull => "SFGP_Full",
            Variant::SfgpBcpdReg => "SFGP_bcpdReg",
            Variant::GpRegNoThresh => "GPReg_noTresh",
            Variant::GpClosestPnt => "GPClosestPnt",
        }
    }

    /// `cfg` with the mode switches of this variant.
    pub fn configure(self, cfg: &RegistrationConfig) -> RegistrationConfig {
        let mut cfg = cfg.clone();
        let (c, v, t) = match self {
            Variant::SfgpFull => (
                CorrespondenceMode::MultiAnnotator,
                VarianceMode::PerPoint,
                ThresholdMode::On,
            ),
            Variant::SfgpBcpdReg => (
                CorrespondenceMode::MultiAnnotator,
                VarianceMode::Scalar,
                ThresholdMode::On,
            ),
            Variant::GpRegNoThresh => (
                CorrespondenceMode::MultiAnnotator,
                VarianceMode::PerPoint,
                ThresholdMode::Off,
            ),
            Variant::GpClosestPnt => (
                CorrespondenceMode::ClosestPoint,
                VarianceMode::Scalar,
                ThresholdMode::On,
            ),
        };
        cfg.correspondence_mode = c;
        cfg.variance_mode = v;
        cfg.threshold_mode = t;
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::InvalidConfig(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

/// Runs one variant.
pub fn run_variant(
    reference: &PointSet,
    target: &PointSet,
    kernel: &KernelSpec,
    cfg: &RegistrationConfig,
    variant: Variant,
) -> Result<RegistrationResult> {
    register(reference, target, kernel, &variant.configure(cfg))
}

/// Perturbation parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    MissingWidth,
    NoiseStd,
    OutlierRatio,
    /// Integer deformation level, see [`WarpSpec::level`].
    DeformationLevel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axis: Axis,
    pub levels: Vec<f64>,
}

impl Grid {
    /// `base` with the swept parameter set to `level`.
    pub fn apply(&self, base: &PerturbationSpec, level: f64) -> PerturbationSpec {
        let mut spec = base.clone();
        match self.axis {
            Axis::MissingWidth => spec.missing_width = level,
            Axis::NoiseStd => spec.noise_std = level,
            Axis::OutlierRatio => spec.outlier_ratio = level,
            Axis::DeformationLevel => spec.warp = WarpSpec::level(level.round() as u32),
        }
        spec
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// CSV point file (relative paths resolve against the config file) or
    /// [`BUILTIN_FISH`].
    pub reference: String,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub registration: RegistrationConfig,
    /// Perturbation applied at every level; the grid overrides one field.
    #[serde(default)]
    pub perturbation: PerturbationSpec,
    pub grid: Grid,
    pub variants: Vec<Variant>,
    pub instances: usize,
    pub master_seed: u64,
    /// Fill the `runtime_ms` column. Off makes metrics files byte-identical
    /// across runs.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = io::read_json(path)?;
        if cfg.reference != BUILTIN_FISH {
            let p = Path::new(&cfg.reference);
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.reference = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.instances == 0 {
            return Err(Error::InvalidConfig("instances must be positive".into()));
        }
        if self.grid.levels.is_empty() {
            return Err(Error::InvalidConfig("grid must have at least one level".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("variants must not be empty".into()));
        }
        if self.reference != BUILTIN_FISH && !Path::new(&self.reference).is_file() {
            return Err(Error::InvalidConfig(format!(
                "reference file {} does not exist",
                self.reference
            )));
        }
        self.kernel.validate()?;
        crate::types::validate_config(self.registration.clone())?;
        for &level in &self.grid.levels {
            self.grid.apply(&self.perturbation, level).validate()?;
        }
        Ok(())
    }

    pub fn load_reference(&self) -> Result<PointSet> {
        if self.reference == BUILTIN_FISH {
            Ok(synthdata::fish())
        } else {
            io::read_points_csv(Path::new(&self.reference))
        }
    }

    /// Every `(level index, instance index)` pair in output order.
    pub fn tasks(&self) -> Vec<(usize, usize)> {
        (0..self.grid.levels.len())
            .flat_map(|l| (0..self.instances).map(move |k| (l, k)))
            .collect()
    }

    pub fn instance_spec(&self, level_index: usize, instance: usize) -> PerturbationSpec {
        let mut spec = self.grid.apply(&self.perturbation, self.grid.levels[level_index]);
        spec.seed = instance_seed(self.master_seed, level_index, instance);
        spec
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one instance, derived from the master seed by hashing.
pub fn instance_seed(master: u64, level_index: usize, instance: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ level_index as u64) ^ instance as u64)
}

pub fn instance_dir_name(level_index: usize, instance: usize) -> String {
    format!("level{level_index:02}_{instance:04}")
}

/// Runs `f` on a pool of `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// One row of a metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub variant: Variant,
    pub level: f64,
    pub seed: u64,
    pub error_all: Option<f64>,
    pub error_missing: Option<f64>,
    pub error_nonmissing: Option<f64>,
    pub success: bool,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub runtime_ms: Option<f64>,
}

const RECORD_HEADER: [&str; 10] = [
    "variant",
    "level",
    "seed",
    "error_all",
    "error_missing",
    "error_nonmissing",
    "success",
    "recall",
    "precision",
    "runtime_ms",
];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|e| Error::Parse(format!("{s:?}: {e}")))
    }
}

pub fn records_to_csv(records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([
            r.variant.name().to_string(),
            fmt_f64(r.level),
            r.seed.to_string(),
            opt(r.error_all),
            opt(r.error_missing),
            opt(r.error_nonmissing),
            r.success.to_string(),
            opt(r.recall),
            opt(r.precision),
            opt(r.runtime_ms),
        ])?;
    }
    io::into_string(w)
}

pub fn parse_records_csv(text: &str) -> Result<Vec<SweepRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().ne(RECORD_HEADER) {
        return Err(Error::Parse("unexpected metrics header".into()));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != RECORD_HEADER.len() {
            return Err(Error::Parse(format!("metrics row has {} fields", rec.len())));
        }
        out.push(SweepRecord {
            variant: rec[0].parse()?,
            level: rec[1].parse().map_err(|e| Error::Parse(format!("level: {e}")))?,
            seed: rec[2].parse().map_err(|e| Error::Parse(format!("seed: {e}")))?,
            error_all: parse_opt(&rec[3])?,
            error_missing: parse_opt(&rec[4])?,
            error_nonmissing: parse_opt(&rec[5])?,
            success: rec[6].parse().map_err(|e| Error::Parse(format!("success: {e}")))?,
            recall: parse_opt(&rec[7])?,
            precision: parse_opt(&rec[8])?,
            runtime_ms: parse_opt(&rec[9])?,
        });
    }
    Ok(out)
}

/// Scores one run. Errors and failed runs count as unsuccessful and carry
/// no distance or detection values.
pub fn evaluate(
    variant: Variant,
    level: f64,
    seed: u64,
    outcome: &Result<RegistrationResult>,
    instance: &SyntheticInstance,
    runtime_ms: Option<f64>,
) -> Result<SweepRecord> {
    let mut rec = SweepRecord {
        variant,
        level,
        seed,
        error_all: None,
        error_missing: None,
        error_nonmissing: None,
        success: false,
        recall: None,
        precision: None,
        runtime_ms,
    };
    if let Ok(res) = outcome {
        if !res.failed {
            rec.success = true;
            rec.error_all = metrics::mean_sq_distance(res, instance, Subset::All)?;
            rec.error_missing = metrics::mean_sq_distance(res, instance, Subset::Missing)?;
            rec.error_nonmissing = metrics::mean_sq_distance(res, instance, Subset::NonMissing)?;
            let det = metrics::missing_detection(res, instance)?;
            rec.recall = det.recall;
            rec.precision = det.precision;
        }
    }
    Ok(rec)
}

/// Everything produced for one instance of a sweep.
pub struct InstanceRun {
    pub level_index: usize,
    pub instance_index: usize,
    pub instance: SyntheticInstance,
    pub results: Vec<(Variant, Result<RegistrationResult>)>,
    pub records: Vec<SweepRecord>,
}

/// Generates and registers every instance of `cfg` on the current rayon
/// pool. Registration errors are logged and kept; they do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig, reference: &PointSet) -> Result<Vec<InstanceRun>> {
    cfg.validate()?;
    let kernel = &cfg.kernel;
    cfg.tasks()
        .into_par_iter()
        .map(|(l, k)| {
            let spec = cfg.instance_spec(l, k);
            let level = cfg.grid.levels[l];
            let instance = synthdata::generate(reference, &spec)?;
            let mut results = Vec::new();
            let mut records = Vec::new();
            for &variant in &cfg.variants {
                let t0 = Instant::now();
                let outcome = run_variant(reference, &instance.target, kernel, &cfg.registration, variant);
                let ms = t0.elapsed().as_secs_f64() * 1e3;
                if let Err(e) = &outcome {
                    log::warn!("{variant} level {level} instance {k}: {e}");
                }
                let runtime = cfg.record_runtime.then_some(ms);
                records.push(evaluate(variant, level, spec.seed, &outcome, &instance, runtime)?);
                results.push((variant, outcome));
            }
            log::info!("level {level} instance {k} done");
            Ok(InstanceRun {
                level_index: l,
                instance_index: k,
                instance,
                results,
                records,
            })
        })
        .collect()
}

/// Per `(variant, level)` aggregate of sweep records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub level: f64,
    pub runs: usize,
    pub success_ratio: f64,
    pub mean_error_all: Option<f64>,
    pub mean_error_missing: Option<f64>,
    pub mean_error_nonmissing: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_precision: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Groups records by variant and level, in first-appearance order of levels.
pub fn summarize(records: &[SweepRecord]) -> Vec<SummaryRow> {
    let mut levels: Vec<f64> = Vec::new();
    for r in records {
        if !levels.contains(&r.level) {
            levels.push(r.level);
        }
    }
    let mut groups: BTreeMap<(Variant, usize), Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        let li = levels
            .iter()
            .position(|l| *l == r.level)
            .expect("level collected above");
        groups.entry((r.variant, li)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((variant, li), rs)| SummaryRow {
            variant,
            level: levels[li],
            runs: rs.len(),
            success_ratio: metrics::success_ratio_flags(rs.iter().map(|r| r.success)).unwrap_or(0.0),
            mean_error_all: mean_of(rs.iter().map(|r| r.error_all)),
            mean_error_missing: mean_of(rs.iter().map(|r| r.error_missing)),
            mean_error_nonmissing: mean_of(rs.iter().map(|r| r.error_nonmissing)),
            mean_recall: mean_of(rs.iter().map(|r| r.recall)),
            mean_precision: mean_of(rs.iter().map(|r| r.precision)),
        })
        .collect()
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "level",
        "runs",
        "success_ratio",
        "mean_error_all",
        "mean_error_missing",
        "mean_error_nonmissing",
        "mean_recall",
        "mean_precision",
    ])?;
    for r in rows {
        w.write_record([
            r.variant.name().to_string(),
            fmt_f64(r.level),
            r.runs.to_string(),
            fmt_f64(r.success_ratio),
            opt(r.mean_error_all),
            opt(r.mean_error_missing),
            opt(r.mean_error_nonmissing),
            opt(r.mean_recall),
            opt(r.mean_precision),
        ])?;
    }
    io::into_string(w)
}

/// Fixed-width table for terminals.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into());
    let mut out = format!(
        "{:<14} {:>8} {:>5} {:>8} {:>10} {:>10} {:>10} {:>7} {:>7}\n",
        "variant", "level", "runs", "success", "err_all", "err_miss", "err_nonm", "recall", "prec"
    );
    for r in rows {
        let frac = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<14} {:>8} {:>5} {:>8.3} {:>10} {:>10} {:>10} {:>7} {:>7}\n",
            r.variant.name(),
            format!("{}", r.level),
            r.runs,
            r.success_ratio,
            cell(r.mean_error_all),
            cell(r.mean_error_missing),
            cell(r.mean_error_nonmissing),
            frac(r.mean_recall),
            frac(r.mean_precision),
        ));
    }
    out
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const DATASET_FILE: &str = "dataset.json";

/// Dataset index written by [`generate_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub instances: Vec<DatasetEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub dir: String,
    pub level: f64,
    pub seed: u64,
}

/// Writes every instance of `cfg` under `out`, plus `reference.csv` and a
/// `dataset.json` index.
pub fn generate_dataset(cfg: &ExperimentConfig, out: &Path) -> Result<DatasetIndex> {
    cfg.validate()?;
    let reference = cfg.load_reference()?;
    fs::create_dir_all(out)?;
    io::write_points_csv(&out.join("reference.csv"), &reference)?;
    let entries = cfg
        .tasks()
        .into_par_iter()
        .map(|(l, k)| {
            let spec = cfg.instance_spec(l, k);
            let inst = synthdata::generate(&reference, &spec)?;
            let name = instance_dir_name(l, k);
            io::write_instance(&out.join(&name), &inst, &spec)?;
            Ok(DatasetEntry {
                dir: name,
                level: cfg.grid.levels[l],
                seed: spec.seed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let index = DatasetIndex {
        schema_version: CONFIG_SCHEMA_VERSION,
        config: cfg.clone(),
        instances: entries,
    };
    io::write_json(&out.join(DATASET_FILE), &index)?;
    Ok(index)
}

pub fn read_dataset(dir: &Path) -> Result<DatasetIndex> {
    let index: DatasetIndex = io::read_json(&dir.join(DATASET_FILE))?;
    if index.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "dataset schema_version {} is not supported",
            index.schema_version
        )));
    }
    Ok(index)
}

/// Registers every instance of a dataset with one variant; one result
/// directory per instance. Per-instance errors are logged and counted.
pub fn register_dataset(
    dataset: &Path,
    reference: &PointSet,
    kernel: &KernelSpec,
    cfg: &RegistrationConfig,
    variant: Variant,
    out: &Path,
) -> Result<usize> {
    let index = read_dataset(dataset)?;
    let errors: usize = index
        .instances
        .par_iter()
        .map(|e| -> Result<usize> {
            let (inst, _) = io::read_instance(&dataset.join(&e.dir))?;
            let t0 = Instant::now();
            match run_variant(reference, &inst.target, kernel, cfg, variant) {
                Ok(res) => {
                    let ms = t0.elapsed().as_secs_f64() * 1e3;
                    io::write_result(&out.join(&e.dir), &res, variant.name(), ms)?;
                    Ok(0)
                }
                Err(err) => {
                    log::warn!("{}: {err}", e.dir);
                    Ok(1)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(errors)
}

/// Scores the result directories under `results` against `dataset`.
/// Instances without a result directory count as unsuccessful.
pub fn evaluate_results(results: &Path, dataset: &Path) -> Result<Vec<SweepRecord>> {
    let index = read_dataset(dataset)?;
    index
        .instances
        .par_iter()
        .map(|e| {
            let (inst, _) = io::read_instance(&dataset.join(&e.dir))?;
            let rdir = results.join(&e.dir);
            if !rdir.join(io::SUMMARY_FILE).is_file() {
                log::warn!("{}: no result", e.dir);
                let variant = index.config.variants.first().copied().unwrap_or(Variant::SfgpFull);
                let missing: Result<RegistrationResult> = Err(Error::InvalidInput("no result".into()));
                return evaluate(variant, e.level, e.seed, &missing, &inst, None);
            }
            let (deformed, summary) = io::read_result(&rdir)?;
            let variant: Variant = summary.variant.parse()?;
            let mut rec = evaluate(
                variant,
                e.level,
                e.seed,
                &Err(Error::FailedRegistration),
                &inst,
                Some(summary.runtime_ms),
            )?;
            if !summary.failed {
                rec.success = true;
                rec.error_all =
                    metrics::mean_sq_distance_points(&deformed, &inst.ground_truth, &inst.missing_mask, Subset::All)?;
                rec.error_missing = metrics::mean_sq_distance_points(
                    &deformed,
                    &inst.ground_truth,
                    &inst.missing_mask,
                    Subset::Missing,
                )?;
                rec.error_nonmissing = metrics::mean_sq_distance_points(
                    &deformed,
                    &inst.ground_truth,
                    &inst.missing_mask,
                    Subset::NonMissing,
                )?;
                let det = metrics::detection_scores(&summary.missing, &inst.missing_mask)?;
                rec.recall = det.recall;
                rec.precision = det.precision;
            }
            Ok(rec)
        })
        .collect()
}

/// Writes `metrics.csv`, `summary.csv` and `summary.txt` into `out`.
pub fn write_reports(out: &Path, records: &[SweepRecord]) -> Result<String> {
    let rows = summarize(records);
    let table = summary_table(&rows);
    io::write_atomic(&out.join(METRICS_FILE), records_to_csv(records)?.as_bytes())?;
    io::write_atomic(&out.join(SUMMARY_CSV), summary_to_csv(&rows)?.as_bytes())?;
    io::write_atomic(&out.join(SUMMARY_TXT), table.as_bytes())?;
    Ok(table)
}

/// Path of the reference for a dataset: the copy written at generation.
pub fn dataset_reference(dataset: &Path) -> PathBuf {
    dataset.join("reference.csv")
}
