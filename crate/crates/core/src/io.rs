//! File formats: point-set CSV, synthetic instance directories and
//! registration result directories.
//!
//! Point files hold one point per row with an optional `x,y[,z]` header.
//! Floats are written with 17 significant digits so reading a file back
//! reproduces the exact values. Every file is written to a temporary name in
//! the destination directory and renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{PerturbationSpec, SyntheticInstance};
use crate::types::{IterationRecord, PointSet, RegistrationResult};

pub const INSTANCE_SCHEMA: &str = "sfgp-instance";
pub const RESULT_SCHEMA: &str = "sfgp-result";
pub const SCHEMA_VERSION: u32 = 1;

pub const TARGET_FILE: &str = "target.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFORMED_FILE: &str = "deformed.csv";
pub const SUMMARY_FILE: &str = "correspondence.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn points_to_csv(points: &PointSet) -> String {
    let header = ["x", "y", "z"][..points.dim()].join(",");
    let mut out = header + "\n";
    for p in points.iter() {
        let row: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_points_csv(path: &Path, points: &PointSet) -> Result<()> {
    write_atomic(path, points_to_csv(points).as_bytes())
}

/// Parses a point CSV. A first row that is not numeric is taken as a header.
pub fn parse_points_csv(text: &str) -> Result<PointSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", line + 1))),
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse("no points in file".into()));
    }
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::Parse(format!(
            "point {} has {} columns, expected {dim}",
            bad + 1,
            rows[bad].len()
        )));
    }
    PointSet::new(dim, rows.concat())
}

pub fn read_points_csv(path: &Path) -> Result<PointSet> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))?;
    parse_points_csv(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceManifest {
    pub schema: String,
    pub schema_version: u32,
    pub spec: PerturbationSpec,
    pub seed: u64,
    pub missing_mask: Vec<bool>,
    pub outlier_mask: Vec<bool>,
    pub target_source: Vec<Option<usize>>,
}

/// Writes `target.csv`, `ground_truth.csv` and `manifest.json` into `dir`.
pub fn write_instance(dir: &Path, instance: &SyntheticInstance, spec: &PerturbationSpec) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_points_csv(&dir.join(TARGET_FILE), &instance.target)?;
    write_points_csv(&dir.join(GROUND_TRUTH_FILE), &instance.ground_truth)?;
    let manifest = InstanceManifest {
        schema: INSTANCE_SCHEMA.into(),
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        seed: spec.seed,
        missing_mask: instance.missing_mask.clone(),
        outlier_mask: instance.outlier_mask.clone(),
        target_source: instance.target_source.clone(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)
}

pub fn read_instance(dir: &Path) -> Result<(SyntheticInstance, PerturbationSpec)> {
    let m: InstanceManifest = read_json(&dir.join(MANIFEST_FILE))?;
    check_schema(&m.schema, m.schema_version, INSTANCE_SCHEMA)?;
    let target = read_points_csv(&dir.join(TARGET_FILE))?;
    let ground_truth = read_points_csv(&dir.join(GROUND_TRUTH_FILE))?;
    if m.missing_mask.len() != ground_truth.len() || m.outlier_mask.len() != target.len() {
        return Err(Error::Parse(format!(
            "masks in {} do not match the point files",
            dir.display()
        )));
    }
    let inst = SyntheticInstance {
        target,
        ground_truth,
        missing_mask: m.missing_mask,
        outlier_mask: m.outlier_mask,
        target_source: m.target_source,
    };
    Ok((inst, m.spec))
}

fn check_schema(schema: &str, version: u32, expected: &str) -> Result<()> {
    if schema != expected || version != SCHEMA_VERSION {
        return Err(Error::Parse(format!(
            "expected schema {expected} v{SCHEMA_VERSION}, found {schema} v{version}"
        )));
    }
    Ok(())
}

/// Correspondence summary stored next to a deformed reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultSummary {
    pub schema: String,
    pub schema_version: u32,
    pub variant: String,
    pub iters: usize,
    pub converged: bool,
    pub failed: bool,
    pub collapsed: bool,
    pub inliers: Vec<usize>,
    pub missing: Vec<usize>,
    pub sigma2: Vec<f64>,
    pub runtime_ms: f64,
}

pub fn trace_to_csv(trace: &[IterationRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "iter",
        "mean_displacement",
        "displacement_change",
        "n_inliers",
        "n_missing",
        "mean_sigma2",
        "min_sigma2",
        "elapsed_ms",
    ])?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            fmt_f64(r.mean_displacement),
            fmt_f64(r.displacement_change),
            r.n_inliers.to_string(),
            r.n_missing.to_string(),
            fmt_f64(r.mean_sigma2),
            fmt_f64(r.min_sigma2),
            fmt_f64(r.elapsed_ms),
        ])?;
    }
    into_string(w)
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| Error::Parse("short trace row".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("trace column {k}: {e}")))
        };
        out.push(IterationRecord {
            iter: f(0)? as usize,
            mean_displacement: f(1)?,
            displacement_change: f(2)?,
            n_inliers: f(3)? as usize,
            n_missing: f(4)? as usize,
            mean_sigma2: f(5)?,
            min_sigma2: f(6)?,
            elapsed_ms: f(7)?,
        });
    }
    Ok(out)
}

pub(crate) fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes the deformed reference, correspondence summary and trace of one run.
pub fn write_result(dir: &Path, result: &RegistrationResult, variant: &str, runtime_ms: f64) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_points_csv(&dir.join(DEFORMED_FILE), &result.deformed_reference)?;
    write_atomic(&dir.join(TRACE_FILE), trace_to_csv(&result.trace)?.as_bytes())?;
    let summary = ResultSummary {
        schema: RESULT_SCHEMA.into(),
        schema_version: SCHEMA_VERSION,
        variant: variant.into(),
        iters: result.iters,
        converged: result.converged,
        failed: result.failed,
        collapsed: result.collapsed,
        inliers: result.state.inliers.clone(),
        missing: result.state.missing.clone(),
        sigma2: result.sigma2.clone(),
        runtime_ms,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)
}

pub fn read_result(dir: &Path) -> Result<(PointSet, ResultSummary)> {
    let summary: ResultSummary = read_json(&dir.join(SUMMARY_FILE))?;
    check_schema(&summary.schema, summary.schema_version, RESULT_SCHEMA)?;
    let deformed = read_points_csv(&dir.join(DEFORMED_FILE))?;
    Ok((deformed, summary))
}
