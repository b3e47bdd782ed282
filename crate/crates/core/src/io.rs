//! On-disk formats: MDP and solution files (JSON), sweep tables (CSV).
//!
//! Floats are written in the shortest form that parses back to the same
//! double, so every file round-trips bit for bit. Files are written to a
//! temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{SweepRecord, SweepStatus};
use crate::mdp::{MdpError, MdpParts, TabularMdp};
use crate::solver::Solution;

pub const MDP_FORMAT: &str = "regmdp-mdp/1";
pub const SOLUTION_FORMAT: &str = "regmdp-solution/1";

/// Fixed leading columns of a sweep table.
pub const SWEEP_COLUMNS: [&str; 7] = [
    "lambda",
    "delta",
    "uniformity_gap",
    "err_thm5",
    "bound_thm5",
    "policy_subopt",
    "iterations",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected format {expected:?}, found {found:?}")]
    Format { path: PathBuf, expected: String, found: String },
    #[error("{path}: {source}")]
    Mdp {
        path: PathBuf,
        #[source]
        source: MdpError,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json {
        path: path.to_path_buf(),
        source,
    }
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

/// Where an MDP came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MdpProvenance {
    /// `random`, `gridworld`, or anything else for hand-made files.
    pub generator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunProvenance>,
}

/// The tool invocation that produced a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunProvenance {
    pub tool: String,
    pub version: String,
    pub args: Vec<String>,
}

impl RunProvenance {
    /// The current process, as seen by the library.
    pub fn current(tool: &str) -> Self {
        RunProvenance {
            tool: tool.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            args: std::env::args().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    pub format: String,
    #[serde(flatten)]
    pub mdp: MdpParts,
    pub provenance: MdpProvenance,
}

/// A validated MDP read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMdp {
    pub mdp: TabularMdp,
    pub provenance: MdpProvenance,
    /// Hash of the file bytes.
    pub sha256: String,
}

/// Serialized MDP file contents.
pub fn mdp_to_bytes(mdp: &TabularMdp, provenance: &MdpProvenance) -> Vec<u8> {
    let file = MdpFile {
        format: MDP_FORMAT.to_string(),
        mdp: mdp.parts().clone(),
        provenance: provenance.clone(),
    };
    let mut out = serde_json::to_vec_pretty(&file).expect("MDP data serializes");
    out.push(b'\n');
    out
}

/// Writes an MDP file and returns its content hash.
pub fn write_mdp(path: &Path, mdp: &TabularMdp, provenance: &MdpProvenance) -> Result<String> {
    let bytes = mdp_to_bytes(mdp, provenance);
    write_atomic(path, &bytes)?;
    Ok(content_hash(&bytes))
}

/// Parses and validates MDP file contents; `path` is only used in errors.
pub fn mdp_from_bytes(path: &Path, bytes: &[u8]) -> Result<LoadedMdp> {
    let file: MdpFile = serde_json::from_slice(bytes).map_err(json_err(path))?;
    if file.format != MDP_FORMAT {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            expected: MDP_FORMAT.to_string(),
            found: file.format,
        });
    }
    let mdp = TabularMdp::try_from(file.mdp).map_err(|source| IoError::Mdp {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(LoadedMdp {
        mdp,
        provenance: file.provenance,
        sha256: content_hash(bytes),
    })
}

pub fn read_mdp(path: &Path) -> Result<LoadedMdp> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    mdp_from_bytes(path, &bytes)
}

/// Settings a solution was computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub regularizer: String,
    pub lambda: f64,
    pub solver: String,
    pub tol: f64,
    pub max_iter: usize,
    /// Hash of the MDP file that was solved.
    pub mdp_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub settings: SolveSettings,
    /// Sparsity of the policy at the default support threshold.
    pub delta: f64,
    #[serde(flatten)]
    pub solution: Solution,
    pub provenance: RunProvenance,
}

impl SolutionFile {
    pub fn new(settings: SolveSettings, delta: f64, solution: Solution, provenance: RunProvenance) -> Self {
        SolutionFile {
            format: SOLUTION_FORMAT.to_string(),
            settings,
            delta,
            solution,
            provenance,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(json_err(path))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let file: SolutionFile = serde_json::from_slice(&bytes).map_err(json_err(path))?;
    if file.format != SOLUTION_FORMAT {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            expected: SOLUTION_FORMAT.to_string(),
            found: file.format,
        });
    }
    Ok(file)
}

fn status_text(s: &SweepStatus) -> String {
    match s {
        SweepStatus::Ok => "ok".to_string(),
        SweepStatus::Failed(m) => format!("failed: {m}"),
    }
}

fn csv_bytes(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.into_error(),
    })
}

fn probe_cells(r: &SweepRecord, probe: usize, n_actions: usize) -> Vec<String> {
    match r.probes.get(probe) {
        Some(p) if p.len() == n_actions => p.iter().map(|x| x.to_string()).collect(),
        _ => vec![f64::NAN.to_string(); n_actions],
    }
}

/// Sweep table: the [`SWEEP_COLUMNS`], then `p0..p{A−1}` for probe number
/// `probe` of the records, then a `status` column.
pub fn sweep_csv(path: &Path, records: &[SweepRecord], probe: usize, n_actions: usize) -> Result<Vec<u8>> {
    let mut header: Vec<String> = SWEEP_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n_actions).map(|a| format!("p{a}")));
    header.push("status".to_string());
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.lambda.to_string(),
                r.delta.to_string(),
                r.uniformity_gap.to_string(),
                r.perf_err.to_string(),
                r.perf_bound.to_string(),
                r.policy_subopt.to_string(),
                r.iterations.to_string(),
            ];
            row.extend(probe_cells(r, probe, n_actions));
            row.push(status_text(&r.status));
            row
        })
        .collect();
    csv_bytes(path, header, rows)
}

/// Probe table for one probe state: `lambda,p0..p{A−1}`.
pub fn probe_csv(path: &Path, records: &[SweepRecord], probe: usize, n_actions: usize) -> Result<Vec<u8>> {
    let mut header = vec!["lambda".to_string()];
    header.extend((0..n_actions).map(|a| format!("p{a}")));
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.lambda.to_string()];
            row.extend(probe_cells(r, probe, n_actions));
            row
        })
        .collect();
    csv_bytes(path, header, rows)
}

/// One parsed row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub delta: f64,
    pub uniformity_gap: f64,
    pub perf_err: f64,
    pub perf_bound: f64,
    pub policy_subopt: f64,
    pub iterations: usize,
    pub probe: Vec<f64>,
    pub status: String,
}

/// Reads a table written by [`sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<(Vec<String>, Vec<SweepRow>)> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let bad = |what: String| IoError::Format {
        path: path.to_path_buf(),
        expected: "sweep table".to_string(),
        found: what,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < SWEEP_COLUMNS.len() + 1 || header[..SWEEP_COLUMNS.len()] != SWEEP_COLUMNS {
        return Err(bad(header.join(",")));
    }
    let n_probe = header.len() - SWEEP_COLUMNS.len() - 1;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(format!("number {:?}", &rec[i]))) };
        rows.push(SweepRow {
            lambda: f(0)?,
            delta: f(1)?,
            uniformity_gap: f(2)?,
            perf_err: f(3)?,
            perf_bound: f(4)?,
            policy_subopt: f(5)?,
            iterations: rec[6].parse().map_err(|_| bad(format!("count {:?}", &rec[6])))?,
            probe: (0..n_probe).map(|k| f(7 + k)).collect::<Result<_>>()?,
            status: rec[header.len() - 1].to_string(),
        });
    }
    Ok((header, rows))
}
