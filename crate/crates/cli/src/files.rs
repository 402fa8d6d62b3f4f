//! File formats: moments JSON, architecture JSON, dataset CSV, solution
//! JSON, and the per-run manifest. All readers validate through the core
//! constructors so malformed files surface as configuration errors with the
//! CLI's exit-code conventions.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use dln_core::{
    Architecture, BiasSolution, BracketInfo, DataMoments, Dataset, Error, GlobalMinimum, Params,
    Result,
};

// ---------------------------------------------------------------------------
// Moments JSON
// ---------------------------------------------------------------------------

/// On-disk form of [`DataMoments`]: `a0` is a row-major nested array, the
/// mean fields default to zero so centered files may omit them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentsFile {
    pub dim: usize,
    pub a0: Vec<Vec<f64>>,
    pub exy: Vec<f64>,
    pub ey2: f64,
    #[serde(default)]
    pub mean_x: Option<Vec<f64>>,
    #[serde(default)]
    pub mean_y: f64,
}

impl MomentsFile {
    pub fn from_moments(m: &DataMoments) -> Self {
        MomentsFile {
            dim: m.dim,
            a0: (0..m.dim)
                .map(|i| (0..m.dim).map(|j| m.a0[(i, j)]).collect())
                .collect(),
            exy: m.exy.iter().copied().collect(),
            ey2: m.ey2,
            mean_x: Some(m.mean_x.iter().copied().collect()),
            mean_y: m.mean_y,
        }
    }

    pub fn into_moments(self) -> Result<DataMoments> {
        let d = self.dim;
        if self.a0.len() != d || self.a0.iter().any(|row| row.len() != d) {
            return Err(Error::parse(format!(
                "a0 must be a {d} x {d} nested array matching dim"
            )));
        }
        let a0 = DMatrix::from_fn(d, d, |i, j| self.a0[i][j]);
        let exy = DVector::from_vec(self.exy);
        let mean_x = match self.mean_x {
            Some(v) => DVector::from_vec(v),
            None => DVector::zeros(d),
        };
        DataMoments::new(a0, exy, self.ey2, mean_x, self.mean_y)
    }
}

pub fn read_moments(path: &Path) -> Result<DataMoments> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let file: MomentsFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
    file.into_moments()
}

// ---------------------------------------------------------------------------
// Architecture JSON
// ---------------------------------------------------------------------------

/// The architecture file deserializes straight into the validated core type
/// (its serde mirror checks the declared depth against the lists).
pub fn read_architecture(path: &Path) -> Result<Architecture> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

/// Read a dataset CSV with header `x_1,...,x_d,y`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols[cols.len() - 1] != "y" {
        return Err(Error::parse(format!(
            "{}: header must be x_1,...,x_d,y",
            path.display()
        )));
    }
    let d = cols.len() - 1;
    for (j, c) in cols[..d].iter().enumerate() {
        let expect = format!("x_{}", j + 1);
        if *c != expect {
            return Err(Error::parse(format!(
                "{}: column {} is {c:?}, expected {expect:?}",
                path.display(),
                j + 1
            )));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split(',').map(str::parse::<f64>).collect();
        let vals = vals
            .map_err(|e| Error::parse(format!("{}: line {}: {e}", path.display(), lineno + 2)))?;
        if vals.len() != d + 1 {
            return Err(Error::parse(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                lineno + 2,
                vals.len(),
                d + 1
            )));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::parse(format!("{}: no samples", path.display())));
    }
    let n = rows.len();
    let xs = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let ys = DVector::from_fn(n, |i, _| rows[i][d]);
    Dataset::new(xs, ys)
}

/// Write a dataset CSV with the standard header. Float formatting uses the
/// shortest round-trip representation, so repeat runs are byte-identical.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let n = data.xs.nrows();
    let d = data.xs.ncols();
    let mut out = String::new();
    for j in 0..d {
        out.push_str(&format!("x_{},", j + 1));
    }
    out.push_str("y\n");
    for i in 0..n {
        for j in 0..d {
            out.push_str(&format!("{},", data.xs[(i, j)]));
        }
        out.push_str(&format!("{}\n", data.ys[i]));
    }
    fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Solution JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BracketDto {
    pub lo: f64,
    pub hi: f64,
    pub label: String,
}

impl From<&BracketInfo> for BracketDto {
    fn from(b: &BracketInfo) -> Self {
        BracketDto {
            lo: b.lo,
            hi: b.hi,
            label: b.label.clone(),
        }
    }
}

/// Self-describing solve output: the winning candidate with its assembled
/// parameters, plus the inputs it was computed from, so the file round-trips
/// through the moments and architecture readers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub architecture: Architecture,
    pub moments: MomentsFile,
    pub kind: String,
    /// `bias_free` when the minimum is over the zero-bias parameterization,
    /// `bias_aware` when bias terms were solved for (depth 1 with nonzero
    /// data means).
    pub family: String,
    pub b: f64,
    pub b_layers: Vec<f64>,
    pub loss: f64,
    pub loss_trivial: f64,
    pub degenerate: bool,
    /// Scalar stationarity residual at the returned `b` (0 is a perfect root).
    pub residual: f64,
    /// Analytic gradient norm at the returned parameters — the full-space
    /// stationarity witness.
    pub gradient_norm: f64,
    pub u: Vec<f64>,
    /// Per-layer weight matrices, row-major: `weights[i][r][c]`.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub signs: Vec<Vec<f64>>,
    pub bias_u: f64,
    /// Per-layer hidden bias vectors.
    pub biases: Vec<Vec<f64>>,
    pub bracket: Option<BracketDto>,
}

impl SolutionFile {
    pub fn new(
        arch: &Architecture,
        moments: &DataMoments,
        gm: &GlobalMinimum,
        bracket: Option<&BracketInfo>,
        residual: f64,
        gradient_norm: f64,
    ) -> Self {
        let w = &gm.winner;
        SolutionFile {
            architecture: arch.clone(),
            moments: MomentsFile::from_moments(moments),
            kind: format!("{:?}", w.kind).to_lowercase(),
            family: "bias_free".to_string(),
            b: w.b,
            b_layers: w.b_layers.clone(),
            loss: w.loss,
            loss_trivial: moments.ey2,
            degenerate: gm.degenerate,
            residual,
            gradient_norm,
            u: w.params.u.iter().copied().collect(),
            weights: matrices_row_major(&w.params),
            signs: w.signs.clone(),
            bias_u: w.params.bias_u,
            biases: bias_vectors(&w.params),
            bracket: bracket.map(BracketDto::from),
        }
    }

    /// Solution file for the bias-aware two-layer minimum. `loss_trivial` is
    /// the best zero-weight model *with* a free read-out bias, so the
    /// trivial-versus-nontrivial comparison stays within one family.
    pub fn from_bias(
        arch: &Architecture,
        moments: &DataMoments,
        sol: &BiasSolution,
        loss_trivial: f64,
        residual: f64,
    ) -> Self {
        let d0 = arch.input_dim() as f64;
        let d1 = arch.last_width();
        let nontrivial = sol.b > 0.0;
        let b_layers = if nontrivial {
            let row_norm = sol.params.ws[0].row(0).norm();
            vec![sol.b, row_norm / d0.sqrt()]
        } else {
            vec![0.0, 0.0]
        };
        SolutionFile {
            architecture: arch.clone(),
            moments: MomentsFile::from_moments(moments),
            kind: if nontrivial { "nontrivial" } else { "trivial" }.to_string(),
            family: "bias_aware".to_string(),
            b: sol.b,
            b_layers,
            loss: sol.loss,
            loss_trivial,
            degenerate: false,
            residual,
            gradient_norm: sol.gradient_norm,
            u: sol.params.u.iter().copied().collect(),
            weights: matrices_row_major(&sol.params),
            signs: vec![vec![1.0; d1]],
            bias_u: sol.params.bias_u,
            biases: bias_vectors(&sol.params),
            bracket: None,
        }
    }
}

fn matrices_row_major(params: &Params) -> Vec<Vec<Vec<f64>>> {
    params
        .ws
        .iter()
        .map(|m| {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
                .collect()
        })
        .collect()
}

fn bias_vectors(params: &Params) -> Vec<Vec<f64>> {
    params
        .bias_ws
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

/// Reproducibility record written next to every command's primary output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Snapshot of every parsed option of the invocation.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub artifact_version: String,
    pub created_unix_ms: u128,
    pub outputs: Vec<String>,
}

/// Write the manifest as `<primary>.manifest.json` and return its path.
pub fn write_manifest(
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    outputs: &[&Path],
) -> Result<PathBuf> {
    let primary = outputs
        .first()
        .ok_or_else(|| Error::config("manifest needs at least one output"))?;
    let manifest = RunManifest {
        command: command.to_string(),
        config,
        seed,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        created_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = PathBuf::from(format!("{}.manifest.json", primary.display()));
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Serialize any value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
