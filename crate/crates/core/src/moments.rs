//! Population moments of the training data.
//!
//! Every objective in this crate is an exact expectation over the data
//! distribution, so the only thing the solver ever needs from the data is a
//! small set of second-order moments: `E[xx^T]`, `E[xy]`, `E[y^2]`, and (for
//! bias-aware problems) the first moments `E[x]`, `E[y]`. [`DataMoments`]
//! carries those, either computed from a finite dataset (the empirical
//! distribution) or constructed directly for synthetic studies.
//!
//! [`SpectralData`] is the eigenbasis view of `E[xx^T]` used by the scalar
//! reductions: in the rotated coordinates the input covariance is diagonal
//! and all matrix solves become per-eigenvalue divisions.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative tolerance for symmetry checks on supplied moment matrices.
const SYMMETRY_REL_TOL: f64 = 1e-9;

/// Eigenvalues of `E[xx^T]` in `[-CLAMP_REL_TOL * a_max, 0)` are treated as
/// exact zeros (round-off from moment accumulation); anything more negative
/// is a genuinely indefinite matrix and is an error.
const CLAMP_REL_TOL: f64 = 1e-12;

/// A finite dataset of `n` inputs in `R^d` with scalar targets.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Inputs, one row per sample (`n x d`).
    pub xs: DMatrix<f64>,
    /// Targets, one per sample.
    pub ys: DVector<f64>,
}

impl Dataset {
    /// Bundle inputs and targets, checking that the sample counts agree and
    /// that every entry is finite.
    pub fn new(xs: DMatrix<f64>, ys: DVector<f64>) -> Result<Self> {
        if xs.nrows() != ys.len() {
            return Err(Error::config(format!(
                "dataset has {} input rows but {} targets",
                xs.nrows(),
                ys.len()
            )));
        }
        if xs.nrows() == 0 {
            return Err(Error::config("dataset must contain at least one sample"));
        }
        if xs.iter().any(|v| !v.is_finite()) || ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse("dataset contains non-finite values"));
        }
        Ok(Dataset { xs, ys })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.xs.nrows()
    }

    /// True when the dataset holds no samples (never, post-construction).
    pub fn is_empty(&self) -> bool {
        self.xs.nrows() == 0
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }

    /// Exact moments of the empirical distribution (uniform weight `1/n` on
    /// each sample).
    pub fn moments(&self) -> DataMoments {
        compute_moments(&self.xs, &self.ys)
    }
}

/// Second-order population moments of a joint distribution over `(x, y)`.
///
/// These are the complete sufficient statistics for every loss in this
/// crate: the exact objective of a stochastic linear network depends on the
/// data only through these quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMoments {
    /// Input dimension `d`.
    pub dim: usize,
    /// Input second moment `E[xx^T]` (symmetric positive semidefinite).
    pub a0: DMatrix<f64>,
    /// Input-target correlation `E[xy]`.
    pub exy: DVector<f64>,
    /// Target second moment `E[y^2]`.
    pub ey2: f64,
    /// Input mean `E[x]` (used only by bias-aware objectives).
    pub mean_x: DVector<f64>,
    /// Target mean `E[y]` (used only by bias-aware objectives).
    pub mean_y: f64,
}

impl DataMoments {
    /// Construct from explicit parts, validating shapes and symmetry.
    ///
    /// The stored matrix is exactly symmetrized (`(A + A^T)/2`) after the
    /// check, so downstream code may rely on exact symmetry.
    pub fn new(
        a0: DMatrix<f64>,
        exy: DVector<f64>,
        ey2: f64,
        mean_x: DVector<f64>,
        mean_y: f64,
    ) -> Result<Self> {
        let dim = a0.nrows();
        if dim == 0 {
            return Err(Error::config("input dimension must be at least 1"));
        }
        if a0.ncols() != dim {
            return Err(Error::config(format!(
                "E[xx^T] must be square, got {}x{}",
                a0.nrows(),
                a0.ncols()
            )));
        }
        if exy.len() != dim || mean_x.len() != dim {
            return Err(Error::config(format!(
                "moment vectors must have length {} (got E[xy]: {}, E[x]: {})",
                dim,
                exy.len(),
                mean_x.len()
            )));
        }
        if ey2 < 0.0 || !ey2.is_finite() {
            return Err(Error::config(format!(
                "E[y^2] must be finite and >= 0, got {ey2}"
            )));
        }
        let scale = a0.amax().max(1e-300);
        let asym = (&a0 - a0.transpose()).amax();
        if asym > SYMMETRY_REL_TOL * scale {
            return Err(Error::config(format!(
                "E[xx^T] is not symmetric (max asymmetry {asym:.3e} vs scale {scale:.3e})"
            )));
        }
        let a0 = (&a0 + a0.transpose()) * 0.5;
        Ok(DataMoments {
            dim,
            a0,
            exy,
            ey2,
            mean_x,
            mean_y,
        })
    }

    /// Moments with zero means: convenience for centered problems where the
    /// bias machinery is irrelevant.
    pub fn centered(a0: DMatrix<f64>, exy: DVector<f64>, ey2: f64) -> Result<Self> {
        let d = a0.nrows();
        DataMoments::new(a0, exy, ey2, DVector::zeros(d), 0.0)
    }

    /// Norm of the input-target correlation, `||E[xy]||`.
    pub fn exy_norm(&self) -> f64 {
        self.exy.norm()
    }

    /// If `E[xx^T]` is a multiple of the identity (within `rel_tol` of its
    /// mean diagonal entry, element-wise), return that multiple.
    pub fn isotropic_scale(&self, rel_tol: f64) -> Option<f64> {
        let sigma_x2 = self.a0.trace() / self.dim as f64;
        if sigma_x2 <= 0.0 {
            return None;
        }
        let mut max_dev: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { sigma_x2 } else { 0.0 };
                max_dev = max_dev.max((self.a0[(i, j)] - target).abs());
            }
        }
        (max_dev <= rel_tol * sigma_x2).then_some(sigma_x2)
    }

    /// Eigendecomposition of `E[xx^T]` with the correlation vector expressed
    /// in the eigenbasis. Fails if the matrix is meaningfully indefinite.
    pub fn spectral(&self) -> Result<SpectralData> {
        SpectralData::from_moments(self)
    }

    /// Whiten the input coordinates so that `E[xx^T]` becomes exactly
    /// `target_scale * I`, returning the transformed moments together with
    /// the linear map `T` that was applied to `x` (`x' = T x`).
    ///
    /// Requires `E[xx^T]` to be strictly positive definite. Targets are
    /// untouched; the transformed correlation is `T E[xy]` because `T` is
    /// symmetric.
    pub fn whiten(&self, target_scale: f64) -> Result<(DataMoments, DMatrix<f64>)> {
        if target_scale <= 0.0 || !target_scale.is_finite() {
            return Err(Error::config(format!(
                "whitening target scale must be positive and finite, got {target_scale}"
            )));
        }
        let sd = self.spectral()?;
        let a_max = sd.eigenvalues[0];
        let floor = a_max * 1e-12;
        if sd.eigenvalues.iter().any(|&a| a <= floor) {
            return Err(Error::numerical(
                "whitening requires a strictly positive definite E[xx^T]; \
                 the smallest eigenvalue is zero or numerically negligible"
                    .to_string(),
            ));
        }
        // T = sqrt(target_scale) * A^{-1/2}, built in the eigenbasis.
        let inv_sqrt: DVector<f64> = sd.eigenvalues.map(|a| (target_scale / a).sqrt());
        let t = &sd.rotation * DMatrix::from_diagonal(&inv_sqrt) * sd.rotation.transpose();
        let dim = self.dim;
        let whitened = DataMoments {
            dim,
            a0: DMatrix::from_diagonal_element(dim, dim, target_scale),
            exy: &t * &self.exy,
            ey2: self.ey2,
            mean_x: &t * &self.mean_x,
            mean_y: self.mean_y,
        };
        Ok((whitened, t))
    }
}

/// Eigenbasis view of the input second moment.
///
/// Columns of `rotation` are orthonormal eigenvectors `q_i` of `E[xx^T]`,
/// ordered by descending eigenvalue, so that
/// `E[xx^T] = rotation * diag(eigenvalues) * rotation^T`.
/// `exy_rotated = rotation^T E[xy]` is the correlation in that basis.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Eigenvalues of `E[xx^T]`, descending, clamped to be non-negative.
    pub eigenvalues: DVector<f64>,
    /// Orthogonal matrix whose columns are the corresponding eigenvectors.
    pub rotation: DMatrix<f64>,
    /// `E[xy]` expressed in the eigenbasis.
    pub exy_rotated: DVector<f64>,
}

impl SpectralData {
    fn from_moments(m: &DataMoments) -> Result<Self> {
        let eig = m.a0.clone().symmetric_eigen();
        let a_max = eig.eigenvalues.amax();
        // Sort descending, carrying the eigenvector columns along.
        let mut order: Vec<usize> = (0..m.dim).collect();
        order.sort_by(|&i, &j| {
            eig.eigenvalues[j]
                .partial_cmp(&eig.eigenvalues[i])
                .expect("eigenvalues are finite")
        });
        let mut eigenvalues = DVector::zeros(m.dim);
        let mut rotation = DMatrix::zeros(m.dim, m.dim);
        for (dst, &src) in order.iter().enumerate() {
            let mut a = eig.eigenvalues[src];
            if a < 0.0 {
                if a < -CLAMP_REL_TOL * a_max.max(1e-300) {
                    return Err(Error::numerical(format!(
                        "E[xx^T] has a negative eigenvalue {a:.6e} \
                         (largest is {a_max:.6e}); the matrix is not a valid second moment"
                    )));
                }
                a = 0.0;
            }
            eigenvalues[dst] = a;
            rotation.set_column(dst, &eig.eigenvectors.column(src));
        }
        let exy_rotated = rotation.transpose() * &m.exy;
        Ok(SpectralData {
            eigenvalues,
            rotation,
            exy_rotated,
        })
    }

    /// Largest eigenvalue of `E[xx^T]`.
    pub fn a_max(&self) -> f64 {
        self.eigenvalues[0]
    }

    /// Smallest eigenvalue of `E[xx^T]` (zero when rank-deficient).
    pub fn a_min(&self) -> f64 {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }
}

/// Exact moments of the empirical distribution of a dataset: uniform weight
/// `1/n` per sample (no Bessel correction — these are moments of a known
/// finite distribution, not estimates of a larger one).
pub fn compute_moments(xs: &DMatrix<f64>, ys: &DVector<f64>) -> DataMoments {
    let n = xs.nrows();
    let d = xs.ncols();
    assert_eq!(n, ys.len(), "sample count mismatch");
    assert!(n > 0, "empty dataset");
    let inv_n = 1.0 / n as f64;
    let mut a0 = xs.transpose() * xs * inv_n;
    // Exact symmetry despite floating-point accumulation order.
    a0 = (&a0 + a0.transpose()) * 0.5;
    let exy = xs.transpose() * ys * inv_n;
    let ey2 = ys.dot(ys) * inv_n;
    let mean_x = xs.row_sum().transpose() * inv_n;
    let mean_y = ys.sum() * inv_n;
    DataMoments {
        dim: d,
        a0,
        exy,
        ey2,
        mean_x,
        mean_y,
    }
}

/// Draw a synthetic regression dataset: `x ~ N(0, I_d)` and `y = v . x`
/// plus optional independent Gaussian noise of standard deviation
/// `noise_std`. The teacher `v` is a fixed direction determined by the seed,
/// rescaled to `teacher_norm`.
///
/// Deterministic for a given `(dim, n, teacher_norm, noise_std, seed)`.
pub fn gen_linear_dataset(
    dim: usize,
    n: usize,
    teacher_norm: f64,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, DVector<f64>)> {
    if dim == 0 || n == 0 {
        return Err(Error::config("dataset dimensions must be positive"));
    }
    if teacher_norm < 0.0 || noise_std < 0.0 {
        return Err(Error::config(
            "teacher norm and noise level must be non-negative",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    // Teacher direction first so it is independent of n.
    let mut v = DVector::from_fn(dim, |_, _| normal.sample(&mut rng));
    let norm = v.norm();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v /= norm;
    }
    v *= teacher_norm;
    let mut xs = DMatrix::zeros(n, dim);
    let mut ys = DVector::zeros(n);
    for i in 0..n {
        for j in 0..dim {
            xs[(i, j)] = normal.sample(&mut rng);
        }
        let noise: f64 = if noise_std > 0.0 {
            let z: f64 = normal.sample(&mut rng);
            z * noise_std
        } else {
            0.0
        };
        ys[i] = xs.row(i).transpose().dot(&v) + noise;
    }
    Ok((Dataset::new(xs, ys)?, v))
}
