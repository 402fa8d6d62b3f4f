//! Landscape classification: which solution is the global minimum, what the
//! origin looks like (minimum vs saddle), and how the answer scales with
//! depth and initialization.
//!
//! Depth 1 admits an exact dichotomy: the nontrivial solution wins precisely
//! when `||E[xy]||^2 > gamma_u gamma_w`. Deeper networks have provable
//! sufficient conditions on each side (a nonexistence bound keyed to the
//! smallest input-moment eigenvalue, an existence bound keyed to the largest,
//! and a stronger bound certifying that a nontrivial solution is globally
//! optimal) with an indeterminate band between them; the exact solver closes
//! the band by direct loss comparison, and — for any depth at least 2 — the
//! origin is always a local minimum with an exactly diagonal Hessian, so a
//! nontrivial winner implies a bad minimum at zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, HomogeneousArchitecture};
use crate::error::Result;
use crate::moments::DataMoments;
use crate::solver::{global_minimum, CandidateKind};

/// The four possible classifications of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    /// The all-zero solution is the global minimum.
    TrivialGlobal,
    /// A nontrivial solution is the global minimum and the origin is not a
    /// local minimum (depth-1 saddle regime).
    NontrivialGlobal,
    /// A nontrivial solution is the global minimum while the origin is
    /// simultaneously a local minimum (depth >= 2 whenever the nontrivial
    /// side wins).
    BadMinimumAtZeroWithNontrivialGlobal,
    /// The bounds alone cannot decide and the solver was not consulted.
    Indeterminate,
}

impl RegimeLabel {
    /// Stable snake_case name (matches the serialized form).
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeLabel::TrivialGlobal => "trivial_global",
            RegimeLabel::NontrivialGlobal => "nontrivial_global",
            RegimeLabel::BadMinimumAtZeroWithNontrivialGlobal => {
                "bad_minimum_at_zero_with_nontrivial_global"
            }
            RegimeLabel::Indeterminate => "indeterminate",
        }
    }
}

/// Everything `classify` evaluated, with margins reported as LHS − RHS of
/// the corresponding inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    /// Final classification.
    pub label: RegimeLabel,
    /// `||E[xy]||^2 - gamma_u gamma_w` — the exact depth-1 threshold
    /// (present only for depth 1).
    pub two_layer_threshold: Option<f64>,
    /// Margin of the nonexistence bound (smallest-eigenvalue side): negative
    /// means no nontrivial stationary point exists. Present for homogeneous
    /// depth >= 1 with full-rank input moment.
    pub nonexistence_bound: Option<f64>,
    /// Margin of the existence bound (largest-eigenvalue side): nonnegative
    /// means nontrivial stationary points exist.
    pub existence_bound: Option<f64>,
    /// Margin of the global-optimality bound: nonnegative means a nontrivial
    /// solution is the global minimum.
    pub global_min_bound: Option<f64>,
    /// Closed interval guaranteed to contain every nontrivial root (depth
    /// >= 2, homogeneous, full-rank input moment).
    pub b_bracket: Option<(f64, f64)>,
    /// True when the label came from an exact loss comparison by the solver
    /// rather than from the bounds.
    pub resolved_by_solver: bool,
}

/// The Hessian of the expected loss at the all-zero point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianSummary {
    /// True when the Hessian is exactly diagonal (always for depth >= 2;
    /// for depth 1 only without signal).
    pub is_diagonal: bool,
    /// Diagonal entries in flattened coordinate order (read-out first, then
    /// each weight matrix in column-major order).
    pub diagonal_entries: DVector<f64>,
    /// Smallest eigenvalue.
    pub min_eigenvalue: f64,
    /// True when the smallest eigenvalue exceeds 1e-10.
    pub definite: bool,
    /// Full Hessian including cross terms (depth 1 only; deeper Hessians are
    /// their diagonal).
    pub full_matrix: Option<DMatrix<f64>>,
    /// Second derivative along the rank-one solution family at 0 (depth 1
    /// only): `2 d_1 (gamma_u - ||E[xy]||^2 / gamma_w)`.
    pub restricted_curvature: Option<f64>,
}

/// Basin-of-attraction estimate around the origin versus typical
/// initialization scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinRadius {
    /// Estimated radius below which gradient flow cannot escape the trivial
    /// solution.
    pub radius: f64,
    /// Typical per-weight initialization radius `1/sqrt(d_0)`.
    pub init_scale: f64,
    /// Whether typical initialization starts inside the trivial basin.
    pub traps_typical_init: bool,
}

/// Signal-strength threshold for learnability at one depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthThreshold {
    /// Number of hidden layers.
    pub depth: usize,
    /// Exact threshold on `||E[xy]||^2` from the existence bound: below it,
    /// that bound cannot certify a nontrivial stationary point.
    pub exact_threshold: f64,
    /// Exponential approximation `4 d_0^2 a_max gamma e^{D log((sigma^2+d_0)/d_0)}`.
    pub approx_threshold: f64,
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

/// The eigenvalue-keyed bound function: nontrivial stationary points are
/// impossible when `k_bound(a_min) < gamma` and guaranteed when
/// `k_bound(a_max) >= gamma`. Decreasing in `a`.
fn k_bound(h: &HomogeneousArchitecture, m: f64, a: f64) -> f64 {
    let d = h.depth as f64;
    let d0 = h.dim as f64;
    let inner = (d - 1.0) * m / (2.0 * d * d0 * (h.noise_var + d0).powi(h.depth as i32) * a);
    (d + 1.0) / (2.0 * d) * m * d0.powi(h.depth as i32 - 1) * inner.powf((d - 1.0) / (d + 1.0))
}

/// Threshold on `||E[xy]||^2` above which a nontrivial solution is certified
/// to be the global minimum. Reduces to `gamma^2` at depth 1.
fn global_min_threshold(h: &HomogeneousArchitecture, a_max: f64) -> f64 {
    let d = h.depth as f64;
    let d0 = h.dim as f64;
    h.gamma.powf((d + 1.0) / d)
        * d
        * d
        * (h.noise_var + d0).powi(h.depth as i32 - 1)
        * a_max.powf((d - 1.0) / d)
        / (d0.powi(h.depth as i32 - 1) * (d - 1.0).powf((d - 1.0) / d))
}

/// Closed root bracket for homogeneous depth >= 2 with full-rank input
/// moment: `[(gamma/m)^{1/(D-1)}/d_0, (m/(d_0 (sigma^2+d_0)^D a_min))^{1/(D+1)}]`.
fn root_bracket(h: &HomogeneousArchitecture, m: f64, a_min: f64) -> (f64, f64) {
    let d = h.depth as f64;
    let d0 = h.dim as f64;
    let lo = (h.gamma / m).powf(1.0 / (d - 1.0)) / d0;
    let hi = (m / (d0 * (h.noise_var + d0).powi(h.depth as i32) * a_min)).powf(1.0 / (d + 1.0));
    (lo, hi)
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Evaluate every applicable condition and classify the instance.
///
/// Depth 1 is decided exactly by the threshold `||E[xy]||^2` vs
/// `gamma_u gamma_w`. Deeper homogeneous instances are decided by the bounds
/// when one of them fires; otherwise, with `use_solver`, by an exact loss
/// comparison (and a nontrivial winner at depth >= 2 always coexists with a
/// local minimum at zero). Without the solver, undecided instances are
/// labeled indeterminate. Non-homogeneous deep architectures carry no bounds
/// and go straight to the solver.
pub fn classify(
    arch: &Architecture,
    moments: &DataMoments,
    use_solver: bool,
) -> Result<RegimeReport> {
    let sd = moments.spectral()?;
    let m = moments.exy_norm();
    let m2 = m * m;
    let homog = arch.as_homogeneous();

    let mut report = RegimeReport {
        label: RegimeLabel::Indeterminate,
        two_layer_threshold: None,
        nonexistence_bound: None,
        existence_bound: None,
        global_min_bound: None,
        b_bracket: None,
        resolved_by_solver: false,
    };

    if let Some(h) = &homog {
        let a_min = sd.a_min();
        let a_max = sd.a_max();
        // The nonexistence side needs a_min > 0; with a rank-deficient input
        // moment it is not applicable.
        if a_min > 0.0 {
            report.nonexistence_bound = Some(k_bound(h, m, a_min) - h.gamma);
        }
        report.existence_bound = Some(k_bound(h, m, a_max) - h.gamma);
        report.global_min_bound = Some(m2 - global_min_threshold(h, a_max));
        if arch.depth() >= 2 && a_min > 0.0 && m > 0.0 {
            report.b_bracket = Some(root_bracket(h, m, a_min));
        }
    }

    if arch.depth() == 1 {
        let threshold = m2 - arch.gamma_u() * arch.gamma(1);
        report.two_layer_threshold = Some(threshold);
        report.label = if threshold > 0.0 {
            RegimeLabel::NontrivialGlobal
        } else {
            RegimeLabel::TrivialGlobal
        };
        return Ok(report);
    }

    if let Some(x) = report.nonexistence_bound {
        if x < 0.0 {
            report.label = RegimeLabel::TrivialGlobal;
            return Ok(report);
        }
    }
    if let Some(x) = report.global_min_bound {
        if x >= 0.0 {
            report.label = RegimeLabel::BadMinimumAtZeroWithNontrivialGlobal;
            return Ok(report);
        }
    }
    if use_solver {
        let gm = global_minimum(arch, moments)?;
        report.resolved_by_solver = true;
        report.label = match gm.winner.kind {
            CandidateKind::Trivial => RegimeLabel::TrivialGlobal,
            // Depth >= 2: the origin is always a local minimum (diagonal
            // positive Hessian), so a nontrivial winner means a bad minimum
            // sits at zero.
            CandidateKind::Nontrivial => RegimeLabel::BadMinimumAtZeroWithNontrivialGlobal,
        };
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Hessian at the origin
// ---------------------------------------------------------------------------

/// Exact Hessian of the expected loss at the all-zero point, in flattened
/// coordinates (read-out first, then weight matrices in column-major order,
/// biases excluded).
///
/// For depth >= 2 every data term has parameter degree at least 3, so the
/// Hessian is exactly the regularizer's: diagonal with entries `2 gamma_u`
/// and `2 gamma_i`. For depth 1 the cross term `-2 u^T W E[xy]` survives,
/// producing an indefinite matrix exactly when `||E[xy]||^2 > gamma_u gamma_w`.
pub fn hessian_at_origin(arch: &Architecture, moments: &DataMoments) -> Result<HessianSummary> {
    let d_last = arch.last_width();
    let mut diag = Vec::new();
    for _ in 0..d_last {
        diag.push(2.0 * arch.gamma_u());
    }
    for i in 1..=arch.depth() {
        let count = arch.width(i) * arch.fan_in(i);
        for _ in 0..count {
            diag.push(2.0 * arch.gamma(i));
        }
    }
    let diagonal_entries = DVector::from_vec(diag);

    if arch.depth() >= 2 {
        let min_eigenvalue = diagonal_entries.min();
        return Ok(HessianSummary {
            is_diagonal: true,
            min_eigenvalue,
            definite: min_eigenvalue > 1e-10,
            diagonal_entries,
            full_matrix: None,
            restricted_curvature: None,
        });
    }

    // Depth 1: assemble the full matrix. Coordinates: u_j at j, then W_{jk}
    // (row j, column k) at d_1 + k d_1 + j.
    let d1 = arch.width(1);
    let d0 = arch.input_dim();
    let n = d1 + d1 * d0;
    let mut h = DMatrix::zeros(n, n);
    for j in 0..d1 {
        h[(j, j)] = 2.0 * arch.gamma_u();
    }
    for k in 0..d0 {
        for j in 0..d1 {
            let idx = d1 + k * d1 + j;
            h[(idx, idx)] = 2.0 * arch.gamma(1);
            h[(j, idx)] = -2.0 * moments.exy[k];
            h[(idx, j)] = -2.0 * moments.exy[k];
        }
    }
    let m2 = moments.exy.norm_squared();
    let is_diagonal = m2 == 0.0;
    let min_eigenvalue = h.clone().symmetric_eigen().eigenvalues.min();
    let restricted = 2.0 * d1 as f64 * (arch.gamma_u() - m2 / arch.gamma(1));
    Ok(HessianSummary {
        is_diagonal,
        diagonal_entries,
        min_eigenvalue,
        definite: min_eigenvalue > 1e-10,
        full_matrix: Some(h),
        restricted_curvature: Some(restricted),
    })
}

// ---------------------------------------------------------------------------
// Basin radius and learnability thresholds
// ---------------------------------------------------------------------------

/// Estimated radius of the trivial basin: `(gamma/||E[xy]||)^{1/(D-1)}/d_0`
/// for depth >= 2. Depth 1 degenerates: the basin is empty (radius 0) when
/// the signal beats `gamma`, and everything (infinite) otherwise.
pub fn origin_basin_radius(h: &HomogeneousArchitecture, moments: &DataMoments) -> f64 {
    let m = moments.exy_norm();
    let d0 = h.dim as f64;
    if h.depth == 1 {
        return if m >= h.gamma { 0.0 } else { f64::INFINITY };
    }
    if m == 0.0 {
        return f64::INFINITY;
    }
    (h.gamma / m).powf(1.0 / (h.depth as f64 - 1.0)) / d0
}

/// [`origin_basin_radius`] compared against the typical initialization
/// radius `1/sqrt(d_0)`.
pub fn origin_basin_report(h: &HomogeneousArchitecture, moments: &DataMoments) -> BasinRadius {
    let radius = origin_basin_radius(h, moments);
    let init_scale = 1.0 / (h.dim as f64).sqrt();
    BasinRadius {
        radius,
        init_scale,
        traps_typical_init: radius > init_scale,
    }
}

/// Per-depth learnability thresholds on `||E[xy]||^2` for a homogeneous
/// family: the exact value at which the existence bound starts to certify a
/// nontrivial stationary point, and its exponential approximation. The
/// family's `noise_var`, `gamma`, and `dim` are shared across depths; the
/// input-moment spectrum supplies `a_max`.
pub fn asymptotic_learnability(
    family: &HomogeneousArchitecture,
    moments: &DataMoments,
    depths: &[usize],
) -> Result<Vec<DepthThreshold>> {
    let sd = moments.spectral()?;
    let a_max = sd.a_max();
    let d0 = family.dim as f64;
    let mut out = Vec::with_capacity(depths.len());
    for &depth in depths {
        let d = depth as f64;
        // Solve k_bound(a_max) = gamma for m: the bound scales as
        // m^{2D/(D+1)}, so the threshold on m^2 is the bracketed quantity
        // raised to (D+1)/D.
        let exact = (family.gamma
            * (2.0 * d / (d + 1.0))
            * d0.powi(1 - depth as i32)
            * ((2.0 * d * d0 * (family.noise_var + d0).powi(depth as i32) * a_max) / (d - 1.0))
                .powf((d - 1.0) / (d + 1.0)))
        .powf((d + 1.0) / d);
        let approx =
            4.0 * d0 * d0 * a_max * family.gamma * (d * ((family.noise_var + d0) / d0).ln()).exp();
        out.push(DepthThreshold {
            depth,
            exact_threshold: exact,
            approx_threshold: approx,
        });
    }
    Ok(out)
}
