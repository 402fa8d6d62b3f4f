//! Exact minimization over the solution family of the regularized objective.
//!
//! Every stationary point of the expected loss that can be a global minimum
//! lies on a one-parameter family: rank-one layers tied together by the
//! inter-layer balance conditions, scaled by a single nonnegative scalar `b`.
//! Minimization therefore reduces to a scalar root-finding problem on a
//! residual function of `b`, followed by an exact loss comparison between the
//! trivial solution (`b = 0`, all weights zero) and the assembled nontrivial
//! candidates.
//!
//! The residual is evaluated in the eigenbasis of `E[xx^T]`, where the matrix
//! inverse in the first-layer formula diagonalizes. For depth 1 the residual
//! is strictly decreasing in `b^2`, so a sign check at `b = 0` decides
//! existence and bisection finds the unique positive root. For deeper
//! networks the solver brackets all roots with provable decay bounds (plus
//! the published bracket for homogeneous architectures), scans the bracket
//! geometrically, and bisects every sign change.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, LOG_SPACE_DEPTH};
use crate::error::{Error, Result};
use crate::loss::{expected_loss, loss_gradient};
use crate::moments::DataMoments;
use crate::params::Params;

/// Tunable tolerances and search sizes for the scalar root search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Number of geometrically spaced scan points across the root bracket.
    pub scan_points: usize,
    /// A root must satisfy `|residual| <= root_tol_factor * scale`, where
    /// `scale` is the characteristic residual magnitude of the instance.
    pub root_tol_factor: f64,
    /// Roots closer than this relative spacing are merged.
    pub dedup_rel: f64,
    /// Maximum number of bracket doublings when no closed-form upper bound
    /// applies (rank-deficient `E[xx^T]` with signal in the null directions).
    pub max_doublings: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            scan_points: 10_000,
            root_tol_factor: 1e-12,
            dedup_rel: 1e-8,
            max_doublings: 200,
        }
    }
}

/// Whether a candidate is the all-zero solution or a scaled rank-one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    /// `b = 0`: every weight is zero and the loss is `E[y^2]`.
    Trivial,
    /// `b > 0`: assembled rank-one chain.
    Nontrivial,
}

/// A fully assembled stationary-family member with its exact loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionCandidate {
    /// Trivial or nontrivial.
    pub kind: CandidateKind,
    /// The scalar parameterizing the solution family (layer-2 magnitude for
    /// depth >= 2; read-out magnitude for depth 1).
    pub b: f64,
    /// Per-layer magnitudes `[b_u, b_D, ..., b_2, b_1]` implied by the
    /// balance conditions (`b_1` is the first-layer row magnitude over
    /// `sqrt(d_0)`).
    pub b_layers: Vec<f64>,
    /// Sign vertices `r_1..r_D`, entries in `{-1, +1}`.
    pub signs: Vec<Vec<f64>>,
    /// The assembled parameters.
    pub params: Params,
    /// Exact expected loss at `params`.
    pub loss: f64,
}

/// The scan interval used by the root search, for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketInfo {
    /// Lower end of the scanned interval.
    pub lo: f64,
    /// Upper end of the scanned interval.
    pub hi: f64,
    /// How the interval was obtained (proven bound, published bracket, or
    /// doubling heuristic).
    pub label: String,
}

/// Result of the exact global-minimum computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalMinimum {
    /// The minimum-loss candidate (ties go to the trivial solution).
    pub winner: SolutionCandidate,
    /// All candidates considered: the trivial solution first, then one
    /// candidate per root of the scalar residual, in increasing `b`.
    pub candidates: Vec<SolutionCandidate>,
    /// True when the best nontrivial candidate ties the trivial loss within
    /// 1e-12 relative; the winner is then the trivial solution.
    pub degenerate: bool,
    /// The scan interval used by the root search, when a search ran.
    pub bracket: Option<BracketInfo>,
}

/// Two-layer solution with bias terms, from the scalar bias fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSolution {
    /// Assembled parameters including `bias_u` and the hidden-layer bias.
    pub params: Params,
    /// The read-out magnitude scalar.
    pub b: f64,
    /// The first-layer normal matrix `b^2 (sigma^2 + d_1) E[xx^T] + gamma_w I`
    /// at the returned `b`.
    pub m_matrix: DMatrix<f64>,
    /// Scalar auxiliaries of the bias fixed point at the returned `b`: the
    /// four coefficients (row major) of the reduced `2 x 2` linear system in
    /// `(bias_u, hidden bias)` left after eliminating the weights — row one
    /// is hidden-bias stationarity, row two read-out-bias stationarity.
    pub s1: f64,
    /// See `s1`.
    pub s2: f64,
    /// See `s1`.
    pub s3: f64,
    /// See `s1`.
    pub s4: f64,
    /// Exact expected loss at `params`.
    pub loss: f64,
    /// Analytic gradient norm at `params` (stationarity witness).
    pub gradient_norm: f64,
}

// ---------------------------------------------------------------------------
// Scalarized residuals
// ---------------------------------------------------------------------------

/// The instance reduced to the eigenbasis of `E[xx^T]`: eigenvalues `a`,
/// squared signal components `e2`, and their sum `m2 = ||E[xy]||^2`.
struct Scalarized {
    a: Vec<f64>,
    e2: Vec<f64>,
    m2: f64,
}

impl Scalarized {
    fn new(moments: &DataMoments) -> Result<Self> {
        let sd = moments.spectral()?;
        let a: Vec<f64> = sd.eigenvalues.iter().copied().collect();
        let e2: Vec<f64> = sd.exy_rotated.iter().map(|e| e * e).collect();
        let m2 = e2.iter().sum();
        Ok(Scalarized { a, e2, m2 })
    }

    /// Smallest eigenvalue that carries signal (used for upper brackets; the
    /// residual's decay is governed by the slowest-shrinking signal term).
    fn a_min_signal(&self) -> f64 {
        let floor = 1e-18 * self.m2;
        self.a
            .iter()
            .zip(&self.e2)
            .filter(|(_, &e2)| e2 > floor)
            .map(|(&a, _)| a)
            .fold(f64::INFINITY, f64::min)
    }

    /// True when a signal component sits (numerically) in the null space of
    /// `E[xx^T]`; no finite decay bound exists then.
    fn has_null_signal(&self) -> bool {
        let a_max = self.a.first().copied().unwrap_or(0.0);
        let floor = 1e-18 * self.m2;
        self.a
            .iter()
            .zip(&self.e2)
            .any(|(&a, &e2)| e2 > floor && a <= 1e-13 * a_max)
    }
}

/// Scalar constants of the depth-`D` residual.
struct DeepConsts {
    depth: usize,
    mu: f64,
    s2: f64,
    c0: f64,
    sig_d: f64,  // sigma_1^2 + d_1
    gamma1: f64, // first-layer decay
    rho: f64,    // coefficient of b^2 on the balance side
}

impl DeepConsts {
    fn new(arch: &Architecture) -> Self {
        let agg = arch.aggregate_constants();
        let d1 = arch.width(1) as f64;
        let rho = if arch.depth() >= 2 {
            arch.gamma(2) * arch.width(2) as f64 / arch.gamma(1)
        } else {
            arch.gamma_u() / arch.gamma(1)
        };
        DeepConsts {
            depth: arch.depth(),
            mu: agg.mu,
            s2: agg.s2,
            c0: agg.c0,
            sig_d: arch.noise_var(1) + d1,
            gamma1: arch.gamma(1),
            rho,
        }
    }

    fn q(&self, b: f64) -> f64 {
        pow_depth(b, self.depth) * self.c0
    }
}

fn pow_depth(b: f64, depth: usize) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    if depth >= LOG_SPACE_DEPTH {
        (depth as f64 * b.ln()).exp()
    } else {
        b.powi(depth as i32)
    }
}

fn log_add(x: f64, y: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `sum_i e2_i * (q mu / (q^2 s2 sig_d a_i + gamma1))^2`, evaluated stably
/// for any magnitude of `q`.
fn deep_lhs(q: f64, c: &DeepConsts, sc: &Scalarized) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    let kappa = q * q * c.s2 * c.sig_d;
    let num = q * c.mu;
    if num.is_finite() && kappa.is_finite() {
        let mut sum = 0.0;
        for (&a, &e2) in sc.a.iter().zip(&sc.e2) {
            let r = num / (kappa * a + c.gamma1);
            sum += e2 * r * r;
        }
        sum
    } else {
        // Log-space fallback for magnitudes beyond f64 range.
        let ln_q = q.ln();
        let ln_kappa = 2.0 * ln_q + (c.s2 * c.sig_d).ln();
        let ln_num = ln_q + c.mu.ln();
        let mut sum = 0.0;
        for (&a, &e2) in sc.a.iter().zip(&sc.e2) {
            if e2 == 0.0 {
                continue;
            }
            let ln_den = if a > 0.0 {
                log_add(ln_kappa + a.ln(), c.gamma1.ln())
            } else {
                c.gamma1.ln()
            };
            sum += (2.0 * (ln_num - ln_den) + e2.ln()).exp();
        }
        sum
    }
}

fn deep_residual(b: f64, c: &DeepConsts, sc: &Scalarized) -> f64 {
    deep_lhs(c.q(b), c, sc) - c.rho * b * b
}

fn two_layer_residual(b: f64, sig_d: f64, gamma_u: f64, gamma_w: f64, sc: &Scalarized) -> f64 {
    let t = b * b * sig_d;
    let mut sum = 0.0;
    for (&a, &e2) in sc.a.iter().zip(&sc.e2) {
        let m = t * a + gamma_w;
        sum += e2 / (m * m);
    }
    sum - gamma_u / gamma_w
}

/// Residual of the depth-1 stationarity condition: the squared norm of the
/// solved first-layer row, minus `gamma_u / gamma_w`. Strictly decreasing in
/// `b^2`; a positive root exists iff the value at `b = 0` is positive, i.e.
/// iff `||E[xy]||^2 > gamma_u * gamma_w`.
pub fn residual_two_layer(b: f64, arch: &Architecture, moments: &DataMoments) -> Result<f64> {
    if arch.depth() != 1 {
        return Err(Error::config(format!(
            "the two-layer residual applies to depth 1, got depth {}",
            arch.depth()
        )));
    }
    check_dims(arch, moments)?;
    let sc = Scalarized::new(moments)?;
    let sig_d = arch.noise_var(1) + arch.width(1) as f64;
    Ok(two_layer_residual(
        b,
        sig_d,
        arch.gamma_u(),
        arch.gamma(1),
        &sc,
    ))
}

/// Residual of the depth-`D` stationarity condition in aggregate-constant
/// form: the squared norm of the solved first-layer row minus the balance
/// requirement `rho b^2`. Zero at `b = 0` for every instance (the trivial
/// solution is always stationary).
pub fn residual_deep(b: f64, arch: &Architecture, moments: &DataMoments) -> Result<f64> {
    check_dims(arch, moments)?;
    let sc = Scalarized::new(moments)?;
    let c = DeepConsts::new(arch);
    Ok(deep_residual(b, &c, &sc))
}

fn check_dims(arch: &Architecture, moments: &DataMoments) -> Result<()> {
    if arch.input_dim() != moments.dim {
        return Err(Error::config(format!(
            "architecture input dimension {} does not match moment dimension {}",
            arch.input_dim(),
            moments.dim
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Root search
// ---------------------------------------------------------------------------

/// Bisect `f` on `[lo, hi]` given `f(lo)` and `f(hi)` of opposite sign.
fn bisect(mut lo: f64, mut hi: f64, mut f_lo: f64, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(lo < hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // interval at machine resolution
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Roots plus the scan interval that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    /// Distinct nonnegative roots in increasing order.
    pub roots: Vec<f64>,
    /// Scan interval, absent when no search was needed (no signal, or the
    /// depth-1 existence test already failed).
    pub bracket: Option<BracketInfo>,
}

/// All positive roots of the scalar stationarity residual.
///
/// Depth 1 uses monotone bisection (at most one root, present iff
/// `||E[xy]||^2 > gamma_u gamma_w`). Depth >= 2 scans a bracket that provably
/// contains every root — decay bounds valid for any architecture, united with
/// the published bracket for homogeneous ones — and bisects each sign change.
pub fn solve_b(arch: &Architecture, moments: &DataMoments) -> Result<Vec<f64>> {
    solve_b_detailed(arch, moments, &SolverOptions::default()).map(|o| o.roots)
}

/// [`solve_b`] with explicit options, also reporting the bracket used.
pub fn solve_b_detailed(
    arch: &Architecture,
    moments: &DataMoments,
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    check_dims(arch, moments)?;
    let sc = Scalarized::new(moments)?;
    if sc.m2 == 0.0 {
        // No signal: the residual is <= 0 everywhere with equality only at 0.
        return Ok(SolveOutcome {
            roots: Vec::new(),
            bracket: None,
        });
    }
    if arch.depth() == 1 {
        solve_two_layer(arch, &sc, opts)
    } else {
        solve_deep(arch, &sc, opts)
    }
}

fn solve_two_layer(
    arch: &Architecture,
    sc: &Scalarized,
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    let gamma_u = arch.gamma_u();
    let gamma_w = arch.gamma(1);
    let sig_d = arch.noise_var(1) + arch.width(1) as f64;
    let res = |b: f64| two_layer_residual(b, sig_d, gamma_u, gamma_w, sc);

    let r0 = res(0.0);
    if r0 <= 0.0 {
        // At or below the existence threshold: only the trivial solution.
        return Ok(SolveOutcome {
            roots: Vec::new(),
            bracket: None,
        });
    }
    // r0 > 0 means m > sqrt(gamma_u gamma_w), so this numerator is positive.
    let m = sc.m2.sqrt();
    let numer = (gamma_w / gamma_u).sqrt() * m - gamma_w;
    let a_min_signal = sc.a_min_signal();
    let a_max = sc.a.first().copied().unwrap_or(0.0);
    let (mut hi, label) = if !sc.has_null_signal() {
        // At sqrt(numer / (sig_d a_min_signal)) every denominator is at least
        // sqrt(gamma_w/gamma_u) m, which forces the residual <= 0; the factor
        // 2 is a guard.
        (
            2.0 * (numer / (sig_d * a_min_signal)).sqrt(),
            "monotone bisection, closed-form upper bound",
        )
    } else {
        // Signal in the null space of E[xx^T]: no finite bound is guaranteed;
        // start from the a_max-based scale and double.
        (
            2.0 * (numer / (sig_d * a_max)).sqrt(),
            "monotone bisection, doubling upper bound",
        )
    };
    let mut doublings = 0;
    while res(hi) >= 0.0 {
        doublings += 1;
        if doublings > opts.max_doublings {
            return Err(Error::numerical(
                "the stationarity residual never turns negative: E[xy] has a component in the \
                 null space of E[xx^T] large enough that no finite solution exists (inconsistent \
                 moments)",
            ));
        }
        hi *= 2.0;
    }
    let root = bisect(0.0, hi, r0, res);
    let scale = (sc.m2 / (gamma_w * gamma_w)).max(1.0);
    validate_root(res(root), scale, opts)?;
    Ok(SolveOutcome {
        roots: vec![root],
        bracket: Some(BracketInfo {
            lo: 0.0,
            hi,
            label: label.to_string(),
        }),
    })
}

fn solve_deep(arch: &Architecture, sc: &Scalarized, opts: &SolverOptions) -> Result<SolveOutcome> {
    let c = DeepConsts::new(arch);
    let res = |b: f64| deep_residual(b, &c, sc);
    let d = c.depth as f64;
    let m = sc.m2.sqrt();

    // Provable decay bounds for any architecture (with all signal inside the
    // range of E[xx^T]): below b_lo the b^{2D} growth of the matrix term has
    // not yet caught up with rho b^2, above b_hi its decay has won.
    let b_lo =
        (c.rho * c.gamma1 * c.gamma1 / (c.c0 * c.mu * m).powi(2)).powf(1.0 / (2.0 * d - 2.0));
    let mut scan_lo = 0.5 * b_lo;
    let c_hi: f64 = {
        let a_max = sc.a[0];
        let floor = 1e-13 * a_max;
        let sum: f64 =
            sc.a.iter()
                .zip(&sc.e2)
                .filter(|(&a, _)| a > floor)
                .map(|(&a, &e2)| e2 / (a * a))
                .sum();
        c.mu * c.mu * sum / (c.c0 * c.c0 * c.s2 * c.s2 * c.sig_d * c.sig_d)
    };
    let b_hi = (c_hi / c.rho).powf(1.0 / (2.0 * d + 2.0));
    let mut scan_hi = 2.0 * b_hi;

    // Unite with the published bracket when it applies (homogeneous
    // architecture, full-rank input moment).
    let mut label = String::from("decay-bound scan");
    if let Some(h) = arch.as_homogeneous() {
        let a_min = sc.a[sc.a.len() - 1];
        if a_min > 1e-13 * sc.a[0] && m > 0.0 {
            let d0 = h.dim as f64;
            let lo16 = (h.gamma / m).powf(1.0 / (d - 1.0)) / d0;
            let hi16 =
                (m / (d0 * (h.noise_var + d0).powi(c.depth as i32) * a_min)).powf(1.0 / (d + 1.0));
            scan_lo = scan_lo.min(0.5 * lo16);
            scan_hi = scan_hi.max(2.0 * hi16);
            label = String::from("published bracket + decay-bound scan");
        }
    } else {
        label.push_str(" (bracket heuristic)");
    }

    // Guard the endpoints: both must see a negative residual, otherwise a
    // root could sit outside the scan. The decay bounds make this provable
    // unless signal sits in the null space of E[xx^T]; then extend by
    // doubling and give up loudly if the residual stays positive.
    let mut doublings = 0;
    while res(scan_hi) >= 0.0 {
        doublings += 1;
        if doublings > opts.max_doublings {
            return Err(Error::numerical(
                "the stationarity residual never turns negative at large b: E[xy] has a \
                 component in the null space of E[xx^T] (inconsistent moments)",
            ));
        }
        scan_hi *= 2.0;
    }
    if doublings > 0 {
        label.push_str(", extended by doubling");
    }
    let mut halvings = 0;
    while res(scan_lo) >= 0.0 && halvings < 100 {
        halvings += 1;
        scan_lo *= 0.5;
    }
    if halvings > 0 {
        label.push_str(", extended downward");
    }

    // Geometric scan; bisect every sign change.
    let n = opts.scan_points.max(2);
    let ratio = (scan_hi / scan_lo).powf(1.0 / (n - 1) as f64);
    let mut grid = Vec::with_capacity(n);
    let mut x = scan_lo;
    for k in 0..n {
        if k == n - 1 {
            x = scan_hi;
        }
        grid.push((x, res(x)));
        x *= ratio;
    }
    let scan_scale = grid.iter().map(|&(_, r)| r.abs()).fold(1.0_f64, f64::max);

    let mut roots = Vec::new();
    for w in grid.windows(2) {
        let (x0, r0) = w[0];
        let (x1, r1) = w[1];
        if r0 == 0.0 {
            roots.push(x0);
        } else if r0 * r1 < 0.0 {
            roots.push(bisect(x0, x1, r0, res));
        }
    }
    if let Some(&(x_last, r_last)) = grid.last() {
        if r_last == 0.0 {
            roots.push(x_last);
        }
    }

    // Deduplicate at relative spacing.
    roots.sort_by(|p, q| p.partial_cmp(q).expect("roots are finite"));
    roots.dedup_by(|b, a| (*b - *a).abs() <= opts.dedup_rel * b.abs().max(1e-300));
    for &r in &roots {
        validate_root(res(r), scan_scale, opts)?;
    }
    Ok(SolveOutcome {
        roots,
        bracket: Some(BracketInfo {
            lo: scan_lo,
            hi: scan_hi,
            label,
        }),
    })
}

fn validate_root(residual: f64, scale: f64, opts: &SolverOptions) -> Result<()> {
    if residual.abs() > opts.root_tol_factor * scale.max(1.0) {
        return Err(Error::numerical(format!(
            "root validation failed: |residual| = {:.3e} exceeds {:.3e}",
            residual.abs(),
            opts.root_tol_factor * scale.max(1.0)
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Closed form (isotropic depth 1)
// ---------------------------------------------------------------------------

/// Closed-form positive root for depth 1 with isotropic `E[xx^T] = sigma_x^2 I`:
/// `b*^2 = (sqrt(gamma_w/gamma_u) ||E[xy]|| - gamma_w) / ((sigma^2 + d_1) sigma_x^2)`.
/// Returns `None` when the formula gives a nonpositive square (only the
/// trivial solution exists).
pub fn closed_form_b_isotropic(arch: &Architecture, moments: &DataMoments) -> Result<Option<f64>> {
    if arch.depth() != 1 {
        return Err(Error::config(format!(
            "the closed form applies to depth 1, got depth {}",
            arch.depth()
        )));
    }
    check_dims(arch, moments)?;
    let sigma_x2 = moments.isotropic_scale(1e-10).ok_or_else(|| {
        Error::config("closed form requires isotropic covariance; call whiten first")
    })?;
    let gamma_u = arch.gamma_u();
    let gamma_w = arch.gamma(1);
    let sig_d = arch.noise_var(1) + arch.width(1) as f64;
    let b2 = ((gamma_w / gamma_u).sqrt() * moments.exy_norm() - gamma_w) / (sig_d * sigma_x2);
    Ok((b2 > 0.0).then(|| b2.sqrt()))
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

fn default_signs(arch: &Architecture) -> Vec<Vec<f64>> {
    (1..=arch.depth())
        .map(|i| vec![1.0; arch.width(i)])
        .collect()
}

fn validate_signs(arch: &Architecture, signs: &[Vec<f64>]) -> Result<()> {
    if signs.len() != arch.depth() {
        return Err(Error::config(format!(
            "expected {} sign vectors (one per hidden layer), got {}",
            arch.depth(),
            signs.len()
        )));
    }
    for (i, r) in signs.iter().enumerate() {
        if r.len() != arch.width(i + 1) {
            return Err(Error::config(format!(
                "sign vector {} has length {}, expected width {}",
                i + 1,
                r.len(),
                arch.width(i + 1)
            )));
        }
        if r.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::config(format!(
                "sign vector {} has entries outside {{-1, +1}}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Build the full parameter assignment for scalar `b` and sign vertices.
///
/// `b = 0` yields the trivial candidate. For `b > 0` the deeper layers are
/// `W_i = b_i r_i r_{i-1}^T` with magnitudes from the balance chain, the
/// read-out is `b_u r_D`, and the first layer solves its normal equations
/// exactly: one shared row `v` through `[q^2 s^2 (sigma_1^2+d_1) E[xx^T] +
/// gamma_1 I]^{-1} E[xy]`, signed by `r_1`.
pub fn assemble(
    b: f64,
    signs: Option<&[Vec<f64>]>,
    arch: &Architecture,
    moments: &DataMoments,
) -> Result<SolutionCandidate> {
    check_dims(arch, moments)?;
    if b < 0.0 {
        return Err(Error::config(format!("assembly requires b >= 0, got {b}")));
    }
    if !b.is_finite() {
        return Err(Error::config("assembly requires finite b"));
    }
    let signs: Vec<Vec<f64>> = match signs {
        Some(s) => {
            validate_signs(arch, s)?;
            s.to_vec()
        }
        None => default_signs(arch),
    };
    let depth = arch.depth();
    if b == 0.0 {
        let params = Params::zeros(arch);
        let loss = expected_loss(&params, arch, moments)?;
        return Ok(SolutionCandidate {
            kind: CandidateKind::Trivial,
            b: 0.0,
            b_layers: vec![0.0; depth + 1],
            signs,
            params,
            loss,
        });
    }

    let d0 = arch.input_dim() as f64;
    let (inner, b_u, q) = if depth == 1 {
        (Vec::new(), b, b)
    } else {
        let (bs, b_u) = arch.balance_chain(b);
        let q = b_u * bs.iter().product::<f64>();
        (bs, b_u, q)
    };
    let agg = arch.aggregate_constants();
    let sig_d = arch.noise_var(1) + arch.width(1) as f64;
    let gamma1 = arch.gamma(1);

    // First layer: v = q mu M^{-1} E[xy], M = q^2 s^2 (sigma_1^2+d_1) A0 + gamma_1 I.
    let kappa = q * q * agg.s2 * sig_d;
    let mut m_mat = moments.a0.clone() * kappa;
    for i in 0..moments.dim {
        m_mat[(i, i)] += gamma1;
    }
    let chol = m_mat.cholesky().ok_or_else(|| {
        Error::numerical("first-layer normal matrix is not positive definite at this b")
    })?;
    let v = chol.solve(&moments.exy) * (q * agg.mu);

    let mut params = Params::zeros(arch);
    let r1 = &signs[0];
    let d1 = arch.width(1);
    params.ws[0] = DMatrix::from_fn(d1, arch.input_dim(), |j, k| r1[j] * v[k]);
    for i in 2..=depth {
        let bi = inner[i - 2];
        let ri = &signs[i - 1];
        let rp = &signs[i - 2];
        params.ws[i - 1] =
            DMatrix::from_fn(arch.width(i), arch.width(i - 1), |j, k| bi * ri[j] * rp[k]);
    }
    let r_last = &signs[depth - 1];
    params.u = DVector::from_fn(arch.last_width(), |j, _| b_u * r_last[j]);

    let loss = expected_loss(&params, arch, moments)?;
    let mut b_layers = Vec::with_capacity(depth + 1);
    b_layers.push(b_u);
    for &bi in inner.iter().rev() {
        b_layers.push(bi);
    }
    b_layers.push(v.norm() / d0.sqrt());
    Ok(SolutionCandidate {
        kind: CandidateKind::Nontrivial,
        b,
        b_layers,
        signs,
        params,
        loss,
    })
}

// ---------------------------------------------------------------------------
// Global minimum
// ---------------------------------------------------------------------------

/// Assemble the trivial candidate and one candidate per residual root, and
/// return the exact minimum. A nontrivial candidate tying the trivial loss
/// within 1e-12 relative is reported as degenerate and the trivial solution
/// wins the tie.
pub fn global_minimum(arch: &Architecture, moments: &DataMoments) -> Result<GlobalMinimum> {
    let outcome = solve_b_detailed(arch, moments, &SolverOptions::default())?;
    let mut candidates = vec![assemble(0.0, None, arch, moments)?];
    for &root in &outcome.roots {
        candidates.push(assemble(root, None, arch, moments)?);
    }
    let trivial_loss = candidates[0].loss;
    let mut best = 0usize;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        if c.loss < candidates[best].loss {
            best = i;
        }
    }
    let mut degenerate = false;
    if best != 0 {
        let diff = (trivial_loss - candidates[best].loss).abs();
        if diff <= 1e-12 * trivial_loss.abs().max(candidates[best].loss.abs()) {
            degenerate = true;
            best = 0;
        }
    }
    Ok(GlobalMinimum {
        winner: candidates[best].clone(),
        candidates,
        degenerate,
        bracket: outcome.bracket,
    })
}

// ---------------------------------------------------------------------------
// Two-layer solution with biases
// ---------------------------------------------------------------------------

struct BiasConsts {
    d1: f64,
    sig2: f64,
    gamma_u: f64,
    gamma_w: f64,
}

struct BiasEval {
    a11: f64,
    a12: f64,
    a21: f64,
    a22: f64,
    beta_u: f64,
    beta_w: f64,
    vec0: DVector<f64>,
    m_mat: DMatrix<f64>,
    phi: f64,
}

/// Evaluates the reduced bias system at read-out magnitude `b`.
///
/// Under the rank-one ansatz (read-out `b` on every hidden unit, identical
/// first-layer rows `v`, identical hidden biases `beta_w`), stationarity in
/// the weights gives `v = b (M^{-1} e - (beta_u + b s beta_w) M^{-1} E[x])`
/// with `s = sigma^2 + d_1`, and the two bias gradients then leave a `2 x 2`
/// linear system in `(beta_u, beta_w)`. The one remaining condition for
/// `b != 0` is the per-unit norm balance
/// `gamma_u b^2 = gamma_w (|v|^2 + beta_w^2)`, reported here as the residual
/// `phi = gamma_w (|v/b|^2 + (beta_w/b)^2) - gamma_u`.
fn bias_eval(b: f64, c: &BiasConsts, moments: &DataMoments) -> Result<BiasEval> {
    let b2 = b * b;
    let s = c.sig2 + c.d1;
    let mut m_mat = moments.a0.clone() * (b2 * s);
    for i in 0..moments.dim {
        m_mat[(i, i)] += c.gamma_w;
    }
    let chol = m_mat
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("bias normal matrix is not positive definite"))?;
    let minv_mx = chol.solve(&moments.mean_x);
    let minv_e = chol.solve(&moments.exy);
    let p = moments.mean_x.dot(&minv_mx);
    let q = moments.mean_x.dot(&minv_e);
    // Row 1: hidden-bias stationarity. Row 2: read-out-bias stationarity.
    // Both are exact consequences of the full gradient with the weights
    // already eliminated; the noise variance enters row 1 because stochastic
    // units feel the mean pre-activation through the second moment.
    let shrink = 1.0 - b2 * s * p;
    let a11 = -c.gamma_u * b - c.sig2 * b2 * b * p;
    let a12 = c.gamma_w + c.sig2 * b2 * shrink;
    let a21 = (1.0 + c.gamma_u) - b2 * c.d1 * p;
    let a22 = b * c.d1 * shrink;
    let r1 = -c.sig2 * b2 * b * q;
    let r2 = moments.mean_y - b2 * c.d1 * q;
    let det = a11 * a22 - a12 * a21;
    let (beta_u, beta_w) = if det == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        ((r1 * a22 - a12 * r2) / det, (a11 * r2 - r1 * a21) / det)
    };
    let finite = beta_u.is_finite() && beta_w.is_finite();
    let vec0 = if finite {
        &minv_e - &minv_mx * (beta_u + b * s * beta_w)
    } else {
        DVector::zeros(moments.dim)
    };
    // The balance residual tends to -gamma_u as b grows (the biases and the
    // per-unit row shrink like 1/b), is finite at b = 0 via the limit
    // beta_w / b -> (gamma_u / gamma_w) beta_u, and blows up instead of
    // vanishing at poles of the linear system.
    let phi = if !finite {
        f64::INFINITY
    } else if b == 0.0 {
        let lam = (c.gamma_u / c.gamma_w) * beta_u;
        c.gamma_w * (vec0.norm_squared() + lam * lam) - c.gamma_u
    } else {
        let bw = beta_w / b;
        c.gamma_w * (vec0.norm_squared() + bw * bw) - c.gamma_u
    };
    Ok(BiasEval {
        a11,
        a12,
        a21,
        a22,
        beta_u,
        beta_w,
        vec0,
        m_mat,
        phi,
    })
}

fn assemble_bias(b: f64, ev: &BiasEval, arch: &Architecture) -> Params {
    let mut params = Params::zeros(arch);
    let d1 = arch.width(1);
    let v = &ev.vec0 * b;
    params.ws[0] = DMatrix::from_fn(d1, arch.input_dim(), |_, k| v[k]);
    params.u = DVector::from_element(d1, b);
    params.bias_u = ev.beta_u;
    params.bias_ws[0] = DVector::from_element(d1, ev.beta_w);
    params
}

/// Exact two-layer global minimum with bias terms.
///
/// The bias fixed point reduces to a scalar condition on the read-out
/// magnitude `b`; its roots are scanned, bisected, verified as stationary
/// points of the bias-aware loss, and compared by exact loss against the
/// `b = 0` candidate (zero weights, read-out bias at its optimum). With
/// centered data every bias is exactly zero and the result matches the
/// no-bias solution.
pub fn solve_two_layer_bias(arch: &Architecture, moments: &DataMoments) -> Result<BiasSolution> {
    if arch.depth() != 1 {
        return Err(Error::config(
            "bias closed form implemented for two-layer only; use verifier for deeper nets",
        ));
    }
    check_dims(arch, moments)?;
    let c = BiasConsts {
        d1: arch.width(1) as f64,
        sig2: arch.noise_var(1),
        gamma_u: arch.gamma_u(),
        gamma_w: arch.gamma(1),
    };
    let sc = Scalarized::new(moments)?;
    let opts = SolverOptions::default();

    // Scan range: the no-bias closed-form scale, padded for bias effects and
    // multiplied by a safety factor of 10; extended by doubling until the
    // fixed-point residual is negative (its limit at large b is -gamma_u).
    let m = sc.m2.sqrt();
    let a_ref = {
        let a_max = sc.a.first().copied().unwrap_or(0.0);
        if a_max > 0.0 {
            a_max
        } else {
            1.0
        }
    };
    let sig_d = c.sig2 + c.d1;
    let base = (((c.gamma_w / c.gamma_u).sqrt() * (m + moments.mean_y.abs()) + c.gamma_w)
        / (sig_d * a_ref))
        .sqrt();
    let mut b_max = 10.0 * base.max(1e-3);
    let phi_at = |b: f64| -> Result<f64> { Ok(bias_eval(b, &c, moments)?.phi) };
    let mut doublings = 0;
    while phi_at(b_max)? >= 0.0 {
        doublings += 1;
        if doublings > opts.max_doublings {
            return Err(Error::numerical(
                "bias fixed-point residual never turns negative at large b",
            ));
        }
        b_max *= 2.0;
    }

    // Geometric scan with the origin prepended (the residual is finite at 0).
    let n = opts.scan_points.max(2);
    let lo = b_max * 1e-10;
    let ratio = (b_max / lo).powf(1.0 / (n - 1) as f64);
    let mut grid = Vec::with_capacity(n + 1);
    grid.push((0.0, phi_at(0.0)?));
    let mut x = lo;
    for k in 0..n {
        if k == n - 1 {
            x = b_max;
        }
        grid.push((x, phi_at(x)?));
        x *= ratio;
    }
    let mut roots = Vec::new();
    for w in grid.windows(2) {
        let (x0, r0) = w[0];
        let (x1, r1) = w[1];
        if r0 == 0.0 && x0 > 0.0 {
            roots.push(x0);
        } else if r0.is_finite() && r1.is_finite() && r0 * r1 < 0.0 {
            roots.push(bisect(x0, x1, r0, |b| {
                bias_eval(b, &c, moments)
                    .map(|e| e.phi)
                    .unwrap_or(f64::INFINITY)
            }));
        }
    }
    roots.sort_by(|p, q| p.partial_cmp(q).expect("roots are finite"));
    roots.dedup_by(|b, a| (*b - *a).abs() <= opts.dedup_rel * b.abs().max(1e-300));

    // Candidates: b = 0 (zero weights, optimal read-out bias) plus every
    // verified stationary root.
    let mut best: Option<(f64, BiasEval, Params, f64, f64)> = None;
    let mut consider = |b: f64| -> Result<()> {
        let ev = bias_eval(b, &c, moments)?;
        if !(ev.beta_u.is_finite() && ev.beta_w.is_finite()) {
            return Ok(()); // pole, not a solution
        }
        let params = assemble_bias(b, &ev, arch);
        let grad = loss_gradient(&params, arch, moments)?;
        let gnorm = grad.norm();
        let loss = expected_loss(&params, arch, moments)?;
        if gnorm > 1e-7 * (1.0 + params.norm()) {
            return Err(Error::numerical(format!(
                "bias candidate at b = {b:.6e} failed the stationarity check \
                 (gradient norm {gnorm:.3e})"
            )));
        }
        match &best {
            Some((_, _, _, best_loss, _)) if loss >= *best_loss => {}
            _ => best = Some((b, ev, params, loss, gnorm)),
        }
        Ok(())
    };
    consider(0.0)?;
    let root_tol = 1e-7 * (1.0 + c.gamma_u);
    for &r in &roots {
        // Bisection converges onto any sign change, including poles of the
        // reduced linear system where the balance residual jumps through
        // infinity without vanishing; keep only genuine zeros.
        if bias_eval(r, &c, moments)?.phi.abs() > root_tol {
            continue;
        }
        consider(r)?;
    }
    let (b, ev, params, loss, gradient_norm) =
        best.expect("at least the b = 0 candidate is always present");
    Ok(BiasSolution {
        params,
        b,
        m_matrix: ev.m_mat,
        s1: ev.a11,
        s2: ev.a12,
        s3: ev.a21,
        s4: ev.a22,
        loss,
        gradient_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arch_d1(dim: usize, width: usize, noise: f64, gamma_u: f64, gamma_w: f64) -> Architecture {
        Architecture::new(dim, vec![width], vec![noise], gamma_u, vec![gamma_w]).unwrap()
    }

    fn hand_checked_instance() -> (Architecture, DataMoments) {
        let arch = arch_d1(1, 1, 1.0, 0.1, 0.1);
        let moments = DataMoments::centered(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_column_slice(&[1.0]),
            2.0,
        )
        .unwrap();
        (arch, moments)
    }

    #[test]
    fn two_layer_residual_matches_hand_values() {
        let (arch, moments) = hand_checked_instance();
        // At b = 0: ||E[xy]||^2 / gamma_w^2 - gamma_u / gamma_w = 100 - 1.
        let r0 = residual_two_layer(0.0, &arch, &moments).unwrap();
        assert_relative_eq!(r0, 99.0, max_relative = 1e-12);
        // At b^2 = 0.45 the closed form says the residual vanishes.
        let r_star = residual_two_layer(0.45f64.sqrt(), &arch, &moments).unwrap();
        assert_abs_diff_eq!(r_star, 0.0, epsilon = 1e-12);
        // Large b: the matrix term dies, leaving -gamma_u/gamma_w = -1.
        let r_inf = residual_two_layer(1e6, &arch, &moments).unwrap();
        assert_relative_eq!(r_inf, -1.0, max_relative = 1e-9);
    }

    #[test]
    fn deep_residual_reduces_to_two_layer_at_depth_one() {
        let arch = arch_d1(3, 2, 0.7, 0.05, 0.08);
        let a0 = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 0.8, 0.1, 0.0, 0.1, 0.5]);
        let exy = DVector::from_column_slice(&[0.6, -0.3, 0.2]);
        let moments = DataMoments::centered(a0, exy, 1.5).unwrap();
        for &b in &[0.2, 0.7, 1.3, 2.9] {
            let deep = residual_deep(b, &arch, &moments).unwrap();
            let two = residual_two_layer(b, &arch, &moments).unwrap();
            // Same condition up to the positive factor gamma_u/gamma_w * ... :
            // deep = b^2 * (two-layer residual) at depth 1.
            assert_relative_eq!(deep, b * b * two, max_relative = 1e-11);
        }
        assert_eq!(residual_deep(0.0, &arch, &moments).unwrap(), 0.0);
    }

    #[test]
    fn solve_b_depth_one_dichotomy_and_closed_form() {
        let (arch, moments) = hand_checked_instance();
        let roots = solve_b(&arch, &moments).unwrap();
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0], 0.45f64.sqrt(), max_relative = 1e-10);
        let cf = closed_form_b_isotropic(&arch, &moments).unwrap().unwrap();
        assert_relative_eq!(cf, roots[0], max_relative = 1e-10);

        // Below the existence threshold: no roots, and the closed form is absent.
        let weak = DataMoments::centered(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_column_slice(&[0.05]),
            1.0,
        )
        .unwrap();
        assert!(solve_b(&arch, &weak).unwrap().is_empty());
        assert!(closed_form_b_isotropic(&arch, &weak).unwrap().is_none());
        // Exactly at the threshold the root is b = 0, i.e. absent.
        let edge = DataMoments::centered(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_column_slice(&[0.1]),
            1.0,
        )
        .unwrap();
        assert!(solve_b(&arch, &edge).unwrap().is_empty());
        assert!(closed_form_b_isotropic(&arch, &edge).unwrap().is_none());
    }

    #[test]
    fn closed_form_rejects_anisotropic_input() {
        let arch = arch_d1(2, 2, 0.0, 0.1, 0.1);
        let moments = DataMoments::centered(
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.4])),
            DVector::from_column_slice(&[1.0, 0.0]),
            1.0,
        )
        .unwrap();
        let err = closed_form_b_isotropic(&arch, &moments).unwrap_err();
        assert!(err
            .to_string()
            .contains("requires isotropic covariance; call whiten first"));
    }

    fn homogeneous_d2() -> (Architecture, DataMoments) {
        let arch =
            Architecture::new(2, vec![2, 2], vec![1.0, 1.0], 0.01, vec![0.01, 0.01]).unwrap();
        let moments = DataMoments::centered(
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&[1.0, 0.0]),
            1.4,
        )
        .unwrap();
        (arch, moments)
    }

    #[test]
    fn deep_roots_lie_in_published_bracket() {
        let (arch, moments) = homogeneous_d2();
        let outcome = solve_b_detailed(&arch, &moments, &SolverOptions::default()).unwrap();
        assert!(
            !outcome.roots.is_empty(),
            "expected nontrivial roots for a strong signal"
        );
        // Closed bracket for homogeneous depth-2: lo = (gamma/m)/d0,
        // hi = [m / (d0 (sigma^2+d0)^D a_min)]^{1/(D+1)}.
        let lo = 0.01 / 2.0;
        let hi = (1.0_f64 / (2.0 * 9.0 * 1.0)).powf(1.0 / 3.0);
        for &r in &outcome.roots {
            assert!(
                r >= lo && r <= hi,
                "root {r} outside the closed bracket [{lo}, {hi}]"
            );
        }
        let bracket = outcome.bracket.unwrap();
        assert!(bracket.label.contains("published bracket"));
    }

    #[test]
    fn assembled_candidates_are_stationary() {
        // Depth 1, anisotropic; depth 2 homogeneous; depth 3 heterogeneous.
        let d1_arch = arch_d1(2, 3, 0.4, 0.05, 0.02);
        let d1_moments = DataMoments::centered(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6]),
            DVector::from_column_slice(&[0.8, -0.5]),
            2.0,
        )
        .unwrap();
        let (d2_arch, d2_moments) = homogeneous_d2();
        let d3_arch = Architecture::new(
            2,
            vec![3, 2, 2],
            vec![0.3, 0.5, 0.0],
            0.002,
            vec![0.003, 0.0015, 0.0025],
        )
        .unwrap();
        let d3_moments = DataMoments::centered(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            DVector::from_column_slice(&[0.9, -0.3]),
            2.0,
        )
        .unwrap();
        for (arch, moments) in [
            (&d1_arch, &d1_moments),
            (&d2_arch, &d2_moments),
            (&d3_arch, &d3_moments),
        ] {
            let roots = solve_b(arch, moments).unwrap();
            assert!(
                !roots.is_empty(),
                "depth {} fixture should have roots",
                arch.depth()
            );
            for &b in &roots {
                let cand = assemble(b, None, arch, moments).unwrap();
                let g = loss_gradient(&cand.params, arch, moments).unwrap().norm();
                assert!(
                    g <= 1e-7 * (1.0 + cand.params.norm()),
                    "depth {} root {b}: gradient norm {g}",
                    arch.depth()
                );
            }
        }
    }

    #[test]
    fn balance_conditions_hold_at_roots() {
        let d3_arch = Architecture::new(
            2,
            vec![3, 2, 2],
            vec![0.3, 0.5, 0.0],
            0.002,
            vec![0.003, 0.0015, 0.0025],
        )
        .unwrap();
        let moments = DataMoments::centered(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            DVector::from_column_slice(&[0.9, -0.3]),
            2.0,
        )
        .unwrap();
        let roots = solve_b(&d3_arch, &moments).unwrap();
        assert!(!roots.is_empty());
        let cand = assemble(roots[0], None, &d3_arch, &moments).unwrap();
        // Norm form: gamma_{k+1} ||W_{k+1}||^2 = gamma_k ||W_k||^2, closed by
        // the read-out with gamma_u ||u||^2.
        let mut lhs = Vec::new();
        for i in 1..=3 {
            lhs.push(d3_arch.gamma(i) * cand.params.ws[i - 1].norm_squared());
        }
        lhs.push(d3_arch.gamma_u() * cand.params.u.norm_squared());
        for w in lhs.windows(2) {
            assert_relative_eq!(w[0], w[1], max_relative = 1e-8);
        }
        // Scalar form on the chain magnitudes: b_layers = [b_u, b_3, b_2, b_1].
        let b_u = cand.b_layers[0];
        let b3 = cand.b_layers[1];
        let b2 = cand.b_layers[2];
        // gamma_3 d_3 b_3^2 = gamma_2 d_1 b_2^2 (k = 2), and the read-out
        // closes with gamma_u * 1 * b_u^2 = gamma_3 d_2 b_3^2 (k = 3).
        assert_relative_eq!(
            d3_arch.gamma(3) * 2.0 * b3 * b3,
            d3_arch.gamma(2) * 3.0 * b2 * b2,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            d3_arch.gamma_u() * b_u * b_u,
            d3_arch.gamma(3) * 2.0 * b3 * b3,
            max_relative = 1e-10
        );
    }

    #[test]
    fn profile_matches_assembled_loss() {
        // Mandatory cross-check: the scalar profile equals the exact loss of
        // the assembled candidate, for depth 1 and 2 and for the log-space
        // depth path.
        let (d2_arch, d2_moments) = homogeneous_d2();
        for &b in &[0.0, 0.01, 0.05, 0.2, 0.38, 1.0] {
            let cand = assemble(b, None, &d2_arch, &d2_moments).unwrap();
            let prof = crate::loss::scalar_loss_profile(b, &d2_arch, &d2_moments).unwrap();
            assert_relative_eq!(prof, cand.loss, max_relative = 1e-9);
        }
        let d1_arch = Architecture::new(2, vec![2], vec![0.5], 0.07, vec![0.07]).unwrap();
        let d1_moments = DataMoments::centered(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.2, 0.4]),
            DVector::from_column_slice(&[0.7, 0.1]),
            1.1,
        )
        .unwrap();
        for &b in &[0.0, 0.1, 0.5, 1.2] {
            let cand = assemble(b, None, &d1_arch, &d1_moments).unwrap();
            let prof = crate::loss::scalar_loss_profile(b, &d1_arch, &d1_moments).unwrap();
            assert_relative_eq!(prof, cand.loss, max_relative = 1e-9);
        }
        let deep_arch =
            Architecture::new(2, vec![2; 9], vec![0.8; 9], 0.04, vec![0.04; 9]).unwrap();
        let deep_moments = DataMoments::centered(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.7]),
            DVector::from_column_slice(&[0.8, 0.3]),
            1.3,
        )
        .unwrap();
        for &b in &[0.0, 0.3, 0.6, 0.9] {
            let cand = assemble(b, None, &deep_arch, &deep_moments).unwrap();
            let prof = crate::loss::scalar_loss_profile(b, &deep_arch, &deep_moments).unwrap();
            assert_relative_eq!(prof, cand.loss, max_relative = 1e-9);
        }
    }

    #[test]
    fn loss_is_invariant_under_sign_vertices() {
        let (arch, moments) = homogeneous_d2();
        let b = solve_b(&arch, &moments).unwrap()[0];
        let reference = assemble(b, None, &arch, &moments).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let signs: Vec<Vec<f64>> = (1..=arch.depth())
                .map(|i| {
                    (0..arch.width(i))
                        .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect();
            let cand = assemble(b, Some(&signs), &arch, &moments).unwrap();
            assert_relative_eq!(cand.loss, reference.loss, max_relative = 1e-10);
        }
    }

    #[test]
    fn assemble_validates_inputs() {
        let (arch, moments) = homogeneous_d2();
        assert!(assemble(-0.5, None, &arch, &moments).is_err());
        let bad_signs = vec![vec![1.0, 0.5], vec![1.0, -1.0]];
        assert!(assemble(0.3, Some(&bad_signs), &arch, &moments).is_err());
        let trivial = assemble(0.0, None, &arch, &moments).unwrap();
        assert_eq!(trivial.kind, CandidateKind::Trivial);
        assert_eq!(trivial.loss, 1.4);
        assert_eq!(trivial.params.norm(), 0.0);
    }

    #[test]
    fn global_minimum_matches_depth_one_dichotomy() {
        let (arch, moments) = hand_checked_instance();
        let gm = global_minimum(&arch, &moments).unwrap();
        assert_eq!(gm.winner.kind, CandidateKind::Nontrivial);
        assert!(gm.winner.loss < moments.ey2);
        assert!(!gm.degenerate);
        assert_eq!(gm.candidates.len(), 2);

        let weak = DataMoments::centered(
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_column_slice(&[0.05]),
            1.0,
        )
        .unwrap();
        let gm_weak = global_minimum(&arch, &weak).unwrap();
        assert_eq!(gm_weak.winner.kind, CandidateKind::Trivial);
        assert_eq!(gm_weak.candidates.len(), 1);
    }

    #[test]
    fn global_minimum_with_no_signal_is_trivial() {
        let arch = Architecture::new(2, vec![2, 2], vec![0.5, 0.5], 0.1, vec![0.1, 0.1]).unwrap();
        let moments =
            DataMoments::centered(DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        let gm = global_minimum(&arch, &moments).unwrap();
        assert_eq!(gm.winner.kind, CandidateKind::Trivial);
        assert_eq!(gm.winner.loss, 1.0);
    }

    #[test]
    fn no_random_point_beats_the_certified_minimum() {
        let (arch, moments) = homogeneous_d2();
        let gm = global_minimum(&arch, &moments).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = Params::zeros(&arch);
        for _ in 0..1000 {
            for w in &mut p.ws {
                for e in w.iter_mut() {
                    *e = rng.gen_range(-3.0..3.0);
                }
            }
            for e in p.u.iter_mut() {
                *e = rng.gen_range(-3.0..3.0);
            }
            let l = expected_loss(&p, &arch, &moments).unwrap();
            assert!(
                l >= gm.winner.loss - 1e-9,
                "random point loss {l} beats {}",
                gm.winner.loss
            );
        }
    }

    #[test]
    fn bias_solver_reduces_to_no_bias_when_centered() {
        let arch = arch_d1(2, 2, 0.6, 0.04, 0.09);
        let moments = DataMoments::centered(
            DMatrix::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 0.8]),
            DVector::from_column_slice(&[0.9, 0.4]),
            1.8,
        )
        .unwrap();
        let bias = solve_two_layer_bias(&arch, &moments).unwrap();
        assert_eq!(bias.params.bias_u, 0.0);
        assert_eq!(bias.params.bias_ws[0].amax(), 0.0);
        let roots = solve_b(&arch, &moments).unwrap();
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(bias.b, roots[0], max_relative = 1e-8);
        let no_bias = assemble(roots[0], None, &arch, &moments).unwrap();
        assert_relative_eq!(bias.loss, no_bias.loss, max_relative = 1e-10);
    }

    #[test]
    fn bias_solver_handles_uncentered_data() {
        let arch = arch_d1(2, 2, 0.5, 0.06, 0.08);
        let mean_x = DVector::from_column_slice(&[0.3, -0.1]);
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.8, 0.6]));
        let a0 = cov + &mean_x * mean_x.transpose();
        let exy = DVector::from_column_slice(&[0.7, 0.25]);
        let moments = DataMoments::new(a0, exy, 1.9, mean_x.clone(), 0.7).unwrap();
        let bias = solve_two_layer_bias(&arch, &moments).unwrap();
        // Stationarity of the returned point on the bias-aware loss.
        assert!(bias.gradient_norm <= 1e-7 * (1.0 + bias.params.norm()));
        let (gu, gw, sig2) = (arch.gamma_u(), arch.gamma(1), arch.noise_var(1));
        let b = bias.b;
        for j in 0..2 {
            let row = bias.params.ws[0].row(j).transpose();
            let bw = bias.params.bias_ws[0][j];
            // Per-unit balance between the read-out and first-layer penalties.
            assert_relative_eq!(
                gu * b * b,
                gw * (row.norm_squared() + bw * bw),
                max_relative = 1e-8
            );
            // Hidden-bias stationarity ties the two biases together through
            // the mean pre-activation of the stochastic unit.
            let pre_mean = row.dot(&mean_x) + bw;
            assert_abs_diff_eq!(
                gw * bw - gu * b * bias.params.bias_u + sig2 * b * b * pre_mean,
                0.0,
                epsilon = 1e-10
            );
        }
        // Beating the weights-off candidate requires using the weights.
        let ey = 0.7;
        let b0_loss = 1.9 - ey * ey / (1.0 + arch.gamma_u());
        assert!(bias.loss <= b0_loss + 1e-12);
        assert!(bias.b > 0.0);
    }

    #[test]
    fn bias_solver_constant_target_is_stationary() {
        let arch = arch_d1(2, 2, 0.4, 0.1, 0.1);
        // y = 0.8 exactly, x centered: no signal, pure bias fit.
        let moments = DataMoments::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(&[0.9, 0.5])),
            DVector::zeros(2),
            0.64,
            DVector::zeros(2),
            0.8,
        )
        .unwrap();
        let bias = solve_two_layer_bias(&arch, &moments).unwrap();
        assert!(bias.gradient_norm <= 1e-7 * (1.0 + bias.params.norm()));
        // The read-out bias soaks up the constant target.
        assert_relative_eq!(bias.params.bias_u, 0.8 / 1.1, max_relative = 1e-9);
    }

    #[test]
    fn bias_solver_rejects_deep_architectures() {
        let arch = Architecture::new(2, vec![2, 2], vec![0.0, 0.0], 0.1, vec![0.1, 0.1]).unwrap();
        let moments =
            DataMoments::centered(DMatrix::identity(2, 2), DVector::zeros(2), 1.0).unwrap();
        let err = solve_two_layer_bias(&arch, &moments).unwrap_err();
        assert!(err
            .to_string()
            .contains("bias closed form implemented for two-layer only"));
    }
}
