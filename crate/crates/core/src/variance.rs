//! Prediction variance of the stochastic network at the exact global
//! minimum, and how it scales with width, noise, and depth.
//!
//! At a fixed input `x` the only randomness left in the trained model is the
//! multiplicative unit noise, so the prediction variance has a closed form.
//! For a homogeneous architecture at a solution-family candidate it is
//!
//! ```text
//! Var[f(x)] = w^2 r^D (1 - r^D) (E[xy]^T x)^2,   r = d0/(sigma^2 + d0),
//! w = P / (P sigma_x^2 + gamma),  P = d0^D (sigma^2 + d0)^D b^{2D},
//! ```
//!
//! equivalent to the expanded quotient
//! `d0^{3D} [(sigma^2+d0)^D - d0^D] b^{4D} (E[xy]^T x)^2 / (P sigma_x^2 + gamma)^2`.
//! An independent route propagates first and second moments of the hidden
//! activations through the network at the point-mass input distribution;
//! both are cross-checked against Monte Carlo in tests.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::arch::{Architecture, HomogeneousArchitecture, LOG_SPACE_DEPTH};
use crate::error::{Error, Result};
use crate::loss::forward;
use crate::moments::DataMoments;
use crate::params::Params;
use crate::solver::{global_minimum, CandidateKind, SolutionCandidate};

/// Which architectural parameter a scaling sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Input dimension / hidden width `d_0` of a homogeneous architecture.
    Width,
    /// Shared noise variance `sigma^2`.
    Noise,
    /// Number of hidden layers `D`.
    Depth,
}

impl SweepAxis {
    /// Stable snake_case name (matches the serialized form).
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Width => "width",
            SweepAxis::Noise => "noise",
            SweepAxis::Depth => "depth",
        }
    }
}

/// One evaluated grid point of a scaling sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    /// Value of the swept parameter.
    pub swept_value: f64,
    /// The re-solved solution scalar at this point.
    pub b_star: f64,
    /// Prediction variance at the signal-aligned unit input.
    pub variance: f64,
}

/// Fitted scaling exponents; only the swept axis of a given run is filled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalingExponents {
    /// Log-log slope of variance against width.
    pub width: Option<f64>,
    /// Log-log slope of variance against noise variance.
    pub noise: Option<f64>,
    /// Log-linear slope of log-variance against depth.
    pub depth: Option<f64>,
}

/// Result of a variance scaling sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Variance at the first grid point (the base configuration).
    pub variance_at_x: f64,
    /// Fitted exponent on the swept axis.
    pub scaling_exponents: ScalingExponents,
    /// All evaluated grid points in input order.
    pub points: Vec<VariancePoint>,
}

/// `d0^D (sigma^2+d0)^D b^{2D}`, in log space for deep networks.
fn p_scale(h: &HomogeneousArchitecture, b: f64) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let d0 = h.dim as f64;
    let d = h.depth as f64;
    if h.depth >= LOG_SPACE_DEPTH {
        (d * (d0.ln() + (h.noise_var + d0).ln() + 2.0 * b.ln())).exp()
    } else {
        (d0 * (h.noise_var + d0)).powi(h.depth as i32) * b.powi(2 * h.depth as i32)
    }
}

/// Exact prediction variance of the assembled candidate at input `x`,
/// closed form for a homogeneous architecture with isotropic `E[xx^T]`.
///
/// The trivial candidate has zero variance, as does any `x` orthogonal to
/// the signal `E[xy]`.
pub fn prediction_variance(
    candidate: &SolutionCandidate,
    x: &DVector<f64>,
    h: &HomogeneousArchitecture,
    moments: &DataMoments,
) -> Result<f64> {
    if x.len() != h.dim {
        return Err(Error::config(format!(
            "input has dimension {}, architecture expects {}",
            x.len(),
            h.dim
        )));
    }
    if moments.dim != h.dim {
        return Err(Error::config(format!(
            "moments have dimension {}, architecture expects {}",
            moments.dim, h.dim
        )));
    }
    let sigma_x2 = moments.isotropic_scale(1e-10).ok_or_else(|| {
        Error::config("prediction variance closed form requires isotropic covariance")
    })?;
    if candidate.kind == CandidateKind::Trivial {
        return Ok(0.0);
    }
    // The closed form is parameterized by the per-entry magnitude of the
    // inner layers; at depth 1 the candidate's scalar is the read-out
    // magnitude, which sits sqrt(d0) above that convention.
    let b_eff = if h.depth == 1 {
        candidate.b / (h.dim as f64).sqrt()
    } else {
        candidate.b
    };
    let d0 = h.dim as f64;
    let r = d0 / (h.noise_var + d0);
    let rd = r.powi(h.depth as i32);
    let p = p_scale(h, b_eff);
    let w = p / (p * sigma_x2 + h.gamma);
    let ex = moments.exy.dot(x);
    Ok(w * w * rd * (1.0 - rd) * ex * ex)
}

/// Prediction variance by exact moment propagation: treats `x` as a
/// point-mass input distribution, pushes first and second moments of the
/// hidden activations through the noisy layers, and returns
/// `E[f(x)^2] - E[f(x)]^2`. Valid for any parameters and architecture.
pub fn prediction_variance_by_propagation(
    params: &Params,
    arch: &Architecture,
    x: &DVector<f64>,
) -> Result<f64> {
    if x.len() != arch.input_dim() {
        return Err(Error::config(format!(
            "input has dimension {}, architecture expects {}",
            x.len(),
            arch.input_dim()
        )));
    }
    let point_mass = DataMoments::new(
        x * x.transpose(),
        DVector::zeros(x.len()),
        0.0,
        x.clone(),
        0.0,
    )?;
    let fwd = forward(params, arch, &point_mass);
    let s_last = &fwd.s[arch.depth()];
    let m_last = &fwd.m[arch.depth()];
    let mean = params.u.dot(m_last) + params.bias_u;
    let second = (params.u.transpose() * s_last * &params.u)[(0, 0)]
        + 2.0 * params.bias_u * params.u.dot(m_last)
        + params.bias_u * params.bias_u;
    Ok((second - mean * mean).max(0.0))
}

fn fit_slope(ts: &[f64], ys: &[f64]) -> f64 {
    let n = ts.len() as f64;
    let mt = ts.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = ts.iter().zip(ys).map(|(t, y)| (t - mt) * (y - my)).sum();
    let var: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    cov / var
}

/// Sweep one architectural axis, re-solving the exact global minimum at
/// every grid point, and fit the variance scaling exponent.
///
/// The variance is evaluated at the unit input aligned with the signal
/// `E[xy]`. Width and noise exponents are log-log slopes; the depth exponent
/// is the slope of log-variance against depth itself. Every grid point must
/// land in the nontrivial regime — a trivial winner has zero variance and
/// no finite log, so such points are reported as errors, not fitted around.
pub fn variance_scaling(
    base: &HomogeneousArchitecture,
    moments: &DataMoments,
    sweep: SweepAxis,
    grid: &[f64],
) -> Result<VarianceReport> {
    if grid.len() < 4 {
        return Err(Error::config(format!(
            "a scaling sweep needs at least 4 grid points, got {}",
            grid.len()
        )));
    }
    let sigma_x2 = moments
        .isotropic_scale(1e-10)
        .ok_or_else(|| Error::config("variance scaling requires isotropic covariance"))?;
    let m = moments.exy_norm();
    if m == 0.0 {
        return Err(Error::config(
            "variance scaling requires a nonzero signal E[xy]; every point would be trivial",
        ));
    }
    if moments.dim != base.dim {
        return Err(Error::config(format!(
            "moments have dimension {}, base architecture expects {}",
            moments.dim, base.dim
        )));
    }

    let mut points = Vec::with_capacity(grid.len());
    for &g in grid {
        if !g.is_finite() || g <= 0.0 {
            return Err(Error::config(format!("invalid sweep value {g}")));
        }
        let integral = g.fract() == 0.0;
        let h = match sweep {
            SweepAxis::Width => {
                if !integral {
                    return Err(Error::config(format!(
                        "width sweep value {g} is not an integer"
                    )));
                }
                HomogeneousArchitecture {
                    dim: g as usize,
                    ..*base
                }
            }
            SweepAxis::Noise => HomogeneousArchitecture {
                noise_var: g,
                ..*base
            },
            SweepAxis::Depth => {
                if !integral {
                    return Err(Error::config(format!(
                        "depth sweep value {g} is not an integer"
                    )));
                }
                HomogeneousArchitecture {
                    depth: g as usize,
                    ..*base
                }
            }
        };
        // Dimension follows the architecture: rebuild isotropic moments with
        // the same signal magnitude, scale, and target moment when the width
        // changes; otherwise the provided moments carry over unchanged.
        let (point_moments, x) = if h.dim == moments.dim {
            let x = &moments.exy / m;
            (moments.clone(), x)
        } else {
            let mut e = DVector::zeros(h.dim);
            e[0] = m;
            let mut x = DVector::zeros(h.dim);
            x[0] = 1.0;
            let pm = DataMoments::centered(
                nalgebra::DMatrix::identity(h.dim, h.dim) * sigma_x2,
                e,
                moments.ey2,
            )?;
            (pm, x)
        };
        let arch = h.to_architecture()?;
        let gm = global_minimum(&arch, &point_moments)?;
        if gm.winner.kind == CandidateKind::Trivial {
            return Err(Error::config(format!(
                "grid point {}={g} has a trivial global minimum (zero variance); \
                 the sweep requires every point in the nontrivial regime",
                sweep.as_str()
            )));
        }
        let variance = prediction_variance(&gm.winner, &x, &h, &point_moments)?;
        points.push(VariancePoint {
            swept_value: g,
            b_star: gm.winner.b,
            variance,
        });
    }

    let ys: Vec<f64> = points.iter().map(|p| p.variance.ln()).collect();
    let ts: Vec<f64> = match sweep {
        SweepAxis::Width | SweepAxis::Noise => points.iter().map(|p| p.swept_value.ln()).collect(),
        SweepAxis::Depth => points.iter().map(|p| p.swept_value).collect(),
    };
    let slope = fit_slope(&ts, &ys);
    let mut exps = ScalingExponents::default();
    match sweep {
        SweepAxis::Width => exps.width = Some(slope),
        SweepAxis::Noise => exps.noise = Some(slope),
        SweepAxis::Depth => exps.depth = Some(slope),
    }
    Ok(VarianceReport {
        variance_at_x: points[0].variance,
        scaling_exponents: exps,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::assemble;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn iso_moments(dim: usize, signal: &[f64], ey2: f64) -> DataMoments {
        DataMoments::centered(
            DMatrix::identity(dim, dim),
            DVector::from_column_slice(signal),
            ey2,
        )
        .unwrap()
    }

    /// Monte Carlo over the unit noise at fixed input x.
    fn mc_variance(params: &Params, arch: &Architecture, x: &DVector<f64>, draws: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let dists: Vec<Option<Normal<f64>>> = (1..=arch.depth())
            .map(|i| {
                let sd = arch.noise_var(i).sqrt();
                (sd > 0.0).then(|| Normal::new(1.0, sd).unwrap())
            })
            .collect();
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..draws {
            let mut h = x.clone();
            for i in 1..=arch.depth() {
                let mut pre = &params.ws[i - 1] * &h + &params.bias_ws[i - 1];
                if let Some(dist) = &dists[i - 1] {
                    for e in pre.iter_mut() {
                        *e *= dist.sample(&mut rng);
                    }
                }
                h = pre;
            }
            let f = params.u.dot(&h) + params.bias_u;
            sum += f;
            sum2 += f * f;
        }
        let n = draws as f64;
        sum2 / n - (sum / n) * (sum / n)
    }

    #[test]
    fn three_routes_agree_at_depth_one() {
        let h = HomogeneousArchitecture {
            depth: 1,
            dim: 1,
            noise_var: 1.0,
            gamma: 0.1,
        };
        let arch = h.to_architecture().unwrap();
        let moments = iso_moments(1, &[1.0], 2.0);
        let gm = global_minimum(&arch, &moments).unwrap();
        assert_eq!(gm.winner.kind, CandidateKind::Nontrivial);
        let x = DVector::from_column_slice(&[1.0]);
        let closed = prediction_variance(&gm.winner, &x, &h, &moments).unwrap();
        let propagated = prediction_variance_by_propagation(&gm.winner.params, &arch, &x).unwrap();
        assert_relative_eq!(closed, propagated, max_relative = 1e-10);
        let mc = mc_variance(&gm.winner.params, &arch, &x, 1_000_000);
        assert_relative_eq!(closed, mc, max_relative = 1e-2);
        assert!(closed > 0.0);
    }

    #[test]
    fn three_routes_agree_at_depth_two() {
        let h = HomogeneousArchitecture {
            depth: 2,
            dim: 2,
            noise_var: 1.0,
            gamma: 0.01,
        };
        let arch = h.to_architecture().unwrap();
        let moments = iso_moments(2, &[1.0, 0.0], 1.4);
        let gm = global_minimum(&arch, &moments).unwrap();
        assert_eq!(gm.winner.kind, CandidateKind::Nontrivial);
        let x = DVector::from_column_slice(&[1.0, 0.0]);
        let closed = prediction_variance(&gm.winner, &x, &h, &moments).unwrap();
        let propagated = prediction_variance_by_propagation(&gm.winner.params, &arch, &x).unwrap();
        assert_relative_eq!(closed, propagated, max_relative = 1e-10);
        let mc = mc_variance(&gm.winner.params, &arch, &x, 1_000_000);
        assert_relative_eq!(closed, mc, max_relative = 1e-2);
    }

    #[test]
    fn variance_vanishes_for_trivial_and_orthogonal_inputs() {
        let h = HomogeneousArchitecture {
            depth: 2,
            dim: 2,
            noise_var: 1.0,
            gamma: 0.01,
        };
        let arch = h.to_architecture().unwrap();
        let moments = iso_moments(2, &[1.0, 0.0], 1.4);
        let trivial = assemble(0.0, None, &arch, &moments).unwrap();
        let x = DVector::from_column_slice(&[1.0, 0.0]);
        assert_eq!(
            prediction_variance(&trivial, &x, &h, &moments).unwrap(),
            0.0
        );
        let gm = global_minimum(&arch, &moments).unwrap();
        let perp = DVector::from_column_slice(&[0.0, 1.0]);
        assert_eq!(
            prediction_variance(&gm.winner, &perp, &h, &moments).unwrap(),
            0.0
        );
    }

    #[test]
    fn closed_form_requires_isotropic_covariance() {
        let h = HomogeneousArchitecture {
            depth: 1,
            dim: 2,
            noise_var: 0.5,
            gamma: 0.1,
        };
        let arch = h.to_architecture().unwrap();
        let skew = DataMoments::centered(
            DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.3])),
            DVector::from_column_slice(&[1.0, 0.0]),
            1.5,
        )
        .unwrap();
        let cand = assemble(0.5, None, &arch, &skew).unwrap();
        let x = DVector::from_column_slice(&[1.0, 0.0]);
        let err = prediction_variance(&cand, &x, &h, &skew).unwrap_err();
        assert!(err.to_string().contains("requires isotropic covariance"));
    }

    #[test]
    fn width_sweep_scales_inversely_with_width() {
        let base = HomogeneousArchitecture {
            depth: 1,
            dim: 8,
            noise_var: 1.0,
            gamma: 0.01,
        };
        let moments = iso_moments(
            8,
            &{
                let mut v = vec![0.0; 8];
                v[0] = 1.0;
                v
            },
            1.5,
        );
        let report =
            variance_scaling(&base, &moments, SweepAxis::Width, &[8.0, 16.0, 32.0, 64.0]).unwrap();
        let slope = report.scaling_exponents.width.unwrap();
        assert!(
            (-1.2..=-0.8).contains(&slope),
            "width slope {slope} outside the expected window"
        );
        assert!(report.scaling_exponents.noise.is_none());
        // Monotone nonincreasing along the sweep.
        for w in report.points.windows(2) {
            assert!(w[1].variance <= w[0].variance + 1e-15);
        }
        assert_eq!(report.variance_at_x, report.points[0].variance);
    }

    #[test]
    fn noise_sweep_scales_inversely_with_noise_to_the_depth() {
        let base = HomogeneousArchitecture {
            depth: 2,
            dim: 1,
            noise_var: 10.0,
            gamma: 1e-3,
        };
        let moments = iso_moments(1, &[5.0], 30.0);
        let report =
            variance_scaling(&base, &moments, SweepAxis::Noise, &[10.0, 20.0, 40.0, 80.0]).unwrap();
        let slope = report.scaling_exponents.noise.unwrap();
        assert!(
            (-2.3..=-1.7).contains(&slope),
            "noise slope {slope} outside the expected window"
        );
        for w in report.points.windows(2) {
            assert!(w[1].variance <= w[0].variance + 1e-15);
        }
    }

    #[test]
    fn depth_sweep_matches_the_closed_form_decay() {
        let base = HomogeneousArchitecture {
            depth: 2,
            dim: 2,
            noise_var: 1.0,
            gamma: 1e-3,
        };
        let moments = iso_moments(2, &[1.0, 0.0], 1.5);
        let grid = [2.0, 3.0, 4.0, 5.0, 6.0];
        let report = variance_scaling(&base, &moments, SweepAxis::Depth, &grid).unwrap();
        // Independent cross-check of every point via moment propagation on
        // the assembled winner.
        for point in &report.points {
            let h = HomogeneousArchitecture {
                depth: point.swept_value as usize,
                ..base
            };
            let arch = h.to_architecture().unwrap();
            let cand = assemble(point.b_star, None, &arch, &moments).unwrap();
            let x = DVector::from_column_slice(&[1.0, 0.0]);
            let prop = prediction_variance_by_propagation(&cand.params, &arch, &x).unwrap();
            assert_relative_eq!(point.variance, prop, max_relative = 1e-9);
        }
        for w in report.points.windows(2) {
            assert!(w[1].variance <= w[0].variance + 1e-15);
        }
        // The decay per layer tracks r = d0/(sigma^2+d0): log-slope near
        // log r = -log(1.5) once the r^D factor dominates.
        let slope = report.scaling_exponents.depth.unwrap();
        assert!(slope < -0.2, "depth slope {slope} should be decaying");
    }

    #[test]
    fn trivial_grid_points_are_reported() {
        // Weak signal: by depth 2 the nonexistence bound already fires.
        let base = HomogeneousArchitecture {
            depth: 2,
            dim: 1,
            noise_var: 1.0,
            gamma: 0.1,
        };
        let moments = iso_moments(1, &[0.12], 1.0);
        let err =
            variance_scaling(&base, &moments, SweepAxis::Depth, &[2.0, 3.0, 4.0, 5.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("trivial"), "unexpected message: {msg}");
        assert!(msg.contains("depth=2"), "unexpected message: {msg}");
    }

    #[test]
    fn sweep_validates_grid() {
        let base = HomogeneousArchitecture {
            depth: 1,
            dim: 2,
            noise_var: 1.0,
            gamma: 0.01,
        };
        let moments = iso_moments(2, &[1.0, 0.0], 1.5);
        assert!(variance_scaling(&base, &moments, SweepAxis::Width, &[8.0, 16.0, 32.0]).is_err());
        assert!(
            variance_scaling(&base, &moments, SweepAxis::Width, &[8.5, 16.0, 32.0, 64.0]).is_err()
        );
    }
}
