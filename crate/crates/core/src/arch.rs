//! Network architecture: layer widths, per-layer noise variances, and
//! per-layer regularization strengths.
//!
//! The model is a depth-`D` linear network with multiplicative stochastic
//! units after every hidden layer and a final linear read-out:
//! hidden layer `i` maps `h_{i-1}` to `eps_i .* (W_i h_{i-1})` where the
//! noise entries are independent with mean 1 and variance `sigma_i^2`, and
//! the prediction is `u . h_D`. Every weight matrix carries an L2 penalty
//! `gamma_i ||W_i||_F^2` and the read-out carries `gamma_u ||u||^2`.
//!
//! [`AggregateConstants`] packages the products of widths, noise factors,
//! and regularization ratios through which a deep architecture enters the
//! scalar reduction of its global optimum: once layer magnitudes are tied
//! together by the inter-layer balance conditions, the whole stack is
//! described by a single scalar `b` and these constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth at or above which products over layers are accumulated in log
/// space to avoid premature overflow/underflow.
pub(crate) const LOG_SPACE_DEPTH: usize = 8;

/// A validated network architecture.
///
/// Layer `i` (1-based, `i = 1..=depth`) has weight matrix of shape
/// `widths[i-1] x fan_in(i)` where `fan_in(1) = input_dim` and
/// `fan_in(i) = widths[i-2]` otherwise. `noise_vars[i-1]` is the variance of
/// the multiplicative noise after layer `i`; `gammas[i-1]` its weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArchitecture", into = "RawArchitecture")]
pub struct Architecture {
    input_dim: usize,
    widths: Vec<usize>,
    noise_vars: Vec<f64>,
    gamma_u: f64,
    gammas: Vec<f64>,
}

/// Serialization mirror of [`Architecture`]; `depth` is accepted on input
/// for readability and checked for consistency.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawArchitecture {
    #[serde(default)]
    depth: Option<usize>,
    input_dim: usize,
    widths: Vec<usize>,
    noise_vars: Vec<f64>,
    gamma_u: f64,
    gammas: Vec<f64>,
}

impl TryFrom<RawArchitecture> for Architecture {
    type Error = Error;
    fn try_from(raw: RawArchitecture) -> Result<Self> {
        if let Some(d) = raw.depth {
            if d != raw.widths.len() {
                return Err(Error::config(format!(
                    "declared depth {} does not match widths list of length {}",
                    d,
                    raw.widths.len()
                )));
            }
        }
        Architecture::new(
            raw.input_dim,
            raw.widths,
            raw.noise_vars,
            raw.gamma_u,
            raw.gammas,
        )
    }
}

impl From<Architecture> for RawArchitecture {
    fn from(a: Architecture) -> Self {
        RawArchitecture {
            depth: Some(a.depth()),
            input_dim: a.input_dim,
            widths: a.widths,
            noise_vars: a.noise_vars,
            gamma_u: a.gamma_u,
            gammas: a.gammas,
        }
    }
}

impl Architecture {
    /// Validate and build an architecture. `widths`, `noise_vars`, and
    /// `gammas` must all have length equal to the depth (at least 1); widths
    /// must be positive, noise variances non-negative (zero is the
    /// deterministic limit), and all regularization strengths strictly
    /// positive.
    pub fn new(
        input_dim: usize,
        widths: Vec<usize>,
        noise_vars: Vec<f64>,
        gamma_u: f64,
        gammas: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input dimension must be at least 1"));
        }
        let depth = widths.len();
        if depth == 0 {
            return Err(Error::config(
                "architecture needs at least one hidden layer",
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::config("all layer widths must be at least 1"));
        }
        if noise_vars.len() != depth || gammas.len() != depth {
            return Err(Error::config(format!(
                "per-layer lists must match depth {depth}: got {} noise variances, {} gammas",
                noise_vars.len(),
                gammas.len()
            )));
        }
        if noise_vars.iter().any(|&s| !s.is_finite() || s < 0.0) {
            return Err(Error::config("noise variances must be finite and >= 0"));
        }
        if !gamma_u.is_finite() || gamma_u <= 0.0 {
            return Err(Error::config(format!(
                "read-out regularization gamma_u must be finite and > 0, got {gamma_u}"
            )));
        }
        if gammas.iter().any(|&g| !g.is_finite() || g <= 0.0) {
            return Err(Error::config(
                "all layer regularization strengths must be finite and > 0",
            ));
        }
        Ok(Architecture {
            input_dim,
            widths,
            noise_vars,
            gamma_u,
            gammas,
        })
    }

    /// Number of hidden layers `D`.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Hidden widths `d_1..d_D`.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Width of hidden layer `i` (1-based).
    pub fn width(&self, i: usize) -> usize {
        self.widths[i - 1]
    }

    /// Width of the last hidden layer, `d_D` (the read-out fan-in).
    pub fn last_width(&self) -> usize {
        self.widths[self.depth() - 1]
    }

    /// Fan-in of layer `i` (1-based): `d` for the first layer, `d_{i-1}`
    /// otherwise.
    pub fn fan_in(&self, i: usize) -> usize {
        if i == 1 {
            self.input_dim
        } else {
            self.widths[i - 2]
        }
    }

    /// Noise variances `sigma_1^2..sigma_D^2`.
    pub fn noise_vars(&self) -> &[f64] {
        &self.noise_vars
    }

    /// Noise variance after layer `i` (1-based).
    pub fn noise_var(&self, i: usize) -> f64 {
        self.noise_vars[i - 1]
    }

    /// Read-out regularization strength.
    pub fn gamma_u(&self) -> f64 {
        self.gamma_u
    }

    /// Per-layer regularization strengths `gamma_1..gamma_D`.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Regularization strength of layer `i` (1-based).
    pub fn gamma(&self, i: usize) -> f64 {
        self.gammas[i - 1]
    }

    /// Total number of weight parameters (all `W_i` entries plus the
    /// read-out vector), excluding biases.
    pub fn weight_param_count(&self) -> usize {
        (1..=self.depth())
            .map(|i| self.width(i) * self.fan_in(i))
            .sum::<usize>()
            + self.last_width()
    }

    /// True if any layer has strictly positive noise variance.
    pub fn has_noise(&self) -> bool {
        self.noise_vars.iter().any(|&s| s > 0.0)
    }

    /// If this architecture is homogeneous — every hidden width equals the
    /// input dimension and all layers share one noise variance and one
    /// regularization strength (which also equals the read-out's) — return
    /// the compact description.
    pub fn as_homogeneous(&self) -> Option<HomogeneousArchitecture> {
        let d = self.input_dim;
        if self.widths.iter().any(|&w| w != d) {
            return None;
        }
        let sigma2 = self.noise_vars[0];
        if self.noise_vars.iter().any(|&s| s != sigma2) {
            return None;
        }
        let gamma = self.gammas[0];
        if self.gammas.iter().any(|&g| g != gamma) || self.gamma_u != gamma {
            return None;
        }
        Some(HomogeneousArchitecture {
            depth: self.depth(),
            dim: d,
            noise_var: sigma2,
            gamma,
        })
    }

    /// Aggregate constants of the scalar reduction; see
    /// [`AggregateConstants`].
    pub fn aggregate_constants(&self) -> AggregateConstants {
        let depth = self.depth();
        // Products over layers 2..=D. Empty products (depth 1) are 1, which
        // is exactly the convention under which the depth-1 theory is the
        // special case of the deep one.
        let log_mu: f64 = (2..=depth).map(|i| (self.width(i) as f64).ln()).sum();
        let log_s2: f64 = (2..=depth)
            .map(|i| (self.width(i) as f64 * (self.noise_var(i) + self.width(i) as f64)).ln())
            .sum();
        // c0 couples the first-layer magnitude to the shared scalar b of the
        // deeper layers. The deeper-layer ladder starts at layer 2; for
        // depth 1 the ladder is just the read-out, so the "layer 2" slot is
        // played by the read-out itself (gamma_u, width 1), making c0 = 1.
        let (gamma2, d2) = if depth >= 2 {
            (self.gamma(2), self.width(2) as f64)
        } else {
            (self.gamma_u, 1.0)
        };
        let d1 = self.width(1) as f64;
        let log_gamma_prod: f64 =
            self.gamma_u.ln() + (2..=depth).map(|i| self.gamma(i).ln()).sum::<f64>();
        let log_c0 = 0.5 * (depth as f64) * (gamma2 * d2 * d1).ln()
            - 0.5 * log_gamma_prod
            - log_mu
            - 0.5 * d1.ln();
        if depth >= LOG_SPACE_DEPTH {
            AggregateConstants {
                mu: log_mu.exp(),
                s2: log_s2.exp(),
                c0: log_c0.exp(),
            }
        } else {
            // Shallow: direct products (identical up to rounding; kept as
            // the plainly-readable reference path).
            let mu: f64 = (2..=depth).map(|i| self.width(i) as f64).product();
            let s2: f64 = (2..=depth)
                .map(|i| self.width(i) as f64 * (self.noise_var(i) + self.width(i) as f64))
                .product();
            let gamma_prod: f64 =
                self.gamma_u * (2..=depth).map(|i| self.gamma(i)).product::<f64>();
            let c0 =
                (gamma2 * d2 * d1).powf(0.5 * depth as f64) / (gamma_prod.sqrt() * mu * d1.sqrt());
            AggregateConstants { mu, s2, c0 }
        }
    }

    /// Layer magnitudes implied by the inter-layer balance conditions when
    /// layer 2 has magnitude `b > 0`: returns `(b_2..b_D, b_u)` such that
    /// `gamma_{k+1} d_{k+1} b_{k+1}^2 = gamma_k d_{k-1} b_k^2` for
    /// `k = 2..D`, with the read-out slot `(gamma_u, width 1)` closing the
    /// ladder. Only meaningful for depth >= 2.
    pub fn balance_chain(&self, b: f64) -> (Vec<f64>, f64) {
        let depth = self.depth();
        assert!(depth >= 2, "balance chain applies to depth >= 2");
        let mut bs = Vec::with_capacity(depth - 1);
        let mut t = b * b; // t = b_k^2, starting at k = 2
        bs.push(b.abs());
        for k in 2..=depth {
            let (gamma_next, d_next) = if k < depth {
                (self.gamma(k + 1), self.width(k + 1) as f64)
            } else {
                (self.gamma_u, 1.0)
            };
            let d_prev = self.width(k - 1) as f64;
            t *= self.gamma(k) * d_prev / (gamma_next * d_next);
            if k < depth {
                bs.push(t.sqrt());
            }
        }
        (bs, t.sqrt())
    }
}

/// Compact description of a homogeneous architecture: `depth` hidden layers
/// of width equal to the input dimension, one shared noise variance, and
/// one shared regularization strength for all layers and the read-out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogeneousArchitecture {
    /// Number of hidden layers.
    pub depth: usize,
    /// Input dimension = every hidden width.
    pub dim: usize,
    /// Shared noise variance.
    pub noise_var: f64,
    /// Shared regularization strength.
    pub gamma: f64,
}

impl HomogeneousArchitecture {
    /// Expand into a full [`Architecture`].
    pub fn to_architecture(self) -> Result<Architecture> {
        Architecture::new(
            self.dim,
            vec![self.dim; self.depth],
            vec![self.noise_var; self.depth],
            self.gamma,
            vec![self.gamma; self.depth],
        )
    }
}

/// Products through which the deeper layers (2..D) and the read-out enter
/// the scalar reduction of the optimum.
///
/// * `mu`: product of widths `d_2 * ... * d_D` — the count of noise paths
///   contributed by the deeper stack (1 for depth 1).
/// * `s2`: product of `d_i (sigma_i^2 + d_i)` over `i = 2..D` — the
///   second-moment amplification of the deeper stack (1 for depth 1).
/// * `c0`: constant tying the product of balanced layer magnitudes to the
///   layer-2 scalar: `b_u * b_2 * ... * b_D = c0 * b^depth` where `b = b_2`
///   (for depth 1, `c0 = 1` and the scalar is the read-out magnitude
///   itself).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateConstants {
    /// Width product of layers 2..D.
    pub mu: f64,
    /// Noise-amplification product of layers 2..D.
    pub s2: f64,
    /// Balanced-magnitude coupling constant.
    pub c0: f64,
}
