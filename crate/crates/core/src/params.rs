//! Network parameters: per-layer weight matrices, the read-out vector, and
//! (optionally non-zero) biases.
//!
//! [`Params`] doubles as the container for gradients — a gradient is just
//! another point of the same parameter space — so optimizers can treat both
//! uniformly.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::Architecture;
use crate::error::{Error, Result};

/// A full parameter assignment for an [`Architecture`].
///
/// Biases are always materialized (zero vectors when unused); the exact
/// objectives include them, and zero biases contribute nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Read-out vector `u` of length `d_D`.
    pub u: DVector<f64>,
    /// Weight matrices `W_1..W_D`; `ws[i-1]` has shape `d_i x fan_in(i)`.
    pub ws: Vec<DMatrix<f64>>,
    /// Read-out bias.
    pub bias_u: f64,
    /// Per-layer biases; `bias_ws[i-1]` has length `d_i`.
    pub bias_ws: Vec<DVector<f64>>,
}

/// Initialization schemes for optimizer starting points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    /// All parameters zero.
    Origin,
    /// Every weight entry drawn uniformly from `[-radius, radius]`;
    /// biases zero.
    Uniform { radius: f64 },
    /// Every weight entry drawn uniformly from
    /// `[-sqrt(3/fan_in), sqrt(3/fan_in)]` for its layer (the classic
    /// variance-preserving scheme for wide nets); biases zero.
    KaimingLike,
}

impl Params {
    /// All-zero parameters for an architecture.
    pub fn zeros(arch: &Architecture) -> Self {
        let depth = arch.depth();
        Params {
            u: DVector::zeros(arch.last_width()),
            ws: (1..=depth)
                .map(|i| DMatrix::zeros(arch.width(i), arch.fan_in(i)))
                .collect(),
            bias_u: 0.0,
            bias_ws: (1..=depth).map(|i| DVector::zeros(arch.width(i))).collect(),
        }
    }

    /// Draw parameters according to `scheme` using the supplied RNG.
    pub fn init<R: Rng>(arch: &Architecture, scheme: InitScheme, rng: &mut R) -> Self {
        let mut p = Params::zeros(arch);
        match scheme {
            InitScheme::Origin => {}
            InitScheme::Uniform { radius } => {
                let r = radius.abs();
                for w in &mut p.ws {
                    for e in w.iter_mut() {
                        *e = rng.gen_range(-r..=r);
                    }
                }
                for e in p.u.iter_mut() {
                    *e = rng.gen_range(-r..=r);
                }
            }
            InitScheme::KaimingLike => {
                for (i, w) in p.ws.iter_mut().enumerate() {
                    let bound = (3.0 / arch.fan_in(i + 1) as f64).sqrt();
                    for e in w.iter_mut() {
                        *e = rng.gen_range(-bound..=bound);
                    }
                }
                let bound = (3.0 / arch.last_width() as f64).sqrt();
                for e in p.u.iter_mut() {
                    *e = rng.gen_range(-bound..=bound);
                }
            }
        }
        p
    }

    /// Check that shapes match the architecture.
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let depth = arch.depth();
        if self.ws.len() != depth || self.bias_ws.len() != depth {
            return Err(Error::config(format!(
                "parameters have {} layers, architecture has {depth}",
                self.ws.len()
            )));
        }
        if self.u.len() != arch.last_width() {
            return Err(Error::config(format!(
                "read-out has length {}, expected {}",
                self.u.len(),
                arch.last_width()
            )));
        }
        for i in 1..=depth {
            let w = &self.ws[i - 1];
            if w.nrows() != arch.width(i) || w.ncols() != arch.fan_in(i) {
                return Err(Error::config(format!(
                    "layer {i} weight is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    arch.width(i),
                    arch.fan_in(i)
                )));
            }
            if self.bias_ws[i - 1].len() != arch.width(i) {
                return Err(Error::config(format!(
                    "layer {i} bias has length {}, expected {}",
                    self.bias_ws[i - 1].len(),
                    arch.width(i)
                )));
            }
        }
        Ok(())
    }

    /// True when any bias entry is non-zero.
    pub fn has_bias(&self) -> bool {
        self.bias_u != 0.0 || self.bias_ws.iter().any(|b| b.iter().any(|&e| e != 0.0))
    }

    /// Squared Euclidean norm over all parameters (biases included).
    pub fn norm_squared(&self) -> f64 {
        self.u.norm_squared()
            + self.bias_u * self.bias_u
            + self.ws.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.bias_ws.iter().map(|b| b.norm_squared()).sum::<f64>()
    }

    /// Euclidean norm over all parameters.
    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// In-place `self += alpha * other` over every parameter. Used for
    /// gradient steps (`alpha = -lr`).
    pub fn scaled_add(&mut self, alpha: f64, other: &Params) {
        self.u.zip_apply(&other.u, |e, o| *e += alpha * o);
        self.bias_u += alpha * other.bias_u;
        for (w, ow) in self.ws.iter_mut().zip(&other.ws) {
            w.zip_apply(ow, |e, o| *e += alpha * o);
        }
        for (b, ob) in self.bias_ws.iter_mut().zip(&other.bias_ws) {
            b.zip_apply(ob, |e, o| *e += alpha * o);
        }
    }

    /// Number of scalar coordinates (`include_bias` counts bias entries).
    pub fn coord_count(&self, include_bias: bool) -> usize {
        let weights = self.u.len() + self.ws.iter().map(|w| w.len()).sum::<usize>();
        if include_bias {
            weights + 1 + self.bias_ws.iter().map(|b| b.len()).sum::<usize>()
        } else {
            weights
        }
    }

    /// Flatten into a single coordinate vector: read-out first, then each
    /// weight matrix in column-major order, then (optionally) the read-out
    /// bias and each layer bias. Inverse of [`Params::set_from_flat`].
    pub fn flatten(&self, include_bias: bool) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.coord_count(include_bias));
        out.extend(self.u.iter().copied());
        for w in &self.ws {
            out.extend(w.iter().copied());
        }
        if include_bias {
            out.push(self.bias_u);
            for b in &self.bias_ws {
                out.extend(b.iter().copied());
            }
        }
        DVector::from_vec(out)
    }

    /// Overwrite coordinates from a flat vector laid out as in
    /// [`Params::flatten`].
    pub fn set_from_flat(&mut self, flat: &DVector<f64>, include_bias: bool) {
        assert_eq!(
            flat.len(),
            self.coord_count(include_bias),
            "flat vector length mismatch"
        );
        let mut k = 0;
        for e in self.u.iter_mut() {
            *e = flat[k];
            k += 1;
        }
        for w in &mut self.ws {
            for e in w.iter_mut() {
                *e = flat[k];
                k += 1;
            }
        }
        if include_bias {
            self.bias_u = flat[k];
            k += 1;
            for b in &mut self.bias_ws {
                for e in b.iter_mut() {
                    *e = flat[k];
                    k += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture::new(3, vec![4, 2], vec![1.0, 0.5], 0.1, vec![0.1, 0.2]).unwrap()
    }

    #[test]
    fn zeros_have_correct_shapes_and_validate() {
        let a = arch();
        let p = Params::zeros(&a);
        p.validate(&a).unwrap();
        assert_eq!(p.u.len(), 2);
        assert_eq!(p.ws[0].shape(), (4, 3));
        assert_eq!(p.ws[1].shape(), (2, 4));
        assert_eq!(p.bias_ws[0].len(), 4);
        assert!(!p.has_bias());
        assert_eq!(p.norm(), 0.0);
    }

    #[test]
    fn validate_catches_shape_mismatch() {
        let a = arch();
        let other = Architecture::new(3, vec![4, 3], vec![0.0, 0.0], 0.1, vec![0.1, 0.1]).unwrap();
        let p = Params::zeros(&other);
        assert!(p.validate(&a).is_err());
    }

    #[test]
    fn kaiming_like_respects_per_layer_bounds() {
        let a = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Params::init(&a, InitScheme::KaimingLike, &mut rng);
        let b1 = (3.0_f64 / 3.0).sqrt();
        let b2 = (3.0_f64 / 4.0).sqrt();
        assert!(p.ws[0].iter().all(|&e| e.abs() <= b1));
        assert!(p.ws[1].iter().all(|&e| e.abs() <= b2));
        assert!(p.u.iter().all(|&e| e.abs() <= (3.0_f64 / 2.0).sqrt()));
        assert!(!p.has_bias());
        // Same seed, same draw.
        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(p, Params::init(&a, InitScheme::KaimingLike, &mut rng2));
    }

    #[test]
    fn flatten_round_trip_with_and_without_bias() {
        let a = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = Params::init(&a, InitScheme::Uniform { radius: 0.8 }, &mut rng);
        p.bias_u = 0.3;
        p.bias_ws[1][0] = -0.2;
        for include_bias in [false, true] {
            let flat = p.flatten(include_bias);
            assert_eq!(flat.len(), p.coord_count(include_bias));
            let mut q = p.clone();
            q.set_from_flat(&flat, include_bias);
            assert_eq!(p, q);
        }
        assert!(p.has_bias());
    }

    #[test]
    fn scaled_add_is_componentwise() {
        let a = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Params::init(&a, InitScheme::Uniform { radius: 1.0 }, &mut rng);
        let g = Params::init(&a, InitScheme::Uniform { radius: 1.0 }, &mut rng);
        let mut q = p.clone();
        q.scaled_add(-0.5, &g);
        let expect = p.flatten(true) - 0.5 * g.flatten(true);
        assert!((q.flatten(true) - expect).amax() < 1e-15);
    }
}
