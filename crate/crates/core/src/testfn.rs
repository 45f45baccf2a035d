//! Bounded test functions on the state space.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::Vector;
use crate::scalar::Scalar;

/// A bounded measurable function `f: R^n -> [-1, 1]` (up to the constant
/// variant, which may take any value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundedFn {
    Const {
        c: f64,
    },
    /// `cos(freq * z_k)`
    CosCoord {
        k: usize,
        freq: f64,
    },
    /// `sign(<w, z> - offset)`, with `sign(0) = 1`.
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
    },
    /// `cos(<w, z> + phase)`; its sup norm is exactly 1.
    PlaneWave {
        wave: Vec<f64>,
        phase: f64,
    },
}

impl BoundedFn {
    pub fn eval<T: Scalar>(&self, z: &Vector<T>) -> f64 {
        match self {
            BoundedFn::Const { c } => *c,
            BoundedFn::CosCoord { k, freq } => (freq * z[*k].f64()).cos(),
            BoundedFn::Halfspace { normal, offset } => {
                if inner(normal, z) - offset >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            BoundedFn::PlaneWave { wave, phase } => (inner(wave, z) + phase).cos(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        match self {
            BoundedFn::Const { c } => c.abs(),
            _ => 1.0,
        }
    }

    /// Plane wave with Gaussian wave vector of per-coordinate scale `scale`
    /// and uniform phase.
    pub fn random_plane_wave<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Self {
        let wave = (0..n).map(|_| scale * f64::std_normal(rng)).collect();
        let phase = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        BoundedFn::PlaneWave { wave, phase }
    }
}

fn inner<T: Scalar>(w: &[f64], z: &Vector<T>) -> f64 {
    w.iter().zip(z.iter()).map(|(a, b)| a * b.f64()).sum()
}
