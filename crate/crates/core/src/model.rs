//! Diagonal Galerkin state model.
//!
//! The state space is spanned by `n_modes` orthonormal eigenvectors `e_k`.
//! The reference Gaussian measure is the product of centered normals with
//! variance `1/q_k`; the drift operator acts by `A e_k = -lam_k e_k`; the
//! noise operator is diagonal with non-zero entries `sigma_k`.

use std::ops::{Add, Index, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Coordinates `z_k = <z, e_k>` of a state-space point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector<T> {
    coords: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Self { coords }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coords: vec![T::zero(); n],
        }
    }

    /// Unit vector along mode `k` (zero-based).
    pub fn basis(n: usize, k: usize) -> Self {
        let mut v = Self::zeros(n);
        v.coords[k] = T::one();
        v
    }

    pub fn from_f64(coords: &[f64]) -> Self {
        Self {
            coords: coords.iter().map(|&c| T::of(c)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.coords.iter().map(|c| c.f64()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.coords.iter()
    }

    pub fn scale(&self, a: T) -> Self {
        Self {
            coords: self.coords.iter().map(|&c| c * a).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.coords
            .iter()
            .zip(&other.coords)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
    }

    /// Squared state norm `sum z_k^2`.
    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    /// State norm `||z||_B`.
    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.coords.iter().all(|c| c.is_zero())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.coords.iter_mut().zip(&other.coords) {
            *a += b;
        }
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.len() == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: n,
                got: self.len(),
            })
        }
    }
}

impl<T: Scalar> Index<usize> for Vector<T> {
    type Output = T;

    fn index(&self, k: usize) -> &T {
        &self.coords[k]
    }
}

impl<T: Scalar> Add for &Vector<T> {
    type Output = Vector<T>;

    fn add(self, rhs: Self) -> Vector<T> {
        Vector::new(self.coords.iter().zip(&rhs.coords).map(|(&a, &b)| a + b).collect())
    }
}

impl<T: Scalar> Sub for &Vector<T> {
    type Output = Vector<T>;

    fn sub(self, rhs: Self) -> Vector<T> {
        Vector::new(self.coords.iter().zip(&rhs.coords).map(|(&a, &b)| a - b).collect())
    }
}

/// Which Hilbert norm to measure a vector in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// `||z||_B^2 = sum z_k^2`
    State,
    /// `||h||_H^2 = sum q_k^2 h_k^2`
    CameronMartin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalModel<T> {
    q: Vec<T>,
    lam: Vec<T>,
    sigma: Vec<T>,
}

impl<T: Scalar> DiagonalModel<T> {
    /// Builds a model from precisions, drift eigenvalues and noise
    /// diagonal. `sigma = None` means the identity.
    pub fn new(q: Vec<T>, lam: Vec<T>, sigma: Option<Vec<T>>) -> Result<Self> {
        let n = q.len();
        if n == 0 {
            return Err(Error::invalid("n_modes", "must be at least 1"));
        }
        if lam.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lam.len(),
            });
        }
        let sigma = sigma.unwrap_or_else(|| vec![T::one(); n]);
        if sigma.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: sigma.len(),
            });
        }
        if let Some(k) = q.iter().position(|&v| !(v > T::zero() && v.is_finite())) {
            return Err(Error::invalid(
                "q",
                format!("q[{k}] = {} is not a positive finite number", q[k]),
            ));
        }
        if let Some(k) = lam.iter().position(|&v| !(v >= T::zero() && v.is_finite())) {
            return Err(Error::invalid(
                "lam",
                format!("lam[{k}] = {} is negative or not finite", lam[k]),
            ));
        }
        if let Some(k) = sigma.iter().position(|&v| v.is_zero() || !v.is_finite()) {
            return Err(Error::invalid(
                "sigma",
                format!("sigma[{k}] = {} has a kernel", sigma[k]),
            ));
        }
        Ok(Self { q, lam, sigma })
    }

    /// Polynomial family `q_k = k^(1+delta)`, `lam_k = k^(2/d)`, `sigma = I`.
    pub fn gaussian(n_modes: usize, delta: f64, d: f64) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("n_modes", "must be at least 1"));
        }
        if !(delta > 0.0) {
            return Err(Error::invalid("delta", format!("must be positive, got {delta}")));
        }
        if !(d > 0.0) {
            return Err(Error::invalid("d", format!("must be positive, got {d}")));
        }
        let q = (1..=n_modes).map(|k| T::of((k as f64).powf(1.0 + delta))).collect();
        let lam = (1..=n_modes).map(|k| T::of((k as f64).powf(2.0 / d))).collect();
        Self::new(q, lam, None)
    }

    /// Spectral surrogate of the Wiener-space model: Karhunen-Loeve modes
    /// of Brownian motion under the Dirichlet-Neumann Laplacian on [0, 1],
    /// `q_k = lam_k = ((k - 1/2) pi)^2`.
    pub fn wiener_surrogate(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("n_modes", "must be at least 1"));
        }
        let vals: Vec<T> = (1..=n_modes)
            .map(|k| {
                let w = (T::of(k as f64) - T::of(0.5)) * T::PI();
                w * w
            })
            .collect();
        Self::new(vals.clone(), vals, None)
    }

    pub fn n_modes(&self) -> usize {
        self.q.len()
    }

    pub fn q(&self) -> &[T] {
        &self.q
    }

    pub fn lam(&self) -> &[T] {
        &self.lam
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    /// Smallest drift eigenvalue, the exponential decay rate of `T_t`.
    pub fn min_lam(&self) -> T {
        self.lam.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn zeros(&self) -> Vector<T> {
        Vector::zeros(self.n_modes())
    }

    /// `T_t x = (e^{-lam_k t} x_k)_k`.
    pub fn semigroup_apply(&self, t: T, x: &Vector<T>) -> Result<Vector<T>> {
        if !(t >= T::zero()) {
            return Err(Error::NegativeTime(t.f64()));
        }
        x.check_len(self.n_modes())?;
        Ok(self.semigroup_unchecked(t, x))
    }

    pub(crate) fn semigroup_unchecked(&self, t: T, x: &Vector<T>) -> Vector<T> {
        Vector::new(
            self.lam
                .iter()
                .zip(x.iter())
                .map(|(&l, &c)| (-l * t).exp() * c)
                .collect(),
        )
    }

    /// `sigma v`
    pub fn apply_sigma(&self, v: &Vector<T>) -> Vector<T> {
        Vector::new(self.sigma.iter().zip(v.iter()).map(|(&s, &c)| s * c).collect())
    }

    /// `sigma^{-1} v`
    pub fn apply_sigma_inv(&self, v: &Vector<T>) -> Vector<T> {
        Vector::new(self.sigma.iter().zip(v.iter()).map(|(&s, &c)| c / s).collect())
    }

    /// `T_s sigma v` accumulated into `acc`, the contribution of one jump.
    pub(crate) fn accumulate_propagated_jump(&self, s: T, jump: &Vector<T>, acc: &mut Vector<T>) {
        for (k, a) in acc.coords.iter_mut().enumerate() {
            *a += (-self.lam[k] * s).exp() * self.sigma[k] * jump.coords[k];
        }
    }

    pub fn norm(&self, kind: NormKind, v: &Vector<T>) -> T {
        match kind {
            NormKind::State => v.norm(),
            NormKind::CameronMartin => self
                .q
                .iter()
                .zip(v.iter())
                .fold(T::zero(), |acc, (&q, &h)| acc + q * q * h * h)
                .sqrt(),
        }
    }

    /// `sum q_k h_k^2`, the exponent of the second moment of the shift density.
    pub fn precision_norm_sq(&self, h: &Vector<T>) -> T {
        self.q
            .iter()
            .zip(h.iter())
            .fold(T::zero(), |acc, (&q, &c)| acc + q * c * c)
    }

    /// One draw from the reference Gaussian measure.
    pub fn gaussian_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<T> {
        Vector::new(self.q.iter().map(|&q| T::std_normal(rng) / q.sqrt()).collect())
    }

    /// `log phi_h(z) = sum_k (q_k h_k z_k - q_k h_k^2 / 2)`.
    pub fn cm_log_density(&self, h: &Vector<T>, z: &Vector<T>) -> Result<T> {
        h.check_len(self.n_modes())?;
        z.check_len(self.n_modes())?;
        Ok(self.cm_log_density_unchecked(h, z))
    }

    pub(crate) fn cm_log_density_unchecked(&self, h: &Vector<T>, z: &Vector<T>) -> T {
        let half = T::of(0.5);
        self.q
            .iter()
            .zip(h.iter().zip(z.iter()))
            .fold(T::zero(), |acc, (&q, (&hk, &zk))| acc + q * hk * (zk - half * hk))
    }

    /// Density of the law of `Z + h` with respect to the law of `Z`.
    pub fn cm_density(&self, h: &Vector<T>, z: &Vector<T>) -> Result<T> {
        Ok(self.cm_log_density(h, z)?.exp())
    }

    /// `int phi_h^2 dmu = exp(sum q_k h_k^2)`.
    pub fn cm_density_squared_integral(&self, h: &Vector<T>) -> Result<T> {
        h.check_len(self.n_modes())?;
        Ok(self.precision_norm_sq(h).exp())
    }

    /// `beta(eps) = max_k e^{-eps lam_k} q_k^2`.
    pub fn beta(&self, eps: T) -> Result<T> {
        if !(eps > T::zero()) {
            return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
        }
        Ok(self
            .q
            .iter()
            .zip(&self.lam)
            .map(|(&q, &l)| (-eps * l).exp() * q * q)
            .fold(T::zero(), T::max))
    }

    /// `max_k q_k e^{-lam_k s}`: the squared-norm smoothing profile of the
    /// semigroup from the state norm into the precision-weighted norm.
    pub fn smoothing_profile(&self, s: T) -> T {
        self.q
            .iter()
            .zip(&self.lam)
            .map(|(&q, &l)| q * (-l * s).exp())
            .fold(T::zero(), T::max)
    }
}
