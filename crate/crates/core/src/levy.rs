//! Jump measures `nu_0 = rho_0 mu`, compound Poisson paths and the mild
//! solution.
//!
//! The laboratory identifies the full Levy measure with its absolutely
//! continuous part `nu_0`, so the noise is a single compound Poisson
//! process. Infinite-activity densities are only simulated after removing
//! jumps with `||z|| < eta`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{DiagonalModel, Vector};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::stats::{pooled_stderr, Estimate};

/// Proposals allowed per accepted jump before the sampler gives up.
pub const MAX_PROPOSALS: u64 = 1_000_000;
/// Smallest admissible acceptance rate `lambda_0 / M` of the sampler.
pub const MIN_ACCEPTANCE: f64 = 1e-4;

/// Density of the jump measure with respect to the reference Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Rho0<T> {
    Constant {
        c: T,
    },
    IndicatorBall {
        center: Vector<T>,
        radius: T,
        level: T,
    },
    /// `c / (1 + ||z|| / scale)`
    BoundedLipschitz {
        c: T,
        scale: T,
    },
    /// `1_{(0, r0)}(||z||) g(||z||)^{-1} ||z||^{-(1 + alpha)}` where `g` is
    /// the density of `||z||` under a chi surrogate of the reference law.
    StableLike {
        alpha: T,
        r0: T,
    },
}

impl<T: Scalar> Rho0<T> {
    fn validate(&self, n: usize) -> Result<()> {
        let pos = |name: &'static str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        match self {
            Rho0::Constant { c } => pos("c", *c),
            Rho0::IndicatorBall { center, radius, level } => {
                center.check_len(n)?;
                pos("radius", *radius)?;
                pos("level", *level)
            }
            Rho0::BoundedLipschitz { c, scale } => {
                pos("c", *c)?;
                pos("scale", *scale)
            }
            Rho0::StableLike { alpha, r0 } => {
                if !(*alpha > T::zero() && *alpha < T::of(2.0)) {
                    return Err(Error::invalid("alpha", format!("must lie in (0, 2), got {alpha}")));
                }
                pos("r0", *r0)
            }
        }
    }
}

/// Total mass of a (truncated) jump measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mass {
    Finite { value: f64, stderr: f64 },
    Infinite,
}

impl Mass {
    pub fn value(&self) -> Option<f64> {
        match self {
            Mass::Finite { value, .. } => Some(*value),
            Mass::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Mass::Infinite)
    }
}

/// Scaled chi law used to normalize the stable-like density: `||z|| = s X`
/// with `X ~ chi(n)` and `s^2 = (sum_k 1/q_k) / n`, which matches the
/// second moment of `||z||` under the reference measure.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ChiLaw {
    dof: f64,
    scale: f64,
    log_norm: f64,
}

impl ChiLaw {
    fn for_model<T: Scalar>(model: &DiagonalModel<T>) -> Self {
        let n = model.n_modes() as f64;
        let trace: f64 = model.q().iter().map(|q| 1.0 / q.f64()).sum();
        let scale = (trace / n).sqrt();
        let log_norm = (0.5 * n - 1.0) * std::f64::consts::LN_2 + ln_gamma(0.5 * n) + scale.ln();
        Self {
            dof: n,
            scale,
            log_norm,
        }
    }

    fn ln_pdf(&self, r: f64) -> f64 {
        let x = r / self.scale;
        (self.dof - 1.0) * x.ln() - 0.5 * x * x - self.log_norm
    }

    /// `log( g(r)^{-1} r^{-(1+alpha)} )`
    fn ln_stable(&self, r: f64, alpha: f64) -> f64 {
        -self.ln_pdf(r) - (1.0 + alpha) * r.ln()
    }

    /// Minimizer of `ln_stable` over `r > 0`.
    fn stable_argmin(&self, alpha: f64) -> f64 {
        self.scale * (self.dof + alpha).sqrt()
    }
}

/// A jump-measure family bound to a model, with its computed total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct LevySpec<T> {
    rho0: Rho0<T>,
    eta: T,
    n_modes: usize,
    chi: ChiLaw,
    lambda0: T,
    lambda0_stderr: f64,
    envelope: T,
}

impl<T: Scalar> LevySpec<T> {
    fn bare(rho0: Rho0<T>, eta: T, model: &DiagonalModel<T>) -> Result<Self> {
        rho0.validate(model.n_modes())?;
        if !(eta >= T::zero() && eta.is_finite()) {
            return Err(Error::invalid("eta", format!("must be non-negative, got {eta}")));
        }
        let mut spec = Self {
            rho0,
            eta,
            n_modes: model.n_modes(),
            chi: ChiLaw::for_model(model),
            lambda0: T::nan(),
            lambda0_stderr: f64::NAN,
            envelope: T::nan(),
        };
        spec.envelope = spec.compute_envelope()?;
        Ok(spec)
    }

    /// Builds the spec and estimates `lambda_0 = nu_0(||z|| >= eta)` with
    /// `budget` reference samples (exact for an untruncated constant).
    pub fn calibrate(
        rho0: Rho0<T>,
        eta: T,
        model: &DiagonalModel<T>,
        budget: usize,
        stream: SeedStream,
    ) -> Result<Self> {
        let mut spec = Self::bare(rho0, eta, model)?;
        let (value, stderr) = match spec.mass(model, budget, stream)? {
            Mass::Infinite => return Err(Error::InfiniteMass),
            Mass::Finite { value, stderr } => (value, stderr),
        };
        spec.set_lambda0(value, stderr)?;
        Ok(spec)
    }

    /// Builds the spec with a known total mass.
    pub fn with_lambda0(rho0: Rho0<T>, eta: T, model: &DiagonalModel<T>, lambda0: f64) -> Result<Self> {
        let mut spec = Self::bare(rho0, eta, model)?;
        if spec.is_infinite_activity() {
            return Err(Error::InfiniteMass);
        }
        spec.set_lambda0(lambda0, 0.0)?;
        Ok(spec)
    }

    fn set_lambda0(&mut self, value: f64, stderr: f64) -> Result<()> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::invalid(
                "lambda0",
                format!("total mass must be positive and finite, got {value}"),
            ));
        }
        let rate = value / self.envelope.f64();
        if rate < MIN_ACCEPTANCE {
            return Err(Error::LowAcceptance {
                accepted: 0,
                proposals: MAX_PROPOSALS,
                rate,
            });
        }
        self.lambda0 = T::of(value);
        self.lambda0_stderr = stderr;
        Ok(())
    }

    fn is_infinite_activity(&self) -> bool {
        matches!(self.rho0, Rho0::StableLike { .. }) && self.eta.is_zero()
    }

    fn compute_envelope(&self) -> Result<T> {
        Ok(match &self.rho0 {
            Rho0::Constant { c } => *c,
            Rho0::IndicatorBall { level, .. } => *level,
            Rho0::BoundedLipschitz { c, scale } => *c / (T::one() + self.eta / *scale),
            Rho0::StableLike { alpha, r0 } => {
                if self.eta.is_zero() {
                    return Ok(T::infinity());
                }
                if self.eta >= *r0 {
                    return Err(Error::invalid(
                        "eta",
                        format!("must be below r0 = {r0}, got {}", self.eta),
                    ));
                }
                // log of the density has a single interior minimum, so the
                // supremum over [eta, r0) sits at an endpoint
                let a = alpha.f64();
                let lo = self.chi.ln_stable(self.eta.f64(), a);
                let hi = self.chi.ln_stable(r0.f64(), a);
                T::of(lo.max(hi).exp())
            }
        })
    }

    pub fn rho0(&self) -> &Rho0<T> {
        &self.rho0
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Total mass of the truncated jump measure.
    pub fn lambda0(&self) -> T {
        self.lambda0
    }

    /// Monte Carlo error of `lambda0` (0 when exact).
    pub fn lambda0_stderr(&self) -> f64 {
        self.lambda0_stderr
    }

    /// Analytic supremum of the truncated density.
    pub fn envelope(&self) -> T {
        self.envelope
    }

    /// Expected acceptance probability of the rejection sampler.
    pub fn acceptance_rate(&self) -> f64 {
        self.lambda0.f64() / self.envelope.f64()
    }

    /// The same family with a different truncation level and re-estimated mass.
    pub fn retruncate(&self, eta: T, model: &DiagonalModel<T>, budget: usize, stream: SeedStream) -> Result<Self> {
        Self::calibrate(self.rho0.clone(), eta, model, budget, stream)
    }

    /// Untruncated `rho_0(z)`.
    pub fn rho0_at(&self, z: &Vector<T>) -> T {
        match &self.rho0 {
            Rho0::Constant { c } => *c,
            Rho0::IndicatorBall { center, radius, level } => {
                if (z - center).norm() < *radius {
                    *level
                } else {
                    T::zero()
                }
            }
            Rho0::BoundedLipschitz { c, scale } => *c / (T::one() + z.norm() / *scale),
            Rho0::StableLike { alpha, r0 } => {
                let r = z.norm();
                if r > T::zero() && r < *r0 {
                    T::of(self.chi.ln_stable(r.f64(), alpha.f64()).exp())
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Density of the truncated jump measure, `rho_0(z) 1{||z|| >= eta}`.
    pub fn density(&self, z: &Vector<T>) -> T {
        if self.eta > T::zero() && z.norm() < self.eta {
            T::zero()
        } else {
            self.rho0_at(z)
        }
    }

    /// Infimum of the truncated density over the closed ball `B(center, radius)`.
    pub fn inf_on_ball(&self, center: &Vector<T>, radius: T) -> T {
        let c = center.norm();
        let lo = c - radius;
        let hi = c + radius;
        if self.eta > T::zero() && lo < self.eta {
            return T::zero();
        }
        match &self.rho0 {
            Rho0::Constant { c } => *c,
            Rho0::IndicatorBall {
                center: z0,
                radius: r0,
                level,
            } => {
                if (center - z0).norm() + radius < *r0 {
                    *level
                } else {
                    T::zero()
                }
            }
            Rho0::BoundedLipschitz { c, scale } => *c / (T::one() + hi / *scale),
            Rho0::StableLike { alpha, r0 } => {
                if lo <= T::zero() || hi >= *r0 {
                    return T::zero();
                }
                let a = alpha.f64();
                let r = self.chi.stable_argmin(a).clamp(lo.f64(), hi.f64());
                T::of(self.chi.ln_stable(r, a).exp())
            }
        }
    }

    fn mass(&self, model: &DiagonalModel<T>, budget: usize, stream: SeedStream) -> Result<Mass> {
        if self.is_infinite_activity() {
            return Ok(Mass::Infinite);
        }
        if let Rho0::Constant { c } = self.rho0 {
            if self.eta.is_zero() {
                return Ok(Mass::Finite {
                    value: c.f64(),
                    stderr: 0.0,
                });
            }
        }
        let est = self.integrate(model, budget, stream, |_| true)?;
        Ok(Mass::Finite {
            value: est.mean,
            stderr: est.stderr,
        })
    }

    fn integrate<P>(&self, model: &DiagonalModel<T>, budget: usize, stream: SeedStream, pred: P) -> Result<Estimate>
    where
        P: Fn(&Vector<T>) -> bool + Sync + Send,
    {
        if budget < 2 {
            return Err(Error::TooFewSamples { got: budget, min: 2 });
        }
        let xs = stream.map(budget, |_, rng| {
            let z = model.gaussian_sample(rng);
            if pred(&z) {
                self.density(&z).f64()
            } else {
                0.0
            }
        });
        Ok(Estimate::from_samples(&xs))
    }

    fn check_model(&self, model: &DiagonalModel<T>) -> Result<()> {
        if model.n_modes() == self.n_modes {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.n_modes,
                got: model.n_modes(),
            })
        }
    }
}

/// Monte Carlo estimate of `nu_0(||z|| >= eta)`; exact for an untruncated
/// constant density and flagged infinite for untruncated stable-like ones.
pub fn nu0_mass<T: Scalar>(
    rho0: &Rho0<T>,
    eta: T,
    model: &DiagonalModel<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<Mass> {
    LevySpec::bare(rho0.clone(), eta, model)?.mass(model, budget, stream)
}

/// Monte Carlo estimate of `nu_0(A)` for the truncated measure, `A` given
/// by its indicator.
pub fn nu0_mass_on<T, P>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    indicator: P,
    budget: usize,
    stream: SeedStream,
) -> Result<Estimate>
where
    T: Scalar,
    P: Fn(&Vector<T>) -> bool + Sync + Send,
{
    spec.check_model(model)?;
    spec.integrate(model, budget, stream, indicator)
}

/// One draw from the normalized jump law `nu_0 / lambda_0` by rejection
/// from the reference Gaussian.
pub fn sample_jump<T: Scalar, R: Rng + ?Sized>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    rng: &mut R,
) -> Result<Vector<T>> {
    for _ in 0..MAX_PROPOSALS {
        let z = model.gaussian_sample(rng);
        let u = T::unit(rng);
        if u * spec.envelope < spec.density(&z) {
            return Ok(z);
        }
    }
    Err(Error::LowAcceptance {
        accepted: 0,
        proposals: MAX_PROPOSALS,
        rate: 0.0,
    })
}

/// One realization of the compound Poisson driver on `[0, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath<T> {
    horizon: T,
    times: Vec<T>,
    sizes: Vec<Vector<T>>,
}

impl<T: Scalar> JumpPath<T> {
    pub fn empty(horizon: T) -> Self {
        Self {
            horizon,
            times: Vec::new(),
            sizes: Vec::new(),
        }
    }

    /// Path with the given jumps; times must increase strictly inside `(0, horizon]`.
    pub fn new(horizon: T, jumps: Vec<(T, Vector<T>)>) -> Result<Self> {
        if !(horizon > T::zero()) {
            return Err(Error::invalid("horizon", format!("must be positive, got {horizon}")));
        }
        let mut prev = T::zero();
        for (i, (s, _)) in jumps.iter().enumerate() {
            if !(*s > prev && *s <= horizon) {
                return Err(Error::invalid(
                    "jumps",
                    format!("time {s} at index {i} breaks strict ordering in (0, {horizon}]"),
                ));
            }
            prev = *s;
        }
        let (times, sizes) = jumps.into_iter().unzip();
        Ok(Self { horizon, times, sizes })
    }

    pub fn horizon(&self) -> T {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn sizes(&self) -> &[Vector<T>] {
        &self.sizes
    }

    pub fn jumps(&self) -> impl Iterator<Item = (T, &Vector<T>)> {
        self.times.iter().copied().zip(&self.sizes)
    }

    /// Keeps the jumps whose size satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&Vector<T>) -> bool) -> Self {
        let (times, sizes) = self
            .jumps()
            .filter(|(_, z)| keep(z))
            .map(|(s, z)| (s, z.clone()))
            .unzip();
        Self {
            horizon: self.horizon,
            times,
            sizes,
        }
    }
}

/// Poisson(`lambda_0 t`) many jumps at sorted uniform times in `(0, t]`.
pub fn sample_path<T: Scalar, R: Rng + ?Sized>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    t: T,
    rng: &mut R,
) -> Result<JumpPath<T>> {
    if !(t > T::zero() && t.is_finite()) {
        return Err(Error::invalid("t", format!("horizon must be positive, got {t}")));
    }
    let mean = spec.lambda0.f64() * t.f64();
    let count = Poisson::new(mean)
        .map_err(|e| Error::invalid("lambda0", e.to_string()))?
        .sample(rng) as usize;
    let mut times: Vec<T> = (0..count).map(|_| t * (T::one() - T::unit(rng))).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite jump times"));
    let sizes = (0..count)
        .map(|_| sample_jump(spec, model, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(JumpPath {
        horizon: t,
        times,
        sizes,
    })
}

/// `X_t^x = T_t x + sum_i T_{t - tau_i} sigma xi_i` at the path horizon.
pub fn mild_solution<T: Scalar>(model: &DiagonalModel<T>, x: &Vector<T>, path: &JumpPath<T>) -> Result<Vector<T>> {
    x.check_len(model.n_modes())?;
    if let Some(z) = path.sizes.first() {
        z.check_len(model.n_modes())?;
    }
    let t = path.horizon;
    let mut out = model.semigroup_unchecked(t, x);
    for (s, z) in path.jumps() {
        model.accumulate_propagated_jump(t - s, z, &mut out);
    }
    Ok(out)
}

/// Built-in test functions `h(w, z, s)` for the jump identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeckeFn {
    /// `h = 1`
    One,
    /// `h = 1{||z|| < radius}`
    SmallJump { radius: f64 },
    /// `h = cos(X_t^0(w)_k) cos(z_k) cos(s)`, depending on the path through
    /// its endpoint from the origin.
    EndpointCos { k: usize },
}

impl MeckeFn {
    fn eval<T: Scalar>(&self, endpoint: &Vector<T>, z: &Vector<T>, s: T) -> f64 {
        match *self {
            MeckeFn::One => 1.0,
            MeckeFn::SmallJump { radius } => {
                if z.norm().f64() < radius {
                    1.0
                } else {
                    0.0
                }
            }
            MeckeFn::EndpointCos { k } => endpoint[k].f64().cos() * z[k].f64().cos() * s.f64().cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeckeReport {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub pooled_stderr: f64,
}

impl MeckeReport {
    pub fn z_score(&self) -> f64 {
        let d = (self.lhs.mean - self.rhs.mean).abs();
        if self.pooled_stderr == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / self.pooled_stderr
        }
    }
}

/// Both sides of
///
/// ```text
/// lambda_0 t E[h(w, Z, S)] = E sum_i h(w - jump_i, xi_i, tau_i)
/// ```
///
/// with `Z ~ nu_0 / lambda_0`, `S ~ U(0, t)`, and `w - jump_i` the path with
/// its `i`-th jump removed. The two sides use independent substreams.
pub fn mecke_identity_check<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    t: T,
    h: MeckeFn,
    budget: usize,
    stream: SeedStream,
) -> Result<MeckeReport> {
    spec.check_model(model)?;
    if budget < 2 {
        return Err(Error::TooFewSamples { got: budget, min: 2 });
    }
    let scale = spec.lambda0.f64() * t.f64();
    let origin = model.zeros();

    let lhs = if h == MeckeFn::One {
        Estimate::exact(scale)
    } else {
        let xs = stream
            .substream(0)
            .map(budget, |_, rng| -> Result<f64> {
                let path = sample_path(spec, model, t, rng)?;
                let z = sample_jump(spec, model, rng)?;
                let s = t * T::unit(rng);
                let end = mild_solution(model, &origin, &path)?;
                Ok(scale * h.eval(&end, &z, s))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Estimate::from_samples(&xs)
    };

    let ys = stream
        .substream(1)
        .map(budget, |_, rng| -> Result<f64> {
            let path = sample_path(spec, model, t, rng)?;
            let end = mild_solution(model, &origin, &path)?;
            let mut acc = 0.0;
            for (s, z) in path.jumps() {
                let mut removed = end.clone();
                model.accumulate_propagated_jump(t - s, &z.scale(-T::one()), &mut removed);
                acc += h.eval(&removed, z, s);
            }
            Ok(acc)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rhs = Estimate::from_samples(&ys);
    Ok(MeckeReport {
        lhs,
        rhs,
        pooled_stderr: pooled_stderr(lhs.stderr, rhs.stderr),
    })
}
