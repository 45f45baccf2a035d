//! Coupling constructions: shift-weight identities on jumps after time 1,
//! the Mineka coupling of the two jump chains, and the decomposition of
//! the semigroup by the first jump.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{mild_solution, sample_jump, sample_path, JumpPath, LevySpec};
use crate::model::{DiagonalModel, Vector};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::stats::{pooled_stderr, Estimate};
use crate::testfn::BoundedFn;

/// Endpoints closer than this are considered coupled.
pub const COUPLING_TOL: f64 = 1e-10;
/// Largest admissible log-weight in [`p1_weighted`].
pub const MAX_LOG_WEIGHT: f64 = 30.0;

/// `sigma^{-1} T_s (x - y)`
pub fn shift_vector<T: Scalar>(model: &DiagonalModel<T>, s: T, x: &Vector<T>, y: &Vector<T>) -> Result<Vector<T>> {
    y.check_len(model.n_modes())?;
    let d = model.semigroup_apply(s, &(x - y))?;
    Ok(model.apply_sigma_inv(&d))
}

/// Density of the law of `U + a` relative to the law of `U ~ nu_bar`,
/// evaluated at `u` (the normalizing mass cancels).
fn shifted_ratio<T: Scalar>(spec: &LevySpec<T>, model: &DiagonalModel<T>, a: &Vector<T>, u: &Vector<T>) -> f64 {
    let base = spec.density(u).f64();
    let moved = spec.density(&(u - a)).f64();
    if moved == 0.0 {
        return 0.0;
    }
    (moved / base) * model.cm_log_density_unchecked(a, u).f64().exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapReport {
    pub a: Vec<f64>,
    /// Total mass of `nu_bar ∧ (delta_a * nu_bar)`, in `[0, 1]`.
    pub mass: f64,
    pub stderr: f64,
}

/// Overlap of the normalized jump law with its translate by `a`,
/// `E_{U ~ nu_bar} min(1, r_a(U))`.
pub fn overlap_mass<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    a: &Vector<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<OverlapReport> {
    a.check_len(model.n_modes())?;
    if a.is_zero() {
        return Ok(OverlapReport {
            a: a.to_f64(),
            mass: 1.0,
            stderr: 0.0,
        });
    }
    if budget < 2 {
        return Err(Error::TooFewSamples { got: budget, min: 2 });
    }
    let xs = stream
        .map(budget, |_, rng| -> Result<f64> {
            let u = sample_jump(spec, model, rng)?;
            Ok(shifted_ratio(spec, model, a, &u).min(1.0))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let est = Estimate::from_samples(&xs);
    Ok(OverlapReport {
        a: a.to_f64(),
        mass: est.mean,
        stderr: est.stderr,
    })
}

/// 32 log-spaced times from `t_min` to `64 / min_k lam_k` (or 64 without decay).
pub fn default_t_grid<T: Scalar>(model: &DiagonalModel<T>, t_min: f64) -> Vec<f64> {
    let lam = model.min_lam().f64();
    let t_max = if lam > 0.0 { 64.0 / lam } else { 64.0 };
    let t_min = t_min.min(t_max);
    let n = 32;
    (0..n)
        .map(|i| t_min * (t_max / t_min).powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaReport {
    /// `lambda_0` times the smallest overlap found.
    pub value: f64,
    /// Grid times at or above `eps` that were scanned.
    pub grid: Vec<f64>,
    pub directions: usize,
    pub argmin_t: f64,
    pub argmin_direction: usize,
}

/// Grid approximation of
///
/// ```text
/// gamma(eta, rho, eps) = inf_{t >= eps, ||x|| <= rho} (nu_eta ∧ (delta_{sigma^-1 T_t x} * nu_eta))(B)
/// ```
///
/// over `t_grid ∩ [eps, ∞)` and `directions` random points of the sphere
/// `||x|| = rho`. Each grid point owns its substream, so the same grid with
/// a larger `eps` scans a subset of identical estimates.
#[allow(clippy::too_many_arguments)]
pub fn gamma_functional<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    rho: f64,
    eps: f64,
    t_grid: &[f64],
    directions: usize,
    budget: usize,
    stream: SeedStream,
) -> Result<GammaReport> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    if !(rho > 0.0) {
        return Err(Error::invalid("rho", format!("must be positive, got {rho}")));
    }
    if directions == 0 {
        return Err(Error::EmptyGrid("direction set"));
    }
    let dirs: Vec<Vector<T>> = {
        let mut rng = stream.substream(u64::MAX).rng(0);
        (0..directions)
            .map(|_| {
                let g = Vector::new((0..model.n_modes()).map(|_| T::std_normal(&mut rng)).collect());
                let norm = g.norm();
                g.scale(T::of(rho) / norm)
            })
            .collect()
    };
    let lambda0 = spec.lambda0().f64();
    let mut best: Option<(f64, f64, usize)> = None;
    let mut grid = Vec::new();
    for (i, &t) in t_grid.iter().enumerate() {
        if t < eps {
            continue;
        }
        grid.push(t);
        for (j, x) in dirs.iter().enumerate() {
            let a = model.apply_sigma_inv(&model.semigroup_apply(T::of(t), x)?);
            let sub = stream.substream(i as u64).substream(j as u64);
            let m = overlap_mass(spec, model, &a, budget, sub)?.mass;
            if best.is_none_or(|(b, _, _)| m < b) {
                best = Some((m, t, j));
            }
        }
    }
    let Some((m, t, j)) = best else {
        return Err(Error::EmptyGrid("no grid time at or above eps"));
    };
    Ok(GammaReport {
        value: lambda0 * m,
        grid,
        directions,
        argmin_t: t,
        argmin_direction: j,
    })
}

/// One Mineka pair `(U, U')` with `U' = U + dU a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinekaPair<T> {
    pub u: Vector<T>,
    pub u_prime: Vector<T>,
    /// `+1`, `-1` or `0`.
    pub du: i8,
}

/// Draws `U ~ nu_bar`, then `dU = +a` with probability `min(1, r_-(U)) / 2`
/// and `dU = -a` with probability `min(1, r_+(U)) / 2`, where `r_-` and
/// `r_+` are the densities of the laws of `U - a` and `U + a`. Both
/// coordinates of the pair are `nu_bar`-distributed.
pub fn sample_mineka_pair<T: Scalar, R: Rng + ?Sized>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    a: &Vector<T>,
    rng: &mut R,
) -> Result<MinekaPair<T>> {
    let u = sample_jump(spec, model, rng)?;
    if a.is_zero() {
        return Ok(MinekaPair {
            u_prime: u.clone(),
            u,
            du: 0,
        });
    }
    let up = 0.5 * shifted_ratio(spec, model, &a.scale(-T::one()), &u).min(1.0);
    let down = 0.5 * shifted_ratio(spec, model, a, &u).min(1.0);
    let v: f64 = rng.random();
    let du = if v < up {
        1
    } else if v < up + down {
        -1
    } else {
        0
    };
    let u_prime = match du {
        1 => &u + a,
        -1 => &u - a,
        _ => u.clone(),
    };
    Ok(MinekaPair { u, u_prime, du })
}

/// Full record of one run of the Mineka coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTranscript<T> {
    pub horizon: T,
    pub jump_times: Vec<T>,
    /// `a_i = sigma^{-1} T_{tau_i} (x - y)`
    pub shifts: Vec<Vector<T>>,
    pub u: Vec<Vector<T>>,
    pub u_prime: Vec<Vector<T>>,
    pub du: Vec<i8>,
    /// Partial sums `S_k = sum_{i <= k} T_{t - tau_i} sigma U_i`.
    pub s: Vec<Vector<T>>,
    pub s_prime: Vec<Vector<T>>,
    /// First jump index (1-based) after which the endpoints agree; `Some(0)`
    /// when `x = y`.
    pub t_couple: Option<usize>,
    pub endpoint_x: Vector<T>,
    pub endpoint_y: Vector<T>,
}

/// One line of the JSON-lines trace format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub times: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "dU")]
    pub du: Vec<i8>,
    pub t_couple: Option<usize>,
    pub coupled: bool,
}

impl<T: Scalar> CouplingTranscript<T> {
    pub fn coupled(&self) -> bool {
        (&self.endpoint_x - &self.endpoint_y).norm().f64() <= COUPLING_TOL
    }

    pub fn trace_record(&self) -> TraceRecord {
        TraceRecord {
            times: self.jump_times.iter().map(|t| t.f64()).collect(),
            a: self.shifts.iter().map(Vector::to_f64).collect(),
            du: self.du.clone(),
            t_couple: self.t_couple,
            coupled: self.coupled(),
        }
    }

    /// The transcript as one JSON line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.trace_record()).expect("trace records serialize")
    }
}

/// Endpoints and coupling index without the per-jump record.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOutcome<T> {
    pub endpoint_x: Vector<T>,
    pub endpoint_y: Vector<T>,
    pub t_couple: Option<usize>,
    pub n_jumps: usize,
}

impl<T: Scalar> CouplingOutcome<T> {
    pub fn coupled(&self) -> bool {
        (&self.endpoint_x - &self.endpoint_y).norm().f64() <= COUPLING_TOL
    }
}

fn mineka_run<T: Scalar, R: Rng + ?Sized>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    t: T,
    rng: &mut R,
    mut record: Option<&mut CouplingTranscript<T>>,
) -> Result<CouplingOutcome<T>> {
    x.check_len(model.n_modes())?;
    y.check_len(model.n_modes())?;
    let path = sample_path(spec, model, t, rng)?;
    let mut ex = model.semigroup_apply(t, x)?;
    let mut ey = model.semigroup_apply(t, y)?;
    let mut s = model.zeros();
    let mut s_prime = model.zeros();
    let mut walk = 0i32;
    let mut t_couple = if x == y { Some(0) } else { None };
    // the path's jump sizes serve as the unprimed chain U_i
    for (i, (tau, _)) in path.jumps().enumerate() {
        let (pair, a) = if t_couple.is_some() {
            let u = sample_jump(spec, model, rng)?;
            let pair = MinekaPair {
                u_prime: u.clone(),
                u,
                du: 0,
            };
            (pair, model.zeros())
        } else {
            let a = shift_vector(model, tau, x, y)?;
            (sample_mineka_pair(spec, model, &a, rng)?, a)
        };
        model.accumulate_propagated_jump(t - tau, &pair.u, &mut s);
        model.accumulate_propagated_jump(t - tau, &pair.u_prime, &mut s_prime);
        walk += pair.du as i32;
        if t_couple.is_none() && walk == 1 {
            t_couple = Some(i + 1);
        }
        if let Some(rec) = record.as_deref_mut() {
            rec.jump_times.push(tau);
            rec.shifts.push(a);
            rec.du.push(pair.du);
            rec.u.push(pair.u);
            rec.u_prime.push(pair.u_prime);
            rec.s.push(s.clone());
            rec.s_prime.push(s_prime.clone());
        }
    }
    ex.add_assign(&s);
    ey.add_assign(&s_prime);
    Ok(CouplingOutcome {
        endpoint_x: ex,
        endpoint_y: ey,
        t_couple,
        n_jumps: path.len(),
    })
}

/// Runs the Mineka coupling of the chains started at `x` and `y` on one
/// shared jump-time vector. Before coupling, jump `i` is paired by
/// [`sample_mineka_pair`] with `a_i = sigma^{-1} T_{tau_i} (x - y)`, so every
/// increment of `S' - S` is `0` or `±T_t (x - y)`; afterwards both chains
/// use the same jumps.
pub fn run_mineka_coupling<T: Scalar, R: Rng + ?Sized>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    t: T,
    rng: &mut R,
) -> Result<CouplingTranscript<T>> {
    let mut rec = CouplingTranscript {
        horizon: t,
        jump_times: Vec::new(),
        shifts: Vec::new(),
        u: Vec::new(),
        u_prime: Vec::new(),
        du: Vec::new(),
        s: Vec::new(),
        s_prime: Vec::new(),
        t_couple: None,
        endpoint_x: model.zeros(),
        endpoint_y: model.zeros(),
    };
    let out = mineka_run(spec, model, x, y, t, rng, Some(&mut rec))?;
    rec.t_couple = out.t_couple;
    rec.endpoint_x = out.endpoint_x;
    rec.endpoint_y = out.endpoint_y;
    Ok(rec)
}

/// [`run_mineka_coupling`] without recording the jump-level transcript.
pub fn run_mineka_outcome<T: Scalar, R: Rng + ?Sized>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    x: &Vector<T>,
    y: &Vector<T>,
    t: T,
    rng: &mut R,
) -> Result<CouplingOutcome<T>> {
    mineka_run(spec, model, x, y, t, rng, None)
}

/// Ball `B(center, radius)` in the state norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball<T> {
    pub center: Vector<T>,
    pub radius: T,
}

impl<T: Scalar> Ball<T> {
    pub fn new(center: Vector<T>, radius: T) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, z: &Vector<T>) -> bool {
        (z - &self.center).norm() < self.radius
    }
}

/// Checks `||sigma^{-1} T_s y|| + ||y|| <= min(1, r0 / 2)` for all `s >= 0`.
/// Both terms decrease in `s`, so `s = 0` is the binding case.
pub fn check_shift_bound<T: Scalar>(model: &DiagonalModel<T>, y: &Vector<T>, r0: T) -> Result<()> {
    y.check_len(model.n_modes())?;
    let lhs = (model.apply_sigma_inv(y).norm() + y.norm()).f64();
    let bound = (0.5 * r0.f64()).min(1.0);
    if lhs <= bound {
        Ok(())
    } else {
        Err(Error::ShiftBoundViolated { s: 0.0, lhs, bound })
    }
}

/// Per-jump weights for the jumps with `1 < tau_i <= t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftWeights {
    /// Index of each weighted jump within the path.
    pub index: Vec<usize>,
    pub xi: Vec<f64>,
    pub xi_tilde: Vec<f64>,
}

impl ShiftWeights {
    pub fn sum_xi(&self) -> f64 {
        self.xi.iter().sum()
    }

    pub fn sum_xi_tilde(&self) -> f64 {
        self.xi_tilde.iter().sum()
    }
}

/// Shift weights of the jumps after time 1 with `h_i = sigma^{-1} T_{tau_i} y`:
///
/// ```text
/// xi_i       = 1_{B(z0, r0/2)}(dw)
/// xi_tilde_i = rho0(dw + h_i) / rho0(dw) * 1_{B(z0 - h_i, r0/2)}(dw) * phi_{-h_i}(dw)
/// ```
pub fn shift_weights<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    y: &Vector<T>,
    path: &JumpPath<T>,
    ball: &Ball<T>,
) -> Result<ShiftWeights> {
    check_shift_bound(model, y, ball.radius)?;
    Ok(shift_weights_unchecked(spec, model, y, path, ball))
}

fn shift_weights_unchecked<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    y: &Vector<T>,
    path: &JumpPath<T>,
    ball: &Ball<T>,
) -> ShiftWeights {
    let half = Ball::new(ball.center.clone(), ball.radius * T::of(0.5));
    let mut w = ShiftWeights {
        index: Vec::new(),
        xi: Vec::new(),
        xi_tilde: Vec::new(),
    };
    for (i, (tau, dw)) in path.jumps().enumerate() {
        if tau <= T::one() {
            continue;
        }
        let h = model.apply_sigma_inv(&model.semigroup_unchecked(tau, y));
        let xi = if half.contains(dw) { 1.0 } else { 0.0 };
        let shifted_ball = Ball::new(&half.center - &h, half.radius);
        let xi_tilde = if shifted_ball.contains(dw) {
            let base = spec.density(dw).f64();
            let moved = spec.density(&(dw + &h)).f64();
            let log_phi = model.cm_log_density_unchecked(&h.scale(-T::one()), dw).f64();
            moved / base * log_phi.exp()
        } else {
            0.0
        };
        w.index.push(i);
        w.xi.push(xi);
        w.xi_tilde.push(xi_tilde);
    }
    w
}

/// Two-sided Monte Carlo comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoSided {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub pooled_stderr: f64,
}

impl TwoSided {
    fn new(lhs: Estimate, rhs: Estimate) -> Self {
        Self {
            lhs,
            rhs,
            pooled_stderr: pooled_stderr(lhs.stderr, rhs.stderr),
        }
    }

    pub fn diff(&self) -> f64 {
        self.lhs.mean - self.rhs.mean
    }

    /// `|lhs - rhs|` in pooled standard errors.
    pub fn z_score(&self) -> f64 {
        let d = self.diff().abs();
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

/// Inputs of the shift identity `E[f(X^x) 1{tau_1 > eps} sum xi] = E[f(X^{x+y}) 1{tau_1 > eps} sum xi_tilde]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftIdentity<T> {
    pub x: Vector<T>,
    pub y: Vector<T>,
    pub t: T,
    pub eps: T,
    pub f: BoundedFn,
    pub ball: Ball<T>,
}

impl<T: Scalar> ShiftIdentity<T> {
    fn validate(&self, model: &DiagonalModel<T>) -> Result<()> {
        self.x.check_len(model.n_modes())?;
        check_shift_bound(model, &self.y, self.ball.radius)?;
        if !(self.eps > T::zero() && self.eps < T::one()) {
            return Err(Error::invalid("eps", format!("must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.t >= T::of(2.0)) {
            return Err(Error::invalid("t", format!("must be at least 2, got {}", self.t)));
        }
        Ok(())
    }

    /// Both integrands evaluated on one path.
    pub fn pathwise(&self, spec: &LevySpec<T>, model: &DiagonalModel<T>, path: &JumpPath<T>) -> Result<(f64, f64)> {
        if path.times().first().is_some_and(|&s| s <= self.eps) {
            return Ok((0.0, 0.0));
        }
        let w = shift_weights_unchecked(spec, model, &self.y, path, &self.ball);
        let lhs = self.f.eval(&mild_solution(model, &self.x, path)?) * w.sum_xi();
        let xy = &self.x + &self.y;
        let rhs = self.f.eval(&mild_solution(model, &xy, path)?) * w.sum_xi_tilde();
        Ok((lhs, rhs))
    }
}

/// Monte Carlo estimates of both sides of the shift identity on
/// independent substreams.
pub fn lemma31_check<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    setup: &ShiftIdentity<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<TwoSided> {
    setup.validate(model)?;
    let side = |tag: u64, pick_rhs: bool| -> Result<Estimate> {
        let xs = stream
            .substream(tag)
            .map(budget, |_, rng| -> Result<f64> {
                let path = sample_path(spec, model, setup.t, rng)?;
                let (l, r) = setup.pathwise(spec, model, &path)?;
                Ok(if pick_rhs { r } else { l })
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Estimate::from_samples(&xs))
    };
    Ok(TwoSided::new(side(0, false)?, side(1, true)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// `E[1{N_t = 0} f(X_t^x)]`
    pub p0_part: Estimate,
    /// `E[1{N_t >= 1} f(X_t^x)]`
    pub p1_part: Estimate,
    /// `E f(X_t^x)` on the same paths.
    pub total: Estimate,
    /// `P(N_t = 0)`
    pub no_jump: Estimate,
}

/// Splits `P_t f(x)` by whether any jump occurred, on shared paths.
pub fn decompose_semigroup<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    f: &BoundedFn,
    x: &Vector<T>,
    t: T,
    budget: usize,
    stream: SeedStream,
) -> Result<Decomposition> {
    x.check_len(model.n_modes())?;
    let rows = stream
        .map(budget, |_, rng| -> Result<(f64, bool)> {
            let path = sample_path(spec, model, t, rng)?;
            Ok((f.eval(&mild_solution(model, x, &path)?), path.is_empty()))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let part = |zero: bool| -> Vec<f64> { rows.iter().map(|&(v, e)| if e == zero { v } else { 0.0 }).collect() };
    let p0 = part(true);
    let p1 = part(false);
    let total: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let none: Vec<f64> = rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect();
    Ok(Decomposition {
        p0_part: Estimate::from_samples(&p0),
        p1_part: Estimate::from_samples(&p1),
        total: Estimate::from_samples(&total),
        no_jump: Estimate::from_samples(&none),
    })
}

/// Inputs of the reweighted representation of `P_t^1 f(x + eps z0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedShift<T> {
    pub f: BoundedFn,
    pub x: Vector<T>,
    pub z0: Vector<T>,
    pub eps: T,
    pub t: T,
}

impl<T: Scalar> WeightedShift<T> {
    /// `f(X_t^x) 1{N >= 1} (1/N) sum_i w_i` with
    /// `w_i = phi_{h_i}(xi_i) rho0(xi_i - h_i) / rho0(xi_i)` and
    /// `h_i = eps sigma^{-1} T_{tau_i} z0`.
    pub fn weighted_sample(
        &self,
        spec: &LevySpec<T>,
        model: &DiagonalModel<T>,
        path: &JumpPath<T>,
        replica: u64,
    ) -> Result<f64> {
        if path.is_empty() {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        for (tau, xi) in path.jumps() {
            let h = model
                .apply_sigma_inv(&model.semigroup_unchecked(tau, &self.z0))
                .scale(self.eps);
            let base = spec.density(xi).f64();
            let moved = spec.density(&(xi - &h)).f64();
            if moved == 0.0 {
                continue;
            }
            let log_w = model.cm_log_density_unchecked(&h, xi).f64() + moved.ln() - base.ln();
            if log_w > MAX_LOG_WEIGHT {
                return Err(Error::WeightOverflow {
                    replica,
                    log_weight: log_w,
                });
            }
            acc += log_w.exp();
        }
        let fx = self.f.eval(&mild_solution(model, &self.x, path)?);
        Ok(fx * acc / path.len() as f64)
    }

    /// `f(X_t^{x + eps z0}) 1{N >= 1}`.
    pub fn direct_sample(&self, model: &DiagonalModel<T>, path: &JumpPath<T>) -> Result<f64> {
        if path.is_empty() {
            return Ok(0.0);
        }
        let start = &self.x + &self.z0.scale(self.eps);
        Ok(self.f.eval(&mild_solution(model, &start, path)?))
    }

    /// `[f(X_t^{x + eps z0}) - f(X_t^x)] 1{N >= 1} / eps` on one path.
    pub fn difference_quotient(&self, model: &DiagonalModel<T>, path: &JumpPath<T>) -> Result<f64> {
        if path.is_empty() {
            return Ok(0.0);
        }
        let at_x = self.f.eval(&mild_solution(model, &self.x, path)?);
        Ok((self.direct_sample(model, path)? - at_x) / self.eps.f64())
    }

    fn validate(&self, model: &DiagonalModel<T>) -> Result<()> {
        self.x.check_len(model.n_modes())?;
        self.z0.check_len(model.n_modes())?;
        if !(self.eps >= T::zero()) {
            return Err(Error::invalid("eps", format!("must be non-negative, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Weighted estimator of `P_t^1 f(x + eps z0)` from paths started at `x`,
/// against direct simulation at `x + eps z0` on an independent substream.
pub fn p1_weighted<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    setup: &WeightedShift<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<TwoSided> {
    setup.validate(model)?;
    let weighted = stream
        .substream(0)
        .map(budget, |i, rng| {
            let path = sample_path(spec, model, setup.t, rng)?;
            setup.weighted_sample(spec, model, &path, i)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let direct = stream
        .substream(1)
        .map(budget, |_, rng| {
            let path = sample_path(spec, model, setup.t, rng)?;
            setup.direct_sample(model, &path)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(TwoSided::new(
        Estimate::from_samples(&weighted),
        Estimate::from_samples(&direct),
    ))
}

/// Finite-difference estimate of the directional derivative of `P_t^1 f`
/// with common random numbers at both points.
pub fn p1_difference_quotient<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    setup: &WeightedShift<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<Estimate> {
    setup.validate(model)?;
    if !(setup.eps > T::zero()) {
        return Err(Error::invalid("eps", "must be positive for a difference quotient"));
    }
    let xs = stream
        .map(budget, |_, rng| {
            let path = sample_path(spec, model, setup.t, rng)?;
            setup.difference_quotient(model, &path)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&xs))
}

/// ```text
/// Gamma_t = 1/(1 - e^{-lambda_0 t}) int_0^t e^{-lambda_0 r} max_k (q_k / |sigma_k|) e^{-lam_k r} dr
/// ```
///
/// The integrand is a maximum of exponentials, so the integral is summed
/// exactly over the pieces of its upper envelope. `t = ∞` is allowed.
pub fn gamma_t<T: Scalar>(spec: &LevySpec<T>, model: &DiagonalModel<T>, t: f64) -> Result<f64> {
    gamma_t_with(model, spec.lambda0().f64(), t)
}

/// [`gamma_t`] for an explicit jump intensity `lambda0`.
pub fn gamma_t_with<T: Scalar>(model: &DiagonalModel<T>, lambda0: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid("t", format!("must be positive, got {t}")));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::invalid("lambda0", format!("must be positive, got {lambda0}")));
    }
    let lines: Vec<(f64, f64)> = model
        .q()
        .iter()
        .zip(model.sigma())
        .zip(model.lam())
        .map(|((q, s), l)| ((q.f64() / s.f64().abs()).ln(), l.f64()))
        .collect();
    let integral: f64 = envelope_pieces(&lines, t)
        .into_iter()
        .map(|(a, b, k)| {
            let (logc, lam) = lines[k];
            let rate = lam + lambda0;
            let tail = if b.is_finite() { (-rate * (b - a)).exp() } else { 0.0 };
            (logc - rate * a).exp() * (1.0 - tail) / rate
        })
        .sum();
    let norm = if t.is_finite() { 1.0 - (-lambda0 * t).exp() } else { 1.0 };
    Ok(integral / norm)
}

/// Pieces `(r_start, r_end, k)` of the upper envelope of the lines
/// `r -> logc_k - lam_k r` on `[0, t]`.
fn envelope_pieces(lines: &[(f64, f64)], t: f64) -> Vec<(f64, f64, usize)> {
    let at = |k: usize, r: f64| lines[k].0 - lines[k].1 * r;
    let pick = |r: f64| {
        (0..lines.len())
            .max_by(|&i, &j| {
                at(i, r)
                    .partial_cmp(&at(j, r))
                    .unwrap()
                    // on ties the slower decay dominates afterwards
                    .then(lines[j].1.partial_cmp(&lines[i].1).unwrap())
            })
            .unwrap()
    };
    let mut pieces = Vec::new();
    let mut r = 0.0;
    let mut k = pick(0.0);
    loop {
        let next = (0..lines.len())
            .filter(|&j| lines[j].1 < lines[k].1)
            .map(|j| ((lines[k].0 - lines[j].0) / (lines[k].1 - lines[j].1), j))
            .filter(|&(c, _)| c > r)
            .min_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap()
                    .then(lines[a.1].1.partial_cmp(&lines[b.1].1).unwrap())
            });
        match next {
            Some((c, j)) if c < t => {
                pieces.push((r, c, k));
                r = c;
                k = j;
            }
            _ => {
                pieces.push((r, t, k));
                return pieces;
            }
        }
    }
}
