//! Total-variation estimators, the integrability functionals behind the
//! coupling bounds, bound curves and rate fitting.
//!
//! Total variation is normalized so that mutually singular probabilities
//! are at distance 2.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coupling::Ball;
use crate::error::{Error, Result};
use crate::levy::LevySpec;
use crate::model::{DiagonalModel, Vector};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::stats::{normal_cdf, Estimate};

/// Smallest sample count per side accepted by the histogram estimators.
pub const MIN_SAMPLES: usize = 1000;
/// Resamples used for bootstrap errors and permutation floors.
pub const RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TvMethod {
    Binned,
    Projection,
    CouplingUpper,
}

/// Low-dimensional view of the state used for histogramming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Coord(usize),
    Coords2(usize, usize),
    Direction(Vec<f64>),
}

impl Projection {
    fn apply<T: Scalar>(&self, z: &Vector<T>) -> [f64; 2] {
        match self {
            Projection::Coord(k) => [z[*k].f64(), 0.0],
            Projection::Coords2(i, j) => [z[*i].f64(), z[*j].f64()],
            Projection::Direction(d) => [d.iter().zip(z.iter()).map(|(a, b)| a * b.f64()).sum(), 0.0],
        }
    }

    fn dims(&self) -> usize {
        match self {
            Projection::Coords2(..) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvEstimate {
    /// Plug-in value `sum_bins |p_hat - q_hat|`, in `[0, 2]`.
    pub value: f64,
    pub stderr: f64,
    pub method: TvMethod,
    pub n_samples: usize,
    pub n_bins: Option<usize>,
    pub direction: Option<Vec<f64>>,
    /// Mean of the plug-in value over label permutations of the pooled
    /// sample: the level the estimator reports for two independent samples
    /// of one law.
    pub null_floor: Option<f64>,
}

impl TvEstimate {
    fn zero(method: TvMethod, n: usize) -> Self {
        Self {
            value: 0.0,
            stderr: 0.0,
            method,
            n_samples: n,
            n_bins: None,
            direction: None,
            null_floor: None,
        }
    }

    /// Plug-in value in excess of the permutation floor (the value itself
    /// when no floor applies).
    pub fn excess(&self) -> f64 {
        (self.value - self.null_floor.unwrap_or(0.0)).max(0.0)
    }
}

/// `ceil(sqrt(n) / 2)`, kept in `[2, 256]`.
pub fn default_bins(n: usize) -> usize {
    (((n as f64).sqrt() / 2.0).ceil() as usize).clamp(2, 256)
}

/// Interior cut points at the pooled `i/k` quantiles.
fn quantile_edges(values: &mut [f64], k: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = values.len();
    let mut edges: Vec<f64> = (1..k).map(|i| values[(i * n / k).min(n - 1)]).collect();
    edges.dedup();
    edges
}

struct Binning {
    edges: [Vec<f64>; 2],
    dims: usize,
}

impl Binning {
    fn new(p: &[[f64; 2]], q: &[[f64; 2]], dims: usize, bins: usize) -> Self {
        let per_axis = if dims == 2 {
            ((bins as f64).sqrt().ceil() as usize).max(2)
        } else {
            bins
        };
        let axis = |d: usize| {
            let mut v: Vec<f64> = p.iter().chain(q).map(|x| x[d]).collect();
            quantile_edges(&mut v, per_axis)
        };
        let edges = if dims == 2 {
            [axis(0), axis(1)]
        } else {
            [axis(0), Vec::new()]
        };
        Self { edges, dims }
    }

    fn cells(&self) -> usize {
        let a = self.edges[0].len() + 1;
        if self.dims == 2 {
            a * (self.edges[1].len() + 1)
        } else {
            a
        }
    }

    fn index(&self, x: &[f64; 2]) -> usize {
        let i = self.edges[0].partition_point(|&e| e <= x[0]);
        if self.dims == 2 {
            i * (self.edges[1].len() + 1) + self.edges[1].partition_point(|&e| e <= x[1])
        } else {
            i
        }
    }
}

fn l1_of_counts(
    cells: usize,
    p: impl Iterator<Item = usize>,
    np: usize,
    q: impl Iterator<Item = usize>,
    nq: usize,
) -> f64 {
    let mut cp = vec![0u32; cells];
    let mut cq = vec![0u32; cells];
    p.for_each(|i| cp[i] += 1);
    q.for_each(|i| cq[i] += 1);
    cp.iter()
        .zip(&cq)
        .map(|(&a, &b)| (a as f64 / np as f64 - b as f64 / nq as f64).abs())
        .sum()
}

fn spread(xs: &[f64]) -> f64 {
    let e = Estimate::from_samples(xs);
    e.stderr * (xs.len() as f64).sqrt()
}

/// Histogram estimate of the total variation between two independent
/// samples, with pooled-quantile bins on a 1- or 2-coordinate projection.
/// The standard error is a bootstrap over [`RESAMPLES`] resamples of each
/// side; the null floor averages as many label permutations.
pub fn tv_binned<T: Scalar>(
    p: &[Vector<T>],
    q: &[Vector<T>],
    projection: &Projection,
    bins: Option<usize>,
    stream: SeedStream,
) -> Result<TvEstimate> {
    for side in [p.len(), q.len()] {
        if side < MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                got: side,
                min: MIN_SAMPLES,
            });
        }
    }
    let n = p[0].len();
    for z in p.iter().chain(q) {
        z.check_len(n)?;
    }
    let dims = projection.dims();
    let pp: Vec<[f64; 2]> = p.iter().map(|z| projection.apply(z)).collect();
    let qq: Vec<[f64; 2]> = q.iter().map(|z| projection.apply(z)).collect();
    let k = bins.unwrap_or_else(|| default_bins(p.len().min(q.len())));
    if k == 0 {
        return Err(Error::invalid("bins", "must be positive"));
    }
    let binning = Binning::new(&pp, &qq, dims, k);
    let cells = binning.cells();
    let ip: Vec<usize> = pp.iter().map(|x| binning.index(x)).collect();
    let iq: Vec<usize> = qq.iter().map(|x| binning.index(x)).collect();
    let (np, nq) = (ip.len(), iq.len());
    let value = l1_of_counts(cells, ip.iter().copied(), np, iq.iter().copied(), nq);

    let boot = stream.substream(0).map(RESAMPLES, |_, rng| {
        let a: Vec<usize> = (0..np).map(|_| ip[rng.random_range(0..np)]).collect();
        let b: Vec<usize> = (0..nq).map(|_| iq[rng.random_range(0..nq)]).collect();
        l1_of_counts(cells, a.into_iter(), np, b.into_iter(), nq)
    });
    let perm = stream.substream(1).map(RESAMPLES, |_, rng| {
        let mut pooled: Vec<usize> = ip.iter().chain(&iq).copied().collect();
        pooled.shuffle(rng);
        let (a, b) = pooled.split_at(np);
        l1_of_counts(cells, a.iter().copied(), np, b.iter().copied(), nq)
    });
    Ok(TvEstimate {
        value,
        stderr: spread(&boot),
        method: TvMethod::Binned,
        n_samples: np.min(nq),
        n_bins: Some(cells),
        direction: None,
        null_floor: Some(perm.iter().sum::<f64>() / perm.len() as f64),
    })
}

/// Total variation between the law of the samples and its translate by
/// `v`, measured along `v / ||v||`. Both histograms come from the same
/// draws, so no independent-sample noise floor applies; the bootstrap
/// resamples draws jointly.
pub fn tv_shift_projection<T: Scalar>(
    samples: &[Vector<T>],
    v: &Vector<T>,
    bins: Option<usize>,
    stream: SeedStream,
) -> Result<TvEstimate> {
    if v.is_zero() {
        return Ok(TvEstimate::zero(TvMethod::Projection, samples.len()));
    }
    if samples.len() < MIN_SAMPLES {
        return Err(Error::TooFewSamples {
            got: samples.len(),
            min: MIN_SAMPLES,
        });
    }
    for z in samples {
        z.check_len(v.len())?;
    }
    let len = v.norm().f64();
    let dir: Vec<f64> = v.iter().map(|c| c.f64() / len).collect();
    let base: Vec<[f64; 2]> = samples
        .iter()
        .map(|z| [dir.iter().zip(z.iter()).map(|(a, b)| a * b.f64()).sum(), 0.0])
        .collect();
    let moved: Vec<[f64; 2]> = base.iter().map(|x| [x[0] + len, 0.0]).collect();
    let k = bins.unwrap_or_else(|| default_bins(samples.len()));
    let binning = Binning::new(&base, &moved, 1, k);
    let cells = binning.cells();
    let ia: Vec<usize> = base.iter().map(|x| binning.index(x)).collect();
    let ib: Vec<usize> = moved.iter().map(|x| binning.index(x)).collect();
    let n = ia.len();
    let value = l1_of_counts(cells, ia.iter().copied(), n, ib.iter().copied(), n);
    let boot = stream.map(RESAMPLES, |_, rng| {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        l1_of_counts(cells, idx.iter().map(|&i| ia[i]), n, idx.iter().map(|&i| ib[i]), n)
    });
    Ok(TvEstimate {
        value,
        stderr: spread(&boot),
        method: TvMethod::Projection,
        n_samples: n,
        n_bins: Some(cells),
        direction: Some(dir),
        null_floor: None,
    })
}

/// Combines a no-jump atom of probability `p_atom` at two distinct points
/// with the distance between the continuous parts:
/// `TV = 2 p_atom + (1 - p_atom) TV_continuous`.
pub fn with_atoms(p_atom: f64, continuous: &TvEstimate) -> TvEstimate {
    TvEstimate {
        value: 2.0 * p_atom + (1.0 - p_atom) * continuous.value,
        stderr: (1.0 - p_atom) * continuous.stderr,
        ..continuous.clone()
    }
}

/// `2 P(not coupled)`, an upper bound on the total variation.
pub fn coupling_upper(coupled: &[bool]) -> TvEstimate {
    let xs: Vec<f64> = coupled.iter().map(|&c| if c { 0.0 } else { 2.0 }).collect();
    let e = Estimate::from_samples(&xs);
    TvEstimate {
        value: e.mean,
        stderr: if xs.len() > 1 { e.stderr } else { f64::INFINITY },
        method: TvMethod::CouplingUpper,
        n_samples: xs.len(),
        n_bins: None,
        direction: None,
        null_floor: None,
    }
}

/// Grid standing in for `{s >= eps} x {||x|| <= 1}` in the suprema.
#[derive(Debug, Clone, PartialEq)]
pub struct SupGrid<T> {
    pub s_grid: Vec<f64>,
    pub directions: Vec<Vector<T>>,
}

impl<T: Scalar> SupGrid<T> {
    /// `count` uniformly random unit directions.
    pub fn random(model: &DiagonalModel<T>, s_grid: Vec<f64>, count: usize, stream: SeedStream) -> Self {
        let mut rng = stream.rng(0);
        let directions = (0..count)
            .map(|_| {
                let g = Vector::new((0..model.n_modes()).map(|_| T::std_normal(&mut rng)).collect());
                let norm = g.norm();
                g.scale(T::one() / norm)
            })
            .collect();
        Self { s_grid, directions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupReport {
    pub value: f64,
    pub stderr: f64,
    /// Grid times at or above `eps` that were scanned.
    pub grid: Vec<f64>,
    pub argmax_s: f64,
    pub argmax_direction: usize,
}

fn grid_sup<T, F>(
    eps: f64,
    grid: &SupGrid<T>,
    model: &DiagonalModel<T>,
    stream: SeedStream,
    eval: F,
) -> Result<SupReport>
where
    T: Scalar,
    F: Fn(&Vector<T>, SeedStream) -> Result<Estimate>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    if grid.directions.is_empty() {
        return Err(Error::EmptyGrid("direction set"));
    }
    let mut best: Option<(Estimate, f64, usize)> = None;
    let mut scanned = Vec::new();
    for (i, &s) in grid.s_grid.iter().enumerate() {
        if s < eps {
            continue;
        }
        scanned.push(s);
        for (j, x) in grid.directions.iter().enumerate() {
            let h = model.apply_sigma_inv(&model.semigroup_apply(T::of(s), x)?);
            let e = eval(&h, stream.substream(i as u64).substream(j as u64))?;
            if best.as_ref().is_none_or(|(b, _, _)| e.mean > b.mean) {
                best = Some((e, s, j));
            }
        }
    }
    let Some((e, s, j)) = best else {
        return Err(Error::EmptyGrid("no grid time at or above eps"));
    };
    Ok(SupReport {
        value: e.mean,
        stderr: e.stderr,
        grid: scanned,
        argmax_s: s,
        argmax_direction: j,
    })
}

fn require_positive_on_ball<T: Scalar>(spec: &LevySpec<T>, ball: &Ball<T>) -> Result<T> {
    let inf = spec.inf_on_ball(&ball.center, ball.radius);
    if inf > T::zero() {
        Ok(inf)
    } else {
        Err(Error::DensityVanishesOnBall {
            radius: ball.radius.f64(),
            inf: inf.f64(),
        })
    }
}

/// Grid supremum of
///
/// ```text
/// int_B phi_h(z)^2 rho0(z - h)^2 / rho0(z) mu(dz),   h = sigma^{-1} T_s x.
/// ```
///
/// Since `phi_h^2 mu = e^{sum q h^2} N(2h, Q^{-1})`, each integral is
/// estimated by sampling the reference measure shifted by `2h`.
pub fn delta1<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    eps: f64,
    ball: &Ball<T>,
    grid: &SupGrid<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<SupReport> {
    require_positive_on_ball(spec, ball)?;
    grid_sup(eps, grid, model, stream, |h, sub| {
        let scale = model.precision_norm_sq(h).f64().exp();
        let two_h = h.scale(T::of(2.0));
        let xs = sub.map(budget, |_, rng| {
            let z = &model.gaussian_sample(rng) + &two_h;
            if !ball.contains(&z) {
                return 0.0;
            }
            let moved = spec.density(&(&z - h)).f64();
            scale * moved * moved / spec.density(&z).f64()
        });
        Ok(Estimate::from_samples(&xs))
    })
}

/// Evaluation mode of [`delta2`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delta2Mode {
    Numeric,
    ClosedForm,
}

/// `(1/c0) [1 + exp(max_k q_k e^{-2 eps lam_k})]` with `c0 = inf_B rho0`.
pub fn delta2_closed_form<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    eps: f64,
    ball: &Ball<T>,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps", format!("must be positive, got {eps}")));
    }
    let c0 = require_positive_on_ball(spec, ball)?.f64();
    let peak = model
        .q()
        .iter()
        .zip(model.lam())
        .map(|(q, l)| q.f64() * (-2.0 * eps * l.f64()).exp())
        .fold(0.0, f64::max);
    Ok((1.0 + peak.exp()) / c0)
}

/// Grid supremum of `int_B (phi_h^2 ∨ 1) / rho0 dmu`, or its closed-form
/// bound for product Gaussian models.
#[allow(clippy::too_many_arguments)]
pub fn delta2<T: Scalar>(
    spec: &LevySpec<T>,
    model: &DiagonalModel<T>,
    eps: f64,
    ball: &Ball<T>,
    mode: Delta2Mode,
    grid: &SupGrid<T>,
    budget: usize,
    stream: SeedStream,
) -> Result<SupReport> {
    if mode == Delta2Mode::ClosedForm {
        let value = delta2_closed_form(spec, model, eps, ball)?;
        return Ok(SupReport {
            value,
            stderr: 0.0,
            grid: Vec::new(),
            argmax_s: eps,
            argmax_direction: 0,
        });
    }
    require_positive_on_ball(spec, ball)?;
    grid_sup(eps, grid, model, stream, |h, sub| {
        let xs = sub.map(budget, |_, rng| {
            let z = model.gaussian_sample(rng);
            if !ball.contains(&z) {
                return 0.0;
            }
            let phi2 = (T::of(2.0) * model.cm_log_density_unchecked(h, &z)).f64().exp();
            phi2.max(1.0) / spec.density(&z).f64()
        });
        Ok(Estimate::from_samples(&xs))
    })
}

/// `2^{-j}` for `j = 0..=20`, the grid of the inner infimum in the
/// coupling bounds.
pub fn eps_grid() -> Vec<f64> {
    (0..=20).map(|j| 0.5f64.powi(j)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    CouplingI,
    CouplingIi,
    ExponentialZ3,
    LogRate,
    #[serde(rename = "polynomial_52")]
    Polynomial52,
}

impl BoundKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundKind::CouplingI => "coupling_i",
            BoundKind::CouplingIi => "coupling_ii",
            BoundKind::ExponentialZ3 => "exponential_z3",
            BoundKind::LogRate => "log_rate",
            BoundKind::Polynomial52 => "polynomial_52",
        }
    }
}

/// Parameters of a bound curve. Unused fields are ignored by each kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub c: f64,
    /// `||x - y||`
    pub dist: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// `(eps, delta_i(eps))` pairs for the coupling kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_table: Option<Vec<(f64, f64)>>,
}

impl BoundParams {
    pub fn new(c: f64, dist: f64) -> Self {
        Self {
            c,
            dist,
            lambda0: None,
            lambda: None,
            delta: None,
            d: None,
            delta_table: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCurve {
    pub kind: BoundKind,
    pub params: BoundParams,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
    v.ok_or_else(|| Error::invalid(name, "required by this bound kind"))
}

/// Rate factor of `kind` at `t`, before the `C (1 + ||x - y||)` prefactor.
pub fn rate_factor(kind: BoundKind, params: &BoundParams, t: f64) -> Result<f64> {
    let t_ok = if kind == BoundKind::ExponentialZ3 {
        t >= 0.0
    } else {
        t > 0.0
    };
    if !t_ok || !t.is_finite() {
        return Err(Error::invalid(
            "times",
            format!("{} is outside the domain of {}", t, kind.as_str()),
        ));
    }
    Ok(match kind {
        BoundKind::CouplingI | BoundKind::CouplingIi => {
            let table = params.delta_table.as_ref().ok_or(Error::MissingDelta(kind.as_str()))?;
            if table.is_empty() {
                return Err(Error::MissingDelta(kind.as_str()));
            }
            table
                .iter()
                .map(|&(e, d)| e + (d / t).sqrt())
                .fold(f64::INFINITY, f64::min)
        }
        BoundKind::ExponentialZ3 => {
            let l0 = need(params.lambda0, "lambda0")?;
            let l = need(params.lambda, "lambda")?;
            (-l0 * l * t / (l0 + l)).exp()
        }
        BoundKind::LogRate => 1.0 / (1.0 + t).ln(),
        BoundKind::Polynomial52 => {
            let delta = need(params.delta, "delta")?;
            let d = need(params.d, "d")?;
            t.powf(-2.0 / (4.0 + d * (1.0 + delta)))
        }
    })
}

/// `C (1 + ||x - y||) * rate(t)` on the given times.
pub fn bound_curve(kind: BoundKind, params: &BoundParams, times: &[f64]) -> Result<BoundCurve> {
    if times.is_empty() {
        return Err(Error::EmptyGrid("bound curve times"));
    }
    let pre = params.c * (1.0 + params.dist);
    let values = times
        .iter()
        .map(|&t| Ok(pre * rate_factor(kind, params, t)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundCurve {
        kind,
        params: params.clone(),
        times: times.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `log v = a + b log t`
    Power,
    /// `log v = a + b t`
    Exponential,
    /// `v = a + b / log(1 + t)`
    InverseLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Exponent, rate or coefficient `b`.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual on the transformed scale.
    pub residual: f64,
}

/// Least-squares fit on the linearizing transform of `model`.
pub fn fit_rate(times: &[f64], values: &[f64], model: RateModel) -> Result<RateFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: values.len(),
        });
    }
    if times.len() < 4 {
        return Err(Error::TooFewSamples {
            got: times.len(),
            min: 4,
        });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::NonPositive { index, value });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .map(|(&t, &v)| match model {
            RateModel::Power => (t.ln(), v.ln()),
            RateModel::Exponential => (t, v.ln()),
            RateModel::InverseLog => (1.0 / (1.0 + t).ln(), v),
        })
        .unzip();
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("times", "transform is undefined at some time"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("times", "need at least two distinct times"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (rss / n).sqrt(),
    })
}

/// Total variation `2 (2 Phi(d / 2) - 1)` between two normals with unit
/// variance whose means differ by `d`.
pub fn gaussian_shift_tv(d: f64) -> f64 {
    2.0 * (2.0 * normal_cdf(d.abs() / 2.0) - 1.0)
}
