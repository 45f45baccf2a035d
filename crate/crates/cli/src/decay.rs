//! Total-variation decay tables: projection and coupling estimates on a
//! time grid, next to bound curves whose constants are fitted at the first
//! grid time.

use ou_levy_core::coupling::{run_mineka_outcome, Ball};
use ou_levy_core::levy::{mild_solution, sample_path};
use ou_levy_core::tvlab::{
    coupling_upper, delta2_closed_form, eps_grid, fit_rate, rate_factor, tv_shift_projection, BoundKind, BoundParams,
    RateFit, RateModel, TvEstimate, MIN_SAMPLES,
};
use ou_levy_core::{Estimate, VectorF64};
use serde::Serialize;

use crate::config::{validate_times, Experiment, Point};
use crate::error::CliError;
use crate::tags;

pub const TV_DECAY_HEADER: [&str; 7] = [
    "t",
    "tv_projection",
    "tv_stderr",
    "tv_coupling_upper",
    "bound_coupling1",
    "bound_z3",
    "seed",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub t: f64,
    pub projection: TvEstimate,
    pub coupling: TvEstimate,
    /// Fraction of paths without jumps.
    pub no_jump: f64,
    pub bound_coupling1: Option<f64>,
    pub bound_z3: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFits {
    pub projection_power: Option<RateFit>,
    pub projection_exponential: Option<RateFit>,
    pub coupling_power: Option<RateFit>,
    pub coupling_exponential: Option<RateFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    pub seed: u64,
    pub replicas: usize,
    pub lambda0: f64,
    pub lambda: f64,
    pub c_coupling1: Option<f64>,
    pub c_z3: Option<f64>,
    pub fits: DecayFits,
    pub points: Vec<DecayPoint>,
}

/// Ball used by the `delta` evaluators: the `[bounds]` ball, or the unit
/// ball at the origin.
pub fn bounds_ball(exp: &Experiment) -> Result<Ball<f64>, CliError> {
    let n = exp.model.n_modes();
    let block = exp.config.bounds.as_ref();
    let center = block
        .and_then(|b| b.ball_center.clone())
        .unwrap_or(Point::Named("origin".into()))
        .resolve(n)?;
    let radius = block.and_then(|b| b.ball_radius).unwrap_or(1.0);
    if !(radius > 0.0) {
        return Err(CliError::usage(format!("ball_radius must be positive, got {radius}")));
    }
    Ok(Ball::new(center, radius))
}

pub fn z3_params(exp: &Experiment) -> BoundParams {
    let block = exp.config.bounds.as_ref();
    let mut p = BoundParams::new(block.and_then(|b| b.c).unwrap_or(1.0), (&exp.x - &exp.y).norm());
    p.lambda0 = Some(block.and_then(|b| b.lambda0).unwrap_or(exp.spec.lambda0()));
    p.lambda = Some(block.and_then(|b| b.lambda).unwrap_or(exp.model.min_lam()));
    p
}

/// `(eps, delta_2(eps))` on the geometric grid, from the closed form.
pub fn delta2_table(exp: &Experiment, ball: &Ball<f64>) -> Result<Vec<(f64, f64)>, CliError> {
    eps_grid()
        .into_iter()
        .map(|e| Ok((e, delta2_closed_form(&exp.spec, &exp.model, e, ball)?)))
        .collect()
}

pub fn tv_decay(exp: &Experiment) -> Result<DecayTable, CliError> {
    let times = &exp.config.run.times;
    validate_times(times, false)?;
    let (model, spec) = (&exp.model, &exp.spec);
    let n = exp.replicas;
    let master = exp.master();
    let origin = model.zeros();
    let mut points = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let v = model.semigroup_apply(t, &(&exp.x - &exp.y))?;
        let projection = if v.is_zero() {
            (
                tv_shift_projection::<f64>(&[], &v, None, master)?,
                (-spec.lambda0() * t).exp(),
            )
        } else {
            // P_t(x, .) is the law of T_t x + X_t^0: one set of zero-start
            // endpoints serves both kernels
            let rows = master
                .substream(tags::ENDPOINTS)
                .substream(i as u64)
                .map(n, |_, rng| -> ou_levy_core::Result<(VectorF64, bool)> {
                    let path = sample_path(spec, model, t, rng)?;
                    Ok((mild_solution(model, &origin, &path)?, path.is_empty()))
                })
                .into_iter()
                .collect::<ou_levy_core::Result<Vec<_>>>()?;
            projection_with_atoms(&rows, &v, t, master.substream(tags::TV).substream(i as u64))?
        };
        let flags = master
            .substream(tags::COUPLING)
            .substream(i as u64)
            .map(n, |_, rng| {
                run_mineka_outcome(spec, model, &exp.x, &exp.y, t, rng).map(|o| o.coupled())
            })
            .into_iter()
            .collect::<ou_levy_core::Result<Vec<_>>>()?;
        points.push(DecayPoint {
            t,
            no_jump: projection.1,
            projection: projection.0,
            coupling: coupling_upper(&flags),
            bound_coupling1: None,
            bound_z3: None,
        });
    }

    let z3 = z3_params(exp);
    let lambda0 = z3.lambda0.unwrap_or(spec.lambda0());
    let lambda = z3.lambda.unwrap_or(model.min_lam());
    let c_z3 = fit_constant(BoundKind::ExponentialZ3, &z3, &points)?;
    let coupling1 = match delta2_table(exp, &bounds_ball(exp)?) {
        Ok(table) => {
            let mut p = BoundParams::new(1.0, z3.dist);
            p.delta_table = Some(table);
            Some(p)
        }
        // no closed form when the density vanishes on the ball
        Err(CliError::Core(_)) => None,
        Err(e) => return Err(e),
    };
    let c_coupling1 = match &coupling1 {
        Some(p) => fit_constant(BoundKind::CouplingIi, p, &points)?,
        None => None,
    };
    for point in &mut points {
        if let Some(c) = c_z3 {
            point.bound_z3 = Some(c * (1.0 + z3.dist) * rate_factor(BoundKind::ExponentialZ3, &z3, point.t)?);
        }
        if let (Some(c), Some(p)) = (c_coupling1, &coupling1) {
            point.bound_coupling1 = Some(c * (1.0 + p.dist) * rate_factor(BoundKind::CouplingIi, p, point.t)?);
        }
    }

    let series = |pick: fn(&DecayPoint) -> f64, model: RateModel| {
        let (ts, vs): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.t, pick(p))).filter(|&(_, v)| v > 0.0).unzip();
        if ts.len() < 4 {
            None
        } else {
            fit_rate(&ts, &vs, model).ok()
        }
    };
    let fits = DecayFits {
        projection_power: series(|p| p.projection.value, RateModel::Power),
        projection_exponential: series(|p| p.projection.value, RateModel::Exponential),
        coupling_power: series(|p| p.coupling.value, RateModel::Power),
        coupling_exponential: series(|p| p.coupling.value, RateModel::Exponential),
    };
    Ok(DecayTable {
        seed: exp.seed,
        replicas: n,
        lambda0,
        lambda,
        c_coupling1,
        c_z3,
        fits,
        points,
    })
}

/// Projection estimate for kernels whose no-jump atoms sit at two distinct
/// points: `2 p0 + (1 - p0) TV` of the jump parts. Returns the estimate and
/// the observed no-jump fraction.
fn projection_with_atoms(
    rows: &[(VectorF64, bool)],
    v: &VectorF64,
    t: f64,
    stream: ou_levy_core::SeedStream,
) -> Result<(TvEstimate, f64), CliError> {
    let jumped: Vec<VectorF64> = rows.iter().filter(|r| !r.1).map(|r| r.0.clone()).collect();
    if jumped.len() < MIN_SAMPLES {
        return Err(CliError::usage(format!(
            "only {} of {} paths jump by t = {t}; increase replicas or the grid times",
            jumped.len(),
            rows.len()
        )));
    }
    let p0 = Estimate::from_samples(&rows.iter().map(|r| if r.1 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    let cont = tv_shift_projection(&jumped, v, None, stream)?;
    let value = 2.0 * p0.mean + (1.0 - p0.mean) * cont.value;
    let stderr = (((1.0 - p0.mean) * cont.stderr).powi(2) + ((2.0 - cont.value) * p0.stderr).powi(2)).sqrt();
    Ok((
        TvEstimate {
            value,
            stderr,
            n_samples: rows.len(),
            ..cont
        },
        p0.mean,
    ))
}

/// `C` with `C (1 + dist) rate(t_0) = TV(t_0)` at the first grid time.
fn fit_constant(kind: BoundKind, params: &BoundParams, points: &[DecayPoint]) -> Result<Option<f64>, CliError> {
    let Some(first) = points.first() else {
        return Ok(None);
    };
    let rate = rate_factor(kind, params, first.t)?;
    if !(rate > 0.0) {
        return Ok(None);
    }
    Ok(Some(first.projection.value / ((1.0 + params.dist) * rate)))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// CSV bytes with the pinned header, LF line endings.
pub fn decay_csv(table: &DecayTable) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(TV_DECAY_HEADER)?;
    for p in &table.points {
        w.write_record([
            num(p.t),
            num(p.projection.value),
            num(p.projection.stderr),
            num(p.coupling.value),
            p.bound_coupling1.map(num).unwrap_or_default(),
            p.bound_z3.map(num).unwrap_or_default(),
            table.seed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::usage(format!("csv buffer: {e}")))
}
