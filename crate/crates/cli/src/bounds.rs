//! Bound curves for the `bounds` command.

use ou_levy_core::tvlab::{bound_curve, delta1, eps_grid, BoundCurve, BoundKind, BoundParams, SupGrid};

use crate::config::{validate_times, Experiment, ModelBlock};
use crate::decay::{bounds_ball, delta2_table, z3_params};
use crate::error::CliError;
use crate::tags;

pub const BOUNDS_HEADER: [&str; 4] = ["t", "kind", "value", "params_json"];

const DIRECTIONS: usize = 16;

pub fn bound_curves(exp: &Experiment) -> Result<Vec<BoundCurve>, CliError> {
    let block = exp
        .config
        .bounds
        .as_ref()
        .ok_or_else(|| CliError::usage("config has no [bounds] section"))?;
    if block.kinds.is_empty() {
        return Err(CliError::usage("[bounds] kinds is empty"));
    }
    let times = block.times.as_ref().unwrap_or(&exp.config.run.times);
    validate_times(times, true)?;
    let base = z3_params(exp);
    let (delta, d) = match exp.config.model {
        ModelBlock::Gaussian52 { delta, d, .. } => (Some(delta), Some(d)),
        _ => (None, None),
    };
    block
        .kinds
        .iter()
        .map(|&kind| {
            let mut p = BoundParams::new(base.c, base.dist);
            match kind {
                BoundKind::ExponentialZ3 => {
                    p.lambda0 = base.lambda0;
                    p.lambda = base.lambda;
                }
                BoundKind::Polynomial52 => {
                    p.delta = block.delta.or(delta);
                    p.d = block.d.or(d);
                }
                BoundKind::CouplingIi => p.delta_table = Some(delta2_table(exp, &bounds_ball(exp)?)?),
                BoundKind::CouplingI => p.delta_table = Some(delta1_table(exp, block.delta_budget.unwrap_or(10_000))?),
                BoundKind::LogRate => {}
            }
            bound_curve(kind, &p, times).map_err(CliError::usage_from)
        })
        .collect()
}

/// `(eps, delta_1(eps))` on the geometric grid. Every evaluation scans the
/// same directions with the same substreams, so the table is monotone.
fn delta1_table(exp: &Experiment, budget: usize) -> Result<Vec<(f64, f64)>, CliError> {
    let ball = bounds_ball(exp)?;
    let eps = eps_grid();
    let mut s_grid = eps.clone();
    s_grid.extend((1..=6).map(|k| 2f64.powi(k)));
    s_grid.sort_by(f64::total_cmp);
    let stream = exp.master().substream(tags::DELTA);
    let grid = SupGrid::random(&exp.model, s_grid, DIRECTIONS, stream.substream(0));
    eps.into_iter()
        .map(|e| {
            let r = delta1(&exp.spec, &exp.model, e, &ball, &grid, budget, stream.substream(1))?;
            Ok((e, r.value))
        })
        .collect()
}

pub fn bounds_csv(curves: &[BoundCurve]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(BOUNDS_HEADER)?;
    for curve in curves {
        let params = serde_json::to_string(&curve.params)?;
        for (t, v) in curve.times.iter().zip(&curve.values) {
            w.write_record([
                format!("{t:?}"),
                curve.kind.as_str().to_string(),
                format!("{v:?}"),
                params.clone(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| CliError::usage(format!("csv buffer: {e}")))
}
