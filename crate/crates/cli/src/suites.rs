//! Property suites behind `verify`. Each suite returns one [`Check`] per
//! property, with the statistic, its threshold and the verdict.

use clap::ValueEnum;
use ou_levy_core::coupling::{
    decompose_semigroup, gamma_t, lemma31_check, overlap_mass, p1_difference_quotient, p1_weighted,
    run_mineka_coupling, run_mineka_outcome, sample_mineka_pair, shift_vector, shift_weights, Ball, ShiftIdentity,
    WeightedShift,
};
use ou_levy_core::levy::{mecke_identity_check, mild_solution, nu0_mass_on, sample_path, MeckeFn};
use ou_levy_core::stats::normal_cdf;
use ou_levy_core::tvlab::{coupling_upper, tv_binned, Projection};
use ou_levy_core::{BoundedFn, DiagonalModelF64, Estimate, LevySpecF64, Rho0, Scalar, SeedStream, VectorF64};
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig, MIN_REPLICAS};
use crate::error::CliError;
use crate::tags;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Cm,
    Mecke,
    Mineka,
    Lemma31,
    Decomposition,
    Gradient,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Cm,
        Suite::Mecke,
        Suite::Mineka,
        Suite::Lemma31,
        Suite::Decomposition,
        Suite::Gradient,
    ];

    fn tag(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// Passes when `statistic <= threshold`; NaN never passes.
    pub fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
            detail: None,
        }
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

/// Monte Carlo budget: each check has its own default unless a single
/// override is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget(pub Option<usize>);

impl Budget {
    pub fn or(self, default: usize) -> usize {
        self.0.unwrap_or(default)
    }
}

pub fn verify(suite: Suite, seed: u64, replicas: Option<usize>) -> Result<VerifyReport> {
    if let Some(r) = replicas {
        crate::config::validate_replicas(r)?;
    }
    let budget = Budget(replicas);
    let list: Vec<Suite> = if suite == Suite::All {
        Suite::EACH.to_vec()
    } else {
        vec![suite]
    };
    let suites = list
        .into_iter()
        .map(|s| run_suite(s, seed, budget))
        .collect::<Result<Vec<_>>>()?;
    let pass = suites.iter().all(|s| s.pass);
    Ok(VerifyReport {
        seed,
        replicas,
        suites,
        pass,
    })
}

pub fn run_suite(suite: Suite, seed: u64, budget: Budget) -> Result<SuiteReport> {
    let stream = SeedStream::new(seed).substream(tags::SUITES).substream(suite.tag());
    let checks = match suite {
        Suite::Cm => cm(stream, budget)?,
        Suite::Mecke => mecke(seed, stream, budget)?,
        Suite::Mineka => mineka(seed, stream, budget)?,
        Suite::Lemma31 => lemma31(seed, stream, budget)?,
        Suite::Decomposition => decomposition(seed, stream, budget)?,
        Suite::Gradient => gradient(seed, stream, budget)?,
        Suite::All => return Err(CliError::usage("`all` is not a single suite")),
    };
    let pass = checks.iter().all(|c| c.pass);
    Ok(SuiteReport { suite, checks, pass })
}

fn preset(seed: u64) -> Result<Experiment> {
    Experiment::new(
        ExperimentConfig::preset("gaussian52-small")?,
        Some(seed),
        Some(MIN_REPLICAS),
    )
}

fn two_sided(name: &str, diff: f64, pooled: f64) -> Check {
    Check::at_most(name, diff.abs(), 3.0 * pooled)
}

fn against(name: &str, e: &Estimate, target: f64) -> Check {
    Check::at_most(name, (e.mean - target).abs(), 3.0 * e.stderr).detail(format!("estimate {} vs {target}", e.mean))
}

fn pooled(a: &Estimate, b: &Estimate) -> f64 {
    (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

fn bernoulli(flags: impl Iterator<Item = bool>) -> Estimate {
    let xs: Vec<f64> = flags.map(|b| if b { 1.0 } else { 0.0 }).collect();
    Estimate::from_samples(&xs)
}

fn collect<T>(rows: Vec<ou_levy_core::Result<T>>) -> Result<Vec<T>> {
    Ok(rows.into_iter().collect::<ou_levy_core::Result<Vec<_>>>()?)
}

/// Largest of a family of `|z|` scores against 3, plus the number of
/// exceedances against 3: a count above 3 out of 100 has null probability
/// near `2e-4`, while a single exceedance happens in about a quarter of runs.
fn max_z(name: &str, zs: &[f64]) -> [Check; 2] {
    let (worst, z) = zs.iter().copied().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, z)| if z > acc.1 { (i, z) } else { acc },
    );
    let over = zs.iter().filter(|&&z| !(z <= 3.0)).count();
    [
        Check::at_most(format!("{name}_max_z"), z, 3.0)
            .detail(format!("{over} of {} above 3, worst pair {worst}", zs.len())),
        Check::at_most(format!("{name}_exceedances"), over as f64, 3.0),
    ]
}

/// Shift densities on 100 random models with up to 8 modes:
/// `E phi_h = 1` and `E phi_h^2 = exp(sum q h^2)`.
fn cm(stream: SeedStream, budget: Budget) -> Result<Vec<Check>> {
    let n_samples = budget.or(100_000);
    let mut gen = stream.substream(0).rng(0);
    let mut z1 = Vec::new();
    let mut z2 = Vec::new();
    for i in 0..100u64 {
        let n = 1 + (8.0 * f64::unit(&mut gen)) as usize;
        let q: Vec<f64> = (0..n).map(|_| 0.5 + 3.5 * f64::unit(&mut gen)).collect();
        let model = DiagonalModelF64::new(q, vec![1.0; n], None)?;
        let dir = VectorF64::new((0..n).map(|_| f64::std_normal(&mut gen)).collect());
        let target = 0.02 + 0.23 * f64::unit(&mut gen);
        let h = dir.scale((target / model.precision_norm_sq(&dir)).sqrt());
        let rows = collect(stream.substream(1).substream(i).map(n_samples, |_, rng| {
            let z = model.gaussian_sample(rng);
            model.cm_density(&h, &z)
        }))?;
        let squares: Vec<f64> = rows.iter().map(|p| p * p).collect();
        z1.push(Estimate::from_samples(&rows).z_score(1.0));
        z2.push(Estimate::from_samples(&squares).z_score(model.cm_density_squared_integral(&h)?));
    }
    Ok([max_z("normalization", &z1), max_z("second_moment", &z2)].concat())
}

fn mecke(seed: u64, stream: SeedStream, budget: Budget) -> Result<Vec<Check>> {
    let exp = preset(seed)?;
    let n = budget.or(1_000_000);
    let fns = [
        ("one", MeckeFn::One),
        ("small_jump", MeckeFn::SmallJump { radius: 1.0 }),
        ("endpoint_cos", MeckeFn::EndpointCos { k: 0 }),
    ];
    let mut out = Vec::new();
    for (k, (name, h)) in fns.into_iter().enumerate() {
        let r = mecke_identity_check(&exp.spec, &exp.model, 2.0, h, n, stream.substream(k as u64))?;
        out.push(
            two_sided(&format!("mecke_{name}"), r.lhs.mean - r.rhs.mean, r.pooled_stderr)
                .detail(format!("lhs {} rhs {}", r.lhs.mean, r.rhs.mean)),
        );
    }
    Ok(out)
}

fn mineka(seed: u64, stream: SeedStream, budget: Budget) -> Result<Vec<Check>> {
    let exp = preset(seed)?;
    let (model, spec) = (&exp.model, &exp.spec);
    let n = budget.or(100_000);
    let mut out = Vec::new();

    let a = shift_vector(model, 0.5, &exp.x, &exp.y)?;
    let pairs = collect(
        stream
            .substream(0)
            .map(n, |_, rng| sample_mineka_pair(spec, model, &a, rng)),
    )?;
    let u: Vec<_> = pairs.iter().map(|p| p.u.clone()).collect();
    let up: Vec<_> = pairs.iter().map(|p| p.u_prime.clone()).collect();
    let tv = tv_binned(&u, &up, &Projection::Coord(0), None, stream.substream(1))?;
    out.push(
        Check::at_most("pair_marginal_tv_excess", tv.excess(), 0.01).detail(format!(
            "raw {} null floor {}",
            tv.value,
            tv.null_floor.unwrap_or(0.0)
        )),
    );
    let plus = bernoulli(pairs.iter().map(|p| p.du == 1));
    let minus = bernoulli(pairs.iter().map(|p| p.du == -1));
    out.push(two_sided(
        "defect_symmetry",
        plus.mean - minus.mean,
        pooled(&plus, &minus),
    ));
    let overlap = overlap_mass(spec, model, &a, n, stream.substream(2))?;
    let half = Estimate {
        mean: 0.5 * overlap.mass,
        stderr: 0.5 * overlap.stderr,
        n,
    };
    out.push(two_sided(
        "step_probability_half_overlap",
        plus.mean - half.mean,
        pooled(&plus, &half),
    ));
    let oracle = 2.0 * normal_cdf(-model.precision_norm_sq(&a).sqrt() / 2.0);
    out.push(
        Check::at_most(
            "overlap_normal_oracle",
            (overlap.mass - oracle).abs(),
            3.0 * overlap.stderr,
        )
        .detail(format!("overlap {} vs {oracle}", overlap.mass)),
    );

    let line = DiagonalModelF64::new(vec![1.0], vec![1.0], None)?;
    let flat = LevySpecF64::with_lambda0(Rho0::Constant { c: 1.0 }, 0.0, &line, 1.0)?;
    let o = overlap_mass(&flat, &line, &VectorF64::new(vec![2.0]), n, stream.substream(3))?;
    let oracle = 2.0 * normal_cdf(-1.0);
    out.push(
        Check::at_most("overlap_one_dimensional", (o.mass - oracle).abs(), 3.0 * o.stderr)
            .detail(format!("overlap {} vs {oracle}", o.mass)),
    );

    // walk structure on recorded transcripts
    let t = 2.0;
    let step = model.semigroup_apply(t, &(&exp.x - &exp.y))?;
    let scale = step.norm().max(f64::MIN_POSITIVE);
    let traces = collect(stream.substream(4).map(n.min(2000), |_, rng| {
        run_mineka_coupling(spec, model, &exp.x, &exp.y, t, rng)
    }))?;
    let mut worst: f64 = 0.0;
    let mut copies = 0usize;
    for tr in &traces {
        let mut prev = model.zeros();
        for k in 0..tr.du.len() {
            let diff = &tr.s_prime[k] - &tr.s[k];
            let inc = &diff - &prev;
            worst = worst.max((&inc - &step.scale(tr.du[k] as f64)).norm() / scale);
            prev = diff;
            if tr.t_couple.is_some_and(|c| k >= c) && tr.u[k] != tr.u_prime[k] {
                copies += 1;
            }
        }
    }
    out.push(Check::at_most("walk_quantization", worst, 1e-12));
    out.push(Check::at_most("shared_jumps_after_coupling", copies as f64, 0.0));

    // both endpoint laws of the coupling, against direct simulation
    let t = 1.0;
    let outs = collect(
        stream
            .substream(5)
            .map(n, |_, rng| run_mineka_outcome(spec, model, &exp.x, &exp.y, t, rng)),
    )?;
    let mut direct = Vec::new();
    for (side, start) in [("x", &exp.x), ("y", &exp.y)] {
        let tag = if side == "x" { 6 } else { 7 };
        let ends = collect(stream.substream(tag).map(n, |_, rng| {
            sample_path(spec, model, t, rng).and_then(|p| mild_solution(model, start, &p))
        }))?;
        let coupled: Vec<_> = outs
            .iter()
            .map(|o| {
                if side == "x" {
                    o.endpoint_x.clone()
                } else {
                    o.endpoint_y.clone()
                }
            })
            .collect();
        let tv = tv_binned(&coupled, &ends, &Projection::Coord(0), None, stream.substream(tag + 10))?;
        out.push(
            Check::at_most(format!("coupling_marginal_{side}_tv_excess"), tv.excess(), 0.02).detail(format!(
                "raw {} null floor {}",
                tv.value,
                tv.null_floor.unwrap_or(0.0)
            )),
        );
        direct.push(ends);
    }
    let flags: Vec<bool> = outs.iter().map(|o| o.coupled()).collect();
    let upper = coupling_upper(&flags);
    let tv = tv_binned(&direct[0], &direct[1], &Projection::Coord(0), None, stream.substream(8))?;
    out.push(
        Check::at_most(
            "coupling_inequality",
            tv.value - upper.value,
            3.0 * (tv.stderr.powi(2) + upper.stderr.powi(2)).sqrt(),
        )
        .detail(format!("binned {} vs 2 P(not coupled) {}", tv.value, upper.value)),
    );
    Ok(out)
}

fn lemma31(seed: u64, stream: SeedStream, budget: Budget) -> Result<Vec<Check>> {
    let exp = preset(seed)?;
    let model = &exp.model;
    let n_modes = model.n_modes();
    let rho = Rho0::IndicatorBall {
        center: model.zeros(),
        radius: 3.0,
        level: 1.0,
    };
    let spec = LevySpecF64::calibrate(rho, 0.0, model, 1_000_000, stream.substream(0))?;
    let n = budget.or(1_000_000);
    let setup = |y: f64, f: BoundedFn| ShiftIdentity {
        x: VectorF64::basis(n_modes, 0).scale(0.5),
        y: VectorF64::basis(n_modes, 0).scale(y),
        t: 3.0,
        eps: 0.5,
        f,
        ball: Ball::new(model.zeros(), 2.0),
    };
    let mut out = Vec::new();
    for (k, (name, f)) in [
        ("lemma31_constant", BoundedFn::Const { c: 1.0 }),
        ("lemma31_cos_coordinate", BoundedFn::CosCoord { k: 0, freq: 1.0 }),
    ]
    .into_iter()
    .enumerate()
    {
        let r = lemma31_check(&spec, model, &setup(0.2, f), n, stream.substream(1 + k as u64))?;
        out.push(two_sided(name, r.diff(), r.pooled_stderr).detail(format!("lhs {} rhs {}", r.lhs.mean, r.rhs.mean)));
    }

    let zero = setup(0.0, BoundedFn::CosCoord { k: 1, freq: 2.0 });
    let gaps = collect(stream.substream(3).map(n.min(2000), |_, rng| {
        let path = sample_path(&spec, model, zero.t, rng)?;
        zero.pathwise(&spec, model, &path).map(|(l, r)| (l - r).abs())
    }))?;
    out.push(Check::at_most(
        "zero_shift_pathwise",
        gaps.iter().copied().fold(0.0, f64::max),
        0.0,
    ));

    let shifted = setup(0.2, BoundedFn::Const { c: 1.0 });
    let weights = collect(stream.substream(4).map(n.min(100_000), |_, rng| {
        let path = sample_path(&spec, model, shifted.t, rng)?;
        shift_weights(&spec, model, &shifted.y, &path, &shifted.ball)
    }))?;
    let xi: Vec<f64> = weights.iter().flat_map(|w| w.xi.iter().copied()).collect();
    let xt: Vec<f64> = weights.iter().flat_map(|w| w.xi_tilde.iter().copied()).collect();
    let (a, b) = (Estimate::from_samples(&xi), Estimate::from_samples(&xt));
    let half = Ball::new(model.zeros(), 1.0);
    let mass = nu0_mass_on(&spec, model, |z| half.contains(z), 1_000_000, stream.substream(5))?;
    let lambda0 = spec.lambda0();
    let oracle = Estimate {
        mean: mass.mean / lambda0,
        stderr: mass.stderr / lambda0,
        n: mass.n,
    };
    out.push(two_sided(
        "xi_mean_half_ball_mass",
        a.mean - oracle.mean,
        pooled(&a, &oracle),
    ));
    out.push(two_sided("xi_tilde_mean", b.mean - a.mean, pooled(&a, &b)));
    Ok(out)
}

fn decomposition(seed: u64, stream: SeedStream, budget: Budget) -> Result<Vec<Check>> {
    let exp = preset(seed)?;
    let (model, spec) = (&exp.model, &exp.spec);
    let lambda0 = spec.lambda0();
    let n = budget.or(100_000);
    let mut out = Vec::new();
    for (i, t) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let d = decompose_semigroup(
            spec,
            model,
            &BoundedFn::Const { c: 1.0 },
            &exp.x,
            t,
            n,
            stream.substream(i as u64),
        )?;
        out.push(against(
            &format!("no_jump_probability_t{t}"),
            &d.no_jump,
            (-lambda0 * t).exp(),
        ));
        out.push(Check::at_most(
            format!("parts_sum_t{t}"),
            (d.p0_part.mean + d.p1_part.mean - d.total.mean).abs(),
            1e-12,
        ));
    }
    let t = 1.0;
    let z0 = VectorF64::new(
        (0..model.n_modes())
            .map(|k| if k < 2 { 0.5f64.sqrt() } else { 0.0 })
            .collect(),
    );
    let constant = WeightedShift {
        f: BoundedFn::Const { c: 1.0 },
        x: exp.x.clone(),
        z0: z0.clone(),
        eps: 0.0,
        t,
    };
    let r = p1_weighted(spec, model, &constant, n, stream.substream(10))?;
    out.push(against("weighted_constant", &r.lhs, 1.0 - (-lambda0 * t).exp()));
    let cos = WeightedShift {
        f: BoundedFn::CosCoord { k: 0, freq: 1.0 },
        x: exp.x.clone(),
        z0,
        eps: 0.1,
        t,
    };
    let r = p1_weighted(spec, model, &cos, budget.or(1_000_000), stream.substream(11))?;
    out.push(
        two_sided("weighted_vs_direct", r.diff(), r.pooled_stderr)
            .detail(format!("weighted {} direct {}", r.lhs.mean, r.rhs.mean)),
    );
    Ok(out)
}

/// `|P_t^1 f(x + eps z0) - P_t^1 f(x)| / eps <= c Gamma_t` for random
/// plane waves, with `c` fitted on a held-out halfspace indicator.
fn gradient(seed: u64, stream: SeedStream, budget: Budget) -> Result<Vec<Check>> {
    let exp = preset(seed)?;
    let (model, spec) = (&exp.model, &exp.spec);
    let n = budget.or(100_000);
    let n_modes = model.n_modes();
    let z0 = VectorF64::basis(n_modes, 0);
    let eps = 0.1;
    let times = [1.0, 2.0, 4.0];
    let gammas = times
        .iter()
        .map(|&t| gamma_t(spec, model, t))
        .collect::<ou_levy_core::Result<Vec<_>>>()?;

    // the halfspace through T_t x normal to Q T_t z0 maximizes the
    // derivative of a symmetric unimodal translation family
    let mut c: f64 = 0.0;
    for (i, &t) in times.iter().enumerate() {
        let tz = model.semigroup_apply(t, &z0)?;
        let normal: Vec<f64> = tz.iter().zip(model.q()).map(|(v, q)| v * q).collect();
        let tx = model.semigroup_apply(t, &exp.x)?;
        let offset = normal.iter().zip(tx.iter()).map(|(a, b)| a * b).sum();
        let setup = WeightedShift {
            f: BoundedFn::Halfspace { normal, offset },
            x: exp.x.clone(),
            z0: z0.clone(),
            eps,
            t,
        };
        let e = p1_difference_quotient(spec, model, &setup, n, stream.substream(0).substream(i as u64))?;
        c = c.max((e.mean.abs() + 3.0 * e.stderr) / gammas[i]);
    }

    let mut rng = stream.substream(1).rng(0);
    let waves: Vec<BoundedFn> = (0..20)
        .map(|_| BoundedFn::random_plane_wave(n_modes, 1.0, &mut rng))
        .collect();
    let mut worst: f64 = 0.0;
    for (j, f) in waves.iter().enumerate() {
        for (i, &t) in times.iter().enumerate() {
            let setup = WeightedShift {
                f: f.clone(),
                x: exp.x.clone(),
                z0: z0.clone(),
                eps,
                t,
            };
            let sub = stream.substream(2).substream((j * times.len() + i) as u64);
            let e = p1_difference_quotient(spec, model, &setup, n, sub)?;
            worst = worst.max(e.mean.abs() / (c * gammas[i]));
        }
    }
    Ok(vec![Check::at_most("gradient_over_gamma", worst, 1.0)
        .detail(format!("fitted c {c}, gamma_t {gammas:?} at t {times:?}"))])
}
