use ou_levy_core::coupling::{
    decompose_semigroup, gamma_functional, gamma_t, gamma_t_with, lemma31_check, overlap_mass, p1_weighted,
    run_mineka_coupling, run_mineka_outcome, sample_mineka_pair, shift_weights, Ball, ShiftIdentity, WeightedShift,
};
use ou_levy_core::levy::{mild_solution, nu0_mass_on, sample_path};
use ou_levy_core::stats::normal_cdf;
use ou_levy_core::tvlab::{coupling_upper, tv_binned, Projection};
use ou_levy_core::{BoundedFn, DiagonalModel, Estimate, LevySpec, Rho0, SeedStream, Vector};
use proptest::prelude::*;

fn unit_1d() -> DiagonalModel<f64> {
    DiagonalModel::new(vec![1.0], vec![1.0], None).unwrap()
}

fn constant(m: &DiagonalModel<f64>, c: f64) -> LevySpec<f64> {
    LevySpec::with_lambda0(Rho0::Constant { c }, 0.0, m, c).unwrap()
}

fn pooled(a: &Estimate, b: &Estimate) -> f64 {
    (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

fn bernoulli(xs: impl Iterator<Item = bool>) -> Estimate {
    let v: Vec<f64> = xs.map(|b| if b { 1.0 } else { 0.0 }).collect();
    Estimate::from_samples(&v)
}

#[test]
fn overlap_of_unit_shifted_normals() {
    let m = unit_1d();
    let spec = constant(&m, 1.0);
    let r = overlap_mass(&spec, &m, &Vector::new(vec![2.0]), 200_000, SeedStream::new(1)).unwrap();
    let oracle = 2.0 * normal_cdf(-1.0);
    assert!((oracle - 0.31731).abs() < 1e-5);
    assert!((r.mass - oracle).abs() <= 3.0 * r.stderr, "{r:?}");
}

#[test]
fn overlap_matches_precision_weighted_oracle() {
    let m = DiagonalModel::new(vec![1.0, 4.0], vec![1.0, 2.0], None).unwrap();
    let spec = constant(&m, 1.0);
    let a = Vector::new(vec![0.5, -0.4]);
    let r = overlap_mass(&spec, &m, &a, 200_000, SeedStream::new(2)).unwrap();
    let oracle = 2.0 * normal_cdf(-m.precision_norm_sq(&a).sqrt() / 2.0);
    assert!((r.mass - oracle).abs() <= 3.0 * r.stderr, "{r:?} vs {oracle}");
}

#[test]
fn overlap_is_symmetric() {
    let m = DiagonalModel::gaussian(3, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    let a = Vector::new(vec![0.7, -0.3, 0.2]);
    let p = overlap_mass(&spec, &m, &a, 100_000, SeedStream::new(3)).unwrap();
    let n = overlap_mass(&spec, &m, &a.scale(-1.0), 100_000, SeedStream::new(4)).unwrap();
    let se = (p.stderr.powi(2) + n.stderr.powi(2)).sqrt();
    assert!((p.mass - n.mass).abs() <= 3.0 * se);
}

#[test]
fn gamma_one_dimensional_example() {
    let m = unit_1d();
    let lambda0 = 1.0;
    let spec = constant(&m, lambda0);
    let grid: Vec<f64> = (0..32).map(|i| (64.0f64).powf(i as f64 / 31.0)).collect();
    let g = gamma_functional(&spec, &m, 1.0, 1.0, &grid, 2, 100_000, SeedStream::new(5)).unwrap();
    let oracle = lambda0 * 2.0 * normal_cdf(-(-1.0f64).exp() / 2.0);
    assert_eq!(g.argmin_t, 1.0);
    assert!((g.value - oracle).abs() < 0.01, "{g:?} vs {oracle}");
}

#[test]
fn gamma_small_radius_recovers_full_mass() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.5);
    let grid = ou_levy_core::coupling::default_t_grid(&m, 0.5);
    let g = gamma_functional(&spec, &m, 1e-4, 0.5, &grid, 4, 20_000, SeedStream::new(6)).unwrap();
    assert!((g.value - 1.5).abs() < 0.01, "{g:?}");
}

#[test]
fn gamma_is_monotone_in_eps() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    let grid = ou_levy_core::coupling::default_t_grid(&m, 0.1);
    let mut prev = 0.0;
    for eps in [0.1, 0.5, 2.0, 8.0] {
        let g = gamma_functional(&spec, &m, 1.0, eps, &grid, 8, 5_000, SeedStream::new(7)).unwrap();
        assert!(g.value >= prev, "eps {eps}: {} < {prev}", g.value);
        prev = g.value;
    }
}

#[test]
fn mineka_pair_marginals_and_symmetric_defect() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    let a = Vector::new(vec![0.8, 0.3]);
    let pairs = SeedStream::new(8).map(100_000, |_, rng| sample_mineka_pair(&spec, &m, &a, rng).unwrap());
    let u: Vec<_> = pairs.iter().map(|p| p.u.clone()).collect();
    let up: Vec<_> = pairs.iter().map(|p| p.u_prime.clone()).collect();
    let tv = tv_binned(&u, &up, &Projection::Coord(0), None, SeedStream::new(9)).unwrap();
    assert!(tv.excess() < 0.01, "{tv:?}");

    let plus = bernoulli(pairs.iter().map(|p| p.du == 1));
    let minus = bernoulli(pairs.iter().map(|p| p.du == -1));
    assert!((plus.mean - minus.mean).abs() <= 3.0 * pooled(&plus, &minus));
    let overlap = overlap_mass(&spec, &m, &a, 200_000, SeedStream::new(10)).unwrap();
    let half = Estimate {
        mean: 0.5 * overlap.mass,
        stderr: 0.5 * overlap.stderr,
        n: 200_000,
    };
    assert!(
        (plus.mean - half.mean).abs() <= 3.0 * pooled(&plus, &half),
        "{plus:?} vs {half:?}"
    );
    for p in &pairs {
        let d = &p.u_prime - &p.u;
        let expect = a.scale(p.du as f64);
        assert!((&d - &expect).norm() <= 1e-12);
    }
}

#[test]
fn coupling_transcripts_are_well_formed() {
    let m = DiagonalModel::gaussian(3, 1.0, 2.0).unwrap();
    let spec = constant(&m, 2.0);
    let x = Vector::new(vec![1.0, -0.5, 0.2]);
    let y = Vector::new(vec![-0.4, 0.3, 0.0]);
    let t = 3.0;
    let step = m.semigroup_apply(t, &(&x - &y)).unwrap();
    let scale = step.norm();
    for i in 0..2_000 {
        let tr = run_mineka_coupling(&spec, &m, &x, &y, t, &mut SeedStream::new(11).rng(i)).unwrap();
        let mut prev = m.zeros();
        let mut walk = 0;
        for k in 0..tr.du.len() {
            let diff = &tr.s_prime[k] - &tr.s[k];
            let inc = &diff - &prev;
            let expect = step.scale(tr.du[k] as f64);
            assert!((&inc - &expect).norm() <= 1e-12 * scale.max(1.0));
            prev = diff;
            walk += tr.du[k] as i32;
            if let Some(c) = tr.t_couple {
                if k >= c {
                    assert_eq!(tr.u[k], tr.u_prime[k]);
                }
            }
            assert!(walk <= 1);
        }
        assert_eq!(tr.coupled(), tr.t_couple.is_some());
    }
}

#[test]
fn coupled_chains_have_correct_marginals() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 2.0);
    let x = Vector::new(vec![1.0, 0.5]);
    let y = Vector::new(vec![-1.0, 0.0]);
    let t = 1.0;
    let outs = SeedStream::new(12).map(100_000, |_, rng| run_mineka_outcome(&spec, &m, &x, &y, t, rng).unwrap());
    for (start, pick_y, seed) in [(&x, false, 13), (&y, true, 14)] {
        let coupled: Vec<_> = outs
            .iter()
            .map(|o| {
                if pick_y {
                    o.endpoint_y.clone()
                } else {
                    o.endpoint_x.clone()
                }
            })
            .collect();
        let direct = SeedStream::new(seed).map(100_000, |_, rng| {
            mild_solution(&m, start, &sample_path(&spec, &m, t, rng).unwrap()).unwrap()
        });
        let tv = tv_binned(
            &coupled,
            &direct,
            &Projection::Coord(0),
            None,
            SeedStream::new(seed + 10),
        )
        .unwrap();
        assert!(tv.excess() < 0.02, "{tv:?}");
    }
}

#[test]
fn coupling_probability_grows_with_time() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    let x = Vector::new(vec![1.0, 0.0]);
    let y = Vector::new(vec![-1.0, 0.0]);
    let mut prev: Option<Estimate> = None;
    for t in [1.0, 2.0, 4.0, 8.0] {
        let p = bernoulli(
            SeedStream::new(15)
                .map(50_000, |_, rng| {
                    run_mineka_outcome(&spec, &m, &x, &y, t, rng).unwrap().coupled()
                })
                .into_iter(),
        );
        if let Some(q) = prev {
            assert!(p.mean >= q.mean - 2.0 * pooled(&p, &q), "t={t}: {p:?} < {q:?}");
        }
        prev = Some(p);
    }
}

#[test]
fn coupling_inequality_dominates_binned_tv() {
    let m = unit_1d();
    let spec = constant(&m, 1.0);
    let (x, y) = (Vector::new(vec![1.0]), Vector::new(vec![-1.0]));
    let t = 2.0;
    let n = 100_000;
    let flags = SeedStream::new(16).map(n, |_, rng| {
        run_mineka_outcome(&spec, &m, &x, &y, t, rng).unwrap().coupled()
    });
    let upper = coupling_upper(&flags);
    let at = |s: &Vector<f64>, seed| {
        SeedStream::new(seed).map(n, |_, rng| {
            mild_solution(&m, s, &sample_path(&spec, &m, t, rng).unwrap()).unwrap()
        })
    };
    let tv = tv_binned(
        &at(&x, 17),
        &at(&y, 18),
        &Projection::Coord(0),
        None,
        SeedStream::new(19),
    )
    .unwrap();
    let se = (tv.stderr.powi(2) + upper.stderr.powi(2)).sqrt();
    assert!(tv.value <= upper.value + 3.0 * se, "{tv:?} vs {upper:?}");
}

fn shift_setup(y: f64, f: BoundedFn) -> (DiagonalModel<f64>, LevySpec<f64>, ShiftIdentity<f64>) {
    let m = DiagonalModel::new(vec![1.0, 1.0], vec![1.0, 0.5], None).unwrap();
    let spec = constant(&m, 1.0);
    let setup = ShiftIdentity {
        x: Vector::new(vec![0.5, -0.5]),
        y: Vector::new(vec![y, -y]),
        t: 3.0,
        eps: 0.5,
        f,
        ball: Ball::new(Vector::new(vec![0.2, 0.0]), 1.0),
    };
    (m, spec, setup)
}

#[test]
fn shift_weights_collapse_without_shift() {
    let (m, spec, setup) = shift_setup(0.0, BoundedFn::Const { c: 1.0 });
    for i in 0..500 {
        let path = sample_path(&spec, &m, 4.0, &mut SeedStream::new(20).rng(i)).unwrap();
        let w = shift_weights(&spec, &m, &setup.y, &path, &setup.ball).unwrap();
        assert_eq!(w.xi, w.xi_tilde);
        let (l, r) = setup.pathwise(&spec, &m, &path).unwrap();
        assert_eq!(l, r);
    }
}

#[test]
fn shift_weight_means_match_half_ball_mass() {
    let (m, spec, setup) = shift_setup(0.1, BoundedFn::Const { c: 1.0 });
    let mut xi = Vec::new();
    let mut xt = Vec::new();
    for i in 0..40_000 {
        let path = sample_path(&spec, &m, 4.0, &mut SeedStream::new(21).rng(i)).unwrap();
        let w = shift_weights(&spec, &m, &setup.y, &path, &setup.ball).unwrap();
        xi.extend(w.xi);
        xt.extend(w.xi_tilde);
    }
    let (a, b) = (Estimate::from_samples(&xi), Estimate::from_samples(&xt));
    let half = Ball::new(setup.ball.center.clone(), 0.5);
    let mass = nu0_mass_on(&spec, &m, |z| half.contains(z), 400_000, SeedStream::new(22)).unwrap();
    let oracle = mass.mean / spec.lambda0();
    let se_o = mass.stderr / spec.lambda0();
    assert!(
        (a.mean - oracle).abs() <= 3.0 * (a.stderr.powi(2) + se_o.powi(2)).sqrt(),
        "{a:?} vs {oracle}"
    );
    assert!((a.mean - b.mean).abs() <= 3.0 * pooled(&a, &b), "{a:?} vs {b:?}");
}

#[test]
fn lemma31_identity_holds_in_mean() {
    for (i, f) in [BoundedFn::Const { c: 1.0 }, BoundedFn::CosCoord { k: 0, freq: 1.0 }]
        .into_iter()
        .enumerate()
    {
        let (m, spec, setup) = shift_setup(0.1, f);
        let r = lemma31_check(&spec, &m, &setup, 200_000, SeedStream::new(23 + i as u64)).unwrap();
        assert!(r.z_score() <= 3.0, "{r:?}");
    }
}

#[test]
fn lemma31_rejects_large_shift() {
    let (m, spec, setup) = shift_setup(0.4, BoundedFn::Const { c: 1.0 });
    assert!(lemma31_check(&spec, &m, &setup, 10, SeedStream::new(0)).is_err());
}

#[test]
fn decomposition_of_the_constant_function() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    let t = 1.2;
    let x = Vector::new(vec![0.3, 0.1]);
    let d = decompose_semigroup(
        &spec,
        &m,
        &BoundedFn::Const { c: 1.0 },
        &x,
        t,
        100_000,
        SeedStream::new(25),
    )
    .unwrap();
    let p0 = (-t).exp();
    assert!(d.p0_part.z_score(p0) <= 3.0);
    assert!(d.p1_part.z_score(1.0 - p0) <= 3.0);
    assert!((d.p0_part.mean + d.p1_part.mean - d.total.mean).abs() < 1e-12);

    let f = BoundedFn::CosCoord { k: 1, freq: 2.0 };
    let d = decompose_semigroup(&spec, &m, &f, &x, t, 20_000, SeedStream::new(26)).unwrap();
    assert!((d.p0_part.mean + d.p1_part.mean - d.total.mean).abs() < 1e-12);

    let long = decompose_semigroup(
        &spec,
        &m,
        &BoundedFn::Const { c: 1.0 },
        &x,
        7.5,
        20_000,
        SeedStream::new(27),
    )
    .unwrap();
    assert!(long.p0_part.mean < 1e-3);
}

#[test]
fn weighted_shift_examples() {
    let m = DiagonalModel::gaussian(2, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    let t = 1.5;
    let mut setup = WeightedShift {
        f: BoundedFn::Const { c: 1.0 },
        x: Vector::new(vec![0.2, -0.1]),
        z0: Vector::new(vec![1.0, 0.5]),
        eps: 0.0,
        t,
    };
    let r = p1_weighted(&spec, &m, &setup, 100_000, SeedStream::new(28)).unwrap();
    assert!(r.lhs.z_score(1.0 - (-t).exp()) <= 3.0, "{r:?}");

    // zero shift: weights are exactly one on shared paths
    setup.f = BoundedFn::CosCoord { k: 0, freq: 1.0 };
    for i in 0..200 {
        let path = sample_path(&spec, &m, t, &mut SeedStream::new(29).rng(i)).unwrap();
        let w = setup.weighted_sample(&spec, &m, &path, i).unwrap();
        let d = setup.direct_sample(&m, &path).unwrap();
        assert!((w - d).abs() < 1e-12);
    }

    setup.eps = 0.1;
    let r = p1_weighted(&spec, &m, &setup, 200_000, SeedStream::new(30)).unwrap();
    assert!(r.z_score() <= 3.0, "{r:?}");
}

#[test]
fn gamma_t_is_bounded_on_the_product_model() {
    let m = DiagonalModel::<f64>::gaussian(16, 1.0, 2.0).unwrap();
    let spec = constant(&m, 1.0);
    for big in [64.0, 128.0, 512.0] {
        let a = gamma_t(&spec, &m, big).unwrap();
        let b = gamma_t(&spec, &m, 2.0 * big).unwrap();
        assert!(b <= 1.01 * a, "T={big}: {b} > 1.01 * {a}");
    }
}

fn gamma_by_simpson(m: &DiagonalModel<f64>, lambda0: f64, t: f64) -> f64 {
    let g = |r: f64| {
        let peak = m
            .q()
            .iter()
            .zip(m.sigma())
            .zip(m.lam())
            .map(|((q, s), l)| q / s.abs() * (-l * r).exp())
            .fold(0.0, f64::max);
        (-lambda0 * r).exp() * peak
    };
    let n = 200_000;
    let h = t / n as f64;
    let s = (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * g(i as f64 * h)
        })
        .sum::<f64>()
        * h
        / 3.0;
    s / (1.0 - (-lambda0 * t).exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gamma_t_matches_quadrature(
        q in prop::collection::vec(0.2f64..5.0, 1..5),
        seed in any::<u64>(),
        lambda0 in 0.2f64..3.0,
        t in 0.1f64..10.0,
    ) {
        let mut rng = SeedStream::new(seed).rng(0);
        let lam: Vec<f64> = q.iter().map(|_| 3.0 * rand::Rng::random::<f64>(&mut rng)).collect();
        let m = DiagonalModel::new(q, lam, None).unwrap();
        let exact = gamma_t_with(&m, lambda0, t).unwrap();
        let quad = gamma_by_simpson(&m, lambda0, t);
        prop_assert!((exact - quad).abs() <= 1e-6 * quad, "{exact} vs {quad}");
    }
}
