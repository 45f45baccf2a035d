//! Acceptance run: one line per criterion, seed 1, full budgets.
//!
//! Every criterion is evaluated and printed before the process decides its
//! exit status. The Cameron-Martin family is printed with its literal
//! verdict (every one of 200 comparisons within 3 stderr) but gated on the
//! exceedance counts, because the literal family fails under the null in
//! roughly 40% of seeds.

use std::process::{Command, Output};
use std::time::Instant;

use ou_levy_cli::config::{Experiment, ExperimentConfig};
use ou_levy_cli::decay::{tv_decay, DecayTable};
use ou_levy_cli::suites::{run_suite, Budget, Check, Suite, SuiteReport};

const SEED: u64 = 1;

type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    /// What the exit status depends on; equal to `pass` unless noted.
    gate: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self {
            pass,
            gate: pass,
            detail,
        }
    }
}

fn suite(s: Suite) -> SuiteReport {
    run_suite(s, SEED, Budget(None)).unwrap_or_else(|e| panic!("suite {s:?}: {e}"))
}

fn summarize<'a>(checks: impl IntoIterator<Item = &'a Check>) -> Outcome {
    let checks: Vec<&Check> = checks.into_iter().collect();
    assert!(!checks.is_empty(), "no checks selected");
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} = {:.4} > {:.4}", c.name, c.statistic, c.threshold))
        .collect();
    let detail = if failed.is_empty() {
        format!("{} checks", checks.len())
    } else {
        failed.join("; ")
    };
    Outcome::new(failed.is_empty(), detail)
}

fn cameron_martin() -> Outcome {
    let report = suite(Suite::Cm);
    let literal = report.checks.iter().filter(|c| c.name.ends_with("_max_z"));
    let counts = report.checks.iter().filter(|c| c.name.ends_with("_exceedances"));
    let gate = counts.clone().all(|c| c.pass);
    let mut out = summarize(literal);
    out.detail = format!(
        "{}; exceedances {}",
        out.detail,
        counts
            .map(|c| format!("{}={}", c.name, c.statistic))
            .collect::<Vec<_>>()
            .join(" ")
    );
    out.gate = gate;
    out
}

fn decay(preset: &str) -> DecayTable {
    let exp = Experiment::new(ExperimentConfig::preset(preset).unwrap(), Some(SEED), None).unwrap();
    tv_decay(&exp).unwrap_or_else(|e| panic!("tv-decay on {preset}: {e}"))
}

fn dominated(table: &DecayTable, bound: impl Fn(usize) -> Option<f64>) -> Result<(), String> {
    for (i, p) in table.points.iter().enumerate() {
        let b = bound(i).ok_or_else(|| format!("no bound at t = {}", p.t))?;
        if b < p.projection.value - 3.0 * p.projection.stderr {
            return Err(format!(
                "bound {b:.3e} below tv {:.3e} - 3 se at t = {}",
                p.projection.value, p.t
            ));
        }
    }
    Ok(())
}

fn rate_shape_polynomial() -> Outcome {
    let table = decay("gaussian52-small");
    let pts = &table.points;
    let mut problems = Vec::new();
    for w in pts.windows(2) {
        let pooled = (w[0].projection.stderr.powi(2) + w[1].projection.stderr.powi(2)).sqrt();
        if w[1].projection.value - w[0].projection.value > 2.0 * pooled {
            problems.push(format!("increase between t = {} and t = {}", w[0].t, w[1].t));
        }
    }
    if let Err(e) = dominated(&table, |i| pts[i].bound_coupling1) {
        problems.push(format!("coupling1 {e}"));
    }
    let exponent = table.fits.projection_power.as_ref().map(|f| f.slope);
    match exponent {
        Some(b) if b <= -0.15 => {}
        Some(b) => problems.push(format!("power exponent {b:.3} > -0.15")),
        None => problems.push("power fit unavailable".into()),
    }
    let coupling = table
        .fits
        .coupling_power
        .as_ref()
        .map_or("n/a".to_string(), |f| format!("{:.3}", f.slope));
    let detail = format!(
        "projection exponent {}, coupling-upper exponent {coupling}",
        exponent.map_or("n/a".into(), |b| format!("{b:.3}"))
    );
    let pass = problems.is_empty();
    Outcome::new(
        pass,
        if pass {
            detail
        } else {
            format!("{detail}; {}", problems.join("; "))
        },
    )
}

fn rate_shape_exponential() -> Outcome {
    let table = decay("z3-exponential");
    let theory = table.lambda0 * table.lambda / (table.lambda0 + table.lambda);
    let mut problems = Vec::new();
    let rate = table.fits.projection_exponential.as_ref().map(|f| f.slope);
    match rate {
        Some(r) if r <= -0.8 * theory => {}
        Some(r) => problems.push(format!("rate {r:.3} > -0.8 x {theory:.3}")),
        None => problems.push("exponential fit unavailable".into()),
    }
    if let Err(e) = dominated(&table, |i| table.points[i].bound_z3) {
        problems.push(format!("z3 {e}"));
    }
    let detail = format!(
        "fitted rate {}, theory {theory:.3} (lambda0 {:.3}, lambda {})",
        rate.map_or("n/a".into(), |r| format!("{r:.3}")),
        table.lambda0,
        table.lambda
    );
    let pass = problems.is_empty();
    Outcome::new(
        pass,
        if pass {
            detail
        } else {
            format!("{detail}; {}", problems.join("; "))
        },
    )
}

fn run_bin(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ou-levy"));
    cmd.args(args).env_remove("OU_LEVY_THREADS");
    if let Some(t) = threads {
        cmd.env("OU_LEVY_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn determinism() -> Outcome {
    let jobs: [(&str, &[&str]); 2] = [
        ("verify all", &["verify", "all", "--seed", "1", "--replicas", "1000"]),
        (
            "tv-decay",
            &["--preset", "gaussian52-small", "tv-decay", "--replicas", "2000"],
        ),
    ];
    let mut problems = Vec::new();
    for (name, args) in jobs {
        let runs = [
            run_bin(args, Some("1")),
            run_bin(args, Some("1")),
            run_bin(args, Some("4")),
        ];
        if runs[0].stdout.is_empty() {
            problems.push(format!(
                "{name}: empty output, stderr {}",
                String::from_utf8_lossy(&runs[0].stderr)
            ));
            continue;
        }
        if runs[0].stdout != runs[1].stdout || runs[0].status != runs[1].status {
            problems.push(format!("{name}: repeated runs differ"));
        }
        if runs[0].stdout != runs[2].stdout || runs[0].status != runs[2].status {
            problems.push(format!("{name}: 1 and 4 threads differ"));
        }
    }
    let pass = problems.is_empty();
    Outcome::new(
        pass,
        if pass {
            "verify all and tv-decay byte-identical".into()
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let start = Instant::now();
    let mineka = suite(Suite::Mineka);
    let pair_checks = [
        "pair_marginal_tv_excess",
        "defect_symmetry",
        "step_probability_half_overlap",
        "overlap_normal_oracle",
        "overlap_one_dimensional",
    ];
    let decomposition = suite(Suite::Decomposition);
    let gradient = suite(Suite::Gradient);

    let criteria: Vec<Criterion> = vec![
        ("cameron-martin densities", Box::new(cameron_martin)),
        ("mecke identity", Box::new(|| summarize(&suite(Suite::Mecke).checks))),
        (
            "mineka pair validity",
            Box::new(|| summarize(mineka.checks.iter().filter(|c| pair_checks.contains(&c.name.as_str())))),
        ),
        (
            "coupling marginals",
            Box::new(|| summarize(mineka.checks.iter().filter(|c| !pair_checks.contains(&c.name.as_str())))),
        ),
        (
            "shift-weight identity",
            Box::new(|| summarize(&suite(Suite::Lemma31).checks)),
        ),
        ("polynomial rate shape", Box::new(rate_shape_polynomial)),
        ("exponential rate shape", Box::new(rate_shape_exponential)),
        (
            "decomposition and gradient",
            Box::new(|| summarize(decomposition.checks.iter().chain(&gradient.checks))),
        ),
        ("determinism", Box::new(determinism)),
    ];

    let mut gated_failures = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        let note = if out.pass == out.gate {
            String::new()
        } else {
            format!(" [gate {}]", if out.gate { "pass" } else { "fail" })
        };
        println!(
            "{verdict} criterion {} {name}: {}{note} ({:.1}s)",
            i + 1,
            out.detail,
            t0.elapsed().as_secs_f64()
        );
        if !out.gate {
            gated_failures += 1;
        }
    }
    println!("acceptance finished in {:.1}s", start.elapsed().as_secs_f64());
    if gated_failures > 0 {
        eprintln!("{gated_failures} gated criteria failed");
        std::process::exit(1);
    }
}
