//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits nonzero if any criterion fails.

use std::ffi::OsString;
use std::fs;
use std::path::Path;
use std::time::Instant;

use arw_core::balance::{verify_boundary, verify_conservation, verify_mass_balance, verify_sleep_domination, Recorded};
use arw_core::engine::stabilize_with;
use arw_core::experiments::{run_replicas, ReplicaSeeds};
use arw_core::{
    chernoff_bound, density_curve, estimate_zeta_c, kl_divergence, sample_initial, single_particle_oracle, verify_all,
    Configuration, CountMode, ExperimentError, FieldTuple, InitialCondition, SchedulerPolicy, SimParams, SleepRate,
    SquareBox, StreamSource, DEFAULT_BUDGET,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// High-precision value of kl(1/2, 1/4) = ln 2 − ½ ln 3, evaluated
/// independently at 50 digits.
#[allow(clippy::excessive_precision)]
const KL_HALF_QUARTER: f64 = 0.143_841_036_225_890_463;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rate(l: f64) -> SleepRate {
    SleepRate::new(l).unwrap()
}

/// Random configuration with at most `|B_N|` particles placed uniformly.
fn random_config(rng: &mut ChaCha8Rng, domain: &SquareBox) -> Configuration {
    let n = domain.len();
    let total = rng.random_range(0..=n);
    let mut counts = vec![0u32; n];
    for _ in 0..total {
        counts[rng.random_range(0..n)] += 1;
    }
    Configuration::from_counts(domain, &counts)
}

struct AbelianCase {
    radius: u32,
    eta0: Configuration,
    rate: SleepRate,
    seed: u64,
}

fn abelian_cases() -> Vec<AbelianCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xAB);
    let lambdas = [0.05, 0.3, 1.0];
    (0..100)
        .map(|t| {
            let radius = rng.random_range(0..=8u32);
            let domain = SquareBox::new(radius);
            AbelianCase {
                radius,
                eta0: random_config(&mut rng, &domain),
                rate: rate(lambdas[t % 3]),
                seed: rng.random(),
            }
        })
        .collect()
}

/// Abelian invariance, plus the exact identities on the same 400 runs.
fn ac1_ac2() -> ((Outcome, f64), (Outcome, f64)) {
    let start = Instant::now();
    let mut identical = 0;
    let mut runs = 0;
    let mut identity_failures = Vec::new();
    for (t, case) in abelian_cases().iter().enumerate() {
        let domain = SquareBox::new(case.radius);
        let source = StreamSource::new(&domain, case.seed, case.rate);
        let policies = SchedulerPolicy::all(case.seed ^ 0x5EED);
        let results: Vec<_> = policies
            .iter()
            .map(|&p| stabilize_with(&domain, &case.eta0, &source, p, DEFAULT_BUDGET).expect("stabilizes"))
            .collect();
        for (p, r) in policies.iter().zip(&results) {
            runs += 1;
            if r.same_fields(&results[0]) {
                identical += 1;
            }
            for mode in [CountMode::Recorded, CountMode::Rescan] {
                let report = verify_all(&domain, &case.eta0, r, &source, mode).unwrap();
                if !report.pass {
                    identity_failures.push(format!("tuple {t} policy {p} {mode:?}"));
                }
            }
        }
    }
    let ac1 = outcome(
        identical == runs && runs == 400,
        format!("{identical}/{runs} runs bit-identical to the first policy of their tuple"),
    );

    let ac1_secs = start.elapsed().as_secs_f64();
    let large_start = Instant::now();
    let large = SquareBox::new(64);
    let eta0 = Configuration::from_counts(&large, &vec![1; large.len()]);
    let lambdas = [0.05, 0.3, 1.0];
    let mut large_runs = 0;
    for k in 0..20u64 {
        let r = rate(lambdas[k as usize % 3]);
        let source = StreamSource::new(&large, ReplicaSeeds::derive(64, k).instructions, r);
        let res = stabilize_with(&large, &eta0, &source, SchedulerPolicy::Lifo, DEFAULT_BUDGET).expect("stabilizes");
        let report = verify_all(&large, &eta0, &res, &source, CountMode::Rescan).unwrap();
        large_runs += 1;
        if !report.pass {
            identity_failures.push(format!("N=64 run {k} λ={}: {:?}", r.value(), report.failures.first()));
        }
    }
    let ac2 = outcome(
        identity_failures.is_empty(),
        if identity_failures.is_empty() {
            format!("zero residuals on {runs} small runs (recorded and rescanned counts) and {large_runs} runs at N=64")
        } else {
            format!(
                "{} failing runs, first: {}",
                identity_failures.len(),
                identity_failures[0]
            )
        },
    );
    ((ac1, ac1_secs), (ac2, large_start.elapsed().as_secs_f64()))
}

fn ac3() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for l in [0.1, 0.5] {
        let r = rate(l);
        let exact0 = single_particle_oracle(r, 0);
        let closed = l / (1.0 + l);
        if exact0 != closed {
            pass = false;
            lines.push(format!("N=0 λ={l}: oracle {exact0} ≠ λ/(1+λ) = {closed}"));
        }
        for radius in 0..=2 {
            let exact = single_particle_oracle(r, radius);
            let params =
                SimParams::new(radius, r, InitialCondition::SingleAtOrigin, 1000 + radius as u64).replicas(100_000);
            let outcomes = run_replicas(&params).unwrap();
            let p_hat = outcomes.iter().filter(|o| o.sleeping == 1).count() as f64 / outcomes.len() as f64;
            let se = (exact * (1.0 - exact) / outcomes.len() as f64).sqrt();
            let z = (p_hat - exact) / se;
            if z.abs() > 3.0 {
                pass = false;
            }
            lines.push(format!("λ={l} N={radius} z={z:+.2}"));
        }
    }
    outcome(pass, lines.join(", "))
}

fn ac4() -> Outcome {
    let mut problems = Vec::new();
    for i in 0..10 {
        let p = i as f64 / 9.0;
        let v = kl_divergence(p, p).unwrap();
        if v.abs() > 1e-12 {
            problems.push(format!("kl({p},{p}) = {v}"));
        }
    }
    let kl = kl_divergence(0.5, 0.25).unwrap();
    if (kl - KL_HALF_QUARTER).abs() > 1e-6 {
        problems.push(format!("kl(0.5,0.25) = {kl}"));
    }
    for l in [0.05, 0.2, 1.0] {
        let r = rate(l);
        let q = r.sleep_probability();
        let rhos: Vec<f64> = (1..=10).map(|k| q + (1.0 - q) * k as f64 / 10.0).collect();
        for &rho in &rhos {
            let b: Vec<f64> = [1u64, 9, 25, 81, 289, 1089]
                .iter()
                .map(|&n| chernoff_bound(rho, r, n).unwrap().log_bound)
                .collect();
            if b.windows(2).any(|w| w[1] > w[0]) {
                problems.push(format!("not monotone in box size at λ={l} ρ={rho}"));
            }
        }
        let by_rho: Vec<f64> = rhos
            .iter()
            .map(|&rho| chernoff_bound(rho, r, 81).unwrap().log_bound)
            .collect();
        if by_rho.windows(2).any(|w| w[1] > w[0]) {
            problems.push(format!("not monotone in ρ at λ={l}"));
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "kl(0.5,0.25) = {kl:.15}, |error| = {:.1e}; monotone on 3×10×6 grid",
                (kl - KL_HALF_QUARTER).abs()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn ac5() -> Outcome {
    let r = rate(0.2);
    let mut points = Vec::new();
    for radius in [2u32, 4, 6, 8] {
        let params = SimParams::new(radius, r, InitialCondition::FullOccupancy, 500 + radius as u64).replicas(1000);
        let outcomes = run_replicas(&params).unwrap();
        let size = SquareBox::new(radius).len() as f64;
        let hits = outcomes.iter().filter(|o| o.sleeping as f64 >= 0.9 * size).count();
        let max_s = outcomes.iter().map(|o| o.sleeping).max().unwrap_or(0);
        points.push((radius, hits as f64 / outcomes.len() as f64, max_s));
    }
    let non_increasing = points.windows(2).all(|w| w[1].1 <= w[0].1);
    // -ln p_hat must grow faster than linearly: slopes between consecutive
    // positive points increase.
    let positive: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|p| (p.0 as f64, -p.1.ln()))
        .collect();
    let slopes: Vec<f64> = positive
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let superlinear = slopes.windows(2).all(|w| w[1] > w[0]);
    let listing: Vec<String> = points
        .iter()
        .map(|(n, p, m)| format!("N={n} p_hat={p} max S={m}"))
        .collect();
    let note = if positive.is_empty() {
        " (p_hat = 0 at every N)"
    } else {
        ""
    };
    outcome(non_increasing && superlinear, format!("{}{note}", listing.join(", ")))
}

fn ac6() -> Outcome {
    let lambdas: Vec<SleepRate> = [0.0, 0.01, 0.05, 0.25, 1.0].iter().map(|&l| rate(l)).collect();
    let pts = density_curve(&lambdas, &[0.5], 16, 200, 6, DEFAULT_BUDGET).unwrap();
    let zero_ok = pts[0].mean_density == 0.0;
    let mut monotone = true;
    for w in pts[1..].windows(2) {
        let sigma = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        if w[1].mean_density < w[0].mean_density - 3.0 * sigma {
            monotone = false;
        }
    }
    let listing: Vec<String> = pts
        .iter()
        .map(|p| format!("λ={} {:.4}±{:.4}", p.lambda, p.mean_density, p.std_error))
        .collect();
    outcome(zero_ok && monotone, listing.join(", "))
}

fn ac7() -> Outcome {
    let mut estimates = Vec::new();
    let mut lines = Vec::new();
    for l in [0.05, 0.2, 0.8] {
        match estimate_zeta_c(rate(l), 32, 100, 0.02, 7, DEFAULT_BUDGET) {
            Ok(est) => {
                lines.push(format!("[{}] λ={l} ζ_c ∈ [{:.4}, {:.4}]", est.label, est.lo, est.hi));
                estimates.push(Some(est.midpoint()));
            }
            Err(e @ ExperimentError::NoBracket { .. }) => {
                lines.push(format!("λ={l}: {e}"));
                estimates.push(None);
            }
            Err(e) => panic!("zeta_c at λ={l}: {e}"),
        }
    }
    let all: Option<Vec<f64>> = estimates.into_iter().collect();
    let pass = match &all {
        Some(v) => v.windows(2).all(|w| w[1] >= w[0]) && v.iter().all(|&z| z < 1.0),
        None => false,
    };
    outcome(pass, lines.join("; "))
}

/// One full CLI invocation, exactly as the `arw` binary performs it.
fn run_cli(args: &[&str], out: &Path, summary: &Path) -> Result<(), String> {
    let argv: Vec<OsString> = std::iter::once(OsString::from("arw"))
        .chain(args.iter().map(OsString::from))
        .chain([
            OsString::from("--out"),
            out.into(),
            OsString::from("--summary"),
            summary.into(),
        ])
        .collect();
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    match arw_cli::run(argv, &mut stdout, &mut stderr) {
        0 => Ok(()),
        code => Err(format!(
            "{args:?} exited with {code}: {}",
            String::from_utf8_lossy(&stderr)
        )),
    }
}

fn ac8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec!["stabilize", "-N", "6", "--lambda", "0.3", "--seed", "1", "--fields"],
        vec![
            "stabilize",
            "-N",
            "6",
            "--lambda",
            "0.3",
            "--seed",
            "1",
            "--init",
            "poisson",
            "--zeta",
            "0.7",
            "--format",
            "json",
        ],
        vec![
            "stabilize",
            "-N",
            "5",
            "--lambda",
            "0.2",
            "--seed",
            "2",
            "--scheduler",
            "random:9",
        ],
        vec![
            "abelian-check",
            "-N",
            "4",
            "--lambda",
            "0.5",
            "--seed",
            "3",
            "--replicas",
            "4",
            "--init",
            "bernoulli",
            "--zeta",
            "0.6",
        ],
        vec![
            "tail",
            "-N",
            "3",
            "--lambda",
            "0.2",
            "--rho",
            "0.3",
            "--seed",
            "4",
            "--replicas",
            "200",
            "--scheduler",
            "random",
        ],
        vec![
            "curve",
            "-N",
            "4",
            "--lambda",
            "0,0.1,1",
            "--zeta",
            "0.5,1",
            "--replicas",
            "20",
            "--seed",
            "5",
        ],
        vec![
            "zeta-c",
            "-N",
            "4",
            "--lambda",
            "0.5",
            "--replicas",
            "20",
            "--tolerance",
            "0.1",
            "--seed",
            "6",
        ],
        vec![
            "oracle-check",
            "-N",
            "1",
            "--lambda",
            "0.5",
            "--replicas",
            "2000",
            "--seed",
            "7",
        ],
    ];
    let mut problems = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let mut files = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("{i}-{run}.out"));
            let summary = dir.path().join(format!("{i}-{run}.json"));
            if let Err(e) = run_cli(args, &out, &summary) {
                problems.push(e);
            }
            files.push((
                fs::read(&out).unwrap_or_default(),
                fs::read(&summary).unwrap_or_default(),
            ));
        }
        if files[0] != files[1] || files[0].0.is_empty() {
            problems.push(format!("{} output differs between runs", args[0]));
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} invocations, data and summary files byte-identical across reruns",
                commands.len()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn ac9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9);
    let mut detected = 0;
    let mut missed = Vec::new();
    let total = 1000;
    let mut done = 0;
    while done < total {
        let radius = rng.random_range(1..=8u32);
        let domain = SquareBox::new(radius);
        let init = InitialCondition::Poisson {
            zeta: rng.random_range(0.3..1.5),
        };
        let eta0 = sample_initial(&init, &domain, rng.random()).unwrap();
        let source = StreamSource::new(&domain, rng.random(), rate([0.05, 0.3, 1.0][rng.random_range(0..3)]));
        let result = stabilize_with(&domain, &eta0, &source, SchedulerPolicy::Lifo, DEFAULT_BUDGET).unwrap();
        let counts = Recorded::new(&result, &source);
        for _ in 0..50 {
            let mut fields = FieldTuple::from(&result);
            let delta = rng.random_range(1..=3u64);
            let what = match rng.random_range(0..3) {
                0 => {
                    let i = rng.random_range(0..domain.len());
                    fields.m[i] = if fields.m[i] >= delta && rng.random_bool(0.5) {
                        fields.m[i] - delta
                    } else {
                        fields.m[i] + delta
                    };
                    format!("m at {}", domain.site_at(i))
                }
                1 => {
                    let i = rng.random_range(0..domain.len());
                    fields.s[i] = !fields.s[i];
                    format!("s at {}", domain.site_at(i))
                }
                _ => {
                    let b = rng.random_range(0..domain.boundary_sites().len());
                    fields.phi[b] = if fields.phi[b] >= delta && rng.random_bool(0.5) {
                        fields.phi[b] - delta
                    } else {
                        fields.phi[b] + delta
                    };
                    format!("φ at {}", domain.boundary_sites()[b])
                }
            };
            let flagged = !verify_mass_balance(&domain, &eta0, &fields, &counts).unwrap().pass
                || !verify_boundary(&domain, &fields, &counts).unwrap().pass
                || !verify_conservation(&domain, &eta0, &fields).unwrap().pass
                || !verify_sleep_domination(&domain, &fields, &source).unwrap().pass;
            if flagged {
                detected += 1;
            } else {
                missed.push(what);
            }
            done += 1;
        }
    }
    outcome(
        detected == total,
        if missed.is_empty() {
            format!("{detected}/{total} corruptions of m, s or φ flagged")
        } else {
            format!("{detected}/{total} flagged; missed {}", missed.join(", "))
        },
    )
}

type Step = (&'static str, &'static str, fn() -> Outcome);

fn report(name: &str, title: &str, secs: f64, o: &Outcome, failures: &mut Vec<String>) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {name} {title}: {} ({secs:.1}s)", o.detail);
    if !o.pass {
        failures.push(name.to_string());
    }
}

fn main() {
    let mut failures = Vec::new();

    let ((ac1, t1), (ac2, t2)) = ac1_ac2();
    report("AC1", "abelian invariance", t1, &ac1, &mut failures);
    report("AC2", "exact identities", t2, &ac2, &mut failures);

    let steps: [Step; 7] = [
        ("AC3", "single-particle oracle", ac3),
        ("AC4", "KL/Chernoff numerics", ac4),
        ("AC5", "tail decay", ac5),
        ("AC6", "sleeping-density monotonicity", ac6),
        ("AC7", "heuristic critical-density curve", ac7),
        ("AC8", "reproducibility", ac8),
        ("AC9", "mutation detection", ac9),
    ];
    for (name, title, f) in steps {
        let t = Instant::now();
        let o = f();
        report(name, title, t.elapsed().as_secs_f64(), &o, &mut failures);
    }

    if failures.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: {} failing: {}", failures.len(), failures.join(", "));
        std::process::exit(1);
    }
}
