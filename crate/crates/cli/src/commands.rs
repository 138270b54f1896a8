use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use arw_core::balance::{abelian_check, verify_all, CountMode};
use arw_core::engine::{stabilize_with, EngineError};
use arw_core::experiments::{run_replicas, tail_from_outcomes, ExperimentError, ReplicaSeeds, VerifyMode};
use arw_core::instructions::derive_seed;
use arw_core::{
    density_curve, estimate_zeta_c, sample_initial, single_particle_oracle, InitialCondition, SchedulerPolicy,
    SimParams, Site, SleepRate, SquareBox, StabilizeParams, StreamSource,
};
use serde::{Deserialize, Serialize};

use crate::args::{AbelianArgs, CurveArgs, Format, InitArgs, InitSpec, OracleArgs, StabilizeArgs, TailArgs, ZetaCArgs};
use crate::output::{document, emit, Summary};
use crate::CliError;

pub struct Streams<'a> {
    pub out: &'a mut dyn Write,
    pub err: &'a mut dyn Write,
}

fn rate(lambda: f64, streams: &mut Streams<'_>) -> Result<SleepRate, CliError> {
    if lambda >= 1.0 {
        let _ = writeln!(
            streams.err,
            "warning: λ = {lambda} ≥ 1; the stacks are well defined but the small-λ regime is λ < 1"
        );
    }
    SleepRate::new(lambda).map_err(|e| CliError::Usage(format!("--lambda: {e}")))
}

#[derive(Deserialize)]
struct CountRow {
    x: i32,
    y: i32,
    count: u32,
}

fn read_counts(path: &Path) -> Result<Vec<(Site, u32)>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    rdr.deserialize::<CountRow>()
        .map(|row| {
            let r = row.with_context(|| format!("malformed row in {}", path.display()))?;
            Ok((Site::new(r.x, r.y), r.count))
        })
        .collect()
}

fn resolve_init(args: &InitArgs) -> Result<InitialCondition, CliError> {
    let zeta = |name: &str| {
        args.zeta
            .ok_or_else(|| CliError::Usage(format!("--init {name} requires --zeta")))
    };
    Ok(match &args.init {
        InitSpec::Full => InitialCondition::FullOccupancy,
        InitSpec::Single => InitialCondition::SingleAtOrigin,
        InitSpec::Bernoulli => {
            let z = zeta("bernoulli")?;
            if z > 1.0 {
                return Err(CliError::Usage(format!("--zeta must be ≤ 1 for bernoulli, got {z}")));
            }
            InitialCondition::Bernoulli { zeta: z }
        }
        InitSpec::Poisson => InitialCondition::Poisson { zeta: zeta("poisson")? },
        InitSpec::File(path) => InitialCondition::Explicit {
            counts: read_counts(path).map_err(CliError::Runtime)?,
        },
    })
}

fn init_echo(summary: &mut Summary, init: &InitialCondition, args: &InitArgs) {
    summary.put("init", init.name());
    if let InitSpec::File(p) = &args.init {
        summary.put("init_file", p.display().to_string());
    }
    if let InitialCondition::Bernoulli { zeta } | InitialCondition::Poisson { zeta } = init {
        summary.put("zeta", zeta);
    }
}

fn engine_error(e: EngineError) -> CliError {
    match e {
        EngineError::BudgetExceeded { budget, partial } => CliError::Runtime(anyhow!(
            "instruction budget {budget} exhausted ({} sleeping, {} exited so far)",
            partial.sleeping_total(),
            partial.exited_total()
        )),
        other => CliError::Runtime(other.into()),
    }
}

fn experiment_error(e: ExperimentError) -> CliError {
    match e {
        ExperimentError::InvalidParams(msg) => CliError::Usage(msg),
        other => CliError::Runtime(other.into()),
    }
}

#[derive(Serialize)]
struct FieldRow {
    region: &'static str,
    x: i32,
    y: i32,
    eta0: u64,
    odometer: u64,
    sleeping: u8,
    exit: u64,
}

#[derive(Serialize)]
struct StabilizeRow {
    #[serde(rename = "N")]
    radius: u32,
    lambda: f64,
    seed: u64,
    scheduler: String,
    particles: u64,
    s_total: u64,
    phi_total: u64,
    m_total: u64,
    instructions: u64,
    balance: &'static str,
}

pub fn stabilize(args: StabilizeArgs, streams: &mut Streams<'_>) -> Result<(), CliError> {
    if args.fields && args.output.format != Format::Csv {
        return Err(CliError::Usage("--fields requires --format csv".into()));
    }
    let rate = rate(args.lambda, streams)?;
    let init = resolve_init(&args.init)?;
    let domain = SquareBox::new(args.radius);
    let seeds = ReplicaSeeds::derive(args.output.seed, 0);
    let eta0 = sample_initial(&init, &domain, seeds.initial).map_err(experiment_error)?;
    if eta0.total_particles() > domain.len() as u64 {
        let _ = writeln!(
            streams.err,
            "warning: {} particles exceed |B_N| = {}; the dynamics is still well defined",
            eta0.total_particles(),
            domain.len()
        );
    }
    let source = StreamSource::new(&domain, seeds.instructions, rate);
    let result = stabilize_with(&domain, &eta0, &source, args.scheduler, args.budget).map_err(engine_error)?;
    let report =
        verify_all(&domain, &eta0, &result, &source, CountMode::Recorded).map_err(|e| CliError::Runtime(e.into()))?;
    let verdict = if report.pass { "PASS" } else { "FAIL" };

    let mut summary = Summary::new("stabilize", args.output.seed);
    summary.put("N", args.radius);
    summary.put("lambda", args.lambda);
    init_echo(&mut summary, &init, &args.init);
    summary.put("scheduler", args.scheduler.to_string());
    summary.put("budget", args.budget);
    summary.put("particles", eta0.total_particles());
    summary.put("S_total", result.sleeping_total());
    summary.put("Phi_total", result.exited_total());
    summary.put("M_total", result.odometer_total());
    summary.put("instructions", result.total_instructions);
    summary.put("balance", verdict);
    summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;

    let rows: Vec<FieldRow> = if args.fields {
        let interior = domain.sites().enumerate().map(|(i, s)| FieldRow {
            region: "interior",
            x: s.x,
            y: s.y,
            eta0: eta0.particles_at(i),
            odometer: result.odometer[i],
            sleeping: result.sleep_field[i] as u8,
            exit: 0,
        });
        let boundary = domain.boundary_sites().iter().enumerate().map(|(b, s)| FieldRow {
            region: "boundary",
            x: s.x,
            y: s.y,
            eta0: 0,
            odometer: 0,
            sleeping: 0,
            exit: result.exit_measure[b],
        });
        interior.chain(boundary).collect()
    } else {
        Vec::new()
    };
    let doc = document(
        &summary,
        vec![("balance_report", serde_json::to_value(&report).unwrap())],
    );
    if args.fields {
        emit(&args.output, &summary, &rows, doc)?;
    } else {
        let row = StabilizeRow {
            radius: args.radius,
            lambda: args.lambda,
            seed: args.output.seed,
            scheduler: args.scheduler.to_string(),
            particles: eta0.total_particles(),
            s_total: result.sleeping_total(),
            phi_total: result.exited_total(),
            m_total: result.odometer_total(),
            instructions: result.total_instructions,
            balance: verdict,
        };
        emit(&args.output, &summary, &[row], doc)?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!(
            "balance verification failed: {}",
            serde_json::to_string(&report).unwrap()
        )))
    }
}

#[derive(Serialize)]
struct AbelianRow {
    replica: u64,
    particles: u64,
    pass: bool,
    divergence: String,
}

pub fn abelian(args: AbelianArgs, streams: &mut Streams<'_>) -> Result<(), CliError> {
    let rate = rate(args.lambda, streams)?;
    let init = resolve_init(&args.init)?;
    if args.replicas == 0 {
        return Err(CliError::Usage("--replicas must be ≥ 1".into()));
    }
    let policies: Vec<SchedulerPolicy> = if args.policies.is_empty() {
        SchedulerPolicy::all(derive_seed(args.output.seed, 3)).to_vec()
    } else {
        args.policies.clone()
    };
    if policies.len() < 2 {
        return Err(CliError::Usage("--policies needs at least two policies".into()));
    }
    let domain = SquareBox::new(args.radius);
    let mut rows = Vec::new();
    for r in 0..args.replicas {
        let seeds = ReplicaSeeds::derive(args.output.seed, r);
        let eta0 = sample_initial(&init, &domain, seeds.initial).map_err(experiment_error)?;
        let params = StabilizeParams::new(rate, seeds.instructions).with_budget(args.budget);
        let report = abelian_check(&domain, &eta0, &params, &policies).map_err(engine_error)?;
        rows.push(AbelianRow {
            replica: r,
            particles: eta0.total_particles(),
            pass: report.pass,
            divergence: report
                .divergence
                .as_ref()
                .map(|d| format!("{:?} at {} ({} vs {})", d.field, d.site, d.reference, d.other))
                .unwrap_or_default(),
        });
    }
    let failed = rows.iter().filter(|r| !r.pass).count();

    let mut summary = Summary::new("abelian-check", args.output.seed);
    summary.put("N", args.radius);
    summary.put("lambda", args.lambda);
    init_echo(&mut summary, &init, &args.init);
    summary.put("budget", args.budget);
    summary.put("replicas", args.replicas);
    summary.put("policies", policies.iter().map(|p| p.to_string()).collect::<Vec<_>>());
    summary.put("failed", failed);
    summary.put("result", if failed == 0 { "PASS" } else { "FAIL" });
    summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;
    let doc = document(
        &summary,
        vec![("replica_results", serde_json::to_value(&rows).unwrap())],
    );
    emit(&args.output, &summary, &rows, doc)?;
    if failed == 0 {
        writeln!(streams.out, "PASS").map_err(|e| CliError::Runtime(e.into()))?;
        Ok(())
    } else {
        writeln!(streams.out, "FAIL").map_err(|e| CliError::Runtime(e.into()))?;
        Err(CliError::Runtime(anyhow!(
            "{failed} replica(s) diverged between policies"
        )))
    }
}

#[derive(Serialize)]
struct TailRow {
    replica: u64,
    instruction_seed: u64,
    particles: u64,
    sleeping: u64,
    exited: u64,
    odometer_total: u64,
    instructions: u64,
    exceeds: bool,
}

pub fn tail(args: TailArgs, streams: &mut Streams<'_>) -> Result<(), CliError> {
    let rate = rate(args.lambda, streams)?;
    let init = resolve_init(&args.init)?;
    let params = SimParams {
        scheduler: args.scheduler,
        budget: args.budget,
        replicas: args.replicas,
        verify: if args.verify_every == 0 {
            VerifyMode::Never
        } else {
            VerifyMode::Every(args.verify_every)
        },
        ..SimParams::new(args.radius, rate, init.clone(), args.output.seed)
    };
    let outcomes = run_replicas(&params).map_err(experiment_error)?;
    let box_size = SquareBox::new(args.radius).len() as u64;
    let est = tail_from_outcomes(&outcomes, args.rho, rate, box_size);
    let threshold = args.rho * box_size as f64;

    let mut summary = Summary::new("tail", args.output.seed);
    summary.put("N", args.radius);
    summary.put("lambda", args.lambda);
    init_echo(&mut summary, &init, &args.init);
    summary.put("scheduler", args.scheduler.to_string());
    summary.put("budget", args.budget);
    summary.put("replicas", args.replicas);
    summary.put("verify_every", args.verify_every);
    summary.put("rho", args.rho);
    summary.put("hits", est.hits);
    summary.put("p_hat", est.p_hat);
    summary.put("wilson_lo", est.wilson_interval.0);
    summary.put("wilson_hi", est.wilson_interval.1);
    match est.chernoff_log_bound {
        Some(b) => {
            summary.put("chernoff_log_bound", b);
            summary.put("chernoff_bound", b.exp());
        }
        None => summary.put("chernoff_log_bound", "n/a (vacuous)"),
    }
    summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;

    let rows: Vec<TailRow> = outcomes
        .iter()
        .map(|o| TailRow {
            replica: o.replica,
            instruction_seed: o.instruction_seed,
            particles: o.particles,
            sleeping: o.sleeping,
            exited: o.exited,
            odometer_total: o.odometer_total,
            instructions: o.instructions,
            exceeds: o.sleeping as f64 >= threshold,
        })
        .collect();
    let doc = summary.to_json();
    emit(&args.output, &summary, &rows, doc)?;
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    lambda: f64,
    zeta: f64,
    #[serde(rename = "N")]
    radius: u32,
    replicas: u64,
    mean_density: f64,
    std_error: f64,
}

pub fn curve(args: CurveArgs, streams: &mut Streams<'_>) -> Result<(), CliError> {
    let rates = args
        .lambda
        .iter()
        .map(|&l| rate(l, streams))
        .collect::<Result<Vec<_>, _>>()?;
    if args.replicas == 0 {
        return Err(CliError::Usage("--replicas must be ≥ 1".into()));
    }
    let points = density_curve(
        &rates,
        &args.zeta,
        args.radius,
        args.replicas,
        args.output.seed,
        args.budget,
    )
    .map_err(experiment_error)?;

    let mut summary = Summary::new("curve", args.output.seed);
    summary.put("N", args.radius);
    summary.put("lambda", &args.lambda);
    summary.put("zeta", &args.zeta);
    summary.put("init", "poisson");
    summary.put("replicas", args.replicas);
    summary.put("budget", args.budget);
    summary.put("points", points.len());
    summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;
    for p in &points {
        writeln!(
            streams.out,
            "  lambda={} zeta={} mean_density={:.6} std_error={:.6}",
            p.lambda, p.zeta, p.mean_density, p.std_error
        )
        .map_err(|e| CliError::Runtime(e.into()))?;
    }
    let rows: Vec<CurveRow> = points
        .iter()
        .map(|p| CurveRow {
            lambda: p.lambda,
            zeta: p.zeta,
            radius: p.radius,
            replicas: p.replicas,
            mean_density: p.mean_density,
            std_error: p.std_error,
        })
        .collect();
    let doc = document(&summary, vec![("curve", serde_json::to_value(&points).unwrap())]);
    emit(&args.output, &summary, &rows, doc)?;
    Ok(())
}

#[derive(Serialize)]
struct ProbeRow {
    probe: usize,
    zeta: f64,
    retained_fraction: f64,
}

pub fn zeta_c(args: ZetaCArgs, streams: &mut Streams<'_>) -> Result<(), CliError> {
    let rate = rate(args.lambda, streams)?;
    if args.replicas == 0 {
        return Err(CliError::Usage("--replicas must be ≥ 1".into()));
    }
    let mut summary = Summary::new("zeta-c", args.output.seed);
    summary.put("label", arw_core::experiments::HEURISTIC_LABEL);
    summary.put("N", args.radius);
    summary.put("lambda", args.lambda);
    summary.put("init", "poisson");
    summary.put("replicas", args.replicas);
    summary.put("tolerance", args.tolerance);
    summary.put("budget", args.budget);
    let est = match estimate_zeta_c(
        rate,
        args.radius,
        args.replicas,
        args.tolerance,
        args.output.seed,
        args.budget,
    ) {
        Ok(est) => est,
        Err(e @ ExperimentError::NoBracket { .. }) => {
            summary.put("result", "NO BRACKET");
            summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;
            return Err(CliError::Runtime(e.into()));
        }
        Err(e) => return Err(experiment_error(e)),
    };
    summary.put("zeta_c_lo", est.lo);
    summary.put("zeta_c_hi", est.hi);
    summary.put("zeta_c_mid", est.midpoint());
    summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;
    writeln!(
        streams.out,
        "[{}] zeta_c(lambda={}) in [{:.4}, {:.4}]",
        est.label, est.lambda, est.lo, est.hi
    )
    .map_err(|e| CliError::Runtime(e.into()))?;

    let rows: Vec<ProbeRow> = est
        .probes
        .iter()
        .enumerate()
        .map(|(i, p)| ProbeRow {
            probe: i,
            zeta: p.zeta,
            retained_fraction: p.retained_fraction,
        })
        .collect();
    let doc = document(&summary, vec![("probes", serde_json::to_value(&est.probes).unwrap())]);
    emit(&args.output, &summary, &rows, doc)?;
    Ok(())
}

#[derive(Serialize)]
struct OracleRow {
    lambda: f64,
    #[serde(rename = "N")]
    radius: u32,
    oracle: f64,
    p_hat: f64,
    replicas: u64,
    std_error: f64,
    z_score: f64,
    pass: bool,
}

pub fn oracle_check(args: OracleArgs, streams: &mut Streams<'_>) -> Result<(), CliError> {
    let rate = rate(args.lambda, streams)?;
    if args.replicas == 0 {
        return Err(CliError::Usage("--replicas must be ≥ 1".into()));
    }
    let exact = single_particle_oracle(rate, args.radius);
    let params =
        SimParams::new(args.radius, rate, InitialCondition::SingleAtOrigin, args.output.seed).replicas(args.replicas);
    let outcomes = run_replicas(&params).map_err(experiment_error)?;
    let sleeps = outcomes.iter().filter(|o| o.sleeping == 1).count();
    let p_hat = sleeps as f64 / args.replicas as f64;
    let se = (exact * (1.0 - exact) / args.replicas as f64).sqrt();
    let z = if se > 0.0 { (p_hat - exact) / se } else { 0.0 };
    let pass = if se > 0.0 { z.abs() <= 3.0 } else { p_hat == exact };

    let mut summary = Summary::new("oracle-check", args.output.seed);
    summary.put("N", args.radius);
    summary.put("lambda", args.lambda);
    summary.put("replicas", args.replicas);
    summary.put("oracle", exact);
    summary.put("p_hat", p_hat);
    summary.put("std_error", se);
    summary.put("z_score", z);
    summary.put("result", if pass { "PASS" } else { "FAIL" });
    summary.print(streams.out).map_err(|e| CliError::Runtime(e.into()))?;

    let row = OracleRow {
        lambda: args.lambda,
        radius: args.radius,
        oracle: exact,
        p_hat,
        replicas: args.replicas,
        std_error: se,
        z_score: z,
        pass,
    };
    let doc = summary.to_json();
    emit(&args.output, &summary, &[row], doc)?;
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime(anyhow!(
            "simulation disagrees with the oracle: z = {z:.2}"
        )))
    }
}
