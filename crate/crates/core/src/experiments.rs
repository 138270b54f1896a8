//! Monte Carlo harness: initial conditions, replica runs, the sleeper tail,
//! sleeping-density curves, a heuristic critical-density bracket and the
//! exact single-particle oracle.
//!
//! Replicas run in parallel but are always reduced in replica order, so
//! every statistic is a deterministic function of the parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{chernoff_bound, verify_all, BalanceReport, CountMode};
use crate::engine::{stabilize_with, Configuration, EngineError, SchedulerPolicy, DEFAULT_BUDGET};
use crate::instructions::{derive_seed, SleepRate, StreamSource};
use crate::lattice::{Site, SquareBox};

/// Label attached to every critical-density output.
pub const HEURISTIC_LABEL: &str = "HEURISTIC";

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

const TAG_INSTRUCTIONS: u64 = 1;
const TAG_INITIAL: u64 = 2;
const TAG_SCHEDULER: u64 = 3;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("replica {replica}: {source}")]
    Engine {
        replica: u64,
        #[source]
        source: EngineError,
    },
    #[error("replica {replica} failed verification: {failures} failing residual(s)")]
    Verification {
        replica: u64,
        failures: usize,
        report: Box<BalanceReport>,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(
        "no bracket for λ={lambda}: retained fraction is {at_low:.4} at ζ={low} and {at_high:.4} at ζ={high}, \
         it never crosses 1/2"
    )]
    NoBracket {
        lambda: f64,
        low: f64,
        high: f64,
        at_low: f64,
        at_high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// One active particle per site.
    FullOccupancy,
    /// Independent Bernoulli(ζ) occupation.
    Bernoulli { zeta: f64 },
    /// Independent Poisson(ζ) counts.
    Poisson { zeta: f64 },
    /// Explicit counts; sites not listed are empty.
    Explicit { counts: Vec<(Site, u32)> },
    /// A single particle at the origin.
    SingleAtOrigin,
}

impl InitialCondition {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        match *self {
            InitialCondition::Bernoulli { zeta } if !(0.0..=1.0).contains(&zeta) => Err(
                ExperimentError::InvalidParams(format!("Bernoulli density must be in [0,1], got {zeta}")),
            ),
            InitialCondition::Poisson { zeta } if !(zeta.is_finite() && zeta >= 0.0) => Err(
                ExperimentError::InvalidParams(format!("Poisson density must be ≥ 0, got {zeta}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InitialCondition::FullOccupancy => "full",
            InitialCondition::Bernoulli { .. } => "bernoulli",
            InitialCondition::Poisson { .. } => "poisson",
            InitialCondition::Explicit { .. } => "file",
            InitialCondition::SingleAtOrigin => "single",
        }
    }
}

/// Draws an all-active configuration. Reproducible from `seed`.
pub fn sample_initial(
    init: &InitialCondition,
    domain: &SquareBox,
    seed: u64,
) -> Result<Configuration, ExperimentError> {
    init.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<u32> = match init {
        InitialCondition::FullOccupancy => vec![1; domain.len()],
        InitialCondition::Bernoulli { zeta } => (0..domain.len()).map(|_| rng.random_bool(*zeta) as u32).collect(),
        InitialCondition::Poisson { zeta } => {
            if *zeta == 0.0 {
                vec![0; domain.len()]
            } else {
                let dist = Poisson::new(*zeta).expect("validated rate");
                (0..domain.len()).map(|_| dist.sample(&mut rng) as u32).collect()
            }
        }
        InitialCondition::Explicit { counts } => {
            let mut out = vec![0u32; domain.len()];
            for &(site, c) in counts {
                let i = domain
                    .index_of(site)
                    .ok_or_else(|| ExperimentError::InvalidParams(format!("initial site {site} is outside the box")))?;
                out[i] += c;
            }
            out
        }
        InitialCondition::SingleAtOrigin => {
            let mut out = vec![0u32; domain.len()];
            out[domain.index_of(Site::ORIGIN).expect("origin is in every box")] = 1;
            out
        }
    };
    Ok(Configuration::from_counts(domain, &counts))
}

/// How often replica outputs go through the balance verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyMode {
    Always,
    /// Replicas whose index is a multiple of `k`.
    Every(u64),
    Never,
}

impl VerifyMode {
    fn due(self, replica: u64) -> bool {
        match self {
            VerifyMode::Always => true,
            VerifyMode::Every(k) => k > 0 && replica.is_multiple_of(k),
            VerifyMode::Never => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub radius: u32,
    pub rate: SleepRate,
    pub init: InitialCondition,
    pub seed: u64,
    pub scheduler: SchedulerPolicy,
    pub budget: u64,
    pub replicas: u64,
    pub verify: VerifyMode,
}

impl SimParams {
    pub fn new(radius: u32, rate: SleepRate, init: InitialCondition, seed: u64) -> Self {
        SimParams {
            radius,
            rate,
            init,
            seed,
            scheduler: SchedulerPolicy::Lifo,
            budget: DEFAULT_BUDGET,
            replicas: 1,
            verify: VerifyMode::Every(64),
        }
    }

    pub fn replicas(mut self, replicas: u64) -> Self {
        self.replicas = replicas;
        self
    }

    pub fn verify(mut self, verify: VerifyMode) -> Self {
        self.verify = verify;
        self
    }

    pub fn scheduler(mut self, scheduler: SchedulerPolicy) -> Self {
        self.scheduler = scheduler;
        self
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replicas == 0 {
            return Err(ExperimentError::InvalidParams("replicas must be ≥ 1".into()));
        }
        self.init.validate()
    }
}

/// Seeds used by one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplicaSeeds {
    pub replica: u64,
    pub instructions: u64,
    pub initial: u64,
}

impl ReplicaSeeds {
    pub fn derive(master: u64, replica: u64) -> Self {
        let base = derive_seed(master, replica);
        ReplicaSeeds {
            replica,
            instructions: derive_seed(base, TAG_INSTRUCTIONS),
            initial: derive_seed(base, TAG_INITIAL),
        }
    }
}

/// Summary of one stabilized replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplicaOutcome {
    pub replica: u64,
    pub instruction_seed: u64,
    pub particles: u64,
    pub sleeping: u64,
    pub exited: u64,
    pub odometer_total: u64,
    pub instructions: u64,
}

/// Stabilizes one replica and verifies it if due.
pub fn run_replica(domain: &SquareBox, params: &SimParams, replica: u64) -> Result<ReplicaOutcome, ExperimentError> {
    let seeds = ReplicaSeeds::derive(params.seed, replica);
    let eta0 = sample_initial(&params.init, domain, seeds.initial)?;
    let source = StreamSource::new(domain, seeds.instructions, params.rate);
    let policy = match params.scheduler {
        SchedulerPolicy::UniformRandom(s) => {
            SchedulerPolicy::UniformRandom(derive_seed(s ^ seeds.instructions, TAG_SCHEDULER))
        }
        p => p,
    };
    let result = stabilize_with(domain, &eta0, &source, policy, params.budget)
        .map_err(|source| ExperimentError::Engine { replica, source })?;
    if params.verify.due(replica) {
        let report = verify_all(domain, &eta0, &result, &source, CountMode::Recorded)
            .expect("engine output has the box's shape");
        if !report.pass {
            return Err(ExperimentError::Verification {
                replica,
                failures: report.failures.len(),
                report: Box::new(report),
            });
        }
    }
    Ok(ReplicaOutcome {
        replica,
        instruction_seed: seeds.instructions,
        particles: eta0.total_particles(),
        sleeping: result.sleeping_total(),
        exited: result.exited_total(),
        odometer_total: result.odometer_total(),
        instructions: result.total_instructions,
    })
}

/// Runs every replica, returned in replica order.
pub fn run_replicas(params: &SimParams) -> Result<Vec<ReplicaOutcome>, ExperimentError> {
    params.validate()?;
    let domain = SquareBox::new(params.radius);
    (0..params.replicas)
        .into_par_iter()
        .map(|r| run_replica(&domain, params, r))
        .collect()
}

/// Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailEstimate {
    pub rho: f64,
    /// Replicas with `S(B_N) ≥ ρ |B_N|`.
    pub hits: u64,
    pub replicas: u64,
    pub p_hat: f64,
    pub wilson_interval: (f64, f64),
    /// Log of the Chernoff bound on the χ-sum; `None` when `ρ ≤ λ/(1+λ)`.
    pub chernoff_log_bound: Option<f64>,
}

/// Tail statistic over already computed replicas.
pub fn tail_from_outcomes(outcomes: &[ReplicaOutcome], rho: f64, rate: SleepRate, box_size: u64) -> TailEstimate {
    let threshold = rho * box_size as f64;
    let hits = outcomes.iter().filter(|o| o.sleeping as f64 >= threshold).count() as u64;
    let n = outcomes.len() as u64;
    TailEstimate {
        rho,
        hits,
        replicas: n,
        p_hat: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        wilson_interval: wilson_interval(hits, n, Z_95),
        chernoff_log_bound: chernoff_bound(rho, rate, box_size).ok().map(|b| b.log_bound),
    }
}

/// Monte Carlo estimate of `P(S(B_N) ≥ ρ |B_N|)`.
pub fn estimate_tail(params: &SimParams, rho: f64) -> Result<TailEstimate, ExperimentError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(ExperimentError::InvalidParams(format!("ρ must be positive, got {rho}")));
    }
    let outcomes = run_replicas(params)?;
    let box_size = SquareBox::new(params.radius).len() as u64;
    Ok(tail_from_outcomes(&outcomes, rho, params.rate, box_size))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurvePoint {
    pub lambda: f64,
    pub zeta: f64,
    pub radius: u32,
    pub replicas: u64,
    /// Mean of `S(B_N) / |B_N|`.
    pub mean_density: f64,
    pub std_error: f64,
}

fn mean_and_std_error(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean sleeping density after stabilizing Poisson(ζ) configurations, for
/// every `(λ, ζ)` pair. Every grid point uses the same replica seeds, so
/// neighboring points are coupled. Sorted by `(λ, ζ)`.
pub fn density_curve(
    lambdas: &[SleepRate],
    zetas: &[f64],
    radius: u32,
    replicas: u64,
    seed: u64,
    budget: u64,
) -> Result<Vec<DensityCurvePoint>, ExperimentError> {
    if lambdas.is_empty() || zetas.is_empty() {
        return Err(ExperimentError::InvalidParams("density grids must be nonempty".into()));
    }
    let mut lambdas = lambdas.to_vec();
    lambdas.sort_by(|a, b| a.value().total_cmp(&b.value()));
    let mut zetas = zetas.to_vec();
    zetas.sort_by(f64::total_cmp);
    let size = SquareBox::new(radius).len() as f64;
    let mut points = Vec::with_capacity(lambdas.len() * zetas.len());
    for &rate in &lambdas {
        for &zeta in &zetas {
            let params = SimParams {
                budget,
                replicas,
                ..SimParams::new(radius, rate, InitialCondition::Poisson { zeta }, seed)
            };
            let outcomes = run_replicas(&params)?;
            let (mean, se) = mean_and_std_error(outcomes.iter().map(|o| o.sleeping as f64 / size));
            points.push(DensityCurvePoint {
                lambda: rate.value(),
                zeta,
                radius,
                replicas,
                mean_density: mean,
                std_error: se,
            });
        }
    }
    Ok(points)
}

/// One evaluation of the retained-fraction statistic during bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaProbe {
    pub zeta: f64,
    pub retained_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaCEstimate {
    pub label: &'static str,
    pub lambda: f64,
    pub radius: u32,
    pub replicas: u64,
    pub lo: f64,
    pub hi: f64,
    pub probes: Vec<ZetaProbe>,
}

impl ZetaCEstimate {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Retained fraction `Σ S / Σ |η₀|` pooled over Poisson(ζ) replicas; 0 when
/// no replica has a particle.
pub fn retained_fraction(
    rate: SleepRate,
    zeta: f64,
    radius: u32,
    replicas: u64,
    seed: u64,
    budget: u64,
) -> Result<f64, ExperimentError> {
    let params = SimParams {
        budget,
        replicas,
        ..SimParams::new(radius, rate, InitialCondition::Poisson { zeta }, seed)
    };
    let outcomes = run_replicas(&params)?;
    let particles: u64 = outcomes.iter().map(|o| o.particles).sum();
    let sleeping: u64 = outcomes.iter().map(|o| o.sleeping).sum();
    Ok(if particles == 0 {
        0.0
    } else {
        sleeping as f64 / particles as f64
    })
}

/// Heuristic finite-volume bracket for the critical density: bisection on
/// ζ for the point where the mean retained fraction drops through 1/2.
///
/// The search starts from `[tolerance, 1]`; the lower probe sits at
/// `tolerance` because the statistic is degenerate at ζ = 0. The returned
/// interval has width at most `tolerance`.
pub fn estimate_zeta_c(
    rate: SleepRate,
    radius: u32,
    replicas: u64,
    tolerance: f64,
    seed: u64,
    budget: u64,
) -> Result<ZetaCEstimate, ExperimentError> {
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(ExperimentError::InvalidParams(format!(
            "tolerance must be in (0,1), got {tolerance}"
        )));
    }
    let stat = |zeta| retained_fraction(rate, zeta, radius, replicas, seed, budget);
    let (mut lo, mut hi) = (tolerance, 1.0);
    let (at_lo, at_hi) = (stat(lo)?, stat(hi)?);
    let mut probes = vec![
        ZetaProbe {
            zeta: lo,
            retained_fraction: at_lo,
        },
        ZetaProbe {
            zeta: hi,
            retained_fraction: at_hi,
        },
    ];
    if !(at_lo > 0.5 && at_hi <= 0.5) {
        return Err(ExperimentError::NoBracket {
            lambda: rate.value(),
            low: lo,
            high: hi,
            at_low: at_lo,
            at_high: at_hi,
        });
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        let f = stat(mid)?;
        probes.push(ZetaProbe {
            zeta: mid,
            retained_fraction: f,
        });
        if f > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ZetaCEstimate {
        label: HEURISTIC_LABEL,
        lambda: rate.value(),
        radius,
        replicas,
        lo,
        hi,
        probes,
    })
}

/// Residual tolerance of the single-particle Dirichlet solve.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

/// Exact probability that a lone particle started at the origin falls
/// asleep before leaving `B_N`.
///
/// Solves `p(x) = q + (1 − q) · ¼ Σ_{y∼x} p(y)` on the box with `p ≡ 0`
/// outside, `q = λ/(1+λ)`, by Gauss–Seidel from `p ≡ 0`. At `N = 0` this is
/// `q` exactly.
pub fn single_particle_oracle(rate: SleepRate, radius: u32) -> f64 {
    let domain = SquareBox::new(radius);
    let q = rate.sleep_probability();
    let c = 0.25 * (1.0 - q);
    let n = domain.len();
    let mut p = vec![0.0f64; n];
    let neighbor_sum = |p: &[f64], i: usize| -> f64 {
        domain
            .targets(i)
            .iter()
            .map(|t| match *t {
                crate::lattice::Target::Interior(j) => p[j as usize],
                crate::lattice::Target::Boundary(_) => 0.0,
            })
            .sum()
    };
    loop {
        for i in 0..n {
            p[i] = q + c * neighbor_sum(&p, i);
        }
        let residual = (0..n)
            .map(|i| (p[i] - q - c * neighbor_sum(&p, i)).abs())
            .fold(0.0, f64::max);
        if residual <= ORACLE_TOLERANCE {
            break;
        }
    }
    p[domain.index_of(Site::ORIGIN).expect("origin")]
}
