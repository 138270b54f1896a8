//! Exact checks on stabilization outputs and the large-deviation numerics
//! used to bound the number of sleepers.
//!
//! For a tuple of fields `(m, s, φ)` on `B_N` the checks are
//!
//! * mass balance at every `x ∈ B_N`:
//!   `η₀(x) + Σ_{y∼x} n_{y,x}(m_y) = m_x + s_x`;
//! * the boundary condition at every `x ∈ ∂B_N`: `n_{R(x),x}(m_{R(x)}) = φ_x`
//!   with `R(x)` the interior neighbor;
//! * conservation `|η₀| = Σ s + Σ φ`;
//! * domination `s_x ≤ χ_x(m_x)`.
//!
//! All residuals are exact integers.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{stabilize, Configuration, EngineError, SchedulerPolicy, StabilizationResult, StabilizeParams};
use crate::instructions::{InstructionSource, SiteStream, SiteView, SleepRate};
use crate::lattice::{neighbors, Site, SquareBox};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BalanceError {
    #[error("field {field} has {found} entries, expected {expected}")]
    ShapeMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct DomainError(pub String);

/// Deterministic fields `(m, s, φ)` on a box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldTuple {
    pub m: Vec<u64>,
    pub s: Vec<bool>,
    pub phi: Vec<u64>,
}

impl FieldTuple {
    pub fn zeros(domain: &SquareBox) -> Self {
        FieldTuple {
            m: vec![0; domain.len()],
            s: vec![false; domain.len()],
            phi: vec![0; domain.boundary_sites().len()],
        }
    }

    pub fn check_shape(&self, domain: &SquareBox) -> Result<(), BalanceError> {
        let check = |field, expected, found| {
            if expected == found {
                Ok(())
            } else {
                Err(BalanceError::ShapeMismatch { field, expected, found })
            }
        };
        check("m", domain.len(), self.m.len())?;
        check("s", domain.len(), self.s.len())?;
        check("phi", domain.boundary_sites().len(), self.phi.len())
    }
}

impl From<&StabilizationResult> for FieldTuple {
    fn from(r: &StabilizationResult) -> Self {
        FieldTuple {
            m: r.odometer.clone(),
            s: r.sleep_field.clone(),
            phi: r.exit_measure.clone(),
        }
    }
}

/// Source of `n_{x,·}(m)` for the balance checks.
pub trait MovementCounts {
    fn counts(&self, site: usize, m: u64) -> [u64; 4];
}

/// Re-derives every count by scanning the instruction stream.
pub struct Rescan<S>(pub S);

impl<S: InstructionSource> MovementCounts for Rescan<S> {
    fn counts(&self, site: usize, m: u64) -> [u64; 4] {
        SiteView::new(&self.0, site).movement_counts(m)
    }
}

/// Counts kept by the engine. Queries at any other `m` than the recorded
/// odometer fall back to a rescan.
pub struct Recorded<'a, S> {
    pub odometer: &'a [u64],
    pub counts: &'a [[u64; 4]],
    pub source: S,
}

impl<'a, S> Recorded<'a, S> {
    pub fn new(result: &'a StabilizationResult, source: S) -> Self {
        Recorded {
            odometer: &result.odometer,
            counts: &result.movement_counts,
            source,
        }
    }
}

impl<S: InstructionSource> MovementCounts for Recorded<'_, S> {
    fn counts(&self, site: usize, m: u64) -> [u64; 4] {
        if self.odometer[site] == m {
            self.counts[site]
        } else {
            SiteView::new(&self.source, site).movement_counts(m)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    MassBalance,
    Boundary,
    Conservation,
    SleepDomination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub check: Check,
    pub site: Option<Site>,
    pub residual: i64,
}

/// Residuals of one or more checks. Per-site residual vectors are kept in
/// memory; only non-zero entries are serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceReport {
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub mass_residuals: Vec<i64>,
    #[serde(skip)]
    pub boundary_residuals: Vec<i64>,
    #[serde(skip)]
    pub domination_excess: Vec<i64>,
    pub conservation_residual: i64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<Failure>,
}

impl BalanceReport {
    fn new(check: Check) -> Self {
        BalanceReport {
            pass: true,
            checks: vec![check],
            mass_residuals: Vec::new(),
            boundary_residuals: Vec::new(),
            domination_excess: Vec::new(),
            conservation_residual: 0,
            failures: Vec::new(),
        }
    }

    fn finish(mut self) -> Self {
        self.pass = self.failures.is_empty();
        self
    }

    fn collect(check: Check, residuals: &[i64], site: impl Fn(usize) -> Site) -> Vec<Failure> {
        residuals
            .iter()
            .enumerate()
            .filter(|(_, &r)| r != 0)
            .map(|(i, &r)| Failure {
                check,
                site: Some(site(i)),
                residual: r,
            })
            .collect()
    }

    /// Combines the residuals of two reports.
    pub fn merge(mut self, other: BalanceReport) -> Self {
        self.checks.extend(other.checks);
        if !other.mass_residuals.is_empty() {
            self.mass_residuals = other.mass_residuals;
        }
        if !other.boundary_residuals.is_empty() {
            self.boundary_residuals = other.boundary_residuals;
        }
        if !other.domination_excess.is_empty() {
            self.domination_excess = other.domination_excess;
        }
        self.conservation_residual += other.conservation_residual;
        self.failures.extend(other.failures);
        self.finish()
    }
}

/// Residual `η₀(x) + Σ_{y∼x} n_{y,x}(m_y) − m_x − s_x` at every interior site.
pub fn verify_mass_balance(
    domain: &SquareBox,
    eta0: &Configuration,
    fields: &FieldTuple,
    counts: &impl MovementCounts,
) -> Result<BalanceReport, BalanceError> {
    fields.check_shape(domain)?;
    if eta0.radius() != domain.radius() {
        return Err(BalanceError::ShapeMismatch {
            field: "eta0",
            expected: domain.len(),
            found: eta0.states().len(),
        });
    }
    let per_site: Vec<[u64; 4]> = (0..domain.len()).map(|i| counts.counts(i, fields.m[i])).collect();
    let residuals: Vec<i64> = (0..domain.len())
        .map(|i| {
            let x = domain.site_at(i);
            let inflow: u64 = neighbors(x)
                .into_iter()
                .enumerate()
                .filter_map(|(d, y)| {
                    // Direction from y back to x is the opposite of d.
                    domain.index_of(y).map(|j| per_site[j][d ^ 1])
                })
                .sum();
            (eta0.particles_at(i) + inflow) as i64 - fields.m[i] as i64 - fields.s[i] as i64
        })
        .collect();
    let mut report = BalanceReport::new(Check::MassBalance);
    report.failures = BalanceReport::collect(Check::MassBalance, &residuals, |i| domain.site_at(i));
    report.mass_residuals = residuals;
    Ok(report.finish())
}

/// Residual `n_{R(x),x}(m_{R(x)}) − φ_x` at every boundary site.
pub fn verify_boundary(
    domain: &SquareBox,
    fields: &FieldTuple,
    counts: &impl MovementCounts,
) -> Result<BalanceReport, BalanceError> {
    fields.check_shape(domain)?;
    let residuals: Vec<i64> = domain
        .boundary_sites()
        .iter()
        .enumerate()
        .map(|(b, &x)| {
            let inner = domain.interior_neighbor(x).expect("boundary site");
            let j = domain.index_of(inner).expect("interior neighbor");
            let d = neighbors(inner).iter().position(|&t| t == x).expect("adjacent");
            counts.counts(j, fields.m[j])[d] as i64 - fields.phi[b] as i64
        })
        .collect();
    let mut report = BalanceReport::new(Check::Boundary);
    report.failures = BalanceReport::collect(Check::Boundary, &residuals, |i| domain.boundary_sites()[i]);
    report.boundary_residuals = residuals;
    Ok(report.finish())
}

/// `|η₀| − Σ s − Σ φ`.
pub fn verify_conservation(
    domain: &SquareBox,
    eta0: &Configuration,
    fields: &FieldTuple,
) -> Result<BalanceReport, BalanceError> {
    fields.check_shape(domain)?;
    let sleepers = fields.s.iter().filter(|&&s| s).count() as i64;
    let exited: u64 = fields.phi.iter().sum();
    let residual = eta0.total_particles() as i64 - sleepers - exited as i64;
    let mut report = BalanceReport::new(Check::Conservation);
    report.conservation_residual = residual;
    if residual != 0 {
        report.failures.push(Failure {
            check: Check::Conservation,
            site: None,
            residual,
        });
    }
    Ok(report.finish())
}

/// Excess `s_x − χ_x(m_x)`, clamped below at zero.
pub fn verify_sleep_domination(
    domain: &SquareBox,
    fields: &FieldTuple,
    source: &impl InstructionSource,
) -> Result<BalanceReport, BalanceError> {
    fields.check_shape(domain)?;
    let excess: Vec<i64> = (0..domain.len())
        .map(|i| {
            if fields.s[i] && !SiteView::new(source, i).chi(fields.m[i]) {
                1
            } else {
                0
            }
        })
        .collect();
    let mut report = BalanceReport::new(Check::SleepDomination);
    report.failures = BalanceReport::collect(Check::SleepDomination, &excess, |i| domain.site_at(i));
    report.domination_excess = excess;
    Ok(report.finish())
}

/// Which counts feed the mass-balance and boundary checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Engine counters.
    Recorded,
    /// Slow re-derivation from the streams; catches counter drift.
    Rescan,
}

/// Runs all four checks on an engine output.
pub fn verify_all<S: InstructionSource>(
    domain: &SquareBox,
    eta0: &Configuration,
    result: &StabilizationResult,
    source: &S,
    mode: CountMode,
) -> Result<BalanceReport, BalanceError> {
    let fields = FieldTuple::from(result);
    let (mass, boundary) = match mode {
        CountMode::Recorded => {
            let counts = Recorded::new(result, source);
            (
                verify_mass_balance(domain, eta0, &fields, &counts)?,
                verify_boundary(domain, &fields, &counts)?,
            )
        }
        CountMode::Rescan => {
            let counts = Rescan(source);
            (
                verify_mass_balance(domain, eta0, &fields, &counts)?,
                verify_boundary(domain, &fields, &counts)?,
            )
        }
    };
    Ok(mass
        .merge(boundary)
        .merge(verify_conservation(domain, eta0, &fields)?)
        .merge(verify_sleep_domination(domain, &fields, source)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldName {
    Odometer,
    SleepField,
    ExitMeasure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub reference: String,
    pub other: String,
    pub field: FieldName,
    pub site: Site,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AbelianReport {
    pub pass: bool,
    pub policies: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub divergence: Option<Divergence>,
}

/// Stabilizes `eta0` once per policy with the same stacks and compares
/// `(M, S, Φ)` against the first policy.
pub fn abelian_check(
    domain: &SquareBox,
    eta0: &Configuration,
    params: &StabilizeParams,
    policies: &[SchedulerPolicy],
) -> Result<AbelianReport, EngineError> {
    abelian_check_with(domain, policies, |policy| {
        stabilize(domain, eta0, &params.with_scheduler(policy))
    })
}

/// Same as [`abelian_check`] with a caller-supplied runner.
pub fn abelian_check_with(
    domain: &SquareBox,
    policies: &[SchedulerPolicy],
    mut run: impl FnMut(SchedulerPolicy) -> Result<StabilizationResult, EngineError>,
) -> Result<AbelianReport, EngineError> {
    assert!(policies.len() >= 2, "need at least two policies to compare");
    let reference = run(policies[0])?;
    let mut report = AbelianReport {
        pass: true,
        policies: policies.iter().map(|p| p.to_string()).collect(),
        divergence: None,
    };
    for &policy in &policies[1..] {
        let other = run(policy)?;
        if let Some((field, site)) = first_difference(domain, &reference, &other) {
            report.pass = false;
            report.divergence = Some(Divergence {
                reference: policies[0].to_string(),
                other: policy.to_string(),
                field,
                site,
            });
            break;
        }
    }
    Ok(report)
}

fn first_difference(domain: &SquareBox, a: &StabilizationResult, b: &StabilizationResult) -> Option<(FieldName, Site)> {
    fn first<T: PartialEq>(x: &[T], y: &[T]) -> Option<usize> {
        x.iter().zip(y).position(|(p, q)| p != q)
    }
    if let Some(i) = first(&a.odometer, &b.odometer) {
        return Some((FieldName::Odometer, domain.site_at(i)));
    }
    if let Some(i) = first(&a.sleep_field, &b.sleep_field) {
        return Some((FieldName::SleepField, domain.site_at(i)));
    }
    first(&a.exit_measure, &b.exit_measure).map(|i| (FieldName::ExitMeasure, domain.boundary_sites()[i]))
}

fn x_ln_x_over_y(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Kullback–Leibler divergence between Bernoulli(p1) and Bernoulli(p2),
/// with `0 · ln 0 = 0`.
pub fn kl_divergence(p1: f64, p2: f64) -> Result<f64, DomainError> {
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(DomainError(format!("probabilities out of range: p1={p1}, p2={p2}")));
    }
    if p1 == p2 {
        return Ok(0.0);
    }
    if p2 == 0.0 || p2 == 1.0 {
        return Err(DomainError(format!("divergence is infinite for p1={p1}, p2={p2}")));
    }
    Ok(x_ln_x_over_y(p1, p2) + x_ln_x_over_y(1.0 - p1, 1.0 - p2))
}

/// `exp(−D_KL(ρ ‖ λ/(1+λ)) · |B|)`, kept in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChernoffBound {
    pub log_bound: f64,
}

impl ChernoffBound {
    pub fn value(self) -> f64 {
        self.log_bound.exp()
    }
}

/// Chernoff bound on `P(Σ_x χ_x ≥ ρ |B|)` for `|B| = box_size` independent
/// Bernoulli(λ/(1+λ)) indicators. Only meaningful above the mean.
pub fn chernoff_bound(rho: f64, rate: SleepRate, box_size: u64) -> Result<ChernoffBound, DomainError> {
    let q = rate.sleep_probability();
    if !(rho > q && rho <= 1.0) {
        return Err(DomainError(format!(
            "density {rho} must lie in (λ/(1+λ), 1] = ({q}, 1]"
        )));
    }
    let kl = kl_divergence(rho, q)?;
    Ok(ChernoffBound {
        log_bound: -kl * box_size as f64,
    })
}
