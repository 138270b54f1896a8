//! Abelian stabilization on `B_N` with killing at `∂B_N`.
//!
//! A [`Stabilizer`] applies one instruction per [`Stabilizer::topple`] call.
//! [`stabilize`] drives it with a worklist [`Scheduler`] until every
//! remaining particle sleeps and reports the odometer `M`, the sleep field
//! `S` and the exit measure `Φ`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instructions::{Instruction, InstructionSource, SleepRate, StreamSource};
use crate::lattice::{Site, SquareBox, Target};

/// Default cap on instructions consumed in one stabilization.
pub const DEFAULT_BUDGET: u64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("instruction budget of {budget} exhausted before stabilization")]
    BudgetExceeded {
        budget: u64,
        partial: Box<StabilizationResult>,
    },
    #[error("site {0} is stable and cannot topple")]
    NotUnstable(Site),
    #[error("configuration has radius {found}, box has radius {expected}")]
    ShapeMismatch { expected: u32, found: u32 },
}

/// State of one site: `0`, the sleeping marker, or `k ≥ 1` active particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum SiteState {
    #[default]
    Empty,
    Sleeping,
    Active(u32),
}

impl SiteState {
    pub fn particles(self) -> u64 {
        match self {
            SiteState::Empty => 0,
            SiteState::Sleeping => 1,
            SiteState::Active(k) => k as u64,
        }
    }

    pub fn is_unstable(self) -> bool {
        matches!(self, SiteState::Active(_))
    }

    /// One particle arrives. A sleeping particle wakes up: `𝔰 + 1 = 2`.
    #[inline]
    fn receive(self) -> SiteState {
        match self {
            SiteState::Empty => SiteState::Active(1),
            SiteState::Sleeping => SiteState::Active(2),
            SiteState::Active(k) => SiteState::Active(k + 1),
        }
    }
}

/// Particle configuration on the interior of a box.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    radius: u32,
    states: Vec<SiteState>,
}

impl Configuration {
    pub fn empty(domain: &SquareBox) -> Self {
        Configuration {
            radius: domain.radius(),
            states: vec![SiteState::Empty; domain.len()],
        }
    }

    /// All-active configuration from per-site particle counts.
    pub fn from_counts(domain: &SquareBox, counts: &[u32]) -> Self {
        assert_eq!(counts.len(), domain.len(), "one count per interior site");
        Configuration {
            radius: domain.radius(),
            states: counts
                .iter()
                .map(|&c| if c == 0 { SiteState::Empty } else { SiteState::Active(c) })
                .collect(),
        }
    }

    pub fn radius(&self) -> u32 {
        self.radius
    }

    pub fn states(&self) -> &[SiteState] {
        &self.states
    }

    pub fn get(&self, i: usize) -> SiteState {
        self.states[i]
    }

    pub fn set(&mut self, i: usize, state: SiteState) {
        self.states[i] = state;
    }

    pub fn particles_at(&self, i: usize) -> u64 {
        self.states[i].particles()
    }

    /// `|η|`.
    pub fn total_particles(&self) -> u64 {
        self.states.iter().map(|s| s.particles()).sum()
    }

    pub fn is_stable(&self) -> bool {
        !self.states.iter().any(|s| s.is_unstable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchedulerPolicy {
    Fifo,
    Lifo,
    UniformRandom(u64),
    CycleSweep,
}

impl SchedulerPolicy {
    /// One of each policy; the random one seeded with `seed`.
    pub fn all(seed: u64) -> [SchedulerPolicy; 4] {
        [
            SchedulerPolicy::Fifo,
            SchedulerPolicy::Lifo,
            SchedulerPolicy::UniformRandom(seed),
            SchedulerPolicy::CycleSweep,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulerPolicy::Fifo => "fifo",
            SchedulerPolicy::Lifo => "lifo",
            SchedulerPolicy::UniformRandom(_) => "random",
            SchedulerPolicy::CycleSweep => "cycle",
        }
    }
}

impl fmt::Display for SchedulerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchedulerPolicy::UniformRandom(s) => write!(f, "random({s})"),
            p => f.write_str(p.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown scheduler {0:?} (expected fifo, lifo, random or cycle)")]
pub struct UnknownScheduler(pub String);

impl FromStr for SchedulerPolicy {
    type Err = UnknownScheduler;
    /// Parses `fifo`, `lifo`, `cycle`, `random` (seed 0) or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(SchedulerPolicy::Fifo),
            "lifo" => Ok(SchedulerPolicy::Lifo),
            "cycle" => Ok(SchedulerPolicy::CycleSweep),
            "random" => Ok(SchedulerPolicy::UniformRandom(0)),
            other => other
                .strip_prefix("random:")
                .and_then(|seed| seed.parse().ok())
                .map(SchedulerPolicy::UniformRandom)
                .ok_or_else(|| UnknownScheduler(s.to_string())),
        }
    }
}

enum Pending<'a> {
    Fifo(VecDeque<u32>),
    Lifo(Vec<u32>),
    Random(Vec<u32>, Box<ChaCha8Rng>),
    Sweep(BTreeSet<u32>, &'a SquareBox),
}

/// Worklist of unstable sites. `pop` removes the selected site; the
/// engine pushes it back if it is still unstable after one instruction.
pub struct Scheduler<'a> {
    pending: Pending<'a>,
}

impl<'a> Scheduler<'a> {
    pub fn new(policy: SchedulerPolicy, domain: &'a SquareBox) -> Self {
        let pending = match policy {
            SchedulerPolicy::Fifo => Pending::Fifo(VecDeque::new()),
            SchedulerPolicy::Lifo => Pending::Lifo(Vec::new()),
            SchedulerPolicy::UniformRandom(seed) => {
                Pending::Random(Vec::new(), Box::new(ChaCha8Rng::seed_from_u64(seed)))
            }
            SchedulerPolicy::CycleSweep => Pending::Sweep(BTreeSet::new(), domain),
        };
        Scheduler { pending }
    }

    pub fn push(&mut self, site: usize) {
        let site = site as u32;
        match &mut self.pending {
            Pending::Fifo(q) => q.push_back(site),
            Pending::Lifo(v) | Pending::Random(v, _) => v.push(site),
            Pending::Sweep(set, domain) => {
                set.insert(domain.sweep_rank(site as usize));
            }
        }
    }

    pub fn pop(&mut self) -> Option<usize> {
        let site = match &mut self.pending {
            Pending::Fifo(q) => q.pop_front(),
            Pending::Lifo(v) => v.pop(),
            Pending::Random(v, rng) => {
                if v.is_empty() {
                    None
                } else {
                    let i = rng.random_range(0..v.len());
                    Some(v.swap_remove(i))
                }
            }
            Pending::Sweep(set, domain) => set.pop_first().map(|r| domain.sweep_order()[r as usize]),
        };
        site.map(|s| s as usize)
    }

    pub fn len(&self) -> usize {
        match &self.pending {
            Pending::Fifo(q) => q.len(),
            Pending::Lifo(v) | Pending::Random(v, _) => v.len(),
            Pending::Sweep(set, _) => set.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What one instruction did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransitionRecord {
    /// A lone active particle fell asleep.
    FellAsleep,
    /// Sleep instruction at a site with two or more particles: consumed, no effect.
    SleepIgnored,
    /// A particle stepped to `to`; `woke` if it landed on a sleeping particle.
    Moved { to: Target, woke: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilizeParams {
    pub rate: SleepRate,
    pub seed: u64,
    pub scheduler: SchedulerPolicy,
    pub budget: u64,
}

impl StabilizeParams {
    pub fn new(rate: SleepRate, seed: u64) -> Self {
        StabilizeParams {
            rate,
            seed,
            scheduler: SchedulerPolicy::Lifo,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn with_scheduler(mut self, scheduler: SchedulerPolicy) -> Self {
        self.scheduler = scheduler;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }
}

/// Output of a stabilization. Per-site vectors use dense interior indices;
/// `exit_measure` uses dense boundary indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilizationResult {
    /// `M_x`: movement instructions used at `x`. Sleep instructions are not counted.
    pub odometer: Vec<u64>,
    /// `S_x`: a sleeping particle remains at `x`.
    pub sleep_field: Vec<bool>,
    /// `Φ_x`: particles killed at boundary site `x`.
    pub exit_measure: Vec<u64>,
    pub final_config: Configuration,
    /// Movements plus sleep instructions consumed.
    pub total_instructions: u64,
    /// `n_{x,y}(M_x)` per direction, maintained incrementally.
    pub movement_counts: Vec<[u64; 4]>,
    /// Raw stream position reached at each site.
    pub consumed: Vec<u64>,
}

impl StabilizationResult {
    /// `S(B_N)`.
    pub fn sleeping_total(&self) -> u64 {
        self.sleep_field.iter().filter(|&&s| s).count() as u64
    }

    pub fn exited_total(&self) -> u64 {
        self.exit_measure.iter().sum()
    }

    pub fn odometer_total(&self) -> u64 {
        self.odometer.iter().sum()
    }

    /// True when `(M, S, Φ)` agree.
    pub fn same_fields(&self, other: &StabilizationResult) -> bool {
        self.odometer == other.odometer
            && self.sleep_field == other.sleep_field
            && self.exit_measure == other.exit_measure
    }
}

/// Mutable stabilization state over a box and an instruction source.
pub struct Stabilizer<'a, S> {
    domain: &'a SquareBox,
    source: S,
    config: Configuration,
    odometer: Vec<u64>,
    counts: Vec<[u64; 4]>,
    consumed: Vec<u64>,
    exit: Vec<u64>,
    total: u64,
}

impl<'a, S: InstructionSource> Stabilizer<'a, S> {
    pub fn new(domain: &'a SquareBox, initial: &Configuration, source: S) -> Result<Self, EngineError> {
        if initial.radius() != domain.radius() {
            return Err(EngineError::ShapeMismatch {
                expected: domain.radius(),
                found: initial.radius(),
            });
        }
        let n = domain.len();
        Ok(Stabilizer {
            domain,
            source,
            config: initial.clone(),
            odometer: vec![0; n],
            counts: vec![[0; 4]; n],
            consumed: vec![0; n],
            exit: vec![0; domain.boundary_sites().len()],
            total: 0,
        })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn total_instructions(&self) -> u64 {
        self.total
    }

    /// Consumes the next instruction at interior site `site`.
    #[inline]
    pub fn topple(&mut self, site: usize) -> Result<TransitionRecord, EngineError> {
        let k = match self.config.states[site] {
            SiteState::Active(k) => k,
            _ => return Err(EngineError::NotUnstable(self.domain.site_at(site))),
        };
        self.consumed[site] += 1;
        self.total += 1;
        match self.source.instruction(site, self.consumed[site]) {
            Instruction::Sleep => {
                if k == 1 {
                    self.config.states[site] = SiteState::Sleeping;
                    Ok(TransitionRecord::FellAsleep)
                } else {
                    Ok(TransitionRecord::SleepIgnored)
                }
            }
            Instruction::Move(d) => {
                self.config.states[site] = if k == 1 {
                    SiteState::Empty
                } else {
                    SiteState::Active(k - 1)
                };
                self.odometer[site] += 1;
                self.counts[site][d.index()] += 1;
                let to = self.domain.targets(site)[d.index()];
                let woke = match to {
                    Target::Interior(j) => {
                        let st = &mut self.config.states[j as usize];
                        let woke = *st == SiteState::Sleeping;
                        *st = st.receive();
                        woke
                    }
                    Target::Boundary(j) => {
                        self.exit[j as usize] += 1;
                        false
                    }
                };
                Ok(TransitionRecord::Moved { to, woke })
            }
        }
    }

    /// Topples until stable, selecting sites with `policy`.
    pub fn run(mut self, policy: SchedulerPolicy, budget: u64) -> Result<StabilizationResult, EngineError> {
        let domain = self.domain;
        let mut sched = Scheduler::new(policy, domain);
        let mut queued = vec![false; domain.len()];
        for (i, st) in self.config.states.iter().enumerate() {
            if st.is_unstable() {
                sched.push(i);
                queued[i] = true;
            }
        }
        while let Some(i) = sched.pop() {
            queued[i] = false;
            if self.total >= budget {
                return Err(EngineError::BudgetExceeded {
                    budget,
                    partial: Box::new(self.into_result()),
                });
            }
            if let TransitionRecord::Moved {
                to: Target::Interior(j),
                ..
            } = self.topple(i)?
            {
                let j = j as usize;
                if !queued[j] && self.config.states[j].is_unstable() {
                    sched.push(j);
                    queued[j] = true;
                }
            }
            if !queued[i] && self.config.states[i].is_unstable() {
                sched.push(i);
                queued[i] = true;
            }
        }
        Ok(self.into_result())
    }

    pub fn into_result(self) -> StabilizationResult {
        let sleep_field = self.config.states.iter().map(|&s| s == SiteState::Sleeping).collect();
        StabilizationResult {
            odometer: self.odometer,
            sleep_field,
            exit_measure: self.exit,
            final_config: self.config,
            total_instructions: self.total,
            movement_counts: self.counts,
            consumed: self.consumed,
        }
    }
}

/// Stabilizes `initial` using the counter-based stacks keyed on `params.seed`.
pub fn stabilize(
    domain: &SquareBox,
    initial: &Configuration,
    params: &StabilizeParams,
) -> Result<StabilizationResult, EngineError> {
    let source = StreamSource::new(domain, params.seed, params.rate);
    stabilize_with(domain, initial, &source, params.scheduler, params.budget)
}

pub fn stabilize_with<S: InstructionSource>(
    domain: &SquareBox,
    initial: &Configuration,
    source: S,
    policy: SchedulerPolicy,
    budget: u64,
) -> Result<StabilizationResult, EngineError> {
    Stabilizer::new(domain, initial, source)?.run(policy, budget)
}
