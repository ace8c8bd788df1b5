//! Discrete-time simulation of the waiting queue.
//!
//! Each step draws one arrival, ages every queued item by one step, removes
//! reneged recipients, redraws elapsed predictive patience, grants due MELD
//! exceptions, applies MELD-band moves, and finally matches an arriving organ
//! or appends an arriving recipient to the tail of the queue.

use std::collections::BTreeMap;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{SimError, SurvivalError};
use crate::model::{
    build_transition_rates, recipient_classes, ClassId, CompatibilityGraph, Indication, Item,
    QueueState, RecipientClass, TransitionGraph, NOT_AWAITING,
};
use crate::policy::{choose_match, PolicyKind, ScoreFunction};
use crate::rng::{item_rng, stream_rng, stream_seed, SimRng, Stream};
use crate::survival::{
    sample_conditional_shifted, sample_mxp_grant_time, sample_patience,
    sample_patience_conditioned_above, SurvivalModels,
};

/// Default resolution: one arrival per step, 6216 arrivals every two years.
pub const DEFAULT_STEPS_PER_YEAR: u32 = 3108;

fn dense(class: &RecipientClass) -> usize {
    class.indication.index() * 12 + class.meld.index() * 2 + usize::from(class.awaits_mxp)
}
const DENSE_SLOTS: usize = 48;

/// Per-step arrival law: the class of the single arrival, plus the chance
/// that a recipient arrives awaiting a MELD exception.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalLaw {
    classes: Vec<ClassId>,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
    await_probability: [f64; DENSE_SLOTS],
}

/// Tolerance on the sum of arrival probabilities before renormalisation.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-9;

impl ArrivalLaw {
    /// `probabilities` cover the donor class and non-awaiting, non-MXP recipient
    /// classes; `await_probabilities` are keyed by the non-awaiting class a
    /// flagged arrival is drawn as.
    pub fn new(
        probabilities: &BTreeMap<ClassId, f64>,
        await_probabilities: &BTreeMap<RecipientClass, f64>,
    ) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let mut total = 0.0;
        for (class, &p) in probabilities {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return bad(format!("arrival probability of {class} is {p}"));
            }
            if let ClassId::Recipient(r) = class {
                if (r.awaits_mxp || r.indication == Indication::Mxp) && p > 0.0 {
                    return bad(format!(
                        "class {class} cannot arrive directly (exception status is drawn as a flag)"
                    ));
                }
            }
            total += p;
        }
        if (total - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return bad(format!("arrival probabilities sum to {total}, expected 1"));
        }
        let mut await_probability = [0.0; DENSE_SLOTS];
        for (class, &p) in await_probabilities {
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return bad(format!("awaiting probability of {class} is {p}"));
            }
            let flagged = RecipientClass {
                awaits_mxp: true,
                ..*class
            };
            if class.awaits_mxp || !flagged.is_valid() {
                if p > 0.0 {
                    return bad(format!("class {class} cannot await a MELD exception"));
                }
                continue;
            }
            await_probability[dense(class)] = p;
        }
        let (classes, probabilities): (Vec<_>, Vec<_>) = probabilities
            .iter()
            .filter(|(_, &p)| p > 0.0)
            .map(|(c, &p)| (*c, p / total))
            .unzip();
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(ArrivalLaw {
            classes,
            probabilities,
            cumulative,
            await_probability,
        })
    }

    pub fn probability(&self, class: &ClassId) -> f64 {
        self.classes
            .iter()
            .position(|c| c == class)
            .map_or(0.0, |i| self.probabilities[i])
    }

    pub fn await_probability(&self, class: &RecipientClass) -> f64 {
        self.await_probability[dense(class)]
    }

    /// Normalised arrival weights, used to spread MELD-band moves.
    pub fn weights(&self) -> BTreeMap<ClassId, f64> {
        self.classes
            .iter()
            .copied()
            .zip(self.probabilities.iter().copied())
            .collect()
    }

    pub fn sample_class(&self, u: f64) -> ClassId {
        let i = self.cumulative.partition_point(|&c| c <= u);
        self.classes[i.min(self.classes.len() - 1)]
    }
}

/// Timing and arrival configuration of the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub steps_per_year: u32,
    pub arrivals: ArrivalLaw,
    pub initiation_years: f64,
    pub study_years: f64,
    /// Length of the incident-cohort window at the start of the study phase.
    pub incident_window_years: f64,
}

impl EngineConfig {
    pub fn dt(&self) -> f64 {
        1.0 / f64::from(self.steps_per_year)
    }

    pub fn steps_for(&self, years: f64) -> u64 {
        (years * f64::from(self.steps_per_year)).round().max(0.0) as u64
    }

    /// Per-step MELD-move probability matching an exponential of rate `outflow`.
    pub fn meld_step_probability(&self, outflow: f64) -> f64 {
        -(-outflow * self.dt()).exp_m1()
    }
}

/// Everything the engine needs besides timing: laws, graphs and the score map.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub survival: SurvivalModels,
    pub transitions: TransitionGraph,
    pub compatibility: CompatibilityGraph,
    pub score: ScoreFunction,
}

impl Models {
    /// Builds the transition graph from the arrival weights and the grant model.
    pub fn build(
        survival: SurvivalModels,
        arrivals: &ArrivalLaw,
        mean_meld_change_time: f64,
        up_share: f64,
        score: ScoreFunction,
    ) -> Result<Self, SimError> {
        survival.validate()?;
        let grant_rates = recipient_classes()
            .into_iter()
            .filter(|r| r.awaits_mxp)
            .map(|r| Ok((r, 1.0 / survival.grant.mean_grant_time(&r)?)))
            .collect::<Result<Vec<_>, SurvivalError>>()?;
        let transitions =
            build_transition_rates(&arrivals.weights(), mean_meld_change_time, up_share)?
                .with_grant_rates(grant_rates)?;
        Ok(Models {
            survival,
            transitions,
            compatibility: CompatibilityGraph,
            score,
        })
    }
}

/// Per-class one-step MELD move probabilities and destination tables.
#[derive(Debug, Clone, PartialEq)]
pub struct MeldKernel {
    step_probability: [f64; DENSE_SLOTS],
    destinations: Vec<Vec<(RecipientClass, f64)>>,
}

impl MeldKernel {
    pub fn new(transitions: &TransitionGraph, config: &EngineConfig) -> Self {
        let mut step_probability = [0.0; DENSE_SLOTS];
        let mut destinations = vec![Vec::new(); DENSE_SLOTS];
        for from in recipient_classes() {
            let outflow = transitions.meld_outflow(&from);
            if outflow <= 0.0 {
                continue;
            }
            step_probability[dense(&from)] = config.meld_step_probability(outflow);
            let mut acc = 0.0;
            destinations[dense(&from)] = transitions
                .meld_moves(&from)
                .map(|t| {
                    acc += t.rate / outflow;
                    (t.to, acc)
                })
                .collect();
        }
        MeldKernel {
            step_probability,
            destinations,
        }
    }

    pub fn step_probability(&self, class: &RecipientClass) -> f64 {
        self.step_probability[dense(class)]
    }

    fn destination(&self, class: &RecipientClass, u: f64) -> Option<RecipientClass> {
        let table = &self.destinations[dense(class)];
        let i = table.partition_point(|&(_, c)| c <= u);
        table.get(i.min(table.len().saturating_sub(1))).map(|d| d.0)
    }
}

#[inline]
fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// Applies a MELD-exception grant: the item becomes MXP in the same band, its
/// waiting time restarts at zero, its real patience is redrawn conditionally on
/// the time already spent in line and its predictive patience is drawn afresh.
pub fn grant_mxp<R: Rng + ?Sized>(
    item: &mut Item,
    survival: &SurvivalModels,
    rng: &mut R,
) -> Result<RecipientClass, SimError> {
    let granted = item
        .recipient_class()
        .and_then(RecipientClass::granted)
        .filter(|_| item.exception_due())
        .ok_or_else(|| {
            SimError::InvalidConfig(format!(
                "exception grant requested for {} with timer {}",
                item.class, item.mxp_timer
            ))
        })?;
    let time_in_line = item.waiting_time;
    item.real_patience =
        sample_conditional_shifted(&survival.real_law(&granted), time_in_line, uniform(rng))?;
    item.predictive_patience = sample_patience(&survival.predictive_law(&granted), uniform(rng))?;
    item.class = ClassId::Recipient(granted);
    item.waiting_time = 0.0;
    item.mxp_timer = NOT_AWAITING;
    Ok(granted)
}

/// One-step MELD-band move. Returns the `(from, to)` pair when the item moved.
pub fn maybe_remeld<R: Rng + ?Sized>(
    item: &mut Item,
    kernel: &MeldKernel,
    survival: &SurvivalModels,
    rng: &mut R,
) -> Result<Option<(RecipientClass, RecipientClass)>, SimError> {
    let Some(&from) = item.recipient_class() else {
        return Ok(None);
    };
    if !from.meld_mobile() {
        return Ok(None);
    }
    if rng.random::<f64>() >= kernel.step_probability(&from) {
        return Ok(None);
    }
    let Some(to) = kernel.destination(&from, rng.random::<f64>()) else {
        return Ok(None);
    };
    let c = item.waiting_time;
    item.real_patience = sample_conditional_shifted(&survival.real_law(&to), c, uniform(rng))?;
    item.predictive_patience =
        sample_conditional_shifted(&survival.predictive_law(&to), c, uniform(rng))?;
    item.class = ClassId::Recipient(to);
    Ok(Some((from, to)))
}

/// A waiting recipient together with its bookkeeping and private random stream.
#[derive(Debug, Clone)]
pub struct Waiting {
    pub item: Item,
    /// Absolute arrival time in years since the start of the simulation.
    pub entered_at: f64,
    /// Arrival class, replaced by the exception class upon a grant.
    pub initial_class: RecipientClass,
    rng: SimRng,
}

impl Waiting {
    pub fn new(item: Item, entered_at: f64, rng: SimRng) -> Option<Self> {
        let initial_class = *item.recipient_class()?;
        Some(Waiting {
            item,
            entered_at,
            initial_class,
            rng,
        })
    }
}

/// Outcome of one step's arrival draw.
#[derive(Debug, Clone)]
pub enum Arrival {
    Donor(Item),
    /// Donor removed by shortage thinning (the id is still consumed).
    Suppressed(i64),
    Recipient(Waiting),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalKind {
    Donor,
    SuppressedDonor,
    Recipient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub id: i64,
    pub kind: ArrivalKind,
    pub class: ClassId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassChange {
    pub id: i64,
    pub from: RecipientClass,
    pub to: RecipientClass,
}

/// Everything that happened during one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEvents {
    pub arrival: Option<ArrivalEvent>,
    pub reneged: Vec<i64>,
    /// `(donor id, recipient id)`.
    pub transplanted: Vec<(i64, i64)>,
    pub discarded: Vec<i64>,
    pub mxp_grants: Vec<ClassChange>,
    pub meld_transitions: Vec<ClassChange>,
    pub predictive_redraws: Vec<i64>,
}

impl StepEvents {
    /// True when nothing besides the arrival happened.
    pub fn is_quiet(&self) -> bool {
        self.reneged.is_empty()
            && self.transplanted.is_empty()
            && self.discarded.is_empty()
            && self.mxp_grants.is_empty()
            && self.meld_transitions.is_empty()
            && self.predictive_redraws.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Liver transplantation.
    Ltx,
    /// Death or dropout for being too sick (reneging).
    Ddts,
    /// Still waiting at the end of the study phase.
    Alive,
}

/// Fate of one recipient observed during the study phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FateRecord {
    pub id: i64,
    pub initial_class: RecipientClass,
    pub outcome: Outcome,
    /// Years spent in line during the study phase.
    pub time_in_system: f64,
    /// Arrival time relative to the start of the study phase (negative for prevalent items).
    pub arrived_at: f64,
    /// Arrived within the incident-cohort window.
    pub incident: bool,
}

impl FateRecord {
    pub fn prevalent(&self) -> bool {
        self.id < 0
    }
}

/// Arrival and exit counts over one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub queue_at_start: u64,
    pub recipient_arrivals: u64,
    pub donor_arrivals: u64,
    pub suppressed_donors: u64,
    pub transplants: u64,
    pub renegings: u64,
    pub discarded: u64,
    pub still_waiting: u64,
}

impl PhaseTotals {
    /// Recipients in = recipients out, organs in = organs out.
    pub fn check_conservation(&self) -> Result<(), SimError> {
        let recipients_in = self.queue_at_start + self.recipient_arrivals;
        let recipients_out = self.transplants + self.renegings + self.still_waiting;
        let organs_out = self.transplants + self.discarded;
        if recipients_in != recipients_out || self.donor_arrivals != organs_out {
            return Err(SimError::Conservation(format!("{self:?}")));
        }
        Ok(())
    }

    fn absorb(&mut self, e: &StepEvents) {
        if let Some(a) = &e.arrival {
            match a.kind {
                ArrivalKind::Donor => self.donor_arrivals += 1,
                ArrivalKind::SuppressedDonor => self.suppressed_donors += 1,
                ArrivalKind::Recipient => self.recipient_arrivals += 1,
            }
        }
        self.transplants += e.transplanted.len() as u64;
        self.renegings += e.reneged.len() as u64;
        self.discarded += e.discarded.len() as u64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    /// Warm-up from an empty queue; fates are not recorded and ids are negative.
    Initiation,
    Study,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    pub kind: PhaseKind,
    pub years: f64,
    /// Probability that a donor arrival is suppressed (study phase only).
    pub shortage_fraction: f64,
}

impl PhaseConfig {
    pub fn initiation(years: f64) -> Self {
        PhaseConfig {
            kind: PhaseKind::Initiation,
            years,
            shortage_fraction: 0.0,
        }
    }

    pub fn study(years: f64, shortage_fraction: f64) -> Self {
        PhaseConfig {
            kind: PhaseKind::Study,
            years,
            shortage_fraction,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct PhaseOutcome {
    pub ledger: Vec<FateRecord>,
    pub totals: PhaseTotals,
}

/// One replication's state machine.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    config: &'a EngineConfig,
    models: &'a Models,
    kernel: MeldKernel,
    policy: PolicyKind,
    queue: Vec<Waiting>,
    arrivals_rng: SimRng,
    thinning_rng: SimRng,
    items_seed: u64,
    next_id: i64,
    step: u64,
    phase: PhaseKind,
    shortage_fraction: f64,
    study_start: f64,
}

impl<'a> Simulation<'a> {
    pub fn new(
        config: &'a EngineConfig,
        models: &'a Models,
        policy: PolicyKind,
        replication_seed: u64,
    ) -> Self {
        Simulation {
            config,
            models,
            kernel: MeldKernel::new(&models.transitions, config),
            policy,
            queue: Vec::new(),
            arrivals_rng: stream_rng(replication_seed, Stream::Arrivals),
            thinning_rng: stream_rng(replication_seed, Stream::Thinning),
            items_seed: stream_seed(replication_seed, Stream::Items),
            next_id: 1,
            step: 0,
            phase: PhaseKind::Initiation,
            shortage_fraction: 0.0,
            study_start: 0.0,
        }
    }

    pub fn policy(&self) -> PolicyKind {
        self.policy
    }

    /// Returns a copy of this state that continues under another policy.
    pub fn with_policy(&self, policy: PolicyKind) -> Self {
        Simulation {
            policy,
            ..self.clone()
        }
    }

    pub fn queue(&self) -> &[Waiting] {
        &self.queue
    }

    pub fn queue_state(&self) -> QueueState {
        self.queue.iter().map(|w| w.item.clone()).collect()
    }

    /// Appends a recipient to the tail of the queue (used to seed tests).
    pub fn push_recipient(&mut self, item: Item) -> Result<(), SimError> {
        let rng = item_rng(self.items_seed, item.id);
        let now = self.now();
        let w = Waiting::new(item, now, rng)
            .ok_or_else(|| SimError::InvalidConfig("donors never wait in line".into()))?;
        self.queue.push(w);
        Ok(())
    }

    /// Current time in years since the start of the simulation.
    pub fn now(&self) -> f64 {
        self.step as f64 * self.config.dt()
    }

    fn fresh_id(&mut self) -> i64 {
        let n = self.next_id;
        self.next_id += 1;
        match self.phase {
            PhaseKind::Initiation => -n,
            PhaseKind::Study => n,
        }
    }

    /// Draws this step's arrival.
    pub fn incoming(&mut self) -> Result<Arrival, SimError> {
        let class = self
            .config
            .arrivals
            .sample_class(self.arrivals_rng.random::<f64>());
        let id = self.fresh_id();
        match class {
            ClassId::Donor => {
                // one thinning draw per donor in every phase keeps streams aligned
                let u: f64 = self.thinning_rng.random();
                let suppress = self.phase == PhaseKind::Study && u < self.shortage_fraction;
                Ok(if suppress {
                    Arrival::Suppressed(id)
                } else {
                    Arrival::Donor(Item::donor(id))
                })
            }
            ClassId::Recipient(base) => {
                let mut rng = item_rng(self.items_seed, id);
                let item = new_recipient(base, id, &self.config.arrivals, &self.models.survival, &mut rng)?;
                let now = self.now();
                Ok(Arrival::Recipient(Waiting::new(item, now, rng).expect("recipient")))
            }
        }
    }

    /// Ages every queued item by one step and applies renegings, predictive
    /// redraws, exception grants and MELD moves, in arrival order.
    pub fn actualize(&mut self, events: &mut StepEvents) -> Result<Vec<Waiting>, SimError> {
        let dt = self.config.dt();
        let survival = &self.models.survival;
        let kernel = &self.kernel;
        let mut keep = 0;
        for i in 0..self.queue.len() {
            let w = &mut self.queue[i];
            let it = &mut w.item;
            it.waiting_time += dt;
            it.real_patience -= dt;
            it.predictive_patience -= dt;
            it.mxp_timer -= dt;
            let awaiting = it.awaits_exception();
            // awaiting patients cannot renege before their grant
            if !awaiting && it.real_patience <= 0.0 {
                events.reneged.push(it.id);
                continue;
            }
            if !awaiting && it.predictive_patience < 0.0 {
                let class = *it.recipient_class().expect("recipient");
                it.predictive_patience = sample_conditional_shifted(
                    &survival.predictive_law(&class),
                    it.waiting_time,
                    uniform(&mut w.rng),
                )?;
                events.predictive_redraws.push(it.id);
            }
            if awaiting && it.exception_due() {
                let from = *it.recipient_class().expect("recipient");
                let to = grant_mxp(it, survival, &mut w.rng)?;
                w.initial_class = to;
                events.mxp_grants.push(ClassChange { id: it.id, from, to });
            }
            if let Some((from, to)) = maybe_remeld(it, kernel, survival, &mut w.rng)? {
                events.meld_transitions.push(ClassChange { id: it.id, from, to });
            }
            if keep != i {
                self.queue.swap(keep, i);
            }
            keep += 1;
        }
        // survivors keep their relative order; the departed end up behind them
        Ok(self.queue.split_off(keep))
    }

    /// One step of the dynamics. Returns the step's events and the recipients
    /// that left the queue, tagged with their outcome.
    pub fn step(&mut self) -> Result<(StepEvents, Vec<(Waiting, Outcome)>), SimError> {
        let mut events = StepEvents::default();
        let arrival = self.incoming()?;
        self.step += 1;
        let mut exits: Vec<(Waiting, Outcome)> = self
            .actualize(&mut events)?
            .into_iter()
            .map(|w| (w, Outcome::Ddts))
            .collect();
        match arrival {
            Arrival::Suppressed(id) => {
                events.arrival = Some(ArrivalEvent {
                    id,
                    kind: ArrivalKind::SuppressedDonor,
                    class: ClassId::Donor,
                });
            }
            Arrival::Donor(donor) => {
                events.arrival = Some(ArrivalEvent {
                    id: donor.id,
                    kind: ArrivalKind::Donor,
                    class: ClassId::Donor,
                });
                let chosen = choose_match(
                    self.policy,
                    self.queue.iter().map(|w| &w.item),
                    &donor,
                    &self.models.compatibility,
                    &self.models.score,
                )?;
                match chosen {
                    Some(j) => {
                        let w = self.queue.remove(j);
                        events.transplanted.push((donor.id, w.item.id));
                        exits.push((w, Outcome::Ltx));
                    }
                    None => events.discarded.push(donor.id),
                }
            }
            Arrival::Recipient(w) => {
                events.arrival = Some(ArrivalEvent {
                    id: w.item.id,
                    kind: ArrivalKind::Recipient,
                    class: w.item.class,
                });
                self.queue.push(w);
            }
        }
        Ok((events, exits))
    }

    fn fate(&self, w: &Waiting, outcome: Outcome) -> FateRecord {
        let now = self.now();
        let arrived_at = w.entered_at - self.study_start;
        FateRecord {
            id: w.item.id,
            initial_class: w.initial_class,
            outcome,
            time_in_system: now - w.entered_at.max(self.study_start),
            arrived_at,
            incident: w.item.id > 0 && arrived_at < self.config.incident_window_years,
        }
    }

    /// Runs a phase to completion.
    pub fn run_phase(&mut self, phase: PhaseConfig) -> Result<PhaseOutcome, SimError> {
        self.run_phase_with(phase, |_, _| Ok(()))
    }

    /// Runs a phase, handing every step's events to `on_step`.
    pub fn run_phase_with(
        &mut self,
        phase: PhaseConfig,
        mut on_step: impl FnMut(u64, &StepEvents) -> Result<(), SimError>,
    ) -> Result<PhaseOutcome, SimError> {
        if !(0.0..1.0).contains(&phase.shortage_fraction) {
            return Err(SimError::InvalidConfig(format!(
                "shortage fraction must lie in [0, 1), got {}",
                phase.shortage_fraction
            )));
        }
        if phase.kind == PhaseKind::Study && self.phase == PhaseKind::Initiation {
            self.study_start = self.now();
        }
        self.phase = phase.kind;
        self.shortage_fraction = match phase.kind {
            PhaseKind::Initiation => 0.0,
            PhaseKind::Study => phase.shortage_fraction,
        };
        let record = phase.kind == PhaseKind::Study;
        let mut out = PhaseOutcome {
            totals: PhaseTotals {
                queue_at_start: self.queue.len() as u64,
                ..PhaseTotals::default()
            },
            ..PhaseOutcome::default()
        };
        for _ in 0..self.config.steps_for(phase.years) {
            let (events, exits) = self.step()?;
            out.totals.absorb(&events);
            if record {
                for (w, outcome) in &exits {
                    out.ledger.push(self.fate(w, *outcome));
                }
            }
            on_step(self.step, &events)?;
        }
        out.totals.still_waiting = self.queue.len() as u64;
        if record {
            for w in &self.queue {
                out.ledger.push(self.fate(w, Outcome::Alive));
            }
        }
        out.totals.check_conservation()?;
        Ok(out)
    }
}

/// Draws a fresh recipient of arrival class `base` (never awaiting, never MXP).
fn new_recipient<R: Rng + ?Sized>(
    base: RecipientClass,
    id: i64,
    arrivals: &ArrivalLaw,
    survival: &SurvivalModels,
    rng: &mut R,
) -> Result<Item, SimError> {
    let p_await = arrivals.await_probability(&base);
    let awaits = p_await > 0.0 && rng.random::<f64>() < p_await;
    if awaits {
        let class = RecipientClass {
            awaits_mxp: true,
            ..base
        };
        let grant = sample_mxp_grant_time(&survival.grant, &class, uniform(rng))?;
        let law = survival.pre_exception_law(&class);
        let real = sample_patience_conditioned_above(&law, grant, uniform(rng))?;
        let predictive = sample_patience_conditioned_above(&law, grant, uniform(rng))?;
        Ok(Item {
            class: ClassId::Recipient(class),
            real_patience: real,
            predictive_patience: predictive,
            waiting_time: 0.0,
            mxp_timer: grant,
            id,
        })
    } else {
        let real = sample_patience(&survival.real_law(&base), uniform(rng))?;
        let predictive = sample_patience(&survival.predictive_law(&base), uniform(rng))?;
        Ok(Item {
            class: ClassId::Recipient(base),
            real_patience: real,
            predictive_patience: predictive,
            waiting_time: 0.0,
            mxp_timer: NOT_AWAITING,
            id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::model::{is_compatible, MeldBand};
    use rand::SeedableRng;

    fn prepared(steps_per_year: u32) -> (EngineConfig, Models) {
        let mut cfg = RunConfig::default();
        cfg.engine.steps_per_year = steps_per_year;
        let p = cfg.prepare().unwrap();
        (p.engine, p.models)
    }

    fn recipient(class: &str, real: f64, pred: f64, id: i64) -> Item {
        Item {
            class: class.parse().unwrap(),
            real_patience: real,
            predictive_patience: pred,
            waiting_time: 0.0,
            mxp_timer: NOT_AWAITING,
            id,
        }
    }

    #[test]
    fn empty_queue_actualizes_to_nothing() {
        let (cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut sim = Simulation::new(&cfg, &models, PolicyKind::Esdf, 1);
        let mut ev = StepEvents::default();
        assert!(sim.actualize(&mut ev).unwrap().is_empty());
        assert!(sim.queue().is_empty());
        assert_eq!(ev, StepEvents::default());
    }

    #[test]
    fn patience_crossing_zero_reneges() {
        let (cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut sim = Simulation::new(&cfg, &models, PolicyKind::Esdf, 1);
        sim.push_recipient(recipient("HCC/B1", 0.4 * cfg.dt(), 5.0, 7)).unwrap();
        let mut ev = StepEvents::default();
        let gone = sim.actualize(&mut ev).unwrap();
        assert_eq!(gone.len(), 1);
        assert_eq!(ev.reneged, vec![7]);
        assert!(sim.queue().is_empty());
    }

    #[test]
    fn elapsed_prediction_is_redrawn() {
        let (cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut sim = Simulation::new(&cfg, &models, PolicyKind::Esdf, 1);
        let mut it = recipient("CIRRH/B3", 3.0, 0.2 * cfg.dt(), 3);
        it.waiting_time = 1.5;
        sim.push_recipient(it).unwrap();
        let mut ev = StepEvents::default();
        assert!(sim.actualize(&mut ev).unwrap().is_empty());
        assert_eq!(ev.predictive_redraws, vec![3]);
        let it = &sim.queue()[0].item;
        assert!(it.predictive_patience > 0.0);
        assert!((it.waiting_time - 1.5 - cfg.dt()).abs() < 1e-12);
    }

    #[test]
    fn grant_turns_awaiting_patient_into_mxp() {
        let (_, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut rng = SimRng::seed_from_u64(5);
        let mut it = recipient("CIRRH/B2/awaiting", 1.0, 1.0, 1);
        it.waiting_time = 0.4;
        it.mxp_timer = 0.5;
        assert!(grant_mxp(&mut it.clone(), &models.survival, &mut rng).is_err());
        it.mxp_timer = -0.0001;
        let to = grant_mxp(&mut it, &models.survival, &mut rng).unwrap();
        assert_eq!(to.to_string(), "MXP/B2");
        assert_eq!(it.class.to_string(), "MXP/B2");
        assert_eq!(it.waiting_time, 0.0);
        assert!(it.mxp_timer <= -1.0);
        assert!(it.real_patience >= 0.0 && it.predictive_patience >= 0.0);
        assert!(is_compatible(&ClassId::Donor, &it.class).unwrap());
    }

    #[test]
    fn remeld_frequency_and_direction() {
        // a coarse clock makes the per-step probability large enough to measure
        let (cfg, models) = prepared(1);
        let kernel = MeldKernel::new(&models.transitions, &cfg);
        let p = cfg.meld_step_probability(0.5);
        assert!((p - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        let mut rng = SimRng::seed_from_u64(11);
        let n = 1_000_000;
        let mut moved = 0u32;
        let mut up = 0u32;
        let base = recipient("HCC/B3", 1.0, 1.0, 1);
        for _ in 0..n {
            let mut it = base.clone();
            if let Some((from, to)) = maybe_remeld(&mut it, &kernel, &models.survival, &mut rng).unwrap() {
                moved += 1;
                up += u32::from(to.meld > from.meld);
                assert_eq!(it.waiting_time, base.waiting_time);
            }
        }
        let freq = f64::from(moved) / f64::from(n);
        assert!((freq / p - 1.0).abs() < 0.005, "freq {freq} vs {p}");
        let up_share = f64::from(up) / f64::from(moved);
        assert!((up_share - 2.0 / 3.0).abs() < 0.01, "up share {up_share}");

        for _ in 0..20_000 {
            let mut top = recipient("CIRRH/B6", 1.0, 1.0, 2);
            if let Some((_, to)) = maybe_remeld(&mut top, &kernel, &models.survival, &mut rng).unwrap() {
                assert!(to.meld < MeldBand::B6);
            }
            let mut mxp = recipient("MXP/B1", 1.0, 1.0, 3);
            assert_eq!(maybe_remeld(&mut mxp, &kernel, &models.survival, &mut rng).unwrap(), None);
            assert_eq!(mxp.class.to_string(), "MXP/B1");
        }
    }

    fn donor_rate(shortage: f64) -> (f64, f64) {
        let (cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut sim = Simulation::new(&cfg, &models, PolicyKind::Esdf, 99);
        sim.phase = PhaseKind::Study;
        sim.shortage_fraction = shortage;
        let n = 1_000_000;
        let mut donors = 0u32;
        for _ in 0..n {
            match sim.incoming().unwrap() {
                Arrival::Donor(_) => donors += 1,
                Arrival::Recipient(w) => {
                    if w.item.awaits_exception() {
                        assert!(w.item.real_patience > w.item.mxp_timer);
                        assert!(w.item.predictive_patience > w.item.mxp_timer);
                    }
                }
                Arrival::Suppressed(_) => {}
            }
        }
        let expected = cfg.arrivals.probability(&ClassId::Donor) * (1.0 - shortage);
        (f64::from(donors) / f64::from(n), expected)
    }

    #[test]
    fn donor_thinning_rates() {
        for s in [0.0, 0.5] {
            let (rate, expected) = donor_rate(s);
            assert!((rate / expected - 1.0).abs() < 0.01, "s={s}: {rate} vs {expected}");
        }
    }

    #[test]
    fn step_cases() {
        let (cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut sim = Simulation::new(&cfg, &models, PolicyKind::Score, 3);
        // advance until a donor arrives at an empty queue
        loop {
            sim.queue.clear();
            let (ev, _) = sim.step().unwrap();
            match ev.arrival.as_ref().unwrap().kind {
                ArrivalKind::Donor => {
                    assert_eq!(ev.discarded.len(), 1);
                    assert!(sim.queue().is_empty());
                    break;
                }
                ArrivalKind::Recipient => {
                    let id = ev.arrival.unwrap().id;
                    assert_eq!(sim.queue().last().unwrap().item.id, id);
                }
                ArrivalKind::SuppressedDonor => unreachable!("initiation never suppresses"),
            }
        }
        // one compatible recipient plus one awaiting an exception
        loop {
            sim.queue.clear();
            sim.push_recipient(recipient("HCC/B2", 50.0, 50.0, 1_000_001)).unwrap();
            let mut waiting = recipient("OTHER/B1/awaiting", 50.0, 50.0, 1_000_002);
            waiting.mxp_timer = 10.0;
            sim.push_recipient(waiting).unwrap();
            let (ev, exits) = sim.step().unwrap();
            if ev.arrival.as_ref().unwrap().kind == ArrivalKind::Donor {
                assert_eq!(ev.transplanted, vec![(ev.arrival.unwrap().id, 1_000_001)]);
                assert_eq!(exits.len(), 1);
                assert_eq!(exits[0].1, Outcome::Ltx);
                assert_eq!(sim.queue().len(), 1);
                break;
            }
            assert_eq!(sim.queue().len(), 3);
        }
    }

    #[test]
    fn zero_length_phase_changes_nothing() {
        let (cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        let mut sim = Simulation::new(&cfg, &models, PolicyKind::Esdf, 8);
        sim.push_recipient(recipient("HCC/B1", 5.0, 5.0, 1)).unwrap();
        let before = sim.queue_state();
        let out = sim.run_phase(PhaseConfig::initiation(0.0)).unwrap();
        assert!(out.ledger.is_empty());
        assert_eq!(sim.queue_state(), before);
    }

    fn short_config() -> (EngineConfig, Models) {
        let (mut cfg, models) = prepared(DEFAULT_STEPS_PER_YEAR);
        cfg.initiation_years = 3.0;
        cfg.study_years = 2.0;
        cfg.incident_window_years = 1.0;
        (cfg, models)
    }

    fn two_phase(cfg: &EngineConfig, models: &Models, policy: PolicyKind, s: f64) -> (PhaseOutcome, Vec<StepEvents>) {
        let mut sim = Simulation::new(cfg, models, policy, 2024);
        let init = sim.run_phase(PhaseConfig::initiation(cfg.initiation_years)).unwrap();
        assert!(init.ledger.is_empty());
        assert!(init.totals.still_waiting > 0);
        let mut log = Vec::new();
        let out = sim
            .run_phase_with(PhaseConfig::study(cfg.study_years, s), |_, e| {
                log.push(e.clone());
                Ok(())
            })
            .unwrap();
        // queue order follows arrival order
        let ids: Vec<i64> = sim.queue().iter().map(|w| w.item.id).collect();
        let keys: Vec<(bool, i64)> = ids.iter().map(|&i| (i > 0, i.abs())).collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]), "queue order broken");
        assert!(sim.queue().iter().all(|w| w.item.real_patience > 0.0 || w.item.awaits_exception()));
        (out, log)
    }

    #[test]
    fn phases_conserve_items_and_respect_awaiting() {
        let (cfg, models) = short_config();
        let (out, log) = two_phase(&cfg, &models, PolicyKind::Esdf, 0.3);
        out.totals.check_conservation().unwrap();
        assert!(out.totals.suppressed_donors > 0);
        for r in &out.ledger {
            if r.outcome != Outcome::Alive {
                assert!(!r.initial_class.awaits_mxp, "{r:?}");
            }
            assert!(r.incident != r.prevalent() || !r.incident);
        }
        for e in &log {
            let mut ids: Vec<i64> = e.reneged.clone();
            ids.extend(e.transplanted.iter().map(|p| p.1));
            let n = ids.len();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), n);
        }
    }

    #[test]
    fn runs_are_reproducible_and_policy_swaps_are_paired() {
        let (cfg, models) = short_config();
        let (a, log_a) = two_phase(&cfg, &models, PolicyKind::Esdf, 0.15);
        let (b, _) = two_phase(&cfg, &models, PolicyKind::Esdf, 0.15);
        assert_eq!(a.ledger, b.ledger);
        assert_eq!(a.totals, b.totals);
        let (_, log_c) = two_phase(&cfg, &models, PolicyKind::Score, 0.15);
        let arrivals = |l: &[StepEvents]| l.iter().map(|e| e.arrival.clone()).collect::<Vec<_>>();
        assert_eq!(arrivals(&log_a), arrivals(&log_c));
    }
}
