//! Scenario matrix execution and endpoint statistics (crude DDTS/LTx rates over
//! the incident cohort, dispersion of DDTS across indications).

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    EngineConfig, FateRecord, Models, Outcome, PhaseConfig, PhaseTotals, Simulation, StepEvents,
};
use crate::error::SimError;
use crate::model::{Indication, MeldBand};
use crate::policy::PolicyKind;
use crate::rng::replication_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("DDTS rate undefined for {0} (empty cohort)")]
    UndefinedRate(Indication),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub policy: PolicyKind,
    pub shortage_fraction: f64,
    pub replications: u32,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn label(&self) -> String {
        format!("{}@{:.2}", self.policy, self.shortage_fraction)
    }
}

/// A reporting stratum: one indication or the whole cohort.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Stratum {
    Cirrh,
    Hcc,
    Mxp,
    Other,
    Overall,
}

impl Stratum {
    pub const ALL: [Stratum; 5] = [
        Stratum::Cirrh,
        Stratum::Hcc,
        Stratum::Mxp,
        Stratum::Other,
        Stratum::Overall,
    ];

    pub fn indication(self) -> Option<Indication> {
        match self {
            Stratum::Cirrh => Some(Indication::Cirrh),
            Stratum::Hcc => Some(Indication::Hcc),
            Stratum::Mxp => Some(Indication::Mxp),
            Stratum::Other => Some(Indication::Other),
            Stratum::Overall => None,
        }
    }

    pub fn contains(self, indication: Indication) -> bool {
        self.indication().is_none_or(|i| i == indication)
    }

    pub fn as_str(self) -> &'static str {
        match self.indication() {
            Some(i) => i.as_str(),
            None => "OVERALL",
        }
    }
}

impl From<Indication> for Stratum {
    fn from(i: Indication) -> Self {
        match i {
            Indication::Cirrh => Stratum::Cirrh,
            Indication::Hcc => Stratum::Hcc,
            Indication::Mxp => Stratum::Mxp,
            Indication::Other => Stratum::Other,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `(ddts, ltx, alive)` fractions of a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrudeRates {
    pub ddts: f64,
    pub ltx: f64,
    pub alive: f64,
}

/// Outcome counts of a cohort.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub ltx: u64,
    pub ddts: u64,
    pub alive: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.ltx + self.ddts + self.alive
    }

    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Ltx => self.ltx += 1,
            Outcome::Ddts => self.ddts += 1,
            Outcome::Alive => self.alive += 1,
        }
    }

    fn merge(&mut self, other: &OutcomeCounts) {
        self.ltx += other.ltx;
        self.ddts += other.ddts;
        self.alive += other.alive;
    }

    /// Crude rates, or `None` for an empty cohort.
    pub fn rates(&self) -> Option<CrudeRates> {
        let n = self.total();
        (n > 0).then(|| {
            let n = n as f64;
            CrudeRates {
                ddts: self.ddts as f64 / n,
                ltx: self.ltx as f64 / n,
                alive: self.alive as f64 / n,
            }
        })
    }
}

/// Crude rates over the incident-cohort members of `stratum`; `None` when the
/// stratum is empty.
pub fn crude_rates(ledger: &[FateRecord], stratum: Stratum) -> Option<CrudeRates> {
    let mut counts = OutcomeCounts::default();
    ledger
        .iter()
        .filter(|r| r.incident && stratum.contains(r.initial_class.indication))
        .for_each(|r| counts.add(r.outcome));
    counts.rates()
}

/// Population variance.
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Outcome counts per (indication, band) for one cohort.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    cells: [[OutcomeCounts; 6]; 4],
}

impl CohortTable {
    pub fn record(&mut self, r: &FateRecord) {
        let c = &r.initial_class;
        self.cells[c.indication.index()][c.meld.index()].add(r.outcome);
    }

    pub fn cell(&self, indication: Indication, band: MeldBand) -> OutcomeCounts {
        self.cells[indication.index()][band.index()]
    }

    pub fn stratum(&self, stratum: Stratum) -> OutcomeCounts {
        let mut acc = OutcomeCounts::default();
        for ind in Indication::ALL.into_iter().filter(|i| stratum.contains(*i)) {
            for row in &self.cells[ind.index()] {
                acc.merge(row);
            }
        }
        acc
    }

    pub fn band(&self, band: MeldBand) -> OutcomeCounts {
        let mut acc = OutcomeCounts::default();
        for ind in Indication::ALL {
            acc.merge(&self.cells[ind.index()][band.index()]);
        }
        acc
    }

    fn merge(&mut self, other: &CohortTable) {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
    }

    /// Population variance of the DDTS rates of CIRRH, HCC and OTHER.
    pub fn ddts_variance(&self) -> Result<f64, MetricsError> {
        let rates = Indication::DDTS_RELEVANT
            .into_iter()
            .map(|i| {
                self.stratum(i.into())
                    .rates()
                    .map(|r| r.ddts)
                    .ok_or(MetricsError::UndefinedRate(i))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(population_variance(&rates))
    }
}

/// Incident and prevalent cohort tables of one replication.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replication: u32,
    pub seed: u64,
    pub incident: CohortTable,
    pub prevalent: CohortTable,
    pub initiation: PhaseTotals,
    pub study: PhaseTotals,
}

impl ReplicationSummary {
    pub fn from_ledger(
        replication: u32,
        seed: u64,
        ledger: &[FateRecord],
        initiation: PhaseTotals,
        study: PhaseTotals,
    ) -> Self {
        let mut s = ReplicationSummary {
            replication,
            seed,
            initiation,
            study,
            ..Default::default()
        };
        for r in ledger {
            if r.incident {
                s.incident.record(r);
            } else if r.prevalent() {
                s.prevalent.record(r);
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortCell {
    pub indication: Indication,
    pub meld: MeldBand,
    /// Mean incident-cohort size over replications.
    pub mean_count: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRates {
    pub stratum: Stratum,
    /// Outcome counts pooled over replications.
    pub counts: OutcomeCounts,
    pub mean_cohort_size: f64,
    /// `None` when the stratum is empty.
    pub rates: Option<CrudeRates>,
}

/// Aggregated outcome of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub spec: ScenarioSpec,
    pub cohort: Vec<CohortCell>,
    pub rates: Vec<StratumRates>,
    /// Rates over recipients already waiting when the study phase began.
    pub prevalent_rates: Vec<StratumRates>,
    /// Population variance of the pooled CIRRH/HCC/OTHER DDTS rates.
    pub ddts_variance: Option<f64>,
    /// Mean of the per-replication DDTS variances.
    pub mean_replication_ddts_variance: Option<f64>,
    pub replications: Vec<ReplicationSummary>,
}

fn stratum_rates(table: &CohortTable, replications: u32) -> Vec<StratumRates> {
    Stratum::ALL
        .into_iter()
        .map(|stratum| {
            let counts = table.stratum(stratum);
            StratumRates {
                stratum,
                counts,
                mean_cohort_size: counts.total() as f64 / f64::from(replications.max(1)),
                rates: counts.rates(),
            }
        })
        .collect()
}

impl ScenarioResult {
    /// Deterministic fold over replication summaries sorted by replication index.
    pub fn aggregate(spec: ScenarioSpec, mut reps: Vec<ReplicationSummary>) -> Self {
        reps.sort_by_key(|r| r.replication);
        let n = reps.len() as u32;
        let mut incident = CohortTable::default();
        let mut prevalent = CohortTable::default();
        for r in &reps {
            incident.merge(&r.incident);
            prevalent.merge(&r.prevalent);
        }
        let mut cohort = Vec::new();
        for ind in Indication::ALL {
            for band in MeldBand::ALL {
                if ind == Indication::Mxp && !band.allows_exception() {
                    continue;
                }
                cohort.push(CohortCell {
                    indication: ind,
                    meld: band,
                    mean_count: incident.cell(ind, band).total() as f64 / f64::from(n.max(1)),
                });
            }
        }
        let per_rep: Option<Vec<f64>> =
            reps.iter().map(|r| r.incident.ddts_variance().ok()).collect();
        ScenarioResult {
            spec,
            cohort,
            rates: stratum_rates(&incident, n),
            prevalent_rates: stratum_rates(&prevalent, n),
            ddts_variance: incident.ddts_variance().ok(),
            mean_replication_ddts_variance: per_rep
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64),
            replications: reps,
        }
    }

    pub fn stratum(&self, stratum: Stratum) -> Option<&StratumRates> {
        self.rates.iter().find(|r| r.stratum == stratum)
    }

    pub fn rates_for(&self, stratum: Stratum) -> Option<CrudeRates> {
        self.stratum(stratum).and_then(|s| s.rates)
    }

    pub fn mean_cohort(&self, indication: Indication, band: MeldBand) -> f64 {
        self.cohort
            .iter()
            .find(|c| c.indication == indication && c.meld == band)
            .map_or(0.0, |c| c.mean_count)
    }

    pub fn mean_indication_cohort(&self, indication: Indication) -> f64 {
        self.stratum(indication.into())
            .map_or(0.0, |s| s.mean_cohort_size)
    }

    pub fn mean_band_cohort(&self, band: MeldBand) -> f64 {
        Indication::ALL
            .into_iter()
            .map(|i| self.mean_cohort(i, band))
            .sum()
    }
}

/// Population variance of the three DDTS-relevant indication rates of a result.
pub fn ddts_variance(result: &ScenarioResult) -> Result<f64, MetricsError> {
    let rates = Indication::DDTS_RELEVANT
        .into_iter()
        .map(|i| {
            result
                .rates_for(i.into())
                .map(|r| r.ddts)
                .ok_or(MetricsError::UndefinedRate(i))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(population_variance(&rates))
}

/// Receives per-step events of a study phase: `(scenario index, replication, step, events)`.
pub type EventSink<'s> = dyn Fn(usize, u32, u64, &StepEvents) -> Result<(), SimError> + Sync + 's;

/// Runs every scenario. Replications sharing a policy and seed share their
/// initiation phase, which never applies shortage.
pub fn run_scenarios(
    specs: &[ScenarioSpec],
    config: &EngineConfig,
    models: &Models,
) -> Result<Vec<ScenarioResult>, SimError> {
    run_scenarios_with(specs, config, models, None)
}

pub fn run_scenarios_with(
    specs: &[ScenarioSpec],
    config: &EngineConfig,
    models: &Models,
    events: Option<&EventSink<'_>>,
) -> Result<Vec<ScenarioResult>, SimError> {
    for s in specs {
        if s.replications == 0 {
            return Err(SimError::InvalidConfig(format!(
                "scenario {} needs at least one replication",
                s.label()
            )));
        }
    }
    // one job per (policy, seed, replication), covering every matching scenario
    let mut jobs: BTreeMap<(PolicyKind, u64, u32), Vec<usize>> = BTreeMap::new();
    for (k, s) in specs.iter().enumerate() {
        for r in 0..s.replications {
            jobs.entry((s.policy, s.seed, r)).or_default().push(k);
        }
    }
    let jobs: Vec<_> = jobs.into_iter().collect();
    let outputs = jobs
        .par_iter()
        .map(|((policy, master, r), scenario_ids)| {
            let seed = replication_seed(*master, *r);
            let mut warm = Simulation::new(config, models, *policy, seed);
            let init = warm.run_phase(PhaseConfig::initiation(config.initiation_years))?;
            scenario_ids
                .iter()
                .map(|&k| {
                    let mut sim = warm.clone();
                    let phase = PhaseConfig::study(config.study_years, specs[k].shortage_fraction);
                    let out = match events {
                        Some(sink) => sim.run_phase_with(phase, |step, e| sink(k, *r, step, e))?,
                        None => sim.run_phase(phase)?,
                    };
                    Ok((
                        k,
                        ReplicationSummary::from_ledger(
                            *r,
                            seed,
                            &out.ledger,
                            init.totals,
                            out.totals,
                        ),
                    ))
                })
                .collect::<Result<Vec<_>, SimError>>()
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let mut per_scenario: Vec<Vec<ReplicationSummary>> = vec![Vec::new(); specs.len()];
    for (k, summary) in outputs.into_iter().flatten() {
        per_scenario[k].push(summary);
    }
    Ok(specs
        .iter()
        .zip(per_scenario)
        .map(|(spec, reps)| ScenarioResult::aggregate(*spec, reps))
        .collect())
}
