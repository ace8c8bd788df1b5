//! Run configuration: TOML file with defaults for every absent key.
//!
//! ```toml
//! seed = 20240611
//! output_dir = "results"
//!
//! [engine]
//! steps_per_year = 3108
//!
//! [scenarios]
//! policies = ["ESDF", "SCORE"]
//! shortage_levels = [0.0, 0.15, 0.30, 0.50]
//! replications = 10
//!
//! [arrivals.probability]      # per-step class of the single arrival
//! DONOR = 0.3954...
//! "CIRRH/B1" = 0.0740...
//!
//! [arrivals.await_probability] # chance that an arrival awaits a MELD exception
//! "CIRRH/B1" = 0.5652...
//!
//! [survival.cox.CIRRH]        # patience: Weibull baseline, one beta per band
//! baseline = { scale = 6.0, shape = 0.6 }
//! beta = [0.0, 0.2, 0.4, 0.6, 0.9, 1.3]
//! ```
//!
//! Missing Cox or grant strata fall back to their defaults one indication at
//! a time. Arrival tables replace the default table as a whole.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{ArrivalLaw, EngineConfig, Models, DEFAULT_STEPS_PER_YEAR};
use crate::error::ConfigError;
use crate::metrics::ScenarioSpec;
use crate::model::{ClassId, Indication, MeldBand, RecipientClass};
use crate::policy::{PolicyKind, ScoreFunction};
use crate::survival::{
    CoxModel, CoxStratum, EmpiricalLaw, MxpGrantModel, SurvivalModels, WeibullBaseline,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; replication seeds derive from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub engine: EngineSection,
    pub scenarios: ScenarioMatrix,
    pub arrivals: ArrivalSection,
    pub survival: SurvivalSection,
    pub score: ScoreFunction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub steps_per_year: u32,
    pub initiation_years: f64,
    pub study_years: f64,
    pub incident_window_years: f64,
    /// Mean time between MELD-band changes, in years.
    pub mean_meld_change_time: f64,
    /// Share of MELD moves that go to a higher (worse) band.
    pub up_share: f64,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            steps_per_year: DEFAULT_STEPS_PER_YEAR,
            initiation_years: 15.0,
            study_years: 10.0,
            incident_window_years: 2.0,
            mean_meld_change_time: 2.0,
            up_share: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioMatrix {
    pub policies: Vec<PolicyKind>,
    pub shortage_levels: Vec<f64>,
    pub replications: u32,
}

impl Default for ScenarioMatrix {
    fn default() -> Self {
        ScenarioMatrix {
            policies: vec![PolicyKind::Esdf, PolicyKind::Score],
            shortage_levels: vec![0.0, 0.15, 0.30, 0.50],
            replications: 10,
        }
    }
}

/// Arrival tables keyed by class name (`DONOR`, `CIRRH/B1`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrivalSection {
    pub probability: BTreeMap<String, f64>,
    pub await_probability: BTreeMap<String, f64>,
}

/// Expected arrivals over two years: 2458 donors and 3758 patients.
const TWO_YEAR_DONORS: f64 = 2458.0;

/// Two-year arrival counts per band B1..B6: (non-awaiting, awaiting an exception).
const TWO_YEAR_PATIENTS: [(Indication, [(f64, f64); 6]); 3] = [
    (
        Indication::Cirrh,
        [
            (200.0, 260.0),
            (180.0, 160.0),
            (190.0, 80.0),
            (230.0, 0.0),
            (250.0, 0.0),
            (284.0, 0.0),
        ],
    ),
    (
        Indication::Hcc,
        [
            (480.0, 0.0),
            (320.0, 0.0),
            (220.0, 0.0),
            (130.0, 0.0),
            (90.0, 0.0),
            (60.0, 0.0),
        ],
    ),
    (
        Indication::Other,
        [
            (100.0, 140.0),
            (70.0, 90.0),
            (56.0, 54.0),
            (40.0, 0.0),
            (40.0, 0.0),
            (34.0, 0.0),
        ],
    ),
];

impl Default for ArrivalSection {
    fn default() -> Self {
        let patients: f64 = TWO_YEAR_PATIENTS
            .iter()
            .flat_map(|(_, bands)| bands.iter().map(|(n, a)| n + a))
            .sum();
        let total = TWO_YEAR_DONORS + patients;
        let mut probability = BTreeMap::new();
        let mut await_probability = BTreeMap::new();
        probability.insert(ClassId::Donor.to_string(), TWO_YEAR_DONORS / total);
        for (ind, bands) in TWO_YEAR_PATIENTS {
            for (band, (n, a)) in MeldBand::ALL.into_iter().zip(bands) {
                let class = RecipientClass {
                    indication: ind,
                    meld: band,
                    awaits_mxp: false,
                };
                probability.insert(class.to_string(), (n + a) / total);
                if a > 0.0 {
                    await_probability.insert(class.to_string(), a / (n + a));
                }
            }
        }
        ArrivalSection {
            probability,
            await_probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalSection {
    /// Real patience (and predictive patience outside MXP), per indication.
    pub cox: BTreeMap<Indication, CoxStratum>,
    /// Predictive patience of MXP patients: survival at months 0, 1, 2, ...
    pub mxp_predictive_monthly: Vec<f64>,
    /// Time until an awaited exception is granted, per indication.
    pub grant: BTreeMap<Indication, CoxStratum>,
}

fn stratum(scale: f64, shape: f64, beta: [f64; 6]) -> CoxStratum {
    CoxStratum {
        baseline: WeibullBaseline { scale, shape },
        beta,
    }
}

fn default_cox(ind: Indication) -> CoxStratum {
    match ind {
        Indication::Cirrh | Indication::Other => {
            stratum(6.0, 0.6, [0.0, 0.2, 0.4, 0.6, 0.9, 1.3])
        }
        Indication::Hcc => stratum(6.0, 0.6, [0.0, 0.1, 0.3, 0.5, 0.7, 1.0]),
        Indication::Mxp => stratum(20.0, 0.8, [0.0; 6]),
    }
}

fn default_grant(ind: Indication) -> Option<CoxStratum> {
    // Weibull(scale 0.39, shape 1.5): mean grant time about 0.35 years
    ind.may_await_exception()
        .then(|| stratum(0.39, 1.5, [0.0; 6]))
}

fn default_mxp_predictive() -> Vec<f64> {
    // exponential with a six-month mean, sampled monthly over four years
    (0..=48).map(|m| (-f64::from(m) / 6.0).exp()).collect()
}

impl Default for SurvivalSection {
    fn default() -> Self {
        let mut s = SurvivalSection {
            cox: BTreeMap::new(),
            mxp_predictive_monthly: default_mxp_predictive(),
            grant: BTreeMap::new(),
        };
        s.fill_defaults();
        s
    }
}

impl SurvivalSection {
    fn fill_defaults(&mut self) {
        for ind in Indication::ALL {
            self.cox.entry(ind).or_insert_with(|| default_cox(ind));
            if let Some(g) = default_grant(ind) {
                self.grant.entry(ind).or_insert(g);
            }
        }
    }

    pub fn models(&self) -> Result<SurvivalModels, ConfigError> {
        let cox = CoxModel {
            strata: self.cox.clone(),
        };
        cox.validate()
            .map_err(|e| ConfigError::invalid("survival.cox", e.to_string()))?;
        let mxp_predictive = EmpiricalLaw::monthly(self.mxp_predictive_monthly.clone())
            .map_err(|e| ConfigError::invalid("survival.mxp_predictive_monthly", e.to_string()))?;
        let grant = MxpGrantModel {
            strata: self.grant.clone(),
        };
        grant
            .validate()
            .map_err(|e| ConfigError::invalid("survival.grant", e.to_string()))?;
        Ok(SurvivalModels {
            cox,
            mxp_predictive,
            grant,
        })
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 20240611,
            output_dir: PathBuf::from("results"),
            engine: EngineSection::default(),
            scenarios: ScenarioMatrix::default(),
            arrivals: ArrivalSection::default(),
            survival: SurvivalSection::default(),
            score: ScoreFunction::default(),
        }
    }
}

/// Engine inputs built from a validated config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub engine: EngineConfig,
    pub models: Models,
}

fn check_unit(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, format!("{v} is not a probability")))
    }
}

fn check_positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, format!("{v} must be positive and finite")))
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.survival.fill_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.engine;
        if e.steps_per_year == 0 {
            return Err(ConfigError::invalid("engine.steps_per_year", "must be at least 1"));
        }
        check_positive("engine.study_years", e.study_years)?;
        check_positive("engine.incident_window_years", e.incident_window_years)?;
        if !(e.initiation_years.is_finite() && e.initiation_years >= 0.0) {
            return Err(ConfigError::invalid(
                "engine.initiation_years",
                format!("{} must be non-negative", e.initiation_years),
            ));
        }
        check_positive("engine.mean_meld_change_time", e.mean_meld_change_time)?;
        check_unit("engine.up_share", e.up_share)?;

        let s = &self.scenarios;
        if s.policies.is_empty() {
            return Err(ConfigError::invalid("scenarios.policies", "no policy given"));
        }
        if s.shortage_levels.is_empty() {
            return Err(ConfigError::invalid("scenarios.shortage_levels", "no level given"));
        }
        for &v in &s.shortage_levels {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(ConfigError::invalid(
                    "scenarios.shortage_levels",
                    format!("{v} is outside [0, 1)"),
                ));
            }
        }
        if s.replications == 0 {
            return Err(ConfigError::invalid("scenarios.replications", "must be at least 1"));
        }
        self.arrival_law()?;
        self.survival.models()?;
        self.score
            .validate()
            .map_err(|r| ConfigError::invalid("score", r))?;
        Ok(())
    }

    pub fn arrival_law(&self) -> Result<ArrivalLaw, ConfigError> {
        let mut probabilities = BTreeMap::new();
        for (name, &p) in &self.arrivals.probability {
            let key = format!("arrivals.probability.\"{name}\"");
            let class: ClassId = name
                .parse()
                .map_err(|e: crate::error::ModelError| ConfigError::invalid(&key, e.to_string()))?;
            check_unit(&key, p)?;
            probabilities.insert(class, p);
        }
        let mut awaiting = BTreeMap::new();
        for (name, &p) in &self.arrivals.await_probability {
            let key = format!("arrivals.await_probability.\"{name}\"");
            let class: RecipientClass = name
                .parse()
                .map_err(|e: crate::error::ModelError| ConfigError::invalid(&key, e.to_string()))?;
            check_unit(&key, p)?;
            awaiting.insert(class, p);
        }
        ArrivalLaw::new(&probabilities, &awaiting)
            .map_err(|e| ConfigError::invalid("arrivals.probability", e.to_string()))
    }

    /// Builds the engine configuration and the model bundle.
    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let arrivals = self.arrival_law()?;
        let survival = self.survival.models()?;
        let models = Models::build(
            survival,
            &arrivals,
            self.engine.mean_meld_change_time,
            self.engine.up_share,
            self.score.clone(),
        )
        .map_err(|e| ConfigError::invalid("arrivals.probability", e.to_string()))?;
        let engine = EngineConfig {
            steps_per_year: self.engine.steps_per_year,
            arrivals,
            initiation_years: self.engine.initiation_years,
            study_years: self.engine.study_years,
            incident_window_years: self.engine.incident_window_years,
        };
        Ok(Prepared { engine, models })
    }

    /// Scenario matrix, policy-major.
    pub fn scenarios(&self) -> Vec<ScenarioSpec> {
        let s = &self.scenarios;
        s.policies
            .iter()
            .flat_map(|&policy| {
                s.shortage_levels.iter().map(move |&shortage_fraction| ScenarioSpec {
                    policy,
                    shortage_fraction,
                    replications: s.replications,
                    seed: self.seed,
                })
            })
            .collect()
    }

    /// SHA-256 of the canonical JSON form of every field that affects results
    /// (the output directory is excluded).
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    RunConfig::from_toml_str(&text)
}
