//! Matching policies: EDF, ESDF and SCORE.
//!
//! A policy is consulted only when an organ arrives; it picks one compatible
//! waiting recipient or none. Ties go to the earliest arrival (lowest index).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PolicyError;
use crate::model::{CompatibilityGraph, Indication, Item, MeldBand, RecipientClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PolicyKind {
    /// Earliest deadline first: least remaining real patience.
    Edf,
    /// Earliest simulated deadline first: least remaining predictive patience.
    Esdf,
    /// Highest class/waiting-time score.
    Score,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Edf, PolicyKind::Esdf, PolicyKind::Score];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Edf => "EDF",
            PolicyKind::Esdf => "ESDF",
            PolicyKind::Score => "SCORE",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "EDF" => Ok(PolicyKind::Edf),
            "ESDF" => Ok(PolicyKind::Esdf),
            "SCORE" => Ok(PolicyKind::Score),
            _ => Err(PolicyError::UnknownPolicy(s.to_string())),
        }
    }
}

/// Simplified allocation score: `base(band) + slope(indication) * waiting_time`,
/// plus a fixed bonus for MELD-exception patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFunction {
    /// Points per MELD band, B1..B6.
    #[serde(default = "default_base_points")]
    pub base_points: [f64; 6],
    /// Points per year on the list, by indication.
    #[serde(default)]
    pub waiting_slope: WaitingSlopes,
    #[serde(default = "default_mxp_bonus")]
    pub mxp_bonus: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaitingSlopes {
    #[serde(rename = "CIRRH", default)]
    pub cirrh: f64,
    #[serde(rename = "HCC", default = "default_slope")]
    pub hcc: f64,
    #[serde(rename = "MXP", default = "default_slope")]
    pub mxp: f64,
    #[serde(rename = "OTHER", default = "default_slope")]
    pub other: f64,
}

fn default_base_points() -> [f64; 6] {
    [100.0, 280.0, 460.0, 640.0, 820.0, 1000.0]
}

fn default_slope() -> f64 {
    300.0
}

fn default_mxp_bonus() -> f64 {
    725.0
}

impl Default for WaitingSlopes {
    fn default() -> Self {
        WaitingSlopes {
            cirrh: 0.0,
            hcc: default_slope(),
            mxp: default_slope(),
            other: default_slope(),
        }
    }
}

impl WaitingSlopes {
    pub fn get(&self, indication: Indication) -> f64 {
        match indication {
            Indication::Cirrh => self.cirrh,
            Indication::Hcc => self.hcc,
            Indication::Mxp => self.mxp,
            Indication::Other => self.other,
        }
    }
}

impl Default for ScoreFunction {
    fn default() -> Self {
        ScoreFunction {
            base_points: default_base_points(),
            waiting_slope: WaitingSlopes::default(),
            mxp_bonus: default_mxp_bonus(),
        }
    }
}

impl ScoreFunction {
    pub fn base(&self, band: MeldBand) -> f64 {
        self.base_points[band.index()]
    }

    /// Multiplies every parameter by `factor`.
    pub fn scaled(&self, factor: f64) -> ScoreFunction {
        let s = &self.waiting_slope;
        ScoreFunction {
            base_points: self.base_points.map(|p| p * factor),
            waiting_slope: WaitingSlopes {
                cirrh: s.cirrh * factor,
                hcc: s.hcc * factor,
                mxp: s.mxp * factor,
                other: s.other * factor,
            },
            mxp_bonus: self.mxp_bonus * factor,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let s = &self.waiting_slope;
        let all = self
            .base_points
            .iter()
            .chain([&s.cirrh, &s.hcc, &s.mxp, &s.other, &self.mxp_bonus]);
        for v in all {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(format!("score parameters must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

/// Score of a recipient; depends only on its class and waiting time.
pub fn score(f: &ScoreFunction, class: &RecipientClass, waiting_time: f64) -> f64 {
    let bonus = if class.indication == Indication::Mxp {
        f.mxp_bonus
    } else {
        0.0
    };
    f.base(class.meld) + f.waiting_slope.get(class.indication) * waiting_time + bonus
}

/// Index of the first compatible item minimising `key`.
fn argmin_compatible<'a>(
    queue: impl IntoIterator<Item = &'a Item>,
    graph: &CompatibilityGraph,
    key: impl Fn(&RecipientClass, &Item) -> f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, item) in queue.into_iter().enumerate() {
        let Some(class) = item.recipient_class() else {
            continue;
        };
        if !graph.accepts(class) {
            continue;
        }
        let k = key(class, item);
        if best.is_none_or(|(_, b)| k < b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

fn real_deadline(item: &Item) -> f64 {
    item.real_patience
}

fn simulated_deadline(item: &Item) -> f64 {
    item.predictive_patience
}

/// Picks the recipient (0-based queue index) that receives the incoming organ,
/// or `None` when no compatible recipient is waiting.
pub fn choose_match<'a>(
    kind: PolicyKind,
    queue: impl IntoIterator<Item = &'a Item>,
    incoming: &Item,
    graph: &CompatibilityGraph,
    score_fn: &ScoreFunction,
) -> Result<Option<usize>, PolicyError> {
    if !incoming.class.is_donor() {
        return Err(PolicyError::IncomingNotDonor(incoming.class.to_string()));
    }
    Ok(match kind {
        PolicyKind::Edf => argmin_compatible(queue, graph, |_, it| real_deadline(it)),
        PolicyKind::Esdf => argmin_compatible(queue, graph, |_, it| simulated_deadline(it)),
        PolicyKind::Score => {
            argmin_compatible(queue, graph, |c, it| -score(score_fn, c, it.waiting_time))
        }
    })
}
