//! Class space, compatibility and transition graphs, and the item/queue data model.
//!
//! Time is measured in years throughout the crate.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Liver-failure indication of a recipient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Indication {
    Cirrh,
    Hcc,
    Mxp,
    Other,
}

impl Indication {
    /// Canonical order: CIRRH < HCC < MXP < OTHER.
    pub const ALL: [Indication; 4] = [
        Indication::Cirrh,
        Indication::Hcc,
        Indication::Mxp,
        Indication::Other,
    ];

    /// The indications for which death on the list is the equity criterion.
    pub const DDTS_RELEVANT: [Indication; 3] =
        [Indication::Cirrh, Indication::Hcc, Indication::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Indication::Cirrh => "CIRRH",
            Indication::Hcc => "HCC",
            Indication::Mxp => "MXP",
            Indication::Other => "OTHER",
        }
    }

    /// Whether recipients of this indication may arrive awaiting a MELD exception.
    pub fn may_await_exception(self) -> bool {
        matches!(self, Indication::Cirrh | Indication::Other)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Indication {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indication {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CIRRH" => Ok(Indication::Cirrh),
            "HCC" => Ok(Indication::Hcc),
            "MXP" => Ok(Indication::Mxp),
            "OTHER" => Ok(Indication::Other),
            _ => Err(ModelError::UnknownIndication(s.to_string())),
        }
    }
}

/// MELD score band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MeldBand {
    B1,
    B2,
    B3,
    B4,
    B5,
    B6,
}

impl MeldBand {
    pub const ALL: [MeldBand; 6] = [
        MeldBand::B1,
        MeldBand::B2,
        MeldBand::B3,
        MeldBand::B4,
        MeldBand::B5,
        MeldBand::B6,
    ];

    /// Bands in which MELD exceptions exist.
    pub const EXCEPTION: [MeldBand; 3] = [MeldBand::B1, MeldBand::B2, MeldBand::B3];

    pub fn lower(self) -> u8 {
        match self {
            MeldBand::B1 => 6,
            MeldBand::B2 => 15,
            MeldBand::B3 => 20,
            MeldBand::B4 => 26,
            MeldBand::B5 => 31,
            MeldBand::B6 => 36,
        }
    }

    pub fn upper(self) -> u8 {
        match self {
            MeldBand::B1 => 14,
            MeldBand::B2 => 19,
            MeldBand::B3 => 25,
            MeldBand::B4 => 30,
            MeldBand::B5 => 35,
            MeldBand::B6 => 40,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<MeldBand> {
        MeldBand::ALL.get(i).copied()
    }

    pub fn allows_exception(self) -> bool {
        self <= MeldBand::B3
    }

    /// Band containing an integer MELD score.
    pub fn from_score(score: u8) -> Option<MeldBand> {
        MeldBand::ALL
            .into_iter()
            .find(|b| (b.lower()..=b.upper()).contains(&score))
    }

    pub fn label(self) -> String {
        format!("[{},{}]", self.lower(), self.upper())
    }
}

impl fmt::Display for MeldBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// A recipient class: indication, MELD band and whether a MELD exception is awaited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecipientClass {
    pub indication: Indication,
    pub meld: MeldBand,
    pub awaits_mxp: bool,
}

impl RecipientClass {
    /// Validating constructor.
    pub fn new(
        indication: Indication,
        meld: MeldBand,
        awaits_mxp: bool,
    ) -> Result<Self, ModelError> {
        let class = RecipientClass {
            indication,
            meld,
            awaits_mxp,
        };
        if class.is_valid() {
            Ok(class)
        } else {
            Err(ModelError::InvalidClass(class.to_string()))
        }
    }

    pub fn is_valid(&self) -> bool {
        match self.indication {
            Indication::Mxp => self.meld.allows_exception() && !self.awaits_mxp,
            Indication::Hcc => !self.awaits_mxp,
            Indication::Cirrh | Indication::Other => {
                !self.awaits_mxp || self.meld.allows_exception()
            }
        }
    }

    /// Classes with the same indication and awaiting flag in a strictly higher band.
    pub fn up_set(&self) -> Vec<RecipientClass> {
        self.same_track(|b| b > self.meld)
    }

    /// Classes with the same indication and awaiting flag in a strictly lower band.
    pub fn down_set(&self) -> Vec<RecipientClass> {
        self.same_track(|b| b < self.meld)
    }

    fn same_track(&self, keep: impl Fn(MeldBand) -> bool) -> Vec<RecipientClass> {
        if self.indication == Indication::Mxp || self.awaits_mxp {
            return Vec::new();
        }
        MeldBand::ALL
            .into_iter()
            .filter(|&b| keep(b))
            .map(|meld| RecipientClass { meld, ..*self })
            .collect()
    }

    /// Class reached when the awaited MELD exception is granted.
    pub fn granted(&self) -> Option<RecipientClass> {
        self.awaits_mxp.then_some(RecipientClass {
            indication: Indication::Mxp,
            meld: self.meld,
            awaits_mxp: false,
        })
    }

    /// The same class with the awaiting flag cleared.
    pub fn without_await(&self) -> RecipientClass {
        RecipientClass {
            awaits_mxp: false,
            ..*self
        }
    }

    /// Whether this class takes part in MELD-band transitions.
    pub fn meld_mobile(&self) -> bool {
        self.indication != Indication::Mxp && !self.awaits_mxp
    }
}

impl fmt::Display for RecipientClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.indication, self.meld)?;
        if self.awaits_mxp {
            f.write_str("/awaiting")?;
        }
        Ok(())
    }
}

impl FromStr for RecipientClass {
    type Err = ModelError;

    /// Parses `CIRRH/B4` or `OTHER/B2/awaiting`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').map(str::trim).collect();
        let bad = || ModelError::InvalidClass(s.to_string());
        let (ind, band, awaiting) = match parts.as_slice() {
            [i, b] => (*i, *b, false),
            [i, b, a] if a.eq_ignore_ascii_case("awaiting") => (*i, *b, true),
            _ => return Err(bad()),
        };
        let indication = ind.parse()?;
        let meld = match band.to_ascii_uppercase().as_str() {
            "B1" => MeldBand::B1,
            "B2" => MeldBand::B2,
            "B3" => MeldBand::B3,
            "B4" => MeldBand::B4,
            "B5" => MeldBand::B5,
            "B6" => MeldBand::B6,
            _ => return Err(bad()),
        };
        RecipientClass::new(indication, meld, awaiting)
    }
}

/// A vertex of the class graph: the single donor class or a recipient class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassId {
    Donor,
    Recipient(RecipientClass),
}

impl ClassId {
    pub fn recipient(&self) -> Option<&RecipientClass> {
        match self {
            ClassId::Donor => None,
            ClassId::Recipient(r) => Some(r),
        }
    }

    pub fn is_donor(&self) -> bool {
        matches!(self, ClassId::Donor)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassId::Donor => f.write_str("DONOR"),
            ClassId::Recipient(r) => r.fmt(f),
        }
    }
}

impl FromStr for ClassId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("donor") {
            Ok(ClassId::Donor)
        } else {
            s.parse().map(ClassId::Recipient)
        }
    }
}

/// All 27 valid recipient classes in canonical order.
pub fn recipient_classes() -> Vec<RecipientClass> {
    let mut out = Vec::with_capacity(27);
    for indication in Indication::ALL {
        for meld in MeldBand::ALL {
            for awaits_mxp in [false, true] {
                let class = RecipientClass {
                    indication,
                    meld,
                    awaits_mxp,
                };
                if class.is_valid() {
                    out.push(class);
                }
            }
        }
    }
    out
}

/// The donor class followed by the 27 recipient classes, in canonical order.
pub fn enumerate_classes() -> Vec<ClassId> {
    std::iter::once(ClassId::Donor)
        .chain(recipient_classes().into_iter().map(ClassId::Recipient))
        .collect()
}

/// Bipartite compatibility graph `R1 x D`: every non-awaiting recipient is
/// compatible with the single donor class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityGraph;

impl CompatibilityGraph {
    pub fn is_compatible(&self, donor: &ClassId, recipient: &ClassId) -> Result<bool, ModelError> {
        is_compatible(donor, recipient)
    }

    #[inline]
    pub(crate) fn accepts(&self, recipient: &RecipientClass) -> bool {
        !recipient.awaits_mxp
    }

    pub fn edges(&self) -> Vec<(ClassId, RecipientClass)> {
        recipient_classes()
            .into_iter()
            .filter(|r| self.accepts(r))
            .map(|r| (ClassId::Donor, r))
            .collect()
    }
}

pub fn is_compatible(donor: &ClassId, recipient: &ClassId) -> Result<bool, ModelError> {
    if !donor.is_donor() {
        return Err(ModelError::NotADonor(donor.to_string()));
    }
    match recipient {
        ClassId::Donor => Err(ModelError::NotARecipient),
        ClassId::Recipient(r) => Ok(!r.awaits_mxp),
    }
}

/// One directed class transition with its rate per year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: RecipientClass,
    pub to: RecipientClass,
    pub rate: f64,
    /// Waiting time is reset to zero on this transition (MELD exception grant).
    pub resets_waiting_time: bool,
}

/// Class-transition graph with per-edge rates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionGraph {
    transitions: Vec<Transition>,
}

impl TransitionGraph {
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// MELD-band transitions out of `from`, in canonical destination order.
    pub fn meld_moves(&self, from: &RecipientClass) -> impl Iterator<Item = &Transition> {
        let from = *from;
        self.transitions
            .iter()
            .filter(move |t| t.from == from && !t.resets_waiting_time)
    }

    pub fn rate(&self, from: &RecipientClass, to: &RecipientClass) -> Option<f64> {
        self.transitions
            .iter()
            .find(|t| t.from == *from && t.to == *to)
            .map(|t| t.rate)
    }

    /// Total MELD-band outflow rate of a class.
    pub fn meld_outflow(&self, from: &RecipientClass) -> f64 {
        self.meld_moves(from).map(|t| t.rate).sum()
    }

    /// Adds the exception-grant edges with the supplied rates.
    pub fn with_grant_rates(
        mut self,
        rates: impl IntoIterator<Item = (RecipientClass, f64)>,
    ) -> Result<Self, ModelError> {
        for (from, rate) in rates {
            let to = from
                .granted()
                .ok_or_else(|| ModelError::InvalidClass(from.to_string()))?;
            if !rate.is_finite() || rate < 0.0 {
                return Err(ModelError::InvalidRate(from.to_string(), rate));
            }
            self.transitions.push(Transition {
                from,
                to,
                rate,
                resets_waiting_time: true,
            });
        }
        Ok(self)
    }
}

/// Builds the MELD-band transition rates.
///
/// Each mobile class leaves its band at total rate `1 / mean_meld_change_time`.
/// When both directions are open, a fraction `up_share` of that rate goes to
/// higher bands; each direction is spread over its destinations in proportion
/// to their arrival weights. Bands at the edge of the scale move in the only
/// open direction.
pub fn build_transition_rates(
    arrival_rates: &BTreeMap<ClassId, f64>,
    mean_meld_change_time: f64,
    up_share: f64,
) -> Result<TransitionGraph, ModelError> {
    if !(mean_meld_change_time.is_finite() && mean_meld_change_time > 0.0) {
        return Err(ModelError::InvalidMeanChangeTime(mean_meld_change_time));
    }
    if !(0.0..=1.0).contains(&up_share) {
        return Err(ModelError::InvalidUpShare(up_share));
    }
    let total = 1.0 / mean_meld_change_time;
    let weight = |c: &RecipientClass| {
        arrival_rates
            .get(&ClassId::Recipient(*c))
            .copied()
            .unwrap_or(0.0)
    };

    let mut transitions = Vec::new();
    for from in recipient_classes() {
        let up = from.up_set();
        let down = from.down_set();
        let (up_mass, down_mass) = match (up.is_empty(), down.is_empty()) {
            (true, true) => continue,
            (false, true) => (total, 0.0),
            (true, false) => (0.0, total),
            (false, false) => (total * up_share, total * (1.0 - up_share)),
        };
        for (set, mass) in [(&down, down_mass), (&up, up_mass)] {
            if set.is_empty() {
                continue;
            }
            let norm: f64 = set.iter().map(weight).sum();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(ModelError::ZeroNormalization(from.to_string()));
            }
            for to in set {
                let rate = mass * weight(to) / norm;
                if !rate.is_finite() || rate < 0.0 {
                    return Err(ModelError::InvalidRate(to.to_string(), rate));
                }
                transitions.push(Transition {
                    from,
                    to: *to,
                    rate,
                    resets_waiting_time: false,
                });
            }
        }
    }
    Ok(TransitionGraph { transitions })
}

/// Sentinel for the exception timer of items that do not await an exception.
pub const NOT_AWAITING: f64 = -1.0;

/// One queued patient or organ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub class: ClassId,
    /// Remaining real patience in years (`+inf` for organs).
    pub real_patience: f64,
    /// Remaining predictive patience in years (`+inf` for organs).
    pub predictive_patience: f64,
    /// Time spent in line, reset when a MELD exception is granted.
    pub waiting_time: f64,
    /// `<= -1`: not awaiting; `(-1, 0]`: exception due now; `> 0`: time until grant.
    pub mxp_timer: f64,
    /// Negative for items carried over from the initiation phase.
    pub id: i64,
}

impl Item {
    pub fn donor(id: i64) -> Self {
        Item {
            class: ClassId::Donor,
            real_patience: f64::INFINITY,
            predictive_patience: f64::INFINITY,
            waiting_time: 0.0,
            mxp_timer: NOT_AWAITING,
            id,
        }
    }

    pub fn recipient_class(&self) -> Option<&RecipientClass> {
        self.class.recipient()
    }

    pub fn awaits_exception(&self) -> bool {
        self.recipient_class().is_some_and(|r| r.awaits_mxp)
    }

    pub fn exception_due(&self) -> bool {
        self.mxp_timer > -1.0 && self.mxp_timer <= 0.0
    }
}

/// Queue contents in arrival order (index 0 is the oldest item).
pub type QueueState = Vec<Item>;
