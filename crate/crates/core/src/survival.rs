//! Patience-time laws: stratified Cox proportional hazards with a Weibull
//! baseline, a tabulated law for MELD-exception predictive patience, and the
//! inverse-transform samplers (plain, conditioned-above, conditioned-and-shifted).
//!
//! Samplers are pure functions of the law and a uniform variate in `(0, 1)`;
//! callers own the random streams.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::SurvivalError;
use crate::model::{Indication, MeldBand, RecipientClass};

/// Weibull cumulative baseline hazard `(t / scale)^shape`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullBaseline {
    /// Scale in years.
    pub scale: f64,
    pub shape: f64,
}

impl WeibullBaseline {
    pub fn exponential(rate: f64) -> Self {
        WeibullBaseline {
            scale: 1.0 / rate,
            shape: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SurvivalError> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(SurvivalError::InvalidParameter(format!(
                "Weibull scale must be positive, got {}",
                self.scale
            )));
        }
        if !(self.shape.is_finite() && self.shape > 0.0) {
            return Err(SurvivalError::InvalidParameter(format!(
                "Weibull shape must be positive, got {}",
                self.shape
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (t / self.scale).powf(self.shape)
        }
    }

    #[inline]
    pub fn inverse_cumulative_hazard(&self, h: f64) -> f64 {
        if h <= 0.0 {
            0.0
        } else {
            self.scale * h.powf(1.0 / self.shape)
        }
    }
}

/// One Cox stratum: a baseline and one log-hazard ratio per MELD band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxStratum {
    pub baseline: WeibullBaseline,
    /// Coefficients for bands B1..B6, in order.
    pub beta: [f64; 6],
}

impl CoxStratum {
    pub fn validate(&self) -> Result<(), SurvivalError> {
        self.baseline.validate()?;
        for (i, b) in self.beta.iter().enumerate() {
            let hr = b.exp();
            if !(hr.is_finite() && hr > 0.0) {
                return Err(SurvivalError::InvalidParameter(format!(
                    "exp(beta[{i}]) must be finite and positive, beta = {b}"
                )));
            }
        }
        Ok(())
    }

    pub fn law(&self, band: MeldBand) -> CoxLaw {
        CoxLaw {
            baseline: self.baseline,
            hazard_ratio: self.beta[band.index()].exp(),
        }
    }
}

/// Cox model stratified by indication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub strata: BTreeMap<Indication, CoxStratum>,
}

impl CoxModel {
    pub fn stratum(&self, indication: Indication) -> Option<&CoxStratum> {
        self.strata.get(&indication)
    }

    pub fn validate(&self) -> Result<(), SurvivalError> {
        for ind in Indication::ALL {
            self.strata
                .get(&ind)
                .ok_or_else(|| {
                    SurvivalError::InvalidParameter(format!("missing Cox stratum for {ind}"))
                })?
                .validate()?;
        }
        Ok(())
    }
}

/// A Cox stratum resolved at one MELD band: survival `exp(-L0(t) * hazard_ratio)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxLaw {
    pub baseline: WeibullBaseline,
    pub hazard_ratio: f64,
}

impl CoxLaw {
    pub fn survival(&self, t: f64) -> f64 {
        (-self.baseline.cumulative_hazard(t) * self.hazard_ratio).exp()
    }

    fn quantile(&self, u: f64) -> f64 {
        self.baseline
            .inverse_cumulative_hazard(-u.ln() / self.hazard_ratio)
    }

    fn conditional_absolute(&self, c: f64, u: f64) -> f64 {
        let h = self.baseline.cumulative_hazard(c) - u.ln() / self.hazard_ratio;
        self.baseline.inverse_cumulative_hazard(h).max(c)
    }
}

/// Tabulated survival function, linearly interpolated between grid points.
///
/// Mass remaining after the last grid point follows an exponential tail whose
/// rate is the average hazard over the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLaw {
    /// Grid times in years, strictly increasing, starting at 0.
    pub times: Vec<f64>,
    /// Survival values, starting at 1 and nonincreasing.
    pub survival: Vec<f64>,
    /// Residual returned when conditioning beyond the support of the table.
    #[serde(default = "default_fallback_residual")]
    pub fallback_residual: f64,
}

fn default_fallback_residual() -> f64 {
    1.0 / 3108.0
}

impl EmpiricalLaw {
    pub fn new(times: Vec<f64>, survival: Vec<f64>) -> Result<Self, SurvivalError> {
        let law = EmpiricalLaw {
            times,
            survival,
            fallback_residual: default_fallback_residual(),
        };
        law.validate()?;
        Ok(law)
    }

    /// Monthly grid from month 0 to `survival.len() - 1`.
    pub fn monthly(survival: Vec<f64>) -> Result<Self, SurvivalError> {
        let times = (0..survival.len()).map(|m| m as f64 / 12.0).collect();
        Self::new(times, survival)
    }

    pub fn validate(&self) -> Result<(), SurvivalError> {
        let bad = |m: &str| Err(SurvivalError::InvalidParameter(m.to_string()));
        if self.times.len() < 2 || self.times.len() != self.survival.len() {
            return bad("empirical law needs at least two grid points and matching lengths");
        }
        if self.times[0] != 0.0 || self.survival[0] != 1.0 {
            return bad("empirical law must start at (0, 1)");
        }
        if self.times.windows(2).any(|w| w[1] <= w[0] || !w[1].is_finite()) {
            return bad("empirical grid times must be strictly increasing and finite");
        }
        if self
            .survival
            .windows(2)
            .any(|w| w[1] > w[0] || w[1] < 0.0 || w[1].is_nan())
        {
            return bad("empirical survival must be nonincreasing within [0, 1]");
        }
        if *self.survival.last().unwrap() >= 1.0 {
            return bad("empirical survival must put some mass on the grid");
        }
        if !(self.fallback_residual.is_finite() && self.fallback_residual > 0.0) {
            return bad("fallback residual must be positive");
        }
        Ok(())
    }

    fn last(&self) -> (f64, f64) {
        (*self.times.last().unwrap(), *self.survival.last().unwrap())
    }

    fn tail_rate(&self) -> f64 {
        let (t, s) = self.last();
        -s.ln() / t
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        let (t_last, s_last) = self.last();
        if t >= t_last {
            return if s_last > 0.0 {
                s_last * (-(t - t_last) * self.tail_rate()).exp()
            } else {
                0.0
            };
        }
        let i = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let (s0, s1) = (self.survival[i], self.survival[i + 1]);
        s0 + (s1 - s0) * (t - t0) / (t1 - t0)
    }

    /// Smallest time at which survival falls to `level` (`0 < level <= 1`).
    fn quantile_at_level(&self, level: f64) -> f64 {
        let (t_last, s_last) = self.last();
        if level < s_last || (s_last == 0.0 && level <= 0.0) {
            return t_last + (s_last / level).ln() / self.tail_rate();
        }
        // first segment whose right end is at or below the level
        let j = self.survival.partition_point(|&s| s > level);
        if j == 0 {
            return 0.0;
        }
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (s0, s1) = (self.survival[j - 1], self.survival[j]);
        t0 + (s0 - level) / (s0 - s1) * (t1 - t0)
    }
}

/// The patience law attached to a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatienceLaw<'a> {
    Cox(CoxLaw),
    Empirical(&'a EmpiricalLaw),
    /// Classes without patience (recipients awaiting a MELD exception).
    NoPatience,
}

fn check_uniform(u: f64) -> Result<(), SurvivalError> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(SurvivalError::UniformOutOfRange(u))
    }
}

fn check_conditioning(c: f64) -> Result<(), SurvivalError> {
    if c.is_finite() && c >= 0.0 {
        Ok(())
    } else {
        Err(SurvivalError::InvalidConditioning(c))
    }
}

impl PatienceLaw<'_> {
    /// Survival function `P(T > t)`.
    pub fn survival(&self, t: f64) -> Result<f64, SurvivalError> {
        match self {
            PatienceLaw::Cox(l) => Ok(l.survival(t)),
            PatienceLaw::Empirical(e) => Ok(e.survival_at(t)),
            PatienceLaw::NoPatience => Err(SurvivalError::NoPatience),
        }
    }
}

/// Inverse-transform draw of a patience time.
pub fn sample_patience(law: &PatienceLaw<'_>, u: f64) -> Result<f64, SurvivalError> {
    check_uniform(u)?;
    match law {
        PatienceLaw::Cox(l) => Ok(l.quantile(u)),
        PatienceLaw::Empirical(e) => Ok(e.quantile_at_level(u)),
        PatienceLaw::NoPatience => Err(SurvivalError::NoPatience),
    }
}

/// Draws `T` from the law conditioned on `T >= floor` (absolute time, not shifted).
pub fn sample_patience_conditioned_above(
    law: &PatienceLaw<'_>,
    floor: f64,
    u: f64,
) -> Result<f64, SurvivalError> {
    Ok(sample_conditional_shifted(law, floor, u)? + floor)
}

/// Draws `T - c` with `T` from the law conditioned on `T >= c`.
///
/// For a tabulated law with no mass beyond `c`, returns the last grid time
/// minus `c`, floored at the law's fallback residual.
pub fn sample_conditional_shifted(
    law: &PatienceLaw<'_>,
    c: f64,
    u: f64,
) -> Result<f64, SurvivalError> {
    check_uniform(u)?;
    check_conditioning(c)?;
    match law {
        PatienceLaw::Cox(l) => Ok(l.conditional_absolute(c, u) - c),
        PatienceLaw::Empirical(e) => {
            let mass = e.survival_at(c);
            if mass <= 0.0 {
                return Ok((e.last().0 - c).max(e.fallback_residual));
            }
            Ok((e.quantile_at_level(u * mass) - c).max(0.0))
        }
        PatienceLaw::NoPatience => Err(SurvivalError::NoPatience),
    }
}

/// Cox-form law of the time until an awaited MELD exception is granted,
/// stratified by indication (only CIRRH and OTHER patients await exceptions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MxpGrantModel {
    pub strata: BTreeMap<Indication, CoxStratum>,
}

impl MxpGrantModel {
    pub fn validate(&self) -> Result<(), SurvivalError> {
        for ind in Indication::ALL.into_iter().filter(|i| i.may_await_exception()) {
            self.strata
                .get(&ind)
                .ok_or_else(|| SurvivalError::MissingGrantLaw(ind.to_string()))?
                .validate()?;
        }
        Ok(())
    }

    pub fn law(&self, class: &RecipientClass) -> Result<CoxLaw, SurvivalError> {
        if !class.awaits_mxp {
            return Err(SurvivalError::NotAwaiting(class.to_string()));
        }
        self.strata
            .get(&class.indication)
            .map(|s| s.law(class.meld))
            .ok_or_else(|| SurvivalError::MissingGrantLaw(class.indication.to_string()))
    }

    /// Mean grant time, used as the reciprocal rate of the exception edges.
    pub fn mean_grant_time(&self, class: &RecipientClass) -> Result<f64, SurvivalError> {
        let law = self.law(class)?;
        let k = law.baseline.shape;
        Ok(law.baseline.scale * libm::tgamma(1.0 + 1.0 / k) * law.hazard_ratio.powf(-1.0 / k))
    }
}

/// Time until an awaited MELD exception is granted.
pub fn sample_mxp_grant_time(
    model: &MxpGrantModel,
    class: &RecipientClass,
    u: f64,
) -> Result<f64, SurvivalError> {
    let law = model.law(class)?;
    sample_patience(&PatienceLaw::Cox(law), u)
}

/// Every law the engine draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalModels {
    pub cox: CoxModel,
    /// Predictive patience of MELD-exception patients.
    pub mxp_predictive: EmpiricalLaw,
    pub grant: MxpGrantModel,
}

impl SurvivalModels {
    pub fn validate(&self) -> Result<(), SurvivalError> {
        self.cox.validate()?;
        self.mxp_predictive.validate()?;
        self.grant.validate()
    }

    fn cox_law(&self, class: &RecipientClass) -> PatienceLaw<'_> {
        match self.cox.stratum(class.indication) {
            Some(s) => PatienceLaw::Cox(s.law(class.meld)),
            None => PatienceLaw::NoPatience,
        }
    }

    /// Real patience law of a class (`NoPatience` while awaiting an exception).
    pub fn real_law(&self, class: &RecipientClass) -> PatienceLaw<'_> {
        if class.awaits_mxp {
            PatienceLaw::NoPatience
        } else {
            self.cox_law(class)
        }
    }

    /// Predictive patience law: the real law, except for MELD-exception patients.
    pub fn predictive_law(&self, class: &RecipientClass) -> PatienceLaw<'_> {
        if class.awaits_mxp {
            PatienceLaw::NoPatience
        } else if class.indication == Indication::Mxp {
            PatienceLaw::Empirical(&self.mxp_predictive)
        } else {
            self.cox_law(class)
        }
    }

    /// Law used for a patient arriving while awaiting an exception: the law of
    /// the same class without the awaiting flag.
    pub fn pre_exception_law(&self, class: &RecipientClass) -> PatienceLaw<'_> {
        self.cox_law(&class.without_await())
    }
}
