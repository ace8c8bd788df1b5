#![allow(dead_code)]

use liversim::model::{ClassId, Item, RecipientClass, NOT_AWAITING};
use liversim::survival::{
    sample_conditional_shifted, sample_patience, CoxLaw, EmpiricalLaw, PatienceLaw,
    WeibullBaseline,
};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type TestRng = Xoshiro256PlusPlus;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

pub fn u(rng: &mut TestRng) -> f64 {
    rng.sample(Open01)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

/// Draws from the unconditioned law until the draw reaches `c`, then subtracts `c`.
pub fn rejection_shifted(law: &PatienceLaw<'_>, c: f64, n: usize, rng: &mut TestRng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = sample_patience(law, u(rng)).unwrap();
        if t >= c {
            out.push(t - c);
        }
    }
    out
}

pub fn inverse_shifted(law: &PatienceLaw<'_>, c: f64, n: usize, rng: &mut TestRng) -> Vec<f64> {
    (0..n)
        .map(|_| sample_conditional_shifted(law, c, u(rng)).unwrap())
        .collect()
}

pub fn cox(scale: f64, shape: f64, beta: f64) -> CoxLaw {
    CoxLaw {
        baseline: WeibullBaseline { scale, shape },
        hazard_ratio: beta.exp(),
    }
}

pub fn mxp_table() -> EmpiricalLaw {
    EmpiricalLaw::monthly((0..=48).map(|m| (-f64::from(m) / 6.0).exp()).collect()).unwrap()
}

/// Laws exercised by the oracle suites, with a name for messages.
pub fn oracle_laws(table: &EmpiricalLaw) -> Vec<(&'static str, PatienceLaw<'_>)> {
    vec![
        ("exponential", PatienceLaw::Cox(cox(1.0, 1.0, 0.0))),
        ("weibull t^2", PatienceLaw::Cox(cox(1.0, 2.0, 0.0))),
        ("cox shape 0.6, beta 0.9", PatienceLaw::Cox(cox(6.0, 0.6, 0.9))),
        ("mxp empirical", PatienceLaw::Empirical(table)),
    ]
}

/// Rejection sampling needs the law to keep mass beyond `c`.
pub fn oracle_feasible(law: &PatienceLaw<'_>, c: f64) -> bool {
    law.survival(c).unwrap() > 1e-3
}

pub const RECIPIENT_NAMES: [&str; 27] = [
    "CIRRH/B1", "CIRRH/B1/awaiting", "CIRRH/B2", "CIRRH/B2/awaiting", "CIRRH/B3",
    "CIRRH/B3/awaiting", "CIRRH/B4", "CIRRH/B5", "CIRRH/B6", "HCC/B1", "HCC/B2", "HCC/B3",
    "HCC/B4", "HCC/B5", "HCC/B6", "MXP/B1", "MXP/B2", "MXP/B3", "OTHER/B1",
    "OTHER/B1/awaiting", "OTHER/B2", "OTHER/B2/awaiting", "OTHER/B3", "OTHER/B3/awaiting",
    "OTHER/B4", "OTHER/B5", "OTHER/B6",
];

/// A random queue of recipients. Patience values are drawn from a small grid
/// so that ties occur.
pub fn random_queue(rng: &mut TestRng, max_len: usize) -> Vec<Item> {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|k| {
            let class: RecipientClass = RECIPIENT_NAMES[rng.random_range(0..27)].parse().unwrap();
            Item {
                class: ClassId::Recipient(class),
                real_patience: f64::from(rng.random_range(1..40u32)) / 8.0,
                predictive_patience: f64::from(rng.random_range(1..40u32)) / 8.0,
                waiting_time: f64::from(rng.random_range(0..24u32)) / 4.0,
                mxp_timer: if class.awaits_mxp { 0.5 } else { NOT_AWAITING },
                id: k as i64 + 1,
            }
        })
        .collect()
}
