mod common;

use common::*;
use liversim::config::RunConfig;
use liversim::engine::grant_mxp;
use liversim::model::{Item, RecipientClass};
use liversim::survival::{
    sample_mxp_grant_time, sample_patience, sample_patience_conditioned_above, PatienceLaw,
};

const N: usize = 100_000;
const KS_MAX: f64 = 0.01;

#[test]
fn conditional_sampler_matches_rejection_oracle() {
    let table = mxp_table();
    let mut r = rng(17);
    for (name, law) in oracle_laws(&table) {
        for c in [0.0, 0.5, 2.0, 5.0] {
            if !oracle_feasible(&law, c) {
                continue;
            }
            let fast = inverse_shifted(&law, c, N, &mut r);
            let oracle = rejection_shifted(&law, c, N, &mut r);
            let d = ks_two_sample(&fast, &oracle);
            assert!(d < KS_MAX, "{name}, c={c}: KS {d}");
        }
    }
}

#[test]
fn conditioned_above_matches_rejection_oracle() {
    let law = PatienceLaw::Cox(cox(1.0, 1.0, 0.0));
    let mut r = rng(23);
    let fast: Vec<f64> = (0..N)
        .map(|_| sample_patience_conditioned_above(&law, 2.0, u(&mut r)).unwrap())
        .collect();
    let oracle: Vec<f64> = rejection_shifted(&law, 2.0, N, &mut r)
        .into_iter()
        .map(|t| t + 2.0)
        .collect();
    assert!(fast.iter().all(|&t| t >= 2.0));
    let d = ks_two_sample(&fast, &oracle);
    assert!(d < KS_MAX, "KS {d}");
}

#[test]
fn hazard_ratio_two_halves_the_mean() {
    let law = PatienceLaw::Cox(cox(1.0, 1.0, 2f64.ln()));
    let mut r = rng(29);
    let n = 1_000_000;
    let mean = (0..n)
        .map(|_| sample_patience(&law, u(&mut r)).unwrap())
        .sum::<f64>()
        / n as f64;
    assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
}

#[test]
fn grant_time_mean_matches_rate() {
    let cfg = RunConfig::default();
    let models = cfg.survival.models().unwrap();
    let mut r = rng(31);
    for name in ["CIRRH/B1/awaiting", "OTHER/B3/awaiting"] {
        let class: RecipientClass = name.parse().unwrap();
        let expected = models.grant.mean_grant_time(&class).unwrap();
        let mean = (0..N)
            .map(|_| sample_mxp_grant_time(&models.grant, &class, u(&mut r)).unwrap())
            .sum::<f64>()
            / N as f64;
        assert!((mean / expected - 1.0).abs() < 0.01, "{name}: {mean} vs {expected}");
    }
}

#[test]
fn granted_real_patience_is_conditioned_on_time_in_line() {
    let cfg = RunConfig::default();
    let models = cfg.survival.models().unwrap();
    let mxp: RecipientClass = "MXP/B2".parse().unwrap();
    let law = models.real_law(&mxp);
    let mut r = rng(37);
    for c in [0.0, 0.5, 2.0, 5.0] {
        let fast: Vec<f64> = (0..N)
            .map(|k| {
                let mut it = Item {
                    class: liversim::ClassId::Recipient("CIRRH/B2/awaiting".parse().unwrap()),
                    real_patience: 1.0,
                    predictive_patience: 1.0,
                    waiting_time: c,
                    mxp_timer: 0.0,
                    id: k as i64,
                };
                grant_mxp(&mut it, &models, &mut r).unwrap();
                it.real_patience
            })
            .collect();
        let oracle = rejection_shifted(&law, c, N, &mut r);
        let d = ks_two_sample(&fast, &oracle);
        assert!(d < KS_MAX, "c={c}: KS {d}");
    }
}
