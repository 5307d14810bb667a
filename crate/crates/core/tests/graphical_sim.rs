mod common;

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use east_lab_core::sim::run_graphical;
use east_lab_core::streams::{aux_rng, replica_seed};
use east_lab_core::{
    sample_initial, simulate, simulate_with, Configuration, MeasureSpec, ModelParams, Region,
    SimOptions, Site, Window,
};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn site(c: &[i64]) -> Site {
    Site::new(c.to_vec())
}

fn free_site() -> (ModelParams, Configuration) {
    let params = ModelParams::new(1, 0.3).unwrap();
    let init = Configuration::filled(Window::cube(1, 1, 1).unwrap(), 1, 0);
    (params, init)
}

#[test]
fn ring_counts_are_poisson() {
    // Blocked window: rings still fire at rate 1 everywhere.
    let horizon = 4.0;
    let params = ModelParams::new(2, 0.5).unwrap();
    let init = Configuration::filled(Window::cube(2, 0, 1).unwrap(), 1, 1);
    let n = 10_000u64;
    let mut counts = Vec::new();
    for i in 0..n {
        let log = simulate(&params, &init, horizon, replica_seed(77, i)).unwrap();
        let mut per_site = [0usize; 4];
        for r in log.records() {
            per_site[r.site] += 1;
        }
        counts.push(per_site[(i % 4) as usize]);
    }
    let pois = Poisson::new(horizon).unwrap();
    // Bins 0..=k_max-1 plus a pooled tail, each with expected count >= 5.
    let mut k_max = 0;
    while pois.pmf(k_max + 1) * n as f64 >= 5.0 || (k_max as f64) < horizon {
        k_max += 1;
    }
    let mut observed = vec![0f64; k_max as usize + 1];
    for &c in &counts {
        observed[(c as u64).min(k_max) as usize] += 1.0;
    }
    let mut chi2 = 0.0;
    for k in 0..=k_max {
        let prob = if k < k_max {
            pois.pmf(k)
        } else {
            1.0 - (0..k_max).map(|j| pois.pmf(j)).sum::<f64>()
        };
        let e = prob * n as f64;
        chi2 += (observed[k as usize] - e).powi(2) / e;
    }
    let crit = ChiSquared::new(k_max as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 {chi2} >= {crit} with {k_max} dof");
}

#[test]
fn legal_bits_are_bernoulli() {
    let (params, init) = free_site();
    let mut ones = 0usize;
    let mut total = 0usize;
    let mut early_ones = 0usize;
    let mut early = 0usize;
    for i in 0..2000u64 {
        let log = simulate(&params, &init, 10.0, replica_seed(5, i)).unwrap();
        for r in log.records().iter().filter(|r| r.legal) {
            total += 1;
            ones += r.bit as usize;
            if r.time < 5.0 {
                early += 1;
                early_ones += r.bit as usize;
            }
        }
    }
    let p = params.p;
    let z = |k: usize, n: usize| (k as f64 / n as f64 - p).abs() / (p * (1.0 - p) / n as f64).sqrt();
    assert!(z(ones, total) < 3.0);
    // Bits do not depend on when the ring happens.
    assert!(z(early_ones, early) < 3.0);
}

#[test]
fn updated_set_hit_probability() {
    let (params, init) = free_site();
    let region = Region::explicit([site(&[1])]);
    let n = 10_000u64;
    for &deadline in &[0.3, 1.0, 2.5] {
        let hits = (0..n)
            .filter(|&i| {
                let log = simulate(&params, &init, deadline, replica_seed(31, i)).unwrap();
                !log.updated_set(&region, deadline).unwrap().is_empty()
            })
            .count();
        let q = 1.0 - (-deadline as f64).exp();
        let sigma = (q * (1.0 - q) / n as f64).sqrt();
        let freq = hits as f64 / n as f64;
        assert!((freq - q).abs() < 3.0 * sigma, "deadline {deadline}: {freq} vs {q}");
    }
    let log = simulate(&params, &init, 5.0, 1).unwrap();
    assert!(log.updated_set(&region, 0.0).unwrap().is_empty());
}

#[test]
fn free_site_zero_fraction() {
    let (params, init) = free_site();
    let horizon = 1e4;
    let log = simulate(&params, &init, horizon, 8).unwrap();
    let frac = log.occupation_time(&site(&[1]), horizon).unwrap() / horizon;
    let q = 1.0 - params.p;
    // Two-state chain with total switching rate 1: Var(T/t) ~ 2 p (1-p) / t.
    let sigma = (2.0 * params.p * q / horizon).sqrt();
    assert!((frac - q).abs() < 3.0 * sigma, "{frac}");
}

#[test]
fn cone_perturbation_changes_when_inside() {
    // Negative control for cone measurability: salting a site inside the
    // cone usually does change the trajectory.
    let params = ModelParams::new(2, 0.5).unwrap();
    let w = Window::cube(2, -3, 0).unwrap();
    let x = Site::origin(2);
    let mut changed = 0;
    for trial in 0..20u64 {
        let init = sample_initial(&MeasureSpec::ProductBernoulli(0.5), &w, &mut aux_rng(trial, 9)).unwrap();
        let base = simulate(&params, &init, 20.0, trial).unwrap();
        let opts = SimOptions {
            stream_salts: BTreeMap::from([(x.clone(), 99)]),
            ..Default::default()
        };
        let pert = simulate_with(&params, &init, 20.0, trial, &opts).unwrap();
        if base.trajectory(&x).unwrap() != pert.trajectory(&x).unwrap() {
            changed += 1;
        }
    }
    assert!(changed >= 15, "only {changed} of 20 changed");
}

#[test]
fn early_stop_matches_full_run() {
    let params = ModelParams::new(2, 0.4).unwrap();
    let w = Window::cube(2, -2, 1).unwrap();
    let init = sample_initial(&MeasureSpec::ProductBernoulli(0.4), &w, &mut aux_rng(3, 3)).unwrap();
    let log = simulate(&params, &init, 10.0, 3).unwrap();
    let mut seen = Vec::new();
    run_graphical(&params, &init, 10.0, 3, &SimOptions::default(), |r, _| {
        seen.push(*r);
        if seen.len() == 25 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(&log.records()[..25], &seen[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logs_replay_and_queries_agree(
        d in 1usize..=3,
        lo in -3i64..=0,
        span in 0i64..=2,
        p in 0.05f64..0.95,
        q in 0.0f64..=1.0,
        exterior in 0u8..=1,
        seed in any::<u64>(),
        horizon in 0.0f64..15.0,
    ) {
        let params = ModelParams::new(d, p).unwrap();
        let w = Window::cube(d, lo, lo + span).unwrap();
        let c = sample_initial(&MeasureSpec::ProductBernoulli(q), &w, &mut aux_rng(seed, 1)).unwrap();
        let init = Configuration::new(w.clone(), c.spins().to_vec(), exterior).unwrap();
        let log = simulate(&params, &init, horizon, seed).unwrap();
        prop_assert!(log.verify_replay().is_ok());
        let mut prev = 0.0;
        for r in log.records() {
            prop_assert!(r.time > prev && r.time <= horizon);
            prev = r.time;
        }
        let mut total = 0.0;
        for x in w.sites() {
            let tau = log.first_update_time(&x);
            let ring = log.first_ring_time(&x).unwrap();
            if let Some(tau) = tau {
                prop_assert!(tau >= ring.unwrap());
            }
            let occ = log.occupation_time(&x, horizon).unwrap();
            prop_assert!((0.0..=horizon + 1e-12).contains(&occ));
            total += occ;
            // Spin at the end equals the last spin_after at x, or the initial spin.
            let last = log.trajectory(&x).unwrap().last().map(|v| v.1).unwrap_or(init.spin_at(&x));
            prop_assert_eq!(log.spin_at_time(&x, horizon).unwrap(), last);
        }
        let ones: f64 = w.sites().map(|x| horizon - log.occupation_time(&x, horizon).unwrap()).sum();
        prop_assert!((total + ones - w.len() as f64 * horizon).abs() < 1e-9);
        let again = simulate(&params, &init, horizon, seed).unwrap();
        prop_assert_eq!(again.to_csv(), log.to_csv());
    }

    #[test]
    fn legal_only_mode_preserves_queries(seed in any::<u64>(), p in 0.1f64..0.9) {
        let params = ModelParams::new(2, p).unwrap();
        let w = Window::cube(2, -2, 1).unwrap();
        let init = sample_initial(&MeasureSpec::ProductBernoulli(0.5), &w, &mut aux_rng(seed, 2)).unwrap();
        let full = simulate(&params, &init, 6.0, seed).unwrap();
        let compact = simulate_with(&params, &init, 6.0, seed, &SimOptions { legal_only: true, ..Default::default() }).unwrap();
        let region = Region::explicit(w.sites());
        prop_assert_eq!(full.updated_set(&region, 3.0).unwrap(), compact.updated_set(&region, 3.0).unwrap());
        for x in w.sites() {
            prop_assert_eq!(full.occupation_time(&x, 6.0).unwrap(), compact.occupation_time(&x, 6.0).unwrap());
        }
    }
}

#[test]
fn blocked_runs_in_every_dimension() {
    let mut rng = aux_rng(1, 1);
    for d in 1..=3 {
        let params = ModelParams::new(d, rng.random_range(0.1..0.9)).unwrap();
        let init = Configuration::filled(Window::cube(d, -2, 2).unwrap(), 1, 1);
        let log = simulate(&params, &init, 50.0, d as u64).unwrap();
        assert_eq!(log.legal_count(), 0);
        assert!(log.records().iter().all(|r| r.spin_after == 1));
    }
}
