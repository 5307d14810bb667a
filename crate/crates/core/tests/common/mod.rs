//! Independent oracles shared by the integration and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use east_lab_core::exact::{Generator, State};
use east_lab_core::streams::aux_rng;
use east_lab_core::{Configuration, Region, Site, Window};
use rand::Rng;

/// Brute-force rate of flipping site `i` in `state`, recomputed from the
/// region and boundary without the generator's lookup tables.
pub fn brute_flip_rate(
    region: &Region,
    boundary: &BTreeMap<Site, u8>,
    p: f64,
    state: State,
    i: usize,
) -> f64 {
    let sites = region.sites();
    let spin = |x: &Site| -> u8 {
        match sites.iter().position(|y| y == x) {
            Some(j) => ((state >> j) & 1) as u8,
            None => boundary[x],
        }
    };
    let x = &sites[i];
    let free = (0..x.dim()).any(|k| spin(&x.step_down(k)) == 0);
    if !free {
        return 0.0;
    }
    if (state >> i) & 1 == 1 {
        1.0 - p
    } else {
        p
    }
}

/// Largest absolute row sum of the generator.
pub fn max_row_sum(gen: &Generator) -> f64 {
    let n = 1u64 << gen.n_sites();
    let mut sums = vec![0.0f64; n as usize];
    for (r, _, v) in gen.triplets() {
        sums[r as usize] += v;
    }
    sums.iter().fold(0.0, |a, s| a.max(s.abs()))
}

/// Largest `|mu(a) q(a, b) - mu(b) q(b, a)|` over single-flip pairs.
pub fn detailed_balance_residual(gen: &Generator) -> f64 {
    let n = gen.n_sites();
    let mut worst = 0.0f64;
    for a in 0..(1 as State) << n {
        for i in 0..n {
            let b = a ^ (1 << i);
            let lhs = gen.mu(a) * gen.flip_rate(a, i);
            let rhs = gen.mu(b) * gen.flip_rate(b, i);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// A random region of at most `max_sites` sites inside `{0..3}^d` with
/// random frozen spins on every exterior predecessor.
pub fn random_region(seed: u64, max_sites: usize) -> (Region, BTreeMap<Site, u8>, f64) {
    let mut rng = aux_rng(seed, 0x7e57);
    let d = rng.random_range(1..=3usize);
    let cube = Window::cube(d, 0, 3).unwrap();
    let mut all: Vec<Site> = cube.sites().collect();
    let k = rng.random_range(1..=max_sites.min(all.len()));
    let mut chosen = Vec::with_capacity(k);
    for _ in 0..k {
        let j = rng.random_range(0..all.len());
        chosen.push(all.swap_remove(j));
    }
    let region = Region::explicit(chosen);
    let mut boundary = BTreeMap::new();
    for x in region.sites() {
        for i in 0..d {
            let y = x.step_down(i);
            if !region.contains(&y) {
                boundary.entry(y).or_insert_with(|| u8::from(rng.random::<bool>()));
            }
        }
    }
    let p = rng.random_range(0.01..0.99);
    (region, boundary, p)
}

/// Window configuration with the frozen boundary of a box-shaped region.
pub fn boxed_configuration(
    window: &Window,
    spins: Vec<u8>,
    boundary: &BTreeMap<Site, u8>,
) -> Configuration {
    let mut c = Configuration::new(window.clone(), spins, 1).unwrap();
    for (x, &s) in boundary {
        c = c.with_boundary(x, s).unwrap();
    }
    c
}

/// Spins of `state` laid out in window order (the region must be the
/// window's site set, which shares its lexicographic order).
pub fn state_spins(state: State, n: usize) -> Vec<u8> {
    (0..n).map(|i| ((state >> i) & 1) as u8).collect()
}

/// Closed forms re-derived independently of the library.
pub mod constants {
    pub fn c3_prime(p: f64) -> f64 {
        ((1.0 + p) / (2.0 * p)).ln()
    }

    pub fn alpha(p: f64, d: usize, delta: f64, c: f64) -> f64 {
        let m = if p < 0.5 { p } else { 1.0 - p };
        let num = c * (1.0 - p) * delta.powf(d as f64 - 1.0);
        num / (16.0 * d as f64 * (1.0 / m).ln())
    }

    pub fn chi(p: f64, d: usize, delta: f64, lambda: f64) -> f64 {
        let m = if p < 0.5 { p } else { 1.0 - p };
        let inner = lambda * (1.0 - p) * delta.powf(d as f64) / (8.0 * (1.0 / m).ln());
        (inner.ln() / d as f64).exp() / 2.0
    }
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
