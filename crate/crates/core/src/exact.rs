//! Exact finite-state treatment of the East dynamics on small regions.
//!
//! States are bitmasks: bit `i` is the spin of the `i`-th region site, with
//! sites in lexicographic coordinate order. The generator is stored
//! implicitly by its constraint structure (one in-region predecessor mask
//! per site plus a flag for a frozen zero among exterior predecessors), so
//! a region of `n` sites costs `O(n)` memory while rows, matrix-vector
//! products and sparse triplets are produced on demand.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

use crate::lattice::{spin_at_site, Configuration, Region, Site, Spin};
use crate::streams::splitmix64;

/// Bitmask state over the region sites.
pub type State = u32;

/// Largest region handled exactly.
pub const MAX_REGION_SITES: usize = 20;

/// Classes up to this many states are diagonalized densely; larger ones go
/// through restarted Lanczos.
pub const DENSE_STATE_LIMIT: usize = 1 << 8;

/// Default truncation tolerance for uniformization.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactError {
    #[error("region has {0} sites, at most {MAX_REGION_SITES} are supported")]
    RegionTooLarge(usize),
    #[error("region sites have inconsistent dimensions")]
    MixedDimensions,
    #[error("no boundary spin given for exterior neighbour {0}")]
    MissingBoundary(Site),
    #[error("boundary site {0} lies inside the region")]
    BoundaryInsideRegion(Site),
    #[error("spin values must be 0 or 1, got {0}")]
    InvalidSpin(u8),
    #[error("p must lie in (0, 1), got {0}")]
    InvalidP(f64),
    #[error("time must be finite and >= 0, got {0}")]
    InvalidTime(f64),
    #[error("tolerance must be > 0, got {0}")]
    InvalidTolerance(f64),
    #[error("chain length must lie in 1..={MAX_REGION_SITES}, got {0}")]
    LengthOutOfRange(usize),
    #[error("distribution has {got} entries, expected {expected}")]
    DistributionSize { expected: usize, got: usize },
    #[error("Lanczos iteration did not converge (residual {0:e})")]
    NoConvergence(f64),
}

/// Rate matrix of the East dynamics on a region with frozen boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    region: Region,
    boundary: BTreeMap<Site, Spin>,
    p: f64,
    pred_mask: Vec<State>,
    boundary_zero: Vec<bool>,
}

/// Builds the generator. Every `x - e_i` of a region site must be either in
/// the region or assigned a spin in `boundary`.
pub fn build_generator(
    region: &Region,
    boundary: &BTreeMap<Site, Spin>,
    p: f64,
) -> Result<Generator, ExactError> {
    let n = region.len();
    if n > MAX_REGION_SITES {
        return Err(ExactError::RegionTooLarge(n));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(ExactError::InvalidP(p));
    }
    let d = region.sites().first().map_or(0, Site::dim);
    if region.sites().iter().any(|x| x.dim() != d) {
        return Err(ExactError::MixedDimensions);
    }
    for (y, &s) in boundary {
        if s > 1 {
            return Err(ExactError::InvalidSpin(s));
        }
        if region.contains(y) {
            return Err(ExactError::BoundaryInsideRegion(y.clone()));
        }
    }
    let mut pred_mask = vec![0; n];
    let mut boundary_zero = vec![false; n];
    for (i, x) in region.sites().iter().enumerate() {
        for k in 0..d {
            let y = x.step_down(k);
            if let Some(j) = region.position(&y) {
                pred_mask[i] |= 1 << j;
            } else {
                match boundary.get(&y) {
                    Some(0) => boundary_zero[i] = true,
                    Some(_) => {}
                    None => return Err(ExactError::MissingBoundary(y)),
                }
            }
        }
    }
    Ok(Generator {
        region: region.clone(),
        boundary: boundary.clone(),
        p,
        pred_mask,
        boundary_zero,
    })
}

impl Generator {
    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn boundary(&self) -> &BTreeMap<Site, Spin> {
        &self.boundary
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n_sites(&self) -> usize {
        self.region.len()
    }

    /// Number of states, `2^n`.
    pub fn dim(&self) -> usize {
        1usize << self.n_sites()
    }

    /// East constraint of site `i` in `state`.
    #[inline]
    pub fn constraint(&self, state: State, i: usize) -> bool {
        self.boundary_zero[i] || (self.pred_mask[i] & !state) != 0
    }

    /// Rate of flipping site `i` out of `state`.
    #[inline]
    pub fn flip_rate(&self, state: State, i: usize) -> f64 {
        if !self.constraint(state, i) {
            0.0
        } else if state >> i & 1 == 1 {
            1.0 - self.p
        } else {
            self.p
        }
    }

    pub fn exit_rate(&self, state: State) -> f64 {
        (0..self.n_sites()).map(|i| self.flip_rate(state, i)).sum()
    }

    /// Off-diagonal entries of one row: `(target, rate)` for rate > 0.
    pub fn row(&self, state: State) -> impl Iterator<Item = (State, f64)> + '_ {
        (0..self.n_sites()).filter_map(move |i| {
            let r = self.flip_rate(state, i);
            (r > 0.0).then_some((state ^ (1 << i), r))
        })
    }

    /// All nonzero entries `(row, col, rate)`, diagonal included, in
    /// row-major order.
    pub fn triplets(&self) -> Vec<(State, State, f64)> {
        let mut out = Vec::new();
        for s in 0..self.dim() as State {
            let mut entries: Vec<(State, f64)> = self.row(s).collect();
            let exit: f64 = entries.iter().map(|e| e.1).sum();
            if exit > 0.0 {
                entries.push((s, -exit));
            }
            entries.sort_by_key(|e| e.0);
            out.extend(entries.into_iter().map(|(c, r)| (s, c, r)));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (r, c, v) in self.triplets() {
            m[(r as usize, c as usize)] = v;
        }
        m
    }

    /// `out = Q v`, i.e. `(Qv)(s) = sum_s' q(s, s') (v(s') - v(s))`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate() {
            let vs = v[s];
            *o = self
                .row(s as State)
                .map(|(t, r)| r * (v[t as usize] - vs))
                .sum();
        }
    }

    /// Equilibrium weight `mu(state)` of the product Bernoulli(p) measure.
    pub fn mu(&self, state: State) -> f64 {
        mu_weight(state, self.n_sites(), self.p)
    }

    /// State of the region sites in `config`.
    pub fn state_of(&self, config: &Configuration) -> State {
        self.region
            .sites()
            .iter()
            .enumerate()
            .fold(0, |acc, (i, x)| acc | (State::from(spin_at_site(config, x)) << i))
    }

    /// Sparse triplet export `row,col,rate` behind a manifest header.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        let sites: Vec<String> = self.region.sites().iter().map(|x| x.to_string()).collect();
        let _ = writeln!(
            out,
            "# region {} sites={}",
            self.region.descriptor(),
            sites.join(";")
        );
        let bnd: Vec<String> = self
            .boundary
            .iter()
            .map(|(y, s)| format!("{y}={s}"))
            .collect();
        let _ = writeln!(out, "# boundary {}", bnd.join(";"));
        let _ = writeln!(out, "# p={}", self.p);
        out.push_str("row,col,rate\n");
        for (r, c, v) in self.triplets() {
            let _ = writeln!(out, "{r},{c},{v:.17e}");
        }
        out
    }
}

fn mu_weight(state: State, n: usize, p: f64) -> f64 {
    let ones = state.count_ones() as i32;
    p.powi(ones) * (1.0 - p).powi(n as i32 - ones)
}

/// `mu(f)` for product Bernoulli(p) on `region`, by enumeration.
pub fn mu_expectation<F: Fn(State) -> f64>(f: F, region: &Region, p: f64) -> Result<f64, ExactError> {
    let n = region.len();
    if n > MAX_REGION_SITES {
        return Err(ExactError::RegionTooLarge(n));
    }
    Ok((0..1u64 << n)
        .map(|s| mu_weight(s as State, n, p) * f(s as State))
        .sum())
}

fn check_time_tol(t: f64, tol: f64) -> Result<(), ExactError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(ExactError::InvalidTime(t));
    }
    if !(tol > 0.0) {
        return Err(ExactError::InvalidTolerance(tol));
    }
    Ok(())
}

/// Largest uniformized Poisson mean per step; keeps `exp(-lambda)` far
/// from underflow.
const MAX_STEP_MEAN: f64 = 32.0;

/// `h = exp(tQ) f` for every starting state, by uniformization at rate
/// `n` (each site rings at rate 1, so no exit rate exceeds `n`). Long
/// times are split into equal steps; the Poisson tail of each step is cut
/// below `tol / (steps * max|f|)`, so the total truncation error is below
/// `tol`.
pub fn evolve_observable<F: Fn(State) -> f64>(
    gen: &Generator,
    f: F,
    t: f64,
    tol: f64,
) -> Result<Vec<f64>, ExactError> {
    check_time_tol(t, tol)?;
    let dim = gen.dim();
    let mut h: Vec<f64> = (0..dim).map(|s| f(s as State)).collect();
    let rate = gen.n_sites() as f64;
    if t == 0.0 || rate == 0.0 {
        return Ok(h);
    }
    let total = rate * t;
    let steps = (total / MAX_STEP_MEAN).ceil().max(1.0) as usize;
    let lambda = total / steps as f64;
    let fmax = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if fmax == 0.0 {
        return Ok(h);
    }
    let step_tol = tol / (steps as f64 * fmax);

    let mut term = vec![0.0; dim];
    let mut qv = vec![0.0; dim];
    let mut acc = vec![0.0; dim];
    for _ in 0..steps {
        term.copy_from_slice(&h);
        let mut w = (-lambda).exp();
        for (a, v) in acc.iter_mut().zip(&term) {
            *a = w * v;
        }
        let mut k = 0usize;
        loop {
            // Tail after k: sum_{j>k} w_j <= w_{k+1} / (1 - lambda/(k+2)).
            let w_next = w * lambda / (k + 1) as f64;
            let ratio = lambda / (k + 2) as f64;
            if ratio < 1.0 && w_next / (1.0 - ratio) < step_tol {
                break;
            }
            // term <- P term, P = I + Q / rate
            gen.apply(&term, &mut qv);
            for (tv, q) in term.iter_mut().zip(&qv) {
                *tv += q / rate;
            }
            k += 1;
            w = w_next;
            for (a, v) in acc.iter_mut().zip(&term) {
                *a += w * v;
            }
        }
        std::mem::swap(&mut h, &mut acc);
    }
    Ok(h)
}

/// `E_initial[f(eta_t)]`.
pub fn evolve_expectation<F: Fn(State) -> f64>(
    gen: &Generator,
    initial: State,
    f: F,
    t: f64,
    tol: f64,
) -> Result<f64, ExactError> {
    Ok(evolve_observable(gen, f, t, tol)?[initial as usize])
}

/// `E[f(eta_t)]` with `eta_0` drawn from `dist`.
pub fn evolve_distribution<F: Fn(State) -> f64>(
    gen: &Generator,
    dist: &[f64],
    f: F,
    t: f64,
    tol: f64,
) -> Result<f64, ExactError> {
    if dist.len() != gen.dim() {
        return Err(ExactError::DistributionSize {
            expected: gen.dim(),
            got: dist.len(),
        });
    }
    let h = evolve_observable(gen, f, t, tol)?;
    Ok(dist.iter().zip(&h).map(|(a, b)| a * b).sum())
}

/// Spectrum summary of `-S`, `S = D^{1/2} Q D^{-1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumResult {
    /// Smallest nonzero eigenvalue when the chain is irreducible, 0 otherwise.
    pub gap: f64,
    /// Multiplicity of the eigenvalue 0 (number of communicating classes).
    pub eigenvalue_count_at_zero: usize,
    /// Smallest nonzero eigenvalue over all classes, if any class has more
    /// than one state.
    pub smallest_nonzero: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMethod {
    #[default]
    Auto,
    Dense,
    Lanczos,
}

pub fn spectral_gap(gen: &Generator) -> Result<SpectrumResult, ExactError> {
    spectral_gap_with(gen, EigenMethod::Auto)
}

/// Communicating classes. Reversibility makes the transition graph
/// undirected, so union-find over single flips suffices.
fn communicating_classes(gen: &Generator) -> Vec<Vec<State>> {
    let dim = gen.dim();
    let mut parent: Vec<u32> = (0..dim as u32).collect();
    fn find(parent: &mut [u32], mut a: u32) -> u32 {
        while parent[a as usize] != a {
            parent[a as usize] = parent[parent[a as usize] as usize];
            a = parent[a as usize];
        }
        a
    }
    for s in 0..dim as State {
        for (t, _) in gen.row(s) {
            if t > s {
                let (a, b) = (find(&mut parent, s), find(&mut parent, t));
                if a != b {
                    parent[a.max(b) as usize] = a.min(b);
                }
            }
        }
    }
    let mut classes: BTreeMap<u32, Vec<State>> = BTreeMap::new();
    for s in 0..dim as State {
        let r = find(&mut parent, s);
        classes.entry(r).or_default().push(s);
    }
    classes.into_values().collect()
}

pub fn spectral_gap_with(gen: &Generator, method: EigenMethod) -> Result<SpectrumResult, ExactError> {
    let classes = communicating_classes(gen);
    let mut smallest: Option<f64> = None;
    for class in classes.iter().filter(|c| c.len() > 1) {
        let dense = match method {
            EigenMethod::Auto => class.len() <= DENSE_STATE_LIMIT,
            EigenMethod::Dense => true,
            EigenMethod::Lanczos => false,
        };
        let lam = if dense {
            class_gap_dense(gen, class)
        } else {
            class_gap_lanczos(gen, class)?
        };
        smallest = Some(smallest.map_or(lam, |s| s.min(lam)));
    }
    let zeros = classes.len();
    Ok(SpectrumResult {
        gap: if zeros == 1 { smallest.unwrap_or(0.0) } else { 0.0 },
        eigenvalue_count_at_zero: zeros,
        smallest_nonzero: smallest,
    })
}

/// Symmetrized off-diagonal entry for a flip of site `i` out of `s`:
/// `sqrt(q(s, s') q(s', s)) = c_i sqrt(p (1 - p))` (the constraint of `i`
/// does not depend on the spin of `i`).
#[inline]
fn sym_offdiag(gen: &Generator, s: State, i: usize) -> f64 {
    if gen.constraint(s, i) {
        (gen.p * (1.0 - gen.p)).sqrt()
    } else {
        0.0
    }
}

fn class_gap_dense(gen: &Generator, class: &[State]) -> f64 {
    let m = class.len();
    if m == 2 {
        // Two-state class: the nonzero eigenvalue is the sum of both rates.
        return gen.exit_rate(class[0]) + gen.exit_rate(class[1]);
    }
    let pos: BTreeMap<State, usize> = class.iter().enumerate().map(|(k, &s)| (s, k)).collect();
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (k, &s) in class.iter().enumerate() {
        a[(k, k)] = gen.exit_rate(s);
        for i in 0..gen.n_sites() {
            let v = sym_offdiag(gen, s, i);
            if v > 0.0 {
                a[(k, pos[&(s ^ (1 << i))])] = -v;
            }
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    // ev[0] is the zero eigenvalue of the (irreducible) class.
    ev[1]
}

/// `y = -S x` restricted to a class, indexed through `pos`.
struct ClassOperator<'a> {
    gen: &'a Generator,
    class: &'a [State],
    pos: Vec<u32>,
}

impl ClassOperator<'_> {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let off = (self.gen.p * (1.0 - self.gen.p)).sqrt();
        for (k, &s) in self.class.iter().enumerate() {
            let mut acc = 0.0;
            let mut diag = 0.0;
            for i in 0..self.gen.n_sites() {
                if self.gen.constraint(s, i) {
                    diag += if s >> i & 1 == 1 { 1.0 - self.gen.p } else { self.gen.p };
                    acc -= off * x[self.pos[(s ^ (1 << i)) as usize] as usize];
                }
            }
            y[k] = acc + diag * x[k];
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Smallest eigenvalue of `-S` on the orthogonal complement of its known
/// kernel vector `sqrt(mu)`, by explicitly restarted Lanczos with full
/// reorthogonalization.
fn class_gap_lanczos(gen: &Generator, class: &[State]) -> Result<f64, ExactError> {
    let m = class.len();
    let mut pos = vec![u32::MAX; gen.dim()];
    for (k, &s) in class.iter().enumerate() {
        pos[s as usize] = k as u32;
    }
    let op = ClassOperator { gen, class, pos };

    let mut kernel: Vec<f64> = class.iter().map(|&s| gen.mu(s).sqrt()).collect();
    normalize(&mut kernel);

    let krylov = if m > 1 << 16 { 40 } else { 120 }.min(m - 1);
    let scale = gen.n_sites() as f64;
    let tol = 1e-12 * scale.max(1.0);

    let mut start: Vec<f64> = (0..m)
        .map(|k| (splitmix64(k as u64 ^ 0x5eed) >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        .collect();
    let mut last_resid = f64::INFINITY;
    for _restart in 0..200 {
        axpy(-dot(&kernel, &start), &kernel, &mut start);
        normalize(&mut start);
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha = Vec::with_capacity(krylov);
        let mut beta: Vec<f64> = Vec::with_capacity(krylov);
        let mut w = vec![0.0; m];
        for j in 0..krylov {
            op.apply(&basis[j], &mut w);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            // Full reorthogonalization, twice, against kernel and basis.
            for _ in 0..2 {
                axpy(-dot(&kernel, &w), &kernel, &mut w);
                for b in &basis {
                    let c = dot(b, &w);
                    axpy(-c, b, &mut w);
                }
            }
            let bnorm = dot(&w, &w).sqrt();
            if j + 1 == krylov || bnorm < 1e-14 {
                beta.push(bnorm);
                break;
            }
            beta.push(bnorm);
            basis.push(w.iter().map(|x| x / bnorm).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imin, theta) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty tridiagonal");
        let y = eig.eigenvectors.column(imin);
        let resid = (beta[k - 1] * y[k - 1]).abs();
        last_resid = resid;
        if resid < tol || beta[k - 1] < 1e-14 {
            return Ok(theta);
        }
        // Restart from the Ritz vector.
        let mut ritz = vec![0.0; m];
        for (i, b) in basis.iter().take(k).enumerate() {
            axpy(y[i], b, &mut ritz);
        }
        start = ritz;
    }
    Err(ExactError::NoConvergence(last_resid))
}

/// Spectral gap of the one-dimensional East chain on `{1..n}` with site 0
/// frozen at zero.
pub fn east1d_gap(p: f64, n: usize) -> Result<f64, ExactError> {
    if !(1..=MAX_REGION_SITES).contains(&n) {
        return Err(ExactError::LengthOutOfRange(n));
    }
    let gen = east1d_generator(p, n)?;
    Ok(spectral_gap(&gen)?.gap)
}

pub fn east1d_generator(p: f64, n: usize) -> Result<Generator, ExactError> {
    let region = Region::explicit((1..=n as i64).map(|i| Site::new(vec![i])));
    let boundary = BTreeMap::from([(Site::new(vec![0]), 0)]);
    build_generator(&region, &boundary, p)
}

/// `east1d_gap` at the largest requested length together with the
/// increment from the previous length, a proxy for the distance to the
/// infinite-volume gap.
pub fn east1d_gap_with_increment(p: f64, n: usize) -> Result<(f64, f64), ExactError> {
    let g = east1d_gap(p, n)?;
    let prev = if n > 1 { east1d_gap(p, n - 1)? } else { g };
    Ok((g, (prev - g).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(sites: &[i64]) -> Region {
        Region::explicit(sites.iter().map(|&i| Site::new(vec![i])))
    }

    fn zero_at(c: &[i64]) -> BTreeMap<Site, Spin> {
        BTreeMap::from([(Site::new(c.to_vec()), 0)])
    }

    #[test]
    fn single_unconstrained_site() {
        for p in [0.1, 0.5, 0.9] {
            let g = build_generator(&line(&[1]), &zero_at(&[0]), p).unwrap();
            let q = g.to_dense();
            assert_eq!(q[(0, 0)], -p);
            assert_eq!(q[(0, 1)], p);
            assert_eq!(q[(1, 0)], 1.0 - p);
            assert_eq!(q[(1, 1)], -(1.0 - p));
        }
    }

    #[test]
    fn single_blocked_site() {
        let g = build_generator(&line(&[1]), &BTreeMap::from([(Site::new(vec![0]), 1)]), 0.3)
            .unwrap();
        assert!(g.to_dense().iter().all(|&v| v == 0.0));
        let spec = spectral_gap(&g).unwrap();
        assert_eq!(spec.gap, 0.0);
        assert_eq!(spec.eigenvalue_count_at_zero, 2);
        assert_eq!(spec.smallest_nonzero, None);
    }

    #[test]
    fn two_site_constraint_enumeration() {
        let g = build_generator(&line(&[1, 2]), &zero_at(&[0]), 0.5).unwrap();
        // (1,1) -> bits 0b11: only site 1 (bit 0) may flip.
        let legal: Vec<State> = g.row(0b11).map(|(t, _)| t).collect();
        assert_eq!(legal, vec![0b10]);
        // (0,1): site 2's left neighbour is 0, both may flip.
        assert_eq!(g.row(0b10).count(), 2);
    }

    #[test]
    fn missing_boundary_is_an_error() {
        let r = line(&[1, 2]);
        assert_eq!(
            build_generator(&r, &BTreeMap::new(), 0.5),
            Err(ExactError::MissingBoundary(Site::new(vec![0])))
        );
        let big = line(&(1..=21).collect::<Vec<_>>());
        assert!(matches!(
            build_generator(&big, &zero_at(&[0]), 0.5),
            Err(ExactError::RegionTooLarge(21))
        ));
        assert!(build_generator(&r, &zero_at(&[0]), 1.0).is_err());
    }

    #[test]
    fn two_state_closed_form() {
        let p = 0.3;
        let g = build_generator(&line(&[1]), &zero_at(&[0]), p).unwrap();
        for eta0 in [0u32, 1] {
            for t in [0.0, 0.1, 0.7, 2.5, 40.0] {
                let v = evolve_expectation(&g, eta0, |s| s as f64, t, 1e-12).unwrap();
                let exact = p + (eta0 as f64 - p) * (-t).exp();
                assert!((v - exact).abs() < 1e-11, "t={t}: {v} vs {exact}");
            }
        }
        assert!(evolve_expectation(&g, 0, |s| s as f64, -1.0, 1e-10).is_err());
        assert!(evolve_expectation(&g, 0, |s| s as f64, 1.0, 0.0).is_err());
    }

    #[test]
    fn long_time_converges_to_mu() {
        let g = build_generator(&line(&[1, 2, 3]), &zero_at(&[0]), 0.4).unwrap();
        let f = |s: State| (s as f64).sin() + 2.0 * (s & 1) as f64;
        let mu_f = mu_expectation(f, g.region(), 0.4).unwrap();
        let tol = 1e-10;
        for init in 0..8 {
            let v = evolve_expectation(&g, init, f, 1e3, tol).unwrap();
            assert!((v - mu_f).abs() < 10.0 * tol, "{v} vs {mu_f}");
        }
    }

    #[test]
    fn stationary_mixture_stays_stationary() {
        let region = Region::explicit([
            Site::new(vec![0, 1]),
            Site::new(vec![1, 0]),
            Site::new(vec![1, 1]),
        ]);
        let boundary = BTreeMap::from([
            (Site::new(vec![-1, 1]), 1),
            (Site::new(vec![0, 0]), 0),
            (Site::new(vec![1, -1]), 1),
        ]);
        let g = build_generator(&region, &boundary, 0.35).unwrap();
        let dist: Vec<f64> = (0..g.dim() as State).map(|s| g.mu(s)).collect();
        let f = |s: State| (s * s) as f64 - 3.0;
        let mu_f = mu_expectation(f, &region, 0.35).unwrap();
        for t in [0.0, 0.3, 1.0, 5.0, 50.0] {
            let v = evolve_distribution(&g, &dist, f, t, 1e-12).unwrap();
            assert!((v - mu_f).abs() < 1e-11);
        }
    }

    #[test]
    fn mu_expectation_examples() {
        let r = line(&[1, 2, 3, 4]);
        let p = 0.3;
        assert!((mu_expectation(|s| (s >> 2 & 1) as f64, &r, p).unwrap() - p).abs() < 1e-15);
        let all = mu_expectation(|s| (s == 0b1111) as u8 as f64, &r, p).unwrap();
        assert!((all - p.powi(4)).abs() < 1e-15);
        let pair = mu_expectation(|s| ((s & 1) * (s >> 3 & 1)) as f64, &r, p).unwrap();
        assert!((pair - p * p).abs() < 1e-15);
    }

    #[test]
    fn uniformization_matches_dense_exponential() {
        // Independent route: eigen-decomposition of the symmetrized matrix.
        let g = build_generator(&line(&[1, 2, 3]), &zero_at(&[0]), 0.6).unwrap();
        let q = g.to_dense();
        let dim = g.dim();
        let sq: Vec<f64> = (0..dim as State).map(|s| g.mu(s).sqrt()).collect();
        let sym = DMatrix::from_fn(dim, dim, |i, j| sq[i] * q[(i, j)] / sq[j]);
        let eig = SymmetricEigen::new(sym);
        let t = 1.3;
        let expo = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (l * t).exp()))
            * eig.eigenvectors.transpose();
        let f = |s: State| (s >> 2 & 1) as f64;
        let h = evolve_observable(&g, f, t, 1e-13).unwrap();
        for i in 0..dim {
            let direct: f64 = (0..dim)
                .map(|j| sq[j] / sq[i] * expo[(i, j)] * f(j as State))
                .sum();
            assert!((direct - h[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn gap_of_single_site_is_one() {
        for p in [0.1, 0.5, 0.9] {
            assert_eq!(east1d_gap(p, 1).unwrap(), 1.0);
        }
        assert!(east1d_gap(0.5, 0).is_err());
        assert!(east1d_gap(0.5, 21).is_err());
    }

    #[test]
    fn gap_of_two_sites_matches_hand_built_matrix() {
        // States 00, 01, 10, 11 with bit 0 = site 1, bit 1 = site 2. Site 1
        // is always free; site 2 is free iff site 1 holds 0.
        let p: f64 = 0.5;
        let q = 1.0 - p;
        let s = (p * q).sqrt();
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            2.0 * p, -s,  -s,  0.0,
            -s,      q,   0.0, 0.0,
            -s,      0.0, 1.0, -s,
            0.0,     0.0, -s,  q,
        ]);
        let mut hand: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
        hand.sort_by(f64::total_cmp);
        assert!(hand[0].abs() < 1e-12);
        let gap = east1d_gap(p, 2).unwrap();
        assert!((gap - hand[1]).abs() < 1e-12, "{gap} vs {}", hand[1]);
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        for (p, n) in [(0.5, 6), (0.3, 8), (0.7, 9)] {
            let g = east1d_generator(p, n).unwrap();
            let d = spectral_gap_with(&g, EigenMethod::Dense).unwrap().gap;
            let l = spectral_gap_with(&g, EigenMethod::Lanczos).unwrap().gap;
            assert!((d - l).abs() < 1e-9, "p={p} n={n}: {d} vs {l}");
        }
    }

    #[test]
    fn triplet_export_has_zero_row_sums() {
        let g = east1d_generator(0.4, 3).unwrap();
        let text = g.to_triplet_text();
        assert!(text.starts_with("# region"));
        let mut sums = vec![0.0; g.dim()];
        for line in text.lines().skip(4) {
            let cols: Vec<&str> = line.split(',').collect();
            let r: usize = cols[0].parse().unwrap();
            sums[r] += cols[2].parse::<f64>().unwrap();
        }
        assert!(sums.iter().all(|s| s.abs() < 1e-15));
    }
}
