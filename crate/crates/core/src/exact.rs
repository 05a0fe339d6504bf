//! Exact analysis on enumerable state spaces: the generator, stationary
//! distribution, spectral gap, Dirichlet forms, total-variation mixing time
//! and the spectral profile.
//!
//! States are indexed by their bit word: bit `i` set means site `i` is `-1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::dynamics::RateModel;
use crate::error::{Error, Result};
use crate::lattice::{Lattice, SpinConfig};

/// Largest state space handled with dense eigendecomposition.
pub const DENSE_LIMIT: usize = 4096;
/// Largest state space for matrix-exponential mixing times.
pub const MIXING_LIMIT: usize = 1024;

/// Full transition-rate matrix of the chain. Row `s` has one off-diagonal
/// entry per site, towards `s ^ (1 << i)`.
#[derive(Clone, Debug)]
pub struct SparseGenerator {
    lattice: Arc<Lattice>,
    model: RateModel,
    n_states: usize,
    n_sites: usize,
    rates: Vec<f64>,
    exit: Vec<f64>,
    defects: Vec<u32>,
}

/// Builds the generator by enumerating all `2^{|Λ|}` states.
pub fn build_generator(lattice: &Arc<Lattice>, model: RateModel, budget: u64) -> Result<SparseGenerator> {
    let n_sites = lattice.n_sites();
    if n_sites >= 40 || (1u64 << n_sites) > budget {
        let states = if n_sites >= 40 { u64::MAX } else { 1u64 << n_sites };
        return Err(Error::BudgetExceeded { states, budget });
    }
    let n_states = 1usize << n_sites;
    let defects: Vec<u32> = (0..n_states as u64).into_par_iter().map(|w| lattice.defect_count_word(w) as u32).collect();
    let masks = lattice.plaquette_masks().expect("small lattice");
    let neg: Vec<bool> = (0..lattice.n_plaquettes()).map(|p| lattice.plaquette_boundary_negative(p)).collect();
    let neg = &neg;
    let rates: Vec<f64> = (0..n_states as u64)
        .into_par_iter()
        .flat_map_iter(|w| {
            (0..n_sites).map(move |i| {
                let dh: i32 = lattice
                    .site_plaquettes(i)
                    .iter()
                    .map(|&p| {
                        let p = p as usize;
                        let odd = ((w & masks[p]).count_ones() & 1 == 1) != neg[p];
                        if odd {
                            -1
                        } else {
                            1
                        }
                    })
                    .sum();
                model.rate_for(dh)
            })
        })
        .collect();
    let exit = rates.chunks(n_sites.max(1)).map(|r| r.iter().sum()).collect();
    Ok(SparseGenerator { lattice: lattice.clone(), model, n_states, n_sites, rates, exit, defects })
}

impl SparseGenerator {
    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn state(&self, s: usize) -> SpinConfig {
        SpinConfig::from_word(&self.lattice, s as u64)
    }

    /// `ℒ(s, s^i)`.
    pub fn rate(&self, s: usize, i: usize) -> f64 {
        self.rates[s * self.n_sites + i]
    }

    pub fn exit_rate(&self, s: usize) -> f64 {
        self.exit[s]
    }

    pub fn defect_count(&self, s: usize) -> usize {
        self.defects[s] as usize
    }

    /// `ℒ(s, t)` for arbitrary states.
    pub fn entry(&self, s: usize, t: usize) -> f64 {
        if s == t {
            return -self.exit[s];
        }
        let d = s ^ t;
        if d.is_power_of_two() {
            self.rate(s, d.trailing_zeros() as usize)
        } else {
            0.0
        }
    }

    /// `ln` of the unnormalised stationary weight, `-β|p|`.
    pub fn log_weight(&self, s: usize) -> f64 {
        -self.model.beta * self.defects[s] as f64
    }

    /// Coordinate dump `i j rate`, diagonal included.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for s in 0..self.n_states {
            for i in 0..self.n_sites {
                out.push_str(&format!("{s} {} {:.17e}\n", s ^ (1 << i), self.rate(s, i)));
            }
            out.push_str(&format!("{s} {s} {:.17e}\n", -self.exit[s]));
        }
        out
    }

    /// `y = (-S) x` where `S = Π^{1/2} ℒ Π^{-1/2}`.
    fn sym_apply(&self, sqrt_pi: &[f64], x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(s, ys)| {
            let mut acc = self.exit[s] * x[s];
            for i in 0..self.n_sites {
                let t = s ^ (1 << i);
                acc -= self.rate(s, i) * sqrt_pi[s] / sqrt_pi[t] * x[t];
            }
            *ys = acc;
        });
    }

    /// Dense `-S` restricted to the given states.
    fn sym_dense(&self, sqrt_pi: &[f64], states: &[usize]) -> DMatrix<f64> {
        let m = states.len();
        let mut pos = vec![usize::MAX; self.n_states];
        for (k, &s) in states.iter().enumerate() {
            pos[s] = k;
        }
        let mut a = DMatrix::zeros(m, m);
        for (k, &s) in states.iter().enumerate() {
            a[(k, k)] = self.exit[s];
            for i in 0..self.n_sites {
                let t = s ^ (1 << i);
                if pos[t] != usize::MAX {
                    a[(k, pos[t])] = -self.rate(s, i) * sqrt_pi[s] / sqrt_pi[t];
                }
            }
        }
        // symmetrise away rounding noise
        let at = a.transpose();
        (a + at) * 0.5
    }
}

/// Normalised `π`, computed from log weights.
pub fn stationary_distribution(g: &SparseGenerator) -> Vec<f64> {
    let lw: Vec<f64> = (0..g.n_states).map(|s| g.log_weight(s)).collect();
    let max = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// `π` mass of the minimum-energy states.
pub fn ground_mass(g: &SparseGenerator) -> f64 {
    let pi = stationary_distribution(g);
    let min = g.defects.iter().copied().min().unwrap_or(0);
    (0..g.n_states).filter(|&s| g.defects[s] == min).map(|s| pi[s]).sum()
}

/// Smallest positive eigenvalue of `-ℒ`. Dense below [`DENSE_LIMIT`] states,
/// shift-invert Lanczos otherwise.
pub fn spectral_gap(g: &SparseGenerator) -> Result<f64> {
    if g.n_states <= DENSE_LIMIT {
        dense_gap(g)
    } else {
        lanczos_gap(g)
    }
}

pub fn dense_gap(g: &SparseGenerator) -> Result<f64> {
    let pi = stationary_distribution(g);
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let all: Vec<usize> = (0..g.n_states).collect();
    let eig = SymmetricEigen::new(g.sym_dense(&sq, &all));
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.get(1).copied().ok_or_else(|| Error::Numerical("state space has a single state".into()))
}

/// Leading eigenvector of the dense symmetrised operator for the gap, mapped
/// back to a function on states.
pub fn gap_eigenfunction(g: &SparseGenerator) -> Result<Vec<f64>> {
    if g.n_states > DENSE_LIMIT {
        return Err(Error::BudgetExceeded { states: g.n_states as u64, budget: DENSE_LIMIT as u64 });
    }
    let pi = stationary_distribution(g);
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let all: Vec<usize> = (0..g.n_states).collect();
    let eig = SymmetricEigen::new(g.sym_dense(&sq, &all));
    let mut order: Vec<usize> = (0..g.n_states).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v = eig.eigenvectors.column(order[1]);
    Ok((0..g.n_states).map(|s| v[s] / sq[s]).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_out(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u);
    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
}

/// Jacobi-preconditioned conjugate gradients for `(-S) y = b` on `u^⊥`.
fn cg_solve(g: &SparseGenerator, sq: &[f64], b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let diag: Vec<f64> = g.exit.clone();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    project_out(&mut r, sq);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    project_out(&mut z, sq);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let bnorm = dot(b, b).sqrt();
    let mut ap = vec![0.0; n];
    for _ in 0..20 * n.max(100) {
        if dot(&r, &r).sqrt() <= tol * bnorm {
            project_out(&mut x, sq);
            return Ok(x);
        }
        g.sym_apply(sq, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, a)| *ri -= alpha * a);
        project_out(&mut r, sq);
        z = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        project_out(&mut z, sq);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Err(Error::Numerical("conjugate gradients did not converge".into()))
}

/// Gap via Lanczos on `(-S)^{-1}` restricted to the complement of `√π`.
pub fn lanczos_gap(g: &SparseGenerator) -> Result<f64> {
    let pi = stationary_distribution(g);
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let n = g.n_states;
    let steps = 60.min(n - 1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    // deterministic start vector with support everywhere
    let mut v: Vec<f64> = (0..n).map(|s| 1.0 + ((s as f64) * 0.618_033_988_75).fract()).collect();
    project_out(&mut v, &sq);
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut prev_ritz = f64::NAN;
    for j in 0..steps {
        basis.push(v.clone());
        let mut w = cg_solve(g, &sq, &v, 1e-12)?;
        let a = dot(&w, &v);
        alpha.push(a);
        // full reorthogonalisation
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
            }
            project_out(&mut w, &sq);
        }
        let b = dot(&w, &w).sqrt();
        let t = tridiagonal_max(&alpha, &beta);
        if (t - prev_ritz).abs() <= 1e-13 * t.abs() || b < 1e-14 || j + 1 == steps {
            return Ok(1.0 / t);
        }
        prev_ritz = t;
        beta.push(b);
        v = w.into_iter().map(|x| x / b).collect();
    }
    Err(Error::Numerical("Lanczos iteration did not converge".into()))
}

fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    SymmetricEigen::new(t).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_len(g: &SparseGenerator, f: &[f64]) -> Result<()> {
    if f.len() != g.n_states || f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec(format!("function must have {} finite values", g.n_states)));
    }
    Ok(())
}

/// `𝒟(f) = ½ Σ_σ Σ_x π(σ) c(x,σ) (f(σ^x) - f(σ))²`.
pub fn dirichlet_form(g: &SparseGenerator, f: &[f64]) -> Result<f64> {
    check_len(g, f)?;
    let pi = stationary_distribution(g);
    Ok(0.5
        * (0..g.n_states)
            .into_par_iter()
            .map(|s| (0..g.n_sites).map(|i| pi[s] * g.rate(s, i) * (f[s ^ (1 << i)] - f[s]).powi(2)).sum::<f64>())
            .sum::<f64>())
}

pub fn variance(g: &SparseGenerator, f: &[f64]) -> Result<f64> {
    check_len(g, f)?;
    let pi = stationary_distribution(g);
    let mean: f64 = pi.iter().zip(f).map(|(p, v)| p * v).sum();
    Ok(pi.iter().zip(f).map(|(p, v)| p * (v - mean).powi(2)).sum())
}

/// `Var(f)/𝒟(f)`, a lower bound on the relaxation time.
pub fn rayleigh_lower_bound(g: &SparseGenerator, f: &[f64]) -> Result<f64> {
    let var = variance(g, f)?;
    let dir = dirichlet_form(g, f)?;
    if var <= 0.0 || dir <= 0.0 {
        return Err(Error::DegenerateTestFunction);
    }
    Ok(var / dir)
}

/// Worst-case total variation distance of the rows of `e` from `pi`.
fn worst_tv(e: &DMatrix<f64>, pi: &[f64]) -> f64 {
    (0..e.nrows())
        .into_par_iter()
        .map(|r| 0.5 * (0..e.ncols()).map(|c| (e[(r, c)] - pi[c]).abs()).sum::<f64>())
        .reduce(|| 0.0, f64::max)
}

/// `e^{tℒ}` by uniformization; accurate when `t·max exit rate ≲ 1`.
fn uniformized(g: &SparseGenerator, t: f64) -> DMatrix<f64> {
    let n = g.n_states;
    let lam = g.exit.iter().cloned().fold(0.0, f64::max).max(1e-300);
    let mut p = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        p[(s, s)] = 1.0 - g.exit[s] / lam;
        for i in 0..g.n_sites {
            p[(s, s ^ (1 << i))] = g.rate(s, i) / lam;
        }
    }
    let mu = lam * t;
    let mut weight = (-mu).exp();
    let mut mass = weight;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut acc = &term * weight;
    let mut j = 0usize;
    while 1.0 - mass > 1e-15 && j < 200 {
        j += 1;
        term = &term * &p;
        weight *= mu / j as f64;
        mass += weight;
        acc += &term * weight;
    }
    acc
}

/// Smallest `s` with `max_σ ‖e^{sℒ}(σ,·) - π‖_TV < ε`, to 1% relative precision.
pub fn tv_mixing_time(g: &SparseGenerator, eps: f64) -> Result<f64> {
    if g.n_states > MIXING_LIMIT {
        return Err(Error::BudgetExceeded { states: g.n_states as u64, budget: MIXING_LIMIT as u64 });
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidSpec("epsilon must lie in (0, 1)".into()));
    }
    let pi = stationary_distribution(g);
    let lam = g.exit.iter().cloned().fold(0.0, f64::max);
    let s0 = 1.0 / lam;
    let e0 = uniformized(g, s0);
    if worst_tv(&e0, &pi) < eps {
        // answer below s0: bisect with direct uniformization
        let (mut lo, mut hi) = (0.0, s0);
        while hi - lo > 0.005 * hi {
            let mid = 0.5 * (lo + hi);
            if worst_tv(&uniformized(g, mid), &pi) < eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Ok(hi);
    }
    // ladder[j] = e^{s0 2^j ℒ}
    let mut ladder = vec![e0];
    loop {
        let last = ladder.last().expect("nonempty");
        let next = last * last;
        let done = worst_tv(&next, &pi) < eps;
        ladder.push(next);
        if done {
            break;
        }
        if ladder.len() > 80 {
            return Err(Error::Numerical("mixing time beyond 2^80 / max rate".into()));
        }
    }
    let j_hi = ladder.len() - 1;
    let lo = s0 * 2f64.powi(j_hi as i32 - 1);
    let mut cur = ladder[j_hi - 1].clone();
    let mut cur_t = lo;
    const HALVINGS: i32 = 8;
    for m in 1..=HALVINGS {
        let step = lo / 2f64.powi(m);
        let idx = j_hi as i32 - 1 - m;
        let h = if idx >= 0 { ladder[idx as usize].clone() } else { uniformized(g, step) };
        let trial = &cur * &h;
        if worst_tv(&trial, &pi) >= eps {
            cur = trial;
            cur_t += step;
        }
    }
    Ok(cur_t + lo / 2f64.powi(HALVINGS))
}

/// Worst-case TV distance at time `t`.
pub fn tv_distance_at(g: &SparseGenerator, t: f64) -> Result<f64> {
    if g.n_states > MIXING_LIMIT {
        return Err(Error::BudgetExceeded { states: g.n_states as u64, budget: MIXING_LIMIT as u64 });
    }
    let pi = stationary_distribution(g);
    let lam = g.exit.iter().cloned().fold(0.0, f64::max);
    let k = (lam * t).log2().ceil().max(0.0) as i32;
    let mut e = uniformized(g, t / 2f64.powi(k));
    for _ in 0..k {
        e = &e * &e;
    }
    Ok(worst_tv(&e, &pi))
}

/// `λ(S) = inf_{f ∈ c₀(S)} 𝒟(f)/Var(f)` for an explicit set of states.
pub fn set_profile(g: &SparseGenerator, set: &[usize]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    if set.len() == g.n_states {
        return spectral_gap(g);
    }
    if set.len() > DENSE_LIMIT {
        return Err(Error::BudgetExceeded { states: set.len() as u64, budget: DENSE_LIMIT as u64 });
    }
    let pi = stationary_distribution(g);
    let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let a = g.sym_dense(&sq, set);
    // Var(f) = gᵀ(I - uuᵀ)g in g = √π f coordinates; W = (I - uuᵀ)^{-1/2}
    let u = DVector::from_iterator(set.len(), set.iter().map(|&s| sq[s]));
    let uu = u.dot(&u);
    if uu >= 1.0 {
        return Err(Error::Numerical("level set carries full mass".into()));
    }
    let c = (1.0 / (1.0 - uu).sqrt() - 1.0) / uu;
    let w = DMatrix::<f64>::identity(set.len(), set.len()) + (&u * u.transpose()) * c;
    let m = &w * a * &w;
    let m = (&m + m.transpose()) * 0.5;
    let ev = SymmetricEigen::new(m).eigenvalues;
    Ok(ev.iter().copied().fold(f64::INFINITY, f64::min))
}

/// States with at least `k` defects.
pub fn level_set(g: &SparseGenerator, k: usize) -> Vec<usize> {
    (0..g.n_states).filter(|&s| g.defect_count(s) >= k).collect()
}

/// `λ(S_k)` with `S_k = {σ : |p(σ)| ≥ k}`; `k = 0` gives the gap.
pub fn spectral_profile(g: &SparseGenerator, k: usize) -> Result<f64> {
    set_profile(g, &level_set(g, k))
}

/// `k(r) = min{k : π₀ e^{-βk} ≤ r}` with `π₀` the normalised weight of a
/// defect-free state.
pub fn level_index(g: &SparseGenerator, r: f64) -> usize {
    let z: f64 = (0..g.n_states).map(|s| g.log_weight(s).exp()).sum();
    let pi0 = 1.0 / z;
    if r >= pi0 {
        return 0;
    }
    let beta = g.model.beta;
    if beta <= 0.0 {
        return usize::MAX;
    }
    let mut k = ((pi0 / r).ln() / beta).ceil().max(0.0) as usize;
    // guard the boundary against rounding
    while k > 0 && pi0 * (-beta * (k - 1) as f64).exp() <= r {
        k -= 1;
    }
    while pi0 * (-beta * k as f64).exp() > r {
        k += 1;
    }
    k
}

/// `∫_{4μ*}^{16} 2/(x λ(S_{k(x)})) dx` for the staircase profile.
pub fn profile_mixing_bound(g: &SparseGenerator) -> Result<f64> {
    let pi = stationary_distribution(g);
    let mu = pi.iter().cloned().fold(f64::INFINITY, f64::min);
    let z: f64 = (0..g.n_states).map(|s| g.log_weight(s).exp()).sum();
    let pi0 = 1.0 / z;
    let beta = g.model.beta;
    let lo = 4.0 * mu;
    let hi = 16.0;
    let mut total = 0.0;
    let mut cache = std::collections::HashMap::new();
    let mut profile = |k: usize| -> Result<f64> {
        if let Some(&v) = cache.get(&k) {
            return Ok(v);
        }
        let v = spectral_profile(g, k)?;
        cache.insert(k, v);
        Ok(v)
    };
    // k = 0 on [π₀, ∞)
    let a = lo.max(pi0);
    if hi > a {
        total += 2.0 / profile(0)? * (hi / a).ln();
    }
    if beta > 0.0 {
        let max_k = g.defects.iter().copied().max().unwrap_or(0) as usize;
        for k in 1..=max_k + 1 {
            let upper = pi0 * (-beta * (k - 1) as f64).exp();
            let lower = pi0 * (-beta * k as f64).exp();
            let a = lower.max(lo);
            let b = upper.min(hi);
            if b > a {
                total += 2.0 / profile(k)? * (b / a).ln();
            }
            if lower <= lo {
                break;
            }
        }
    }
    Ok(total)
}

/// Expected hitting times of `target` from every state (0 on the target),
/// by solving `(-ℒ) h = 1` off the target.
pub fn expected_hitting_times(g: &SparseGenerator, target: impl Fn(usize) -> bool) -> Result<Vec<f64>> {
    if g.n_states > DENSE_LIMIT {
        return Err(Error::BudgetExceeded { states: g.n_states as u64, budget: DENSE_LIMIT as u64 });
    }
    let rest: Vec<usize> = (0..g.n_states).filter(|&s| !target(s)).collect();
    if rest.len() == g.n_states {
        return Err(Error::EmptyLevelSet);
    }
    let mut pos = vec![usize::MAX; g.n_states];
    for (k, &s) in rest.iter().enumerate() {
        pos[s] = k;
    }
    let m = rest.len();
    let mut a = DMatrix::zeros(m, m);
    for (k, &s) in rest.iter().enumerate() {
        a[(k, k)] = g.exit[s];
        for i in 0..g.n_sites {
            let t = s ^ (1 << i);
            if pos[t] != usize::MAX {
                a[(k, pos[t])] -= g.rate(s, i);
            }
        }
    }
    let h = a
        .lu()
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| Error::Numerical("singular hitting-time system".into()))?;
    let mut out = vec![0.0; g.n_states];
    for (k, &s) in rest.iter().enumerate() {
        out[s] = h[k];
    }
    Ok(out)
}

/// Piecewise-linear profile `g`: 0 on `[0,¼]`, `12x-3` on `(¼,⅓)`, 1 on
/// `[⅓,½]`, symmetric about ½.
pub fn profile_g(x: f64) -> f64 {
    let x = if x > 0.5 { 1.0 - x } else { x };
    if x <= 0.25 {
        0.0
    } else if x < 1.0 / 3.0 {
        12.0 * x - 3.0
    } else {
        1.0
    }
}

/// `f(σ) = g(|σ|/L²)` with `|σ|` the number of minus spins.
pub fn test_function_plus(cfg: &SpinConfig) -> Result<f64> {
    if cfg.spec().is_periodic() {
        return Err(Error::Unsupported("the plus test function needs a fixed boundary".into()));
    }
    let l = cfg.lattice().side() as f64;
    Ok(profile_g(cfg.minus_count() as f64 / (l * l)))
}

/// Tabulates a function of configurations over every state of `g`.
pub fn tabulate(g: &SparseGenerator, f: impl Fn(&SpinConfig) -> f64 + Sync) -> Vec<f64> {
    (0..g.n_states).into_par_iter().map(|s| f(&g.state(s))).collect()
}
