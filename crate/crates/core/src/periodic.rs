//! Ground states of the torus: the hypercube coding, minimal-energy paths
//! between neighbouring ground states, the periodic test function, and
//! Monte Carlo estimates of the trace kernel and of single excursions.
//!
//! Spin `[i, j]` (column `i`, row `j`, both in `[1:L]`) is the torus site
//! `(i - 1, j - 1)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dynamics::{trace_chain_on_stream, HittingEstimate, RateModel, Walker};
use crate::error::{Error, Result};
use crate::lattice::{defect_count, Lattice, Site, SpinConfig};

/// `w(σ) ∈ {-1,+1}^{2L-1}`: entries `1..=L` are columns, `L+1..=2L-1` rows
/// `1..L-1`. Stored 0-based.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroundCode(pub Vec<i8>);

impl GroundCode {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `v[i]` with 1-based `i`.
    pub fn get(&self, i: usize) -> i8 {
        self.0[i - 1]
    }

    /// Hamming weight: number of `+1` entries.
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&s| s == 1).count()
    }

    pub fn hamming(&self, other: &GroundCode) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn is_antipode(&self, other: &GroundCode) -> bool {
        self.hamming(other) == self.len()
    }

    /// Bit `i` set when entry `i` is `-1`.
    pub fn to_bits(&self) -> u64 {
        self.0.iter().enumerate().filter(|(_, &s)| s == -1).fold(0, |acc, (i, _)| acc | 1 << i)
    }

    pub fn from_bits(side: usize, bits: u64) -> Self {
        GroundCode((0..2 * side - 1).map(|i| if bits >> i & 1 == 1 { -1 } else { 1 }).collect())
    }

    /// The total order `≺`: Hamming weight first, then lexicographic with `-1 < +1`.
    pub fn order(&self, other: &GroundCode) -> Ordering {
        self.weight().cmp(&other.weight()).then_with(|| self.0.cmp(&other.0))
    }
}

impl fmt::Display for GroundCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(if s == 1 { "+" } else { "-" })?;
        }
        Ok(())
    }
}

fn require_torus(lat: &Lattice) -> Result<()> {
    if !lat.is_periodic() {
        return Err(Error::Unsupported("ground-state coding needs periodic boundaries".into()));
    }
    Ok(())
}

fn spin(cfg: &SpinConfig, i: usize, j: usize) -> i8 {
    let lat = cfg.lattice();
    cfg.spin_at(lat.site_index(Site::new(i as i32 - 1, j as i32 - 1)).expect("torus site"))
}

pub fn is_ground_state(cfg: &SpinConfig) -> bool {
    defect_count(cfg) == 0
}

/// `w(σ)`.
pub fn encode_ground(cfg: &SpinConfig) -> Result<GroundCode> {
    require_torus(cfg.lattice())?;
    if !is_ground_state(cfg) {
        return Err(Error::NotGroundState);
    }
    let l = cfg.lattice().side();
    let mut v: Vec<i8> = (1..=l).map(|i| spin(cfg, i, l)).collect();
    let first = v[0];
    v.extend((1..l).map(|j| spin(cfg, 1, j) * first));
    Ok(GroundCode(v))
}

/// `w⁻¹(v)`.
pub fn decode_ground(lattice: &Arc<Lattice>, v: &GroundCode) -> Result<SpinConfig> {
    require_torus(lattice)?;
    let l = lattice.side();
    if v.len() != 2 * l - 1 || v.0.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidSpec(format!("code must be a ±1 vector of length {}", 2 * l - 1)));
    }
    let mut cfg = SpinConfig::all_plus(lattice);
    for i in 1..=l {
        for j in 1..=l {
            let s = if j < l { v.get(i) * v.get(l + j) } else { v.get(i) };
            cfg.set_index(lattice.site_index(Site::new(i as i32 - 1, j as i32 - 1)).expect("torus site"), s);
        }
    }
    Ok(cfg)
}

/// All `2^{2L-1}` ground states, in code order of [`GroundCode::from_bits`].
pub fn all_ground_states(lattice: &Arc<Lattice>) -> Result<Vec<SpinConfig>> {
    require_torus(lattice)?;
    let l = lattice.side();
    if 2 * l - 1 > 24 {
        return Err(Error::BudgetExceeded { states: 1 << 24, budget: 1 << 24 });
    }
    (0..1u64 << (2 * l - 1)).map(|b| decode_ground(lattice, &GroundCode::from_bits(l, b))).collect()
}

/// A full line of the torus whose flip joins two neighbouring ground states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Line {
    /// Column `ℓ ∈ [1:L]` (code index `ℓ`).
    Column(usize),
    /// Row `j ∈ [1:L-1]` (code index `L + j`).
    Row(usize),
    /// Row `L`: flipping it negates the whole code.
    Antipodal,
}

impl Line {
    fn all(side: usize) -> impl Iterator<Item = Line> {
        (1..=side).map(Line::Column).chain((1..side).map(Line::Row)).chain(std::iter::once(Line::Antipodal))
    }

    /// Sites `[m : m+k-1]` (cyclic) along the line.
    pub fn segment(&self, side: usize, m: usize, k: usize) -> Vec<Site> {
        let l = side as i32;
        (0..k as i32)
            .map(|t| {
                let a = (m as i32 - 1 + t).rem_euclid(l);
                match *self {
                    Line::Column(c) => Site::new(c as i32 - 1, a),
                    Line::Row(j) => Site::new(a, j as i32 - 1),
                    Line::Antipodal => Site::new(a, l - 1),
                }
            })
            .collect()
    }
}

fn flip_sites(cfg: &SpinConfig, sites: &[Site]) -> SpinConfig {
    let lat = cfg.lattice();
    let mut out = cfg.clone();
    for s in sites {
        out.flip_index(lat.site_index(*s).expect("torus site"));
    }
    out
}

/// Line along which `w(σ)` and `w(η)` differ, if they are neighbours or antipodes.
pub fn joining_line(u: &GroundCode, v: &GroundCode) -> Option<Line> {
    let l = u.len().div_ceil(2);
    if u.is_antipode(v) {
        return Some(Line::Antipodal);
    }
    if u.hamming(v) != 1 {
        return None;
    }
    let idx = (1..=u.len()).find(|&i| u.get(i) != v.get(i)).expect("one difference");
    Some(if idx <= l { Line::Column(idx) } else { Line::Row(idx - l) })
}

/// A point `R(σ, η, m, k)` of the path complex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinimalPathPoint {
    pub sigma: SpinConfig,
    pub eta: SpinConfig,
    pub m: usize,
    pub k: usize,
}

/// `R(σ, η, m, k)`: `σ` with the `k` sites of the joining line starting at `m`
/// taken from `η`.
pub fn minimal_path_config(sigma: &SpinConfig, eta: &SpinConfig, m: usize, k: usize) -> Result<SpinConfig> {
    let u = encode_ground(sigma)?;
    let v = encode_ground(eta)?;
    let l = sigma.lattice().side();
    let line = joining_line(&u, &v).ok_or(Error::NotNeighbours)?;
    if u.order(&v) != Ordering::Less {
        return Err(Error::NotNeighbours);
    }
    if !(1..=l).contains(&m) || k > l {
        return Err(Error::InvalidSpec(format!("need m in [1:{l}] and k in [0:{l}]")));
    }
    Ok(flip_sites(sigma, &line.segment(l, m, k)))
}

/// Every `(σ, η, m, k)` with `k ∈ [1:L-1]` and `R(σ, η, m, k) = ζ`, sorted by
/// `(w(σ), m, w(η), k)`. Ground states and configurations off the path
/// complex give [`Error::OffPathComplex`].
pub fn locate_on_minimal_path(zeta: &SpinConfig) -> Result<Vec<MinimalPathPoint>> {
    require_torus(zeta.lattice())?;
    let l = zeta.lattice().side();
    if l < 2 || !matches!(defect_count(zeta), 1..=4) {
        return Err(Error::OffPathComplex);
    }
    let mut out: Vec<(GroundCode, GroundCode, MinimalPathPoint)> = Vec::new();
    for line in Line::all(l) {
        let full = line.segment(l, 1, l);
        for m in 1..=l {
            for k in 1..l {
                let sigma = flip_sites(zeta, &line.segment(l, m, k));
                if !is_ground_state(&sigma) {
                    continue;
                }
                let eta = flip_sites(&sigma, &full);
                let (u, v) = (encode_ground(&sigma)?, encode_ground(&eta)?);
                if u.order(&v) == Ordering::Less {
                    out.push((u, v, MinimalPathPoint { sigma, eta, m, k }));
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::OffPathComplex);
    }
    out.sort_by(|a, b| a.0.order(&b.0).then(a.2.m.cmp(&b.2.m)).then_with(|| a.1.order(&b.1)).then(a.2.k.cmp(&b.2.k)));
    Ok(out.into_iter().map(|(_, _, p)| p).collect())
}

/// `φ(ζ)`: number of decompositions of `ζ`.
pub fn phi(zeta: &SpinConfig) -> Result<usize> {
    locate_on_minimal_path(zeta).map(|v| v.len())
}

/// `ĝ(u) = ||u| - (2L-1)/2|`.
pub fn g_hat(u: &GroundCode) -> f64 {
    (u.weight() as f64 - u.len() as f64 / 2.0).abs()
}

/// The periodic test function `g`.
pub fn test_function_g(zeta: &SpinConfig) -> Result<f64> {
    if is_ground_state(zeta) {
        return Ok(g_hat(&encode_ground(zeta)?));
    }
    let l = zeta.lattice().side() as f64;
    match locate_on_minimal_path(zeta) {
        Ok(points) => {
            let p = &points[0];
            let t = p.k as f64 / l;
            Ok(t * g_hat(&encode_ground(&p.eta)?) + (1.0 - t) * g_hat(&encode_ground(&p.sigma)?))
        }
        Err(Error::OffPathComplex) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Empirical transition counts of the trace chain on the ground states.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceKernel {
    pub side: usize,
    pub beta: f64,
    /// `(u, v) → count`, codes as [`GroundCode::to_bits`].
    pub counts: BTreeMap<(u64, u64), u64>,
    /// Codes whose rows have fewer than `min_row_visits` outgoing transitions.
    pub flagged: Vec<u64>,
    pub min_row_visits: u64,
}

/// Share of transition mass by code distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelMass {
    pub hamming_one: f64,
    pub antipode: f64,
    pub other: f64,
}

impl TraceKernel {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn row_total(&self, u: u64) -> u64 {
        self.counts.range((u, 0)..=(u, u64::MAX)).map(|(_, c)| c).sum()
    }

    pub fn probability(&self, u: u64, v: u64) -> f64 {
        let row = self.row_total(u);
        if row == 0 {
            return 0.0;
        }
        self.counts.get(&(u, v)).copied().unwrap_or(0) as f64 / row as f64
    }

    pub fn mass(&self) -> KernelMass {
        let n = 2 * self.side - 1;
        let total = self.total().max(1) as f64;
        let (mut h1, mut anti, mut other) = (0u64, 0u64, 0u64);
        for (&(u, v), &c) in &self.counts {
            match (u ^ v).count_ones() as usize {
                1 => h1 += c,
                d if d == n => anti += c,
                _ => other += c,
            }
        }
        KernelMass { hamming_one: h1 as f64 / total, antipode: anti as f64 / total, other: other as f64 / total }
    }

    /// CSV `u_code,v_code,count,probability`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema=1\nu_code,v_code,count,probability\n");
        for (&(u, v), &c) in &self.counts {
            out.push_str(&format!(
                "{},{},{},{:.12}\n",
                GroundCode::from_bits(self.side, u),
                GroundCode::from_bits(self.side, v),
                c,
                self.probability(u, v)
            ));
        }
        out
    }
}

/// Runs `replicas` trace chains on `𝒢` from the all-plus torus, `steps`
/// transitions in total, and merges their transition counts.
pub fn estimate_trace_kernel(
    beta: f64,
    side: usize,
    steps: usize,
    replicas: usize,
    seed: u64,
    budget: u64,
) -> Result<TraceKernel> {
    let lat = Lattice::periodic(side);
    let model = RateModel::metropolis(beta);
    let start = SpinConfig::all_plus(&lat);
    let replicas = replicas.max(1);
    let per = steps.div_ceil(replicas);
    let samples: Vec<_> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            trace_chain_on_stream(model, &start, |w: &Walker| w.defect_count() == 0, per, seed, r as u64, budget)
                .map_err(|e| Error::BudgetExhausted(e.budget))
        })
        .collect();
    let mut counts = BTreeMap::new();
    for s in samples {
        let s = s?;
        let codes: Vec<u64> = s.states.iter().map(|c| encode_ground(c).map(|g| g.to_bits())).collect::<Result<_>>()?;
        for w in codes.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0u64) += 1;
        }
    }
    let min_row_visits = 5;
    let mut kernel = TraceKernel { side, beta, counts, flagged: Vec::new(), min_row_visits };
    kernel.flagged = (0..1u64 << (2 * side - 1)).filter(|&u| kernel.row_total(u) < min_row_visits).collect();
    Ok(kernel)
}

/// Outcome of excursions away from a ground state.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcursionStats {
    pub beta: f64,
    pub side: usize,
    pub replicas: usize,
    pub exhausted: usize,
    /// `P[|D(X_end)| > 4]`.
    pub p_escape: f64,
    /// `1 - P[X_end = σ]`.
    pub p_noreturn: f64,
    pub p_noreturn_se: f64,
    /// `E[τ_end - τ_start]` with its 95% interval.
    pub duration: HittingEstimate,
}

impl ExcursionStats {
    pub const CSV_HEADER: &'static str = "beta,L,p_escape,p_noreturn,mean_time,ci_lo,ci_hi";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.beta,
            self.side,
            self.p_escape,
            self.p_noreturn,
            self.duration.mean,
            self.duration.ci_lo,
            self.duration.ci_hi
        )
    }
}

/// Single excursions from the all-plus torus: leave it, then run until the
/// chain is back in `𝒢` or holds more than four defects.
pub fn excursion_statistics(beta: f64, side: usize, replicas: usize, seed: u64, budget: u64) -> Result<ExcursionStats> {
    let lat = Lattice::periodic(side);
    let model = RateModel::metropolis(beta);
    let start = SpinConfig::all_plus(&lat);
    let runs: Vec<Option<(bool, bool, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut w = Walker::new(model, &start, seed, r as u64);
            w.step();
            let t0 = w.time();
            let remaining = budget.saturating_sub(w.events());
            if !w.run_until(|w| w.defect_count() == 0 || w.defect_count() > 4, remaining) {
                return None;
            }
            Some((w.defect_count() > 4, w.config() != &start, w.time() - t0))
        })
        .collect();
    let done: Vec<(bool, bool, f64)> = runs.iter().flatten().copied().collect();
    if done.is_empty() {
        return Err(Error::BudgetExhausted(budget));
    }
    let n = done.len() as f64;
    let p_escape = done.iter().filter(|r| r.0).count() as f64 / n;
    let p_noreturn = done.iter().filter(|r| r.1).count() as f64 / n;
    Ok(ExcursionStats {
        beta,
        side,
        replicas,
        exhausted: replicas - done.len(),
        p_escape,
        p_noreturn,
        p_noreturn_se: (p_noreturn * (1.0 - p_noreturn) / n).sqrt(),
        duration: HittingEstimate::from_samples(done.iter().map(|r| r.2).collect(), replicas - done.len()),
    })
}

/// Where a two-flip segment excursion ended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegmentExits {
    /// Reached one flip from `σ` (`k = 1`).
    pub near: usize,
    /// Reached one flip from `η` (`k = L-1`).
    pub far: usize,
    /// Left the path complex (more than four defects).
    pub escaped: usize,
    pub exhausted: usize,
}

/// Starts at `R(σ, η, 1, 2)` on column 1 and records which end of the
/// segment walk is reached first.
pub fn segment_exits(beta: f64, side: usize, replicas: usize, seed: u64, budget: u64) -> Result<SegmentExits> {
    if side < 4 {
        return Err(Error::InvalidSpec("segment walks need side at least 4".into()));
    }
    let lat = Lattice::periodic(side);
    let mut u = GroundCode(vec![-1; 2 * side - 1]);
    let sigma = decode_ground(&lat, &u)?;
    u.0[0] = 1;
    let eta = decode_ground(&lat, &u)?;
    let start = minimal_path_config(&sigma, &eta, 1, 2)?;
    let model = RateModel::metropolis(beta);
    let diff =
        |a: &SpinConfig, b: &SpinConfig| a.bits().iter().zip(b.bits()).map(|(x, y)| (x ^ y).count_ones()).sum::<u32>();
    let outcomes: Vec<u8> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut w = Walker::new(model, &start, seed, r as u64);
            let hit = |w: &Walker| w.defect_count() > 4 || diff(w.config(), &sigma) == 1 || diff(w.config(), &eta) == 1;
            if !w.run_until(hit, budget) {
                3
            } else if w.defect_count() > 4 {
                2
            } else if diff(w.config(), &sigma) == 1 {
                0
            } else {
                1
            }
        })
        .collect();
    let mut out = SegmentExits::default();
    for o in outcomes {
        match o {
            0 => out.near += 1,
            1 => out.far += 1,
            2 => out.escaped += 1,
            _ => out.exhausted += 1,
        }
    }
    Ok(out)
}

/// Gambler's ruin: a walk on `[1 : L-1]` from `k0` hits `L-1` before `1`
/// with probability `(k0 - 1) / (L - 2)`.
pub fn gambler_ruin_far(k0: usize, side: usize) -> f64 {
    (k0 as f64 - 1.0) / (side as f64 - 2.0)
}
