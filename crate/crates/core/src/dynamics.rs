//! Continuous-time single-spin-flip dynamics: rates, event-driven simulation,
//! hitting times and trace chains.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::lattice::{DefectConfig, Lattice, Site, SpinConfig};

/// Default cap on simulated events per run.
pub const DEFAULT_EVENT_BUDGET: u64 = 200_000_000;

/// A generator seeded with `seed` on stream `stream`. Distinct streams are
/// independent, which is how replicas split a master seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RateKind {
    Metropolis,
    HeatBath,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateModel {
    pub kind: RateKind,
    pub beta: f64,
}

impl RateModel {
    pub fn metropolis(beta: f64) -> Self {
        RateModel { kind: RateKind::Metropolis, beta }
    }

    pub fn heat_bath(beta: f64) -> Self {
        RateModel { kind: RateKind::HeatBath, beta }
    }

    /// Flip rate for an energy change `dh`.
    pub fn rate_for(&self, dh: i32) -> f64 {
        let x = self.beta * dh as f64;
        match self.kind {
            RateKind::Metropolis => {
                if dh > 0 {
                    (-x).exp()
                } else {
                    1.0
                }
            }
            RateKind::HeatBath => {
                // 1/(1+e^x) written to stay finite for large |x|
                if x > 0.0 {
                    let e = (-x).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + x.exp())
                }
            }
        }
    }

    /// Rates for `dh = -4, -2, 0, 2, 4`.
    fn table(&self) -> [f64; 5] {
        [-4, -2, 0, 2, 4].map(|dh| self.rate_for(dh))
    }
}

/// Energy change `H(σ^x) - H(σ)` of flipping site index `i`.
pub fn energy_change(cfg: &SpinConfig, i: usize) -> i32 {
    cfg.lattice().site_plaquettes(i).iter().map(|&p| crate::lattice::plaquette_value_at(cfg, p as usize) as i32).sum()
}

/// `c(x, σ)`.
pub fn site_rate(model: &RateModel, cfg: &SpinConfig, x: Site) -> Result<f64> {
    let i = cfg.lattice().site_index(x).ok_or(Error::InvalidSite(x.x, x.y))?;
    if !cfg.lattice().is_periodic() && !in_fixed_range(cfg.lattice(), x) {
        return Err(Error::InvalidSite(x.x, x.y));
    }
    Ok(model.rate_for(energy_change(cfg, i)))
}

fn in_fixed_range(lat: &Lattice, x: Site) -> bool {
    let (lo, hi) = lat.site_range();
    (lo..=hi).contains(&x.x) && (lo..=hi).contains(&x.y)
}

/// Rate of the defect move at `x`, which toggles every plaquette containing `x`.
pub fn defect_rate(model: &RateModel, d: &DefectConfig, x: Site) -> Result<f64> {
    let lat = d.lattice();
    let i = lat.site_index(x).ok_or(Error::InvalidSite(x.x, x.y))?;
    let dh: i32 = lat.site_plaquettes(i).iter().map(|&p| if d.is_defect_index(p as usize) { -1 } else { 1 }).sum();
    Ok(model.rate_for(dh))
}

/// Binary tree of partial sums for proportional sampling.
#[derive(Clone, Debug)]
struct SumTree {
    size: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(values: &[f64]) -> Self {
        let size = values.len().next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + values.len()].copy_from_slice(values);
        for i in (1..size).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        SumTree { size, nodes }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, i: usize, v: f64) {
        let mut k = i + self.size;
        self.nodes[k] = v;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u`.
    fn find(&self, mut u: f64) -> usize {
        let mut k = 1;
        while k < self.size {
            let left = self.nodes[2 * k];
            if u < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                u -= left;
                k = 2 * k + 1;
            }
        }
        k - self.size
    }
}

/// A running realisation of the chain. Rates are cached per site and patched
/// locally after each flip.
#[derive(Clone)]
pub struct Walker {
    lattice: Arc<Lattice>,
    model: RateModel,
    table: [f64; 5],
    state: SpinConfig,
    plaq: Vec<i8>,
    defects: usize,
    dh: Vec<i32>,
    tree: SumTree,
    time: f64,
    events: u64,
    rng: ChaCha12Rng,
}

impl fmt::Debug for Walker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Walker").field("time", &self.time).field("events", &self.events).finish()
    }
}

impl Walker {
    pub fn new(model: RateModel, cfg: &SpinConfig, seed: u64, stream: u64) -> Self {
        let lattice = cfg.lattice().clone();
        let plaq: Vec<i8> = (0..lattice.n_plaquettes()).map(|p| crate::lattice::plaquette_value_at(cfg, p)).collect();
        let defects = plaq.iter().filter(|&&v| v < 0).count();
        let table = model.table();
        let dh: Vec<i32> = (0..lattice.n_sites())
            .map(|i| lattice.site_plaquettes(i).iter().map(|&p| plaq[p as usize] as i32).sum())
            .collect();
        let rates: Vec<f64> = dh.iter().map(|&d| table[((d + 4) / 2) as usize]).collect();
        Walker {
            lattice,
            model,
            table,
            state: cfg.clone(),
            plaq,
            defects,
            dh,
            tree: SumTree::new(&rates),
            time: 0.0,
            events: 0,
            rng: seeded_rng(seed, stream),
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn model(&self) -> &RateModel {
        &self.model
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn config(&self) -> &SpinConfig {
        &self.state
    }

    pub fn defect_count(&self) -> usize {
        self.defects
    }

    pub fn total_rate(&self) -> f64 {
        self.tree.total()
    }

    pub fn rate_at(&self, i: usize) -> f64 {
        self.table[((self.dh[i] + 4) / 2) as usize]
    }

    /// Flips site index `i` without advancing time.
    pub fn flip(&mut self, i: usize) {
        self.state.flip_index(i);
        let lat = self.lattice.clone();
        for &p in lat.site_plaquettes(i) {
            let p = p as usize;
            self.plaq[p] = -self.plaq[p];
            if self.plaq[p] < 0 {
                self.defects += 1;
            } else {
                self.defects -= 1;
            }
            let delta = 2 * self.plaq[p] as i32;
            for &s in lat.plaquette_sites(p) {
                let s = s as usize;
                self.dh[s] += delta;
            }
        }
        for &p in lat.site_plaquettes(i) {
            for &s in lat.plaquette_sites(p as usize) {
                let s = s as usize;
                let r = self.rate_at(s);
                self.tree.set(s, r);
            }
        }
    }

    /// Advances by one event and returns the flipped site index.
    pub fn step(&mut self) -> usize {
        let total = self.tree.total();
        let e: f64 = self.rng.sample(Exp1);
        self.time += e / total;
        let u = self.rng.random::<f64>() * total;
        let i = self.tree.find(u);
        self.flip(i);
        self.events += 1;
        i
    }

    /// Steps until `stop` holds (checked before every event). Returns false if
    /// `budget` events elapse first.
    pub fn run_until(&mut self, mut stop: impl FnMut(&Walker) -> bool, budget: u64) -> bool {
        let start = self.events;
        loop {
            if stop(self) {
                return true;
            }
            if self.events - start >= budget {
                return false;
            }
            self.step();
        }
    }
}

/// Initial state plus time-stamped flips.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub initial: SpinConfig,
    pub events: Vec<(f64, Site)>,
    pub rng_seed: u64,
}

impl Trajectory {
    /// State reached by replaying every event.
    pub fn final_state(&self) -> Result<SpinConfig> {
        let mut c = self.initial.clone();
        for &(_, s) in &self.events {
            let i = c.lattice().site_index(s).ok_or(Error::InvalidSite(s.x, s.y))?;
            c.flip_index(i);
        }
        Ok(c)
    }

    /// Line records `time site_x site_y`, preceded by comment lines holding
    /// the seed and the initial configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# schema=1\n");
        out.push_str(&format!("# seed={}\n", self.rng_seed));
        for line in self.initial.to_text().lines() {
            out.push_str(&format!("#> {line}\n"));
        }
        for &(t, s) in &self.events {
            out.push_str(&format!("{t:.17e} {} {}\n", s.x, s.y));
        }
        out
    }

    pub fn from_text(lattice: &Arc<Lattice>, text: &str) -> Result<Self> {
        let mut rng_seed = 0;
        let mut init = String::new();
        let mut events = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rows) = line.strip_prefix("#>") {
                init.push_str(rows.trim());
                init.push('\n');
            } else if let Some(s) = line.strip_prefix("# seed=") {
                rng_seed = s.trim().parse().map_err(|_| Error::Parse(format!("bad seed line {line:?}")))?;
            } else if line.starts_with('#') || line.is_empty() {
                continue;
            } else {
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 3 {
                    return Err(Error::Parse(format!("expected `time x y`, got {line:?}")));
                }
                let bad = || Error::Parse(format!("bad record {line:?}"));
                let t: f64 = f[0].parse().map_err(|_| bad())?;
                let x: i32 = f[1].parse().map_err(|_| bad())?;
                let y: i32 = f[2].parse().map_err(|_| bad())?;
                events.push((t, Site::new(x, y)));
            }
        }
        let initial = SpinConfig::from_text(lattice, &init)?;
        Ok(Trajectory { initial, events, rng_seed })
    }
}

/// Raised when a run hits its event budget; carries what was produced.
#[derive(Debug, Error)]
#[error("event budget of {budget} events exhausted")]
pub struct Exhausted<T: fmt::Debug> {
    pub partial: T,
    pub budget: u64,
}

/// Event-driven simulation from `cfg` until `stop` holds. `stop` sees the
/// walker before each event, so a predicate true at time zero yields no events.
pub fn simulate(
    model: RateModel,
    cfg: &SpinConfig,
    mut stop: impl FnMut(&Walker) -> bool,
    seed: u64,
    budget: u64,
) -> std::result::Result<Trajectory, Exhausted<Trajectory>> {
    let mut w = Walker::new(model, cfg, seed, 0);
    let mut events = Vec::new();
    loop {
        if stop(&w) {
            return Ok(Trajectory { initial: cfg.clone(), events, rng_seed: seed });
        }
        if w.events() >= budget {
            return Err(Exhausted { partial: Trajectory { initial: cfg.clone(), events, rng_seed: seed }, budget });
        }
        let i = w.step();
        events.push((w.time(), w.lattice().site_at(i)));
    }
}

/// Mean and confidence interval of replica hitting times.
#[derive(Clone, Debug, PartialEq)]
pub struct HittingEstimate {
    pub samples: Vec<f64>,
    pub exhausted: usize,
    pub mean: f64,
    pub std_err: f64,
    /// 95% interval from the normal approximation of `ln(mean)`.
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl HittingEstimate {
    pub fn from_samples(samples: Vec<f64>, exhausted: usize) -> Self {
        let n = samples.len() as f64;
        let mean = if samples.is_empty() { f64::NAN } else { samples.iter().sum::<f64>() / n };
        let var =
            if samples.len() > 1 { samples.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        let std_err = (var / n).sqrt();
        let (ci_lo, ci_hi) = if mean > 0.0 {
            let h = 1.96 * std_err / mean;
            (mean * (-h).exp(), mean * h.exp())
        } else {
            (mean, mean)
        };
        HittingEstimate { samples, exhausted, mean, std_err, ci_lo, ci_hi }
    }

    /// Standard error of `ln(mean)`.
    pub fn log_std_err(&self) -> f64 {
        self.std_err / self.mean
    }
}

/// Hitting time of `target` from `cfg`, estimated over independent replicas
/// run in parallel. Replicas that exhaust `budget` are excluded and counted.
pub fn hitting_time(
    model: RateModel,
    cfg: &SpinConfig,
    target: impl Fn(&Walker) -> bool + Sync,
    seed: u64,
    replicas: usize,
    budget: u64,
) -> HittingEstimate {
    let results: Vec<Option<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut w = Walker::new(model, cfg, seed, r as u64);
            w.run_until(&target, budget).then(|| w.time())
        })
        .collect();
    let exhausted = results.iter().filter(|r| r.is_none()).count();
    HittingEstimate::from_samples(results.into_iter().flatten().collect(), exhausted)
}

/// Successive distinct visits to a set `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSample {
    pub states: Vec<SpinConfig>,
    /// `t_i`: time the i-th recorded state was entered.
    pub entry_times: Vec<f64>,
    /// `s_i`: first time after `t_i` at which the state changes.
    pub exit_times: Vec<f64>,
}

/// Records `steps` transitions of the trace of the chain on `S`: after each
/// recorded state the chain runs until it sits in `S` at a different state.
pub fn trace_chain(
    model: RateModel,
    cfg: &SpinConfig,
    in_s: impl Fn(&Walker) -> bool,
    steps: usize,
    seed: u64,
    budget: u64,
) -> std::result::Result<TraceSample, Exhausted<TraceSample>> {
    trace_chain_on_stream(model, cfg, in_s, steps, seed, 0, budget)
}

/// [`trace_chain`] on RNG stream `stream`.
pub fn trace_chain_on_stream(
    model: RateModel,
    cfg: &SpinConfig,
    in_s: impl Fn(&Walker) -> bool,
    steps: usize,
    seed: u64,
    stream: u64,
    budget: u64,
) -> std::result::Result<TraceSample, Exhausted<TraceSample>> {
    let mut w = Walker::new(model, cfg, seed, stream);
    let mut sample = TraceSample { states: Vec::new(), entry_times: Vec::new(), exit_times: Vec::new() };
    if !w.run_until(&in_s, budget) {
        return Err(Exhausted { partial: sample, budget });
    }
    sample.states.push(w.config().clone());
    sample.entry_times.push(w.time());
    while sample.states.len() <= steps {
        let last = sample.states.last().expect("nonempty").clone();
        let remaining = budget.saturating_sub(w.events());
        if remaining == 0 {
            return Err(Exhausted { partial: sample, budget });
        }
        w.step();
        sample.exit_times.push(w.time());
        let remaining = budget.saturating_sub(w.events());
        if !w.run_until(|w| w.config() != &last && in_s(w), remaining) {
            return Err(Exhausted { partial: sample, budget });
        }
        sample.states.push(w.config().clone());
        sample.entry_times.push(w.time());
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{defect_map, relative_weight};

    #[test]
    fn rate_examples() {
        let m = RateModel::metropolis(1.5);
        let lat = Lattice::plus(3);
        let plus = SpinConfig::all_plus(&lat);
        assert!((site_rate(&m, &plus, Site::new(2, 2)).unwrap() - (-6.0f64).exp()).abs() < 1e-15);
        // site (1,1) next to a flipped (2,2): one shared plaquette (1,1) is a defect
        let c = SpinConfig::from_minus_sites(&lat, &[Site::new(2, 2)]).unwrap();
        assert!((site_rate(&m, &c, Site::new(1, 1)).unwrap() - (-3.0f64).exp()).abs() < 1e-15);
        // (2,1) touches two defects
        assert_eq!(site_rate(&m, &c, Site::new(2, 1)).unwrap(), 1.0);
        assert!(site_rate(&m, &plus, Site::new(0, 0)).is_err());
    }

    #[test]
    fn defect_rate_examples() {
        let m = RateModel::metropolis(0.7);
        let lat = Lattice::plus(3);
        let empty = crate::lattice::DefectConfig::empty(&lat);
        assert!((defect_rate(&m, &empty, Site::new(1, 1)).unwrap() - (-2.8f64).exp()).abs() < 1e-15);
        let c = SpinConfig::from_minus_sites(&lat, &[Site::new(2, 2)]).unwrap();
        assert_eq!(defect_rate(&m, &defect_map(&c), Site::new(2, 2)).unwrap(), 1.0);
    }

    #[test]
    fn detailed_balance_and_kind_ratio() {
        let lat = Lattice::plus(3);
        for model in [RateModel::metropolis(1.3), RateModel::heat_bath(1.3)] {
            for w in 0..512u64 {
                let c = SpinConfig::from_word(&lat, w);
                for i in 0..9 {
                    let s = lat.site_at(i);
                    let f = c.flipped_index(i);
                    let lhs = relative_weight(&c, 1.3).unwrap() * site_rate(&model, &c, s).unwrap();
                    let rhs = relative_weight(&f, 1.3).unwrap() * site_rate(&model, &f, s).unwrap();
                    assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(rhs));
                }
            }
        }
        for dh in [-4, -2, 0, 2, 4] {
            let m = RateModel::metropolis(2.0).rate_for(dh);
            let h = RateModel::heat_bath(2.0).rate_for(dh);
            assert!(h <= m && m <= 2.0 * h + 1e-15);
        }
    }

    #[test]
    fn sum_tree_sampling_is_proportional() {
        let t = SumTree::new(&[1.0, 0.0, 3.0]);
        assert_eq!(t.total(), 4.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 2);
        assert_eq!(t.find(3.99), 2);
    }

    #[test]
    fn walker_cache_matches_fresh_rates() {
        let lat = Lattice::periodic(4);
        let model = RateModel::metropolis(1.0);
        let mut w = Walker::new(model, &SpinConfig::all_plus(&lat), 3, 0);
        for _ in 0..500 {
            w.step();
            let fresh = Walker::new(model, w.config(), 0, 0);
            for i in 0..lat.n_sites() {
                assert_eq!(w.rate_at(i), fresh.rate_at(i));
            }
            assert_eq!(w.defect_count(), fresh.defect_count());
            assert!((w.total_rate() - fresh.total_rate()).abs() < 1e-9);
        }
    }

    #[test]
    fn stop_at_zero_gives_no_events() {
        let lat = Lattice::plus(3);
        let t = simulate(RateModel::metropolis(1.0), &SpinConfig::all_plus(&lat), |_| true, 1, 10).unwrap();
        assert!(t.events.is_empty());
    }

    #[test]
    fn budget_exhaustion_returns_partial() {
        let lat = Lattice::plus(3);
        let err = simulate(RateModel::metropolis(1.0), &SpinConfig::all_plus(&lat), |_| false, 1, 25).unwrap_err();
        assert_eq!(err.partial.events.len(), 25);
    }

    #[test]
    fn trajectory_text_round_trip() {
        let lat = Lattice::plus(3);
        let t =
            simulate(RateModel::metropolis(0.5), &SpinConfig::all_plus(&lat), |w| w.events() >= 40, 9, 1000).unwrap();
        let back = Trajectory::from_text(&lat, &t.to_text()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.final_state().unwrap(), t.final_state().unwrap());
    }

    #[test]
    fn hitting_time_of_current_state_is_zero() {
        let lat = Lattice::plus(2);
        let est =
            hitting_time(RateModel::metropolis(1.0), &SpinConfig::all_plus(&lat), |w| w.defect_count() == 0, 1, 4, 10);
        assert_eq!(est.samples, vec![0.0; 4]);
        assert_eq!(est.exhausted, 0);
    }

    #[test]
    fn trace_on_whole_space_is_the_jump_chain() {
        let lat = Lattice::plus(3);
        let model = RateModel::metropolis(1.0);
        let start = SpinConfig::all_plus(&lat);
        let tr = trace_chain(model, &start, |_| true, 50, 4, 10_000).unwrap();
        let traj = simulate(model, &start, |w| w.events() >= 50, 4, 10_000).unwrap();
        let mut c = start.clone();
        assert_eq!(tr.states[0], c);
        for (k, &(t, s)) in traj.events.iter().enumerate() {
            c.flip_index(lat.site_index(s).unwrap());
            assert_eq!(tr.states[k + 1], c);
            assert_eq!(tr.entry_times[k + 1], t);
            assert_eq!(tr.exit_times[k], t);
        }
    }
}
