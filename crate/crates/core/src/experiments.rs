//! Experiment drivers behind the `spm` command line: configuration parsing,
//! exact analyses, flow costs, Arrhenius sweeps, simulations and the
//! verification suites.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::dynamics::{hitting_time, seeded_rng, simulate, HittingEstimate, RateModel, Trajectory, Walker};
use crate::error::{Error, Result};
use crate::exact::{
    build_generator, dense_gap, dirichlet_form, ground_mass, lanczos_gap, profile_mixing_bound, spectral_gap,
    spectral_profile, stationary_distribution, tabulate, test_function_plus, tv_mixing_time, variance,
};
use crate::lattice::{
    critical_length, defect_count, defect_map, enumerate_by_defect_count, ground_states, invert_defects,
    invert_defects_with_frame, parity_check, DefectConfig, FixedBoundary, Lattice, LatticeSpec, Site, SpinConfig,
    DEFAULT_BUDGET,
};
use crate::paths::{
    classify_occupancy, compute_split, extended_rectangles, flow_cost, identify_split, naive_path, sample_full_path,
    sample_partial_path, FlowMode, PathParams, SegmentKind, DEFAULT_SPLIT_THRESHOLD,
};
use crate::periodic::{
    all_ground_states, decode_ground, encode_ground, locate_on_minimal_path, minimal_path_config, test_function_g,
    GroundCode,
};

pub const SCHEMA: &str = "# schema=1";

/// Lattice side: a number, or `L_c(β)` per β.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SizeSpec {
    Fixed(usize),
    Critical,
}

impl SizeSpec {
    pub fn resolve(&self, beta: f64) -> usize {
        match self {
            SizeSpec::Fixed(l) => *l,
            SizeSpec::Critical => critical_length(beta),
        }
    }
}

impl FromStr for SizeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "critical" {
            return Ok(SizeSpec::Critical);
        }
        match s.parse::<usize>() {
            Ok(l) if l >= 1 => Ok(SizeSpec::Fixed(l)),
            _ => Err(Error::Parse(format!("size must be a positive integer or `critical`, got {s:?}"))),
        }
    }
}

/// Boundary condition as given on the command line.
#[derive(Clone, Debug, PartialEq)]
pub enum BcSpec {
    Plus,
    Periodic,
    /// Boundary frame read from a file in [`FixedBoundary::from_text`] form.
    Fixed(PathBuf),
}

impl BcSpec {
    pub fn label(&self) -> &'static str {
        match self {
            BcSpec::Plus => "plus",
            BcSpec::Periodic => "per",
            BcSpec::Fixed(_) => "fixed",
        }
    }

    pub fn lattice(&self, side: usize) -> Result<Arc<Lattice>> {
        let spec = match self {
            BcSpec::Plus => LatticeSpec::plus(side),
            BcSpec::Periodic => LatticeSpec::periodic(side),
            BcSpec::Fixed(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Parse(format!("cannot read boundary file {}: {e}", path.display())))?;
                let frame = FixedBoundary::from_text(&text)?;
                if frame.side() != side {
                    return Err(Error::InvalidSpec(format!(
                        "boundary file is for side {}, requested side {side}",
                        frame.side()
                    )));
                }
                LatticeSpec::fixed(frame)
            }
        };
        Lattice::new(spec)
    }
}

impl FromStr for BcSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(BcSpec::Plus),
            "per" => Ok(BcSpec::Periodic),
            _ => match s.strip_prefix("fixed:") {
                Some(p) if !p.is_empty() => Ok(BcSpec::Fixed(PathBuf::from(p))),
                _ => Err(Error::Parse(format!("bc must be plus, per or fixed:<file>, got {s:?}"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeSpec {
    Exhaustive,
    MonteCarlo,
}

impl FromStr for ModeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exhaustive" => Ok(ModeSpec::Exhaustive),
            "mc" | "monte-carlo" => Ok(ModeSpec::MonteCarlo),
            _ => Err(Error::Parse(format!("mode must be exhaustive or mc, got {s:?}"))),
        }
    }
}

/// When a simulation stops.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StopCondition {
    Events(u64),
    Time(f64),
    HitGround,
}

impl FromStr for StopCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "hit-ground" {
            return Ok(StopCondition::HitGround);
        }
        let bad = || Error::Parse(format!("stop must be events=N, time=T or hit-ground, got {s:?}"));
        match s.split_once('=') {
            Some(("events", n)) => n.trim().parse().map(StopCondition::Events).map_err(|_| bad()),
            Some(("time", t)) => match t.trim().parse::<f64>() {
                Ok(t) if t >= 0.0 => Ok(StopCondition::Time(t)),
                _ => Err(bad()),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

impl FromStr for VerifyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(VerifyLevel::Quick),
            "full" => Ok(VerifyLevel::Full),
            _ => Err(Error::Parse(format!("level must be quick or full, got {s:?}"))),
        }
    }
}

/// Every accepted configuration key.
pub const CONFIG_KEYS: &[&str] = &[
    "beta",
    "size",
    "bc",
    "seed",
    "replicas",
    "out",
    "budget-events",
    "split-threshold",
    "mode",
    "samples",
    "k",
    "level",
    "stop",
    "eps",
    "steps",
    "threads",
];

/// Validated parameters shared by all commands.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub beta: Vec<f64>,
    pub size: SizeSpec,
    pub bc: BcSpec,
    pub seed: u64,
    pub replicas: usize,
    pub out: Option<PathBuf>,
    pub budget_events: u64,
    pub split_threshold: f64,
    pub mode: ModeSpec,
    pub samples: usize,
    pub k: usize,
    pub level: VerifyLevel,
    pub stop: StopCondition,
    pub eps: f64,
    pub steps: usize,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            beta: vec![1.0],
            size: SizeSpec::Fixed(3),
            bc: BcSpec::Plus,
            seed: 0,
            replicas: 200,
            out: None,
            budget_events: crate::dynamics::DEFAULT_EVENT_BUDGET,
            split_threshold: DEFAULT_SPLIT_THRESHOLD,
            mode: ModeSpec::Exhaustive,
            samples: 100_000,
            k: 1,
            level: VerifyLevel::Quick,
            stop: StopCondition::Events(1000),
            eps: 0.25,
            steps: 10_000,
            threads: None,
        }
    }
}

fn normalize_key(k: &str) -> String {
    k.trim().replace('_', "-")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
        let key = normalize_key(k);
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Parse(format!("line {}: unknown key {key:?}", n + 1)));
        }
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse(format!("{key}: cannot parse {v:?}")))
}

impl ExperimentConfig {
    /// Builds a configuration from key/value pairs, rejecting unknown keys and
    /// invalid values.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (k, v) in map {
            let key = normalize_key(k);
            match key.as_str() {
                "beta" => {
                    c.beta = v.split(',').map(|b| parse_num::<f64>("beta", b.trim())).collect::<Result<_>>()?;
                    if c.beta.is_empty() || c.beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
                        return Err(Error::Parse(format!("beta: need non-negative numbers, got {v:?}")));
                    }
                }
                "size" => c.size = v.parse()?,
                "bc" => c.bc = v.parse()?,
                "seed" => c.seed = parse_num("seed", v)?,
                "replicas" => c.replicas = parse_num("replicas", v)?,
                "out" => c.out = Some(PathBuf::from(v)),
                "budget-events" => c.budget_events = parse_num("budget-events", v)?,
                "split-threshold" => {
                    c.split_threshold = parse_num("split-threshold", v)?;
                    if c.split_threshold.is_nan() || c.split_threshold <= 0.0 {
                        return Err(Error::Parse("split-threshold must be positive".into()));
                    }
                }
                "mode" => c.mode = v.parse()?,
                "samples" => c.samples = parse_num("samples", v)?,
                "k" => c.k = parse_num("k", v)?,
                "level" => c.level = v.parse()?,
                "stop" => c.stop = v.parse()?,
                "eps" => {
                    c.eps = parse_num("eps", v)?;
                    if !(c.eps > 0.0 && c.eps < 1.0) {
                        return Err(Error::Parse("eps must lie in (0, 1)".into()));
                    }
                }
                "steps" => c.steps = parse_num("steps", v)?,
                "threads" => c.threads = Some(parse_num("threads", v)?),
                _ => return Err(Error::Parse(format!("unknown key {key:?}"))),
            }
        }
        if c.replicas == 0 {
            return Err(Error::Parse("replicas must be positive".into()));
        }
        Ok(c)
    }

    /// Config file first, then `overrides` on top.
    pub fn load(file: Option<&Path>, overrides: &BTreeMap<String, String>) -> Result<Self> {
        let mut map = match file {
            Some(p) => parse_config_text(
                &std::fs::read_to_string(p).map_err(|e| Error::Parse(format!("cannot read {}: {e}", p.display())))?,
            )?,
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            map.insert(normalize_key(k), v.clone());
        }
        Self::from_map(&map)
    }
}

/// One row of `cmd_exact`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactRow {
    pub beta: f64,
    pub side: usize,
    pub bc: &'static str,
    pub gap: f64,
    pub trel: f64,
    pub tmix: f64,
    pub profile_bound: f64,
    pub pi_ground: f64,
}

impl ExactRow {
    pub const CSV_HEADER: &'static str = "beta,L,bc,gap,trel,tmix,profile_bound,pi_ground";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.beta, self.side, self.bc, self.gap, self.trel, self.tmix, self.profile_bound, self.pi_ground
        )
    }
}

/// Gap, relaxation time, mixing time, spectral-profile bound and ground mass
/// of the exact generator.
pub fn cmd_exact(beta: f64, side: usize, bc: &BcSpec, eps: f64) -> Result<ExactRow> {
    let lat = bc.lattice(side)?;
    let g = build_generator(&lat, RateModel::metropolis(beta), DEFAULT_BUDGET)?;
    let gap = spectral_gap(&g)?;
    Ok(ExactRow {
        beta,
        side,
        bc: bc.label(),
        gap,
        trel: 1.0 / gap,
        tmix: tv_mixing_time(&g, eps)?,
        profile_bound: profile_mixing_bound(&g)?,
        pi_ground: ground_mass(&g),
    })
}

pub fn exact_csv(rows: &[ExactRow]) -> String {
    let mut out = format!("{SCHEMA}\n{}\n", ExactRow::CSV_HEADER);
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Comparison of `λ(S_k)` with the inverse flow cost.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowRow {
    pub beta: f64,
    pub side: usize,
    pub k: usize,
    pub mode: ModeSpec,
    pub lambda: f64,
    pub cost: f64,
    /// Standard error of the cost (Monte Carlo only).
    pub cost_se: f64,
    pub argmax_state: String,
    pub argmax_site: Site,
}

impl FlowRow {
    pub const CSV_HEADER: &'static str = "beta,L,k,mode,lambda,inv_cost,cost,cost_se,holds";

    pub fn inv_cost(&self) -> f64 {
        1.0 / self.cost
    }

    /// `λ(S_k) ≥ 1/𝒜`.
    pub fn holds(&self) -> bool {
        self.lambda >= self.inv_cost()
    }

    pub fn to_csv(&self) -> String {
        let mode = match self.mode {
            ModeSpec::Exhaustive => "exhaustive",
            ModeSpec::MonteCarlo => "mc",
        };
        let mut out = format!("{SCHEMA}\n");
        if self.mode == ModeSpec::MonteCarlo {
            out.push_str(
                "# monte carlo: cost is a lower estimate (max over observed edges); cost_se is its standard error\n",
            );
        }
        out.push_str(&format!("# argmax edge: state={} site={}\n", self.argmax_state, self.argmax_site));
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        out.push_str(&format!(
            "{},{},{},{},{:.12e},{:.12e},{:.12e},{:.6e},{}\n",
            self.beta,
            self.side,
            self.k,
            mode,
            self.lambda,
            self.inv_cost(),
            self.cost,
            self.cost_se,
            self.holds()
        ));
        out
    }
}

pub fn cmd_flow(
    beta: f64,
    side: usize,
    k: usize,
    mode: ModeSpec,
    samples: usize,
    seed: u64,
    c: f64,
) -> Result<FlowRow> {
    let lat = Lattice::plus(side);
    let g = build_generator(&lat, RateModel::metropolis(beta), DEFAULT_BUDGET)?;
    let lambda = spectral_profile(&g, k)?;
    let params = PathParams::new(beta).with_split_threshold(c);
    let fm = match mode {
        ModeSpec::Exhaustive => FlowMode::Exhaustive,
        ModeSpec::MonteCarlo => FlowMode::MonteCarlo { samples, seed },
    };
    let report = flow_cost(&lat, &params, k, fm, DEFAULT_BUDGET)?;
    let top = report.argmax().ok_or(Error::EmptyLevelSet)?;
    Ok(FlowRow {
        beta,
        side,
        k,
        mode,
        lambda,
        cost: report.cost,
        cost_se: top.std_err,
        argmax_state: crate::paths::state_hash(&top.e_minus),
        argmax_site: top.site,
    })
}

/// Minus rectangle `a × b` (`a ≤ b ≤ L`) with area closest to `L²/2`, ties
/// broken towards the squarer shape.
pub fn half_area_rectangle(side: usize) -> (usize, usize) {
    let target = (side * side) as f64 / 2.0;
    let mut best = (1, 1);
    let mut key = (f64::INFINITY, usize::MAX);
    for a in 1..=side {
        for b in a..=side {
            let k = (((a * b) as f64 - target).abs(), b - a);
            if k < key {
                key = k;
                best = (a, b);
            }
        }
    }
    best
}

/// Centred minus rectangle of [`half_area_rectangle`] size.
pub fn centered_block(lat: &Arc<Lattice>) -> Result<SpinConfig> {
    let l = lat.side();
    let (a, b) = half_area_rectangle(l);
    let (x0, y0) = ((l - a) / 2 + 1, (l - b) / 2 + 1);
    let sites: Vec<Site> =
        (0..b).flat_map(|j| (0..a).map(move |i| Site::new((x0 + i) as i32, (y0 + j) as i32))).collect();
    SpinConfig::from_minus_sites(lat, &sites)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrheniusPoint {
    pub beta: f64,
    pub side: usize,
    pub estimate: HittingEstimate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrheniusReport {
    pub bc: &'static str,
    pub points: Vec<ArrheniusPoint>,
    pub slope: f64,
    pub slope_se: f64,
}

impl ArrheniusReport {
    pub const CSV_HEADER: &'static str = "beta,L,bc,mean_tau,ci_lo,ci_hi,replicas,exhausted";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SCHEMA}\n");
        out.push_str(match self.bc {
            "plus" => "# tau: hitting time of all-plus from a centred minus rectangle of area about L^2/2\n",
            _ => "# tau: hitting time of another ground state from the all-plus ground state\n",
        });
        out.push_str(Self::CSV_HEADER);
        out.push('\n');
        for p in &self.points {
            let e = &p.estimate;
            out.push_str(&format!(
                "{},{},{},{:.6e},{:.6e},{:.6e},{},{}\n",
                p.beta,
                p.side,
                self.bc,
                e.mean,
                e.ci_lo,
                e.ci_hi,
                e.samples.len(),
                e.exhausted
            ));
        }
        out.push_str(&format!("# slope={:.6} slope_se={:.6}\n", self.slope, self.slope_se));
        out
    }
}

/// Weighted least squares fit of `y = a + s x`; returns `(s, se(s))`.
pub fn weighted_slope(points: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, w) in points {
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let det = sw * sxx - sx * sx;
    if points.len() < 2 || det.is_nan() || det <= 0.0 {
        return Err(Error::Numerical("slope needs two distinct abscissae with positive weight".into()));
    }
    Ok(((sw * sxy - sx * sy) / det, (sw / det).sqrt()))
}

/// Hitting-time sweep at `L = L_c(β)` with a weighted fit of `ln E[τ]` against β.
pub fn cmd_arrhenius(bc: &BcSpec, betas: &[f64], replicas: usize, seed: u64, budget: u64) -> Result<ArrheniusReport> {
    let mut points = Vec::new();
    for (n, &beta) in betas.iter().enumerate() {
        let side = critical_length(beta).max(1);
        let model = RateModel::metropolis(beta);
        let point_seed = seed.wrapping_add(n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let estimate = match bc {
            BcSpec::Plus => {
                let lat = Lattice::plus(side);
                let start = centered_block(&lat)?;
                hitting_time(model, &start, |w: &Walker| w.config().is_all_plus(), point_seed, replicas, budget)
            }
            BcSpec::Periodic => {
                if side < 2 {
                    return Err(Error::InvalidSpec(format!("L_c({beta}) = 1 leaves no second ground state")));
                }
                let lat = Lattice::periodic(side);
                let start = SpinConfig::all_plus(&lat);
                let s0 = start.clone();
                hitting_time(
                    model,
                    &start,
                    move |w: &Walker| w.defect_count() == 0 && w.config() != &s0,
                    point_seed,
                    replicas,
                    budget,
                )
            }
            BcSpec::Fixed(_) => return Err(Error::Unsupported("arrhenius sweeps use plus or per boundaries".into())),
        };
        if estimate.samples.len() < 2 {
            return Err(Error::BudgetExhausted(budget));
        }
        points.push(ArrheniusPoint { beta, side, estimate });
    }
    let fit: Vec<(f64, f64, f64)> =
        points.iter().map(|p| (p.beta, p.estimate.mean.ln(), p.estimate.log_std_err().powi(-2))).collect();
    let (slope, slope_se) = weighted_slope(&fit)?;
    Ok(ArrheniusReport { bc: bc.label(), points, slope, slope_se })
}

/// Default β grid of the Arrhenius sweep: 2 to 3.5 in steps of 0.25.
pub fn default_arrhenius_grid() -> Vec<f64> {
    (0..=6).map(|i| 2.0 + 0.25 * i as f64).collect()
}

/// Runs the dynamics from all-plus (or the ground state of a fixed
/// boundary) until `stop`.
pub fn cmd_simulate(lat: &Arc<Lattice>, beta: f64, stop: StopCondition, seed: u64, budget: u64) -> Result<Trajectory> {
    let start = SpinConfig::all_plus(lat);
    cmd_simulate_from(&start, beta, stop, seed, budget)
}

pub fn cmd_simulate_from(
    start: &SpinConfig,
    beta: f64,
    stop: StopCondition,
    seed: u64,
    budget: u64,
) -> Result<Trajectory> {
    let model = RateModel::metropolis(beta);
    let min_defects = if start.spec().is_plus_like() || start.lattice().is_periodic() {
        0
    } else {
        let g = ground_states(start.lattice(), DEFAULT_BUDGET)?;
        defect_count(&g[0])
    };
    let result = match stop {
        StopCondition::Events(n) => simulate(model, start, |w| w.events() >= n, seed, budget),
        StopCondition::Time(t) => {
            // stop before the first event that would land after `t`
            let mut probe = Walker::new(model, start, seed, 0);
            let mut n = 0u64;
            while n < budget {
                probe.step();
                if probe.time() > t {
                    break;
                }
                n += 1;
            }
            simulate(model, start, |w| w.events() >= n, seed, budget)
        }
        StopCondition::HitGround => simulate(model, start, |w| w.defect_count() == min_defects, seed, budget),
    };
    result.map_err(|e| Error::BudgetExhausted(e.budget))
}

/// Violation counts over a batch of sampled full paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PathSuiteStats {
    pub paths: usize,
    pub edges: usize,
    pub not_terminal: usize,
    pub too_long: usize,
    pub bad_drop: usize,
    pub excess: usize,
    pub split_checked: usize,
    pub split_missed: usize,
    pub max_drift: usize,
    pub typed_edges: usize,
    pub energy_violations: usize,
}

impl PathSuiteStats {
    pub fn clean(&self, max_drift: usize) -> bool {
        self.not_terminal == 0
            && self.too_long == 0
            && self.bad_drop == 0
            && self.excess == 0
            && self.split_missed == 0
            && self.max_drift <= max_drift
            && self.energy_violations == 0
    }
}

impl fmt::Display for PathSuiteStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} paths, {} edges; not terminal {}, too long {}, bad drop {}, excess {}, split {}/{} recovered, drift {}, energy {}/{} violated",
            self.paths,
            self.edges,
            self.not_terminal,
            self.too_long,
            self.bad_drop,
            self.excess,
            self.split_checked - self.split_missed,
            self.split_checked,
            self.max_drift,
            self.energy_violations,
            self.typed_edges
        )
    }
}

/// Samples `n` full paths from uniform random configurations of the plus
/// lattice of side `side` and checks every segment and edge.
pub fn path_suite(side: usize, params: &PathParams, n: usize, seed: u64) -> Result<PathSuiteStats> {
    use crate::dynamics::energy_change;
    use crate::paths::{edge_type, occupancy_vector, EdgeType};

    let lat = Lattice::plus(side);
    let model = RateModel::metropolis(params.beta);
    let beta = params.beta;
    let l = side as f64;
    let mut rng = seeded_rng(seed, 0);
    let mut st = PathSuiteStats { paths: n, ..Default::default() };
    for _ in 0..n {
        let mut sigma = SpinConfig::all_plus(&lat);
        for i in 0..lat.n_sites() {
            if rng.random::<bool>() {
                sigma.flip_index(i);
            }
        }
        let d0 = defect_count(&sigma) as f64;
        let path = sample_full_path(&sigma, params, &mut rng, None)?;
        if !path.terminal().is_all_plus() {
            st.not_terminal += 1;
        }
        if path.len() as f64 > l * l * (beta * l + 1.0).min(d0 / 2.0) {
            st.too_long += 1;
        }
        let states = path.states();
        st.edges += path.len();
        for seg in &path.segments {
            let SegmentKind::Rectangle { rect, part } = &seg.kind else { continue };
            let start = &states[seg.start];
            let d_start = defect_map(start);
            let n_start = d_start.count();
            let n_end = defect_count(&states[seg.start + seg.len]);
            if !(n_start >= n_end && matches!(n_start - n_end, 2 | 4)) {
                st.bad_drop += 1;
            }
            if states[seg.start..=seg.start + seg.len].iter().any(|s| defect_count(s) > n_start + 2) {
                st.excess += 1;
            }
            let split = compute_split(&d_start, params.split_threshold);
            let v0 = if *part > 0 { Some(occupancy_vector(&d_start, &split, *part)?) } else { None };
            let typed = rect.corners().iter().filter(|&&c| d_start.contains(c)).count() >= 3;
            for t in 0..seg.len {
                let e =
                    crate::paths::EdgeRef { e_minus: states[seg.start + t].clone(), site: path.flips[seg.start + t] };
                let dm = defect_map(&e.e_minus);
                if let Some(v0) = &v0 {
                    st.split_checked += 1;
                    if identify_split(&e, params.split_threshold) != *part {
                        st.split_missed += 1;
                    }
                    let v = occupancy_vector(&dm, &split, *part)?;
                    let drift = v.iter().zip(v0).map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0);
                    st.max_drift = st.max_drift.max(drift);
                }
                if typed {
                    let i = lat.site_index(e.site).ok_or(Error::InvalidSite(e.site.x, e.site.y))?;
                    let lhs = -beta * dm.count() as f64 + model.rate_for(energy_change(&e.e_minus, i)).ln();
                    let floor = -beta * n_start as f64;
                    let ok = match edge_type(&e, rect, start)? {
                        EdgeType::Init | EdgeType::Mid => lhs >= floor - 2.0 * beta - 1e-9,
                        EdgeType::Fin => lhs >= floor - 1e-9,
                        EdgeType::None => false,
                    };
                    st.typed_edges += 1;
                    if !ok {
                        st.energy_violations += 1;
                    }
                }
            }
        }
    }
    Ok(st)
}

/// Deliberate corruptions that the verification suite must detect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mutation {
    /// Parity check that ignores the last plaquette row.
    ParityCheck,
    /// Spectral gap reported at half its value.
    GapSolver,
    /// Rectangle removal that skips its final flip.
    RectangleRemoval,
}

impl Mutation {
    pub const ALL: [Mutation; 3] = [Mutation::ParityCheck, Mutation::GapSolver, Mutation::RectangleRemoval];

    pub fn name(&self) -> &'static str {
        match self {
            Mutation::ParityCheck => "parity-check",
            Mutation::GapSolver => "gap-solver",
            Mutation::RectangleRemoval => "rectangle-removal",
        }
    }
}

impl FromStr for Mutation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mutation::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Parse(format!("unknown mutation {s:?}")))
    }
}

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub property: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub level: VerifyLevel,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<28} {:<60} {:>7.2}s  {}",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.property,
                c.seconds,
                c.detail
            )?;
        }
        let failed = self.failures().len();
        write!(f, "{} checks, {} passed, {} failed", self.checks.len(), self.checks.len() - failed, failed)
    }
}

type CheckFn = Box<dyn Fn(&Ctx) -> std::result::Result<String, String>>;

struct Ctx {
    mutation: Option<Mutation>,
    seed: u64,
}

impl Ctx {
    fn parity(&self, d: &DefectConfig) -> bool {
        if self.mutation == Some(Mutation::ParityCheck) {
            let mut cut = d.clone();
            let (lo, hi) = d.lattice().plaquette_range();
            for x in lo..=hi {
                let _ = cut.set(Site::new(x, lo), false);
            }
            return parity_check(&cut);
        }
        parity_check(d)
    }

    fn gap(&self, g: &crate::exact::SparseGenerator) -> Result<f64> {
        let v = spectral_gap(g)?;
        Ok(if self.mutation == Some(Mutation::GapSolver) { v / 2.0 } else { v })
    }

    fn removal(&self, sigma: &SpinConfig, r: &crate::lattice::Rectangle) -> Result<crate::paths::CanonicalPath> {
        let mut p = crate::paths::rectangle_removal_path(sigma, r)?;
        if self.mutation == Some(Mutation::RectangleRemoval) {
            p.flips.pop();
        }
        Ok(p)
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn counting_bound(k: usize, l: f64) -> f64 {
    let kf = k as f64;
    let a = ((std::f64::consts::E * kf).powi(2) * l * l).powf(kf);
    let b = l.powf(3.0 * kf);
    a.min(b)
}

fn quick_checks() -> Vec<(&'static str, &'static str, CheckFn)> {
    vec![
        (
            "parity-check",
            "every reachable defect set passes the parity test (L=3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(3);
                for w in 0..512u64 {
                    let d = defect_map(&SpinConfig::from_word(&lat, w));
                    ensure(c.parity(&d), || format!("state {w:#x} rejected"))?;
                }
                let mut odd = DefectConfig::empty(&lat);
                odd.set(Site::new(1, 1), true).map_err(e2s)?;
                ensure(!c.parity(&odd), || "single defect accepted".into())?;
                Ok("512 states".into())
            }),
        ),
        (
            "parity-bijection",
            "defect map is a bijection onto parity-valid sets (L=3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(3);
                let mut seen = std::collections::HashSet::new();
                for w in 0..512u64 {
                    let s = SpinConfig::from_word(&lat, w);
                    let d = defect_map(&s);
                    ensure(invert_defects(&d).map_err(e2s)? == s, || format!("inverse fails at {w:#x}"))?;
                    seen.insert(d);
                }
                ensure(seen.len() == 512, || format!("{} distinct images", seen.len()))?;
                let valid = (0..1u64 << 16)
                    .filter(|m| {
                        let mut d = DefectConfig::empty(&lat);
                        for p in 0..16 {
                            if m >> p & 1 == 1 {
                                d.toggle_index(p);
                            }
                        }
                        c.parity(&d)
                    })
                    .count();
                ensure(valid == 512, || format!("{valid} parity-valid sets, expected 512"))?;
                Ok("512 images, 512 parity-valid sets".into())
            }),
        ),
        (
            "torus-parity",
            "torus defect sets pass parity and invert given a frame (side 3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::periodic(3);
                for w in 0..512u64 {
                    let s = SpinConfig::from_word(&lat, w);
                    let d = defect_map(&s);
                    ensure(c.parity(&d), || format!("state {w:#x} rejected"))?;
                    let col0: Vec<i8> = (0..3).map(|y| s.spin(Site::new(0, y)).unwrap()).collect();
                    let row0: Vec<i8> = (0..3).map(|x| s.spin(Site::new(x, 0)).unwrap()).collect();
                    ensure(invert_defects_with_frame(&d, &col0, &row0).map_err(e2s)? == s, || {
                        format!("inverse fails at {w:#x}")
                    })?;
                }
                Ok("512 states".into())
            }),
        ),
        (
            "no-two-defects",
            "no configuration carries exactly two defects (L=3 plus, side 3 torus)",
            Box::new(|_: &Ctx| {
                for lat in [Lattice::plus(3), Lattice::periodic(3)] {
                    let counts = enumerate_by_defect_count(&lat, DEFAULT_BUDGET).map_err(e2s)?;
                    ensure(!counts.contains_key(&2), || format!("{} has 2-defect states", lat.boundary().label()))?;
                    ensure(counts.keys().all(|k| k % 2 == 0), || "odd defect count".into())?;
                }
                Ok("counts even, none equal to 2".into())
            }),
        ),
        (
            "counting-bound",
            "count(2k) <= min((ek)^2k L^2k, L^3k) (L=3 plus)",
            Box::new(|_: &Ctx| {
                let counts = enumerate_by_defect_count(&Lattice::plus(3), DEFAULT_BUDGET).map_err(e2s)?;
                for (&n, &c) in &counts {
                    if n > 0 {
                        ensure(c as f64 <= counting_bound(n / 2, 3.0), || format!("count({n}) = {c}"))?;
                    }
                }
                Ok(format!("{counts:?}"))
            }),
        ),
        (
            "torus-counting-bound",
            "torus count(2k) <= 2^(2L+1) min(...) with L = side-1 (side 3)",
            Box::new(|_: &Ctx| {
                let counts = enumerate_by_defect_count(&Lattice::periodic(3), DEFAULT_BUDGET).map_err(e2s)?;
                let l = 2.0;
                for (&n, &c) in &counts {
                    if n > 0 {
                        let bound = 2f64.powf(2.0 * l + 1.0) * counting_bound(n / 2, l);
                        ensure(c as f64 <= bound, || format!("count({n}) = {c} > {bound}"))?;
                    }
                }
                Ok(format!("{counts:?}"))
            }),
        ),
        (
            "plus-ground-unique",
            "all-plus is the unique ground state with plus boundary (L<=3)",
            Box::new(|_: &Ctx| {
                for l in 1..=3 {
                    let counts = enumerate_by_defect_count(&Lattice::plus(l), DEFAULT_BUDGET).map_err(e2s)?;
                    ensure(counts.get(&0) == Some(&1), || format!("L={l}: {:?} zero-defect states", counts.get(&0)))?;
                }
                Ok("L=1..3".into())
            }),
        ),
        (
            "torus-ground-count",
            "torus ground states number 2^(2n-1) (n=2,3)",
            Box::new(|_: &Ctx| {
                for n in 2..=3 {
                    let counts = enumerate_by_defect_count(&Lattice::periodic(n), DEFAULT_BUDGET).map_err(e2s)?;
                    let want = 1u64 << (2 * n - 1);
                    ensure(counts.get(&0) == Some(&want), || format!("n={n}: {:?}", counts.get(&0)))?;
                }
                Ok("n=2,3".into())
            }),
        ),
        (
            "ground-code-round-trip",
            "encode/decode of torus ground states are inverse (side 2,3)",
            Box::new(|_: &Ctx| {
                for n in 2..=3 {
                    let lat = Lattice::periodic(n);
                    for (b, s) in all_ground_states(&lat).map_err(e2s)?.iter().enumerate() {
                        ensure(encode_ground(s).map_err(e2s)?.to_bits() == b as u64, || format!("code {b}"))?;
                    }
                }
                Ok("all codes".into())
            }),
        ),
        (
            "detailed-balance",
            "pi(x) L(x,y) = pi(y) L(y,x) on the exact generator (L=2)",
            Box::new(|_: &Ctx| {
                let lat = Lattice::plus(2);
                let g = build_generator(&lat, RateModel::metropolis(1.3), DEFAULT_BUDGET).map_err(e2s)?;
                let pi = stationary_distribution(&g);
                let mut worst: f64 = 0.0;
                for s in 0..g.n_states() {
                    for i in 0..g.n_sites() {
                        let t = s ^ (1 << i);
                        worst = worst.max((pi[s] * g.rate(s, i) - pi[t] * g.rate(t, i)).abs());
                    }
                }
                ensure(worst < 1e-15, || format!("imbalance {worst:e}"))?;
                Ok(format!("max imbalance {worst:.1e}"))
            }),
        ),
        (
            "gap-single-site",
            "gap(L=1, plus) = 1 + e^(-4 beta)",
            Box::new(|c: &Ctx| {
                for beta in [0.5, 1.0, 2.0] {
                    let g =
                        build_generator(&Lattice::plus(1), RateModel::metropolis(beta), DEFAULT_BUDGET).map_err(e2s)?;
                    let gap = c.gap(&g).map_err(e2s)?;
                    let want = 1.0 + (-4.0 * beta).exp();
                    ensure((gap - want).abs() < 1e-10, || format!("beta={beta}: {gap} vs {want}"))?;
                }
                Ok("beta 0.5, 1, 2".into())
            }),
        ),
        (
            "gap-infinite-temperature",
            "gap = 2 at beta = 0 (L=2)",
            Box::new(|c: &Ctx| {
                let g = build_generator(&Lattice::plus(2), RateModel::metropolis(0.0), DEFAULT_BUDGET).map_err(e2s)?;
                let gap = c.gap(&g).map_err(e2s)?;
                ensure((gap - 2.0).abs() < 1e-10, || format!("gap {gap}"))?;
                Ok(format!("gap {gap:.12}"))
            }),
        ),
        (
            "lanczos-matches-dense",
            "iterative and dense gap solvers agree (L=3)",
            Box::new(|_: &Ctx| {
                let g = build_generator(&Lattice::plus(3), RateModel::metropolis(1.0), DEFAULT_BUDGET).map_err(e2s)?;
                let a = dense_gap(&g).map_err(e2s)?;
                let b = lanczos_gap(&g).map_err(e2s)?;
                ensure((a - b).abs() < 1e-8 * a.max(1e-12), || format!("{a} vs {b}"))?;
                Ok(format!("{a:.10}"))
            }),
        ),
        (
            "ground-mass-decreasing",
            "1 - pi(G) decreases in beta (L=3, both boundaries)",
            Box::new(|_: &Ctx| {
                for lat in [Lattice::plus(3), Lattice::periodic(3)] {
                    let mut prev = 1.0;
                    for beta in [1.0, 2.0, 3.0] {
                        let g = build_generator(&lat, RateModel::metropolis(beta), DEFAULT_BUDGET).map_err(e2s)?;
                        let m = 1.0 - ground_mass(&g);
                        ensure(m < prev, || format!("{} beta={beta}: {m}", lat.boundary().label()))?;
                        prev = m;
                    }
                }
                Ok("beta 1,2,3".into())
            }),
        ),
        (
            "plus-test-function",
            "Var(f)/D(f) <= T_rel for the plus test function (L=3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(3);
                let mut out = Vec::new();
                for beta in [1.0, 2.0, 3.0] {
                    let g = build_generator(&lat, RateModel::metropolis(beta), DEFAULT_BUDGET).map_err(e2s)?;
                    let f = tabulate(&g, |s| test_function_plus(s).unwrap_or(0.0));
                    let ratio = variance(&g, &f).map_err(e2s)? / dirichlet_form(&g, &f).map_err(e2s)?;
                    let trel = 1.0 / c.gap(&g).map_err(e2s)?;
                    ensure(ratio <= trel * (1.0 + 1e-12), || format!("beta={beta}: {ratio} > {trel}"))?;
                    out.push(format!("{:.3}", ratio / trel));
                }
                Ok(format!("ratio/T_rel = {}", out.join(", ")))
            }),
        ),
        (
            "periodic-test-function",
            "Var(g)/D(g) <= T_rel for the periodic test function (side 3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::periodic(3);
                let mut out = Vec::new();
                for beta in [1.0, 2.0, 3.0] {
                    let g = build_generator(&lat, RateModel::metropolis(beta), DEFAULT_BUDGET).map_err(e2s)?;
                    let f = tabulate(&g, |s| test_function_g(s).unwrap_or(0.0));
                    let ratio = variance(&g, &f).map_err(e2s)? / dirichlet_form(&g, &f).map_err(e2s)?;
                    let trel = 1.0 / c.gap(&g).map_err(e2s)?;
                    ensure(ratio <= trel * (1.0 + 1e-12), || format!("beta={beta}: {ratio} > {trel}"))?;
                    out.push(format!("{:.3}", ratio / trel));
                }
                Ok(format!("ratio/T_rel = {}", out.join(", ")))
            }),
        ),
        (
            "profile-monotone",
            "lambda(S_k) is nondecreasing in k (L=3, beta=2)",
            Box::new(|_: &Ctx| {
                let g = build_generator(&Lattice::plus(3), RateModel::metropolis(2.0), DEFAULT_BUDGET).map_err(e2s)?;
                let mut prev = 0.0;
                let mut vals = Vec::new();
                for k in 0..=8 {
                    if crate::exact::level_set(&g, k).is_empty() {
                        break;
                    }
                    let v = spectral_profile(&g, k).map_err(e2s)?;
                    ensure(v >= prev * (1.0 - 1e-9), || format!("k={k}: {v} < {prev}"))?;
                    vals.push(format!("{v:.4}"));
                    prev = v;
                }
                Ok(vals.join(" "))
            }),
        ),
        (
            "mixing-time",
            "TV distance is below eps at T_mix and above it earlier (L=2)",
            Box::new(|_: &Ctx| {
                let g = build_generator(&Lattice::plus(2), RateModel::metropolis(1.0), DEFAULT_BUDGET).map_err(e2s)?;
                let t = tv_mixing_time(&g, 0.25).map_err(e2s)?;
                let d = crate::exact::tv_distance_at(&g, t).map_err(e2s)?;
                ensure(d <= 0.25 + 1e-6, || format!("d(T_mix) = {d}"))?;
                ensure(crate::exact::tv_distance_at(&g, 0.9 * t).map_err(e2s)? > 0.25, || "T_mix not minimal".into())?;
                Ok(format!("T_mix = {t:.6}"))
            }),
        ),
        (
            "flow-bound",
            "lambda(S_1) >= 1/A for the exhaustive flow (L=2, beta=1,2)",
            Box::new(|_: &Ctx| {
                let mut out = Vec::new();
                for beta in [1.0, 2.0] {
                    let row = cmd_flow(beta, 2, 1, ModeSpec::Exhaustive, 0, 0, DEFAULT_SPLIT_THRESHOLD).map_err(e2s)?;
                    ensure(row.holds(), || format!("beta={beta}: {} < {}", row.lambda, row.inv_cost()))?;
                    out.push(format!("{:.4} >= {:.5}", row.lambda, row.inv_cost()));
                }
                Ok(out.join("; "))
            }),
        ),
        (
            "rectangle-removal",
            "removing the rectangle of a minus block clears it (L=3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(3);
                for (x1, x2, y1, y2) in [(1, 1, 1, 1), (1, 2, 1, 3), (2, 3, 2, 3), (1, 3, 1, 3)] {
                    let sites: Vec<Site> = (y1..=y2).flat_map(|y| (x1..=x2).map(move |x| Site::new(x, y))).collect();
                    let s = SpinConfig::from_minus_sites(&lat, &sites).map_err(e2s)?;
                    let r = crate::lattice::Rectangle::new(x1 - 1, x2, y1 - 1, y2).map_err(e2s)?;
                    let p = c.removal(&s, &r).map_err(e2s)?;
                    ensure(p.terminal().is_all_plus(), || format!("block {r} not cleared"))?;
                }
                Ok("4 blocks".into())
            }),
        ),
        (
            "naive-path",
            "naive paths reach all-plus from every state (L=3)",
            Box::new(|_: &Ctx| {
                let lat = Lattice::plus(3);
                for w in 0..512u64 {
                    let s = SpinConfig::from_word(&lat, w);
                    let p = naive_path(&s);
                    ensure(p.terminal().is_all_plus() && p.len() == s.minus_count(), || format!("state {w:#x}"))?;
                }
                Ok("512 states".into())
            }),
        ),
        (
            "segment-discipline",
            "partial segments remove 2 or 4 defects with excess <= 2 (L=3)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(3);
                let params = PathParams::new(2.0);
                let mut rng = seeded_rng(c.seed, 11);
                for w in 1..512u64 {
                    let s = SpinConfig::from_word(&lat, w);
                    let d0 = defect_count(&s);
                    let p = sample_partial_path(&s, &params, &mut rng).map_err(e2s)?;
                    let states = p.states();
                    let d1 = defect_count(states.last().unwrap());
                    ensure(d0 - d1 == 2 || d0 - d1 == 4, || format!("state {w:#x}: {d0} -> {d1}"))?;
                    ensure(states.iter().all(|x| defect_count(x) <= d0 + 2), || format!("state {w:#x}: excess"))?;
                }
                Ok("511 states".into())
            }),
        ),
        (
            "extended-rectangle-count",
            "|T(sigma)| >= |D(sigma)|/4 (L=3, all states)",
            Box::new(|_: &Ctx| {
                let lat = Lattice::plus(3);
                for w in 0..512u64 {
                    let d = defect_map(&SpinConfig::from_word(&lat, w));
                    let t = extended_rectangles(&d, None).len();
                    ensure(4 * t >= d.count(), || format!("state {w:#x}: {t} rectangles, {} defects", d.count()))?;
                }
                Ok("512 states".into())
            }),
        ),
        (
            "occupancy-partition",
            "occupancy classification is total (10^4 vectors, L=20, beta=6)",
            Box::new(|c: &Ctx| {
                let mut rng = seeded_rng(c.seed, 12);
                for _ in 0..10_000 {
                    let v: Vec<usize> = (0..=20).map(|_| rng.random_range(0..=21)).collect();
                    classify_occupancy(&v, 6.0).map_err(|e| format!("{v:?}: {e}"))?;
                }
                Ok("10000 vectors".into())
            }),
        ),
        (
            "minimal-path-defects",
            "interior minimal-path points carry 4 defects and locate back (side 4)",
            Box::new(|_: &Ctx| {
                let lat = Lattice::periodic(4);
                let sigma = decode_ground(&lat, &GroundCode(vec![-1; 7])).map_err(e2s)?;
                for idx in 0..7 {
                    let mut v = vec![-1; 7];
                    v[idx] = 1;
                    let eta = decode_ground(&lat, &GroundCode(v)).map_err(e2s)?;
                    for m in 1..=4 {
                        let z = minimal_path_config(&sigma, &eta, m, 2).map_err(e2s)?;
                        ensure(defect_count(&z) == 4, || format!("index {idx}, m={m}"))?;
                        let found = locate_on_minimal_path(&z).map_err(e2s)?;
                        ensure(found.len() == 1 && found[0].m == m, || format!("locate index {idx}, m={m}"))?;
                    }
                }
                Ok("7 neighbours x 4 starts".into())
            }),
        ),
        (
            "simulation-determinism",
            "same seed gives the same trajectory; replay reaches the final state",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(4);
                let a = cmd_simulate(&lat, 1.0, StopCondition::Events(500), c.seed, 10_000).map_err(e2s)?;
                let b = cmd_simulate(&lat, 1.0, StopCondition::Events(500), c.seed, 10_000).map_err(e2s)?;
                ensure(a == b, || "trajectories differ".into())?;
                let back = Trajectory::from_text(&lat, &a.to_text()).map_err(e2s)?;
                ensure(back.final_state().map_err(e2s)? == a.final_state().map_err(e2s)?, || "replay differs".into())?;
                Ok("500 events".into())
            }),
        ),
    ]
}

fn full_checks() -> Vec<(&'static str, &'static str, CheckFn)> {
    vec![
        (
            "counting-bound-l4",
            "count(2k) bound and no two-defect states (L=4 plus)",
            Box::new(|_: &Ctx| {
                let counts = enumerate_by_defect_count(&Lattice::plus(4), DEFAULT_BUDGET).map_err(e2s)?;
                ensure(!counts.contains_key(&2), || "2-defect states".into())?;
                for (&n, &c) in &counts {
                    if n > 0 {
                        ensure(c as f64 <= counting_bound(n / 2, 4.0), || format!("count({n}) = {c}"))?;
                    }
                }
                Ok(format!("{} defect levels", counts.len()))
            }),
        ),
        (
            "torus-ground-count-4",
            "torus ground states number 2^7 and round-trip (side 4)",
            Box::new(|_: &Ctx| {
                let lat = Lattice::periodic(4);
                let counts = enumerate_by_defect_count(&lat, DEFAULT_BUDGET).map_err(e2s)?;
                ensure(counts.get(&0) == Some(&128), || format!("{:?}", counts.get(&0)))?;
                for (b, s) in all_ground_states(&lat).map_err(e2s)?.iter().enumerate() {
                    ensure(encode_ground(s).map_err(e2s)?.to_bits() == b as u64, || format!("code {b}"))?;
                }
                Ok("128 ground states".into())
            }),
        ),
        (
            "flow-bound-l3",
            "lambda(S_1) >= 1/A for the exhaustive flow (L=3, beta=1)",
            Box::new(|_: &Ctx| {
                let row = cmd_flow(1.0, 3, 1, ModeSpec::Exhaustive, 0, 0, DEFAULT_SPLIT_THRESHOLD).map_err(e2s)?;
                ensure(row.holds(), || format!("{} < {}", row.lambda, row.inv_cost()))?;
                Ok(format!("{:.4} >= {:.5}", row.lambda, row.inv_cost()))
            }),
        ),
        (
            "path-suite",
            "10^4 full paths at L=6, beta=3: termination, length, segment drops, excess, energy",
            Box::new(|c: &Ctx| {
                let st = path_suite(6, &PathParams::new(3.0), 10_000, c.seed).map_err(e2s)?;
                ensure(st.clean(8), || st.to_string())?;
                Ok(st.to_string())
            }),
        ),
        (
            "split-recovery",
            "split index recovered on segment edges (L=8, c=1)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(8);
                let params = PathParams::new(3.0).with_split_threshold(1.0);
                let mut rng = seeded_rng(c.seed, 14);
                let mut edges = 0usize;
                while edges < 10_000 {
                    let mut s = SpinConfig::all_plus(&lat);
                    for i in 0..lat.n_sites() {
                        if rng.random::<bool>() {
                            s.flip_index(i);
                        }
                    }
                    let p = sample_partial_path(&s, &params, &mut rng).map_err(e2s)?;
                    let SegmentKind::Rectangle { part, .. } = p.segments[0].kind else { continue };
                    if part == 0 {
                        continue;
                    }
                    for e in p.edges() {
                        ensure(identify_split(&e, 1.0) == part, || format!("edge at {} misattributed", e.site))?;
                        edges += 1;
                    }
                }
                Ok(format!("{edges} edges"))
            }),
        ),
        (
            "split-count-bounds",
            "floor(|D|/((c+1)L)) <= m <= |D|/(cL) + 1 (L=8, c=1)",
            Box::new(|c: &Ctx| {
                let lat = Lattice::plus(8);
                let mut rng = seeded_rng(c.seed, 15);
                for _ in 0..1000 {
                    let mut s = SpinConfig::all_plus(&lat);
                    for i in 0..lat.n_sites() {
                        if rng.random::<bool>() {
                            s.flip_index(i);
                        }
                    }
                    let d = defect_map(&s);
                    let m = compute_split(&d, 1.0).m() as f64;
                    let n = d.count() as f64;
                    ensure((n / 16.0).floor() <= m && m <= n / 8.0 + 1.0, || format!("{n} defects, m = {m}"))?;
                }
                Ok("1000 states".into())
            }),
        ),
        (
            "g-lipschitz",
            "|g(x) - g(y)| <= 3/L across allowed moves inside the path complex (side 4)",
            Box::new(|_: &Ctx| {
                let lat = Lattice::periodic(4);
                let on: Vec<u64> = (0..1u64 << 16)
                    .filter(|&w| {
                        let s = SpinConfig::from_word(&lat, w);
                        defect_count(&s) == 0 || locate_on_minimal_path(&s).is_ok()
                    })
                    .collect();
                let set: std::collections::HashSet<u64> = on.iter().copied().collect();
                let mut worst: f64 = 0.0;
                for &w in &on {
                    let gw = test_function_g(&SpinConfig::from_word(&lat, w)).map_err(e2s)?;
                    for i in 0..16 {
                        let v = w ^ (1 << i);
                        if set.contains(&v) {
                            let gv = test_function_g(&SpinConfig::from_word(&lat, v)).map_err(e2s)?;
                            worst = worst.max((gw - gv).abs());
                        }
                    }
                }
                ensure(worst <= 0.75 + 1e-12, || format!("max difference {worst}"))?;
                Ok(format!("{} states, max difference {worst:.3}", on.len()))
            }),
        ),
    ]
}

/// Runs the quick (or quick + full) suite. `mutation` corrupts one component
/// on purpose so that its check must fail.
pub fn cmd_verify(level: VerifyLevel, mutation: Option<Mutation>, seed: u64) -> VerifyReport {
    let ctx = Ctx { mutation, seed };
    let mut list = quick_checks();
    if level == VerifyLevel::Full {
        list.extend(full_checks());
    }
    let checks = list
        .into_iter()
        .map(|(name, property, f)| {
            let t = Instant::now();
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(&ctx)))
                .unwrap_or_else(|_| Err("panicked".to_string()));
            let seconds = t.elapsed().as_secs_f64();
            match outcome {
                Ok(detail) => CheckResult { name, property, passed: true, detail, seconds },
                Err(detail) => CheckResult { name, property, passed: false, detail, seconds },
            }
        })
        .collect();
    VerifyReport { level, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let map = parse_config_text("# run\nbeta = 1, 2.5\nsize=critical\nbc = per\nsplit_threshold = 2\n").unwrap();
        let c = ExperimentConfig::from_map(&map).unwrap();
        assert_eq!(c.beta, vec![1.0, 2.5]);
        assert_eq!(c.size, SizeSpec::Critical);
        assert_eq!(c.size.resolve(2.5), 3);
        assert_eq!(c.bc, BcSpec::Periodic);
        assert_eq!(c.split_threshold, 2.0);
        assert!(parse_config_text("colour = red").is_err());
        assert!(parse_config_text("beta").is_err());
        let bad: BTreeMap<String, String> = [("beta".to_string(), "-1".to_string())].into();
        assert!(ExperimentConfig::from_map(&bad).is_err());
    }

    #[test]
    fn value_parsers() {
        assert_eq!("events=10".parse::<StopCondition>().unwrap(), StopCondition::Events(10));
        assert_eq!("time=2.5".parse::<StopCondition>().unwrap(), StopCondition::Time(2.5));
        assert_eq!("hit-ground".parse::<StopCondition>().unwrap(), StopCondition::HitGround);
        assert!("events=x".parse::<StopCondition>().is_err());
        assert_eq!("fixed:a.txt".parse::<BcSpec>().unwrap(), BcSpec::Fixed(PathBuf::from("a.txt")));
        assert!("fixed:".parse::<BcSpec>().is_err());
        assert!("0".parse::<SizeSpec>().is_err());
        assert_eq!("parity-check".parse::<Mutation>().unwrap(), Mutation::ParityCheck);
    }

    #[test]
    fn half_area_rectangles() {
        assert_eq!(half_area_rectangle(2), (1, 2));
        assert_eq!(half_area_rectangle(3), (2, 2));
        assert_eq!(half_area_rectangle(4), (2, 4));
        assert_eq!(half_area_rectangle(5), (3, 4));
        let b = centered_block(&Lattice::plus(5)).unwrap();
        assert_eq!(b.minus_count(), 12);
    }

    #[test]
    fn slope_of_exact_line() {
        let pts: Vec<(f64, f64, f64)> = (0..5).map(|i| (i as f64, 1.0 + 3.0 * i as f64, 1.0)).collect();
        let (s, se) = weighted_slope(&pts).unwrap();
        assert!((s - 3.0).abs() < 1e-12);
        assert!(se > 0.0);
        assert!(weighted_slope(&pts[..1]).is_err());
    }

    #[test]
    fn exact_rows() {
        let r = cmd_exact(0.0, 2, &BcSpec::Plus, 0.25).unwrap();
        assert!((r.gap - 2.0).abs() < 1e-10);
        let r = cmd_exact(2.0, 3, &BcSpec::Periodic, 0.25).unwrap();
        assert!(r.pi_ground > 0.9);
        assert!(exact_csv(&[r]).starts_with("# schema=1\nbeta,L,bc,gap,trel,tmix,profile_bound,pi_ground\n"));
    }

    #[test]
    fn simulate_stops() {
        let lat = Lattice::plus(3);
        let t = cmd_simulate(&lat, 1.0, StopCondition::Events(1000), 4, 1_000_000).unwrap();
        assert_eq!(t.events.len(), 1000);
        let g = cmd_simulate(&lat, 1.0, StopCondition::HitGround, 4, 1000).unwrap();
        assert!(g.events.is_empty());
        let tt = cmd_simulate(&lat, 1.0, StopCondition::Time(3.0), 4, 1_000_000).unwrap();
        assert!(tt.events.iter().all(|e| e.0 <= 3.0));
    }
}
