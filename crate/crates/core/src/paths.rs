//! Canonical paths towards the all-plus state: rectangle-removal paths,
//! extended rectangles, splits and occupancy classes, the partial, naive and
//! full path measures, and the congestion of the resulting flow.

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{seeded_rng, RateModel};
use crate::error::{Error, Result};
use crate::lattice::{defect_map, DefectConfig, Lattice, Rectangle, Site, SpinConfig};

/// Default split threshold `c`.
pub const DEFAULT_SPLIT_THRESHOLD: f64 = 100.0;

/// Parameters of the path construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathParams {
    pub beta: f64,
    pub split_threshold: f64,
}

impl PathParams {
    pub fn new(beta: f64) -> Self {
        PathParams { beta, split_threshold: DEFAULT_SPLIT_THRESHOLD }
    }

    pub fn with_split_threshold(self, c: f64) -> Self {
        PathParams { split_threshold: c, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SegmentKind {
    /// `part` is 0 when no part offered a rectangle.
    Rectangle {
        rect: Rectangle,
        part: usize,
    },
    Naive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Index into `flips` of the first flip of the segment.
    pub start: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

/// An initial configuration and an ordered sequence of single-site flips.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalPath {
    pub initial: SpinConfig,
    pub flips: Vec<Site>,
    pub segments: Vec<Segment>,
}

/// An edge `(e₋, e₋^x)` of the state graph.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EdgeRef {
    pub e_minus: SpinConfig,
    pub site: Site,
}

impl EdgeRef {
    pub fn e_plus(&self) -> SpinConfig {
        let i = self.e_minus.lattice().site_index(self.site).expect("edge site inside lattice");
        self.e_minus.flipped_index(i)
    }
}

impl CanonicalPath {
    pub fn empty(initial: &SpinConfig) -> Self {
        CanonicalPath { initial: initial.clone(), flips: Vec::new(), segments: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    /// All visited states, initial and terminal included.
    pub fn states(&self) -> Vec<SpinConfig> {
        let lat = self.initial.lattice().clone();
        let mut cur = self.initial.clone();
        let mut out = vec![cur.clone()];
        for s in &self.flips {
            cur.flip_index(lat.site_index(*s).expect("path site inside lattice"));
            out.push(cur.clone());
        }
        out
    }

    pub fn terminal(&self) -> SpinConfig {
        self.states().pop().expect("at least the initial state")
    }

    pub fn edges(&self) -> Vec<EdgeRef> {
        let states = self.states();
        self.flips.iter().zip(states).map(|(&site, e_minus)| EdgeRef { e_minus, site }).collect()
    }

    fn push_segment(&mut self, flips: Vec<Site>, kind: SegmentKind) {
        let start = self.flips.len();
        let len = flips.len();
        self.flips.extend(flips);
        self.segments.push(Segment { start, len, kind });
    }

    /// Header line with the initial configuration (rows joined by `/`), then
    /// one `x y` site per line.
    pub fn to_text(&self) -> String {
        let text = self.initial.to_text();
        let mut out = format!("# initial={}\n", text.lines().collect::<Vec<_>>().join("/"));
        for s in &self.flips {
            out.push_str(&format!("{} {}\n", s.x, s.y));
        }
        out
    }

    /// Parses the output of [`CanonicalPath::to_text`]; segment marks are not kept.
    pub fn from_text(lattice: &Arc<Lattice>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty path file".into()))?;
        let init = header
            .trim()
            .strip_prefix("# initial=")
            .ok_or_else(|| Error::Parse("missing `# initial=` header".into()))?;
        let initial = SpinConfig::from_text(lattice, &init.replace('/', "\n"))?;
        let mut flips = Vec::new();
        for line in lines.map(str::trim).filter(|l| !l.is_empty()) {
            let mut it = line.split_whitespace().map(|t| t.parse::<i32>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => flips.push(Site::new(x, y)),
                _ => return Err(Error::Parse(format!("expected `x y`, got {line:?}"))),
            }
        }
        Ok(CanonicalPath { initial, flips, segments: Vec::new() })
    }
}

fn require_fixed(lat: &Lattice) -> Result<()> {
    if lat.is_periodic() {
        return Err(Error::Unsupported("canonical paths are defined for fixed boundaries".into()));
    }
    Ok(())
}

/// Nearest defects left, right, below and above a defect.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Neighbours {
    pub left: Option<Site>,
    pub right: Option<Site>,
    pub down: Option<Site>,
    pub up: Option<Site>,
}

pub fn defect_neighbours(d: &DefectConfig, x: Site) -> Result<Neighbours> {
    if !d.contains(x) {
        return Err(Error::InvalidPlaquette(x.x, x.y));
    }
    let (lo, hi) = d.lattice().plaquette_range();
    let scan = |dx: i32, dy: i32| {
        let mut p = Site::new(x.x + dx, x.y + dy);
        while (lo..=hi).contains(&p.x) && (lo..=hi).contains(&p.y) {
            if d.contains(p) {
                return Some(p);
            }
            p = Site::new(p.x + dx, p.y + dy);
        }
        None
    };
    Ok(Neighbours { left: scan(-1, 0), right: scan(1, 0), down: scan(0, -1), up: scan(0, 1) })
}

/// Order in which a rectangle-removal path visits `ℬ₋(R)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RemovalOrder {
    /// Rows top to bottom, each left to right.
    Lex,
    /// Rows top to bottom, each right to left.
    AntiLex,
    /// Mirror image of `Lex`: rows bottom to top, each left to right.
    MirroredLex,
    /// Mirror image of `AntiLex`: rows bottom to top, each right to left.
    MirroredAntiLex,
}

/// Case analysis on which corners of `r` are defects.
pub fn removal_order(d: &DefectConfig, r: &Rectangle) -> RemovalOrder {
    let [ll, ul, ur, lr] = r.corners().map(|c| d.contains(c));
    let n = [ll, ul, ur, lr].iter().filter(|&&b| b).count();
    if (ll && ul && ur) || n < 3 {
        RemovalOrder::Lex
    } else if ur && ul && lr && !ll {
        RemovalOrder::AntiLex
    } else if !ul {
        // {ll, ur, lr} mirrors to {ul, lr, ur}
        RemovalOrder::MirroredAntiLex
    } else {
        // {ll, ul, lr} mirrors to {ul, ll, ur}
        RemovalOrder::MirroredLex
    }
}

fn ordered_interior(r: &Rectangle, order: RemovalOrder) -> Vec<Site> {
    let rows: Vec<i32> = match order {
        RemovalOrder::Lex | RemovalOrder::AntiLex => (r.y1 + 1..=r.y2).rev().collect(),
        RemovalOrder::MirroredLex | RemovalOrder::MirroredAntiLex => (r.y1 + 1..=r.y2).collect(),
    };
    let left_to_right = matches!(order, RemovalOrder::Lex | RemovalOrder::MirroredLex);
    let mut out = Vec::new();
    for y in rows {
        if left_to_right {
            out.extend((r.x1 + 1..=r.x2).map(|x| Site::new(x, y)));
        } else {
            out.extend((r.x1 + 1..=r.x2).rev().map(|x| Site::new(x, y)));
        }
    }
    out
}

fn removal_flips(sigma: &SpinConfig, d: &DefectConfig, r: &Rectangle) -> Result<Vec<Site>> {
    if !r.fits(sigma.lattice()) {
        return Err(Error::InvalidSpec(format!("rectangle {r} outside the plaquette set")));
    }
    Ok(ordered_interior(r, removal_order(d, r)))
}

/// `γ_{σ,R}`: flips every site of `ℬ₋(R)` once, in the case-determined order.
pub fn rectangle_removal_path(sigma: &SpinConfig, r: &Rectangle) -> Result<CanonicalPath> {
    require_fixed(sigma.lattice())?;
    let d = defect_map(sigma);
    let flips = removal_flips(sigma, &d, r)?;
    let mut path = CanonicalPath::empty(sigma);
    path.push_segment(flips, SegmentKind::Rectangle { rect: *r, part: 1 });
    Ok(path)
}

/// Extended rectangles `T_d`, `T_u` over same-row defect pairs, optionally
/// restricted to one row. Sorted by `(y2, x1, y1, x2)`, without repeats.
pub fn extended_rectangles(d: &DefectConfig, row: Option<i32>) -> Vec<Rectangle> {
    let (lo, hi) = d.lattice().plaquette_range();
    let rows: Vec<i32> = match row {
        Some(j) => vec![j],
        None => (lo..=hi).collect(),
    };
    let mut out = Vec::new();
    for j in rows {
        let in_row: Vec<Site> = (lo..=hi).map(|x| Site::new(x, j)).filter(|&s| d.contains(s)).collect();
        let nbrs: Vec<Neighbours> = in_row.iter().map(|&s| defect_neighbours(d, s).expect("defect")).collect();
        for a in 0..in_row.len() {
            for b in a + 1..in_row.len() {
                let (x, y) = (in_row[a], in_row[b]);
                // closest of the two down neighbours: the higher one
                let top = [nbrs[a].down, nbrs[b].down].into_iter().flatten().min_by(|p, q| p.lex_cmp(q));
                if let Some(z) = top {
                    out.push(Rectangle { x1: x.x, x2: y.x, y1: z.y, y2: j });
                }
                let bottom = [nbrs[a].up, nbrs[b].up].into_iter().flatten().max_by(|p, q| p.lex_cmp(q));
                if let Some(z) = bottom {
                    out.push(Rectangle { x1: x.x, x2: y.x, y1: j, y2: z.y });
                }
            }
        }
    }
    out.sort_by_key(Rectangle::order_key);
    out.dedup();
    out
}

/// Column bands `[s_i : s_{i+1}-1]` each holding at least `c·L` defects
/// (except possibly the last).
#[derive(Clone, Debug, PartialEq)]
pub struct SplitStructure {
    /// `s_1 = 0 < s_2 < … < s_{m+1} = L+1`.
    pub boundaries: Vec<i32>,
    pub threshold: f64,
}

impl SplitStructure {
    /// `m(σ)`, the number of parts.
    pub fn m(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// `n(σ) = 1 ∨ (m(σ) - 1)`.
    pub fn n(&self) -> usize {
        (self.m().max(2) - 1).max(1)
    }

    /// Plaquette columns `(first, last)` of part `i` (1-based).
    pub fn part_columns(&self, i: usize) -> Result<(i32, i32)> {
        if i == 0 || i > self.m() {
            return Err(Error::IndexOutOfRange { index: i, max: self.m() });
        }
        Ok((self.boundaries[i - 1], self.boundaries[i] - 1))
    }

    /// Part containing plaquette column `c`.
    pub fn part_of_column(&self, c: i32) -> Option<usize> {
        (1..=self.m()).find(|&i| self.boundaries[i - 1] <= c && c < self.boundaries[i])
    }
}

fn column_counts(d: &DefectConfig) -> Vec<usize> {
    let (lo, hi) = d.lattice().plaquette_range();
    (lo..=hi).map(|x| (lo..=hi).filter(|&y| d.contains(Site::new(x, y))).count()).collect()
}

/// Greedy left-to-right split with threshold `c·L`.
pub fn compute_split(d: &DefectConfig, c: f64) -> SplitStructure {
    let l = d.lattice().side() as i32;
    let counts = column_counts(d);
    let target = c * l as f64;
    let mut boundaries = vec![0];
    loop {
        let s = *boundaries.last().expect("nonempty");
        let mut acc = 0usize;
        let mut next = None;
        for j in s + 1..=l + 1 {
            acc += counts[(j - 1) as usize];
            if acc as f64 >= target {
                next = Some(j);
                break;
            }
        }
        match next {
            Some(j) if j <= l => boundaries.push(j),
            _ => {
                boundaries.push(l + 1);
                break;
            }
        }
    }
    SplitStructure { boundaries, threshold: c }
}

/// Defects of `d` lying in columns `[a:b]`.
pub fn restrict_columns(d: &DefectConfig, a: i32, b: i32) -> DefectConfig {
    let mut out = DefectConfig::empty(d.lattice());
    for s in d.sites() {
        if (a..=b).contains(&s.x) {
            out.set(s, true).expect("same lattice");
        }
    }
    out
}

/// Per-row defect counts within part `i`, rows `0..=L`.
pub fn occupancy_vector(d: &DefectConfig, split: &SplitStructure, i: usize) -> Result<Vec<usize>> {
    let (a, b) = split.part_columns(i)?;
    let l = d.lattice().side() as i32;
    Ok((0..=l).map(|y| (a..=b).filter(|&x| d.contains(Site::new(x, y))).count()).collect())
}

/// Sparse, or dense with offset `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ThetaClass {
    Sparse,
    Dense(usize),
}

fn num(v: &[usize], level: i64) -> usize {
    if level < 0 {
        return 0;
    }
    v.iter().filter(|&&x| x as i64 == level).count()
}

/// Class of an occupancy vector: sparse when `v_max ≤ β²`, otherwise the
/// smallest `θ ∈ [0:⌊β⌋]` whose level `v_max - θ` dominates its neighbours.
pub fn classify_occupancy(v: &[usize], beta: f64) -> Result<ThetaClass> {
    let vmax = v.iter().copied().max().unwrap_or(0);
    if vmax as f64 <= beta * beta {
        return Ok(ThetaClass::Sparse);
    }
    let theta_max = beta.floor().max(0.0) as usize;
    for theta in 0..=theta_max {
        let level = vmax as i64 - theta as i64;
        let here = beta * num(v, level) as f64;
        if (-32..=32).all(|k| here >= num(v, level - k) as f64) {
            return Ok(ThetaClass::Dense(theta));
        }
    }
    Err(Error::PartitionViolation)
}

/// Good rectangles `F(σ,i)` of part `i`, computed from the defects of that part.
/// Vectors with no class (possible only for small β) are treated as sparse.
pub fn good_rectangles(d: &DefectConfig, split: &SplitStructure, i: usize, beta: f64) -> Result<Vec<Rectangle>> {
    let (a, b) = split.part_columns(i)?;
    let part = restrict_columns(d, a, b);
    let v = occupancy_vector(d, split, i)?;
    match classify_occupancy(&v, beta) {
        Ok(ThetaClass::Sparse) | Err(Error::PartitionViolation) => Ok(extended_rectangles(&part, None)),
        Err(e) => Err(e),
        Ok(ThetaClass::Dense(theta)) => {
            let target = v.iter().copied().max().unwrap_or(0) - theta;
            let mut out: Vec<Rectangle> = v
                .iter()
                .enumerate()
                .filter(|&(_, &x)| x == target)
                .flat_map(|(j, _)| extended_rectangles(&part, Some(j as i32)))
                .collect();
            out.sort_by_key(Rectangle::order_key);
            out.dedup();
            Ok(out)
        }
    }
}

/// Support of `ν_σ`: parts `i ∈ [1:n(σ)]` with nonempty `F(σ,i)`, each with
/// its rectangles. Every listed `(i, R)` has mass `1/(#parts · |F(σ,i)|)`.
/// If all those `F` are empty the remaining parts are tried, and failing that
/// the extended rectangles of the whole lattice, listed under part `0`.
pub fn partial_options(d: &DefectConfig, params: &PathParams) -> Result<Vec<(usize, Vec<Rectangle>)>> {
    if d.is_empty() {
        return Err(Error::EmptyDefectSet);
    }
    let split = compute_split(d, params.split_threshold);
    let mut out = Vec::new();
    for range in [1..=split.n(), split.n() + 1..=split.m()] {
        for i in range {
            let f = good_rectangles(d, &split, i, params.beta)?;
            if !f.is_empty() {
                out.push((i, f));
            }
        }
        if !out.is_empty() {
            return Ok(out);
        }
    }
    let all = extended_rectangles(d, None);
    if all.is_empty() {
        return Err(Error::Numerical("no extended rectangle".into()));
    }
    Ok(vec![(0, all)])
}

/// One segment drawn from `ν_σ`.
pub fn sample_partial_path<R: Rng + ?Sized>(
    sigma: &SpinConfig,
    params: &PathParams,
    rng: &mut R,
) -> Result<CanonicalPath> {
    require_fixed(sigma.lattice())?;
    let d = defect_map(sigma);
    let options = partial_options(&d, params)?;
    let (part, rects) = &options[rng.random_range(0..options.len())];
    let r = rects[rng.random_range(0..rects.len())];
    let mut path = CanonicalPath::empty(sigma);
    path.push_segment(removal_flips(sigma, &d, &r)?, SegmentKind::Rectangle { rect: r, part: *part });
    Ok(path)
}

/// Flips every `-1` spin once, in reading order.
pub fn naive_path(sigma: &SpinConfig) -> CanonicalPath {
    let mut path = CanonicalPath::empty(sigma);
    let flips = sigma.minus_sites();
    if !flips.is_empty() {
        path.push_segment(flips, SegmentKind::Naive);
    }
    path
}

/// Partial segments while the segment counter is at most `βL` and defects
/// remain, then the naive path. With `truncate_at = Some(k)` the path stops
/// at the first state with at most `k` defects.
pub fn sample_full_path<R: Rng + ?Sized>(
    sigma: &SpinConfig,
    params: &PathParams,
    rng: &mut R,
    truncate_at: Option<usize>,
) -> Result<CanonicalPath> {
    require_fixed(sigma.lattice())?;
    if !sigma.spec().is_plus_like() {
        return Err(Error::Unsupported("full paths target the all-plus state".into()));
    }
    let l = sigma.lattice().side() as f64;
    let mut path = CanonicalPath::empty(sigma);
    let mut cur = sigma.clone();
    let mut i = 1usize;
    while !cur.is_all_plus() {
        let seg = if i as f64 <= params.beta * l && !defect_map(&cur).is_empty() {
            sample_partial_path(&cur, params, rng)?
        } else {
            naive_path(&cur)
        };
        let last = seg.segments.last().cloned().expect("segment");
        cur = seg.terminal();
        path.push_segment(seg.flips, last.kind);
        i += 1;
        if matches!(path.segments.last().map(|s| &s.kind), Some(SegmentKind::Naive)) {
            break;
        }
    }
    if let Some(k) = truncate_at {
        truncate(&mut path, k);
    }
    Ok(path)
}

/// Cuts the path at the first visited state with at most `k` defects.
pub fn truncate(path: &mut CanonicalPath, k: usize) {
    let states = path.states();
    let Some(cut) = states.iter().position(|s| crate::lattice::defect_count(s) <= k) else {
        return;
    };
    path.flips.truncate(cut);
    path.segments.retain(|s| s.start < cut);
    if let Some(last) = path.segments.last_mut() {
        last.len = last.len.min(cut - last.start);
    }
}

/// `𝐈(e)`: the part of the split of `e₋` containing column `x₁ - 1` of the
/// flipped site.
pub fn identify_split(e: &EdgeRef, c: f64) -> usize {
    let split = compute_split(&defect_map(&e.e_minus), c);
    split.part_of_column(e.site.x - 1).expect("column inside the plaquette range")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeType {
    None,
    Init,
    Fin,
    Mid,
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeType::None => "none",
            EdgeType::Init => "init",
            EdgeType::Fin => "fin",
            EdgeType::Mid => "mid",
        })
    }
}

/// Type of `e` relative to `γ_{σ,R}`. Rows are read in the frame where the
/// top two corners of `R` are defects (mirrored otherwise).
pub fn edge_type(e: &EdgeRef, r: &Rectangle, sigma: &SpinConfig) -> Result<EdgeType> {
    let d = defect_map(sigma);
    let corners = r.corners().map(|c| d.contains(c));
    if corners.iter().filter(|&&b| b).count() < 3 {
        return Err(Error::UntypedRectangle);
    }
    let path = rectangle_removal_path(sigma, r)?;
    let on_path = path.edges().iter().any(|p| p == e);
    if !on_path {
        return Ok(EdgeType::None);
    }
    let (_, ul, ur, _) = (corners[0], corners[1], corners[2], corners[3]);
    let (first_row, last_row) = if ul && ur { (r.y2, r.y1 + 1) } else { (r.y1 + 1, r.y2) };
    let multi_row = r.y2 - r.y1 > 1;
    Ok(if e.site.y == first_row && multi_row {
        EdgeType::Init
    } else if e.site.y == last_row {
        EdgeType::Fin
    } else {
        EdgeType::Mid
    })
}

/// How the flow is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FlowMode {
    /// Enumerates the full support of every path measure.
    Exhaustive,
    /// Samples starting states uniformly and one path each.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Congestion of one edge.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLoad {
    pub e_minus: SpinConfig,
    pub site: Site,
    pub congestion: f64,
    /// Standard error (Monte Carlo only; zero when exhaustive).
    pub std_err: f64,
}

/// Cost `𝒜` of the flow and per-edge congestions, sorted by decreasing load.
#[derive(Clone, Debug)]
pub struct FlowReport {
    pub cost: f64,
    pub edges: Vec<EdgeLoad>,
    pub mode: FlowMode,
    pub level: usize,
}

impl FlowReport {
    pub fn argmax(&self) -> Option<&EdgeLoad> {
        self.edges.first()
    }

    /// CSV `edge_state_hash,site_x,site_y,congestion`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# schema=1\nedge_state_hash,site_x,site_y,congestion\n");
        for e in &self.edges {
            out.push_str(&format!("{},{},{},{:.12e}\n", state_hash(&e.e_minus), e.site.x, e.site.y, e.congestion));
        }
        out
    }
}

/// Hex rendering of the spin bits, used as a stable state key.
pub fn state_hash(cfg: &SpinConfig) -> String {
    cfg.bits().iter().rev().map(|w| format!("{w:016x}")).collect()
}

struct Segments {
    /// (probability, flipped site indices)
    options: Vec<(f64, Vec<usize>)>,
}

fn partial_segments(lat: &Arc<Lattice>, w: u64, params: &PathParams) -> Result<Segments> {
    let sigma = SpinConfig::from_word(lat, w);
    let d = defect_map(&sigma);
    let options = partial_options(&d, params)?;
    let np = options.len() as f64;
    let mut out = Vec::new();
    for (_, rects) in &options {
        let q = 1.0 / (np * rects.len() as f64);
        for r in rects {
            let flips = removal_flips(&sigma, &d, r)?;
            out.push((q, flips.iter().map(|s| lat.site_index(*s).expect("site")).collect()));
        }
    }
    Ok(Segments { options: out })
}

fn naive_segment(lat: &Lattice, w: u64) -> Vec<usize> {
    (0..lat.n_sites()).filter(|&i| w >> i & 1 == 1).collect()
}

/// Walks `flips` from `w`, stopping early once at most `t` defects remain.
/// Returns the flips taken and the end state.
fn walk(lat: &Lattice, w: u64, flips: &[usize], t: Option<usize>) -> (usize, u64, bool) {
    let mut cur = w;
    for (k, &i) in flips.iter().enumerate() {
        cur ^= 1 << i;
        if let Some(t) = t {
            if lat.defect_count_word(cur) <= t {
                return (k + 1, cur, true);
            }
        }
    }
    (flips.len(), cur, false)
}

/// `𝒜 = 2 max_e Σ_σ Σ_γ ν(γ)|γ| N_e(γ) π(σ) / (π(e₋) ℒ(e₋,e₊))` over
/// `σ ∈ S_k`, with paths truncated on reaching at most `k - 1` defects.
pub fn flow_cost(
    lattice: &Arc<Lattice>,
    params: &PathParams,
    k: usize,
    mode: FlowMode,
    budget: u64,
) -> Result<FlowReport> {
    require_fixed(lattice)?;
    if !lattice.spec().is_plus_like() {
        return Err(Error::Unsupported("the flow targets the all-plus state".into()));
    }
    if k == 0 {
        return Err(Error::InvalidSpec("level k must be at least 1".into()));
    }
    match mode {
        FlowMode::Exhaustive => exhaustive_flow(lattice, params, k, budget),
        FlowMode::MonteCarlo { samples, seed } => monte_carlo_flow(lattice, params, k, samples, seed),
    }
}

fn exhaustive_flow(lat: &Arc<Lattice>, params: &PathParams, k: usize, budget: u64) -> Result<FlowReport> {
    let n = lat.n_sites();
    if n >= 40 || (1u64 << n) > budget {
        return Err(Error::BudgetExceeded { states: if n >= 40 { u64::MAX } else { 1u64 << n }, budget });
    }
    let t = k - 1;
    let beta = params.beta;
    let cap = (beta * lat.side() as f64).floor().max(0.0) as usize + 1;
    let partial_ok = |i: usize| i as f64 <= beta * lat.side() as f64;
    let mut seg_cache: HashMap<u64, Arc<Segments>> = HashMap::new();
    let mut segments = |w: u64| -> Result<Arc<Segments>> {
        if let Some(s) = seg_cache.get(&w) {
            return Ok(s.clone());
        }
        let s = Arc::new(partial_segments(lat, w, params)?);
        seg_cache.insert(w, s.clone());
        Ok(s)
    };
    // children of a node: (prob, flips taken, child node or None when terminal)
    type Child = (f64, Vec<usize>, Option<(u64, usize)>);
    let mut children = |w: u64, i: usize| -> Result<Vec<Child>> {
        let mut out = Vec::new();
        if partial_ok(i) {
            for (q, flips) in &segments(w)?.options {
                let (taken, end, cut) = walk(lat, w, flips, Some(t));
                let child = if cut || end == 0 { None } else { Some((end, (i + 1).min(cap))) };
                out.push((*q, flips[..taken].to_vec(), child));
            }
        } else {
            let flips = naive_segment(lat, w);
            let (taken, _, _) = walk(lat, w, &flips, Some(t));
            out.push((1.0, flips[..taken].to_vec(), None));
        }
        Ok(out)
    };
    let z: f64 = (0..1u64 << n).map(|w| (-beta * lat.defect_count_word(w) as f64).exp()).sum();
    let pi = |w: u64| (-beta * lat.defect_count_word(w) as f64).exp() / z;

    // bottom-up expected remaining length
    let mut tree: HashMap<(u64, usize), Vec<Child>> = HashMap::new();
    let mut order: Vec<(u64, usize)> = Vec::new();
    let mut stack: Vec<(u64, usize)> =
        (0..1u64 << n).filter(|&w| lat.defect_count_word(w) >= k).map(|w| (w, 1)).collect();
    while let Some(node) = stack.pop() {
        if tree.contains_key(&node) {
            continue;
        }
        let ch = children(node.0, node.1)?;
        for (_, _, c) in &ch {
            if let Some(c) = c {
                if !tree.contains_key(c) {
                    stack.push(*c);
                }
            }
        }
        tree.insert(node, ch);
        order.push(node);
    }
    // children have strictly fewer defects, so sort by defect count for both passes
    order.sort_by_key(|&(w, i)| (lat.defect_count_word(w), w, i));
    let mut lmean: HashMap<(u64, usize), f64> = HashMap::new();
    for node in &order {
        let v: f64 =
            tree[node].iter().map(|(q, flips, c)| q * (flips.len() as f64 + c.map_or(0.0, |c| lmean[&c]))).sum();
        lmean.insert(*node, v);
    }
    // top-down: mass w and accumulated prefix length a at each node
    let mut mass: BTreeMap<(Reverse<usize>, u64, usize), (f64, f64)> = BTreeMap::new();
    for w in 0..1u64 << n {
        let dc = lat.defect_count_word(w);
        if dc >= k {
            mass.entry((Reverse(dc), w, 1)).or_insert((0.0, 0.0)).0 += pi(w);
        }
    }
    let mut load: HashMap<(u64, usize), f64> = HashMap::new();
    while let Some(((_, w, i), (m, a))) = mass.pop_first() {
        for (q, flips, c) in &tree[&(w, i)] {
            let rest = c.map_or(0.0, |c| lmean[&c]);
            let contrib = q * (a + m * (flips.len() as f64 + rest));
            let mut cur = w;
            for &f in flips {
                *load.entry((cur, f)).or_insert(0.0) += contrib;
                cur ^= 1 << f;
            }
            if let Some((cw, ci)) = c {
                let e = mass.entry((Reverse(lat.defect_count_word(*cw)), *cw, *ci)).or_insert((0.0, 0.0));
                e.0 += q * m;
                e.1 += q * (a + m * flips.len() as f64);
            }
        }
    }
    let model = RateModel::metropolis(beta);
    let mut edges: Vec<EdgeLoad> = load
        .into_iter()
        .map(|((w, f), v)| {
            let cfg = SpinConfig::from_word(lat, w);
            let dh = crate::dynamics::energy_change(&cfg, f);
            let cong = 2.0 * v / (pi(w) * model.rate_for(dh));
            EdgeLoad { e_minus: cfg, site: lat.site_at(f), congestion: cong, std_err: 0.0 }
        })
        .collect();
    sort_loads(&mut edges);
    let cost = edges.first().map_or(0.0, |e| e.congestion);
    Ok(FlowReport { cost, edges, mode: FlowMode::Exhaustive, level: k })
}

fn sort_loads(edges: &mut [EdgeLoad]) {
    edges.sort_by(|a, b| {
        b.congestion
            .total_cmp(&a.congestion)
            .then_with(|| a.e_minus.bits().cmp(b.e_minus.bits()))
            .then_with(|| a.site.cmp(&b.site))
    });
}

fn monte_carlo_flow(
    lat: &Arc<Lattice>,
    params: &PathParams,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<FlowReport> {
    let n = lat.n_sites();
    let beta = params.beta;
    let log_vol = n as f64 * std::f64::consts::LN_2;
    const CHUNK: usize = 1024;
    let chunks = samples.div_ceil(CHUNK);
    type Acc = HashMap<(Vec<u64>, Site), (f64, f64)>;
    let partials: Vec<Result<Acc>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seeded_rng(seed, c as u64);
            let mut acc: Acc = HashMap::new();
            for _ in 0..CHUNK.min(samples - c * CHUNK) {
                let mut sigma = SpinConfig::all_plus(lat);
                for i in 0..n {
                    if rng.random::<bool>() {
                        sigma.flip_index(i);
                    }
                }
                let dc = crate::lattice::defect_count(&sigma);
                if dc < k {
                    continue;
                }
                let path = sample_full_path(&sigma, params, &mut rng, Some(k - 1))?;
                let weight = (log_vol - beta * dc as f64).exp() * path.len() as f64;
                let mut counts: HashMap<(Vec<u64>, Site), f64> = HashMap::new();
                for e in path.edges() {
                    *counts.entry((e.e_minus.bits().to_vec(), e.site)).or_insert(0.0) += 1.0;
                }
                for (key, nvis) in counts {
                    let x = weight * nvis;
                    let slot = acc.entry(key).or_insert((0.0, 0.0));
                    slot.0 += x;
                    slot.1 += x * x;
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total: Acc = HashMap::new();
    for p in partials {
        for (key, (s, s2)) in p? {
            let slot = total.entry(key).or_insert((0.0, 0.0));
            slot.0 += s;
            slot.1 += s2;
        }
    }
    let nsamp = samples as f64;
    let model = RateModel::metropolis(beta);
    let mut edges: Vec<EdgeLoad> = total
        .into_iter()
        .map(|((bits, site), (s, s2))| {
            let mut cfg = SpinConfig::all_plus(lat);
            for i in 0..n {
                if bits[i / 64] >> (i % 64) & 1 == 1 {
                    cfg.flip_index(i);
                }
            }
            let f = lat.site_index(site).expect("site");
            let rate = model.rate_for(crate::dynamics::energy_change(&cfg, f));
            let denom = (-beta * crate::lattice::defect_count(&cfg) as f64).exp() * rate;
            let mean = s / nsamp;
            let var = if nsamp > 1.0 { (s2 / nsamp - mean * mean).max(0.0) / (nsamp - 1.0) } else { 0.0 };
            EdgeLoad { e_minus: cfg, site, congestion: 2.0 * mean / denom, std_err: 2.0 * var.sqrt() / denom }
        })
        .collect();
    sort_loads(&mut edges);
    let cost = edges.first().map_or(0.0, |e| e.congestion);
    Ok(FlowReport { cost, edges, mode: FlowMode::MonteCarlo { samples, seed }, level: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{defect_count, flip_spins};

    fn block(lat: &Arc<Lattice>, x1: i32, x2: i32, y1: i32, y2: i32) -> SpinConfig {
        let sites: Vec<Site> = (y1..=y2).flat_map(|y| (x1..=x2).map(move |x| Site::new(x, y))).collect();
        SpinConfig::from_minus_sites(lat, &sites).unwrap()
    }

    #[test]
    fn neighbours_of_rectangle_corners() {
        let lat = Lattice::plus(5);
        let d = defect_map(&block(&lat, 2, 4, 2, 3));
        let n = defect_neighbours(&d, Site::new(1, 3)).unwrap();
        assert_eq!(n.right, Some(Site::new(4, 3)));
        assert_eq!(n.down, Some(Site::new(1, 1)));
        assert_eq!(n.left, None);
        assert_eq!(n.up, None);
        assert!(defect_neighbours(&d, Site::new(0, 0)).is_err());
    }

    #[test]
    fn single_rectangle_has_one_extended_rectangle() {
        let lat = Lattice::plus(5);
        let d = defect_map(&block(&lat, 2, 4, 2, 3));
        assert_eq!(extended_rectangles(&d, None), vec![Rectangle::new(1, 4, 1, 3).unwrap()]);
    }

    #[test]
    fn removal_orders_by_case() {
        let lat = Lattice::plus(4);
        let r = Rectangle::new(0, 2, 1, 3).unwrap();
        let with = |corners: &[Site]| DefectConfig::from_sites(&lat, corners).unwrap();
        let [ll, ul, ur, lr] = r.corners();
        assert_eq!(removal_order(&with(&[ll, ul, ur]), &r), RemovalOrder::Lex);
        assert_eq!(removal_order(&with(&[ll, ul, ur, lr]), &r), RemovalOrder::Lex);
        assert_eq!(removal_order(&with(&[ul, ur, lr]), &r), RemovalOrder::AntiLex);
        assert_eq!(removal_order(&with(&[ll, ul, lr]), &r), RemovalOrder::MirroredLex);
        assert_eq!(removal_order(&with(&[ll, ur, lr]), &r), RemovalOrder::MirroredAntiLex);
        assert_eq!(removal_order(&with(&[ll]), &r), RemovalOrder::Lex);
        let sites = ordered_interior(&r, RemovalOrder::MirroredAntiLex);
        assert_eq!(sites[0], Site::new(2, 2));
        assert_eq!(sites[3], Site::new(1, 3));
    }

    #[test]
    fn removing_a_block_clears_it() {
        let lat = Lattice::plus(5);
        let sigma = block(&lat, 2, 4, 2, 3);
        let r = Rectangle::new(1, 4, 1, 3).unwrap();
        let p = rectangle_removal_path(&sigma, &r).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.terminal().is_all_plus());
        let empty = rectangle_removal_path(&sigma, &Rectangle::new(1, 1, 1, 3).unwrap()).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn split_with_unit_threshold() {
        let lat = Lattice::plus(5);
        // three separated blocks: 12 defects in columns 0,1,2,3,4,5
        let mut sigma = block(&lat, 1, 1, 1, 2);
        sigma = flip_spins(&sigma, &block(&lat, 3, 3, 4, 5).minus_sites()).unwrap();
        sigma = flip_spins(&sigma, &block(&lat, 5, 5, 1, 1).minus_sites()).unwrap();
        let d = defect_map(&sigma);
        assert_eq!(d.count(), 12);
        let split = compute_split(&d, 1.0);
        // columns 0,1 hold 4 (< 5); adding column 2 gives 6
        assert_eq!(split.boundaries, vec![0, 3, 6]);
        assert_eq!(split.m(), 2);
        assert_eq!(split.n(), 1);
        let v = occupancy_vector(&d, &split, 1).unwrap();
        assert_eq!(v.iter().sum::<usize>(), 6);
        assert!(occupancy_vector(&d, &split, 3).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_occupancy(&[0, 3, 4, 1], 2.0).unwrap(), ThetaClass::Sparse);
        assert_eq!(classify_occupancy(&[9; 6], 2.0).unwrap(), ThetaClass::Dense(0));
        // one row at 9 and five at 8: θ = 0 fails (2·1 < 5), θ = 1 holds
        assert_eq!(classify_occupancy(&[9, 8, 8, 8, 8, 8], 2.0).unwrap(), ThetaClass::Dense(1));
        assert_eq!(classify_occupancy(&[2, 1], 0.5), Err(Error::PartitionViolation));
    }

    #[test]
    fn partial_path_of_one_block_is_its_collapse() {
        let lat = Lattice::plus(6);
        let sigma = block(&lat, 2, 4, 3, 5);
        let params = PathParams::new(3.0);
        let mut rng = seeded_rng(1, 0);
        let p = sample_partial_path(&sigma, &params, &mut rng).unwrap();
        assert!(p.terminal().is_all_plus());
        assert_eq!(p.segments[0].kind, SegmentKind::Rectangle { rect: Rectangle::new(1, 4, 2, 5).unwrap(), part: 1 });
        assert!(sample_partial_path(&SpinConfig::all_plus(&lat), &params, &mut rng).is_err());
    }

    #[test]
    fn naive_examples() {
        let lat = Lattice::plus(3);
        assert!(naive_path(&SpinConfig::all_plus(&lat)).is_empty());
        let p = naive_path(&SpinConfig::all_minus(&lat));
        assert_eq!(p.flips, lat.sites().collect::<Vec<_>>());
        assert!(p.terminal().is_all_plus());
    }

    #[test]
    fn truncation_stops_at_level() {
        let lat = Lattice::plus(6);
        let mut sigma = block(&lat, 1, 2, 1, 2);
        sigma = flip_spins(&sigma, &block(&lat, 4, 5, 4, 5).minus_sites()).unwrap();
        let params = PathParams::new(3.0);
        let mut rng = seeded_rng(5, 0);
        let p = sample_full_path(&sigma, &params, &mut rng, Some(4)).unwrap();
        let states = p.states();
        assert_eq!(defect_count(states.last().unwrap()), 4);
        assert!(states[..states.len() - 1].iter().all(|s| defect_count(s) > 4));
    }

    #[test]
    fn edge_types_along_a_block() {
        let lat = Lattice::plus(5);
        let sigma = block(&lat, 2, 3, 2, 4);
        let r = Rectangle::new(1, 3, 1, 4).unwrap();
        let path = rectangle_removal_path(&sigma, &r).unwrap();
        let types: Vec<EdgeType> = path.edges().iter().map(|e| edge_type(e, &r, &sigma).unwrap()).collect();
        assert_eq!(
            types,
            vec![EdgeType::Init, EdgeType::Init, EdgeType::Mid, EdgeType::Mid, EdgeType::Fin, EdgeType::Fin]
        );
        let off = EdgeRef { e_minus: sigma.clone(), site: Site::new(5, 5) };
        assert_eq!(edge_type(&off, &r, &sigma).unwrap(), EdgeType::None);
        assert_eq!(edge_type(&off, &Rectangle::new(0, 1, 0, 1).unwrap(), &sigma), Err(Error::UntypedRectangle));
    }

    #[test]
    fn path_text_round_trip() {
        let lat = Lattice::plus(4);
        let p = naive_path(&block(&lat, 1, 2, 2, 3));
        let back = CanonicalPath::from_text(&lat, &p.to_text()).unwrap();
        assert_eq!(back.initial, p.initial);
        assert_eq!(back.flips, p.flips);
    }
}
