//! Lattice geometry, spin and defect configurations, energies and the parity
//! structure of the plaquette map.
//!
//! Fixed boundary lattices use sites `[1:L]²` and plaquettes `[0:L]²`, a
//! plaquette being named after its bottom-left corner. Periodic lattices are
//! `n × n` tori indexed `[0:n-1]²` for both sites and plaquettes. Storage
//! follows reading order: top row first, left to right.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Default cap on the number of states visited by exhaustive enumeration.
pub const DEFAULT_BUDGET: u64 = 1 << 20;

/// A lattice point `(x, y)`: column `x`, row `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub x: i32,
    pub y: i32,
}

impl Site {
    pub const fn new(x: i32, y: i32) -> Self {
        Site { x, y }
    }

    /// Reading order: higher rows first, then left to right.
    pub fn lex_cmp(&self, other: &Site) -> Ordering {
        other.y.cmp(&self.y).then(self.x.cmp(&other.x))
    }

    /// Reading order with each row traversed right to left.
    pub fn antilex_cmp(&self, other: &Site) -> Ordering {
        other.y.cmp(&self.y).then(other.x.cmp(&self.x))
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Spin values on the frame `[0:L+1]² ∖ [1:L]²` of a fixed boundary lattice.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FixedBoundary {
    side: usize,
    frame: Vec<i8>,
}

impl FixedBoundary {
    /// Builds a boundary by evaluating `f` on every frame site.
    pub fn from_fn(side: usize, f: impl Fn(Site) -> i8) -> Self {
        let w = side + 2;
        let mut frame = vec![1i8; w * w];
        for y in 0..w {
            for x in 0..w {
                let s = Site::new(x as i32, y as i32);
                if is_frame(side, s) {
                    frame[y * w + x] = if f(s) < 0 { -1 } else { 1 };
                }
            }
        }
        FixedBoundary { side, frame }
    }

    pub fn all_plus(side: usize) -> Self {
        Self::from_fn(side, |_| 1)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Boundary spin at a frame site; `None` for interior or outside points.
    pub fn value(&self, s: Site) -> Option<i8> {
        if !is_frame(self.side, s) {
            return None;
        }
        let w = self.side + 2;
        Some(self.frame[s.y as usize * w + s.x as usize])
    }

    pub fn is_all_plus(&self) -> bool {
        self.frame.iter().all(|&v| v > 0)
    }

    /// Parses `L+2` lines of `L+2` characters, top row first. Frame
    /// characters must be `+` or `-`; interior characters are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<Vec<char>> = text
            .lines()
            .map(|l| l.trim())
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.chars().collect())
            .collect();
        let w = lines.len();
        if w < 3 {
            return Err(Error::Parse("boundary needs at least 3 lines".into()));
        }
        let side = w - 2;
        let mut frame = vec![1i8; w * w];
        for (r, line) in lines.iter().enumerate() {
            if line.len() != w {
                return Err(Error::Parse(format!("boundary line {} has length {}, expected {w}", r + 1, line.len())));
            }
            let y = w - 1 - r;
            for (x, &c) in line.iter().enumerate() {
                if !is_frame(side, Site::new(x as i32, y as i32)) {
                    continue;
                }
                frame[y * w + x] = match c {
                    '+' => 1,
                    '-' => -1,
                    _ => return Err(Error::Parse(format!("invalid boundary character {c:?}"))),
                };
            }
        }
        Ok(FixedBoundary { side, frame })
    }

    pub fn to_text(&self) -> String {
        let w = self.side + 2;
        let mut out = String::new();
        for y in (0..w).rev() {
            for x in 0..w {
                let s = Site::new(x as i32, y as i32);
                out.push(match self.value(s) {
                    Some(v) if v < 0 => '-',
                    Some(_) => '+',
                    None => '.',
                });
            }
            out.push('\n');
        }
        out
    }
}

fn is_frame(side: usize, s: Site) -> bool {
    let m = side as i32 + 1;
    let inside = (0..=m).contains(&s.x) && (0..=m).contains(&s.y);
    let interior = (1..m).contains(&s.x) && (1..m).contains(&s.y);
    inside && !interior
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Plus,
    Fixed(FixedBoundary),
    Periodic,
}

impl Boundary {
    /// Short label used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Boundary::Plus => "plus",
            Boundary::Fixed(_) => "fixed",
            Boundary::Periodic => "per",
        }
    }
}

/// Side length and boundary condition.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatticeSpec {
    pub side: usize,
    pub boundary: Boundary,
}

impl LatticeSpec {
    pub fn plus(side: usize) -> Self {
        LatticeSpec { side, boundary: Boundary::Plus }
    }

    pub fn periodic(side: usize) -> Self {
        LatticeSpec { side, boundary: Boundary::Periodic }
    }

    pub fn fixed(boundary: FixedBoundary) -> Self {
        LatticeSpec { side: boundary.side(), boundary: Boundary::Fixed(boundary) }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.boundary, Boundary::Periodic)
    }

    /// True for Plus and for fixed boundaries that are identically `+1`.
    pub fn is_plus_like(&self) -> bool {
        match &self.boundary {
            Boundary::Plus => true,
            Boundary::Fixed(b) => b.is_all_plus(),
            Boundary::Periodic => false,
        }
    }
}

/// Precomputed geometry shared by all configurations on one lattice.
#[derive(Debug)]
pub struct Lattice {
    spec: LatticeSpec,
    n_sites: usize,
    n_plaq: usize,
    plaq_sites: Vec<Vec<u32>>,
    plaq_neg: Vec<bool>,
    site_plaqs: Vec<Vec<u32>>,
    plaq_masks: Option<Vec<u64>>,
}

impl Lattice {
    pub fn new(spec: LatticeSpec) -> Result<Arc<Lattice>> {
        let l = spec.side;
        if l == 0 {
            return Err(Error::InvalidSpec("side must be at least 1".into()));
        }
        if let Boundary::Fixed(b) = &spec.boundary {
            if b.side() != l {
                return Err(Error::InvalidSpec(format!("boundary side {} differs from lattice side {l}", b.side())));
            }
        }
        let periodic = spec.is_periodic();
        let n_sites = l * l;
        let n_plaq = if periodic { l * l } else { (l + 1) * (l + 1) };
        let mut lat = Lattice {
            spec,
            n_sites,
            n_plaq,
            plaq_sites: Vec::with_capacity(n_plaq),
            plaq_neg: Vec::with_capacity(n_plaq),
            site_plaqs: vec![Vec::new(); n_sites],
            plaq_masks: None,
        };
        for p in 0..n_plaq {
            let c = lat.plaquette_at(p);
            let mut members: Vec<u32> = Vec::with_capacity(4);
            let mut neg = false;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                let s = Site::new(c.x + dx, c.y + dy);
                match lat.site_index(s) {
                    Some(i) => {
                        // a site met twice (side-1 torus) cancels in the product
                        if let Some(pos) = members.iter().position(|&m| m == i as u32) {
                            members.swap_remove(pos);
                        } else {
                            members.push(i as u32);
                        }
                    }
                    None => {
                        if lat.boundary_spin(s) < 0 {
                            neg = !neg;
                        }
                    }
                }
            }
            members.sort_unstable();
            for &m in &members {
                lat.site_plaqs[m as usize].push(p as u32);
            }
            lat.plaq_sites.push(members);
            lat.plaq_neg.push(neg);
        }
        if n_sites <= 64 {
            lat.plaq_masks =
                Some(lat.plaq_sites.iter().map(|ms| ms.iter().fold(0u64, |acc, &m| acc | (1u64 << m))).collect());
        }
        Ok(Arc::new(lat))
    }

    /// Plus boundary lattice of side `l`. Panics if `l == 0`.
    pub fn plus(l: usize) -> Arc<Lattice> {
        Lattice::new(LatticeSpec::plus(l)).expect("side must be positive")
    }

    /// Torus of side `n`. Panics if `n == 0`.
    pub fn periodic(n: usize) -> Arc<Lattice> {
        Lattice::new(LatticeSpec::periodic(n)).expect("side must be positive")
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    pub fn side(&self) -> usize {
        self.spec.side
    }

    pub fn boundary(&self) -> &Boundary {
        &self.spec.boundary
    }

    pub fn is_periodic(&self) -> bool {
        self.spec.is_periodic()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_plaquettes(&self) -> usize {
        self.n_plaq
    }

    /// Range of plaquette coordinates along one axis.
    pub fn plaquette_range(&self) -> (i32, i32) {
        let l = self.side() as i32;
        if self.is_periodic() {
            (0, l - 1)
        } else {
            (0, l)
        }
    }

    /// Range of site coordinates along one axis.
    pub fn site_range(&self) -> (i32, i32) {
        let l = self.side() as i32;
        if self.is_periodic() {
            (0, l - 1)
        } else {
            (1, l)
        }
    }

    /// Storage index of a site; periodic coordinates wrap.
    pub fn site_index(&self, s: Site) -> Option<usize> {
        let l = self.side() as i32;
        if self.is_periodic() {
            let x = s.x.rem_euclid(l);
            let y = s.y.rem_euclid(l);
            Some(((l - 1 - y) * l + x) as usize)
        } else if (1..=l).contains(&s.x) && (1..=l).contains(&s.y) {
            Some(((l - s.y) * l + (s.x - 1)) as usize)
        } else {
            None
        }
    }

    pub fn site_at(&self, i: usize) -> Site {
        let l = self.side() as i32;
        let r = i as i32 / l;
        let c = i as i32 % l;
        if self.is_periodic() {
            Site::new(c, l - 1 - r)
        } else {
            Site::new(c + 1, l - r)
        }
    }

    /// Storage index of a plaquette; periodic coordinates wrap.
    pub fn plaquette_index(&self, p: Site) -> Option<usize> {
        let l = self.side() as i32;
        if self.is_periodic() {
            let x = p.x.rem_euclid(l);
            let y = p.y.rem_euclid(l);
            Some(((l - 1 - y) * l + x) as usize)
        } else if (0..=l).contains(&p.x) && (0..=l).contains(&p.y) {
            Some(((l - p.y) * (l + 1) + p.x) as usize)
        } else {
            None
        }
    }

    pub fn plaquette_at(&self, i: usize) -> Site {
        let l = self.side() as i32;
        if self.is_periodic() {
            Site::new(i as i32 % l, l - 1 - i as i32 / l)
        } else {
            Site::new(i as i32 % (l + 1), l - i as i32 / (l + 1))
        }
    }

    /// Sites of `B_p` inside the lattice (repeated sites cancelled).
    pub fn plaquette_sites(&self, p: usize) -> &[u32] {
        &self.plaq_sites[p]
    }

    /// Plaquettes whose value changes when the site is flipped.
    pub fn site_plaquettes(&self, i: usize) -> &[u32] {
        &self.site_plaqs[i]
    }

    /// True when the boundary spins of `B_p` multiply to `-1`.
    pub fn plaquette_boundary_negative(&self, p: usize) -> bool {
        self.plaq_neg[p]
    }

    /// Bit masks of plaquette members, available when there are at most 64 sites.
    pub fn plaquette_masks(&self) -> Option<&[u64]> {
        self.plaq_masks.as_deref()
    }

    /// Boundary spin at a point outside `Λ` (fixed boundaries); `+1` otherwise.
    pub fn boundary_spin(&self, s: Site) -> i8 {
        match &self.spec.boundary {
            Boundary::Fixed(b) => b.value(s).unwrap_or(1),
            _ => 1,
        }
    }

    /// Defect count of the configuration whose `-1` spins are the set bits of `w`.
    /// Requires at most 64 sites.
    pub fn defect_count_word(&self, w: u64) -> usize {
        let masks = self.plaq_masks.as_ref().expect("defect_count_word needs at most 64 sites");
        masks.iter().zip(&self.plaq_neg).filter(|(&m, &neg)| ((w & m).count_ones() & 1 == 1) != neg).count()
    }

    /// Sites in reading order.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.n_sites).map(|i| self.site_at(i))
    }

    /// Plaquettes in reading order.
    pub fn plaquettes(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.n_plaq).map(|i| self.plaquette_at(i))
    }
}

/// A `±1` spin per site; set bits mark `-1` spins.
#[derive(Clone)]
pub struct SpinConfig {
    lattice: Arc<Lattice>,
    bits: Vec<u64>,
}

impl PartialEq for SpinConfig {
    fn eq(&self, other: &Self) -> bool {
        self.bits == other.bits
            && (Arc::ptr_eq(&self.lattice, &other.lattice) || self.lattice.spec == other.lattice.spec)
    }
}

impl Eq for SpinConfig {}

impl std::hash::Hash for SpinConfig {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.bits.hash(state);
    }
}

impl fmt::Debug for SpinConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpinConfig[\n{}]", self.to_text())
    }
}

impl SpinConfig {
    pub fn all_plus(lattice: &Arc<Lattice>) -> Self {
        SpinConfig { lattice: lattice.clone(), bits: vec![0; lattice.n_sites().div_ceil(64)] }
    }

    pub fn all_minus(lattice: &Arc<Lattice>) -> Self {
        let mut c = Self::all_plus(lattice);
        for i in 0..lattice.n_sites() {
            c.flip_index(i);
        }
        c
    }

    /// Configuration whose `-1` spins are the set bits of `w`.
    pub fn from_word(lattice: &Arc<Lattice>, w: u64) -> Self {
        let mut c = Self::all_plus(lattice);
        let n = lattice.n_sites();
        let mask = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
        if !c.bits.is_empty() {
            c.bits[0] = w & mask;
        }
        c
    }

    /// Raw bit words (bit `i` of the concatenation set iff site `i` is `-1`).
    pub fn bits(&self) -> &[u64] {
        &self.bits
    }

    /// The configuration as a single word, if the lattice has at most 64 sites.
    pub fn word(&self) -> Option<u64> {
        if self.lattice.n_sites() <= 64 {
            Some(self.bits.first().copied().unwrap_or(0))
        } else {
            None
        }
    }

    /// Builds a configuration from spin values in reading order.
    pub fn from_spins(lattice: &Arc<Lattice>, spins: &[i8]) -> Result<Self> {
        if spins.len() != lattice.n_sites() {
            return Err(Error::InvalidSpec(format!("expected {} spins, got {}", lattice.n_sites(), spins.len())));
        }
        let mut c = Self::all_plus(lattice);
        for (i, &s) in spins.iter().enumerate() {
            if s < 0 {
                c.flip_index(i);
            }
        }
        Ok(c)
    }

    /// Configuration with `-1` exactly on the given sites.
    pub fn from_minus_sites(lattice: &Arc<Lattice>, minus: &[Site]) -> Result<Self> {
        let mut c = Self::all_plus(lattice);
        for &s in minus {
            let i = c.index_of(s)?;
            c.set_index(i, -1);
        }
        Ok(c)
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn spec(&self) -> &LatticeSpec {
        self.lattice.spec()
    }

    fn index_of(&self, s: Site) -> Result<usize> {
        self.lattice.site_index(s).ok_or(Error::InvalidSite(s.x, s.y))
    }

    pub fn spin_at(&self, i: usize) -> i8 {
        if self.bits[i / 64] >> (i % 64) & 1 == 1 {
            -1
        } else {
            1
        }
    }

    pub fn spin(&self, s: Site) -> Result<i8> {
        Ok(self.spin_at(self.index_of(s)?))
    }

    /// Spin at any point: lattice spins inside `Λ`, boundary spins outside.
    pub fn spin_or_boundary(&self, s: Site) -> i8 {
        match self.lattice.site_index(s) {
            Some(i) => self.spin_at(i),
            None => self.lattice.boundary_spin(s),
        }
    }

    pub fn flip_index(&mut self, i: usize) {
        self.bits[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn set_index(&mut self, i: usize, v: i8) {
        if self.spin_at(i) != v.signum() {
            self.flip_index(i);
        }
    }

    pub fn flipped_index(&self, i: usize) -> Self {
        let mut c = self.clone();
        c.flip_index(i);
        c
    }

    /// Number of `-1` spins, `|σ|`.
    pub fn minus_count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_all_plus(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Sites carrying `-1`, in reading order.
    pub fn minus_sites(&self) -> Vec<Site> {
        (0..self.lattice.n_sites()).filter(|&i| self.spin_at(i) < 0).map(|i| self.lattice.site_at(i)).collect()
    }

    /// Rows of `+`/`-`, top row first.
    pub fn to_text(&self) -> String {
        let l = self.lattice.side();
        let mut out = String::with_capacity(l * (l + 1));
        for i in 0..self.lattice.n_sites() {
            out.push(if self.spin_at(i) < 0 { '-' } else { '+' });
            if i % l == l - 1 {
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(lattice: &Arc<Lattice>, text: &str) -> Result<Self> {
        let spins: Vec<i8> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .flat_map(|l| l.chars())
            .map(|c| match c {
                '+' => Ok(1),
                '-' => Ok(-1),
                other => Err(Error::Parse(format!("invalid spin character {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Self::from_spins(lattice, &spins)
    }
}

/// The plaquette field, stored as the set of defects (`-1` plaquettes).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct DefectConfig {
    lattice: Arc<Lattice>,
    defects: Vec<bool>,
}

impl fmt::Debug for DefectConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.sites()).finish()
    }
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl Eq for Lattice {}

impl std::hash::Hash for Lattice {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.spec.hash(state);
    }
}

impl DefectConfig {
    pub fn empty(lattice: &Arc<Lattice>) -> Self {
        DefectConfig { lattice: lattice.clone(), defects: vec![false; lattice.n_plaquettes()] }
    }

    pub fn from_sites(lattice: &Arc<Lattice>, sites: &[Site]) -> Result<Self> {
        let mut d = Self::empty(lattice);
        for &s in sites {
            let p = lattice.plaquette_index(s).ok_or(Error::InvalidPlaquette(s.x, s.y))?;
            d.defects[p] = true;
        }
        Ok(d)
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    /// `|p|`, the number of defects.
    pub fn count(&self) -> usize {
        self.defects.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.defects.iter().any(|&b| b)
    }

    pub fn is_defect_index(&self, p: usize) -> bool {
        self.defects[p]
    }

    pub fn contains(&self, s: Site) -> bool {
        self.lattice.plaquette_index(s).is_some_and(|p| self.defects[p])
    }

    pub fn toggle_index(&mut self, p: usize) {
        self.defects[p] = !self.defects[p];
    }

    pub fn set(&mut self, s: Site, defect: bool) -> Result<()> {
        let p = self.lattice.plaquette_index(s).ok_or(Error::InvalidPlaquette(s.x, s.y))?;
        self.defects[p] = defect;
        Ok(())
    }

    /// Defect sites in reading order.
    pub fn sites(&self) -> Vec<Site> {
        (0..self.defects.len()).filter(|&p| self.defects[p]).map(|p| self.lattice.plaquette_at(p)).collect()
    }

    /// Defects as sorted `(x,y)` lines.
    pub fn to_text(&self) -> String {
        let mut s = self.sites();
        s.sort();
        s.iter().map(|p| format!("{p}\n")).collect()
    }

    pub fn from_text(lattice: &Arc<Lattice>, text: &str) -> Result<Self> {
        let mut sites = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let inner = line
                .strip_prefix('(')
                .and_then(|l| l.strip_suffix(')'))
                .ok_or_else(|| Error::Parse(format!("expected (x,y), got {line:?}")))?;
            let (a, b) = inner.split_once(',').ok_or_else(|| Error::Parse(format!("expected (x,y), got {line:?}")))?;
            let x = a.trim().parse().map_err(|_| Error::Parse(format!("bad coordinate in {line:?}")))?;
            let y = b.trim().parse().map_err(|_| Error::Parse(format!("bad coordinate in {line:?}")))?;
            sites.push(Site::new(x, y));
        }
        Self::from_sites(lattice, &sites)
    }
}

/// Axis-aligned rectangle `[x1:x2] × [y1:y2]` of plaquette coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rectangle {
    pub x1: i32,
    pub x2: i32,
    pub y1: i32,
    pub y2: i32,
}

impl Rectangle {
    pub fn new(x1: i32, x2: i32, y1: i32, y2: i32) -> Result<Self> {
        if x1 > x2 || y1 > y2 {
            return Err(Error::InvalidSpec(format!("rectangle [{x1}:{x2}]x[{y1}:{y2}] is not ordered")));
        }
        Ok(Rectangle { x1, x2, y1, y2 })
    }

    /// `R(a, b, z)`: the rectangle with corners `a`, `b` (same row) and `z`.
    pub fn through(a: Site, b: Site, z: Site) -> Self {
        let xs = [a.x, b.x, z.x];
        let ys = [a.y, b.y, z.y];
        Rectangle {
            x1: *xs.iter().min().expect("three points"),
            x2: *xs.iter().max().expect("three points"),
            y1: *ys.iter().min().expect("three points"),
            y2: *ys.iter().max().expect("three points"),
        }
    }

    pub fn lower_left(&self) -> Site {
        Site::new(self.x1, self.y1)
    }

    pub fn upper_left(&self) -> Site {
        Site::new(self.x1, self.y2)
    }

    pub fn upper_right(&self) -> Site {
        Site::new(self.x2, self.y2)
    }

    pub fn lower_right(&self) -> Site {
        Site::new(self.x2, self.y1)
    }

    pub fn corners(&self) -> [Site; 4] {
        [self.lower_left(), self.upper_left(), self.upper_right(), self.lower_right()]
    }

    /// Whether the rectangle lies inside the plaquette index set.
    pub fn fits(&self, lattice: &Lattice) -> bool {
        let (lo, hi) = lattice.plaquette_range();
        lo <= self.x1 && self.x2 <= hi && lo <= self.y1 && self.y2 <= hi
    }

    /// Sites flipped to remove the rectangle, `[x1+1:x2] × [y1+1:y2]`, in
    /// reading order.
    pub fn interior_sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for y in (self.y1 + 1..=self.y2).rev() {
            for x in self.x1 + 1..=self.x2 {
                out.push(Site::new(x, y));
            }
        }
        out
    }

    /// Sort key `(y2, x1, y1, x2)`.
    pub fn order_key(&self) -> (i32, i32, i32, i32) {
        (self.y2, self.x1, self.y1, self.x2)
    }
}

impl fmt::Display for Rectangle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}:{}]x[{}:{}]", self.x1, self.x2, self.y1, self.y2)
    }
}

/// Value of the plaquette at `p`: the product of the four spins of `B_p`.
pub fn plaquette_value(cfg: &SpinConfig, p: Site) -> Result<i8> {
    let idx = cfg.lattice.plaquette_index(p).ok_or(Error::InvalidPlaquette(p.x, p.y))?;
    Ok(plaquette_value_at(cfg, idx))
}

pub(crate) fn plaquette_value_at(cfg: &SpinConfig, p: usize) -> i8 {
    let mut neg = cfg.lattice.plaq_neg[p];
    for &s in &cfg.lattice.plaq_sites[p] {
        if cfg.spin_at(s as usize) < 0 {
            neg = !neg;
        }
    }
    if neg {
        -1
    } else {
        1
    }
}

pub fn defect_map(cfg: &SpinConfig) -> DefectConfig {
    let defects = (0..cfg.lattice.n_plaquettes()).map(|p| plaquette_value_at(cfg, p) < 0).collect();
    DefectConfig { lattice: cfg.lattice.clone(), defects }
}

/// Number of defects of `cfg`.
pub fn defect_count(cfg: &SpinConfig) -> usize {
    match cfg.word() {
        Some(w) => cfg.lattice.defect_count_word(w),
        None => (0..cfg.lattice.n_plaquettes()).filter(|&p| plaquette_value_at(cfg, p) < 0).count(),
    }
}

/// `H(σ) = -½ Σ_x p_x(σ)`.
pub fn hamiltonian(cfg: &SpinConfig) -> f64 {
    -(cfg.lattice.n_plaquettes() as f64) / 2.0 + defect_count(cfg) as f64
}

/// `ln(π(σ)/π(+)) = -β|p(σ)|`.
pub fn log_relative_weight(cfg: &SpinConfig, beta: f64) -> Result<f64> {
    if !(cfg.spec().is_plus_like() || cfg.spec().is_periodic()) {
        return Err(Error::Unsupported(
            "relative weight needs an all-plus reference state; use the hamiltonian for general fixed boundaries"
                .into(),
        ));
    }
    Ok(-beta * defect_count(cfg) as f64)
}

/// `π(σ)/π(+) = e^{-β|p(σ)|}`.
pub fn relative_weight(cfg: &SpinConfig, beta: f64) -> Result<f64> {
    log_relative_weight(cfg, beta).map(f64::exp)
}

/// Checks every row and column product of the plaquette field against the
/// value forced by the boundary (all `+1` on the torus).
pub fn parity_check(d: &DefectConfig) -> bool {
    let lat = &d.lattice;
    let l = lat.side() as i32;
    let (lo, hi) = lat.plaquette_range();
    let sign = |p: Site| -> bool { d.contains(p) };
    for i in lo..=hi {
        let col_neg = (lo..=hi).filter(|&j| sign(Site::new(i, j))).count() % 2 == 1;
        let row_neg = (lo..=hi).filter(|&j| sign(Site::new(j, i))).count() % 2 == 1;
        let (col_target, row_target) = if lat.is_periodic() {
            (false, false)
        } else {
            let b = |x: i32, y: i32| lat.boundary_spin(Site::new(x, y)) < 0;
            let col = b(i, 0) ^ b(i + 1, 0) ^ b(i, l + 1) ^ b(i + 1, l + 1);
            let row = b(0, i) ^ b(0, i + 1) ^ b(l + 1, i) ^ b(l + 1, i + 1);
            (col, row)
        };
        if col_neg != col_target || row_neg != row_target {
            return false;
        }
    }
    true
}

/// Inverse of the defect map. On the torus the spins of column 0 and row 0
/// are taken to be `+1`; see [`invert_defects_with_frame`].
pub fn invert_defects(d: &DefectConfig) -> Result<SpinConfig> {
    if d.lattice.is_periodic() {
        let n = d.lattice.side();
        return invert_defects_with_frame(d, &vec![1; n], &vec![1; n]);
    }
    if !parity_check(d) {
        return Err(Error::ParityViolation);
    }
    let lat = &d.lattice;
    let l = lat.side() as i32;
    let th = |x: i32, y: i32| lat.boundary_spin(Site::new(x, y));
    // prefix[y][x] = product of p over [0:x-1]×[0:y-1]
    let w = (l + 2) as usize;
    let mut prefix = vec![1i8; w * w];
    for y in 1..w {
        for x in 1..w {
            let p = if d.contains(Site::new(x as i32 - 1, y as i32 - 1)) { -1 } else { 1 };
            prefix[y * w + x] = prefix[(y - 1) * w + x] * prefix[y * w + x - 1] * prefix[(y - 1) * w + x - 1] * p;
        }
    }
    let mut cfg = SpinConfig::all_plus(lat);
    for i in 0..lat.n_sites() {
        let s = lat.site_at(i);
        let v = th(0, 0) * th(s.x, 0) * th(0, s.y) * prefix[s.y as usize * w + s.x as usize];
        cfg.set_index(i, v);
    }
    Ok(cfg)
}

/// Torus inverse given the spins of column 0 (`col0[y]`) and row 0 (`row0[x]`);
/// the two must agree at the origin.
pub fn invert_defects_with_frame(d: &DefectConfig, col0: &[i8], row0: &[i8]) -> Result<SpinConfig> {
    let lat = &d.lattice;
    if !lat.is_periodic() {
        return Err(Error::Unsupported("frame assignment applies to periodic lattices only".into()));
    }
    let n = lat.side();
    if col0.len() != n || row0.len() != n || col0[0].signum() != row0[0].signum() {
        return Err(Error::InvalidSpec("inconsistent column/row assignment".into()));
    }
    if !parity_check(d) {
        return Err(Error::ParityViolation);
    }
    let mut grid = vec![1i8; n * n];
    for y in 0..n {
        grid[y * n] = col0[y].signum();
    }
    for x in 0..n {
        grid[x] = row0[x].signum();
    }
    for y in 0..n.saturating_sub(1) {
        for x in 0..n - 1 {
            let p = if d.contains(Site::new(x as i32, y as i32)) { -1 } else { 1 };
            grid[(y + 1) * n + x + 1] = p * grid[y * n + x] * grid[y * n + x + 1] * grid[(y + 1) * n + x];
        }
    }
    let mut cfg = SpinConfig::all_plus(lat);
    for y in 0..n {
        for x in 0..n {
            let i = lat.site_index(Site::new(x as i32, y as i32)).expect("torus index");
            cfg.set_index(i, grid[y * n + x]);
        }
    }
    if defect_map(&cfg) != *d {
        return Err(Error::ParityViolation);
    }
    Ok(cfg)
}

/// Flips every listed site.
pub fn flip_spins(cfg: &SpinConfig, sites: &[Site]) -> Result<SpinConfig> {
    let mut out = cfg.clone();
    for &s in sites {
        if !cfg.lattice.is_periodic() && cfg.lattice.site_index(s).is_none() {
            return Err(Error::InvalidSite(s.x, s.y));
        }
        let i = cfg.index_of(s)?;
        out.flip_index(i);
    }
    Ok(out)
}

fn check_budget(lattice: &Lattice, budget: u64) -> Result<u64> {
    let n = lattice.n_sites();
    if n >= 63 || (1u64 << n) > budget {
        let states = if n >= 63 { u64::MAX } else { 1u64 << n };
        return Err(Error::BudgetExceeded { states, budget });
    }
    Ok(1u64 << n)
}

/// Number of configurations with each defect count, by exhaustive enumeration.
pub fn enumerate_by_defect_count(lattice: &Arc<Lattice>, budget: u64) -> Result<BTreeMap<usize, u64>> {
    let total = check_budget(lattice, budget)?;
    let mut counts = BTreeMap::new();
    for w in 0..total {
        *counts.entry(lattice.defect_count_word(w)).or_insert(0) += 1;
    }
    Ok(counts)
}

/// All minimisers of the Hamiltonian. Closed form for Plus and periodic
/// boundaries, enumeration otherwise.
pub fn ground_states(lattice: &Arc<Lattice>, budget: u64) -> Result<Vec<SpinConfig>> {
    match lattice.boundary() {
        Boundary::Plus => Ok(vec![SpinConfig::all_plus(lattice)]),
        Boundary::Periodic => {
            let n = lattice.side();
            if 2 * n - 1 > 40 {
                return Err(Error::BudgetExceeded { states: u64::MAX, budget });
            }
            let count = 1u64 << (2 * n - 1);
            if count > budget {
                return Err(Error::BudgetExceeded { states: count, budget });
            }
            let mut out = Vec::with_capacity(count as usize);
            for cols in 0..(1u64 << n) {
                for rows in 0..(1u64 << (n - 1)) {
                    let mut c = SpinConfig::all_plus(lattice);
                    for i in 0..lattice.n_sites() {
                        let s = lattice.site_at(i);
                        let flip = (cols >> s.x & 1) ^ (rows >> s.y & 1);
                        if flip == 1 {
                            c.flip_index(i);
                        }
                    }
                    out.push(c);
                }
            }
            Ok(out)
        }
        Boundary::Fixed(_) => {
            let total = check_budget(lattice, budget)?;
            let mut best = usize::MAX;
            let mut out = Vec::new();
            for w in 0..total {
                let k = lattice.defect_count_word(w);
                if k < best {
                    best = k;
                    out.clear();
                }
                if k == best {
                    out.push(SpinConfig::from_word(lattice, w));
                }
            }
            Ok(out)
        }
    }
}

/// `L_c = ⌊e^{β/2}⌋`.
pub fn critical_length(beta: f64) -> usize {
    (beta / 2.0).exp().floor() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_maps_round_trip() {
        for lat in [Lattice::plus(3), Lattice::periodic(4)] {
            for i in 0..lat.n_sites() {
                assert_eq!(lat.site_index(lat.site_at(i)), Some(i));
            }
            for p in 0..lat.n_plaquettes() {
                assert_eq!(lat.plaquette_index(lat.plaquette_at(p)), Some(p));
            }
        }
    }

    #[test]
    fn storage_follows_reading_order() {
        let lat = Lattice::plus(3);
        let sites: Vec<Site> = lat.sites().collect();
        assert!(sites.windows(2).all(|w| w[0].lex_cmp(&w[1]) == Ordering::Less));
        assert_eq!(sites[0], Site::new(1, 3));
    }

    #[test]
    fn plaquette_values_small_cases() {
        let lat = Lattice::plus(3);
        let c = SpinConfig::from_minus_sites(&lat, &[Site::new(2, 2)]).unwrap();
        assert_eq!(plaquette_value(&c, Site::new(1, 1)).unwrap(), -1);
        assert_eq!(plaquette_value(&c, Site::new(0, 0)).unwrap(), 1);
        assert!(plaquette_value(&c, Site::new(4, 0)).is_err());
        let t = Lattice::periodic(2);
        let row0 = SpinConfig::from_minus_sites(&t, &[Site::new(0, 0), Site::new(1, 0)]).unwrap();
        for p in t.plaquettes() {
            assert_eq!(plaquette_value(&row0, p).unwrap(), 1);
        }
    }

    #[test]
    fn defect_map_examples() {
        let lat = Lattice::plus(3);
        let c = SpinConfig::from_minus_sites(&lat, &[Site::new(2, 2)]).unwrap();
        let mut d = defect_map(&c).sites();
        d.sort();
        assert_eq!(d, vec![Site::new(1, 1), Site::new(1, 2), Site::new(2, 1), Site::new(2, 2)]);
        let lat4 = Lattice::plus(4);
        let block: Vec<Site> = [(2, 2), (3, 2), (2, 3), (3, 3)].iter().map(|&(x, y)| Site::new(x, y)).collect();
        let c = SpinConfig::from_minus_sites(&lat4, &block).unwrap();
        let mut d = defect_map(&c).sites();
        d.sort();
        assert_eq!(d, vec![Site::new(1, 1), Site::new(1, 3), Site::new(3, 1), Site::new(3, 3)]);
    }

    #[test]
    fn energies() {
        let lat = Lattice::plus(3);
        assert_eq!(hamiltonian(&SpinConfig::all_plus(&lat)), -8.0);
        let c = SpinConfig::from_minus_sites(&lat, &[Site::new(2, 2)]).unwrap();
        assert_eq!(hamiltonian(&c), -4.0);
        assert!((relative_weight(&c, 2.0).unwrap() - (-8.0f64).exp()).abs() < 1e-15);
        let t = Lattice::periodic(5);
        assert_eq!(hamiltonian(&SpinConfig::all_plus(&t)), -12.5);
        let fb = FixedBoundary::from_fn(2, |s| if s.x == 0 { -1 } else { 1 });
        let f = Lattice::new(LatticeSpec::fixed(fb)).unwrap();
        assert!(matches!(relative_weight(&SpinConfig::all_plus(&f), 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn log_weight_does_not_underflow() {
        let lat = Lattice::plus(6);
        let c = SpinConfig::all_minus(&lat);
        let lw = log_relative_weight(&c, 1000.0).unwrap();
        assert!(lw.is_finite() && lw < -700.0);
    }

    #[test]
    fn parity_examples() {
        let lat = Lattice::plus(3);
        assert!(parity_check(&DefectConfig::empty(&lat)));
        let two = DefectConfig::from_sites(&lat, &[Site::new(0, 0), Site::new(2, 0)]).unwrap();
        assert!(!parity_check(&two));
        let four =
            DefectConfig::from_sites(&lat, &[Site::new(0, 1), Site::new(2, 1), Site::new(0, 3), Site::new(2, 3)])
                .unwrap();
        assert!(parity_check(&four));
    }

    #[test]
    fn inverse_of_corner_defects_is_a_block() {
        let lat = Lattice::plus(5);
        let (a, b, c, d) = (1, 0, 4, 3);
        let defs =
            DefectConfig::from_sites(&lat, &[Site::new(a, b), Site::new(a, d), Site::new(c, b), Site::new(c, d)])
                .unwrap();
        let cfg = invert_defects(&defs).unwrap();
        for s in lat.sites() {
            let inside = (a + 1..=c).contains(&s.x) && (b + 1..=d).contains(&s.y);
            assert_eq!(cfg.spin(s).unwrap() < 0, inside, "{s}");
        }
        assert_eq!(invert_defects(&DefectConfig::empty(&lat)).unwrap(), SpinConfig::all_plus(&lat));
    }

    #[test]
    fn inverse_under_fixed_boundary() {
        let fb = FixedBoundary::from_fn(3, |s| if (s.x + 2 * s.y) % 3 == 0 { -1 } else { 1 });
        let lat = Lattice::new(LatticeSpec::fixed(fb)).unwrap();
        for w in 0..512u64 {
            let c = SpinConfig::from_word(&lat, w);
            let d = defect_map(&c);
            assert!(parity_check(&d));
            assert_eq!(invert_defects(&d).unwrap(), c);
        }
    }

    #[test]
    fn flips() {
        let lat = Lattice::plus(3);
        let c = SpinConfig::all_plus(&lat);
        assert_eq!(flip_spins(&c, &[]).unwrap(), c);
        let all: Vec<Site> = lat.sites().collect();
        let m = flip_spins(&c, &all).unwrap();
        assert_eq!(m, SpinConfig::all_minus(&lat));
        let mut corners = defect_map(&m).sites();
        corners.sort();
        assert_eq!(corners, vec![Site::new(0, 0), Site::new(0, 3), Site::new(3, 0), Site::new(3, 3)]);
        let x = [Site::new(2, 3)];
        assert_eq!(flip_spins(&flip_spins(&c, &x).unwrap(), &x).unwrap(), c);
        assert!(flip_spins(&c, &[Site::new(0, 1)]).is_err());
    }

    #[test]
    fn ground_state_counts() {
        assert_eq!(ground_states(&Lattice::plus(4), DEFAULT_BUDGET).unwrap().len(), 1);
        assert_eq!(ground_states(&Lattice::periodic(2), DEFAULT_BUDGET).unwrap().len(), 8);
        let g3 = ground_states(&Lattice::periodic(3), DEFAULT_BUDGET).unwrap();
        assert_eq!(g3.len(), 32);
        assert!(g3.iter().all(|g| defect_count(g) == 0));
    }

    #[test]
    fn enumeration_small() {
        let counts = enumerate_by_defect_count(&Lattice::plus(3), DEFAULT_BUDGET).unwrap();
        assert_eq!(counts[&0], 1);
        assert!(!counts.contains_key(&2));
        assert_eq!(counts.values().sum::<u64>(), 512);
        assert!(matches!(
            enumerate_by_defect_count(&Lattice::plus(5), DEFAULT_BUDGET),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn rectangle_geometry() {
        let r = Rectangle::through(Site::new(3, 4), Site::new(1, 4), Site::new(1, 2));
        assert_eq!(r, Rectangle::new(1, 3, 2, 4).unwrap());
        assert_eq!(r.interior_sites(), vec![Site::new(2, 4), Site::new(3, 4), Site::new(2, 3), Site::new(3, 3)]);
        assert!(r.fits(&Lattice::plus(4)));
        assert!(!r.fits(&Lattice::plus(3)));
        assert!(Rectangle::new(2, 1, 0, 0).is_err());
        assert!(Rectangle::new(1, 1, 0, 3).unwrap().interior_sites().is_empty());
    }

    #[test]
    fn critical_lengths() {
        assert_eq!(critical_length(2.0), 2);
        assert_eq!(critical_length(3.0), 4);
        assert_eq!(critical_length(4.0), 7);
    }

    #[test]
    fn text_round_trips() {
        let lat = Lattice::plus(4);
        let c = SpinConfig::from_word(&lat, 0b1011_0010_0110_1001);
        assert_eq!(SpinConfig::from_text(&lat, &c.to_text()).unwrap(), c);
        let d = defect_map(&c);
        assert_eq!(DefectConfig::from_text(&lat, &d.to_text()).unwrap(), d);
        let fb = FixedBoundary::from_fn(3, |s| if s.y == 0 { -1 } else { 1 });
        assert_eq!(FixedBoundary::from_text(&fb.to_text()).unwrap(), fb);
    }

    #[test]
    fn side_one_torus_has_trivial_plaquette() {
        let t = Lattice::periodic(1);
        let c = SpinConfig::all_minus(&t);
        assert_eq!(defect_count(&c), 0);
    }
}
