//! Finite pieces of Z^d: sites, ℓ∞ boxes, boundaries and discrete blow-ups.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 8;

/// A point of Z^d. Coordinates beyond `dim` are always zero.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    dim: u8,
    c: [i32; MAX_DIM],
}

impl Site {
    pub fn new(coords: &[i32]) -> Self {
        assert!(coords.len() <= MAX_DIM, "dimension {} exceeds {MAX_DIM}", coords.len());
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Self { dim: coords.len() as u8, c }
    }

    pub fn origin(d: usize) -> Self {
        Self::new(&vec![0; d])
    }

    /// `value` in every coordinate.
    pub fn splat(d: usize, value: i32) -> Self {
        Self::new(&vec![value; d])
    }

    /// The unit vector `e_i`.
    pub fn unit(d: usize, i: usize) -> Self {
        let mut s = Self::origin(d);
        s.c[i] = 1;
        s
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.c[..self.dim as usize]
    }

    #[inline]
    pub fn get(&self, i: usize) -> i32 {
        self.c[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: i32) {
        debug_assert!(i < self.dim());
        self.c[i] = v;
    }

    /// `self ± e_axis`.
    #[inline]
    pub fn step(&self, axis: usize, positive: bool) -> Self {
        let mut s = *self;
        s.c[axis] += if positive { 1 } else { -1 };
        s
    }

    /// The `k`-th of the 2d neighbours: `k = 2i` is `+e_i`, `k = 2i+1` is `-e_i`.
    #[inline]
    pub fn neighbor(&self, k: usize) -> Self {
        self.step(k / 2, k % 2 == 0)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = Site> + '_ {
        (0..2 * self.dim()).map(move |k| self.neighbor(k))
    }

    pub fn add(&self, other: &Site) -> Site {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = *self;
        for i in 0..self.dim() {
            s.c[i] += other.c[i];
        }
        s
    }

    pub fn sub(&self, other: &Site) -> Site {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = *self;
        for i in 0..self.dim() {
            s.c[i] -= other.c[i];
        }
        s
    }

    pub fn scale(&self, k: i32) -> Site {
        let mut s = *self;
        for i in 0..self.dim() {
            s.c[i] *= k;
        }
        s
    }

    pub fn linf_norm(&self) -> i32 {
        self.coords().iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    pub fn l1_norm(&self) -> i32 {
        self.coords().iter().map(|v| v.abs()).sum()
    }

    pub fn linf_dist(&self, other: &Site) -> i32 {
        self.sub(other).linf_norm()
    }

    pub fn euclid_norm(&self) -> f64 {
        self.coords().iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// `self / n` as a point of R^d.
    pub fn scaled_point(&self, n: f64) -> Vec<f64> {
        self.coords().iter().map(|&v| f64::from(v) / n).collect()
    }

    pub fn is_adjacent(&self, other: &Site) -> bool {
        self.sub(other).l1_norm() == 1
    }
}

impl fmt::Debug for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for Site {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Site {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i32>::deserialize(d)?;
        if v.is_empty() || v.len() > MAX_DIM {
            return Err(serde::de::Error::custom(format!("site dimension {} out of range", v.len())));
        }
        Ok(Site::new(&v))
    }
}

/// Rejects dimensions the crate does not model.
pub fn check_dim(d: usize) -> Result<()> {
    if !(3..=MAX_DIM).contains(&d) {
        return Err(Error::param(format!("dimension must lie in 3..={MAX_DIM}, got {d}")));
    }
    Ok(())
}

/// Closed integer box `lo ≤ x ≤ hi` (coordinatewise).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cuboid {
    pub lo: Site,
    pub hi: Site,
}

impl Cuboid {
    pub fn new(lo: Site, hi: Site) -> Self {
        assert_eq!(lo.dim(), hi.dim());
        Self { lo, hi }
    }

    /// `{y : |x - y|_∞ ≤ r}`.
    pub fn ball(x: Site, r: i32) -> Self {
        Self::new(x.add(&Site::splat(x.dim(), -r)), x.add(&Site::splat(x.dim(), r)))
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim()).any(|i| self.hi.get(i) < self.lo.get(i))
    }

    pub fn side(&self, i: usize) -> usize {
        (self.hi.get(i) - self.lo.get(i) + 1).max(0) as usize
    }

    pub fn volume(&self) -> usize {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn contains(&self, x: &Site) -> bool {
        (0..self.dim()).all(|i| self.lo.get(i) <= x.get(i) && x.get(i) <= self.hi.get(i))
    }

    pub fn contains_cuboid(&self, other: &Cuboid) -> bool {
        other.is_empty() || (self.contains(&other.lo) && self.contains(&other.hi))
    }

    /// Grows the box by `r` in every direction (shrinks for negative `r`).
    pub fn expand(&self, r: i32) -> Self {
        let d = self.dim();
        Self::new(self.lo.add(&Site::splat(d, -r)), self.hi.add(&Site::splat(d, r)))
    }

    pub fn translate(&self, x: &Site) -> Self {
        Self::new(self.lo.add(x), self.hi.add(x))
    }

    /// Lexicographic iteration (first coordinate slowest).
    pub fn iter(&self) -> CuboidIter {
        CuboidIter {
            lo: self.lo,
            hi: self.hi,
            next: if self.is_empty() { None } else { Some(self.lo) },
        }
    }

    /// Row-major position of `x` (first coordinate slowest); `None` outside.
    #[inline]
    pub fn linear_index(&self, x: &Site) -> Option<usize> {
        let mut idx = 0usize;
        for i in 0..self.dim() {
            let v = x.get(i) - self.lo.get(i);
            let s = self.side(i);
            if v < 0 || v as usize >= s {
                return None;
            }
            idx = idx * s + v as usize;
        }
        Some(idx)
    }

    pub fn to_site_set(&self) -> SiteSet {
        SiteSet::from_sorted_unchecked(self.dim(), self.iter().collect())
    }
}

pub struct CuboidIter {
    lo: Site,
    hi: Site,
    next: Option<Site>,
}

impl Iterator for CuboidIter {
    type Item = Site;

    fn next(&mut self) -> Option<Site> {
        let cur = self.next?;
        let mut n = cur;
        let mut axis = cur.dim();
        loop {
            if axis == 0 {
                self.next = None;
                break;
            }
            axis -= 1;
            if n.get(axis) < self.hi.get(axis) {
                n.set(axis, n.get(axis) + 1);
                self.next = Some(n);
                break;
            }
            n.set(axis, self.lo.get(axis));
        }
        Some(cur)
    }
}

#[derive(Clone, Debug)]
enum Index {
    /// Table over the bounding box; `u32::MAX` marks absent sites.
    Dense { bbox: Cuboid, table: Vec<u32> },
    Hash(HashMap<Site, u32>),
}

/// A finite set of sites in lexicographic order with a dense index `0..n`.
#[derive(Clone, Debug)]
pub struct SiteSet {
    dim: usize,
    members: Vec<Site>,
    index: Index,
}

impl PartialEq for SiteSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.members == other.members
    }
}

impl SiteSet {
    pub fn empty(d: usize) -> Self {
        Self::from_sorted_unchecked(d, Vec::new())
    }

    /// Builds a set from arbitrary sites; duplicates are removed.
    pub fn from_sites(d: usize, sites: impl IntoIterator<Item = Site>) -> Self {
        let mut v: Vec<Site> = sites.into_iter().collect();
        debug_assert!(v.iter().all(|s| s.dim() == d));
        v.sort_unstable();
        v.dedup();
        Self::from_sorted_unchecked(d, v)
    }

    /// `members` must already be sorted and duplicate free.
    pub fn from_sorted_unchecked(d: usize, members: Vec<Site>) -> Self {
        let index = Self::build_index(d, &members);
        Self { dim: d, members, index }
    }

    fn build_index(d: usize, members: &[Site]) -> Index {
        if members.is_empty() {
            return Index::Hash(HashMap::new());
        }
        let mut lo = members[0];
        let mut hi = members[0];
        for s in members {
            for i in 0..d {
                lo.set(i, lo.get(i).min(s.get(i)));
                hi.set(i, hi.get(i).max(s.get(i)));
            }
        }
        let bbox = Cuboid::new(lo, hi);
        let vol = (0..d).try_fold(1usize, |acc, i| acc.checked_mul(bbox.side(i)));
        match vol {
            Some(v) if v <= (8 * members.len()).max(1 << 16) => {
                let mut table = vec![u32::MAX; v];
                for (k, s) in members.iter().enumerate() {
                    table[bbox.linear_index(s).unwrap()] = k as u32;
                }
                Index::Dense { bbox, table }
            }
            _ => Index::Hash(members.iter().enumerate().map(|(k, s)| (*s, k as u32)).collect()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Site] {
        &self.members
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Site> {
        self.members.iter()
    }

    #[inline]
    pub fn site_of(&self, i: usize) -> Site {
        self.members[i]
    }

    #[inline]
    pub fn index_of(&self, x: &Site) -> Option<usize> {
        match &self.index {
            Index::Dense { bbox, table } => {
                let k = table[bbox.linear_index(x)?];
                (k != u32::MAX).then_some(k as usize)
            }
            Index::Hash(m) => m.get(x).map(|&k| k as usize),
        }
    }

    #[inline]
    pub fn contains(&self, x: &Site) -> bool {
        self.index_of(x).is_some()
    }

    /// Smallest cuboid containing the set, `None` when empty.
    pub fn bounding_box(&self) -> Option<Cuboid> {
        match &self.index {
            Index::Dense { bbox, .. } => Some(*bbox),
            Index::Hash(_) => {
                let first = *self.members.first()?;
                let (mut lo, mut hi) = (first, first);
                for s in &self.members {
                    for i in 0..self.dim {
                        lo.set(i, lo.get(i).min(s.get(i)));
                        hi.set(i, hi.get(i).max(s.get(i)));
                    }
                }
                Some(Cuboid::new(lo, hi))
            }
        }
    }

    pub fn is_subset(&self, other: &SiteSet) -> bool {
        self.members.iter().all(|s| other.contains(s))
    }

    pub fn union(&self, other: &SiteSet) -> SiteSet {
        SiteSet::from_sites(self.dim, self.members.iter().chain(other.members.iter()).copied())
    }

    pub fn intersection(&self, other: &SiteSet) -> SiteSet {
        SiteSet::from_sorted_unchecked(
            self.dim,
            self.members.iter().filter(|s| other.contains(s)).copied().collect(),
        )
    }

    pub fn difference(&self, other: &SiteSet) -> SiteSet {
        SiteSet::from_sorted_unchecked(
            self.dim,
            self.members.iter().filter(|s| !other.contains(s)).copied().collect(),
        )
    }

    pub fn filter(&self, mut keep: impl FnMut(&Site) -> bool) -> SiteSet {
        SiteSet::from_sorted_unchecked(self.dim, self.members.iter().filter(|s| keep(s)).copied().collect())
    }

    pub fn translate(&self, x: &Site) -> SiteSet {
        // Translation preserves lexicographic order.
        SiteSet::from_sorted_unchecked(self.dim, self.members.iter().map(|s| s.add(x)).collect())
    }

    /// Indices of the in-set neighbours of member `i`, one slot per direction.
    pub fn neighbor_indices(&self, i: usize) -> impl Iterator<Item = (usize, Option<usize>)> + '_ {
        let x = self.members[i];
        (0..2 * self.dim).map(move |k| (k, self.index_of(&x.neighbor(k))))
    }

    /// ℓ∞ thickening `{y : dist_∞(y, K) ≤ r}`.
    pub fn thicken(&self, r: i32) -> SiteSet {
        let mut out = Vec::with_capacity(self.len() * 2);
        for s in &self.members {
            out.extend(Cuboid::ball(*s, r).iter());
        }
        SiteSet::from_sites(self.dim, out)
    }

    /// Writes the newline-delimited text form: a JSON header then one tuple per line.
    pub fn write_text<W: Write>(&self, w: &mut W, extra: Option<&Value>) -> Result<()> {
        let mut header = json!({"d": self.dim, "count": self.len()});
        if let (Some(Value::Object(extra)), Value::Object(h)) = (extra, &mut header) {
            for (k, v) in extra {
                h.insert(k.clone(), v.clone());
            }
        }
        writeln!(w, "{header}")?;
        for s in &self.members {
            let parts: Vec<String> = s.coords().iter().map(i32::to_string).collect();
            writeln!(w, "{}", parts.join(" "))?;
        }
        Ok(())
    }

    /// Parses the text form, returning the set and its header.
    pub fn read_text<R: BufRead>(r: R) -> Result<(SiteSet, Value)> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or_else(|| Error::Format("empty site-set file".into()))??;
        let header: Value = serde_json::from_str(&header_line)?;
        let d = header.get("d").and_then(Value::as_u64).ok_or_else(|| Error::Format("header lacks `d`".into()))?
            as usize;
        let count = header
            .get("count")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Format("header lacks `count`".into()))? as usize;
        let mut sites = Vec::with_capacity(count);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let coords: Vec<i32> = line
                .split_whitespace()
                .map(|t| t.parse::<i32>().map_err(|e| Error::Format(format!("bad coordinate `{t}`: {e}"))))
                .collect::<Result<_>>()?;
            if coords.len() != d {
                return Err(Error::Format(format!("expected {d} coordinates, got `{line}`")));
            }
            sites.push(Site::new(&coords));
        }
        if sites.len() != count {
            return Err(Error::Format(format!("header count {count} but {} sites", sites.len())));
        }
        Ok((SiteSet::from_sites(d, sites), header))
    }
}

impl<'a> IntoIterator for &'a SiteSet {
    type Item = &'a Site;
    type IntoIter = std::slice::Iter<'a, Site>;
    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}

/// The closed ℓ∞ ball `{y : |x - y|_∞ ≤ r}`.
pub fn ball(x: Site, r: u32) -> SiteSet {
    Cuboid::ball(x, r as i32).to_site_set()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    External,
    Internal,
}

/// External boundary: outside sites adjacent to `K`. Internal: members of `K`
/// adjacent to the outside.
pub fn boundary(k: &SiteSet, kind: BoundaryKind) -> SiteSet {
    match kind {
        BoundaryKind::External => {
            let mut out = Vec::new();
            for s in k {
                for n in s.neighbors() {
                    if !k.contains(&n) {
                        out.push(n);
                    }
                }
            }
            SiteSet::from_sites(k.dim(), out)
        }
        BoundaryKind::Internal => k.filter(|s| s.neighbors().any(|n| !k.contains(&n))),
    }
}

/// `min |x - y|_∞` over `x ∈ K`, `y ∈ L`.
pub fn linf_distance(k: &SiteSet, l: &SiteSet) -> Result<u32> {
    if k.is_empty() || l.is_empty() {
        return Err(Error::geometry("ℓ∞ distance of an empty set"));
    }
    // Scan the smaller set against the larger one's bounding box first.
    let (small, large) = if k.len() <= l.len() { (k, l) } else { (l, k) };
    let bb = large.bounding_box().unwrap();
    let mut best = i32::MAX;
    for x in small {
        // Lower bound from the bounding box lets most pairs be skipped.
        let lb = (0..x.dim())
            .map(|i| (bb.lo.get(i) - x.get(i)).max(x.get(i) - bb.hi.get(i)).max(0))
            .max()
            .unwrap_or(0);
        if lb >= best {
            continue;
        }
        for y in large {
            best = best.min(x.linf_dist(y));
            if best == lb {
                break;
            }
        }
    }
    Ok(best as u32)
}

/// Continuum shapes in R^d. All sets are closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    EuclideanBall { center: Vec<f64>, radius: f64 },
    LinfBox { center: Vec<f64>, half_width: f64 },
    /// `{p : normal · p ≤ offset}`. Unbounded; usable only inside an intersection or as a density set.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Union { parts: Vec<ShapeSpec> },
    Intersection { parts: Vec<ShapeSpec> },
    /// Closed Euclidean `delta`-neighbourhood of `shape`.
    Inflate { shape: Box<ShapeSpec>, delta: f64 },
}

impl ShapeSpec {
    pub fn ball(d: usize, radius: f64) -> Self {
        ShapeSpec::EuclideanBall { center: vec![0.0; d], radius }
    }

    pub fn linf_box(d: usize, half_width: f64) -> Self {
        ShapeSpec::LinfBox { center: vec![0.0; d], half_width }
    }

    pub fn inflate(self, delta: f64) -> Self {
        ShapeSpec::Inflate { shape: Box::new(self), delta }
    }

    /// Checks dimensions and parameter signs.
    pub fn validate(&self, d: usize) -> Result<()> {
        let dim = |v: &Vec<f64>| {
            if v.len() != d {
                Err(Error::param(format!("shape vector has length {}, expected {d}", v.len())))
            } else {
                Ok(())
            }
        };
        match self {
            ShapeSpec::EuclideanBall { center, radius } => {
                dim(center)?;
                if !(*radius >= 0.0) {
                    return Err(Error::param("ball radius must be non-negative"));
                }
            }
            ShapeSpec::LinfBox { center, half_width } => {
                dim(center)?;
                if !(*half_width >= 0.0) {
                    return Err(Error::param("box half-width must be non-negative"));
                }
            }
            ShapeSpec::HalfSpace { normal, .. } => {
                dim(normal)?;
                if normal.iter().all(|v| *v == 0.0) {
                    return Err(Error::param("half-space normal is zero"));
                }
            }
            ShapeSpec::Union { parts } | ShapeSpec::Intersection { parts } => {
                if parts.is_empty() {
                    return Err(Error::param("union/intersection needs at least one part"));
                }
                for p in parts {
                    p.validate(d)?;
                }
            }
            ShapeSpec::Inflate { shape, delta } => {
                if !(*delta >= 0.0) {
                    return Err(Error::param("inflation radius must be non-negative"));
                }
                shape.validate(d)?;
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        match self {
            ShapeSpec::Inflate { shape, delta } => shape.distance(p) <= *delta,
            ShapeSpec::Union { parts } => parts.iter().any(|s| s.contains(p)),
            ShapeSpec::Intersection { parts } => parts.iter().all(|s| s.contains(p)),
            _ => self.distance(p) <= 0.0,
        }
    }

    /// Euclidean distance from `p` to the shape (0 inside). Exact for
    /// primitives, unions and inflations; for intersections it is the maximum
    /// of the parts' distances, a lower bound.
    pub fn distance(&self, p: &[f64]) -> f64 {
        match self {
            ShapeSpec::EuclideanBall { center, radius } => {
                let r: f64 = p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                (r - radius).max(0.0)
            }
            ShapeSpec::LinfBox { center, half_width } => p
                .iter()
                .zip(center)
                .map(|(a, b)| {
                    let e = ((a - b).abs() - half_width).max(0.0);
                    e * e
                })
                .sum::<f64>()
                .sqrt(),
            ShapeSpec::HalfSpace { normal, offset } => {
                let n: f64 = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
                let s: f64 = normal.iter().zip(p).map(|(a, b)| a * b).sum();
                ((s - offset) / n).max(0.0)
            }
            ShapeSpec::Union { parts } => parts.iter().map(|s| s.distance(p)).fold(f64::INFINITY, f64::min),
            ShapeSpec::Intersection { parts } => parts.iter().map(|s| s.distance(p)).fold(0.0, f64::max),
            ShapeSpec::Inflate { shape, delta } => (shape.distance(p) - delta).max(0.0),
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`; `None` for unbounded shapes.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            ShapeSpec::EuclideanBall { center, radius } => Some((
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            )),
            ShapeSpec::LinfBox { center, half_width } => Some((
                center.iter().map(|c| c - half_width).collect(),
                center.iter().map(|c| c + half_width).collect(),
            )),
            ShapeSpec::HalfSpace { .. } => None,
            ShapeSpec::Union { parts } => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for p in parts {
                    let (lo, hi) = p.bounding_box()?;
                    acc = Some(match acc {
                        None => (lo, hi),
                        Some((a, b)) => (
                            a.iter().zip(&lo).map(|(x, y)| x.min(*y)).collect(),
                            b.iter().zip(&hi).map(|(x, y)| x.max(*y)).collect(),
                        ),
                    });
                }
                acc
            }
            ShapeSpec::Intersection { parts } => {
                let mut acc: Option<(Vec<f64>, Vec<f64>)> = None;
                for p in parts {
                    if let Some((lo, hi)) = p.bounding_box() {
                        acc = Some(match acc {
                            None => (lo, hi),
                            Some((a, b)) => (
                                a.iter().zip(&lo).map(|(x, y)| x.max(*y)).collect(),
                                b.iter().zip(&hi).map(|(x, y)| x.min(*y)).collect(),
                            ),
                        });
                    }
                }
                acc
            }
            ShapeSpec::Inflate { shape, delta } => {
                let (lo, hi) = shape.bounding_box()?;
                Some((lo.iter().map(|v| v - delta).collect(), hi.iter().map(|v| v + delta).collect()))
            }
        }
    }
}

/// The discrete blow-up `A_N = (N·A) ∩ Z^d`.
pub fn blow_up(shape: &ShapeSpec, n: u32, d: usize) -> Result<SiteSet> {
    if n == 0 {
        return Err(Error::param("blow-up factor N must be positive"));
    }
    shape.validate(d)?;
    let (lo, hi) = shape
        .bounding_box()
        .ok_or_else(|| Error::geometry("cannot blow up an unbounded shape"))?;
    let nf = f64::from(n);
    let lo_s = Site::new(&lo.iter().map(|v| (v * nf).floor() as i32 - 1).collect::<Vec<_>>());
    let hi_s = Site::new(&hi.iter().map(|v| (v * nf).ceil() as i32 + 1).collect::<Vec<_>>());
    let bb = Cuboid::new(lo_s, hi_s);
    let members: Vec<Site> = bb.iter().filter(|x| shape.contains(&x.scaled_point(nf))).collect();
    Ok(SiteSet::from_sorted_unchecked(d, members))
}

/// `S_N = {x : |x|_∞ = ⌊M N⌋}`.
pub fn sphere(m: f64, n: u32, d: usize) -> Result<SiteSet> {
    if !(m > 0.0) || n == 0 {
        return Err(Error::param("sphere needs M > 0 and N ≥ 1"));
    }
    let r = (m * f64::from(n)).floor() as i32;
    let members = Cuboid::ball(Site::origin(d), r).iter().filter(|x| x.linf_norm() == r).collect();
    Ok(SiteSet::from_sorted_unchecked(d, members))
}
