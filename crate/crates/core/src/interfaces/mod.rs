//! Local densities of a set `U_1 = Z^d ∖ U_0` in dyadic `ℓ∞` boxes, porous
//! interfaces around `U_0`, resonance sets and the solidification diagnostics.
//!
//! `σ_ℓ(x) = |B(x, 2^ℓ) ∩ U_1| / |B(x, 2^ℓ)|` and `σ̃_ℓ = σ_{ℓ+2}`.

mod porous;
mod scales;

use serde::Serialize;

use crate::lattice::{boundary, BoundaryKind, Cuboid, Site, SiteSet};

pub use porous::{
    build_shell_interface, capacity_ratio_check, check_porous_interface, escape_probability, CapacityRatioReport,
    CheckMode, EscapeReport, PorousCheck, PorousInterface, ShellInterface,
};
pub use scales::{alpha_tilde, c0, ell_min, l_of_j, resonance_set, scale_system, ScaleSystem, DEFAULT_ELL_MIN_BASE};

/// A subset of `Z^d` that can count its points in `ℓ∞` balls.
/// Radii are `u128` so that the dyadic scales of compatible scale systems fit.
pub trait Region: Sync {
    fn dim(&self) -> usize;

    fn contains(&self, x: &Site) -> bool;

    /// `|B(x, r) ∩ region|`, exact while below `2^53`.
    fn count_in_ball(&self, x: &Site, r: u128) -> f64;
}

fn ball_volume(d: usize, r: u128) -> f64 {
    ((2 * r + 1) as f64).powi(d as i32)
}

/// Count of integers `t` with `|t - c| ≤ r` in `[lo, hi]`.
fn interval_overlap(c: i64, r: u128, lo: i128, hi: i128) -> i128 {
    let a = (c as i128 - r as i128).max(lo);
    let b = (c as i128 + r as i128).min(hi);
    (b - a + 1).max(0)
}

/// Summed-area table of an explicit finite set over its bounding box.
#[derive(Clone, Debug)]
pub struct CountingTable {
    set: SiteSet,
    bb: Option<Cuboid>,
    /// Inclusive prefix sums on `bb`, row-major.
    prefix: Vec<u32>,
}

impl CountingTable {
    pub fn new(set: SiteSet) -> Self {
        let Some(bb) = set.bounding_box() else {
            return Self { set, bb: None, prefix: Vec::new() };
        };
        let d = bb.dim();
        let mut prefix = vec![0u32; bb.volume()];
        for x in set.iter() {
            prefix[bb.linear_index(x).unwrap()] = 1;
        }
        let sides: Vec<usize> = (0..d).map(|a| bb.side(a)).collect();
        let mut stride = 1usize;
        for a in (0..d).rev() {
            let side = sides[a];
            for i in 0..prefix.len() {
                if (i / stride) % side != 0 {
                    prefix[i] += prefix[i - stride];
                }
            }
            stride *= side;
        }
        Self { set, bb: Some(bb), prefix }
    }

    pub fn set(&self) -> &SiteSet {
        &self.set
    }

    /// `|B(x, r) ∩ set|` by inclusion-exclusion over the `2^d` corners.
    pub fn count(&self, x: &Site, r: u128) -> u64 {
        let Some(bb) = &self.bb else { return 0 };
        let d = bb.dim();
        let mut lo = [0i64; 8];
        let mut hi = [0i64; 8];
        for a in 0..d {
            let l = (x.get(a) as i128 - r as i128).max(bb.lo.get(a) as i128);
            let h = (x.get(a) as i128 + r as i128).min(bb.hi.get(a) as i128);
            if l > h {
                return 0;
            }
            lo[a] = (l - bb.lo.get(a) as i128) as i64;
            hi[a] = (h - bb.lo.get(a) as i128) as i64;
        }
        let sides: Vec<i64> = (0..d).map(|a| bb.side(a) as i64).collect();
        let mut total: i64 = 0;
        'corners: for mask in 0u32..(1 << d) {
            let mut idx: i64 = 0;
            let mut sign = 1;
            for a in 0..d {
                let c = if mask & (1 << a) != 0 {
                    sign = -sign;
                    lo[a] - 1
                } else {
                    hi[a]
                };
                if c < 0 {
                    continue 'corners;
                }
                idx = idx * sides[a] + c;
            }
            total += sign * self.prefix[idx as usize] as i64;
        }
        total as u64
    }
}

/// `U_1 = Z^d ∖ U_0` for a finite `U_0`.
#[derive(Clone, Debug)]
pub struct ComplementOf(pub CountingTable);

impl ComplementOf {
    pub fn new(u0: SiteSet) -> Self {
        Self(CountingTable::new(u0))
    }

    pub fn u0(&self) -> &SiteSet {
        self.0.set()
    }
}

impl Region for ComplementOf {
    fn dim(&self) -> usize {
        self.0.set().dim()
    }
    fn contains(&self, x: &Site) -> bool {
        !self.0.set().contains(x)
    }
    fn count_in_ball(&self, x: &Site, r: u128) -> f64 {
        ball_volume(self.dim(), r) - self.0.count(x, r) as f64
    }
}

/// An explicit finite set.
#[derive(Clone, Debug)]
pub struct FiniteRegion(pub CountingTable);

impl FiniteRegion {
    pub fn new(set: SiteSet) -> Self {
        Self(CountingTable::new(set))
    }
}

impl Region for FiniteRegion {
    fn dim(&self) -> usize {
        self.0.set().dim()
    }
    fn contains(&self, x: &Site) -> bool {
        self.0.set().contains(x)
    }
    fn count_in_ball(&self, x: &Site, r: u128) -> f64 {
        self.0.count(x, r) as f64
    }
}

/// `{x : x_axis ≥ threshold}` (or `≤` when `upper` is false), counted analytically.
#[derive(Clone, Copy, Debug)]
pub struct HalfSpaceRegion {
    pub d: usize,
    pub axis: usize,
    pub threshold: i64,
    pub upper: bool,
}

impl Region for HalfSpaceRegion {
    fn dim(&self) -> usize {
        self.d
    }
    fn contains(&self, x: &Site) -> bool {
        let c = x.get(self.axis) as i64;
        if self.upper { c >= self.threshold } else { c <= self.threshold }
    }
    fn count_in_ball(&self, x: &Site, r: u128) -> f64 {
        let c = x.get(self.axis) as i64;
        let t = self.threshold as i128;
        let n = if self.upper {
            interval_overlap(c, r, t, i128::MAX / 4)
        } else {
            interval_overlap(c, r, i128::MIN / 4, t)
        };
        n as f64 * ((2 * r + 1) as f64).powi(self.d as i32 - 1)
    }
}

/// All of `Z^d` (`full`) or nothing.
#[derive(Clone, Copy, Debug)]
pub struct Trivial {
    pub d: usize,
    pub full: bool,
}

impl Region for Trivial {
    fn dim(&self) -> usize {
        self.d
    }
    fn contains(&self, _: &Site) -> bool {
        self.full
    }
    fn count_in_ball(&self, _: &Site, r: u128) -> f64 {
        if self.full { ball_volume(self.d, r) } else { 0.0 }
    }
}

/// `σ_ℓ(x)`, or `σ̃_ℓ(x) = σ_{ℓ+2}(x)` when `widened`.
pub fn local_density(u1: &dyn Region, x: &Site, ell: u32, widened: bool) -> f64 {
    let e = if widened { ell + 2 } else { ell };
    let r = 1u128 << e;
    u1.count_in_ball(x, r) / ball_volume(u1.dim(), r)
}

/// `(σ_{ℓ'})_{B(x, 2^ℓ)}`, the average of `σ_{ℓ'}` over `B(x, 2^ℓ)` (enumerated).
pub fn average_density(u1: &dyn Region, x: &Site, ell: u32, ell_prime: u32) -> f64 {
    let b = Cuboid::ball(*x, 1 << ell);
    let n = b.volume() as f64;
    b.iter().map(|y| local_density(u1, &y, ell_prime, false)).sum::<f64>() / n
}

/// Which clauses of the density dichotomy hold at `(x, ℓ', ℓ, δ)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Dichotomy {
    pub beta: f64,
    pub above: f64,
    pub below: f64,
    pub near: f64,
    /// `μ(σ_{ℓ'} > β'+δ) ≥ δ/2` and `μ(σ_{ℓ'} < β'-δ) ≥ δ/2`.
    pub clause_i: bool,
    /// `μ(β'-δ ≤ σ_{ℓ'} ≤ β'+δ) ≥ 1/4 - δ/2`.
    pub clause_ii: bool,
}

/// Evaluates both clauses with `μ = μ_{x,ℓ}` and `β' = (σ_{ℓ'})_{B(x,2^ℓ)}`.
pub fn dichotomy(u1: &dyn Region, x: &Site, ell_prime: u32, ell: u32, delta: f64) -> Dichotomy {
    let b = Cuboid::ball(*x, 1 << ell);
    let n = b.volume() as f64;
    let vals: Vec<f64> = b.iter().map(|y| local_density(u1, &y, ell_prime, false)).collect();
    let beta = vals.iter().sum::<f64>() / n;
    let frac = |p: &dyn Fn(f64) -> bool| vals.iter().filter(|v| p(**v)).count() as f64 / n;
    let above = frac(&|v| v > beta + delta);
    let below = frac(&|v| v < beta - delta);
    let near = frac(&|v| (beta - delta..=beta + delta).contains(&v));
    Dichotomy {
        beta,
        above,
        below,
        near,
        clause_i: above >= delta / 2.0 && below >= delta / 2.0,
        clause_ii: near >= 0.25 - delta / 2.0,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SegmentationCheck {
    /// `σ_ℓ(x) ≤ 1/2` for all `x ∈ A`, `0 ≤ ℓ ≤ ℓ*`.
    pub ok: bool,
    /// `(x, ℓ, σ_ℓ(x))` maximising the density.
    pub worst: Option<(Site, u32, f64)>,
}

/// Membership of `U_0` in the segmentation class `𝒰_{ℓ*, A}`.
pub fn check_segmentation(u0: &SiteSet, a: &SiteSet, ell_star: u32) -> SegmentationCheck {
    let u1 = ComplementOf::new(u0.clone());
    let mut worst: Option<(Site, u32, f64)> = None;
    for x in a.iter() {
        for ell in 0..=ell_star {
            let s = local_density(&u1, x, ell, false);
            if worst.as_ref().is_none_or(|w| s > w.2) {
                worst = Some((*x, ell, s));
            }
        }
    }
    SegmentationCheck { ok: worst.as_ref().is_none_or(|w| w.2 <= 0.5), worst }
}

/// `S = ∂U_0`, the external boundary.
pub fn interface_boundary(u0: &SiteSet) -> SiteSet {
    boundary(u0, BoundaryKind::External)
}
