//! Dyadic scale systems `(I, J, L, ℓ*)` and resonance sets.

use rayon::prelude::*;
use serde::Serialize;

use super::{local_density, Region};
use crate::error::{Error, Result};
use crate::lattice::{check_dim, SiteSet};

/// Default `configured_base` of `ℓ_min`.
pub const DEFAULT_ELL_MIN_BASE: u32 = 5;

/// `c_0 = d 2^{d-1}`.
pub fn c0(d: usize) -> f64 {
    d as f64 * 2f64.powi(d as i32 - 1)
}

/// `α̃ = 4^{-d} / 3`.
pub fn alpha_tilde(d: usize) -> f64 {
    4f64.powi(-(d as i32)) / 3.0
}

/// `L(J) = min{L ≥ 5 : c_0 2^{-L} ≤ 1/(200J)}`.
pub fn l_of_j(d: usize, j: u32) -> u32 {
    let bound = 1.0 / (200.0 * f64::from(j));
    (5..).find(|&l| c0(d) * 2f64.powi(-(l as i32)) <= bound).unwrap()
}

/// `ℓ_min(δ) = max(base, ⌈log2(8/δ)⌉)`; the base stands in for a
/// non-constructive heat-kernel scale.
pub fn ell_min(delta: f64, base: u32) -> u32 {
    base.max((8.0 / delta).log2().ceil() as u32)
}

#[derive(Clone, Debug, Serialize)]
pub struct ScaleSystem {
    pub d: usize,
    pub i: u32,
    pub j: u32,
    pub l: u32,
    pub ell_star: u32,
    pub l_of_j: u32,
    pub ell0: u32,
    /// `𝒜* = {ℓ ∈ Lℕ : ℓ0 ≥ ℓ > ℓ0 - I(J+1)L}`, decreasing.
    pub a_star: Vec<u32>,
    /// `𝒜 = {ℓ ∈ (J+1)Lℕ : ℓ0 ≥ ℓ > ℓ0 - I(J+1)L}`, decreasing.
    pub a: Vec<u32>,
    pub ell_min_base: u32,
    /// `ℓ_min(1/(200J))`.
    pub ell_min: u32,
    /// `ℓ0 - (I+1)(J+1)L > ℓ_min(1/(200J))`.
    pub compatible: bool,
    pub alpha_tilde: f64,
    pub c0: f64,
}

/// Derives the scale sets. `L` defaults to `L(J)`; an incompatible `ℓ*` is
/// reported through `compatible`, not as an error.
pub fn scale_system(d: usize, i: u32, j: u32, l: Option<u32>, ell_star: u32, ell_min_base: u32) -> Result<ScaleSystem> {
    check_dim(d)?;
    if i == 0 || j == 0 {
        return Err(Error::param("I and J must be at least 1"));
    }
    let lj = l_of_j(d, j);
    let l = l.unwrap_or(lj);
    if l < lj {
        return Err(Error::param(format!("L = {l} is below L(J) = {lj}")));
    }
    let block = (j + 1) * l;
    let ell0 = ell_star / block * block;
    let floor = i64::from(ell0) - i64::from(i) * i64::from(block);
    let pick = |step: u32| -> Vec<u32> {
        (0..=ell0 / step)
            .rev()
            .map(|k| k * step)
            .filter(|&s| i64::from(s) > floor)
            .collect()
    };
    let em = ell_min(1.0 / (200.0 * f64::from(j)), ell_min_base);
    let compatible = i64::from(ell0) - i64::from(i + 1) * i64::from(block) > i64::from(em);
    Ok(ScaleSystem {
        d,
        i,
        j,
        l,
        ell_star,
        l_of_j: lj,
        ell0,
        a_star: pick(l),
        a: pick(block),
        ell_min_base,
        ell_min: em,
        compatible,
        alpha_tilde: alpha_tilde(d),
        c0: c0(d),
    })
}

/// `Res ∩ window`: sites with `σ̃_ℓ ∈ [α̃, 1-α̃]` for at least `J` scales of `𝒜*`.
pub fn resonance_set(u1: &dyn Region, scales: &ScaleSystem, window: &SiteSet) -> SiteSet {
    let at = scales.alpha_tilde;
    let keep: Vec<bool> = window
        .members()
        .par_iter()
        .map(|x| {
            let hits = scales
                .a_star
                .iter()
                .filter(|&&ell| (at..=1.0 - at).contains(&local_density(u1, x, ell, true)))
                .count();
            hits >= scales.j as usize
        })
        .collect();
    let mut k = keep.into_iter();
    window.filter(|_| k.next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interfaces::{HalfSpaceRegion, Trivial};
    use crate::lattice::{Cuboid, Site};

    #[test]
    fn constants() {
        assert_eq!(c0(3), 12.0);
        assert_eq!(l_of_j(3, 1), 12);
        assert!(12.0 * 2f64.powi(-11) > 1.0 / 200.0);
        assert_eq!(alpha_tilde(3), 1.0 / 192.0);
        assert_eq!(ell_min(1.0 / 200.0, 5), 11);
        assert_eq!(ell_min(0.5, 5), 5);
    }

    #[test]
    fn compatible_system_sizes() {
        let s = scale_system(3, 1, 1, None, 72, DEFAULT_ELL_MIN_BASE).unwrap();
        assert_eq!((s.ell0, s.a_star.clone(), s.a.clone()), (72, vec![72, 60], vec![72]));
        assert!(s.compatible);
        for (i, j, ell_star) in [(1, 1, 100), (2, 1, 150), (1, 2, 200), (3, 2, 400)] {
            let s = scale_system(3, i, j, None, ell_star, 5).unwrap();
            assert!(s.compatible, "{s:?}");
            assert_eq!(s.a_star.len() as u32, (j + 1) * i);
            assert_eq!(s.a.len() as u32, i);
        }
        let s = scale_system(3, 1, 1, None, 30, 5).unwrap();
        assert!(!s.compatible);
        assert!(scale_system(3, 1, 1, Some(11), 72, 5).is_err());
    }

    #[test]
    fn resonance_examples() {
        let s = scale_system(3, 1, 1, None, 72, 5).unwrap();
        let window = Cuboid::ball(Site::origin(3), 2).to_site_set();
        assert!(resonance_set(&Trivial { d: 3, full: true }, &s, &window).is_empty());
        assert!(resonance_set(&Trivial { d: 3, full: false }, &s, &window).is_empty());
        // U_0 = {x_1 ≤ 0}: every site of the window is within 2 of the flat boundary.
        let h = HalfSpaceRegion { d: 3, axis: 0, threshold: 1, upper: true };
        let res = resonance_set(&h, &s, &window);
        assert_eq!(res.len(), window.len());
        // Small scales: σ̃ at the flat boundary is close to 1/2.
        let small = ScaleSystem { a_star: vec![2, 1, 0], j: 3, ..s };
        let line = Cuboid::new(Site::new(&[0, -1, -1]), Site::new(&[1, 1, 1])).to_site_set();
        assert_eq!(resonance_set(&h, &small, &line).len(), line.len());
        let far = SiteSet::from_sites(3, [Site::new(&[-40, 0, 0])]);
        assert!(resonance_set(&h, &small, &far).is_empty());
    }
}
