//! Porous interfaces `Σ` around a segmentation `U_0`, escape probabilities
//! from `A_N` and the capacity chain `cap_B(Σ) ≥ inf_{A_N} P[H_Σ < T_B] cap_B(A_N)`.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::{check_segmentation, interface_boundary};
use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::lattice::{ball, boundary, linf_distance, BoundaryKind, Site, SiteSet};
use crate::potential::{
    dirichlet_form, equilibrium_measure_from, harmonic_potential, hitting_probability_mc, SiteFunction,
};
use crate::rng::{key_hash, mix64};

/// `(U_0, S = ∂U_0, Σ, ε, χ, ℓ*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PorousInterface {
    pub u0: SiteSet,
    pub s: SiteSet,
    pub sigma: SiteSet,
    pub epsilon: u32,
    pub chi: f64,
    pub ell_star: u32,
}

impl PorousInterface {
    pub fn new(u0: SiteSet, sigma: SiteSet, epsilon: u32, chi: f64, ell_star: u32) -> Result<Self> {
        if u0.is_empty() {
            return Err(Error::geometry("U_0 is empty"));
        }
        if epsilon == 0 {
            return Err(Error::param("ε must be at least 1"));
        }
        if !(0.0..=1.0).contains(&chi) {
            return Err(Error::param(format!("χ = {chi} is outside [0, 1]")));
        }
        let s = interface_boundary(&u0);
        Ok(Self { u0, s, sigma, epsilon, chi, ell_star })
    }

    /// `Σ` in the site-set text format; the header carries `ε`, `χ`, `ℓ*` and `U_0`.
    pub fn write_text<W: Write>(&self, w: &mut W, provenance: Option<&Value>) -> Result<()> {
        let u0: Vec<&[i32]> = self.u0.iter().map(Site::coords).collect();
        let mut extra = json!({
            "epsilon": self.epsilon,
            "chi": self.chi,
            "ell_star": self.ell_star,
            "u0": u0,
        });
        if let Some(p) = provenance {
            extra["provenance"] = p.clone();
        }
        self.sigma.write_text(w, Some(&extra))
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<(Self, Value)> {
        let (sigma, header) = SiteSet::read_text(r)?;
        let field = |k: &str| header.get(k).ok_or_else(|| Error::Format(format!("interface header lacks `{k}`")));
        let epsilon = field("epsilon")?.as_u64().ok_or_else(|| Error::Format("bad `epsilon`".into()))? as u32;
        let chi = field("chi")?.as_f64().ok_or_else(|| Error::Format("bad `chi`".into()))?;
        let ell_star = field("ell_star")?.as_u64().ok_or_else(|| Error::Format("bad `ell_star`".into()))? as u32;
        let coords: Vec<Vec<i32>> = serde_json::from_value(field("u0")?.clone())?;
        let u0 = SiteSet::from_sites(sigma.dim(), coords.iter().map(|c| Site::new(c)));
        Ok((Self::new(u0, sigma, epsilon, chi, ell_star)?, header))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckMode {
    Exact,
    Mc { replicas: u64, seed: u64 },
}

#[derive(Clone, Debug, Serialize)]
pub struct PorousCheck {
    /// `(x, P_x[H_Σ < τ_ε], standard error)` for `x ∈ S`; the error is 0 in exact mode.
    pub values: Vec<(Site, f64, f64)>,
    pub min_probability: f64,
    pub argmin: Option<Site>,
    /// `min_probability ≥ χ`.
    pub holds: bool,
}

/// `P_x[H_Σ < τ_ε]` for every `x ∈ S`, with `τ_ε` the exit time of `B(x, ε-1)`.
pub fn check_porous_interface(env: &dyn EdgeWeights, spec: &PorousInterface, mode: CheckMode) -> Result<PorousCheck> {
    let r = spec.epsilon - 1;
    let sites: Vec<(usize, Site)> = spec.s.iter().copied().enumerate().collect();
    let values: Result<Vec<(Site, f64, f64)>> = sites
        .par_iter()
        .map(|&(k, x)| {
            if spec.sigma.contains(&x) {
                return Ok((x, 1.0, 0.0));
            }
            let w = Arc::new(ball(x, r));
            let target = spec.sigma.intersection(&w);
            if target.is_empty() {
                return Ok((x, 0.0, 0.0));
            }
            match mode {
                CheckMode::Exact => {
                    let h = harmonic_potential(env, &target, &w)?;
                    Ok((x, h.values.at(&x), 0.0))
                }
                CheckMode::Mc { replicas, seed } => {
                    let est = hitting_probability_mc(env, x, &target, &w, replicas, seed ^ key_hash([k as i64]))?;
                    Ok((x, est.mean, est.se))
                }
            }
        })
        .collect();
    let values = values?;
    let (min_probability, argmin) = values
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or((1.0, None), |v| (v.1, Some(v.0)));
    Ok(PorousCheck { holds: min_probability >= spec.chi, min_probability, argmin, values })
}

/// Keyed uniform in `[0, 1)` attached to a site; used for nested punctures.
fn site_uniform(seed: u64, x: &Site) -> f64 {
    let h = mix64(seed ^ key_hash(x.coords().iter().map(|&c| i64::from(c))));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Debug)]
pub struct ShellInterface {
    /// `χ` is the measured minimum hitting probability over `S`.
    pub interface: PorousInterface,
    /// The unpunctured shell `∂_in U_0`.
    pub full_shell: SiteSet,
    pub removed: usize,
    pub check: PorousCheck,
}

/// Largest `ℓ ≤ cap` with `U_0 ∈ 𝒰_{ℓ, A}`, or 0.
fn segmentation_depth(u0: &SiteSet, a: &SiteSet, cap: u32) -> u32 {
    (0..=cap).take_while(|&l| check_segmentation(u0, a, l).ok).last().unwrap_or(0)
}

/// `U_0 = A_N` thickened by `offset`, `Σ = ∂_in U_0` minus the sites whose keyed
/// uniform falls below `puncture_fraction`. Punctures are nested in the fraction.
pub fn build_shell_interface(
    env: &dyn EdgeWeights,
    a_n: &SiteSet,
    offset: u32,
    puncture_fraction: f64,
    epsilon: u32,
    seed: u64,
) -> Result<ShellInterface> {
    if !(0.0..1.0).contains(&puncture_fraction) {
        return Err(Error::param(format!("puncture fraction {puncture_fraction} is outside [0, 1)")));
    }
    if a_n.is_empty() {
        return Err(Error::geometry("A_N is empty"));
    }
    let u0 = a_n.thicken(offset as i32);
    let full_shell = boundary(&u0, BoundaryKind::Internal);
    let sigma = full_shell.filter(|x| site_uniform(seed, x) >= puncture_fraction);
    let removed = full_shell.len() - sigma.len();
    let ell_star = segmentation_depth(&u0, a_n, 24);
    let mut interface = PorousInterface::new(u0, sigma, epsilon, 0.0, ell_star)?;
    let check = check_porous_interface(env, &interface, CheckMode::Exact)?;
    interface.chi = check.min_probability;
    Ok(ShellInterface { interface, full_shell, removed, check })
}

#[derive(Clone, Debug, Serialize)]
pub struct EscapeReport {
    /// `(x, P_x[H_Σ > T_B])` for `x ∈ A_N`.
    pub values: Vec<(Site, f64)>,
    pub sup: f64,
    /// `c cap_B(Σ) / dist(Σ, B^c)^{d-2}`, bounding `P_x[T_B < H_Σ < ∞]`.
    pub far_field_bound: f64,
    pub cap_sigma: f64,
}

/// `P_x[H_Σ > T_B]` on `A_N`, an upper proxy for `P_x[H_Σ = ∞]`.
pub fn escape_probability(
    env: &dyn EdgeWeights,
    a_n: &SiteSet,
    sigma: &SiteSet,
    b_env: &Arc<SiteSet>,
    green_constant: f64,
) -> Result<EscapeReport> {
    if !a_n.is_subset(b_env) || !sigma.is_subset(b_env) {
        return Err(Error::geometry("A_N and Σ must lie in B"));
    }
    if sigma.is_empty() {
        let values: Vec<(Site, f64)> = a_n.iter().map(|x| (*x, 1.0)).collect();
        return Ok(EscapeReport { sup: 1.0, values, far_field_bound: 0.0, cap_sigma: 0.0 });
    }
    let h = harmonic_potential(env, sigma, b_env)?;
    let cap_sigma = crate::potential::capacity_of_potential(env, &h.values)?;
    let values: Vec<(Site, f64)> = a_n.iter().map(|x| (*x, (1.0 - h.values.at(x)).max(0.0))).collect();
    let sup = values.iter().map(|v| v.1).fold(0.0, f64::max);
    let outside = boundary(b_env, BoundaryKind::External);
    let dist = f64::from(linf_distance(sigma, &outside)?).max(1.0);
    let far_field_bound = green_constant * cap_sigma / dist.powi(sigma.dim() as i32 - 2);
    Ok(EscapeReport { values, sup, far_field_bound, cap_sigma })
}

#[derive(Clone, Debug, Serialize)]
pub struct CapacityRatioReport {
    pub cap_sigma: f64,
    pub cap_a: f64,
    pub ratio: f64,
    /// `inf_{x ∈ A_N} P_x[H_Σ < T_B]`.
    pub inf_hit: f64,
    /// `Σ_x h_Σ(x) e_A(x)`, the middle term of the chain.
    pub chain_middle: f64,
    /// `cap_B(Σ) - inf_hit · cap_B(A_N)`.
    pub slack: f64,
    pub holds: bool,
    /// `ℰ(h_A - h_Σ) - (cap_B(Σ) - cap_B(A_N))`.
    pub energy_gap: f64,
    /// `|ℰ(h_Σ, h_A) - Σ_x h_Σ(x) e_A(x)|`.
    pub gauss_green_residual: f64,
}

/// Relative tolerance of the capacity chain.
pub const CHAIN_TOL: f64 = 1e-8;

/// Evaluates `cap_B(Σ) ≥ Σ_x h_Σ(x) e_A(x) ≥ inf_{A_N} h_Σ · cap_B(A_N)` with killed quantities.
pub fn capacity_ratio_check(
    env: &dyn EdgeWeights,
    a_n: &SiteSet,
    sigma: &SiteSet,
    b_env: &Arc<SiteSet>,
) -> Result<CapacityRatioReport> {
    if !a_n.is_subset(b_env) || !sigma.is_subset(b_env) {
        return Err(Error::geometry("A_N and Σ must lie in B"));
    }
    let h_a = harmonic_potential(env, a_n, b_env)?.values;
    let h_s = if sigma.is_empty() {
        SiteFunction::zeros(Arc::clone(b_env))
    } else {
        harmonic_potential(env, sigma, b_env)?.values
    };
    let a_arc = Arc::new(a_n.clone());
    let e_a = equilibrium_measure_from(env, &a_arc, &h_a)?;
    let cap_a = dirichlet_form(env, &h_a, &h_a)?;
    let cap_sigma = dirichlet_form(env, &h_s, &h_s)?;
    let cross = dirichlet_form(env, &h_s, &h_a)?;
    let chain_middle: f64 = a_n.iter().zip(&e_a.values).map(|(x, e)| h_s.at(x) * e).sum();
    let inf_hit = a_n.iter().map(|x| h_s.at(x)).fold(f64::INFINITY, f64::min);
    let diff = SiteFunction::new(Arc::clone(b_env), h_a.values.iter().zip(&h_s.values).map(|(a, s)| a - s).collect());
    let energy_gap = dirichlet_form(env, &diff, &diff)? - (cap_sigma - cap_a);
    let slack = cap_sigma - inf_hit * cap_a;
    let tol = CHAIN_TOL * cap_sigma.max(cap_a).max(1.0);
    Ok(CapacityRatioReport {
        cap_sigma,
        cap_a,
        ratio: cap_sigma / cap_a,
        inf_hit,
        chain_middle,
        slack,
        holds: cap_sigma >= chain_middle - tol && chain_middle >= inf_hit * cap_a - tol,
        energy_gap,
        gauss_green_residual: (cross - chain_middle).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_law, KeyedEnvironment};
    use crate::lattice::Cuboid;
    use crate::registry::NamedSpec;
    use serde_json::json;

    fn env(law: &str, params: serde_json::Value, seed: u64) -> KeyedEnvironment {
        KeyedEnvironment::new(3, build_law(&NamedSpec::new(law, params)).unwrap(), seed)
    }

    fn cube(r: i32) -> SiteSet {
        Cuboid::ball(Site::origin(3), r).to_site_set()
    }

    #[test]
    fn porous_examples() {
        let e = env("constant", json!({"c": 1.0}), 0);
        let u0 = cube(2);
        let s = interface_boundary(&u0);
        let full = PorousInterface::new(u0.clone(), s.clone(), 3, 0.99, 0).unwrap();
        let c = check_porous_interface(&e, &full, CheckMode::Exact).unwrap();
        assert!(c.holds && c.min_probability == 1.0);
        let none = PorousInterface::new(u0.clone(), SiteSet::empty(3), 3, 0.01, 0).unwrap();
        let c = check_porous_interface(&e, &none, CheckMode::Exact).unwrap();
        assert!(!c.holds && c.min_probability == 0.0);
    }

    #[test]
    fn exact_and_monte_carlo_agree() {
        let e = env("iid_uniform", json!({"low": 0.5, "high": 1.0}), 3);
        let shell = build_shell_interface(&e, &cube(1), 1, 0.4, 3, 8).unwrap();
        let spec = &shell.interface;
        let mc = check_porous_interface(&e, spec, CheckMode::Mc { replicas: 4000, seed: 2 }).unwrap();
        let exact = &shell.check;
        let mut compared = 0;
        for ((x, p, _), (y, q, se)) in exact.values.iter().zip(&mc.values).step_by(7) {
            assert_eq!(x, y);
            if *se > 0.0 {
                assert!((p - q).abs() <= 5.0 * se, "{x}: exact {p} mc {q} ± {se}");
                compared += 1;
            } else {
                assert_eq!(p, q);
            }
        }
        assert!(compared > 5);
        assert!(spec.chi > 0.0 && spec.chi < 1.0, "{}", spec.chi);
    }

    #[test]
    fn full_shell_blocks_escape() {
        let e = env("iid_uniform", json!({"low": 0.5, "high": 1.0}), 5);
        let a = cube(1);
        let shell = build_shell_interface(&e, &a, 2, 0.0, 2, 1).unwrap();
        assert_eq!(shell.removed, 0);
        let b = Arc::new(cube(7));
        let rep = escape_probability(&e, &a, &shell.interface.sigma, &b, 1.0).unwrap();
        assert!(rep.sup <= 1e-8, "{}", rep.sup);
        let none = escape_probability(&e, &a, &SiteSet::empty(3), &b, 1.0).unwrap();
        assert_eq!(none.sup, 1.0);
        assert!(escape_probability(&e, &cube(8), &shell.interface.sigma, &b, 1.0).is_err());
    }

    #[test]
    fn escape_grows_with_punctures() {
        let e = env("iid_uniform", json!({"low": 0.5, "high": 1.0}), 6);
        let a = cube(1);
        let b = Arc::new(cube(7));
        let mut last = -1.0;
        let mut last_sigma: Option<SiteSet> = None;
        for f in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9] {
            let shell = build_shell_interface(&e, &a, 2, f, 2, 4).unwrap();
            let sigma = shell.interface.sigma;
            if let Some(prev) = &last_sigma {
                assert!(sigma.is_subset(prev));
            }
            let rep = escape_probability(&e, &a, &sigma, &b, 1.0).unwrap();
            assert!(rep.sup >= last - 1e-12, "{f}: {} < {last}", rep.sup);
            last = rep.sup;
            last_sigma = Some(sigma);
        }
        assert!(last > 0.0);
    }

    #[test]
    fn capacity_chain() {
        let e = env("iid_uniform", json!({"low": 0.5, "high": 1.0}), 9);
        let a = cube(1);
        let b = Arc::new(cube(6));
        let same = capacity_ratio_check(&e, &a, &a, &b).unwrap();
        assert!((same.ratio - 1.0).abs() < 1e-12 && same.energy_gap.abs() < 1e-9 && same.inf_hit == 1.0);
        let shell = build_shell_interface(&e, &a, 2, 0.0, 2, 0).unwrap();
        let full = capacity_ratio_check(&e, &a, &shell.interface.sigma, &b).unwrap();
        assert!((full.inf_hit - 1.0).abs() < 1e-10 && full.cap_sigma >= full.cap_a && full.holds);
        assert!(full.energy_gap.abs() < 1e-8 * full.cap_sigma);
        for seed in 0..5 {
            let shell = build_shell_interface(&e, &a, 2, 0.5, 2, seed).unwrap();
            let r = capacity_ratio_check(&e, &a, &shell.interface.sigma, &b).unwrap();
            assert!(r.holds, "{r:?}");
            assert!(r.slack >= -1e-8 && r.gauss_green_residual < 1e-8 * r.cap_sigma);
            assert!(r.energy_gap >= -1e-8);
        }
    }

    #[test]
    fn text_round_trip() {
        let e = env("constant", json!({"c": 1.0}), 0);
        let shell = build_shell_interface(&e, &cube(1), 1, 0.3, 2, 3).unwrap();
        let mut buf = Vec::new();
        shell.interface.write_text(&mut buf, Some(&json!({"seed": 3}))).unwrap();
        let (back, header) = PorousInterface::read_text(&buf[..]).unwrap();
        assert_eq!(back, shell.interface);
        assert_eq!(header["provenance"]["seed"], 3);
    }
}
