//! Good/bad box classification and the decoupling-inequality harness.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{components, LevelSet};
use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::gff::{BoxScale, Decomposer, FieldSample, GffSampler};
use crate::lattice::{Site, SiteSet};
use crate::potential::{green_column, DirichletOperator, SiteFunction};
use crate::stats::{normal_sf, Estimate};

/// `ψ^{ω,z}` and `ξ^{ω,z}` for one box, stored on the sample domain.
#[derive(Clone, Debug)]
pub struct BoxFields {
    pub z: Site,
    pub psi: SiteFunction,
    pub xi: SiteFunction,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoxFlags {
    pub z: Site,
    /// `B_z ∩ {ψ^z ≥ γ}` has a cluster of `ℓ∞` diameter at least `L/10`.
    pub large_component: bool,
    /// Large clusters of `B_z` and of every classified neighbour `B_{z'}` are
    /// joined inside `D_z ∩ {ψ^z ≥ δ}`.
    pub neighbors_connected: bool,
    pub psi_good: bool,
    /// `inf_{D_z} ξ^z > -a`.
    pub xi_good: bool,
    pub max_diameter: u32,
    pub min_xi: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoxClassification {
    pub l: i32,
    pub gamma: f64,
    pub delta: f64,
    pub a: f64,
    pub flags: Vec<BoxFlags>,
}

fn large_clusters(scale: &BoxScale, f: &BoxFields, gamma: f64) -> (Vec<Vec<Site>>, u32) {
    let b = Arc::new(scale.b_box(&f.z).to_site_set());
    let vals: Vec<f64> = b.iter().map(|x| f.psi.at(x)).collect();
    let ls = LevelSet::from_values(Arc::clone(&b), &vals, gamma);
    let lab = components(&ls);
    let min_diam = scale.l as f64 / 10.0;
    let mut out = Vec::new();
    for (c, comp) in lab.components.iter().enumerate() {
        if comp.diameter as f64 >= min_diam {
            out.push(
                b.iter()
                    .enumerate()
                    .filter(|(i, _)| lab.component_of[*i] == Some(c as u32))
                    .map(|(_, x)| *x)
                    .collect(),
            );
        }
    }
    (out, lab.max_diameter())
}

/// Classification from stored decomposition fields only.
pub fn classify_from_fields(scale: BoxScale, fields: &[BoxFields], gamma: f64, delta: f64, a: f64) -> Result<BoxClassification> {
    if !(delta < gamma) {
        return Err(Error::param("box classification needs δ < γ"));
    }
    if !(a > 0.0) {
        return Err(Error::param("ξ-goodness level a must be positive"));
    }
    let large: Vec<(Vec<Vec<Site>>, u32)> = fields.iter().map(|f| large_clusters(&scale, f, gamma)).collect();
    let mut flags = Vec::with_capacity(fields.len());
    for (k, f) in fields.iter().enumerate() {
        let d_set = Arc::new(scale.d_box(&f.z).to_site_set());
        let dvals: Vec<f64> = d_set.iter().map(|x| f.psi.at(x)).collect();
        let min_xi = d_set.iter().map(|x| f.xi.at(x)).fold(f64::INFINITY, f64::min);
        let low = LevelSet::from_values(Arc::clone(&d_set), &dvals, delta);
        let lab = components(&low);
        let touching = |cl: &[Site]| -> HashSet<u32> {
            cl.iter().filter_map(|x| d_set.index_of(x)).filter_map(|i| lab.component_of[i]).collect()
        };
        let mine: Vec<HashSet<u32>> = large[k].0.iter().map(|c| touching(c)).collect();
        let mut neighbors_connected = true;
        for (j, g) in fields.iter().enumerate() {
            if j == k || g.z.sub(&f.z).l1_norm() != scale.l || g.z.sub(&f.z).linf_norm() != scale.l {
                continue;
            }
            for theirs in large[j].0.iter().map(|c| touching(c)) {
                if mine.iter().any(|m| m.is_disjoint(&theirs)) {
                    neighbors_connected = false;
                }
            }
        }
        let large_component = !large[k].0.is_empty();
        flags.push(BoxFlags {
            z: f.z,
            large_component,
            neighbors_connected,
            psi_good: large_component && neighbors_connected,
            xi_good: min_xi > -a,
            max_diameter: large[k].1,
            min_xi,
        });
    }
    Ok(BoxClassification { l: scale.l, gamma, delta, a, flags })
}

/// Decomposes `φ` with respect to every `U_z` and classifies the boxes.
pub fn classify_boxes(
    env: &dyn EdgeWeights,
    phi: &FieldSample,
    scale: BoxScale,
    centers: &[Site],
    gamma: f64,
    delta: f64,
    a: f64,
) -> Result<BoxClassification> {
    let fields = box_fields(env, phi, scale, centers)?;
    classify_from_fields(scale, &fields, gamma, delta, a)
}

/// `(ψ^z, ξ^z)` for each center; `U_z` and its boundary must lie in the sample domain.
pub fn box_fields(env: &dyn EdgeWeights, phi: &FieldSample, scale: BoxScale, centers: &[Site]) -> Result<Vec<BoxFields>> {
    centers
        .iter()
        .map(|z| {
            if !scale.on_lattice(z) {
                return Err(Error::geometry(format!("box corner {z} is not in L·Z^d")));
            }
            scale.check_within(z, phi.domain())?;
            let u = Arc::new(scale.u_box(z).to_site_set());
            let dec = Decomposer::new(env, Arc::clone(phi.domain()), u, true)?.decompose(phi)?;
            Ok(BoxFields { z: *z, psi: dec.psi, xi: dec.xi })
        })
        .collect()
}

/// An increasing `[0,1]`-valued (here indicator) functional of the field.
pub trait IncreasingEvent: Send + Sync {
    fn support(&self) -> Vec<Site>;
    fn holds(&self, field: &dyn Fn(&Site) -> f64) -> bool;
}

/// `{φ_site ≥ level}`.
pub struct SiteAbove {
    pub site: Site,
    pub level: f64,
}

impl IncreasingEvent for SiteAbove {
    fn support(&self) -> Vec<Site> {
        vec![self.site]
    }
    fn holds(&self, field: &dyn Fn(&Site) -> f64) -> bool {
        field(&self.site) >= self.level
    }
}

/// The sure event.
pub struct Always;

impl IncreasingEvent for Always {
    fn support(&self) -> Vec<Site> {
        Vec::new()
    }
    fn holds(&self, _: &dyn Fn(&Site) -> f64) -> bool {
        true
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecouplingReport {
    pub delta: f64,
    /// `P[E1 ∩ E2]`.
    pub joint: Estimate,
    pub p1: Estimate,
    /// `E[f2(φ - δ)]`.
    pub p2_minus: Estimate,
    /// `E[f2(φ + δ)]`.
    pub p2_plus: Estimate,
    /// `P[sup_{K2} |ξ^{K1^c}| > δ/2]` by Monte Carlo.
    pub g_complement: Estimate,
    /// `Σ_{x ∈ K2} 2Φ̄(δ / (2σ_x))`, capped at 1.
    pub g_complement_union_bound: f64,
    /// Exact value when `|K2| = 1`.
    pub g_complement_exact: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    /// `(lower - joint)⁺` and `(joint - upper)⁺` in combined standard errors.
    pub lower_violation_se: f64,
    pub upper_violation_se: f64,
    pub holds: bool,
}

/// Two-sided decoupling inequality
/// `P[E1]·E[f2(φ-δ)] - 2P[G^c] ≤ P[E1 ∩ E2] ≤ P[E1]·E[f2(φ+δ)] + 2P[G^c]`
/// with every term estimated on its own replica batch.
#[allow(clippy::too_many_arguments)]
pub fn decoupling_check(
    env: &dyn EdgeWeights,
    domain: Arc<SiteSet>,
    k1: &SiteSet,
    k2: &SiteSet,
    delta: f64,
    e1: &dyn IncreasingEvent,
    e2: &dyn IncreasingEvent,
    replicas: u64,
    seed: u64,
    se_multiplier: f64,
) -> Result<DecouplingReport> {
    if !(delta > 0.0) {
        return Err(Error::param("δ must be positive"));
    }
    if k1.is_empty() || k2.is_empty() {
        return Err(Error::geometry("decoupling boxes must be non-empty"));
    }
    if !k1.intersection(k2).is_empty() {
        return Err(Error::geometry("K1 and K2 overlap"));
    }
    if !k1.is_subset(&domain) || !k2.is_subset(&domain) {
        return Err(Error::geometry("K1 and K2 must lie in the sample domain"));
    }
    if e1.support().iter().any(|x| !k1.contains(x)) || e2.support().iter().any(|x| !k2.contains(x)) {
        return Err(Error::geometry("event support leaves its box"));
    }
    let sampler = GffSampler::from_env(env, Arc::clone(&domain))?;
    let outside = Arc::new(domain.difference(k1));
    let dec = Decomposer::new(env, Arc::clone(&domain), Arc::clone(&outside), false)?;

    let batch = |label: &str, f: &(dyn Fn(&FieldSample) -> f64 + Sync)| -> Estimate {
        let v: Vec<f64> = (0..replicas).into_par_iter().map(|i| f(&sampler.sample_labelled(label, seed, i))).collect();
        Estimate::from_values(&v)
    };
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let joint = batch("decoupling.joint", &|s| ind(e1.holds(&|x| s.at(x)) && e2.holds(&|x| s.at(x))));
    let p1 = batch("decoupling.first", &|s| ind(e1.holds(&|x| s.at(x))));
    let p2_minus = batch("decoupling.second", &|s| ind(e2.holds(&|x| s.at(x) - delta)));
    let p2_plus = batch("decoupling.second", &|s| ind(e2.holds(&|x| s.at(x) + delta)));
    let g_complement = batch("decoupling.harmonic", &|s| {
        let xi = dec.decompose(s).expect("decomposer matches the sample domain").xi;
        ind(k2.iter().any(|x| xi.at(x).abs() > delta / 2.0))
    });

    // ξ_x = Σ_{u ∈ K1} H(x,u) φ_u on K2, so Var ξ_x = Σ_{u,v} H(x,u) g_U(u,v) H(x,v).
    let k1_sites: Vec<Site> = k1.iter().copied().collect();
    let harm: Vec<SiteFunction> = k1_sites
        .iter()
        .map(|u| {
            let mut e = vec![0.0; domain.len()];
            e[domain.index_of(u).unwrap()] = 1.0;
            let h = dec.harmonic_extension(&e)?;
            Ok(SiteFunction::new(Arc::clone(&outside), h))
        })
        .collect::<Result<_>>()?;
    let op = DirichletOperator::new(env, Arc::clone(&domain))?;
    let g: Vec<Vec<f64>> = k1_sites
        .iter()
        .map(|u| green_column(&op, u).map(|c| k1_sites.iter().map(|v| c.at(v)).collect()))
        .collect::<Result<_>>()?;
    let mut union = 0.0;
    let mut exact = None;
    for x in k2.iter() {
        let hx: Vec<f64> = harm.iter().map(|h| h.at(x)).collect();
        let var: f64 = (0..hx.len()).map(|a| (0..hx.len()).map(|b| hx[a] * g[a][b] * hx[b]).sum::<f64>()).sum();
        let p = if var > 0.0 { 2.0 * normal_sf(delta / (2.0 * var.sqrt())) } else { 0.0 };
        union += p;
        if k2.len() == 1 {
            exact = Some(p);
        }
    }

    let pg = g_complement.mean;
    let lower = p1.mean * p2_minus.mean - 2.0 * pg;
    let upper = p1.mean * p2_plus.mean + 2.0 * pg;
    let comb = |p2: &Estimate| {
        (joint.se.powi(2) + (p2.mean * p1.se).powi(2) + (p1.mean * p2.se).powi(2) + 4.0 * g_complement.se.powi(2)).sqrt()
    };
    let in_se = |excess: f64, se: f64| {
        if excess <= 0.0 {
            0.0
        } else if se == 0.0 {
            f64::INFINITY
        } else {
            excess / se
        }
    };
    let lower_violation_se = in_se(lower - joint.mean, comb(&p2_minus));
    let upper_violation_se = in_se(joint.mean - upper, comb(&p2_plus));
    Ok(DecouplingReport {
        delta,
        joint,
        p1,
        p2_minus,
        p2_plus,
        g_complement,
        g_complement_union_bound: union.min(1.0),
        g_complement_exact: exact,
        lower,
        upper,
        lower_violation_se,
        upper_violation_se,
        holds: lower_violation_se <= se_multiplier && upper_violation_se <= se_multiplier,
    })
}
