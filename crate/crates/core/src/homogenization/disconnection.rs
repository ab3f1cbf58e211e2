//! Disconnection `𝒟^α_N = {A_N ↮ S_N in E^{≥α}}` under the tilted measure
//! `φ ↦ φ + f_N`, `f_N = -(α_ref - α + ε) h_{(A^δ)_N, B_N}`, with exact
//! likelihood ratios.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::solve_potential;
use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::gff::{GffSampler, TiltedSampler};
use crate::lattice::{blow_up, sphere, ShapeSpec, SiteSet};
use crate::linalg::SolverStrategy;
use crate::percolation::Disconnection;
use crate::potential::{capacity_of_potential, SiteFunction};
use crate::stats::Estimate;
use crate::testfn::{discretize, TestFunction};

/// Samples per pass over the Cholesky factor.
const BLOCK: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisconnectionParams {
    /// The set `A`.
    pub a: ShapeSpec,
    /// The tilt and sample domain `B`; `B_N` must contain the box spanned by `S_N`.
    pub b: ShapeSpec,
    pub m: f64,
    pub n: u32,
    pub alpha: f64,
    /// Finite-size stand-in for the critical level.
    pub alpha_star_ref: f64,
    pub epsilon: f64,
    /// `δ` of the neighbourhood `A^δ`.
    pub delta_shell: f64,
}

/// Geometry, sampler and potentials shared by every run at one `(A, B, M, N, δ)`.
pub struct DisconnectionSetup {
    pub n: u32,
    pub a_n: SiteSet,
    pub s_n: SiteSet,
    pub domain: Arc<SiteSet>,
    pub sampler: GffSampler,
    pub event: Disconnection,
    /// `h_{(A^δ)_N, B_N}`.
    pub h_delta: SiteFunction,
    /// `cap_{B_N}((A^δ)_N)`.
    pub cap_delta: f64,
    /// `h_{A_N, B_N}`.
    pub h_a: SiteFunction,
}

impl DisconnectionSetup {
    pub fn new(env: &dyn EdgeWeights, p: &DisconnectionParams, solver: Arc<dyn SolverStrategy>) -> Result<Self> {
        let d = env.dim();
        if !(p.delta_shell >= 0.0) {
            return Err(Error::param("δ must be non-negative"));
        }
        let a_n = blow_up(&p.a, p.n, d)?;
        let a_delta = blow_up(&p.a.clone().inflate(p.delta_shell), p.n, d)?;
        let s_n = sphere(p.m, p.n, d)?;
        let domain = Arc::new(blow_up(&p.b, p.n, d)?);
        let event = Disconnection::new(Arc::clone(&domain), &a_n, &s_n)?;
        let h_delta = solve_potential(env, &a_delta, &domain, Arc::clone(&solver))?.values;
        let cap_delta = capacity_of_potential(env, &h_delta)?;
        let h_a = solve_potential(env, &a_n, &domain, solver)?.values;
        let sampler = GffSampler::from_env(env, Arc::clone(&domain))?;
        Ok(Self { n: p.n, a_n, s_n, domain, sampler, event, h_delta, cap_delta, h_a })
    }

    fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// `f_N = -(α_ref - α + ε) h_{(A^δ)_N, B_N}`.
    pub fn tilt(&self, alpha: f64, alpha_star_ref: f64, epsilon: f64) -> SiteFunction {
        let c = alpha_star_ref - alpha + epsilon;
        SiteFunction::new(Arc::clone(&self.domain), self.h_delta.values.iter().map(|h| -c * h).collect())
    }

    /// Disconnection thresholds of untilted samples; `𝒟^α` holds iff `α > t`.
    pub fn direct_thresholds(&self, replicas: u64, seed: u64) -> Vec<f64> {
        self.sampler.map_samples("disconnection.direct", seed, replicas, BLOCK, |s| self.event.threshold(s.values()))
    }

    /// `(threshold, log dP/dP̃, observable)` for tilted samples.
    pub fn tilted_runs<T: Send>(
        &self,
        f: &SiteFunction,
        replicas: u64,
        seed: u64,
        observe: impl Fn(&[f64]) -> T + Sync,
    ) -> Result<Vec<(f64, f64, T)>> {
        let tilted = TiltedSampler::new(self.sampler.clone(), f)?;
        let shift = tilted.shift().to_vec();
        Ok(self.sampler.map_samples("gff.tilted", seed, replicas, BLOCK, |s| {
            let v: Vec<f64> = s.values().iter().zip(&shift).map(|(a, b)| a + b).collect();
            (self.event.threshold(&v), tilted.log_weight(&v), observe(&v))
        }))
    }

    /// `½ ℰ(f, f)`, the relative entropy of the tilted law.
    pub fn entropy(&self, f: &SiteFunction) -> Result<f64> {
        Ok(0.5 * TiltedSampler::new(self.sampler.clone(), f)?.energy())
    }

    /// Tilted disconnection frequency for each `ε`.
    pub fn tilted_frequency_ladder(
        &self,
        alpha: f64,
        alpha_star_ref: f64,
        epsilons: &[f64],
        replicas: u64,
        seed: u64,
    ) -> Result<Vec<(f64, Estimate)>> {
        epsilons
            .iter()
            .map(|&eps| {
                let runs = self.tilted_runs(&self.tilt(alpha, alpha_star_ref, eps), replicas, seed, |_| ())?;
                let hits = runs.iter().filter(|r| alpha > r.0).count() as u64;
                Ok((eps, Estimate::proportion(hits, replicas)))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DisconnectionReport {
    pub n: u32,
    pub alpha: f64,
    pub alpha_star_ref: f64,
    pub epsilon: f64,
    /// `H(P̃ | P) = ½ ℰ(f_N, f_N)`.
    pub entropy: f64,
    pub cap_delta: f64,
    /// Mean of `e^{log dP/dP̃} 1_𝒟` under `P̃`.
    pub is_estimate: Estimate,
    pub direct: Option<Estimate>,
    /// `|IS - direct|` in combined standard errors.
    pub combined_z: Option<f64>,
    pub tilted_frequency: Estimate,
    /// `log P̃[𝒟] - (H + 1/e) / P̃[𝒟]`.
    pub entropy_bound_log: Option<f64>,
    /// `log(IS + 3 SE) ≥ entropy_bound_log`.
    pub entropy_holds: Option<bool>,
    /// `-N^{2-d} log IS`.
    pub rate_proxy: f64,
    /// `½ (α_ref - α)² N^{2-d} cap_{B_N}((A^δ)_N)`.
    pub rate_reference: f64,
    pub effective_sample_size: f64,
    /// No tilted sample disconnected; try a larger `ε`.
    pub degenerate: bool,
}

/// `log P ≥ log P̃ - (H + 1/e) / P̃`.
pub fn entropy_bound(tilted_probability: f64, entropy: f64) -> Option<f64> {
    (tilted_probability > 0.0).then(|| tilted_probability.ln() - (entropy + (-1.0f64).exp()) / tilted_probability)
}

/// Importance-sampling, direct and entropy-bound estimates of `P[𝒟^α_N]`.
pub fn disconnection_rate_experiment(
    setup: &DisconnectionSetup,
    p: &DisconnectionParams,
    replicas: u64,
    direct_replicas: Option<u64>,
    seed: u64,
) -> Result<DisconnectionReport> {
    if replicas == 0 {
        return Err(Error::param("at least one tilted replica is needed"));
    }
    let f = setup.tilt(p.alpha, p.alpha_star_ref, p.epsilon);
    let entropy = setup.entropy(&f)?;
    let runs = setup.tilted_runs(&f, replicas, seed, |_| ())?;
    let weighted: Vec<f64> = runs.iter().map(|r| if p.alpha > r.0 { r.1.exp() } else { 0.0 }).collect();
    let hits = weighted.iter().filter(|w| **w > 0.0).count() as u64;
    let is_estimate = Estimate::from_values(&weighted);
    let tilted_frequency = Estimate::proportion(hits, replicas);
    let sw: f64 = weighted.iter().sum();
    let sw2: f64 = weighted.iter().map(|w| w * w).sum();
    let effective_sample_size = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    let direct = direct_replicas.map(|k| {
        let t = setup.direct_thresholds(k, seed);
        Estimate::proportion(t.iter().filter(|t| p.alpha > **t).count() as u64, k)
    });
    let combined_z = direct.as_ref().map(|dir| is_estimate.z_distance(dir));
    let entropy_bound_log = entropy_bound(tilted_frequency.mean, entropy);
    let entropy_holds = entropy_bound_log.map(|b| (is_estimate.mean + 3.0 * is_estimate.se).ln() >= b);
    let scale = f64::from(p.n).powi(2 - setup.dim() as i32);
    Ok(DisconnectionReport {
        n: p.n,
        alpha: p.alpha,
        alpha_star_ref: p.alpha_star_ref,
        epsilon: p.epsilon,
        entropy,
        cap_delta: setup.cap_delta,
        rate_proxy: -scale * is_estimate.mean.ln(),
        rate_reference: 0.5 * (p.alpha_star_ref - p.alpha).powi(2) * scale * setup.cap_delta,
        is_estimate,
        direct,
        combined_z,
        tilted_frequency,
        entropy_bound_log,
        entropy_holds,
        effective_sample_size,
        degenerate: hits == 0,
    })
}

/// `ℋ^α = -(α_ref - α) h_{A_N, B_N}`.
#[derive(Clone, Debug)]
pub struct ProfileFunction {
    pub alpha: f64,
    pub alpha_star_ref: f64,
    pub values: SiteFunction,
}

pub fn profile_function(setup: &DisconnectionSetup, alpha: f64, alpha_star_ref: f64) -> ProfileFunction {
    let c = alpha_star_ref - alpha;
    let values = SiteFunction::new(Arc::clone(&setup.domain), setup.h_a.values.iter().map(|h| -c * h).collect());
    ProfileFunction { alpha, alpha_star_ref, values }
}

#[derive(Clone, Debug, Serialize)]
pub struct RepulsionReport {
    /// `⟨ℋ^α, η⟩` in its finite-volume form `N^{-d} Σ ℋ^α(x) η(x/N)`.
    pub profile_pairing: f64,
    /// `N^{-d} Σ f_N(x) η(x/N)`.
    pub tilt_pairing: f64,
    /// Tilted mean of `⟨𝕏_N, η⟩`.
    pub unconditional_mean: Estimate,
    pub unconditional_z: f64,
    /// Likelihood-ratio weighted mean of `⟨𝕏_N, η⟩` given `𝒟`, with a delta-method SE.
    pub conditional_mean: f64,
    pub conditional_se: f64,
    /// IS estimate of `P[|⟨𝕏_N, η⟩ - ⟨ℋ^α, η⟩| ≥ Δ; 𝒟]`.
    pub deviation_probability: Estimate,
    pub hits: u64,
}

/// Entropic-repulsion diagnostics for `⟨𝕏_N, η⟩` on the disconnection event.
pub fn repulsion_experiment(
    setup: &DisconnectionSetup,
    p: &DisconnectionParams,
    eta: &dyn TestFunction,
    deviation: f64,
    replicas: u64,
    seed: u64,
) -> Result<RepulsionReport> {
    let nf = f64::from(p.n);
    let weights = discretize(eta, &setup.domain, nf).values;
    let pair = |v: &[f64]| v.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
    let profile = profile_function(setup, p.alpha, p.alpha_star_ref);
    let profile_pairing = pair(&profile.values.values);
    let f = setup.tilt(p.alpha, p.alpha_star_ref, p.epsilon);
    let tilt_pairing = pair(&f.values);
    let runs = setup.tilted_runs(&f, replicas, seed, |v| pair(v))?;
    let xs: Vec<f64> = runs.iter().map(|r| r.2).collect();
    let unconditional_mean = Estimate::from_values(&xs);
    let w: Vec<f64> = runs.iter().map(|r| if p.alpha > r.0 { r.1.exp() } else { 0.0 }).collect();
    let hits = w.iter().filter(|v| **v > 0.0).count() as u64;
    let sw: f64 = w.iter().sum();
    let (conditional_mean, conditional_se) = if sw > 0.0 {
        let m = w.iter().zip(&xs).map(|(a, b)| a * b).sum::<f64>() / sw;
        let v = w.iter().zip(&xs).map(|(a, b)| a * a * (b - m) * (b - m)).sum::<f64>() / (sw * sw);
        (m, v.sqrt())
    } else {
        (f64::NAN, f64::NAN)
    };
    let dev: Vec<f64> =
        w.iter().zip(&xs).map(|(a, b)| if (b - profile_pairing).abs() >= deviation { *a } else { 0.0 }).collect();
    Ok(RepulsionReport {
        profile_pairing,
        tilt_pairing,
        unconditional_z: unconditional_mean.z_to(tilt_pairing),
        unconditional_mean,
        conditional_mean,
        conditional_se,
        deviation_probability: Estimate::from_values(&dev),
        hits,
    })
}
