//! Empirical covariance of `X_t / √t` for the walk started at the origin.

use rayon::prelude::*;
use serde::Serialize;

use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::potential::{walk_endpoint, Clock, StopReason, StopRules};
use crate::rng::stream;

/// Replicas touching the window may be discarded up to this fraction.
pub const MAX_DISCARD_RATE: f64 = 0.01;

#[derive(Clone, Debug, Serialize)]
pub struct DiffusivityEstimate {
    pub clock: Clock,
    pub t_horizon: f64,
    /// `â_{ij}`, row-major `d × d`.
    pub matrix: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub replicas: u64,
    pub discarded: u64,
}

impl DiffusivityEstimate {
    /// `max_i |â_ii / target - 1|`.
    pub fn max_diagonal_relative_error(&self, target: f64) -> f64 {
        (0..self.matrix.len()).map(|i| (self.matrix[i][i] / target - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max_{i≠j} |â_ij| / se_ij`.
    pub fn max_off_diagonal_z(&self) -> f64 {
        let d = self.matrix.len();
        let mut z: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    z = z.max(self.matrix[i][j].abs() / self.se[i][j]);
                }
            }
        }
        z
    }
}

/// Covariance of `X_t/√t`. The VSRW gives `â`; the CSRW gives the rescaled
/// matrix `E[ω_0]^{-1} â` directly. Replicas whose walk reaches `ℓ∞` distance
/// `window` are discarded; more than 1% discarded is a geometry error.
pub fn estimate_diffusivity(
    env: &dyn EdgeWeights,
    clock: Clock,
    t_horizon: f64,
    window: i32,
    replicas: u64,
    seed: u64,
) -> Result<DiffusivityEstimate> {
    if !(t_horizon > 0.0) || replicas < 2 || window < 1 {
        return Err(Error::param("diffusivity needs t > 0, at least two replicas and a window ≥ 1"));
    }
    let d = env.dim();
    let rules = StopRules { radius: Some(window), time_cap: Some(t_horizon), ..Default::default() };
    let ends: Result<Vec<Option<Site>>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "homogenization.diffusivity", i);
            let end = walk_endpoint(env, Site::origin(d), &rules, clock, &mut rng)?;
            Ok((end.stop_reason == StopReason::TimeCap).then_some(end.site))
        })
        .collect();
    let ends = ends?;
    let kept: Vec<Vec<f64>> = ends
        .iter()
        .flatten()
        .map(|x| x.coords().iter().map(|&c| f64::from(c) / t_horizon.sqrt()).collect())
        .collect();
    let discarded = replicas - kept.len() as u64;
    if discarded as f64 > MAX_DISCARD_RATE * replicas as f64 {
        return Err(Error::geometry(format!(
            "{discarded} of {replicas} walks reached the window radius {window}; enlarge the window"
        )));
    }
    let n = kept.len() as f64;
    let mean: Vec<f64> = (0..d).map(|i| kept.iter().map(|v| v[i]).sum::<f64>() / n).collect();
    let mut matrix = vec![vec![0.0; d]; d];
    let mut se = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let prods: Vec<f64> = kept.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).collect();
            let m = prods.iter().sum::<f64>() / (n - 1.0);
            let var = prods.iter().map(|p| (p - m) * (p - m)).sum::<f64>() / (n - 1.0);
            matrix[i][j] = m;
            se[i][j] = (var / n).sqrt();
        }
    }
    Ok(DiffusivityEstimate { clock, t_horizon, matrix, se, replicas, discarded })
}
