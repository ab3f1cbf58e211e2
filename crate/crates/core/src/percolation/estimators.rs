//! Monte Carlo estimators for box crossings and two-point connectivity.
//!
//! Thresholds are coupled: each replica computes the largest level at which
//! the event holds (a bottleneck path value), so one sample serves a whole
//! `α` grid and the estimates are exactly monotone in `α`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::bottleneck;
use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::gff::GffSampler;
use crate::lattice::{ball, Cuboid, Site, SiteSet};
use crate::rng::key_hash;
use crate::stats::Estimate;

#[derive(Clone, Debug, Serialize)]
pub struct CrossingPoint {
    pub alpha: f64,
    pub l: i32,
    pub estimate: Estimate,
    pub seed: u64,
}

/// `P[B(x,L) ↔ ∂B(x,2L) in E^{≥α}]` for every `α` in `alphas`.
///
/// The field lives on `B(x, 2L + 1 + pad)`; `pad ≥ 1` keeps the killing
/// boundary away from the target sphere `∂B(x,2L)`.
pub fn crossing_probability(
    env: &dyn EdgeWeights,
    alphas: &[f64],
    l: i32,
    x: &Site,
    pad: i32,
    replicas: u64,
    seed: u64,
) -> Result<Vec<CrossingPoint>> {
    if l < 1 {
        return Err(Error::param("crossing scale L must be at least 1"));
    }
    if pad < 1 {
        return Err(Error::geometry("insufficient padding: pad must be at least 1"));
    }
    let dom = Arc::new(ball(*x, (2 * l + 1 + pad) as u32));
    let sampler = GffSampler::from_env(env, Arc::clone(&dom))?;
    let inner = Cuboid::ball(*x, l);
    let sources: Vec<usize> = inner.iter().map(|y| dom.index_of(&y).unwrap()).collect();
    let target: Vec<bool> = dom.iter().map(|y| y.linf_dist(x) == 2 * l + 1).collect();
    let stream_seed = seed ^ key_hash([l as i64]);
    let thresholds: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let s = sampler.sample_labelled("percolation.crossing", stream_seed, i);
            bottleneck(&dom, s.values(), &sources, &|j| target[j])
        })
        .collect();
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let hits = thresholds.iter().filter(|t| alpha <= **t).count() as u64;
            CrossingPoint { alpha, l, estimate: Estimate::proportion(hits, replicas), seed }
        })
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossingSweep {
    pub alphas: Vec<f64>,
    pub scales: Vec<i32>,
    pub points: Vec<CrossingPoint>,
    /// Smallest grid `α` whose crossing probability strictly decreases along the scales.
    pub alpha_star_star: Option<f64>,
    /// The grid point just below `alpha_star_star`, if any.
    pub bracket_below: Option<f64>,
}

/// Crossing probabilities over an `α` grid and an increasing list of scales.
pub fn crossing_sweep(
    env: &dyn EdgeWeights,
    alphas: &[f64],
    scales: &[i32],
    x: &Site,
    pad: i32,
    replicas: u64,
    seed: u64,
) -> Result<CrossingSweep> {
    if scales.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("crossing scales must be strictly increasing"));
    }
    let mut points = Vec::new();
    for &l in scales {
        points.extend(crossing_probability(env, alphas, l, x, pad, replicas, seed)?);
    }
    let (alpha_star_star, bracket_below) = alpha_star_star_bracket(&points, alphas, scales);
    Ok(CrossingSweep { alphas: alphas.to_vec(), scales: scales.to_vec(), points, alpha_star_star, bracket_below })
}

/// Grid estimate of `α_**`: the smallest `α` (in grid order) for which the
/// crossing probability decreases strictly along every consecutive scale pair.
pub fn alpha_star_star_bracket(points: &[CrossingPoint], alphas: &[f64], scales: &[i32]) -> (Option<f64>, Option<f64>) {
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let p = |a: f64, l: i32| points.iter().find(|q| q.alpha == a && q.l == l).map(|q| q.estimate.mean);
    let mut below = None;
    for &a in &sorted {
        let seq: Option<Vec<f64>> = scales.iter().map(|&l| p(a, l)).collect();
        if let Some(seq) = seq {
            if seq.len() >= 2 && seq.windows(2).all(|w| w[1] < w[0]) {
                return (Some(a), below);
            }
        }
        below = Some(a);
    }
    (None, below)
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub alpha: f64,
    /// `-slope` of the least-squares line `log p ≈ intercept - rate · |z|_∞`.
    pub rate: f64,
    pub intercept: f64,
    pub points_used: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConnectivityReport {
    /// `(α, z, estimate)` of `P[x ↔ x+z in E^{≥α}]`.
    pub points: Vec<(f64, Site, Estimate)>,
    pub fits: Vec<DecayFit>,
}

/// Two-point connectivity `P[x ↔ x+z]` on the bounding box of all `x + z`
/// enlarged by `pad`, coupled over `alphas`.
pub fn connectivity_function(
    env: &dyn EdgeWeights,
    alphas: &[f64],
    x: &Site,
    zs: &[Site],
    pad: i32,
    replicas: u64,
    seed: u64,
) -> Result<ConnectivityReport> {
    if pad < 1 {
        return Err(Error::geometry("insufficient padding: pad must be at least 1"));
    }
    if zs.is_empty() {
        return Err(Error::param("no displacement z given"));
    }
    let ends: Vec<Site> = zs.iter().map(|z| x.add(z)).collect();
    let bb = SiteSet::from_sites(x.dim(), ends.iter().copied().chain([*x])).bounding_box().unwrap();
    let dom = Arc::new(bb.expand(pad).to_site_set());
    let sampler = GffSampler::from_env(env, Arc::clone(&dom))?;
    let src = [dom.index_of(x).unwrap()];
    let tgt: Vec<usize> = ends.iter().map(|y| dom.index_of(y).unwrap()).collect();
    let thresholds: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let s = sampler.sample_labelled("percolation.connectivity", seed, i);
            tgt.iter().map(|&t| bottleneck(&dom, s.values(), &src, &|j| j == t)).collect()
        })
        .collect();
    let mut points = Vec::new();
    let mut fits = Vec::new();
    for &alpha in alphas {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, z) in zs.iter().enumerate() {
            let hits = thresholds.iter().filter(|t| alpha <= t[k]).count() as u64;
            let est = Estimate::proportion(hits, replicas);
            if est.mean > 0.0 {
                xs.push(z.linf_norm() as f64);
                ys.push(est.mean.ln());
            }
            points.push((alpha, *z, est));
        }
        let (rate, intercept) = least_squares(&xs, &ys);
        fits.push(DecayFit { alpha, rate: -rate, intercept, points_used: xs.len() });
    }
    Ok(ConnectivityReport { points, fits })
}

/// `(slope, intercept)`; NaN when fewer than two distinct abscissae.
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{build_law, KeyedEnvironment};
    use crate::percolation::{reaches, LevelSet};
    use crate::potential::{green_column, DirichletOperator};
    use crate::registry::NamedSpec;
    use crate::stats::normal_sf;
    use serde_json::json;

    fn unit() -> KeyedEnvironment {
        KeyedEnvironment::new(3, build_law(&NamedSpec::new("constant", json!({"c": 1.0}))).unwrap(), 0)
    }

    #[test]
    fn crossing_limits_and_monotonicity() {
        let env = unit();
        let alphas = [-1e9, -1.0, -0.5, 0.0, 0.5, 1.0, 1e9];
        let pts = crossing_probability(&env, &alphas, 2, &Site::origin(3), 1, 400, 3).unwrap();
        assert_eq!(pts[0].estimate.mean, 1.0);
        assert_eq!(pts[6].estimate.mean, 0.0);
        for w in pts.windows(2) {
            assert!(w[1].estimate.mean <= w[0].estimate.mean);
        }
        assert!(crossing_probability(&env, &alphas, 2, &Site::origin(3), 0, 10, 3).is_err());
    }

    #[test]
    fn bottleneck_matches_breadth_first_search() {
        let env = unit();
        let dom = Arc::new(ball(Site::origin(3), 4));
        let sampler = GffSampler::from_env(&env, dom.clone()).unwrap();
        let src: Vec<usize> = Cuboid::ball(Site::origin(3), 1).iter().map(|y| dom.index_of(&y).unwrap()).collect();
        let target: Vec<bool> = dom.iter().map(|y| y.linf_norm() == 4).collect();
        for i in 0..30 {
            let s = sampler.sample(7, i);
            let t = bottleneck(&dom, s.values(), &src, &|j| target[j]);
            for alpha in [-1.0, -0.3, 0.0, 0.2, 0.6] {
                let ls = LevelSet::from_values(dom.clone(), s.values(), alpha);
                assert_eq!(alpha <= t, reaches(&ls, &src, &|j| target[j]));
            }
        }
    }

    #[test]
    fn zero_displacement_is_the_gaussian_tail() {
        let env = unit();
        let x = Site::origin(3);
        let zs = [Site::origin(3), Site::new(&[2, 0, 0]), Site::new(&[4, 0, 0])];
        let alphas = [0.0, 0.5];
        let rep = connectivity_function(&env, &alphas, &x, &zs, 2, 4000, 11).unwrap();
        let dom = Arc::new(Cuboid::new(Site::new(&[-2, -2, -2]), Site::new(&[6, 2, 2])).to_site_set());
        let op = DirichletOperator::new(&env, dom).unwrap();
        let g = green_column(&op, &x).unwrap().at(&x);
        for (alpha, z, est) in &rep.points {
            if *z == Site::origin(3) {
                assert!(est.z_to(normal_sf(alpha / g.sqrt())) < 3.0, "{alpha} {est:?}");
            }
        }
        for alpha in alphas {
            let p0 = rep.points.iter().find(|(a, z, _)| *a == alpha && *z == zs[0]).unwrap().2.mean;
            for (a, _, e) in &rep.points {
                if *a == alpha {
                    assert!(e.mean <= p0);
                }
            }
        }
        assert_eq!(rep.fits.len(), 2);
    }

    #[test]
    fn bracket_picks_first_decreasing_alpha() {
        let mk = |alpha: f64, l: i32, p: f64| CrossingPoint { alpha, l, estimate: Estimate::proportion((p * 100.0) as u64, 100), seed: 0 };
        let pts = vec![mk(0.0, 2, 0.9), mk(0.0, 4, 0.95), mk(1.0, 2, 0.5), mk(1.0, 4, 0.3)];
        assert_eq!(alpha_star_star_bracket(&pts, &[0.0, 1.0], &[2, 4]), (Some(1.0), Some(0.0)));
        assert_eq!(least_squares(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]), (2.0, 1.0));
    }
}
