//! Scaling experiments: rescaled capacities and harmonic-potential pairings
//! along an `N` ladder, diffusivity of the walk, continuum references, and the
//! tilted-measure disconnection experiments.

mod diffusivity;
mod disconnection;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::lattice::{blow_up, boundary, BoundaryKind, ShapeSpec, SiteSet};
use crate::linalg::SolverStrategy;
use crate::potential::{capacity_of_potential, DirichletOperator, SiteFunction};
use crate::testfn::{pairing, TestFunction};

pub use diffusivity::{estimate_diffusivity, DiffusivityEstimate};
pub use disconnection::{
    disconnection_rate_experiment, entropy_bound, profile_function, repulsion_experiment, DisconnectionParams, DisconnectionReport,
    DisconnectionSetup, ProfileFunction, RepulsionReport,
};

/// Default contraction factor of the Cauchy verdict.
pub const DEFAULT_CONTRACTION: f64 = 0.5;

#[derive(Clone, Debug, Serialize)]
pub struct CauchyVerdict {
    /// `|v_{k+1} - v_k| / |v_k|`.
    pub relative_changes: Vec<f64>,
    /// Relative changes strictly decrease.
    pub decreasing: bool,
    /// The last relative change is below `contraction` times the previous one.
    pub contracting: bool,
    pub contraction: f64,
}

/// Trend verdict for a sequence meant to converge; needs three values.
pub fn cauchy_verdict(values: &[f64], contraction: f64) -> CauchyVerdict {
    let relative_changes: Vec<f64> = values.windows(2).map(|w| ((w[1] - w[0]) / w[0]).abs()).collect();
    let enough = relative_changes.len() >= 2;
    let decreasing = enough && relative_changes.windows(2).all(|w| w[1] < w[0]);
    let contracting = enough && {
        let k = relative_changes.len();
        relative_changes[k - 1] < contraction * relative_changes[k - 2]
    };
    CauchyVerdict { relative_changes, decreasing, contracting, contraction }
}

/// `h_{A,B}` from one linear solve, with its relative residual and wall-clock time.
pub struct PotentialSolve {
    pub values: SiteFunction,
    pub residual: f64,
    pub seconds: f64,
    pub solver: &'static str,
}

/// Solves for `h_{A,B}`; `A` must be non-empty with `∂A ⊆ B`.
pub fn solve_potential(
    env: &dyn EdgeWeights,
    a: &SiteSet,
    b: &Arc<SiteSet>,
    solver: Arc<dyn SolverStrategy>,
) -> Result<PotentialSolve> {
    if a.is_empty() {
        return Err(Error::geometry("A_N is empty"));
    }
    if !boundary(a, BoundaryKind::External).union(a).is_subset(b) {
        return Err(Error::geometry("A_N is not in the interior of B_N"));
    }
    let start = Instant::now();
    let free = Arc::new(b.difference(a));
    let op = DirichletOperator::with_solver(env, Arc::clone(&free), solver)?;
    let rhs: Vec<f64> = free
        .iter()
        .map(|x| {
            (0..2 * x.dim())
                .filter(|&k| a.contains(&x.neighbor(k)))
                .map(|k| env.toward(x, k).unwrap_or(0.0))
                .sum()
        })
        .collect();
    let s = op.solver()?;
    let h = s.solve(&rhs)?;
    let seconds = start.elapsed().as_secs_f64();
    let lh = op.apply(&h);
    let rn: f64 = lh.iter().zip(&rhs).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
    let bn: f64 = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut values = SiteFunction::indicator(Arc::clone(b), a);
    for (x, v) in free.iter().zip(h) {
        values.values[b.index_of(x).unwrap()] = v;
    }
    Ok(PotentialSolve { values, residual: rn / bn.max(f64::MIN_POSITIVE), seconds, solver: s.name() })
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingPoint {
    pub n: u32,
    pub a_sites: usize,
    pub b_sites: usize,
    pub capacity: f64,
    /// `N^{2-d} cap_{B_N}(A_N)`.
    pub scaled_capacity: f64,
    pub residual: f64,
    pub solve_seconds: f64,
    pub solver: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingSweep {
    pub a: ShapeSpec,
    pub b: ShapeSpec,
    pub points: Vec<ScalingPoint>,
    pub verdict: CauchyVerdict,
}

fn check_ladder(ns: &[u32]) -> Result<()> {
    if ns.is_empty() || ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param("the N ladder must be non-empty and strictly increasing"));
    }
    Ok(())
}

/// `N^{2-d} cap_{B_N}(A_N)` for each `N`, all in the same environment.
pub fn capacity_scaling(
    env: &dyn EdgeWeights,
    a: &ShapeSpec,
    b: &ShapeSpec,
    ns: &[u32],
    solver: Arc<dyn SolverStrategy>,
    contraction: f64,
) -> Result<ScalingSweep> {
    check_ladder(ns)?;
    let d = env.dim();
    let mut points = Vec::new();
    for &n in ns {
        let a_n = blow_up(a, n, d)?;
        let b_n = Arc::new(blow_up(b, n, d)?);
        let sol = solve_potential(env, &a_n, &b_n, Arc::clone(&solver))?;
        let capacity = capacity_of_potential(env, &sol.values)?;
        points.push(ScalingPoint {
            n,
            a_sites: a_n.len(),
            b_sites: b_n.len(),
            capacity,
            scaled_capacity: capacity * f64::from(n).powi(2 - d as i32),
            residual: sol.residual,
            solve_seconds: sol.seconds,
            solver: sol.solver.to_string(),
        });
    }
    let values: Vec<f64> = points.iter().map(|p| p.scaled_capacity).collect();
    Ok(ScalingSweep { a: a.clone(), b: b.clone(), verdict: cauchy_verdict(&values, contraction), points })
}

/// Shapes with closed-form capacities for `a = σ² I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuumShape {
    Ball { r: f64 },
    /// The ball of radius `r` killed outside the ball of radius `big_r`.
    Annulus { r: f64, big_r: f64 },
}

/// `½ ∫ σ² |∇u|²` of the equilibrium potential: `2πσ² r` for a ball and
/// `2πσ² rR/(R-r)` for the killed annulus. Only `d = 3`.
pub fn continuum_capacity_reference(shape: ContinuumShape, sigma2: f64, d: usize) -> Result<f64> {
    if d != 3 {
        return Err(Error::param(format!("closed-form capacities are implemented for d = 3 only, got d = {d}")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::param("σ² must be positive"));
    }
    let tau = 2.0 * std::f64::consts::PI * sigma2;
    match shape {
        ContinuumShape::Ball { r } if r > 0.0 => Ok(tau * r),
        ContinuumShape::Annulus { r, big_r } if r > 0.0 && big_r > r => Ok(tau * r * big_r / (big_r - r)),
        _ => Err(Error::param(format!("degenerate continuum shape {shape:?}"))),
    }
}

/// `𝒽(ρ) = (1/ρ - 1/R)/(1/r - 1/R)` between the spheres, 1 inside, 0 outside.
pub fn annulus_potential(rho: f64, r: f64, big_r: f64) -> f64 {
    if rho <= r {
        1.0
    } else if rho >= big_r {
        0.0
    } else {
        (1.0 / rho - 1.0 / big_r) / (1.0 / r - 1.0 / big_r)
    }
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// `∫ 𝒽_{ball_r, ball_R}(x) η(x) dx` in `d = 3` for `η` radial about the origin,
/// by Simpson's rule in the radius with a break at `r`.
pub fn annulus_pairing_reference(r: f64, big_r: f64, eta: &dyn TestFunction) -> Result<f64> {
    let (center, support) = eta.support();
    if center.len() != 3 {
        return Err(Error::param("the annulus pairing reference is implemented for d = 3 only"));
    }
    if center.iter().any(|c| *c != 0.0) {
        return Err(Error::param("the annulus pairing reference needs η centred at the origin"));
    }
    let integrand = |rho: f64| {
        4.0 * std::f64::consts::PI * rho * rho * annulus_potential(rho, r, big_r) * eta.eval(&[rho, 0.0, 0.0])
    };
    let top = big_r.min(support);
    Ok(simpson(integrand, 0.0, r.min(top), 20_000) + simpson(integrand, r.min(top), top, 20_000))
}

#[derive(Clone, Debug, Serialize)]
pub struct PairingSweep {
    /// `(N, N^{-d} Σ_x h_{A_N,B_N}(x) η(x/N))`.
    pub points: Vec<(u32, f64)>,
    pub verdict: CauchyVerdict,
}

/// Riemann pairings of the discrete harmonic potential with `η` along the ladder.
pub fn potential_pairing_convergence(
    env: &dyn EdgeWeights,
    a: &ShapeSpec,
    b: &ShapeSpec,
    eta: &dyn TestFunction,
    ns: &[u32],
    solver: Arc<dyn SolverStrategy>,
    contraction: f64,
) -> Result<PairingSweep> {
    check_ladder(ns)?;
    let d = env.dim();
    let mut points = Vec::new();
    for &n in ns {
        let a_n = blow_up(a, n, d)?;
        let b_n = Arc::new(blow_up(b, n, d)?);
        let sol = solve_potential(env, &a_n, &b_n, Arc::clone(&solver))?;
        points.push((n, pairing(&sol.values, eta, f64::from(n))));
    }
    let values: Vec<f64> = points.iter().map(|p| p.1).collect();
    Ok(PairingSweep { verdict: cauchy_verdict(&values, contraction), points })
}
