//! Potential theory of the weighted graph on finite domains.
//!
//! Everything is expressed through the killed Laplacian `L_U` with
//! `L[x][x] = ω_x` and `L[x][y] = -ω_{x,y}` for neighbours inside `U`. Its
//! inverse is the Green function of the walk killed on leaving `U` (for both
//! clocks, since `I - P_U = D⁻¹ L_U` with `D = diag(ω_x)`).

mod heat;
mod walk;

pub use heat::{heat_kernel_killed, poisson_truncation, HeatKernel};
pub use walk::{
    hitting_probability_mc, walk_endpoint, walk_simulate, Clock, StopReason, StopRules, WalkEnd, WalkPath,
};

use std::sync::{Arc, OnceLock};

use serde::Serialize;

use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::lattice::{ball, Site, SiteSet};
use crate::linalg::{default_solver, CholeskyFactor, CsrSym, SolverStrategy, SpdSolve};

/// A real function on Z^d stored on a finite domain; zero elsewhere.
#[derive(Clone, Debug)]
pub struct SiteFunction {
    pub domain: Arc<SiteSet>,
    pub values: Vec<f64>,
}

impl SiteFunction {
    pub fn new(domain: Arc<SiteSet>, values: Vec<f64>) -> Self {
        assert_eq!(domain.len(), values.len());
        Self { domain, values }
    }

    pub fn zeros(domain: Arc<SiteSet>) -> Self {
        let n = domain.len();
        Self::new(domain, vec![0.0; n])
    }

    pub fn from_fn(domain: Arc<SiteSet>, f: impl FnMut(&Site) -> f64) -> Self {
        let values = domain.iter().map(f).collect();
        Self::new(domain, values)
    }

    pub fn indicator(domain: Arc<SiteSet>, set: &SiteSet) -> Self {
        Self::from_fn(domain, |x| if set.contains(x) { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn at(&self, x: &Site) -> f64 {
        self.domain.index_of(x).map_or(0.0, |i| self.values[i])
    }

    /// The same function stored on another domain (values outside it dropped).
    pub fn restrict_to(&self, domain: Arc<SiteSet>) -> Self {
        Self::from_fn(domain, |x| self.at(x))
    }

    pub fn support_within(&self, set: &SiteSet) -> bool {
        self.domain.iter().zip(&self.values).all(|(x, v)| *v == 0.0 || set.contains(x))
    }
}

/// The killed Laplacian on `U` together with a lazily prepared solver.
pub struct DirichletOperator {
    domain: Arc<SiteSet>,
    matrix: Arc<CsrSym>,
    site_weights: Vec<f64>,
    strategy: Arc<dyn SolverStrategy>,
    solver: OnceLock<Box<dyn SpdSolve>>,
    factor: OnceLock<CholeskyFactor>,
}

impl DirichletOperator {
    pub fn new(env: &dyn EdgeWeights, domain: Arc<SiteSet>) -> Result<Self> {
        Self::with_solver(env, domain, default_solver())
    }

    pub fn with_solver(env: &dyn EdgeWeights, domain: Arc<SiteSet>, strategy: Arc<dyn SolverStrategy>) -> Result<Self> {
        if domain.is_empty() {
            return Err(Error::geometry("Dirichlet operator on an empty domain"));
        }
        let d = domain.dim();
        let mut rows = Vec::with_capacity(domain.len());
        let mut site_weights = Vec::with_capacity(domain.len());
        for (i, x) in domain.iter().enumerate() {
            let mut row = Vec::with_capacity(2 * d + 1);
            let mut wx = 0.0;
            for k in 0..2 * d {
                let w = env.toward(x, k).ok_or_else(|| Error::MissingEdge(format!("{x} direction {k}")))?;
                wx += w;
                if let Some(j) = domain.index_of(&x.neighbor(k)) {
                    row.push((j, -w));
                }
            }
            row.push((i, wx));
            site_weights.push(wx);
            rows.push(row);
        }
        Ok(Self {
            domain,
            matrix: Arc::new(CsrSym::from_rows(rows)),
            site_weights,
            strategy,
            solver: OnceLock::new(),
            factor: OnceLock::new(),
        })
    }

    pub fn domain(&self) -> &Arc<SiteSet> {
        &self.domain
    }

    pub fn matrix(&self) -> &CsrSym {
        &self.matrix
    }

    pub fn n(&self) -> usize {
        self.domain.len()
    }

    /// `ω_x` for the `i`-th domain site.
    pub fn site_weight(&self, i: usize) -> f64 {
        self.site_weights[i]
    }

    pub fn site_weights(&self) -> &[f64] {
        &self.site_weights
    }

    pub fn solver(&self) -> Result<&dyn SpdSolve> {
        if let Some(s) = self.solver.get() {
            return Ok(s.as_ref());
        }
        let s = self.strategy.prepare(Arc::clone(&self.matrix), self.domain.members())?;
        let _ = self.solver.set(s);
        Ok(self.solver.get().unwrap().as_ref())
    }

    /// `L_U⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solver()?.solve(b)
    }

    /// The Cholesky factor of `L_U`, computed on first use even when the
    /// configured solver is iterative.
    pub fn factor(&self) -> Result<&CholeskyFactor> {
        if let Some(f) = self.solver()?.factor() {
            return Ok(f);
        }
        if let Some(f) = self.factor.get() {
            return Ok(f);
        }
        let perm = crate::linalg::nested_dissection(self.domain.members());
        let f = CholeskyFactor::new(&self.matrix, perm)?;
        let _ = self.factor.set(f);
        Ok(self.factor.get().unwrap())
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }
}

/// What [`green_killed`] should return.
#[derive(Clone, Copy, Debug)]
pub enum GreenMode {
    FullMatrix,
    Column(Site),
    Entry(Site, Site),
}

#[derive(Clone, Debug)]
pub enum GreenValue {
    /// Row-major `n × n`, indexed by the domain order.
    Matrix(Vec<f64>),
    Column(SiteFunction),
    Entry(f64),
}

/// `g_U(·, y)` as a function on `U`; identically zero when `y ∉ U`.
pub fn green_column(op: &DirichletOperator, y: &Site) -> Result<SiteFunction> {
    let dom = Arc::clone(op.domain());
    match dom.index_of(y) {
        None => Ok(SiteFunction::zeros(dom)),
        Some(j) => {
            let mut e = vec![0.0; op.n()];
            e[j] = 1.0;
            Ok(SiteFunction::new(dom, op.solve(&e)?))
        }
    }
}

/// Dense `g_U` over `U × U`, row-major in domain order.
pub fn green_matrix(op: &DirichletOperator) -> Result<Vec<f64>> {
    let n = op.n();
    let rhs: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let cols = op.solver()?.solve_many(&rhs)?;
    let mut g = vec![0.0; n * n];
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            g[i * n + j] = c[i];
        }
    }
    Ok(g)
}

pub fn green_killed(op: &DirichletOperator, mode: GreenMode) -> Result<GreenValue> {
    Ok(match mode {
        GreenMode::FullMatrix => GreenValue::Matrix(green_matrix(op)?),
        GreenMode::Column(y) => GreenValue::Column(green_column(op, &y)?),
        GreenMode::Entry(x, y) => {
            if !op.domain().contains(&x) {
                GreenValue::Entry(0.0)
            } else {
                GreenValue::Entry(green_column(op, &y)?.at(&x))
            }
        }
    })
}

/// Solution of a Dirichlet problem: `h_{A,B}` on `B`, with its operator on `B ∖ A`.
pub struct HarmonicPotential {
    pub values: SiteFunction,
    /// Sites of `B ∖ A` on which `h` was solved for.
    pub free: Arc<SiteSet>,
}

fn check_nested(a: &SiteSet, b: &SiteSet) -> Result<()> {
    if a.is_empty() {
        return Err(Error::geometry("target set A is empty"));
    }
    if !a.is_subset(b) {
        return Err(Error::geometry("A is not contained in B"));
    }
    Ok(())
}

/// `h_{A,B}(x) = P_x[H_A < T_B]`: equal to 1 on `A`, 0 off `B`, harmonic on `B ∖ A`.
pub fn harmonic_potential(env: &dyn EdgeWeights, a: &SiteSet, b: &Arc<SiteSet>) -> Result<HarmonicPotential> {
    harmonic_potential_with(env, a, b, default_solver())
}

pub fn harmonic_potential_with(
    env: &dyn EdgeWeights,
    a: &SiteSet,
    b: &Arc<SiteSet>,
    solver: Arc<dyn SolverStrategy>,
) -> Result<HarmonicPotential> {
    check_nested(a, b)?;
    let free = Arc::new(b.difference(a));
    let mut values = SiteFunction::indicator(Arc::clone(b), a);
    if !free.is_empty() {
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
        let h = op.solve(&rhs)?;
        for (x, v) in free.iter().zip(h) {
            values.values[b.index_of(x).unwrap()] = v;
        }
    }
    Ok(HarmonicPotential { values, free })
}

/// `e_{A,B} = (L h_{A,B})|_A`, i.e. `e(x) = Σ_{y~x} ω_{x,y}(1 - h(y))` on `A`.
pub fn equilibrium_measure_from(env: &dyn EdgeWeights, a: &Arc<SiteSet>, h: &SiteFunction) -> Result<SiteFunction> {
    let mut e = SiteFunction::zeros(Arc::clone(a));
    for (i, x) in a.iter().enumerate() {
        let mut s = 0.0;
        for k in 0..2 * x.dim() {
            let w = env.toward(x, k).ok_or_else(|| Error::MissingEdge(format!("{x} direction {k}")))?;
            s += w * (1.0 - h.at(&x.neighbor(k)));
        }
        e.values[i] = s;
    }
    Ok(e)
}

pub fn equilibrium_measure(env: &dyn EdgeWeights, a: &Arc<SiteSet>, b: &Arc<SiteSet>) -> Result<SiteFunction> {
    let h = harmonic_potential(env, a, b)?;
    equilibrium_measure_from(env, a, &h.values)
}

/// `cap_B(A) = ℰ(h_{A,B})`, evaluated as the quadratic form `hᵀ L_B h`.
pub fn capacity(env: &dyn EdgeWeights, a: &SiteSet, b: &Arc<SiteSet>) -> Result<f64> {
    capacity_with(env, a, b, default_solver())
}

pub fn capacity_with(env: &dyn EdgeWeights, a: &SiteSet, b: &Arc<SiteSet>, solver: Arc<dyn SolverStrategy>) -> Result<f64> {
    let h = harmonic_potential_with(env, a, b, solver)?;
    capacity_of_potential(env, &h.values)
}

/// `hᵀ L_B h` for a function supported in its domain `B`.
pub fn capacity_of_potential(env: &dyn EdgeWeights, h: &SiteFunction) -> Result<f64> {
    let mut q = 0.0;
    for (i, x) in h.domain.iter().enumerate() {
        let hx = h.values[i];
        if hx == 0.0 {
            continue;
        }
        let mut lx = 0.0;
        for k in 0..2 * x.dim() {
            let w = env.toward(x, k).ok_or_else(|| Error::MissingEdge(format!("{x} direction {k}")))?;
            lx += w * (hx - h.at(&x.neighbor(k)));
        }
        q += hx * lx;
    }
    Ok(q)
}

/// `ℰ(f, g) = ½ Σ_{x~y} ω_{x,y} (f(y) - f(x)) (g(y) - g(x))`, i.e. a sum over
/// unordered edges.
pub fn dirichlet_form(env: &dyn EdgeWeights, f: &SiteFunction, g: &SiteFunction) -> Result<f64> {
    // Only edges touching supp f can contribute.
    let mut total = 0.0;
    for (i, x) in f.domain.iter().enumerate() {
        let fx = f.values[i];
        let gx = g.at(x);
        for k in 0..2 * x.dim() {
            let y = x.neighbor(k);
            let inside = f.domain.contains(&y);
            if inside && k % 2 == 1 {
                continue;
            }
            let df = f.at(&y) - fx;
            if df == 0.0 {
                continue;
            }
            let dg = g.at(&y) - gx;
            if dg == 0.0 {
                continue;
            }
            let w = env.toward(x, k).ok_or_else(|| Error::MissingEdge(format!("{x} direction {k}")))?;
            total += w * df * dg;
        }
    }
    Ok(total)
}

/// `W(h) = Σ_{x,y} g_U(x,y) h(x) h(y)`.
pub fn energy_w(op: &DirichletOperator, h: &SiteFunction) -> Result<f64> {
    if !h.support_within(op.domain()) {
        return Err(Error::geometry("support of h leaves the domain U"));
    }
    let v: Vec<f64> = op.domain().iter().map(|x| h.at(x)).collect();
    let u = op.solve(&v)?;
    Ok(v.iter().zip(&u).map(|(a, b)| a * b).sum())
}

/// `P_x[X_{T_V} = z, T_V < ∞]` for every `x ∈ V`, where `z ∉ V`.
pub fn exit_distribution(env: &dyn EdgeWeights, op_v: &DirichletOperator, z: &Site) -> Result<SiteFunction> {
    let v = op_v.domain();
    if v.contains(z) {
        return Err(Error::geometry(format!("exit point {z} lies inside the domain")));
    }
    let rhs: Vec<f64> = v
        .iter()
        .map(|x| {
            if x.is_adjacent(z) {
                env.weight(x, z).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Ok(SiteFunction::new(Arc::clone(v), op_v.solve(&rhs)?))
}

/// Finite-volume approximations of the full-space capacity.
#[derive(Clone, Debug, Serialize)]
pub struct UnkilledCapacity {
    pub radii: Vec<u32>,
    pub values: Vec<f64>,
    /// `c · cap_B(A)² / dist(B^c, A)^{d-2}` at each radius.
    pub error_bounds: Vec<f64>,
    pub value: f64,
    pub error_bound: f64,
    pub monotone: bool,
}

/// `cap_{B(0,R)}(A)` along increasing `R`, with the one-sided error
/// `0 ≤ cap_B(A) - cap(A) ≤ c cap_B(A)² / dist(B^c, A)^{d-2}`; `c` is a
/// calibration constant.
pub fn capacity_unkilled_approx(
    env: &dyn EdgeWeights,
    a: &SiteSet,
    radii: &[u32],
    green_constant: f64,
    tol: f64,
) -> Result<UnkilledCapacity> {
    if radii.is_empty() || radii.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::param("radii must be non-empty and strictly increasing"));
    }
    let d = a.dim();
    let mut values = Vec::new();
    let mut bounds = Vec::new();
    for &r in radii {
        let b = Arc::new(ball(Site::origin(d), r));
        if !a.is_subset(&b) {
            return Err(Error::geometry(format!("A is not inside B(0,{r})")));
        }
        let cap = capacity(env, a, &b)?;
        // ℓ∞ distance from A to the complement of B(0, R).
        let far = a.iter().map(|x| x.linf_norm()).max().unwrap_or(0);
        let dist = f64::from(r as i32 + 1 - far).max(1.0);
        values.push(cap);
        bounds.push(green_constant * cap * cap / dist.powi(d as i32 - 2));
    }
    let monotone = values.windows(2).all(|w| w[1] <= w[0] * (1.0 + tol) + tol);
    Ok(UnkilledCapacity {
        radii: radii.to_vec(),
        value: *values.last().unwrap(),
        error_bound: *bounds.last().unwrap(),
        values,
        error_bounds: bounds,
        monotone,
    })
}
