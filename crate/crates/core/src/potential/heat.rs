use std::sync::Arc;

use super::{DirichletOperator, SiteFunction};
use crate::error::{Error, Result};
use crate::lattice::Site;

/// Killed heat kernel `q_{t,U}(x, ·)` with its truncation data.
#[derive(Clone, Debug)]
pub struct HeatKernel {
    pub values: SiteFunction,
    /// Number of jumps summed (Poisson terms `0..=terms`).
    pub terms: usize,
    /// Chernoff bound on the neglected Poisson mass.
    pub tail_bound: f64,
}

/// Smallest `K` with `P[Pois(t) > K] ≤ e^{-t} (e t / (K+1))^{K+1} < tol`.
/// Returns `K` and the bound.
pub fn poisson_truncation(t: f64, tol: f64) -> (usize, f64) {
    if t == 0.0 {
        return (0, 0.0);
    }
    let mut k = t.ceil() as usize;
    loop {
        let m = (k + 1) as f64;
        let log_bound = -t + m * (1.0 + t.ln() - m.ln());
        if log_bound < tol.ln() {
            return (k, log_bound.exp());
        }
        k += 1;
    }
}

/// `q_{t,U}(x, y) = P_x[X_t = y, T_U > t] / ω_y` for the constant-speed walk,
/// by uniformisation: the skeleton is a discrete chain killed off `U` and the
/// number of jumps by time `t` is Poisson(t).
pub fn heat_kernel_killed(op: &DirichletOperator, t: f64, x: &Site, tol: f64) -> Result<HeatKernel> {
    if !(tol > 0.0) {
        return Err(Error::param("heat-kernel tolerance must be positive"));
    }
    if !(t >= 0.0) {
        return Err(Error::param("time must be non-negative"));
    }
    let dom = op.domain();
    let i0 = dom
        .index_of(x)
        .ok_or_else(|| Error::geometry(format!("start {x} is outside the domain")))?;
    let n = op.n();
    let omega = op.site_weights();
    let (terms, tail_bound) = poisson_truncation(t, tol);

    // v_k = δ_x P_U^k as a row vector; v_{k+1} = v_k - L (v_k / ω).
    let mut v = vec![0.0; n];
    v[i0] = 1.0;
    let mut acc = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut lw = vec![0.0; n];
    let log_t = t.ln();
    let mut log_fact = 0.0;
    for k in 0..=terms {
        if k > 0 {
            log_fact += (k as f64).ln();
        }
        let coef = if t == 0.0 {
            if k == 0 { 1.0 } else { 0.0 }
        } else {
            (-t + k as f64 * log_t - log_fact).exp()
        };
        for i in 0..n {
            acc[i] += coef * v[i];
        }
        if k == terms {
            break;
        }
        for i in 0..n {
            w[i] = v[i] / omega[i];
        }
        op.matrix().matvec_into(&w, &mut lw);
        for i in 0..n {
            v[i] -= lw[i];
        }
    }
    let values = acc.iter().zip(omega).map(|(m, o)| m / o).collect();
    Ok(HeatKernel { values: SiteFunction::new(Arc::clone(dom), values), terms, tail_bound })
}
