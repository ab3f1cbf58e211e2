//! Sparse symmetric positive-definite solvers.
//!
//! Two routes share one trait: a simplicial Cholesky factorisation under a
//! geometric nested-dissection ordering (exact, exposes the triangular factor
//! for Gaussian sampling) and Jacobi-preconditioned conjugate gradients (for
//! domains too large to factor).

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::registry::{NamedSpec, Registry};

/// Symmetric matrix in compressed sparse row form, both triangles stored,
/// column indices sorted within each row.
#[derive(Clone, Debug)]
pub struct CsrSym {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl CsrSym {
    /// Builds from per-row `(col, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in r {
                if last == Some(c) {
                    *val.last_mut().unwrap() += v;
                } else {
                    col.push(c);
                    val.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col.len());
        }
        Self { n, row_ptr, col, val }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col[r.clone()].iter().copied().zip(self.val[r].iter().copied())
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).find(|e| e.0 == i).map_or(0.0, |e| e.1)).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col[r.clone()].binary_search(&j) {
            Ok(k) => self.val[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k]];
            }
            *yi = s;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        (0..self.n)
            .map(|i| {
                let mut s = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.val[k] * y[self.col[k]];
                }
                x[i] * s
            })
            .sum()
    }

    /// `P A Pᵀ` where `perm[new] = old`.
    fn permuted(&self, perm: &[usize], inv: &[usize]) -> CsrSym {
        let rows = perm
            .iter()
            .map(|&old| self.row(old).map(|(c, v)| (inv[c], v)).collect())
            .collect();
        CsrSym::from_rows(rows)
    }
}

/// Nested-dissection ordering from lattice coordinates. Returns `perm` with
/// `perm[new] = old`. Valid for nearest-neighbour graphs: sites on a
/// coordinate plane separate the two half-spaces.
pub fn nested_dissection(coords: &[Site]) -> Vec<usize> {
    let mut perm = Vec::with_capacity(coords.len());
    let mut idx: Vec<usize> = (0..coords.len()).collect();
    dissect(coords, &mut idx, &mut perm);
    perm
}

const ND_LEAF: usize = 64;

fn dissect(coords: &[Site], idx: &mut [usize], out: &mut Vec<usize>) {
    if idx.len() <= ND_LEAF {
        out.extend_from_slice(idx);
        return;
    }
    let d = coords[idx[0]].dim();
    let (mut lo, mut hi) = (coords[idx[0]], coords[idx[0]]);
    for &i in idx.iter() {
        for a in 0..d {
            lo.set(a, lo.get(a).min(coords[i].get(a)));
            hi.set(a, hi.get(a).max(coords[i].get(a)));
        }
    }
    let axis = (0..d).max_by_key(|&a| (hi.get(a) - lo.get(a), std::cmp::Reverse(a))).unwrap();
    if hi.get(axis) == lo.get(axis) {
        out.extend_from_slice(idx);
        return;
    }
    idx.sort_unstable_by_key(|&i| (coords[i].get(axis), i));
    let m = coords[idx[idx.len() / 2]].get(axis);
    let a = idx.partition_point(|&i| coords[i].get(axis) < m);
    let b = idx.partition_point(|&i| coords[i].get(axis) <= m);
    let (left, rest) = idx.split_at_mut(a);
    let (sep, right) = rest.split_at_mut(b - a);
    dissect(coords, left, out);
    dissect(coords, right, out);
    out.extend_from_slice(sep);
}

/// `C = L Lᵀ` for `C = P A Pᵀ`, with `L` stored by columns, diagonal first.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    n: usize,
    perm: Vec<usize>,
    inv: Vec<usize>,
    col_ptr: Vec<usize>,
    row: Vec<usize>,
    val: Vec<f64>,
}

fn etree(c: &CsrSym) -> Vec<usize> {
    let n = c.n();
    let mut parent = vec![usize::MAX; n];
    let mut ancestor = vec![usize::MAX; n];
    for k in 0..n {
        for (i, _) in c.row(k) {
            if i >= k {
                continue;
            }
            let mut i = i;
            while i != usize::MAX && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == usize::MAX {
                    parent[i] = k;
                    break;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), in topological
/// order, written to the tail of `stack`; returns the start offset.
fn ereach(c: &CsrSym, k: usize, parent: &[usize], mark: &mut [usize], stack: &mut [usize]) -> usize {
    let n = c.n();
    let mut top = n;
    mark[k] = k;
    for (i, _) in c.row(k) {
        if i > k {
            continue;
        }
        let mut i = i;
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

impl CholeskyFactor {
    pub fn new(a: &CsrSym, perm: Vec<usize>) -> Result<Self> {
        let n = a.n();
        if perm.len() != n {
            return Err(Error::solver("permutation length mismatch"));
        }
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let c = a.permuted(&perm, &inv);
        let parent = etree(&c);

        let mut mark = vec![usize::MAX; n];
        let mut stack = vec![0usize; n];
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut mark, &mut stack);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut col_ptr = vec![0usize; n + 1];
        for j in 0..n {
            col_ptr[j + 1] = col_ptr[j] + counts[j];
        }
        let nnz = col_ptr[n];
        let mut row = vec![0usize; nnz];
        let mut val = vec![0.0; nnz];
        let mut next: Vec<usize> = col_ptr[..n].to_vec();
        let mut x = vec![0.0; n];
        mark.fill(usize::MAX);

        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut mark, &mut stack);
            for (i, v) in c.row(k) {
                if i <= k {
                    x[i] += v;
                }
            }
            let mut dk = x[k];
            x[k] = 0.0;
            for &j in &stack[top..] {
                let lkj = x[j] / val[col_ptr[j]];
                x[j] = 0.0;
                for p in col_ptr[j] + 1..next[j] {
                    x[row[p]] -= val[p] * lkj;
                }
                dk -= lkj * lkj;
                let p = next[j];
                row[p] = k;
                val[p] = lkj;
                next[j] += 1;
            }
            if !(dk > 0.0) {
                return Err(Error::solver(format!("matrix not positive definite at pivot {k} (d = {dk})")));
            }
            let p = next[k];
            row[p] = k;
            val[p] = dk.sqrt();
            next[k] += 1;
        }
        Ok(Self { n, perm, inv, col_ptr, row, val })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// `y ← L⁻¹ y` in permuted coordinates.
    fn lsolve(&self, y: &mut [f64]) {
        for j in 0..self.n {
            let p0 = self.col_ptr[j];
            y[j] /= self.val[p0];
            let yj = y[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                y[self.row[p]] -= self.val[p] * yj;
            }
        }
    }

    /// `y ← L⁻ᵀ y` in permuted coordinates.
    fn ltsolve(&self, y: &mut [f64]) {
        for j in (0..self.n).rev() {
            let p0 = self.col_ptr[j];
            let mut s = y[j];
            for p in p0 + 1..self.col_ptr[j + 1] {
                s -= self.val[p] * y[self.row[p]];
            }
            y[j] = s / self.val[p0];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        self.lsolve(&mut y);
        self.ltsolve(&mut y);
        (0..self.n).map(|old| y[self.inv[old]]).collect()
    }

    /// `Pᵀ L⁻ᵀ z`: maps i.i.d. standard normals to `N(0, A⁻¹)`.
    pub fn sample_transform(&self, z: &[f64]) -> Vec<f64> {
        let mut y = z.to_vec();
        self.ltsolve(&mut y);
        (0..self.n).map(|old| y[self.inv[old]]).collect()
    }

    /// [`Self::sample_transform`] applied to `k` vectors at once; `z` holds them
    /// back to back. Results are bitwise identical to the one-vector route.
    pub fn sample_transform_block(&self, z: &[f64], k: usize) -> Vec<Vec<f64>> {
        let n = self.n;
        assert_eq!(z.len(), n * k, "block length mismatch");
        let mut y = vec![0.0; n * k];
        for c in 0..k {
            for j in 0..n {
                y[j * k + c] = z[c * n + j];
            }
        }
        let mut s = vec![0.0; k];
        for j in (0..n).rev() {
            let p0 = self.col_ptr[j];
            s.copy_from_slice(&y[j * k..(j + 1) * k]);
            for p in p0 + 1..self.col_ptr[j + 1] {
                let v = self.val[p];
                let r = self.row[p] * k;
                for c in 0..k {
                    s[c] -= v * y[r + c];
                }
            }
            let d = self.val[p0];
            for c in 0..k {
                y[j * k + c] = s[c] / d;
            }
        }
        (0..k).map(|c| (0..n).map(|old| y[self.inv[old] * k + c]).collect()).collect()
    }

    /// `log det A`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|j| self.val[self.col_ptr[j]].ln()).sum::<f64>()
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients; returns the solution and stats.
pub fn pcg(a: &CsrSym, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n();
    let inv_diag: Vec<f64> = a.diag().iter().map(|d| 1.0 / d).collect();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, SolveStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    for it in 1..=max_iter {
        a.matvec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::solver(format!("PCG breakdown (pᵀAp = {pap})")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok((x, SolveStats { iterations: it, relative_residual: rnorm / bnorm }));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(Error::solver(format!(
        "PCG did not reach relative residual {tol} in {max_iter} iterations (reached {:.3e})",
        rnorm / bnorm
    )))
}

/// A prepared solver for one matrix.
pub trait SpdSolve: Send + Sync {
    fn name(&self) -> &'static str;

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>>;

    /// The triangular factor, when the route is direct.
    fn factor(&self) -> Option<&CholeskyFactor> {
        None
    }

    /// Independent right-hand sides solved in parallel.
    fn solve_many(&self, rhs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rhs.par_iter().map(|b| self.solve(b)).collect()
    }
}

/// A named way of preparing an [`SpdSolve`] for a matrix.
pub trait SolverStrategy: Send + Sync {
    fn prepare(&self, a: Arc<CsrSym>, coords: &[Site]) -> Result<Box<dyn SpdSolve>>;
}

pub struct DirectSolve {
    factor: CholeskyFactor,
}

impl SpdSolve for DirectSolve {
    fn name(&self) -> &'static str {
        "cholesky"
    }
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.factor.solve(b))
    }
    fn factor(&self) -> Option<&CholeskyFactor> {
        Some(&self.factor)
    }
}

pub struct IterativeSolve {
    a: Arc<CsrSym>,
    tol: f64,
    max_iter: usize,
}

impl SpdSolve for IterativeSolve {
    fn name(&self) -> &'static str {
        "pcg"
    }
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        pcg(&self.a, b, self.tol, self.max_iter).map(|r| r.0)
    }
}

pub struct Cholesky;

impl SolverStrategy for Cholesky {
    fn prepare(&self, a: Arc<CsrSym>, coords: &[Site]) -> Result<Box<dyn SpdSolve>> {
        let perm = nested_dissection(coords);
        Ok(Box::new(DirectSolve { factor: CholeskyFactor::new(&a, perm)? }))
    }
}

pub struct Pcg {
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverStrategy for Pcg {
    fn prepare(&self, a: Arc<CsrSym>, _: &[Site]) -> Result<Box<dyn SpdSolve>> {
        Ok(Box::new(IterativeSolve { a, tol: self.tol, max_iter: self.max_iter }))
    }
}

/// Direct up to `threshold` unknowns, iterative beyond.
pub struct Auto {
    pub threshold: usize,
    pub pcg: Pcg,
}

impl SolverStrategy for Auto {
    fn prepare(&self, a: Arc<CsrSym>, coords: &[Site]) -> Result<Box<dyn SpdSolve>> {
        if a.n() <= self.threshold {
            Cholesky.prepare(a, coords)
        } else {
            self.pcg.prepare(a, coords)
        }
    }
}

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_DIRECT_THRESHOLD: usize = 40_000;

pub fn solver_registry() -> Registry<dyn SolverStrategy> {
    let mut r: Registry<dyn SolverStrategy> = Registry::new("solver");
    r.register("cholesky", |_| Ok(Box::new(Cholesky)));
    r.register("pcg", |s| {
        Ok(Box::new(Pcg {
            tol: s.f64_param_or("tol", DEFAULT_TOL)?,
            max_iter: s.f64_param_or("max_iter", 100_000.0)? as usize,
        }))
    });
    r.register("auto", |s| {
        Ok(Box::new(Auto {
            threshold: s.f64_param_or("threshold", DEFAULT_DIRECT_THRESHOLD as f64)? as usize,
            pcg: Pcg {
                tol: s.f64_param_or("tol", DEFAULT_TOL)?,
                max_iter: s.f64_param_or("max_iter", 100_000.0)? as usize,
            },
        }))
    });
    r
}

pub fn build_solver(spec: &NamedSpec) -> Result<Arc<dyn SolverStrategy>> {
    Ok(Arc::from(solver_registry().build(spec)?))
}

pub fn default_solver() -> Arc<dyn SolverStrategy> {
    Arc::new(Auto {
        threshold: DEFAULT_DIRECT_THRESHOLD,
        pcg: Pcg { tol: DEFAULT_TOL, max_iter: 100_000 },
    })
}
