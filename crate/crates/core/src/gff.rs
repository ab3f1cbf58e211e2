//! The Gaussian free field with covariance `g_U = L_U⁻¹`.
//!
//! Samples are exact: `φ = Pᵀ L⁻ᵀ z` from the sparse Cholesky factor
//! `P L_U Pᵀ = L Lᵀ` and i.i.d. standard normals `z`. Sample `i` under master
//! seed `s` always uses the stream `(s, "gff.sample", i)`.

use std::io::{Read, Write};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::lattice::{BoundaryKind, Cuboid, Site, SiteSet};
use crate::potential::{
    capacity_of_potential, equilibrium_measure_from, harmonic_potential, DirichletOperator, SiteFunction,
};
use crate::rng::stream;

/// One realisation of the field on its sample domain (zero outside).
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub field: SiteFunction,
    pub seed: u64,
    pub index: u64,
}

impl FieldSample {
    pub fn domain(&self) -> &Arc<SiteSet> {
        &self.field.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.field.values
    }

    #[inline]
    pub fn at(&self, x: &Site) -> f64 {
        self.field.at(x)
    }

    /// Binary snapshot: magic, version, d, count, seed, index, then the values
    /// as little-endian f64 in domain order.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.domain().dim() as u32).to_le_bytes())?;
        w.write_all(&(self.values().len() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.index.to_le_bytes())?;
        for v in self.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a snapshot written for `domain`.
    pub fn read_binary<R: Read>(r: &mut R, domain: Arc<SiteSet>) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format("not a field snapshot (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) as usize != domain.dim() {
            return Err(Error::Format("snapshot dimension differs from the domain".into()));
        }
        r.read_exact(&mut b8)?;
        let n = u64::from_le_bytes(b8) as usize;
        if n != domain.len() {
            return Err(Error::Format(format!("snapshot has {n} values, domain has {}", domain.len())));
        }
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let index = u64::from_le_bytes(b8);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(Self { field: SiteFunction::new(domain, values), seed, index })
    }
}

const FIELD_MAGIC: &[u8; 8] = b"RCGFFFLD";

/// Exact sampler sharing one factorisation across replicas.
#[derive(Clone)]
pub struct GffSampler {
    op: Arc<DirichletOperator>,
}

impl GffSampler {
    pub fn new(op: Arc<DirichletOperator>) -> Result<Self> {
        op.factor()?;
        Ok(Self { op })
    }

    pub fn from_env(env: &dyn EdgeWeights, domain: Arc<SiteSet>) -> Result<Self> {
        Self::new(Arc::new(DirichletOperator::new(env, domain)?))
    }

    pub fn operator(&self) -> &Arc<DirichletOperator> {
        &self.op
    }

    pub fn domain(&self) -> &Arc<SiteSet> {
        self.op.domain()
    }

    pub fn sample_labelled(&self, label: &str, seed: u64, index: u64) -> FieldSample {
        let mut rng = stream(seed, label, index);
        let z: Vec<f64> = (0..self.op.n()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let values = self.op.factor().expect("factor prepared in new").sample_transform(&z);
        FieldSample { field: SiteFunction::new(Arc::clone(self.domain()), values), seed, index }
    }

    pub fn sample(&self, seed: u64, index: u64) -> FieldSample {
        self.sample_labelled("gff.sample", seed, index)
    }

    /// Samples `indices` of the stream `label`, identical to
    /// [`Self::sample_labelled`] but sharing passes over the factor.
    pub fn sample_block(&self, label: &str, seed: u64, indices: std::ops::Range<u64>) -> Vec<FieldSample> {
        let n = self.op.n();
        let k = (indices.end - indices.start) as usize;
        let mut z = Vec::with_capacity(n * k);
        for i in indices.clone() {
            let mut rng = stream(seed, label, i);
            z.extend((0..n).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        }
        let factor = self.op.factor().expect("factor prepared in new");
        factor
            .sample_transform_block(&z, k)
            .into_iter()
            .zip(indices)
            .map(|(values, index)| FieldSample { field: SiteFunction::new(Arc::clone(self.domain()), values), seed, index })
            .collect()
    }

    /// Applies `f` to samples `0..count` of `label`, in parallel blocks of `block`.
    pub fn map_samples<T: Send>(
        &self,
        label: &str,
        seed: u64,
        count: u64,
        block: u64,
        f: impl Fn(&FieldSample) -> T + Sync,
    ) -> Vec<T> {
        let block = block.max(1);
        let starts: Vec<u64> = (0..count).step_by(block as usize).collect();
        starts
            .into_par_iter()
            .flat_map_iter(|s| {
                let samples = self.sample_block(label, seed, s..(s + block).min(count));
                samples.iter().map(&f).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Samples with indices `0..count`, generated in parallel.
    pub fn sample_many(&self, count: u64, seed: u64) -> Vec<FieldSample> {
        (0..count).into_par_iter().map(|i| self.sample(seed, i)).collect()
    }
}

/// `count` independent samples of the field on `U`.
pub fn sample_gff(env: &dyn EdgeWeights, u: Arc<SiteSet>, count: u64, seed: u64) -> Result<Vec<FieldSample>> {
    Ok(GffSampler::from_env(env, u)?.sample_many(count, seed))
}

/// `φ = ξ + ψ` relative to a subdomain `U'`.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub sub: Arc<SiteSet>,
    /// Harmonic average: harmonic in `U'`, equal to `φ` off `U'`.
    pub xi: SiteFunction,
    /// Local field `φ - ξ`, zero off `U'`.
    pub psi: SiteFunction,
}

/// Reusable harmonic-extension solver for one subdomain `U'` of a sample domain `U`.
pub struct Decomposer {
    sample_domain: Arc<SiteSet>,
    op: DirichletOperator,
    /// For each `U'` site: (index in `U` or `None` if outside `U`, conductance) of neighbours off `U'`.
    exits: Vec<Vec<(Option<usize>, f64)>>,
    /// Index in `U` of each `U'` site.
    sub_in_domain: Vec<usize>,
}

impl Decomposer {
    /// `strict` requires `∂U' ⊆ U`. Otherwise values outside `U` are taken as 0,
    /// which is exact for the field killed outside `U`.
    pub fn new(env: &dyn EdgeWeights, sample_domain: Arc<SiteSet>, sub: Arc<SiteSet>, strict: bool) -> Result<Self> {
        if !sub.is_subset(&sample_domain) {
            return Err(Error::geometry("subdomain U' is not contained in the sample domain U"));
        }
        if strict {
            let ext = crate::lattice::boundary(&sub, BoundaryKind::External);
            if let Some(x) = ext.iter().find(|x| !sample_domain.contains(x)) {
                return Err(Error::geometry(format!(
                    "boundary of U' reaches {x}, outside the sample domain U"
                )));
            }
        }
        let op = DirichletOperator::new(env, Arc::clone(&sub))?;
        let mut exits = Vec::with_capacity(sub.len());
        for x in sub.iter() {
            let mut row = Vec::new();
            for k in 0..2 * x.dim() {
                let y = x.neighbor(k);
                if !sub.contains(&y) {
                    let w = env.toward(x, k).ok_or_else(|| Error::MissingEdge(format!("{x} direction {k}")))?;
                    row.push((sample_domain.index_of(&y), w));
                }
            }
            exits.push(row);
        }
        let sub_in_domain = sub.iter().map(|x| sample_domain.index_of(x).unwrap()).collect();
        Ok(Self { sample_domain, op, exits, sub_in_domain })
    }

    pub fn sub(&self) -> &Arc<SiteSet> {
        self.op.domain()
    }

    /// Harmonic extension into `U'` of the values of `phi` (stored on `U`).
    pub fn harmonic_extension(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = self
            .exits
            .iter()
            .map(|row| row.iter().map(|(j, w)| j.map_or(0.0, |j| w * phi[j])).sum())
            .collect();
        self.op.solve(&rhs)
    }

    pub fn decompose(&self, phi: &FieldSample) -> Result<Decomposition> {
        if !Arc::ptr_eq(phi.domain(), &self.sample_domain) && **phi.domain() != *self.sample_domain {
            return Err(Error::geometry("field sample lives on a different domain"));
        }
        let xi_sub = self.harmonic_extension(phi.values())?;
        let mut xi = phi.values().to_vec();
        let mut psi = vec![0.0; xi.len()];
        for (k, &j) in self.sub_in_domain.iter().enumerate() {
            xi[j] = xi_sub[k];
            psi[j] = phi.values()[j] - xi_sub[k];
        }
        Ok(Decomposition {
            sub: Arc::clone(self.sub()),
            xi: SiteFunction::new(Arc::clone(&self.sample_domain), xi),
            psi: SiteFunction::new(Arc::clone(&self.sample_domain), psi),
        })
    }
}

/// Strict one-shot decomposition.
pub fn decompose(phi: &FieldSample, env: &dyn EdgeWeights, sub: Arc<SiteSet>) -> Result<Decomposition> {
    Decomposer::new(env, Arc::clone(phi.domain()), sub, true)?.decompose(phi)
}

/// Samples `φ + f` with the log-likelihood ratio `log dP/dP̃`.
#[derive(Clone)]
pub struct TiltedSampler {
    sampler: GffSampler,
    f: Vec<f64>,
    lf: Vec<f64>,
    energy: f64,
}

impl TiltedSampler {
    pub fn new(sampler: GffSampler, f: &SiteFunction) -> Result<Self> {
        if !f.support_within(sampler.domain()) {
            return Err(Error::geometry("tilt f is not supported in the sample domain"));
        }
        let fv: Vec<f64> = sampler.domain().iter().map(|x| f.at(x)).collect();
        let lf = sampler.operator().apply(&fv);
        let energy = fv.iter().zip(&lf).map(|(a, b)| a * b).sum();
        Ok(Self { sampler, f: fv, lf, energy })
    }

    pub fn sampler(&self) -> &GffSampler {
        &self.sampler
    }

    pub fn shift(&self) -> &[f64] {
        &self.f
    }

    /// `ℰ(f, f)`; the relative entropy of the tilted law is half of it.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// `log dP/dP̃ (φ̃) = -ℰ(f, φ̃) + ½ ℰ(f, f)`. For `f`, `φ̃` vanishing off `U`
    /// one has `ℰ(f, φ̃) = fᵀ L_U φ̃`.
    pub fn log_weight(&self, tilted: &[f64]) -> f64 {
        -self.lf.iter().zip(tilted).map(|(a, b)| a * b).sum::<f64>() + 0.5 * self.energy
    }

    pub fn sample(&self, seed: u64, index: u64) -> (FieldSample, f64) {
        let mut s = self.sampler.sample_labelled("gff.tilted", seed, index);
        for (v, f) in s.field.values.iter_mut().zip(&self.f) {
            *v += f;
        }
        let lw = self.log_weight(&s.field.values);
        (s, lw)
    }

    pub fn sample_many(&self, count: u64, seed: u64) -> Vec<(FieldSample, f64)> {
        (0..count).into_par_iter().map(|i| self.sample(seed, i)).collect()
    }
}

pub fn tilted_sample(
    env: &dyn EdgeWeights,
    u: Arc<SiteSet>,
    f: &SiteFunction,
    count: u64,
    seed: u64,
) -> Result<Vec<(FieldSample, f64)>> {
    Ok(TiltedSampler::new(GffSampler::from_env(env, u)?, f)?.sample_many(count, seed))
}

/// `L`-box geometry: `B_z = z + [0,L)^d ⊆ D_z = z + [-3L,4L)^d ⊆ U_z = z + [-KL+1, KL-1)^d`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoxScale {
    pub l: i32,
    pub k: i32,
}

/// Smallest `K` for which `D_z ⊆ U_z` leaves a layer between them.
pub const MIN_K: i32 = 5;

impl BoxScale {
    pub fn new(l: i32, k: i32) -> Result<Self> {
        if l < 1 {
            return Err(Error::param("box scale L must be at least 1"));
        }
        if k < MIN_K {
            return Err(Error::param(format!("separation constant K must be at least {MIN_K}")));
        }
        Ok(Self { l, k })
    }

    fn half_open(z: &Site, a: i32, b: i32) -> Cuboid {
        let d = z.dim();
        Cuboid::new(z.add(&Site::splat(d, a)), z.add(&Site::splat(d, b - 1)))
    }

    pub fn b_box(&self, z: &Site) -> Cuboid {
        Self::half_open(z, 0, self.l)
    }

    pub fn d_box(&self, z: &Site) -> Cuboid {
        Self::half_open(z, -3 * self.l, 4 * self.l)
    }

    pub fn u_box(&self, z: &Site) -> Cuboid {
        Self::half_open(z, -self.k * self.l + 1, self.k * self.l - 1)
    }

    pub fn on_lattice(&self, z: &Site) -> bool {
        z.coords().iter().all(|c| c.rem_euclid(self.l) == 0)
    }

    /// `U_z` together with its outer boundary must lie in `domain`.
    pub fn check_within(&self, z: &Site, domain: &SiteSet) -> Result<()> {
        let outer = self.u_box(z).expand(1);
        let bb = domain.bounding_box().ok_or_else(|| Error::geometry("empty sample domain"))?;
        if !bb.contains_cuboid(&outer) || outer.iter().any(|x| !domain.contains(&x)) {
            return Err(Error::geometry(format!("U_z for z = {z} (plus boundary) leaves the sample domain")));
        }
        Ok(())
    }
}

/// Well-separated `L`-boxes with their `D` and `U` neighbourhoods.
#[derive(Clone, Debug, Serialize)]
pub struct BoxCollection {
    pub l: i32,
    pub k: i32,
    pub centers: Vec<Site>,
}

impl BoxCollection {
    pub fn new(l: i32, k: i32, centers: Vec<Site>) -> Result<Self> {
        let scale = BoxScale::new(l, k)?;
        if centers.is_empty() {
            return Err(Error::param("box collection is empty"));
        }
        for z in &centers {
            if !scale.on_lattice(z) {
                return Err(Error::geometry(format!("center {z} is not in L·Z^d")));
            }
        }
        for (i, a) in centers.iter().enumerate() {
            for b in &centers[i + 1..] {
                if a.linf_dist(b) < (4 * k + 1) * l {
                    return Err(Error::geometry(format!(
                        "centers {a} and {b} are closer than (4K+1)L = {}",
                        (4 * k + 1) * l
                    )));
                }
            }
        }
        Ok(Self { l, k, centers })
    }

    pub fn scale(&self) -> BoxScale {
        BoxScale { l: self.l, k: self.k }
    }

    pub fn b_box(&self, z: &Site) -> Cuboid {
        self.scale().b_box(z)
    }

    pub fn d_box(&self, z: &Site) -> Cuboid {
        self.scale().d_box(z)
    }

    pub fn u_box(&self, z: &Site) -> Cuboid {
        self.scale().u_box(z)
    }

    /// `C = ∪ B_z`.
    pub fn c_set(&self) -> SiteSet {
        let d = self.centers[0].dim();
        SiteSet::from_sites(d, self.centers.iter().flat_map(|z| self.b_box(z).iter()))
    }

    pub fn check_within(&self, domain: &SiteSet) -> Result<()> {
        self.centers.iter().try_for_each(|z| self.scale().check_within(z, domain))
    }
}

/// The linear functional `Z_{m,β,ρ} = c · φ` with exact second moments.
#[derive(Clone, Debug)]
pub struct ZFunctional {
    /// `c` on the sample domain.
    pub coefficients: SiteFunction,
    /// `λ(z) = e_C(B_z) / cap(C)` (killed on the sample domain).
    pub lambda: Vec<f64>,
    pub cap_c: f64,
    /// `Var(Z_m)`.
    pub var_zm: f64,
    /// `Var(Z_{m,β,ρ})`.
    pub variance: f64,
    /// `Var(Z_m) · cap(C)`.
    pub var_times_cap: f64,
    /// `E[Z_m ⟨𝕏_N, η⟩]`.
    pub g_term: f64,
    /// `E[⟨𝕏_N, η⟩²]`.
    pub h_term: f64,
    /// `N^{-d} ⟨η_N, h_C⟩`.
    pub eta_h_term: f64,
}

impl ZFunctional {
    pub fn evaluate(&self, phi: &FieldSample) -> f64 {
        phi.domain().iter().zip(phi.values()).map(|(x, v)| v * self.coefficients.at(x)).sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZParams {
    pub beta: f64,
    pub rho: f64,
}

impl Default for ZParams {
    fn default() -> Self {
        Self { beta: 0.0, rho: 0.0 }
    }
}

/// `P_x[X_{T_U} = ·]` for the walk started at `x ∈ U`, via `g_U(x, ·)`.
pub fn exit_law_from(env: &dyn EdgeWeights, op_u: &DirichletOperator, x: &Site) -> Result<Vec<(Site, f64)>> {
    let g = crate::potential::green_column(op_u, x)?;
    let u = op_u.domain();
    let mut out: std::collections::BTreeMap<Site, f64> = Default::default();
    for (i, v) in u.iter().enumerate() {
        for k in 0..2 * v.dim() {
            let y = v.neighbor(k);
            if !u.contains(&y) {
                let w = env.toward(v, k).ok_or_else(|| Error::MissingEdge(format!("{v} direction {k}")))?;
                *out.entry(y).or_insert(0.0) += g.values[i] * w;
            }
        }
    }
    Ok(out.into_iter().collect())
}

/// Builds `Z_{m,β,ρ} = (1+ρ) Σ_z λ(z) ξ^z_{m(z)} - β ⟨𝕏_N, η⟩` on the sample
/// domain of `sample_op`. `eta` is the discretised test function
/// `N^{-d} η(x/N)`, required when `β ≠ 0`.
pub fn functional_z(
    env: &dyn EdgeWeights,
    sample_op: &DirichletOperator,
    coll: &BoxCollection,
    m: &[Site],
    eta: Option<&SiteFunction>,
    params: ZParams,
) -> Result<ZFunctional> {
    let dom = Arc::clone(sample_op.domain());
    coll.check_within(&dom)?;
    if m.len() != coll.centers.len() {
        return Err(Error::param("m must assign one point to every center"));
    }
    for (z, mz) in coll.centers.iter().zip(m) {
        if !coll.d_box(z).contains(mz) {
            return Err(Error::geometry(format!("m(z) = {mz} is outside D_z for z = {z}")));
        }
    }
    if params.beta != 0.0 && eta.is_none() {
        return Err(Error::param("β ≠ 0 requires a test function"));
    }

    let c_set = Arc::new(coll.c_set());
    let h_c = harmonic_potential(env, &c_set, &dom)?;
    let e_c = equilibrium_measure_from(env, &c_set, &h_c.values)?;
    let cap_c = capacity_of_potential(env, &h_c.values)?;
    let lambda: Vec<f64> = coll
        .centers
        .iter()
        .map(|z| coll.b_box(z).iter().map(|x| e_c.at(&x)).sum::<f64>() / cap_c)
        .collect();

    let mut zm = vec![0.0; dom.len()];
    for ((z, mz), lam) in coll.centers.iter().zip(m).zip(&lambda) {
        let uz = Arc::new(coll.u_box(z).to_site_set());
        let op = DirichletOperator::new(env, uz)?;
        for (y, p) in exit_law_from(env, &op, mz)? {
            if let Some(j) = dom.index_of(&y) {
                zm[j] += lam * p;
            }
        }
    }
    let gzm = sample_op.solve(&zm)?;
    let var_zm: f64 = zm.iter().zip(&gzm).map(|(a, b)| a * b).sum();

    let etav: Vec<f64> = match eta {
        Some(e) => dom.iter().map(|x| e.at(x)).collect(),
        None => vec![0.0; dom.len()],
    };
    let geta = sample_op.solve(&etav)?;
    let g_term: f64 = zm.iter().zip(&geta).map(|(a, b)| a * b).sum();
    let h_term: f64 = etav.iter().zip(&geta).map(|(a, b)| a * b).sum();
    let eta_h_term: f64 = dom.iter().zip(&etav).map(|(x, e)| e * h_c.values.at(x)).sum();

    let (beta, rho) = (params.beta, params.rho);
    let coeffs: Vec<f64> = zm.iter().zip(&etav).map(|(z, e)| (1.0 + rho) * z - beta * e).collect();
    let variance = (1.0 + rho).powi(2) * var_zm + beta * beta * h_term - 2.0 * (1.0 + rho) * beta * g_term;
    Ok(ZFunctional {
        coefficients: SiteFunction::new(dom, coeffs),
        lambda,
        cap_c,
        var_zm,
        variance,
        var_times_cap: var_zm * cap_c,
        g_term,
        h_term,
        eta_h_term,
    })
}
