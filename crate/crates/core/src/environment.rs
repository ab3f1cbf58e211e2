//! Uniformly elliptic conductances `ω ∈ [λ, 1]` on nearest-neighbour edges.
//!
//! Every edge `{x, x + e_i}` is addressed canonically by its base `x` and axis
//! `i`. Random laws draw the weight of an edge from a ChaCha stream keyed by
//! `(seed, x, i)`, so any two windows sampled with the same seed agree on the
//! edges they share, and shifted environments can be re-derived on demand.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::{check_dim, Cuboid, Site};
use crate::registry::{NamedSpec, Registry};
use crate::rng::{key_hash, label_hash};

/// A stationary law for the conductance of a single edge.
pub trait ConductanceLaw: Send + Sync {
    fn spec(&self) -> NamedSpec;

    /// Smallest and largest attainable weights.
    fn range(&self) -> (f64, f64);

    /// Weight of edge `{base, base + e_axis}` under `seed`.
    fn weight(&self, base: &Site, axis: usize, seed: u64) -> f64;

    /// Mean of `ω_e` under the law (spatial mean for periodic laws).
    fn mean(&self) -> f64;

    fn validate(&self, lambda: f64) -> Result<()> {
        let (lo, hi) = self.range();
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::param(format!("λ must lie in (0,1), got {lambda}")));
        }
        if lo < lambda - 1e-15 || hi > 1.0 + 1e-15 || lo > hi {
            return Err(Error::param(format!(
                "{}: attainable weights [{lo}, {hi}] leave [λ, 1] = [{lambda}, 1]",
                self.spec()
            )));
        }
        Ok(())
    }
}

fn edge_rng(base: &Site, axis: usize, seed: u64) -> ChaCha8Rng {
    let key = key_hash(base.coords().iter().map(|&c| i64::from(c)).chain([axis as i64]));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ label_hash("environment.edge"));
    rng.set_stream(key);
    rng
}

#[derive(Clone, Debug)]
pub struct Constant(pub f64);

impl ConductanceLaw for Constant {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("constant", json!({"c": self.0}))
    }
    fn range(&self) -> (f64, f64) {
        (self.0, self.0)
    }
    fn weight(&self, _: &Site, _: usize, _: u64) -> f64 {
        self.0
    }
    fn mean(&self) -> f64 {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct IidUniform {
    pub low: f64,
    pub high: f64,
}

impl ConductanceLaw for IidUniform {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("iid_uniform", json!({"low": self.low, "high": self.high}))
    }
    fn range(&self) -> (f64, f64) {
        (self.low, self.high)
    }
    fn weight(&self, base: &Site, axis: usize, seed: u64) -> f64 {
        let u: f64 = edge_rng(base, axis, seed).random();
        self.low + (self.high - self.low) * u
    }
    fn mean(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

/// `b` with probability `p`, otherwise `a`.
#[derive(Clone, Debug)]
pub struct IidTwoPoint {
    pub a: f64,
    pub b: f64,
    pub p: f64,
}

impl ConductanceLaw for IidTwoPoint {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("iid_two_point", json!({"a": self.a, "b": self.b, "p": self.p}))
    }
    fn range(&self) -> (f64, f64) {
        if self.p <= 0.0 {
            (self.a, self.a)
        } else if self.p >= 1.0 {
            (self.b, self.b)
        } else {
            (self.a.min(self.b), self.a.max(self.b))
        }
    }
    fn weight(&self, base: &Site, axis: usize, seed: u64) -> f64 {
        let u: f64 = edge_rng(base, axis, seed).random();
        if u < self.p { self.b } else { self.a }
    }
    fn mean(&self) -> f64 {
        (1.0 - self.p) * self.a + self.p * self.b
    }
}

/// `a` on edges whose base has even coordinate sum, `b` otherwise.
#[derive(Clone, Debug)]
pub struct Checkerboard {
    pub a: f64,
    pub b: f64,
}

impl ConductanceLaw for Checkerboard {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("checkerboard", json!({"a": self.a, "b": self.b}))
    }
    fn range(&self) -> (f64, f64) {
        (self.a.min(self.b), self.a.max(self.b))
    }
    fn weight(&self, base: &Site, _: usize, _: u64) -> f64 {
        if base.coords().iter().sum::<i32>().rem_euclid(2) == 0 { self.a } else { self.b }
    }
    fn mean(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

/// Registry of the built-in laws, keyed by their config names.
pub fn law_registry() -> Registry<dyn ConductanceLaw> {
    let mut r: Registry<dyn ConductanceLaw> = Registry::new("conductance law");
    r.register("constant", |s| Ok(Box::new(Constant(s.f64_param("c")?))));
    r.register("iid_uniform", |s| {
        let low = s.f64_param("low")?;
        let high = s.f64_param_or("high", 1.0)?;
        Ok(Box::new(IidUniform { low, high }))
    });
    r.register("iid_two_point", |s| {
        let p = s.f64_param("p")?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(format!("iid_two_point: p = {p} outside [0,1]")));
        }
        Ok(Box::new(IidTwoPoint { a: s.f64_param("a")?, b: s.f64_param("b")?, p }))
    });
    r.register("checkerboard", |s| Ok(Box::new(Checkerboard { a: s.f64_param("a")?, b: s.f64_param("b")? })));
    r
}

pub fn build_law(spec: &NamedSpec) -> Result<Arc<dyn ConductanceLaw>> {
    Ok(Arc::from(law_registry().build(spec)?))
}

/// Read access to edge weights.
pub trait EdgeWeights: Send + Sync {
    fn dim(&self) -> usize;

    /// Weight of `{base, base + e_axis}`, `None` if not available.
    fn edge(&self, base: &Site, axis: usize) -> Option<f64>;

    /// Weight of the edge from `x` in direction `k` (see [`Site::neighbor`]).
    #[inline]
    fn toward(&self, x: &Site, k: usize) -> Option<f64> {
        let axis = k / 2;
        if k % 2 == 0 {
            self.edge(x, axis)
        } else {
            self.edge(&x.step(axis, false), axis)
        }
    }

    /// `ω_{x,y}` for nearest neighbours; symmetric by construction.
    fn weight(&self, x: &Site, y: &Site) -> Result<f64> {
        let diff = y.sub(x);
        if diff.l1_norm() != 1 {
            return Err(Error::param(format!("{x} and {y} are not nearest neighbours")));
        }
        let axis = (0..x.dim()).find(|&i| diff.get(i) != 0).unwrap();
        let base = if diff.get(axis) > 0 { *x } else { *y };
        self.edge(&base, axis).ok_or_else(|| Error::MissingEdge(format!("{{{x}, {y}}}")))
    }

    /// `ω_x = Σ_{z ~ x} ω_{x,z}`.
    fn site_weight(&self, x: &Site) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..2 * self.dim() {
            total += self
                .toward(x, k)
                .ok_or_else(|| Error::MissingEdge(format!("{x} direction {k}")))?;
        }
        Ok(total)
    }
}

/// Conductances computed on demand from a keyed law; defined on all of Z^d.
#[derive(Clone)]
pub struct KeyedEnvironment {
    d: usize,
    law: Arc<dyn ConductanceLaw>,
    seed: u64,
    offset: Site,
}

impl KeyedEnvironment {
    pub fn new(d: usize, law: Arc<dyn ConductanceLaw>, seed: u64) -> Self {
        Self { d, law, seed, offset: Site::origin(d) }
    }

    pub fn law(&self) -> &Arc<dyn ConductanceLaw> {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `τ_x ω`.
    pub fn shift(&self, x: &Site) -> Self {
        let mut s = self.clone();
        s.offset = s.offset.add(x);
        s
    }
}

impl EdgeWeights for KeyedEnvironment {
    fn dim(&self) -> usize {
        self.d
    }
    #[inline]
    fn edge(&self, base: &Site, axis: usize) -> Option<f64> {
        Some(self.law.weight(&base.add(&self.offset), axis, self.seed))
    }
}

/// Materialised conductances for every edge touching a box window.
#[derive(Clone)]
pub struct Conductances {
    lambda: f64,
    window: Cuboid,
    /// Bases `[lo - 1, hi]`; slot `index(base) * d + axis`.
    store: Cuboid,
    weights: Vec<f64>,
    law: Option<Arc<dyn ConductanceLaw>>,
    seed: u64,
}

impl std::fmt::Debug for Conductances {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Conductances")
            .field("lambda", &self.lambda)
            .field("window", &self.window)
            .field("law", &self.law.as_ref().map(|l| l.spec().to_string()))
            .field("seed", &self.seed)
            .finish()
    }
}

impl Conductances {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn window(&self) -> Cuboid {
        self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn law(&self) -> Option<&Arc<dyn ConductanceLaw>> {
        self.law.as_ref()
    }

    /// Raw weights in canonical order (base lexicographic, then axis).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Canonical edge list `(base, axis)` matching [`Conductances::weights`].
    pub fn edges(&self) -> impl Iterator<Item = (Site, usize)> + '_ {
        let d = self.window.dim();
        self.store.iter().flat_map(move |b| (0..d).map(move |i| (b, i)))
    }

    /// Whether `{base, base + e_axis}` touches the window.
    fn touches(&self, base: &Site, axis: usize) -> bool {
        self.window.contains(base) || self.window.contains(&base.step(axis, true))
    }

    /// Builds from explicit weights (for tests and file loading). Edges not
    /// touching the window are ignored and stored as NaN.
    pub fn from_fn(lambda: f64, window: Cuboid, mut f: impl FnMut(&Site, usize) -> f64) -> Result<Self> {
        check_dim(window.dim())?;
        let d = window.dim();
        let store = Cuboid::new(window.lo.add(&Site::splat(d, -1)), window.hi);
        let mut c = Self { lambda, window, store, weights: Vec::with_capacity(store.volume() * d), law: None, seed: 0 };
        for b in store.iter() {
            for i in 0..d {
                let w = if c.touches(&b, i) { f(&b, i) } else { f64::NAN };
                c.weights.push(w);
            }
        }
        c.check_ellipticity()?;
        Ok(c)
    }

    fn check_ellipticity(&self) -> Result<()> {
        for (w, (b, i)) in self.weights.iter().zip(self.edges()) {
            if self.touches(&b, i) && !(*w >= self.lambda - 1e-15 && *w <= 1.0 + 1e-15) {
                return Err(Error::param(format!(
                    "edge ({b}, axis {i}) has weight {w} outside [λ, 1] = [{}, 1]",
                    self.lambda
                )));
            }
        }
        Ok(())
    }

    /// `τ_x ω` relabelled onto the window `W - x`; no weights are recomputed.
    pub fn shift(&self, x: &Site) -> Self {
        let neg = x.scale(-1);
        Self {
            window: self.window.translate(&neg),
            store: self.store.translate(&neg),
            ..self.clone()
        }
    }

    /// `τ_x ω` materialised on `window`. Weights outside the stored region are
    /// re-derived from the keyed law; without a law that is an error.
    pub fn shift_onto(&self, x: &Site, window: Cuboid) -> Result<Self> {
        let mut out = Self::from_fn(self.lambda, window, |_, _| self.lambda)?;
        out.law = self.law.clone();
        out.seed = self.seed;
        let d = window.dim();
        let store = out.store;
        for (slot, b) in store.iter().enumerate() {
            for i in 0..d {
                if !out.touches(&b, i) {
                    continue;
                }
                let src = b.add(x);
                let w = match self.edge(&src, i) {
                    Some(w) => w,
                    None => match &self.law {
                        Some(law) => law.weight(&src, i, self.seed),
                        None => {
                            return Err(Error::MissingEdge(format!(
                                "shifted edge ({src}, axis {i}) lies outside the stored window and the law is unknown"
                            )))
                        }
                    },
                };
                out.weights[slot * d + i] = w;
            }
        }
        Ok(out)
    }

    /// Writes the binary environment file.
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        let d = self.window.dim();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&self.lambda.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for i in 0..d {
            w.write_all(&self.window.lo.get(i).to_le_bytes())?;
        }
        for i in 0..d {
            w.write_all(&self.window.hi.get(i).to_le_bytes())?;
        }
        let law = serde_json::to_vec(&self.law.as_ref().map(|l| l.spec()))?;
        w.write_all(&(law.len() as u64).to_le_bytes())?;
        w.write_all(&law)?;
        w.write_all(&(self.weights.len() as u64).to_le_bytes())?;
        for x in &self.weights {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an environment file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported environment format version {version}")));
        }
        let d = read_u32(r)? as usize;
        check_dim(d)?;
        let lambda = read_f64(r)?;
        let seed = read_u64(r)?;
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for _ in 0..d {
            lo.push(read_i32(r)?);
        }
        for _ in 0..d {
            hi.push(read_i32(r)?);
        }
        let window = Cuboid::new(Site::new(&lo), Site::new(&hi));
        let law_len = read_u64(r)? as usize;
        let mut law_buf = vec![0u8; law_len];
        r.read_exact(&mut law_buf)?;
        let law_spec: Option<NamedSpec> = serde_json::from_slice(&law_buf)?;
        let count = read_u64(r)? as usize;
        let store = Cuboid::new(window.lo.add(&Site::splat(d, -1)), window.hi);
        if count != store.volume() * d {
            return Err(Error::Format(format!("expected {} weights, header says {count}", store.volume() * d)));
        }
        let mut weights = Vec::with_capacity(count);
        for _ in 0..count {
            weights.push(read_f64(r)?);
        }
        let law = law_spec.map(|s| build_law(&s)).transpose()?;
        let c = Self { lambda, window, store, weights, law, seed };
        c.check_ellipticity()?;
        Ok(c)
    }

    /// Header fields as JSON, for the sidecar file.
    pub fn sidecar(&self) -> Value {
        json!({
            "format": "RCGFFENV",
            "version": FORMAT_VERSION,
            "d": self.window.dim(),
            "lambda": self.lambda,
            "seed": self.seed,
            "window": {"lo": self.window.lo, "hi": self.window.hi},
            "law": self.law.as_ref().map(|l| l.spec()),
            "edge_order": "base lexicographic over [lo-1, hi], then axis; NaN for edges not touching the window",
            "edge_count": self.weights.len(),
        })
    }
}

const MAGIC: &[u8; 8] = b"RCGFFENV";
const FORMAT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
fn read_i32<R: Read>(r: &mut R) -> Result<i32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(i32::from_le_bytes(b))
}
fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

impl EdgeWeights for Conductances {
    fn dim(&self) -> usize {
        self.window.dim()
    }

    #[inline]
    fn edge(&self, base: &Site, axis: usize) -> Option<f64> {
        if !self.touches(base, axis) {
            return None;
        }
        let k = self.store.linear_index(base)?;
        Some(self.weights[k * self.window.dim() + axis])
    }
}

/// Samples `law` on every edge touching `window`.
pub fn sample_environment(
    law: &Arc<dyn ConductanceLaw>,
    lambda: f64,
    window: Cuboid,
    seed: u64,
) -> Result<Conductances> {
    law.validate(lambda)?;
    if window.is_empty() {
        return Err(Error::geometry("environment window is empty"));
    }
    let mut c = Conductances::from_fn(lambda, window, |b, i| law.weight(b, i, seed))?;
    c.law = Some(Arc::clone(law));
    c.seed = seed;
    Ok(c)
}

/// Convenience: law from a spec, then [`sample_environment`].
pub fn sample_from_spec(spec: &NamedSpec, lambda: f64, window: Cuboid, seed: u64) -> Result<Conductances> {
    sample_environment(&build_law(spec)?, lambda, window, seed)
}

/// Serialisable description of an environment.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnvironmentSpec {
    pub law: NamedSpec,
    pub lambda: f64,
    pub seed: u64,
}
