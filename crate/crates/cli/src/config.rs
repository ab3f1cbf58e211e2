//! Declarative experiment configuration (JSON).

use std::path::Path;

use serde::{Deserialize, Serialize};

use rcgff::environment::{build_law, KeyedEnvironment};
use rcgff::homogenization::ContinuumShape;
use rcgff::lattice::{ball, blow_up, boundary, check_dim, sphere, BoundaryKind, ShapeSpec, Site, SiteSet};
use rcgff::registry::NamedSpec;
use rcgff::Result;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub lambda: f64,
    pub environment: EnvironmentSection,
    pub master_seed: u64,
    #[serde(default)]
    pub solver: Option<NamedSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub env: Option<EnvRun>,
    #[serde(default)]
    pub potential: Option<PotentialRun>,
    #[serde(default)]
    pub gff: Option<GffRun>,
    #[serde(default)]
    pub percolation: Option<PercolationRun>,
    #[serde(default)]
    pub disconnect: Option<DisconnectRun>,
    #[serde(default)]
    pub solidify: Option<SolidifyRun>,
    #[serde(default)]
    pub homogenize: Option<HomogenizeRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub law: NamedSpec,
    /// Defaults to `master_seed`.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub solver_residual: f64,
    pub heat_kernel: f64,
    /// SE multiplier for single-estimator checks.
    pub se_unit: f64,
    /// SE multiplier for cross-estimator agreement.
    pub se_cross: f64,
    /// Cauchy verdict: last relative change below this fraction of the previous.
    pub contraction: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { solver_residual: 1e-10, heat_kernel: 1e-12, se_unit: 5.0, se_cross: 3.0, contraction: 0.5 }
    }
}

/// A finite site set: a blown-up shape, an `ℓ∞` ball, `S_N`, or explicit sites.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    BlowUp { shape: ShapeSpec, n: u32 },
    LatticeBall { center: Vec<i32>, radius: u32 },
    Sphere { m: f64, n: u32 },
    Sites { sites: Vec<Vec<i32>> },
}

impl SetSpec {
    pub fn build(&self, d: usize) -> Result<SiteSet> {
        let site = |c: &[i32]| -> Result<Site> {
            if c.len() != d {
                return Err(rcgff::Error::InvalidParameter(format!("site {c:?} does not have {d} coordinates")));
            }
            Ok(Site::new(c))
        };
        match self {
            SetSpec::BlowUp { shape, n } => blow_up(shape, *n, d),
            SetSpec::LatticeBall { center, radius } => Ok(ball(site(center)?, *radius)),
            SetSpec::Sphere { m, n } => sphere(*m, *n, d),
            SetSpec::Sites { sites } => Ok(SiteSet::from_sites(d, sites.iter().map(|c| site(c)).collect::<Result<Vec<_>>>()?)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvRun {
    pub lo: Vec<i32>,
    pub hi: Vec<i32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialRun {
    pub a: SetSpec,
    pub b: SetSpec,
    /// Optional killed heat kernel `q_{t,B}(x, ·)`.
    #[serde(default)]
    pub heat_kernel: Option<HeatKernelRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatKernelRun {
    pub t: f64,
    pub x: Vec<i32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GffRun {
    pub domain: SetSpec,
    pub samples: u64,
    #[serde(default)]
    pub write_fields: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PercolationRun {
    pub alphas: Vec<f64>,
    pub scales: Vec<i32>,
    #[serde(default = "default_pad")]
    pub pad: i32,
    pub replicas: u64,
}

fn default_pad() -> i32 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisconnectRun {
    pub a: ShapeSpec,
    pub b: ShapeSpec,
    pub m: f64,
    pub n: u32,
    pub alpha: f64,
    pub alpha_star_ref: f64,
    pub epsilon: f64,
    pub delta_shell: f64,
    pub replicas: u64,
    #[serde(default)]
    pub direct_replicas: Option<u64>,
    /// Tilted disconnection frequency is reported for each of these `ε`.
    #[serde(default)]
    pub epsilon_ladder: Vec<f64>,
    #[serde(default)]
    pub repulsion: Option<RepulsionRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepulsionRun {
    pub eta: NamedSpec,
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolidifyRun {
    pub a: ShapeSpec,
    /// Killing domain `B` for escape probabilities and capacities.
    pub b: ShapeSpec,
    pub ns: Vec<u32>,
    /// Shell offset in units of `N`.
    pub offset: f64,
    pub epsilon: u32,
    pub puncture_fractions: Vec<f64>,
    #[serde(default = "default_green_constant")]
    pub green_constant: f64,
    #[serde(default)]
    pub scales: Option<ScalesRun>,
}

fn default_green_constant() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesRun {
    pub i: u32,
    pub j: u32,
    #[serde(default)]
    pub l: Option<u32>,
    pub ell_star: u32,
    #[serde(default = "default_ell_min_base")]
    pub ell_min_base: u32,
}

fn default_ell_min_base() -> u32 {
    rcgff::interfaces::DEFAULT_ELL_MIN_BASE
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeRun {
    pub a: ShapeSpec,
    pub b: ShapeSpec,
    pub ns: Vec<u32>,
    #[serde(default)]
    pub eta: Option<NamedSpec>,
    #[serde(default)]
    pub continuum: Option<ContinuumRun>,
    #[serde(default)]
    pub diffusivity: Option<DiffusivityRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuumRun {
    pub shape: ContinuumShape,
    pub sigma2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusivityRun {
    pub clock: rcgff::potential::Clock,
    pub t_horizon: f64,
    pub window: i32,
    pub replicas: u64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> std::result::Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("schema violation in {}: {e}", path.display()))
    }

    pub fn environment_seed(&self) -> u64 {
        self.environment.seed.unwrap_or(self.master_seed)
    }

    pub fn keyed_environment(&self) -> Result<KeyedEnvironment> {
        check_dim(self.d)?;
        let law = build_law(&self.environment.law)?;
        law.validate(self.lambda)?;
        Ok(KeyedEnvironment::new(self.d, law, self.environment_seed()))
    }

    /// Schema and cross-field checks; never runs solvers.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.keyed_environment() {
            out.push(format!("environment: {e}"));
            return out;
        }
        let d = self.d;
        if let Some(s) = &self.solver {
            if let Err(e) = rcgff::linalg::build_solver(s) {
                out.push(format!("solver: {e}"));
            }
        }
        let t = &self.tolerances;
        if !(t.solver_residual > 0.0 && t.heat_kernel > 0.0 && t.se_unit > 0.0 && t.se_cross > 0.0) {
            out.push("tolerances: all tolerances and SE multipliers must be positive".into());
        }
        if !(t.contraction > 0.0 && t.contraction <= 1.0) {
            out.push("tolerances: contraction must lie in (0, 1]".into());
        }
        if let Some(r) = &self.env {
            if r.lo.len() != d || r.hi.len() != d || r.lo.iter().zip(&r.hi).any(|(a, b)| a > b) {
                out.push("env: window corners must have d coordinates with lo ≤ hi".into());
            }
        }
        if let Some(p) = &self.potential {
            match (p.a.build(d), p.b.build(d)) {
                (Ok(a), Ok(b)) => {
                    if a.is_empty() {
                        out.push("potential: A is empty".into());
                    } else if !a.is_subset(&b) {
                        out.push("potential: A ⊄ B (A must be contained in B)".into());
                    }
                    if let Some(hk) = &p.heat_kernel {
                        if !(hk.t >= 0.0) {
                            out.push("potential.heat_kernel: t must be non-negative".into());
                        }
                        if hk.x.len() != d || !b.contains(&Site::new(&hk.x)) {
                            out.push("potential.heat_kernel: x must be a site of B".into());
                        }
                    }
                }
                (a, b) => {
                    for e in [a.err(), b.err()].into_iter().flatten() {
                        out.push(format!("potential: {e}"));
                    }
                }
            }
        }
        if let Some(g) = &self.gff {
            match g.domain.build(d) {
                Ok(dom) if dom.is_empty() => out.push("gff: domain is empty".into()),
                Ok(_) => {}
                Err(e) => out.push(format!("gff: {e}")),
            }
            if g.samples < 2 {
                out.push("gff: at least two samples are needed".into());
            }
        }
        if let Some(p) = &self.percolation {
            if p.scales.is_empty() || p.scales[0] < 1 || p.scales.windows(2).any(|w| w[1] <= w[0]) {
                out.push("percolation: scales must be positive and strictly increasing".into());
            }
            if p.pad < 1 {
                out.push("percolation: insufficient padding (pad ≥ 1 keeps ∂B(x,2L) off the killing boundary)".into());
            }
            if p.alphas.is_empty() || p.replicas == 0 {
                out.push("percolation: need at least one level and one replica".into());
            }
        }
        if let Some(r) = &self.disconnect {
            out.extend(disconnect_diagnostics(r, d));
        }
        if let Some(s) = &self.solidify {
            out.extend(solidify_diagnostics(s, d));
        }
        if let Some(h) = &self.homogenize {
            out.extend(homogenize_diagnostics(h, d));
        }
        out
    }
}

fn ladder_ok(ns: &[u32]) -> bool {
    !ns.is_empty() && ns[0] >= 1 && ns.windows(2).all(|w| w[1] > w[0])
}

/// `A ∪ ∂A ⊆ B` at every `N`; returns a diagnostic naming the violated nesting.
fn nesting(label: &str, a: &ShapeSpec, b: &ShapeSpec, ns: &[u32], d: usize) -> Option<String> {
    for &n in ns {
        let (a_n, b_n) = match (blow_up(a, n, d), blow_up(b, n, d)) {
            (Ok(x), Ok(y)) => (x, y),
            (x, y) => return Some(format!("{label}: {}", x.err().or(y.err()).unwrap())),
        };
        if a_n.is_empty() {
            return Some(format!("{label}: A_N is empty at N = {n}"));
        }
        if !a_n.union(&boundary(&a_n, BoundaryKind::External)).is_subset(&b_n) {
            return Some(format!("{label}: A ⊄ interior of B at N = {n} (A_N ∪ ∂A_N must lie in B_N)"));
        }
    }
    None
}

fn disconnect_diagnostics(r: &DisconnectRun, d: usize) -> Vec<String> {
    let mut out = Vec::new();
    if !(r.delta_shell >= 0.0) {
        out.push("disconnect: δ must be non-negative".into());
        return out;
    }
    let inflated = r.a.clone().inflate(r.delta_shell);
    out.extend(nesting("disconnect", &inflated, &r.b, &[r.n], d));
    if let (Ok(s_n), Ok(b_n), Ok(a_n)) = (sphere(r.m, r.n, d), blow_up(&r.b, r.n, d), blow_up(&r.a, r.n, d)) {
        let bbox = s_n.bounding_box().map(|c| c.to_site_set());
        if bbox.as_ref().is_none_or(|bb| !bb.is_subset(&b_n)) {
            out.push("disconnect: the box spanned by S_N must lie inside B_N".into());
        }
        if a_n.iter().any(|x| x.linf_norm() as f64 >= (r.m * f64::from(r.n)).floor()) {
            out.push("disconnect: A_N must lie strictly inside S_N".into());
        }
    }
    if r.replicas == 0 {
        out.push("disconnect: at least one tilted replica is needed".into());
    }
    if let Some(rep) = &r.repulsion {
        if let Err(e) = rcgff::testfn::build_test_function(&rep.eta) {
            out.push(format!("disconnect.repulsion: {e}"));
        }
    }
    out
}

fn solidify_diagnostics(s: &SolidifyRun, d: usize) -> Vec<String> {
    let mut out = Vec::new();
    if !ladder_ok(&s.ns) {
        out.push("solidify: ns must be positive and strictly increasing".into());
        return out;
    }
    if s.epsilon == 0 {
        out.push("solidify: ε must be at least 1".into());
    }
    if s.puncture_fractions.iter().any(|f| !(0.0..1.0).contains(f)) {
        out.push("solidify: puncture fractions must lie in [0, 1)".into());
    }
    if !(s.offset >= 0.0) {
        out.push("solidify: offset must be non-negative".into());
    }
    for &n in &s.ns {
        if let (Ok(a_n), Ok(b_n)) = (blow_up(&s.a, n, d), blow_up(&s.b, n, d)) {
            let u0 = a_n.thicken((s.offset * f64::from(n)).round() as i32);
            if !u0.union(&boundary(&u0, BoundaryKind::External)).is_subset(&b_n) {
                out.push(format!("solidify: the shell around A_N does not fit inside B_N at N = {n}"));
            }
        } else {
            out.push(format!("solidify: invalid shapes at N = {n}"));
        }
    }
    if let Some(sc) = &s.scales {
        match rcgff::interfaces::scale_system(d, sc.i, sc.j, sc.l, sc.ell_star, sc.ell_min_base) {
            Ok(sys) if !sys.compatible => out.push(format!(
                "solidify.scales: ℓ* = {} is not (I,J,L)-compatible: ℓ0 - (I+1)(J+1)L = {} - {} must exceed ℓ_min(1/(200J)) = {}",
                sc.ell_star,
                sys.ell0,
                (sc.i + 1) * (sc.j + 1) * sys.l,
                sys.ell_min
            )),
            Ok(_) => {}
            Err(e) => out.push(format!("solidify.scales: {e}")),
        }
    }
    out
}

fn homogenize_diagnostics(h: &HomogenizeRun, d: usize) -> Vec<String> {
    let mut out = Vec::new();
    if !ladder_ok(&h.ns) {
        out.push("homogenize: ns must be positive and strictly increasing".into());
        return out;
    }
    out.extend(nesting("homogenize", &h.a, &h.b, &h.ns, d));
    if let Some(eta) = &h.eta {
        if let Err(e) = rcgff::testfn::build_test_function(eta) {
            out.push(format!("homogenize.eta: {e}"));
        }
    }
    if let Some(c) = &h.continuum {
        if let Err(e) = rcgff::homogenization::continuum_capacity_reference(c.shape, c.sigma2, d) {
            out.push(format!("homogenize.continuum: {e}"));
        }
    }
    if let Some(df) = &h.diffusivity {
        // A walk at time t has spread about √(2t) per axis; ask for six of those.
        let need = 6.0 * (2.0 * df.t_horizon).sqrt();
        if !(df.t_horizon > 0.0) || df.replicas < 2 {
            out.push("homogenize.diffusivity: need t_horizon > 0 and at least two replicas".into());
        } else if f64::from(df.window) < need {
            out.push(format!(
                "homogenize.diffusivity: insufficient padding: window {} < 6√(2t) = {need:.1}",
                df.window
            ));
        }
    }
    out
}
