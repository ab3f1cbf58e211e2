//! Level sets `E^{≥α} = {φ ≥ α}` and their nearest-neighbour clusters.
//!
//! Adjacency is always the `2d`-neighbour relation `|x - y|_1 = 1`; diagonal
//! sites are never adjacent. Component diameters are `ℓ∞` diameters.

mod boxes;
mod estimators;

use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gff::FieldSample;
use crate::lattice::{Cuboid, Site, SiteSet};

pub use boxes::{
    box_fields, classify_boxes, classify_from_fields, decoupling_check, Always, BoxClassification, BoxFields, BoxFlags,
    DecouplingReport, IncreasingEvent, SiteAbove,
};
pub use estimators::{
    alpha_star_star_bracket, connectivity_function, crossing_probability, crossing_sweep, ConnectivityReport,
    CrossingPoint, CrossingSweep, DecayFit,
};

/// Membership of each domain site in `{φ ≥ α}`.
#[derive(Clone, Debug)]
pub struct LevelSet {
    pub domain: Arc<SiteSet>,
    pub alpha: f64,
    pub membership: Vec<bool>,
}

impl LevelSet {
    pub fn from_values(domain: Arc<SiteSet>, values: &[f64], alpha: f64) -> Self {
        let membership = values.iter().map(|v| *v >= alpha).collect();
        Self { domain, alpha, membership }
    }

    pub fn from_membership(domain: Arc<SiteSet>, membership: Vec<bool>) -> Self {
        assert_eq!(domain.len(), membership.len());
        Self { domain, alpha: f64::NAN, membership }
    }

    pub fn contains(&self, x: &Site) -> bool {
        self.domain.index_of(x).is_some_and(|i| self.membership[i])
    }

    pub fn count(&self) -> usize {
        self.membership.iter().filter(|m| **m).count()
    }

    pub fn to_site_set(&self) -> SiteSet {
        SiteSet::from_sorted_unchecked(
            self.domain.dim(),
            self.domain.iter().zip(&self.membership).filter(|(_, m)| **m).map(|(x, _)| *x).collect(),
        )
    }
}

/// Exact thresholding of a field sample.
pub fn level_set(phi: &FieldSample, alpha: f64) -> LevelSet {
    LevelSet::from_values(Arc::clone(phi.domain()), phi.values(), alpha)
}

/// Disjoint-set forest with path halving and union by size; the representative
/// tracked for each set is its smallest element.
struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
    min: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), size: vec![1; n], min: (0..n as u32).collect() }
    }

    fn find(&mut self, mut i: u32) -> u32 {
        while self.parent[i as usize] != i {
            let p = self.parent[self.parent[i as usize] as usize];
            self.parent[i as usize] = p;
            i = p;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
        self.min[ra as usize] = self.min[ra as usize].min(self.min[rb as usize]);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    /// Smallest domain index in the component.
    pub label: usize,
    pub size: usize,
    pub diameter: u32,
}

/// Clusters of a level set, ordered by label.
#[derive(Clone, Debug)]
pub struct ComponentLabeling {
    /// Position in `components` for each domain site, `None` off the level set.
    pub component_of: Vec<Option<u32>>,
    pub components: Vec<Component>,
}

impl ComponentLabeling {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Canonical label (smallest member index) of the cluster at domain index `i`.
    pub fn label(&self, i: usize) -> Option<usize> {
        self.component_of[i].map(|c| self.components[c as usize].label)
    }

    pub fn max_diameter(&self) -> u32 {
        self.components.iter().map(|c| c.diameter).max().unwrap_or(0)
    }
}

/// Union-find labelling of the level set.
pub fn components(s: &LevelSet) -> ComponentLabeling {
    let dom = &s.domain;
    let n = dom.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if !s.membership[i] {
            continue;
        }
        for (_, j) in dom.neighbor_indices(i) {
            if let Some(j) = j {
                if j > i && s.membership[j] {
                    uf.union(i as u32, j as u32);
                }
            }
        }
    }
    let d = dom.dim();
    let mut slot = vec![u32::MAX; n];
    let mut bounds: Vec<(Site, Site)> = Vec::new();
    let mut comps: Vec<Component> = Vec::new();
    let mut component_of = vec![None; n];
    for i in 0..n {
        if !s.membership[i] {
            continue;
        }
        let r = uf.find(i as u32) as usize;
        if slot[r] == u32::MAX {
            slot[r] = comps.len() as u32;
            comps.push(Component { label: uf.min[r] as usize, size: 0, diameter: 0 });
            let x = dom.site_of(i);
            bounds.push((x, x));
        }
        let c = slot[r] as usize;
        component_of[i] = Some(c as u32);
        comps[c].size += 1;
        let x = dom.site_of(i);
        let (lo, hi) = &mut bounds[c];
        for a in 0..d {
            lo.set(a, lo.get(a).min(x.get(a)));
            hi.set(a, hi.get(a).max(x.get(a)));
        }
    }
    for (c, (lo, hi)) in comps.iter_mut().zip(&bounds) {
        c.diameter = (0..d).map(|a| (hi.get(a) - lo.get(a)) as u32).max().unwrap_or(0);
    }
    // Sites are visited in index order, so the first member seen is the minimum
    // and `comps` is already sorted by label.
    ComponentLabeling { component_of, components: comps }
}

/// Some cluster of `s` meets both `h` and `k`.
pub fn is_connected(h: &SiteSet, k: &SiteSet, s: &LevelSet) -> bool {
    let lab = components(s);
    let hit: std::collections::HashSet<u32> =
        h.iter().filter_map(|x| s.domain.index_of(x)).filter_map(|i| lab.component_of[i]).collect();
    k.iter().filter_map(|x| s.domain.index_of(x)).filter_map(|i| lab.component_of[i]).any(|c| hit.contains(&c))
}

/// Breadth-first search inside the level set from `sources` until a `target`
/// site is reached. Agrees with [`is_connected`].
pub fn reaches(s: &LevelSet, sources: &[usize], is_target: &dyn Fn(usize) -> bool) -> bool {
    let mut seen = vec![false; s.domain.len()];
    let mut queue = VecDeque::new();
    for &i in sources {
        if s.membership[i] && !seen[i] {
            seen[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if is_target(i) {
            return true;
        }
        for (_, j) in s.domain.neighbor_indices(i) {
            if let Some(j) = j {
                if s.membership[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    false
}

/// Largest `α` for which `sources ↔ targets` in `{φ ≥ α}` inside the domain:
/// the max over paths of the min of `φ` along the path (endpoints included).
/// `-∞` when no path exists in the domain.
pub fn bottleneck(domain: &SiteSet, values: &[f64], sources: &[usize], is_target: &dyn Fn(usize) -> bool) -> f64 {
    #[derive(PartialEq)]
    struct Item(f64, usize);
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0).then(o.1.cmp(&self.1))
        }
    }
    let mut best = vec![f64::NEG_INFINITY; domain.len()];
    let mut done = vec![false; domain.len()];
    let mut heap = BinaryHeap::new();
    for &i in sources {
        if values[i] > best[i] {
            best[i] = values[i];
            heap.push(Item(values[i], i));
        }
    }
    while let Some(Item(v, i)) = heap.pop() {
        if done[i] {
            continue;
        }
        done[i] = true;
        if is_target(i) {
            return v;
        }
        for (_, j) in domain.neighbor_indices(i) {
            if let Some(j) = j {
                let w = v.min(values[j]);
                if !done[j] && w > best[j] {
                    best[j] = w;
                    heap.push(Item(w, j));
                }
            }
        }
    }
    f64::NEG_INFINITY
}

fn indices_in(domain: &SiteSet, set: &SiteSet, what: &str) -> Result<Vec<usize>> {
    set.iter()
        .map(|x| domain.index_of(x).ok_or_else(|| Error::geometry(format!("{what} site {x} is outside the sample domain"))))
        .collect()
}

/// Precomputed geometry for repeated `A_N ↮ S_N` queries on one domain.
#[derive(Clone, Debug)]
pub struct Disconnection {
    domain: Arc<SiteSet>,
    sources: Vec<usize>,
    target: Vec<bool>,
}

impl Disconnection {
    /// `A_N`, `S_N` and the box spanned by `S_N` must lie in the domain.
    pub fn new(domain: Arc<SiteSet>, a_n: &SiteSet, s_n: &SiteSet) -> Result<Self> {
        let sources = indices_in(&domain, a_n, "A_N")?;
        let targets = indices_in(&domain, s_n, "S_N")?;
        let bb: Cuboid = s_n.bounding_box().ok_or_else(|| Error::geometry("S_N is empty"))?;
        if a_n.iter().any(|x| !bb.contains(x)) {
            return Err(Error::geometry("A_N is not enclosed by S_N"));
        }
        if bb.iter().any(|x| !domain.contains(&x)) {
            return Err(Error::geometry("the box spanned by S_N is not inside the sample domain"));
        }
        let mut target = vec![false; domain.len()];
        for j in targets {
            target[j] = true;
        }
        Ok(Self { domain, sources, target })
    }

    pub fn domain(&self) -> &Arc<SiteSet> {
        &self.domain
    }

    /// `𝒟^α_N` for the given field values.
    pub fn occurs(&self, values: &[f64], alpha: f64) -> bool {
        let s = LevelSet::from_values(Arc::clone(&self.domain), values, alpha);
        !reaches(&s, &self.sources, &|i| self.target[i])
    }

    /// `sup {α : A_N ↔ S_N in E^{≥α}}`; `𝒟^α_N` holds iff `α` exceeds it.
    pub fn threshold(&self, values: &[f64]) -> f64 {
        bottleneck(&self.domain, values, &self.sources, &|i| self.target[i])
    }
}

/// `𝒟^α_N = {A_N ↮ S_N in E^{≥α}}`.
pub fn disconnection_event(phi: &FieldSample, alpha: f64, a_n: &SiteSet, s_n: &SiteSet) -> Result<bool> {
    Ok(Disconnection::new(Arc::clone(phi.domain()), a_n, s_n)?.occurs(phi.values(), alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{ball, sphere};
    use crate::potential::SiteFunction;

    fn sample(domain: Arc<SiteSet>, f: impl FnMut(&Site) -> f64) -> FieldSample {
        FieldSample { field: SiteFunction::from_fn(domain, f), seed: 0, index: 0 }
    }

    #[test]
    fn level_set_extremes() {
        let dom = Arc::new(ball(Site::origin(3), 2));
        let phi = sample(dom.clone(), |x| x.get(0) as f64);
        assert_eq!(level_set(&phi, -10.0).count(), dom.len());
        assert_eq!(level_set(&phi, 10.0).count(), 0);
        assert!(level_set(&phi, 1.0).to_site_set().is_subset(&level_set(&phi, 0.0).to_site_set()));
    }

    #[test]
    fn component_examples() {
        let dom = Arc::new(ball(Site::origin(3), 1));
        let none = LevelSet::from_membership(dom.clone(), vec![false; dom.len()]);
        assert!(components(&none).is_empty());
        let full = LevelSet::from_membership(dom.clone(), vec![true; dom.len()]);
        let c = components(&full);
        assert_eq!(c.len(), 1);
        assert_eq!(c.components[0].diameter, 2);
        assert_eq!(c.components[0].size, 27);
        let diag = SiteSet::from_sites(3, [Site::new(&[0, 0, 0]), Site::new(&[1, 1, 0])]);
        let s = LevelSet::from_membership(dom.clone(), dom.iter().map(|x| diag.contains(x)).collect());
        assert_eq!(components(&s).len(), 2);
    }

    #[test]
    fn connectivity_examples() {
        let dom = Arc::new(ball(Site::origin(3), 3));
        let h = SiteSet::from_sites(3, [Site::new(&[-3, 0, 0])]);
        let k = SiteSet::from_sites(3, [Site::new(&[3, 0, 0])]);
        let line = LevelSet::from_membership(dom.clone(), dom.iter().map(|x| x.get(1) == 0 && x.get(2) == 0).collect());
        assert!(is_connected(&h, &k, &line));
        assert!(is_connected(&k, &h, &line));
        assert!(is_connected(&h, &h, &line));
        let empty = LevelSet::from_membership(dom.clone(), vec![false; dom.len()]);
        assert!(!is_connected(&h, &k, &empty));
    }

    #[test]
    fn shell_blocks_disconnection() {
        let n = 3u32;
        let s_n = sphere(2.0, n, 3).unwrap();
        let dom = Arc::new(ball(Site::origin(3), 6));
        let a_n = ball(Site::origin(3), 1);
        let shell = |x: &Site| if x.linf_norm() == 3 { -1.0 } else { 1.0 };
        let phi = sample(dom.clone(), shell);
        assert!(disconnection_event(&phi, 0.0, &a_n, &s_n).unwrap());
        let d = Disconnection::new(dom.clone(), &a_n, &s_n).unwrap();
        assert_eq!(d.threshold(phi.values()), -1.0);
        let flat = sample(dom.clone(), |_| 0.0);
        assert!(!disconnection_event(&flat, -1.0, &a_n, &s_n).unwrap());
        assert!(disconnection_event(&flat, 1.0, &a_n, &s_n).unwrap());
        let small = Arc::new(ball(Site::origin(3), 5));
        let phi = sample(small, |_| 0.0);
        assert!(disconnection_event(&phi, 0.0, &a_n, &s_n).is_err());
    }
}
