//! Acceptance suite. Every check prints one PASS/FAIL line to stderr
//! (uncaptured) and then asserts.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use serde_json::{json, Value};

use rcgff::environment::{build_law, sample_environment, ConductanceLaw, EdgeWeights, KeyedEnvironment};
use rcgff::gff::{Decomposer, FieldSample, GffSampler, TiltedSampler};
use rcgff::homogenization::{
    annulus_pairing_reference, capacity_scaling, continuum_capacity_reference, disconnection_rate_experiment,
    estimate_diffusivity, potential_pairing_convergence, ContinuumShape, DisconnectionParams, DisconnectionSetup,
};
use rcgff::interfaces::{
    average_density, build_shell_interface, c0, capacity_ratio_check, dichotomy, escape_probability, local_density,
    ComplementOf, FiniteRegion, HalfSpaceRegion, Region,
};
use rcgff::lattice::{ball, blow_up, Cuboid, ShapeSpec, Site, SiteSet};
use rcgff::linalg::build_solver;
use rcgff::percolation::{decoupling_check, Disconnection, SiteAbove};
use rcgff::potential::{
    capacity_of_potential, dirichlet_form, equilibrium_measure_from, green_matrix, harmonic_potential,
    heat_kernel_killed, Clock, DirichletOperator, SiteFunction,
};
use rcgff::registry::NamedSpec;
use rcgff::rng::stream;
use rcgff::stats::{normal_cdf, Estimate};
use rcgff::testfn::build_test_function;
use rcgff_cli::config::Tolerances;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!("acceptance {id:>2} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn law(kind: &str, params: Value) -> Arc<dyn ConductanceLaw> {
    build_law(&NamedSpec::new(kind, params)).unwrap()
}

fn uniform_env(seed: u64) -> KeyedEnvironment {
    KeyedEnvironment::new(3, law("iid_uniform", json!({"low": 0.5, "high": 1.0})), seed)
}

/// Random `λ = 0.5` environments, cycling through the elliptic laws.
fn mixed_env(seed: u64) -> KeyedEnvironment {
    let l = match seed % 3 {
        0 => law("iid_uniform", json!({"low": 0.5, "high": 1.0})),
        1 => law("iid_two_point", json!({"a": 0.5, "b": 1.0, "p": 0.3})),
        _ => law("checkerboard", json!({"a": 0.5, "b": 1.0})),
    };
    KeyedEnvironment::new(3, l, seed)
}

fn unit_env() -> KeyedEnvironment {
    KeyedEnvironment::new(3, law("constant", json!({"c": 1.0})), 0)
}

fn cube(lo: i32, hi: i32) -> Arc<SiteSet> {
    Arc::new(Cuboid::new(Site::splat(3, lo), Site::splat(3, hi)).to_site_set())
}

/// Dense `L_U` assembled from edge queries only.
fn dense_laplacian(env: &dyn EdgeWeights, u: &SiteSet) -> DMatrix<f64> {
    let n = u.len();
    let mut l = DMatrix::zeros(n, n);
    for (i, x) in u.iter().enumerate() {
        for y in x.neighbors() {
            let w = env.weight(x, &y).unwrap();
            l[(i, i)] += w;
            if let Some(j) = u.index_of(&y) {
                l[(i, j)] -= w;
            }
        }
    }
    l
}

/// Largest `|mean(x_i x_j) - target(i,j)| / se` over all pairs of a centred sample.
fn max_pair_z(samples: &[Vec<f64>], pairs: &[(usize, usize)], target: impl Fn(usize, usize) -> f64) -> f64 {
    let n = samples.len() as f64;
    pairs
        .iter()
        .map(|&(i, j)| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in samples {
                let p = v[i] * v[j];
                s1 += p;
                s2 += p * p;
            }
            let mean = s1 / n;
            let var = (s2 / n - mean * mean) * n / (n - 1.0);
            Estimate { mean, se: (var / n).sqrt(), samples: n as u64 }.z_to(target(i, j))
        })
        .fold(0.0, f64::max)
}

fn all_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

#[test]
fn c01_exact_identities() {
    let start = std::time::Instant::now();
    let (mut sym, mut chain, mut last_exit, mut variational_gap) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    for seed in 0..25u64 {
        let env = mixed_env(seed);
        let mut rng = stream(seed, "acceptance.identities", 0);
        let side = 4 + (seed % 3) as i32;
        let b = cube(0, side - 1);
        let op = DirichletOperator::new(&env, Arc::clone(&b)).unwrap();
        let g = green_matrix(&op).unwrap();
        let n = b.len();
        for i in 0..n {
            for j in 0..i {
                sym = sym.max((g[i * n + j] - g[j * n + i]).abs());
            }
        }
        let core = Cuboid::new(Site::splat(3, 1), Site::splat(3, side - 2));
        let mut a_sites: Vec<Site> = core.iter().filter(|_| rng.random::<f64>() < 0.4).collect();
        if a_sites.is_empty() {
            a_sites.push(Site::splat(3, 1));
        }
        let a = Arc::new(SiteSet::from_sites(3, a_sites));
        let h = harmonic_potential(&env, &a, &b).unwrap().values;
        let e = equilibrium_measure_from(&env, &a, &h).unwrap();
        let cap = capacity_of_potential(&env, &h).unwrap();
        let energy = dirichlet_form(&env, &h, &h).unwrap();
        let flux: f64 = e.values.iter().sum();
        chain = chain.max((cap - energy).abs()).max((cap - flux).abs());
        for (i, x) in b.iter().enumerate() {
            let via_green: f64 = a.iter().zip(&e.values).map(|(y, ey)| g[i * n + b.index_of(y).unwrap()] * ey).sum();
            last_exit = last_exit.max((h.at(x) - via_green).abs());
        }
        for k in 0..100 {
            let f = SiteFunction::from_fn(Arc::clone(&b), |x| {
                if a.contains(x) {
                    1.0
                } else if k % 2 == 0 {
                    rng.random::<f64>()
                } else {
                    h.at(x) + 0.1 * (rng.random::<f64>() - 0.5)
                }
            });
            variational_gap = variational_gap.min(dirichlet_form(&env, &f, &f).unwrap() - cap);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = sym <= 1e-10 && chain <= 1e-8 && last_exit <= 1e-8 && variational_gap >= -1e-8 && secs < 60.0;
    report(
        1,
        "exact identities (25 seeds, boxes ≤ 6³)",
        pass,
        format!(
            "symmetry {sym:.1e} ≤ 1e-10, cap/energy/flux {chain:.1e} ≤ 1e-8, last-exit {last_exit:.1e} ≤ 1e-8, \
             min ℰ(f)-cap over 2500 f {variational_gap:.3e} ≥ 0, {secs:.1}s < 60s"
        ),
    );
}

#[test]
fn c02_dense_oracles() {
    let start = std::time::Instant::now();
    let mut green_err = 0.0f64;
    for (seed, dom) in [(1u64, cube(-2, 2)), (2, cube(0, 3)), (3, Arc::new(ball(Site::origin(3), 2)))] {
        let env = mixed_env(seed);
        let l = dense_laplacian(&env, &dom);
        let inv = l.clone().try_inverse().unwrap();
        let n = dom.len();
        for solver in ["cholesky", "auto"] {
            let s = build_solver(&NamedSpec::new(solver, Value::Null)).unwrap();
            let op = DirichletOperator::with_solver(&env, Arc::clone(&dom), s).unwrap();
            let g = green_matrix(&op).unwrap();
            for i in 0..n {
                for j in 0..n {
                    green_err = green_err.max((g[i * n + j] - inv[(i, j)]).abs());
                }
            }
        }
    }
    let tol = Tolerances::default().heat_kernel;
    let env = uniform_env(16);
    let u = cube(-1, 2);
    let op = DirichletOperator::new(&env, Arc::clone(&u)).unwrap();
    let l = dense_laplacian(&env, &u);
    let dinv = DMatrix::from_diagonal(&l.diagonal().map(|v| 1.0 / v));
    let mut heat_err = 0.0f64;
    for t in [0.1, 1.0, 4.0] {
        let p = (-(&dinv * &l) * t).exp();
        for x in [Site::new(&[0, 1, 0]), Site::new(&[-1, -1, 2])] {
            let ix = u.index_of(&x).unwrap();
            let q = heat_kernel_killed(&op, t, &x, tol).unwrap();
            for (j, y) in u.iter().enumerate() {
                heat_err = heat_err.max((q.values.at(y) - p[(ix, j)] / l[(j, j)]).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "dense-oracle equivalence (≤ 5³)",
        green_err <= 1e-10 && heat_err <= tol && secs < 60.0,
        format!("green {green_err:.1e} ≤ 1e-10, heat kernel {heat_err:.1e} ≤ {tol:.0e}, {secs:.1}s < 60s"),
    );
}

fn field_matrix(sampler: &GffSampler, label: &str, seed: u64, count: u64) -> Vec<Vec<f64>> {
    sampler.map_samples(label, seed, count, 32, |s: &FieldSample| s.values().to_vec())
}

#[test]
fn c03_gff_law() {
    let start = std::time::Instant::now();
    let samples = 20_000u64;
    let mut cov_z = 0.0f64;
    for (env_seed, seed, u) in [(4u64, 5u64, cube(0, 3)), (5, 5, cube(0, 5))] {
        let env = uniform_env(env_seed);
        let sampler = GffSampler::from_env(&env, Arc::clone(&u)).unwrap();
        let g = green_matrix(sampler.operator()).unwrap();
        let n = u.len();
        let phi = field_matrix(&sampler, "acceptance.gff", seed, samples);
        cov_z = cov_z.max(max_pair_z(&phi, &all_pairs(n), |i, j| g[i * n + j]));
    }
    // Domain Markov on U = 6³ with U' the inner 4³ box.
    let env = uniform_env(6);
    let u = cube(0, 5);
    let sub = cube(1, 4);
    let sampler = GffSampler::from_env(&env, Arc::clone(&u)).unwrap();
    let dec = Decomposer::new(&env, Arc::clone(&u), Arc::clone(&sub), true).unwrap();
    let g_u = green_matrix(sampler.operator()).unwrap();
    let g_sub = green_matrix(&DirichletOperator::new(&env, Arc::clone(&sub)).unwrap()).unwrap();
    let (n, m) = (u.len(), sub.len());
    let idx: Vec<usize> = sub.iter().map(|x| u.index_of(x).unwrap()).collect();
    let rows: Vec<Vec<f64>> = sampler.map_samples("acceptance.markov", 6, samples, 32, |s| {
        let d = dec.decompose(s).unwrap();
        let mut row: Vec<f64> = idx.iter().map(|&i| d.psi.values[i]).collect();
        row.extend_from_slice(&d.xi.values);
        row
    });
    let psi_z = max_pair_z(&rows, &all_pairs(m), |i, j| g_sub[i * m + j]);
    let cross: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, m + j))).collect();
    let indep_z = max_pair_z(&rows, &cross, |_, _| 0.0);
    let xi_pairs: Vec<(usize, usize)> = all_pairs(m).into_iter().map(|(i, j)| (m + idx[i], m + idx[j])).collect();
    let xi_z = max_pair_z(&rows, &xi_pairs, |a, b| {
        let (i, j) = (a - m, b - m);
        let (si, sj) = (idx.iter().position(|&k| k == i).unwrap(), idx.iter().position(|&k| k == j).unwrap());
        g_u[i * n + j] - g_sub[si * m + sj]
    });
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "GFF law (2·10⁴ samples)",
        cov_z <= 5.0 && psi_z <= 5.0 && indep_z <= 5.0 && xi_z <= 5.0 && secs < 300.0,
        format!(
            "covariance vs g_U (4³, 6³) max {cov_z:.2} SE, ψ vs g_U' max {psi_z:.2} SE, \
             cov(ψ, ξ) max {indep_z:.2} SE, ξ vs g_U - g_U' max {xi_z:.2} SE, all ≤ 5; {secs:.1}s < 300s"
        ),
    );
}

#[test]
fn c04_tilting() {
    let start = std::time::Instant::now();
    let env = uniform_env(7);
    let u = cube(-1, 2);
    let o = Site::origin(3);
    let sampler = GffSampler::from_env(&env, Arc::clone(&u)).unwrap();
    let op = sampler.operator().clone();

    // Tilted mean equals the shift.
    let h = harmonic_potential(&env, &SiteSet::from_sites(3, [o]), &u).unwrap().values;
    let f = SiteFunction::from_fn(Arc::clone(&u), |x| -0.8 * h.at(x) + 0.3 * f64::from(x.get(0)) / 2.0);
    let tilted = TiltedSampler::new(sampler.clone(), &f).unwrap();
    let runs: Vec<(Vec<f64>, f64)> = sampler.map_samples("gff.tilted", 7, 20_000, 32, |s| {
        let v: Vec<f64> = s.values().iter().zip(tilted.shift()).map(|(a, b)| a + b).collect();
        let lw = tilted.log_weight(&v);
        (v, lw)
    });
    let mean_z = (0..u.len())
        .map(|i| Estimate::from_values(&runs.iter().map(|r| r.0[i]).collect::<Vec<_>>()).z_to(f.values[i]))
        .fold(0.0, f64::max);
    let lr = Estimate::from_values(&runs.iter().map(|r| r.1.exp()).collect::<Vec<_>>());

    // Single-site tail: exact, direct and IS with the conditional-mean tilt.
    let g0 = rcgff::potential::green_column(&op, &o).unwrap();
    let sigma = g0.at(&o).sqrt();
    let level = -2.5 * sigma;
    let exact = normal_cdf(level / sigma);
    let i0 = u.index_of(&o).unwrap();
    let direct_n = 400_000u64;
    let direct_hits =
        sampler.map_samples("acceptance.tail", 7, direct_n, 64, |s| s.values()[i0] <= level).iter().filter(|b| **b).count();
    let tail_direct = Estimate::proportion(direct_hits as u64, direct_n);
    let shift = SiteFunction::new(Arc::clone(&u), g0.values.iter().map(|g| level * g / (sigma * sigma)).collect());
    let tail_tilt = TiltedSampler::new(sampler.clone(), &shift).unwrap();
    let w: Vec<f64> = sampler.map_samples("gff.tilted", 8, 100_000, 64, |s| {
        let v: Vec<f64> = s.values().iter().zip(tail_tilt.shift()).map(|(a, b)| a + b).collect();
        if v[i0] <= level { tail_tilt.log_weight(&v).exp() } else { 0.0 }
    });
    let tail_is = Estimate::from_values(&w);

    // Disconnection of the centre from the boundary layer, at a pilot quantile.
    let shell = rcgff::lattice::boundary(&u, rcgff::lattice::BoundaryKind::Internal);
    let a = SiteSet::from_sites(3, [o]);
    let event = Disconnection::new(Arc::clone(&u), &a, &shell).unwrap();
    let mut pilot = sampler.map_samples("acceptance.pilot", 7, 20_000, 64, |s| event.threshold(s.values()));
    pilot.sort_by(f64::total_cmp);
    let alpha = pilot[pilot.len() / 100];
    let p_pilot = pilot.iter().filter(|t| alpha > **t).count() as f64 / pilot.len() as f64;
    let hits = sampler
        .map_samples("acceptance.direct", 7, direct_n, 64, |s| alpha > event.threshold(s.values()))
        .iter()
        .filter(|b| **b)
        .count();
    let disc_direct = Estimate::proportion(hits as u64, direct_n);
    let cap = capacity_of_potential(&env, &h).unwrap();
    let c = (2.0 * (1.0 / p_pilot).ln() / cap).sqrt();
    let disc_f = SiteFunction::new(Arc::clone(&u), h.values.iter().map(|v| -c * v).collect());
    let disc_tilt = TiltedSampler::new(sampler.clone(), &disc_f).unwrap();
    let w: Vec<f64> = sampler.map_samples("gff.tilted", 9, 100_000, 64, |s| {
        let v: Vec<f64> = s.values().iter().zip(disc_tilt.shift()).map(|(a, b)| a + b).collect();
        if alpha > event.threshold(&v) { disc_tilt.log_weight(&v).exp() } else { 0.0 }
    });
    let disc_is = Estimate::from_values(&w);

    let tail_z = tail_is.z_distance(&tail_direct);
    let disc_z = disc_is.z_distance(&disc_direct);
    let secs = start.elapsed().as_secs_f64();
    report(
        4,
        "tilting exactness (4³)",
        mean_z <= 5.0 && tail_z <= 3.0 && disc_z <= 3.0 && secs < 300.0,
        format!(
            "tilted mean vs f max {mean_z:.2} SE ≤ 5 (E[dP/dP̃] = {:.4}±{:.4}); tail P[φ_0 ≤ -2.5σ] IS {:.3e}±{:.1e} \
             vs direct {:.3e}±{:.1e}: {tail_z:.2} SE ≤ 3 (exact {exact:.3e}); disconnection at α = {alpha:.3} \
             IS {:.3e}±{:.1e} vs direct {:.3e}±{:.1e}: {disc_z:.2} SE ≤ 3; {secs:.1}s < 300s",
            lr.mean, lr.se, tail_is.mean, tail_is.se, tail_direct.mean, tail_direct.se, disc_is.mean, disc_is.se,
            disc_direct.mean, disc_direct.se
        ),
    );
}

#[test]
fn c05_decoupling() {
    let start = std::time::Instant::now();
    let env = uniform_env(8);
    let dom = cube(-4, 5);
    let (x1, x2) = (Site::new(&[-3, 0, 0]), Site::new(&[4, 0, 0]));
    let k1 = SiteSet::from_sites(3, [x1]);
    let k2 = SiteSet::from_sites(3, [x2]);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (delta, l1, l2) in [(0.05, 0.0, 0.0), (0.2, 0.0, 0.0), (0.1, 0.3, -0.2)] {
        let e1 = SiteAbove { site: x1, level: l1 };
        let e2 = SiteAbove { site: x2, level: l2 };
        let r = decoupling_check(&env, Arc::clone(&dom), &k1, &k2, delta, &e1, &e2, 20_000, 11, 3.0).unwrap();
        let v = r.lower_violation_se.max(r.upper_violation_se);
        worst = worst.max(v);
        parts.push(format!("δ={delta}: {:.4} ≤ {:.4} ≤ {:.4} ({v:.2} SE)", r.lower, r.joint.mean, r.upper));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        5,
        "decoupling inequality (10³)",
        worst <= 3.0 && secs < 600.0,
        format!("{}; worst violation {worst:.2} SE ≤ 3; {secs:.1}s < 600s", parts.join(", ")),
    );
}

fn site(rng: &mut impl Rng) -> Site {
    Site::new(&[rng.random_range(-12..=12), rng.random_range(-12..=12), rng.random_range(-12..=12)])
}

fn random_set(seed: u64, r: i32, p: f64) -> SiteSet {
    let mut rng = stream(seed, "acceptance.set", 0);
    SiteSet::from_sites(3, Cuboid::ball(Site::origin(3), r).iter().filter(|_| rng.random::<f64>() < p))
}

#[test]
fn c06_density_laws() {
    let start = std::time::Instant::now();
    let mut rng = stream(12, "acceptance.density", 0);
    let regions: Vec<Box<dyn Region>> = vec![
        Box::new(FiniteRegion::new(random_set(1, 10, 0.5))),
        Box::new(ComplementOf::new(random_set(2, 12, 0.3))),
        Box::new(FiniteRegion::new(ball(Site::new(&[3, -2, 0]), 7))),
        Box::new(HalfSpaceRegion { d: 3, axis: 1, threshold: 2, upper: true }),
        Box::new(ComplementOf::new(ball(Site::origin(3), 5).union(&random_set(3, 14, 0.1)))),
    ];
    let (mut lip_bad, mut avg_bad, mut dich_bad) = (0, 0, 0);
    let mut avg_worst = 0.0f64;
    for k in 0..2000 {
        let u1 = regions[k % regions.len()].as_ref();
        let (x, y) = (site(&mut rng), site(&mut rng));
        let ell = rng.random_range(0..=4u32);
        let gap = (local_density(u1, &x, ell, false) - local_density(u1, &y, ell, false)).abs();
        if gap > 2f64.powi(-(ell as i32)) * f64::from(x.sub(&y).l1_norm()) {
            lip_bad += 1;
        }
    }
    for k in 0..400 {
        let u1 = regions[k % regions.len()].as_ref();
        let x = site(&mut rng);
        let ell = rng.random_range(1..=4u32);
        let lp = rng.random_range(0..ell);
        let gap = (local_density(u1, &x, ell, false) - average_density(u1, &x, ell, lp)).abs();
        let bound = c0(3) * 2f64.powi(lp as i32 - ell as i32);
        avg_worst = avg_worst.max(gap / bound);
        if gap > bound {
            avg_bad += 1;
        }
    }
    let instances = 1000;
    for k in 0..instances {
        let u1 = regions[k % regions.len()].as_ref();
        let x = site(&mut rng);
        let ell = rng.random_range(1..=3u32);
        let lp = rng.random_range(0..ell);
        let beta = average_density(u1, &x, ell, lp);
        let delta = rng.random::<f64>() * beta.min(1.0 - beta);
        let r = dichotomy(u1, &x, lp, ell, delta);
        if !(r.clause_i || r.clause_ii) {
            dich_bad += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        "density-function laws",
        lip_bad == 0 && avg_bad == 0 && dich_bad == 0 && secs < 120.0,
        format!(
            "Lipschitz violations {lip_bad}/2000, averaging violations {avg_bad}/400 (worst gap/bound {avg_worst:.3}, \
             c0 = {}), dichotomy failures {dich_bad}/{instances}; {secs:.1}s < 120s",
            c0(3)
        ),
    );
}

#[test]
fn c07_solidification() {
    let start = std::time::Instant::now();
    let b = ShapeSpec::linf_box(3, 2.0);
    // Full shells.
    let mut full_sup = 0.0f64;
    for (seed, radius, n, offset) in [(1u64, 0.5, 4u32, 1u32), (2, 0.4, 5, 2), (3, 0.6, 4, 1)] {
        let env = mixed_env(seed);
        let a_n = blow_up(&ShapeSpec::ball(3, radius), n, 3).unwrap();
        let b_n = Arc::new(blow_up(&b, n, 3).unwrap());
        let s = build_shell_interface(&env, &a_n, offset, 0.0, offset + 2, seed).unwrap();
        assert_eq!(s.removed, 0);
        full_sup = full_sup.max(escape_probability(&env, &a_n, &s.interface.sigma, &b_n, 1.0).unwrap().sup);
    }
    // Coupled removal: nested punctures from one keyed uniform per site.
    let env = uniform_env(4);
    let a_n = blow_up(&ShapeSpec::ball(3, 0.5), 5, 3).unwrap();
    let b_n = Arc::new(blow_up(&b, 5, 3).unwrap());
    let fractions = [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];
    let escapes: Vec<Vec<f64>> = fractions
        .iter()
        .map(|&q| {
            let s = build_shell_interface(&env, &a_n, 1, q, 3, 99).unwrap();
            escape_probability(&env, &a_n, &s.interface.sigma, &b_n, 1.0).unwrap().values.iter().map(|v| v.1).collect()
        })
        .collect();
    let monotone = escapes.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(p, q)| *q >= *p - 1e-12));
    let sups: Vec<String> = escapes.iter().map(|e| format!("{:.2e}", e.iter().copied().fold(0.0, f64::max))).collect();
    // Capacity chain over random specs.
    let mut rng = stream(7, "acceptance.chain", 0);
    let specs = 24;
    let mut chain_ok = 0;
    let mut worst_slack = f64::INFINITY;
    for k in 0..specs {
        let env = mixed_env(100 + k);
        let n = rng.random_range(3..=5u32);
        let shape = if k % 2 == 0 {
            ShapeSpec::ball(3, rng.random_range(0.3..0.6))
        } else {
            ShapeSpec::linf_box(3, rng.random_range(0.2..0.5))
        };
        let a_n = blow_up(&shape, n, 3).unwrap();
        let offset = rng.random_range(1..=2u32);
        let q = rng.random_range(0.0..0.9);
        let b_n = Arc::new(blow_up(&b, n, 3).unwrap());
        let s = build_shell_interface(&env, &a_n, offset, q, offset + 2, k).unwrap();
        let r = capacity_ratio_check(&env, &a_n, &s.interface.sigma, &b_n).unwrap();
        let tol = 1e-8 * r.cap_sigma.max(r.cap_a).max(1.0);
        if r.holds && r.cap_sigma + tol >= r.chain_middle && r.chain_middle + tol >= r.inf_hit * r.cap_a {
            chain_ok += 1;
        }
        worst_slack = worst_slack.min(r.slack / r.cap_sigma.max(r.cap_a).max(1.0));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        "solidification at desk scale",
        full_sup <= 1e-8 && monotone && chain_ok == specs && secs < 600.0,
        format!(
            "full-shell sup escape {full_sup:.1e} ≤ 1e-8; escape monotone in puncture fraction {monotone} (sup {}); \
             chain holds on {chain_ok}/{specs} specs (min relative slack {worst_slack:.2e}, tol 1e-8); {secs:.1}s < 600s",
            sups.join(" ≤ ")
        ),
    );
}

#[test]
fn c08_homogenization() {
    let start = std::time::Instant::now();
    let env = unit_env();
    let a = ShapeSpec::ball(3, 0.5);
    let b = ShapeSpec::ball(3, 2.0);
    let ns = [8, 16, 32];
    let tol = Tolerances::default();
    let solver = build_solver(&NamedSpec::new("auto", json!({"tol": tol.solver_residual}))).unwrap();
    let sweep = capacity_scaling(&env, &a, &b, &ns, Arc::clone(&solver), tol.contraction).unwrap();
    let reference = continuum_capacity_reference(ContinuumShape::Annulus { r: 0.5, big_r: 2.0 }, 2.0, 3).unwrap();
    let last = sweep.points.last().unwrap().scaled_capacity;
    let cap_err = (last / reference - 1.0).abs();
    let eta = build_test_function(&NamedSpec::new("radial_bump", json!({"center": [0, 0, 0], "radius": 1.5}))).unwrap();
    let pairing = potential_pairing_convergence(&env, &a, &b, eta.as_ref(), &ns, solver, tol.contraction).unwrap();
    let quad = annulus_pairing_reference(0.5, 2.0, eta.as_ref()).unwrap();
    let pair_err = (pairing.points.last().unwrap().1 / quad - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();
    let values: Vec<String> = sweep.points.iter().map(|p| format!("{:.4}", p.scaled_capacity)).collect();
    report(
        8,
        "homogenized capacity, annulus r=0.5 R=2",
        sweep.verdict.decreasing && cap_err <= 0.1 && pair_err <= 0.1 && secs < 1800.0,
        format!(
            "N^(2-d) cap at N = 8,16,32: {} (relative changes {:?}, decreasing {}); N=32 vs 2πσ²rR/(R-r) = {reference:.4}: \
             {:.2}% ≤ 10%; pairing {:.4} vs quadrature {quad:.4}: {:.2}% ≤ 10%; {secs:.1}s < 1800s",
            values.join(", "),
            sweep.verdict.relative_changes.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>(),
            sweep.verdict.decreasing,
            100.0 * cap_err,
            pairing.points.last().unwrap().1,
            100.0 * pair_err
        ),
    );
}

#[test]
fn c09_diffusivity() {
    let start = std::time::Instant::now();
    let env = unit_env();
    let v = estimate_diffusivity(&env, Clock::Variable, 20.0, 60, 10_000, 13).unwrap();
    let c = estimate_diffusivity(&env, Clock::Constant, 20.0, 40, 10_000, 14).unwrap();
    let (ve, ce) = (v.max_diagonal_relative_error(2.0), c.max_diagonal_relative_error(1.0 / 3.0));
    let diag = |m: &Vec<Vec<f64>>| (0..3).map(|i| format!("{:.4}", m[i][i])).collect::<Vec<_>>().join(", ");
    let secs = start.elapsed().as_secs_f64();
    report(
        9,
        "diffusivity, constant(1), 10⁴ replicas",
        ve <= 0.05 && ce <= 0.05 && secs < 600.0,
        format!(
            "VSRW diag [{}] vs 2: {:.2}% ≤ 5%; CSRW diag [{}] vs 1/3: {:.2}% ≤ 5%; discarded {}+{}; {secs:.1}s < 600s",
            diag(&v.matrix),
            100.0 * ve,
            diag(&c.matrix),
            100.0 * ce,
            v.discarded,
            c.discarded
        ),
    );
}

#[test]
fn c10_disconnection() {
    let start = std::time::Instant::now();
    let env = uniform_env(3);
    let mut p = DisconnectionParams {
        a: ShapeSpec::linf_box(3, 0.25),
        b: ShapeSpec::linf_box(3, 2.0),
        m: 2.0,
        n: 6,
        alpha: 0.0,
        alpha_star_ref: 0.0,
        epsilon: 0.0,
        delta_shell: 0.25,
    };
    let solver = build_solver(&NamedSpec::new("auto", Value::Null)).unwrap();
    let setup = DisconnectionSetup::new(&env, &p, solver).unwrap();
    // Pilot on its own seed: α at the 0.5% quantile, the reference level at the median.
    let mut pilot = setup.direct_thresholds(20_000, 1001);
    pilot.sort_by(f64::total_cmp);
    p.alpha = pilot[pilot.len() / 200];
    p.alpha_star_ref = pilot[pilot.len() / 2];
    let p_pilot = pilot.iter().filter(|t| p.alpha > **t).count() as f64 / pilot.len() as f64;
    // Tilt whose relative entropy matches -log of the pilot probability.
    let c = (2.0 * (1.0 / p_pilot).ln() / setup.cap_delta).sqrt();
    p.epsilon = c - (p.alpha_star_ref - p.alpha);
    let direct_n = 100_000;
    let r = disconnection_rate_experiment(&setup, &p, 20_000, Some(direct_n), 1002).unwrap();
    let direct = r.direct.unwrap();
    let direct_hits = (direct.mean * direct_n as f64).round() as u64;
    let z = r.combined_z.unwrap();
    let eps = [0.0, 0.1, 0.2, 0.4, 0.8];
    let ladder = setup.tilted_frequency_ladder(p.alpha, p.alpha_star_ref, &eps, 4000, 1003).unwrap();
    let freqs: Vec<f64> = ladder.iter().map(|l| l.1.mean).collect();
    let increasing = freqs.windows(2).all(|w| w[1] > w[0]);
    let near_one = *freqs.last().unwrap() >= 0.95;
    // Entropy bound along the ladder against the direct estimate.
    let mut bound_ok = r.entropy_holds == Some(true);
    let mut bounds = Vec::new();
    for (e, f) in &ladder {
        let h = setup.entropy(&setup.tilt(p.alpha, p.alpha_star_ref, *e)).unwrap();
        let b = rcgff::homogenization::entropy_bound(f.mean, h).unwrap_or(f64::NEG_INFINITY);
        bound_ok &= (direct.mean + 3.0 * direct.se).ln() >= b;
        bounds.push(format!("{b:.2}"));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        10,
        "disconnection pipeline (M=2, N=6)",
        direct_hits >= 100 && z <= 3.0 && increasing && near_one && bound_ok && secs < 1800.0,
        format!(
            "α = {:.4} (ref {:.4}), direct {:.3e}±{:.1e} ({direct_hits} hits in 10⁵ ≥ 100), IS at ε = {:.3} \
             (H = {:.2}) {:.3e}±{:.1e}: {z:.2} SE ≤ 3; tilted frequency along ε {:?}: {:?} increasing to ≥ 0.95; \
             log P = {:.2} ≥ entropy bounds [{}] and IS bound {:?}; {secs:.1}s < 1800s",
            p.alpha,
            p.alpha_star_ref,
            direct.mean,
            direct.se,
            p.epsilon,
            r.entropy,
            r.is_estimate.mean,
            r.is_estimate.se,
            eps,
            freqs,
            direct.mean.ln(),
            bounds.join(", "),
            r.entropy_bound_log
        ),
    );
}

fn run_cli(sub: &str, cfg: &Path, out: &Path, threads: Option<&str>) -> Value {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rcgff"));
    if let Some(t) = threads {
        cmd.args(["--threads", t]);
    }
    let o = cmd.args(["run", sub, "--config"]).arg(cfg).arg("--out").arg(out).output().unwrap();
    assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap()
}

fn repro_configs() -> Vec<(&'static str, Value)> {
    let base = |section: &str, body: Value| {
        let mut v = json!({
            "d": 3,
            "lambda": 0.5,
            "environment": {"law": {"kind": "iid_uniform", "params": {"low": 0.5, "high": 1.0}}, "seed": 31},
            "master_seed": 17
        });
        v[section] = body;
        v
    };
    let ball = |r: f64| json!({"kind": "euclidean_ball", "center": [0, 0, 0], "radius": r});
    let cube = |h: f64| json!({"kind": "linf_box", "center": [0, 0, 0], "half_width": h});
    vec![
        ("env", base("env", json!({"lo": [-3, -3, -3], "hi": [3, 3, 3]}))),
        (
            "potential",
            base(
                "potential",
                json!({"a": {"kind": "sites", "sites": [[0, 0, 0], [1, 0, 0]]},
                       "b": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 4},
                       "heat_kernel": {"t": 1.5, "x": [0, 0, 0]}}),
            ),
        ),
        (
            "gff",
            base("gff", json!({"domain": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 2}, "samples": 700, "write_fields": true})),
        ),
        ("percolation", base("percolation", json!({"alphas": [0.0, 0.4], "scales": [2], "replicas": 60}))),
        (
            "disconnect",
            base(
                "disconnect",
                json!({"a": cube(0.25), "b": cube(1.0), "m": 1.0, "n": 3, "alpha": 0.0, "alpha_star_ref": 0.4,
                       "epsilon": 0.2, "delta_shell": 0.25, "replicas": 300, "direct_replicas": 300,
                       "epsilon_ladder": [0.0, 0.5],
                       "repulsion": {"eta": {"kind": "radial_bump", "params": {"center": [0, 0, 0], "radius": 0.8}}, "deviation": 0.05}}),
            ),
        ),
        (
            "solidify",
            base(
                "solidify",
                json!({"a": ball(0.5), "b": cube(2.0), "ns": [3, 4], "offset": 0.4, "epsilon": 2,
                       "puncture_fractions": [0.0, 0.2]}),
            ),
        ),
        (
            "homogenize",
            base(
                "homogenize",
                json!({"a": ball(0.5), "b": ball(2.0), "ns": [3, 4, 5],
                       "eta": {"kind": "radial_bump", "params": {"center": [0, 0, 0], "radius": 1.5}},
                       "diffusivity": {"clock": "variable", "t_horizon": 2.0, "window": 12, "replicas": 200}}),
            ),
        ),
    ]
}

#[test]
fn c11_reproducibility() {
    let start = std::time::Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let mut mismatches = Vec::new();
    let configs = repro_configs();
    for (sub, cfg) in &configs {
        let path = tmp.path().join(format!("{sub}.json"));
        fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
        let m1 = run_cli(sub, &path, &tmp.path().join(format!("{sub}-1")), None);
        let m2 = run_cli(sub, &path, &tmp.path().join(format!("{sub}-2")), Some("1"));
        let same_files = m1["files"] == m2["files"];
        let same_bytes = m1["files"].as_array().unwrap().iter().all(|f| {
            let name = f["path"].as_str().unwrap();
            fs::read(tmp.path().join(format!("{sub}-1")).join(name)).unwrap()
                == fs::read(tmp.path().join(format!("{sub}-2")).join(name)).unwrap()
        });
        if same_files && same_bytes && m1["config_hash"] == m2["config_hash"] {
            identical += 1;
        } else {
            mismatches.push(*sub);
        }
    }

    // Keyed environments: τ_x ω read at y equals ω at y + x, however it is materialised.
    let env = uniform_env(41);
    let mut rng = stream(41, "acceptance.shift", 0);
    let mut shift_bad = 0;
    let window = Cuboid::new(Site::splat(3, -3), Site::splat(3, 3));
    let materialised = sample_environment(env.law(), 0.5, window, 41).unwrap();
    let overlap = sample_environment(env.law(), 0.5, window.translate(&Site::new(&[2, -1, 3])), 41).unwrap();
    let mut checks = 0;
    for _ in 0..200 {
        let x = Site::new(&[rng.random_range(-50..50), rng.random_range(-50..50), rng.random_range(-50..50)]);
        let shifted = env.shift(&x);
        let shifted_window = materialised.shift_onto(&x, window).unwrap();
        for _ in 0..20 {
            let y = Site::new(&[rng.random_range(-3..3), rng.random_range(-3..3), rng.random_range(-3..3)]);
            let i = rng.random_range(0..3usize);
            let truth = env.edge(&y.add(&x), i).unwrap();
            checks += 2;
            shift_bad += usize::from(shifted.edge(&y, i) != Some(truth));
            shift_bad += usize::from(shifted_window.edge(&y, i) != Some(truth));
        }
    }
    for (b, i) in materialised.edges() {
        if let (Some(u), Some(v)) = (materialised.edge(&b, i), overlap.edge(&b, i)) {
            checks += 1;
            shift_bad += usize::from(u != v || u != env.edge(&b, i).unwrap());
        }
    }
    let relabelled = materialised.shift(&Site::new(&[1, 2, 3]));
    for (b, i) in relabelled.edges() {
        if let Some(w) = relabelled.edge(&b, i) {
            checks += 1;
            shift_bad += usize::from(w != env.edge(&b.add(&Site::new(&[1, 2, 3])), i).unwrap());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        11,
        "reproducibility",
        identical == configs.len() && shift_bad == 0,
        format!(
            "{identical}/{} subcommands re-run byte-identically (default vs one thread){}; \
             shift-consistency mismatches {shift_bad}/{checks}; {secs:.1}s",
            configs.len(),
            if mismatches.is_empty() { String::new() } else { format!(", differing: {mismatches:?}") }
        ),
    );
}
