//! One [`Experiment`] per subcommand, looked up by name in a registry.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use rcgff::environment::{sample_environment, EdgeWeights};
use rcgff::gff::GffSampler;
use rcgff::homogenization::{
    annulus_pairing_reference, capacity_scaling, continuum_capacity_reference, disconnection_rate_experiment,
    estimate_diffusivity, potential_pairing_convergence, repulsion_experiment, ContinuumShape, DisconnectionParams,
    DisconnectionSetup,
};
use rcgff::interfaces::{
    build_shell_interface, capacity_ratio_check, escape_probability, resonance_set, scale_system, ComplementOf,
};
use rcgff::lattice::{blow_up, Cuboid, Site};
use rcgff::linalg::{build_solver, SolverStrategy};
use rcgff::percolation::crossing_sweep;
use rcgff::potential::{
    capacity_of_potential, dirichlet_form, equilibrium_measure_from, green_column, harmonic_potential_with,
    heat_kernel_killed, DirichletOperator,
};
use rcgff::registry::Registry;
use rcgff::testfn::build_test_function;

use crate::config::ExperimentConfig;
use crate::output::{coords, num, site_columns, RunContext};
use crate::RunError;

pub trait Experiment {
    /// Fails with a schema error when the config lacks this experiment's section.
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError>;
    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError>;
}

pub fn experiment_registry() -> Registry<dyn Experiment> {
    let mut r: Registry<dyn Experiment> = Registry::new("subcommand");
    r.register("env", |_| Ok(Box::new(EnvExperiment)));
    r.register("potential", |_| Ok(Box::new(PotentialExperiment)));
    r.register("gff", |_| Ok(Box::new(GffExperiment)));
    r.register("percolation", |_| Ok(Box::new(PercolationExperiment)));
    r.register("disconnect", |_| Ok(Box::new(DisconnectExperiment)));
    r.register("solidify", |_| Ok(Box::new(SolidifyExperiment)));
    r.register("homogenize", |_| Ok(Box::new(HomogenizeExperiment)));
    r
}

fn missing(section: &str) -> RunError {
    RunError::Schema(format!("schema violation: the config has no `{section}` section"))
}

fn solver(cfg: &ExperimentConfig) -> Result<Arc<dyn SolverStrategy>, RunError> {
    Ok(match &cfg.solver {
        Some(s) => build_solver(s)?,
        None => build_solver(&rcgff::registry::NamedSpec::new(
            "auto",
            json!({"tol": cfg.tolerances.solver_residual}),
        ))?,
    })
}

fn row(items: impl IntoIterator<Item = String>) -> Vec<String> {
    items.into_iter().collect()
}

fn header(d: usize, rest: &[&str]) -> Vec<String> {
    site_columns(d).into_iter().chain(rest.iter().map(|s| s.to_string())).collect()
}

fn refs(h: &[String]) -> Vec<&str> {
    h.iter().map(String::as_str).collect()
}

struct EnvExperiment;

impl Experiment for EnvExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.env.as_ref().map(|_| ()).ok_or_else(|| missing("env"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let r = cfg.env.as_ref().unwrap();
        let window = Cuboid::new(Site::new(&r.lo), Site::new(&r.hi));
        let c = sample_environment(cfg.keyed_environment()?.law(), cfg.lambda, window, cfg.environment_seed())?;
        let mut bin = Vec::new();
        c.write_binary(&mut bin)?;
        ctx.environment_hash = crate::output::sha256_hex(&bin);
        ctx.write_bytes("environment.bin", &bin)?;
        ctx.write_json("environment.json", &c.sidecar())?;
        let w: Vec<f64> = c.edges().filter_map(|(b, i)| c.edge(&b, i)).collect();
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        ctx.write_csv(
            "environment.csv",
            &["edges", "min", "max", "mean", "lambda"],
            &[row([num(w.len()), num(min), num(max), num(mean), num(cfg.lambda)])],
        )?;
        Ok(())
    }
}

struct PotentialExperiment;

impl Experiment for PotentialExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.potential.as_ref().map(|_| ()).ok_or_else(|| missing("potential"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let p = cfg.potential.as_ref().unwrap();
        let env = cfg.keyed_environment()?;
        let d = cfg.d;
        let a = Arc::new(p.a.build(d)?);
        let b = Arc::new(p.b.build(d)?);
        let t = Instant::now();
        let h = harmonic_potential_with(&env, &a, &b, solver(&cfg)?)?.values;
        ctx.record_solve("harmonic_potential", t.elapsed().as_secs_f64());
        let cap = capacity_of_potential(&env, &h)?;
        let energy = dirichlet_form(&env, &h, &h)?;
        let e = equilibrium_measure_from(&env, &a, &h)?;
        let flux: f64 = e.values.iter().sum();
        ctx.write_csv(
            "potential.csv",
            &["a_sites", "b_sites", "cap", "energy", "flux"],
            &[row([num(a.len()), num(b.len()), num(cap), num(energy), num(flux)])],
        )?;
        let rows: Vec<Vec<String>> =
            a.iter().zip(&e.values).map(|(x, v)| coords(x).into_iter().chain([num(v)]).collect()).collect();
        ctx.write_csv("equilibrium.csv", &refs(&header(d, &["e"])), &rows)?;
        let rows: Vec<Vec<String>> =
            b.iter().zip(&h.values).map(|(x, v)| coords(x).into_iter().chain([num(v)]).collect()).collect();
        ctx.write_csv("harmonic_potential.csv", &refs(&header(d, &["h"])), &rows)?;
        if let Some(hk) = &p.heat_kernel {
            let op = DirichletOperator::new(&env, Arc::clone(&b))?;
            let q = heat_kernel_killed(&op, hk.t, &Site::new(&hk.x), cfg.tolerances.heat_kernel)?;
            let rows: Vec<Vec<String>> = b
                .iter()
                .zip(&q.values.values)
                .map(|(x, v)| coords(x).into_iter().chain([num(v)]).collect())
                .collect();
            ctx.write_csv("heat_kernel.csv", &refs(&header(d, &["q"])), &rows)?;
            ctx.write_json("heat_kernel.json", &json!({"terms": q.terms, "tail_bound": q.tail_bound, "t": hk.t}))?;
        }
        Ok(())
    }
}

struct GffExperiment;

/// Samples per chunk of the streaming variance accumulation.
const GFF_CHUNK: u64 = 256;

impl Experiment for GffExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.gff.as_ref().map(|_| ()).ok_or_else(|| missing("gff"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let g = cfg.gff.as_ref().unwrap();
        let env = cfg.keyed_environment()?;
        let dom = Arc::new(g.domain.build(cfg.d)?);
        let t = Instant::now();
        let sampler = GffSampler::from_env(&env, Arc::clone(&dom))?;
        ctx.record_solve("factorisation", t.elapsed().as_secs_f64());
        let n = dom.len();
        let chunks: Vec<(u64, u64)> =
            (0..g.samples).step_by(GFF_CHUNK as usize).map(|s| (s, (s + GFF_CHUNK).min(g.samples))).collect();
        let partial: Vec<(Vec<f64>, Vec<f64>)> = chunks
            .par_iter()
            .map(|&(lo, hi)| {
                let mut s1 = vec![0.0; n];
                let mut s2 = vec![0.0; n];
                for f in sampler.sample_block("gff.sample", cfg.master_seed, lo..hi) {
                    for (i, v) in f.values().iter().enumerate() {
                        s1[i] += v;
                        s2[i] += v * v;
                    }
                }
                (s1, s2)
            })
            .collect();
        let mut s1 = vec![0.0; n];
        let mut s2 = vec![0.0; n];
        for (a, b) in &partial {
            for i in 0..n {
                s1[i] += a[i];
                s2[i] += b[i];
            }
        }
        let k = g.samples as f64;
        let op = sampler.operator();
        let green: Vec<f64> = dom
            .members()
            .par_iter()
            .map(|x| green_column(op, x).map(|c| c.at(x)))
            .collect::<rcgff::Result<_>>()?;
        let rows: Vec<Vec<String>> = dom
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mean = s1[i] / k;
                let var = (s2[i] - k * mean * mean) / (k - 1.0);
                // SE of a Gaussian sample variance: σ²√(2/(k-1)).
                let se = green[i] * (2.0 / (k - 1.0)).sqrt();
                coords(x)
                    .into_iter()
                    .chain([num(green[i]), num(mean), num(var), num(se), num((var - green[i]) / se)])
                    .collect()
            })
            .collect();
        ctx.write_csv("gff.csv", &refs(&header(cfg.d, &["green", "mean", "variance", "variance_se", "z"])), &rows)?;
        if g.write_fields {
            let mut bin = Vec::new();
            for f in sampler.sample_block("gff.sample", cfg.master_seed, 0..g.samples) {
                f.write_binary(&mut bin)?;
            }
            ctx.write_bytes("fields.bin", &bin)?;
        }
        Ok(())
    }
}

struct PercolationExperiment;

impl Experiment for PercolationExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.percolation.as_ref().map(|_| ()).ok_or_else(|| missing("percolation"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let p = cfg.percolation.as_ref().unwrap();
        let env = cfg.keyed_environment()?;
        let sweep =
            crossing_sweep(&env, &p.alphas, &p.scales, &Site::origin(cfg.d), p.pad, p.replicas, cfg.master_seed)?;
        let rows: Vec<Vec<String>> = sweep
            .points
            .iter()
            .map(|q| row([num(q.alpha), num(q.l), num(q.estimate.mean), num(q.estimate.se), num(q.estimate.samples)]))
            .collect();
        ctx.write_csv("crossing.csv", &["alpha", "L", "estimate", "se", "replicas"], &rows)?;
        ctx.write_json(
            "percolation.json",
            &json!({"alpha_star_star": sweep.alpha_star_star, "bracket_below": sweep.bracket_below}),
        )?;
        Ok(())
    }
}

struct DisconnectExperiment;

impl Experiment for DisconnectExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.disconnect.as_ref().map(|_| ()).ok_or_else(|| missing("disconnect"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let r = cfg.disconnect.as_ref().unwrap();
        let env = cfg.keyed_environment()?;
        let params = DisconnectionParams {
            a: r.a.clone(),
            b: r.b.clone(),
            m: r.m,
            n: r.n,
            alpha: r.alpha,
            alpha_star_ref: r.alpha_star_ref,
            epsilon: r.epsilon,
            delta_shell: r.delta_shell,
        };
        let t = Instant::now();
        let setup = DisconnectionSetup::new(&env, &params, solver(&cfg)?)?;
        ctx.record_solve("setup", t.elapsed().as_secs_f64());
        let rep = disconnection_rate_experiment(&setup, &params, r.replicas, r.direct_replicas, cfg.master_seed)?;
        if rep.degenerate {
            eprintln!("warning: no tilted sample disconnected; try a larger ε");
        }
        let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
        ctx.write_csv(
            "disconnect.csv",
            &[
                "N",
                "estimate",
                "se",
                "tilted_freq",
                "entropy_bound",
                "direct",
                "direct_se",
                "combined_z",
                "entropy",
                "rate_proxy",
                "rate_reference",
                "degenerate",
            ],
            &[row([
                num(rep.n),
                num(rep.is_estimate.mean),
                num(rep.is_estimate.se),
                num(rep.tilted_frequency.mean),
                opt(rep.entropy_bound_log),
                opt(rep.direct.map(|e| e.mean)),
                opt(rep.direct.map(|e| e.se)),
                opt(rep.combined_z),
                num(rep.entropy),
                num(rep.rate_proxy),
                num(rep.rate_reference),
                num(rep.degenerate),
            ])],
        )?;
        ctx.write_json("disconnect.json", &rep)?;
        if !r.epsilon_ladder.is_empty() {
            let ladder =
                setup.tilted_frequency_ladder(r.alpha, r.alpha_star_ref, &r.epsilon_ladder, r.replicas, cfg.master_seed)?;
            let rows: Vec<Vec<String>> =
                ladder.iter().map(|(e, est)| row([num(e), num(est.mean), num(est.se)])).collect();
            ctx.write_csv("epsilon_ladder.csv", &["epsilon", "tilted_freq", "se"], &rows)?;
        }
        if let Some(rp) = &r.repulsion {
            let eta = build_test_function(&rp.eta)?;
            let rr = repulsion_experiment(&setup, &params, eta.as_ref(), rp.deviation, r.replicas, cfg.master_seed)?;
            ctx.write_json("repulsion.json", &rr)?;
        }
        Ok(())
    }
}

struct SolidifyExperiment;

impl Experiment for SolidifyExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.solidify.as_ref().map(|_| ()).ok_or_else(|| missing("solidify"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let s = cfg.solidify.as_ref().unwrap();
        let env = cfg.keyed_environment()?;
        let d = cfg.d;
        let mut rows = Vec::new();
        let mut last_u0 = None;
        for &n in &s.ns {
            let a_n = blow_up(&s.a, n, d)?;
            let b_n = Arc::new(blow_up(&s.b, n, d)?);
            let offset = (s.offset * f64::from(n)).round() as u32;
            for &frac in &s.puncture_fractions {
                let t = Instant::now();
                let shell = build_shell_interface(&env, &a_n, offset, frac, s.epsilon, cfg.master_seed)?;
                let sigma = &shell.interface.sigma;
                let esc = escape_probability(&env, &a_n, sigma, &b_n, s.green_constant)?;
                let chain = if sigma.is_empty() { None } else { Some(capacity_ratio_check(&env, &a_n, sigma, &b_n)?) };
                ctx.record_solve(format!("N={n} fraction={frac}"), t.elapsed().as_secs_f64());
                let opt = |f: fn(&rcgff::interfaces::CapacityRatioReport) -> String| {
                    chain.as_ref().map(f).unwrap_or_default()
                };
                rows.push(row([
                    num(n),
                    num(frac),
                    num(shell.full_shell.len()),
                    num(shell.removed),
                    num(shell.interface.chi),
                    num(shell.interface.ell_star),
                    num(esc.sup),
                    num(esc.far_field_bound),
                    num(esc.cap_sigma),
                    opt(|c| num(c.cap_a)),
                    opt(|c| num(c.ratio)),
                    opt(|c| num(c.inf_hit)),
                    opt(|c| num(c.holds)),
                ]));
                last_u0 = Some(shell.interface.u0.clone());
            }
        }
        ctx.write_csv(
            "solidify.csv",
            &[
                "N",
                "puncture_fraction",
                "shell_sites",
                "removed",
                "chi",
                "ell_star",
                "sup_escape",
                "far_field_bound",
                "cap_sigma",
                "cap_a",
                "ratio",
                "inf_hit",
                "chain_holds",
            ],
            &rows,
        )?;
        if let Some(sc) = &s.scales {
            let sys = scale_system(d, sc.i, sc.j, sc.l, sc.ell_star, sc.ell_min_base)?;
            let resonance = last_u0.map(|u0| {
                let window = u0.clone();
                resonance_set(&ComplementOf::new(u0), &sys, &window).len()
            });
            ctx.write_json("scales.json", &json!({"system": sys, "resonance_sites_in_u0": resonance}))?;
        }
        Ok(())
    }
}

struct HomogenizeExperiment;

impl Experiment for HomogenizeExperiment {
    fn check(&self, cfg: &ExperimentConfig) -> Result<(), RunError> {
        cfg.homogenize.as_ref().map(|_| ()).ok_or_else(|| missing("homogenize"))
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), RunError> {
        let cfg = ctx.cfg.clone();
        let h = cfg.homogenize.as_ref().unwrap();
        let env = cfg.keyed_environment()?;
        let contraction = cfg.tolerances.contraction;
        let sweep = capacity_scaling(&env, &h.a, &h.b, &h.ns, solver(&cfg)?, contraction)?;
        for p in &sweep.points {
            ctx.record_solve(format!("N={} ({})", p.n, p.solver), p.solve_seconds);
        }
        let rows: Vec<Vec<String>> = sweep
            .points
            .iter()
            .map(|p| row([num(p.n), num(p.a_sites), num(p.b_sites), num(p.capacity), num(p.scaled_capacity), num(p.residual)]))
            .collect();
        ctx.write_csv("scaling.csv", &["N", "a_sites", "b_sites", "capacity", "scaled_capacity", "residual"], &rows)?;
        let mut summary = json!({"verdict": sweep.verdict});
        let reference = match &h.continuum {
            Some(c) => Some((c, continuum_capacity_reference(c.shape, c.sigma2, env.dim())?)),
            None => None,
        };
        if let Some((c, v)) = &reference {
            let last = sweep.points.last().unwrap().scaled_capacity;
            summary["continuum"] = json!({"shape": c.shape, "sigma2": c.sigma2, "reference": v, "relative_error": (last - v).abs() / v});
        }
        if let Some(spec) = &h.eta {
            let eta = build_test_function(spec)?;
            let ps = potential_pairing_convergence(&env, &h.a, &h.b, eta.as_ref(), &h.ns, solver(&cfg)?, contraction)?;
            let rows: Vec<Vec<String>> = ps.points.iter().map(|(n, v)| row([num(n), num(v)])).collect();
            ctx.write_csv("pairing.csv", &["N", "pairing"], &rows)?;
            let mut pj = json!({"verdict": ps.verdict});
            if let Some((c, _)) = &reference {
                if let ContinuumShape::Annulus { r, big_r } = c.shape {
                    if let Ok(q) = annulus_pairing_reference(r, big_r, eta.as_ref()) {
                        let last = ps.points.last().unwrap().1;
                        pj["reference"] = json!(q);
                        pj["relative_error"] = json!((last - q).abs() / q.abs());
                    }
                }
            }
            summary["pairing"] = pj;
        }
        if let Some(df) = &h.diffusivity {
            let est = estimate_diffusivity(&env, df.clock, df.t_horizon, df.window, df.replicas, cfg.master_seed)?;
            let d = env.dim();
            let mut rows = Vec::new();
            for i in 0..d {
                for j in 0..d {
                    rows.push(row([num(i), num(j), num(est.matrix[i][j]), num(est.se[i][j])]));
                }
            }
            ctx.write_csv("diffusivity.csv", &["i", "j", "a_ij", "se"], &rows)?;
            summary["diffusivity"] = json!({"clock": est.clock, "replicas": est.replicas, "discarded": est.discarded});
        }
        ctx.write_json("homogenize.json", &summary)?;
        Ok(())
    }
}
