//! Continuous-time random walks among the conductances.
//!
//! The skeleton `Y_n` jumps from `y` to `z ~ y` with probability
//! `ω_{y,z} / ω_y`. The constant-speed walk waits Exp(1) at every site; the
//! variable-speed walk waits Exp(ω_y). Stopping rules are checked on the
//! skeleton, in the order hit, exit, radius, before each holding time.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::EdgeWeights;
use crate::error::{Error, Result};
use crate::lattice::{Site, SiteSet};
use crate::rng::stream;
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Exp(1) holding times.
    #[default]
    Constant,
    /// Exp(ω_y) holding times.
    Variable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Hit,
    Exit,
    Radius,
    TimeCap,
    MaxJumps,
}

/// Stopping rules; at least one of `exit`, `time_cap`, `max_jumps` must be set.
#[derive(Clone, Copy, Debug, Default)]
pub struct StopRules<'a> {
    /// Stop on entering this set (`H_A`, time 0 included).
    pub hit: Option<&'a SiteSet>,
    /// Stop on leaving this set (`T_U`).
    pub exit: Option<&'a SiteSet>,
    /// Stop once `|X - X_0|_∞ ≥ r` (`τ_r`).
    pub radius: Option<i32>,
    /// Stop when the clock passes this time; the walk is then at `X_cap`.
    pub time_cap: Option<f64>,
    pub max_jumps: Option<usize>,
}

impl StopRules<'_> {
    fn check(&self) -> Result<()> {
        if self.exit.is_none() && self.time_cap.is_none() && self.max_jumps.is_none() {
            return Err(Error::param("walk needs an exit set, a time cap or a jump cap to terminate"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WalkPath {
    pub skeleton: Vec<Site>,
    /// `holding_times[n]` is spent at `skeleton[n]`; the last site's holding
    /// time is omitted unless the time cap cut it.
    pub holding_times: Vec<f64>,
    pub stop_reason: StopReason,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct WalkEnd {
    pub site: Site,
    pub time: f64,
    pub jumps: usize,
    pub stop_reason: StopReason,
}

fn run<R: Rng + ?Sized>(
    env: &dyn EdgeWeights,
    start: Site,
    rules: &StopRules<'_>,
    clock: Clock,
    rng: &mut R,
    mut record: impl FnMut(Site, Option<f64>),
) -> Result<WalkEnd> {
    rules.check()?;
    let d = start.dim();
    let mut x = start;
    let mut t = 0.0;
    let mut jumps = 0usize;
    let mut w = [0.0f64; 2 * crate::lattice::MAX_DIM];
    loop {
        let reason = if rules.hit.is_some_and(|a| a.contains(&x)) {
            Some(StopReason::Hit)
        } else if rules.exit.is_some_and(|u| !u.contains(&x)) {
            Some(StopReason::Exit)
        } else if rules.radius.is_some_and(|r| x.linf_dist(&start) >= r) {
            Some(StopReason::Radius)
        } else if rules.max_jumps.is_some_and(|m| jumps >= m) {
            Some(StopReason::MaxJumps)
        } else {
            None
        };
        if let Some(stop_reason) = reason {
            record(x, None);
            return Ok(WalkEnd { site: x, time: t, jumps, stop_reason });
        }
        let mut total = 0.0;
        for (k, slot) in w.iter_mut().enumerate().take(2 * d) {
            *slot = match env.toward(&x, k) {
                Some(v) => v,
                None => return Err(Error::WindowEdge(format!("{x}"))),
            };
            total += *slot;
        }
        let e: f64 = Exp1.sample(rng);
        let hold = match clock {
            Clock::Constant => e,
            Clock::Variable => e / total,
        };
        if let Some(cap) = rules.time_cap {
            if t + hold > cap {
                record(x, Some(cap - t));
                return Ok(WalkEnd { site: x, time: cap, jumps, stop_reason: StopReason::TimeCap });
            }
        }
        record(x, Some(hold));
        t += hold;
        let mut u = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < 2 * d && u >= w[k] {
            u -= w[k];
            k += 1;
        }
        x = x.neighbor(k);
        jumps += 1;
    }
}

/// Simulates one trajectory, recording the skeleton and holding times.
pub fn walk_simulate<R: Rng + ?Sized>(
    env: &dyn EdgeWeights,
    start: Site,
    rules: &StopRules<'_>,
    clock: Clock,
    rng: &mut R,
) -> Result<WalkPath> {
    let mut skeleton = Vec::new();
    let mut holding_times = Vec::new();
    let end = run(env, start, rules, clock, rng, |x, h| {
        skeleton.push(x);
        if let Some(h) = h {
            holding_times.push(h);
        }
    })?;
    Ok(WalkPath { skeleton, holding_times, stop_reason: end.stop_reason })
}

/// Like [`walk_simulate`] but keeps only the final state.
pub fn walk_endpoint<R: Rng + ?Sized>(
    env: &dyn EdgeWeights,
    start: Site,
    rules: &StopRules<'_>,
    clock: Clock,
    rng: &mut R,
) -> Result<WalkEnd> {
    run(env, start, rules, clock, rng, |_, _| {})
}

/// Monte Carlo estimate of `P_x[H_A < T_B]`, one stream per replica.
pub fn hitting_probability_mc(
    env: &dyn EdgeWeights,
    x: Site,
    a: &SiteSet,
    b: &SiteSet,
    replicas: u64,
    seed: u64,
) -> Result<Estimate> {
    let rules = StopRules { hit: Some(a), exit: Some(b), ..Default::default() };
    let hits: Result<Vec<u64>> = (0..replicas)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, "potential.hitting", i);
            let end = walk_endpoint(env, x, &rules, Clock::Constant, &mut rng)?;
            Ok(u64::from(end.stop_reason == StopReason::Hit))
        })
        .collect();
    Ok(Estimate::proportion(hits?.iter().sum(), replicas))
}
