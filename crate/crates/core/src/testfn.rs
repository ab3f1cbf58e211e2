//! Continuous, compactly supported test functions `η : R^d → R` used in
//! pairings `⟨𝕏_N, η⟩ = N^{-d} Σ_x φ_x η(x/N)`.

use std::sync::Arc;

use serde_json::json;

use crate::error::{Error, Result};
use crate::lattice::SiteSet;
use crate::potential::SiteFunction;
use crate::registry::{NamedSpec, Registry};

pub trait TestFunction: Send + Sync {
    fn spec(&self) -> NamedSpec;

    fn eval(&self, p: &[f64]) -> f64;

    /// A Euclidean ball `(center, radius)` containing the support.
    fn support(&self) -> (Vec<f64>, f64);
}

fn radial(p: &[f64], center: &[f64]) -> f64 {
    p.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `amplitude · exp(1 - 1 / (1 - s²))` for `s = |p - c| / r < 1`.
pub struct RadialBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

impl TestFunction for RadialBump {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("radial_bump", json!({"center": self.center, "radius": self.radius, "amplitude": self.amplitude}))
    }
    fn eval(&self, p: &[f64]) -> f64 {
        let s = radial(p, &self.center) / self.radius;
        if s >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - 1.0 / (1.0 - s * s)).exp()
        }
    }
    fn support(&self) -> (Vec<f64>, f64) {
        (self.center.clone(), self.radius)
    }
}

/// `Σ_k coeffs[k] s^k · (1 - s²)^power` for `s = |p - c| / r < 1`.
pub struct PolynomialBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub coeffs: Vec<f64>,
    pub power: f64,
}

impl TestFunction for PolynomialBump {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new(
            "polynomial_bump",
            json!({"center": self.center, "radius": self.radius, "coeffs": self.coeffs, "power": self.power}),
        )
    }
    fn eval(&self, p: &[f64]) -> f64 {
        let s = radial(p, &self.center) / self.radius;
        if s >= 1.0 {
            return 0.0;
        }
        let poly = self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c);
        poly * (1.0 - s * s).powf(self.power)
    }
    fn support(&self) -> (Vec<f64>, f64) {
        (self.center.clone(), self.radius)
    }
}

/// 1 on the ball of radius `radius`, 0 beyond `radius + width`, C¹ smoothstep between.
pub struct MollifiedIndicator {
    pub center: Vec<f64>,
    pub radius: f64,
    pub width: f64,
}

impl TestFunction for MollifiedIndicator {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("mollified_indicator", json!({"center": self.center, "radius": self.radius, "width": self.width}))
    }
    fn eval(&self, p: &[f64]) -> f64 {
        let r = radial(p, &self.center);
        if r <= self.radius {
            1.0
        } else if r >= self.radius + self.width {
            0.0
        } else {
            let t = 1.0 - (r - self.radius) / self.width;
            t * t * (3.0 - 2.0 * t)
        }
    }
    fn support(&self) -> (Vec<f64>, f64) {
        (self.center.clone(), self.radius + self.width)
    }
}

pub struct Zero {
    pub d: usize,
}

impl TestFunction for Zero {
    fn spec(&self) -> NamedSpec {
        NamedSpec::new("zero", json!({"d": self.d}))
    }
    fn eval(&self, _: &[f64]) -> f64 {
        0.0
    }
    fn support(&self) -> (Vec<f64>, f64) {
        (vec![0.0; self.d], 0.0)
    }
}

fn center_of(s: &NamedSpec) -> Result<Vec<f64>> {
    match s.params.get("center") {
        Some(_) => s.vec_param("center"),
        None => Ok(vec![0.0; s.f64_param_or("d", 3.0)? as usize]),
    }
}

fn positive(s: &NamedSpec, key: &str, default: Option<f64>) -> Result<f64> {
    let v = match default {
        Some(d) => s.f64_param_or(key, d)?,
        None => s.f64_param(key)?,
    };
    if !(v > 0.0) {
        return Err(Error::param(format!("{}: `{key}` must be positive", s.kind)));
    }
    Ok(v)
}

pub fn test_function_registry() -> Registry<dyn TestFunction> {
    let mut r: Registry<dyn TestFunction> = Registry::new("test function");
    r.register("radial_bump", |s| {
        Ok(Box::new(RadialBump {
            center: center_of(s)?,
            radius: positive(s, "radius", None)?,
            amplitude: s.f64_param_or("amplitude", 1.0)?,
        }))
    });
    r.register("polynomial_bump", |s| {
        let coeffs = match s.params.get("coeffs") {
            Some(_) => s.vec_param("coeffs")?,
            None => vec![1.0],
        };
        Ok(Box::new(PolynomialBump {
            center: center_of(s)?,
            radius: positive(s, "radius", None)?,
            coeffs,
            power: positive(s, "power", Some(2.0))?,
        }))
    });
    r.register("mollified_indicator", |s| {
        Ok(Box::new(MollifiedIndicator {
            center: center_of(s)?,
            radius: s.f64_param("radius")?.max(0.0),
            width: positive(s, "width", None)?,
        }))
    });
    r.register("zero", |s| Ok(Box::new(Zero { d: s.f64_param_or("d", 3.0)? as usize })));
    r
}

pub fn build_test_function(spec: &NamedSpec) -> Result<Arc<dyn TestFunction>> {
    Ok(Arc::from(test_function_registry().build(spec)?))
}

/// `x ↦ N^{-d} η(x/N)` on `domain`, so that `⟨𝕏_N, η⟩ = Σ φ_x · (this)_x`.
pub fn discretize(eta: &dyn TestFunction, domain: &Arc<SiteSet>, n: f64) -> SiteFunction {
    let scale = n.powi(-(domain.dim() as i32));
    SiteFunction::from_fn(Arc::clone(domain), |x| scale * eta.eval(&x.scaled_point(n)))
}

/// `⟨𝕏_N, η⟩` for a field stored on its own domain.
pub fn pairing(field: &SiteFunction, eta: &dyn TestFunction, n: f64) -> f64 {
    let scale = n.powi(-(field.domain.dim() as i32));
    field
        .domain
        .iter()
        .zip(&field.values)
        .map(|(x, v)| v * eta.eval(&x.scaled_point(n)))
        .sum::<f64>()
        * scale
}
