//! Orthotropic membrane and bending parameters.
//!
//! All quantities are CGS: stiffness coefficients in dyn/cm, bending stiffness
//! in dyn·cm, area density in g/cm².

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of optimized parameters in γ.
pub const PARAM_COUNT: usize = 5;

/// Parameter names in γ order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = ["c00", "c11", "c01", "c22", "b"];

/// Poisson penalty weight used by the estimation objective.
pub const DEFAULT_POISSON_WEIGHT: f64 = 1e8;

/// The optimization variable γ = (c00, c11, c01, c22, b) plus the fixed density.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub c00: f64,
    pub c11: f64,
    pub c01: f64,
    pub c22: f64,
    pub b: f64,
    /// Area density, g/cm². Measured, never optimized.
    pub rho: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineeringParams {
    pub e_u: f64,
    pub e_v: f64,
    pub mu: f64,
    /// ν_uv.
    pub nu: f64,
    pub b: f64,
}

impl MaterialParams {
    pub fn gamma(&self) -> [f64; PARAM_COUNT] {
        [self.c00, self.c11, self.c01, self.c22, self.b]
    }

    pub fn from_gamma(gamma: [f64; PARAM_COUNT], rho: f64) -> Self {
        Self { c00: gamma[0], c11: gamma[1], c01: gamma[2], c22: gamma[3], b: gamma[4], rho }
    }

    /// The 3×3 in-plane stiffness block without the area factor.
    pub fn stiffness_block(&self) -> [[f64; 3]; 3] {
        [[self.c00, self.c01, 0.0], [self.c01, self.c11, 0.0], [0.0, 0.0, self.c22]]
    }

    /// Poisson's ratio ν_uv implied by the compliance coefficients.
    pub fn poisson_ratio(&self) -> f64 {
        self.c01 / self.c11
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("c00", self.c00), ("c11", self.c11), ("c22", self.c22), ("b", self.b), ("rho", self.rho)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonPhysicalMaterial(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.c01.is_finite() {
            return Err(Error::NonPhysicalMaterial("c01 is not finite".into()));
        }
        Ok(())
    }

    pub fn cotton() -> Self {
        compliance_from_engineering(&EngineeringParams::cotton(), 0.0224).expect("valid preset")
    }

    pub fn denim() -> Self {
        compliance_from_engineering(&EngineeringParams::denim(), 0.0324).expect("valid preset")
    }

    pub fn silk() -> Self {
        compliance_from_engineering(&EngineeringParams::silk(), 0.0187).expect("valid preset")
    }

    /// Perturbed starting point for cotton recovery experiments.
    pub fn cotton_initial() -> Self {
        compliance_from_engineering(&EngineeringParams::cotton_initial(), 0.0224).expect("valid preset")
    }
}

impl EngineeringParams {
    pub fn cotton() -> Self {
        Self { e_u: 1.0e5, e_v: 2.8e5, mu: 4.0e4, nu: 0.4, b: 50.0 }
    }

    pub fn denim() -> Self {
        Self { e_u: 5.0e5, e_v: 7.0e5, mu: 2.0e4, nu: 0.45, b: 200.0 }
    }

    pub fn silk() -> Self {
        Self { e_u: 2.0e5, e_v: 3.0e5, mu: 1.5e4, nu: 0.35, b: 10.0 }
    }

    pub fn cotton_initial() -> Self {
        Self { e_u: 2.0e5, e_v: 1.8e5, mu: 5.0e4, nu: 0.3, b: 10.0 }
    }

    /// ν_vu from the symmetry relation ν_vu·E_u = ν_uv·E_v.
    pub fn nu_vu(&self) -> f64 {
        self.nu * self.e_v / self.e_u
    }
}

/// Maps engineering constants onto the compliance coefficients of γ.
pub fn compliance_from_engineering(p: &EngineeringParams, rho: f64) -> Result<MaterialParams> {
    for (name, v) in [("E_u", p.e_u), ("E_v", p.e_v), ("mu", p.mu)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPhysicalMaterial(format!("{name} must be positive, got {v}")));
        }
    }
    let nu_vu = p.nu_vu();
    let coupling = p.nu * nu_vu;
    if !(coupling < 1.0) {
        return Err(Error::NonPhysicalMaterial(format!("nu_uv * nu_vu = {coupling} must be below 1")));
    }
    let d = 1.0 - coupling;
    Ok(MaterialParams { c00: p.e_u / d, c11: p.e_v / d, c01: nu_vu * p.e_u / d, c22: p.mu, b: p.b, rho })
}

/// Inverse of [`compliance_from_engineering`].
pub fn engineering_from_compliance(m: &MaterialParams) -> Result<EngineeringParams> {
    let det = m.c00 * m.c11 - m.c01 * m.c01;
    if !(m.c00 > 0.0) || !(m.c11 > 0.0) || !(det > 0.0) {
        return Err(Error::NonPhysicalMaterial(format!(
            "membrane block [[{}, {}], [{}, {}]] is not positive definite",
            m.c00, m.c01, m.c01, m.c11
        )));
    }
    // d = 1 - nu_uv nu_vu = det / (c00 c11)
    let d = det / (m.c00 * m.c11);
    Ok(EngineeringParams { e_u: m.c00 * d, e_v: m.c11 * d, mu: m.c22, nu: m.c01 / m.c11, b: m.b })
}

/// W_ν = max(0, ν − 0.5).
pub fn poisson_penalty(nu: f64) -> f64 {
    (nu - 0.5).max(0.0)
}
