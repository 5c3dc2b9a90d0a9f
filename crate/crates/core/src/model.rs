//! Material parameters and the component-wise Landau polynomial.
//!
//! Each polarization component carries its own `F(p) = a p^2 + b p^4 + c p^6`.
//! The convex–concave split takes positive and negative parts of the three
//! coefficients, so both `F+` and `F-` are convex even polynomials.

use crate::error::{GldError, Result};

/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Property {
    Ferroelectric,
    Dielectric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComponentParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub g: f64,
    pub rho_v: f64,
    pub property: Property,
}

impl ComponentParams {
    pub fn ferroelectric(alpha: f64, beta: f64, gamma: f64, g: f64, rho_v: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma,
            g,
            rho_v,
            property: Property::Ferroelectric,
        }
    }

    pub fn dielectric(alpha: f64) -> Self {
        Self {
            alpha,
            beta: 0.0,
            gamma: 0.0,
            g: 0.0,
            rho_v: 0.0,
            property: Property::Dielectric,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams {
    pub epsilon: f64,
    pub components: [ComponentParams; 2],
}

impl MaterialParams {
    /// Both components ferroelectric with identical constants.
    pub fn isotropic_ferroelectric(epsilon: f64, alpha: f64, beta: f64, gamma: f64, g: f64, rho_v: f64) -> Self {
        let c = ComponentParams::ferroelectric(alpha, beta, gamma, g, rho_v);
        Self {
            epsilon,
            components: [c, c],
        }
    }

    /// The 80 nm x 40 nm monolayer device constants (SI units), with the
    /// viscosity supplied by the caller.
    pub fn monolayer(rho_v: f64) -> Self {
        Self::isotropic_ferroelectric(VACUUM_PERMITTIVITY * 5.0, -1.54e9, -2.65e12, 2.6e15, 1e-8, rho_v)
    }

    /// Minimal conditions for the discrete operator to be defined: finite
    /// coefficients, `epsilon > 0`, `g >= 0`, `rho_v >= 0`. Weaker than
    /// `validate`, so that linear test regimes can be assembled.
    pub fn validate_numerics(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.epsilon.is_finite()
            && self.components.iter().all(|c| {
                [c.alpha, c.beta, c.gamma, c.g, c.rho_v].iter().all(|v| v.is_finite()) && c.g >= 0.0 && c.rho_v >= 0.0
            });
        if ok {
            Ok(())
        } else {
            Err(GldError::Config(
                "material coefficients must be finite with epsilon > 0, g >= 0, rho_v >= 0".into(),
            ))
        }
    }

    /// Checks the sign conditions tying coefficients to the material property.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            errs.push(format!("epsilon must be positive, got {}", self.epsilon));
        }
        for (i, c) in self.components.iter().enumerate() {
            let vals = [c.alpha, c.beta, c.gamma, c.g, c.rho_v];
            if vals.iter().any(|v| !v.is_finite()) {
                errs.push(format!("component {}: non-finite coefficient", i + 1));
                continue;
            }
            match c.property {
                Property::Dielectric => {
                    if !(c.alpha > 0.0) {
                        errs.push(format!("component {}: dielectric requires alpha > 0", i + 1));
                    }
                    if c.beta != 0.0 || c.gamma != 0.0 || c.g != 0.0 || c.rho_v != 0.0 {
                        errs.push(format!(
                            "component {}: dielectric requires beta = gamma = g = rho_v = 0",
                            i + 1
                        ));
                    }
                }
                Property::Ferroelectric => {
                    if !(c.g > 0.0) {
                        errs.push(format!("component {}: ferroelectric requires g > 0", i + 1));
                    }
                    if !(c.gamma > 0.0 || (c.gamma == 0.0 && c.beta > 0.0)) {
                        errs.push(format!(
                            "component {}: ferroelectric requires gamma > 0, or gamma = 0 and beta > 0",
                            i + 1
                        ));
                    }
                    if !(c.rho_v > 0.0) {
                        errs.push(format!("component {}: ferroelectric requires rho_v > 0", i + 1));
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(GldError::Config(errs.join("; ")))
        }
    }
}

/// `F(p) = a p^2 + b p^4 + c p^6`
#[allow(non_snake_case)]
pub fn landau_F(params: &MaterialParams, component: usize, p: f64) -> f64 {
    let c = &params.components[component];
    poly(c.alpha, c.beta, c.gamma, p)
}

/// `F'(p) = 2 a p + 4 b p^3 + 6 c p^5`
#[allow(non_snake_case)]
pub fn dF_times_p(params: &MaterialParams, component: usize, p: f64) -> f64 {
    let c = &params.components[component];
    dpoly(c.alpha, c.beta, c.gamma, p)
}

/// `F''(p)`
#[allow(non_snake_case)]
pub fn d2F(params: &MaterialParams, component: usize, p: f64) -> f64 {
    let c = &params.components[component];
    d2poly(c.alpha, c.beta, c.gamma, p)
}

#[inline]
fn poly(a: f64, b: f64, c: f64, p: f64) -> f64 {
    let q = p * p;
    q * (a + q * (b + q * c))
}

#[inline]
fn dpoly(a: f64, b: f64, c: f64, p: f64) -> f64 {
    let q = p * p;
    p * (2.0 * a + q * (4.0 * b + q * 6.0 * c))
}

#[inline]
fn d2poly(a: f64, b: f64, c: f64, p: f64) -> f64 {
    let q = p * p;
    2.0 * a + q * (12.0 * b + q * 30.0 * c)
}

/// Nonnegative coefficients of one convex part.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexPart {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ConvexPart {
    pub fn value(&self, p: f64) -> f64 {
        poly(self.alpha, self.beta, self.gamma, p)
    }

    pub fn derivative(&self, p: f64) -> f64 {
        dpoly(self.alpha, self.beta, self.gamma, p)
    }

    pub fn second_derivative(&self, p: f64) -> f64 {
        d2poly(self.alpha, self.beta, self.gamma, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCoefficients {
    pub plus: [ConvexPart; 2],
    pub minus: [ConvexPart; 2],
}

pub fn split(params: &MaterialParams) -> SplitCoefficients {
    let part = |sign: f64, c: &ComponentParams| ConvexPart {
        alpha: (sign * c.alpha).max(0.0),
        beta: (sign * c.beta).max(0.0),
        gamma: (sign * c.gamma).max(0.0),
    };
    let [c0, c1] = &params.components;
    SplitCoefficients {
        plus: [part(1.0, c0), part(1.0, c1)],
        minus: [part(-1.0, c0), part(-1.0, c1)],
    }
}

/// Derivative of the implicit (convex) part.
#[allow(non_snake_case)]
pub fn dF_plus(params: &MaterialParams, component: usize, p: f64) -> f64 {
    split(params).plus[component].derivative(p)
}

/// Derivative of the explicit (concave-subtracted) part.
#[allow(non_snake_case)]
pub fn dF_minus(params: &MaterialParams, component: usize, p: f64) -> f64 {
    split(params).minus[component].derivative(p)
}

#[allow(non_snake_case)]
pub fn d2F_plus(params: &MaterialParams, component: usize, p: f64) -> f64 {
    split(params).plus[component].second_derivative(p)
}

#[allow(non_snake_case)]
pub fn d2F_minus(params: &MaterialParams, component: usize, p: f64) -> f64 {
    split(params).minus[component].second_derivative(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Uniqueness {
    Satisfied,
    Violated,
    NotApplicable,
}

/// Sufficient condition for strict convexity of `F` along each ferroelectric
/// component: `30 c t^2 + 12 b t + 2 a > 0` for all `t > 0`, checked through
/// its two closed-form cases.
pub fn check_uniqueness_conditions(params: &MaterialParams) -> [Uniqueness; 2] {
    params.components.map(|c| match c.property {
        Property::Dielectric => Uniqueness::NotApplicable,
        Property::Ferroelectric => {
            let first = c.alpha > 0.0 && c.beta > 0.0;
            let second = c.gamma > 0.0 && c.beta < 0.0 && 3.0 * c.beta * c.beta / (5.0 * c.gamma) < c.alpha;
            if first || second {
                Uniqueness::Satisfied
            } else {
                Uniqueness::Violated
            }
        }
    })
}

/// Characteristic scales used to make the equations dimensionless.
///
/// Lengths are measured in `length`, time in `time`, polarization in
/// `polarization`; the potential scale `polarization * length / epsilon`
/// makes the Poisson operator O(1) and energy densities are measured in
/// `polarization^2 / epsilon`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scaling {
    pub length: f64,
    pub time: f64,
    pub polarization: f64,
    pub epsilon: f64,
}

impl Scaling {
    pub fn identity() -> Self {
        Self {
            length: 1.0,
            time: 1.0,
            polarization: 1.0,
            epsilon: 1.0,
        }
    }

    pub fn new(length: f64, time: f64, epsilon: f64) -> Self {
        Self {
            length,
            time,
            polarization: 1.0,
            epsilon,
        }
    }

    pub fn potential(&self) -> f64 {
        self.polarization * self.length / self.epsilon
    }

    pub fn field(&self) -> f64 {
        self.polarization / self.epsilon
    }

    pub fn energy_density(&self) -> f64 {
        self.polarization * self.polarization / self.epsilon
    }

    pub fn charge_density(&self) -> f64 {
        self.polarization / self.length
    }

    /// Scale of the gradient flux `U = -g grad P`.
    pub fn gradient_flux(&self) -> f64 {
        self.polarization / self.epsilon
    }

    pub fn nondimensionalize(&self, p: &MaterialParams) -> MaterialParams {
        let e = self.epsilon;
        let p0 = self.polarization;
        let l0 = self.length;
        MaterialParams {
            epsilon: p.epsilon / e,
            components: p.components.map(|c| ComponentParams {
                alpha: c.alpha * e,
                beta: c.beta * e * p0 * p0,
                gamma: c.gamma * e * p0.powi(4),
                g: c.g * e / (l0 * l0),
                rho_v: c.rho_v * e / self.time,
                property: c.property,
            }),
        }
    }
}
