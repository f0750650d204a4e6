//! Bounded gating primitives, their derivatives, and linear range rescaling.
//!
//! Every gate is evaluated in its canonical `(0, 1)` form. The binary threshold
//! has range `{0, 1}` and a derivative of 0 everywhere, including at the origin.

mod erf;

use std::f64::consts::{FRAC_1_PI, FRAC_PI_2, SQRT_2};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use self::erf::{erf, erfc};

/// 1 / sqrt(2 pi)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// The bounded function `g(x)` behind a self-gated activation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    Arctan,
    GaussCdf,
    Sigmoid,
    Threshold,
}

impl GateKind {
    pub const ALL: [GateKind; 4] = [
        GateKind::Arctan,
        GateKind::GaussCdf,
        GateKind::Sigmoid,
        GateKind::Threshold,
    ];

    /// The gates with a continuous derivative.
    pub const SMOOTH: [GateKind; 3] = [GateKind::Arctan, GateKind::GaussCdf, GateKind::Sigmoid];

    pub fn is_smooth(self) -> bool {
        self != GateKind::Threshold
    }

    /// Canonical `(0, 1)` gate value. No input validation; see [`gate_eval`].
    #[inline]
    pub fn value(self, x: f64) -> f64 {
        match self {
            GateKind::Arctan => (x.atan() + FRAC_PI_2) * FRAC_1_PI,
            GateKind::GaussCdf => 0.5 * erfc(-x / SQRT_2),
            GateKind::Sigmoid => sigmoid(x),
            GateKind::Threshold => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact derivative of [`GateKind::value`].
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            GateKind::Arctan => FRAC_1_PI / (1.0 + x * x),
            GateKind::GaussCdf => INV_SQRT_2PI * (-0.5 * x * x).exp(),
            GateKind::Sigmoid => sigmoid_pair(x).1,
            GateKind::Threshold => 0.0,
        }
    }

    /// Value and derivative together; sigmoid shares its exponential.
    #[inline]
    pub fn value_and_derivative(self, x: f64) -> (f64, f64) {
        match self {
            GateKind::Sigmoid => sigmoid_pair(x),
            _ => (self.value(x), self.derivative(x)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Arctan => "arctan",
            GateKind::GaussCdf => "gausscdf",
            GateKind::Sigmoid => "sigmoid",
            GateKind::Threshold => "threshold",
        }
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arctan" | "atan" => Ok(GateKind::Arctan),
            "gausscdf" | "gauss" | "normal" | "phi" => Ok(GateKind::GaussCdf),
            "sigmoid" | "logistic" => Ok(GateKind::Sigmoid),
            "threshold" | "step" => Ok(GateKind::Threshold),
            other => Err(Error::Config(format!("unknown gate kind `{other}`"))),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid value and derivative through `e = exp(-|x|)`; the derivative is `e / (1 + e)^2`.
fn sigmoid_pair(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let d = 1.0 + e;
    let s = if x >= 0.0 { 1.0 / d } else { e / d };
    (s, e / (d * d))
}

fn finite(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Domain(format!("expected a finite input, got {x}")))
    }
}

/// Canonical `(0, 1)` gate value of `kind` at `x`.
pub fn gate_eval(kind: GateKind, x: f64) -> Result<f64> {
    Ok(kind.value(finite(x)?))
}

/// Derivative of [`gate_eval`] with respect to `x`.
pub fn gate_deriv(kind: GateKind, x: f64) -> Result<f64> {
    Ok(kind.derivative(finite(x)?))
}

/// Error function, absolute error below 1e-15 over the reals.
pub fn erf_core(x: f64) -> Result<f64> {
    Ok(erf(finite(x)?))
}

/// An open interval `(lo, hi)` with `lo < hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::Domain(format!("degenerate interval ({lo}, {hi})")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };
    pub const SYMMETRIC_UNIT: Interval = Interval { lo: -1.0, hi: 1.0 };
    pub const ARCTAN: Interval = Interval {
        lo: -FRAC_PI_2,
        hi: FRAC_PI_2,
    };
}

/// Affine map of `value` from `old` onto `new`; endpoints map to endpoints.
pub fn rescale(value: f64, old: Interval, new: Interval) -> Result<f64> {
    if !(old.lo < old.hi) {
        return Err(Error::Domain(format!(
            "degenerate source interval ({}, {})",
            old.lo, old.hi
        )));
    }
    if !(new.lo < new.hi) {
        return Err(Error::Domain(format!(
            "degenerate target interval ({}, {})",
            new.lo, new.hi
        )));
    }
    Ok((value - old.lo) * (new.width() / old.width()) + new.lo)
}
