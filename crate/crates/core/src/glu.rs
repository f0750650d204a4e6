//! First- and second-order gated linear units over the same gates and ranges
//! as the self-gated activations.
//!
//! First order: `a(x, y) = g(x) * y`. Second order: `a(x, y) = g(x) * x * y`.
//! Here `g` is the effective (range-rescaled) gate.

use std::fmt;

use crate::activations::{ActivationSpec, RangeParam};
use crate::error::{Error, Result};
use crate::gatecore::GateKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GluOrder {
    First,
    Second,
}

impl GluOrder {
    pub fn as_number(self) -> u8 {
        match self {
            GluOrder::First => 1,
            GluOrder::Second => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(GluOrder::First),
            2 => Ok(GluOrder::Second),
            _ => Err(Error::Config(format!("GLU order must be 1 or 2, got {n}"))),
        }
    }
}

impl fmt::Display for GluOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_number())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GluSpec {
    pub gate: GateKind,
    pub range: RangeParam,
    pub order: GluOrder,
}

impl GluSpec {
    pub fn new(gate: GateKind, range: RangeParam, order: GluOrder) -> Self {
        GluSpec { gate, range, order }
    }

    /// The self-gated activation sharing this gate and range.
    pub fn activation(&self) -> ActivationSpec {
        ActivationSpec::new(self.gate, self.range.clone())
    }

    pub fn glu() -> Self {
        Self::new(GateKind::Sigmoid, RangeParam::Standard, GluOrder::First)
    }
    pub fn geglu() -> Self {
        Self::new(GateKind::GaussCdf, RangeParam::Standard, GluOrder::Second)
    }
    pub fn swiglu() -> Self {
        Self::new(GateKind::Sigmoid, RangeParam::Standard, GluOrder::Second)
    }
    pub fn reglu() -> Self {
        Self::new(GateKind::Threshold, RangeParam::Standard, GluOrder::Second)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GluGrad {
    pub d_x: f64,
    pub d_y: f64,
    pub d_alpha: Vec<f64>,
}

fn check_inputs(x: f64, y: f64) -> Result<()> {
    if x.is_finite() && y.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("expected finite inputs, got ({x}, {y})")))
    }
}

fn check_channel(range: &RangeParam, channel: usize) -> Result<()> {
    if let RangeParam::PerChannel(a) = range {
        if channel >= a.len() {
            return Err(Error::Index {
                index: channel,
                len: a.len(),
            });
        }
    }
    Ok(())
}

pub fn glu_forward(spec: &GluSpec, x: f64, y: f64, channel: usize) -> Result<f64> {
    check_inputs(x, y)?;
    check_channel(&spec.range, channel)?;
    let (s, b) = spec.range.affine(channel);
    let gate = spec.gate.value(x) * s + b;
    Ok(match spec.order {
        GluOrder::First => gate * y,
        GluOrder::Second => gate * x * y,
    })
}

pub fn glu_backward(spec: &GluSpec, x: f64, y: f64, channel: usize) -> Result<GluGrad> {
    check_inputs(x, y)?;
    check_channel(&spec.range, channel)?;
    let (g, dg) = spec.gate.value_and_derivative(x);
    let (s, b) = spec.range.affine(channel);
    let gate = g * s + b;
    let mut d_alpha = vec![0.0; spec.range.n_params()];
    let (d_x, d_y) = match spec.order {
        GluOrder::First => {
            spec.range.accumulate_param_grad(g, channel, y, &mut d_alpha);
            (s * dg * y, gate)
        }
        GluOrder::Second => {
            spec.range.accumulate_param_grad(g, channel, x * y, &mut d_alpha);
            ((gate + x * s * dg) * y, gate * x)
        }
    };
    Ok(GluGrad { d_x, d_y, d_alpha })
}
