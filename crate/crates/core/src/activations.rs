//! Self-gated activations `a(x) = x * g(x)` with expandable gating ranges.
//!
//! A [`RangeParam`] turns the canonical gate `g(x) in (0, 1)` into an effective
//! gate `s * g(x) + b`. For the symmetric expansion the gate covers
//! `(-alpha, 1 + alpha)`, so `s = 1 + 2 alpha` and `b = -alpha`; the other variants
//! only move one endpoint or move the two endpoints independently.
//!
//! The gradient of the symmetric variant with respect to the input is
//! `(1 + 2 alpha) * (g(x) + x g'(x)) - alpha`, which reduces to the plain
//! derivative at `alpha = 0`.

use std::fmt;

use crate::error::{Error, Result};
use crate::gatecore::GateKind;

/// How the gating range is parameterized.
#[derive(Clone, Debug, PartialEq)]
pub enum RangeParam {
    /// `(0, 1)`
    Standard,
    /// `(-a, 1 + a)`
    Symmetric(f64),
    /// `(-a, 1)`
    MinOnly(f64),
    /// `(0, 1 + a)`
    MaxOnly(f64),
    /// `(-a1, 1 + a2)`
    Asymmetric(f64, f64),
    /// `(-a[c], 1 + a[c])` for channel `c`
    PerChannel(Vec<f64>),
}

/// The parameter layout of a [`RangeParam`] without its values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RangeShape {
    Standard,
    Symmetric,
    MinOnly,
    MaxOnly,
    Asymmetric,
    PerChannel(usize),
}

impl RangeShape {
    pub fn n_params(self) -> usize {
        match self {
            RangeShape::Standard => 0,
            RangeShape::Symmetric | RangeShape::MinOnly | RangeShape::MaxOnly => 1,
            RangeShape::Asymmetric => 2,
            RangeShape::PerChannel(n) => n,
        }
    }

    /// Short tag used on the command line and in config files.
    pub fn tag(self) -> &'static str {
        match self {
            RangeShape::Standard => "std",
            RangeShape::Symmetric => "sym",
            RangeShape::MinOnly => "min",
            RangeShape::MaxOnly => "max",
            RangeShape::Asymmetric => "asym",
            RangeShape::PerChannel(_) => "chan",
        }
    }
}

/// All range parameters set to zero, which reproduces the standard gate.
pub fn alpha_init(shape: RangeShape) -> RangeParam {
    RangeParam::filled(shape, 0.0)
}

impl RangeParam {
    /// Every free parameter set to `value`.
    pub fn filled(shape: RangeShape, value: f64) -> RangeParam {
        match shape {
            RangeShape::Standard => RangeParam::Standard,
            RangeShape::Symmetric => RangeParam::Symmetric(value),
            RangeShape::MinOnly => RangeParam::MinOnly(value),
            RangeShape::MaxOnly => RangeParam::MaxOnly(value),
            RangeShape::Asymmetric => RangeParam::Asymmetric(value, value),
            RangeShape::PerChannel(n) => RangeParam::PerChannel(vec![value; n]),
        }
    }

    pub fn shape(&self) -> RangeShape {
        match self {
            RangeParam::Standard => RangeShape::Standard,
            RangeParam::Symmetric(_) => RangeShape::Symmetric,
            RangeParam::MinOnly(_) => RangeShape::MinOnly,
            RangeParam::MaxOnly(_) => RangeShape::MaxOnly,
            RangeParam::Asymmetric(..) => RangeShape::Asymmetric,
            RangeParam::PerChannel(a) => RangeShape::PerChannel(a.len()),
        }
    }

    pub fn n_params(&self) -> usize {
        self.shape().n_params()
    }

    /// The free parameters in a fixed order (`a1, a2` for the asymmetric form).
    pub fn params(&self) -> Vec<f64> {
        match self {
            RangeParam::Standard => Vec::new(),
            RangeParam::Symmetric(a) | RangeParam::MinOnly(a) | RangeParam::MaxOnly(a) => vec![*a],
            RangeParam::Asymmetric(a1, a2) => vec![*a1, *a2],
            RangeParam::PerChannel(a) => a.clone(),
        }
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "range {:?} takes {} parameters, got {}",
                self.shape(),
                self.n_params(),
                values.len()
            )));
        }
        match self {
            RangeParam::Standard => {}
            RangeParam::Symmetric(a) | RangeParam::MinOnly(a) | RangeParam::MaxOnly(a) => {
                *a = values[0]
            }
            RangeParam::Asymmetric(a1, a2) => {
                *a1 = values[0];
                *a2 = values[1];
            }
            RangeParam::PerChannel(a) => a.copy_from_slice(values),
        }
        Ok(())
    }

    fn check_channel(&self, channel: usize) -> Result<()> {
        match self {
            RangeParam::PerChannel(a) if channel >= a.len() => Err(Error::Index {
                index: channel,
                len: a.len(),
            }),
            _ => Ok(()),
        }
    }

    /// `(scale, offset)` such that the effective gate is `scale * g + offset`.
    ///
    /// Panics if `channel` is out of bounds for a per-channel range.
    #[inline]
    pub fn affine(&self, channel: usize) -> (f64, f64) {
        match *self {
            RangeParam::Standard => (1.0, 0.0),
            RangeParam::Symmetric(a) => (1.0 + 2.0 * a, -a),
            RangeParam::MinOnly(a) => (1.0 + a, -a),
            RangeParam::MaxOnly(a) => (1.0 + a, 0.0),
            RangeParam::Asymmetric(a1, a2) => (1.0 + a1 + a2, -a1),
            RangeParam::PerChannel(ref a) => {
                let a = a[channel];
                (1.0 + 2.0 * a, -a)
            }
        }
    }

    /// Adds `upstream * d(effective gate)/d(param)` into `out`, given the raw gate value `g`.
    #[inline]
    pub fn accumulate_param_grad(&self, g: f64, channel: usize, upstream: f64, out: &mut [f64]) {
        match self {
            RangeParam::Standard => {}
            RangeParam::Symmetric(_) => out[0] += upstream * (2.0 * g - 1.0),
            RangeParam::MinOnly(_) => out[0] += upstream * (g - 1.0),
            RangeParam::MaxOnly(_) => out[0] += upstream * g,
            RangeParam::Asymmetric(..) => {
                out[0] += upstream * (g - 1.0);
                out[1] += upstream * g;
            }
            RangeParam::PerChannel(_) => out[channel] += upstream * (2.0 * g - 1.0),
        }
    }

    /// The gating interval `(lo, hi)` for `channel`. May be inverted for negative parameters.
    pub fn bounds(&self, channel: usize) -> Result<(f64, f64)> {
        self.check_channel(channel)?;
        let (s, b) = self.affine(channel);
        Ok((b, s + b))
    }
}

impl fmt::Display for RangeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangeParam::Standard => write!(f, "(0, 1)"),
            RangeParam::Symmetric(a) => write!(f, "(-{a}, 1 + {a})"),
            RangeParam::MinOnly(a) => write!(f, "(-{a}, 1)"),
            RangeParam::MaxOnly(a) => write!(f, "(0, 1 + {a})"),
            RangeParam::Asymmetric(a1, a2) => write!(f, "(-{a1}, 1 + {a2})"),
            RangeParam::PerChannel(a) => write!(f, "(-a, 1 + a) per channel [{} channels]", a.len()),
        }
    }
}

/// A gate together with its range parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSpec {
    pub gate: GateKind,
    pub range: RangeParam,
}

impl ActivationSpec {
    pub fn new(gate: GateKind, range: RangeParam) -> Self {
        ActivationSpec { gate, range }
    }

    pub fn standard(gate: GateKind) -> Self {
        ActivationSpec::new(gate, RangeParam::Standard)
    }

    pub fn relu() -> Self {
        Self::standard(GateKind::Threshold)
    }
    pub fn gelu() -> Self {
        Self::standard(GateKind::GaussCdf)
    }
    pub fn silu() -> Self {
        Self::standard(GateKind::Sigmoid)
    }
    pub fn atlu() -> Self {
        Self::standard(GateKind::Arctan)
    }
    pub fn xatlu(alpha: f64) -> Self {
        ActivationSpec::new(GateKind::Arctan, RangeParam::Symmetric(alpha))
    }
}

/// Gradient of a self-gated activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActGrad {
    /// da/dx
    pub d_input: f64,
    /// da/d(param) for each free range parameter, in [`RangeParam::params`] order.
    pub d_alpha: Vec<f64>,
}

fn check_input(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("expected a finite input, got {x}")))
    }
}

/// The gate after range rescaling.
pub fn effective_gate(spec: &ActivationSpec, x: f64, channel: usize) -> Result<f64> {
    check_input(x)?;
    spec.range.check_channel(channel)?;
    let (s, b) = spec.range.affine(channel);
    Ok(spec.gate.value(x) * s + b)
}

pub fn act_forward(spec: &ActivationSpec, x: f64, channel: usize) -> Result<f64> {
    Ok(x * effective_gate(spec, x, channel)?)
}

pub fn act_backward(spec: &ActivationSpec, x: f64, channel: usize) -> Result<ActGrad> {
    check_input(x)?;
    spec.range.check_channel(channel)?;
    let (g, dg) = spec.gate.value_and_derivative(x);
    let (s, b) = spec.range.affine(channel);
    let d_input = g * s + b + x * s * dg;
    let mut d_alpha = vec![0.0; spec.range.n_params()];
    spec.range.accumulate_param_grad(g, channel, x, &mut d_alpha);
    Ok(ActGrad { d_input, d_alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    const ALPHAS: [f64; 5] = [-0.4, 0.0, 0.32, 1.0, 2.0];

    fn all_ranges(alpha: f64) -> Vec<RangeParam> {
        vec![
            RangeParam::Standard,
            RangeParam::Symmetric(alpha),
            RangeParam::MinOnly(alpha),
            RangeParam::MaxOnly(alpha),
            RangeParam::Asymmetric(alpha, 0.5 * alpha + 0.1),
            RangeParam::PerChannel(vec![alpha, 0.5 * alpha, 0.25]),
        ]
    }

    #[test]
    fn effective_gate_examples() {
        let g = effective_gate(&ActivationSpec::xatlu(0.0), 1.0, 0).unwrap();
        assert!((g - 0.75).abs() < 1e-16);
        let g = effective_gate(&ActivationSpec::xatlu(0.5), 1.0, 0).unwrap();
        assert!((g - 1.0).abs() < 1e-15);
        let asym = ActivationSpec::new(GateKind::Arctan, RangeParam::Asymmetric(0.3, 0.0));
        let g = effective_gate(&asym, -1e12, 0).unwrap();
        assert!((g + 0.3).abs() < 1e-12);
    }

    #[test]
    fn variant_ranges() {
        assert_eq!(RangeParam::Symmetric(0.5).bounds(0).unwrap(), (-0.5, 2.0 - 0.5));
        assert_eq!(RangeParam::MinOnly(0.25).bounds(0).unwrap(), (-0.25, 1.0));
        assert_eq!(RangeParam::MaxOnly(0.25).bounds(0).unwrap(), (0.0, 1.25));
        assert_eq!(RangeParam::Asymmetric(0.1, 0.5).bounds(0).unwrap(), (-0.1, 1.5));
        assert_eq!(RangeParam::Standard.bounds(3).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn act_forward_examples() {
        assert_eq!(act_forward(&ActivationSpec::atlu(), 0.0, 0).unwrap(), 0.0);
        assert!((act_forward(&ActivationSpec::atlu(), 1.0, 0).unwrap() - 0.75).abs() < 1e-16);
        let gelu = act_forward(&ActivationSpec::gelu(), 1.0, 0).unwrap();
        assert!((gelu - 0.8413447460685429).abs() < 1e-15);
        let x = act_forward(&ActivationSpec::xatlu(0.5), 1.0, 0).unwrap();
        assert!((x - 1.0).abs() < 1e-15);
        assert_eq!(act_forward(&ActivationSpec::relu(), -2.0, 0).unwrap(), 0.0);
        assert_eq!(act_forward(&ActivationSpec::relu(), 2.5, 0).unwrap(), 2.5);
    }

    #[test]
    fn act_backward_examples() {
        let g = act_backward(&ActivationSpec::atlu(), 0.0, 0).unwrap();
        assert_eq!(g.d_input, 0.5);
        assert!(g.d_alpha.is_empty());
        for a in [-0.7, 0.0, 0.5, 3.0] {
            let g = act_backward(&ActivationSpec::xatlu(a), 0.0, 0).unwrap();
            assert!((g.d_input - 0.5).abs() < 1e-15);
        }
        let g = act_backward(&ActivationSpec::xatlu(0.5), 1.0, 0).unwrap();
        assert!((g.d_alpha[0] - 0.5).abs() < 1e-15);
        let g = act_backward(&ActivationSpec::gelu(), 1.0, 0).unwrap();
        assert!((g.d_input - 1.0833154705876864).abs() < 1e-15);
    }

    #[test]
    fn symmetric_input_gradient_closed_form() {
        for gate in GateKind::SMOOTH {
            for a in ALPHAS {
                for i in 0..=40 {
                    let x = -10.0 + 0.5 * i as f64;
                    let (g, dg) = (gate.value(x), gate.derivative(x));
                    let expected = (1.0 + 2.0 * a) * (g + x * dg) - a;
                    let spec = ActivationSpec::new(gate, RangeParam::Symmetric(a));
                    let got = act_backward(&spec, x, 0).unwrap();
                    assert!((got.d_input - expected).abs() < 1e-12);
                    assert!((got.d_alpha[0] - x * (2.0 * g - 1.0)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn asymmetric_param_gradients() {
        let spec = ActivationSpec::new(GateKind::Sigmoid, RangeParam::Asymmetric(0.2, 0.7));
        let x = 1.3;
        let g = GateKind::Sigmoid.value(x);
        let grad = act_backward(&spec, x, 0).unwrap();
        assert!((grad.d_alpha[0] - x * (g - 1.0)).abs() < 1e-15);
        assert!((grad.d_alpha[1] - x * g).abs() < 1e-15);
    }

    #[test]
    fn per_channel_gradient_lands_in_active_slot() {
        let spec = ActivationSpec::new(GateKind::Arctan, RangeParam::PerChannel(vec![0.1, 0.2, 0.3]));
        let grad = act_backward(&spec, 2.0, 1).unwrap();
        assert_eq!(grad.d_alpha.len(), 3);
        assert_eq!(grad.d_alpha[0], 0.0);
        assert_eq!(grad.d_alpha[2], 0.0);
        let g = GateKind::Arctan.value(2.0);
        assert!((grad.d_alpha[1] - 2.0 * (2.0 * g - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn per_channel_out_of_bounds() {
        let spec = ActivationSpec::new(GateKind::Arctan, RangeParam::PerChannel(vec![0.0; 4]));
        assert!(matches!(
            act_forward(&spec, 1.0, 4),
            Err(Error::Index { index: 4, len: 4 })
        ));
        assert!(act_backward(&spec, 1.0, 9).is_err());
        // channel is ignored for shared ranges
        assert!(act_forward(&ActivationSpec::xatlu(0.1), 1.0, 99).is_ok());
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(matches!(
            act_forward(&ActivationSpec::gelu(), f64::NAN, 0),
            Err(Error::Domain(_))
        ));
        assert!(act_backward(&ActivationSpec::gelu(), f64::INFINITY, 0).is_err());
    }

    #[test]
    fn alpha_init_zeroes_everything() {
        assert_eq!(alpha_init(RangeShape::Symmetric), RangeParam::Symmetric(0.0));
        assert_eq!(alpha_init(RangeShape::Asymmetric), RangeParam::Asymmetric(0.0, 0.0));
        assert_eq!(alpha_init(RangeShape::PerChannel(8)), RangeParam::PerChannel(vec![0.0; 8]));
        assert_eq!(alpha_init(RangeShape::Standard), RangeParam::Standard);
    }

    #[test]
    fn grad_lengths_match_parameter_count() {
        for r in all_ranges(0.3) {
            let spec = ActivationSpec::new(GateKind::Arctan, r.clone());
            assert_eq!(act_backward(&spec, 0.7, 2).unwrap().d_alpha.len(), r.n_params());
        }
    }

    #[test]
    fn set_params_round_trip_and_length_check() {
        for r in all_ranges(0.3) {
            let mut r2 = alpha_init(r.shape());
            r2.set_params(&r.params()).unwrap();
            assert_eq!(r2, r);
            assert!(r2.set_params(&vec![0.0; r.n_params() + 1]).is_err());
        }
    }

    #[test]
    fn zero_alpha_reduces_to_standard() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        for gate in GateKind::ALL {
            let std = ActivationSpec::standard(gate);
            let zeroed: Vec<_> = [
                RangeShape::Symmetric,
                RangeShape::MinOnly,
                RangeShape::MaxOnly,
                RangeShape::Asymmetric,
                RangeShape::PerChannel(2),
            ]
            .into_iter()
            .map(|s| ActivationSpec::new(gate, alpha_init(s)))
            .collect();
            for _ in 0..1000 {
                let x = rng.random_range(-20.0..20.0);
                let base = act_forward(&std, x, 0).unwrap();
                let base_d = act_backward(&std, x, 0).unwrap().d_input;
                for z in &zeroed {
                    assert!((act_forward(z, x, 1).unwrap() - base).abs() <= 1e-15);
                    assert!((act_backward(z, x, 1).unwrap().d_input - base_d).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn atlu_derivative_is_monotone_and_bounded() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-50.0..50.0)).collect();
        xs.sort_by(f64::total_cmp);
        let d: Vec<f64> = xs
            .iter()
            .map(|&x| act_backward(&ActivationSpec::atlu(), x, 0).unwrap().d_input)
            .collect();
        for w in d.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(d.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn gelu_and_silu_derivatives_leave_unit_interval() {
        for spec in [ActivationSpec::gelu(), ActivationSpec::silu()] {
            let d: Vec<f64> = (0..=2000)
                .map(|i| -10.0 + i as f64 * 0.01)
                .map(|x| act_backward(&spec, x, 0).unwrap().d_input)
                .collect();
            let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo < 0.0 && hi > 1.0, "{:?}: [{lo}, {hi}]", spec.gate);
        }
    }

    #[test]
    fn relu_likeness() {
        assert!(act_forward(&ActivationSpec::gelu(), -40.0, 0).unwrap().abs() < 1e-6);
        assert!(act_forward(&ActivationSpec::silu(), -40.0, 0).unwrap().abs() < 1e-6);
        assert!(act_forward(&ActivationSpec::atlu(), -40.0, 0).unwrap().abs() > 0.1);
    }

    #[test]
    fn larger_alpha_widens_derivative_range() {
        let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + i as f64 * 0.01).collect();
        for gate in GateKind::SMOOTH {
            let extent = |a: f64| {
                let spec = ActivationSpec::new(gate, RangeParam::Symmetric(a));
                grid.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                    let d = act_backward(&spec, x, 0).unwrap().d_input;
                    (lo.min(d), hi.max(d))
                })
            };
            let alphas = [0.0, 0.1, 0.32, 0.5, 1.0, 2.0];
            for w in alphas.windows(2) {
                let (lo1, hi1) = extent(w[0]);
                let (lo2, hi2) = extent(w[1]);
                assert!(hi2 >= hi1 && lo2 <= lo1, "{gate} at alpha {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 3e-5;
        for gate in GateKind::SMOOTH {
            for a in ALPHAS {
                for range in all_ranges(a) {
                    let spec = ActivationSpec::new(gate, range.clone());
                    let ch = 1;
                    for i in 0..=100 {
                        let x = -10.0 + 0.2 * i as f64;
                        let grad = act_backward(&spec, x, ch).unwrap();
                        let f = |x| act_forward(&spec, x, ch).unwrap();
                        let hx = h * x.abs().max(1.0);
                        let fd = (f(x + hx) - f(x - hx)) / (2.0 * hx);
                        check(grad.d_input, fd, &spec, x);
                        let p = range.params();
                        for k in 0..p.len() {
                            let at = |v: f64| {
                                let mut q = p.clone();
                                q[k] = v;
                                let mut r = range.clone();
                                r.set_params(&q).unwrap();
                                act_forward(&ActivationSpec::new(gate, r), x, ch).unwrap()
                            };
                            // the output is affine in each range parameter
                            let fd = (at(p[k] + 1.0) - at(p[k] - 1.0)) / 2.0;
                            check(grad.d_alpha[k], fd, &spec, x);
                        }
                    }
                }
            }
        }
    }

    fn check(analytic: f64, numeric: f64, spec: &ActivationSpec, x: f64) {
        let ok = if analytic.abs() > 1e-8 {
            ((analytic - numeric) / analytic).abs() < 1e-6
        } else {
            (analytic - numeric).abs() < 1e-6
        };
        assert!(ok, "{spec:?} at x={x}: analytic {analytic} vs numeric {numeric}");
    }
}
