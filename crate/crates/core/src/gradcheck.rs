//! Finite-difference oracle for the analytic activation and GLU gradients.
//!
//! Comparison rule: relative error where `|analytic| > zero_floor`, absolute
//! error otherwise; either must stay below the tolerance.

use std::fmt;

use crate::activations::{act_backward, act_forward, ActGrad, ActivationSpec, RangeParam};
use crate::error::{Error, Result};
use crate::gatecore::GateKind;
use crate::glu::{glu_backward, glu_forward, GluGrad, GluOrder, GluSpec};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Base step of the checker; scaled by `max(1, |x|)` at each point.
pub const DEFAULT_CHECK_STEP: f64 = 3e-5;
pub const DEFAULT_PARAM_STEP: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const ZERO_FLOOR: f64 = 1e-8;
pub const DEFAULT_ALPHAS: [f64; 5] = [-0.4, 0.0, 0.32, 1.0, 2.0];
pub const DEFAULT_GLU_ALPHAS: [f64; 3] = [0.0, 0.32, 1.0];

/// `(f(x + h) - f(x - h)) / 2h`.
pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let (hi, lo) = (f(x + h), f(x - h));
    if !(hi.is_finite() && lo.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite evaluation around x = {x}: f(x+h) = {hi}, f(x-h) = {lo}"
        )));
    }
    Ok((hi - lo) / (2.0 * h))
}

/// The first comparison that exceeded the tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct GradFailure {
    pub spec: String,
    pub component: String,
    pub x: f64,
    pub y: Option<f64>,
    pub param: f64,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(x, param)` of the comparison with the largest error relative to tolerance.
    pub worst_point: Option<(f64, f64)>,
    /// The error (relative or absolute, per the comparison rule) at `worst_point`.
    pub worst_error: f64,
    pub n_points: usize,
    pub n_comparisons: usize,
    pub tol_rel: f64,
    pub first_failure: Option<GradFailure>,
    /// Specs left out because their gate has no derivative to check.
    pub skipped: Vec<String>,
}

impl GradReport {
    fn new(tol_rel: f64) -> Self {
        GradReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_point: None,
            worst_error: 0.0,
            n_points: 0,
            n_comparisons: 0,
            tol_rel,
            first_failure: None,
            skipped: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }

    /// Combines two reports; max over points is order independent.
    pub fn merge(mut self, other: GradReport) -> GradReport {
        if other.worst_point.is_some() && (self.worst_point.is_none() || other.worst_error > self.worst_error) {
            self.worst_point = other.worst_point;
            self.worst_error = other.worst_error;
        }
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.n_points += other.n_points;
        self.n_comparisons += other.n_comparisons;
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
        self.skipped.extend(other.skipped);
        self
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "gradcheck: {} ({} points, {} comparisons, tol {:e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.n_points,
            self.n_comparisons,
            self.tol_rel
        )?;
        writeln!(f, "  max_rel_error = {:.3e}", self.max_rel_error)?;
        writeln!(f, "  max_abs_error = {:.3e}", self.max_abs_error)?;
        if let Some((x, p)) = self.worst_point {
            writeln!(f, "  worst point   = x {x}, param {p}")?;
        }
        for s in &self.skipped {
            writeln!(f, "  skipped {s}: gate is not differentiable")?;
        }
        if let Some(fail) = &self.first_failure {
            write!(
                f,
                "  first failure: {} {} at x = {}",
                fail.spec, fail.component, fail.x
            )?;
            if let Some(y) = fail.y {
                write!(f, ", y = {y}")?;
            }
            writeln!(
                f,
                ", param {}: analytic {} vs numeric {} (error {:.3e})",
                fail.param, fail.analytic, fail.numeric, fail.error
            )?;
        }
        Ok(())
    }
}

/// Finite-difference checker configuration.
#[derive(Clone, Copy, Debug)]
pub struct GradChecker {
    pub step: f64,
    /// Step for range parameters.
    pub param_step: f64,
    pub tol_rel: f64,
    pub zero_floor: f64,
}

impl Default for GradChecker {
    fn default() -> Self {
        GradChecker {
            step: DEFAULT_CHECK_STEP,
            param_step: DEFAULT_PARAM_STEP,
            tol_rel: DEFAULT_TOL,
            zero_floor: ZERO_FLOOR,
        }
    }
}

struct Point<'a> {
    spec: &'a str,
    x: f64,
    y: Option<f64>,
    param: f64,
}

impl GradChecker {
    pub fn new(tol_rel: f64) -> Result<Self> {
        if !(tol_rel > 0.0) {
            return Err(Error::Domain(format!("tolerance must be positive, got {tol_rel}")));
        }
        Ok(GradChecker {
            tol_rel,
            ..Default::default()
        })
    }

    /// `step * max(1, |x|)`
    pub fn step_at(&self, x: f64) -> f64 {
        self.step * x.abs().max(1.0)
    }

    fn compare(&self, report: &mut GradReport, at: &Point, component: &str, analytic: f64, numeric: f64) {
        report.n_comparisons += 1;
        let abs = (analytic - numeric).abs();
        let error = if analytic.abs() > self.zero_floor {
            let rel = abs / analytic.abs();
            report.max_rel_error = report.max_rel_error.max(rel);
            rel
        } else {
            abs
        };
        report.max_abs_error = report.max_abs_error.max(abs);
        if report.worst_point.is_none() || error > report.worst_error {
            report.worst_point = Some((at.x, at.param));
            report.worst_error = error;
        }
        if !(error < self.tol_rel) && report.first_failure.is_none() {
            report.first_failure = Some(GradFailure {
                spec: at.spec.to_string(),
                component: component.to_string(),
                x: at.x,
                y: at.y,
                param: at.param,
                analytic,
                numeric,
                error,
            });
        }
    }

    pub fn activations(&self, specs: &[ActivationSpec], xs: &[f64]) -> Result<GradReport> {
        self.activations_against(specs, xs, act_backward)
    }

    /// Checks an arbitrary backward function against finite differences of `act_forward`.
    pub fn activations_against<B>(&self, specs: &[ActivationSpec], xs: &[f64], backward: B) -> Result<GradReport>
    where
        B: Fn(&ActivationSpec, f64, usize) -> Result<ActGrad>,
    {
        let mut report = GradReport::new(self.tol_rel);
        for spec in specs {
            let label = activation_label(spec);
            if !spec.gate.is_smooth() {
                report.skipped.push(label);
                continue;
            }
            let params = spec.range.params();
            let param = params.first().copied().unwrap_or(0.0);
            for channel in channels(&spec.range) {
                for &x in xs {
                    let grad = backward(spec, x, channel)?;
                    ensure_finite(&label, x, None, grad.d_input, &grad.d_alpha)?;
                    report.n_points += 1;
                    let at = Point { spec: &label, x, y: None, param };
                    let numeric = central_diff(|x| act_forward(spec, x, channel).unwrap_or(f64::NAN), x, self.step_at(x))?;
                    self.compare(&mut report, &at, "d_input", grad.d_input, numeric);
                    for k in 0..params.len() {
                        let numeric = central_diff(
                            |v| {
                                let s = with_param(spec.gate, &spec.range, k, v);
                                act_forward(&s, x, channel).unwrap_or(f64::NAN)
                            },
                            params[k],
                            self.param_step,
                        )?;
                        let analytic = grad.d_alpha.get(k).copied().unwrap_or(f64::NAN);
                        self.compare(&mut report, &at, &format!("d_alpha[{k}]"), analytic, numeric);
                    }
                }
            }
        }
        Ok(report)
    }

    pub fn glus(&self, specs: &[GluSpec], xys: &[(f64, f64)]) -> Result<GradReport> {
        self.glus_against(specs, xys, glu_backward)
    }

    pub fn glus_against<B>(&self, specs: &[GluSpec], xys: &[(f64, f64)], backward: B) -> Result<GradReport>
    where
        B: Fn(&GluSpec, f64, f64, usize) -> Result<GluGrad>,
    {
        let mut report = GradReport::new(self.tol_rel);
        for spec in specs {
            let label = glu_label(spec);
            if !spec.gate.is_smooth() {
                report.skipped.push(label);
                continue;
            }
            let params = spec.range.params();
            let param = params.first().copied().unwrap_or(0.0);
            for channel in channels(&spec.range) {
                for &(x, y) in xys {
                    let grad = backward(spec, x, y, channel)?;
                    ensure_finite(&label, x, Some(y), grad.d_x, &grad.d_alpha)?;
                    ensure_finite(&label, x, Some(y), grad.d_y, &[])?;
                    report.n_points += 1;
                    let at = Point { spec: &label, x, y: Some(y), param };
                    let f = |x: f64, y: f64| glu_forward(spec, x, y, channel).unwrap_or(f64::NAN);
                    let nx = central_diff(|x| f(x, y), x, self.step_at(x))?;
                    self.compare(&mut report, &at, "d_x", grad.d_x, nx);
                    let ny = central_diff(|y| f(x, y), y, self.step_at(y))?;
                    self.compare(&mut report, &at, "d_y", grad.d_y, ny);
                    for k in 0..params.len() {
                        let numeric = central_diff(
                            |v| {
                                let a = with_param(spec.gate, &spec.range, k, v);
                                let s = GluSpec::new(spec.gate, a.range, spec.order);
                                glu_forward(&s, x, y, channel).unwrap_or(f64::NAN)
                            },
                            params[k],
                            self.param_step,
                        )?;
                        let analytic = grad.d_alpha.get(k).copied().unwrap_or(f64::NAN);
                        self.compare(&mut report, &at, &format!("d_alpha[{k}]"), analytic, numeric);
                    }
                }
            }
        }
        Ok(report)
    }
}

pub fn check_activation_grads(specs: &[ActivationSpec], xs: &[f64], tol_rel: f64) -> Result<GradReport> {
    GradChecker::new(tol_rel)?.activations(specs, xs)
}

pub fn check_glu_grads(specs: &[GluSpec], xys: &[(f64, f64)], tol_rel: f64) -> Result<GradReport> {
    GradChecker::new(tol_rel)?.glus(specs, xys)
}

fn channels(range: &RangeParam) -> std::ops::Range<usize> {
    match range {
        RangeParam::PerChannel(a) => 0..a.len(),
        _ => 0..1,
    }
}

fn with_param(gate: GateKind, range: &RangeParam, k: usize, v: f64) -> ActivationSpec {
    let mut p = range.params();
    p[k] = v;
    let mut r = range.clone();
    r.set_params(&p).expect("same shape");
    ActivationSpec::new(gate, r)
}

fn ensure_finite(label: &str, x: f64, y: Option<f64>, d: f64, rest: &[f64]) -> Result<()> {
    if d.is_finite() && rest.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let at = match y {
        Some(y) => format!("({x}, {y})"),
        None => format!("x = {x}"),
    };
    Err(Error::Domain(format!("non-finite analytic gradient for {label} at {at}")))
}

pub fn activation_label(spec: &ActivationSpec) -> String {
    format!("{} {}", spec.gate, spec.range)
}

pub fn glu_label(spec: &GluSpec) -> String {
    format!("{} glu{} {}", spec.gate, spec.order, spec.range)
}

/// Every range variant populated from one `alpha`.
pub fn range_variants(alpha: f64) -> Vec<RangeParam> {
    vec![
        RangeParam::Standard,
        RangeParam::Symmetric(alpha),
        RangeParam::MinOnly(alpha),
        RangeParam::MaxOnly(alpha),
        RangeParam::Asymmetric(alpha, 0.5 * alpha + 0.1),
        RangeParam::PerChannel(vec![alpha, 0.5 * alpha, 0.25]),
    ]
}

/// All gates and range variants over [`DEFAULT_ALPHAS`], restricted to `gates`.
pub fn default_activation_specs(gates: &[GateKind]) -> Vec<ActivationSpec> {
    let mut out = Vec::new();
    for &gate in gates {
        for &a in &DEFAULT_ALPHAS {
            for r in range_variants(a) {
                if r == RangeParam::Standard && a != DEFAULT_ALPHAS[0] {
                    continue;
                }
                out.push(ActivationSpec::new(gate, r));
            }
        }
    }
    out
}

pub fn default_glu_specs(gates: &[GateKind]) -> Vec<GluSpec> {
    let mut out = Vec::new();
    for &gate in gates {
        for order in [GluOrder::First, GluOrder::Second] {
            for &a in &DEFAULT_GLU_ALPHAS {
                for r in range_variants(a) {
                    if r == RangeParam::Standard && a != DEFAULT_GLU_ALPHAS[0] {
                        continue;
                    }
                    out.push(GluSpec::new(gate, r, order));
                }
            }
        }
    }
    out
}

/// 201 evenly spaced points on `[-10, 10]`.
pub fn default_x_grid() -> Vec<f64> {
    (0..=200).map(|i| -10.0 + 0.1 * i as f64).collect()
}

/// 41 x 11 points on `[-5, 5]^2`.
pub fn default_xy_grid() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..=40 {
        for j in 0..=10 {
            out.push((-5.0 + 0.25 * i as f64, -5.0 + j as f64));
        }
    }
    out
}

/// The full default run: every gate kind, range variant and GLU order.
pub fn run_default(gates: &[GateKind]) -> Result<GradReport> {
    let checker = GradChecker::default();
    let act = checker.activations(&default_activation_specs(gates), &default_x_grid())?;
    let glu = checker.glus(&default_glu_specs(gates), &default_xy_grid())?;
    Ok(act.merge(glu))
}
