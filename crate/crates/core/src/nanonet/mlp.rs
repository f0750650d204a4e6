use crate::activations::{ActivationSpec, RangeParam};
use crate::error::{Error, Result};
use crate::glu::{GluOrder, GluSpec};
use crate::rng::Rng;

use super::config::BlockKind;
use super::tensor::{add_matmul_at, matmul, matmul_bt, Tensor};

/// Feed-forward block. Self-gated: `act(h W_in) W_out`. Gated: `glu(h W_in, h W_y) W_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpBlock {
    pub kind: BlockKind,
    pub dim: usize,
    pub hidden: usize,
    /// `[dim, hidden]`
    pub w_in: Tensor,
    /// `[dim, hidden]`, gated blocks only.
    pub w_y: Option<Tensor>,
    /// `[hidden, dim]`
    pub w_out: Tensor,
    /// Range parameters in [`RangeParam::params`] order.
    pub alpha: Tensor,
    version: u64,
}

/// Intermediates kept by [`mlp_forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    version: u64,
    rows: usize,
    input: Vec<f64>,
    pre: Vec<f64>,
    y: Vec<f64>,
    act: Vec<f64>,
}

/// Gradients of one block, laid out like the block itself.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w_in: Tensor,
    pub w_y: Option<Tensor>,
    pub w_out: Tensor,
    pub alpha: Tensor,
}

impl MlpBlock {
    pub fn zeros(kind: BlockKind, dim: usize) -> MlpBlock {
        let hidden = kind.hidden_dim(dim);
        let n_alpha = kind.range.shape(hidden).n_params();
        MlpBlock {
            kind,
            dim,
            hidden,
            w_in: Tensor::zeros(&[dim, hidden]),
            w_y: kind.is_gated().then(|| Tensor::zeros(&[dim, hidden])),
            w_out: Tensor::zeros(&[hidden, dim]),
            alpha: Tensor::zeros(&[n_alpha]),
            version: 0,
        }
    }

    /// Normal weights with std `std` for the input projections and `out_std` for
    /// the output projection; every range parameter set to `alpha`.
    pub fn init(&mut self, rng: &mut Rng, std: f64, out_std: f64, alpha: f64) {
        for v in self.w_in.data_mut() {
            *v = std * rng.normal();
        }
        if let Some(w) = &mut self.w_y {
            for v in w.data_mut() {
                *v = std * rng.normal();
            }
        }
        for v in self.w_out.data_mut() {
            *v = out_std * rng.normal();
        }
        self.alpha.fill(alpha);
        self.touch();
    }

    /// Marks every earlier cache as stale.
    pub fn touch(&mut self) {
        self.version += 1;
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn range(&self) -> RangeParam {
        let mut r = RangeParam::filled(self.kind.range.shape(self.hidden), 0.0);
        r.set_params(self.alpha.data())
            .expect("alpha length fixed at construction");
        r
    }

    pub fn activation_spec(&self) -> ActivationSpec {
        ActivationSpec::new(self.kind.gate, self.range())
    }

    pub fn glu_spec(&self) -> Option<GluSpec> {
        self.kind
            .glu
            .map(|order| GluSpec::new(self.kind.gate, self.range(), order))
    }

    /// Number of weights, excluding the range parameters.
    pub fn n_weights(&self) -> usize {
        self.w_in.len() + self.w_y.as_ref().map_or(0, Tensor::len) + self.w_out.len()
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            w_in: self.w_in.zeros_like(),
            w_y: self.w_y.as_ref().map(Tensor::zeros_like),
            w_out: self.w_out.zeros_like(),
            alpha: self.alpha.zeros_like(),
        }
    }
}

fn rows_of(block: &MlpBlock, h: &Tensor) -> Result<usize> {
    match h.shape() {
        [.., d] if *d == block.dim => Ok(h.len() / d),
        s => Err(Error::Dimension(format!(
            "MLP input has shape {s:?}, expected last extent {}",
            block.dim
        ))),
    }
}

/// Applies the block to every row of `h` (`[.., dim]`). The output has the shape of `h`.
pub fn mlp_forward(block: &MlpBlock, h: &Tensor) -> Result<(Tensor, MlpCache)> {
    let n = rows_of(block, h)?;
    let (d, hid) = (block.dim, block.hidden);
    let pre = matmul(h.data(), block.w_in.data(), n, d, hid);
    let range = block.range();
    let gate = block.kind.gate;
    let mut act = vec![0.0; n * hid];
    let y = match &block.w_y {
        None => {
            for (i, (a, &x)) in act.iter_mut().zip(&pre).enumerate() {
                let (s, b) = range.affine(i % hid);
                *a = x * (gate.value(x) * s + b);
            }
            Vec::new()
        }
        Some(w_y) => {
            let y = matmul(h.data(), w_y.data(), n, d, hid);
            let order = block.kind.glu.expect("gated block has an order");
            for (i, a) in act.iter_mut().enumerate() {
                let (s, b) = range.affine(i % hid);
                let (x, yv) = (pre[i], y[i]);
                let g = gate.value(x) * s + b;
                *a = match order {
                    GluOrder::First => g * yv,
                    GluOrder::Second => g * x * yv,
                };
            }
            y
        }
    };
    let out = matmul(&act, block.w_out.data(), n, hid, d);
    let cache = MlpCache {
        version: block.version,
        rows: n,
        input: h.data().to_vec(),
        pre,
        y,
        act,
    };
    Ok((Tensor::from_vec(h.shape(), out)?, cache))
}

/// Accumulates weight and range-parameter gradients into `grads` and returns the
/// gradient with respect to the block input.
pub fn mlp_backward(block: &MlpBlock, grad_out: &Tensor, cache: &MlpCache, grads: &mut MlpGrads) -> Result<Tensor> {
    if cache.version != block.version {
        return Err(Error::StaleCache {
            cached: cache.version,
            current: block.version,
        });
    }
    let n = rows_of(block, grad_out)?;
    if n != cache.rows {
        return Err(Error::Dimension(format!(
            "gradient has {n} rows, cache has {}",
            cache.rows
        )));
    }
    let (d, hid) = (block.dim, block.hidden);
    add_matmul_at(grads.w_out.data_mut(), &cache.act, grad_out.data(), n, hid, d);
    let d_act = matmul_bt(grad_out.data(), block.w_out.data(), n, hid, d);

    let range = block.range();
    let gate = block.kind.gate;
    let d_alpha = grads.alpha.data_mut();
    let mut d_pre = vec![0.0; n * hid];
    let d_in = match &block.w_y {
        None => {
            for i in 0..n * hid {
                let ch = i % hid;
                let x = cache.pre[i];
                let (g, dg) = gate.value_and_derivative(x);
                let (s, b) = range.affine(ch);
                d_pre[i] = d_act[i] * (g * s + b + x * s * dg);
                range.accumulate_param_grad(g, ch, d_act[i] * x, d_alpha);
            }
            matmul_bt(&d_pre, block.w_in.data(), n, d, hid)
        }
        Some(w_y) => {
            let order = block.kind.glu.expect("gated block has an order");
            let mut d_y = vec![0.0; n * hid];
            for i in 0..n * hid {
                let ch = i % hid;
                let (x, yv, up) = (cache.pre[i], cache.y[i], d_act[i]);
                let (g, dg) = gate.value_and_derivative(x);
                let (s, b) = range.affine(ch);
                let eg = g * s + b;
                match order {
                    GluOrder::First => {
                        d_pre[i] = up * (s * dg * yv);
                        d_y[i] = up * eg;
                        range.accumulate_param_grad(g, ch, up * yv, d_alpha);
                    }
                    GluOrder::Second => {
                        d_pre[i] = up * ((eg + x * s * dg) * yv);
                        d_y[i] = up * (eg * x);
                        range.accumulate_param_grad(g, ch, up * (x * yv), d_alpha);
                    }
                }
            }
            let gw_y = grads.w_y.as_mut().expect("gated grads carry w_y");
            add_matmul_at(gw_y.data_mut(), &cache.input, &d_y, n, d, hid);
            let mut d_in = matmul_bt(&d_pre, block.w_in.data(), n, d, hid);
            for (a, b) in d_in.iter_mut().zip(matmul_bt(&d_y, w_y.data(), n, d, hid)) {
                *a += b;
            }
            d_in
        }
    };
    add_matmul_at(grads.w_in.data_mut(), &cache.input, &d_pre, n, d, hid);
    Tensor::from_vec(grad_out.shape(), d_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::{act_backward, act_forward};
    use crate::gatecore::GateKind;
    use crate::glu::{glu_backward, glu_forward};
    use crate::nanonet::config::RangeChoice;

    fn block(name: &str, dim: usize, seed: u64, alpha: f64) -> MlpBlock {
        let kind: BlockKind = name.parse().unwrap();
        let mut b = MlpBlock::zeros(kind, dim);
        b.init(&mut Rng::seed(seed), 0.3, 0.3, alpha);
        b
    }

    fn input(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut r = Rng::seed(seed);
        Tensor::from_vec(&[rows, dim], (0..rows * dim).map(|_| r.normal()).collect()).unwrap()
    }

    /// Scalar loss `sum(out * w)` with fixed pseudo-random `w`.
    fn probe(out: &Tensor) -> (f64, Tensor) {
        let mut r = Rng::seed(99);
        let w: Vec<f64> = (0..out.len()).map(|_| r.normal()).collect();
        let loss = out.data().iter().zip(&w).map(|(a, b)| a * b).sum();
        (loss, Tensor::from_vec(out.shape(), w).unwrap())
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for name in ["xatlu", "geglu2", "swiglu1"] {
            let b = MlpBlock::zeros(name.parse().unwrap(), 8);
            let (out, _) = mlp_forward(&b, &input(3, 8, 1)).unwrap();
            assert!(out.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn elementwise_path_matches_the_activation_functions() {
        let b = block("xgelu", 8, 3, 0.3);
        let h = input(5, 8, 4);
        let (_, cache) = mlp_forward(&b, &h).unwrap();
        let spec = b.activation_spec();
        for (i, (&x, &a)) in cache.pre.iter().zip(&cache.act).enumerate() {
            assert_eq!(a, act_forward(&spec, x, i % b.hidden).unwrap());
        }
        let g = block("xswiglu2", 8, 3, 0.3);
        let (_, cache) = mlp_forward(&g, &h).unwrap();
        let spec = g.glu_spec().unwrap();
        for (i, &a) in cache.act.iter().enumerate() {
            let want = glu_forward(&spec, cache.pre[i], cache.y[i], i % g.hidden).unwrap();
            assert_eq!(a, want);
        }
    }

    #[test]
    fn backward_elementwise_matches_the_activation_functions() {
        // with W_out = I-like probe, d_act is known, so d_pre can be checked entrywise
        let b = block("atlu:chan", 4, 5, 0.2);
        let h = input(2, 4, 6);
        let (out, cache) = mlp_forward(&b, &h).unwrap();
        let (_, w) = probe(&out);
        let mut grads = b.zero_grads();
        mlp_backward(&b, &w, &cache, &mut grads).unwrap();
        let d_act = matmul_bt(w.data(), b.w_out.data(), 2, b.hidden, 4);
        let spec = b.activation_spec();
        let mut want = vec![0.0; b.hidden];
        for (i, &x) in cache.pre.iter().enumerate() {
            let g = act_backward(&spec, x, i % b.hidden).unwrap();
            for (k, v) in g.d_alpha.iter().enumerate() {
                want[k] += d_act[i] * v;
            }
        }
        for (a, b) in grads.alpha.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0));
        }
        let gb = block("xgeglu1", 4, 5, 0.2);
        let (out, cache) = mlp_forward(&gb, &h).unwrap();
        let (_, w) = probe(&out);
        let mut grads = gb.zero_grads();
        mlp_backward(&gb, &w, &cache, &mut grads).unwrap();
        let d_act = matmul_bt(w.data(), gb.w_out.data(), 2, gb.hidden, 4);
        let spec = gb.glu_spec().unwrap();
        let mut want = 0.0;
        for i in 0..cache.pre.len() {
            want += d_act[i] * glu_backward(&spec, cache.pre[i], cache.y[i], 0).unwrap().d_alpha[0];
        }
        assert!((grads.alpha.data()[0] - want).abs() <= 1e-13 * want.abs().max(1.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        for name in ["xatlu", "xgeglu2", "glu"] {
            let b = block(name, 8, 2, 0.1);
            let h = input(3, 8, 3);
            let (out, cache) = mlp_forward(&b, &h).unwrap();
            let mut grads = b.zero_grads();
            let d_in = mlp_backward(&b, &out.zeros_like(), &cache, &mut grads).unwrap();
            assert!(d_in.data().iter().all(|&v| v == 0.0));
            assert_eq!(grads, b.zero_grads());
        }
    }

    #[test]
    fn alpha_zero_matches_standard_gelu() {
        let sym = block("xgelu", 8, 11, 0.0);
        let mut std = MlpBlock::zeros("gelu".parse().unwrap(), 8);
        std.init(&mut Rng::seed(11), 0.3, 0.3, 0.0);
        let h = input(4, 8, 12);
        let (o1, c1) = mlp_forward(&sym, &h).unwrap();
        let (o2, c2) = mlp_forward(&std, &h).unwrap();
        assert_eq!(o1, o2);
        let (_, w) = probe(&o1);
        let d1 = mlp_backward(&sym, &w, &c1, &mut sym.zero_grads()).unwrap();
        let d2 = mlp_backward(&std, &w, &c2, &mut std.zero_grads()).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn second_order_glu_with_ones_in_the_y_path_matches_self_gated() {
        // h = 1 in every input column and W_y = 1/dim everywhere gives y = 1
        let dim = 8;
        let mut gated = MlpBlock::zeros(BlockKind::gated(GateKind::Arctan, GluOrder::Second, RangeChoice::Standard), dim);
        let mut plain = MlpBlock::zeros(BlockKind::self_gated(GateKind::Arctan, RangeChoice::Standard), dim);
        plain.hidden = gated.hidden;
        plain.w_in = Tensor::zeros(&[dim, gated.hidden]);
        plain.w_out = Tensor::zeros(&[gated.hidden, dim]);
        let mut r = Rng::seed(8);
        for i in 0..dim * gated.hidden {
            let v = r.normal();
            gated.w_in.data_mut()[i] = v;
            plain.w_in.data_mut()[i] = v;
            let o = r.normal();
            gated.w_out.data_mut()[i] = o;
            plain.w_out.data_mut()[i] = o;
        }
        gated.w_y.as_mut().unwrap().fill(1.0 / dim as f64);
        let h = Tensor::from_vec(&[3, dim], vec![1.0; 3 * dim]).unwrap();
        let (a, _) = mlp_forward(&gated, &h).unwrap();
        let (b, _) = mlp_forward(&plain, &h).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        for name in ["xatlu", "gelu:asym", "silu:chan", "xgeglu2", "swiglu1:min", "atglu1:chan"] {
            let mut b = block(name, 4, 21, 0.15);
            let h = input(3, 4, 22);
            let (out, cache) = mlp_forward(&b, &h).unwrap();
            let (_, w) = probe(&out);
            let mut grads = b.zero_grads();
            let d_in = mlp_backward(&b, &w, &cache, &mut grads).unwrap();
            let loss_of = |b: &MlpBlock, h: &Tensor| probe(&mlp_forward(b, h).unwrap().0).0;
            let check = |a: f64, n: f64, what: String| {
                let err = if a.abs() > 1e-8 { ((a - n) / a).abs() } else { (a - n).abs() };
                assert!(err < 1e-6, "{name} {what}: analytic {a} numeric {n}");
            };
            let hstep = 1e-5;
            for i in 0..h.len() {
                let mut hp = h.clone();
                hp.data_mut()[i] += hstep;
                let mut hm = h.clone();
                hm.data_mut()[i] -= hstep;
                check(d_in.data()[i], (loss_of(&b, &hp) - loss_of(&b, &hm)) / (2.0 * hstep), format!("d_in[{i}]"));
            }
            // affine in each range parameter: a unit step is exact
            for k in 0..b.alpha.len() {
                let a0 = b.alpha.data()[k];
                b.alpha.data_mut()[k] = a0 + 1.0;
                let up = loss_of(&b, &h);
                b.alpha.data_mut()[k] = a0 - 1.0;
                let dn = loss_of(&b, &h);
                b.alpha.data_mut()[k] = a0;
                check(grads.alpha.data()[k], (up - dn) / 2.0, format!("alpha[{k}]"));
            }
            for i in (0..b.w_in.len()).step_by(7) {
                let w0 = b.w_in.data()[i];
                b.w_in.data_mut()[i] = w0 + hstep;
                let up = loss_of(&b, &h);
                b.w_in.data_mut()[i] = w0 - hstep;
                let dn = loss_of(&b, &h);
                b.w_in.data_mut()[i] = w0;
                check(grads.w_in.data()[i], (up - dn) / (2.0 * hstep), format!("w_in[{i}]"));
            }
            if let Some(gy) = &grads.w_y {
                for i in (0..gy.len()).step_by(5) {
                    let w0 = b.w_y.as_ref().unwrap().data()[i];
                    b.w_y.as_mut().unwrap().data_mut()[i] = w0 + hstep;
                    let up = loss_of(&b, &h);
                    b.w_y.as_mut().unwrap().data_mut()[i] = w0 - hstep;
                    let dn = loss_of(&b, &h);
                    b.w_y.as_mut().unwrap().data_mut()[i] = w0;
                    check(gy.data()[i], (up - dn) / (2.0 * hstep), format!("w_y[{i}]"));
                }
            }
            // the loss is linear in W_out
            for i in (0..b.w_out.len()).step_by(3) {
                let w0 = b.w_out.data()[i];
                b.w_out.data_mut()[i] = w0 + 1.0;
                let up = loss_of(&b, &h);
                b.w_out.data_mut()[i] = w0 - 1.0;
                let dn = loss_of(&b, &h);
                b.w_out.data_mut()[i] = w0;
                check(grads.w_out.data()[i], (up - dn) / 2.0, format!("w_out[{i}]"));
            }
        }
    }

    #[test]
    fn toy_block_alpha_gradient() {
        let b = block("xatlu", 4, 30, 0.25);
        let h = Tensor::from_vec(&[1, 1, 4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let (out, cache) = mlp_forward(&b, &h).unwrap();
        let (_, w) = probe(&out);
        let mut grads = b.zero_grads();
        mlp_backward(&b, &w, &cache, &mut grads).unwrap();
        let f = |a: f64| {
            let mut bb = b.clone();
            bb.alpha.data_mut()[0] = a;
            probe(&mlp_forward(&bb, &h).unwrap().0).0
        };
        let a0 = b.alpha.data()[0];
        let fd = crate::gradcheck::central_diff(f, a0, 1e-5).unwrap();
        let an = grads.alpha.data()[0];
        assert!(((an - fd) / an).abs() < 1e-6, "{an} vs {fd}");
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut b = block("xatlu", 4, 1, 0.0);
        let h = input(2, 4, 2);
        let (out, cache) = mlp_forward(&b, &h).unwrap();
        b.touch();
        let err = mlp_backward(&b, &out, &cache, &mut b.zero_grads()).unwrap_err();
        assert!(matches!(err, Error::StaleCache { .. }));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let b = block("xatlu", 4, 1, 0.0);
        assert!(matches!(mlp_forward(&b, &input(2, 5, 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn iso_parameter_widths() {
        for dim in [16, 64, 128] {
            let sg = MlpBlock::zeros("atlu".parse().unwrap(), dim);
            let g = MlpBlock::zeros("geglu2".parse().unwrap(), dim);
            let diff = sg.n_weights() as i64 - g.n_weights() as i64;
            // three projections, each off by at most 4 columns from 8/3 dim
            assert!(diff.unsigned_abs() as usize <= 3 * dim * 4, "dim {dim}: {diff}");
        }
    }
}
