//! Pre-norm decoder-only transformer with manual backpropagation.
//!
//! Token and learned position embeddings, `depth` blocks of
//! `x + attn(ln1(x))` then `x + mlp(ln2(x))`, a final layer norm and an untied
//! output projection. Linear maps have no bias; layer norms have gain and bias.

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::config::NetConfig;
use super::mlp::{mlp_backward, mlp_forward, MlpBlock, MlpCache, MlpGrads};
use super::tensor::{add_matmul_at, matmul, matmul_bt, Tensor};

pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-5;

/// Optimizer treatment of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    /// Matrices: decoupled weight decay applies.
    Decay,
    /// Layer-norm gains and biases.
    NoDecay,
    /// Range parameters of an MLP block; never decayed.
    Alpha { trainable: bool },
}

impl ParamGroup {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamGroup::Alpha { trainable: false })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    fn new(dim: usize) -> Self {
        let mut gain = Tensor::zeros(&[dim]);
        gain.fill(1.0);
        LayerNorm {
            gain,
            bias: Tensor::zeros(&[dim]),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerNorm {
            gain: self.gain.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl Attention {
    fn zeros(dim: usize) -> Self {
        Attention {
            wq: Tensor::zeros(&[dim, dim]),
            wk: Tensor::zeros(&[dim, dim]),
            wv: Tensor::zeros(&[dim, dim]),
            wo: Tensor::zeros(&[dim, dim]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: MlpBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub mlp: MlpGrads,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: NetConfig,
    /// `[vocab, dim]`
    pub tok_emb: Tensor,
    /// `[seq_len, dim]`
    pub pos_emb: Tensor,
    pub layers: Vec<Layer>,
    pub ln_f: LayerNorm,
    /// `[dim, vocab]`
    pub head: Tensor,
}

/// Gradients with the layout of [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerGrads>,
    pub ln_f: LayerNorm,
    pub head: Tensor,
}

/// A named parameter tensor.
pub struct ParamRef<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: &'a Tensor,
}

pub struct ParamMut<'a> {
    pub group: ParamGroup,
    pub tensor: &'a mut Tensor,
}

impl Model {
    /// All weights zero, layer-norm gains one, range parameters at the configured start.
    pub fn zeros(config: &NetConfig) -> Result<Model> {
        config.validate()?;
        let d = config.model_dim;
        let layers = (0..config.depth)
            .map(|_| {
                let mut mlp = MlpBlock::zeros(config.block, d);
                mlp.alpha.fill(config.alpha.initial());
                Layer {
                    ln1: LayerNorm::new(d),
                    attn: Attention::zeros(d),
                    ln2: LayerNorm::new(d),
                    mlp,
                }
            })
            .collect();
        Ok(Model {
            config: config.clone(),
            tok_emb: Tensor::zeros(&[config.vocab_size, d]),
            pos_emb: Tensor::zeros(&[config.seq_len, d]),
            layers,
            ln_f: LayerNorm::new(d),
            head: Tensor::zeros(&[d, config.vocab_size]),
        })
    }

    /// Weights ~ N(0, 0.02); output projections of each residual branch use
    /// 0.02 / sqrt(2 depth); the head is zero when `zero_init_head` is set.
    pub fn init(config: &NetConfig, rng: &mut Rng) -> Result<Model> {
        let mut m = Model::zeros(config)?;
        let out_std = INIT_STD / (2.0 * config.depth as f64).sqrt();
        fill_normal(&mut m.tok_emb, INIT_STD, rng);
        fill_normal(&mut m.pos_emb, INIT_STD, rng);
        let alpha = config.alpha.initial();
        for layer in &mut m.layers {
            fill_normal(&mut layer.attn.wq, INIT_STD, rng);
            fill_normal(&mut layer.attn.wk, INIT_STD, rng);
            fill_normal(&mut layer.attn.wv, INIT_STD, rng);
            fill_normal(&mut layer.attn.wo, out_std, rng);
            layer.mlp.init(rng, INIT_STD, out_std, alpha);
        }
        if !config.zero_init_head {
            fill_normal(&mut m.head, INIT_STD, rng);
        }
        Ok(m)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            tok_emb: self.tok_emb.zeros_like(),
            pos_emb: self.pos_emb.zeros_like(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    ln1: l.ln1.zeros_like(),
                    attn: Attention::zeros(self.config.model_dim),
                    ln2: l.ln2.zeros_like(),
                    mlp: l.mlp.zero_grads(),
                })
                .collect(),
            ln_f: self.ln_f.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Every parameter with its name and group, in a fixed order shared with
    /// [`Model::params_mut`] and [`Grads::tensors`].
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let alpha = ParamGroup::Alpha {
            trainable: self.config.alpha.is_trainable(),
        };
        let mut out = Vec::new();
        let mut push = |name: String, group, tensor| out.push(ParamRef { name, group, tensor });
        push("tok_emb".into(), ParamGroup::Decay, &self.tok_emb);
        push("pos_emb".into(), ParamGroup::Decay, &self.pos_emb);
        for (i, l) in self.layers.iter().enumerate() {
            push(format!("layers.{i}.ln1.gain"), ParamGroup::NoDecay, &l.ln1.gain);
            push(format!("layers.{i}.ln1.bias"), ParamGroup::NoDecay, &l.ln1.bias);
            push(format!("layers.{i}.attn.wq"), ParamGroup::Decay, &l.attn.wq);
            push(format!("layers.{i}.attn.wk"), ParamGroup::Decay, &l.attn.wk);
            push(format!("layers.{i}.attn.wv"), ParamGroup::Decay, &l.attn.wv);
            push(format!("layers.{i}.attn.wo"), ParamGroup::Decay, &l.attn.wo);
            push(format!("layers.{i}.ln2.gain"), ParamGroup::NoDecay, &l.ln2.gain);
            push(format!("layers.{i}.ln2.bias"), ParamGroup::NoDecay, &l.ln2.bias);
            push(format!("layers.{i}.mlp.w_in"), ParamGroup::Decay, &l.mlp.w_in);
            if let Some(w) = &l.mlp.w_y {
                push(format!("layers.{i}.mlp.w_y"), ParamGroup::Decay, w);
            }
            push(format!("layers.{i}.mlp.w_out"), ParamGroup::Decay, &l.mlp.w_out);
            push(format!("layers.{i}.mlp.alpha"), alpha, &l.mlp.alpha);
        }
        push("ln_f.gain".into(), ParamGroup::NoDecay, &self.ln_f.gain);
        push("ln_f.bias".into(), ParamGroup::NoDecay, &self.ln_f.bias);
        push("head".into(), ParamGroup::Decay, &self.head);
        out
    }

    /// Mutable access in [`Model::params`] order. Invalidates outstanding MLP caches.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let alpha = ParamGroup::Alpha {
            trainable: self.config.alpha.is_trainable(),
        };
        let mut out = Vec::new();
        let mut push = |group, tensor| out.push(ParamMut { group, tensor });
        push(ParamGroup::Decay, &mut self.tok_emb);
        push(ParamGroup::Decay, &mut self.pos_emb);
        for l in &mut self.layers {
            l.mlp.touch();
            push(ParamGroup::NoDecay, &mut l.ln1.gain);
            push(ParamGroup::NoDecay, &mut l.ln1.bias);
            push(ParamGroup::Decay, &mut l.attn.wq);
            push(ParamGroup::Decay, &mut l.attn.wk);
            push(ParamGroup::Decay, &mut l.attn.wv);
            push(ParamGroup::Decay, &mut l.attn.wo);
            push(ParamGroup::NoDecay, &mut l.ln2.gain);
            push(ParamGroup::NoDecay, &mut l.ln2.bias);
            push(ParamGroup::Decay, &mut l.mlp.w_in);
            if let Some(w) = &mut l.mlp.w_y {
                push(ParamGroup::Decay, w);
            }
            push(ParamGroup::Decay, &mut l.mlp.w_out);
            push(alpha, &mut l.mlp.alpha);
        }
        push(ParamGroup::NoDecay, &mut self.ln_f.gain);
        push(ParamGroup::NoDecay, &mut self.ln_f.bias);
        push(ParamGroup::Decay, &mut self.head);
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.tensor.len()).sum()
    }

    /// Range parameters of each block.
    pub fn alphas(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| l.mlp.alpha.data().to_vec()).collect()
    }
}

impl Grads {
    /// Same order as [`Model::params`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for l in &self.layers {
            out.extend([&l.ln1.gain, &l.ln1.bias, &l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo]);
            out.extend([&l.ln2.gain, &l.ln2.bias, &l.mlp.w_in]);
            if let Some(w) = &l.mlp.w_y {
                out.push(w);
            }
            out.extend([&l.mlp.w_out, &l.mlp.alpha]);
        }
        out.extend([&self.ln_f.gain, &self.ln_f.bias, &self.head]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.push(&mut l.ln1.gain);
            out.push(&mut l.ln1.bias);
            out.push(&mut l.attn.wq);
            out.push(&mut l.attn.wk);
            out.push(&mut l.attn.wv);
            out.push(&mut l.attn.wo);
            out.push(&mut l.ln2.gain);
            out.push(&mut l.ln2.bias);
            out.push(&mut l.mlp.w_in);
            if let Some(w) = &mut l.mlp.w_y {
                out.push(w);
            }
            out.push(&mut l.mlp.w_out);
            out.push(&mut l.mlp.alpha);
        }
        out.push(&mut self.ln_f.gain);
        out.push(&mut self.ln_f.bias);
        out.push(&mut self.head);
        out
    }
}

fn fill_normal(t: &mut Tensor, std: f64, rng: &mut Rng) {
    for v in t.data_mut() {
        *v = std * rng.normal();
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn ln_forward(ln: &LayerNorm, x: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    let (g, b) = (ln.gain.data(), ln.bias.data());
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = xh * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn ln_backward(ln: &LayerNorm, dy: &[f64], c: &LnCache, d: usize, grads: &mut LayerNorm) -> Vec<f64> {
    let n = dy.len() / d;
    let g = ln.gain.data();
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &c.xhat[r * d..(r + 1) * d];
        {
            let gg = grads.gain.data_mut();
            for j in 0..d {
                gg[j] += dyr[j] * xh[j];
            }
        }
        {
            let gb = grads.bias.data_mut();
            for j in 0..d {
                gb[j] += dyr[j];
            }
        }
        for j in 0..d {
            dxhat[j] = dyr[j] * g[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[r * d + j] = c.rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

struct LayerCache {
    ln1: LnCache,
    a1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    mlp: MlpCache,
}

/// Everything [`Model::backward`] needs from a forward pass.
pub struct ForwardCache {
    batch: usize,
    len: usize,
    inputs: Vec<u32>,
    targets: Vec<u32>,
    layers: Vec<LayerCache>,
    ln_f: LnCache,
    zf: Vec<f64>,
    probs: Vec<f64>,
}

impl Model {
    fn check_tokens(&self, inputs: &[u32], targets: &[u32], batch: usize) -> Result<usize> {
        if batch == 0 || !inputs.len().is_multiple_of(batch) || inputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs and {} targets do not form a batch of {batch}",
                inputs.len(),
                targets.len()
            )));
        }
        let t = inputs.len() / batch;
        if t == 0 || t > self.config.seq_len {
            return Err(Error::Dimension(format!(
                "sequence length {t} outside 1..={}",
                self.config.seq_len
            )));
        }
        let v = self.config.vocab_size as u32;
        if let Some(&bad) = inputs.iter().chain(targets).find(|&&tok| tok >= v) {
            return Err(Error::Data(format!("token {bad} outside vocabulary of {v}")));
        }
        Ok(t)
    }

    /// Mean next-token cross-entropy in nats over a `[batch, len]` token block.
    pub fn forward(&self, inputs: &[u32], targets: &[u32], batch: usize) -> Result<(f64, ForwardCache)> {
        let t = self.check_tokens(inputs, targets, batch)?;
        let cfg = &self.config;
        let (d, vocab) = (cfg.model_dim, cfg.vocab_size);
        let n = batch * t;
        let mut x = vec![0.0; n * d];
        for (r, &tok) in inputs.iter().enumerate() {
            let e = self.tok_emb.row(tok as usize);
            let p = self.pos_emb.row(r % t);
            for j in 0..d {
                x[r * d + j] = e[j] + p[j];
            }
        }
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (a1, ln1) = ln_forward(&layer.ln1, &x, d);
            let q = matmul(&a1, layer.attn.wq.data(), n, d, d);
            let k = matmul(&a1, layer.attn.wk.data(), n, d, d);
            let v = matmul(&a1, layer.attn.wv.data(), n, d, d);
            let (ctx, probs) = attend(&q, &k, &v, batch, t, d, cfg.head_dim);
            let y = matmul(&ctx, layer.attn.wo.data(), n, d, d);
            for (xi, yi) in x.iter_mut().zip(&y) {
                *xi += yi;
            }
            let (a2, ln2) = ln_forward(&layer.ln2, &x, d);
            let (h, mlp) = mlp_forward(&layer.mlp, &Tensor::from_vec(&[n, d], a2)?)?;
            for (xi, hi) in x.iter_mut().zip(h.data()) {
                *xi += hi;
            }
            caches.push(LayerCache {
                ln1,
                a1,
                q,
                k,
                v,
                probs,
                ctx,
                ln2,
                mlp,
            });
        }
        let (zf, ln_f) = ln_forward(&self.ln_f, &x, d);
        let logits = matmul(&zf, self.head.data(), n, d, vocab);
        let mut probs = vec![0.0; n * vocab];
        let mut loss = 0.0;
        for r in 0..n {
            let row = &logits[r * vocab..(r + 1) * vocab];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (p, &l) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (l - max).exp();
                sum += *p;
            }
            for p in &mut probs[r * vocab..(r + 1) * vocab] {
                *p /= sum;
            }
            loss += sum.ln() + max - row[targets[r] as usize];
        }
        loss /= n as f64;
        let cache = ForwardCache {
            batch,
            len: t,
            inputs: inputs.to_vec(),
            targets: targets.to_vec(),
            layers: caches,
            ln_f,
            zf,
            probs,
        };
        Ok((loss, cache))
    }

    pub fn loss(&self, inputs: &[u32], targets: &[u32], batch: usize) -> Result<f64> {
        Ok(self.forward(inputs, targets, batch)?.0)
    }

    /// Gradient of the forward loss with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache) -> Result<Grads> {
        let cfg = &self.config;
        let (d, vocab) = (cfg.model_dim, cfg.vocab_size);
        let (batch, t) = (cache.batch, cache.len);
        let n = batch * t;
        let mut grads = self.zero_grads();

        let mut dlogits = cache.probs.clone();
        for r in 0..n {
            dlogits[r * vocab + cache.targets[r] as usize] -= 1.0;
        }
        let inv_n = 1.0 / n as f64;
        for v in &mut dlogits {
            *v *= inv_n;
        }
        add_matmul_at(grads.head.data_mut(), &cache.zf, &dlogits, n, d, vocab);
        let dzf = matmul_bt(&dlogits, self.head.data(), n, d, vocab);
        let mut dx = ln_backward(&self.ln_f, &dzf, &cache.ln_f, d, &mut grads.ln_f);

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let c = &cache.layers[i];
            let g = &mut grads.layers[i];
            let dh = Tensor::from_vec(&[n, d], dx.clone())?;
            let da2 = mlp_backward(&layer.mlp, &dh, &c.mlp, &mut g.mlp)?;
            for (a, b) in dx.iter_mut().zip(ln_backward(&layer.ln2, da2.data(), &c.ln2, d, &mut g.ln2)) {
                *a += b;
            }
            add_matmul_at(g.attn.wo.data_mut(), &c.ctx, &dx, n, d, d);
            let dctx = matmul_bt(&dx, layer.attn.wo.data(), n, d, d);
            let (dq, dk, dv) = attend_backward(&dctx, c, batch, t, d, cfg.head_dim);
            add_matmul_at(g.attn.wq.data_mut(), &c.a1, &dq, n, d, d);
            add_matmul_at(g.attn.wk.data_mut(), &c.a1, &dk, n, d, d);
            add_matmul_at(g.attn.wv.data_mut(), &c.a1, &dv, n, d, d);
            let mut da1 = matmul_bt(&dq, layer.attn.wq.data(), n, d, d);
            for (a, b) in da1.iter_mut().zip(matmul_bt(&dk, layer.attn.wk.data(), n, d, d)) {
                *a += b;
            }
            for (a, b) in da1.iter_mut().zip(matmul_bt(&dv, layer.attn.wv.data(), n, d, d)) {
                *a += b;
            }
            for (a, b) in dx.iter_mut().zip(ln_backward(&layer.ln1, &da1, &c.ln1, d, &mut g.ln1)) {
                *a += b;
            }
        }

        for (r, &tok) in cache.inputs.iter().enumerate() {
            let src = &dx[r * d..(r + 1) * d];
            let te = &mut grads.tok_emb.data_mut()[tok as usize * d..(tok as usize + 1) * d];
            for (a, b) in te.iter_mut().zip(src) {
                *a += b;
            }
            let pos = r % t;
            let pe = &mut grads.pos_emb.data_mut()[pos * d..(pos + 1) * d];
            for (a, b) in pe.iter_mut().zip(src) {
                *a += b;
            }
        }
        Ok(grads)
    }

    pub fn loss_and_grads(&self, inputs: &[u32], targets: &[u32], batch: usize) -> Result<(f64, Grads)> {
        let (loss, cache) = self.forward(inputs, targets, batch)?;
        Ok((loss, self.backward(&cache)?))
    }
}

/// Causal multi-head attention on `[batch * t, d]` projections. Returns the
/// context rows and the attention weights `[batch, heads, t, t]`.
fn attend(q: &[f64], k: &[f64], v: &[f64], batch: usize, t: usize, d: usize, hd: usize) -> (Vec<f64>, Vec<f64>) {
    let heads = d / hd;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = vec![0.0; batch * t * d];
    let mut probs = vec![0.0; batch * heads * t * t];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * hd;
            for i in 0..t {
                let qi = &q[(b * t + i) * d + off..][..hd];
                let p = &mut probs[((b * heads + h) * t + i) * t..][..t];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let kj = &k[(b * t + j) * d + off..][..hd];
                    p[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                    max = max.max(p[j]);
                }
                let mut sum = 0.0;
                for pj in &mut p[..=i] {
                    *pj = (*pj - max).exp();
                    sum += *pj;
                }
                let out = &mut ctx[(b * t + i) * d + off..][..hd];
                for j in 0..=i {
                    p[j] /= sum;
                    let vj = &v[(b * t + j) * d + off..][..hd];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += p[j] * vv;
                    }
                }
            }
        }
    }
    (ctx, probs)
}

fn attend_backward(dctx: &[f64], c: &LayerCache, batch: usize, t: usize, d: usize, hd: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let heads = d / hd;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut dq = vec![0.0; dctx.len()];
    let mut dk = vec![0.0; dctx.len()];
    let mut dv = vec![0.0; dctx.len()];
    let mut dp = vec![0.0; t];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * hd;
            for i in 0..t {
                let p = &c.probs[((b * heads + h) * t + i) * t..][..t];
                let di = &dctx[(b * t + i) * d + off..][..hd];
                let mut dot = 0.0;
                for j in 0..=i {
                    let vj = &c.v[(b * t + j) * d + off..][..hd];
                    dp[j] = di.iter().zip(vj).map(|(a, b)| a * b).sum();
                    dot += p[j] * dp[j];
                    for (g, &dd) in dv[(b * t + j) * d + off..][..hd].iter_mut().zip(di) {
                        *g += p[j] * dd;
                    }
                }
                let qi = &c.q[(b * t + i) * d + off..][..hd];
                for j in 0..=i {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    let kj = &c.k[(b * t + j) * d + off..][..hd];
                    for (g, &kk) in dq[(b * t + i) * d + off..][..hd].iter_mut().zip(kj) {
                        *g += ds * kk;
                    }
                    for (g, &qq) in dk[(b * t + j) * d + off..][..hd].iter_mut().zip(qi) {
                        *g += ds * qq;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}
