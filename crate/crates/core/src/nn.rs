//! Neural building blocks: linear/conv layers, attention blocks, a small
//! UNet, sinusoidal time embeddings, and the Adam optimizer.
//!
//! Every layer exposes its parameters through [`ParamSet`] under a
//! hierarchical dotted name, in a deterministic order. That ordering is the
//! contract checkpoints and the optimizer both rely on.

use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::rng::Rng;
use crate::tensor::{linear_attention, softmax_attention, Tensor};

/// Ordered, uniquely named parameter collection.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    items: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: &str, t: &Tensor) {
        assert!(
            !self.items.iter().any(|(n, _)| n == name),
            "duplicate parameter name {name}"
        );
        assert!(t.requires_grad(), "parameter {name} does not require grad");
        self.items.push((name.to_string(), t.clone()));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.items.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Total scalar count across all parameters.
    pub fn count_scalars(&self) -> usize {
        self.items.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.items {
            t.zero_grad();
        }
    }

    /// Stores every parameter in a checkpoint under `param.<name>`.
    pub fn export_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        for (name, t) in &self.items {
            ckpt.add(&format!("param.{}", name), t.shape(), t.to_vec())?;
        }
        Ok(())
    }

    /// Loads every parameter from `param.<name>` entries, shape-checked.
    pub fn import_from(&self, ckpt: &Checkpoint) -> Result<()> {
        for (name, t) in &self.items {
            let (shape, data) = ckpt.require(&format!("param.{}", name))?;
            if shape != t.shape() {
                return Err(Error::shape(format!(
                    "checkpoint: parameter '{}' has shape {:?}, model wants {:?}",
                    name,
                    shape,
                    t.shape()
                )));
            }
            t.set_data(data)?;
        }
        Ok(())
    }
}

/// Glorot-uniform parameter: entries from U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.uniform_in(-a, a)).collect();
    Tensor::param_from_vec(shape, data).expect("glorot shape/data agree")
}

// --- layers ---

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor, // [din, dout]
    pub b: Tensor, // [dout]
}

impl Linear {
    pub fn new(din: usize, dout: usize, rng: &mut Rng) -> Linear {
        Linear {
            w: glorot(&[din, dout], din, dout, rng),
            b: Tensor::param_from_vec(&[dout], vec![0.0; dout]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w)?.add(&self.b)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        out.add(&format!("{}.w", prefix), &self.w);
        out.add(&format!("{}.b", prefix), &self.b);
    }
}

/// Layer norm over the last dimension with a learned scale and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn new(dim: usize) -> LayerNorm {
        LayerNorm {
            gamma: Tensor::param_from_vec(&[dim], vec![1.0; dim]).unwrap(),
            beta: Tensor::param_from_vec(&[dim], vec![0.0; dim]).unwrap(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.layer_norm_last(1e-5)?.mul(&self.gamma)?.add(&self.beta)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        out.add(&format!("{}.gamma", prefix), &self.gamma);
        out.add(&format!("{}.beta", prefix), &self.beta);
    }
}

/// Fully connected stack with GELU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(widths: &[usize], rng: &mut Rng) -> Mlp {
        assert!(widths.len() >= 2, "mlp needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i != last {
                h = h.gelu();
            }
        }
        Ok(h)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&format!("{}.l{}", prefix, i), out);
        }
    }
}

/// 2D convolution with bias. Stride and padding are fixed at construction.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Tensor, // [co, ci, k, k]
    pub b: Tensor, // [co, 1, 1]
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(ci: usize, co: usize, k: usize, stride: usize, pad: usize, rng: &mut Rng) -> Conv2d {
        Conv2d {
            w: glorot(&[co, ci, k, k], ci * k * k, co * k * k, rng),
            b: Tensor::param_from_vec(&[co, 1, 1], vec![0.0; co]).unwrap(),
            stride,
            pad,
        }
    }

    /// Forces the layer to compute exactly zero until training moves it.
    pub fn zero_init(self) -> Conv2d {
        let n = self.w.numel();
        self.w.set_data(&vec![0.0; n]).unwrap();
        self
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.conv2d(&self.w, self.stride, self.pad)?.add(&self.b)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        out.add(&format!("{}.w", prefix), &self.w);
        out.add(&format!("{}.b", prefix), &self.b);
    }
}

// --- attention blocks ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnKind {
    Softmax,
    Linear,
}

/// Pre-norm transformer block: attention residual then MLP residual.
/// The MLP hidden width is twice the embedding width.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub kind: AttnKind,
    pub heads: usize,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub mlp: Mlp,
}

impl TransformerBlock {
    pub fn new(dim: usize, heads: usize, kind: AttnKind, rng: &mut Rng) -> TransformerBlock {
        TransformerBlock {
            kind,
            heads,
            ln1: LayerNorm::new(dim),
            ln2: LayerNorm::new(dim),
            q: Linear::new(dim, dim, rng),
            k: Linear::new(dim, dim, rng),
            v: Linear::new(dim, dim, rng),
            o: Linear::new(dim, dim, rng),
            mlp: Mlp::new(&[dim, 2 * dim, dim], rng),
        }
    }

    /// `x` is `[B, S, D]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.ln1.forward(x)?;
        let q = self.q.forward(&h)?;
        let k = self.k.forward(&h)?;
        let v = self.v.forward(&h)?;
        let attn = match self.kind {
            AttnKind::Softmax => softmax_attention(&q, &k, &v, self.heads)?,
            AttnKind::Linear => linear_attention(&q, &k, &v, self.heads)?,
        };
        let x = x.add(&self.o.forward(&attn)?)?;
        let h = self.ln2.forward(&x)?;
        x.add(&self.mlp.forward(&h)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        self.ln1.collect(&format!("{}.ln1", prefix), out);
        self.ln2.collect(&format!("{}.ln2", prefix), out);
        self.q.collect(&format!("{}.q", prefix), out);
        self.k.collect(&format!("{}.k", prefix), out);
        self.v.collect(&format!("{}.v", prefix), out);
        self.o.collect(&format!("{}.o", prefix), out);
        self.mlp.collect(&format!("{}.mlp", prefix), out);
    }
}

/// Residual cross-attention: queries from `x`, keys and values from a
/// conditioning sequence of a possibly different width.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub heads: usize,
    pub ln: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl CrossAttention {
    pub fn new(dim: usize, cond_dim: usize, heads: usize, rng: &mut Rng) -> CrossAttention {
        CrossAttention {
            heads,
            ln: LayerNorm::new(dim),
            q: Linear::new(dim, dim, rng),
            k: Linear::new(cond_dim, dim, rng),
            v: Linear::new(cond_dim, dim, rng),
            o: Linear::new(dim, dim, rng),
        }
    }

    /// `x` is `[B, Sx, D]`, `cond` is `[B, Sc, Dc]`.
    pub fn forward(&self, x: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let q = self.q.forward(&self.ln.forward(x)?)?;
        let k = self.k.forward(cond)?;
        let v = self.v.forward(cond)?;
        let attn = softmax_attention(&q, &k, &v, self.heads)?;
        x.add(&self.o.forward(&attn)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        self.ln.collect(&format!("{}.ln", prefix), out);
        self.q.collect(&format!("{}.q", prefix), out);
        self.k.collect(&format!("{}.k", prefix), out);
        self.o.collect(&format!("{}.o", prefix), out);
        self.v.collect(&format!("{}.v", prefix), out);
    }
}

// --- time embedding ---

/// Sinusoidal position embedding of a (possibly fractional) timestep:
/// `[1, dim]` with the first half sin(t * w_i) and the second half
/// cos(t * w_i), frequencies geometric from 1 down to 1/10000.
pub fn time_embedding(t: f32, dim: usize) -> Tensor {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding dim must be even");
    let half = dim / 2;
    let mut data = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(10000.0f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        data[i] = arg.sin() as f32;
        data[half + i] = arg.cos() as f32;
    }
    Tensor::from_vec(&[1, dim], data).unwrap()
}

// --- UNet ---

/// Two stacked 3x3 convolutions with GELU; when a time embedding is wired
/// in, its per-block projection is added channelwise after the first conv.
#[derive(Debug, Clone)]
struct UnetBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    time_proj: Option<Linear>,
}

impl UnetBlock {
    fn new(ci: usize, co: usize, time_dim: Option<usize>, rng: &mut Rng) -> UnetBlock {
        UnetBlock {
            conv1: Conv2d::new(ci, co, 3, 1, 1, rng),
            conv2: Conv2d::new(co, co, 3, 1, 1, rng),
            time_proj: time_dim.map(|td| Linear::new(td, co, rng)),
        }
    }

    fn forward(&self, x: &Tensor, t_feat: Option<&Tensor>) -> Result<Tensor> {
        let mut h = self.conv1.forward(x)?;
        if let Some(proj) = &self.time_proj {
            let t = t_feat.ok_or_else(|| {
                Error::shape("unet: block wants a time embedding, none given".to_string())
            })?;
            let co = self.conv1.w.shape()[0];
            let bias = proj.forward(t)?.reshape(&[co, 1, 1])?;
            h = h.add(&bias)?;
        }
        h = h.gelu();
        Ok(self.conv2.forward(&h)?.gelu())
    }

    fn collect(&self, prefix: &str, out: &mut ParamSet) {
        self.conv1.collect(&format!("{}.conv1", prefix), out);
        self.conv2.collect(&format!("{}.conv2", prefix), out);
        if let Some(p) = &self.time_proj {
            p.collect(&format!("{}.time", prefix), out);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UnetConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub width: usize,
    /// Sinusoidal embedding width; None wires no time conditioning.
    pub time_dim: Option<usize>,
    /// Conditioning token width for bottleneck cross-attention; None skips it.
    pub cond_dim: Option<usize>,
    pub heads: usize,
    /// Start the output convolution at zero so the net is initially the
    /// zero function (useful for additive-residual refiners).
    pub zero_init_out: bool,
}

/// Two-level UNet over `[B, C, H, W]` maps (H and W must be even):
/// encoder block, stride-2 down, middle block, optional cross-attention,
/// nearest 2x up, skip concat, decoder block, output convolution.
#[derive(Debug, Clone)]
pub struct Unet2 {
    cfg: UnetConfig,
    time_mlp: Option<(Linear, Linear)>,
    enc: UnetBlock,
    down: Conv2d,
    mid: UnetBlock,
    cross: Option<CrossAttention>,
    up: Conv2d,
    dec: UnetBlock,
    out: Conv2d,
}

impl Unet2 {
    pub fn new(cfg: UnetConfig, rng: &mut Rng) -> Unet2 {
        let w = cfg.width;
        let out = Conv2d::new(w, cfg.c_out, 3, 1, 1, rng);
        Unet2 {
            time_mlp: cfg
                .time_dim
                .map(|td| (Linear::new(td, td, rng), Linear::new(td, td, rng))),
            enc: UnetBlock::new(cfg.c_in, w, cfg.time_dim, rng),
            down: Conv2d::new(w, 2 * w, 3, 2, 1, rng),
            mid: UnetBlock::new(2 * w, 2 * w, cfg.time_dim, rng),
            cross: cfg
                .cond_dim
                .map(|cd| CrossAttention::new(2 * w, cd, cfg.heads, rng)),
            up: Conv2d::new(2 * w, w, 3, 1, 1, rng),
            dec: UnetBlock::new(2 * w, w, cfg.time_dim, rng),
            out: if cfg.zero_init_out { out.zero_init() } else { out },
            cfg,
        }
    }

    pub fn config(&self) -> &UnetConfig {
        &self.cfg
    }

    /// `x` is `[B, c_in, H, W]`; `t_emb` a `[1, time_dim]` sinusoid;
    /// `cond` a `[B, S, cond_dim]` token sequence.
    pub fn forward(
        &self,
        x: &Tensor,
        t_emb: Option<&Tensor>,
        cond: Option<&Tensor>,
    ) -> Result<Tensor> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.cfg.c_in {
            return Err(Error::shape(format!(
                "unet: input {:?}, expected [B, {}, H, W]",
                shape, self.cfg.c_in
            )));
        }
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "unet: H and W must be even, got {}x{}",
                h, w
            )));
        }
        let t_feat = match (&self.time_mlp, t_emb) {
            (Some((l1, l2)), Some(t)) => Some(l2.forward(&l1.forward(t)?.gelu())?),
            (Some(_), None) => {
                return Err(Error::shape(
                    "unet: built with time conditioning but no embedding given".to_string(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::shape(
                    "unet: no time conditioning wired, but embedding given".to_string(),
                ))
            }
            (None, None) => None,
        };

        let e = self.enc.forward(x, t_feat.as_ref())?;
        let d = self.down.forward(&e)?.gelu();
        let mut m = self.mid.forward(&d, t_feat.as_ref())?;
        match (&self.cross, cond) {
            (Some(cross), Some(cond)) => {
                let (hw, c2) = (h / 2 * (w / 2), 2 * self.cfg.width);
                let tokens = m.reshape(&[b, c2, hw])?.permute(&[0, 2, 1])?;
                let mixed = cross.forward(&tokens, cond)?;
                m = mixed.permute(&[0, 2, 1])?.reshape(&[b, c2, h / 2, w / 2])?;
            }
            (Some(_), None) => {
                return Err(Error::shape(
                    "unet: built with cross-attention but no conditioning given".to_string(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::shape(
                    "unet: no cross-attention wired, but conditioning given".to_string(),
                ))
            }
            (None, None) => {}
        }
        let u = self.up.forward(&m.upsample2x()?)?.gelu();
        let cat = Tensor::concat(&[u, e], 1)?;
        let dec = self.dec.forward(&cat, t_feat.as_ref())?;
        self.out.forward(&dec)
    }

    pub fn collect(&self, prefix: &str, out: &mut ParamSet) {
        if let Some((l1, l2)) = &self.time_mlp {
            l1.collect(&format!("{}.tmlp1", prefix), out);
            l2.collect(&format!("{}.tmlp2", prefix), out);
        }
        self.enc.collect(&format!("{}.enc", prefix), out);
        self.down.collect(&format!("{}.down", prefix), out);
        self.mid.collect(&format!("{}.mid", prefix), out);
        if let Some(c) = &self.cross {
            c.collect(&format!("{}.cross", prefix), out);
        }
        self.up.collect(&format!("{}.up", prefix), out);
        self.dec.collect(&format!("{}.dec", prefix), out);
        self.out.collect(&format!("{}.out", prefix), out);
    }
}

// --- optimizer ---

/// Adam with bias correction. Moments are stored per parameter in f32 and
/// the per-element update is computed in f64.
#[derive(Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    names: Vec<String>,
    params: Vec<Tensor>,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f32) -> Adam {
        let names: Vec<String> = params.iter().map(|(n, _)| n.to_string()).collect();
        let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
        let m = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        let v = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            names,
            params: tensors,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently on the parameters.
    /// A parameter without a gradient (unused in the graph this step) is
    /// treated as having a zero gradient.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, p) in self.params.iter().enumerate() {
            let grad = p.grad();
            let g_slice = grad.as_deref().unwrap_or(&[]);
            let mut data = p.to_vec();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..data.len() {
                let g = g_slice.get(i).copied().unwrap_or(0.0) as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * g * g;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let step = self.lr as f64 * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                data[i] = (data[i] as f64 - step) as f32;
            }
            p.set_data(&data)?;
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// Writes moments and step count into a checkpoint (`adam.m.<name>`,
    /// `adam.v.<name>`, meta key `adam.t`).
    pub fn export_to(&self, ckpt: &mut Checkpoint) -> Result<()> {
        ckpt.meta.set("adam.t", self.t);
        for (i, name) in self.names.iter().enumerate() {
            let shape = self.params[i].shape();
            ckpt.add(&format!("adam.m.{}", name), shape, self.m[i].clone())?;
            ckpt.add(&format!("adam.v.{}", name), shape, self.v[i].clone())?;
        }
        Ok(())
    }

    pub fn import_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.t = ckpt.meta.require_parsed("adam.t")?;
        for (i, name) in self.names.iter().enumerate() {
            let (_, m) = ckpt.require(&format!("adam.m.{}", name))?;
            let (_, v) = ckpt.require(&format!("adam.v.{}", name))?;
            if m.len() != self.m[i].len() || v.len() != self.v[i].len() {
                return Err(Error::shape(format!(
                    "checkpoint: optimizer state size mismatch for '{}'",
                    name
                )));
            }
            self.m[i].copy_from_slice(m);
            self.v[i].copy_from_slice(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_zero_bias_init() {
        let mut rng = Rng::seed_from(1);
        let l = Linear::new(3, 5, &mut rng);
        let x = Tensor::from_vec(&[2, 4, 3], vec![0.5; 24]).unwrap();
        let y = l.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 5]);
        assert!(l.b.to_vec().iter().all(|&b| b == 0.0));
        // glorot bound for 3 -> 5: sqrt(6/8)
        let bound = (6.0f32 / 8.0).sqrt();
        assert!(l.w.to_vec().iter().all(|&w| w.abs() <= bound));
    }

    #[test]
    fn layer_norm_at_init_is_plain_normalization() {
        let mut rng = Rng::seed_from(2);
        let x = Tensor::randn(&[4, 6], &mut rng);
        let ln = LayerNorm::new(6);
        let a = ln.forward(&x).unwrap().to_vec();
        let b = x.layer_norm_last(1e-5).unwrap().to_vec();
        assert_eq!(a, b); // gamma=1, beta=0
    }

    #[test]
    fn mlp_collapses_to_linear_stack_shapes() {
        let mut rng = Rng::seed_from(3);
        let mlp = Mlp::new(&[3, 8, 8, 1], &mut rng);
        let x = Tensor::from_vec(&[5, 3], vec![0.1; 15]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap().shape(), &[5, 1]);
        let mut ps = ParamSet::new();
        mlp.collect("mlp", &mut ps);
        assert_eq!(ps.len(), 6); // 3 layers, weight + bias each
    }

    #[test]
    fn transformer_block_keeps_shape_and_is_deterministic() {
        let mut rng = Rng::seed_from(4);
        for kind in [AttnKind::Softmax, AttnKind::Linear] {
            let block = TransformerBlock::new(8, 2, kind, &mut rng);
            let x = Tensor::randn(&[1, 5, 8], &mut rng);
            let y1 = block.forward(&x).unwrap();
            let y2 = block.forward(&x).unwrap();
            assert_eq!(y1.shape(), &[1, 5, 8]);
            assert_eq!(y1.to_vec(), y2.to_vec());
        }
    }

    #[test]
    fn time_embedding_at_zero_is_zeros_then_ones() {
        let e = time_embedding(0.0, 8).to_vec();
        assert_eq!(&e[..4], &[0.0; 4]); // sin(0)
        assert_eq!(&e[4..], &[1.0; 4]); // cos(0)
        // first frequency is exactly 1, so slot 0 is sin(t)
        let e5 = time_embedding(5.0, 8).to_vec();
        assert!((e5[0] - 5.0f32.sin()).abs() < 1e-6);
        assert!((e5[4] - 5.0f32.cos()).abs() < 1e-6);
        // distinct timesteps embed differently
        assert!(e5.iter().zip(&e).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn adam_single_step_matches_hand_computation() {
        // p=1, g=0.5, lr=0.1: m=0.05, v=0.000250, mhat=0.5, vhat=0.25,
        // step = 0.1 * 0.5 / (0.5 + 1e-8) ~= 0.1, p -> 0.9
        let p = Tensor::param_from_vec(&[1], vec![1.0]).unwrap();
        let mut ps = ParamSet::new();
        ps.add("p", &p);
        let mut opt = Adam::new(&ps, 0.1);
        p.accumulate_grad(&[0.5]);
        opt.step().unwrap();
        let got = p.to_vec()[0];
        assert!((got - 0.9).abs() < 1e-6, "got {}", got);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        // loss = (p - 3)^2 from p = 0
        let p = Tensor::param_from_vec(&[1], vec![0.0]).unwrap();
        let mut ps = ParamSet::new();
        ps.add("p", &p);
        let mut opt = Adam::new(&ps, 0.05);
        for _ in 0..500 {
            opt.zero_grad();
            let loss = p.add_scalar(-3.0).square().sum();
            loss.backward().unwrap();
            opt.step().unwrap();
        }
        assert!((p.to_vec()[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn adam_state_survives_checkpoint_round_trip() {
        let p = Tensor::param_from_vec(&[2], vec![1.0, -1.0]).unwrap();
        let mut ps = ParamSet::new();
        ps.add("p", &p);
        let mut opt = Adam::new(&ps, 0.01);
        p.accumulate_grad(&[0.3, -0.7]);
        opt.step().unwrap();

        let mut ckpt = Checkpoint::new();
        ps.export_to(&mut ckpt).unwrap();
        opt.export_to(&mut ckpt).unwrap();

        let p2 = Tensor::param_from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let mut ps2 = ParamSet::new();
        ps2.add("p", &p2);
        let mut opt2 = Adam::new(&ps2, 0.01);
        ps2.import_from(&ckpt).unwrap();
        opt2.import_from(&ckpt).unwrap();

        assert_eq!(p2.to_vec(), p.to_vec());
        assert_eq!(opt2.step_count(), 1);
        // both optimizers continue identically
        opt.zero_grad();
        p.accumulate_grad(&[0.1, 0.1]);
        p2.accumulate_grad(&[0.1, 0.1]);
        opt.step().unwrap();
        opt2.step().unwrap();
        assert_eq!(p.to_vec(), p2.to_vec());
    }

    #[test]
    fn unet_preserves_spatial_shape() {
        let mut rng = Rng::seed_from(7);
        let cfg = UnetConfig {
            c_in: 4,
            c_out: 4,
            width: 8,
            time_dim: None,
            cond_dim: None,
            heads: 2,
            zero_init_out: false,
        };
        let net = Unet2::new(cfg, &mut rng);
        let x = Tensor::randn(&[1, 4, 8, 8], &mut rng);
        let y = net.forward(&x, None, None).unwrap();
        assert_eq!(y.shape(), &[1, 4, 8, 8]);
        // odd sizes are rejected
        let bad = Tensor::randn(&[1, 4, 7, 8], &mut rng);
        assert!(net.forward(&bad, None, None).is_err());
    }

    #[test]
    fn zero_initialized_unet_outputs_zero() {
        let mut rng = Rng::seed_from(8);
        let cfg = UnetConfig {
            c_in: 2,
            c_out: 2,
            width: 4,
            time_dim: None,
            cond_dim: None,
            heads: 1,
            zero_init_out: true,
        };
        let net = Unet2::new(cfg, &mut rng);
        let x = Tensor::randn(&[1, 2, 4, 4], &mut rng);
        let y = net.forward(&x, None, None).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unet_time_and_condition_change_the_output() {
        let mut rng = Rng::seed_from(9);
        let cfg = UnetConfig {
            c_in: 2,
            c_out: 2,
            width: 4,
            time_dim: Some(16),
            cond_dim: Some(6),
            heads: 2,
            zero_init_out: false,
        };
        let net = Unet2::new(cfg, &mut rng);
        let x = Tensor::randn(&[1, 2, 4, 4], &mut rng);
        let cond = Tensor::randn(&[1, 3, 6], &mut rng);
        let cond2 = Tensor::randn(&[1, 3, 6], &mut rng);
        let t1 = time_embedding(1.0, 16);
        let t9 = time_embedding(9.0, 16);
        let y_t1 = net.forward(&x, Some(&t1), Some(&cond)).unwrap();
        let y_t9 = net.forward(&x, Some(&t9), Some(&cond)).unwrap();
        let y_c2 = net.forward(&x, Some(&t1), Some(&cond2)).unwrap();
        let diff_t: f32 = y_t1
            .to_vec()
            .iter()
            .zip(y_t9.to_vec())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let diff_c: f32 = y_t1
            .to_vec()
            .iter()
            .zip(y_c2.to_vec())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff_t > 1e-4, "time embedding ignored");
        assert!(diff_c > 1e-4, "conditioning ignored");
        // missing inputs are rejected
        assert!(net.forward(&x, None, Some(&cond)).is_err());
        assert!(net.forward(&x, Some(&t1), None).is_err());
    }

    #[test]
    fn unet_gradients_reach_every_parameter() {
        let mut rng = Rng::seed_from(10);
        let cfg = UnetConfig {
            c_in: 2,
            c_out: 2,
            width: 4,
            time_dim: Some(8),
            cond_dim: Some(6),
            heads: 2,
            zero_init_out: false,
        };
        let net = Unet2::new(cfg, &mut rng);
        let mut ps = ParamSet::new();
        net.collect("unet", &mut ps);
        let x = Tensor::randn(&[1, 2, 4, 4], &mut rng);
        let cond = Tensor::randn(&[1, 3, 6], &mut rng);
        let t = time_embedding(2.0, 8);
        let y = net.forward(&x, Some(&t), Some(&cond)).unwrap();
        y.square().sum().backward().unwrap();
        for (name, p) in ps.iter() {
            assert!(p.grad().is_some(), "no gradient reached {}", name);
        }
    }

    #[test]
    fn param_set_export_import_round_trip() {
        let mut rng = Rng::seed_from(11);
        let l = Linear::new(3, 2, &mut rng);
        let mut ps = ParamSet::new();
        l.collect("lin", &mut ps);
        let mut ckpt = Checkpoint::new();
        ps.export_to(&mut ckpt).unwrap();

        let mut rng2 = Rng::seed_from(99);
        let l2 = Linear::new(3, 2, &mut rng2);
        let mut ps2 = ParamSet::new();
        l2.collect("lin", &mut ps2);
        ps2.import_from(&ckpt).unwrap();
        assert_eq!(l.w.to_vec(), l2.w.to_vec());
        assert_eq!(l.b.to_vec(), l2.b.to_vec());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn param_set_rejects_duplicate_names() {
        let p = Tensor::param_from_vec(&[1], vec![0.0]).unwrap();
        let mut ps = ParamSet::new();
        ps.add("p", &p);
        ps.add("p", &p);
    }
}
