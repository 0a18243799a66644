//! Stage 2: aligning single-view image features to the stage-1 latent
//! planes with conditional denoisers.
//!
//! The latent targets are the stage-1 eval-mode means. Three plane UNets
//! (or one joint UNet, or a deterministic regressor, depending on mode)
//! predict the clean latent from a noised copy, a sinusoidal step
//! embedding, and cross-attention over tokens from a frozen depth-image
//! encoder. Sampling runs the standard ancestral loop with the learned
//! clean-latent prediction plugged into the posterior mean.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{fibonacci_cameras, DepthImage};
use crate::io::{save_checkpoint, write_tensor_file, read_tensor_file, Checkpoint, Manifest};
use crate::nn::{time_embedding, Adam, ParamSet, Unet2, UnetConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

// --- noise schedule ---

/// Diffusion variance schedule with the derived per-step quantities
/// precomputed in f64. Index convention: step `t` runs 1..=steps;
/// `alpha_bar_prev(1)` is defined as 1, which pins the first posterior
/// variance to exactly zero.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// Linear schedule between `beta_start` and `beta_end` (both exclusive of
/// 0 and 1, strictly increasing).
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::config("schedule: steps must be positive"));
    }
    if !(beta_start > 0.0 && beta_end < 1.0 && beta_start < beta_end) {
        return Err(Error::config(format!(
            "schedule: need 0 < beta_start < beta_end < 1, got {} and {}",
            beta_start, beta_end
        )));
    }
    let mut beta = Vec::with_capacity(steps);
    for i in 0..steps {
        let frac = if steps == 1 {
            0.0
        } else {
            i as f64 / (steps - 1) as f64
        };
        beta.push(beta_start + (beta_end - beta_start) * frac);
    }
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0f64;
    for a in &alpha {
        prod *= a;
        alpha_bar.push(prod);
    }
    let mut beta_tilde = Vec::with_capacity(steps);
    for i in 0..steps {
        let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
        beta_tilde.push((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]);
    }
    let sched = NoiseSchedule {
        steps,
        beta,
        alpha,
        alpha_bar,
        beta_tilde,
    };
    for t in 2..=steps {
        if sched.beta(t) <= sched.beta(t - 1) {
            return Err(Error::numeric("schedule: beta must increase strictly"));
        }
        if sched.alpha_bar(t) >= sched.alpha_bar(t - 1) {
            return Err(Error::numeric("schedule: alpha products must decrease"));
        }
    }
    Ok(sched)
}

impl NoiseSchedule {
    /// The production default: 1000 steps, beta from 1e-4 to 0.02.
    pub fn default_schedule() -> NoiseSchedule {
        build_schedule(1000, 1e-4, 0.02).unwrap()
    }

    /// Short schedule for smoke runs; beta range widened so the terminal
    /// signal level still drops below 1e-2.
    pub fn smoke() -> NoiseSchedule {
        build_schedule(100, 1e-3, 0.1).unwrap()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::config(format!(
                "schedule: step {} outside 1..={}",
                t, self.steps
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t - 1]
    }

    /// Whether the terminal marginal is essentially pure noise; required
    /// before the schedule may drive training or ancestral sampling.
    pub fn is_terminal(&self) -> bool {
        *self.alpha_bar.last().unwrap() < 1e-2
    }
}

// --- forward and reverse diffusion steps ---

fn check_latent_shape(z: &Tensor) -> Result<(usize, usize)> {
    let s = z.shape();
    if s.len() != 4 || s[0] != 3 || s[2] != s[3] {
        return Err(Error::shape(format!(
            "latent planes must be [3, C, R, R], got {:?}",
            s
        )));
    }
    Ok((s[1], s[2]))
}

/// Standard normal noise for three planes, drawn from per-plane RNG
/// streams (the plane index is mixed into a fresh draw label), so filling
/// the planes in any order gives identical bits.
fn plane_noise(per_plane: usize, rng: &mut Rng) -> Vec<f32> {
    let draw = rng.next_u64();
    let base = rng.split(draw);
    let mut out = vec![0.0f32; 3 * per_plane];
    for k in 0..3 {
        let mut rk = base.split(k as u64);
        rk.fill_normal(&mut out[k * per_plane..(k + 1) * per_plane]);
    }
    out
}

/// The forward marginal with caller-supplied noise:
/// `z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps`.
pub fn forward_sample_with(z0: &Tensor, t: usize, sched: &NoiseSchedule, eps: &Tensor) -> Result<Tensor> {
    check_latent_shape(z0)?;
    sched.check_t(t)?;
    if eps.shape() != z0.shape() {
        return Err(Error::shape(format!(
            "forward_sample: noise {:?} vs latent {:?}",
            eps.shape(),
            z0.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (c_sig, c_noise) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data: Vec<f32> = z0
        .to_vec()
        .iter()
        .zip(eps.to_vec())
        .map(|(&z, e)| (c_sig * z as f64 + c_noise * e as f64) as f32)
        .collect();
    Tensor::from_vec(&z0.shape().to_vec(), data)
}

/// Draws the noise itself and returns `(z_t, eps)`.
pub fn forward_sample(
    z0: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    let (c, r) = check_latent_shape(z0)?;
    let eps = Tensor::from_vec(&z0.shape().to_vec(), plane_noise(c * r * r, rng))?;
    let zt = forward_sample_with(z0, t, sched, &eps)?;
    Ok((zt, eps))
}

/// Mean coefficients of the reverse-step posterior given the clean-latent
/// estimate: `mu = c_z0 * z0_hat + c_zt * z_t`.
pub fn posterior_mean_coeffs(
    alpha_bar_prev: f64,
    alpha_bar: f64,
    beta: f64,
    alpha: f64,
) -> (f64, f64) {
    let denom = 1.0 - alpha_bar;
    let c_z0 = alpha_bar_prev.sqrt() * beta / denom;
    let c_zt = alpha.sqrt() * (1.0 - alpha_bar_prev) / denom;
    (c_z0, c_zt)
}

/// One ancestral step: draws `z_{t-1}` from the posterior around the mean
/// built from `z0_hat` and `z_t`. The final step (t = 1) has zero variance
/// and consumes no randomness.
pub fn posterior_step(
    z_t: &Tensor,
    z0_hat: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Tensor> {
    let (c, r) = check_latent_shape(z_t)?;
    sched.check_t(t)?;
    if z0_hat.shape() != z_t.shape() {
        return Err(Error::shape(format!(
            "posterior_step: estimate {:?} vs state {:?}",
            z0_hat.shape(),
            z_t.shape()
        )));
    }
    let (c_z0, c_zt) = posterior_mean_coeffs(
        sched.alpha_bar_prev(t),
        sched.alpha_bar(t),
        sched.beta(t),
        sched.alpha(t),
    );
    let zt = z_t.to_vec();
    let z0 = z0_hat.to_vec();
    let mut out: Vec<f32> = zt
        .iter()
        .zip(&z0)
        .map(|(&a, &b)| (c_z0 * b as f64 + c_zt * a as f64) as f32)
        .collect();
    if t > 1 {
        let sigma = sched.beta_tilde(t).sqrt();
        let noise = plane_noise(c * r * r, rng);
        for (o, n) in out.iter_mut().zip(&noise) {
            *o = (*o as f64 + sigma * *n as f64) as f32;
        }
    }
    Tensor::from_vec(&z_t.shape().to_vec(), out)
}

// --- frozen conditioning encoder ---

pub const PATCH_SIZE: usize = 8;
pub const COND_DIM: usize = 128;

/// Token sequence conditioning one denoise call: one token per depth
/// patch plus a global mean token, all layer-normalized. Produced by a
/// frozen seeded projection, so the same image always yields the same
/// bits and training has no encoder state to touch.
#[derive(Debug, Clone)]
pub struct ConditioningFeature {
    /// `[S, COND_DIM]` with `S = (res / PATCH_SIZE)^2 + 1`.
    pub tokens: Tensor,
    pub camera_index: usize,
}

fn encoder_matrix(seed: u64) -> Vec<f32> {
    let mut rng = Rng::seed_from(seed).split(0x70726f6a); // "proj"
    let len = PATCH_SIZE * PATCH_SIZE * COND_DIM;
    let mut m = vec![0.0f32; len];
    rng.fill_normal(&mut m);
    let scale = 1.0 / (PATCH_SIZE as f32); // 1/sqrt(patch pixel count)
    for v in &mut m {
        *v *= scale;
    }
    m
}

/// FNV-1a over the projection matrix bits; constant for a given seed, so
/// any drift in encoder state shows up as a hash change.
pub fn encoder_matrix_hash(seed: u64) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for v in encoder_matrix(seed) {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

pub fn encode_condition(depth: &DepthImage, encoder_seed: u64) -> Result<ConditioningFeature> {
    let res = depth.resolution;
    if res == 0 || res % PATCH_SIZE != 0 {
        return Err(Error::shape(format!(
            "encode_condition: resolution {} not divisible by patch size {}",
            res, PATCH_SIZE
        )));
    }
    let grid = res / PATCH_SIZE;
    let np = grid * grid;
    let plen = PATCH_SIZE * PATCH_SIZE;
    let mut raw = vec![0.0f32; np * plen];
    for pr in 0..grid {
        for pc in 0..grid {
            let p = pr * grid + pc;
            for r in 0..PATCH_SIZE {
                for c in 0..PATCH_SIZE {
                    raw[p * plen + r * PATCH_SIZE + c] =
                        depth.data[(pr * PATCH_SIZE + r) * res + pc * PATCH_SIZE + c];
                }
            }
        }
    }
    let raw = Tensor::from_vec(&[np, plen], raw)?;
    let proj = Tensor::from_vec(&[plen, COND_DIM], encoder_matrix(encoder_seed))?;
    let patch_tokens = raw.matmul(&proj)?;
    let global = patch_tokens.mean_axis(0, true)?;
    let tokens = Tensor::concat(&[patch_tokens, global], 0)?.layer_norm_last(1e-5)?;
    Ok(ConditioningFeature {
        tokens,
        camera_index: depth.camera_index,
    })
}

// --- denoisers ---

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Three UNets, one per plane, independent parameters.
    Parallel,
    /// One joint UNet over the channel-concatenated planes, width matched
    /// to the parallel mode's parameter count within 10%.
    Single,
    /// The parallel trunk used as a plain regressor: zero input, step 0,
    /// no noise anywhere.
    Deterministic,
}

impl AlignMode {
    pub fn name(self) -> &'static str {
        match self {
            AlignMode::Parallel => "parallel",
            AlignMode::Single => "single",
            AlignMode::Deterministic => "deterministic",
        }
    }

    pub fn from_name(s: &str) -> Result<AlignMode> {
        match s {
            "parallel" => Ok(AlignMode::Parallel),
            "single" => Ok(AlignMode::Single),
            "deterministic" => Ok(AlignMode::Deterministic),
            other => Err(Error::config(format!("unknown align mode '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignerConfig {
    pub mode: AlignMode,
    /// Channels per latent plane.
    pub c_latent: usize,
    /// Latent plane resolution.
    pub latent_resolution: usize,
    /// UNet width in parallel/deterministic mode; the single mode derives
    /// its own width from parameter parity.
    pub width: usize,
    pub heads: usize,
    /// Sinusoidal step-embedding width.
    pub time_dim: usize,
    /// Seed of the frozen conditioning encoder.
    pub encoder_seed: u64,
}

impl AlignerConfig {
    pub fn desk() -> AlignerConfig {
        AlignerConfig {
            mode: AlignMode::Parallel,
            c_latent: 4,
            latent_resolution: 8,
            width: 32,
            heads: 4,
            time_dim: 128,
            encoder_seed: 2024,
        }
    }

    pub fn tiny() -> AlignerConfig {
        AlignerConfig {
            mode: AlignMode::Parallel,
            c_latent: 2,
            latent_resolution: 2,
            width: 4,
            heads: 2,
            time_dim: 16,
            encoder_seed: 2024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_latent == 0 || self.width == 0 || self.time_dim == 0 {
            return Err(Error::config("aligner: sizes must be positive"));
        }
        if self.latent_resolution < 2 || self.latent_resolution % 2 != 0 {
            return Err(Error::config(format!(
                "aligner: latent resolution {} must be even and >= 2",
                self.latent_resolution
            )));
        }
        if self.heads == 0 || (2 * self.width) % self.heads != 0 {
            return Err(Error::config(format!(
                "aligner: heads {} must divide the bottleneck width {}",
                self.heads,
                2 * self.width
            )));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::config("aligner: time_dim must be even"));
        }
        Ok(())
    }

    pub fn write_meta(&self, m: &mut Manifest) {
        m.set("aligner.mode", self.mode.name())
            .set("aligner.c_latent", self.c_latent)
            .set("aligner.latent_resolution", self.latent_resolution)
            .set("aligner.width", self.width)
            .set("aligner.heads", self.heads)
            .set("aligner.time_dim", self.time_dim)
            .set("aligner.encoder_seed", self.encoder_seed);
    }

    pub fn read_meta(m: &Manifest) -> Result<AlignerConfig> {
        let cfg = AlignerConfig {
            mode: AlignMode::from_name(m.require("aligner.mode")?)?,
            c_latent: m.require_parsed("aligner.c_latent")?,
            latent_resolution: m.require_parsed("aligner.latent_resolution")?,
            width: m.require_parsed("aligner.width")?,
            heads: m.require_parsed("aligner.heads")?,
            time_dim: m.require_parsed("aligner.time_dim")?,
            encoder_seed: m.require_parsed("aligner.encoder_seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn unet_cfg(c: usize, width: usize, heads: usize, time_dim: usize) -> UnetConfig {
    UnetConfig {
        c_in: c,
        c_out: c,
        width,
        time_dim: Some(time_dim),
        cond_dim: Some(COND_DIM),
        heads,
        zero_init_out: false,
    }
}

fn unet_param_count(cfg: UnetConfig) -> usize {
    let mut rng = Rng::seed_from(0);
    let net = Unet2::new(cfg, &mut rng);
    let mut set = ParamSet::new();
    net.collect("n", &mut set);
    set.count_scalars()
}

/// Width for the joint UNet whose parameter count best matches three
/// parallel UNets; errors if no width lands within 10%.
pub fn matched_single_width(cfg: &AlignerConfig) -> Result<usize> {
    let target = 3 * unet_param_count(unet_cfg(cfg.c_latent, cfg.width, cfg.heads, cfg.time_dim));
    let step = if cfg.heads % 2 == 0 { cfg.heads / 2 } else { cfg.heads };
    let mut best = (usize::MAX, 0usize);
    let mut w = step.max(1);
    while w <= cfg.width * 4 {
        let count = unet_param_count(unet_cfg(3 * cfg.c_latent, w, cfg.heads, cfg.time_dim));
        let diff = count.abs_diff(target);
        if diff < best.0 {
            best = (diff, w);
        }
        w += step.max(1);
    }
    let (diff, w) = best;
    if diff * 10 > target {
        return Err(Error::config(format!(
            "single-mode width search: closest width {} misses the target by {} / {}",
            w, diff, target
        )));
    }
    Ok(w)
}

#[derive(Debug)]
pub struct DenoiserSet {
    pub cfg: AlignerConfig,
    nets: Vec<Unet2>,
}

impl DenoiserSet {
    pub fn new(cfg: AlignerConfig, rng: &mut Rng) -> Result<DenoiserSet> {
        cfg.validate()?;
        let nets = match cfg.mode {
            AlignMode::Parallel | AlignMode::Deterministic => (0..3)
                .map(|_| Unet2::new(unet_cfg(cfg.c_latent, cfg.width, cfg.heads, cfg.time_dim), rng))
                .collect(),
            AlignMode::Single => {
                let w = matched_single_width(&cfg)?;
                vec![Unet2::new(
                    unet_cfg(3 * cfg.c_latent, w, cfg.heads, cfg.time_dim),
                    rng,
                )]
            }
        };
        Ok(DenoiserSet { cfg, nets })
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        match self.cfg.mode {
            AlignMode::Single => self.nets[0].collect("joint", &mut set),
            _ => {
                for (k, net) in self.nets.iter().enumerate() {
                    net.collect(&format!("plane.{}", k), &mut set);
                }
            }
        }
        set
    }

    pub fn param_count(&self) -> usize {
        self.params().count_scalars()
    }

    pub fn export(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        self.cfg.write_meta(&mut ckpt.meta);
        self.params().export_to(&mut ckpt)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<DenoiserSet> {
        let cfg = AlignerConfig::read_meta(&ckpt.meta)?;
        let mut rng = Rng::seed_from(0);
        let set = DenoiserSet::new(cfg, &mut rng)?;
        set.params().import_from(ckpt)?;
        Ok(set)
    }
}

/// Clean-latent prediction from the noised planes, the conditioning
/// tokens, and the step index. Deterministic mode requires `t = 0` (and
/// probabilistic modes require 1..=T); the caller feeds zero planes there.
pub fn denoise(
    set: &DenoiserSet,
    z_t: &Tensor,
    cond: &ConditioningFeature,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    let (c, r) = check_latent_shape(z_t)?;
    if c != set.cfg.c_latent || r != set.cfg.latent_resolution {
        return Err(Error::shape(format!(
            "denoise: planes {}x{} do not match config {}x{}",
            c, r, set.cfg.c_latent, set.cfg.latent_resolution
        )));
    }
    match set.cfg.mode {
        AlignMode::Deterministic => {
            if t != 0 {
                return Err(Error::config(
                    "denoise: deterministic mode uses step 0 only".to_string(),
                ));
            }
        }
        _ => sched.check_t(t)?,
    }
    let ts = cond.tokens.shape().to_vec();
    if ts.len() != 2 || ts[1] != COND_DIM {
        return Err(Error::shape(format!(
            "denoise: conditioning tokens {:?}, want [S, {}]",
            ts, COND_DIM
        )));
    }
    let gamma = time_embedding(t as f32, set.cfg.time_dim);
    let tokens = cond.tokens.reshape(&[1, ts[0], ts[1]])?;
    match set.cfg.mode {
        AlignMode::Single => {
            let x = z_t.reshape(&[1, 3 * c, r, r])?;
            let y = set.nets[0].forward(&x, Some(&gamma), Some(&tokens))?;
            y.reshape(&[3, c, r, r])
        }
        _ => {
            let mut outs = Vec::with_capacity(3);
            for (k, net) in set.nets.iter().enumerate() {
                let plane = z_t.narrow(0, k, 1)?;
                outs.push(net.forward(&plane, Some(&gamma), Some(&tokens))?);
            }
            Tensor::concat(&outs, 0)
        }
    }
}

// --- precomputed latent dataset ---

/// One stage-2 training example: the eval-mode latent mean of a shape and
/// its best-view depth image.
#[derive(Debug, Clone)]
pub struct LatentRecord {
    pub name: String,
    /// `[3, C_l, R_l, R_l]`
    pub latent: Tensor,
    pub depth: DepthImage,
}

#[derive(Debug, Clone)]
pub struct LatentDataset {
    pub camera_count: usize,
    pub depth_resolution: usize,
    pub records: Vec<LatentRecord>,
}

impl LatentDataset {
    pub fn record(&self, name: &str) -> Option<&LatentRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty()
        || !name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(Error::data(format!("invalid record name '{}'", name)));
    }
    Ok(())
}

pub fn save_latent_dataset(dir: &Path, ds: &LatentDataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut top = Manifest::new();
    top.set("format.version", 1)
        .set("camera_count", ds.camera_count)
        .set("depth_resolution", ds.depth_resolution)
        .set("shape_count", ds.records.len());
    for (i, rec) in ds.records.iter().enumerate() {
        check_name(&rec.name)?;
        if rec.depth.resolution != ds.depth_resolution {
            return Err(Error::data(format!(
                "latent dataset: depth resolution {} for '{}' vs {}",
                rec.depth.resolution, rec.name, ds.depth_resolution
            )));
        }
        if rec.depth.camera_index >= ds.camera_count {
            return Err(Error::data(format!(
                "latent dataset: camera index {} out of range for '{}'",
                rec.depth.camera_index, rec.name
            )));
        }
        check_latent_shape(&rec.latent)?;
        top.set(&format!("shape.{}.name", i), &rec.name)
            .set(&format!("shape.{}.camera_index", i), rec.depth.camera_index);
        write_tensor_file(
            &dir.join(format!("{}_latent.lam3d", rec.name)),
            &rec.latent.shape().to_vec(),
            &rec.latent.to_vec(),
        )?;
        write_tensor_file(
            &dir.join(format!("{}_depth.lam3d", rec.name)),
            &[ds.depth_resolution, ds.depth_resolution],
            &rec.depth.data,
        )?;
    }
    top.write_to(&dir.join("manifest.txt"))
}

pub fn load_latent_dataset(dir: &Path) -> Result<LatentDataset> {
    let top = Manifest::read_from(&dir.join("manifest.txt"))?;
    let version: usize = top.require_parsed("format.version")?;
    if version != 1 {
        return Err(Error::data(format!("latent dataset version {}", version)));
    }
    let camera_count: usize = top.require_parsed("camera_count")?;
    let depth_resolution: usize = top.require_parsed("depth_resolution")?;
    let count: usize = top.require_parsed("shape_count")?;
    if camera_count == 0 {
        return Err(Error::data("latent dataset: camera_count must be positive"));
    }
    let cameras = fibonacci_cameras(camera_count);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let name = top.require(&format!("shape.{}.name", i))?.to_string();
        check_name(&name)?;
        let cam_idx: usize = top.require_parsed(&format!("shape.{}.camera_index", i))?;
        if cam_idx >= camera_count {
            return Err(Error::data(format!(
                "latent dataset: camera index {} out of range for '{}'",
                cam_idx, name
            )));
        }
        let (lshape, ldata) = read_tensor_file(&dir.join(format!("{}_latent.lam3d", name)))?;
        let latent = Tensor::from_vec(&lshape, ldata)?;
        check_latent_shape(&latent)?;
        let (dshape, ddata) = read_tensor_file(&dir.join(format!("{}_depth.lam3d", name)))?;
        if dshape != [depth_resolution, depth_resolution] {
            return Err(Error::data(format!(
                "latent dataset: depth shape {:?} for '{}'",
                dshape, name
            )));
        }
        records.push(LatentRecord {
            name,
            latent,
            depth: DepthImage {
                resolution: depth_resolution,
                data: ddata,
                camera: cameras[cam_idx],
                camera_index: cam_idx,
            },
        });
    }
    Ok(LatentDataset {
        camera_count,
        depth_resolution,
        records,
    })
}

/// Standard deviation over all latent entries of the dataset; callers use
/// 3x this as the optional sampling clamp.
pub fn latent_std(ds: &LatentDataset) -> f32 {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    for rec in &ds.records {
        for v in rec.latent.to_vec() {
            n += 1;
            sum += v as f64;
            sq += v as f64 * v as f64;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    ((sq / n as f64 - mean * mean).max(0.0)).sqrt() as f32
}

// --- training ---

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignTrainConfig {
    pub epochs: usize,
    /// 0 means one step per record per epoch.
    pub steps_per_epoch: usize,
    pub lr: f32,
    /// Emit a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
}

impl Default for AlignTrainConfig {
    fn default() -> AlignTrainConfig {
        AlignTrainConfig {
            epochs: 500,
            steps_per_epoch: 0,
            lr: 1e-3,
            checkpoint_every: 0,
        }
    }
}

impl AlignTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("align train: epochs must be positive"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config("align train: lr must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One trace row; `t` is 0 in deterministic mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignRow {
    pub step: usize,
    pub t: usize,
    pub loss: f32,
}

pub fn align_trace_csv(rows: &[AlignRow]) -> String {
    let mut out = String::from("step,t,loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.step, r.t, r.loss));
    }
    out
}

pub fn write_align_trace(path: &Path, rows: &[AlignRow]) -> Result<()> {
    std::fs::write(path, align_trace_csv(rows))?;
    Ok(())
}

#[derive(Debug)]
pub struct AlignRun {
    pub set: DenoiserSet,
    pub trace: Vec<AlignRow>,
}

/// Trains the denoisers against the precomputed latents. Per step: pick a
/// record, draw `t` uniformly from 1..=T, noise the latent, predict the
/// clean latent, mean-squared error. Deterministic mode regresses from
/// zero input at step 0 with no noise anywhere.
pub fn train_aligner(
    ds: &LatentDataset,
    set: DenoiserSet,
    sched: &NoiseSchedule,
    tc: &AlignTrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<AlignRun> {
    if ds.records.is_empty() {
        return Err(Error::config("align train: no latent records"));
    }
    tc.validate()?;
    if set.cfg.mode != AlignMode::Deterministic && !sched.is_terminal() {
        return Err(Error::config(
            "align train: schedule does not reach noise (terminal signal >= 1e-2)",
        ));
    }
    let conds: Vec<ConditioningFeature> = ds
        .records
        .iter()
        .map(|r| encode_condition(&r.depth, set.cfg.encoder_seed))
        .collect::<Result<_>>()?;
    for rec in &ds.records {
        let (c, r) = check_latent_shape(&rec.latent)?;
        if c != set.cfg.c_latent || r != set.cfg.latent_resolution {
            return Err(Error::shape(format!(
                "align train: latent '{}' is {}x{}, config wants {}x{}",
                rec.name, c, r, set.cfg.c_latent, set.cfg.latent_resolution
            )));
        }
    }

    let params = set.params();
    let mut opt = Adam::new(&params, tc.lr);
    let mut rng = Rng::seed_from(seed).split(0x616c69676e); // "align"
    let steps_per_epoch = if tc.steps_per_epoch == 0 {
        ds.records.len()
    } else {
        tc.steps_per_epoch
    };
    let deterministic = set.cfg.mode == AlignMode::Deterministic;
    let zero = Tensor::zeros(&[
        3,
        set.cfg.c_latent,
        set.cfg.latent_resolution,
        set.cfg.latent_resolution,
    ]);

    let mut trace = Vec::with_capacity(tc.epochs * steps_per_epoch);
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        for _ in 0..steps_per_epoch {
            let idx = rng.below(ds.records.len() as u64) as usize;
            let z0 = &ds.records[idx].latent;
            let (z_in, t) = if deterministic {
                (zero.clone(), 0)
            } else {
                let t = 1 + rng.below(sched.steps() as u64) as usize;
                let (zt, _) = forward_sample(z0, t, sched, &mut rng)?;
                (zt, t)
            };
            let pred = denoise(&set, &z_in, &conds[idx], t, sched)?;
            let loss = pred.sub(z0)?.square().mean();
            let lv = loss.to_vec()[0];
            if !lv.is_finite() {
                return Err(Error::numeric(format!(
                    "alignment aborted at step {}: non-finite loss",
                    step
                )));
            }
            loss.backward()?;
            opt.step()?;
            opt.zero_grad();
            trace.push(AlignRow { step, t, loss: lv });
            step += 1;
        }
        if let Some(dir) = out_dir {
            if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
                save_align_checkpoint(dir, &format!("epoch_{:04}", epoch + 1), &set, &opt, seed, step)?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_align_checkpoint(dir, "final", &set, &opt, seed, step)?;
        write_align_trace(&dir.join("loss_trace.csv"), &trace)?;
    }
    Ok(AlignRun { set, trace })
}

fn save_align_checkpoint(
    dir: &Path,
    name: &str,
    set: &DenoiserSet,
    opt: &Adam,
    seed: u64,
    step: usize,
) -> Result<()> {
    let mut ckpt = set.export()?;
    opt.export_to(&mut ckpt)?;
    ckpt.meta.set("train.seed", seed).set("train.step", step);
    save_checkpoint(&dir.join(name), &ckpt)
}

// --- sampling ---

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    /// `[3, C_l, R_l, R_l]` sampled latent.
    pub latent: Tensor,
    /// How many denoiser evaluations the loop made.
    pub denoise_calls: usize,
}

/// Ancestral sampling conditioned on one view: start from per-plane unit
/// noise, predict the clean latent at every step, and walk the posterior
/// down to step 1 (which is deterministic). `z0_clamp`, when set, clips
/// the clean-latent estimate symmetrically (callers pass 3x the training
/// latent standard deviation). Deterministic mode is a single regression
/// call.
pub fn sample_latent(
    set: &DenoiserSet,
    cond: &ConditioningFeature,
    sched: &NoiseSchedule,
    rng: &mut Rng,
    z0_clamp: Option<f32>,
) -> Result<SampleOutcome> {
    let (c, r) = (set.cfg.c_latent, set.cfg.latent_resolution);
    let shape = vec![3, c, r, r];
    if let Some(b) = z0_clamp {
        if !b.is_finite() || b <= 0.0 {
            return Err(Error::config("sample: clamp bound must be positive"));
        }
    }
    if set.cfg.mode == AlignMode::Deterministic {
        let zero = Tensor::zeros(&shape);
        let latent = denoise(set, &zero, cond, 0, sched)?;
        return Ok(SampleOutcome {
            latent,
            denoise_calls: 1,
        });
    }
    if !sched.is_terminal() {
        return Err(Error::config(
            "sample: schedule does not reach noise (terminal signal >= 1e-2)",
        ));
    }
    let mut z = Tensor::from_vec(&shape, plane_noise(c * r * r, rng))?;
    let mut calls = 0usize;
    for t in (1..=sched.steps()).rev() {
        let mut z0_hat = denoise(set, &z, cond, t, sched)?;
        calls += 1;
        if let Some(b) = z0_clamp {
            z0_hat = z0_hat.clamp_min(-b).neg().clamp_min(-b).neg();
        }
        z = posterior_step(&z, &z0_hat, t, sched, rng)?;
    }
    Ok(SampleOutcome {
        latent: z,
        denoise_calls: calls,
    })
}
