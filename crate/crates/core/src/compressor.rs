//! Stage 1: the shape compressor.
//!
//! A point cloud is grouped around farthest-point centers, embedded, and
//! projected onto an initial tri-plane. A variational encoder compresses
//! that to a small latent tri-plane (or, in an ablation mode, a flat
//! vector); a decoder plus per-plane refiner UNets reconstruct a
//! high-resolution feature tri-plane. Two SDF heads supervise the result:
//! `phi_p` reads the reconstructed planes, `phi_t` reads the latent planes
//! directly so the latent stays decodable on its own.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{
    furthest_point_sampling, knn_group, point_cloud, sample_batch, PointCloud, SdfSampleBatch,
    ShapeSpec, Vec3,
};
use crate::io::{save_checkpoint, Checkpoint, Manifest};
use crate::nn::{Adam, AttnKind, Conv2d, Linear, Mlp, ParamSet, TransformerBlock, Unet2, UnetConfig};
use crate::rng::Rng;
use crate::triplane::{project_points, query_sdf, sdf_spatial_gradient, PlaneRole, SdfMlp, TriPlane};
use crate::tensor::Tensor;

/// How the bottleneck is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentKind {
    /// Three spatial planes of `c_latent` channels at a quarter of the
    /// input resolution.
    TriPlane,
    /// A flat vector with the same number of entries, decoded back to the
    /// plane grid by a single linear layer. Structural ablation mode; the
    /// latent SDF head has no grid to read, so that loss term is dropped.
    Vector,
}

impl LatentKind {
    pub fn name(self) -> &'static str {
        match self {
            LatentKind::TriPlane => "triplane",
            LatentKind::Vector => "vector",
        }
    }

    pub fn from_name(s: &str) -> Result<LatentKind> {
        match s {
            "triplane" => Ok(LatentKind::TriPlane),
            "vector" => Ok(LatentKind::Vector),
            other => Err(Error::config(format!("unknown latent kind '{}'", other))),
        }
    }
}

/// Training-time vs deterministic evaluation behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressorConfig {
    /// Points per input cloud.
    pub m: usize,
    /// Farthest-point centers.
    pub n_centers: usize,
    /// Neighbors gathered around each center.
    pub k_neighbors: usize,
    /// Feature channels on the full-resolution planes.
    pub c_embed: usize,
    /// Transformer depth over the center tokens.
    pub depth: usize,
    /// Attention heads (must divide `c_embed`).
    pub heads: usize,
    /// Plane resolution; power of two, at least 4.
    pub resolution: usize,
    /// Latent channels per plane.
    pub c_latent: usize,
    /// Attention blocks in the plane encoder and decoder.
    pub blocks: usize,
    /// Refiner UNet width.
    pub refiner_width: usize,
    /// Additive plane refiners on/off (off reproduces the plain decoder).
    pub refiner_enabled: bool,
    pub latent_kind: LatentKind,
}

impl CompressorConfig {
    /// Desk-scale defaults: trainable end to end on a CPU in minutes.
    pub fn desk() -> CompressorConfig {
        CompressorConfig {
            m: 2048,
            n_centers: 256,
            k_neighbors: 32,
            c_embed: 64,
            depth: 2,
            heads: 4,
            resolution: 32,
            c_latent: 4,
            blocks: 2,
            refiner_width: 32,
            refiner_enabled: true,
            latent_kind: LatentKind::TriPlane,
        }
    }

    /// Minimal configuration for gradient checks and fast unit tests.
    pub fn tiny() -> CompressorConfig {
        CompressorConfig {
            m: 128,
            n_centers: 16,
            k_neighbors: 8,
            c_embed: 8,
            depth: 1,
            heads: 2,
            resolution: 8,
            c_latent: 2,
            blocks: 1,
            refiner_width: 4,
            refiner_enabled: true,
            latent_kind: LatentKind::TriPlane,
        }
    }

    /// Latent plane resolution: two stride-2 stages below `resolution`.
    pub fn latent_resolution(&self) -> usize {
        self.resolution / 4
    }

    /// Latent entries: 3 planes x channels x latent resolution squared.
    pub fn latent_len(&self) -> usize {
        3 * self.c_latent * self.latent_resolution() * self.latent_resolution()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("compressor: m must be positive"));
        }
        if self.n_centers == 0 || self.n_centers > self.m {
            return Err(Error::config(format!(
                "compressor: n_centers {} must be in 1..={}",
                self.n_centers, self.m
            )));
        }
        if self.k_neighbors == 0 || self.k_neighbors > self.m {
            return Err(Error::config(format!(
                "compressor: k_neighbors {} must be in 1..={}",
                self.k_neighbors, self.m
            )));
        }
        if self.resolution < 4 || !self.resolution.is_power_of_two() {
            return Err(Error::config(format!(
                "compressor: resolution {} must be a power of two >= 4",
                self.resolution
            )));
        }
        if self.latent_kind == LatentKind::TriPlane && self.latent_resolution() < 2 {
            return Err(Error::config(
                "compressor: latent planes need resolution >= 8 so the \
                 latent grid stays interpolatable",
            ));
        }
        if self.c_embed == 0 || self.c_latent == 0 {
            return Err(Error::config("compressor: channel counts must be positive"));
        }
        if self.heads == 0 || self.c_embed % self.heads != 0 {
            return Err(Error::config(format!(
                "compressor: heads {} must divide c_embed {}",
                self.heads, self.c_embed
            )));
        }
        if self.depth == 0 || self.blocks == 0 {
            return Err(Error::config("compressor: depth and blocks must be positive"));
        }
        if self.refiner_width == 0 {
            return Err(Error::config("compressor: refiner_width must be positive"));
        }
        Ok(())
    }

    pub fn write_meta(&self, m: &mut Manifest) {
        m.set("compressor.m", self.m)
            .set("compressor.n_centers", self.n_centers)
            .set("compressor.k_neighbors", self.k_neighbors)
            .set("compressor.c_embed", self.c_embed)
            .set("compressor.depth", self.depth)
            .set("compressor.heads", self.heads)
            .set("compressor.resolution", self.resolution)
            .set("compressor.c_latent", self.c_latent)
            .set("compressor.blocks", self.blocks)
            .set("compressor.refiner_width", self.refiner_width)
            .set("compressor.refiner_enabled", self.refiner_enabled)
            .set("compressor.latent_kind", self.latent_kind.name());
    }

    pub fn read_meta(m: &Manifest) -> Result<CompressorConfig> {
        let cfg = CompressorConfig {
            m: m.require_parsed("compressor.m")?,
            n_centers: m.require_parsed("compressor.n_centers")?,
            k_neighbors: m.require_parsed("compressor.k_neighbors")?,
            c_embed: m.require_parsed("compressor.c_embed")?,
            depth: m.require_parsed("compressor.depth")?,
            heads: m.require_parsed("compressor.heads")?,
            resolution: m.require_parsed("compressor.resolution")?,
            c_latent: m.require_parsed("compressor.c_latent")?,
            blocks: m.require_parsed("compressor.blocks")?,
            refiner_width: m.require_parsed("compressor.refiner_width")?,
            refiner_enabled: m.require_parsed("compressor.refiner_enabled")?,
            latent_kind: LatentKind::from_name(m.require("compressor.latent_kind")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Loss term weights and the finite-difference step for the normal loss.
/// The per-term sums are means over each query set, so the weights carry
/// all scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight on |phi(surface)|.
    pub surface: f32,
    /// Weight on |phi(volume) - d|.
    pub volume: f32,
    /// Weight on the L1 gap between the SDF spatial gradient and the
    /// surface normal.
    pub normal: f32,
    /// Latent-plane analog of `surface`.
    pub latent_surface: f32,
    /// Latent-plane analog of `volume`.
    pub latent_volume: f32,
    /// Weight on the KL term in the total.
    pub kl: f32,
    /// Central-difference step for the spatial gradient.
    pub grad_delta: f32,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            surface: 1.0,
            volume: 1.0,
            normal: 0.1,
            latent_surface: 0.5,
            latent_volume: 0.5,
            kl: 1e-4,
            grad_delta: 1.0 / 32.0,
        }
    }
}

impl LossWeights {
    /// Defaults with the gradient step matched to the plane resolution.
    pub fn for_resolution(r: usize) -> LossWeights {
        LossWeights {
            grad_delta: 1.0 / r as f32,
            ..LossWeights::default()
        }
    }

    /// The ablation that drops direct latent supervision.
    pub fn without_latent_sdf(mut self) -> LossWeights {
        self.latent_surface = 0.0;
        self.latent_volume = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.surface,
            self.volume,
            self.normal,
            self.latent_surface,
            self.latent_volume,
            self.kl,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("loss weights must be finite and >= 0"));
        }
        if self.surface == 0.0 && self.volume == 0.0 && self.normal == 0.0 {
            return Err(Error::config(
                "at least one reconstruction weight (surface, volume, normal) must be > 0",
            ));
        }
        if !self.grad_delta.is_finite() || self.grad_delta <= 0.0 {
            return Err(Error::config("grad_delta must be positive"));
        }
        Ok(())
    }
}

/// FPS centers and neighbor offsets for one cloud, precomputed once: they
/// depend only on the points, not on any parameters.
#[derive(Debug, Clone)]
pub struct GroupedCloud {
    pub centers: Vec<Vec3>,
    /// `[n, 3]` center coordinates.
    pub center_coords: Tensor,
    /// `[n * K, 3]` center-relative neighbor offsets, group-major.
    pub offsets: Tensor,
    pub k: usize,
}

pub fn prepare_cloud(pc: &PointCloud, cfg: &CompressorConfig) -> Result<GroupedCloud> {
    if pc.len() != cfg.m {
        return Err(Error::shape(format!(
            "prepare_cloud: expected {} points, got {}",
            cfg.m,
            pc.len()
        )));
    }
    let idx = furthest_point_sampling(pc, cfg.n_centers)?;
    let groups = knn_group(pc, &idx, cfg.k_neighbors)?;
    let centers: Vec<Vec3> = idx.iter().map(|&i| pc.points[i]).collect();

    let mut coords = Vec::with_capacity(cfg.n_centers * 3);
    for ctr in &centers {
        coords.extend_from_slice(&ctr.to_array());
    }
    let mut offsets = Vec::with_capacity(cfg.n_centers * cfg.k_neighbors * 3);
    for group in &groups {
        for off in group {
            offsets.extend_from_slice(&off.to_array());
        }
    }
    Ok(GroupedCloud {
        centers,
        center_coords: Tensor::from_vec(&[cfg.n_centers, 3], coords)?,
        offsets: Tensor::from_vec(&[cfg.n_centers * cfg.k_neighbors, 3], offsets)?,
        k: cfg.k_neighbors,
    })
}

/// Variational bottleneck state: mean and log-variance, plus the value `t`
/// actually passed on (a reparameterized draw in training, the mean in
/// eval).
#[derive(Debug, Clone)]
pub struct Latent {
    pub mean: Tensor,
    pub logvar: Tensor,
    pub t: Tensor,
    pub kind: LatentKind,
}

impl Latent {
    /// The sampled latent as a queryable tri-plane.
    pub fn triplane(&self) -> Result<TriPlane> {
        if self.kind != LatentKind::TriPlane {
            return Err(Error::shape(
                "latent is a flat vector, not a plane grid".to_string(),
            ));
        }
        TriPlane::new(self.t.clone(), PlaneRole::Latent)
    }

    /// The mean as a queryable tri-plane (deterministic view).
    pub fn mean_triplane(&self) -> Result<TriPlane> {
        if self.kind != LatentKind::TriPlane {
            return Err(Error::shape(
                "latent is a flat vector, not a plane grid".to_string(),
            ));
        }
        TriPlane::new(self.mean.clone(), PlaneRole::Latent)
    }
}

/// Everything the per-step losses need.
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    pub initial: TriPlane,
    pub latent: Latent,
    pub recon: TriPlane,
}

fn clamp_sym(x: &Tensor, bound: f32) -> Tensor {
    x.clamp_min(-bound).neg().clamp_min(-bound).neg()
}

fn ensure_finite(x: &Tensor, what: &str) -> Result<()> {
    if x.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("non-finite values in {}", what)));
    }
    Ok(())
}

/// `[3, C, r, r]` -> one concatenated token sequence `[1, 3*r*r, C]`.
fn planes_to_sequence(x: &Tensor) -> Result<Tensor> {
    let s = x.shape().to_vec();
    let (c, cells) = (s[1], s[2] * s[3]);
    x.reshape(&[3, c, cells])?
        .permute(&[0, 2, 1])?
        .reshape(&[1, 3 * cells, c])
}

/// Inverse of `planes_to_sequence`.
fn sequence_to_planes(x: &Tensor, c: usize, r: usize) -> Result<Tensor> {
    x.reshape(&[3, r * r, c])?
        .permute(&[0, 2, 1])?
        .reshape(&[3, c, r, r])
}

#[derive(Debug)]
pub struct CompressorModel {
    pub cfg: CompressorConfig,
    point_mlp: Mlp,
    group_fuse: Linear,
    transformer: Vec<TransformerBlock>,
    enc_conv1: Conv2d,
    enc_conv2: Conv2d,
    enc_blocks: Vec<TransformerBlock>,
    enc_out: Linear,
    vec_decode: Option<Linear>,
    dec_in: Conv2d,
    dec_blocks: Vec<TransformerBlock>,
    dec_up1: Conv2d,
    dec_up2: Conv2d,
    refiners: Vec<Unet2>,
    pub phi_t: SdfMlp,
    pub phi_p: SdfMlp,
}

impl CompressorModel {
    pub fn new(cfg: CompressorConfig, rng: &mut Rng) -> Result<CompressorModel> {
        cfg.validate()?;
        let ce = cfg.c_embed;
        let cl = cfg.c_latent;
        let refiner_cfg = UnetConfig {
            c_in: ce,
            c_out: ce,
            width: cfg.refiner_width,
            time_dim: None,
            cond_dim: None,
            heads: cfg.heads,
            zero_init_out: true,
        };
        Ok(CompressorModel {
            point_mlp: Mlp::new(&[3, 64, ce], rng),
            group_fuse: Linear::new(ce + 3, ce, rng),
            transformer: (0..cfg.depth)
                .map(|_| TransformerBlock::new(ce, cfg.heads, AttnKind::Softmax, rng))
                .collect(),
            enc_conv1: Conv2d::new(ce, ce, 3, 2, 1, rng),
            enc_conv2: Conv2d::new(ce, ce, 3, 2, 1, rng),
            enc_blocks: (0..cfg.blocks)
                .map(|_| TransformerBlock::new(ce, cfg.heads, AttnKind::Linear, rng))
                .collect(),
            enc_out: Linear::new(ce, 2 * cl, rng),
            vec_decode: match cfg.latent_kind {
                LatentKind::Vector => Some(Linear::new(cfg.latent_len(), cfg.latent_len(), rng)),
                LatentKind::TriPlane => None,
            },
            dec_in: Conv2d::new(cl, ce, 3, 1, 1, rng),
            dec_blocks: (0..cfg.blocks)
                .map(|_| TransformerBlock::new(ce, cfg.heads, AttnKind::Linear, rng))
                .collect(),
            dec_up1: Conv2d::new(ce, ce, 3, 1, 1, rng),
            dec_up2: Conv2d::new(ce, ce, 3, 1, 1, rng),
            refiners: (0..3).map(|_| Unet2::new(refiner_cfg, rng)).collect(),
            phi_t: SdfMlp::new(cl, rng),
            phi_p: SdfMlp::new(ce, rng),
            cfg,
        })
    }

    pub fn params(&self) -> ParamSet {
        let mut set = ParamSet::new();
        self.point_mlp.collect("point_mlp", &mut set);
        self.group_fuse.collect("group_fuse", &mut set);
        for (i, blk) in self.transformer.iter().enumerate() {
            blk.collect(&format!("xform.{}", i), &mut set);
        }
        self.enc_conv1.collect("enc.conv1", &mut set);
        self.enc_conv2.collect("enc.conv2", &mut set);
        for (i, blk) in self.enc_blocks.iter().enumerate() {
            blk.collect(&format!("enc.block.{}", i), &mut set);
        }
        self.enc_out.collect("enc.out", &mut set);
        if let Some(vd) = &self.vec_decode {
            vd.collect("vec_decode", &mut set);
        }
        self.dec_in.collect("dec.in", &mut set);
        for (i, blk) in self.dec_blocks.iter().enumerate() {
            blk.collect(&format!("dec.block.{}", i), &mut set);
        }
        self.dec_up1.collect("dec.up1", &mut set);
        self.dec_up2.collect("dec.up2", &mut set);
        for (i, net) in self.refiners.iter().enumerate() {
            net.collect(&format!("refine.{}", i), &mut set);
        }
        self.phi_t.collect("phi_t", &mut set);
        self.phi_p.collect("phi_p", &mut set);
        set
    }

    /// Center embeddings scattered onto the full-resolution planes.
    pub fn initial_triplane(&self, cloud: &GroupedCloud) -> Result<TriPlane> {
        let cfg = &self.cfg;
        if cloud.centers.len() != cfg.n_centers || cloud.k != cfg.k_neighbors {
            return Err(Error::shape(format!(
                "initial_triplane: cloud groups {}x{} do not match config {}x{}",
                cloud.centers.len(),
                cloud.k,
                cfg.n_centers,
                cfg.k_neighbors
            )));
        }
        let h = self.point_mlp.forward(&cloud.offsets)?;
        let h = h.reshape(&[cfg.n_centers, cfg.k_neighbors, cfg.c_embed])?;
        let pooled = h.max_axis(1, false)?;
        let joined = Tensor::concat(&[pooled, cloud.center_coords.clone()], 1)?;
        let fused = self.group_fuse.forward(&joined)?;
        let mut seq = fused.reshape(&[1, cfg.n_centers, cfg.c_embed])?;
        for blk in &self.transformer {
            seq = blk.forward(&seq)?;
        }
        let feats = seq.reshape(&[cfg.n_centers, cfg.c_embed])?;
        project_points(&cloud.centers, &feats, cfg.resolution)
    }

    /// Grouping plus embedding in one call.
    pub fn extract_initial_triplane(&self, pc: &PointCloud) -> Result<TriPlane> {
        self.initial_triplane(&prepare_cloud(pc, &self.cfg)?)
    }

    /// Compress initial planes to the variational bottleneck. Training
    /// phase draws `t = mean + exp(logvar / 2) * eps`; eval uses the mean.
    pub fn encode(&self, init: &TriPlane, phase: Phase, rng: &mut Rng) -> Result<Latent> {
        if init.role != PlaneRole::Initial {
            return Err(Error::shape(format!(
                "encode: expected initial planes, got role '{}'",
                init.role.name()
            )));
        }
        if init.channels() != self.cfg.c_embed || init.resolution() != self.cfg.resolution {
            return Err(Error::shape(format!(
                "encode: planes {}x{} do not match config {}x{}",
                init.channels(),
                init.resolution(),
                self.cfg.c_embed,
                self.cfg.resolution
            )));
        }
        let rl = self.cfg.latent_resolution();
        let cl = self.cfg.c_latent;
        let h = self.enc_conv1.forward(&init.planes)?.gelu();
        let h = self.enc_conv2.forward(&h)?.gelu();
        let mut seq = planes_to_sequence(&h)?;
        for blk in &self.enc_blocks {
            seq = blk.forward(&seq)?;
        }
        let seq = self.enc_out.forward(&seq)?;
        let grid = sequence_to_planes(&seq, 2 * cl, rl)?;
        let mean = grid.narrow(1, 0, cl)?;
        let logvar = clamp_sym(&grid.narrow(1, cl, cl)?, 10.0);
        ensure_finite(&mean, "latent mean")?;
        ensure_finite(&logvar, "latent log-variance")?;

        let (mean, logvar) = match self.cfg.latent_kind {
            LatentKind::TriPlane => (mean, logvar),
            LatentKind::Vector => {
                let len = self.cfg.latent_len();
                (mean.reshape(&[len])?, logvar.reshape(&[len])?)
            }
        };
        let t = match phase {
            Phase::Eval => mean.clone(),
            Phase::Train => {
                let mut eps = vec![0.0f32; mean.numel()];
                rng.fill_normal(&mut eps);
                let eps = Tensor::from_vec(&mean.shape().to_vec(), eps)?;
                mean.add(&logvar.mul_scalar(0.5).exp().mul(&eps)?)?
            }
        };
        Ok(Latent {
            mean,
            logvar,
            t,
            kind: self.cfg.latent_kind,
        })
    }

    fn latent_grid(&self, lat: &Latent) -> Result<Tensor> {
        let rl = self.cfg.latent_resolution();
        match lat.kind {
            LatentKind::TriPlane => Ok(lat.t.clone()),
            LatentKind::Vector => {
                let vd = self.vec_decode.as_ref().ok_or_else(|| {
                    Error::config("model was not built in vector-latent mode".to_string())
                })?;
                let v = lat.t.reshape(&[1, lat.t.numel()])?;
                vd.forward(&v)?.reshape(&[3, self.cfg.c_latent, rl, rl])
            }
        }
    }

    /// Decoder alone: attention blocks at latent resolution, then two
    /// upsample-conv stages back to full resolution. `[3, c_embed, R, R]`.
    pub fn decode_core(&self, lat: &Latent) -> Result<Tensor> {
        let z = self.latent_grid(lat)?;
        let h = self.dec_in.forward(&z)?.gelu();
        let mut seq = planes_to_sequence(&h)?;
        for blk in &self.dec_blocks {
            seq = blk.forward(&seq)?;
        }
        let h = sequence_to_planes(&seq, self.cfg.c_embed, self.cfg.latent_resolution())?;
        let h = self.dec_up1.forward(&h.upsample2x()?)?.gelu();
        self.dec_up2.forward(&h.upsample2x()?)
    }

    /// Full reconstruction: decoder output plus, when enabled, one additive
    /// residual UNet per plane (separate weights per plane).
    pub fn decode(&self, lat: &Latent) -> Result<TriPlane> {
        let base = self.decode_core(lat)?;
        let planes = if self.cfg.refiner_enabled {
            let mut refined = Vec::with_capacity(3);
            for (k, net) in self.refiners.iter().enumerate() {
                let p = base.narrow(0, k, 1)?;
                let delta = net.forward(&p, None, None)?;
                refined.push(p.add(&delta)?);
            }
            Tensor::concat(&refined, 0)?
        } else {
            base
        };
        TriPlane::new(planes, PlaneRole::Reconstructed)
    }

    /// The whole stage-1 pipeline on one prepared cloud.
    pub fn forward(&self, cloud: &GroupedCloud, phase: Phase, rng: &mut Rng) -> Result<ForwardOutputs> {
        let initial = self.initial_triplane(cloud)?;
        let latent = self.encode(&initial, phase, rng)?;
        let recon = self.decode(&latent)?;
        Ok(ForwardOutputs {
            initial,
            latent,
            recon,
        })
    }

    pub fn export(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        self.cfg.write_meta(&mut ckpt.meta);
        self.params().export_to(&mut ckpt)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<CompressorModel> {
        let cfg = CompressorConfig::read_meta(&ckpt.meta)?;
        let mut rng = Rng::seed_from(0);
        let model = CompressorModel::new(cfg, &mut rng)?;
        model.params().import_from(ckpt)?;
        Ok(model)
    }
}

fn points_tensor(points: &[Vec3]) -> Result<Tensor> {
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in points {
        data.extend_from_slice(&p.to_array());
    }
    Tensor::from_vec(&[points.len(), 3], data)
}

/// Weighted L1 reconstruction loss: `w_surface * mean|surface_pred| +
/// w_volume * mean|volume_pred - volume_target|`. Both query sets must be
/// non-empty.
pub fn loss_sdf(
    surface_pred: &Tensor,
    volume_pred: &Tensor,
    volume_target: &Tensor,
    w_surface: f32,
    w_volume: f32,
) -> Result<Tensor> {
    if surface_pred.numel() == 0 || volume_pred.numel() == 0 {
        return Err(Error::shape("loss_sdf: empty query set".to_string()));
    }
    if volume_pred.shape() != volume_target.shape() {
        return Err(Error::shape(format!(
            "loss_sdf: predictions {:?} vs targets {:?}",
            volume_pred.shape(),
            volume_target.shape()
        )));
    }
    let s = surface_pred.abs().mean().mul_scalar(w_surface);
    let v = volume_pred
        .sub(volume_target)?
        .abs()
        .mean()
        .mul_scalar(w_volume);
    s.add(&v)
}

/// Normal supervision: the SDF spatial gradient at each surface point
/// should match the surface normal. Per point the three component
/// deviations are summed (L1); the mean over points is scaled by `weight`.
pub fn loss_normal(
    tp: &TriPlane,
    mlp: &SdfMlp,
    surface_points: &Tensor,
    normals: &Tensor,
    weight: f32,
    delta: f32,
) -> Result<Tensor> {
    if surface_points.shape() != normals.shape() {
        return Err(Error::shape(format!(
            "loss_normal: points {:?} vs normals {:?}",
            surface_points.shape(),
            normals.shape()
        )));
    }
    let grad = sdf_spatial_gradient(tp, mlp, surface_points, delta)?;
    let per_point = grad.sub(normals)?.abs().sum_axis(1, false)?;
    Ok(per_point.mean().mul_scalar(weight))
}

/// Reconstruction loss read directly off the latent planes, keeping the
/// latent decodable without the upsampling path.
pub fn loss_latent_sdf(
    latent_planes: &TriPlane,
    phi: &SdfMlp,
    surface_points: &Tensor,
    volume_points: &Tensor,
    volume_target: &Tensor,
    w_surface: f32,
    w_volume: f32,
) -> Result<Tensor> {
    let s_pred = query_sdf(latent_planes, phi, surface_points)?;
    let v_pred = query_sdf(latent_planes, phi, volume_points)?;
    loss_sdf(&s_pred, &v_pred, volume_target, w_surface, w_volume)
}

/// Mean KL divergence to a standard normal, elementwise closed form:
/// `mean(0.5 * (mean^2 + exp(logvar) - logvar - 1))`.
pub fn loss_kl(lat: &Latent) -> Result<Tensor> {
    let per_elem = lat
        .mean
        .square()
        .add(&lat.logvar.exp())?
        .sub(&lat.logvar)?
        .add_scalar(-1.0)
        .mul_scalar(0.5);
    Ok(per_elem.mean())
}

/// All stage-1 loss terms for one forward pass. `kl` is the raw mean KL;
/// the total applies the configured weight to it.
pub struct StepLosses {
    pub sdf: Tensor,
    pub normal: Tensor,
    pub latent_sdf: Tensor,
    pub kl: Tensor,
    pub total: Tensor,
}

pub fn compressor_losses(
    model: &CompressorModel,
    fwd: &ForwardOutputs,
    batch: &SdfSampleBatch,
    w: &LossWeights,
) -> Result<StepLosses> {
    w.validate()?;
    let sp = points_tensor(&batch.surface_points)?;
    let vp = points_tensor(&batch.volume_points)?;
    let nrm = points_tensor(&batch.surface_normals)?;
    let vd = Tensor::from_vec(&[batch.volume_sdf.len()], batch.volume_sdf.clone())?;

    let s_pred = query_sdf(&fwd.recon, &model.phi_p, &sp)?;
    let v_pred = query_sdf(&fwd.recon, &model.phi_p, &vp)?;
    let sdf = loss_sdf(&s_pred, &v_pred, &vd, w.surface, w.volume)?;
    let normal = loss_normal(&fwd.recon, &model.phi_p, &sp, &nrm, w.normal, w.grad_delta)?;

    let latent_sdf = if fwd.latent.kind == LatentKind::TriPlane
        && (w.latent_surface > 0.0 || w.latent_volume > 0.0)
    {
        let lt = fwd.latent.triplane()?;
        loss_latent_sdf(&lt, &model.phi_t, &sp, &vp, &vd, w.latent_surface, w.latent_volume)?
    } else {
        Tensor::zeros(&[]).sum()
    };
    let kl = loss_kl(&fwd.latent)?;
    let total = sdf
        .add(&normal)?
        .add(&latent_sdf)?
        .add(&kl.mul_scalar(w.kl))?;
    Ok(StepLosses {
        sdf,
        normal,
        latent_sdf,
        kl,
        total,
    })
}

/// One row of the training trace. `kl` is unweighted; `total` is the
/// optimized objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub sdf: f32,
    pub normal: f32,
    pub latent_sdf: f32,
    pub kl: f32,
    pub total: f32,
}

pub fn loss_trace_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,sdf,normal,latent_sdf,kl,total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.step, r.sdf, r.normal, r.latent_sdf, r.kl, r.total
        ));
    }
    out
}

pub fn write_loss_trace(path: &Path, rows: &[LossRow]) -> Result<()> {
    std::fs::write(path, loss_trace_csv(rows))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Steps per epoch; 0 means one step per corpus shape.
    pub steps_per_epoch: usize,
    /// Surface queries per step.
    pub surface_batch: usize,
    /// Volume queries per step.
    pub volume_batch: usize,
    pub lr: f32,
    /// Emit a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 40,
            steps_per_epoch: 0,
            surface_batch: 192,
            volume_batch: 192,
            lr: 1e-3,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train: epochs must be positive"));
        }
        if self.surface_batch == 0 || self.volume_batch == 0 {
            return Err(Error::config("train: batch sizes must be positive"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config("train: lr must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainRun {
    pub model: CompressorModel,
    pub trace: Vec<LossRow>,
}

/// Builds a fresh model from `seed` and trains it on the corpus.
pub fn train_compressor(
    corpus: &[ShapeSpec],
    cfg: &CompressorConfig,
    weights: &LossWeights,
    tc: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    let mut init_rng = Rng::seed_from(seed).split(0x6d6f64656c); // "model"
    let model = CompressorModel::new(*cfg, &mut init_rng)?;
    train_compressor_from(model, corpus, weights, tc, seed, out_dir)
}

/// Trains an existing model in place. One step = draw a shape, draw a
/// query batch, full forward, backward, optimizer update. Aborts with the
/// step index if the loss goes non-finite.
pub fn train_compressor_from(
    model: CompressorModel,
    corpus: &[ShapeSpec],
    weights: &LossWeights,
    tc: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainRun> {
    if corpus.is_empty() {
        return Err(Error::config("train: corpus is empty"));
    }
    weights.validate()?;
    tc.validate()?;

    let master = Rng::seed_from(seed);
    let mut cloud_rng = master.split(0x636c6f7564); // "cloud"
    let mut clouds = Vec::with_capacity(corpus.len());
    for spec in corpus {
        let pc = point_cloud(spec, model.cfg.m, &mut cloud_rng)?;
        clouds.push(prepare_cloud(&pc, &model.cfg)?);
    }

    let params = model.params();
    let mut opt = Adam::new(&params, tc.lr);
    let mut train_rng = master.split(0x7374657073); // "steps"
    let steps_per_epoch = if tc.steps_per_epoch == 0 {
        corpus.len()
    } else {
        tc.steps_per_epoch
    };

    let mut trace = Vec::with_capacity(tc.epochs * steps_per_epoch);
    let mut step = 0usize;
    for epoch in 0..tc.epochs {
        for _ in 0..steps_per_epoch {
            let idx = train_rng.below(corpus.len() as u64) as usize;
            let batch = sample_batch(
                &corpus[idx],
                tc.surface_batch,
                tc.volume_batch,
                &mut train_rng,
            )?;
            let fwd = model.forward(&clouds[idx], Phase::Train, &mut train_rng)?;
            let losses = compressor_losses(&model, &fwd, &batch, weights)?;
            let row = LossRow {
                step,
                sdf: losses.sdf.to_vec()[0],
                normal: losses.normal.to_vec()[0],
                latent_sdf: losses.latent_sdf.to_vec()[0],
                kl: losses.kl.to_vec()[0],
                total: losses.total.to_vec()[0],
            };
            if !row.total.is_finite() {
                return Err(Error::numeric(format!(
                    "training aborted at step {}: non-finite loss",
                    step
                )));
            }
            losses.total.backward()?;
            opt.step()?;
            opt.zero_grad();
            trace.push(row);
            step += 1;
        }
        if let Some(dir) = out_dir {
            if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
                save_training_checkpoint(
                    dir,
                    &format!("epoch_{:04}", epoch + 1),
                    &model,
                    &opt,
                    seed,
                    step,
                )?;
            }
        }
    }
    if let Some(dir) = out_dir {
        save_training_checkpoint(dir, "final", &model, &opt, seed, step)?;
        write_loss_trace(&dir.join("loss_trace.csv"), &trace)?;
    }
    Ok(TrainRun { model, trace })
}

fn save_training_checkpoint(
    dir: &Path,
    name: &str,
    model: &CompressorModel,
    opt: &Adam,
    seed: u64,
    step: usize,
) -> Result<()> {
    let mut ckpt = model.export()?;
    opt.export_to(&mut ckpt)?;
    ckpt.meta.set("train.seed", seed).set("train.step", step);
    save_checkpoint(&dir.join(name), &ckpt)
}
