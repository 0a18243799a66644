//! Attention primitives over `[batch, seq, dim]` tensors.

use super::Tensor;
use crate::error::{Error, Result};

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<(usize, usize, usize, usize)> {
    if q.rank() != 3 || k.rank() != 3 || v.rank() != 3 {
        return Err(Error::shape(format!(
            "attention: q/k/v must be [B, S, D], got {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let (b, s, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let sk = k.shape()[1];
    if k.shape()[0] != b || v.shape()[0] != b {
        return Err(Error::shape("attention: batch mismatch".to_string()));
    }
    if k.shape()[2] != d || v.shape()[2] != d || v.shape()[1] != sk {
        return Err(Error::shape(format!(
            "attention: k {:?} / v {:?} incompatible with q {:?}",
            k.shape(),
            v.shape(),
            q.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::shape(format!(
            "attention: dim {} not divisible by {} heads",
            d, heads
        )));
    }
    Ok((b, s, sk, d))
}

/// [B, S, D] -> [B, H, S, D/H]
fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, s, d) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.reshape(&[b, s, heads, d / heads])?.permute(&[0, 2, 1, 3])
}

/// [B, H, S, D/H] -> [B, S, D]
fn merge_heads(x: &Tensor) -> Result<Tensor> {
    let (b, h, s, dh) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    x.permute(&[0, 2, 1, 3])?.reshape(&[b, s, h * dh])
}

/// Scaled dot-product attention. `k` and `v` may come from a different
/// sequence than `q` (cross-attention); their lengths just have to agree.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    let (_b, _s, _sk, d) = check_qkv(q, k, v, heads)?;
    let dh = d / heads;
    let qh = split_heads(q, heads)?;
    let kh = split_heads(k, heads)?;
    let vh = split_heads(v, heads)?;
    let scores = qh
        .matmul(&kh.transpose_last()?)?
        .mul_scalar(1.0 / (dh as f32).sqrt());
    let weights = scores.softmax_last()?;
    merge_heads(&weights.matmul(&vh)?)
}

/// Attention weights alone, `[B, H, S, Sk]`, for inspection in tests.
pub fn softmax_attention_weights(q: &Tensor, k: &Tensor, heads: usize) -> Result<Tensor> {
    let d = q.shape()[2];
    let dh = d / heads;
    let qh = split_heads(q, heads)?;
    let kh = split_heads(k, heads)?;
    qh.matmul(&kh.transpose_last()?)?
        .mul_scalar(1.0 / (dh as f32).sqrt())
        .softmax_last()
}

/// Linear attention with the kernel feature map elu(x) + 1:
///
///   out_i = phi(q_i) (sum_j phi(k_j)^T v_j) / (phi(q_i) . sum_j phi(k_j))
///
/// Denominators are floored at 1e-8. Cost is O(S * D^2 / H) rather than
/// O(S^2 * D).
pub fn linear_attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<Tensor> {
    check_qkv(q, k, v, heads)?;
    let qf = split_heads(&q.elu().add_scalar(1.0), heads)?; // [B,H,S,dh]
    let kf = split_heads(&k.elu().add_scalar(1.0), heads)?; // [B,H,Sk,dh]
    let vh = split_heads(v, heads)?; // [B,H,Sk,dh]

    let kv = kf.transpose_last()?.matmul(&vh)?; // [B,H,dh,dh]
    let ksum = kf.sum_axis(2, true)?.transpose_last()?; // [B,H,dh,1]
    let num = qf.matmul(&kv)?; // [B,H,S,dh]
    let den = qf.matmul(&ksum)?.clamp_min(1e-8); // [B,H,S,1]
    merge_heads(&num.div(&den)?)
}
