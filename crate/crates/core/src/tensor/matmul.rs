//! Batched matrix multiply with f64 accumulation.

use super::{numel_of, strides_of, Tensor};
use crate::error::{Error, Result};

/// out[m,n] = a[m,k] @ b[k,n]
pub(crate) fn mm_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let av = av as f64;
            let brow = &b[kk * n..(kk + 1) * n];
            for (accj, &bv) in acc.iter_mut().zip(brow) {
                *accj += av * bv as f64;
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = v as f32;
        }
    }
}

/// out[m,k] += a[m,n] @ b[k,n]^T, accumulated into an f64 buffer.
fn mm_nt_acc(a: &[f32], b: &[f32], m: usize, n: usize, k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            let mut acc = 0.0f64;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av as f64 * bv as f64;
            }
            out[i * k + kk] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T @ b[m,n], accumulated into an f64 buffer.
fn mm_tn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk] as f64;
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv as f64;
            }
        }
    }
}

/// Broadcast batch shape of two batch prefixes (numpy rules).
fn broadcast_batch(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let ad = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let bd = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if ad == bd || ad == 1 || bd == 1 {
            out[i] = ad.max(bd);
        } else {
            return Err(Error::shape(format!(
                "matmul: batch dims {:?} and {:?} do not broadcast",
                a, b
            )));
        }
    }
    Ok(out)
}

/// Maps a linear index in the broadcast batch shape to a linear index in a
/// (possibly broadcast) operand batch shape.
fn batch_offset(linear: usize, batch: &[usize], operand: &[usize]) -> usize {
    let mut rem = linear;
    let strides = strides_of(batch);
    let op_strides = strides_of(operand);
    let offset_rank = batch.len() - operand.len();
    let mut out = 0usize;
    for (i, (&dim, &stride)) in batch.iter().zip(&strides).enumerate() {
        let idx = rem / stride;
        rem %= stride;
        let _ = dim;
        if i >= offset_rank {
            let j = i - offset_rank;
            if operand[j] != 1 {
                out += idx * op_strides[j];
            }
        }
    }
    out
}

impl Tensor {
    /// Batched matmul: `[..., m, k] @ [..., k, n] -> [..., m, n]`, batch
    /// prefixes broadcasting by numpy rules. Rank-2 inputs are plain matrix
    /// products.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ashape, bshape) = (self.shape(), other.shape());
        if ashape.len() < 2 || bshape.len() < 2 {
            return Err(Error::shape(format!(
                "matmul: need rank >= 2, got {:?} and {:?}",
                ashape, bshape
            )));
        }
        let (m, ka) = (ashape[ashape.len() - 2], ashape[ashape.len() - 1]);
        let (kb, n) = (bshape[bshape.len() - 2], bshape[bshape.len() - 1]);
        if ka != kb {
            return Err(Error::shape(format!(
                "matmul: inner dims {} and {} differ ({:?} @ {:?})",
                ka, kb, ashape, bshape
            )));
        }
        let k = ka;
        let a_batch = &ashape[..ashape.len() - 2];
        let b_batch = &bshape[..bshape.len() - 2];
        let batch = broadcast_batch(a_batch, b_batch)?;
        let nbatch = numel_of(&batch);

        let mut out_shape = batch.clone();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![0.0f32; numel_of(&out_shape)];
        {
            let a_data = self.data_ref();
            let b_data = other.data_ref();
            for ib in 0..nbatch {
                let ao = batch_offset(ib, &batch, a_batch) * m * k;
                let bo = batch_offset(ib, &batch, b_batch) * k * n;
                mm_nn(
                    &a_data[ao..ao + m * k],
                    &b_data[bo..bo + k * n],
                    m,
                    k,
                    n,
                    &mut out[ib * m * n..(ib + 1) * m * n],
                );
            }
        }

        let a_batch = a_batch.to_vec();
        let b_batch = b_batch.to_vec();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            "matmul",
            move |_, g, parents| {
                let pa = &parents[0];
                let pb = &parents[1];
                let a_data = pa.data_ref();
                let b_data = pb.data_ref();
                let mut da = if pa.requires_grad() { Some(vec![0.0f64; a_data.len()]) } else { None };
                let mut db = if pb.requires_grad() { Some(vec![0.0f64; b_data.len()]) } else { None };
                for ib in 0..nbatch {
                    let ao = batch_offset(ib, &batch, &a_batch) * m * k;
                    let bo = batch_offset(ib, &batch, &b_batch) * k * n;
                    let gslice = &g[ib * m * n..(ib + 1) * m * n];
                    if let Some(da) = da.as_mut() {
                        // dA = G @ B^T
                        mm_nt_acc(gslice, &b_data[bo..bo + k * n], m, n, k, &mut da[ao..ao + m * k]);
                    }
                    if let Some(db) = db.as_mut() {
                        // dB = A^T @ G
                        mm_tn_acc(&a_data[ao..ao + m * k], gslice, m, k, n, &mut db[bo..bo + k * n]);
                    }
                }
                drop(a_data);
                drop(b_data);
                if let Some(da) = da {
                    pa.accumulate_grad_f64(&da);
                }
                if let Some(db) = db {
                    pb.accumulate_grad_f64(&db);
                }
            },
        ))
    }
}
