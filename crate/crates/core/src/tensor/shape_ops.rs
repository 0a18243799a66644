//! Reshape, permute, concat, narrow. All of these copy; outputs never alias
//! inputs.

use super::{numel_of, strides_of, Tensor};
use crate::error::{Error, Result};

fn permuted_copy(data: &[f32], shape: &[usize], perm: &[usize], out: &mut [f32]) {
    let rank = shape.len();
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut counters = vec![0usize; rank];
    let mut src = 0usize;
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    for slot in out.iter_mut() {
        *slot = data[src];
        for d in (0..rank).rev() {
            counters[d] += 1;
            src += src_strides[d];
            if counters[d] < out_shape[d] {
                break;
            }
            counters[d] = 0;
            src -= src_strides[d] * out_shape[d];
        }
    }
}

impl Tensor {
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        if numel_of(new_shape) != self.numel() {
            return Err(Error::shape(format!(
                "reshape: {:?} ({} values) to {:?} ({} values)",
                self.shape(),
                self.numel(),
                new_shape,
                numel_of(new_shape)
            )));
        }
        let data = self.to_vec();
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            data,
            vec![self.clone()],
            "reshape",
            move |_, g, parents| {
                parents[0].accumulate_grad(g);
            },
        ))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        if perm.len() != rank {
            return Err(Error::shape(format!(
                "permute: perm {:?} does not match rank {}",
                perm, rank
            )));
        }
        let mut seen = vec![false; rank];
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(Error::shape(format!("permute: invalid perm {:?}", perm)));
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let mut out = vec![0.0f32; self.numel()];
        permuted_copy(&self.data_ref(), self.shape(), perm, &mut out);

        let in_shape = self.shape().to_vec();
        let perm_owned = perm.to_vec();
        Ok(Tensor::from_op(
            out_shape.clone(),
            out,
            vec![self.clone()],
            "permute",
            move |_, g, parents| {
                // inverse permutation routes the gradient back
                let mut inv = vec![0usize; perm_owned.len()];
                for (i, &p) in perm_owned.iter().enumerate() {
                    inv[p] = i;
                }
                let mut dx = vec![0.0f32; numel_of(&in_shape)];
                let g_shape: Vec<usize> = perm_owned.iter().map(|&p| in_shape[p]).collect();
                permuted_copy(g, &g_shape, &inv, &mut dx);
                parents[0].accumulate_grad(&dx);
            },
        ))
    }

    /// Matrix transpose of the last two dims.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let rank = self.rank();
        if rank < 2 {
            return Err(Error::shape(format!(
                "transpose_last: need rank >= 2, got {:?}",
                self.shape()
            )));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 1, rank - 2);
        self.permute(&perm)
    }

    /// Concatenation along `axis`.
    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        if tensors.is_empty() {
            return Err(Error::shape("concat: no inputs".to_string()));
        }
        let rank = tensors[0].rank();
        if axis >= rank {
            return Err(Error::shape(format!(
                "concat: axis {} out of range for rank {}",
                axis, rank
            )));
        }
        for t in tensors {
            if t.rank() != rank {
                return Err(Error::shape("concat: rank mismatch".to_string()));
            }
            for d in 0..rank {
                if d != axis && t.shape()[d] != tensors[0].shape()[d] {
                    return Err(Error::shape(format!(
                        "concat: shapes {:?} and {:?} differ off axis {}",
                        tensors[0].shape(),
                        t.shape(),
                        axis
                    )));
                }
            }
        }
        let mut out_shape = tensors[0].shape().to_vec();
        out_shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let mut out = vec![0.0f32; numel_of(&out_shape)];
        let total_axis = out_shape[axis];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(tensors.len());
        for t in tensors {
            let n = t.shape()[axis];
            spans.push((offset, n));
            let data = t.data_ref();
            for o in 0..outer {
                let dst = (o * total_axis + offset) * inner;
                let src = o * n * inner;
                out[dst..dst + n * inner].copy_from_slice(&data[src..src + n * inner]);
            }
            offset += n;
        }

        Ok(Tensor::from_op(
            out_shape,
            out,
            tensors.to_vec(),
            "concat",
            move |_, g, parents| {
                for (p, &(off, n)) in parents.iter().zip(&spans) {
                    if !p.requires_grad() {
                        continue;
                    }
                    let mut dp = vec![0.0f32; p.numel()];
                    for o in 0..outer {
                        let src = (o * total_axis + off) * inner;
                        let dst = o * n * inner;
                        dp[dst..dst + n * inner].copy_from_slice(&g[src..src + n * inner]);
                    }
                    p.accumulate_grad(&dp);
                }
            },
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let rank = self.rank();
        if axis >= rank {
            return Err(Error::shape(format!(
                "narrow: axis {} out of range for rank {}",
                axis, rank
            )));
        }
        let n = self.shape()[axis];
        if start + len > n {
            return Err(Error::shape(format!(
                "narrow: [{}, {}) out of range for axis of size {}",
                start,
                start + len,
                n
            )));
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let data = self.data_ref();
        let mut out = vec![0.0f32; numel_of(&out_shape)];
        for o in 0..outer {
            let src = (o * n + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&data[src..src + len * inner]);
        }
        drop(data);

        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            "narrow",
            move |_, g, parents| {
                let p = &parents[0];
                let mut dx = vec![0.0f32; p.numel()];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    dx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                p.accumulate_grad(&dx);
            },
        ))
    }
}
