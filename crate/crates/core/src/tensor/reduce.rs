//! Reductions, softmax, and layer normalization.

use super::Tensor;
use crate::error::{Error, Result};

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut out = shape.to_vec();
    if keepdim {
        out[axis] = 1;
    } else {
        out.remove(axis);
    }
    out
}

impl Tensor {
    /// Sum of all elements, as a rank-0 tensor. Accumulates in f64.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data_ref().iter().map(|&v| v as f64).sum();
        Tensor::from_op(
            vec![],
            vec![total as f32],
            vec![self.clone()],
            "sum",
            move |_, g, parents| {
                let p = &parents[0];
                p.accumulate_grad(&vec![g[0]; p.numel()]);
            },
        )
    }

    /// Mean of all elements, as a rank-0 tensor. Accumulates in f64.
    pub fn mean(&self) -> Tensor {
        let n = self.numel().max(1);
        let total: f64 = self.data_ref().iter().map(|&v| v as f64).sum();
        Tensor::from_op(
            vec![],
            vec![(total / n as f64) as f32],
            vec![self.clone()],
            "mean",
            move |_, g, parents| {
                let p = &parents[0];
                p.accumulate_grad(&vec![g[0] / n as f32; p.numel()]);
            },
        )
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::shape(format!(
                "sum_axis: axis {} out of range for {:?}",
                axis,
                self.shape()
            )));
        }
        let (outer, n, inner) = axis_split(self.shape(), axis);
        let out_shape = reduced_shape(self.shape(), axis, keepdim);
        let data = self.data_ref();
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut acc = 0.0f64;
                for j in 0..n {
                    acc += data[(o * n + j) * inner + i] as f64;
                }
                out[o * inner + i] = acc as f32;
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            "sum_axis",
            move |_, g, parents| {
                let p = &parents[0];
                let mut dx = vec![0.0f32; p.numel()];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            dx[(o * n + j) * inner + i] = g[o * inner + i];
                        }
                    }
                }
                p.accumulate_grad(&dx);
            },
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        let n = self.shape().get(axis).copied().unwrap_or(0).max(1);
        Ok(self.sum_axis(axis, keepdim)?.mul_scalar(1.0 / n as f32))
    }

    /// Max along an axis; the gradient routes to the argmax (lowest index on
    /// ties).
    pub fn max_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::shape(format!(
                "max_axis: axis {} out of range for {:?}",
                axis,
                self.shape()
            )));
        }
        let (outer, n, inner) = axis_split(self.shape(), axis);
        if n == 0 {
            return Err(Error::shape("max_axis: empty axis".to_string()));
        }
        let out_shape = reduced_shape(self.shape(), axis, keepdim);
        let data = self.data_ref();
        let mut out = vec![f32::NEG_INFINITY; outer * inner];
        let mut arg = vec![0u32; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    let v = data[(o * n + j) * inner + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        arg[slot] = j as u32;
                    }
                }
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            "max_axis",
            move |_, g, parents| {
                let p = &parents[0];
                let mut dx = vec![0.0f32; p.numel()];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        dx[(o * n + arg[slot] as usize) * inner + i] = g[slot];
                    }
                }
                p.accumulate_grad(&dx);
            },
        ))
    }

    /// Softmax over the last dim, max-shifted for stability.
    pub fn softmax_last(&self) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::shape("softmax_last: rank-0 tensor".to_string()));
        }
        let n = self.shape()[self.rank() - 1];
        let rows = self.numel() / n.max(1);
        let data = self.data_ref();
        let mut out = vec![0.0f32; self.numel()];
        for r in 0..rows {
            let row = &data[r * n..(r + 1) * n];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f64;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                let e = (v - m).exp();
                *o = e;
                z += e as f64;
            }
            let inv = (1.0 / z) as f32;
            for o in out[r * n..(r + 1) * n].iter_mut() {
                *o *= inv;
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            "softmax",
            move |y, g, parents| {
                let p = &parents[0];
                let mut dx = vec![0.0f32; p.numel()];
                for r in 0..rows {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let dot: f64 = ys.iter().zip(gs).map(|(&yv, &gv)| yv as f64 * gv as f64).sum();
                    for ((d, &yv), &gv) in dx[r * n..(r + 1) * n].iter_mut().zip(ys).zip(gs) {
                        *d = yv * (gv - dot as f32);
                    }
                }
                p.accumulate_grad(&dx);
            },
        ))
    }

    /// Normalizes the last dim to zero mean and unit variance (no affine).
    pub fn layer_norm_last(&self, eps: f32) -> Result<Tensor> {
        if self.rank() == 0 {
            return Err(Error::shape("layer_norm_last: rank-0 tensor".to_string()));
        }
        let n = self.shape()[self.rank() - 1];
        if n == 0 {
            return Err(Error::shape("layer_norm_last: empty last dim".to_string()));
        }
        let rows = self.numel() / n;
        let data = self.data_ref();
        let mut out = vec![0.0f32; self.numel()];
        let mut inv_std = vec![0.0f32; rows];
        for r in 0..rows {
            let row = &data[r * n..(r + 1) * n];
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps as f64).sqrt();
            inv_std[r] = is as f32;
            for (o, &v) in out[r * n..(r + 1) * n].iter_mut().zip(row) {
                *o = ((v as f64 - mean) * is) as f32;
            }
        }
        drop(data);
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            "layer_norm",
            move |y, g, parents| {
                let p = &parents[0];
                let mut dx = vec![0.0f32; p.numel()];
                for r in 0..rows {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let gmean: f64 =
                        gs.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                    let gydot: f64 = ys
                        .iter()
                        .zip(gs)
                        .map(|(&yv, &gv)| yv as f64 * gv as f64)
                        .sum::<f64>()
                        / n as f64;
                    let is = inv_std[r] as f64;
                    for ((d, &yv), &gv) in dx[r * n..(r + 1) * n].iter_mut().zip(ys).zip(gs) {
                        *d = (is * (gv as f64 - gmean - yv as f64 * gydot)) as f32;
                    }
                }
                p.accumulate_grad(&dx);
            },
        ))
    }
}
