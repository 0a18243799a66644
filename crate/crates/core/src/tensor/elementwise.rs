//! Elementwise ops with trailing-dimension broadcasting.
//!
//! Broadcasting is one-directional: the right operand may broadcast to the
//! left operand's shape (each trailing dim equal or 1, rank no larger). The
//! output never aliases either input.

use super::{numel_of, strides_of, Tensor};
use crate::error::{Error, Result};

/// Per-output-dim strides into the right operand, 0 where it broadcasts.
pub(crate) fn aligned_strides(a_shape: &[usize], b_shape: &[usize]) -> Result<Vec<usize>> {
    if b_shape.len() > a_shape.len() {
        return Err(Error::shape(format!(
            "broadcast: rank {} does not fit into rank {} ({:?} vs {:?})",
            b_shape.len(),
            a_shape.len(),
            b_shape,
            a_shape
        )));
    }
    let b_strides = strides_of(b_shape);
    let offset = a_shape.len() - b_shape.len();
    let mut out = vec![0usize; a_shape.len()];
    for (j, (&bd, &bs)) in b_shape.iter().zip(&b_strides).enumerate() {
        let i = offset + j;
        if bd == a_shape[i] {
            out[i] = bs;
        } else if bd == 1 {
            out[i] = 0;
        } else {
            return Err(Error::shape(format!(
                "broadcast: dim {} of {:?} incompatible with {:?}",
                j, b_shape, a_shape
            )));
        }
    }
    Ok(out)
}

/// Calls `f(ia, ib)` for every linear index of `a_shape`, with `ib` tracking
/// the broadcast right operand.
pub(crate) fn for_each_pair(
    a_shape: &[usize],
    b_aligned_strides: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let rank = a_shape.len();
    let numel = numel_of(a_shape);
    let mut counters = vec![0usize; rank];
    let mut ib = 0usize;
    for ia in 0..numel {
        f(ia, ib);
        for d in (0..rank).rev() {
            counters[d] += 1;
            ib += b_aligned_strides[d];
            if counters[d] < a_shape[d] {
                break;
            }
            counters[d] = 0;
            ib -= b_aligned_strides[d] * a_shape[d];
        }
    }
}

fn binary_broadcast(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
    dfa: impl Fn(f32, f32, f32) -> f32 + 'static,
    dfb: impl Fn(f32, f32, f32) -> f32 + 'static,
) -> Result<Tensor> {
    let bstrides = aligned_strides(a.shape(), b.shape())?;
    let a_data = a.data_ref();
    let b_data = b.data_ref();
    let mut out = vec![0.0f32; a.numel()];
    if a.shape() == b.shape() {
        for ((o, &x), &y) in out.iter_mut().zip(a_data.iter()).zip(b_data.iter()) {
            *o = f(x, y);
        }
    } else {
        for_each_pair(a.shape(), &bstrides, |ia, ib| {
            out[ia] = f(a_data[ia], b_data[ib]);
        });
    }
    drop(a_data);
    drop(b_data);

    let a_shape = a.shape().to_vec();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        name,
        move |y, g, parents| {
            let pa = &parents[0];
            let pb = &parents[1];
            let a_data = pa.data_ref();
            let b_data = pb.data_ref();
            let mut da = if pa.requires_grad() { Some(vec![0.0f32; a_data.len()]) } else { None };
            let mut db = if pb.requires_grad() { Some(vec![0.0f64; b_data.len()]) } else { None };
            for_each_pair(&a_shape, &bstrides, |ia, ib| {
                let (av, bv, yv, gv) = (a_data[ia], b_data[ib], y[ia], g[ia]);
                if let Some(da) = da.as_mut() {
                    da[ia] = gv * dfa(av, bv, yv);
                }
                if let Some(db) = db.as_mut() {
                    db[ib] += (gv * dfb(av, bv, yv)) as f64;
                }
            });
            drop(a_data);
            drop(b_data);
            if let Some(da) = da {
                pa.accumulate_grad(&da);
            }
            if let Some(db) = db {
                pb.accumulate_grad_f64(&db);
            }
        },
    ))
}

fn unary(
    name: &'static str,
    x: &Tensor,
    f: impl Fn(f32) -> f32,
    df: impl Fn(f32, f32) -> f32 + 'static,
) -> Tensor {
    let out: Vec<f32> = x.data_ref().iter().map(|&v| f(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        name,
        move |y, g, parents| {
            let p = &parents[0];
            let x_data = p.data_ref();
            let dx: Vec<f32> = x_data
                .iter()
                .zip(y)
                .zip(g)
                .map(|((&xv, &yv), &gv)| gv * df(xv, yv))
                .collect();
            drop(x_data);
            p.accumulate_grad(&dx);
        },
    )
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_A: f32 = 0.044_715;

fn gelu_fwd(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_bwd(x: f32) -> f32 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("add", self, other, |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("sub", self, other, |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary_broadcast("mul", self, other, |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if super::checked_div() {
            if let Some(v) = other.data_ref().iter().find(|v| v.abs() < 1e-12) {
                return Err(Error::numeric(format!(
                    "div: divisor magnitude {} below 1e-12 in checked mode",
                    v
                )));
            }
        }
        binary_broadcast(
            "div",
            self,
            other,
            |a, b| a / b,
            |_, b, _| 1.0 / b,
            |_, b, y| -y / b,
        )
    }

    pub fn neg(&self) -> Tensor {
        unary("neg", self, |x| -x, |_, _| -1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, |x| x.exp(), |_, y| y)
    }

    /// Natural log; non-positive inputs produce non-finite values that the
    /// callers' finiteness checks reject.
    pub fn log(&self) -> Tensor {
        unary("log", self, |x| x.ln(), |x, _| 1.0 / x)
    }

    pub fn sqrt(&self) -> Tensor {
        unary("sqrt", self, |x| x.sqrt(), |_, y| 0.5 / y)
    }

    /// |x|, with subgradient 0 at x = 0.
    pub fn abs(&self) -> Tensor {
        unary(
            "abs",
            self,
            |x| x.abs(),
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
        )
    }

    /// tanh-approximated GELU.
    pub fn gelu(&self) -> Tensor {
        unary("gelu", self, gelu_fwd, |x, _| gelu_bwd(x))
    }

    /// ELU with alpha = 1.
    pub fn elu(&self) -> Tensor {
        unary(
            "elu",
            self,
            |x| if x > 0.0 { x } else { x.exp() - 1.0 },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        unary("sigmoid", self, |x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    /// max(x, floor); gradient passes where x >= floor.
    pub fn clamp_min(&self, floor: f32) -> Tensor {
        unary(
            "clamp_min",
            self,
            move |x| x.max(floor),
            move |x, _| if x >= floor { 1.0 } else { 0.0 },
        )
    }

    pub fn add_scalar(&self, c: f32) -> Tensor {
        unary("add_scalar", self, move |x| x + c, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, c: f32) -> Tensor {
        unary("mul_scalar", self, move |x| x * c, move |_, _| c)
    }

    /// x * x with a fused backward.
    pub fn square(&self) -> Tensor {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }
}
