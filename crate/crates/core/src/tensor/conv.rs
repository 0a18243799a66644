//! 2D convolution (cross-correlation) and nearest-neighbor upsampling.

use super::matmul::mm_nn;
use super::{numel_of, Tensor};
use crate::error::{Error, Result};

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
) {
    // cols layout: [c*kh*kw, oh*ow]
    let ow_oh = oh * ow;
    for ci in 0..c {
        let xc = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * ow_oh..][..ow_oh];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        row[oy * ow..(oy + 1) * ow].fill(0.0);
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        row[oy * ow + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    let ow_oh = oh * ow;
    for ci in 0..c {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * ow_oh..][..ow_oh];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dxc[iy as usize * w + ix as usize] += row[oy * ow + ox];
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// Cross-correlation of `x [B, Ci, H, W]` with `w [Co, Ci, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d: need x rank 4 and w rank 4, got {:?} and {:?}",
                xs, ws
            )));
        }
        let (b, ci, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (co, wci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if ci != wci {
            return Err(Error::shape(format!(
                "conv2d: input channels {} vs weight channels {}",
                ci, wci
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d: stride must be positive".to_string()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d: kernel {}x{} exceeds padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let ckk = ci * kh * kw;

        let out_shape = vec![b, co, oh, ow];
        let mut out = vec![0.0f32; numel_of(&out_shape)];
        {
            let x_data = self.data_ref();
            let w_data = weight.data_ref();
            let mut cols = vec![0.0f32; ckk * oh * ow];
            for bi in 0..b {
                im2col(
                    &x_data[bi * ci * h * w..(bi + 1) * ci * h * w],
                    ci, h, w, kh, kw, stride, pad, oh, ow, &mut cols,
                );
                mm_nn(
                    &w_data,
                    &cols,
                    co,
                    ckk,
                    oh * ow,
                    &mut out[bi * co * oh * ow..(bi + 1) * co * oh * ow],
                );
            }
        }

        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), weight.clone()],
            "conv2d",
            move |_, g, parents| {
                let px = &parents[0];
                let pw = &parents[1];
                let x_data = px.data_ref();
                let w_data = pw.data_ref();
                let need_dx = px.requires_grad();
                let need_dw = pw.requires_grad();
                let mut dx = if need_dx { Some(vec![0.0f64; x_data.len()]) } else { None };
                let mut dw = if need_dw { Some(vec![0.0f64; w_data.len()]) } else { None };
                let mut cols = vec![0.0f32; ckk * oh * ow];
                let mut dcols = vec![0.0f64; ckk * oh * ow];
                for bi in 0..b {
                    let gslice = &g[bi * co * oh * ow..(bi + 1) * co * oh * ow];
                    if need_dw {
                        // dW[co, ckk] += G[co, ohw] @ cols[ckk, ohw]^T
                        im2col(
                            &x_data[bi * ci * h * w..(bi + 1) * ci * h * w],
                            ci, h, w, kh, kw, stride, pad, oh, ow, &mut cols,
                        );
                        let dw = dw.as_mut().unwrap();
                        for coi in 0..co {
                            let grow = &gslice[coi * oh * ow..(coi + 1) * oh * ow];
                            for ik in 0..ckk {
                                let crow = &cols[ik * oh * ow..(ik + 1) * oh * ow];
                                let mut acc = 0.0f64;
                                for (&gv, &cv) in grow.iter().zip(crow) {
                                    acc += gv as f64 * cv as f64;
                                }
                                dw[coi * ckk + ik] += acc;
                            }
                        }
                    }
                    if need_dx {
                        // dcols[ckk, ohw] = W[co, ckk]^T @ G[co, ohw]
                        dcols.iter_mut().for_each(|v| *v = 0.0);
                        for coi in 0..co {
                            let grow = &gslice[coi * oh * ow..(coi + 1) * oh * ow];
                            for ik in 0..ckk {
                                let wv = w_data[coi * ckk + ik] as f64;
                                if wv == 0.0 {
                                    continue;
                                }
                                let drow = &mut dcols[ik * oh * ow..(ik + 1) * oh * ow];
                                for (dv, &gv) in drow.iter_mut().zip(grow) {
                                    *dv += wv * gv as f64;
                                }
                            }
                        }
                        col2im_acc(
                            &dcols,
                            ci, h, w, kh, kw, stride, pad, oh, ow,
                            &mut dx.as_mut().unwrap()[bi * ci * h * w..(bi + 1) * ci * h * w],
                        );
                    }
                }
                drop(x_data);
                drop(w_data);
                if let Some(dx) = dx {
                    px.accumulate_grad_f64(&dx);
                }
                if let Some(dw) = dw {
                    pw.accumulate_grad_f64(&dw);
                }
            },
        ))
    }

    /// Nearest-neighbor 2x upsampling of the last two dims.
    pub fn upsample2x(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(Error::shape(format!(
                "upsample2x: need rank >= 2, got {:?}",
                shape
            )));
        }
        let h = shape[shape.len() - 2];
        let w = shape[shape.len() - 1];
        let lead: usize = shape[..shape.len() - 2].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[shape.len() - 2] = 2 * h;
        out_shape[shape.len() - 1] = 2 * w;

        let x_data = self.data_ref();
        let mut out = vec![0.0f32; numel_of(&out_shape)];
        for l in 0..lead {
            let src = &x_data[l * h * w..(l + 1) * h * w];
            let dst = &mut out[l * 4 * h * w..(l + 1) * 4 * h * w];
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x];
                    let base = (2 * y) * 2 * w + 2 * x;
                    dst[base] = v;
                    dst[base + 1] = v;
                    dst[base + 2 * w] = v;
                    dst[base + 2 * w + 1] = v;
                }
            }
        }
        drop(x_data);

        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            "upsample2x",
            move |_, g, parents| {
                let p = &parents[0];
                let mut dx = vec![0.0f32; p.numel()];
                for l in 0..lead {
                    let gsl = &g[l * 4 * h * w..(l + 1) * 4 * h * w];
                    let dsl = &mut dx[l * h * w..(l + 1) * h * w];
                    for y in 0..h {
                        for x in 0..w {
                            let base = (2 * y) * 2 * w + 2 * x;
                            dsl[y * w + x] =
                                gsl[base] + gsl[base + 1] + gsl[base + 2 * w] + gsl[base + 2 * w + 1];
                        }
                    }
                }
                p.accumulate_grad(&dx);
            },
        ))
    }
}
