//! Convolution and transposed convolution via im2col + GEMM.
//!
//! Weights follow the usual layouts: `out x in x k x k` for convolution and
//! `in x out x k x k` for transposed convolution.

use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Geometry {
    pub fn conv_out(&self, n: usize) -> Result<usize> {
        let padded = n + 2 * self.pad;
        if padded < self.kernel {
            return Err(Error::shape(format!(
                "spatial size {n} (padded {padded}) smaller than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn transpose_out(&self, n: usize) -> Result<usize> {
        let full = (n - 1) * self.stride + self.kernel;
        if n == 0 || full < 2 * self.pad {
            return Err(Error::shape(format!("transposed conv cannot map size {n}")));
        }
        Ok(full - 2 * self.pad)
    }
}

/// Unfolds `c x h x w` into a `(c*k*k) x (oh*ow)` patch matrix.
fn im2col(x: &[f64], c: usize, h: usize, w: usize, g: Geometry, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.kernel;
    let mut cols = vec![0.0; c * k * k * oh * ow];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let drow = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patches back onto a `c x h x w` grid.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, g: Geometry, oh: usize, ow: usize) -> Vec<f64> {
    let k = g.kernel;
    let mut x = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_weight(weight: &Tensor, d0: usize, d1: usize, k: usize, what: &str) -> Result<()> {
    if weight.shape() != [d0, d1, k, k] {
        return Err(Error::shape(format!(
            "{what} weight shape {:?}, expected {:?}",
            weight.shape(),
            [d0, d1, k, k]
        )));
    }
    Ok(())
}

pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor, g: Geometry) -> Result<Tensor> {
    let (c, h, w) = x.dims3()?;
    let co = weight.shape().first().copied().unwrap_or(0);
    check_weight(weight, co, c, g.kernel, "conv2d")?;
    let (oh, ow) = (g.conv_out(h)?, g.conv_out(w)?);
    let kk = c * g.kernel * g.kernel;
    let cols = im2col(x.data(), c, h, w, g, oh, ow);
    let mut out = vec![0.0; co * oh * ow];
    for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
        chunk.fill(bias.data()[o]);
    }
    gemm(Mat::new(weight.data(), co, kk), Mat::new(&cols, kk, oh * ow), 1.0, &mut out);
    Ok(Tensor::raw(vec![co, oh, ow], out))
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: Geometry,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (c, h, w) = x.dims3()?;
    let (co, oh, ow) = grad_out.dims3()?;
    check_weight(weight, co, c, g.kernel, "conv2d")?;
    if (oh, ow) != (g.conv_out(h)?, g.conv_out(w)?) {
        return Err(Error::shape("conv2d backward: grad_out spatial mismatch"));
    }
    let kk = c * g.kernel * g.kernel;
    let cols = im2col(x.data(), c, h, w, g, oh, ow);
    let go = Mat::new(grad_out.data(), co, oh * ow);

    let mut gw = vec![0.0; co * kk];
    gemm(go, Mat::new(&cols, kk, oh * ow).t(), 0.0, &mut gw);
    let gb: Vec<f64> = grad_out.data().chunks(oh * ow).map(|ch| ch.iter().sum()).collect();

    let mut gcols = vec![0.0; kk * oh * ow];
    gemm(Mat::new(weight.data(), co, kk).t(), go, 0.0, &mut gcols);
    let gx = col2im(&gcols, c, h, w, g, oh, ow);

    Ok((
        Tensor::raw(vec![c, h, w], gx),
        Tensor::raw(weight.shape().to_vec(), gw),
        Tensor::raw(vec![co], gb),
    ))
}

pub fn conv_transpose2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    g: Geometry,
) -> Result<Tensor> {
    let (ci, h, w) = x.dims3()?;
    let co = weight.shape().get(1).copied().unwrap_or(0);
    check_weight(weight, ci, co, g.kernel, "conv_transpose2d")?;
    let (oh, ow) = (g.transpose_out(h)?, g.transpose_out(w)?);
    let kk = co * g.kernel * g.kernel;
    let mut cols = vec![0.0; kk * h * w];
    gemm(Mat::new(weight.data(), ci, kk).t(), Mat::new(x.data(), ci, h * w), 0.0, &mut cols);
    // The transposed conv is the adjoint of a conv whose input is the output grid.
    let mut out = col2im(&cols, co, oh, ow, g, h, w);
    for (o, chunk) in out.chunks_mut(oh * ow).enumerate() {
        let b = bias.data()[o];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(Tensor::raw(vec![co, oh, ow], out))
}

pub fn conv_transpose2d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    g: Geometry,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (ci, h, w) = x.dims3()?;
    let (co, oh, ow) = grad_out.dims3()?;
    check_weight(weight, ci, co, g.kernel, "conv_transpose2d")?;
    if (oh, ow) != (g.transpose_out(h)?, g.transpose_out(w)?) {
        return Err(Error::shape("conv_transpose2d backward: grad_out spatial mismatch"));
    }
    let kk = co * g.kernel * g.kernel;
    let gcols = im2col(grad_out.data(), co, oh, ow, g, h, w);
    let gc = Mat::new(&gcols, kk, h * w);

    let mut gx = vec![0.0; ci * h * w];
    gemm(Mat::new(weight.data(), ci, kk), gc, 0.0, &mut gx);
    let mut gw = vec![0.0; ci * kk];
    gemm(Mat::new(x.data(), ci, h * w), gc.t(), 0.0, &mut gw);
    let gb: Vec<f64> = grad_out.data().chunks(oh * ow).map(|ch| ch.iter().sum()).collect();

    Ok((
        Tensor::raw(vec![ci, h, w], gx),
        Tensor::raw(weight.shape().to_vec(), gw),
        Tensor::raw(vec![co], gb),
    ))
}
