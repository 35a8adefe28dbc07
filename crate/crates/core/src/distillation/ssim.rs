//! Gaussian-window SSIM loss (`1 - mean SSIM`) with its gradient.
//!
//! Statistics are computed per channel with valid-mode filtering, so maps
//! smaller than the window are rejected.

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Fixed dynamic range. `None` uses the joint value range of both inputs.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: None }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.window % 2 == 0 || !positive(self.sigma) || !positive(self.k1) || !positive(self.k2) {
            return Err(Error::config(format!("invalid SSIM settings {self:?}")));
        }
        if self.dynamic_range.is_some_and(|r| !positive(r)) {
            return Err(Error::config("SSIM dynamic range must be positive"));
        }
        Ok(())
    }
}

/// Floor on the automatically derived dynamic range.
pub const MIN_DYNAMIC_RANGE: f64 = 1e-3;

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filter of an `h x w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| g[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for t in 0..k {
            let gt = g[t];
            let src = &rows[(i + t) * ow..(i + t + 1) * ow];
            for (o, s) in out[i * ow..(i + 1) * ow].iter_mut().zip(src) {
                *o += gt * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `oh x ow` map back to `h x w`.
fn filter_valid_adjoint(y: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for i in 0..oh {
        for t in 0..k {
            let gt = g[t];
            for (r, v) in rows[(i + t) * ow..(i + t + 1) * ow].iter_mut().zip(&y[i * ow..(i + 1) * ow]) {
                *r += gt * v;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..ow {
            let v = rows[i * ow + j];
            for t in 0..k {
                out[i * w + j + t] += g[t] * v;
            }
        }
    }
    out
}

fn dynamic_range(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    if let Some(l) = cfg.dynamic_range {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::config(format!("SSIM dynamic range must be positive, got {l}")));
        }
        return Ok(l);
    }
    let (lo, hi) = a
        .data()
        .iter()
        .chain(b.data())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok((hi - lo).max(MIN_DYNAMIC_RANGE))
}

/// Mean SSIM between two `C x H x W` tensors.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_impl(a, b, cfg, false)?.0)
}

/// `1 - SSIM(fake, target)` and its gradient with respect to `fake`.
/// The dynamic range is treated as a constant.
pub fn loss_ssim(fake: &Tensor, target: &Tensor, cfg: &SsimConfig) -> Result<(f64, Tensor)> {
    let (s, g) = ssim_impl(fake, target, cfg, true)?;
    Ok((1.0 - s, g.map(|v| -v)))
}

fn ssim_impl(x: &Tensor, y: &Tensor, cfg: &SsimConfig, want_grad: bool) -> Result<(f64, Tensor)> {
    x.same_shape(y, "ssim")?;
    let (c, h, w) = x.dims3()?;
    let k = cfg.window;
    if k == 0 || h < k || w < k {
        return Err(Error::config(format!("SSIM window {k} does not fit a {h}x{w} map")));
    }
    let l = dynamic_range(x, y, cfg)?;
    let c1 = (cfg.k1 * l).powi(2);
    let c2 = (cfg.k2 * l).powi(2);
    let g = gaussian_window(k, cfg.sigma);
    let positions = ((h + 1 - k) * (w + 1 - k)) as f64;
    let norm = 1.0 / (c as f64 * positions);

    let mut total = 0.0;
    let mut grad = Tensor::zeros_like(x);
    for ch in 0..c {
        let xs = x.channel(ch);
        let ys = y.channel(ch);
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<f64>>();
        let mx = filter_valid(xs, h, w, &g);
        let my = filter_valid(ys, h, w, &g);
        let mxx = filter_valid(&sq(xs, xs), h, w, &g);
        let myy = filter_valid(&sq(ys, ys), h, w, &g);
        let mxy = filter_valid(&sq(xs, ys), h, w, &g);
        let n = mx.len();
        let (mut d_mx, mut d_mxx, mut d_mxy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for p in 0..n {
            let vx = mxx[p] - mx[p] * mx[p];
            let vy = myy[p] - my[p] * my[p];
            let cxy = mxy[p] - mx[p] * my[p];
            let a1 = 2.0 * mx[p] * my[p] + c1;
            let a2 = 2.0 * cxy + c2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + c1;
            let b2 = vx + vy + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_a1 = a2 / (b1 * b2);
                let ds_a2 = a1 / (b1 * b2);
                let ds_b1 = -s / b1;
                let ds_b2 = -s / b2;
                d_mx[p] = norm * (2.0 * my[p] * (ds_a1 - ds_a2) + 2.0 * mx[p] * (ds_b1 - ds_b2));
                d_mxx[p] = norm * ds_b2;
                d_mxy[p] = norm * 2.0 * ds_a2;
            }
        }
        if want_grad {
            let gx = filter_valid_adjoint(&d_mx, h, w, &g);
            let gxx = filter_valid_adjoint(&d_mxx, h, w, &g);
            let gxy = filter_valid_adjoint(&d_mxy, h, w, &g);
            for (q, dst) in grad.channel_mut(ch).iter_mut().enumerate() {
                *dst = gx[q] + 2.0 * xs[q] * gxx[q] + ys[q] * gxy[q];
            }
        }
    }
    Ok((total * norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::gradcheck::{check_function, rel_error};
    use crate::tensorcore::seeded_rng;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window(11, 1.5);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert!((g[i] - g[10 - i]).abs() < 1e-18);
        }
        assert!(g[5] > g[4]);
    }

    #[test]
    fn filter_adjoint_identity() {
        let mut rng = seeded_rng(8);
        let x = Tensor::randn(&[1, 14, 13], &mut rng);
        let y = Tensor::randn(&[1, 4, 3], &mut rng);
        let g = gaussian_window(11, 1.5);
        let fx = filter_valid(x.data(), 14, 13, &g);
        let aty = filter_valid_adjoint(y.data(), 14, 13, &g);
        let lhs: f64 = fx.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_give_zero_loss() {
        let mut rng = seeded_rng(1);
        let x = Tensor::randn(&[2, 16, 16], &mut rng);
        let (l, g) = loss_ssim(&x, &x, &SsimConfig::default()).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn constant_maps_closed_form() {
        // constant planes: variances vanish, SSIM = (2ab + C1) / (a^2 + b^2 + C1)
        let (a, b) = (0.3, 0.8);
        let x = Tensor::full(&[1, 12, 12], a);
        let y = Tensor::full(&[1, 12, 12], b);
        let cfg = SsimConfig { dynamic_range: Some(1.0), ..Default::default() };
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((ssim(&x, &y, &cfg).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_bounded() {
        let mut rng = seeded_rng(2);
        let x = Tensor::randn(&[3, 15, 14], &mut rng);
        let y = Tensor::randn(&[3, 15, 14], &mut rng);
        let cfg = SsimConfig::default();
        let l1 = loss_ssim(&x, &y, &cfg).unwrap().0;
        let l2 = loss_ssim(&y, &x, &cfg).unwrap().0;
        assert!((l1 - l2).abs() < 1e-12);
        assert!((0.0..=2.0).contains(&l1));
        // anti-correlated structure with matching means
        let shifted = x.map(|v| v + 5.0);
        let l3 = loss_ssim(&shifted, &shifted.map(|v| 10.0 - v), &cfg).unwrap().0;
        assert!(l3 > 1.0 && l3 <= 2.0, "{l3}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = seeded_rng(3);
        let x = Tensor::randn(&[2, 13, 12], &mut rng);
        let y = x.map(|v| v * 0.7 + 0.1).add(&Tensor::randn(&[2, 13, 12], &mut rng).scale(0.3)).unwrap();
        let cfg = SsimConfig { dynamic_range: Some(4.0), ..Default::default() };
        let (_, g) = loss_ssim(&x, &y, &cfg).unwrap();
        // border pixels carry tiny window weights, so compare whole-tensor
        // directional derivatives rather than single coordinates
        for _ in 0..5 {
            let v = Tensor::randn(x.shape(), &mut rng);
            let h = 1e-6;
            let up = loss_ssim(&x.add(&v.scale(h)).unwrap(), &y, &cfg).unwrap().0;
            let down = loss_ssim(&x.sub(&v.scale(h)).unwrap(), &y, &cfg).unwrap().0;
            let numeric = (up - down) / (2.0 * h);
            let analytic: f64 = g.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
            assert!(rel_error(analytic, numeric) < 1e-6, "{analytic} vs {numeric}");
        }
        let err = check_function(|t| Ok(loss_ssim(t, &y, &cfg)?.0), &x, &g, 40, &mut rng).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn too_small_is_config_error() {
        let x = Tensor::zeros(&[1, 10, 20]);
        assert!(matches!(ssim(&x, &x, &SsimConfig::default()), Err(Error::Config(_))));
    }
}
