//! Pixel, perceptual and adversarial distillation losses, each returning its
//! gradient with respect to the reconstructed (first) argument.

use crate::error::{Error, Result};
use crate::tensorcore::Tensor;

/// Probabilities are clamped into `[P_CLAMP, 1 - P_CLAMP]` before the log.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_recon: f64,
    pub lambda_adv: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_recon: 1.0, lambda_adv: 0.01, alpha: 1.0, beta: 1.0, gamma: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_recon, self.lambda_adv, self.alpha, self.beta, self.gamma];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Mean absolute error. Gradient uses `sign(0) = 0`.
pub fn loss_recon(fake: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    fake.same_shape(target, "loss_recon")?;
    let n = fake.len() as f64;
    let grad = fake.zip_map(target, |a, b| {
        let d = a - b;
        if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    })?;
    let total: f64 = fake.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok((total / n, grad))
}

/// Normalization scope for the perceptual loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PercepScope {
    /// One L2 norm over the whole tensor.
    #[default]
    Whole,
    /// Separate L2 norm per channel.
    PerChannel,
}

fn norm_groups(t: &Tensor, scope: PercepScope) -> Result<Vec<std::ops::Range<usize>>> {
    Ok(match scope {
        PercepScope::Whole => vec![0..t.len()],
        PercepScope::PerChannel => {
            let (c, h, w) = t.dims3()?;
            (0..c).map(|i| i * h * w..(i + 1) * h * w).collect()
        }
    })
}

/// Mean squared error between L2-normalized tensors.
pub fn loss_percep(fake: &Tensor, target: &Tensor, scope: PercepScope) -> Result<(f64, Tensor)> {
    fake.same_shape(target, "loss_percep")?;
    let n = fake.len() as f64;
    let mut value = 0.0;
    let mut grad = Tensor::zeros_like(fake);
    for r in norm_groups(fake, scope)? {
        let a = &fake.data()[r.clone()];
        let b = &target.data()[r.clone()];
        let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Degenerate("perceptual loss of a zero-norm tensor".into()));
        }
        // d/da of (1/n) sum (a/|a| - b/|b|)^2 = (g - u (u . g)) / |a|, u = a/|a|
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x / na - y / nb).collect();
        value += diff.iter().map(|d| d * d).sum::<f64>() / n;
        let g: Vec<f64> = diff.iter().map(|d| 2.0 * d / n).collect();
        let ug: f64 = a.iter().zip(&g).map(|(x, gi)| x / na * gi).sum();
        for ((dst, x), gi) in grad.data_mut()[r].iter_mut().zip(a).zip(&g) {
            *dst = (gi - x / na * ug) / na;
        }
    }
    Ok((value, grad))
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(P_CLAMP, 1.0 - P_CLAMP)
}

fn dlog(p: f64) -> f64 {
    // derivative of ln(clamp(p)); zero where the clamp is active
    if (P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
        1.0 / p
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdvLosses {
    /// `-mean[ln P_real + ln(1 - P_fake)]`
    pub l_d: f64,
    /// `-mean[ln P_fake]`
    pub l_g: f64,
}

/// Discriminator and generator BCE losses (natural log).
pub fn loss_adv(p_real: &Tensor, p_fake: &Tensor) -> Result<AdvLosses> {
    p_real.same_shape(p_fake, "loss_adv")?;
    let n = p_real.len() as f64;
    let l_d = -p_real
        .data()
        .iter()
        .zip(p_fake.data())
        .map(|(&r, &f)| clamp_p(r).ln() + (1.0 - clamp_p(f)).ln())
        .sum::<f64>()
        / n;
    let l_g = -p_fake.data().iter().map(|&f| clamp_p(f).ln()).sum::<f64>() / n;
    Ok(AdvLosses { l_d, l_g })
}

/// `(dL_D/dP_real, dL_D/dP_fake)`.
pub fn loss_d_grads(p_real: &Tensor, p_fake: &Tensor) -> (Tensor, Tensor) {
    let n = p_real.len() as f64;
    let gr = p_real.map(|r| -dlog(r) / n);
    // d/df of -ln(1 - clamp(f)) = 1/(1-f) inside the clamp
    let gf = p_fake.map(|f| dlog(1.0 - f) / n);
    (gr, gf)
}

/// `dL_G/dP_fake`.
pub fn loss_g_grad(p_fake: &Tensor) -> Tensor {
    let n = p_fake.len() as f64;
    p_fake.map(|f| -dlog(f) / n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MsdTerms {
    pub l_recon: f64,
    pub l_ssim: f64,
    pub l_percep: f64,
    pub l_g: f64,
    pub l_d: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MsdTotals {
    pub l_recon_total: f64,
    pub l_adv: f64,
    pub l_d: f64,
}

pub fn msd_total(terms: &MsdTerms, w: &LossWeights) -> MsdTotals {
    MsdTotals {
        l_recon_total: w.lambda_recon * (w.alpha * terms.l_recon + w.beta * terms.l_ssim + w.gamma * terms.l_percep),
        l_adv: w.lambda_adv * terms.l_g,
        l_d: terms.l_d,
    }
}
