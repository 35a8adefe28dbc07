//! Central finite-difference gradient checking.

use rand::Rng;

use super::{Mode, Network, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-6;

/// Scalar loss on a network output, returning `(value, d value / d output)`.
pub type LossFn<'a> = dyn Fn(&Tensor) -> (f64, Tensor) + 'a;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input_rel_error: f64,
    pub param_rel_error: f64,
    pub probes: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// `sum(w * y)` with fixed weights drawn once; keeps gradients O(1) everywhere.
pub fn weighted_sum_loss<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> impl Fn(&Tensor) -> (f64, Tensor) {
    let w = Tensor::uniform(shape, -1.0, 1.0, rng);
    move |y: &Tensor| {
        let v = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        (v, w.clone())
    }
}

/// `0.5 * |y|^2`.
pub fn l2_loss(y: &Tensor) -> (f64, Tensor) {
    (0.5 * y.sum_sq(), y.clone())
}

/// Compares an analytic gradient of `f` at `x` against central differences on
/// `probes` random coordinates. Returns the max relative error.
pub fn check_function<R: Rng + ?Sized>(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    analytic: &Tensor,
    probes: usize,
    rng: &mut R,
) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for _ in 0..probes.min(x.len()) {
        let i = rng.gen_range(0..x.len());
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

fn eval<N: Network + ?Sized>(net: &mut N, x: &Tensor, loss: &LossFn<'_>, mode: Mode) -> Result<f64> {
    Ok(loss(&net.forward(x, mode)?.0).0)
}

/// Checks input gradients and trainable-parameter gradients of `net` under
/// `loss`, with `probes` random coordinates each. Runs in train mode.
pub fn grad_check<N: Network + ?Sized, R: Rng + ?Sized>(
    net: &mut N,
    input: &Tensor,
    loss: &LossFn<'_>,
    probes: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let mode = Mode::Train;
    net.zero_grad();
    let (y, trace) = net.forward(input, mode)?;
    let (_, gy) = loss(&y);
    let gx = net.backward(&trace, &gy)?;

    let input_rel_error = check_function(|p| eval(net, p, loss, mode), input, &gx, probes, rng)?;

    let param_grads: Vec<(usize, Tensor)> = net
        .params()
        .iter()
        .enumerate()
        .filter(|(_, p)| p.trainable)
        .map(|(i, p)| (i, p.grad.clone()))
        .collect();
    let total: usize = param_grads.iter().map(|(_, g)| g.len()).sum();
    let mut param_rel_error = 0.0f64;
    for _ in 0..probes {
        let mut flat = rng.gen_range(0..total.max(1));
        let Some((pi, grad)) = param_grads.iter().find(|(_, g)| {
            if flat < g.len() {
                true
            } else {
                flat -= g.len();
                false
            }
        }) else {
            break;
        };
        let (pi, analytic) = (*pi, grad.data()[flat]);
        let orig = net.params()[pi].value.data()[flat];
        net.params_mut()[pi].value.data_mut()[flat] = orig + FD_STEP;
        let up = eval(net, input, loss, mode)?;
        net.params_mut()[pi].value.data_mut()[flat] = orig - FD_STEP;
        let down = eval(net, input, loss, mode)?;
        net.params_mut()[pi].value.data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        param_rel_error = param_rel_error.max(rel_error(analytic, numeric));
    }
    net.zero_grad();
    Ok(GradCheckReport {
        max_rel_error: input_rel_error.max(param_rel_error),
        input_rel_error,
        param_rel_error,
        probes,
    })
}
