use super::Param;

/// Adam with bias correction. Gradients are zeroed after each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { lr: 0.002, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) {
        for p in params {
            if p.trainable {
                adam_step(p, self.lr, self.betas, self.eps);
            }
        }
    }
}

pub fn adam_step(p: &mut Param, lr: f64, (b1, b2): (f64, f64), eps: f64) {
    p.step_count += 1;
    let t = p.step_count as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g = p.grad.data_mut();
    let m = p.adam_m.data_mut();
    let v = p.adam_v.data_mut();
    let x = p.value.data_mut();
    for i in 0..x.len() {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        x[i] -= lr * mh / (vh.sqrt() + eps);
        g[i] = 0.0;
    }
}
