//! Warping agent feature maps into the ego grid and per-cell softmax fusion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorcore::{Conv2d, LayerSpec, Param, Tensor};

/// Tolerance when deciding whether a sample point lies on the grid.
const EDGE_EPS: f64 = 1e-9;

/// Affine map from sender grid coordinates `(x = column, y = row)` to ego
/// grid coordinates: `[x', y'] = A [x, y] + t`, stored row-major as
/// `[[a00, a01, tx], [a10, a11, ty]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffinePose {
    pub m: [[f64; 3]; 2],
}

impl AffinePose {
    pub fn new(m: [[f64; 3]; 2]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry(format!("pose has non-finite entries: {m:?}")));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { m: [[1.0, 0.0, dx], [0.0, 1.0, dy]] }
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        let scale = self.m.iter().flat_map(|r| &r[..2]).fold(0.0f64, |a, v| a.max(v.abs()));
        if d.abs() <= 1e-12 * scale.max(1.0).powi(2) {
            return Err(Error::Geometry(format!("singular pose, det = {d}")));
        }
        let [[a, b, tx], [c, e, ty]] = self.m;
        let (ia, ib, ic, ie) = (e / d, -b / d, -c / d, a / d);
        Ok(Self { m: [[ia, ib, -(ia * tx + ib * ty)], [ic, ie, -(ic * tx + ie * ty)]] })
    }

    /// The six entries as `f32`, the on-wire representation.
    pub fn to_f32(&self) -> [f32; 6] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]].map(|v| v as f32)
    }

    pub fn from_f32(v: [f32; 6]) -> Result<Self> {
        let v = v.map(f64::from);
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]]])
    }
}

/// Per output cell, up to four source taps `(index, weight)`.
#[derive(Clone, Debug)]
pub struct WarpTrace {
    in_shape: Vec<usize>,
    taps: Vec<[(usize, f64); 4]>,
}

/// Validity mask over an `H x W` grid, row-major.
pub type Mask = Vec<bool>;

/// Bilinear warp of a `C x H x W` map onto an `out_h x out_w` ego grid.
/// Cells whose preimage falls outside the source are zero and invalid.
pub fn warp_affine(feat: &Tensor, pose: &AffinePose, out_h: usize, out_w: usize) -> Result<(Tensor, Mask, WarpTrace)> {
    let (c, h, w) = feat.dims3()?;
    let inv = pose.inverse()?;
    let mut taps = vec![[(0, 0.0); 4]; out_h * out_w];
    let mut mask = vec![false; out_h * out_w];
    for r in 0..out_h {
        for col in 0..out_w {
            let (xs, ys) = inv.apply(col as f64, r as f64);
            let inside = xs >= -EDGE_EPS
                && ys >= -EDGE_EPS
                && xs <= (w - 1) as f64 + EDGE_EPS
                && ys <= (h - 1) as f64 + EDGE_EPS;
            if !inside || h == 0 || w == 0 {
                continue;
            }
            let xs = xs.clamp(0.0, (w - 1) as f64);
            let ys = ys.clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (xs.floor() as usize, ys.floor() as usize);
            let (fx, fy) = (xs - x0 as f64, ys - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let o = r * out_w + col;
            mask[o] = true;
            taps[o] = [
                (y0 * w + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * w + x1, fx * (1.0 - fy)),
                (y1 * w + x0, (1.0 - fx) * fy),
                (y1 * w + x1, fx * fy),
            ];
        }
    }
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        let src = feat.channel(ch);
        let dst = out.channel_mut(ch);
        for (o, t) in taps.iter().enumerate() {
            if mask[o] {
                dst[o] = t.iter().map(|&(i, wt)| wt * src[i]).sum();
            }
        }
    }
    for (o, t) in taps.iter_mut().enumerate() {
        if !mask[o] {
            *t = [(0, 0.0); 4];
        }
    }
    Ok((out, mask, WarpTrace { in_shape: feat.shape().to_vec(), taps }))
}

/// Adjoint of [`warp_affine`]: gradient with respect to the source map.
pub fn warp_affine_backward(trace: &WarpTrace, grad_out: &Tensor) -> Result<Tensor> {
    let (c, _, _) = grad_out.dims3()?;
    let mut g = Tensor::zeros(&trace.in_shape);
    if g.channels() != c {
        return Err(Error::shape("warp gradient channel mismatch"));
    }
    for ch in 0..c {
        let go = grad_out.channel(ch);
        let gi = g.channel_mut(ch);
        for (o, t) in trace.taps.iter().enumerate() {
            for &(i, wt) in t {
                gi[i] += wt * go[o];
            }
        }
    }
    Ok(g)
}

/// One agent's warped contribution to the fusion.
#[derive(Clone, Debug)]
pub struct FuseInput {
    pub agent_id: u16,
    pub feat: Tensor,
    pub mask: Mask,
}

impl FuseInput {
    pub fn all_valid(agent_id: u16, feat: Tensor) -> Self {
        let n = feat.shape().iter().skip(1).product();
        Self { agent_id, feat, mask: vec![true; n] }
    }
}

#[derive(Clone, Debug)]
pub struct FuseTrace {
    /// Input positions in agent-id order.
    order: Vec<usize>,
    feats: Vec<Tensor>,
    /// Softmax weights per sorted agent, each `H x W`.
    weights: Vec<Vec<f64>>,
}

/// Per-cell softmax over agents of a shared 1x1-conv score.
#[derive(Clone, Debug)]
pub struct SoftmaxFusion {
    pub score: Conv2d,
}

impl SoftmaxFusion {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        Ok(Self { score: Conv2d::new("fusion.score", LayerSpec::conv1x1(channels, 1), rng)? })
    }

    pub fn forward(&self, inputs: &[FuseInput]) -> Result<(Tensor, FuseTrace)> {
        let first = inputs.first().ok_or_else(|| Error::config("fusion needs at least one agent"))?;
        let (c, h, w) = first.feat.dims3()?;
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by_key(|&i| inputs[i].agent_id);
        if order.windows(2).any(|p| inputs[p[0]].agent_id == inputs[p[1]].agent_id) {
            return Err(Error::config("duplicate agent id in fusion inputs"));
        }
        let mut scores = Vec::with_capacity(inputs.len());
        for &i in &order {
            let inp = &inputs[i];
            inp.feat.same_shape(&first.feat, "fusion inputs")?;
            if inp.mask.len() != h * w {
                return Err(Error::shape("fusion mask does not match feature grid"));
            }
            scores.push(self.score.forward(&inp.feat)?.into_data());
        }
        let n = order.len();
        let mut weights = vec![vec![0.0; h * w]; n];
        for p in 0..h * w {
            let valid = |k: usize| inputs[order[k]].mask[p];
            let max = (0..n).filter(|&k| valid(k)).map(|k| scores[k][p]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut z = 0.0;
            for k in (0..n).filter(|&k| valid(k)) {
                let e = (scores[k][p] - max).exp();
                weights[k][p] = e;
                z += e;
            }
            for wk in weights.iter_mut() {
                wk[p] /= z;
            }
        }
        let mut out = Tensor::zeros(&[c, h, w]);
        for (k, &i) in order.iter().enumerate() {
            let f = &inputs[i].feat;
            for ch in 0..c {
                for ((o, v), a) in out.channel_mut(ch).iter_mut().zip(f.channel(ch)).zip(&weights[k]) {
                    *o += a * v;
                }
            }
        }
        let feats = order.iter().map(|&i| inputs[i].feat.clone()).collect();
        Ok((out, FuseTrace { order, feats, weights }))
    }

    /// Accumulates score-net gradients and returns per-input feature
    /// gradients in the caller's original order.
    pub fn backward(&mut self, trace: &FuseTrace, grad_out: &Tensor) -> Result<Vec<Tensor>> {
        let (c, h, w) = grad_out.dims3()?;
        let n = trace.order.len();
        let hw = h * w;
        // dL/da_k per cell
        let mut da = vec![vec![0.0; hw]; n];
        for (k, f) in trace.feats.iter().enumerate() {
            for ch in 0..c {
                for ((d, g), v) in da[k].iter_mut().zip(grad_out.channel(ch)).zip(f.channel(ch)) {
                    *d += g * v;
                }
            }
        }
        let mut grads = vec![Tensor::zeros(&[0]); n];
        for p in 0..hw {
            let mean: f64 = (0..n).map(|k| trace.weights[k][p] * da[k][p]).sum();
            for k in 0..n {
                da[k][p] = trace.weights[k][p] * (da[k][p] - mean);
            }
        }
        for (k, f) in trace.feats.iter().enumerate() {
            let ds = Tensor::from_parts(vec![1, h, w], std::mem::take(&mut da[k]))?;
            let mut g = self.score.backward(f, &ds)?;
            for ch in 0..c {
                for ((gi, go), a) in g.channel_mut(ch).iter_mut().zip(grad_out.channel(ch)).zip(&trace.weights[k]) {
                    *gi += a * go;
                }
            }
            grads[trace.order[k]] = g;
        }
        Ok(grads)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.score.weight, &self.score.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.score.weight, &mut self.score.bias]
    }
}
