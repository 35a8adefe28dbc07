use rand::Rng;

use super::conv::{self, Geometry};
use super::{Param, Tensor};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv3x3,
    ConvT4x4S2,
    Conv4x4S2,
    Conv1x1,
    BatchNorm,
    Relu,
    LeakyRelu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub pad: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, in_channels: usize, out_channels: usize) -> Self {
        let pad = match kind {
            LayerKind::Conv3x3 | LayerKind::ConvT4x4S2 | LayerKind::Conv4x4S2 => 1,
            _ => 0,
        };
        Self { kind, in_channels, out_channels, pad }
    }

    pub fn conv3x3(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::Conv3x3, cin, cout)
    }

    pub fn conv1x1(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::Conv1x1, cin, cout)
    }

    pub fn conv4x4s2(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::Conv4x4S2, cin, cout)
    }

    pub fn convt4x4s2(cin: usize, cout: usize) -> Self {
        Self::new(LayerKind::ConvT4x4S2, cin, cout)
    }

    pub fn geometry(&self) -> Option<Geometry> {
        let (kernel, stride) = match self.kind {
            LayerKind::Conv3x3 => (3, 1),
            LayerKind::ConvT4x4S2 | LayerKind::Conv4x4S2 => (4, 2),
            LayerKind::Conv1x1 => (1, 1),
            _ => return None,
        };
        Some(Geometry { kernel, stride, pad: self.pad })
    }

    pub fn validate(&self) -> Result<()> {
        let want = match self.kind {
            LayerKind::Conv3x3 | LayerKind::ConvT4x4S2 | LayerKind::Conv4x4S2 => 1,
            _ => 0,
        };
        if self.pad != want {
            return Err(Error::config(format!("{:?} requires pad {want}, got {}", self.kind, self.pad)));
        }
        if self.geometry().is_some() && (self.in_channels == 0 || self.out_channels == 0) {
            return Err(Error::config("convolution with zero channels"));
        }
        Ok(())
    }
}

fn check_input(x: &Tensor, channels: usize, what: &str) -> Result<()> {
    let (c, _, _) = x.dims3()?;
    if c != channels {
        return Err(Error::shape(format!("{what}: expected {channels} input channels, got {c}")));
    }
    x.check_finite(what)
}

/// Convolution (3x3, 4x4/s2 or 1x1) with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: LayerSpec,
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// Kaiming-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(name: &str, spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let g = spec.geometry().ok_or_else(|| Error::config("Conv2d needs a convolution spec"))?;
        if spec.kind == LayerKind::ConvT4x4S2 {
            return Err(Error::config("use ConvTranspose2d for transposed convolutions"));
        }
        let fan_in = (spec.in_channels * g.kernel * g.kernel) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let shape = [spec.out_channels, spec.in_channels, g.kernel, g.kernel];
        Ok(Self {
            spec,
            weight: Param::new(format!("{name}.weight"), Tensor::uniform(&shape, -bound, bound, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])),
        })
    }

    fn geometry(&self) -> Geometry {
        self.spec.geometry().expect("validated at construction")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.spec.in_channels, "conv2d")?;
        conv::conv2d_forward(x, &self.weight.value, &self.bias.value, self.geometry())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (gx, gw, gb) = conv::conv2d_backward(x, &self.weight.value, grad_out, self.geometry())?;
        self.weight.grad.add_assign(&gw)?;
        self.bias.grad.add_assign(&gb)?;
        Ok(gx)
    }
}

/// 4x4 stride-2 transposed convolution: exact 2x upsampling.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub spec: LayerSpec,
    pub weight: Param,
    pub bias: Param,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(name: &str, spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if spec.kind != LayerKind::ConvT4x4S2 {
            return Err(Error::config("ConvTranspose2d requires a convT4x4s2 spec"));
        }
        // Each output cell sees in * 4 taps (16 taps over stride^2 phases).
        let fan_in = (spec.in_channels * 4) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let shape = [spec.in_channels, spec.out_channels, 4, 4];
        Ok(Self {
            spec,
            weight: Param::new(format!("{name}.weight"), Tensor::uniform(&shape, -bound, bound, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])),
        })
    }

    fn geometry(&self) -> Geometry {
        self.spec.geometry().expect("validated at construction")
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_input(x, self.spec.in_channels, "conv_transpose2d")?;
        conv::conv_transpose2d_forward(x, &self.weight.value, &self.bias.value, self.geometry())
    }

    pub fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let (gx, gw, gb) =
            conv::conv_transpose2d_backward(x, &self.weight.value, grad_out, self.geometry())?;
        self.weight.grad.add_assign(&gw)?;
        self.bias.grad.add_assign(&gb)?;
        Ok(gx)
    }
}

/// Per-channel batch normalization over the spatial extent of a `C x H x W` map.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Param::buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: Param::buffer(format!("{name}.running_var"), Tensor::full(&[channels], 1.0)),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BnCache)> {
        check_input(x, self.channels(), "batchnorm2d")?;
        let (c, h, w) = x.dims3()?;
        let n = h * w;
        if mode == Mode::Train && n < 2 {
            return Err(Error::Degenerate(format!(
                "batchnorm2d in train mode needs >= 2 elements per channel, got {n}"
            )));
        }
        let mut xhat = Tensor::zeros(&[c, h, w]);
        let mut out = Tensor::zeros(&[c, h, w]);
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let plane = x.channel(ch);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = plane.iter().sum::<f64>() / n as f64;
                    let var = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                    let m = self.momentum;
                    let unbiased = var * n as f64 / (n - 1) as f64;
                    let rm = &mut self.running_mean.value.data_mut()[ch];
                    *rm = (1.0 - m) * *rm + m * mean;
                    let rv = &mut self.running_var.value.data_mut()[ch];
                    *rv = (1.0 - m) * *rv + m * unbiased;
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean.value.data()[ch],
                    self.running_var.value.data()[ch],
                ),
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            let xh = xhat.channel_mut(ch);
            for (d, &v) in xh.iter_mut().zip(plane) {
                *d = (v - mean) * is;
            }
            for (o, &v) in out.channel_mut(ch).iter_mut().zip(xhat.channel(ch)) {
                *o = g * v + b;
            }
        }
        Ok((out, BnCache { xhat, inv_std, mode }))
    }

    pub fn backward(&mut self, cache: &BnCache, grad_out: &Tensor) -> Result<Tensor> {
        grad_out.same_shape(&cache.xhat, "batchnorm2d backward")?;
        let (c, h, w) = grad_out.dims3()?;
        let n = (h * w) as f64;
        let mut gx = Tensor::zeros(&[c, h, w]);
        for ch in 0..c {
            let dy = grad_out.channel(ch);
            let xh = cache.xhat.channel(ch);
            let sum_dy: f64 = dy.iter().sum();
            let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
            self.gamma.grad.data_mut()[ch] += sum_dy_xh;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let g = self.gamma.value.data()[ch];
            let is = cache.inv_std[ch];
            let dst = gx.channel_mut(ch);
            match cache.mode {
                Mode::Train => {
                    let k = g * is / n;
                    for i in 0..dy.len() {
                        dst[i] = k * (n * dy[i] - sum_dy - xh[i] * sum_dy_xh);
                    }
                }
                Mode::Eval => {
                    for i in 0..dy.len() {
                        dst[i] = g * is * dy[i];
                    }
                }
            }
        }
        Ok(gx)
    }

    fn params(&self) -> [&Param; 4] {
        [&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.gamma, &mut self.beta, &mut self.running_mean, &mut self.running_var]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Sigmoid => sigmoid(v),
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        x.map(|v| self.apply(v))
    }

    /// `x` is the layer input, `y` its output.
    pub fn backward(self, x: &Tensor, y: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        grad_out.same_shape(x, "activation backward")?;
        let data = match self {
            Activation::Relu => x
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::LeakyRelu => x
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&v, &g)| if v > 0.0 { g } else { LEAKY_SLOPE * g })
                .collect(),
            Activation::Sigmoid => y
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
        };
        Ok(Tensor::raw(x.shape().to_vec(), data))
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    ConvT(ConvTranspose2d),
    BatchNorm(BatchNorm2d),
    Act(Activation),
}

#[derive(Clone, Debug)]
pub enum LayerTrace {
    Input(Tensor),
    Bn(BnCache),
    Act { input: Tensor, output: Tensor },
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, LayerTrace)> {
        match self {
            Layer::Conv(l) => Ok((l.forward(x)?, LayerTrace::Input(x.clone()))),
            Layer::ConvT(l) => Ok((l.forward(x)?, LayerTrace::Input(x.clone()))),
            Layer::BatchNorm(l) => {
                let (y, cache) = l.forward(x, mode)?;
                Ok((y, LayerTrace::Bn(cache)))
            }
            Layer::Act(a) => {
                let y = a.forward(x);
                Ok((y.clone(), LayerTrace::Act { input: x.clone(), output: y }))
            }
        }
    }

    pub fn backward(&mut self, trace: &LayerTrace, grad_out: &Tensor) -> Result<Tensor> {
        match (self, trace) {
            (Layer::Conv(l), LayerTrace::Input(x)) => l.backward(x, grad_out),
            (Layer::ConvT(l), LayerTrace::Input(x)) => l.backward(x, grad_out),
            (Layer::BatchNorm(l), LayerTrace::Bn(c)) => l.backward(c, grad_out),
            (Layer::Act(a), LayerTrace::Act { input, output }) => a.backward(input, output, grad_out),
            _ => Err(Error::shape("layer/trace kind mismatch")),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::ConvT(l) => vec![&l.weight, &l.bias],
            Layer::BatchNorm(l) => l.params().into(),
            Layer::Act(_) => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::ConvT(l) => vec![&mut l.weight, &mut l.bias],
            Layer::BatchNorm(l) => l.params_mut().into(),
            Layer::Act(_) => vec![],
        }
    }
}

/// Per-call record of a forward pass, consumed by the matching backward.
pub type Trace = Vec<LayerTrace>;

/// Anything with a differentiable forward pass and named parameters.
pub trait Network {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Trace)>;
    /// Accumulates parameter gradients; returns the input gradient.
    fn backward(&mut self, trace: &Trace, grad_out: &Tensor) -> Result<Tensor>;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn infer(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    /// Appends a layer built from `spec`, naming its params `name`.
    pub fn push_spec<R: Rng + ?Sized>(&mut self, name: &str, spec: LayerSpec, rng: &mut R) -> Result<()> {
        spec.validate()?;
        let layer = match spec.kind {
            LayerKind::Conv3x3 | LayerKind::Conv4x4S2 | LayerKind::Conv1x1 => {
                Layer::Conv(Conv2d::new(name, spec, rng)?)
            }
            LayerKind::ConvT4x4S2 => Layer::ConvT(ConvTranspose2d::new(name, spec, rng)?),
            LayerKind::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(name, spec.in_channels)),
            LayerKind::Relu => Layer::Act(Activation::Relu),
            LayerKind::LeakyRelu => Layer::Act(Activation::LeakyRelu),
            LayerKind::Sigmoid => Layer::Act(Activation::Sigmoid),
        };
        self.layers.push(layer);
        Ok(())
    }
}

impl Network for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Trace)> {
        let mut trace = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let (next, t) = layer.forward(&cur, mode)?;
            trace.push(t);
            cur = next;
        }
        Ok((cur, trace))
    }

    fn backward(&mut self, trace: &Trace, grad_out: &Tensor) -> Result<Tensor> {
        if trace.len() != self.layers.len() {
            return Err(Error::shape("trace does not belong to this network"));
        }
        let mut g = grad_out.clone();
        for (layer, t) in self.layers.iter_mut().zip(trace).rev() {
            g = layer.backward(t, &g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
