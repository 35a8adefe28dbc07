//! Feature generator (LL band to full-resolution features) and patch
//! discriminator.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorcore::{LayerKind, LayerSpec, Mode, Network, Param, Sequential, Tensor, Trace};
use crate::wavelet::MAX_LEVELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Feature channels in and out.
    pub channels: usize,
    /// Hidden width.
    pub width: usize,
    /// Number of 2x upsampling stages, equal to the DWT level count.
    pub levels: usize,
}

impl GeneratorConfig {
    pub fn new(channels: usize, levels: usize) -> Self {
        Self { channels, width: 128, levels }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 {
            return Err(Error::config("generator channels and width must be positive"));
        }
        if !(1..=MAX_LEVELS).contains(&self.levels) {
            return Err(Error::config(format!("generator levels must be in 1..={MAX_LEVELS}, got {}", self.levels)));
        }
        Ok(())
    }
}

fn push_conv_bn_act<R: Rng + ?Sized>(
    net: &mut Sequential,
    name: &str,
    spec: LayerSpec,
    act: LayerKind,
    rng: &mut R,
) -> Result<()> {
    let out = spec.out_channels;
    net.push_spec(name, spec, rng)?;
    net.push_spec(&format!("{name}.bn"), LayerSpec::new(LayerKind::BatchNorm, out, out), rng)?;
    net.push_spec(name, LayerSpec::new(act, out, out), rng)
}

/// Decoder, `levels` transposed-conv upsamplers, then an output block; every
/// conv is followed by batch norm and ReLU.
#[derive(Clone, Debug)]
pub struct Generator {
    pub config: GeneratorConfig,
    net: Sequential,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (c, w) = (config.channels, config.width);
        let mut net = Sequential::default();
        push_conv_bn_act(&mut net, "gen.dec0", LayerSpec::conv3x3(c, w), LayerKind::Relu, rng)?;
        push_conv_bn_act(&mut net, "gen.dec1", LayerSpec::conv3x3(w, w), LayerKind::Relu, rng)?;
        for i in 0..config.levels {
            push_conv_bn_act(&mut net, &format!("gen.up{i}"), LayerSpec::convt4x4s2(w, w), LayerKind::Relu, rng)?;
        }
        push_conv_bn_act(&mut net, "gen.out0", LayerSpec::conv3x3(w, w), LayerKind::Relu, rng)?;
        push_conv_bn_act(&mut net, "gen.out1", LayerSpec::conv3x3(w, c), LayerKind::Relu, rng)?;
        Ok(Self { config, net })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3]> {
        let &[c, h, w] = input else {
            return Err(Error::shape(format!("generator expects a C x H x W input, got {input:?}")));
        };
        if c != self.config.channels {
            return Err(Error::shape(format!("generator expects {} channels, got {c}", self.config.channels)));
        }
        let s = 1 << self.config.levels;
        Ok([c, h * s, w * s])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub channels: usize,
    /// Width of the first stage; later stages double it.
    pub base_width: usize,
}

impl DiscriminatorConfig {
    pub fn new(channels: usize) -> Self {
        Self { channels, base_width: 64 }
    }
}

/// Three stride-2 4x4 convs (64/128/256 wide by default), each followed by
/// batch norm (except the first) and LeakyReLU, a 1x1 conv to one map, then
/// a sigmoid.
///
/// Norm comes before the activation: with single-sample statistics a norm
/// feeding the 1x1 score conv directly pins the mean logit, and the
/// discriminator loss could never drop below `2 ln 2`.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub config: DiscriminatorConfig,
    net: Sequential,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        if config.channels == 0 || config.base_width == 0 {
            return Err(Error::config("discriminator channels and width must be positive"));
        }
        let (c, b) = (config.channels, config.base_width);
        let mut net = Sequential::default();
        net.push_spec("disc.s0", LayerSpec::conv4x4s2(c, b), rng)?;
        net.push_spec("disc.s0", LayerSpec::new(LayerKind::LeakyRelu, b, b), rng)?;
        push_conv_bn_act(&mut net, "disc.s1", LayerSpec::conv4x4s2(b, 2 * b), LayerKind::LeakyRelu, rng)?;
        push_conv_bn_act(&mut net, "disc.s2", LayerSpec::conv4x4s2(2 * b, 4 * b), LayerKind::LeakyRelu, rng)?;
        net.push_spec("disc.score", LayerSpec::conv1x1(4 * b, 1), rng)?;
        net.push_spec("disc.score", LayerSpec::new(LayerKind::Sigmoid, 1, 1), rng)?;
        Ok(Self { config, net })
    }
}

macro_rules! delegate_network {
    ($ty:ty, $check:expr) => {
        impl Network for $ty {
            fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Trace)> {
                $check(&*self, x)?;
                self.net.forward(x, mode)
            }
            fn backward(&mut self, trace: &Trace, grad_out: &Tensor) -> Result<Tensor> {
                self.net.backward(trace, grad_out)
            }
            fn params(&self) -> Vec<&Param> {
                self.net.params()
            }
            fn params_mut(&mut self) -> Vec<&mut Param> {
                self.net.params_mut()
            }
        }
    };
}

fn check_generator_input(g: &Generator, x: &Tensor) -> Result<()> {
    g.output_shape(x.shape()).map(|_| ())
}

fn check_discriminator_input(d: &Discriminator, x: &Tensor) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    if c != d.config.channels || h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!(
            "discriminator expects {} x H x W with H, W multiples of 8, got {:?}",
            d.config.channels,
            x.shape()
        )));
    }
    Ok(())
}

delegate_network!(Generator, check_generator_input);
delegate_network!(Discriminator, check_discriminator_input);
