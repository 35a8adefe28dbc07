//! BEV encoder and objectness head.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorcore::{LayerKind, LayerSpec, Mode, Network, Param, Sequential, Tensor, Trace};

/// `conv4x4/s2 -> BN -> ReLU -> conv3x3 -> ReLU`: a `1 x H x W` occupancy grid
/// to `C x H/2 x W/2` features.
#[derive(Clone, Debug)]
pub struct BevEncoder {
    pub channels: usize,
    net: Sequential,
}

impl BevEncoder {
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("encoder needs at least one channel"));
        }
        let c = channels;
        let mut net = Sequential::default();
        net.push_spec("enc.down", LayerSpec::conv4x4s2(1, c), rng)?;
        net.push_spec("enc.down.bn", LayerSpec::new(LayerKind::BatchNorm, c, c), rng)?;
        net.push_spec("enc.down", LayerSpec::new(LayerKind::Relu, c, c), rng)?;
        net.push_spec("enc.mix", LayerSpec::conv3x3(c, c), rng)?;
        net.push_spec("enc.mix", LayerSpec::new(LayerKind::Relu, c, c), rng)?;
        Ok(Self { channels, net })
    }
}

/// `conv3x3 -> ReLU -> conv1x1`: features to a one-channel logit map.
#[derive(Clone, Debug)]
pub struct DetectHead {
    pub channels: usize,
    net: Sequential,
}

impl DetectHead {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if channels == 0 || hidden == 0 {
            return Err(Error::config("detection head widths must be positive"));
        }
        let mut net = Sequential::default();
        net.push_spec("head.hidden", LayerSpec::conv3x3(channels, hidden), rng)?;
        net.push_spec("head.hidden", LayerSpec::new(LayerKind::Relu, hidden, hidden), rng)?;
        net.push_spec("head.logit", LayerSpec::conv1x1(hidden, 1), rng)?;
        Ok(Self { channels, net })
    }
}

fn check_encoder_input(_: &BevEncoder, x: &Tensor) -> Result<()> {
    let (c, h, w) = x.dims3()?;
    if c != 1 || h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("encoder expects 1 x H x W with even H, W, got {:?}", x.shape())));
    }
    Ok(())
}

fn check_head_input(d: &DetectHead, x: &Tensor) -> Result<()> {
    if x.dims3()?.0 != d.channels {
        return Err(Error::shape(format!("head expects {} channels, got {:?}", d.channels, x.shape())));
    }
    Ok(())
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

delegate_network!(BevEncoder, check_encoder_input);
delegate_network!(DetectHead, check_head_input);
