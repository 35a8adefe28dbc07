//! Optional sender-side mixing of detail bands into the transmitted LL band.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorcore::{Conv2d, LayerKind, LayerSpec, Mode, Network, Param, Sequential, Tensor, Trace};
use crate::wavelet::SubbandPyramid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FuseKind {
    /// Send the LL band unchanged.
    #[default]
    Base,
    /// `LL + proj(LH, HL, HH)`.
    AddFuse,
    /// `conv1x1([LL, proj(LH, HL, HH)])`.
    ConcatFuse,
}

impl FuseKind {
    pub const ALL: [FuseKind; 3] = [FuseKind::Base, FuseKind::AddFuse, FuseKind::ConcatFuse];

    pub fn name(self) -> &'static str {
        match self {
            FuseKind::Base => "base",
            FuseKind::AddFuse => "add_fuse",
            FuseKind::ConcatFuse => "concat_fuse",
        }
    }
}

impl fmt::Display for FuseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FuseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FuseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown fuse variant {s:?}")))
    }
}

/// Trainable sender-side fusion. The detail bands used are those of the
/// coarsest level, which share the LL band's resolution.
#[derive(Clone, Debug)]
pub struct SenderFuse {
    pub kind: FuseKind,
    channels: usize,
    proj: Option<Sequential>,
    mix: Option<Conv2d>,
}

#[derive(Clone, Debug)]
pub struct SenderTrace {
    proj: Option<Trace>,
    mix_input: Option<Tensor>,
}

impl SenderFuse {
    pub fn new<R: Rng + ?Sized>(kind: FuseKind, channels: usize, rng: &mut R) -> Result<Self> {
        let c = channels;
        let proj = if kind == FuseKind::Base {
            None
        } else {
            let mut p = Sequential::default();
            p.push_spec("fuse.proj0", LayerSpec::conv1x1(3 * c, c), rng)?;
            p.push_spec("fuse.proj0", LayerSpec::new(LayerKind::Relu, c, c), rng)?;
            p.push_spec("fuse.proj1", LayerSpec::conv1x1(c, c), rng)?;
            Some(p)
        };
        let mut fuse = Self { kind, channels, proj, mix: None };
        match kind {
            FuseKind::Base => {}
            FuseKind::AddFuse => {
                // start as the identity on LL
                if let Some(crate::tensorcore::Layer::Conv(last)) = fuse.proj.as_mut().and_then(|p| p.layers.last_mut()) {
                    last.weight.value.fill(0.0);
                }
            }
            FuseKind::ConcatFuse => {
                let mut mix = Conv2d::new("fuse.mix", LayerSpec::conv1x1(2 * c, c), rng)?;
                let w = mix.weight.value.data_mut();
                w.fill(0.0);
                for o in 0..c {
                    w[o * 2 * c + o] = 1.0;
                }
                fuse.mix = Some(mix);
            }
        }
        Ok(fuse)
    }

    pub fn forward(&mut self, pyr: &SubbandPyramid, mode: Mode) -> Result<(Tensor, SenderTrace)> {
        let ll = &pyr.ll;
        if ll.channels() != self.channels {
            return Err(Error::shape(format!("sender fuse expects {} channels, got {}", self.channels, ll.channels())));
        }
        let Some(proj) = self.proj.as_mut() else {
            return Ok((ll.clone(), SenderTrace { proj: None, mix_input: None }));
        };
        let d = pyr
            .details
            .last()
            .ok_or_else(|| Error::config("fuse variants need detail bands"))?;
        let stacked = Tensor::concat_channels(&[&d.lh, &d.hl, &d.hh])?;
        let (p, ptrace) = proj.forward(&stacked, mode)?;
        match self.mix.as_ref() {
            None => Ok((ll.add(&p)?, SenderTrace { proj: Some(ptrace), mix_input: None })),
            Some(mix) => {
                let cat = Tensor::concat_channels(&[ll, &p])?;
                let out = mix.forward(&cat)?;
                Ok((out, SenderTrace { proj: Some(ptrace), mix_input: Some(cat) }))
            }
        }
    }

    /// Accumulates parameter gradients. The band gradients are not needed
    /// because transmitted features are detached from the encoder.
    pub fn backward(&mut self, trace: &SenderTrace, grad_out: &Tensor) -> Result<()> {
        let (Some(proj), Some(ptrace)) = (self.proj.as_mut(), trace.proj.as_ref()) else {
            return Ok(());
        };
        let g_proj = match (self.mix.as_mut(), trace.mix_input.as_ref()) {
            (Some(mix), Some(cat)) => {
                let g = mix.backward(cat, grad_out)?;
                g.split_channels(&[self.channels, self.channels])?.pop().expect("two parts")
            }
            _ => grad_out.clone(),
        };
        proj.backward(ptrace, &g_proj)?;
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.proj.iter().flat_map(|p| p.params()).collect();
        if let Some(m) = &self.mix {
            out.extend([&m.weight, &m.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.proj.iter_mut().flat_map(|p| p.params_mut()).collect();
        if let Some(m) = &mut self.mix {
            out.extend([&mut m.weight, &mut m.bias]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::gradcheck::check_function;
    use crate::tensorcore::seeded_rng;
    use crate::wavelet::dwt2;

    #[test]
    fn parse_round_trip() {
        for k in FuseKind::ALL {
            assert_eq!(k.to_string().parse::<FuseKind>().unwrap(), k);
        }
        assert!("sum".parse::<FuseKind>().is_err());
    }

    #[test]
    fn variants_start_as_identity() {
        let mut rng = seeded_rng(1);
        let x = Tensor::randn(&[3, 8, 8], &mut rng);
        let pyr = dwt2(&x, 2).unwrap();
        for k in FuseKind::ALL {
            let mut f = SenderFuse::new(k, 3, &mut rng).unwrap();
            let (y, _) = f.forward(&pyr, Mode::Train).unwrap();
            assert!(y.max_abs_diff(&pyr.ll) < 1e-12, "{k}");
        }
    }

    #[test]
    fn param_gradients_match_finite_differences() {
        let mut rng = seeded_rng(2);
        let x = Tensor::randn(&[2, 8, 8], &mut rng);
        let pyr = dwt2(&x, 1).unwrap();
        let wts = Tensor::randn(&[2, 4, 4], &mut rng);
        for k in [FuseKind::AddFuse, FuseKind::ConcatFuse] {
            let mut f = SenderFuse::new(k, 2, &mut rng).unwrap();
            // move off the identity init so every path carries gradient
            for p in f.params_mut() {
                let noise = Tensor::randn(p.shape(), &mut rng).scale(0.3);
                p.value.add_assign(&noise).unwrap();
            }
            let (_, tr) = f.forward(&pyr, Mode::Train).unwrap();
            f.backward(&tr, &wts).unwrap();
            let n = f.params().len();
            for i in 0..n {
                let value = f.params()[i].value.clone();
                let grad = f.params()[i].grad.clone();
                let mut probe = f.clone();
                let err = check_function(
                    |v| {
                        probe.params_mut()[i].value = v.clone();
                        let y = probe.forward(&pyr, Mode::Train)?.0;
                        Ok(y.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum())
                    },
                    &value,
                    &grad,
                    10,
                    &mut rng,
                )
                .unwrap();
                assert!(err < 1e-5, "{k} param {i}: {err}");
            }
        }
    }
}
