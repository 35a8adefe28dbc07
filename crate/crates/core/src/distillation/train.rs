//! Alternating discriminator/generator updates under the MSD objective.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use super::losses::{
    loss_adv, loss_d_grads, loss_g_grad, loss_percep, loss_recon, msd_total, LossWeights, MsdTerms, PercepScope,
};
use super::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use super::sender::{FuseKind, SenderFuse, SenderTrace};
use super::ssim::{loss_ssim, SsimConfig};
use crate::error::{Error, Result};
use crate::tensorcore::{checkpoint, Adam, Mode, Network, Param, Tensor, Trace};
use crate::wavelet::SubbandPyramid;

/// What the discriminator treats as real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdvRealSource {
    /// The lowpass-restored target.
    #[default]
    Restored,
    /// The encoder features before the DWT.
    Original,
}

impl fmt::Display for AdvRealSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdvRealSource::Restored => "restored",
            AdvRealSource::Original => "original",
        })
    }
}

impl FromStr for AdvRealSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "restored" => Ok(AdvRealSource::Restored),
            "original" => Ok(AdvRealSource::Original),
            _ => Err(Error::config(format!("unknown adversarial real source {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillConfig {
    pub weights: LossWeights,
    pub ssim: SsimConfig,
    pub percep_scope: PercepScope,
    pub adv_real: AdvRealSource,
    pub lr_g: f64,
    pub lr_d: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            ssim: SsimConfig::default(),
            percep_scope: PercepScope::Whole,
            adv_real: AdvRealSource::Restored,
            lr_g: 0.002,
            lr_d: 0.002,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.ssim.validate()?;
        if !(self.lr_g > 0.0 && self.lr_g.is_finite() && self.lr_d > 0.0 && self.lr_d.is_finite()) {
            return Err(Error::config("learning rates must be positive"));
        }
        Ok(())
    }
}

/// Scalar losses of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub l_recon: f64,
    pub l_ssim: f64,
    pub l_percep: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub l_recon_total: f64,
    pub l_adv: f64,
    pub task_loss: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,L_Recon,L_SSIM,L_Percep,L_G,L_D,L_ReconTotal,L_Adv,task_loss";

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.l_recon,
            self.l_ssim,
            self.l_percep,
            self.l_g,
            self.l_d,
            self.l_recon_total,
            self.l_adv,
            self.task_loss
        )
    }

    fn values(&self) -> [(&'static str, f64); 8] {
        [
            ("L_Recon", self.l_recon),
            ("L_SSIM", self.l_ssim),
            ("L_Percep", self.l_percep),
            ("L_G", self.l_g),
            ("L_D", self.l_d),
            ("L_ReconTotal", self.l_recon_total),
            ("L_Adv", self.l_adv),
            ("task_loss", self.task_loss),
        ]
    }

    /// Fails with a divergence error if any loss is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        match self.values().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Divergence { step: self.step, detail: format!("{name} = {v}") }),
            None => Ok(()),
        }
    }
}

pub fn write_loss_csv<W: Write>(mut out: W, reports: &[LossReport]) -> Result<()> {
    writeln!(out, "{LOSS_CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Forward record of sender fusion plus generator.
#[derive(Clone, Debug)]
pub struct RestoreTrace {
    sender: SenderTrace,
    generator: Trace,
}

impl RestoreTrace {
    pub fn new(sender: SenderTrace, generator: Trace) -> Self {
        Self { sender, generator }
    }
}

/// Generator-side MSD loss values and the gradient with respect to the
/// generator output.
#[derive(Clone, Debug)]
pub struct GeneratorLoss {
    pub terms: MsdTerms,
    pub grad: Tensor,
}

/// Sender fusion, generator, discriminator and their optimizers.
#[derive(Clone, Debug)]
pub struct Distiller {
    pub sender: SenderFuse,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub config: DistillConfig,
    pub steps: usize,
}

impl Distiller {
    pub fn new<R: Rng + ?Sized>(
        gen: GeneratorConfig,
        disc: DiscriminatorConfig,
        fuse: FuseKind,
        config: DistillConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if gen.channels != disc.channels {
            return Err(Error::config("generator and discriminator channel counts differ"));
        }
        Ok(Self {
            sender: SenderFuse::new(fuse, gen.channels, rng)?,
            generator: Generator::new(gen, rng)?,
            discriminator: Discriminator::new(disc, rng)?,
            config,
            steps: 0,
        })
    }

    pub fn levels(&self) -> usize {
        self.generator.config.levels
    }

    /// Sender-side transmit tensor for a pyramid.
    pub fn prepare(&mut self, pyr: &SubbandPyramid, mode: Mode) -> Result<(Tensor, SenderTrace)> {
        self.sender.forward(pyr, mode)
    }

    /// Generator forward on a received tensor.
    pub fn generate(&mut self, received: &Tensor, mode: Mode) -> Result<(Tensor, Trace)> {
        self.generator.forward(received, mode)
    }

    /// Sender fusion followed by generation, without a wire in between.
    pub fn restore(&mut self, pyr: &SubbandPyramid, mode: Mode) -> Result<(Tensor, RestoreTrace)> {
        let (tx, sender) = self.prepare(pyr, mode)?;
        let (fake, generator) = self.generate(&tx, mode)?;
        Ok((fake, RestoreTrace { sender, generator }))
    }

    /// One discriminator update on a real sample and a detached fake.
    pub fn discriminator_step(&mut self, real: &Tensor, fake: &Tensor) -> Result<f64> {
        let d = &mut self.discriminator;
        d.zero_grad();
        let (p_real, tr_real) = d.forward(real, Mode::Train)?;
        let (p_fake, tr_fake) = d.forward(fake, Mode::Train)?;
        let l_d = loss_adv(&p_real, &p_fake)?.l_d;
        let (g_real, g_fake) = loss_d_grads(&p_real, &p_fake);
        d.backward(&tr_real, &g_real)?;
        d.backward(&tr_fake, &g_fake)?;
        Adam::new(self.config.lr_d).step(d.params_mut());
        Ok(l_d)
    }

    /// Evaluates the generator-side MSD terms and the weighted gradient
    /// with respect to `fake`. Discriminator gradients are discarded.
    pub fn generator_loss(&mut self, fake: &Tensor, target: &Tensor) -> Result<GeneratorLoss> {
        let cfg = self.config;
        let w = cfg.weights;
        let (l_recon, g_recon) = loss_recon(fake, target)?;
        let (l_ssim, g_ssim) = loss_ssim(fake, target, &cfg.ssim)?;
        // a zero-norm map has no direction to compare; the term drops out
        let (l_percep, g_percep) = match loss_percep(fake, target, cfg.percep_scope) {
            Err(Error::Degenerate(_)) => (0.0, Tensor::zeros_like(fake)),
            r => r?,
        };

        let d = &mut self.discriminator;
        let (p_fake, tr) = d.forward(fake, Mode::Train)?;
        let l_g = loss_adv(&p_fake, &p_fake)?.l_g;
        let mut grad = Tensor::zeros_like(fake);
        grad.add_scaled(&g_recon, w.lambda_recon * w.alpha)?;
        grad.add_scaled(&g_ssim, w.lambda_recon * w.beta)?;
        grad.add_scaled(&g_percep, w.lambda_recon * w.gamma)?;
        if w.lambda_adv > 0.0 {
            let g_adv = d.backward(&tr, &loss_g_grad(&p_fake))?;
            grad.add_scaled(&g_adv, w.lambda_adv)?;
        }
        d.zero_grad();
        Ok(GeneratorLoss { terms: MsdTerms { l_recon, l_ssim, l_percep, l_g, l_d: 0.0 }, grad })
    }

    /// Backpropagates `grad` from the generator output into the generator
    /// and sender parameters; returns the gradient at the generator input.
    pub fn backward_restore(&mut self, trace: &RestoreTrace, grad: &Tensor) -> Result<Tensor> {
        let g_in = self.generator.backward(&trace.generator, grad)?;
        self.sender.backward(&trace.sender, &g_in)?;
        Ok(g_in)
    }

    /// Adam update of the generator and sender parameters.
    pub fn generator_update(&mut self) {
        let opt = Adam::new(self.config.lr_g);
        opt.step(self.generator.params_mut());
        opt.step(self.sender.params_mut());
    }

    pub fn zero_grad(&mut self) {
        self.generator.zero_grad();
        self.discriminator.zero_grad();
        for p in self.sender.params_mut() {
            p.zero_grad();
        }
    }

    /// One D update then one G update. `target` is the restored features;
    /// `original` is the pre-DWT map, required when the discriminator's real
    /// source is `Original`.
    pub fn train_step(&mut self, pyr: &SubbandPyramid, target: &Tensor, original: Option<&Tensor>) -> Result<LossReport> {
        self.steps += 1;
        let step = self.steps;
        let real = match (self.config.adv_real, original) {
            (AdvRealSource::Restored, _) => target,
            (AdvRealSource::Original, Some(o)) => o,
            (AdvRealSource::Original, None) => {
                return Err(Error::config("original features are required as adversarial real samples"))
            }
        };
        self.zero_grad();
        let (fake, trace) = self.restore(pyr, Mode::Train)?;
        fake.same_shape(target, "distill target")?;
        let l_d = self.discriminator_step(real, &fake)?;
        let gl = self.generator_loss(&fake, target)?;
        let terms = MsdTerms { l_d, ..gl.terms };
        let totals = msd_total(&terms, &self.config.weights);
        let report = LossReport {
            step,
            l_recon: terms.l_recon,
            l_ssim: terms.l_ssim,
            l_percep: terms.l_percep,
            l_g: terms.l_g,
            l_d,
            l_recon_total: totals.l_recon_total,
            l_adv: totals.l_adv,
            task_loss: 0.0,
        };
        report.check_finite()?;
        self.backward_restore(&trace, &gl.grad)?;
        self.generator_update();
        Ok(report)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.sender.params();
        out.extend(self.generator.params());
        out.extend(self.discriminator.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.sender.params_mut();
        out.extend(self.generator.params_mut());
        out.extend(self.discriminator.params_mut());
        out
    }

    pub fn save(&self) -> Result<Vec<u8>> {
        checkpoint::encode(self.params())
    }

    pub fn load(&mut self, buf: &[u8]) -> Result<()> {
        checkpoint::restore(buf, self.params_mut())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::seeded_rng;
    use crate::wavelet::{dwt2, idwt2_lowpass};

    fn small(fuse: FuseKind, config: DistillConfig, seed: u64) -> Distiller {
        let mut rng = seeded_rng(seed);
        let g = GeneratorConfig { channels: 3, width: 8, levels: 1 };
        let d = DiscriminatorConfig { channels: 3, base_width: 4 };
        Distiller::new(g, d, fuse, config, &mut rng).unwrap()
    }

    fn batch(seed: u64) -> (Tensor, SubbandPyramid, Tensor) {
        let mut rng = seeded_rng(seed);
        let x = Tensor::uniform(&[3, 16, 16], 0.0, 1.0, &mut rng);
        let pyr = dwt2(&x, 1).unwrap();
        let target = idwt2_lowpass(&pyr.ll, 1).unwrap();
        (x, pyr, target)
    }

    #[test]
    fn parse_real_source() {
        for s in ["restored", "original"] {
            assert_eq!(s.parse::<AdvRealSource>().unwrap().to_string(), s);
        }
        assert!("fake".parse::<AdvRealSource>().is_err());
    }

    #[test]
    fn runs_are_bitwise_deterministic() {
        let (_, pyr, target) = batch(1);
        let run = || {
            let mut d = small(FuseKind::AddFuse, DistillConfig::default(), 7);
            (0..5).map(|_| d.train_step(&pyr, &target, None).unwrap().csv_row()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn l1_only_regression_is_monotone() {
        let (_, pyr, target) = batch(2);
        let weights = LossWeights { lambda_adv: 0.0, beta: 0.0, gamma: 0.0, ..Default::default() };
        let cfg = DistillConfig { weights, lr_g: 1e-4, ..Default::default() };
        let mut d = small(FuseKind::Base, cfg, 3);
        let losses: Vec<f64> = (0..50).map(|_| d.train_step(&pyr, &target, None).unwrap().l_recon_total).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
        }
    }

    #[test]
    fn discriminator_separates_fixed_pair() {
        let mut rng = seeded_rng(4);
        let real = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let fake = Tensor::uniform(&[3, 32, 32], 0.0, 1.0, &mut rng);
        let mut d = small(FuseKind::Base, DistillConfig::default(), 5);
        let mut l_d = f64::INFINITY;
        for _ in 0..200 {
            l_d = d.discriminator_step(&real, &fake).unwrap();
        }
        assert!(l_d < 2f64.ln(), "{l_d}");
    }

    #[test]
    fn original_source_requires_original() {
        let (x, pyr, target) = batch(5);
        let cfg = DistillConfig { adv_real: AdvRealSource::Original, ..Default::default() };
        let mut d = small(FuseKind::Base, cfg, 1);
        assert!(matches!(d.train_step(&pyr, &target, None), Err(Error::Config(_))));
        assert!(d.train_step(&pyr, &target, Some(&x)).is_ok());
    }

    #[test]
    fn non_finite_loss_reports_divergence() {
        let r = LossReport { step: 4, l_g: f64::NAN, ..Default::default() };
        match r.check_finite() {
            Err(Error::Divergence { step: 4, detail }) => assert!(detail.contains("L_G")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (_, pyr, target) = batch(6);
        let mut a = small(FuseKind::ConcatFuse, DistillConfig::default(), 8);
        a.train_step(&pyr, &target, None).unwrap();
        let mut b = small(FuseKind::ConcatFuse, DistillConfig::default(), 9);
        b.load(&a.save().unwrap()).unwrap();
        let ya = a.restore(&pyr, Mode::Eval).unwrap().0;
        let yb = b.restore(&pyr, Mode::Eval).unwrap().0;
        assert_eq!(ya.data(), yb.data());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_loss_csv(&mut buf, &[LossReport { step: 1, l_recon: 0.5, ..Default::default() }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{LOSS_CSV_HEADER}\n1,0.5,0,0,0,0,0,0,0\n"));
    }
}
