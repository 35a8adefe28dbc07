//! The full per-frame pipeline: encode, compress, transmit, reconstruct,
//! warp, fuse, detect.

use std::fmt;
use std::str::FromStr;

use super::scenario::Scenario;
use crate::distillation::{
    AdvRealSource, DiscriminatorConfig, DistillConfig, Distiller, FuseKind, GeneratorConfig, LossReport, MsdTerms,
    RestoreTrace,
};
use crate::error::{Error, Result};
use crate::fusion::{warp_affine, warp_affine_backward, AffinePose, FuseInput, FuseTrace, SoftmaxFusion, WarpTrace};
use crate::perception::{detection_loss, BevEncoder, DetectHead, FEATURE_STRIDE};
use crate::tensorcore::{checkpoint, mix_seed, seeded_rng, Adam, Mode, Network, Param, Tensor, Trace};
use crate::wavelet::{dwt2, idwt2_lowpass};
use crate::wirecodec::{
    check_budget, pack_message, unpack_message, BudgetConfig, BudgetOutcome, BudgetPolicy, CommVolumeReport,
    MessageMeta, WireDtype,
};

/// How collaborator features reach the ego agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CollabMode {
    /// Ego features only; nothing is transmitted.
    NoCollab,
    /// LL band restored by the lowpass-only inverse DWT.
    IdwtOnly,
    /// LL band restored by the learned generator.
    Generator,
}

impl CollabMode {
    pub const ALL: [CollabMode; 3] = [CollabMode::NoCollab, CollabMode::IdwtOnly, CollabMode::Generator];

    pub fn name(self) -> &'static str {
        match self {
            CollabMode::NoCollab => "no_collab",
            CollabMode::IdwtOnly => "idwt_only",
            CollabMode::Generator => "generator",
        }
    }
}

impl fmt::Display for CollabMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CollabMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CollabMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown collaboration mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub gen_width: usize,
    pub disc_width: usize,
    pub head_hidden: usize,
    pub levels: usize,
    pub fuse: FuseKind,
    pub mode: CollabMode,
    pub dtype: WireDtype,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 64,
            gen_width: 128,
            disc_width: 64,
            head_hidden: 64,
            levels: 1,
            fuse: FuseKind::Base,
            mode: CollabMode::Generator,
            dtype: WireDtype::F16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.channels > u16::MAX as usize {
            return Err(Error::config("channels must be in 1..=65535"));
        }
        if !(1..=crate::wavelet::MAX_LEVELS).contains(&self.levels) {
            return Err(Error::config(format!("levels must be 1..={}", crate::wavelet::MAX_LEVELS)));
        }
        if self.fuse != FuseKind::Base && self.mode != CollabMode::Generator {
            return Err(Error::config(format!("fuse variant {} needs generator mode", self.fuse)));
        }
        Ok(())
    }

    /// Bytes of one LL message payload at `dtype` for a `world_h x world_w`
    /// scene.
    pub fn link_bytes(&self, world_h: usize, world_w: usize, dtype: WireDtype) -> u64 {
        let s = FEATURE_STRIDE << self.levels;
        ((world_h / s) * (world_w / s) * self.channels) as u64 * dtype.bits() / 8
    }

    /// The default budget: every collaborator's f16 LL message fits exactly.
    pub fn default_budget(&self, world_h: usize, world_w: usize, n_agents: usize, policy: BudgetPolicy) -> Result<BudgetConfig> {
        let links = n_agents.saturating_sub(1) as u64;
        BudgetConfig::exact_fit(self.link_bytes(world_h, world_w, WireDtype::F16), links, policy)
    }
}

/// Seed streams for the independent parts of a model, so that arms sharing
/// a component also share its initialization.
mod streams {
    pub const ENCODER: u64 = 0x1001;
    pub const HEAD: u64 = 0x1002;
    pub const FUSION: u64 = 0x1003;
    pub const DISTILL: u64 = 0x1004;
}

/// Encoder, fusion and head shared by all agents, plus the distiller in
/// generator mode.
#[derive(Clone, Debug)]
pub struct CollabModel {
    pub config: ModelConfig,
    pub encoder: BevEncoder,
    pub head: DetectHead,
    pub fusion: SoftmaxFusion,
    pub distiller: Option<Distiller>,
}

/// One received collaborator contribution.
#[derive(Clone, Debug)]
struct Link {
    warp: WarpTrace,
    restored: Tensor,
    target: Tensor,
    original: Tensor,
    restore: Option<RestoreTrace>,
}

/// Everything a frame's forward pass produced.
#[derive(Clone, Debug)]
pub struct FrameOutput {
    pub logits: Tensor,
    /// Head output on the ego features alone.
    pub ego_logits: Option<Tensor>,
    pub comm: Vec<CommVolumeReport>,
    pub budget: Option<BudgetOutcome>,
    ego_trace: Trace,
    head_trace: Trace,
    fuse_trace: FuseTrace,
    links: Vec<Link>,
}

impl FrameOutput {
    pub fn total_bytes(&self) -> u64 {
        self.comm.iter().map(|r| r.bytes).sum()
    }

    /// Per-link `log2` volume, or 0 when nothing was sent.
    pub fn comm_log2(&self) -> f64 {
        self.comm.first().map_or(0.0, |r| r.log2_volume)
    }
}

/// Training knobs that apply per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub lr: f64,
    pub pos_weight: f64,
    /// Stop the detection loss from reaching the generator.
    pub freeze_generator_task_grad: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self { lr: 0.002, pos_weight: 1.0, freeze_generator_task_grad: false }
    }
}

impl CollabModel {
    pub fn new(config: ModelConfig, distill: DistillConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let encoder = BevEncoder::new(c, &mut seeded_rng(mix_seed(seed, streams::ENCODER)))?;
        let head = DetectHead::new(c, config.head_hidden, &mut seeded_rng(mix_seed(seed, streams::HEAD)))?;
        let fusion = SoftmaxFusion::new(c, &mut seeded_rng(mix_seed(seed, streams::FUSION)))?;
        let distiller = if config.mode == CollabMode::Generator {
            let gen = GeneratorConfig { channels: c, width: config.gen_width, levels: config.levels };
            let disc = DiscriminatorConfig { channels: c, base_width: config.disc_width };
            let mut rng = seeded_rng(mix_seed(seed, streams::DISTILL));
            Some(Distiller::new(gen, disc, config.fuse, distill, &mut rng)?)
        } else {
            None
        };
        Ok(Self { config, encoder, head, fusion, distiller })
    }

    /// Runs one frame with agent 0 as ego. In `Mode::Train` the result can
    /// be passed to [`CollabModel::backward_and_step`].
    pub fn forward_frame(
        &mut self,
        scen: &Scenario,
        frame_id: u32,
        mode: Mode,
        budget: Option<&BudgetConfig>,
        with_ego_only: bool,
    ) -> Result<FrameOutput> {
        let cfg = self.config;
        let ego = *scen.ego();
        let (ego_feat, ego_trace) = self.encoder.forward(&scen.render_local_view(&ego), mode)?;
        let (_, fh, fw) = ego_feat.dims3()?;

        // sender side: encode, decompose, prepare, pack
        let mut packets = Vec::new();
        let mut comm = Vec::new();
        let mut senders = Vec::new();
        if cfg.mode != CollabMode::NoCollab {
            for agent in &scen.agents[1..] {
                let (feat, _) = self.encoder.forward(&scen.render_local_view(agent), mode)?;
                let pyr = dwt2(&feat, cfg.levels)?;
                let (tx, sender_trace) = match self.distiller.as_mut() {
                    Some(d) => {
                        let (t, tr) = d.prepare(&pyr, mode)?;
                        (t, Some(tr))
                    }
                    None => (pyr.ll.clone(), None),
                };
                let pose = scen.feature_pose(agent, &ego);
                let meta = MessageMeta {
                    agent_id: agent.id,
                    frame_id,
                    levels: cfg.levels as u8,
                    dtype: cfg.dtype,
                    pose: pose.to_f32(),
                };
                let bytes = pack_message(&tx, &meta)?;
                let (c, h, w) = tx.dims3()?;
                let report = CommVolumeReport::new(agent.id, (h * w) as u64, c as u64, cfg.dtype.bits())?;
                debug_assert_eq!(report.bytes as usize, bytes.len() - crate::wirecodec::message::HEADER_LEN - crate::wirecodec::message::TRAILER_LEN);
                comm.push(report);
                packets.push(bytes);
                senders.push((feat, pyr, sender_trace));
            }
        }
        let outcome = budget.filter(|_| !comm.is_empty()).map(|b| check_budget(&comm, b));
        let kept = match &outcome {
            Some(BudgetOutcome::Violation { total_bytes, limit_bytes }) => {
                return Err(Error::config(format!(
                    "frame {frame_id}: {total_bytes} bytes exceed the budget of {limit_bytes} bytes"
                )))
            }
            Some(o) => o.kept(comm.len()),
            None => (0..comm.len()).collect(),
        };

        // receiver side: unpack, reconstruct, warp
        let mut links = Vec::with_capacity(kept.len());
        let mut inputs = vec![FuseInput::all_valid(ego.id, ego_feat.clone())];
        for &k in &kept {
            let (received, meta) = unpack_message(&packets[k])?;
            let (feat, pyr, sender_trace) = senders[k].clone();
            let target = idwt2_lowpass(&pyr.ll, cfg.levels)?;
            let (restored, restore) = match self.distiller.as_mut() {
                Some(d) => {
                    let (fake, gen_trace) = d.generate(&received, mode)?;
                    let trace = RestoreTrace::new(sender_trace.expect("sender trace in generator mode"), gen_trace);
                    (fake, Some(trace))
                }
                None => (idwt2_lowpass(&received, meta.levels as usize)?, None),
            };
            let pose = AffinePose::from_f32(meta.pose)?;
            let (warped, mask, warp) = warp_affine(&restored, &pose, fh, fw)?;
            inputs.push(FuseInput { agent_id: meta.agent_id, feat: warped, mask });
            links.push(Link { warp, restored, target, original: feat, restore });
        }
        let (fused, fuse_trace) = self.fusion.forward(&inputs)?;
        let (logits, head_trace) = self.head.forward(&fused, mode)?;
        let ego_logits = if with_ego_only { Some(self.head.forward(&ego_feat, mode)?.0) } else { None };
        Ok(FrameOutput { logits, ego_logits, comm, budget: outcome, ego_trace, head_trace, fuse_trace, links })
    }

    /// Detection loss plus, in generator mode, one discriminator update and
    /// the generator-side MSD objective; then one Adam step on everything.
    pub fn backward_and_step(
        &mut self,
        out: &FrameOutput,
        target_mask: &Tensor,
        step: usize,
        sc: &StepConfig,
    ) -> Result<LossReport> {
        let (task_loss, g_logits) = detection_loss(&out.logits, target_mask, sc.pos_weight)?;
        let g_fused = self.head.backward(&out.head_trace, &g_logits)?;
        let grads = self.fusion.backward(&out.fuse_trace, &g_fused)?;
        self.encoder.backward(&out.ego_trace, &grads[0])?;

        let mut terms = MsdTerms::default();
        if let Some(d) = self.distiller.as_mut() {
            let n = out.links.len() as f64;
            for (link, g_warped) in out.links.iter().zip(&grads[1..]) {
                let trace = link.restore.as_ref().expect("restore trace in generator mode");
                let mut g = if sc.freeze_generator_task_grad {
                    Tensor::zeros_like(&link.restored)
                } else {
                    warp_affine_backward(&link.warp, g_warped)?
                };
                let real = match d.config.adv_real {
                    AdvRealSource::Restored => &link.target,
                    AdvRealSource::Original => &link.original,
                };
                let l_d = d.discriminator_step(real, &link.restored)?;
                let gl = d.generator_loss(&link.restored, &link.target)?;
                g.add_assign(&gl.grad)?;
                d.backward_restore(trace, &g)?;
                terms.l_recon += gl.terms.l_recon / n;
                terms.l_ssim += gl.terms.l_ssim / n;
                terms.l_percep += gl.terms.l_percep / n;
                terms.l_g += gl.terms.l_g / n;
                terms.l_d += l_d / n;
            }
        }
        let totals = crate::distillation::msd_total(&terms, &self.distiller.as_ref().map_or_else(Default::default, |d| d.config.weights));
        let report = LossReport {
            step,
            l_recon: terms.l_recon,
            l_ssim: terms.l_ssim,
            l_percep: terms.l_percep,
            l_g: terms.l_g,
            l_d: terms.l_d,
            l_recon_total: totals.l_recon_total,
            l_adv: totals.l_adv,
            task_loss,
        };
        report.check_finite()?;

        let opt = Adam::new(sc.lr);
        opt.step(self.encoder.params_mut());
        opt.step(self.head.params_mut());
        opt.step(self.fusion.params_mut());
        if let Some(d) = self.distiller.as_mut() {
            d.generator_update();
            d.discriminator.zero_grad();
        }
        Ok(report)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.encoder.params();
        out.extend(self.head.params());
        out.extend(self.fusion.params());
        if let Some(d) = &self.distiller {
            out.extend(d.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head.params_mut());
        out.extend(self.fusion.params_mut());
        if let Some(d) = &mut self.distiller {
            out.extend(d.params_mut());
        }
        out
    }

    pub fn save(&self) -> Result<Vec<u8>> {
        checkpoint::encode(self.params())
    }

    pub fn load(&mut self, buf: &[u8]) -> Result<()> {
        checkpoint::restore(buf, self.params_mut())
    }
}
