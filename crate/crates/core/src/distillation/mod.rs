//! LL-to-feature generator, patch discriminator and the multi-scale
//! distillation losses that train them.

pub mod losses;
pub mod nets;
pub mod sender;
pub mod ssim;
pub mod train;

pub use losses::{loss_adv, loss_percep, loss_recon, msd_total, AdvLosses, LossWeights, MsdTerms, MsdTotals, PercepScope};
pub use nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
pub use sender::{FuseKind, SenderFuse, SenderTrace};
pub use ssim::{loss_ssim, ssim, SsimConfig};
pub use train::{
    write_loss_csv, AdvRealSource, DistillConfig, Distiller, GeneratorLoss, LossReport, RestoreTrace, LOSS_CSV_HEADER,
};
