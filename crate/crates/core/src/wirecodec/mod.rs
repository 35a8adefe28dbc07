//! Quantized wire format and communication accounting.

pub mod f16;
pub mod message;
pub mod volume;

pub use f16::{f16_decode, f16_encode};
pub use message::{pack_message, read_header, unpack_message, MessageHeader, MessageMeta, WireDtype};
pub use volume::{
    check_budget, comm_volume, BudgetConfig, BudgetOutcome, BudgetPolicy, CommVolumeReport,
};
