//! The guide's chapters as modules, so `cargo test --doc` runs every code
//! block in them. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/plant.md")]
pub mod plant {}
#[doc = include_str!("../../../book/src/reward.md")]
pub mod reward {}
#[doc = include_str!("../../../book/src/policy.md")]
pub mod policy {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/protocol.md")]
pub mod protocol {}
#[doc = include_str!("../../../book/src/orchestration.md")]
pub mod orchestration {}
#[doc = include_str!("../../../book/src/transfer.md")]
pub mod transfer {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
