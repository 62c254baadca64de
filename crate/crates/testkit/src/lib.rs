//! Reference implementations for testing the codesplat engine: a per-pixel
//! renderer, finite-difference gradients, direct acceptance formulas and a
//! chain statistics probe. Everything here is written for clarity and runs on
//! one thread.

mod acceptance;
mod fd;
mod metrics;
mod probe;
mod render;
mod report;
mod scene;
pub mod scenes;
mod sh;

pub use acceptance::{acceptance_oracle, MoveKind};
pub use fd::{fd_gradient, FdGradients};
pub use metrics::{oracle_recon_loss, oracle_ssim};
pub use probe::{chain_probe, ChainStats, ProbeProposal};
pub use render::{naive_render, naive_render_scene};
pub use report::{compare, OracleReport};
pub use scene::OracleScene;
pub use sh::real_sh;
