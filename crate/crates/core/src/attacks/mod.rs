//! First-order attacks: adversarial losses, Adam, L-infinity/box
//! projection, the fixed-budget attack loop and the early-stopping
//! step counter used by the detector.

mod adam;
mod loss;
mod project;
mod runner;

pub use adam::{adam_update, AdamState};
pub use loss::{adversarial_loss, AttackLossKind, AttackTarget};
pub use project::{project_in_place, project_linf_and_box};
pub use runner::{run_attack, steps_to_flip, AttackConfig, AttackResult, FlipCount, Goal, Optimizer};
