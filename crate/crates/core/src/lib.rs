//! Hormonally regulated recursive reasoning engine.

pub mod agents;
pub mod engrams;
pub mod harness;
pub mod hormones;
pub mod observe;
pub mod rrc;
pub mod select;
pub mod tasks;
