//! Intent co-creation engine for network-as-a-service ordering.

pub mod backend;
pub mod bus;
pub mod catalog;
pub mod clock;
pub mod dialogue;
pub mod eval;
pub mod gateway;
pub mod memory;
pub mod money;
