//! Metadata-hiding packet tunnel and flow-state management for network
//! functions running behind a simulated trusted/untrusted memory boundary.

pub mod boundary;
pub mod crypto;
pub mod packet;
pub mod ring;
pub mod statemgmt;
pub mod wire;
pub mod etap;
pub mod link;
pub mod gateway;
pub mod nf;
pub mod par;
pub mod bench;
