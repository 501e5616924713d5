pub mod fieldmap;
pub mod lsq;
pub mod motion;
pub mod spin;
pub mod sequencer;
pub mod relaxometry;
pub mod orchestrator;
