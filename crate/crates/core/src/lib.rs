pub mod cloud;
pub mod tensor;
pub mod agglomerate;
pub mod container;
pub mod detect;
pub mod synth;
pub mod saliency;
pub mod eval;
pub mod config;
