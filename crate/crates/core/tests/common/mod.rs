pub mod loopnest;
pub mod layers;
