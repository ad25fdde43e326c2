pub mod dataset;
pub mod envs;
pub mod numerics;
pub mod rng;
