pub mod cli;
pub mod cmixup;
pub mod data;
pub mod encoding;
pub mod nn;
pub mod progressive;
pub mod rng;
pub mod vime;
