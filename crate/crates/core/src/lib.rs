pub mod board;
pub mod betamove;
pub mod synth;
pub mod embed;
pub mod gradenet;
pub mod deeprouteset;
pub mod pipeline;
