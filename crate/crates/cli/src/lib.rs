//! Library surface of the command-line front end, so integration tests can
//! drive the same code paths the binary does.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

pub use commands::{
    cmd_ablate, cmd_dehaze, cmd_eval, cmd_mask, cmd_prompt, cmd_synth, cmd_train, Method, Stage,
};
pub use config::RunConfig;
pub use error::{CliError, Result};
