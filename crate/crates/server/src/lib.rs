//! Real-time serving of a trained world model, the headless client, and the
//! pipeline stages behind the `neurosim` command line.

pub mod client;
pub mod engine;
pub mod keys;
pub mod pipeline;
pub mod protocol;
pub mod server;

pub use neurosim;
