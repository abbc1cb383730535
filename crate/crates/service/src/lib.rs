//! Program-facing surface of the training engine: the WebSocket session
//! service and the `forge` command line.

pub mod cli;
pub mod protocol;
pub mod server;
