//! Headless, configuration-driven procedural training engine.
//!
//! Layering, bottom up:
//! - entity: [`config`] (the course) and [`part_graph`] (the physical parts);
//! - control: [`bus`] (signals) and [`session`] (teaching / practice /
//!   examination state machine), with [`results`] persisting examinations;
//! - [`frame_budget`] models render batching and frame pacing.

pub mod bus;
pub mod config;
pub mod frame_budget;
pub mod part_graph;
pub mod results;
pub mod session;

pub use bus::{Payload, Signal, SignalBus};
pub use config::{parse_config, serialize, validate, CourseConfig};
pub use session::{Mode, Session, SessionContext, SessionRequest};
