//! Event-triggered distributed linear programming: problem data, the hybrid
//! primal-dual dynamics, broadcast triggers and an exact hybrid simulator.

pub mod dynamics;
pub mod lp;
pub mod problems;
pub mod sim;
pub mod topology;
pub mod triggers;

pub use dynamics::*;
pub use lp::*;
pub use problems::*;
pub use sim::*;
pub use topology::*;
pub use triggers::*;
