//! Closed-loop flight simulation: plant, tracking controller, references,
//! fault and reconfiguration events, and tracking metrics.

mod control;
mod plant;
mod reference;
mod run;

pub use control::{tracking_controller, ControlOutput, ControllerGains, RefState};
pub use plant::{applied_wrench, plant_step, PlantModel, RigidState};
pub use reference::{spiral_reference, Reference, SpiralParams};
pub use run::{
    run_closed_loop, EventRecord, Metrics, SimConfig, SimEvent, SimSetup, Trace,
    TraceRow, TRACE_COLUMNS,
};

use thiserror::Error;

use crate::allocation::AllocationError;
use crate::assembly::AssemblyError;
use crate::fault::FaultError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("allocation failed at t = {time:.3} s: {source}")]
    Allocation {
        time: f64,
        #[source]
        source: AllocationError,
    },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error("trace export failed: {0}")]
    Io(#[from] std::io::Error),
}
