//! Simulated GPU runtime and the workload driver that exercises it.

mod memory;
mod runtime;
mod workload;

pub use memory::HostMemory;
pub use runtime::{
    codes, functions, Allocation, CommandList, CostTable, ListState, MockRuntime, Space, DEVICE_HEAP_BASE, HANDLE_BASE,
    HOST_HEAP_BASE, POISON, SCRATCH_BASE, TILES,
};
pub use workload::{
    bundled, bundled_names, run_untraced, run_workload, trace_workload, trace_workload_in, CallFailure, Injection, Op,
    RunOptions, RunSummary, Step, WorkloadError, WorkloadSpec, DEFAULT_PID, MAX_INSTRUCTIONS, SAMPLER_TID_OFFSET,
};
