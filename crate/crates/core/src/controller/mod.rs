//! Residual-compensated sliding-mode controller with an adaptive switching
//! gain, and the real-time loop that runs it against the simulator.

mod closed_loop;
mod gains;
mod law;

pub use closed_loop::{
    collect_trajectory, run_closed_loop, ClosedLoopLog, CollectConfig, Compensation, LogRow, LoopConfig, Pid,
};
pub use gains::{ControllerGains, PidGains, TABLE_LAMBDA, TABLE_MBAR, TABLE_PHI};
pub use law::{adaptive_gain_step, control_input, nominal_input, saturate, sliding_variable};
