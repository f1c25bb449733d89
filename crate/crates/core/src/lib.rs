//! Mixed-precision packed-SIMD MAC extension for a small RISC-V core:
//! instruction encoding, datapath models, a cycle-level simulator, kernel
//! generators, quantization, design-space exploration and a power model.

pub mod data;
pub mod datapath;
pub mod dse;
pub mod fixtures;
pub mod asm;
pub mod io;
pub mod isa;
pub mod kernels;
pub mod network;
pub mod power;
pub mod quant;
pub mod sim;
pub mod train;

pub use datapath::{pack, unpack, PackedWord, Signedness};
pub use isa::{decode, disassemble, encode, BitWidth, Instruction, IsaError, Mode, PrecisionConfig, Reg};
pub use sim::{compare_runs, run, stall_fraction, CycleModel, ExecutionReport, MachineState, Program, SimError};
