//! Instruction-stream simulator with an instruction-class cycle model.
//!
//! Code lives in its own instruction memory starting at address 0; the
//! machine halts when the program counter reaches the end of the code.
//! Data memory is a flat little-endian byte array without caches.
//!
//! Every instruction issues in one cycle. Cycles beyond one for a class
//! (multi-cycle loads, taken-branch penalties) are booked as stall cycles,
//! so `total_cycles = instruction_count + stall_cycles` holds exactly.

use std::collections::BTreeMap;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::{mul32_partial_products, nn_mac_bitlevel, nn_mac_functional, PackedWord, Signedness};
use crate::isa::{decode, InstrClass, Instruction, IsaError};

/// Default upper bound on executed instructions per run.
pub const DEFAULT_BUDGET: u64 = 2_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("instruction budget of {0} exceeded")]
    BudgetExceeded(u64),
    #[error("memory access at {addr:#x} (+{len}) outside {size} bytes")]
    MemoryOutOfBounds { addr: u32, len: u32, size: usize },
    #[error("misaligned word access at {0:#x}")]
    Misaligned(u32),
    #[error("unknown instruction {word:#010x} at pc {pc:#x}")]
    UnknownInstruction { pc: u32, word: u32 },
    #[error("program counter {0:#x} left the code segment")]
    PcOutOfRange(u32),
    #[error("reports describe different workloads ({baseline} vs {optimized} MACs)")]
    WorkloadMismatch { baseline: u64, optimized: u64 },
    #[error("invalid cycle model: {0}")]
    InvalidModel(String),
}

/// Per-class costs in core cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CycleModel {
    pub alu: u32,
    pub mul: u32,
    pub nn_mac: u32,
    pub load: u32,
    pub store: u32,
    pub branch_taken: u32,
    pub branch_not_taken: u32,
    pub nop: u32,
}

impl Default for CycleModel {
    fn default() -> Self {
        Self {
            alu: 1,
            mul: 1,
            nn_mac: 1,
            load: 2,
            store: 1,
            branch_taken: 2,
            branch_not_taken: 1,
            nop: 1,
        }
    }
}

impl CycleModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let costs = [
            self.alu,
            self.mul,
            self.nn_mac,
            self.load,
            self.store,
            self.branch_taken,
            self.branch_not_taken,
            self.nop,
        ];
        if costs.iter().any(|&c| c == 0) {
            return Err(SimError::InvalidModel("every class costs at least one cycle".into()));
        }
        Ok(())
    }

    /// Parses a TOML override file; omitted keys keep their defaults.
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let model: CycleModel = toml::from_str(text).map_err(|e| SimError::InvalidModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    fn cost(&self, class: InstrClass, taken: bool) -> u32 {
        match class {
            InstrClass::NnMac => self.nn_mac,
            InstrClass::Load => self.load,
            InstrClass::Store => self.store,
            InstrClass::Alu => self.alu,
            InstrClass::Mul => self.mul,
            InstrClass::Branch if taken => self.branch_taken,
            InstrClass::Branch => self.branch_not_taken,
            InstrClass::Nop => self.nop,
        }
    }
}

/// Counters indexed by [`InstrClass`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts([u64; 7]);

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstrClass, u64)> + '_ {
        InstrClass::ALL.into_iter().map(|c| (c, self[c]))
    }
}

impl Index<InstrClass> for ClassCounts {
    type Output = u64;
    fn index(&self, c: InstrClass) -> &u64 {
        &self.0[c as usize]
    }
}

impl IndexMut<InstrClass> for ClassCounts {
    fn index_mut(&mut self, c: InstrClass) -> &mut u64 {
        &mut self.0[c as usize]
    }
}

/// Counters for one layer region.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub cycles: u64,
    pub instructions: u64,
    pub loads: u64,
    pub stores: u64,
    pub stall_cycles: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub total_cycles: u64,
    pub instruction_count: u64,
    pub load_count: u64,
    pub store_count: u64,
    pub stall_cycles: u64,
    pub mac_count: u64,
    pub class_counts: ClassCounts,
    pub taken_branches: u64,
    /// Cycles spent outside every layer region (setup and glue code).
    pub glue_cycles: u64,
    pub per_layer: Vec<LayerStats>,
}

impl ExecutionReport {
    pub fn memory_accesses(&self) -> u64 {
        self.load_count + self.store_count
    }

    pub fn layer(&self, name: &str) -> Option<&LayerStats> {
        self.per_layer.iter().find(|l| l.name == name)
    }
}

/// A contiguous code range attributed to one network layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMarker {
    pub name: String,
    /// First instruction index of the region.
    pub start: u32,
    /// One past the last instruction index.
    pub end: u32,
    /// Analytic MAC count of the kernel in this region.
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSegment {
    pub addr: u32,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

/// Instruction words plus the sidecar data needed to run them.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub words: Vec<u32>,
    /// Entry point as a byte address into the code.
    pub entry: u32,
    pub memory_size: usize,
    pub data: Vec<DataSegment>,
    pub layers: Vec<LayerMarker>,
}

impl Program {
    pub fn from_instructions(code: &[Instruction]) -> Result<Self, IsaError> {
        let words = code.iter().map(|i| i.encode()).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { words, ..Default::default() })
    }

    /// Fresh machine state with all data segments loaded.
    pub fn initial_state(&self) -> Result<MachineState, SimError> {
        let mut state = MachineState::new(self.memory_size);
        state.pc = self.entry;
        for seg in &self.data {
            state.write_bytes(seg.addr, &seg.bytes)?;
        }
        Ok(state)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn from_binary(bytes: &[u8]) -> Self {
        let words = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Self { words, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MachineState {
    regs: [u32; 32],
    pub memory: Vec<u8>,
    pub pc: u32,
}

impl MachineState {
    pub fn new(memory_size: usize) -> Self {
        Self { regs: [0; 32], memory: vec![0; memory_size], pc: 0 }
    }

    pub fn reg(&self, index: usize) -> u32 {
        self.regs[index]
    }

    /// Writes to `x0` are discarded.
    pub fn set_reg(&mut self, index: usize, value: u32) {
        if index != 0 {
            self.regs[index] = value;
        }
    }

    fn check(&self, addr: u32, len: u32) -> Result<usize, SimError> {
        let start = addr as usize;
        if start.checked_add(len as usize).is_none_or(|end| end > self.memory.len()) {
            return Err(SimError::MemoryOutOfBounds { addr, len, size: self.memory.len() });
        }
        Ok(start)
    }

    pub fn read_word(&self, addr: u32) -> Result<u32, SimError> {
        if addr & 3 != 0 {
            return Err(SimError::Misaligned(addr));
        }
        let i = self.check(addr, 4)?;
        let m = &self.memory;
        Ok(u32::from_le_bytes([m[i], m[i + 1], m[i + 2], m[i + 3]]))
    }

    pub fn write_word(&mut self, addr: u32, value: u32) -> Result<(), SimError> {
        if addr & 3 != 0 {
            return Err(SimError::Misaligned(addr));
        }
        let i = self.check(addr, 4)?;
        self.memory[i..i + 4].copy_from_slice(&value.to_le_bytes());
        Ok(())
    }

    pub fn write_bytes(&mut self, addr: u32, bytes: &[u8]) -> Result<(), SimError> {
        let i = self.check(addr, bytes.len() as u32)?;
        self.memory[i..i + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    pub fn read_words(&self, addr: u32, count: usize) -> Result<Vec<u32>, SimError> {
        (0..count).map(|k| self.read_word(addr + 4 * k as u32)).collect()
    }

    pub fn write_words(&mut self, addr: u32, words: &[u32]) -> Result<(), SimError> {
        for (k, w) in words.iter().enumerate() {
            self.write_word(addr + 4 * k as u32, *w)?;
        }
        Ok(())
    }
}

/// Execution options beyond the cycle model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub budget: u64,
    /// Route `nn_mac` and `mul` through the bit-level multiplier models.
    pub bit_level: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, bit_level: false }
    }
}

pub fn run(program: &Program, state: &mut MachineState, model: &CycleModel) -> Result<ExecutionReport, SimError> {
    run_with(program, state, model, SimOptions::default())
}

pub fn run_with(
    program: &Program,
    state: &mut MachineState,
    model: &CycleModel,
    options: SimOptions,
) -> Result<ExecutionReport, SimError> {
    model.validate()?;
    let code: Vec<Option<Instruction>> = program.words.iter().map(|&w| decode(w).ok()).collect();
    let end = code.len() as u32 * 4;

    let mut region_of = vec![u16::MAX; code.len()];
    for (i, marker) in program.layers.iter().enumerate() {
        for slot in region_of.iter_mut().take(marker.end as usize).skip(marker.start as usize) {
            *slot = i as u16;
        }
    }
    let mut per_layer: Vec<LayerStats> = program
        .layers
        .iter()
        .map(|m| LayerStats { name: m.name.clone(), ..Default::default() })
        .collect();
    let mut entered = vec![false; program.layers.len()];

    let mut report = ExecutionReport::default();
    let mut loose_macs = 0u64;

    while state.pc != end {
        if state.pc > end || state.pc & 3 != 0 {
            return Err(SimError::PcOutOfRange(state.pc));
        }
        if report.instruction_count >= options.budget {
            return Err(SimError::BudgetExceeded(options.budget));
        }
        let index = (state.pc / 4) as usize;
        let pc = state.pc;
        let instr = code[index].ok_or(SimError::UnknownInstruction { pc, word: program.words[index] })?;
        let mut next = pc.wrapping_add(4);
        let mut taken = false;
        let mut products = 0u64;

        match instr {
            Instruction::NnMac { cfg, rd, rs1, rs2 } => {
                let weights = PackedWord::new(state.reg(rs2.index()), cfg.weight, Signedness::Signed);
                let acts = PackedWord::new(state.reg(rs1.index()), cfg.activation, Signedness::Unsigned);
                let acc = state.reg(rd.index()) as i32;
                let result = if options.bit_level {
                    nn_mac_bitlevel(acc, weights, acts, cfg).map(|r| r.acc)
                } else {
                    nn_mac_functional(acc, weights, acts, cfg)
                }
                .expect("operand widths come from the decoded config");
                state.set_reg(rd.index(), result as u32);
                products = cfg.products_per_instruction() as u64;
            }
            Instruction::Alu { op, rd, rs1, rs2 } => {
                let v = op.apply(state.reg(rs1.index()), state.reg(rs2.index()));
                state.set_reg(rd.index(), v);
            }
            Instruction::AluImm { op, rd, rs1, imm } => {
                let v = op.apply(state.reg(rs1.index()), imm);
                state.set_reg(rd.index(), v);
            }
            Instruction::Lui { rd, imm } => state.set_reg(rd.index(), imm << 12),
            Instruction::Mul { rd, rs1, rs2 } => {
                let (a, b) = (state.reg(rs1.index()), state.reg(rs2.index()));
                let v = if options.bit_level { mul32_partial_products(a, b) } else { a.wrapping_mul(b) };
                state.set_reg(rd.index(), v);
                products = 1;
            }
            Instruction::Load { rd, rs1, offset } => {
                let addr = state.reg(rs1.index()).wrapping_add(offset as u32);
                let v = state.read_word(addr)?;
                state.set_reg(rd.index(), v);
            }
            Instruction::Store { rs1, rs2, offset } => {
                let addr = state.reg(rs1.index()).wrapping_add(offset as u32);
                state.write_word(addr, state.reg(rs2.index()))?;
            }
            Instruction::Branch { cond, rs1, rs2, offset } => {
                if cond.taken(state.reg(rs1.index()), state.reg(rs2.index())) {
                    taken = true;
                    next = pc.wrapping_add(offset as u32);
                }
            }
            Instruction::Jal { rd, offset } => {
                state.set_reg(rd.index(), pc.wrapping_add(4));
                taken = true;
                next = pc.wrapping_add(offset as u32);
            }
            Instruction::Nop => {}
        }

        let class = instr.class();
        let stall = (model.cost(class, taken) - 1) as u64;
        report.instruction_count += 1;
        report.class_counts[class] += 1;
        report.stall_cycles += stall;
        report.taken_branches += taken as u64;
        let is_load = class == InstrClass::Load;
        let is_store = class == InstrClass::Store;
        report.load_count += is_load as u64;
        report.store_count += is_store as u64;

        match region_of[index] {
            u16::MAX => {
                report.glue_cycles += 1 + stall;
                loose_macs += products;
            }
            r => {
                let r = r as usize;
                entered[r] = true;
                let l = &mut per_layer[r];
                l.cycles += 1 + stall;
                l.instructions += 1;
                l.stall_cycles += stall;
                l.loads += is_load as u64;
                l.stores += is_store as u64;
            }
        }
        state.pc = next;
    }

    for (i, marker) in program.layers.iter().enumerate() {
        if entered[i] {
            per_layer[i].macs = marker.macs;
        }
    }
    report.mac_count = loose_macs + per_layer.iter().map(|l| l.macs).sum::<u64>();
    report.total_cycles = report.instruction_count + report.stall_cycles;
    report.per_layer = per_layer;
    Ok(report)
}

/// Ratios of a baseline run over an optimized run (values > 1 favour the
/// optimized run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub cycle_ratio: f64,
    pub load_ratio: f64,
    pub store_ratio: f64,
    pub memory_access_ratio: f64,
    pub per_layer: BTreeMap<String, f64>,
}

fn ratio(num: u64, den: u64) -> f64 {
    match (num, den) {
        (0, 0) => 1.0,
        (_, 0) => f64::INFINITY,
        _ => num as f64 / den as f64,
    }
}

pub fn compare_runs(baseline: &ExecutionReport, optimized: &ExecutionReport) -> Result<SpeedupReport, SimError> {
    if baseline.mac_count != optimized.mac_count {
        return Err(SimError::WorkloadMismatch { baseline: baseline.mac_count, optimized: optimized.mac_count });
    }
    let per_layer = baseline
        .per_layer
        .iter()
        .filter_map(|b| optimized.layer(&b.name).map(|o| (b.name.clone(), ratio(b.cycles, o.cycles))))
        .collect();
    Ok(SpeedupReport {
        cycle_ratio: ratio(baseline.total_cycles, optimized.total_cycles),
        load_ratio: ratio(baseline.load_count, optimized.load_count),
        store_ratio: ratio(baseline.store_count, optimized.store_count),
        memory_access_ratio: ratio(baseline.memory_accesses(), optimized.memory_accesses()),
        per_layer,
    })
}

pub fn stall_fraction(report: &ExecutionReport) -> f64 {
    if report.total_cycles == 0 {
        0.0
    } else {
        report.stall_cycles as f64 / report.total_cycles as f64
    }
}
