//! Encoding, decoding and disassembly of the packed-MAC custom instructions
//! and the small RV32 subset the kernel generators emit.
//!
//! All nine `nn_mac_w{W}a{A}` instructions are R-type on the custom-0 major
//! opcode with `funct3 = 0b010`. `funct7[1:0]` selects the weight width and
//! `funct7[3:2]` the activation width (`10` = 8 bit, `01` = 4 bit,
//! `00` = 2 bit); `funct7[6:4]` is always zero. `rs1` carries the packed
//! activations, `rs2` the packed weights and `rd` the 32-bit accumulator.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Major opcode used for the MAC extension (RISC-V custom-0).
pub const OPCODE_CUSTOM0: u32 = 0b000_1011;
/// `funct3` shared by all nine MAC instructions.
pub const NN_MAC_FUNCT3: u32 = 0b010;

const OPCODE_OP: u32 = 0b011_0011;
const OPCODE_OP_IMM: u32 = 0b001_0011;
const OPCODE_LUI: u32 = 0b011_0111;
const OPCODE_LOAD: u32 = 0b000_0011;
const OPCODE_STORE: u32 = 0b010_0011;
const OPCODE_BRANCH: u32 = 0b110_0011;
const OPCODE_JAL: u32 = 0b110_1111;

const NOP_WORD: u32 = 0x0000_0013;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IsaError {
    #[error("register index {0} is out of range (0..32)")]
    InvalidRegister(u32),
    #[error("unsupported precision configuration w{weight}a{activation}")]
    InvalidConfig { weight: u32, activation: u32 },
    #[error("immediate {value} does not fit the {field} field")]
    ImmediateOutOfRange { field: &'static str, value: i64 },
    #[error("unknown instruction word {0:#010x}")]
    UnknownInstruction(u32),
}

/// Operand width of a packed lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum BitWidth {
    B2,
    B4,
    B8,
}

impl BitWidth {
    pub const ALL: [BitWidth; 3] = [BitWidth::B8, BitWidth::B4, BitWidth::B2];

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            2 => Some(BitWidth::B2),
            4 => Some(BitWidth::B4),
            8 => Some(BitWidth::B8),
            _ => None,
        }
    }

    pub const fn bits(self) -> u32 {
        match self {
            BitWidth::B2 => 2,
            BitWidth::B4 => 4,
            BitWidth::B8 => 8,
        }
    }

    /// Number of lanes of this width in a 32-bit word.
    pub const fn lanes(self) -> usize {
        (32 / self.bits()) as usize
    }

    /// Two-bit field code used in `funct7`.
    const fn code(self) -> u32 {
        match self {
            BitWidth::B8 => 0b10,
            BitWidth::B4 => 0b01,
            BitWidth::B2 => 0b00,
        }
    }

    const fn from_code(code: u32) -> Option<Self> {
        match code {
            0b10 => Some(BitWidth::B8),
            0b01 => Some(BitWidth::B4),
            0b00 => Some(BitWidth::B2),
            _ => None,
        }
    }

    /// Next wider setting, if any.
    pub fn wider(self) -> Option<Self> {
        match self {
            BitWidth::B2 => Some(BitWidth::B4),
            BitWidth::B4 => Some(BitWidth::B8),
            BitWidth::B8 => None,
        }
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bits())
    }
}

/// Operating regime of the extended ALU; a pure function of the weight width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// 8-bit weights: multiplier parallelism and packing only.
    Mode1,
    /// 4-bit weights: adds multi-pumping.
    Mode2,
    /// 2-bit weights: adds soft SIMD.
    Mode3,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Mode::Mode1 => 1,
            Mode::Mode2 => 2,
            Mode::Mode3 => 3,
        };
        write!(f, "Mode-{n}")
    }
}

/// Weight/activation width pair of one MAC instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PrecisionConfig {
    pub weight: BitWidth,
    pub activation: BitWidth,
}

impl PrecisionConfig {
    pub const fn new(weight: BitWidth, activation: BitWidth) -> Self {
        Self { weight, activation }
    }

    pub fn from_bits(weight: u32, activation: u32) -> Result<Self, IsaError> {
        match (BitWidth::from_bits(weight), BitWidth::from_bits(activation)) {
            (Some(w), Some(a)) => Ok(Self::new(w, a)),
            _ => Err(IsaError::InvalidConfig { weight, activation }),
        }
    }

    /// The nine configurations, ordered from widest (w8a8) to narrowest (w2a2).
    pub fn all() -> [PrecisionConfig; 9] {
        let mut out = [PrecisionConfig::new(BitWidth::B8, BitWidth::B8); 9];
        let mut i = 0;
        for w in BitWidth::ALL {
            for a in BitWidth::ALL {
                out[i] = PrecisionConfig::new(w, a);
                i += 1;
            }
        }
        out
    }

    pub fn mode(self) -> Mode {
        match self.weight {
            BitWidth::B8 => Mode::Mode1,
            BitWidth::B4 => Mode::Mode2,
            BitWidth::B2 => Mode::Mode3,
        }
    }

    pub fn funct7(self) -> u32 {
        (self.activation.code() << 2) | self.weight.code()
    }

    pub fn from_funct7(funct7: u32) -> Option<Self> {
        if funct7 >> 4 != 0 {
            return None;
        }
        let weight = BitWidth::from_code(funct7 & 0b11)?;
        let activation = BitWidth::from_code((funct7 >> 2) & 0b11)?;
        Some(Self::new(weight, activation))
    }

    /// Products computed by one instruction: lanes `0..P` of both operands
    /// are paired, with `P = 32 / max(weight_bits, activation_bits)`.
    pub fn products_per_instruction(self) -> usize {
        self.weight.lanes().min(self.activation.lanes())
    }

    /// True when every weight lane of the word finds an activation lane.
    pub fn activation_lanes_suffice(self) -> bool {
        self.activation.lanes() >= self.weight.lanes()
    }

    pub fn mnemonic(self) -> String {
        format!("nn_mac_w{}a{}", self.weight.bits(), self.activation.bits())
    }

    /// Inverse of [`PrecisionConfig::mnemonic`]-style labels such as `w4a2`.
    pub fn parse_label(label: &str) -> Option<Self> {
        let rest = label.trim().strip_prefix('w')?;
        let (w, a) = rest.split_once('a')?;
        Self::from_bits(w.parse().ok()?, a.parse().ok()?).ok()
    }

    pub fn label(self) -> String {
        format!("w{}a{}", self.weight.bits(), self.activation.bits())
    }
}

impl fmt::Display for PrecisionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl TryFrom<u32> for BitWidth {
    type Error = String;
    fn try_from(bits: u32) -> Result<Self, String> {
        BitWidth::from_bits(bits).ok_or_else(|| format!("unsupported lane width {bits}"))
    }
}

impl From<BitWidth> for u32 {
    fn from(w: BitWidth) -> u32 {
        w.bits()
    }
}

impl TryFrom<String> for PrecisionConfig {
    type Error = String;
    fn try_from(label: String) -> Result<Self, String> {
        PrecisionConfig::parse_label(&label).ok_or_else(|| format!("unknown precision config {label:?}"))
    }
}

impl From<PrecisionConfig> for String {
    fn from(c: PrecisionConfig) -> String {
        c.label()
    }
}

/// Architectural register index `x0..x31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);

    pub fn new(index: u32) -> Result<Self, IsaError> {
        if index < 32 {
            Ok(Reg(index as u8))
        } else {
            Err(IsaError::InvalidRegister(index))
        }
    }

    /// Panics on an out-of-range index; for compile-time register choices.
    pub const fn x(index: u8) -> Self {
        assert!(index < 32, "register index out of range");
        Reg(index)
    }

    pub const fn index(self) -> usize {
        self.0 as usize
    }

    fn field(word: u32, shift: u32) -> Reg {
        Reg(((word >> shift) & 0x1f) as u8)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    Sll,
    Slt,
    Sltu,
    Xor,
    Srl,
    Sra,
    Or,
    And,
}

impl AluOp {
    pub const ALL: [AluOp; 10] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::Sll,
        AluOp::Slt,
        AluOp::Sltu,
        AluOp::Xor,
        AluOp::Srl,
        AluOp::Sra,
        AluOp::Or,
        AluOp::And,
    ];

    fn funct(self) -> (u32, u32) {
        match self {
            AluOp::Add => (0b000_0000, 0b000),
            AluOp::Sub => (0b010_0000, 0b000),
            AluOp::Sll => (0b000_0000, 0b001),
            AluOp::Slt => (0b000_0000, 0b010),
            AluOp::Sltu => (0b000_0000, 0b011),
            AluOp::Xor => (0b000_0000, 0b100),
            AluOp::Srl => (0b000_0000, 0b101),
            AluOp::Sra => (0b010_0000, 0b101),
            AluOp::Or => (0b000_0000, 0b110),
            AluOp::And => (0b000_0000, 0b111),
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "add",
            AluOp::Sub => "sub",
            AluOp::Sll => "sll",
            AluOp::Slt => "slt",
            AluOp::Sltu => "sltu",
            AluOp::Xor => "xor",
            AluOp::Srl => "srl",
            AluOp::Sra => "sra",
            AluOp::Or => "or",
            AluOp::And => "and",
        }
    }

    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::Sll => a << (b & 31),
            AluOp::Slt => ((a as i32) < (b as i32)) as u32,
            AluOp::Sltu => (a < b) as u32,
            AluOp::Xor => a ^ b,
            AluOp::Srl => a >> (b & 31),
            AluOp::Sra => ((a as i32) >> (b & 31)) as u32,
            AluOp::Or => a | b,
            AluOp::And => a & b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluImmOp {
    Addi,
    Slti,
    Sltiu,
    Xori,
    Ori,
    Andi,
    Slli,
    Srli,
    Srai,
}

impl AluImmOp {
    pub const ALL: [AluImmOp; 9] = [
        AluImmOp::Addi,
        AluImmOp::Slti,
        AluImmOp::Sltiu,
        AluImmOp::Xori,
        AluImmOp::Ori,
        AluImmOp::Andi,
        AluImmOp::Slli,
        AluImmOp::Srli,
        AluImmOp::Srai,
    ];

    fn funct3(self) -> u32 {
        match self {
            AluImmOp::Addi => 0b000,
            AluImmOp::Slti => 0b010,
            AluImmOp::Sltiu => 0b011,
            AluImmOp::Xori => 0b100,
            AluImmOp::Ori => 0b110,
            AluImmOp::Andi => 0b111,
            AluImmOp::Slli => 0b001,
            AluImmOp::Srli | AluImmOp::Srai => 0b101,
        }
    }

    pub fn is_shift(self) -> bool {
        matches!(self, AluImmOp::Slli | AluImmOp::Srli | AluImmOp::Srai)
    }

    fn mnemonic(self) -> &'static str {
        match self {
            AluImmOp::Addi => "addi",
            AluImmOp::Slti => "slti",
            AluImmOp::Sltiu => "sltiu",
            AluImmOp::Xori => "xori",
            AluImmOp::Ori => "ori",
            AluImmOp::Andi => "andi",
            AluImmOp::Slli => "slli",
            AluImmOp::Srli => "srli",
            AluImmOp::Srai => "srai",
        }
    }

    pub fn apply(self, a: u32, imm: i32) -> u32 {
        let b = imm as u32;
        match self {
            AluImmOp::Addi => a.wrapping_add(b),
            AluImmOp::Slti => ((a as i32) < imm) as u32,
            AluImmOp::Sltiu => (a < b) as u32,
            AluImmOp::Xori => a ^ b,
            AluImmOp::Ori => a | b,
            AluImmOp::Andi => a & b,
            AluImmOp::Slli => a << (b & 31),
            AluImmOp::Srli => a >> (b & 31),
            AluImmOp::Srai => ((a as i32) >> (b & 31)) as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchCond {
    Eq,
    Ne,
    Lt,
    Ge,
    Ltu,
    Geu,
}

impl BranchCond {
    pub const ALL: [BranchCond; 6] = [
        BranchCond::Eq,
        BranchCond::Ne,
        BranchCond::Lt,
        BranchCond::Ge,
        BranchCond::Ltu,
        BranchCond::Geu,
    ];

    fn funct3(self) -> u32 {
        match self {
            BranchCond::Eq => 0b000,
            BranchCond::Ne => 0b001,
            BranchCond::Lt => 0b100,
            BranchCond::Ge => 0b101,
            BranchCond::Ltu => 0b110,
            BranchCond::Geu => 0b111,
        }
    }

    fn from_funct3(funct3: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.funct3() == funct3)
    }

    fn mnemonic(self) -> &'static str {
        match self {
            BranchCond::Eq => "beq",
            BranchCond::Ne => "bne",
            BranchCond::Lt => "blt",
            BranchCond::Ge => "bge",
            BranchCond::Ltu => "bltu",
            BranchCond::Geu => "bgeu",
        }
    }

    pub fn taken(self, a: u32, b: u32) -> bool {
        match self {
            BranchCond::Eq => a == b,
            BranchCond::Ne => a != b,
            BranchCond::Lt => (a as i32) < (b as i32),
            BranchCond::Ge => (a as i32) >= (b as i32),
            BranchCond::Ltu => a < b,
            BranchCond::Geu => a >= b,
        }
    }
}

/// Cost class of an instruction in the cycle model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InstrClass {
    NnMac,
    Load,
    Store,
    Alu,
    Mul,
    Branch,
    Nop,
}

impl InstrClass {
    pub const ALL: [InstrClass; 7] = [
        InstrClass::NnMac,
        InstrClass::Load,
        InstrClass::Store,
        InstrClass::Alu,
        InstrClass::Mul,
        InstrClass::Branch,
        InstrClass::Nop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InstrClass::NnMac => "nn_mac",
            InstrClass::Load => "load",
            InstrClass::Store => "store",
            InstrClass::Alu => "alu",
            InstrClass::Mul => "mul",
            InstrClass::Branch => "branch",
            InstrClass::Nop => "nop",
        }
    }
}

/// A decoded instruction. Branch and jump offsets are byte offsets relative
/// to the instruction's own address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    NnMac { cfg: PrecisionConfig, rd: Reg, rs1: Reg, rs2: Reg },
    Alu { op: AluOp, rd: Reg, rs1: Reg, rs2: Reg },
    AluImm { op: AluImmOp, rd: Reg, rs1: Reg, imm: i32 },
    /// `imm` is the 20-bit upper immediate (already shifted out of bits 31:12).
    Lui { rd: Reg, imm: u32 },
    Mul { rd: Reg, rs1: Reg, rs2: Reg },
    Load { rd: Reg, rs1: Reg, offset: i32 },
    Store { rs1: Reg, rs2: Reg, offset: i32 },
    Branch { cond: BranchCond, rs1: Reg, rs2: Reg, offset: i32 },
    Jal { rd: Reg, offset: i32 },
    Nop,
}

impl Instruction {
    pub fn nn_mac(cfg: PrecisionConfig, rd: Reg, rs1: Reg, rs2: Reg) -> Self {
        Instruction::NnMac { cfg, rd, rs1, rs2 }
    }

    pub fn class(&self) -> InstrClass {
        match self {
            Instruction::NnMac { .. } => InstrClass::NnMac,
            Instruction::Alu { .. } | Instruction::AluImm { .. } | Instruction::Lui { .. } => {
                InstrClass::Alu
            }
            Instruction::Mul { .. } => InstrClass::Mul,
            Instruction::Load { .. } => InstrClass::Load,
            Instruction::Store { .. } => InstrClass::Store,
            Instruction::Branch { .. } | Instruction::Jal { .. } => InstrClass::Branch,
            Instruction::Nop => InstrClass::Nop,
        }
    }

    pub fn encode(&self) -> Result<u32, IsaError> {
        encode(self)
    }
}

fn check_signed(field: &'static str, value: i64, bits: u32) -> Result<(), IsaError> {
    let min = -(1i64 << (bits - 1));
    let max = (1i64 << (bits - 1)) - 1;
    if value < min || value > max {
        Err(IsaError::ImmediateOutOfRange { field, value })
    } else {
        Ok(())
    }
}

fn r_type(funct7: u32, rs2: Reg, rs1: Reg, funct3: u32, rd: Reg, opcode: u32) -> u32 {
    (funct7 << 25)
        | ((rs2.0 as u32) << 20)
        | ((rs1.0 as u32) << 15)
        | (funct3 << 12)
        | ((rd.0 as u32) << 7)
        | opcode
}

fn i_type(imm: i32, rs1: Reg, funct3: u32, rd: Reg, opcode: u32) -> u32 {
    (((imm as u32) & 0xfff) << 20)
        | ((rs1.0 as u32) << 15)
        | (funct3 << 12)
        | ((rd.0 as u32) << 7)
        | opcode
}

/// Encodes an instruction into its 32-bit word.
pub fn encode(instr: &Instruction) -> Result<u32, IsaError> {
    let word = match *instr {
        Instruction::NnMac { cfg, rd, rs1, rs2 } => {
            r_type(cfg.funct7(), rs2, rs1, NN_MAC_FUNCT3, rd, OPCODE_CUSTOM0)
        }
        Instruction::Alu { op, rd, rs1, rs2 } => {
            let (funct7, funct3) = op.funct();
            r_type(funct7, rs2, rs1, funct3, rd, OPCODE_OP)
        }
        Instruction::Mul { rd, rs1, rs2 } => r_type(0b000_0001, rs2, rs1, 0b000, rd, OPCODE_OP),
        Instruction::AluImm { op, rd, rs1, imm } => {
            if op.is_shift() {
                if !(0..32).contains(&imm) {
                    return Err(IsaError::ImmediateOutOfRange {
                        field: "shamt",
                        value: imm as i64,
                    });
                }
                let hi = if op == AluImmOp::Srai { 0b010_0000 << 5 } else { 0 };
                i_type(hi | imm, rs1, op.funct3(), rd, OPCODE_OP_IMM)
            } else {
                check_signed("imm12", imm as i64, 12)?;
                i_type(imm, rs1, op.funct3(), rd, OPCODE_OP_IMM)
            }
        }
        Instruction::Lui { rd, imm } => {
            if imm >= 1 << 20 {
                return Err(IsaError::ImmediateOutOfRange {
                    field: "imm20",
                    value: imm as i64,
                });
            }
            (imm << 12) | ((rd.0 as u32) << 7) | OPCODE_LUI
        }
        Instruction::Load { rd, rs1, offset } => {
            check_signed("imm12", offset as i64, 12)?;
            i_type(offset, rs1, 0b010, rd, OPCODE_LOAD)
        }
        Instruction::Store { rs1, rs2, offset } => {
            check_signed("imm12", offset as i64, 12)?;
            let imm = offset as u32;
            (((imm >> 5) & 0x7f) << 25)
                | ((rs2.0 as u32) << 20)
                | ((rs1.0 as u32) << 15)
                | (0b010 << 12)
                | ((imm & 0x1f) << 7)
                | OPCODE_STORE
        }
        Instruction::Branch { cond, rs1, rs2, offset } => {
            check_signed("branch offset", offset as i64, 13)?;
            if offset & 1 != 0 {
                return Err(IsaError::ImmediateOutOfRange {
                    field: "branch offset",
                    value: offset as i64,
                });
            }
            let imm = offset as u32;
            (((imm >> 12) & 1) << 31)
                | (((imm >> 5) & 0x3f) << 25)
                | ((rs2.0 as u32) << 20)
                | ((rs1.0 as u32) << 15)
                | (cond.funct3() << 12)
                | (((imm >> 1) & 0xf) << 8)
                | (((imm >> 11) & 1) << 7)
                | OPCODE_BRANCH
        }
        Instruction::Jal { rd, offset } => {
            check_signed("jump offset", offset as i64, 21)?;
            if offset & 1 != 0 {
                return Err(IsaError::ImmediateOutOfRange {
                    field: "jump offset",
                    value: offset as i64,
                });
            }
            let imm = offset as u32;
            (((imm >> 20) & 1) << 31)
                | (((imm >> 1) & 0x3ff) << 21)
                | (((imm >> 11) & 1) << 20)
                | (((imm >> 12) & 0xff) << 12)
                | ((rd.0 as u32) << 7)
                | OPCODE_JAL
        }
        Instruction::Nop => NOP_WORD,
    };
    Ok(word)
}

fn sign_extend(value: u32, bits: u32) -> i32 {
    let shift = 32 - bits;
    ((value << shift) as i32) >> shift
}

/// Decodes a 32-bit word. `addi x0, x0, 0` decodes to [`Instruction::Nop`].
pub fn decode(word: u32) -> Result<Instruction, IsaError> {
    let unknown = || IsaError::UnknownInstruction(word);
    let opcode = word & 0x7f;
    let rd = Reg::field(word, 7);
    let rs1 = Reg::field(word, 15);
    let rs2 = Reg::field(word, 20);
    let funct3 = (word >> 12) & 0x7;
    let funct7 = word >> 25;

    let instr = match opcode {
        OPCODE_CUSTOM0 => {
            if funct3 != NN_MAC_FUNCT3 {
                return Err(unknown());
            }
            let cfg = PrecisionConfig::from_funct7(funct7).ok_or_else(unknown)?;
            Instruction::NnMac { cfg, rd, rs1, rs2 }
        }
        OPCODE_OP => {
            if funct7 == 0b000_0001 {
                if funct3 != 0 {
                    return Err(unknown());
                }
                Instruction::Mul { rd, rs1, rs2 }
            } else {
                let op = AluOp::ALL
                    .into_iter()
                    .find(|op| op.funct() == (funct7, funct3))
                    .ok_or_else(unknown)?;
                Instruction::Alu { op, rd, rs1, rs2 }
            }
        }
        OPCODE_OP_IMM => {
            if word == NOP_WORD {
                return Ok(Instruction::Nop);
            }
            let imm = sign_extend(word >> 20, 12);
            let op = match funct3 {
                0b000 => AluImmOp::Addi,
                0b010 => AluImmOp::Slti,
                0b011 => AluImmOp::Sltiu,
                0b100 => AluImmOp::Xori,
                0b110 => AluImmOp::Ori,
                0b111 => AluImmOp::Andi,
                0b001 if funct7 == 0 => AluImmOp::Slli,
                0b101 if funct7 == 0 => AluImmOp::Srli,
                0b101 if funct7 == 0b010_0000 => AluImmOp::Srai,
                _ => return Err(unknown()),
            };
            let imm = if op.is_shift() { ((word >> 20) & 0x1f) as i32 } else { imm };
            Instruction::AluImm { op, rd, rs1, imm }
        }
        OPCODE_LUI => Instruction::Lui { rd, imm: word >> 12 },
        OPCODE_LOAD => {
            if funct3 != 0b010 {
                return Err(unknown());
            }
            Instruction::Load { rd, rs1, offset: sign_extend(word >> 20, 12) }
        }
        OPCODE_STORE => {
            if funct3 != 0b010 {
                return Err(unknown());
            }
            let imm = ((word >> 25) << 5) | ((word >> 7) & 0x1f);
            Instruction::Store { rs1, rs2, offset: sign_extend(imm, 12) }
        }
        OPCODE_BRANCH => {
            let cond = BranchCond::from_funct3(funct3).ok_or_else(unknown)?;
            let imm = (((word >> 31) & 1) << 12)
                | (((word >> 7) & 1) << 11)
                | (((word >> 25) & 0x3f) << 5)
                | (((word >> 8) & 0xf) << 1);
            Instruction::Branch { cond, rs1, rs2, offset: sign_extend(imm, 13) }
        }
        OPCODE_JAL => {
            let imm = (((word >> 31) & 1) << 20)
                | (((word >> 12) & 0xff) << 12)
                | (((word >> 20) & 1) << 11)
                | (((word >> 21) & 0x3ff) << 1);
            Instruction::Jal { rd, offset: sign_extend(imm, 21) }
        }
        _ => return Err(unknown()),
    };
    Ok(instr)
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instruction::NnMac { cfg, rd, rs1, rs2 } => {
                write!(f, "{} {rd}, {rs1}, {rs2}", cfg.mnemonic())
            }
            Instruction::Alu { op, rd, rs1, rs2 } => {
                write!(f, "{} {rd}, {rs1}, {rs2}", op.mnemonic())
            }
            Instruction::AluImm { op, rd, rs1, imm } => {
                write!(f, "{} {rd}, {rs1}, {imm}", op.mnemonic())
            }
            Instruction::Lui { rd, imm } => write!(f, "lui {rd}, {imm:#x}"),
            Instruction::Mul { rd, rs1, rs2 } => write!(f, "mul {rd}, {rs1}, {rs2}"),
            Instruction::Load { rd, rs1, offset } => write!(f, "lw {rd}, {offset}({rs1})"),
            Instruction::Store { rs1, rs2, offset } => write!(f, "sw {rs2}, {offset}({rs1})"),
            Instruction::Branch { cond, rs1, rs2, offset } => {
                write!(f, "{} {rs1}, {rs2}, {offset}", cond.mnemonic())
            }
            Instruction::Jal { rd, offset } => write!(f, "jal {rd}, {offset}"),
            Instruction::Nop => f.write_str("nop"),
        }
    }
}

/// Renders a word as assembly text; undecodable words become `.word 0x...`.
pub fn disassemble(word: u32) -> String {
    match decode(word) {
        Ok(instr) => instr.to_string(),
        Err(_) => format!(".word {word:#010x}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(i: u8) -> Reg {
        Reg::x(i)
    }

    #[test]
    fn encodes_w2a2_example() {
        let cfg = PrecisionConfig::new(BitWidth::B2, BitWidth::B2);
        let word = encode(&Instruction::nn_mac(cfg, x(10), x(11), x(12))).unwrap();
        assert_eq!(word, 0x00C5_A50B);
    }

    #[test]
    fn w8a8_fields() {
        let cfg = PrecisionConfig::from_bits(8, 8).unwrap();
        assert_eq!(cfg.funct7(), 0b000_1010);
        let word = encode(&Instruction::nn_mac(cfg, x(1), x(2), x(3))).unwrap();
        assert_eq!(word >> 25, 0b000_1010);
        assert_eq!((word >> 12) & 7, 0b010);
    }

    #[test]
    fn decodes_example_words() {
        let instr = decode(0x00C5_A50B).unwrap();
        assert_eq!(
            instr,
            Instruction::nn_mac(PrecisionConfig::from_bits(2, 2).unwrap(), x(10), x(11), x(12))
        );
        let word = r_type(0b000_0110, x(3), x(2), 0b010, x(1), OPCODE_CUSTOM0);
        match decode(word).unwrap() {
            Instruction::NnMac { cfg, .. } => assert_eq!(cfg, PrecisionConfig::from_bits(8, 4).unwrap()),
            other => panic!("decoded {other:?}"),
        }
    }

    #[test]
    fn rejects_unlisted_funct7() {
        let word = r_type(0b111_1111, x(3), x(2), 0b010, x(1), OPCODE_CUSTOM0);
        assert_eq!(decode(word), Err(IsaError::UnknownInstruction(word)));
        // funct7 = 0b0001011 would name an 8-bit weight with a "11" activation code.
        let word = r_type(0b000_1110, x(3), x(2), 0b010, x(1), OPCODE_CUSTOM0);
        assert!(decode(word).is_err());
        let word = r_type(0b000_1010, x(3), x(2), 0b011, x(1), OPCODE_CUSTOM0);
        assert!(decode(word).is_err());
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(Reg::new(32), Err(IsaError::InvalidRegister(32)));
        assert!(matches!(
            PrecisionConfig::from_bits(16, 8),
            Err(IsaError::InvalidConfig { weight: 16, activation: 8 })
        ));
        let bad = Instruction::Load { rd: x(1), rs1: x(2), offset: 4096 };
        assert!(matches!(encode(&bad), Err(IsaError::ImmediateOutOfRange { .. })));
    }

    #[test]
    fn disassembly() {
        assert_eq!(disassemble(0x00C5_A50B), "nn_mac_w2a2 x10, x11, x12");
        let lw = encode(&Instruction::Load { rd: x(5), rs1: x(6), offset: 0 }).unwrap();
        assert_eq!(disassemble(lw), "lw x5, 0(x6)");
        assert_eq!(disassemble(0xFFFF_FFFF), ".word 0xffffffff");
        assert_eq!(disassemble(NOP_WORD), "nop");
        let sw = encode(&Instruction::Store { rs1: x(2), rs2: x(8), offset: -12 }).unwrap();
        assert_eq!(disassemble(sw), "sw x8, -12(x2)");
    }

    #[test]
    fn funct7_law_matches_table() {
        // (weight bits, activation bits, funct7) rows of the encoding table.
        let table = [
            (8, 8, 0b000_1010),
            (8, 4, 0b000_0110),
            (8, 2, 0b000_0010),
            (4, 8, 0b000_1001),
            (4, 4, 0b000_0101),
            (4, 2, 0b000_0001),
            (2, 8, 0b000_1000),
            (2, 4, 0b000_0100),
            (2, 2, 0b000_0000),
        ];
        for (w, a, funct7) in table {
            let cfg = PrecisionConfig::from_bits(w, a).unwrap();
            assert_eq!(cfg.funct7(), funct7, "{cfg}");
            assert_eq!(PrecisionConfig::from_funct7(funct7), Some(cfg));
        }
    }

    #[test]
    fn mode_follows_weight_width() {
        for cfg in PrecisionConfig::all() {
            let expected = match cfg.weight.bits() {
                8 => Mode::Mode1,
                4 => Mode::Mode2,
                _ => Mode::Mode3,
            };
            assert_eq!(cfg.mode(), expected);
            assert_eq!(PrecisionConfig::parse_label(&cfg.label()), Some(cfg));
        }
    }

    #[test]
    fn branch_and_jump_offsets_roundtrip() {
        for offset in [-4096, -2, 0, 2, 4094] {
            let b = Instruction::Branch { cond: BranchCond::Ne, rs1: x(1), rs2: x(2), offset };
            assert_eq!(decode(encode(&b).unwrap()).unwrap(), b);
        }
        for offset in [-(1 << 20), -8, 0, 8, (1 << 20) - 2] {
            let j = Instruction::Jal { rd: x(0), offset };
            assert_eq!(decode(encode(&j).unwrap()).unwrap(), j);
        }
    }
}
