//! Small assembler used by the kernel generators: labels, long-range
//! pseudo-instructions, register pool and layer markers.

use thiserror::Error;

use crate::isa::{AluImmOp, AluOp, BranchCond, Instruction, IsaError, PrecisionConfig, Reg};
use crate::sim::LayerMarker;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("out of registers")]
    OutOfRegisters,
    #[error("forward branch to label {0} out of range")]
    BranchRange(usize),
    #[error("label {0} never bound")]
    UnboundLabel(usize),
    #[error(transparent)]
    Isa(#[from] IsaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Label(usize);

#[derive(Debug, Clone)]
enum Item {
    Instr(Instruction),
    Forward { cond: BranchCond, rs1: Reg, rs2: Reg, label: Label },
}

pub fn fits_imm12(v: i64) -> bool {
    (-2048..=2047).contains(&v)
}

#[derive(Debug, Default)]
pub struct Asm {
    items: Vec<Item>,
    labels: Vec<Option<usize>>,
    markers: Vec<LayerMarker>,
    open: Option<(String, u64, usize)>,
}

impl Asm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the next instruction.
    pub fn here(&self) -> usize {
        self.items.len()
    }

    pub fn label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    pub fn bind(&mut self, l: Label) {
        self.labels[l.0] = Some(self.here());
    }

    /// A label bound to the current position.
    pub fn mark(&mut self) -> Label {
        let l = self.label();
        self.bind(l);
        l
    }

    pub fn emit(&mut self, i: Instruction) {
        self.items.push(Item::Instr(i));
    }

    pub fn begin_layer(&mut self, name: impl Into<String>, macs: u64) {
        self.open = Some((name.into(), macs, self.here()));
    }

    pub fn end_layer(&mut self) {
        if let Some((name, macs, start)) = self.open.take() {
            self.markers.push(LayerMarker { name, start: start as u32, end: self.here() as u32, macs });
        }
    }

    pub fn li(&mut self, rd: Reg, value: i32) {
        let v = value as i64;
        if fits_imm12(v) {
            self.addi(rd, Reg::ZERO, value);
            return;
        }
        let lo = ((value << 20) >> 20) as i64;
        let hi = (((v - lo) >> 12) as u32) & 0xFFFFF;
        self.emit(Instruction::Lui { rd, imm: hi });
        if lo != 0 {
            self.addi(rd, rd, lo as i32);
        }
    }

    pub fn addi(&mut self, rd: Reg, rs1: Reg, imm: i32) {
        self.emit(Instruction::AluImm { op: AluImmOp::Addi, rd, rs1, imm });
    }

    /// `rd = rs1 + imm` for any immediate; `scratch` is clobbered when the
    /// immediate needs more than 12 bits and must differ from `rs1`.
    pub fn add_imm(&mut self, rd: Reg, rs1: Reg, imm: i64, scratch: Reg) {
        if imm == 0 && rd == rs1 {
            return;
        }
        if fits_imm12(imm) {
            self.addi(rd, rs1, imm as i32);
        } else {
            self.li(scratch, imm as i32);
            self.alu(AluOp::Add, rd, rs1, scratch);
        }
    }

    pub fn mv(&mut self, rd: Reg, rs: Reg) {
        if rd != rs {
            self.addi(rd, rs, 0);
        }
    }

    pub fn alu(&mut self, op: AluOp, rd: Reg, rs1: Reg, rs2: Reg) {
        self.emit(Instruction::Alu { op, rd, rs1, rs2 });
    }

    pub fn alu_imm(&mut self, op: AluImmOp, rd: Reg, rs1: Reg, imm: i32) {
        self.emit(Instruction::AluImm { op, rd, rs1, imm });
    }

    pub fn mul(&mut self, rd: Reg, rs1: Reg, rs2: Reg) {
        self.emit(Instruction::Mul { rd, rs1, rs2 });
    }

    pub fn lw(&mut self, rd: Reg, rs1: Reg, offset: i32) {
        debug_assert!(fits_imm12(offset as i64));
        self.emit(Instruction::Load { rd, rs1, offset });
    }

    pub fn sw(&mut self, rs2: Reg, rs1: Reg, offset: i32) {
        debug_assert!(fits_imm12(offset as i64));
        self.emit(Instruction::Store { rs1, rs2, offset });
    }

    pub fn nn_mac(&mut self, cfg: PrecisionConfig, rd: Reg, act: Reg, weight: Reg) {
        self.emit(Instruction::nn_mac(cfg, rd, act, weight));
    }

    /// Branch to an already bound label, falling back to an inverted branch
    /// around a `jal` when the target is beyond the 13-bit range.
    pub fn branch_back(&mut self, cond: BranchCond, rs1: Reg, rs2: Reg, target: Label) {
        let t = self.labels[target.0].expect("backward branch target bound") as i64;
        let off = (t - self.here() as i64) * 4;
        if (-4096..=4094).contains(&off) {
            self.emit(Instruction::Branch { cond, rs1, rs2, offset: off as i32 });
        } else {
            self.emit(Instruction::Branch { cond: invert(cond), rs1, rs2, offset: 8 });
            let off = (t - self.here() as i64) * 4;
            self.emit(Instruction::Jal { rd: Reg::ZERO, offset: off as i32 });
        }
    }

    pub fn branch_fwd(&mut self, cond: BranchCond, rs1: Reg, rs2: Reg, label: Label) {
        self.items.push(Item::Forward { cond, rs1, rs2, label });
    }

    pub fn finish(mut self) -> Result<(Vec<Instruction>, Vec<LayerMarker>), AsmError> {
        self.end_layer();
        let labels = self.labels;
        let code = self
            .items
            .into_iter()
            .enumerate()
            .map(|(pc, item)| match item {
                Item::Instr(i) => Ok(i),
                Item::Forward { cond, rs1, rs2, label } => {
                    let t = labels[label.0].ok_or(AsmError::UnboundLabel(label.0))? as i64;
                    let off = (t - pc as i64) * 4;
                    if !(-4096..=4094).contains(&off) {
                        return Err(AsmError::BranchRange(label.0));
                    }
                    Ok(Instruction::Branch { cond, rs1, rs2, offset: off as i32 })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((code, self.markers))
    }
}

fn invert(c: BranchCond) -> BranchCond {
    match c {
        BranchCond::Eq => BranchCond::Ne,
        BranchCond::Ne => BranchCond::Eq,
        BranchCond::Lt => BranchCond::Ge,
        BranchCond::Ge => BranchCond::Lt,
        BranchCond::Ltu => BranchCond::Geu,
        BranchCond::Geu => BranchCond::Ltu,
    }
}

/// Allocator over `x1..x31`.
#[derive(Debug, Clone)]
pub struct RegPool {
    free: Vec<Reg>,
}

impl Default for RegPool {
    fn default() -> Self {
        Self { free: (1..32).rev().map(Reg::x).collect() }
    }
}

impl RegPool {
    pub fn alloc(&mut self) -> Result<Reg, AsmError> {
        self.free.pop().ok_or(AsmError::OutOfRegisters)
    }

    pub fn alloc_n(&mut self, n: usize) -> Result<Vec<Reg>, AsmError> {
        (0..n).map(|_| self.alloc()).collect()
    }

    pub fn available(&self) -> usize {
        self.free.len()
    }
}

/// Straight-line addressing relative to a base register. Offsets that do
/// not fit a 12-bit immediate rebase a work register first.
#[derive(Debug, Clone, Copy)]
pub struct Cursor {
    origin: Reg,
    work: Reg,
    current: Reg,
    current_off: i64,
}

impl Cursor {
    pub fn new(origin: Reg, work: Reg) -> Self {
        Self { origin, work, current: origin, current_off: 0 }
    }

    /// Forget any rebase, e.g. at the start of a loop body.
    pub fn reset(&mut self) {
        self.current = self.origin;
        self.current_off = 0;
    }

    /// Base register and immediate addressing `origin + offset`.
    pub fn at(&mut self, asm: &mut Asm, offset: i64) -> (Reg, i32) {
        let delta = offset - self.current_off;
        if fits_imm12(delta) {
            return (self.current, delta as i32);
        }
        // land the new base near the middle of the immediate window
        let base = offset + 2000;
        if fits_imm12(base) {
            asm.addi(self.work, self.origin, base as i32);
        } else {
            asm.li(self.work, base as i32);
            if self.origin != Reg::ZERO {
                asm.alu(AluOp::Add, self.work, self.work, self.origin);
            }
        }
        self.current = self.work;
        self.current_off = base;
        (self.current, (offset - base) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run, CycleModel, MachineState, Program};

    fn exec(asm: Asm, state: &mut MachineState) {
        let (code, _) = asm.finish().unwrap();
        let p = Program::from_instructions(&code).unwrap();
        run(&p, state, &CycleModel::default()).unwrap();
    }

    #[test]
    fn li_values() {
        for v in [0, 1, -1, 2047, -2048, 2048, 0x7FFF_FFFF, i32::MIN, 0x1234_5800, -0x800, 0xFFF] {
            let mut a = Asm::new();
            a.li(Reg::x(5), v);
            let mut s = MachineState::new(0);
            exec(a, &mut s);
            assert_eq!(s.reg(5) as i32, v, "{v:#x}");
        }
    }

    #[test]
    fn long_backward_branch() {
        let mut a = Asm::new();
        let r = Reg::x(1);
        a.li(r, 2);
        let top = a.mark();
        for _ in 0..1500 {
            a.emit(Instruction::Nop);
        }
        a.addi(r, r, -1);
        a.branch_back(BranchCond::Ne, r, Reg::ZERO, top);
        let mut s = MachineState::new(0);
        exec(a, &mut s);
        assert_eq!(s.reg(1), 0);
    }

    #[test]
    fn cursor_rebases() {
        let mut a = Asm::new();
        let (o, w) = (Reg::x(1), Reg::x(2));
        a.li(o, 16);
        let mut c = Cursor::new(o, w);
        for off in [0i64, 4000, 8, 12_000] {
            let (base, imm) = c.at(&mut a, off);
            a.li(Reg::x(3), off as i32);
            a.sw(Reg::x(3), base, imm);
        }
        let mut s = MachineState::new(16 + 12_004);
        exec(a, &mut s);
        for off in [0u32, 4000, 8, 12_000] {
            assert_eq!(s.read_word(16 + off).unwrap(), off);
        }
    }
}
