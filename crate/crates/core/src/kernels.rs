//! Instruction-stream generators for network layers.
//!
//! Two styles exist. The scalar baseline keeps every weight and activation
//! in its own 32-bit word and multiplies with `mul` one element at a time.
//! The packed style stores activations and weights as lanes of 32-bit words
//! and reduces with `nn_mac`.
//!
//! Feature maps live in memory as HWC with a zero border of `pad` pixels
//! that the producer never writes. In packed buffers each pixel occupies
//! `ceil(c / lanes)` words and unused lanes stay zero.
//!
//! Packed convolutions are output-stationary: a block of `U` neighbouring
//! output columns shares the activation words loaded for its windows, every
//! output channel is unrolled, and pruned channels are simply not emitted.
//! When one operand has more lanes than the instruction pairs, the wider
//! word is shifted right so that its next group of lanes lands in the
//! paired positions.

use thiserror::Error;

use crate::asm::{Asm, AsmError, Cursor, RegPool};
use crate::datapath::{lane_range, pack, PackedWord, Signedness};
use crate::isa::{AluImmOp, AluOp, BitWidth, BranchCond, Reg};
use crate::network::{validate_chain, LayerKind, Shape, ShapeError};
use crate::quant::{QuantLayer, QuantNetwork};
use crate::sim::{run_with, CycleModel, ExecutionReport, MachineState, Program, SimError, SimOptions};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, KernelError> {
    Err(KernelError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelStyle {
    /// One 32-bit word per value, `mul` + `add` per MAC.
    Baseline,
    /// Packed lanes reduced with `nn_mac`.
    Packed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelOptions {
    /// Output columns computed together by packed convolutions.
    pub block: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self { block: 2 }
    }
}

/// A feature map placed in data memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorBuf {
    pub addr: u32,
    pub shape: Shape,
    pub pad: usize,
    /// Lane width, or `None` for one 32-bit word per value.
    pub bits: Option<BitWidth>,
}

impl TensorBuf {
    pub fn lanes(&self) -> usize {
        self.bits.map_or(1, |b| b.lanes())
    }

    pub fn words_per_pixel(&self) -> usize {
        self.shape.c.div_ceil(self.lanes())
    }

    pub fn pixel_bytes(&self) -> i64 {
        4 * self.words_per_pixel() as i64
    }

    pub fn row_bytes(&self) -> i64 {
        (self.shape.w + 2 * self.pad) as i64 * self.pixel_bytes()
    }

    pub fn byte_len(&self) -> usize {
        (self.shape.h + 2 * self.pad) * self.row_bytes() as usize
    }

    /// Byte offset of pixel `(y, x)` from `addr`; negative coordinates
    /// reach into the border.
    pub fn offset(&self, y: isize, x: isize) -> i64 {
        let p = self.pad as isize;
        (y + p) as i64 * self.row_bytes() + (x + p) as i64 * self.pixel_bytes()
    }

    fn word_index(&self, y: usize, x: usize, c: usize) -> (usize, usize) {
        let off = self.offset(y as isize, x as isize) as usize / 4;
        (off + c / self.lanes(), c % self.lanes())
    }

    /// Memory image of the whole buffer (border included).
    pub fn encode(&self, values: &[i32]) -> Result<Vec<u32>, KernelError> {
        if values.len() != self.shape.len() {
            return Err(ShapeError(format!("{} values for tensor {}", values.len(), self.shape)).into());
        }
        let mut words = vec![0u32; self.byte_len() / 4];
        let mut lanes: Vec<Vec<i32>> = vec![Vec::new(); words.len()];
        for y in 0..self.shape.h {
            for x in 0..self.shape.w {
                for c in 0..self.shape.c {
                    let v = values[self.shape.index(y, x, c)];
                    let (wi, lane) = self.word_index(y, x, c);
                    match self.bits {
                        None => words[wi] = v as u32,
                        Some(_) => {
                            let l = &mut lanes[wi];
                            l.resize(lane + 1, 0);
                            l[lane] = v;
                        }
                    }
                }
            }
        }
        if let Some(bits) = self.bits {
            for (w, l) in words.iter_mut().zip(&lanes) {
                if !l.is_empty() {
                    *w = pack(l, bits, Signedness::Unsigned).map_err(|e| KernelError::Config(e.to_string()))?.raw;
                }
            }
        }
        Ok(words)
    }

    /// Interior values from a memory image of the buffer.
    pub fn decode(&self, words: &[u32]) -> Vec<i32> {
        let mut out = vec![0i32; self.shape.len()];
        for y in 0..self.shape.h {
            for x in 0..self.shape.w {
                for c in 0..self.shape.c {
                    let (wi, lane) = self.word_index(y, x, c);
                    out[self.shape.index(y, x, c)] = match self.bits {
                        None => words[wi] as i32,
                        Some(b) => PackedWord::new(words[wi], b, Signedness::Unsigned).lane(lane),
                    };
                }
            }
        }
        out
    }
}

/// A program plus where its operands and result live.
#[derive(Debug, Clone)]
pub struct CompiledProgram {
    pub program: Program,
    pub inputs: Vec<TensorBuf>,
    pub output: TensorBuf,
}

impl CompiledProgram {
    pub fn state_with_inputs(&self, inputs: &[&[i32]]) -> Result<MachineState, KernelError> {
        if inputs.len() != self.inputs.len() {
            return config_err(format!("{} inputs supplied, {} expected", inputs.len(), self.inputs.len()));
        }
        let mut state = self.program.initial_state()?;
        for (buf, vals) in self.inputs.iter().zip(inputs) {
            state.write_words(buf.addr, &buf.encode(vals)?)?;
        }
        Ok(state)
    }

    pub fn read_output(&self, state: &MachineState) -> Result<Vec<i32>, KernelError> {
        let words = state.read_words(self.output.addr, self.output.byte_len() / 4)?;
        Ok(self.output.decode(&words))
    }

    /// Runs the program on fresh memory and returns the decoded output.
    pub fn execute(&self, inputs: &[&[i32]], model: &CycleModel) -> Result<(Vec<i32>, ExecutionReport), KernelError> {
        self.execute_with(inputs, model, SimOptions::default())
    }

    pub fn execute_with(
        &self,
        inputs: &[&[i32]],
        model: &CycleModel,
        options: SimOptions,
    ) -> Result<(Vec<i32>, ExecutionReport), KernelError> {
        let mut state = self.state_with_inputs(inputs)?;
        let report = run_with(&self.program, &mut state, model, options)?;
        Ok((self.read_output(&state)?, report))
    }
}

/// Memory the generator of one layer works on.
#[derive(Debug, Clone, Copy)]
struct LayerIo {
    input: TensorBuf,
    skip: Option<TensorBuf>,
    output: TensorBuf,
    params: u32,
}

fn tensor_bits(style: KernelStyle, bits: Option<BitWidth>) -> Option<BitWidth> {
    match style {
        KernelStyle::Baseline => None,
        KernelStyle::Packed => bits,
    }
}

fn check_layer(layer: &QuantLayer) -> Result<(), KernelError> {
    layer.spec.validate()?;
    let spec = &layer.spec;
    if spec.is_mac() {
        let cfg = layer.cfg.ok_or_else(|| KernelError::Config("weighted layer without precision".into()))?;
        if cfg.activation != layer.in_bits {
            return config_err("input width differs from the activation width of the layer");
        }
        if layer.weights.len() != spec.weight_count() || layer.bias.len() != spec.out_channels {
            return Err(ShapeError("parameter count mismatch".into()).into());
        }
        let (lo, hi) = lane_range(cfg.weight, Signedness::Signed);
        if layer.weights.iter().any(|&w| w < lo || w > hi) {
            return config_err(format!("weights exceed {}-bit lanes", cfg.weight.bits()));
        }
        let per = spec.weights_per_channel();
        for &c in &layer.pruned {
            if c >= spec.out_channels || layer.bias[c] != 0 || layer.weights[c * per..(c + 1) * per].iter().any(|&w| w != 0)
            {
                return config_err(format!("pruned channel {c} is not zero"));
            }
        }
    } else if layer.out_bits != Some(layer.in_bits) {
        return config_err(format!("{:?} must keep its input width", spec.kind));
    }
    if layer.requant_shift > 31 {
        return config_err("requantization shift above 31");
    }
    Ok(())
}

/// Number of parameter words a layer stores.
fn param_words(layer: &QuantLayer, style: KernelStyle) -> usize {
    let spec = &layer.spec;
    let Some(cfg) = layer.cfg else { return 0 };
    let bias = spec.out_channels;
    match (style, spec.kind) {
        (KernelStyle::Baseline, _) => spec.weight_count() + bias,
        (KernelStyle::Packed, LayerKind::DepthwiseConv2d) => spec.weight_count() + bias,
        (KernelStyle::Packed, _) => {
            let gw = spec.in_channels.div_ceil(cfg.weight.lanes());
            spec.out_channels * spec.kernel_h * spec.kernel_w * gw + bias
        }
    }
}

/// Parameter memory image: weights, then the biases.
fn param_image(layer: &QuantLayer, style: KernelStyle) -> Result<Vec<u32>, KernelError> {
    let spec = &layer.spec;
    let Some(cfg) = layer.cfg else { return Ok(vec![]) };
    let mut out = Vec::with_capacity(param_words(layer, style));
    let pack_err = |e: crate::datapath::DatapathError| KernelError::Config(e.to_string());
    match (style, spec.kind) {
        (KernelStyle::Baseline, _) => out.extend(layer.weights.iter().map(|&w| w as u32)),
        (KernelStyle::Packed, LayerKind::DepthwiseConv2d) => {
            let p = cfg.products_per_instruction();
            let mut lanes = vec![0i32; cfg.weight.lanes()];
            for (i, &w) in layer.weights.iter().enumerate() {
                let c = i / (spec.kernel_h * spec.kernel_w);
                lanes.fill(0);
                lanes[c % p] = w;
                out.push(pack(&lanes, cfg.weight, Signedness::Signed).map_err(pack_err)?.raw);
            }
        }
        (KernelStyle::Packed, _) => {
            let ci = spec.in_channels;
            for row in layer.weights.chunks(ci) {
                for chunk in row.chunks(cfg.weight.lanes()) {
                    out.push(pack(chunk, cfg.weight, Signedness::Signed).map_err(pack_err)?.raw);
                }
            }
        }
    }
    out.extend(layer.bias.iter().map(|&b| b as u32));
    Ok(out)
}

/// Registers shared by all loop nests.
struct Frame {
    in_row: Reg,
    out_row: Reg,
    inp: Reg,
    out: Reg,
    ho: Reg,
    wo: Reg,
    t0: Reg,
    t1: Reg,
}

impl Frame {
    fn new(pool: &mut RegPool) -> Result<Self, AsmError> {
        Ok(Self {
            in_row: pool.alloc()?,
            out_row: pool.alloc()?,
            inp: pool.alloc()?,
            out: pool.alloc()?,
            ho: pool.alloc()?,
            wo: pool.alloc()?,
            t0: pool.alloc()?,
            t1: pool.alloc()?,
        })
    }
}

/// Emits `for oy { for block of up to `block` columns { body } }` over the
/// output map. `body(asm, cols)` generates one block; `inp` points at the
/// first input window of the block and `out` at its first output pixel.
fn output_loops(
    asm: &mut Asm,
    f: &Frame,
    io: &LayerIo,
    out_hw: (usize, usize),
    stride: usize,
    window_origin: i64,
    block: usize,
    mut body: impl FnMut(&mut Asm, usize) -> Result<(), KernelError>,
) -> Result<(), KernelError> {
    let (ho, wo) = out_hw;
    let block = block.clamp(1, wo);
    let (full, rem) = (wo / block, wo % block);
    asm.li(f.in_row, (io.input.addr as i64 + window_origin) as i32);
    asm.li(f.out_row, (io.output.addr as i64 + io.output.offset(0, 0)) as i32);
    if ho > 1 {
        asm.li(f.ho, ho as i32);
    }
    let ho_top = asm.mark();
    asm.mv(f.inp, f.in_row);
    asm.mv(f.out, f.out_row);
    if full > 0 {
        if full > 1 {
            asm.li(f.wo, full as i32);
        }
        let wo_top = asm.mark();
        body(asm, block)?;
        if full > 1 || rem > 0 {
            asm.add_imm(f.inp, f.inp, block as i64 * stride as i64 * io.input.pixel_bytes(), f.t0);
            asm.add_imm(f.out, f.out, block as i64 * io.output.pixel_bytes(), f.t0);
        }
        if full > 1 {
            asm.addi(f.wo, f.wo, -1);
            asm.branch_back(BranchCond::Ne, f.wo, Reg::ZERO, wo_top);
        }
    }
    if rem > 0 {
        body(asm, rem)?;
    }
    if ho > 1 {
        asm.add_imm(f.in_row, f.in_row, stride as i64 * io.input.row_bytes(), f.t0);
        asm.add_imm(f.out_row, f.out_row, io.output.row_bytes(), f.t0);
        asm.addi(f.ho, f.ho, -1);
        asm.branch_back(BranchCond::Ne, f.ho, Reg::ZERO, ho_top);
    }
    Ok(())
}

/// `t0 = clamp(round(acc / 2^shift), 0, max)` with `max` held in `rmax`.
fn emit_requant(asm: &mut Asm, acc: Reg, shift: u32, rmax: Reg, t0: Reg, t1: Reg) {
    let src = if shift > 0 {
        asm.alu_imm(AluImmOp::Srai, t1, acc, shift as i32 - 1);
        asm.addi(t1, t1, 1);
        asm.alu_imm(AluImmOp::Srai, t0, t1, 1);
        t0
    } else {
        acc
    };
    asm.alu_imm(AluImmOp::Srai, t1, src, 31);
    asm.alu_imm(AluImmOp::Xori, t1, t1, -1);
    asm.alu(AluOp::And, t0, src, t1);
    asm.alu(AluOp::Sltu, t1, rmax, t0);
    asm.alu(AluOp::Sub, t1, Reg::ZERO, t1);
    asm.alu(AluOp::Or, t0, t0, t1);
    asm.alu(AluOp::And, t0, t0, rmax);
}

/// Collects output lanes into words and stores each finished word.
struct LanePacker {
    bits: BitWidth,
    channels: usize,
    started: Vec<bool>,
}

impl LanePacker {
    fn new(bits: BitWidth, channels: usize, slots: usize) -> Self {
        Self { bits, channels, started: vec![false; slots] }
    }

    /// Inserts `value` (clobbered) as channel `c` of slot `slot`.
    fn insert(&mut self, asm: &mut Asm, slot: usize, packed: Reg, value: Reg, c: usize) {
        let lane = c % self.bits.lanes();
        let sh = (lane as u32 * self.bits.bits()) as i32;
        if !self.started[slot] {
            if sh == 0 {
                asm.mv(packed, value);
            } else {
                asm.alu_imm(AluImmOp::Slli, packed, value, sh);
            }
            self.started[slot] = true;
        } else {
            if sh > 0 {
                asm.alu_imm(AluImmOp::Slli, value, value, sh);
            }
            asm.alu(AluOp::Or, packed, packed, value);
        }
    }

    /// Whether channel `c` closes a word.
    fn closes(&self, c: usize) -> bool {
        c % self.bits.lanes() == self.bits.lanes() - 1 || c + 1 == self.channels
    }

    fn store(&mut self, asm: &mut Asm, slot: usize, packed: Reg, base: Reg, offset: i32) {
        let src = if self.started[slot] { packed } else { Reg::ZERO };
        asm.sw(src, base, offset);
        self.started[slot] = false;
    }
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn gen_conv_packed(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo, opts: &KernelOptions) -> Result<(), KernelError> {
    let spec = &layer.spec;
    let cfg = layer.cfg.expect("checked");
    let (a_bits, w_bits) = (cfg.activation, cfg.weight);
    let (la, lw, p) = (a_bits.lanes(), w_bits.lanes(), cfg.products_per_instruction());
    let (kh, kw, s, ci, co_n) = (spec.kernel_h, spec.kernel_w, spec.stride, spec.in_channels, spec.out_channels);
    let ga = ceil_div(ci, la);
    let gw = ceil_div(ci, lw);
    let wide_act = la >= lw;
    let os = spec.out_shape();
    let bias_addr = io.params as i64 + 4 * (co_n * kh * kw * gw) as i64;
    let weight_addr = |co: usize, y: usize, x: usize, j: usize| -> i64 {
        io.params as i64 + 4 * ((((co * kh + y) * kw + x) * gw) + j) as i64
    };

    // pick the widest block whose registers fit
    let mut block = opts.block.clamp(1, os.w);
    let requant = layer.out_bits.is_some();
    loop {
        let cols = if block == 1 { 1 } else { (block - 1) * s + kw };
        let wregs = if wide_act || block == 1 { 1 } else { kw };
        let need = 8 + 2 + requant as usize + block * (1 + requant as usize) + cols + wregs + 1;
        if need <= 31 || block == 1 {
            break;
        }
        block -= 1;
    }

    let mut pool = RegPool::default();
    let f = Frame::new(&mut pool)?;
    let wptr = pool.alloc()?;
    let aptr = pool.alloc()?;
    let optr = pool.alloc()?;
    let rmax = if requant { Some(pool.alloc()?) } else { None };
    let acc = pool.alloc_n(block)?;
    let packed = if requant { pool.alloc_n(block)? } else { vec![] };
    let max_cols = if block == 1 { 1 } else { (block - 1) * s + kw };
    let acts = pool.alloc_n(max_cols)?;
    let wregs = pool.alloc_n(if wide_act || block == 1 { 1 } else { kw })?;

    if let (Some(r), Some(b)) = (rmax, layer.out_bits) {
        asm.li(r, (1i32 << b.bits()) - 1);
    }
    let pad = spec.padding as isize;
    let origin = io.input.offset(-pad, -pad);
    let in_row = io.input.row_bytes();
    let in_pix = io.input.pixel_bytes();
    let out_pix = io.output.pixel_bytes();

    output_loops(asm, &f, io, (os.h, os.w), s, origin, block, |asm, u_n| {
        let mut wcur = Cursor::new(Reg::ZERO, wptr);
        let mut acur = Cursor::new(f.inp, aptr);
        let mut ocur = Cursor::new(f.out, optr);
        let cols = if u_n == 1 { 1 } else { (u_n - 1) * s + kw };
        let used: Vec<bool> = (0..cols).map(|c| u_n == 1 || (0..u_n).any(|u| c >= u * s && c - u * s < kw)).collect();
        let act_off = |y: usize, c: usize, j: usize| y as i64 * in_row + c as i64 * in_pix + 4 * j as i64;
        let mut packer = layer.out_bits.map(|b| LanePacker::new(b, co_n, u_n));

        for co in 0..co_n {
            if !layer.is_pruned(co) {
                let (r, off) = wcur.at(asm, bias_addr + 4 * co as i64);
                asm.lw(acc[0], r, off);
                for u in 1..u_n {
                    asm.mv(acc[u], acc[0]);
                }
                for y in 0..kh {
                    if wide_act {
                        for j in 0..ga {
                            let n_sub = (la / p).min(ceil_div(ci - j * la, p));
                            let ratio = la / lw;
                            if u_n == 1 {
                                for x in 0..kw {
                                    let (r, off) = acur.at(asm, act_off(y, x, j));
                                    asm.lw(acts[0], r, off);
                                    for sub in 0..n_sub {
                                        if sub > 0 {
                                            asm.alu_imm(AluImmOp::Srli, acts[0], acts[0], (p as u32 * a_bits.bits()) as i32);
                                        }
                                        let (r, off) = wcur.at(asm, weight_addr(co, y, x, j * ratio + sub));
                                        asm.lw(wregs[0], r, off);
                                        asm.nn_mac(cfg, acc[0], acts[0], wregs[0]);
                                    }
                                }
                            } else {
                                for c in (0..cols).filter(|&c| used[c]) {
                                    let (r, off) = acur.at(asm, act_off(y, c, j));
                                    asm.lw(acts[c], r, off);
                                }
                                for sub in 0..n_sub {
                                    if sub > 0 {
                                        for c in (0..cols).filter(|&c| used[c]) {
                                            asm.alu_imm(AluImmOp::Srli, acts[c], acts[c], (p as u32 * a_bits.bits()) as i32);
                                        }
                                    }
                                    for x in 0..kw {
                                        let (r, off) = wcur.at(asm, weight_addr(co, y, x, j * ratio + sub));
                                        asm.lw(wregs[0], r, off);
                                        for u in 0..u_n {
                                            asm.nn_mac(cfg, acc[u], acts[u * s + x], wregs[0]);
                                        }
                                    }
                                }
                            }
                        }
                    } else {
                        let ratio = lw / la;
                        for jw in 0..gw {
                            let n_sub = (lw / p).min(ceil_div(ci - jw * lw, p));
                            if u_n == 1 {
                                for x in 0..kw {
                                    let (r, off) = wcur.at(asm, weight_addr(co, y, x, jw));
                                    asm.lw(wregs[0], r, off);
                                    for sub in 0..n_sub {
                                        if sub > 0 {
                                            asm.alu_imm(AluImmOp::Srli, wregs[0], wregs[0], (p as u32 * w_bits.bits()) as i32);
                                        }
                                        let (r, off) = acur.at(asm, act_off(y, x, jw * ratio + sub));
                                        asm.lw(acts[0], r, off);
                                        asm.nn_mac(cfg, acc[0], acts[0], wregs[0]);
                                    }
                                }
                            } else {
                                for x in 0..kw {
                                    let (r, off) = wcur.at(asm, weight_addr(co, y, x, jw));
                                    asm.lw(wregs[x], r, off);
                                }
                                for sub in 0..n_sub {
                                    if sub > 0 {
                                        for x in 0..kw {
                                            asm.alu_imm(AluImmOp::Srli, wregs[x], wregs[x], (p as u32 * w_bits.bits()) as i32);
                                        }
                                    }
                                    for c in (0..cols).filter(|&c| used[c]) {
                                        let (r, off) = acur.at(asm, act_off(y, c, jw * ratio + sub));
                                        asm.lw(acts[c], r, off);
                                    }
                                    for x in 0..kw {
                                        for u in 0..u_n {
                                            asm.nn_mac(cfg, acc[u], acts[u * s + x], wregs[x]);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            // epilogue
            match (&mut packer, rmax) {
                (Some(pk), Some(rmax)) => {
                    if !layer.is_pruned(co) {
                        for u in 0..u_n {
                            emit_requant(asm, acc[u], layer.requant_shift, rmax, f.t0, f.t1);
                            pk.insert(asm, u, packed[u], f.t0, co);
                        }
                    }
                    if pk.closes(co) {
                        let word = co / pk.bits.lanes();
                        for u in 0..u_n {
                            let (r, off) = ocur.at(asm, u as i64 * out_pix + 4 * word as i64);
                            pk.store(asm, u, packed[u], r, off);
                        }
                    }
                }
                _ => {
                    for u in 0..u_n {
                        let (r, off) = ocur.at(asm, u as i64 * out_pix + 4 * co as i64);
                        let src = if layer.is_pruned(co) { Reg::ZERO } else { acc[u] };
                        asm.sw(src, r, off);
                    }
                }
            }
        }
        Ok(())
    })
}


fn gen_conv_baseline(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let spec = &layer.spec;
    let (kh, kw, ci, co_n) = (spec.kernel_h, spec.kernel_w, spec.in_channels, spec.out_channels);
    let os = spec.out_shape();
    let mut pool = RegPool::default();
    let f = Frame::new(&mut pool)?;
    let [op, wp, bp, ap, end, cnt, ky, acc, a, w, rmax] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    if let Some(b) = layer.out_bits {
        asm.li(rmax, (1i32 << b.bits()) - 1);
    }
    let pad = spec.padding as isize;
    let origin = io.input.offset(-pad, -pad);
    let span = 4 * (kw * ci) as i64;
    let row_skip = io.input.row_bytes() - span;
    let bias_addr = io.params as i64 + 4 * spec.weight_count() as i64;

    output_loops(asm, &f, io, (os.h, os.w), spec.stride, origin, 1, |asm, _| {
        asm.mv(op, f.out);
        asm.li(wp, io.params as i32);
        asm.li(bp, bias_addr as i32);
        asm.li(cnt, co_n as i32);
        let co_top = asm.mark();
        asm.lw(acc, bp, 0);
        asm.addi(bp, bp, 4);
        asm.mv(ap, f.inp);
        if kh > 1 {
            asm.li(ky, kh as i32);
        }
        let ky_top = asm.mark();
        asm.add_imm(end, ap, span, f.t0);
        let inner = asm.mark();
        asm.lw(a, ap, 0);
        asm.lw(w, wp, 0);
        asm.mul(f.t0, a, w);
        asm.alu(AluOp::Add, acc, acc, f.t0);
        asm.addi(ap, ap, 4);
        asm.addi(wp, wp, 4);
        asm.branch_back(BranchCond::Ne, ap, end, inner);
        if kh > 1 {
            asm.add_imm(ap, ap, row_skip, f.t0);
            asm.addi(ky, ky, -1);
            asm.branch_back(BranchCond::Ne, ky, Reg::ZERO, ky_top);
        }
        if layer.out_bits.is_some() {
            emit_requant(asm, acc, layer.requant_shift, rmax, f.t0, f.t1);
            asm.sw(f.t0, op, 0);
        } else {
            asm.sw(acc, op, 0);
        }
        asm.addi(op, op, 4);
        asm.addi(cnt, cnt, -1);
        asm.branch_back(BranchCond::Ne, cnt, Reg::ZERO, co_top);
        Ok(())
    })
}

fn gen_depthwise_baseline(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let spec = &layer.spec;
    let (kh, kw, c_n) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
    let os = spec.out_shape();
    let mut pool = RegPool::default();
    let f = Frame::new(&mut pool)?;
    let [op, wp, bp, ap, cnt, acc, a, w, rmax] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    if let Some(b) = layer.out_bits {
        asm.li(rmax, (1i32 << b.bits()) - 1);
    }
    let pad = spec.padding as isize;
    let origin = io.input.offset(-pad, -pad);
    let bias_addr = io.params as i64 + 4 * spec.weight_count() as i64;
    let (row, pix) = (io.input.row_bytes(), io.input.pixel_bytes());

    output_loops(asm, &f, io, (os.h, os.w), spec.stride, origin, 1, |asm, _| {
        asm.mv(op, f.out);
        asm.mv(ap, f.inp);
        asm.li(wp, io.params as i32);
        asm.li(bp, bias_addr as i32);
        asm.li(cnt, c_n as i32);
        let top = asm.mark();
        asm.lw(acc, bp, 0);
        let mut cur = Cursor::new(ap, f.t1);
        for y in 0..kh {
            for x in 0..kw {
                let (r, off) = cur.at(asm, y as i64 * row + x as i64 * pix);
                asm.lw(a, r, off);
                asm.lw(w, wp, 4 * (y * kw + x) as i32);
                asm.mul(f.t0, a, w);
                asm.alu(AluOp::Add, acc, acc, f.t0);
            }
        }
        if layer.out_bits.is_some() {
            emit_requant(asm, acc, layer.requant_shift, rmax, f.t0, f.t1);
            asm.sw(f.t0, op, 0);
        } else {
            asm.sw(acc, op, 0);
        }
        asm.addi(op, op, 4);
        asm.addi(ap, ap, 4);
        asm.addi(bp, bp, 4);
        asm.add_imm(wp, wp, 4 * (kh * kw) as i64, f.t0);
        asm.addi(cnt, cnt, -1);
        asm.branch_back(BranchCond::Ne, cnt, Reg::ZERO, top);
        Ok(())
    })
}

/// Channels sharing one pass over the window in packed depthwise layers.
const DEPTHWISE_GROUP: usize = 8;

fn gen_depthwise_packed(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let spec = &layer.spec;
    let cfg = layer.cfg.expect("checked");
    let a_bits = cfg.activation;
    let (la, p) = (a_bits.lanes(), cfg.products_per_instruction());
    let (kh, kw, c_n) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
    let os = spec.out_shape();
    let mut pool = RegPool::default();
    let f = Frame::new(&mut pool)?;
    let [wptr, aptr, optr, act, wreg] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    let rmax = match layer.out_bits {
        Some(b) => {
            let r = pool.alloc()?;
            asm.li(r, (1i32 << b.bits()) - 1);
            Some(r)
        }
        None => None,
    };
    let packed = pool.alloc()?;
    let acc = pool.alloc_n(DEPTHWISE_GROUP)?;
    let pad = spec.padding as isize;
    let origin = io.input.offset(-pad, -pad);
    let (row, pix) = (io.input.row_bytes(), io.input.pixel_bytes());
    let bias_addr = io.params as i64 + 4 * spec.weight_count() as i64;
    let live: Vec<usize> = (0..c_n).filter(|&c| !layer.is_pruned(c)).collect();

    output_loops(asm, &f, io, (os.h, os.w), spec.stride, origin, 1, |asm, _| {
        let mut wcur = Cursor::new(Reg::ZERO, wptr);
        let mut acur = Cursor::new(f.inp, aptr);
        let mut ocur = Cursor::new(f.out, optr);
        let mut packer = layer.out_bits.map(|b| LanePacker::new(b, c_n, 1));
        let mut next_store = 0;
        for group in live.chunks(DEPTHWISE_GROUP) {
            for (k, &c) in group.iter().enumerate() {
                let (r, off) = wcur.at(asm, bias_addr + 4 * c as i64);
                asm.lw(acc[k], r, off);
            }
            for y in 0..kh {
                for x in 0..kw {
                    // (word, shift) currently held in `act`
                    let mut held: Option<(usize, usize)> = None;
                    for (k, &c) in group.iter().enumerate() {
                        let word = c / la;
                        let shift = (c % la) / p * p;
                        match held {
                            Some((hw, hs)) if hw == word => {
                                if shift > hs {
                                    asm.alu_imm(AluImmOp::Srli, act, act, ((shift - hs) as u32 * a_bits.bits()) as i32);
                                }
                            }
                            _ => {
                                let (r, off) = acur.at(asm, y as i64 * row + x as i64 * pix + 4 * word as i64);
                                asm.lw(act, r, off);
                                if shift > 0 {
                                    asm.alu_imm(AluImmOp::Srli, act, act, (shift as u32 * a_bits.bits()) as i32);
                                }
                            }
                        }
                        held = Some((word, shift));
                        let (r, off) = wcur.at(asm, io.params as i64 + 4 * ((c * kh + y) * kw + x) as i64);
                        asm.lw(wreg, r, off);
                        asm.nn_mac(cfg, acc[k], act, wreg);
                    }
                }
            }
            // epilogue for the group, then any pruned channels up to its end
            let last = *group.last().expect("non-empty group");
            let mut k = 0;
            while next_store <= last {
                let c = next_store;
                let live_here = !layer.is_pruned(c);
                match (&mut packer, rmax) {
                    (Some(pk), Some(rmax)) => {
                        if live_here {
                            emit_requant(asm, acc[k], layer.requant_shift, rmax, f.t0, f.t1);
                            pk.insert(asm, 0, packed, f.t0, c);
                        }
                        if pk.closes(c) {
                            let (r, off) = ocur.at(asm, 4 * (c / pk.bits.lanes()) as i64);
                            pk.store(asm, 0, packed, r, off);
                        }
                    }
                    _ => {
                        let (r, off) = ocur.at(asm, 4 * c as i64);
                        asm.sw(if live_here { acc[k] } else { Reg::ZERO }, r, off);
                    }
                }
                if live_here {
                    k += 1;
                }
                next_store += 1;
            }
        }
        // trailing pruned channels
        while next_store < c_n {
            let c = next_store;
            match &mut packer {
                Some(pk) => {
                    if pk.closes(c) {
                        let (r, off) = ocur.at(asm, 4 * (c / pk.bits.lanes()) as i64);
                        pk.store(asm, 0, packed, r, off);
                    }
                }
                None => {
                    let (r, off) = ocur.at(asm, 4 * c as i64);
                    asm.sw(Reg::ZERO, r, off);
                }
            }
            next_store += 1;
        }
        Ok(())
    })
}

/// Window registers held at once by packed pooling; larger windows stream.
const POOL_HOLD: usize = 10;

/// `m = max(m, v)` for non-negative values without branching.
fn emit_max(asm: &mut Asm, m: Reg, v: Reg, t: Reg, d: Reg) {
    asm.alu(AluOp::Sltu, t, m, v);
    asm.alu(AluOp::Sub, t, Reg::ZERO, t);
    asm.alu(AluOp::Xor, d, m, v);
    asm.alu(AluOp::And, d, d, t);
    asm.alu(AluOp::Xor, m, m, d);
}

fn gen_pool_packed(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let spec = &layer.spec;
    let bits = layer.in_bits;
    let (lanes, b) = (bits.lanes(), bits.bits());
    let (kh, kw, c_n) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
    let area = kh * kw;
    let log = area.trailing_zeros() as i32;
    let is_max = spec.kind == LayerKind::MaxPool;
    let os = spec.out_shape();
    let hold = area <= POOL_HOLD;
    let mut pool = RegPool::default();
    let f = Frame::new(&mut pool)?;
    let [aptr, optr, m, v, d, packed] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    let window = pool.alloc_n(if hold { area } else { 1 })?;
    let (row, pix) = (io.input.row_bytes(), io.input.pixel_bytes());
    let mask = ((1u32 << b) - 1) as i32;
    let words = c_n.div_ceil(lanes);

    output_loops(asm, &f, io, (os.h, os.w), spec.stride, io.input.offset(0, 0), 1, |asm, _| {
        let mut acur = Cursor::new(f.inp, aptr);
        let mut ocur = Cursor::new(f.out, optr);
        let mut packer = LanePacker::new(bits, c_n, 1);
        let cell = |k: usize, j: usize| (k / kw) as i64 * row + (k % kw) as i64 * pix + 4 * j as i64;
        for j in 0..words {
            if hold {
                for k in 0..area {
                    let (r, off) = acur.at(asm, cell(k, j));
                    asm.lw(window[k], r, off);
                }
            }
            for lane in 0..lanes.min(c_n - j * lanes) {
                let c = j * lanes + lane;
                for k in 0..area {
                    let src = if hold {
                        window[k]
                    } else {
                        let (r, off) = acur.at(asm, cell(k, j));
                        asm.lw(window[0], r, off);
                        window[0]
                    };
                    let dst = if k == 0 { m } else { v };
                    let sh = (lane as u32 * b) as i32;
                    if sh > 0 {
                        asm.alu_imm(AluImmOp::Srli, dst, src, sh);
                        if lane + 1 < lanes {
                            asm.alu_imm(AluImmOp::Andi, dst, dst, mask);
                        }
                    } else {
                        asm.alu_imm(AluImmOp::Andi, dst, src, mask);
                    }
                    if k > 0 {
                        if is_max {
                            emit_max(asm, m, v, f.t0, d);
                        } else {
                            asm.alu(AluOp::Add, m, m, v);
                        }
                    }
                }
                if !is_max && log > 0 {
                    asm.addi(m, m, 1 << (log - 1));
                    asm.alu_imm(AluImmOp::Srli, m, m, log);
                }
                packer.insert(asm, 0, packed, m, c);
                if packer.closes(c) {
                    let (r, off) = ocur.at(asm, 4 * j as i64);
                    packer.store(asm, 0, packed, r, off);
                }
            }
        }
        Ok(())
    })
}

fn gen_pool_baseline(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let spec = &layer.spec;
    let (kh, kw, c_n) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
    let log = (kh * kw).trailing_zeros() as i32;
    let is_max = spec.kind == LayerKind::MaxPool;
    let os = spec.out_shape();
    let mut pool = RegPool::default();
    let f = Frame::new(&mut pool)?;
    let [ap, op, cnt, m, v, d] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    let (row, pix) = (io.input.row_bytes(), io.input.pixel_bytes());

    output_loops(asm, &f, io, (os.h, os.w), spec.stride, io.input.offset(0, 0), 1, |asm, _| {
        asm.mv(ap, f.inp);
        asm.mv(op, f.out);
        asm.li(cnt, c_n as i32);
        let top = asm.mark();
        let mut cur = Cursor::new(ap, f.t1);
        for k in 0..kh * kw {
            let (r, off) = cur.at(asm, (k / kw) as i64 * row + (k % kw) as i64 * pix);
            if k == 0 {
                asm.lw(m, r, off);
                continue;
            }
            asm.lw(v, r, off);
            if is_max {
                emit_max(asm, m, v, f.t0, d);
            } else {
                asm.alu(AluOp::Add, m, m, v);
            }
        }
        if !is_max && log > 0 {
            asm.addi(m, m, 1 << (log - 1));
            asm.alu_imm(AluImmOp::Srli, m, m, log);
        }
        asm.sw(m, op, 0);
        asm.addi(ap, ap, 4);
        asm.addi(op, op, 4);
        asm.addi(cnt, cnt, -1);
        asm.branch_back(BranchCond::Ne, cnt, Reg::ZERO, top);
        Ok(())
    })
}

/// Elementwise loop over three feature maps of equal shape.
fn residual_loops(
    asm: &mut Asm,
    io: &LayerIo,
    shape: Shape,
    mut body: impl FnMut(&mut Asm, Reg, Reg, Reg) -> Result<(), KernelError>,
    pool: &mut RegPool,
) -> Result<(), KernelError> {
    let skip = io.skip.expect("residual operand");
    let [xr, sr, orow, xp, sp, op, hc, wc, t] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    asm.li(xr, (io.input.addr as i64 + io.input.offset(0, 0)) as i32);
    asm.li(sr, (skip.addr as i64 + skip.offset(0, 0)) as i32);
    asm.li(orow, (io.output.addr as i64 + io.output.offset(0, 0)) as i32);
    if shape.h > 1 {
        asm.li(hc, shape.h as i32);
    }
    let h_top = asm.mark();
    asm.mv(xp, xr);
    asm.mv(sp, sr);
    asm.mv(op, orow);
    if shape.w > 1 {
        asm.li(wc, shape.w as i32);
    }
    let w_top = asm.mark();
    body(asm, xp, sp, op)?;
    if shape.w > 1 {
        asm.add_imm(xp, xp, io.input.pixel_bytes(), t);
        asm.add_imm(sp, sp, skip.pixel_bytes(), t);
        asm.add_imm(op, op, io.output.pixel_bytes(), t);
        asm.addi(wc, wc, -1);
        asm.branch_back(BranchCond::Ne, wc, Reg::ZERO, w_top);
    }
    if shape.h > 1 {
        asm.add_imm(xr, xr, io.input.row_bytes(), t);
        asm.add_imm(sr, sr, skip.row_bytes(), t);
        asm.add_imm(orow, orow, io.output.row_bytes(), t);
        asm.addi(hc, hc, -1);
        asm.branch_back(BranchCond::Ne, hc, Reg::ZERO, h_top);
    }
    Ok(())
}

fn gen_residual_packed(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let bits = layer.in_bits;
    let b = bits.bits();
    let lanes = bits.lanes();
    let mut pool = RegPool::default();
    let [h, nh, mm, x, y, r, ov, t, u] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    let msb: u32 = (0..lanes).fold(0, |acc, l| acc | 1 << (l as u32 * b + b - 1));
    let lsb_max: u32 = (1u32 << b) - 1;
    asm.li(h, msb as i32);
    asm.li(nh, !msb as i32);
    asm.li(mm, lsb_max as i32);
    let words = io.input.words_per_pixel();
    let shape = layer.spec.in_shape();
    residual_loops(
        asm,
        io,
        shape,
        |asm, xp, sp, op| {
            let mut xc = Cursor::new(xp, u);
            for j in 0..words {
                let o = 4 * j as i64;
                let (rb, off) = xc.at(asm, o);
                asm.lw(x, rb, off);
                asm.lw(y, sp, o as i32);
                asm.alu(AluOp::And, t, x, nh);
                asm.alu(AluOp::And, r, y, nh);
                asm.alu(AluOp::Add, t, t, r);
                asm.alu(AluOp::Xor, r, x, y);
                asm.alu(AluOp::And, r, r, h);
                asm.alu(AluOp::Xor, r, t, r);
                asm.alu(AluOp::And, ov, x, y);
                asm.alu(AluOp::Or, t, x, y);
                asm.alu_imm(AluImmOp::Xori, x, r, -1);
                asm.alu(AluOp::And, t, t, x);
                asm.alu(AluOp::Or, ov, ov, t);
                asm.alu(AluOp::And, ov, ov, h);
                asm.alu_imm(AluImmOp::Srli, ov, ov, b as i32 - 1);
                asm.mul(ov, ov, mm);
                asm.alu(AluOp::Or, r, r, ov);
                asm.sw(r, op, o as i32);
            }
            Ok(())
        },
        &mut pool,
    )
}

fn gen_residual_baseline(asm: &mut Asm, layer: &QuantLayer, io: &LayerIo) -> Result<(), KernelError> {
    let mut pool = RegPool::default();
    let [rmax, x, y, t, xp2, sp2, op2, cnt] = std::array::from_fn(|_| pool.alloc().expect("enough registers"));
    asm.li(rmax, (1i32 << layer.in_bits.bits()) - 1);
    let c_n = layer.spec.in_channels;
    residual_loops(
        asm,
        io,
        layer.spec.in_shape(),
        |asm, xp, sp, op| {
            asm.mv(xp2, xp);
            asm.mv(sp2, sp);
            asm.mv(op2, op);
            asm.li(cnt, c_n as i32);
            let top = asm.mark();
            asm.lw(x, xp2, 0);
            asm.lw(y, sp2, 0);
            asm.alu(AluOp::Add, x, x, y);
            asm.alu(AluOp::Sltu, t, rmax, x);
            asm.alu(AluOp::Sub, t, Reg::ZERO, t);
            asm.alu(AluOp::Or, x, x, t);
            asm.alu(AluOp::And, x, x, rmax);
            asm.sw(x, op2, 0);
            asm.addi(xp2, xp2, 4);
            asm.addi(sp2, sp2, 4);
            asm.addi(op2, op2, 4);
            asm.addi(cnt, cnt, -1);
            asm.branch_back(BranchCond::Ne, cnt, Reg::ZERO, top);
            Ok(())
        },
        &mut pool,
    )
}

fn gen_layer(
    asm: &mut Asm,
    layer: &QuantLayer,
    io: &LayerIo,
    style: KernelStyle,
    opts: &KernelOptions,
) -> Result<(), KernelError> {
    use KernelStyle::*;
    use LayerKind::*;
    match (style, layer.spec.kind) {
        (Packed, Conv2d | Dense) => gen_conv_packed(asm, layer, io, opts),
        (Baseline, Conv2d | Dense) => gen_conv_baseline(asm, layer, io),
        (Packed, DepthwiseConv2d) => gen_depthwise_packed(asm, layer, io),
        (Baseline, DepthwiseConv2d) => gen_depthwise_baseline(asm, layer, io),
        (Packed, MaxPool | AvgPool) => gen_pool_packed(asm, layer, io),
        (Baseline, MaxPool | AvgPool) => gen_pool_baseline(asm, layer, io),
        (Packed, ResidualAdd) => gen_residual_packed(asm, layer, io),
        (Baseline, ResidualAdd) => gen_residual_baseline(asm, layer, io),
    }
}

fn kind_name(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv2d => "conv2d",
        LayerKind::DepthwiseConv2d => "depthwise",
        LayerKind::Dense => "dense",
        LayerKind::MaxPool => "maxpool",
        LayerKind::AvgPool => "avgpool",
        LayerKind::ResidualAdd => "residual",
    }
}

/// Marker name of layer `i`, e.g. `2_conv2d`.
pub fn layer_name(i: usize, kind: LayerKind) -> String {
    format!("{i}_{}", kind_name(kind))
}

/// Bump allocator over data memory.
struct Layout {
    next: u32,
    data: Vec<crate::sim::DataSegment>,
}

impl Layout {
    fn new() -> Self {
        Self { next: 0, data: Vec::new() }
    }

    fn reserve(&mut self, bytes: usize) -> u32 {
        let addr = self.next;
        self.next += bytes.next_multiple_of(4) as u32;
        addr
    }

    fn place_words(&mut self, words: &[u32]) -> u32 {
        let addr = self.reserve(4 * words.len());
        if !words.is_empty() {
            self.data.push(crate::sim::DataSegment { addr, bytes: words.iter().flat_map(|w| w.to_le_bytes()).collect() });
        }
        addr
    }

    fn buffer(&mut self, shape: Shape, pad: usize, bits: Option<BitWidth>) -> TensorBuf {
        let mut buf = TensorBuf { addr: 0, shape, pad, bits };
        buf.addr = self.reserve(buf.byte_len());
        buf
    }
}

fn assemble(asm: Asm, layout: Layout, inputs: Vec<TensorBuf>, output: TensorBuf) -> Result<CompiledProgram, KernelError> {
    let (code, markers) = asm.finish()?;
    let mut program = Program::from_instructions(&code).map_err(|e| KernelError::Asm(e.into()))?;
    program.memory_size = layout.next as usize;
    program.data = layout.data;
    program.layers = markers;
    Ok(CompiledProgram { program, inputs, output })
}

/// Program running one layer on its own. A residual layer takes the skip
/// operand as second input.
pub fn compile_layer(layer: &QuantLayer, style: KernelStyle, opts: &KernelOptions) -> Result<CompiledProgram, KernelError> {
    check_layer(layer)?;
    let spec = &layer.spec;
    let mut layout = Layout::new();
    let params = layout.place_words(&param_image(layer, style)?);
    let in_bits = tensor_bits(style, Some(layer.in_bits));
    let input = layout.buffer(spec.in_shape(), spec.padding, in_bits);
    let skip = (spec.kind == LayerKind::ResidualAdd).then(|| layout.buffer(spec.in_shape(), 0, in_bits));
    let output = layout.buffer(spec.out_shape(), 0, tensor_bits(style, layer.out_bits));
    let io = LayerIo { input, skip, output, params };
    let mut asm = Asm::new();
    asm.begin_layer(layer_name(0, spec.kind), layer.effective_macs());
    gen_layer(&mut asm, layer, &io, style, opts)?;
    asm.end_layer();
    let inputs = std::iter::once(input).chain(skip).collect();
    assemble(asm, layout, inputs, output)
}

/// Program running the whole network on one input image. The output holds
/// one raw 32-bit score per class.
pub fn compile_network(net: &QuantNetwork, style: KernelStyle, opts: &KernelOptions) -> Result<CompiledProgram, KernelError> {
    let n = net.layers.len();
    if n == 0 {
        return Err(ShapeError("network has no layers".into()).into());
    }
    validate_chain(&net.layers.iter().map(|l| l.spec.clone()).collect::<Vec<_>>())?;
    for (i, l) in net.layers.iter().enumerate() {
        check_layer(l).map_err(|e| KernelError::Config(format!("layer {i}: {e}")))?;
        if i > 0 && net.layers[i - 1].out_bits != Some(l.in_bits) {
            return config_err(format!("layer {i}: input width differs from the producer"));
        }
    }
    if net.layers[n - 1].out_bits.is_some() {
        return config_err("last layer must emit raw scores");
    }
    let mut layout = Layout::new();
    let params: Vec<u32> = net
        .layers
        .iter()
        .map(|l| Ok(layout.place_words(&param_image(l, style)?)))
        .collect::<Result<_, KernelError>>()?;
    // a buffer's border is as wide as its widest consumer needs
    let pad_of = |producer: Option<usize>| -> usize {
        let next = producer.map_or(0, |p| p + 1);
        net.layers.get(next).map_or(0, |l| l.spec.padding)
    };
    let input = layout.buffer(net.input_shape(), pad_of(None), tensor_bits(style, Some(net.input_bits())));
    let outs: Vec<TensorBuf> = net
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| layout.buffer(l.spec.out_shape(), pad_of(Some(i)), tensor_bits(style, l.out_bits)))
        .collect();
    let mut asm = Asm::new();
    for (i, l) in net.layers.iter().enumerate() {
        let io = LayerIo {
            input: if i == 0 { input } else { outs[i - 1] },
            skip: l.spec.residual_source.map(|s| outs[s]),
            output: outs[i],
            params: params[i],
        };
        asm.begin_layer(layer_name(i, l.spec.kind), l.effective_macs());
        gen_layer(&mut asm, l, &io, style, opts)?;
        asm.end_layer();
    }
    assemble(asm, layout, vec![input], outs[n - 1])
}

pub fn gen_conv2d_baseline(layer: &QuantLayer) -> Result<CompiledProgram, KernelError> {
    compile_layer(layer, KernelStyle::Baseline, &KernelOptions::default())
}

pub fn gen_conv2d_packed(layer: &QuantLayer, opts: &KernelOptions) -> Result<CompiledProgram, KernelError> {
    compile_layer(layer, KernelStyle::Packed, opts)
}

pub fn gen_depthwise(layer: &QuantLayer, style: KernelStyle) -> Result<CompiledProgram, KernelError> {
    compile_layer(layer, style, &KernelOptions::default())
}

pub fn gen_dense(layer: &QuantLayer, style: KernelStyle) -> Result<CompiledProgram, KernelError> {
    compile_layer(layer, style, &KernelOptions::default())
}

pub fn gen_pool(layer: &QuantLayer, style: KernelStyle) -> Result<CompiledProgram, KernelError> {
    compile_layer(layer, style, &KernelOptions::default())
}

pub fn gen_residual(layer: &QuantLayer, style: KernelStyle) -> Result<CompiledProgram, KernelError> {
    compile_layer(layer, style, &KernelOptions::default())
}
