//! Post-training quantization with power-of-two scales, structured channel
//! pruning, and the host-side integer reference for quantized inference.
//!
//! A tensor with scale exponent `e` represents `q * 2^e`. Weights are
//! signed lanes, activations unsigned lanes with zero point 0. The last
//! layer of a network emits raw 32-bit accumulators as class scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datapath::{lane_range, pack, PackedWord, Signedness};
use crate::isa::{BitWidth, PrecisionConfig};
use crate::network::{argmax, FloatNetwork, LayerKind, LayerSpec, Shape, ShapeError};

pub const MIN_SHIFT: i32 = -31;
pub const MAX_SHIFT: i32 = 31;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("calibration sample is empty")]
    EmptySample,
    #[error("pruning rate {0} outside [0, 1]")]
    InvalidRate(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Round half away from zero.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// `clamp(round_half_away(acc / 2^shift), 0, 2^bits - 1)`. Output lanes are
/// unsigned, so the lower clamp acts as ReLU whether or not the layer asks
/// for one.
pub fn requantize(acc: i32, shift: u32, bits: BitWidth) -> i32 {
    let (lo, hi) = lane_range(bits, Signedness::Unsigned);
    let shift = shift.min(31);
    let v = if shift == 0 {
        acc as i64
    } else {
        // floor((acc + 2^(shift-1)) / 2^shift) equals half-away rounding for
        // every value that survives the lower clamp
        ((acc as i64) + (1i64 << (shift - 1))) >> shift
    };
    v.clamp(lo as i64, hi as i64) as i32
}

fn ceil_log2_ratio(value: f64, limit: f64) -> i32 {
    let mut s = (value / limit).log2().ceil() as i32;
    s = s.clamp(MIN_SHIFT, MAX_SHIFT);
    while s < MAX_SHIFT && value > limit * 2f64.powi(s) {
        s += 1;
    }
    while s > MIN_SHIFT && value <= limit * 2f64.powi(s - 1) {
        s -= 1;
    }
    s
}

/// Smallest exponent at which every weight fits the signed lane range.
/// An all-zero tensor gets exponent 0.
pub fn weight_scale_shift(weights: &[f32], bits: BitWidth) -> i32 {
    let pos = weights.iter().fold(0f32, |m, &w| m.max(w)) as f64;
    let neg = weights.iter().fold(0f32, |m, &w| m.max(-w)) as f64;
    let (lo, hi) = lane_range(bits, Signedness::Signed);
    let mut s = MIN_SHIFT;
    if pos > 0.0 {
        s = s.max(ceil_log2_ratio(pos, hi as f64));
    }
    if neg > 0.0 {
        s = s.max(ceil_log2_ratio(neg, -lo as f64));
    }
    if pos == 0.0 && neg == 0.0 {
        0
    } else {
        s
    }
}

/// Exponent for an unsigned activation tensor with the given max-abs.
/// A zero range clamps to the smallest exponent.
pub fn activation_scale_shift(max_abs: f32, bits: BitWidth) -> i32 {
    if max_abs <= 0.0 || !max_abs.is_finite() {
        return MIN_SHIFT;
    }
    let (_, hi) = lane_range(bits, Signedness::Unsigned);
    ceil_log2_ratio(max_abs as f64, hi as f64)
}

pub fn quantize_value(x: f32, shift: i32, bits: BitWidth, signedness: Signedness) -> i32 {
    let (lo, hi) = lane_range(bits, signedness);
    let q = round_half_away(x as f64 / 2f64.powi(shift));
    q.clamp(lo as f64, hi as f64) as i32
}

pub fn dequantize_value(q: i32, shift: i32) -> f64 {
    q as f64 * 2f64.powi(shift)
}

/// Packed lanes plus the scale needed to interpret them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizedTensor {
    pub data: Vec<u32>,
    pub shape: Vec<usize>,
    pub lane_width: BitWidth,
    pub signedness: Signedness,
    pub scale_shift: i32,
}

impl QuantizedTensor {
    pub fn from_values(
        values: &[i32],
        shape: Vec<usize>,
        lane_width: BitWidth,
        signedness: Signedness,
        scale_shift: i32,
    ) -> Result<Self, QuantError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(ShapeError(format!("{} values for shape {shape:?}", values.len())).into());
        }
        if !(MIN_SHIFT..=MAX_SHIFT).contains(&scale_shift) {
            return Err(QuantError::Config(format!("scale exponent {scale_shift} out of range")));
        }
        let data = values
            .chunks(lane_width.lanes())
            .map(|c| pack(c, lane_width, signedness).map(|w| w.raw))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| QuantError::Config(e.to_string()))?;
        Ok(Self { data, shape, lane_width, signedness, scale_shift })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<i32> {
        let mut v: Vec<i32> = self
            .data
            .iter()
            .flat_map(|&raw| PackedWord::new(raw, self.lane_width, self.signedness).unpack())
            .collect();
        v.truncate(self.len());
        v
    }

    pub fn dequantize(&self) -> Vec<f64> {
        self.values().into_iter().map(|q| dequantize_value(q, self.scale_shift)).collect()
    }
}

/// Symmetric power-of-two quantization of a weight tensor.
pub fn quantize_layer(weights: &[f32], bits: BitWidth) -> QuantizedTensor {
    let shift = weight_scale_shift(weights, bits);
    let values: Vec<i32> = weights.iter().map(|&w| quantize_value(w, shift, bits, Signedness::Signed)).collect();
    QuantizedTensor::from_values(&values, vec![weights.len()], bits, Signedness::Signed, shift)
        .expect("quantized values are in lane range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneResult {
    pub weights: Vec<f32>,
    /// Zeroed output channels in ascending order.
    pub pruned: Vec<usize>,
}

pub fn pruned_channel_count(out_channels: usize, rate: f64) -> usize {
    ((rate * out_channels as f64) + 1e-9).floor() as usize
}

/// Zeroes the `floor(rate * out_channels)` output channels with the smallest
/// L1 norm (lower index first on ties). `weights` holds `out_channels`
/// equally sized rows.
pub fn prune_structured(weights: &[f32], out_channels: usize, rate: f64) -> Result<PruneResult, QuantError> {
    if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
        return Err(QuantError::InvalidRate(rate));
    }
    if out_channels == 0 || weights.len() % out_channels != 0 {
        return Err(ShapeError(format!("{} weights over {out_channels} channels", weights.len())).into());
    }
    let row = weights.len() / out_channels;
    let norms: Vec<f64> =
        weights.chunks(row.max(1)).map(|r| r.iter().map(|w| w.abs() as f64).sum()).collect();
    let mut order: Vec<usize> = (0..out_channels).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let mut pruned: Vec<usize> = order[..pruned_channel_count(out_channels, rate)].to_vec();
    pruned.sort_unstable();
    let mut weights = weights.to_vec();
    for &c in &pruned {
        weights[c * row..(c + 1) * row].fill(0.0);
    }
    Ok(PruneResult { weights, pruned })
}

/// Max-abs statistics gathered from float forward passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub input_max: f32,
    pub layer_max: Vec<f32>,
}

pub fn calibrate(net: &FloatNetwork, sample: &[Vec<f32>]) -> Result<Calibration, QuantError> {
    if sample.is_empty() {
        return Err(QuantError::EmptySample);
    }
    let n = net.layers.len();
    let maxabs = |v: &[f32]| v.iter().fold(0f32, |m, x| m.max(x.abs()));
    let (input_max, layer_max) = sample
        .par_iter()
        .map(|x| {
            let outs = net.forward_all(x);
            (maxabs(x), outs.iter().map(|o| maxabs(o)).collect::<Vec<_>>())
        })
        .reduce(
            || (0.0, vec![0.0; n]),
            |(a, mut va), (b, vb)| {
                for (x, y) in va.iter_mut().zip(vb) {
                    *x = x.max(y);
                }
                (a.max(b), va)
            },
        );
    Ok(Calibration { input_max, layer_max })
}

/// Precision and pruning chosen for one weighted layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub cfg: PrecisionConfig,
    pub pruning_rate: f64,
}

impl LayerChoice {
    pub fn new(cfg: PrecisionConfig, pruning_rate: f64) -> Self {
        Self { cfg, pruning_rate }
    }
}

/// Resolved quantization parameters of one weighted layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerQuantConfig {
    pub cfg: PrecisionConfig,
    pub weight_scale_shift: i32,
    pub activation_scale_shift: i32,
    pub pruning_rate: f64,
}

/// A layer ready for integer execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantLayer {
    pub spec: LayerSpec,
    /// Set for weighted layers.
    pub cfg: Option<PrecisionConfig>,
    pub weights: Vec<i32>,
    pub weight_shift: i32,
    /// Bias at accumulator scale.
    pub bias: Vec<i32>,
    pub pruned: Vec<usize>,
    pub pruning_rate: f64,
    pub in_bits: BitWidth,
    pub in_shift: i32,
    /// `None` means raw 32-bit accumulators leave the layer.
    pub out_bits: Option<BitWidth>,
    pub out_shift: i32,
    /// Right shift from accumulator to output scale (weighted layers).
    pub requant_shift: u32,
}

impl QuantLayer {
    pub fn is_pruned(&self, channel: usize) -> bool {
        self.pruned.binary_search(&channel).is_ok()
    }

    /// MACs actually executed once pruned channels are skipped.
    pub fn effective_macs(&self) -> u64 {
        self.spec.macs() - self.pruned.len() as u64 * self.spec.macs_per_channel()
    }

    pub fn quant_config(&self) -> Option<LayerQuantConfig> {
        self.cfg.map(|cfg| LayerQuantConfig {
            cfg,
            weight_scale_shift: self.weight_shift,
            activation_scale_shift: self.in_shift,
            pruning_rate: self.pruning_rate,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantNetwork {
    pub layers: Vec<QuantLayer>,
}

impl QuantNetwork {
    pub fn input_shape(&self) -> Shape {
        self.layers[0].spec.in_shape()
    }

    pub fn input_bits(&self) -> BitWidth {
        self.layers[0].in_bits
    }

    pub fn input_shift(&self) -> i32 {
        self.layers[0].in_shift
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.spec.out_channels)
    }

    pub fn effective_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.effective_macs()).sum()
    }

    pub fn quantize_input(&self, x: &[f32]) -> Vec<i32> {
        let (bits, shift) = (self.input_bits(), self.input_shift());
        x.iter().map(|&v| quantize_value(v, shift, bits, Signedness::Unsigned)).collect()
    }
}

/// Activation bits required for the output tensor of every layer, found by
/// walking consumers backwards. Weighted layers fix their input width,
/// pooling and residual layers pass it through.
pub fn tensor_bits(specs: &[LayerSpec], choices: &[LayerChoice]) -> Result<(BitWidth, Vec<Option<BitWidth>>), QuantError> {
    let n = specs.len();
    let mut cfg_of = vec![None; n];
    let mut it = choices.iter();
    for (i, s) in specs.iter().enumerate() {
        if s.is_mac() {
            cfg_of[i] = Some(it.next().ok_or_else(|| QuantError::Config("too few layer choices".into()))?.cfg);
        }
    }
    if it.next().is_some() {
        return Err(QuantError::Config("too many layer choices".into()));
    }
    // need[i] = bits wanted for the tensor consumed by layer i (its main input)
    let mut out: Vec<Option<BitWidth>> = vec![None; n];
    let mut need = vec![None; n];
    for i in (0..n).rev() {
        let own = if i + 1 == n { None } else { out[i] };
        need[i] = match cfg_of[i] {
            Some(cfg) => Some(cfg.activation),
            None => Some(own.ok_or_else(|| QuantError::Config(format!("layer {i} output has no consumer")))?),
        };
        if i > 0 {
            merge(&mut out[i - 1], need[i], i - 1)?;
        }
        if let Some(src) = specs[i].residual_source {
            merge(&mut out[src], need[i], src)?;
        }
    }
    let input = need[0].expect("first layer has a requirement");
    Ok((input, out))
}

fn merge(slot: &mut Option<BitWidth>, want: Option<BitWidth>, layer: usize) -> Result<(), QuantError> {
    match (*slot, want) {
        (Some(a), Some(b)) if a != b => Err(QuantError::Config(format!(
            "output of layer {layer} feeds consumers at {} and {} bits",
            a.bits(),
            b.bits()
        ))),
        (None, w) => {
            *slot = w;
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Quantizes a float network for the per-layer choices (one per weighted
/// layer, in order).
pub fn quantize_network(net: &FloatNetwork, calib: &Calibration, choices: &[LayerChoice]) -> Result<QuantNetwork, QuantError> {
    net.validate()?;
    let specs = net.specs();
    let n = specs.len();
    let (input_bits, out_bits) = tensor_bits(&specs, choices)?;
    for c in choices {
        if !(0.0..=1.0).contains(&c.pruning_rate) {
            return Err(QuantError::InvalidRate(c.pruning_rate));
        }
    }

    // desired output exponents from calibration, tied across residual operands
    let mut desired = vec![0i32; n];
    for i in 0..n {
        if let Some(b) = out_bits[i] {
            desired[i] = activation_scale_shift(calib.layer_max[i], b);
        }
    }
    for (r, s) in specs.iter().enumerate() {
        if let Some(src) = s.residual_source {
            let e = desired[r - 1].max(desired[src]);
            desired[r - 1] = e;
            desired[src] = e;
        }
    }

    let mut layers: Vec<QuantLayer> = Vec::with_capacity(n);
    let mut choice_iter = choices.iter();
    let mut in_bits = input_bits;
    let mut in_shift = activation_scale_shift(calib.input_max, input_bits);
    for (i, fl) in net.layers.iter().enumerate() {
        let spec = fl.spec.clone();
        let mut layer = QuantLayer {
            spec: spec.clone(),
            cfg: None,
            weights: vec![],
            weight_shift: 0,
            bias: vec![],
            pruned: vec![],
            pruning_rate: 0.0,
            in_bits,
            in_shift,
            out_bits: out_bits[i],
            out_shift: in_shift,
            requant_shift: 0,
        };
        if spec.is_mac() {
            let choice = choice_iter.next().expect("counted by tensor_bits");
            let cfg = choice.cfg;
            if cfg.activation != in_bits {
                return Err(QuantError::Config(format!("layer {i} input width mismatch")));
            }
            let pr = prune_structured(&fl.weights, spec.out_channels, choice.pruning_rate)?;
            let wq = quantize_layer(&pr.weights, cfg.weight);
            let acc_shift = wq.scale_shift + in_shift;
            let bias = fl
                .bias
                .iter()
                .enumerate()
                .map(|(c, &b)| {
                    if pr.pruned.binary_search(&c).is_ok() {
                        0
                    } else {
                        round_half_away(b as f64 / 2f64.powi(acc_shift)).clamp(i32::MIN as f64, i32::MAX as f64)
                            as i32
                    }
                })
                .collect();
            layer.cfg = Some(cfg);
            layer.weights = wq.values();
            layer.weight_shift = wq.scale_shift;
            layer.bias = bias;
            layer.pruned = pr.pruned;
            layer.pruning_rate = choice.pruning_rate;
            match out_bits[i] {
                Some(_) => {
                    let shift = (desired[i] - acc_shift).clamp(0, 31);
                    layer.requant_shift = shift as u32;
                    layer.out_shift = acc_shift + shift;
                }
                None => layer.out_shift = acc_shift,
            }
        }
        if let Some(src) = spec.residual_source {
            let (a, b) = (&layers[i - 1], &layers[src]);
            if a.out_shift != b.out_shift || a.out_bits != b.out_bits {
                return Err(QuantError::Config(format!("residual layer {i} operands at different scales")));
            }
        }
        in_bits = out_bits[i].unwrap_or(in_bits);
        in_shift = layer.out_shift;
        layers.push(layer);
    }
    Ok(QuantNetwork { layers })
}

/// Integer execution of one layer. `x` and `skip` hold unpacked HWC values.
pub fn quant_layer_forward(layer: &QuantLayer, x: &[i32], skip: Option<&[i32]>) -> Vec<i32> {
    let spec = &layer.spec;
    let is = spec.in_shape();
    let os = spec.out_shape();
    let finish = |acc: i32| match layer.out_bits {
        Some(bits) => requantize(acc, layer.requant_shift, bits),
        None => acc,
    };
    let mut y = vec![0i32; os.len()];
    let pad = spec.padding as isize;
    let at = |yy: isize, xx: isize, c: usize| -> i32 {
        if yy < 0 || xx < 0 || yy >= is.h as isize || xx >= is.w as isize {
            0
        } else {
            x[is.index(yy as usize, xx as usize, c)]
        }
    };
    match spec.kind {
        LayerKind::Conv2d | LayerKind::Dense => {
            let (kh, kw, ci) = (spec.kernel_h, spec.kernel_w, spec.in_channels);
            for oy in 0..os.h {
                for ox in 0..os.w {
                    for co in 0..os.c {
                        if layer.is_pruned(co) {
                            continue;
                        }
                        let mut acc = layer.bias[co];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let yy = (oy * spec.stride + ky) as isize - pad;
                                let xx = (ox * spec.stride + kx) as isize - pad;
                                let wi = ((co * kh + ky) * kw + kx) * ci;
                                for c in 0..ci {
                                    acc = acc.wrapping_add(layer.weights[wi + c].wrapping_mul(at(yy, xx, c)));
                                }
                            }
                        }
                        y[os.index(oy, ox, co)] = finish(acc);
                    }
                }
            }
        }
        LayerKind::DepthwiseConv2d => {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    for c in 0..os.c {
                        if layer.is_pruned(c) {
                            continue;
                        }
                        let mut acc = layer.bias[c];
                        for ky in 0..spec.kernel_h {
                            for kx in 0..spec.kernel_w {
                                let yy = (oy * spec.stride + ky) as isize - pad;
                                let xx = (ox * spec.stride + kx) as isize - pad;
                                let w = layer.weights[(c * spec.kernel_h + ky) * spec.kernel_w + kx];
                                acc = acc.wrapping_add(w.wrapping_mul(at(yy, xx, c)));
                            }
                        }
                        y[os.index(oy, ox, c)] = finish(acc);
                    }
                }
            }
        }
        LayerKind::MaxPool | LayerKind::AvgPool => {
            let area = (spec.kernel_h * spec.kernel_w) as i32;
            let log = area.trailing_zeros();
            for oy in 0..os.h {
                for ox in 0..os.w {
                    for c in 0..os.c {
                        let vals = (0..spec.kernel_h).flat_map(|ky| {
                            (0..spec.kernel_w).map(move |kx| (oy * spec.stride + ky, ox * spec.stride + kx))
                        });
                        let v = if spec.kind == LayerKind::MaxPool {
                            vals.map(|(yy, xx)| x[is.index(yy, xx, c)]).max().unwrap_or(0)
                        } else {
                            let sum: i32 = vals.map(|(yy, xx)| x[is.index(yy, xx, c)]).sum();
                            if log == 0 {
                                sum
                            } else {
                                (sum + (1 << (log - 1))) >> log
                            }
                        };
                        y[os.index(oy, ox, c)] = v;
                    }
                }
            }
        }
        LayerKind::ResidualAdd => {
            let skip = skip.expect("residual operand");
            let (_, hi) = lane_range(layer.in_bits, Signedness::Unsigned);
            for (o, (a, b)) in y.iter_mut().zip(x.iter().zip(skip)) {
                *o = (a + b).min(hi);
            }
        }
    }
    y
}

/// Host-side integer inference; returns the raw class scores.
pub fn quantized_forward(net: &QuantNetwork, input: &[i32]) -> Result<Vec<i32>, QuantError> {
    if input.len() != net.input_shape().len() {
        return Err(ShapeError(format!("input of {} values, expected {}", input.len(), net.input_shape())).into());
    }
    let mut outs: Vec<Vec<i32>> = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate() {
        let x = if i == 0 { input } else { &outs[i - 1] };
        let skip = layer.spec.residual_source.map(|s| outs[s].as_slice());
        let y = quant_layer_forward(layer, x, skip);
        outs.push(y);
    }
    Ok(outs.pop().unwrap_or_default())
}

/// Fraction of samples whose arg-max score matches the label.
pub fn quantized_accuracy(net: &QuantNetwork, images: &[Vec<f32>], labels: &[u8]) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    let hits: usize = images
        .par_iter()
        .zip(labels.par_iter())
        .filter(|(x, &l)| {
            let q = net.quantize_input(x);
            quantized_forward(net, &q).map(|s| argmax(&s) == l as usize).unwrap_or(false)
        })
        .count();
    hits as f64 / images.len() as f64
}

pub fn float_accuracy(net: &FloatNetwork, images: &[Vec<f32>], labels: &[u8]) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    let hits = images.par_iter().zip(labels.par_iter()).filter(|(x, &l)| net.predict(x) == l as usize).count();
    hits as f64 / images.len() as f64
}

/// Optional shift calibration: nudges each requantization shift by one
/// step while accuracy on the calibration set improves.
pub fn refine_shifts(mut net: QuantNetwork, images: &[Vec<f32>], labels: &[u8], rounds: usize) -> QuantNetwork {
    let mut best = quantized_accuracy(&net, images, labels);
    for _ in 0..rounds {
        let mut improved = false;
        for i in 0..net.layers.len() {
            if net.layers[i].cfg.is_none() || net.layers[i].out_bits.is_none() {
                continue;
            }
            for delta in [-1i32, 1] {
                let cur = net.layers[i].requant_shift as i32;
                let next = cur + delta;
                if !(0..=31).contains(&next) || shift_is_tied(&net, i) {
                    continue;
                }
                let mut cand = net.clone();
                set_requant_shift(&mut cand, i, next as u32);
                let acc = quantized_accuracy(&cand, images, labels);
                if acc > best {
                    best = acc;
                    net = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    net
}

fn shift_is_tied(net: &QuantNetwork, i: usize) -> bool {
    net.layers.iter().enumerate().any(|(r, l)| l.spec.residual_source == Some(i) || (l.spec.residual_source.is_some() && r == i + 1))
}

/// Changes one requantization shift and rescales everything downstream
/// that depends on the output exponent.
fn set_requant_shift(net: &mut QuantNetwork, i: usize, shift: u32) {
    let delta = shift as i32 - net.layers[i].requant_shift as i32;
    net.layers[i].requant_shift = shift;
    net.layers[i].out_shift += delta;
    let mut j = i + 1;
    // pass-through layers inherit the exponent; the next weighted layer
    // absorbs it in its bias and requantization shift
    while j < net.layers.len() {
        let l = &mut net.layers[j];
        l.in_shift += delta;
        if l.cfg.is_some() {
            let old_acc = l.weight_shift + l.in_shift - delta;
            let new_acc = old_acc + delta;
            l.bias = l
                .bias
                .iter()
                .map(|&b| round_half_away(b as f64 * 2f64.powi(old_acc - new_acc)) as i32)
                .collect();
            if l.out_bits.is_some() {
                let s = (l.out_shift - new_acc).clamp(0, 31);
                l.requant_shift = s as u32;
                l.out_shift = new_acc + s;
            } else {
                l.out_shift = new_acc;
            }
            break;
        }
        l.out_shift += delta;
        j += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requantize_examples() {
        assert_eq!(requantize(256, 4, BitWidth::B8), 16);
        assert_eq!(requantize(-300, 4, BitWidth::B8), 0);
        assert_eq!(requantize(1 << 20, 4, BitWidth::B8), 255);
        assert_eq!(requantize(24, 4, BitWidth::B8), 2);
        assert_eq!(requantize(23, 4, BitWidth::B8), 1);
        assert_eq!(requantize(9, 0, BitWidth::B2), 3);
    }

    #[test]
    fn two_bit_weights() {
        let t = quantize_layer(&[-1.0, 0.5, 0.25, 1.0], BitWidth::B2);
        let scale = 2f64.powi(t.scale_shift);
        for (q, w) in t.values().iter().zip([-1.0, 0.5, 0.25, 1.0]) {
            assert!((-2..=1).contains(q));
            assert!((dequantize_value(*q, t.scale_shift) - w).abs() <= scale / 2.0);
        }
    }

    #[test]
    fn zero_tensor() {
        let t = quantize_layer(&[0.0; 5], BitWidth::B4);
        assert_eq!(t.scale_shift, 0);
        assert!(t.values().iter().all(|&v| v == 0));
        assert_eq!(activation_scale_shift(0.0, BitWidth::B8), MIN_SHIFT);
    }

    #[test]
    fn prune_example() {
        let w = [1.0, 0.0, -4.0, 0.0, 2.0, 0.0, 0.0, 3.0];
        let r = prune_structured(&w, 4, 0.5).unwrap();
        assert_eq!(r.pruned, vec![0, 2]);
        assert_eq!(r.weights, vec![0.0, 0.0, -4.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        assert!(prune_structured(&w, 4, 0.0).unwrap().pruned.is_empty());
        assert!(matches!(prune_structured(&w, 4, 1.5), Err(QuantError::InvalidRate(_))));
    }

    #[test]
    fn tensor_round_trip() {
        let vals = [3, -2, 1, 0, -1];
        let t = QuantizedTensor::from_values(&vals, vec![5], BitWidth::B4, Signedness::Signed, -3).unwrap();
        assert_eq!(t.data.len(), 1);
        assert_eq!(t.values(), vals);
    }
}
