//! Mixed-precision and pruning design-space exploration.
//!
//! Configurations are scored by accuracy (from a caller-supplied evaluator)
//! and by cycles estimated from a per-layer latency table. The table is
//! filled by simulating every layer alone, so scoring a configuration
//! never runs the whole network.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{BitWidth, PrecisionConfig};
use crate::kernels::{compile_layer, KernelError, KernelOptions, KernelStyle};
use crate::network::{LayerSpec, ShapeError};
use crate::quant::{pruned_channel_count, tensor_bits, LayerChoice, QuantLayer};
use crate::sim::CycleModel;

#[derive(Debug, Error)]
pub enum DseError {
    #[error("invalid exploration parameters: {0}")]
    InvalidParams(String),
    #[error("exhaustive search needs {needed} evaluations, limit is {limit}")]
    BudgetExceeded { needed: u128, limit: u128 },
    #[error("reference point is not dominated by every front point")]
    InvalidReference,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("configuration rejected: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Search parameters. `threshold` is the tolerated accuracy loss in
/// percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DseParams {
    pub threshold: f64,
    pub granularity: f64,
    pub p_max: f64,
    pub budget: usize,
    /// Let the downward exploration also raise single-layer pruning
    /// rates, giving distinct per-layer rates.
    pub refine: bool,
}

impl Default for DseParams {
    fn default() -> Self {
        Self { threshold: 1.0, granularity: 0.25, p_max: 0.5, budget: 500, refine: false }
    }
}

impl DseParams {
    pub fn validate(&self) -> Result<(), DseError> {
        let bad = |m: &str| Err(DseError::InvalidParams(m.into()));
        if !(self.threshold >= 0.0) {
            return bad("threshold must be non-negative");
        }
        if !(self.granularity > 0.0 && self.granularity <= self.p_max && self.p_max <= 1.0) {
            return bad("need 0 < granularity <= p_max <= 1");
        }
        if self.budget < 1 {
            return bad("budget must be at least 1");
        }
        Ok(())
    }

    /// `0, g, 2g, ...` up to `p_max`.
    pub fn pruning_rates(&self) -> Vec<f64> {
        let n = (self.p_max / self.granularity + 1e-9).floor() as usize;
        (0..=n).map(|k| ((k as f64 * self.granularity) * 1e6).round() / 1e6).collect()
    }
}

fn rate_key(rate: f64) -> u32 {
    (rate * 1000.0).round() as u32
}

/// Cycles and loads of one layer run alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerLatency {
    pub cycles: u64,
    pub loads: u64,
}

impl std::ops::Add for LayerLatency {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { cycles: self.cycles + o.cycles, loads: self.loads + o.loads }
    }
}

/// Key of one weighted-layer entry: precision, output width (none for raw
/// scores) and pruning rate in thousandths.
type MacKey = (PrecisionConfig, Option<BitWidth>, u32);

#[derive(Debug, Clone, PartialEq)]
enum LayerEntry {
    Mac(BTreeMap<MacKey, LayerLatency>),
    Passthrough(BTreeMap<BitWidth, LayerLatency>),
}

/// Per-layer latency estimates for every configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyTable {
    pub specs: Vec<LayerSpec>,
    pub rates: Vec<f64>,
    entries: Vec<LayerEntry>,
}

/// Stand-in layer with the cycle-relevant properties of a real one.
fn synthetic_layer(spec: &LayerSpec, cfg: Option<PrecisionConfig>, in_bits: BitWidth, out_bits: Option<BitWidth>, rate: f64) -> QuantLayer {
    let (weights, bias, pruned) = match cfg {
        Some(_) => {
            let k = pruned_channel_count(spec.out_channels, rate);
            let per = spec.weights_per_channel();
            let mut w = vec![1; spec.weight_count()];
            w[..k * per].fill(0);
            let mut b = vec![1; spec.out_channels];
            b[..k].fill(0);
            (w, b, (0..k).collect())
        }
        None => (vec![], vec![], vec![]),
    };
    QuantLayer {
        spec: spec.clone(),
        cfg,
        weights,
        weight_shift: 0,
        bias,
        pruned,
        pruning_rate: rate,
        in_bits,
        in_shift: 0,
        out_bits,
        out_shift: 0,
        requant_shift: if cfg.is_some() && out_bits.is_some() { 8 } else { 0 },
    }
}

fn simulate(layer: &QuantLayer, model: &CycleModel, opts: &KernelOptions) -> Result<LayerLatency, DseError> {
    let prog = compile_layer(layer, KernelStyle::Packed, opts)?;
    let inputs: Vec<Vec<i32>> = prog.inputs.iter().map(|b| vec![0; b.shape.len()]).collect();
    let refs: Vec<&[i32]> = inputs.iter().map(|v| v.as_slice()).collect();
    let (_, report) = prog.execute(&refs, model)?;
    Ok(LayerLatency { cycles: report.total_cycles, loads: report.load_count })
}

/// Simulates every layer alone under every precision, output width and
/// pruning rate.
pub fn layer_latency_table(
    specs: &[LayerSpec],
    rates: &[f64],
    model: &CycleModel,
    opts: &KernelOptions,
) -> Result<LatencyTable, DseError> {
    crate::network::validate_chain(specs)?;
    let n = specs.len();
    let entries = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| -> Result<LayerEntry, DseError> {
            if spec.is_mac() {
                let outs: Vec<Option<BitWidth>> =
                    if i + 1 == n { vec![None] } else { BitWidth::ALL.iter().map(|&b| Some(b)).collect() };
                let keys: Vec<MacKey> = PrecisionConfig::all()
                    .into_iter()
                    .flat_map(|cfg| outs.iter().flat_map(move |&o| rates.iter().map(move |&r| (cfg, o, rate_key(r)))))
                    .collect();
                let map = keys
                    .par_iter()
                    .map(|&(cfg, o, rk)| {
                        let l = synthetic_layer(spec, Some(cfg), cfg.activation, o, rk as f64 / 1000.0);
                        Ok(((cfg, o, rk), simulate(&l, model, opts)?))
                    })
                    .collect::<Result<BTreeMap<_, _>, DseError>>()?;
                Ok(LayerEntry::Mac(map))
            } else {
                let map = BitWidth::ALL
                    .par_iter()
                    .map(|&b| Ok((b, simulate(&synthetic_layer(spec, None, b, Some(b), 0.0), model, opts)?)))
                    .collect::<Result<BTreeMap<_, _>, DseError>>()?;
                Ok(LayerEntry::Passthrough(map))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LatencyTable { specs: specs.to_vec(), rates: rates.to_vec(), entries })
}

impl LatencyTable {
    pub fn mac_layers(&self) -> Vec<usize> {
        (0..self.specs.len()).filter(|&i| self.specs[i].is_mac()).collect()
    }

    /// Latency of weighted layer `layer` (index into all layers) when it
    /// emits `out` bits. The nearest tabulated pruning rate is used.
    pub fn mac_entry(&self, layer: usize, cfg: PrecisionConfig, out: Option<BitWidth>, rate: f64) -> Option<LayerLatency> {
        let LayerEntry::Mac(map) = &self.entries[layer] else { return None };
        let key = rate_key(rate);
        let rk = self.rates.iter().map(|&r| rate_key(r)).min_by_key(|&r| r.abs_diff(key))?;
        map.get(&(cfg, out, rk)).copied()
    }

    /// Latency of a weighted layer with its output at its own activation
    /// width, the figure used to rank configurations of one layer.
    pub fn standalone(&self, layer: usize, cfg: PrecisionConfig, rate: f64) -> Option<LayerLatency> {
        let out = if layer + 1 == self.specs.len() { None } else { Some(cfg.activation) };
        self.mac_entry(layer, cfg, out, rate)
    }

    /// Per-layer estimates of a configuration vector (one choice per
    /// weighted layer).
    pub fn per_layer(&self, choices: &[LayerChoice]) -> Result<Vec<LayerLatency>, DseError> {
        let (_, outs) = tensor_bits(&self.specs, choices).map_err(|e| DseError::Config(e.to_string()))?;
        let mut it = choices.iter();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| match e {
                LayerEntry::Mac(_) => {
                    let c = it.next().expect("checked by tensor_bits");
                    let out = if i + 1 == self.specs.len() { None } else { outs[i] };
                    self.mac_entry(i, c.cfg, out, c.pruning_rate)
                        .ok_or_else(|| DseError::Config(format!("layer {i}: no estimate")))
                }
                LayerEntry::Passthrough(map) => {
                    let b = outs[i].ok_or_else(|| DseError::Config(format!("layer {i}: unknown width")))?;
                    Ok(map[&b])
                }
            })
            .collect()
    }

    pub fn estimate(&self, choices: &[LayerChoice]) -> Result<LayerLatency, DseError> {
        Ok(self.per_layer(choices)?.into_iter().fold(LayerLatency::default(), |a, b| a + b))
    }
}

/// One scored configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub choices: Vec<LayerChoice>,
    pub accuracy: f64,
    pub total_cycles: u64,
    pub loads: u64,
}

/// Anything placed in the (accuracy up, cycles down) plane.
pub trait Objectives {
    fn accuracy(&self) -> f64;
    fn cycles(&self) -> f64;
}

impl Objectives for ParetoPoint {
    fn accuracy(&self) -> f64 {
        self.accuracy
    }
    fn cycles(&self) -> f64 {
        self.total_cycles as f64
    }
}

impl Objectives for (f64, f64) {
    fn accuracy(&self) -> f64 {
        self.0
    }
    fn cycles(&self) -> f64 {
        self.1
    }
}

/// Non-dominated subset, ordered by cycles (then input order).
pub fn pareto_front<T: Objectives + Clone>(points: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.cycles().total_cmp(&pb.cycles()).then(pb.accuracy().total_cmp(&pa.accuracy()))
    });
    let mut out = Vec::new();
    let mut best_prev = f64::NEG_INFINITY;
    let mut k = 0;
    while k < idx.len() {
        let c = points[idx[k]].cycles();
        let mut end = k;
        while end < idx.len() && points[idx[end]].cycles() == c {
            end += 1;
        }
        let top = points[idx[k]].accuracy();
        if top > best_prev {
            out.extend(idx[k..end].iter().filter(|&&i| points[i].accuracy() == top).map(|&i| points[i].clone()));
            best_prev = top;
        }
        k = end;
    }
    out
}

/// Area dominated by `points` and bounded by `reference` (accuracy,
/// cycles). Every point must be at least as good as the reference.
pub fn hypervolume<T: Objectives + Clone>(points: &[T], reference: (f64, f64)) -> Result<f64, DseError> {
    let (ra, rc) = reference;
    if points.iter().any(|p| p.accuracy() < ra || p.cycles() > rc) {
        return Err(DseError::InvalidReference);
    }
    let mut area = 0.0;
    let mut prev = ra;
    for p in pareto_front(points) {
        if p.accuracy() > prev {
            area += (rc - p.cycles()) * (p.accuracy() - prev);
            prev = p.accuracy();
        }
    }
    Ok(area)
}

/// Everything the search needs besides the accuracy evaluator.
#[derive(Debug, Clone)]
pub struct DseProblem {
    pub table: LatencyTable,
    /// Reference accuracy the threshold is measured from.
    pub baseline_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DseResult {
    /// Every evaluated configuration in evaluation order.
    pub evaluated: Vec<ParetoPoint>,
    /// Evaluated points meeting the accuracy constraint.
    pub acceptable: Vec<ParetoPoint>,
    /// Pareto front of the acceptable points.
    pub front: Vec<ParetoPoint>,
    /// Set when even full precision misses the constraint; `acceptable`
    /// then holds only the full-precision point.
    pub infeasible: bool,
}

impl DseResult {
    pub fn evaluations(&self) -> usize {
        self.evaluated.len()
    }
}

type ChoiceKey = Vec<(PrecisionConfig, u32)>;

fn key_of(choices: &[LayerChoice]) -> ChoiceKey {
    choices.iter().map(|c| (c.cfg, rate_key(c.pruning_rate))).collect()
}

/// Evaluation log with memoization and a budget.
struct Search<'a, F> {
    problem: &'a DseProblem,
    eval: &'a F,
    seen: HashSet<ChoiceKey>,
    log: Vec<ParetoPoint>,
    floor: f64,
}

impl<'a, F: Fn(&[LayerChoice]) -> f64 + Sync> Search<'a, F> {
    fn new(problem: &'a DseProblem, eval: &'a F, threshold: f64) -> Self {
        Self { problem, eval, seen: HashSet::new(), log: Vec::new(), floor: problem.baseline_accuracy - threshold / 100.0 }
    }

    fn ok(&self, acc: f64) -> bool {
        acc >= self.floor - 1e-12
    }

    /// Evaluates the unseen candidates in order, at most `limit` of them,
    /// in parallel. Returns their accuracies (`None` when skipped or seen).
    fn evaluate(&mut self, candidates: &[Vec<LayerChoice>], limit: usize) -> Vec<Option<f64>> {
        let mut picked = Vec::new();
        let mut slots = vec![None; candidates.len()];
        for (k, c) in candidates.iter().enumerate() {
            if picked.len() >= limit {
                break;
            }
            if self.seen.insert(key_of(c)) {
                picked.push(k);
            }
        }
        let scored: Vec<(usize, f64, LayerLatency)> = picked
            .par_iter()
            .filter_map(|&k| {
                let lat = self.problem.table.estimate(&candidates[k]).ok()?;
                Some((k, (self.eval)(&candidates[k]), lat))
            })
            .collect();
        for (k, acc, lat) in scored {
            self.log.push(ParetoPoint {
                choices: candidates[k].clone(),
                accuracy: acc,
                total_cycles: lat.cycles,
                loads: lat.loads,
            });
            slots[k] = Some(acc);
        }
        slots
    }

    fn evaluate_one(&mut self, c: &[LayerChoice]) -> Option<f64> {
        if let Some(p) = self.log.iter().find(|p| key_of(&p.choices) == key_of(c)) {
            return Some(p.accuracy);
        }
        self.evaluate(&[c.to_vec()], 1)[0]
    }
}

fn valid(table: &LatencyTable, c: &[LayerChoice]) -> bool {
    tensor_bits(&table.specs, c).is_ok()
}

/// Configuration with the median standalone latency, ties toward lower
/// weight bits.
fn median_config(table: &LatencyTable, layer: usize, rate: f64) -> PrecisionConfig {
    let mut v: Vec<(u64, BitWidth, PrecisionConfig)> = PrecisionConfig::all()
        .into_iter()
        .map(|c| (table.standalone(layer, c, rate).map_or(u64::MAX, |l| l.cycles), c.weight, c))
        .collect();
    v.sort();
    v[v.len() / 2].2
}

fn upgrade(cfg: PrecisionConfig) -> Option<PrecisionConfig> {
    let up = |b: BitWidth| match b {
        BitWidth::B2 => Some(BitWidth::B4),
        BitWidth::B4 => Some(BitWidth::B8),
        BitWidth::B8 => None,
    };
    match up(cfg.weight) {
        Some(w) => Some(PrecisionConfig::new(w, cfg.activation)),
        None => up(cfg.activation).map(|a| PrecisionConfig::new(cfg.weight, a)),
    }
}

fn down(b: BitWidth) -> Option<BitWidth> {
    match b {
        BitWidth::B8 => Some(BitWidth::B4),
        BitWidth::B4 => Some(BitWidth::B2),
        BitWidth::B2 => None,
    }
}

/// Vectors one step cheaper than `c`: one layer loses one weight or
/// activation width step, or (with `prune_step`) one layer other than the
/// classifier is pruned one step further.
fn neighbours(table: &LatencyTable, c: &[LayerChoice], prune_step: Option<(&[f64], usize)>) -> Vec<Vec<LayerChoice>> {
    let mut out = Vec::new();
    for k in 0..c.len() {
        let cfg = c[k].cfg;
        let lower = [
            down(cfg.weight).map(|w| PrecisionConfig::new(w, cfg.activation)),
            down(cfg.activation).map(|a| PrecisionConfig::new(cfg.weight, a)),
        ];
        for n in lower.into_iter().flatten() {
            let mut v = c.to_vec();
            v[k].cfg = n;
            out.push(v);
        }
        if let Some((rates, classifier)) = prune_step {
            if k != classifier {
                if let Some(&r) = rates.iter().find(|&&r| r > c[k].pruning_rate + 1e-9) {
                    let mut v = c.to_vec();
                    v[k].pruning_rate = r;
                    out.push(v);
                }
            }
        }
    }
    out.retain(|v| valid(table, v));
    out
}

/// Walks down from an accepted vector level by level, expanding only the
/// vectors that stay accurate enough. Nothing above `start` in any layer is
/// ever evaluated. Returns the number of evaluations spent.
fn descend<F: Fn(&[LayerChoice]) -> f64 + Sync>(
    search: &mut Search<F>,
    start: &[LayerChoice],
    budget: usize,
    prune_step: Option<(&[f64], usize)>,
) -> usize {
    let table = &search.problem.table;
    let before = search.log.len();
    let mut level = vec![start.to_vec()];
    while !level.is_empty() {
        let spent = search.log.len() - before;
        if spent >= budget {
            break;
        }
        let mut next: Vec<(u64, Vec<LayerChoice>)> = level
            .iter()
            .flat_map(|c| neighbours(table, c, prune_step))
            .filter_map(|c| Some((table.estimate(&c).ok()?.cycles, c)))
            .collect();
        next.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| key_of(&a.1).cmp(&key_of(&b.1))));
        next.dedup_by(|a, b| key_of(&a.1) == key_of(&b.1));
        let cands: Vec<Vec<LayerChoice>> = next.into_iter().map(|(_, c)| c).collect();
        let scores = search.evaluate(&cands, budget - spent);
        level = cands.into_iter().zip(scores).filter(|(_, a)| a.is_some_and(|a| search.ok(a))).map(|(c, _)| c).collect();
    }
    search.log.len() - before
}

fn cartesian<T: Clone>(options: &[Vec<T>]) -> Vec<Vec<T>> {
    options.iter().fold(vec![vec![]], |acc, opts| {
        acc.iter()
            .flat_map(|prefix| {
                opts.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(o.clone());
                    v
                })
            })
            .collect()
    })
}

/// Greedy search: per pruning sweep, start every layer at its median
/// latency configuration and raise the cheapest layer one step at a time
/// until the start is accurate enough, then explore only lower precisions
/// from there.
/// One iteration is one accuracy evaluation; the budget is shared evenly
/// by the sweeps. The classifier layer is never pruned by the sweep.
pub fn greedy_dse<F>(problem: &DseProblem, params: &DseParams, evaluator: F) -> Result<DseResult, DseError>
where
    F: Fn(&[LayerChoice]) -> f64 + Sync,
{
    params.validate()?;
    let table = &problem.table;
    let macs = table.mac_layers();
    let last = table.specs.len() - 1;
    let rates = params.pruning_rates();
    let per_sweep = (params.budget / rates.len()).max(1);
    let mut search = Search::new(problem, &evaluator, params.threshold);
    let mut any_ok = false;

    for &p in &rates {
        let start_len = search.log.len();
        let spent = |s: &Search<F>| s.log.len() - start_len;
        let rate_of = |layer: usize| if layer == last { 0.0 } else { p };
        let mut cur: Vec<LayerChoice> =
            macs.iter().map(|&l| LayerChoice::new(median_config(table, l, rate_of(l)), rate_of(l))).collect();
        // the median start may disagree on a shared tensor; raise until valid
        while !valid(table, &cur) {
            let Some(k) = (0..cur.len()).find(|&k| upgrade(cur[k].cfg).is_some()) else { break };
            cur[k].cfg = upgrade(cur[k].cfg).expect("checked");
        }
        let mut acc = search.evaluate_one(&cur);
        while !acc.is_some_and(|a| search.ok(a)) && spent(&search) < per_sweep {
            // raise the layer needing the fewest cycles
            let pick = (0..cur.len())
                .filter(|&k| upgrade(cur[k].cfg).is_some())
                .min_by_key(|&k| table.standalone(macs[k], cur[k].cfg, cur[k].pruning_rate).map_or(u64::MAX, |l| l.cycles));
            let Some(k) = pick else { break };
            cur[k].cfg = upgrade(cur[k].cfg).expect("checked");
            if valid(table, &cur) {
                acc = search.evaluate_one(&cur);
            }
        }
        if !acc.is_some_and(|a| search.ok(a)) {
            continue;
        }
        any_ok = true;
        let left = per_sweep.saturating_sub(spent(&search));
        let classifier = macs.len() - 1;
        descend(&mut search, &cur, left, params.refine.then_some((rates.as_slice(), classifier)));
    }

    let evaluated = search.log;
    let mut acceptable: Vec<ParetoPoint> = evaluated.iter().filter(|p| p.accuracy >= search.floor - 1e-12).cloned().collect();
    let infeasible = !any_ok && acceptable.is_empty();
    if infeasible {
        let full: Vec<LayerChoice> =
            macs.iter().map(|_| LayerChoice::new(PrecisionConfig::new(BitWidth::B8, BitWidth::B8), 0.0)).collect();
        if let Some(p) = evaluated.iter().find(|p| key_of(&p.choices) == key_of(&full)) {
            acceptable = vec![p.clone()];
        } else {
            let lat = table.estimate(&full)?;
            acceptable = vec![ParetoPoint { accuracy: evaluator(&full), choices: full, total_cycles: lat.cycles, loads: lat.loads }];
        }
    }
    let front = pareto_front(&acceptable);
    Ok(DseResult { evaluated, acceptable, front, infeasible })
}

/// Evaluates every configuration vector: nine precisions and every
/// pruning rate per weighted layer.
pub fn exhaustive_dse<F>(problem: &DseProblem, params: &DseParams, evaluator: F, limit: u128) -> Result<DseResult, DseError>
where
    F: Fn(&[LayerChoice]) -> f64 + Sync,
{
    params.validate()?;
    let table = &problem.table;
    let macs = table.mac_layers();
    let rates = params.pruning_rates();
    let needed = (9 * rates.len() as u128).pow(macs.len() as u32);
    if macs.len() > 4 || needed > limit {
        return Err(DseError::BudgetExceeded { needed, limit });
    }
    let per_layer: Vec<LayerChoice> = PrecisionConfig::all()
        .into_iter()
        .flat_map(|c| rates.iter().map(move |&r| LayerChoice::new(c, r)))
        .collect();
    let all = cartesian(&vec![per_layer; macs.len()]);
    let floor = problem.baseline_accuracy - params.threshold / 100.0;
    let evaluated: Vec<ParetoPoint> = all
        .par_iter()
        .filter_map(|c| {
            let lat = table.estimate(c).ok()?;
            Some(ParetoPoint { choices: c.clone(), accuracy: evaluator(c), total_cycles: lat.cycles, loads: lat.loads })
        })
        .collect();
    let acceptable: Vec<ParetoPoint> = evaluated.iter().filter(|p| p.accuracy >= floor - 1e-12).cloned().collect();
    let front = pareto_front(&acceptable);
    Ok(DseResult { evaluated, acceptable, front, infeasible: false })
}

/// Memoizing wrapper so repeated configurations are scored once.
pub fn memoized<F: Fn(&[LayerChoice]) -> f64 + Sync>(f: F) -> impl Fn(&[LayerChoice]) -> f64 + Sync {
    let cache = std::sync::Mutex::new(HashMap::<ChoiceKey, f64>::new());
    move |c: &[LayerChoice]| {
        let k = key_of(c);
        if let Some(&v) = cache.lock().expect("cache lock").get(&k) {
            return v;
        }
        let v = f(c);
        cache.lock().expect("cache lock").insert(k, v);
        v
    }
}

fn describe(choices: &[LayerChoice]) -> (String, String) {
    let cfgs = choices.iter().map(|c| c.cfg.to_string()).collect::<Vec<_>>().join("/");
    let rates = choices.iter().map(|c| format!("{}", c.pruning_rate)).collect::<Vec<_>>().join("/");
    (cfgs, rates)
}

/// CSV with one row per point: configs, pruning rates, accuracy, cycles, loads.
pub fn write_points_csv<W: Write>(out: W, points: &[ParetoPoint]) -> Result<(), DseError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["configs", "pruning_rates", "accuracy", "cycles", "loads"])?;
    for p in points {
        let (cfgs, rates) = describe(&p.choices);
        w.write_record([cfgs, rates, format!("{:.6}", p.accuracy), p.total_cycles.to_string(), p.loads.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
