//! Voltage-scaling power model, timing-slack validity and efficiency
//! figures derived from execution reports.
//!
//! Total power is `P_s * (V / V_ref)^k + a * C * f * V^2`. The static
//! exponent `k` has no published law behind it; it is calibrated from a
//! target total-power ratio between two voltages.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::ExecutionReport;

pub const V_MIN: f64 = 0.60;
pub const V_MAX: f64 = 1.00;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("voltage {0} V outside [{V_MIN}, {V_MAX}]")]
    VoltageOutOfRange(f64),
    #[error("slack never changes sign over the table")]
    NoSignChange,
    #[error("{v} V is below the minimum valid voltage {min} V")]
    InvalidVoltage { v: f64, min: f64 },
    #[error("invalid power parameters: {0}")]
    InvalidParams(String),
    #[error("invalid slack table: {0}")]
    InvalidTable(String),
    #[error("parameter file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerParams {
    /// Static power at `v_ref`, mW.
    pub p_static_ref_mw: f64,
    /// Switching activity.
    pub activity: f64,
    /// Lumped switched capacitance, F.
    pub capacitance_f: f64,
    pub frequency_hz: f64,
    pub v_ref: f64,
    pub static_exponent: f64,
}

/// Static share of total power at the reference voltage in the defaults.
pub const DEFAULT_STATIC_FRACTION: f64 = 0.20;
/// Total-power ratio between 0.7 V and 1.0 V the defaults are tuned to.
pub const TARGET_RATIO_0V7: f64 = 0.42;

impl Default for PowerParams {
    /// 250 MHz, 20% static share at 1.0 V, 2.03 mW total at 0.8 V.
    fn default() -> Self {
        let k = calibrate_static_exponent(TARGET_RATIO_0V7, DEFAULT_STATIC_FRACTION, 0.7, 1.0);
        let (f, a, s) = (250e6, 0.15, DEFAULT_STATIC_FRACTION);
        // total at 1.0 V chosen so that the 0.8 V total is 2.03 mW
        let p_ref = 2.03 / (s * 0.8f64.powf(k) + (1.0 - s) * 0.64);
        Self {
            p_static_ref_mw: s * p_ref,
            activity: a,
            capacitance_f: (1.0 - s) * p_ref * 1e-3 / (a * f),
            frequency_hz: f,
            v_ref: 1.0,
            static_exponent: k,
        }
    }
}

/// Exponent `k` such that `P(v_low) / P(v_ref) == ratio` when a
/// `static_fraction` of the power at `v_ref` is static and the rest is
/// dynamic.
pub fn calibrate_static_exponent(ratio: f64, static_fraction: f64, v_low: f64, v_ref: f64) -> f64 {
    let x = v_low / v_ref;
    let dyn_part = (1.0 - static_fraction) * x * x;
    ((ratio - dyn_part) / static_fraction).ln() / x.ln()
}

impl PowerParams {
    pub fn validate(&self) -> Result<(), PowerError> {
        let fields = [
            ("p_static_ref_mw", self.p_static_ref_mw),
            ("activity", self.activity),
            ("capacitance_f", self.capacitance_f),
            ("frequency_hz", self.frequency_hz),
            ("v_ref", self.v_ref),
            ("static_exponent", self.static_exponent),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(PowerError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines; unknown keys are rejected and omitted
    /// keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, PowerError> {
        let p: Self = toml::from_str(text).map_err(|e| PowerError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("plain numbers serialize")
    }
}

fn check_range(v: f64) -> Result<(), PowerError> {
    if !(V_MIN - 1e-9..=V_MAX + 1e-9).contains(&v) {
        return Err(PowerError::VoltageOutOfRange(v));
    }
    Ok(())
}

pub fn static_power(p: &PowerParams, v: f64) -> Result<f64, PowerError> {
    check_range(v)?;
    Ok(p.p_static_ref_mw * (v / p.v_ref).powf(p.static_exponent))
}

/// Dynamic power in mW.
pub fn dynamic_power(p: &PowerParams, v: f64) -> Result<f64, PowerError> {
    check_range(v)?;
    Ok(p.activity * p.capacitance_f * p.frequency_hz * v * v * 1e3)
}

/// Total power in mW.
pub fn total_power(p: &PowerParams, v: f64) -> Result<f64, PowerError> {
    Ok(static_power(p, v)? + dynamic_power(p, v)?)
}

/// Timing slack (ps) sampled at a few voltages, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlackTable {
    points: Vec<(f64, f64)>,
}

impl SlackTable {
    /// Points may come in any order; slack must grow with voltage.
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self, PowerError> {
        if points.len() < 2 {
            return Err(PowerError::InvalidTable("need at least two samples".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in points.windows(2) {
            if w[0].0 == w[1].0 || w[1].1 < w[0].1 {
                return Err(PowerError::InvalidTable("slack must increase with voltage".into()));
            }
        }
        Ok(Self { points })
    }

    /// The two published extremes: +1048 ps at 1.00 V, -121 ps at 0.60 V.
    pub fn endpoints() -> Self {
        Self::new(vec![(0.60, -121.0), (1.00, 1048.0)]).expect("valid")
    }

    /// The endpoints joined by an alpha-power delay curve instead of a
    /// straight line, sampled every millivolt.
    pub fn fitted(law: &DelayLaw) -> Result<Self, PowerError> {
        let e = Self::endpoints();
        law.fit(e.points[0], e.points[1])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Every sample moved by `ps`.
    pub fn offset(&self, ps: f64) -> Self {
        Self { points: self.points.iter().map(|&(v, s)| (v, s + ps)).collect() }
    }

    pub fn slack_at(&self, v: f64) -> f64 {
        let p = &self.points;
        let k = p.partition_point(|&(x, _)| x < v).clamp(1, p.len() - 1);
        let ((v0, s0), (v1, s1)) = (p[k - 1], p[k]);
        s0 + (s1 - s0) * (v - v0) / (v1 - v0)
    }

    /// Lowest voltage with non-negative slack, rounded up to 10 mV.
    pub fn min_valid_voltage(&self) -> Result<f64, PowerError> {
        let p = &self.points;
        if p[0].1 >= 0.0 || p[p.len() - 1].1 < 0.0 {
            return Err(PowerError::NoSignChange);
        }
        let k = p.iter().position(|&(_, s)| s >= 0.0).expect("sign change");
        let ((v0, s0), (v1, s1)) = (p[k - 1], p[k]);
        let zero = v0 + (v1 - v0) * (-s0) / (s1 - s0);
        Ok(round_up_10mv(zero))
    }
}

/// Alpha-power gate delay `d(V) = K * V / (V - vt)^alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayLaw {
    pub vt: f64,
    pub alpha: f64,
}

impl Default for DelayLaw {
    fn default() -> Self {
        Self { vt: 0.35, alpha: 1.3 }
    }
}

impl DelayLaw {
    fn shape(&self, v: f64) -> f64 {
        v / (v - self.vt).powf(self.alpha)
    }

    /// Slack is `T - d(V)`; `K` and `T` are fixed by two `(V, slack)`
    /// samples. The result is sampled at 1 mV over `[V_MIN, V_MAX]`.
    pub fn fit(&self, a: (f64, f64), b: (f64, f64)) -> Result<SlackTable, PowerError> {
        if !(self.vt >= 0.0 && self.vt < V_MIN && self.alpha > 0.0) {
            return Err(PowerError::InvalidParams(format!("need 0 <= vt < {V_MIN} and alpha > 0")));
        }
        let (ga, gb) = (self.shape(a.0), self.shape(b.0));
        if ga == gb {
            return Err(PowerError::InvalidTable("samples at the same voltage".into()));
        }
        let k = (b.1 - a.1) / (ga - gb);
        let t = a.1 + k * ga;
        let (lo, hi) = ((V_MIN * 1000.0).round() as u32, (V_MAX * 1000.0).round() as u32);
        SlackTable::new((lo..=hi).map(|mv| {
            let v = mv as f64 / 1000.0;
            (v, t - k * self.shape(v))
        }).collect())
    }
}

fn round_up_10mv(v: f64) -> f64 {
    (v * 100.0 - 1e-9).ceil() / 100.0
}

/// Throughput and energy efficiency of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub gops: f64,
    pub power_mw: f64,
    pub gops_per_w: f64,
}

/// One MAC counts as two operations.
pub fn gops(macs: u64, cycles: u64, frequency_hz: f64) -> f64 {
    if cycles == 0 {
        return 0.0;
    }
    2.0 * macs as f64 * frequency_hz / cycles as f64 / 1e9
}

pub fn efficiency(report: &ExecutionReport, params: &PowerParams, v: f64, slack: &SlackTable) -> Result<Efficiency, PowerError> {
    let min = slack.min_valid_voltage()?;
    if v < min - 1e-9 {
        return Err(PowerError::InvalidVoltage { v, min });
    }
    let g = gops(report.mac_count, report.total_cycles, params.frequency_hz);
    let p = total_power(params, v)?;
    Ok(Efficiency { gops: g, power_mw: p, gops_per_w: g / (p / 1000.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub voltage: f64,
    pub p_static_mw: f64,
    pub p_dynamic_mw: f64,
    pub p_total_mw: f64,
    pub gops: f64,
    pub gops_per_w: f64,
    pub valid: bool,
}

/// Samples `[V_MIN, V_MAX]` at `step` volts (snapped to whole millivolts).
/// Points below the minimum valid voltage are kept but flagged.
pub fn voltage_sweep(
    report: &ExecutionReport,
    params: &PowerParams,
    slack: &SlackTable,
    step: f64,
) -> Result<Vec<SweepPoint>, PowerError> {
    let step_mv = (step * 1000.0).round() as u32;
    if step_mv == 0 {
        return Err(PowerError::InvalidParams("sweep step below 1 mV".into()));
    }
    let min = slack.min_valid_voltage().ok();
    let g = gops(report.mac_count, report.total_cycles, params.frequency_hz);
    let (lo, hi) = ((V_MIN * 1000.0).round() as u32, (V_MAX * 1000.0).round() as u32);
    (lo..=hi)
        .step_by(step_mv as usize)
        .map(|mv| {
            let v = mv as f64 / 1000.0;
            let (ps, pd) = (static_power(params, v)?, dynamic_power(params, v)?);
            let total = ps + pd;
            Ok(SweepPoint {
                voltage: v,
                p_static_mw: ps,
                p_dynamic_mw: pd,
                p_total_mw: total,
                gops: g,
                gops_per_w: g / (total / 1000.0),
                valid: min.is_some_and(|m| v >= m - 1e-9),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(out: W, points: &[SweepPoint]) -> Result<(), PowerError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["voltage", "p_static_mw", "p_dynamic_mw", "p_total_mw", "gops", "gops_per_w", "valid"])?;
    for p in points {
        w.write_record([
            format!("{:.2}", p.voltage),
            format!("{:.6}", p.p_static_mw),
            format!("{:.6}", p.p_dynamic_mw),
            format!("{:.6}", p.p_total_mw),
            format!("{:.6}", p.gops),
            format!("{:.3}", p.gops_per_w),
            p.valid.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
