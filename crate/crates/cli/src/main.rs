use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use marvin_core::data::Dataset;
use marvin_core::dse::{
    exhaustive_dse, greedy_dse, hypervolume, layer_latency_table, memoized, write_points_csv, DseParams, DseProblem,
    DseResult, ParetoPoint,
};
use marvin_core::fixtures::{self, FixtureModel};
use marvin_core::io::{
    self, load_manifest, read_program, rows_from_csv, rows_to_csv, write_atomic, write_program, LayerRow, RunManifest,
    SlackRow, SummaryRow,
};
use marvin_core::kernels::{compile_network, layer_name, KernelOptions, KernelStyle};
use marvin_core::network::FloatNetwork;
use marvin_core::power::{voltage_sweep, write_sweep_csv, DelayLaw, PowerParams, SlackTable};
use marvin_core::quant::{
    calibrate, float_accuracy, quantize_network, quantized_accuracy, quantized_forward, LayerChoice, QuantNetwork,
};
use marvin_core::sim::{CycleModel, ExecutionReport};
use marvin_core::{disassemble, BitWidth, PrecisionConfig};

const EXHAUSTIVE_LIMIT: u128 = 100_000;

#[derive(Parser)]
#[command(name = "marvin", version, about = "Packed-SIMD MAC extension toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Where a network and its data come from: a manifest, or a fixture
/// trained on the spot.
#[derive(clap::Args, Clone)]
struct Source {
    /// Run manifest; without it the fixture named by --model is built.
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "cnn")]
    model: String,
    #[arg(long, default_value_t = fixtures::DEFAULT_SEED)]
    seed: u64,
    /// Dataset file replacing the bundled digits set.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the reference models and write their files.
    Fixtures {
        #[arg(long, default_value = "all")]
        model: String,
        #[arg(long, default_value_t = fixtures::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
    },
    /// Quantize a network and report its accuracy.
    Quantize {
        #[command(flatten)]
        src: Source,
        /// `w4a4` for every layer or a per-layer list like `w8a8,w4a4@0.25`.
        #[arg(long)]
        config: Option<String>,
        /// Write the quantized network as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate baseline and packed kernels for one input.
    Run {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        config: Option<String>,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 2)]
        block: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search per-layer precision and pruning.
    Dse {
        #[command(flatten)]
        src: Source,
        /// Search parameters file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tolerated accuracy loss in percentage points.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        granularity: Option<f64>,
        #[arg(long)]
        pmax: Option<f64>,
        /// Evaluation budget.
        #[arg(long)]
        iters: Option<usize>,
        /// Let the search raise single-layer pruning rates.
        #[arg(long)]
        refine: bool,
        /// Also enumerate every configuration and compare.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value = "dse")]
        out: PathBuf,
    },
    /// Sweep supply voltage for a run summary.
    Power {
        /// `summary.csv` written by `run`.
        #[arg(long)]
        report: PathBuf,
        /// Power parameters file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Slack samples with columns `voltage,slack_ps`.
        #[arg(long)]
        slack: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value = "packed")]
        style: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a program image as assembly.
    Disasm { file: PathBuf },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Fixtures { model, seed, dataset, out } => cmd_fixtures(&model, seed, dataset.as_deref(), &out),
        Cmd::Quantize { src, config, out } => cmd_quantize(&src, config.as_deref(), out.as_deref()),
        Cmd::Run { src, config, sample, block, out } => cmd_run(&src, config.as_deref(), sample, block, out.as_deref()),
        Cmd::Dse { src, config, threshold, granularity, pmax, iters, refine, exhaustive, out } => {
            let mut params = match &config {
                Some(p) => toml_params(p)?,
                None => DseParams::default(),
            };
            params.threshold = threshold.unwrap_or(params.threshold);
            params.granularity = granularity.unwrap_or(params.granularity);
            params.p_max = pmax.unwrap_or(params.p_max);
            params.budget = iters.unwrap_or(params.budget);
            params.refine |= refine;
            params.validate()?;
            cmd_dse(&src, &params, exhaustive, &out)
        }
        Cmd::Power { report, config, slack, step, style, out } => {
            cmd_power(&report, config.as_deref(), slack.as_deref(), step, &style, out.as_deref())
        }
        Cmd::Disasm { file } => cmd_disasm(&file),
    }
}

fn toml_params(path: &Path) -> Result<DseParams> {
    let text = io::read_text(path)?;
    toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn load_dataset(path: Option<&Path>) -> Result<Dataset> {
    match path {
        Some(p) => Ok(Dataset::from_bytes(&io::read_file(p)?).with_context(|| p.display().to_string())?),
        None => Ok(Dataset::digits()),
    }
}

fn parse_model(name: &str) -> Result<FixtureModel> {
    FixtureModel::parse(name).ok_or_else(|| anyhow!("unknown model {name:?}, expected mlp or cnn"))
}

fn cmd_fixtures(model: &str, seed: u64, dataset: Option<&Path>, out: &Path) -> Result<()> {
    let models = match model {
        "all" => vec![FixtureModel::Mlp, FixtureModel::Cnn],
        m => vec![parse_model(m)?],
    };
    let data = load_dataset(dataset)?;
    for m in models {
        let fx = fixtures::build(m, &data, seed)?;
        let dir = out.join(m.name());
        let manifest = RunManifest {
            version: io::MANIFEST_VERSION,
            network: "network.toml".into(),
            weights: "weights.mrvw".into(),
            dataset: "dataset.bin".into(),
            seed,
            layers: vec![],
            cycle_model: None,
        };
        write_atomic(&dir.join("network.toml"), io::network_to_toml(&fx.net.specs()).as_bytes())?;
        write_atomic(&dir.join("weights.mrvw"), &io::encode_weights(&fx.net))?;
        write_atomic(&dir.join("dataset.bin"), &data.to_bytes())?;
        write_atomic(&dir.join("manifest.toml"), manifest.to_toml().as_bytes())?;
        println!("{}: float accuracy {:.4} -> {}", m.name(), fx.float_accuracy, dir.display());
    }
    Ok(())
}

/// A network with its data split, ready for quantization.
struct Setup {
    net: FloatNetwork,
    dataset: Dataset,
    split: marvin_core::data::Split,
    choices: Vec<LayerChoice>,
    model: CycleModel,
}

impl Setup {
    fn load(src: &Source) -> Result<Self> {
        let (net, dataset, seed, choices, manifest_model) = match &src.manifest {
            Some(path) => {
                let run = load_manifest(path)?;
                let data = match &src.dataset {
                    Some(_) => load_dataset(src.dataset.as_deref())?,
                    None => run.dataset,
                };
                (run.net, data, run.manifest.seed, run.manifest.layers, run.manifest.cycle_model)
            }
            None => {
                let data = load_dataset(src.dataset.as_deref())?;
                let fx = fixtures::build(parse_model(&src.model)?, &data, src.seed)?;
                (fx.net, data, src.seed, vec![], None)
            }
        };
        let model = match std::env::var_os("MARVIN_CYCLE_MODEL") {
            Some(p) => {
                let p = PathBuf::from(p);
                CycleModel::from_toml(&io::read_text(&p)?).with_context(|| p.display().to_string())?
            }
            None => manifest_model.unwrap_or_default(),
        };
        let split = fixtures::split_for(&dataset, seed);
        let n = net.specs().iter().filter(|s| s.is_mac()).count();
        let choices = if choices.is_empty() { vec![LayerChoice::new(PrecisionConfig::new(BitWidth::B8, BitWidth::B8), 0.0); n] } else { choices };
        Ok(Self { net, dataset, split, choices, model })
    }

    fn mac_layers(&self) -> usize {
        self.choices.len()
    }

    fn test(&self) -> (Vec<Vec<f32>>, Vec<u8>) {
        (self.dataset.float_images(&self.split.test), self.dataset.labels_of(&self.split.test))
    }

    fn quantize(&self, choices: &[LayerChoice]) -> Result<QuantNetwork> {
        let cal = calibrate(&self.net, &self.dataset.float_images(&self.split.calib))?;
        Ok(quantize_network(&self.net, &cal, choices)?)
    }
}

/// `w4a4` applies to every weighted layer; a comma list gives one entry
/// per layer, each optionally suffixed with `@rate`.
fn parse_choices(text: &str, layers: usize) -> Result<Vec<LayerChoice>> {
    let one = |item: &str| -> Result<LayerChoice> {
        let (label, rate) = match item.split_once('@') {
            Some((l, r)) => (l, r.parse::<f64>().map_err(|_| anyhow!("bad pruning rate {r:?}"))?),
            None => (item, 0.0),
        };
        let cfg = PrecisionConfig::parse_label(label.trim()).ok_or_else(|| anyhow!("unknown config {label:?}"))?;
        if !(0.0..1.0).contains(&rate) {
            bail!("pruning rate {rate} outside [0, 1)");
        }
        Ok(LayerChoice::new(cfg, rate))
    };
    let items: Vec<&str> = text.split(',').map(str::trim).collect();
    match items.len() {
        1 => Ok(vec![one(items[0])?; layers]),
        n if n == layers => items.into_iter().map(one).collect(),
        n => bail!("{n} configs given for {layers} weighted layers"),
    }
}

fn choices_for(setup: &Setup, config: Option<&str>) -> Result<Vec<LayerChoice>> {
    match config {
        Some(c) => parse_choices(c, setup.mac_layers()),
        None => Ok(setup.choices.clone()),
    }
}

fn cmd_quantize(src: &Source, config: Option<&str>, out: Option<&Path>) -> Result<()> {
    let setup = Setup::load(src)?;
    let choices = choices_for(&setup, config)?;
    let q = setup.quantize(&choices)?;
    let (x, y) = setup.test();
    println!("float accuracy     {:.4}", float_accuracy(&setup.net, &x, &y));
    println!("quantized accuracy {:.4}", quantized_accuracy(&q, &x, &y));
    if let Some(out) = out {
        write_atomic(out, serde_json::to_string_pretty(&q)?.as_bytes())?;
    }
    Ok(())
}

fn execute(q: &QuantNetwork, style: KernelStyle, opts: &KernelOptions, input: &[i32], model: &CycleModel) -> Result<(Vec<i32>, ExecutionReport, marvin_core::Program)> {
    let prog = compile_network(q, style, opts)?;
    let (out, report) = prog.execute(&[input], model)?;
    Ok((out, report, prog.program))
}

fn cmd_run(src: &Source, config: Option<&str>, sample: usize, block: usize, out: Option<&Path>) -> Result<()> {
    let setup = Setup::load(src)?;
    let choices = choices_for(&setup, config)?;
    let q = setup.quantize(&choices)?;
    let idx = *setup.split.test.get(sample).ok_or_else(|| anyhow!("sample {sample} beyond the test split"))?;
    let input = q.quantize_input(&setup.dataset.float_image(idx));
    let expect = quantized_forward(&q, &input)?;
    let opts = KernelOptions { block };
    let (base_out, base, base_prog) = execute(&q, KernelStyle::Baseline, &opts, &input, &setup.model)?;
    let (packed_out, packed, packed_prog) = execute(&q, KernelStyle::Packed, &opts, &input, &setup.model)?;
    if base_out != expect || packed_out != expect {
        bail!("simulated outputs differ from host inference");
    }

    let rows: Vec<LayerRow> = q
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let name = layer_name(i, l.spec.kind);
            let b = base.layer(&name).cloned().unwrap_or_default();
            let p = packed.layer(&name).cloned().unwrap_or_default();
            LayerRow {
                layer: name,
                config: l.cfg.map_or("-".into(), |c| c.label()),
                pruning_rate: l.pruning_rate,
                macs: l.effective_macs(),
                baseline_cycles: b.cycles,
                packed_cycles: p.cycles,
                speedup: b.cycles as f64 / p.cycles.max(1) as f64,
                baseline_loads: b.loads,
                packed_loads: p.loads,
            }
        })
        .collect();
    println!("{:<12} {:>6} {:>6} {:>12} {:>10} {:>8} {:>10} {:>8}", "layer", "config", "prune", "baseline", "packed", "speedup", "base_ld", "pack_ld");
    for r in &rows {
        println!(
            "{:<12} {:>6} {:>6.2} {:>12} {:>10} {:>8.2} {:>10} {:>8}",
            r.layer, r.config, r.pruning_rate, r.baseline_cycles, r.packed_cycles, r.speedup, r.baseline_loads, r.packed_loads
        );
    }
    println!(
        "{:<12} {:>6} {:>6} {:>12} {:>10} {:>8.2} {:>10} {:>8}",
        "total", "", "", base.total_cycles, packed.total_cycles,
        base.total_cycles as f64 / packed.total_cycles as f64, base.load_count, packed.load_count
    );
    println!("cycle reduction {:.2}%", 100.0 * (1.0 - packed.total_cycles as f64 / base.total_cycles as f64));

    if let Some(dir) = out {
        let summary = [SummaryRow::new("baseline", &base), SummaryRow::new("packed", &packed)];
        write_atomic(&dir.join("layers.csv"), &rows_to_csv(&rows))?;
        write_atomic(&dir.join("summary.csv"), &rows_to_csv(&summary))?;
        write_program(&dir.join("baseline"), &base_prog)?;
        write_program(&dir.join("packed"), &packed_prog)?;
    }
    Ok(())
}

fn describe(p: &ParetoPoint) -> String {
    p.choices.iter().map(|c| format!("{}@{}", c.cfg, c.pruning_rate)).collect::<Vec<_>>().join(",")
}

fn csv_bytes(points: &[ParetoPoint]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_points_csv(&mut buf, points)?;
    Ok(buf)
}

fn cmd_dse(src: &Source, params: &DseParams, exhaustive: bool, out: &Path) -> Result<()> {
    let setup = Setup::load(src)?;
    let (x, y) = setup.test();
    let baseline_accuracy = float_accuracy(&setup.net, &x, &y);
    let cal = calibrate(&setup.net, &setup.dataset.float_images(&setup.split.calib))?;
    let net = &setup.net;
    let eval = memoized(|c: &[LayerChoice]| {
        quantize_network(net, &cal, c).map(|q| quantized_accuracy(&q, &x, &y)).unwrap_or(0.0)
    });
    let opts = KernelOptions::default();
    let table = layer_latency_table(&net.specs(), &params.pruning_rates(), &setup.model, &opts)?;
    let full = vec![LayerChoice::new(PrecisionConfig::new(BitWidth::B8, BitWidth::B8), 0.0); setup.mac_layers()];
    let full_cycles = table.estimate(&full)?.cycles;
    let problem = DseProblem { table, baseline_accuracy };
    let greedy = greedy_dse(&problem, params, &eval)?;
    let full_search = if exhaustive { Some(exhaustive_dse(&problem, params, &eval, EXHAUSTIVE_LIMIT)?) } else { None };

    let worst = |r: &DseResult| r.evaluated.iter().map(|p| p.total_cycles).max().unwrap_or(0);
    let ref_cycles = full_cycles.max(worst(&greedy)).max(full_search.as_ref().map_or(0, worst)) as f64;
    let reference = (baseline_accuracy - params.threshold / 100.0, ref_cycles);
    let hv = hypervolume(&greedy.front, reference)?;

    let mut summary = vec![
        ("baseline_accuracy".to_string(), format!("{baseline_accuracy:.6}")),
        ("threshold".into(), format!("{}", params.threshold)),
        ("evaluations".into(), greedy.evaluations().to_string()),
        ("front_size".into(), greedy.front.len().to_string()),
        ("infeasible".into(), greedy.infeasible.to_string()),
        ("reference_accuracy".into(), format!("{:.6}", reference.0)),
        ("reference_cycles".into(), format!("{}", reference.1)),
        ("hypervolume".into(), format!("{hv:.6}")),
    ];
    println!("greedy: {} evaluations, {} front points", greedy.evaluations(), greedy.front.len());
    if greedy.infeasible {
        println!("no configuration meets the threshold; reporting full precision");
    }
    if let Some(e) = &full_search {
        let hv_e = hypervolume(&e.front, reference)?;
        let ratio = if hv_e > 0.0 { hv / hv_e } else { 1.0 };
        println!("exhaustive: {} evaluations, hypervolume ratio {ratio:.4}", e.evaluations());
        summary.push(("exhaustive_evaluations".into(), e.evaluations().to_string()));
        summary.push(("exhaustive_hypervolume".into(), format!("{hv_e:.6}")));
        summary.push(("hypervolume_ratio".into(), format!("{ratio:.6}")));
    }

    let pool = if greedy.front.is_empty() { &greedy.acceptable } else { &greedy.front };
    if let Some(best) = pool.iter().min_by_key(|p| p.total_cycles) {
        let q = setup.quantize(&best.choices)?;
        let input = q.quantize_input(&setup.dataset.float_image(setup.split.test[0]));
        let (_, base, _) = execute(&q, KernelStyle::Baseline, &opts, &input, &setup.model)?;
        let (_, packed, _) = execute(&q, KernelStyle::Packed, &opts, &input, &setup.model)?;
        let reduction = 1.0 - packed.total_cycles as f64 / base.total_cycles as f64;
        println!("best: {} accuracy {:.4}", describe(best), best.accuracy);
        println!("  cycles {} packed vs {} baseline, reduction {:.2}%", packed.total_cycles, base.total_cycles, 100.0 * reduction);
        summary.push(("best_config".into(), describe(best)));
        summary.push(("best_accuracy".into(), format!("{:.6}", best.accuracy)));
        summary.push(("best_estimated_cycles".into(), best.total_cycles.to_string()));
        summary.push(("best_packed_cycles".into(), packed.total_cycles.to_string()));
        summary.push(("best_baseline_cycles".into(), base.total_cycles.to_string()));
        summary.push(("best_reduction".into(), format!("{reduction:.6}")));
    }

    write_atomic(&out.join("points.csv"), &csv_bytes(&greedy.evaluated)?)?;
    write_atomic(&out.join("pareto.csv"), &csv_bytes(&greedy.front)?)?;
    if let Some(e) = &full_search {
        write_atomic(&out.join("exhaustive_points.csv"), &csv_bytes(&e.evaluated)?)?;
        write_atomic(&out.join("exhaustive_pareto.csv"), &csv_bytes(&e.front)?)?;
    }
    let mut text = String::from("key,value\n");
    for (k, v) in summary {
        let v = if v.contains(',') { format!("\"{v}\"") } else { v };
        text.push_str(&format!("{k},{v}\n"));
    }
    write_atomic(&out.join("summary.csv"), text.as_bytes())?;
    Ok(())
}

fn cmd_power(report: &Path, config: Option<&Path>, slack: Option<&Path>, step: f64, style: &str, out: Option<&Path>) -> Result<()> {
    let rows: Vec<SummaryRow> = rows_from_csv(report)?;
    let row = rows.iter().find(|r| r.style == style).ok_or_else(|| anyhow!("{}: no {style:?} row", report.display()))?;
    let params = match config {
        Some(p) => PowerParams::from_text(&io::read_text(p)?).with_context(|| p.display().to_string())?,
        None => PowerParams::default(),
    };
    let table = match slack {
        Some(p) => {
            let samples: Vec<SlackRow> = rows_from_csv(p)?;
            SlackTable::new(samples.iter().map(|s| (s.voltage, s.slack_ps)).collect()).with_context(|| p.display().to_string())?
        }
        None => SlackTable::fitted(&DelayLaw::default())?,
    };
    let points = voltage_sweep(&row.report(), &params, &table, step)?;
    let min = table.min_valid_voltage().ok();
    println!("{:>7} {:>10} {:>10} {:>8} {:>10}", "voltage", "total_mW", "GOPs", "GOPs/W", "");
    for p in &points {
        let mark = match min {
            Some(m) if (p.voltage - m).abs() < 1e-9 => "min valid",
            _ if !p.valid => "invalid",
            _ => "",
        };
        println!("{:>7.2} {:>10.4} {:>10.4} {:>8.1} {:>10}", p.voltage, p.p_total_mw, p.gops, p.gops_per_w, mark);
    }
    match min {
        Some(m) => println!("minimum valid voltage {m:.2} V"),
        None => println!("no valid voltage in range"),
    }
    if let Some(best) = points.iter().filter(|p| p.valid).max_by(|a, b| a.gops_per_w.total_cmp(&b.gops_per_w)) {
        println!("peak efficiency {:.1} GOPs/W at {:.2} V", best.gops_per_w, best.voltage);
    }
    if let Some(out) = out {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &points)?;
        write_atomic(out, &buf)?;
    }
    Ok(())
}

fn cmd_disasm(file: &Path) -> Result<()> {
    use std::io::Write;
    let program = read_program(file)?;
    let mut out = std::io::stdout().lock();
    for (i, &w) in program.words.iter().enumerate() {
        match writeln!(out, "{:08x}: {w:08x}  {}", i * 4, disassemble(w)) {
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            r => r?,
        }
    }
    Ok(())
}
