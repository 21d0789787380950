use std::path::{Path, PathBuf};

use adsnn::arousal::{calibrate, evaluate_arousal, ArousalConfig, Calibration};
use adsnn::data::{load_idx, Dataset, MinMax};
use adsnn::graph::{build, fold_batchnorm, parse_arch, NetworkGraph};
use adsnn::io::exchange::{export, import, Dtype};
use adsnn::io::manifest::{output_digests, RunManifest};
use adsnn::io::{fmt_sig, write_csv};
use adsnn::neuron::{mean, simulate_constant, std_dev, NeuronParams};
use adsnn::sim::{
    degradation_violations, evaluate, sweep_precision, write_metrics_csv, write_samples_csv,
    SimConfig,
};
use adsnn::spiking::{convert_to_spiking, SpikingNetwork};
use adsnn::train::{train, TrainConfig};
use adsnn::transfer::{normalized, steady_state_isi, Transfer};
use clap::Parser;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::args::{
    ArousalArgs, Cli, Command, ConvertArgs, DataArgs, Globals, ReplayArgs, SimArgs, Split,
    TraceArgs, TrainArgs, XferArgs,
};

pub const DEFAULT_GRID: [f64; 10] = [0.03, 0.05, 0.075, 0.1, 0.15, 0.2, 0.3, 0.5, 0.75, 1.0];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] adsnn::Error),
    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Library(_) => 1,
            CliError::Mismatch(_) => 3,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Runs a parsed command. `args` are the arguments after the program name,
/// as recorded in the run manifest.
pub fn execute(cli: Cli, args: &[String]) -> Result<()> {
    let g = &cli.globals;
    match &cli.command {
        Command::Train(a) => train_cmd(g, a, args),
        Command::Convert(a) => convert_cmd(g, a, args),
        Command::Run(a) => run_cmd(g, a, args),
        Command::Sweep(a) => sweep_cmd(g, a, args),
        Command::Arousal(a) => arousal_cmd(g, a, args),
        Command::XferPlot(a) => xfer_cmd(g, a, args),
        Command::NeuronTrace(a) => trace_cmd(g, a, args),
        Command::Replay(a) => replay_cmd(g, a),
    }
}

/// Artifact directory plus the manifest that will describe it.
struct Artifacts {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Artifacts {
    /// Creates the output directory. Call only after all inputs are validated.
    fn create(
        g: &Globals,
        command: &str,
        args: &[String],
        config: serde_json::Value,
        inputs: &[PathBuf],
    ) -> Result<Self> {
        let dir = g
            .out_dir
            .clone()
            .unwrap_or_else(|| Path::new("adsnn-out").join(command));
        let mut manifest = RunManifest::new(command, recorded_args(args), config, g.seed);
        for path in inputs {
            manifest.add_input(path)?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| adsnn::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        Ok(Self { dir, manifest })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(adsnn::Error::from)? + "\n";
        std::fs::write(&path, text).map_err(|e| adsnn::Error::Io { path, source: e })?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.record_outputs(&self.dir)?;
        self.manifest.save(&self.dir)?;
        println!("wrote {}", self.dir.display());
        Ok(())
    }
}

/// Drops `--out-dir` so a manifest can be replayed into another directory.
fn recorded_args(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out
}

fn config_snapshot(
    g: &Globals,
    command: &impl Serialize,
    extra: serde_json::Value,
) -> serde_json::Value {
    json!({ "globals": g, "command": command, "resolved": extra })
}

fn apply_overrides(g: &Globals, base: NeuronParams) -> Result<NeuronParams> {
    let mut p = base;
    if let Some(t) = g.theta0 {
        p.theta0 = t;
        p.m_f = t;
    }
    if let Some(m) = g.mf {
        p.m_f = m;
    }
    p.tau_eta = g.tau_eta.unwrap_or(p.tau_eta);
    p.tau_beta = g.tau_beta.unwrap_or(p.tau_beta);
    p.tau_gamma = g.tau_gamma.unwrap_or(p.tau_gamma);
    p.tau_phi = g.tau_phi.unwrap_or(p.tau_phi);
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(normalized(&p)?)
}

fn parse_dtype(text: &str) -> Result<Dtype> {
    text.parse().map_err(|e: adsnn::Error| usage(e.to_string()))
}

/// A dataset selection with the files it was read from.
struct LoadedData {
    train: Dataset,
    test: Dataset,
    /// Train and test are the same set (IDX input).
    unsplit: bool,
    files: Vec<PathBuf>,
}

impl LoadedData {
    fn select(&self, split: Split) -> Result<Dataset> {
        let data = match split {
            Split::Train => self.train.clone(),
            Split::Test => self.test.clone(),
            Split::All if self.unsplit => self.train.clone(),
            Split::All => {
                let mut all = self.train.clone();
                all.features.extend(self.test.features.iter().cloned());
                all.labels.extend(&self.test.labels);
                all
            }
        };
        if data.is_empty() {
            return Err(usage("the selected dataset is empty"));
        }
        Ok(data)
    }
}

fn load_data(d: &DataArgs, seed: u64) -> Result<LoadedData> {
    if let (Some(images), Some(labels)) = (&d.idx_images, &d.idx_labels) {
        let data = load_idx(images, labels)?;
        if data.is_empty() {
            return Err(usage("the IDX files hold no samples"));
        }
        return Ok(LoadedData {
            train: data.clone(),
            test: data,
            unsplit: true,
            files: vec![images.clone(), labels.clone()],
        });
    }
    let Some(name) = d.dataset.as_deref() else {
        return Err(usage(
            "give --dataset (iris, sonar or a CSV file) or --idx-images/--idx-labels",
        ));
    };
    if name == "iris" || name == "sonar" {
        let (train, test) = Dataset::builtin_split(name, seed)?;
        return Ok(LoadedData {
            train,
            test,
            unsplit: false,
            files: Vec::new(),
        });
    }
    let path = PathBuf::from(name);
    if !path.is_file() {
        return Err(usage(format!(
            "`{name}` is neither a built-in dataset (iris, sonar) nor a readable file"
        )));
    }
    let data = Dataset::load_csv(&path)?;
    if data.len() < 2 {
        return Err(usage(format!(
            "{name} holds {} samples; need at least 2",
            data.len()
        )));
    }
    let test_size = d
        .test_size
        .unwrap_or_else(|| ((data.len() as f64 * 0.2).round() as usize).max(1));
    let (train, test) = data
        .stratified_split(test_size, seed)
        .map_err(|e| usage(e.to_string()))?;
    let scaler = MinMax::fit(&train)?;
    Ok(LoadedData {
        train: scaler.apply(&train),
        test: scaler.apply(&test),
        unsplit: false,
        files: vec![path],
    })
}

fn load_model(g: &Globals, dir: &Path) -> Result<NetworkGraph> {
    if !dir.is_dir() {
        return Err(usage(format!(
            "model directory {} does not exist",
            dir.display()
        )));
    }
    let mut graph = import(dir)?;
    if g.overrides_params() {
        let base = graph
            .neuron_params()
            .ok_or_else(|| usage("model has no transfer layers"))?;
        graph.set_neuron_params(apply_overrides(g, base)?)?;
    }
    Ok(graph)
}

fn check_compatible(graph: &NetworkGraph, data: &Dataset) -> Result<()> {
    if graph.input_shape.len() != data.input_shape.len() {
        return Err(usage(format!(
            "model expects {} inputs, dataset has {}",
            graph.input_shape.len(),
            data.input_shape.len()
        )));
    }
    if graph.num_classes() < data.class_names.len() {
        return Err(usage(format!(
            "model has {} outputs, dataset has {} classes",
            graph.num_classes(),
            data.class_names.len()
        )));
    }
    Ok(())
}

fn sim_config(g: &Globals, a: &SimArgs) -> Result<SimConfig> {
    let cfg = SimConfig {
        dt: g.dt,
        duration: g.duration.unwrap_or(500.0),
        readout_tau_phi: a.readout_tau_phi,
        precision: None,
        extend_for_tau_eta: !a.fixed_duration,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

/// Model, folded graph and spiking network ready for a simulation command.
struct Prepared {
    folded: NetworkGraph,
    net: SpikingNetwork,
    data: Dataset,
    loaded: LoadedData,
    inputs: Vec<PathBuf>,
    sim: SimConfig,
}

fn prepare(g: &Globals, a: &SimArgs) -> Result<Prepared> {
    let sim = sim_config(g, a)?;
    let loaded = load_data(&a.data, g.seed)?;
    let data = loaded.select(a.data.split)?;
    let graph = load_model(g, &a.model)?;
    check_compatible(&graph, &data)?;
    let folded = fold_batchnorm(&graph)?;
    let net = convert_to_spiking(&folded)?;
    let mut inputs = vec![a.model.clone()];
    inputs.extend(loaded.files.iter().cloned());
    Ok(Prepared {
        folded,
        net,
        data,
        loaded,
        inputs,
        sim,
    })
}

fn train_cmd(g: &Globals, a: &TrainArgs, args: &[String]) -> Result<()> {
    let dtype = parse_dtype(&a.dtype)?;
    let arch = parse_arch(&a.arch).map_err(|e| usage(e.to_string()))?;
    let loaded = load_data(&a.data, g.seed)?;
    let (train_set, test_set) = (loaded.select(Split::Train)?, loaded.select(Split::Test)?);
    let params = apply_overrides(g, NeuronParams::default())?;
    let graph = build(&arch, params, g.seed).map_err(|e| usage(e.to_string()))?;
    check_compatible(&graph, &train_set)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        seed: g.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let out = Artifacts::create(
        g,
        "train",
        args,
        config_snapshot(g, a, json!({ "train": cfg, "neuron": params })),
        &loaded.files,
    )?;
    let outcome = train(&graph, &train_set, &test_set, &cfg)?;
    let model_dir = out.path("model");
    export(&outcome.graph, &model_dir, dtype)?;
    let exported = import(&model_dir)?;
    let rows: Vec<Vec<String>> = outcome
        .history
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                fmt_sig(m.loss),
                fmt_sig(m.train_accuracy),
                fmt_sig(m.test_accuracy),
            ]
        })
        .collect();
    write_csv(
        &out.path("history.csv"),
        &["epoch", "loss", "train_accuracy", "test_accuracy"],
        &rows,
    )?;
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "best_test_accuracy": outcome.best_test_accuracy,
        "exported_test_accuracy": exported.accuracy(&test_set.features, &test_set.labels)?,
        "train_samples": train_set.len(),
        "test_samples": test_set.len(),
    });
    out.write_json("train_summary.json", &summary)?;
    println!(
        "best test accuracy {} at epoch {}",
        fmt_sig(outcome.best_test_accuracy),
        outcome.best_epoch
    );
    out.finish()
}

fn convert_cmd(g: &Globals, a: &ConvertArgs, args: &[String]) -> Result<()> {
    let dtype = parse_dtype(&a.dtype)?;
    let graph = load_model(g, &a.model)?;
    let folded = fold_batchnorm(&graph)?;
    let net = convert_to_spiking(&folded)?;
    let out = Artifacts::create(
        g,
        "convert",
        args,
        config_snapshot(g, a, json!({ "neuron": folded.neuron_params() })),
        std::slice::from_ref(&a.model),
    )?;
    export(&folded, &out.path("model"), dtype)?;
    let summary = json!({
        "layer_sizes": net.layer_sizes(),
        "neurons": net.num_neurons(),
        "classes": net.num_classes(),
        "neuron": folded.neuron_params(),
        "folded_layers": graph.layers.len() - folded.layers.len(),
    });
    out.write_json("conversion.json", &summary)?;
    println!("spiking layers {:?}", net.layer_sizes());
    out.finish()
}

fn run_cmd(g: &Globals, a: &SimArgs, args: &[String]) -> Result<()> {
    let p = prepare(g, a)?;
    let out = Artifacts::create(
        g,
        "run",
        args,
        config_snapshot(
            g,
            a,
            json!({ "sim": p.sim, "neuron": p.net.hidden_params() }),
        ),
        &p.inputs,
    )?;
    let (metrics, samples) = evaluate(&p.net, &p.data, &p.sim)?;
    write_metrics_csv(&out.path("metrics.csv"), std::slice::from_ref(&metrics))?;
    write_samples_csv(&out.path("samples.csv"), &samples)?;
    metrics.write_trace_csv(&out.path("accuracy_trace.csv"))?;
    let analog = p.folded.accuracy(&p.data.features, &p.data.labels)?;
    out.write_json(
        "run_summary.json",
        &json!({ "analog_accuracy": analog, "spiking_accuracy": metrics.accuracy }),
    )?;
    println!(
        "accuracy {} (analog {}), {} Hz, matching time {}",
        fmt_sig(metrics.accuracy),
        fmt_sig(analog),
        fmt_sig(metrics.firing_rate),
        metrics
            .matching_time
            .map_or("not reached".to_string(), |t| format!("{} ms", fmt_sig(t)))
    );
    out.finish()
}

fn sweep_cmd(g: &Globals, a: &SimArgs, args: &[String]) -> Result<()> {
    let grid: Vec<f64> = if g.grid.is_empty() {
        DEFAULT_GRID.to_vec()
    } else {
        g.grid.clone()
    };
    if let Some(bad) = grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(usage(format!("grid values must be > 0, got {bad}")));
    }
    let p = prepare(g, a)?;
    let out = Artifacts::create(
        g,
        "sweep",
        args,
        config_snapshot(g, a, json!({ "sim": p.sim, "grid": grid })),
        &p.inputs,
    )?;
    let sorted = sweep_precision(&p.net, &p.data, &grid, &p.sim)?;
    write_metrics_csv(&out.path("sweep.csv"), &sorted)?;
    let analog = p.folded.accuracy(&p.data.features, &p.data.labels)?;
    let matching: Vec<f64> = sorted
        .iter()
        .filter(|m| m.accuracy == analog)
        .map(|m| m.theta0)
        .collect();
    let violations: Vec<(f64, f64)> = degradation_violations(&sorted)
        .into_iter()
        .map(|(i, j)| (sorted[i].theta0, sorted[j].theta0))
        .collect();
    out.write_json(
        "sweep_summary.json",
        &json!({
            "analog_accuracy": analog,
            "matching_theta0": matching,
            "degradation_violations": violations,
        }),
    )?;
    for m in &sorted {
        println!(
            "theta0 {:>6}  accuracy {:>10}  rate {:>10} Hz",
            fmt_sig(m.theta0),
            fmt_sig(m.accuracy),
            fmt_sig(m.firing_rate)
        );
    }
    out.finish()
}

fn arousal_config(a: &ArousalArgs) -> Result<ArousalConfig> {
    let preset = a.preset.clone().or_else(|| {
        a.sim
            .data
            .dataset
            .clone()
            .filter(|d| d == "iris" || d == "sonar")
    });
    let mut cfg = match preset {
        Some(name) => ArousalConfig::preset(&name).map_err(|e| usage(e.to_string()))?,
        None => {
            let need = [a.theta0_lp, a.theta0_hp, a.t_sa, a.p1, a.p2];
            if need.iter().any(Option::is_none) {
                return Err(usage(
                    "without --preset, give --theta0-lp, --theta0-hp, --t-sa, --p1 and --p2",
                ));
            }
            ArousalConfig {
                theta0_lp: 0.0,
                theta0_hp: 0.0,
                t_sa: 0.0,
                window: 50.0,
                p1: 0.0,
                p2: 0.0,
                extension: 200.0,
            }
        }
    };
    cfg.theta0_lp = a.theta0_lp.unwrap_or(cfg.theta0_lp);
    cfg.theta0_hp = a.theta0_hp.unwrap_or(cfg.theta0_hp);
    cfg.t_sa = a.t_sa.unwrap_or(cfg.t_sa);
    cfg.window = a.window.unwrap_or(cfg.window);
    cfg.p1 = a.p1.unwrap_or(cfg.p1);
    cfg.p2 = a.p2.unwrap_or(cfg.p2);
    cfg.extension = a.extension.unwrap_or(cfg.extension);
    Ok(cfg)
}

fn arousal_cmd(g: &Globals, a: &ArousalArgs, args: &[String]) -> Result<()> {
    let mut cfg = arousal_config(a)?;
    let p = prepare(g, &a.sim)?;
    cfg.validate(p.sim.duration)
        .map_err(|e| usage(e.to_string()))?;
    let out = Artifacts::create(
        g,
        "arousal",
        args,
        config_snapshot(g, a, json!({ "sim": p.sim, "arousal": cfg })),
        &p.inputs,
    )?;
    let calibration: Option<Calibration> = if a.calibrate {
        let train_set = p.loaded.select(Split::Train)?;
        let cal = calibrate(&p.net, &train_set, &cfg, &p.sim)?;
        if let Some(p2) = cal.p2 {
            cfg.p2 = p2;
        }
        Some(cal)
    } else {
        None
    };
    let report = evaluate_arousal(&p.net, &p.data, &cfg, &p.sim)?;
    report.write_csv(&out.path("arousal.csv"), &out.path("arousal_summary.csv"))?;

    let mut rows = Vec::new();
    for (mode, theta0) in [("low", cfg.theta0_lp), ("high", cfg.theta0_hp)] {
        let point = SimConfig {
            precision: Some(theta0),
            ..p.sim
        };
        let (m, _) = evaluate(&p.net, &p.data, &point)?;
        rows.push(vec![
            mode.to_string(),
            fmt_sig(theta0),
            fmt_sig(m.accuracy),
            fmt_sig(m.firing_rate),
        ]);
    }
    rows.push(vec![
        "arousal".to_string(),
        String::new(),
        fmt_sig(report.accuracy),
        fmt_sig(report.firing_rate),
    ]);
    write_csv(
        &out.path("arousal_baselines.csv"),
        &["mode", "theta0", "accuracy", "firing_rate_hz"],
        &rows,
    )?;
    out.write_json(
        "arousal_config.json",
        &json!({ "config": cfg, "threshold": cfg.threshold(), "calibration": calibration }),
    )?;
    println!(
        "selectivity {}, accuracy {}, {} Hz",
        fmt_sig(report.selectivity),
        fmt_sig(report.accuracy),
        fmt_sig(report.firing_rate)
    );
    out.finish()
}

fn xfer_cmd(g: &Globals, a: &XferArgs, args: &[String]) -> Result<()> {
    if a.points < 2 || !(a.s_max > a.s_min) {
        return Err(usage("need --points >= 2 and --s-max > --s-min"));
    }
    let params = apply_overrides(g, NeuronParams::default())?;
    let duration = g.duration.unwrap_or(2000.0);
    if !(duration > 0.0 && g.dt > 0.0) {
        return Err(usage("--duration and --dt must be > 0"));
    }
    let transfer = Transfer::new(&params)?;
    let out = Artifacts::create(
        g,
        "xfer-plot",
        args,
        config_snapshot(g, a, json!({ "neuron": params, "duration": duration })),
        &[],
    )?;
    let mut rows = Vec::with_capacity(a.points);
    for k in 0..a.points {
        let s = a.s_min + (a.s_max - a.s_min) * k as f64 / (a.points - 1) as f64;
        let trace = simulate_constant(&params, s, duration, g.dt)?;
        let from = trace.index_at(duration / 2.0);
        let contribution = trace.contribution(params.tau_phi)?;
        rows.push(vec![
            fmt_sig(s),
            fmt_sig(transfer.eval(s)),
            fmt_sig(transfer.derivative(s)),
            steady_state_isi(&params, s).map_or(String::new(), fmt_sig),
            fmt_sig(mean(&trace.psc[from..])),
            fmt_sig(std_dev(&contribution[from..])),
        ]);
    }
    write_csv(
        &out.path("transfer.csv"),
        &[
            "S",
            "f",
            "f_prime",
            "t_e",
            "simulated_mean",
            "simulated_std",
        ],
        &rows,
    )?;
    out.finish()
}

fn trace_cmd(g: &Globals, a: &TraceArgs, args: &[String]) -> Result<()> {
    let params = apply_overrides(g, NeuronParams::default())?;
    let duration = g.duration.unwrap_or(500.0);
    if !(duration > 0.0 && g.dt > 0.0 && a.s.is_finite()) {
        return Err(usage("--duration and --dt must be > 0 and --S finite"));
    }
    let out = Artifacts::create(
        g,
        "neuron-trace",
        args,
        config_snapshot(g, a, json!({ "neuron": params, "duration": duration })),
        &[],
    )?;
    let trace = simulate_constant(&params, a.s, duration, g.dt)?;
    trace.save_csv(&out.path("neuron_trace.csv"))?;
    let from = trace.index_at(duration / 2.0);
    let contribution = trace.contribution(params.tau_phi)?;
    out.write_json(
        "neuron_summary.json",
        &json!({
            "spikes": trace.spike_count(),
            "firing_rate_hz": trace.spike_count() as f64 / (duration / 1000.0),
            "mean_contribution": mean(&contribution[from..]),
            "contribution_std": std_dev(&contribution[from..]),
            "h": params.h,
        }),
    )?;
    println!(
        "{} spikes, contribution {} ± {}",
        trace.spike_count(),
        fmt_sig(mean(&contribution[from..])),
        fmt_sig(std_dev(&contribution[from..]))
    );
    out.finish()
}

fn replay_cmd(g: &Globals, a: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    if manifest.command == "replay" {
        return Err(usage("a replay manifest cannot be replayed"));
    }
    for (path, digest) in &manifest.inputs {
        let now = adsnn::io::digest_path(Path::new(path))?;
        if &now != digest {
            return Err(CliError::Mismatch(format!(
                "input {path} changed since the recorded run"
            )));
        }
    }
    let origin = if a.manifest.is_dir() {
        a.manifest.clone()
    } else {
        a.manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    };
    let target = g.out_dir.clone().unwrap_or_else(|| {
        let mut name = origin.file_name().unwrap_or_default().to_os_string();
        name.push(".replay");
        origin.with_file_name(name)
    });
    let mut argv = vec!["adsnn".to_string()];
    argv.extend(manifest.args.iter().cloned());
    argv.push("--out-dir".into());
    argv.push(target.display().to_string());
    let cli = Cli::try_parse_from(&argv).map_err(|e| usage(e.to_string()))?;
    execute(cli, &argv[1..])?;

    let produced = output_digests(&target)?;
    let mut differing: Vec<&String> = manifest
        .outputs
        .keys()
        .chain(produced.keys())
        .filter(|k| manifest.outputs.get(*k) != produced.get(*k))
        .collect();
    differing.sort();
    differing.dedup();
    if differing.is_empty() {
        println!("replay identical: {} artifacts", produced.len());
        Ok(())
    } else {
        Err(CliError::Mismatch(format!(
            "replay differs in {}",
            differing
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> Result<()> {
        let argv: Vec<String> = std::iter::once("adsnn")
            .chain(args.iter().copied())
            .map(String::from)
            .collect();
        let cli = Cli::try_parse_from(&argv).map_err(|e| usage(e.to_string()))?;
        execute(cli, &argv[1..])
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn unknown_command_and_flag_are_usage_errors() {
        assert_eq!(run(&["bogus"]).unwrap_err().exit_code(), 2);
        assert_eq!(
            run(&["neuron-trace", "--no-such-flag"])
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn empty_dataset_is_a_usage_error_without_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("empty.csv");
        std::fs::write(&csv, "a,b,c,d,label\n").unwrap();
        let out = dir.path().join("out");
        let err = run(&[
            "train",
            "--dataset",
            s(&csv),
            "--arch",
            "4-8-3",
            "--out-dir",
            s(&out),
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn malformed_model_fails_without_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.json"), "{ not json").unwrap();
        let out = dir.path().join("out");
        assert!(run(&[
            "run",
            "--model",
            s(dir.path()),
            "--dataset",
            "iris",
            "--out-dir",
            s(&out)
        ])
        .is_err());
        assert!(!out.exists());
    }

    #[test]
    fn out_dir_is_not_recorded() {
        let args: Vec<String> = ["run", "--out-dir", "x", "--seed", "1", "--out-dir=y"]
            .iter()
            .map(|a| a.to_string())
            .collect();
        assert_eq!(recorded_args(&args), vec!["run", "--seed", "1"]);
    }

    #[test]
    fn neuron_trace_contrasts_precisions() {
        let dir = tempfile::tempdir().unwrap();
        let mut stds = Vec::new();
        for theta0 in ["0.5", "0.1"] {
            let out = dir.path().join(theta0);
            run(&[
                "neuron-trace",
                "--S",
                "1.0",
                "--theta0",
                theta0,
                "--out-dir",
                s(&out),
            ])
            .unwrap();
            let text = std::fs::read_to_string(out.join("neuron_trace.csv")).unwrap();
            assert!(text.starts_with("time_ms,activation,refractory,threshold,psc,spike\n"));
            assert_eq!(text.lines().count(), 501);
            let summary: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(out.join("neuron_summary.json")).unwrap(),
            )
            .unwrap();
            stds.push(summary["contribution_std"].as_f64().unwrap());
            assert!(out.join("run_manifest.json").is_file());
        }
        assert!(stds[1] < stds[0], "{stds:?}");
    }

    #[test]
    fn xfer_plot_writes_documented_columns() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("x");
        run(&[
            "xfer-plot",
            "--points",
            "7",
            "--duration",
            "600",
            "--out-dir",
            s(&out),
        ])
        .unwrap();
        let text = std::fs::read_to_string(out.join("transfer.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("S,f,f_prime,t_e,simulated_mean,simulated_std")
        );
        assert_eq!(lines.count(), 7);
    }

    #[test]
    fn iris_pipeline_replays_identically() {
        let dir = tempfile::tempdir().unwrap();
        let d = |n: &str| dir.path().join(n);
        run(&[
            "train",
            "--dataset",
            "iris",
            "--arch",
            "4-20-3",
            "--epochs",
            "30",
            "--out-dir",
            s(&d("train")),
        ])
        .unwrap();
        let model = d("train").join("model");
        run(&[
            "convert",
            "--model",
            s(&model),
            "--out-dir",
            s(&d("convert")),
        ])
        .unwrap();
        let folded = d("convert").join("model");
        run(&[
            "sweep",
            "--model",
            s(&folded),
            "--dataset",
            "iris",
            "--grid",
            "0.1,0.5",
            "--duration",
            "200",
            "--out-dir",
            s(&d("sweep")),
        ])
        .unwrap();
        let sweep = std::fs::read_to_string(d("sweep").join("sweep.csv")).unwrap();
        assert_eq!(sweep.lines().count(), 3);
        run(&[
            "arousal",
            "--model",
            s(&folded),
            "--dataset",
            "iris",
            "--out-dir",
            s(&d("arousal")),
        ])
        .unwrap();
        for name in ["train", "convert", "sweep", "arousal"] {
            let again = d(&format!("{name}-again"));
            run(&["replay", "--manifest", s(&d(name)), "--out-dir", s(&again)]).unwrap();
        }
    }

    #[test]
    fn replay_detects_changed_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("trace");
        run(&["neuron-trace", "--out-dir", s(&out)]).unwrap();
        let manifest = out.join("run_manifest.json");
        let mut value: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
        value["outputs"]["neuron_trace.csv"] = json!("0".repeat(64));
        std::fs::write(&manifest, value.to_string()).unwrap();
        let again = dir.path().join("again");
        let err = run(&["replay", "--manifest", s(&manifest), "--out-dir", s(&again)]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn arousal_needs_settings_without_a_preset() {
        let dir = tempfile::tempdir().unwrap();
        let err = run(&[
            "arousal",
            "--model",
            s(dir.path()),
            "--dataset",
            "iris",
            "--preset",
            "xor",
        ])
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
