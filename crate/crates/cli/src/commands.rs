use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use convm::audit::{audit, count_network, solve_groups, REFERENCE_COUNTS};
use convm::checks::{run_suite, SuiteOptions};
use convm::da::{evaluate, train_da, train_supervised, Dataset, MetricsRow, Trained};
use convm::io::checkpoint;
use convm::io::tdf::{self, TdfTensor};
use convm::layers::{ForwardOptions, LayerKind, Model, NetworkSpec};
use convm::synth::{parse_shifts, SynthConfig};
use convm::Graph;
use serde::Serialize;

use crate::config::{Mode, RunConfig};
use crate::dataset::{self, Domains};
use crate::{AuditArgs, Cli, Command, EvalArgs, ExportArgs, GradcheckArgs, ImportArgs, Split, SynthArgs, TrainArgs};

/// `Ok(false)` maps to a failing exit status without an error message.
pub fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Audit(a) => cmd_audit(cli, a),
        Command::Gradcheck(a) => cmd_gradcheck(cli, a),
        Command::MakeSynth(a) => cmd_make_synth(cli, a),
        Command::ImportImages(a) => cmd_import(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::ExportFeatures(a) => cmd_export(cli, a),
    }
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn resolve_spec(cli: &Cli, name: Option<&str>) -> Result<NetworkSpec> {
    match name {
        Some("reference") => Ok(NetworkSpec::reference()),
        Some("tiny") => Ok(NetworkSpec::tiny(10)),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            toml::from_str(&text).with_context(|| format!("parsing network spec {path}"))
        }
        None if cli.config.is_some() => {
            let cfg = RunConfig::load(cli.config.as_deref())?;
            Ok(cfg.network.resolve(cfg.data.synth.classes))
        }
        None => Ok(NetworkSpec::reference()),
    }
}

fn cmd_audit(cli: &Cli, args: &AuditArgs) -> Result<bool> {
    let t0 = Instant::now();
    let spec = resolve_spec(cli, args.spec.as_deref())?;
    let comparable = !args.no_reference && spec.layers.len() == NetworkSpec::reference().layers.len();
    let report = if comparable { audit(&spec, &REFERENCE_COUNTS)? } else { count_network(&spec)? };
    print!("{report}");

    let out = out_dir(cli, ".");
    fs::create_dir_all(&out)?;
    let csv_path = out.join("param_audit.csv");
    report.write_csv(fs::File::create(&csv_path)?)?;
    println!("wrote {} in {:.3} s", csv_path.display(), t0.elapsed().as_secs_f64());

    let mut ok = report.passed();
    if !ok {
        for row in report.nonzero_diffs() {
            eprintln!("layer {row}: count differs from the reference");
        }
    }
    if args.solve_groups {
        for &(layer, target) in &REFERENCE_COUNTS {
            let Some(LayerKind::ConvM(cfg)) = spec.layer(layer).map(|l| &l.kind) else { continue };
            match solve_groups(cfg, target) {
                Ok(g) => println!("layer {layer}: g = {g}"),
                Err(e) => {
                    println!("layer {layer}: {e}");
                    ok = false;
                }
            }
        }
    }
    Ok(ok)
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<bool> {
    let opts = SuiteOptions { op: args.op.clone(), dilation: args.dilation, groups: args.groups, seed: cli.seed.unwrap_or(0) };
    convm::fault::set_conv_sign_flip(args.inject_sign_flip);
    let t0 = Instant::now();
    let results = run_suite(&opts);
    convm::fault::set_conv_sign_flip(false);
    let mut ok = true;
    for r in results? {
        let status = if r.report.passed { "PASS" } else { "FAIL" };
        let skipped = match r.report.skipped_elements {
            0 => String::new(),
            n => format!(" ({n} skipped at kinks)"),
        };
        println!("{status} {:<46} max rel err {:.3e} over {} elements{skipped}", r.name, r.report.max_rel_error, r.report.checked_elements);
        ok &= r.report.passed;
    }
    println!("{} in {:.2} s", if ok { "all checks passed" } else { "gradient check failed" }, t0.elapsed().as_secs_f64());
    Ok(ok)
}

fn cmd_make_synth(cli: &Cli, args: &SynthArgs) -> Result<bool> {
    let cfg = SynthConfig {
        classes: args.classes,
        per_class: args.per_class,
        size: args.size,
        shift: parse_shifts(&args.shift)?,
        seed: cli.seed.unwrap_or(0),
        hue_degrees: args.hue_degrees,
    };
    let out = out_dir(cli, "data/synth");
    let (source, target) = convm::synth::generate(&cfg)?;
    fs::create_dir_all(&out)?;
    let rows = dataset::write_dataset(&out, &source, &target)?;
    fs::write(out.join("synth.toml"), toml::to_string_pretty(&cfg)?)?;
    println!("wrote {} source and {} target images ({} manifest rows) to {}", source.len(), target.len(), rows.len(), out.display());
    Ok(true)
}

fn cmd_import(cli: &Cli, args: &ImportArgs) -> Result<bool> {
    let out = out_dir(cli, "data/imported");
    let n = dataset::import_images(&args.src, args.domain, &out, args.size)?;
    println!("imported {n} {} images into {}", args.domain.name(), out.display());
    Ok(true)
}

#[derive(Serialize)]
struct Summary {
    mode: Mode,
    steps: usize,
    seed: u64,
    spec_hash: String,
    census: u64,
    source_test_accuracy: f64,
    target_accuracy: f64,
    first_epoch_mmd: Option<f64>,
    final_epoch_mmd: Option<f64>,
    seconds: f64,
    warnings: Vec<String>,
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<bool> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(init) = &args.init {
        cfg.init = Some(init.clone());
    }
    if let Some(steps) = args.max_steps {
        cfg.solver.max_steps = steps;
    }
    if let Some(dir) = &args.data {
        cfg.data.dir = Some(dir.clone());
    }
    cfg.validate()?;

    let t0 = Instant::now();
    let domains = dataset::load(&cfg.data)?;
    let (train, test) = domains.source_split(cfg.data.holdout);
    let classes = domains.classes();
    let model: Model<f32> = match &cfg.init {
        Some(path) => checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?.model,
        None => Model::build(cfg.network.resolve(classes), cfg.solver.seed)?,
    };

    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml()?)?;
    dataset::write_stats(&cfg.out, &domains.normalization)?;
    let every = (cfg.solver.max_steps / 20).max(1);
    let log = |r: &MetricsRow| {
        if r.step % every == 0 || r.step + 1 == cfg.solver.max_steps {
            let mmd: Vec<String> = r.loss.mmd.iter().flatten().map(|v| format!("{v:.4}")).collect();
            eprintln!("step {:>5} lr {:.2e} ratio {:.3} loss {:.4} ce {:.4} mmd [{}]", r.step, r.lr, r.ratio, r.loss.total, r.loss.ce, mmd.join(" "));
        }
    };
    let Trained { model, history } = match cfg.mode {
        Mode::SourceOnly => train_supervised(model, &train, &cfg.solver, log)?,
        Mode::Da => train_da(model, &train, &domains.target, &cfg.da, &cfg.solver, log)?,
    };
    for w in &history.warnings {
        eprintln!("warning: {w}");
    }

    history.write_csv(fs::File::create(cfg.out.join("metrics.csv"))?)?;
    let spec_hash = model.architecture().hash();
    fs::write(cfg.out.join("spec_hash.txt"), format!("{spec_hash}\n"))?;
    checkpoint::save(cfg.out.join("model.ckpt"), &model, cfg.solver.max_steps, cfg.solver.seed)?;

    let summary = Summary {
        mode: cfg.mode,
        steps: cfg.solver.max_steps,
        seed: cfg.solver.seed,
        spec_hash,
        census: model.census(),
        source_test_accuracy: evaluate(&model, &test, cfg.eval_batch)?,
        target_accuracy: evaluate(&model, &domains.target, cfg.eval_batch)?,
        first_epoch_mmd: history.epoch_mean_mmd(0),
        final_epoch_mmd: history.epoch_mean_mmd(history.epochs().saturating_sub(1)),
        seconds: t0.elapsed().as_secs_f64(),
        warnings: history.warnings.clone(),
    };
    fs::write(cfg.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{:?}: source-test {:.4} target {:.4} ({:.1} s) -> {}",
        cfg.mode,
        summary.source_test_accuracy,
        summary.target_accuracy,
        summary.seconds,
        cfg.out.display()
    );
    Ok(true)
}

fn eval_data(cli: &Cli, data: Option<&Path>) -> Result<(RunConfig, Domains)> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(dir) = data {
        cfg.data.dir = Some(dir.to_path_buf());
    }
    let domains = dataset::load(&cfg.data)?;
    Ok((cfg, domains))
}

fn split(cfg: &RunConfig, domains: Domains, which: Split) -> Dataset {
    match which {
        Split::Source => domains.source,
        Split::SourceTest => domains.source_split(cfg.data.holdout).1,
        Split::Target => domains.target,
    }
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<bool> {
    let model: Model<f32> = checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?.model;
    let (cfg, domains) = eval_data(cli, args.data.as_deref())?;
    let data = split(&cfg, domains, args.split);
    let acc = evaluate(&model, &data, cfg.eval_batch)?;
    println!("top-1 {acc:.4} on {} images", data.len());
    Ok(true)
}

fn cmd_export(cli: &Cli, args: &ExportArgs) -> Result<bool> {
    let model: Model<f32> = checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?.model;
    if !matches!(model.spec().layer(args.layer).map(|l| &l.kind), Some(LayerKind::ConvM(_))) {
        bail!("layer {} is not a Conv-M module; Conv-M layers are {:?}", args.layer, model.spec().conv_m_indices());
    }
    let (cfg, domains) = eval_data(cli, args.data.as_deref())?;
    let data = split(&cfg, domains, args.split);
    let n = args.count.min(data.len());
    if n == 0 {
        bail!("no images to export");
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut g = Graph::new();
    let bound = model.bind(&mut g);
    let x = g.input(data.gather::<f32>(&idx)?);
    let mut rng = convm::da::data::stream_rng(0, 0);
    let fwd = model.forward(&mut g, &bound, x, ForwardOptions::default(), &mut rng)?;
    let branches = fwd.branches[&args.layer];

    let out = out_dir(cli, "features");
    fs::create_dir_all(&out)?;
    for (name, var) in ["c3", "dic2", "dec2"].iter().zip(branches) {
        let path = out.join(format!("l{}_{name}.tdf", args.layer));
        tdf::write_file(&path, &TdfTensor::from_tensor(g.value(var)))?;
        println!("wrote {} {:?}", path.display(), g.value(var).shape());
    }
    Ok(true)
}
