use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use psvma_core::checkpoint;
use psvma_core::data::{generate, GzslDataset, Preset};
use psvma_core::evaluator::{
    best_h, evaluate_scores, export_distributions, gamma_sweep, linspace, score_test_set, sweep_csv,
};
use psvma_core::gradprobe::LossProbe;
use psvma_core::model::{ClassContext, Psvma};
use psvma_core::numcore::Tensor;
use psvma_core::trainer::{write_metrics_csv, Trainer};
use psvma_oracle::Coverage;

use crate::config::{Invocation, RunConfig};
use crate::exit::CliError;
use crate::output::Staged;
use crate::{Cli, Command, EvalArgs, ExportArgs, GenDataArgs, GradcheckArgs, PresetArg, SweepArgs, TrainArgs};

type Result<T> = std::result::Result<T, CliError>;

/// Flags that only choose where results go; they are left out of the echo
/// so identical runs produce identical directories.
const LOCATION_FLAGS: [&str; 3] = ["--out", "--config", "--force"];

fn invocation(command: &str) -> Invocation {
    let mut args = Vec::new();
    let mut raw = std::env::args().skip(2);
    while let Some(a) = raw.next() {
        let flag = a.split('=').next().unwrap_or_default();
        if LOCATION_FLAGS.contains(&flag) {
            if !a.contains('=') && flag != "--force" {
                raw.next();
            }
            continue;
        }
        args.push(a);
    }
    Invocation {
        command: command.to_string(),
        args,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::validation(e.to_string()))?;
    write(path, &(text + "\n"))
}

fn load_data(path: &Path) -> Result<GzslDataset> {
    Ok(GzslDataset::load(path)?)
}

/// Model and training configuration of a checkpoint plus the dataset it is
/// applied to, as an echo.
fn checkpoint_echo(ckpt: &checkpoint::Checkpoint, data: &GzslDataset, data_path: &Path, command: &str) -> RunConfig {
    RunConfig {
        data_path: Some(data_path.to_path_buf()),
        data: data.config.clone(),
        model: ckpt.model.config().clone(),
        train: ckpt.train.clone(),
        invocation: Some(invocation(command)),
        ..RunConfig::default()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let force = cli.force;
    match cli.command {
        Command::GenData(a) => gen_data(a, force),
        Command::Train(a) => train(a, force),
        Command::Eval(a) => eval(a, force),
        Command::SweepGamma(a) => sweep(a, force),
        Command::Gradcheck(a) => gradcheck(a, force),
        Command::ExportAttn(a) => export_attn(a, force),
    }
}

fn gen_data(args: GenDataArgs, force: bool) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply_seed(args.seed);
    if let Some(p) = args.preset {
        let preset = match p {
            PresetArg::CubShape => Preset::CubShape,
            PresetArg::SunShape => Preset::SunShape,
            PresetArg::Awa2Shape => Preset::Awa2Shape,
        };
        cfg.data = preset.apply(&cfg.data);
    }
    cfg.output_dir = None;
    cfg.invocation = Some(invocation("gen-data"));
    let data = generate(&cfg.data)?;
    let stage = Staged::new(&args.out, force)?;
    data.save(stage.path())?;
    cfg.echo(stage.path())?;
    let out = stage.commit()?;
    println!(
        "wrote {} samples ({} seen / {} unseen classes) to {}",
        data.num_samples(),
        data.seen_classes().len(),
        data.unseen_classes().len(),
        out.display()
    );
    Ok(())
}

fn train(args: TrainArgs, force: bool) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.apply_seed(args.seed);
    let t = &mut cfg.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.lr = args.lr.unwrap_or(t.lr);
    t.weights.lambda_sem = args.lambda_sem.unwrap_or(t.weights.lambda_sem);
    t.weights.lambda_deb = args.lambda_deb.unwrap_or(t.weights.lambda_deb);
    t.weights.tau = args.tau.unwrap_or(t.weights.tau);
    let data_path = args
        .data
        .or(cfg.data_path.take())
        .ok_or_else(|| CliError::usage("train needs --data or data_path in the config"))?;
    let out = args
        .out
        .or(cfg.output_dir.take())
        .ok_or_else(|| CliError::usage("train needs --out or output_dir in the config"))?;
    let data = load_data(&data_path)?;
    cfg.data_path = Some(data_path);
    cfg.data = data.config.clone();
    cfg.invocation = Some(invocation("train"));

    let model = Psvma::new(&cfg.model)?;
    cfg.model.check_dataset(&data)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let stage = Staged::new(&out, force)?;
    cfg.echo(stage.path())?;
    let every = cfg.train.checkpoint_every;
    let epochs = cfg.train.epochs;
    let periodic = stage.path().join("checkpoints");
    trainer.train_with(&data, |t, m| {
        eprintln!(
            "epoch {:>4}/{epochs}  total {:.5}  cls {:.5}  sem {:.5}  deb {:.5}  seen-train acc {:.3}",
            m.epoch + 1,
            m.total,
            m.cls,
            m.sem,
            m.deb,
            m.seen_train_acc
        );
        if every > 0 && (m.epoch + 1) % every == 0 {
            checkpoint::save(&periodic.join(format!("epoch-{:04}", m.epoch + 1)), t)?;
        }
        Ok(())
    })?;
    checkpoint::save(&stage.path().join("checkpoint"), &trainer)?;
    write_metrics_csv(&stage.path().join("metrics.csv"), trainer.history())?;
    let out = stage.commit()?;
    println!("wrote checkpoint and metrics to {}", out.display());
    Ok(())
}

fn eval(args: EvalArgs, force: bool) -> Result<()> {
    let data = load_data(&args.data)?;
    let ckpt = checkpoint::load(&args.checkpoint, None)?;
    let tau = ckpt.train.weights.tau;
    let set = score_test_set(&ckpt.model, &data, tau)?;
    let report = evaluate_scores(&set, args.gamma, args.averaging.into())?;
    let stage = Staged::new(&args.out, force)?;
    write_json(&stage.path().join("report.json"), &report)?;
    export_distributions(&set, stage.path())?;
    checkpoint_echo(&ckpt, &data, &args.data, "eval").echo(stage.path())?;
    stage.commit()?;
    println!(
        "gamma {}  U {:.4}  S {:.4}  H {:.4}",
        report.gamma, report.u, report.s, report.h
    );
    Ok(())
}

fn sweep(args: SweepArgs, force: bool) -> Result<()> {
    if args.steps == 0 {
        return Err(CliError::usage("--steps must be at least 1"));
    }
    if !(args.from <= args.to) {
        return Err(CliError::usage(format!("--from ({}) must not exceed --to ({})", args.from, args.to)));
    }
    let data = load_data(&args.data)?;
    let ckpt = checkpoint::load(&args.checkpoint, None)?;
    let set = score_test_set(&ckpt.model, &data, ckpt.train.weights.tau)?;
    let reports = gamma_sweep(&set, &linspace(args.from, args.to, args.steps), args.averaging.into())?;
    let stage = Staged::new(&args.out, force)?;
    write(&stage.path().join("sweep.csv"), &sweep_csv(&reports))?;
    checkpoint_echo(&ckpt, &data, &args.data, "sweep-gamma").echo(stage.path())?;
    stage.commit()?;
    if let Some(b) = best_h(&reports) {
        let r = &reports[b];
        println!("best H {:.4} at gamma {}  (U {:.4}  S {:.4})", r.h, r.gamma, r.u, r.s);
    }
    Ok(())
}

fn gradcheck(args: GradcheckArgs, force: bool) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    cfg.gradcheck.h = args.h.unwrap_or(cfg.gradcheck.h);
    cfg.output_dir = None;
    cfg.invocation = Some(invocation("gradcheck"));
    let g = &cfg.gradcheck;
    let coverage = if args.full {
        Coverage::All
    } else {
        Coverage::Sampled(g.per_param)
    };
    let probe = LossProbe::new(&g.probe)?;
    let report = probe.check(g.h, g.threshold, coverage)?;
    let stage = Staged::new(&args.out, force)?;
    write(&stage.path().join("gradcheck.json"), &(report.to_json() + "\n"))?;
    cfg.echo(stage.path())?;
    stage.commit()?;
    let worst = report.worst();
    let summary = format!(
        "max relative error {:.3e} (threshold {:e}) at {}{:?}",
        report.max_rel_error,
        report.threshold,
        worst.map(|w| w.name.as_str()).unwrap_or("-"),
        worst.map(|w| w.worst.clone()).unwrap_or_default()
    );
    if report.passed {
        println!("gradcheck passed: {summary}");
        Ok(())
    } else {
        Err(CliError::numerical(format!("gradcheck failed: {summary}")))
    }
}

fn matrix_csv(t: &Tensor) -> String {
    let mut out = String::from("attribute");
    for j in 0..t.cols() {
        let _ = write!(out, ",patch_{j}");
    }
    out.push('\n');
    for i in 0..t.rows() {
        out.push_str(&i.to_string());
        for &v in t.row(i) {
            let _ = write!(out, ",{v:e}");
        }
        out.push('\n');
    }
    out
}

fn export_attn(args: ExportArgs, force: bool) -> Result<()> {
    let data = load_data(&args.data)?;
    if args.sample >= data.num_samples() {
        return Err(CliError::validation(format!(
            "sample {} out of range (dataset has {})",
            args.sample,
            data.num_samples()
        )));
    }
    let ckpt = checkpoint::load(&args.checkpoint, None)?;
    ckpt.model.config().check_dataset(&data)?;
    let states = ckpt.model.inspect(&data.sample(args.sample), &ClassContext::from_dataset(&data))?;
    let stage = Staged::new(&args.out, force)?;
    let mut files: Vec<PathBuf> = Vec::new();
    for (z, state) in states.iter().enumerate() {
        for (r, m) in state.affinities.iter().enumerate() {
            let name = PathBuf::from(format!("affinity_module{z}_loop{r}.csv"));
            write(&stage.path().join(&name), &matrix_csv(m))?;
            files.push(name);
        }
    }
    let label = data.labels[args.sample];
    write_json(
        &stage.path().join("sample.json"),
        &serde_json::json!({
            "index": args.sample,
            "label": label,
            "class_name": data.class_names[label],
            "split": data.splits[args.sample],
        }),
    )?;
    checkpoint_echo(&ckpt, &data, &args.data, "export-attn").echo(stage.path())?;
    let out = stage.commit()?;
    println!("wrote {} affinity matrices to {}", files.len(), out.display());
    Ok(())
}
