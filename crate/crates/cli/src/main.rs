//! `tech`: command-line driver for data generation, training, evaluation,
//! benchmarking, centralization analysis and gradient checking.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use tech_core::bench::{bench_csv, run_bench};
use tech_core::centrality::{analyze_dataset, noise_sweep, sweep_csv};
use tech_core::checkpoint::{load_any, SavedModel};
use tech_core::config::RunConfig;
use tech_core::data::{generate, load_dataset, save_dataset, split_by_subject, Dataset, Splits};
use tech_core::gradcheck::default_suite;
use tech_core::metrics::{aggregate, Metrics};
use tech_core::model::{LinearProbe, TeChModel};
use tech_core::train::{evaluate, log_csv, train, TrainOutcome};
use tech_core::{Error, Result};

pub const CENTRALITY_SCHEMA: &str = "tech-centrality/v1";
pub const GRADCHECK_SCHEMA: &str = "tech-gradcheck/v1";
pub const BENCH_SCHEMA: &str = "tech-bench/v1";

#[derive(Parser)]
#[command(name = "tech", version, about = "CoTAR / TeCh medical time-series toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (`dataset.medts`).
    Generate(Common),
    /// Train one model with the first configured seed (`model.ckpt`, `log.csv`, `metrics.json`).
    Train(Common),
    /// Evaluate `checkpoint` on the test split, or run every seed when no checkpoint is set.
    Eval(Common),
    /// Token-mixer scaling benchmark (`bench.csv`, `bench.json`).
    Bench(Common),
    /// SCI/DIC report (`centrality.json`) and optional noise sweep (`sweep.csv`).
    Analyze(Common),
    /// Finite-difference check of every layer (`gradcheck.json`).
    Gradcheck(Common),
}

#[derive(Args)]
struct Common {
    /// Flat JSON config file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
        fs::create_dir_all(&common.out).map_err(Error::file(&common.out))?;
        Ok(Self {
            cfg,
            out: common.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(Error::file(&path))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    fn write_json(&self, name: &str, value: &Value) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    /// Echoes the effective config once the data shape is settled.
    fn echo_config(&self) -> Result<()> {
        self.write_json("config.json", &self.cfg.to_json())
    }

    /// The configured dataset file or, without one, a generated dataset.
    /// The model shape follows the data.
    fn dataset(&mut self) -> Result<Dataset> {
        let data = match &self.cfg.data {
            Some(path) => load_dataset(path)?,
            None => generate(&self.cfg.generator())?,
        };
        if (data.len, data.channels, data.classes) != (self.cfg.len, self.cfg.channels, self.cfg.classes) {
            log::info!(
                "using data shape T={} C={} K={} from {:?}",
                data.len,
                data.channels,
                data.classes,
                self.cfg.data
            );
            self.cfg.len = data.len;
            self.cfg.channels = data.channels;
            self.cfg.classes = data.classes;
            self.cfg.validate()?;
        }
        Ok(data)
    }

    fn splits(&mut self) -> Result<Splits> {
        let data = self.dataset()?;
        split_by_subject(&data, &self.cfg.split())
    }

    fn fresh_model(&self, seed: u64) -> Result<SavedModel> {
        if self.cfg.linear_probe {
            Ok(SavedModel::Probe(LinearProbe::new(
                self.cfg.len,
                self.cfg.channels,
                self.cfg.classes,
                seed,
            )))
        } else {
            Ok(SavedModel::TeCh(TeChModel::new(self.cfg.model()?, seed)?))
        }
    }

    fn fit(&self, splits: &Splits, seed: u64) -> Result<(SavedModel, TrainOutcome)> {
        let mut model = self.fresh_model(seed)?;
        let bank = self.cfg.bank()?;
        let tc = self.cfg.train()?;
        let outcome = match &mut model {
            SavedModel::TeCh(m) => train(m, &splits.train, &splits.val, &tc, seed, Some(&bank))?,
            SavedModel::Probe(p) => train(p, &splits.train, &splits.val, &tc, seed, Some(&bank))?,
        };
        Ok((model, outcome))
    }
}

fn metrics_line(m: &Metrics) -> String {
    Metrics::NAMES
        .iter()
        .zip(m.values())
        .map(|(n, v)| format!("{n}={v:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_generate(run: &mut Run) -> Result<()> {
    let data = generate(&run.cfg.generator())?;
    run.echo_config()?;
    save_dataset(&run.path("dataset.medts"), &data)?;
    println!(
        "generated {} samples from {} subjects (T={} C={} K={})",
        data.len(),
        data.subjects().len(),
        data.len,
        data.channels,
        data.classes
    );
    Ok(())
}

fn cmd_train(run: &mut Run) -> Result<()> {
    let splits = run.splits()?;
    run.echo_config()?;
    let seed = run.cfg.seeds[0];
    let (model, outcome) = run.fit(&splits, seed)?;
    model.save(&run.path("model.ckpt"))?;
    run.write("log.csv", &log_csv(&outcome.log))?;
    let metrics = evaluate(model.classifier(), &splits.test)?;
    run.write_json("metrics.json", &aggregate(&[seed], &[metrics])?.to_json())?;
    println!(
        "seed {seed}: best epoch {} (val f1 {:.4}); test {}",
        outcome.best_epoch,
        outcome.best_val_f1,
        metrics_line(&metrics)
    );
    Ok(())
}

fn cmd_eval(run: &mut Run) -> Result<()> {
    let splits = run.splits()?;
    if let Some(path) = run.cfg.checkpoint.clone() {
        let model = load_any(&path)?;
        run.echo_config()?;
        let metrics = evaluate(model.classifier(), &splits.test)?;
        let seed = run.cfg.seeds[0];
        run.write_json("metrics.json", &aggregate(&[seed], &[metrics])?.to_json())?;
        println!("{}: {}", path.display(), metrics_line(&metrics));
        return Ok(());
    }
    run.echo_config()?;
    let seeds = run.cfg.seeds.clone();
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let (model, outcome) = run.fit(&splits, seed)?;
        run.write(&format!("log-{seed}.csv"), &log_csv(&outcome.log))?;
        let metrics = evaluate(model.classifier(), &splits.test)?;
        println!("seed {seed}: {}", metrics_line(&metrics));
        per_seed.push(metrics);
    }
    let report = aggregate(&seeds, &per_seed)?;
    run.write_json("metrics.json", &report.to_json())?;
    println!("mean: {}", metrics_line(&report.mean));
    Ok(())
}

fn cmd_bench(run: &mut Run) -> Result<()> {
    run.echo_config()?;
    let report = run_bench(&run.cfg.bench())?;
    run.write("bench.csv", &bench_csv(&report))?;
    let slopes: serde_json::Map<String, Value> = report.slopes.iter().map(|(k, s)| (k.to_string(), json!(s))).collect();
    run.write_json(
        "bench.json",
        &json!({ "schema": BENCH_SCHEMA, "rows": report.rows, "slopes": slopes }),
    )?;
    for (kind, slope) in &report.slopes {
        println!("{kind}: log-log time slope {slope:.3}");
    }
    Ok(())
}

fn cmd_analyze(run: &mut Run) -> Result<()> {
    let data = run.dataset()?;
    run.echo_config()?;
    let c = analyze_dataset(&data)?;
    run.write_json(
        "centrality.json",
        &json!({
            "schema": CENTRALITY_SCHEMA,
            "samples": c.samples,
            "sci": c.sci_mean,
            "dic": c.dic_mean,
            "out_strengths": c.out_strengths,
        }),
    )?;
    println!("samples={} sci={:.6} dic={:.6}", c.samples, c.sci_mean, c.dic_mean);
    if run.cfg.sweep {
        let splits = split_by_subject(&data, &run.cfg.split())?;
        let seed = run.cfg.seeds[0];
        let cfg = &run.cfg;
        let points = noise_sweep(&splits, &cfg.betas, &cfg.sweep_mixers, cfg.noise_seed, |mixer, noisy| {
            let mut model = TeChModel::new(tech_core::model::TeChConfig { mixer, ..cfg.model()? }, seed)?;
            train(&mut model, &noisy.train, &noisy.val, &cfg.train()?, seed, Some(&cfg.bank()?))?;
            Ok(evaluate(&model, &noisy.test)?.f1_macro)
        })?;
        run.write("sweep.csv", &sweep_csv(&points))?;
        for p in &points {
            println!("beta={} mixer={} f1={:.4}", p.beta, p.mixer, p.f1);
        }
    }
    Ok(())
}

fn cmd_gradcheck(run: &mut Run) -> Result<()> {
    run.echo_config()?;
    let suite = default_suite(run.cfg.gradcheck_step, run.cfg.gradcheck_tol)?;
    let all = suite.iter().all(|e| e.report.passed);
    run.write_json(
        "gradcheck.json",
        &json!({ "schema": GRADCHECK_SCHEMA, "passed": all, "entries": suite }),
    )?;
    for e in &suite {
        let status = if e.report.passed { "pass" } else { "FAIL" };
        println!("{status} {} max_rel_err={:.3e} entries={}", e.name, e.report.max_rel_err, e.report.entries);
    }
    if !all {
        return Err(Error::Numeric(format!(
            "gradient check failed at tol {}",
            run.cfg.gradcheck_tol
        )));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let (common, f): (&Common, fn(&mut Run) -> Result<()>) = match &cli.command {
        Command::Generate(c) => (c, cmd_generate),
        Command::Train(c) => (c, cmd_train),
        Command::Eval(c) => (c, cmd_eval),
        Command::Bench(c) => (c, cmd_bench),
        Command::Analyze(c) => (c, cmd_analyze),
        Command::Gradcheck(c) => (c, cmd_gradcheck),
    };
    let mut run = Run::new(common)?;
    f(&mut run)
}

/// One line, `error: kind=<tag> msg=<text>`, with newlines flattened.
fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error: kind={} msg={msg}", e.kind())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
