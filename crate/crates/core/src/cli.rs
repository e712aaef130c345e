//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{Config, LearningSetup};
use crate::continuity::write_matrix_csv;
use crate::error::{Error, Result};
use crate::estimator::Checkpoint;
use crate::harness::{
    fmt_num, run_experiment_i, run_experiment_ii, trajectory_csv, write_trial_csv, ExperimentConfig,
    ExperimentResult, Summary, Variant,
};
use crate::spline::{SplineFunction, SplineView};

pub const OUTPUT_DIR_ENV: &str = "SPLINEDP_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "splinedp", version, about = "Simplex-spline value learning on the pendulum swing-up task")]
pub struct Cli {
    /// TOML configuration; defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report the dimensions of the configured spline space.
    Space {
        /// Write B-net positions (and checkpoint coefficients, if given).
        #[arg(long)]
        bnet_csv: Option<PathBuf>,
        #[arg(long, requires = "bnet_csv")]
        checkpoint: Option<PathBuf>,
        /// Write H.csv and Z.csv into this directory.
        #[arg(long)]
        dump_matrices: Option<PathBuf>,
    },
    /// Run Experiment I or II and write per-trial CSVs, summary and manifest.
    Run {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        #[arg(long, value_enum, default_value = "both")]
        variant: VariantArg,
        /// Overrides experiment.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds to run, starting at the master seed.
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        #[arg(long, env = OUTPUT_DIR_ENV, default_value = "splinedp-out")]
        out: PathBuf,
        /// Pretrained learner for Experiment II; skips pretraining.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Save each Experiment II learner at the end of pretraining.
        #[arg(long)]
        save_checkpoints: bool,
        /// Write one trajectory CSV per recorded trial.
        #[arg(long)]
        trajectories: bool,
        /// Worker threads; each runs whole experiments.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Tabulate a learned value function and its gradient on a regular grid.
    ExportValue {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 41)]
        theta_points: usize,
        #[arg(long, default_value_t = 41)]
        thetadot_points: usize,
        /// Grid range as `min,max`; defaults to the domain bounds.
        #[arg(long, value_parser = parse_range)]
        theta_range: Option<(f64, f64)>,
        #[arg(long, value_parser = parse_range)]
        thetadot_range: Option<(f64, f64)>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    #[value(name = "I", alias = "i", alias = "1")]
    I,
    #[value(name = "II", alias = "ii", alias = "2")]
    II,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Rlstd,
    RlstdForget,
    Both,
}

impl VariantArg {
    fn variants(self) -> Vec<Variant> {
        match self {
            VariantArg::Rlstd => vec![Variant::Rlstd],
            VariantArg::RlstdForget => vec![Variant::RlstdForget],
            VariantArg::Both => Variant::ALL.to_vec(),
        }
    }
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected min,max")?;
    let lo: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if !(lo < hi) {
        return Err("min must be below max".into());
    }
    Ok((lo, hi))
}

/// Written into every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
    pub tool_version: String,
    pub command: String,
    /// Wall-clock seconds per run, keyed by output file stem.
    pub runtimes_s: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Serialize)]
struct RunSummary {
    variant: Variant,
    seed: u64,
    trials_csv: String,
    summary: Summary,
    pretrain_summary: Option<Summary>,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryFile {
    experiment: String,
    config: Config,
    runs: Vec<RunSummary>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NumericalFailure(_) => 3,
        _ => 2,
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

/// Runs the parsed command, writing reports to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Space { bnet_csv, checkpoint, dump_matrices } => {
            let setup = cfg.build_space()?;
            writeln!(out, "{}", space_report(&setup))?;
            if let Some(path) = bnet_csv {
                let f = match checkpoint {
                    Some(cp) => function_from_checkpoint(&setup, &Checkpoint::load(cp)?)?,
                    None => SplineFunction::zeros(setup.space.clone()),
                };
                f.write_bnet_csv(path)?;
            }
            if let Some(dir) = dump_matrices {
                std::fs::create_dir_all(dir)?;
                write_matrix_csv(&setup.smoothness.h, dir.join("H.csv"))?;
                write_matrix_csv(&setup.projector.z, dir.join("Z.csv"))?;
            }
            Ok(())
        }
        Command::Run { experiment, variant, seed, replicas, out: dir, checkpoint, save_checkpoints, trajectories, parallel } => {
            if let Some(s) = seed {
                cfg.experiment.master_seed = *s;
            }
            let opts = RunOptions {
                experiment: *experiment,
                variants: variant.variants(),
                replicas: (*replicas).max(1),
                out: dir.clone(),
                checkpoint: checkpoint.clone(),
                save_checkpoints: *save_checkpoints,
                trajectories: *trajectories,
                parallel: (*parallel).max(1),
            };
            let summary = cmd_run(&cfg, cli.config.clone(), &opts)?;
            for r in &summary.runs {
                writeln!(
                    out,
                    "{} seed={} mean_t_up={:.3} std_t_up={:.3} diverged={}",
                    r.variant.name(),
                    r.seed,
                    r.summary.mean_t_up,
                    r.summary.std_t_up,
                    r.summary.diverged
                )?;
            }
            Ok(())
        }
        Command::ExportValue { checkpoint, out: path, theta_points, thetadot_points, theta_range, thetadot_range } => {
            let setup = cfg.build_space()?;
            let f = function_from_checkpoint(&setup, &Checkpoint::load(checkpoint)?)?;
            let bounds = setup.space.triangulation().bounds();
            let th = theta_range.unwrap_or((bounds.lower[0], bounds.upper[0]));
            let td = thetadot_range.unwrap_or((bounds.lower[1], bounds.upper[1]));
            let (csv, omitted) = export_value(&f.view(), th, *theta_points, td, *thetadot_points);
            std::fs::write(path, csv)?;
            if omitted > 0 {
                eprintln!("warning: {omitted} grid points outside the domain were omitted");
            }
            Ok(())
        }
    }
}

pub fn space_report(setup: &LearningSetup) -> String {
    let s = &setup.space;
    format!(
        "J={} dhat={} ahat={} rank_H={} free={}",
        s.triangulation().len(),
        s.dhat(),
        s.ahat(),
        setup.projector.rank_h,
        setup.projector.free_parameters()
    )
}

fn function_from_checkpoint(setup: &LearningSetup, cp: &Checkpoint) -> Result<SplineFunction> {
    if cp.space_fingerprint != setup.fingerprint || cp.c.len() != setup.space.ahat() {
        return Err(Error::CheckpointMismatch("checkpoint was made for a different spline space".into()));
    }
    SplineFunction::new(setup.space.clone(), nalgebra::DVector::from_column_slice(&cp.c))
}

fn grid(range: (f64, f64), points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (range.0 + range.1)],
        n => (0..n).map(|k| range.0 + (range.1 - range.0) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// CSV rows `theta,thetadot,V,dV_dtheta,dV_dthetadot` and the number of
/// grid points skipped for lying outside the domain.
pub fn export_value(
    value: &SplineView<'_>,
    theta: (f64, f64),
    theta_points: usize,
    thetadot: (f64, f64),
    thetadot_points: usize,
) -> (String, usize) {
    let mut out = String::from("theta,thetadot,V,dV_dtheta,dV_dthetadot\n");
    let mut omitted = 0;
    for &td in &grid(thetadot, thetadot_points) {
        for &th in &grid(theta, theta_points) {
            match value.value_and_gradient(&[th, td]) {
                Ok((v, g)) => {
                    let _ = writeln!(out, "{},{},{},{},{}", fmt_num(th), fmt_num(td), fmt_num(v), fmt_num(g[0]), fmt_num(g[1]));
                }
                Err(_) => omitted += 1,
            }
        }
    }
    (out, omitted)
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub experiment: ExperimentArg,
    pub variants: Vec<Variant>,
    pub replicas: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub save_checkpoints: bool,
    pub trajectories: bool,
    pub parallel: usize,
}

struct Job {
    variant: Variant,
    seed: u64,
}

impl Job {
    fn stem(&self) -> String {
        format!("{}_seed{}", self.variant.name(), self.seed)
    }
}

fn cmd_run(cfg: &Config, config_path: Option<PathBuf>, opts: &RunOptions) -> Result<SummaryFile> {
    let started = unix_now();
    std::fs::create_dir_all(&opts.out)?;
    let setup = cfg.build_space()?;
    let checkpoint = opts.checkpoint.as_ref().map(Checkpoint::load).transpose()?;

    let base = cfg.experiment.master_seed;
    let jobs: Vec<Job> = (0..opts.replicas)
        .flat_map(|k| opts.variants.iter().map(move |&variant| Job { variant, seed: base + k }))
        .collect();

    let run_job = |job: &Job| -> Result<ExperimentResult> {
        let mut job_cfg = cfg.clone();
        job_cfg.experiment.master_seed = job.seed;
        let mut exp = ExperimentConfig::from_config(&job_cfg, setup.clone(), job.variant)?;
        exp.record_trajectories = opts.trajectories;
        let result = match opts.experiment {
            ExperimentArg::I => run_experiment_i(&exp)?,
            ExperimentArg::II => run_experiment_ii(&exp, checkpoint.as_ref())?,
        };
        write_outputs(&opts.out, &job.stem(), &result, opts.save_checkpoints)?;
        Ok(result)
    };

    let slots: Vec<Mutex<Option<Result<ExperimentResult>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|scope| {
        for _ in 0..opts.parallel.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("job counter");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                let r = run_job(&jobs[i]);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut runs = Vec::with_capacity(jobs.len());
    let mut runtimes = Vec::with_capacity(jobs.len());
    for (job, slot) in jobs.iter().zip(slots) {
        let result = slot.into_inner().expect("result slot").expect("every job ran")?;
        runtimes.push((job.stem(), result.runtime_s));
        runs.push(RunSummary {
            variant: job.variant,
            seed: job.seed,
            trials_csv: format!("trials_{}.csv", job.stem()),
            summary: result.summary.clone(),
            pretrain_summary: (!result.pretrain.is_empty()).then(|| Summary::from_records(&result.pretrain)),
        });
    }

    let summary = SummaryFile {
        experiment: format!("{:?}", opts.experiment),
        config: cfg.clone(),
        runs,
    };
    std::fs::write(opts.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let manifest = RunManifest {
        config_path,
        config_hash: cfg.hash(),
        output_dir: opts.out.clone(),
        started_unix_s: started,
        finished_unix_s: unix_now(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: format!("run --experiment {:?}", opts.experiment),
        runtimes_s: runtimes,
    };
    std::fs::write(opts.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(summary)
}

fn write_outputs(dir: &Path, stem: &str, result: &ExperimentResult, save_checkpoint: bool) -> Result<()> {
    write_trial_csv(&result.records, dir.join(format!("trials_{stem}.csv")))?;
    if !result.pretrain.is_empty() {
        write_trial_csv(&result.pretrain, dir.join(format!("pretrain_{stem}.csv")))?;
    }
    if !result.trajectories.is_empty() {
        let tdir = dir.join(format!("trajectories_{stem}"));
        std::fs::create_dir_all(&tdir)?;
        for (k, traj) in result.trajectories.iter().enumerate() {
            std::fs::write(tdir.join(format!("trial_{k:03}.csv")), trajectory_csv(traj))?;
        }
    }
    if save_checkpoint {
        if let Some(cp) = &result.pretrained {
            cp.save(dir.join(format!("pretrained_{stem}.json")))?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
