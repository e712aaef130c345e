//! Trial and experiment orchestration for the pendulum swing-up task.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Backend, Config, LearningSetup};
use crate::control::{greedy_action, reward, PolicyParams, RewardParams};
use crate::error::{Error, Result};
use crate::estimator::{Checkpoint, EstimatorState, Hyperparams, ReducedEstimator, TdRule, ValueLearner};
use crate::pendulum::{PendulumParams, PendulumState};
use crate::spline::{SplineSpace, SplineView};

/// Coefficients beyond this magnitude mark a trial as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e9;

pub const TRIAL_CSV_HEADER: &str = "trial,theta0_rad,t_up_s,total_reward,clamp_count,diverged";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Plain RLSTD, no forgetting.
    Rlstd,
    /// RLSTD with continuity-preserving directional forgetting.
    RlstdForget,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Rlstd, Variant::RlstdForget];

    pub fn rule(self) -> TdRule {
        match self {
            Variant::Rlstd => TdRule::Rlstd,
            Variant::RlstdForget => TdRule::RlstdForget,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rlstd => "rlstd",
            Variant::RlstdForget => "rlstd_forget",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rlstd" => Ok(Variant::Rlstd),
            "rlstd_forget" => Ok(Variant::RlstdForget),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Everything one experiment run needs; the spline space is prebuilt.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub setup: LearningSetup,
    pub variant: Variant,
    pub hyper: Hyperparams,
    pub backend: Backend,
    pub pendulum: PendulumParams,
    pub policy: PolicyParams,
    pub reward: RewardParams,
    pub trials: usize,
    pub trial_steps: usize,
    pub pretrain_trials: usize,
    pub mass_after: f64,
    pub master_seed: u64,
    pub record_trajectories: bool,
}

impl ExperimentConfig {
    pub fn from_config(cfg: &Config, setup: LearningSetup, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        Ok(ExperimentConfig {
            setup,
            variant,
            hyper: cfg.hyperparams(),
            backend: cfg.learning.backend,
            pendulum: cfg.pendulum,
            policy: cfg.policy_params(),
            reward: cfg.reward,
            trials: cfg.experiment.trials,
            trial_steps: cfg.trial_steps(),
            pretrain_trials: cfg.experiment.pretrain_trials,
            mass_after: cfg.experiment.mass_after,
            master_seed: cfg.experiment.master_seed,
            record_trajectories: false,
        })
    }

    /// Hyperparameters actually used; plain RLSTD never forgets.
    pub fn effective_hyper(&self) -> Hyperparams {
        match self.variant {
            Variant::Rlstd => Hyperparams { beta2: 0.0, ..self.hyper },
            Variant::RlstdForget => self.hyper,
        }
    }

    pub fn trial_length(&self) -> f64 {
        self.trial_steps as f64 * self.pendulum.dt
    }
}

/// The learner plus the policy it drives.
pub struct Agent {
    space: Arc<SplineSpace>,
    learner: Box<dyn ValueLearner>,
    rule: TdRule,
    policy: PolicyParams,
    frozen: bool,
}

impl Agent {
    pub fn new(exp: &ExperimentConfig) -> Result<Self> {
        let hyper = exp.effective_hyper();
        let learner: Box<dyn ValueLearner> = match exp.backend {
            Backend::Reduced => Box::new(ReducedEstimator::init(&exp.setup.projector, hyper)?),
            Backend::Dense => Box::new(EstimatorState::init(exp.setup.projector.clone(), hyper)?),
        };
        Ok(Self::with_learner(exp, learner))
    }

    /// Resumes from a checkpoint; the variant of `exp` decides the forgetting gain.
    pub fn from_checkpoint(exp: &ExperimentConfig, cp: &Checkpoint) -> Result<Self> {
        let mut cp = cp.clone();
        cp.hyper = Hyperparams { beta2: exp.effective_hyper().beta2, ..cp.hyper };
        let fp = &exp.setup.fingerprint;
        let learner: Box<dyn ValueLearner> = match exp.backend {
            Backend::Reduced => Box::new(ReducedEstimator::from_checkpoint(&cp, &exp.setup.projector, fp)?),
            Backend::Dense => Box::new(EstimatorState::from_checkpoint(&cp, exp.setup.projector.clone(), fp)?),
        };
        Ok(Self::with_learner(exp, learner))
    }

    fn with_learner(exp: &ExperimentConfig, learner: Box<dyn ValueLearner>) -> Self {
        Agent { space: exp.setup.space.clone(), learner, rule: exp.variant.rule(), policy: exp.policy, frozen: false }
    }

    /// A frozen agent acts but skips every estimator update.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn learner(&self) -> &dyn ValueLearner {
        self.learner.as_ref()
    }

    pub fn value(&self) -> SplineView<'_> {
        SplineView::new(&self.space, self.learner.coefficients().as_slice())
    }

    pub fn action(&self, state: &PendulumState, env: &PendulumParams, noise: f64) -> Result<f64> {
        greedy_action(&self.value(), &state.as_point(), &self.policy, &env.input_gain(), noise)
    }

    pub fn checkpoint(&self, fingerprint: &str) -> Checkpoint {
        self.learner.checkpoint(fingerprint)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    InitialAngle,
    Process,
    Exploration,
}

/// Which block of trials a seed belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Recorded,
}

/// Derives independent ChaCha streams from the master seed.
fn stream_rng(master: u64, stream: Stream, phase: Phase, trial: usize, variant: Option<Variant>) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(format!("{stream:?}/{phase:?}/{trial}").as_bytes());
    if let Some(v) = variant {
        h.update(v.name().as_bytes());
    }
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(seed)
}

/// Initial angle of a trial; shared by every variant.
pub fn initial_angle(master_seed: u64, phase: Phase, trial: usize) -> f64 {
    stream_rng(master_seed, Stream::InitialAngle, phase, trial, None).random_range(-PI..PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub theta0: f64,
    pub t_up: f64,
    pub total_reward: f64,
    pub clamp_count: usize,
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub theta: f64,
    pub thetadot: f64,
    pub u: f64,
    pub reward: f64,
}

/// dt times the longest run of consecutive samples with `|theta| < pi/4`.
pub fn compute_t_up(thetas: &[f64], dt: f64) -> f64 {
    let mut best = 0usize;
    let mut run = 0usize;
    for th in thetas {
        if th.abs() < PI / 4.0 {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64 * dt
}

/// Centered moving average, truncated at the ends.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            series[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// One trial: the agent learns online while it controls the pendulum.
pub fn run_trial(
    agent: &mut Agent,
    env: &PendulumParams,
    exp: &ExperimentConfig,
    phase: Phase,
    trial: usize,
    trajectory: Option<&mut Vec<TrajectoryRow>>,
) -> Result<TrialRecord> {
    let seed = exp.master_seed;
    let theta0 = initial_angle(seed, phase, trial);
    let mut process = stream_rng(seed, Stream::Process, phase, trial, Some(exp.variant));
    let mut explore = stream_rng(seed, Stream::Exploration, phase, trial, Some(exp.variant));
    let mut trajectory = trajectory;

    let mut state = PendulumState::new(theta0, 0.0);
    let mut row = agent.space.basis_row(&state.as_point())?;
    let mut thetas = Vec::with_capacity(exp.trial_steps);
    let mut total_reward = 0.0;
    let mut clamp_count = 0;
    let mut diverged = false;

    for step in 0..exp.trial_steps {
        let n: f64 = explore.sample(StandardNormal);
        let w: f64 = process.sample(StandardNormal);
        let u = agent.action(&state, env, exp.policy.sigma_n * n)?;
        let next = state.step(u, w, env);
        let r = reward(&next.state.as_point(), u, &exp.reward, env.u_max);
        let next_row = agent.space.basis_row(&next.state.as_point())?;

        clamp_count += next.clamped as usize;
        total_reward += r;
        thetas.push(next.state.theta);
        if let Some(traj) = trajectory.as_deref_mut() {
            traj.push(TrajectoryRow {
                t: (step + 1) as f64 * env.dt,
                theta: next.state.theta,
                thetadot: next.state.thetadot,
                u,
                reward: r,
            });
        }

        if agent.frozen {
            state = next.state;
            row = next_row;
            continue;
        }
        match agent.learner.td_update(agent.rule, &row, &next_row, r) {
            Ok(()) => {}
            Err(Error::NumericalFailure(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if agent.learner.coefficients().amax() > DIVERGENCE_LIMIT {
            diverged = true;
            break;
        }
        state = next.state;
        row = next_row;
    }

    // The last sample sits at t = trial_length and is not counted.
    let counted = &thetas[..thetas.len().min(exp.trial_steps - 1)];
    Ok(TrialRecord {
        trial,
        theta0,
        t_up: compute_t_up(counted, env.dt),
        total_reward,
        clamp_count,
        diverged,
    })
}

/// Mean and sample standard deviation of `t_up` plus bookkeeping counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub mean_t_up: f64,
    pub std_t_up: f64,
    pub min_t_up: f64,
    pub max_t_up: f64,
    pub diverged: usize,
    pub clamp_events: usize,
}

impl Summary {
    pub fn from_records(records: &[TrialRecord]) -> Self {
        let n = records.len();
        let t: Vec<f64> = records.iter().map(|r| r.t_up).collect();
        let mean = if n == 0 { 0.0 } else { t.iter().sum::<f64>() / n as f64 };
        let std = if n < 2 {
            0.0
        } else {
            (t.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Summary {
            trials: n,
            mean_t_up: mean,
            std_t_up: std,
            min_t_up: if n == 0 { 0.0 } else { t.iter().cloned().fold(f64::INFINITY, f64::min) },
            max_t_up: t.iter().cloned().fold(0.0, f64::max),
            diverged: records.iter().filter(|r| r.diverged).count(),
            clamp_events: records.iter().map(|r| r.clamp_count).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub variant: Variant,
    /// Recorded trials (after the mass change for Experiment II).
    pub records: Vec<TrialRecord>,
    pub summary: Summary,
    /// Experiment II pretraining trials, empty when resumed from a checkpoint.
    pub pretrain: Vec<TrialRecord>,
    /// Per recorded trial, when trajectories were requested.
    pub trajectories: Vec<Vec<TrajectoryRow>>,
    /// Learner state at the end of pretraining (Experiment II only).
    pub pretrained: Option<Checkpoint>,
    pub runtime_s: f64,
}

fn run_block(
    agent: &mut Agent,
    env: &PendulumParams,
    exp: &ExperimentConfig,
    phase: Phase,
    count: usize,
    record: bool,
) -> Result<(Vec<TrialRecord>, Vec<Vec<TrajectoryRow>>)> {
    let mut records = Vec::with_capacity(count);
    let mut trajectories = Vec::new();
    for trial in 0..count {
        if record {
            let mut traj = Vec::with_capacity(exp.trial_steps);
            records.push(run_trial(agent, env, exp, phase, trial, Some(&mut traj))?);
            trajectories.push(traj);
        } else {
            records.push(run_trial(agent, env, exp, phase, trial, None)?);
        }
    }
    Ok((records, trajectories))
}

/// Fresh learner, `exp.trials` consecutive trials at the configured mass.
pub fn run_experiment_i(exp: &ExperimentConfig) -> Result<ExperimentResult> {
    let start = Instant::now();
    let mut agent = Agent::new(exp)?;
    let (records, trajectories) =
        run_block(&mut agent, &exp.pendulum, exp, Phase::Recorded, exp.trials, exp.record_trajectories)?;
    Ok(ExperimentResult {
        variant: exp.variant,
        summary: Summary::from_records(&records),
        records,
        pretrain: Vec::new(),
        trajectories,
        pretrained: None,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Pretrains at the configured mass (unless a checkpoint is given), switches
/// the mass to `mass_after` and records `exp.trials` further trials.
pub fn run_experiment_ii(exp: &ExperimentConfig, checkpoint: Option<&Checkpoint>) -> Result<ExperimentResult> {
    let start = Instant::now();
    let (mut agent, pretrain) = match checkpoint {
        Some(cp) => (Agent::from_checkpoint(exp, cp)?, Vec::new()),
        None => {
            let mut agent = Agent::new(exp)?;
            let (pre, _) = run_block(&mut agent, &exp.pendulum, exp, Phase::Pretrain, exp.pretrain_trials, false)?;
            (agent, pre)
        }
    };
    let pretrained = agent.checkpoint(&exp.setup.fingerprint);
    let env = exp.pendulum.set_mass(exp.mass_after)?;
    let (records, trajectories) =
        run_block(&mut agent, &env, exp, Phase::Recorded, exp.trials, exp.record_trajectories)?;
    Ok(ExperimentResult {
        variant: exp.variant,
        summary: Summary::from_records(&records),
        records,
        pretrain,
        trajectories,
        pretrained: Some(pretrained),
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trial_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from(TRIAL_CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.trial,
            fmt_num(r.theta0),
            fmt_num(r.t_up),
            fmt_num(r.total_reward),
            r.clamp_count,
            r.diverged as u8
        );
    }
    out
}

pub fn write_trial_csv(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, trial_csv(records))?;
    Ok(())
}

pub fn parse_trial_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(TRIAL_CSV_HEADER) {
        return Err(Error::Config("trial CSV header mismatch".into()));
    }
    let bad = |line: &str| Error::Config(format!("malformed trial CSV row {line:?}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            Ok(TrialRecord {
                trial: f[0].parse().map_err(|_| bad(line))?,
                theta0: f[1].parse().map_err(|_| bad(line))?,
                t_up: f[2].parse().map_err(|_| bad(line))?,
                total_reward: f[3].parse().map_err(|_| bad(line))?,
                clamp_count: f[4].parse().map_err(|_| bad(line))?,
                diverged: match f[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad(line)),
                },
            })
        })
        .collect()
}

pub fn read_trial_csv(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    parse_trial_csv(&std::fs::read_to_string(path)?)
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from("t,theta,thetadot,u,reward\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_num(r.t),
            fmt_num(r.theta),
            fmt_num(r.thetadot),
            fmt_num(r.u),
            fmt_num(r.reward)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_up_examples() {
        assert_eq!(compute_t_up(&[], 0.02), 0.0);
        assert_eq!(compute_t_up(&[3.0, -3.0, 1.0], 0.02), 0.0);
        let mut th = vec![0.0; 3];
        th.push(2.0);
        th.extend([0.1; 5]);
        assert!((compute_t_up(&th, 0.02) - 0.10).abs() < 1e-15);
        // Boundary is strict.
        assert_eq!(compute_t_up(&[PI / 4.0], 1.0), 0.0);
    }

    #[test]
    fn moving_average_examples() {
        assert!(moving_average(&[], 5).is_empty());
        assert_eq!(moving_average(&[2.0; 7], 5), vec![2.0; 7]);
        let m = moving_average(&[0.0, 0.0, 5.0, 0.0, 0.0], 5);
        assert_eq!(m[2], 1.0);
        // Edge windows shrink: first point averages three samples.
        assert!((m[0] - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn summary_uses_sample_std() {
        let recs: Vec<TrialRecord> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &t)| TrialRecord { trial: i, theta0: 0.0, t_up: t, total_reward: 0.0, clamp_count: 1, diverged: i == 2 })
            .collect();
        let s = Summary::from_records(&recs);
        assert_eq!(s.mean_t_up, 2.0);
        assert_eq!(s.std_t_up, 1.0);
        assert_eq!((s.min_t_up, s.max_t_up), (1.0, 3.0));
        assert_eq!(s.diverged, 1);
        assert_eq!(s.clamp_events, 3);
        assert_eq!(Summary::from_records(&[]).min_t_up, 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let recs = vec![
            TrialRecord { trial: 0, theta0: -2.9, t_up: 19.98, total_reward: -123.456789, clamp_count: 0, diverged: false },
            TrialRecord { trial: 1, theta0: 0.1 + 0.2, t_up: 0.0, total_reward: -1e-300, clamp_count: 12, diverged: true },
        ];
        let back = parse_trial_csv(&trial_csv(&recs)).unwrap();
        assert_eq!(back, recs);
        assert!(parse_trial_csv("x,y\n").is_err());
    }

    #[test]
    fn initial_angles_are_shared_and_uniform() {
        let a: Vec<f64> = (0..2000).map(|i| initial_angle(3, Phase::Recorded, i)).collect();
        assert!(a.iter().all(|t| (-PI..PI).contains(t)));
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.15);
        assert_ne!(initial_angle(3, Phase::Recorded, 0), initial_angle(3, Phase::Pretrain, 0));
        assert_ne!(initial_angle(3, Phase::Recorded, 0), initial_angle(4, Phase::Recorded, 0));
    }

    #[test]
    fn noise_streams_differ_between_variants() {
        let mut a = stream_rng(1, Stream::Process, Phase::Recorded, 0, Some(Variant::Rlstd));
        let mut b = stream_rng(1, Stream::Process, Phase::Recorded, 0, Some(Variant::RlstdForget));
        let mut c = stream_rng(1, Stream::Exploration, Phase::Recorded, 0, Some(Variant::Rlstd));
        let (x, y, z): (f64, f64, f64) = (a.sample(StandardNormal), b.sample(StandardNormal), c.sample(StandardNormal));
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Variant::parse("ndp").is_err());
    }
}
