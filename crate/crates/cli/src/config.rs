//! Run configuration: a TOML document layered over a named profile.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hjreach::gridoracle::GridSpec;
use hjreach::problem::ProblemSpec;
use hjreach::rollout::SemanticsConfig;
use hjreach::sirennet::NetworkArch;
use hjreach::training::{FineTuneConfig, Reduction, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ci,
    Desk,
    Paper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: [usize; 3],
    pub cfl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub slice_times: Vec<f64>,
    pub slice_thetas: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Random `(x, p)` draws for the closed-form Hamiltonian check.
    pub hamiltonian_draws: usize,
    /// Points per input axis of the brute-force sup-inf.
    pub input_points: usize,
    pub lipschitz_trials: usize,
    pub lipschitz_eps: Vec<f64>,
    pub properness_trials: usize,
    pub input_gradient_cases: usize,
    pub param_gradient_cases: usize,
    /// Oracle grid used by the rollout check.
    pub rollout_points: [usize; 3],
    /// Evenly spaced oracle slices over `[0, T]` used by the rollout policy.
    pub rollout_slices: usize,
    pub n_outside: usize,
    pub n_inside: usize,
    pub margin: f64,
    pub tolerance: f64,
    pub dt: f64,
    pub capture_rate: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let s = SemanticsConfig::default();
        VerifyConfig {
            seed: 0,
            hamiltonian_draws: 1000,
            input_points: 201,
            lipschitz_trials: 10_000,
            lipschitz_eps: vec![1e-3, 1e-1, 1.0],
            properness_trials: 10_000,
            input_gradient_cases: 100,
            param_gradient_cases: 20,
            rollout_points: [31, 31, 31],
            rollout_slices: 21,
            n_outside: s.n_outside,
            n_inside: s.n_inside,
            margin: s.margin,
            tolerance: s.tolerance,
            dt: s.dt,
            capture_rate: s.capture_rate,
        }
    }
}

impl VerifyConfig {
    pub fn semantics(&self) -> SemanticsConfig {
        SemanticsConfig {
            n_outside: self.n_outside,
            n_inside: self.n_inside,
            margin: self.margin,
            tolerance: self.tolerance,
            dt: self.dt,
            seed: self.seed,
            capture_rate: self.capture_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub output_dir: PathBuf,
    /// Oracle output times, strictly descending within `[0, T]`.
    pub t_samples: Vec<f64>,
    pub problem: ProblemSpec,
    pub arch: NetworkArch,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub finetune: FineTuneConfig,
    pub compare: CompareConfig,
    pub verify: VerifyConfig,
}

impl RunConfig {
    pub fn profile(profile: Profile) -> Self {
        use std::f64::consts::PI;
        let problem = ProblemSpec::air3d();
        let (arch, train, points, name) = match profile {
            Profile::Ci => (NetworkArch::sine(vec![64, 64]), TrainConfig::ci(), 31, "runs/ci"),
            Profile::Desk => (
                NetworkArch::sine(vec![128, 128, 128]),
                TrainConfig {
                    samples_per_step: 8192,
                    pretrain_steps: 2000,
                    curriculum_steps: 20_000,
                    post_steps: 5000,
                    checkpoint_every: 1000,
                    ..TrainConfig::ci()
                },
                61,
                "runs/desk",
            ),
            Profile::Paper => (
                NetworkArch::sine(vec![512, 512, 512]),
                TrainConfig {
                    samples_per_step: 65_000,
                    lambda: 150.0,
                    pretrain_steps: 10_000,
                    curriculum_steps: 100_000,
                    post_steps: 0,
                    lr: 2e-5,
                    loss_reduction: Reduction::Mean,
                    checkpoint_every: 5000,
                    ..TrainConfig::ci()
                },
                101,
                "runs/paper",
            ),
        };
        RunConfig {
            profile,
            output_dir: PathBuf::from(name),
            t_samples: vec![1.0, 0.7, 0.4, 0.0],
            finetune: FineTuneConfig::from_train(&train, 1000),
            problem,
            arch,
            train,
            grid: GridConfig {
                points: [points; 3],
                cfl: 0.5,
            },
            compare: CompareConfig {
                slice_times: vec![0.7],
                slice_thetas: vec![-PI / 2.0, 0.0, PI / 2.0, PI],
            },
            verify: VerifyConfig::default(),
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::for_problem(&self.problem, self.grid.points).map_err(|e| CliError::config("grid.points", e))
    }

    /// Checks every section and the cross-references between them.
    pub fn validate(&self) -> Result<(), CliError> {
        self.problem.validate().map_err(|e| CliError::config("problem", e))?;
        self.arch.validate().map_err(|e| CliError::config("arch", e))?;
        self.train.validate().map_err(|e| CliError::config("train", e))?;
        if !(self.grid.cfl > 0.0 && self.grid.cfl < 1.0) {
            return Err(CliError::config(
                "grid.cfl",
                format!("{} must lie in (0, 1)", self.grid.cfl),
            ));
        }
        self.grid_spec()?;
        let horizon = self.problem.horizon;
        if self.t_samples.is_empty() {
            return Err(CliError::config("t_samples", "at least one time is required"));
        }
        if self.t_samples.iter().any(|t| !(0.0..=horizon).contains(t)) {
            return Err(CliError::config(
                "t_samples",
                format!("times must lie in [0, {horizon}]"),
            ));
        }
        if self.t_samples.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(CliError::config("t_samples", "times must be strictly descending"));
        }
        let lo = self.t_samples[self.t_samples.len() - 1];
        let hi = self.t_samples[0];
        for (i, t) in self.compare.slice_times.iter().enumerate() {
            if !(lo..=hi).contains(t) {
                return Err(CliError::config(
                    format!("compare.slice_times[{i}]"),
                    format!("{t} outside the oracle span [{lo}, {hi}]"),
                ));
            }
        }
        let f = &self.finetune;
        if !(f.lr > 0.0) || f.samples_per_step == 0 || !(f.lambda >= 0.0) {
            return Err(CliError::config(
                "finetune",
                "needs lr > 0, samples_per_step > 0, lambda >= 0",
            ));
        }
        let v = &self.verify;
        if v.input_points < 2 || v.rollout_slices < 2 || !(v.dt > 0.0) {
            return Err(CliError::config(
                "verify",
                "needs input_points >= 2, rollout_slices >= 2, dt > 0",
            ));
        }
        GridSpec::for_problem(&self.problem, v.rollout_points)
            .map_err(|e| CliError::config("verify.rollout_points", e))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config document. Keys absent from the document come from the
/// profile named by its `profile` key (default `ci`).
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let doc: toml::Value = toml::from_str(text).map_err(|e| CliError::config("<document>", e.message()))?;
    let profile = match doc.get("profile") {
        None => Profile::Ci,
        Some(v) => Profile::deserialize(v.clone()).map_err(|e| CliError::config("profile", e.to_string()))?,
    };
    let mut merged = toml::Value::try_from(RunConfig::profile(profile)).expect("profile serializes");
    merge(&mut merged, doc);
    let config: RunConfig = serde_path_to_error::deserialize(merged).map_err(|e| {
        let path = e.path().to_string();
        CliError::config(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::config("--config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
