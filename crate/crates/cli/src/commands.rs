use std::fs;
use std::path::{Path, PathBuf};

use hjreach::analysis::{
    checkpoint_network, compare, grid_batch, hamiltonian_agreement_check, input_gradient_check,
    lipschitz_hamiltonian_check, param_gradient_check, properness_check, slice_csv, slice_rows, CheckReport,
};
use hjreach::gridoracle::{export_oracle, load_oracle, solve_hji, GridSpec, OracleTube};
use hjreach::problem::Costate;
use hjreach::rollout::verify_brt_semantics;
use hjreach::sirennet::Checkpoint;
use hjreach::training::{
    compute_loss, fine_tune, Reduction, TrainEvent, TrainOutcome, TrainStatus, Trainer, LOG_HEADER,
};

use crate::config::RunConfig;
use crate::manifest::{write_manifest, MANIFEST_NAME};
use crate::{CliError, Fault};

pub const FINAL_CHECKPOINT: &str = "final.json";

/// Creates `dir`, clearing it first if a previous run left a manifest
/// there. Refuses to write into a non-empty directory it does not own.
fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let owned = dir.join(MANIFEST_NAME).exists();
        let empty = fs::read_dir(dir)?.next().is_none();
        if owned {
            fs::remove_dir_all(dir)?;
        } else if !empty {
            return Err(CliError::Input(format!(
                "{} is not empty and was not written by a previous run",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.json")
}

/// Runs a training loop, writing checkpoints and the log into `dir`.
fn record_run(
    dir: &Path,
    log_name: &str,
    run: impl FnOnce(&mut dyn FnMut(TrainEvent<'_>) -> hjreach::Result<()>) -> hjreach::Result<TrainOutcome>,
) -> Result<TrainOutcome, CliError> {
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut log = String::from(LOG_HEADER);
    log.push('\n');
    let mut emit = |event: TrainEvent<'_>| -> hjreach::Result<()> {
        match event {
            TrainEvent::Record(r) => {
                log.push_str(&r.csv_row());
                log.push('\n');
            }
            TrainEvent::Checkpoint(c) => c.save(&ckpt_dir.join(checkpoint_name(c.meta.step)))?,
        }
        Ok(())
    };
    let outcome = run(&mut emit)?;
    fs::write(dir.join(log_name), log)?;
    outcome.checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
    Ok(outcome)
}

fn finish_training(outcome: &TrainOutcome, dir: &Path) -> Result<Vec<String>, CliError> {
    let ck = &outcome.checkpoint;
    let loss = ck.meta.loss.map_or("none".to_string(), |l| format!("{l:.6e}"));
    let lines = vec![
        format!("steps {}", ck.meta.step),
        format!("final loss {loss}"),
        format!("output {}", dir.display()),
    ];
    match &outcome.status {
        TrainStatus::Completed => Ok(lines),
        TrainStatus::Diverged { step, reason } => Err(CliError::Numeric(format!(
            "training stopped at step {step}: {reason}; last good checkpoint saved"
        ))),
    }
}

pub fn cmd_train(config: &RunConfig, deterministic: bool) -> Result<Vec<String>, CliError> {
    let dir = config.output_dir.join("train");
    fresh_dir(&dir)?;
    let outcome = record_run(&dir, "train_log.csv", |emit| {
        Trainer::new(&config.problem, &config.arch, config.train.clone())
            .wall_clock(!deterministic)
            .run(emit)
    })?;
    write_manifest(&dir, "train", config)?;
    finish_training(&outcome, &dir)
}

pub fn cmd_finetune(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    deterministic: bool,
) -> Result<Vec<String>, CliError> {
    let source = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("train").join(FINAL_CHECKPOINT));
    let start = Checkpoint::load(&source)?;
    let dir = config.output_dir.join("finetune");
    fresh_dir(&dir)?;
    let outcome = record_run(&dir, "finetune_log.csv", |emit| {
        fine_tune(&start, &config.arch, &config.finetune, !deterministic, emit)
    })?;
    write_manifest(&dir, "finetune", config)?;
    let grid = GridSpec::for_problem(&config.problem, [11, 11, 11])?;
    let held_out = grid_batch(&config.problem, &grid, &config.t_samples);
    let h2 = |ck: &Checkpoint| -> Result<f64, CliError> {
        Ok(compute_loss(
            &ck.params,
            &ck.arch,
            &ck.problem,
            &held_out,
            config.finetune.lambda,
            Reduction::Max,
        )?
        .h2)
    };
    let mut lines = vec![
        format!("held-out h2 start {:.6e}", h2(&start)?),
        format!("held-out h2 end {:.6e}", h2(&outcome.checkpoint)?),
    ];
    lines.extend(finish_training(&outcome, &dir)?);
    Ok(lines)
}

pub fn cmd_solve(config: &RunConfig) -> Result<Vec<String>, CliError> {
    let grid = config.grid_spec()?;
    let fields = solve_hji(&config.problem, &grid, &config.t_samples, config.grid.cfl)?;
    let dir = config.output_dir.join("oracle");
    fresh_dir(&dir)?;
    let meta = export_oracle(&dir, &config.problem, &grid, &fields, config.grid.cfl)?;
    write_manifest(&dir, "solve", config)?;
    let mut lines = vec![format!("oracle {} nodes x {} times", grid.len(), fields.len())];
    for f in &fields {
        let inside = f.values.iter().filter(|v| **v <= 0.0).count();
        lines.push(format!(
            "t={} inside fraction {:.6}",
            f.time,
            inside as f64 / grid.len() as f64
        ));
    }
    lines.push(format!("output {} ({} files)", dir.display(), meta.files.len() + 1));
    Ok(lines)
}

fn slice_name(t: f64) -> String {
    format!("slice_t{t}.csv")
}

pub fn cmd_compare(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    oracle: Option<&Path>,
) -> Result<Vec<String>, CliError> {
    let ck_path: PathBuf = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("train").join(FINAL_CHECKPOINT));
    let oracle_dir: PathBuf = oracle
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output_dir.join("oracle"));
    let ck = Checkpoint::load(&ck_path)?;
    let (meta, tube) = load_oracle(&oracle_dir)?;
    let net = checkpoint_network(&ck)?;
    let report = compare(&net, &ck.problem, &meta.problem, &tube)?;
    let dir = config.output_dir.join("compare");
    fresh_dir(&dir)?;
    fs::write(dir.join("report.csv"), report.csv())?;
    fs::write(dir.join("summary.txt"), report.summary())?;
    for &t in &config.compare.slice_times {
        let rows = slice_rows(&net, &tube, t, &config.compare.slice_thetas)?;
        fs::write(dir.join(slice_name(t)), slice_csv(&rows))?;
    }
    write_manifest(&dir, "compare", config)?;
    let mut lines: Vec<String> = report.summary().lines().map(str::to_string).collect();
    lines.push(format!("output {}", dir.display()));
    Ok(lines)
}

fn uniform_times(horizon: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            if k + 1 == n {
                0.0
            } else {
                horizon * (1.0 - k as f64 / (n - 1) as f64)
            }
        })
        .collect()
}

pub fn cmd_verify(config: &RunConfig, fault: Option<Fault>) -> Result<Vec<String>, CliError> {
    let spec = &config.problem;
    let v = &config.verify;
    let flip = matches!(fault, Some(Fault::HamiltonianSign));
    let closed_form = |x: &[f64; 3], p: &Costate| {
        let h = spec.hamiltonian(x, p);
        if flip {
            -h
        } else {
            h
        }
    };
    let mut checks: Vec<CheckReport> = vec![
        hamiltonian_agreement_check(spec, &closed_form, v.hamiltonian_draws, v.input_points, v.seed)?,
        input_gradient_check(v.input_gradient_cases, v.seed),
        param_gradient_check(v.param_gradient_cases, v.seed)?,
        lipschitz_hamiltonian_check(spec, v.lipschitz_trials, &v.lipschitz_eps, v.seed),
        properness_check(spec, v.properness_trials, v.seed),
    ];
    let grid = GridSpec::for_problem(spec, v.rollout_points)?;
    let times = uniform_times(spec.horizon, v.rollout_slices);
    let tube = OracleTube::new(grid.clone(), solve_hji(spec, &grid, &times, config.grid.cfl)?)?;
    let sem = verify_brt_semantics(spec, &tube, &v.semantics())?;
    checks.push(CheckReport {
        name: format!("rollout outside set stays safe (vacuous: {})", sem.outside_vacuous),
        trials: sem.outside.len(),
        failures: sem.outside.len() - sem.outside_safe,
        max_observed: sem
            .outside
            .iter()
            .map(|r| -r.min_margin)
            .fold(f64::NEG_INFINITY, f64::max),
        bound: 0.0,
    });
    checks.push(CheckReport {
        name: format!(
            "rollout inside set captured, rate {:.3} required {:.3} (vacuous: {})",
            sem.inside_rate(),
            sem.capture_rate_required,
            sem.inside_vacuous
        ),
        trials: sem.inside.len(),
        failures: usize::from(!sem.inside_pass()),
        max_observed: sem.inside.len().saturating_sub(sem.inside_captured) as f64,
        bound: ((1.0 - sem.capture_rate_required) * sem.inside.len() as f64).floor(),
    });
    let lines: Vec<String> = checks.iter().map(CheckReport::line).collect();
    let dir = config.output_dir.join("verify");
    fresh_dir(&dir)?;
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(dir.join("report.txt"), &text)?;
    write_manifest(&dir, "verify", config)?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(lines)
    } else {
        for l in &lines {
            eprintln!("{l}");
        }
        Err(CliError::Property(failed.join("; ")))
    }
}
