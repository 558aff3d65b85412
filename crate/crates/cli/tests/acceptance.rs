//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Runs the full CI training profile, so it
//! takes a while on one core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hjreach::analysis::{
    checkpoint_network, convergence_series, grid_batch, hamiltonian_agreement_check, input_gradient_check,
    lipschitz_hamiltonian_check, param_gradient_check, properness_check, sup_error, SLICE_HEADER,
};
use hjreach::gridoracle::{extract_brt, load_oracle, solve_hji, terminal_field, GridSpec, OracleTube};
use hjreach::problem::ProblemSpec;
use hjreach::rollout::{verify_brt_semantics, SemanticsConfig};
use hjreach::sirennet::Checkpoint;
use hjreach::training::{compute_loss, Reduction};
use hjreach_cli::manifest::{read_manifest, Manifest};
use hjreach_cli::{parse_config, run, EXIT_OK};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["hjreach"];
    full.extend_from_slice(args);
    run(full)
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn hamiltonian(spec: &ProblemSpec) -> Outcome {
    let start = Instant::now();
    let report = hamiltonian_agreement_check(spec, &|x, p| spec.hamiltonian(x, p), 1000, 201, 0).unwrap();
    let elapsed = start.elapsed();
    let pass = report.passed() && report.trials == 1000 && elapsed < Duration::from_secs(10);
    Outcome::new(
        pass,
        format!("{} runtime={:.2}s (limit 10s)", report.line(), secs(elapsed)),
    )
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let input = input_gradient_check(100, 0);
    let param = param_gradient_check(20, 0).unwrap();
    let elapsed = start.elapsed();
    let pass = input.passed()
        && param.passed()
        && input.bound == 1e-5
        && param.bound == 1e-4
        && elapsed < Duration::from_secs(60);
    Outcome::new(
        pass,
        format!(
            "{} | {} runtime={:.2}s (limit 60s)",
            input.line(),
            param.line(),
            secs(elapsed)
        ),
    )
}

fn lipschitz(spec: &ProblemSpec) -> Outcome {
    let report = lipschitz_hamiltonian_check(spec, 10_000, &[1e-3, 1e-1, 1.0], 0);
    Outcome::new(report.passed() && report.failures == 0, report.line())
}

fn properness(spec: &ProblemSpec) -> Outcome {
    let report = properness_check(spec, 10_000, 0);
    Outcome::new(report.passed() && report.failures == 0, report.line())
}

fn oracle_identities() -> Outcome {
    let times: Vec<f64> = (0..=10).map(|k| 1.0 - k as f64 / 10.0).collect();
    let zero = ProblemSpec::zero();
    let zgrid = GridSpec::for_problem(&zero, [31; 3]).unwrap();
    let zterminal = terminal_field(&zero, &zgrid);
    let zfields = solve_hji(&zero, &zgrid, &times, 0.5).unwrap();
    let zero_ok = zfields.len() == times.len() && zfields.iter().all(|f| f.values == zterminal.values);

    let air = ProblemSpec::air3d();
    let grid = GridSpec::for_problem(&air, [31; 3]).unwrap();
    let fields = solve_hji(&air, &grid, &times, 0.5).unwrap();
    let target: Vec<bool> = grid.nodes().map(|x| air.margin(&x) <= 0.0).collect();
    let mask_ok = extract_brt(&fields[0]).mask == target;
    let ell = terminal_field(&air, &grid);
    let mut monotone_violations = 0;
    let mut obstacle_violations = 0;
    for pair in fields.windows(2) {
        monotone_violations += pair[1]
            .values
            .iter()
            .zip(&pair[0].values)
            .filter(|(a, b)| a > b)
            .count();
    }
    for f in &fields {
        obstacle_violations += f.values.iter().zip(&ell.values).filter(|(v, l)| v > l).count();
    }
    let pass = zero_ok && mask_ok && monotone_violations == 0 && obstacle_violations == 0;
    Outcome::new(
        pass,
        format!(
            "zero-dynamics equals terminal: {zero_ok}, terminal mask equals target: {mask_ok}, \
             monotonicity violations: {monotone_violations}, obstacle violations: {obstacle_violations} \
             ({} nodes x {} times)",
            grid.len(),
            times.len()
        ),
    )
}

fn checkpoints_in(dir: &Path) -> Vec<Checkpoint> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    paths.iter().map(|p| Checkpoint::load(p).unwrap()).collect()
}

fn log_losses(path: &Path) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "loss").unwrap();
    lines.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect()
}

/// Trains the CI profile, solves its oracle and compares, leaving the
/// outputs in `out` for the later criteria.
fn ci_convergence(out: &Path, config: &Path) -> Outcome {
    let start = Instant::now();
    let code = cli(&[
        "train",
        "--config",
        path_str(config),
        "--out",
        path_str(out),
        "--threads",
        "1",
    ]);
    let train_time = start.elapsed();
    if code != EXIT_OK {
        return Outcome::new(false, format!("train exited {code}"));
    }
    assert_eq!(
        cli(&[
            "solve",
            "--config",
            path_str(config),
            "--out",
            path_str(out),
            "--threads",
            "1"
        ]),
        EXIT_OK
    );
    assert_eq!(
        cli(&[
            "compare",
            "--config",
            path_str(config),
            "--out",
            path_str(out),
            "--threads",
            "1"
        ]),
        EXIT_OK
    );

    let cfg = parse_config(&fs::read_to_string(config).unwrap()).unwrap();
    let (meta, tube) = load_oracle(&out.join("oracle")).unwrap();
    let losses = log_losses(&out.join("train/train_log.csv"));
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    let checkpoints = checkpoints_in(&out.join("train/checkpoints"));
    let sup = |ck: &Checkpoint| {
        let net = checkpoint_network(ck).unwrap();
        sup_error(&net, &ck.problem, &meta.problem, &tube).unwrap().0
    };
    let initial_sup = sup(&checkpoints[0]);
    let final_ck = Checkpoint::load(&out.join("train/final.json")).unwrap();
    let final_sup = sup(&final_ck);
    let held_grid = GridSpec::for_problem(&cfg.problem, [11; 3]).unwrap();
    let held_out = grid_batch(&cfg.problem, &held_grid, &cfg.t_samples);
    let series = convergence_series(&checkpoints, &meta.problem, &tube, &held_out, cfg.train.lambda).unwrap();
    let tau = series.kendall_tau;

    let width_ok = cfg.arch.hidden_widths == vec![64, 64];
    let scale_ok = width_ok && cfg.train.samples_per_step == 2048 && cfg.train.total_steps() >= 5000;
    let grid_ok = meta.grid.axes.iter().all(|a| a.points == 31);
    let ratio_loss = first / last;
    let ratio_sup = final_sup / initial_sup;
    let pass = scale_ok
        && grid_ok
        && ratio_loss >= 10.0
        && ratio_sup <= 0.5
        && tau >= 0.5
        && train_time < Duration::from_secs(30 * 60);
    let detail = format!(
        "steps={} loss step1={first:.4e} final={last:.4e} reduction={ratio_loss:.1}x (need >= 10) | \
         sup_err initial={initial_sup:.4} final={final_sup:.4} ratio={ratio_sup:.3} (need <= 0.5) | \
         kendall_tau={tau:.3} over {} checkpoints (need >= 0.5) | train runtime={:.0}s (limit 1800s)",
        cfg.train.total_steps(),
        checkpoints.len(),
        secs(train_time)
    );
    Outcome::new(pass, detail)
}

fn finetune(out: &Path, config: &Path) -> Outcome {
    let cfg = parse_config(&fs::read_to_string(config).unwrap()).unwrap();
    let mean_steps = if cfg.train.loss_reduction == Reduction::Mean {
        cfg.train.total_steps()
    } else {
        0
    };
    let code = cli(&[
        "finetune",
        "--config",
        path_str(config),
        "--out",
        path_str(out),
        "--threads",
        "1",
        "--steps",
        "1000",
    ]);
    if code != EXIT_OK {
        return Outcome::new(false, format!("finetune exited {code}"));
    }
    let held_grid = GridSpec::for_problem(&cfg.problem, [11; 3]).unwrap();
    let held_out = grid_batch(&cfg.problem, &held_grid, &cfg.t_samples);
    let h2 = |path: &Path| {
        let ck = Checkpoint::load(path).unwrap();
        compute_loss(
            &ck.params,
            &ck.arch,
            &ck.problem,
            &held_out,
            cfg.finetune.lambda,
            Reduction::Max,
        )
        .unwrap()
        .h2
    };
    let start = h2(&out.join("train/final.json"));
    let end = h2(&out.join("finetune/final.json"));
    let steps = log_losses(&out.join("finetune/finetune_log.csv")).len();
    let pass = mean_steps >= 2000 && steps == 1000 && end <= start;
    Outcome::new(
        pass,
        format!(
            "after {mean_steps} mean-reduction steps, {steps} max-reduction steps: held-out h2 start={start:.4e} end={end:.4e} \
             ({} held-out nodes)",
            held_out.len()
        ),
    )
}

fn rollout(spec: &ProblemSpec) -> Outcome {
    let start = Instant::now();
    let grid = GridSpec::for_problem(spec, [31; 3]).unwrap();
    let times: Vec<f64> = (0..21)
        .map(|k| if k == 20 { 0.0 } else { 1.0 - k as f64 / 20.0 })
        .collect();
    let tube = OracleTube::new(grid.clone(), solve_hji(spec, &grid, &times, 0.5).unwrap()).unwrap();
    let config = SemanticsConfig::default();
    let report = verify_brt_semantics(spec, &tube, &config).unwrap();
    let elapsed = start.elapsed();
    let settings_ok = config.margin == 0.05 && config.dt == 0.01 && config.tolerance == 0.02;
    let sizes_ok = report.outside.len() == 50 && report.inside.len() == 50;
    let pass = settings_ok
        && sizes_ok
        && !report.outside_vacuous
        && !report.inside_vacuous
        && report.outside_safe == 50
        && report.inside_rate() >= 0.95
        && elapsed < Duration::from_secs(300);
    Outcome::new(
        pass,
        format!(
            "outside safe {}/{} (need 50/50), inside captured {}/{} rate={:.2} (need >= 0.95), \
             mean |min_margin - V0|={:.3}, runtime={:.1}s (limit 300s)",
            report.outside_safe,
            report.outside.len(),
            report.inside_captured,
            report.inside.len(),
            report.inside_rate(),
            report.inside_mean_gap,
            secs(elapsed)
        ),
    )
}

fn stage_manifests(out: &Path) -> Vec<Manifest> {
    ["train", "oracle", "compare"]
        .iter()
        .map(|s| read_manifest(&out.join(s)).unwrap())
        .collect()
}

fn run_pipeline(out: &Path, config: &Path) -> bool {
    ["train", "solve", "compare"].iter().all(|cmd| {
        cli(&[
            cmd,
            "--config",
            path_str(config),
            "--out",
            path_str(out),
            "--threads",
            "1",
        ]) == EXIT_OK
    })
}

/// Runs train, solve and compare twice into the same directory and checks
/// that every output file hashes identically.
fn determinism(root: &Path) -> Outcome {
    let config = root.join("short.toml");
    fs::write(
        &config,
        "profile = \"ci\"\n[train]\npretrain_steps = 50\ncurriculum_steps = 150\npost_steps = 50\ncheckpoint_every = 50\n",
    )
    .unwrap();
    let out = root.join("det");
    if !run_pipeline(&out, &config) {
        return Outcome::new(false, "first run failed".into());
    }
    let first = stage_manifests(&out);
    if !run_pipeline(&out, &config) {
        return Outcome::new(false, "second run failed".into());
    }
    let second = stage_manifests(&out);
    let files: usize = first.iter().map(|m| m.files.len()).sum();
    let kinds = |ext: &str| {
        first
            .iter()
            .flat_map(|m| &m.files)
            .filter(|f| f.path.ends_with(ext))
            .count()
    };
    let (csv, json) = (kinds(".csv"), kinds(".json"));
    let differing: Vec<String> = first
        .iter()
        .zip(&second)
        .flat_map(|(a, b)| {
            a.files
                .iter()
                .filter(move |f| !b.files.contains(f))
                .map(move |f| format!("{}/{}", a.command, f.path))
        })
        .collect();
    let pass = first == second && csv > 0 && json > 0;
    Outcome::new(
        pass,
        format!("{files} files hashed ({csv} csv, {json} json), differing: {differing:?}"),
    )
}

fn slices(out: &Path) -> Outcome {
    let path = out.join("compare/slice_t0.7.csv");
    let Ok(text) = fs::read_to_string(&path) else {
        return Outcome::new(false, format!("missing {}", path.display()));
    };
    let mut lines = text.lines();
    let header_ok = lines.next() == Some(SLICE_HEADER);
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    let mut thetas: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    thetas.dedup();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let expected = [-half_pi, 0.0, half_pi, std::f64::consts::PI];
    let thetas_ok = thetas.len() == 4 && thetas.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-12);
    let shape_ok = rows.len() == 4 * 31 * 31 && rows.iter().all(|r| r.len() == 7);
    let values_ok = rows
        .iter()
        .all(|r| r[0] == 0.7 && r[4].is_finite() && r[5].is_finite() && ((r[4] - r[5]).abs() - r[6]).abs() <= 1e-12);
    let pass = header_ok && thetas_ok && shape_ok && values_ok;
    Outcome::new(
        pass,
        format!(
            "header ok: {header_ok}, theta blocks {:?}, rows={} (expect {}), values consistent: {values_ok}",
            thetas,
            rows.len(),
            4 * 31 * 31
        ),
    )
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().unwrap();
    let spec = ProblemSpec::air3d();
    let ci_config = root.path().join("ci.toml");
    fs::write(&ci_config, "profile = \"ci\"\n").unwrap();
    let ci_out = root.path().join("ci");

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |n: u32, name: &'static str, outcome: Outcome| {
        println!(
            "{} criterion {n} {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        results.push((n, name, outcome));
    };
    record(1, "hamiltonian oracle agreement", hamiltonian(&spec));
    record(2, "gradient correctness", gradients());
    record(3, "hamiltonian lipschitz bound", lipschitz(&spec));
    record(4, "properness", properness(&spec));
    record(5, "oracle identities", oracle_identities());
    record(6, "ci training convergence", ci_convergence(&ci_out, &ci_config));
    record(7, "max-reduction fine-tune", finetune(&ci_out, &ci_config));
    record(8, "brt rollout semantics", rollout(&spec));
    record(9, "single-thread determinism", determinism(root.path()));
    record(10, "slice export", slices(&ci_out));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failed {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
