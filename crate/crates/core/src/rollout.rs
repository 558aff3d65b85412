//! Closed-loop simulation under value-gradient feedback.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::ValueModel;
use crate::error::{Error, Result};
use crate::gridoracle::OracleTube;
use crate::problem::{ProblemSpec, StateVec, STATE_DIM};

/// Feedback law returning `(u, d)`.
pub trait Policy: Sync {
    fn inputs(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<(f64, f64)>;
}

/// Inputs held constant for the whole run.
#[derive(Clone, Copy, Debug)]
pub struct FixedInputs(pub f64, pub f64);

impl Policy for FixedInputs {
    fn inputs(&self, _t: f64, _x: &[f64; STATE_DIM]) -> Result<(f64, f64)> {
        Ok((self.0, self.1))
    }
}

/// Evader control from one value source, pursuer disturbance from another.
pub struct SaddlePolicy<'a> {
    pub spec: &'a ProblemSpec,
    pub evader: &'a dyn ValueModel,
    pub pursuer: &'a dyn ValueModel,
}

impl Policy for SaddlePolicy<'_> {
    fn inputs(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<(f64, f64)> {
        let (u, _) = policy_from_value(self.spec, self.evader, t, x)?;
        let (_, d) = policy_from_value(self.spec, self.pursuer, t, x)?;
        Ok((u, d))
    }
}

/// Optimal inputs at the costate of `source` at `(t, x)`.
pub fn policy_from_value(
    spec: &ProblemSpec,
    source: &dyn ValueModel,
    t: f64,
    x: &[f64; STATE_DIM],
) -> Result<(f64, f64)> {
    let x = spec.canonical(&StateVec(*x));
    spec.check_in_box(&x)?;
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(Error::range(format!("time {t} outside [0, {}]", spec.horizon)));
    }
    let p = source.costate(t, &x.0)?;
    Ok(spec.optimal_inputs(&x, &p))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVec>,
    /// Input applied over `[times[k], times[k + 1])`.
    pub controls: Vec<f64>,
    pub disturbances: Vec<f64>,
    pub min_margin: f64,
    /// The state left the box in a non-periodic coordinate and the run
    /// was cut short.
    pub escaped: bool,
}

pub const TRAJECTORY_HEADER: &str = "k,t,x1,x2,theta,u,d,margin";

impl Trajectory {
    pub fn csv(&self, spec: &ProblemSpec) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            let (u, d) = match (self.controls.get(k), self.disturbances.get(k)) {
                (Some(u), Some(d)) => (u.to_string(), d.to_string()),
                _ => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{k},{t},{},{},{},{u},{d},{}\n",
                x.0[0],
                x.0[1],
                x.0[2],
                spec.margin(&x.0)
            ));
        }
        out
    }
}

fn axpy(x: &[f64; STATE_DIM], h: f64, k: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
    std::array::from_fn(|i| x[i] + h * k[i])
}

fn rk4(spec: &ProblemSpec, x: &[f64; STATE_DIM], u: f64, d: f64, h: f64) -> [f64; STATE_DIM] {
    let k1 = spec.flow(x, u, d);
    let k2 = spec.flow(&axpy(x, 0.5 * h, &k1), u, d);
    let k3 = spec.flow(&axpy(x, 0.5 * h, &k2), u, d);
    let k4 = spec.flow(&axpy(x, h, &k3), u, d);
    std::array::from_fn(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// Runs from `(t0, x0)` to the horizon with inputs refreshed at every
/// step and held in between. The last step is shortened to land on the
/// horizon.
pub fn integrate(spec: &ProblemSpec, x0: &StateVec, t0: f64, policy: &dyn Policy, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("step {dt} must be positive")));
    }
    if !(t0 >= 0.0 && t0 < spec.horizon) {
        return Err(Error::invalid(format!("start time {t0} outside [0, {})", spec.horizon)));
    }
    let x0 = spec.canonical(x0);
    spec.check_in_box(&x0)?;
    let n = ((spec.horizon - t0) / dt - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![x0],
        controls: Vec::with_capacity(n),
        disturbances: Vec::with_capacity(n),
        min_margin: spec.margin(&x0.0),
        escaped: false,
    };
    let mut x = x0.0;
    let mut t = t0;
    for k in 0..n {
        let (u, d) = policy.inputs(t, &x)?;
        let t_next = if k + 1 == n {
            spec.horizon
        } else {
            t0 + (k + 1) as f64 * dt
        };
        x = spec.canonical(&StateVec(rk4(spec, &x, u, d, t_next - t))).0;
        t = t_next;
        traj.controls.push(u);
        traj.disturbances.push(d);
        traj.times.push(t);
        traj.states.push(StateVec(x));
        traj.min_margin = traj.min_margin.min(spec.margin(&x));
        if spec.check_in_box(&StateVec(x)).is_err() {
            traj.escaped = true;
            break;
        }
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticsConfig {
    pub n_outside: usize,
    pub n_inside: usize,
    pub margin: f64,
    /// Capture threshold on the minimum margin of inside-set runs.
    pub tolerance: f64,
    pub dt: f64,
    pub seed: u64,
    /// Required capture fraction for inside-set runs.
    pub capture_rate: f64,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        SemanticsConfig {
            n_outside: 50,
            n_inside: 50,
            margin: 0.05,
            tolerance: 0.02,
            dt: 0.01,
            seed: 0,
            capture_rate: 0.95,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult {
    pub x0: StateVec,
    pub v0: f64,
    pub min_margin: f64,
    pub escaped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticsReport {
    pub outside: Vec<RolloutResult>,
    pub inside: Vec<RolloutResult>,
    pub outside_safe: usize,
    pub inside_captured: usize,
    /// No state with value above the margin was found.
    pub outside_vacuous: bool,
    pub inside_vacuous: bool,
    /// Mean of `|min_margin - V(0, x0)|` over inside-set runs.
    pub inside_mean_gap: f64,
    pub capture_rate_required: f64,
}

impl SemanticsReport {
    pub fn outside_pass(&self) -> bool {
        self.outside_safe == self.outside.len()
    }

    pub fn inside_rate(&self) -> f64 {
        if self.inside.is_empty() {
            1.0
        } else {
            self.inside_captured as f64 / self.inside.len() as f64
        }
    }

    pub fn inside_pass(&self) -> bool {
        self.inside_rate() >= self.capture_rate_required
    }

    pub fn passed(&self) -> bool {
        self.outside_pass() && self.inside_pass()
    }
}

fn draw_states(
    spec: &ProblemSpec,
    oracle: &OracleTube,
    rng: &mut ChaCha8Rng,
    n: usize,
    accept: impl Fn(f64) -> bool,
) -> Result<Vec<(StateVec, f64)>> {
    let mut out = Vec::with_capacity(n);
    let budget = 1000 * n.max(1);
    for _ in 0..budget {
        if out.len() == n {
            break;
        }
        let x: [f64; STATE_DIM] = std::array::from_fn(|i| rng.gen_range(spec.state_lo[i]..spec.state_hi[i]));
        let v = oracle.value(0.0, &x)?;
        if accept(v) {
            out.push((StateVec(x), v));
        }
    }
    Ok(out)
}

/// Rolls out the oracle saddle policy from states well outside and well
/// inside the zero sublevel set at time 0.
pub fn verify_brt_semantics(
    spec: &ProblemSpec,
    oracle: &OracleTube,
    config: &SemanticsConfig,
) -> Result<SemanticsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let outside = draw_states(spec, oracle, &mut rng, config.n_outside, |v| v > config.margin)?;
    let inside = draw_states(spec, oracle, &mut rng, config.n_inside, |v| v < -config.margin)?;
    let policy = SaddlePolicy {
        spec,
        evader: oracle,
        pursuer: oracle,
    };
    let run = |set: &[(StateVec, f64)]| -> Result<Vec<RolloutResult>> {
        set.par_iter()
            .map(|(x0, v0)| {
                let traj = integrate(spec, x0, 0.0, &policy, config.dt)?;
                Ok(RolloutResult {
                    x0: *x0,
                    v0: *v0,
                    min_margin: traj.min_margin,
                    escaped: traj.escaped,
                })
            })
            .collect()
    };
    let outside = run(&outside)?;
    let inside = run(&inside)?;
    let outside_safe = outside.iter().filter(|r| r.min_margin > 0.0).count();
    let inside_captured = inside.iter().filter(|r| r.min_margin <= config.tolerance).count();
    let inside_mean_gap = if inside.is_empty() {
        0.0
    } else {
        inside.iter().map(|r| (r.min_margin - r.v0).abs()).sum::<f64>() / inside.len() as f64
    };
    Ok(SemanticsReport {
        outside_vacuous: outside.is_empty(),
        inside_vacuous: inside.is_empty(),
        outside,
        inside,
        outside_safe,
        inside_captured,
        inside_mean_gap,
        capture_rate_required: config.capture_rate,
    })
}
