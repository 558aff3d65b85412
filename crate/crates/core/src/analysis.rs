//! Error metrics against the grid oracle, residual fields, reachable-set
//! comparison and randomized property checks on the Hamiltonian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridoracle::{interpolate, BrtMask, GridField, GridSpec, OracleTube};
use crate::problem::{Costate, ProblemSpec, StateVec, STATE_DIM};
use crate::sirennet::{
    eval_scaled, init_params, Checkpoint, EvalBundle, NetworkArch, NetworkParams, Trace, ValueNetwork, INPUT_DIM,
};
use crate::training::{compute_loss, loss_and_grad, residual_branches, Reduction, Sample, CHUNK};

/// Anything that can be queried for a value and its derivatives.
pub trait ValueModel: Sync {
    fn value(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<f64>;

    fn derivatives(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<EvalBundle>;

    fn costate(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<Costate> {
        Ok(Costate(self.derivatives(t, x)?.dx))
    }
}

impl ValueModel for ValueNetwork {
    fn value(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<f64> {
        Ok(ValueNetwork::value(self, t, x))
    }

    fn derivatives(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<EvalBundle> {
        Ok(self.eval(t, &StateVec(*x)))
    }
}

impl ValueModel for OracleTube {
    fn value(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<f64> {
        OracleTube::value(self, t, x)
    }

    /// Spatial gradient by central differences, time derivative by
    /// differencing neighbouring stored slices.
    fn derivatives(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<EvalBundle> {
        let value = OracleTube::value(self, t, x)?;
        let dx = OracleTube::costate(self, t, x)?.0;
        let dt = self.time_derivative(t, x)?;
        Ok(EvalBundle { value, dt, dx })
    }

    fn costate(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<Costate> {
        OracleTube::costate(self, t, x)
    }
}

impl OracleTube {
    /// Central difference at stored interior slices, slope of the
    /// bracketing interval elsewhere, zero for a single slice.
    pub fn time_derivative(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<f64> {
        let n = self.fields.len();
        if n == 1 {
            self.value(t, x)?;
            return Ok(0.0);
        }
        let tol = 1e-9;
        let (first, last) = (self.fields[0].time, self.fields[n - 1].time);
        if t > first + tol || t < last - tol {
            return Err(Error::range(format!("time {t} outside oracle span [{last}, {first}]")));
        }
        let (a, b) = match self.fields.iter().position(|f| (f.time - t).abs() <= tol) {
            Some(k) if k > 0 && k < n - 1 => (k - 1, k + 1),
            Some(0) => (0, 1),
            Some(k) if k == n - 1 => (n - 2, n - 1),
            _ => {
                let k = (0..n - 1).find(|&k| t >= self.fields[k + 1].time).unwrap_or(n - 2);
                (k, k + 1)
            }
        };
        let p = StateVec(*x);
        let va = interpolate(&self.fields[a], &self.grid, &p)?;
        let vb = interpolate(&self.fields[b], &self.grid, &p)?;
        Ok((va - vb) / (self.fields[a].time - self.fields[b].time))
    }
}

/// Evaluates `model` at every grid node at time `t`, in node order.
pub fn node_values(model: &dyn ValueModel, grid: &GridSpec, t: f64) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..grid.len()).collect();
    let chunks: Vec<Result<Vec<f64>>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(|&i| model.value(t, &grid.node(i))).collect())
        .collect();
    let mut out = Vec::with_capacity(grid.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrtComparison {
    pub iou: f64,
    pub false_safe_rate: f64,
    pub false_unsafe_rate: f64,
    /// The oracle mask has no inside nodes; `false_safe_rate` is then 0.
    pub oracle_empty: bool,
    pub network_empty: bool,
}

/// Compares a network mask `a` against an oracle mask `b` on the same grid.
pub fn brt_compare(network: &BrtMask, oracle: &BrtMask) -> Result<BrtComparison> {
    if network.mask.len() != oracle.mask.len() {
        return Err(Error::invalid(format!(
            "mask sizes differ: {} vs {}",
            network.mask.len(),
            oracle.mask.len()
        )));
    }
    let (mut both, mut only_a, mut only_b) = (0usize, 0usize, 0usize);
    for (&a, &b) in network.mask.iter().zip(&oracle.mask) {
        match (a, b) {
            (true, true) => both += 1,
            (true, false) => only_a += 1,
            (false, true) => only_b += 1,
            _ => {}
        }
    }
    let union = both + only_a + only_b;
    let (n_a, n_b) = (both + only_a, both + only_b);
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(BrtComparison {
        iou: if union == 0 { 1.0 } else { both as f64 / union as f64 },
        false_safe_rate: ratio(only_b, n_b),
        false_unsafe_rate: ratio(only_a, n_a),
        oracle_empty: n_b == 0,
        network_empty: n_a == 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub t: f64,
    pub sup_abs_err: f64,
    pub mean_abs_err: f64,
    pub iou: f64,
    pub false_safe_rate: f64,
    pub false_unsafe_rate: f64,
    pub argmax_location: (f64, StateVec),
    pub oracle_empty: bool,
}

/// Per-slice rows in oracle order (descending time) plus totals over
/// every node of every slice.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub sup_abs_err: f64,
    pub mean_abs_err: f64,
    pub argmax_location: (f64, StateVec),
}

pub const REPORT_HEADER: &str = "t,sup_abs_err,mean_abs_err,iou,false_safe_rate,false_unsafe_rate";

impl ComparisonReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.t, r.sup_abs_err, r.mean_abs_err, r.iou, r.false_safe_rate, r.false_unsafe_rate
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        let (t, x) = &self.argmax_location;
        let mut out = format!(
            "sup_abs_err {}\nmean_abs_err {}\nargmax t={} x=({}, {}, {})\n",
            self.sup_abs_err, self.mean_abs_err, t, x.0[0], x.0[1], x.0[2]
        );
        for r in &self.rows {
            out.push_str(&format!(
                "t={} sup={} mean={} iou={} false_safe={} false_unsafe={}{}\n",
                r.t,
                r.sup_abs_err,
                r.mean_abs_err,
                r.iou,
                r.false_safe_rate,
                r.false_unsafe_rate,
                if r.oracle_empty { " (oracle set empty)" } else { "" }
            ));
        }
        out
    }
}

fn check_same_problem(model_problem: &ProblemSpec, oracle_problem: &ProblemSpec) -> Result<()> {
    let (a, b) = (model_problem.content_hash(), oracle_problem.content_hash());
    if a != b {
        return Err(Error::invalid(format!("problem hash mismatch: model {a}, oracle {b}")));
    }
    Ok(())
}

/// Absolute error and reachable-set agreement at every node of every
/// oracle slice.
pub fn compare(
    model: &dyn ValueModel,
    model_problem: &ProblemSpec,
    oracle_problem: &ProblemSpec,
    oracle: &OracleTube,
) -> Result<ComparisonReport> {
    check_same_problem(model_problem, oracle_problem)?;
    let grid = &oracle.grid;
    let mut rows = Vec::with_capacity(oracle.fields.len());
    let (mut sup, mut sum, mut count) = (-1.0f64, 0.0, 0usize);
    let mut argmax = (0.0, StateVec([0.0; STATE_DIM]));
    for field in &oracle.fields {
        let v = node_values(model, grid, field.time)?;
        let (mut s, mut m, mut at) = (-1.0f64, 0.0, 0usize);
        for (i, (a, b)) in v.iter().zip(&field.values).enumerate() {
            let e = (a - b).abs();
            if !e.is_finite() {
                return Err(Error::Numeric {
                    what: "model value",
                    index: i,
                });
            }
            if e > s {
                s = e;
                at = i;
            }
            m += e;
        }
        let loc = (field.time, StateVec(grid.node(at)));
        if s > sup {
            sup = s;
            argmax = loc;
        }
        sum += m;
        count += v.len();
        let net_mask = BrtMask {
            time: field.time,
            mask: v.iter().map(|&x| x <= 0.0).collect(),
        };
        let oracle_mask = crate::gridoracle::extract_brt(field);
        let brt = brt_compare(&net_mask, &oracle_mask)?;
        rows.push(ComparisonRow {
            t: field.time,
            sup_abs_err: s,
            mean_abs_err: m / v.len() as f64,
            iou: brt.iou,
            false_safe_rate: brt.false_safe_rate,
            false_unsafe_rate: brt.false_unsafe_rate,
            argmax_location: loc,
            oracle_empty: brt.oracle_empty,
        });
    }
    Ok(ComparisonReport {
        rows,
        sup_abs_err: sup,
        mean_abs_err: sum / count as f64,
        argmax_location: argmax,
    })
}

/// `(sup, mean, argmax)` of `|V_model - V_oracle|` over all oracle nodes.
pub fn sup_error(
    model: &dyn ValueModel,
    model_problem: &ProblemSpec,
    oracle_problem: &ProblemSpec,
    oracle: &OracleTube,
) -> Result<(f64, f64, (f64, StateVec))> {
    let r = compare(model, model_problem, oracle_problem, oracle)?;
    Ok((r.sup_abs_err, r.mean_abs_err, r.argmax_location))
}

pub fn checkpoint_network(checkpoint: &Checkpoint) -> Result<ValueNetwork> {
    let mut net = ValueNetwork::new(checkpoint.arch.clone(), checkpoint.params.clone(), &checkpoint.problem)?;
    net.scaling = checkpoint.scaling.clone();
    Ok(net)
}

/// Terminal samples at every node followed by interior samples at every
/// node for each of `t_samples`, in that order.
pub fn grid_batch(spec: &ProblemSpec, grid: &GridSpec, t_samples: &[f64]) -> Vec<Sample> {
    let mut batch: Vec<Sample> = grid
        .nodes()
        .map(|x| Sample {
            t: spec.horizon,
            x,
            terminal: true,
        })
        .collect();
    for &t in t_samples {
        batch.extend(grid.nodes().map(|x| Sample { t, x, terminal: false }));
    }
    batch
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualFields {
    /// Signed interior residual per requested time.
    pub eps_field: Vec<GridField>,
    /// `V(T, x) - l(x)` at every node.
    pub delta_field: GridField,
    pub eps_sup: f64,
    pub delta_sup: f64,
}

/// Residual of the variational inequality and the terminal mismatch of
/// `model` on the grid nodes.
pub fn residual_fields(
    model: &dyn ValueModel,
    spec: &ProblemSpec,
    grid: &GridSpec,
    t_samples: &[f64],
) -> Result<ResidualFields> {
    let nodes: Vec<[f64; STATE_DIM]> = grid.nodes().map(|x| spec.canonical(&StateVec(x)).0).collect();
    let terminal: Vec<f64> = node_values(model, grid, spec.horizon)?
        .iter()
        .zip(&nodes)
        .map(|(v, x)| v - spec.margin(x))
        .collect();
    let delta_sup = terminal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut eps_field = Vec::with_capacity(t_samples.len());
    let mut eps_sup = 0.0f64;
    for &t in t_samples {
        let chunks: Vec<Result<Vec<f64>>> = nodes
            .par_chunks(CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|x| {
                        let b = model.derivatives(t, x)?;
                        let (pde, obstacle) = residual_branches(spec, x, b.value, b.dt, &Costate(b.dx));
                        Ok(pde.min(obstacle))
                    })
                    .collect()
            })
            .collect();
        let mut values = Vec::with_capacity(nodes.len());
        for c in chunks {
            values.extend(c?);
        }
        eps_sup = values.iter().fold(eps_sup, |m, v| m.max(v.abs()));
        eps_field.push(GridField { time: t, values });
    }
    Ok(ResidualFields {
        eps_field,
        delta_field: GridField {
            time: spec.horizon,
            values: terminal,
        },
        eps_sup,
        delta_sup,
    })
}

/// Upper bound on `|f(x, u, d)|` over the box: the maximum over a dense
/// state grid and all input corners, plus the state Lipschitz constant of
/// `f` times the largest distance from any state to its nearest grid node.
pub fn estimate_cf(spec: &ProblemSpec, n_grid: usize) -> f64 {
    estimate_cf_witness(spec, n_grid).0
}

/// [`estimate_cf`] together with the grid state and inputs attaining the
/// sampled maximum.
pub fn estimate_cf_witness(spec: &ProblemSpec, n_grid: usize) -> (f64, [f64; STATE_DIM], (f64, f64)) {
    let n = n_grid.max(2);
    let h: [f64; STATE_DIM] = std::array::from_fn(|i| (spec.state_hi[i] - spec.state_lo[i]) / (n - 1) as f64);
    let w = spec.omega_max;
    let corners = [(w, w), (w, -w), (-w, w), (-w, -w)];
    let mut best = (0.0f64, spec.state_lo, (w, -w));
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = [
                    spec.state_lo[0] + i as f64 * h[0],
                    spec.state_lo[1] + j as f64 * h[1],
                    spec.state_lo[2] + k as f64 * h[2],
                ];
                for &(u, d) in &corners {
                    let f = spec.flow(&x, u, d);
                    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > best.0 {
                        best = (norm, x, (u, d));
                    }
                }
            }
        }
    }
    let half_diag = 0.5 * h.iter().map(|v| v * v).sum::<f64>().sqrt();
    (best.0 + spec.flow_state_lipschitz() * half_diag, best.1, best.2)
}

/// Outcome of a randomized property check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    /// Largest observed value of the checked quantity.
    pub max_observed: f64,
    /// Bound it was checked against.
    pub bound: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: trials={} failures={} max_observed={:.6e} bound={:.6e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.failures,
            self.max_observed,
            self.bound
        )
    }
}

fn random_state(rng: &mut ChaCha8Rng, spec: &ProblemSpec) -> [f64; STATE_DIM] {
    std::array::from_fn(|i| rng.gen_range(spec.state_lo[i]..=spec.state_hi[i]))
}

fn random_costate(rng: &mut ChaCha8Rng, scale: f64) -> Costate {
    Costate(std::array::from_fn(|_| rng.gen_range(-scale..=scale)))
}

fn unit_ball(rng: &mut ChaCha8Rng) -> [f64; STATE_DIM] {
    loop {
        let q: [f64; STATE_DIM] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
        if q.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return q;
        }
    }
}

/// Closed form against the discretized sup-inf on `draws` random
/// `(x, p)`. `closed_form` is the function under test.
pub fn hamiltonian_agreement_check(
    spec: &ProblemSpec,
    closed_form: &(dyn Fn(&[f64; STATE_DIM], &Costate) -> f64 + Sync),
    draws: usize,
    n_inputs: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<([f64; STATE_DIM], Costate)> = (0..draws)
        .map(|_| (random_state(&mut rng, spec), random_costate(&mut rng, 2.0)))
        .collect();
    let du = 2.0 * spec.omega_max / (n_inputs.max(2) - 1) as f64;
    let slack: Vec<Result<(f64, f64)>> = cases
        .par_iter()
        .map(|(x, p)| {
            let brute = spec.hamiltonian_bruteforce(&StateVec(*x), p, n_inputs, n_inputs)?;
            let tol = spec.omega_max * (x[0].abs() + x[1].abs() + 1.0) * du;
            Ok(((closed_form(x, p) - brute).abs(), tol))
        })
        .collect();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for s in slack {
        let (diff, tol) = s?;
        if !(diff <= tol) {
            failures += 1;
        }
        worst = worst.max(diff / tol);
    }
    Ok(CheckReport {
        name: "hamiltonian oracle agreement (diff/tol)".into(),
        trials: draws,
        failures,
        max_observed: worst,
        bound: 1.0,
    })
}

/// `|H(x, p + eps q) - H(x, p)| <= C_f eps` over random `(x, p, q)` for
/// each `eps`. `max_observed` is the largest ratio to `eps`.
pub fn lipschitz_hamiltonian_check(spec: &ProblemSpec, trials: usize, eps_list: &[f64], seed: u64) -> CheckReport {
    let c_f = estimate_cf(spec, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut max_ratio: f64 = 0.0;
    for _ in 0..trials {
        let x = random_state(&mut rng, spec);
        let p = random_costate(&mut rng, 5.0);
        let q = unit_ball(&mut rng);
        for &eps in eps_list {
            let moved = Costate(std::array::from_fn(|i| p.0[i] + eps * q[i]));
            let diff = (spec.hamiltonian(&x, &moved) - spec.hamiltonian(&x, &p)).abs();
            if !(diff <= c_f * eps + 1e-9) {
                failures += 1;
            }
            if eps > 0.0 {
                max_ratio = max_ratio.max(diff / eps);
            }
        }
    }
    CheckReport {
        name: "hamiltonian lipschitz in costate (ratio)".into(),
        trials: trials * eps_list.len(),
        failures,
        max_observed: max_ratio,
        bound: c_f,
    }
}

/// Difference ratio for a perturbation aligned with `f` at a state where
/// `|f|` is largest, with the costate chosen so the optimal inputs stay
/// fixed under the perturbation. Returns `(ratio, C_f)`.
pub fn near_tight_lipschitz_ratio(spec: &ProblemSpec, n_grid: usize, eps: f64) -> (f64, f64) {
    let (c_f, x, (u, d)) = estimate_cf_witness(spec, n_grid);
    let f = spec.flow(&x, u, d);
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return (0.0, c_f);
    }
    let big = 100.0 * (1.0 + eps);
    let (su, sd) = (crate::problem::sign(u), crate::problem::sign(d));
    let p3 = -sd * big;
    let r2 = x[0] * x[0] + x[1] * x[1];
    let k = if r2 > 0.0 {
        (2.0 * su * big - sd * big) / r2
    } else {
        0.0
    };
    let p = Costate([k * x[1], -k * x[0], p3]);
    let q = Costate(std::array::from_fn(|i| p.0[i] + eps * f[i] / norm));
    let ratio = (spec.hamiltonian(&x, &q) - spec.hamiltonian(&x, &p)).abs() / eps;
    (ratio, c_f)
}

/// `F(t, x, r, p) = max{-p_t - H(x, p_x), r - l(x)}`.
pub fn properness_operator(spec: &ProblemSpec, x: &[f64; STATE_DIM], r: f64, p_t: f64, p_x: &Costate) -> f64 {
    (-p_t - spec.hamiltonian_closed_form(&StateVec(*x), p_x)).max(r - spec.margin(x))
}

/// Monotonicity of the operator in its value argument. `max_observed` is
/// the largest `F(r) - F(s)` seen with `r <= s`.
pub fn properness_check(spec: &ProblemSpec, trials: usize, seed: u64) -> CheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..trials {
        let x = random_state(&mut rng, spec);
        let p_t = rng.gen_range(-5.0..=5.0);
        let p_x = random_costate(&mut rng, 5.0);
        let a: f64 = rng.gen_range(-3.0..=3.0);
        let b: f64 = rng.gen_range(-3.0..=3.0);
        let (r, s) = (a.min(b), a.max(b));
        let gap = properness_operator(spec, &x, r, p_t, &p_x) - properness_operator(spec, &x, s, p_t, &p_x);
        if !(gap <= 0.0) {
            failures += 1;
        }
        worst = worst.max(gap);
    }
    CheckReport {
        name: "properness (F(r) - F(s), r <= s)".into(),
        trials,
        failures,
        max_observed: worst,
        bound: 0.0,
    }
}

/// Forward-mode input gradients of random `2 x 16` networks against
/// central differences. `max_observed` is the largest relative error.
pub fn input_gradient_check(cases: usize, seed: u64) -> CheckReport {
    let arch = NetworkArch::sine(vec![16, 16]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Trace::default();
    let h = 1e-5;
    let (mut failures, mut worst) = (0, 0.0f64);
    for case in 0..cases {
        let params = init_params(&arch, seed.wrapping_add(case as u64));
        let z: [f64; INPUT_DIM] = std::array::from_fn(|k| {
            if k == 0 {
                rng.gen_range(0.0..=1.0)
            } else {
                rng.gen_range(-1.0..=1.0)
            }
        });
        eval_scaled(&params, &arch, &z, &mut trace);
        let jac = trace.jac;
        for (k, &analytic) in jac.iter().enumerate() {
            let (mut zp, mut zm) = (z, z);
            zp[k] += h;
            zm[k] -= h;
            eval_scaled(&params, &arch, &zp, &mut trace);
            let vp = trace.value;
            eval_scaled(&params, &arch, &zm, &mut trace);
            let fd = (vp - trace.value) / (2.0 * h);
            let rel = (fd - analytic).abs() / analytic.abs().max(1.0);
            if !(rel <= 1e-5) {
                failures += 1;
            }
            worst = worst.max(rel);
        }
    }
    CheckReport {
        name: "input gradient vs finite differences (relative)".into(),
        trials: cases * INPUT_DIM,
        failures,
        max_observed: worst,
        bound: 1e-5,
    }
}

/// Parameter gradient of the mean-reduced training loss of random `2 x 8`
/// networks against central differences, on batches mixing terminal and
/// residual samples. `max_observed` is the largest error relative to the
/// largest difference quotient.
pub fn param_gradient_check(cases: usize, seed: u64) -> Result<CheckReport> {
    let spec = ProblemSpec::air3d();
    let arch = NetworkArch::sine(vec![8, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let (mut failures, mut worst) = (0, 0.0f64);
    for case in 0..cases {
        let params = init_params(&arch, seed.wrapping_add(1000 + case as u64));
        let batch: Vec<Sample> = (0..5)
            .map(|k| Sample {
                t: if k == 0 {
                    spec.horizon
                } else {
                    rng.gen_range(0.0..spec.horizon)
                },
                x: random_state(&mut rng, &spec),
                terminal: k == 0,
            })
            .collect();
        let loss = |p: &NetworkParams| compute_loss(p, &arch, &spec, &batch, 1.0, Reduction::Mean).map(|e| e.loss);
        let (_, grad) = loss_and_grad(&params, &arch, &spec, &batch, 1.0, Reduction::Mean)?;
        let mut p = params.clone();
        let mut fd = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let lp = loss(&p)?;
            p.as_mut_slice()[i] = orig - h;
            let lm = loss(&p)?;
            p.as_mut_slice()[i] = orig;
            fd.push((lp - lm) / (2.0 * h));
        }
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let rel = grad
            .0
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / scale));
        if !(rel <= 1e-4) {
            failures += 1;
        }
        worst = worst.max(rel);
    }
    Ok(CheckReport {
        name: "residual loss parameter gradient vs finite differences (relative)".into(),
        trials: cases,
        failures,
        max_observed: worst,
        bound: 1e-4,
    })
}

/// Kendall rank correlation (tau-b). `None` when either series is
/// constant or shorter than two.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    let (mut concordant, mut discordant, mut ties_a, mut ties_b) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = (a[i] - a[j]).partial_cmp(&0.0)? as i64;
            let db = (b[i] - b[j]).partial_cmp(&0.0)? as i64;
            match (da, db) {
                (0, 0) => {}
                (0, _) => ties_a += 1,
                (_, 0) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let na = (concordant + discordant + ties_b) as f64;
    let nb = (concordant + discordant + ties_a) as f64;
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((concordant - discordant) as f64 / (na * nb).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergencePoint {
    pub step: u64,
    pub sampled_loss: f64,
    pub sup_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSeries {
    pub points: Vec<ConvergencePoint>,
    /// Kendall tau between loss and error; 1 when `degenerate`.
    pub kendall_tau: f64,
    pub degenerate: bool,
}

impl ConvergenceSeries {
    pub fn from_points(points: Vec<ConvergencePoint>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].step <= w[0].step) {
            return Err(Error::invalid("checkpoint steps must be strictly increasing"));
        }
        let loss: Vec<f64> = points.iter().map(|p| p.sampled_loss).collect();
        let err: Vec<f64> = points.iter().map(|p| p.sup_err).collect();
        let (kendall_tau, degenerate) = match kendall_tau(&loss, &err) {
            Some(t) => (t, false),
            None => (1.0, true),
        };
        Ok(ConvergenceSeries {
            points,
            kendall_tau,
            degenerate,
        })
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("step,sampled_loss,sup_err\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.step, p.sampled_loss, p.sup_err));
        }
        out
    }
}

/// Max-reduction loss on `held_out` and sup error against the oracle for
/// each checkpoint of one run.
pub fn convergence_series(
    checkpoints: &[Checkpoint],
    oracle_problem: &ProblemSpec,
    oracle: &OracleTube,
    held_out: &[Sample],
    lambda: f64,
) -> Result<ConvergenceSeries> {
    if checkpoints.len() < 3 {
        return Err(Error::invalid("convergence series needs at least three checkpoints"));
    }
    let mut points = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        let loss = compute_loss(&ck.params, &ck.arch, &ck.problem, held_out, lambda, Reduction::Max)?;
        let net = checkpoint_network(ck)?;
        let (sup, _, _) = sup_error(&net, &ck.problem, oracle_problem, oracle)?;
        points.push(ConvergencePoint {
            step: ck.meta.step,
            sampled_loss: loss.loss,
            sup_err: sup,
        });
    }
    ConvergenceSeries::from_points(points)
}

pub const SLICE_HEADER: &str = "t,theta,x1,x2,v_nn,v_oracle,abs_err";

/// Default heading slices.
pub fn default_slice_thetas() -> [f64; 4] {
    use std::f64::consts::PI;
    [-PI / 2.0, 0.0, PI / 2.0, PI]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceRow {
    pub t: f64,
    pub theta: f64,
    pub x1: f64,
    pub x2: f64,
    pub v_nn: f64,
    pub v_oracle: f64,
    pub abs_err: f64,
}

/// Model and oracle values on the `(x1, x2)` nodes of the oracle grid for
/// each heading in `thetas`, one block per heading.
pub fn slice_rows(model: &dyn ValueModel, oracle: &OracleTube, t: f64, thetas: &[f64]) -> Result<Vec<SliceRow>> {
    let ax = &oracle.grid.axes;
    let mut rows = Vec::with_capacity(thetas.len() * ax[0].points * ax[1].points);
    for &theta in thetas {
        for i in 0..ax[0].points {
            for j in 0..ax[1].points {
                let x = [ax[0].node(i), ax[1].node(j), theta];
                let v_nn = model.value(t, &x)?;
                let v_oracle = oracle.value(t, &x)?;
                rows.push(SliceRow {
                    t,
                    theta,
                    x1: x[0],
                    x2: x[1],
                    v_nn,
                    v_oracle,
                    abs_err: (v_nn - v_oracle).abs(),
                });
            }
        }
    }
    Ok(rows)
}

pub fn slice_csv(rows: &[SliceRow]) -> String {
    let mut out = String::from(SLICE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.t, r.theta, r.x1, r.x2, r.v_nn, r.v_oracle, r.abs_err
        ));
    }
    out
}
