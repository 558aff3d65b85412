use hjreach::analysis::*;
use hjreach::gridoracle::{solve_hji, terminal_field};
use hjreach::gridoracle::{BrtMask, GridSpec, OracleTube};
use hjreach::problem::{Costate, ProblemSpec, STATE_DIM};
use hjreach::sirennet::{EvalBundle, NetworkArch, NetworkParams, ValueNetwork};
use hjreach::training::{compute_loss, Reduction};
use hjreach::{Error, Result};

struct Shifted<'a>(&'a OracleTube, f64);

impl ValueModel for Shifted<'_> {
    fn value(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<f64> {
        Ok(self.0.value(t, x)? + self.1)
    }
    fn derivatives(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<EvalBundle> {
        let mut b = ValueModel::derivatives(self.0, t, x)?;
        b.value += self.1;
        Ok(b)
    }
}

fn small_tube(points: usize, times: &[f64]) -> (ProblemSpec, OracleTube) {
    let spec = ProblemSpec::air3d();
    let grid = GridSpec::for_problem(&spec, [points, points, points + 1]).unwrap();
    let fields = solve_hji(&spec, &grid, times, 0.5).unwrap();
    (spec, OracleTube::new(grid, fields).unwrap())
}

fn mask(bits: &[bool]) -> BrtMask {
    BrtMask {
        time: 0.0,
        mask: bits.to_vec(),
    }
}

#[test]
fn lookup_stub_has_zero_error_and_shift_is_measured() {
    let (spec, tube) = small_tube(11, &[1.0, 0.5, 0.0]);
    let r = compare(&tube, &spec, &spec, &tube).unwrap();
    assert_eq!(r.sup_abs_err, 0.0);
    assert_eq!(r.rows.len(), 3);
    assert!(r.rows.iter().all(|row| row.iou == 1.0 && row.false_safe_rate == 0.0));
    let shifted = Shifted(&tube, 0.1);
    let r = compare(&shifted, &spec, &spec, &tube).unwrap();
    assert!((r.sup_abs_err - 0.1).abs() < 1e-12);
    assert!((r.mean_abs_err - 0.1).abs() < 1e-12);
    for row in &r.rows {
        assert!(row.sup_abs_err >= row.mean_abs_err);
    }
}

#[test]
fn problem_mismatch_is_rejected() {
    let (spec, tube) = small_tube(7, &[1.0, 0.0]);
    let mut other = spec.clone();
    other.v_e = 0.5;
    assert!(matches!(
        compare(&tube, &other, &spec, &tube),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn brt_compare_definitions() {
    let a = mask(&[true, true, false, false]);
    let r = brt_compare(&a, &a).unwrap();
    assert_eq!((r.iou, r.false_safe_rate, r.false_unsafe_rate), (1.0, 0.0, 0.0));
    let b = mask(&[false, false, true, true]);
    let r = brt_compare(&a, &b).unwrap();
    assert_eq!((r.iou, r.false_safe_rate, r.false_unsafe_rate), (0.0, 1.0, 1.0));
    let mut oracle = vec![false; 200];
    oracle[..100].iter_mut().for_each(|v| *v = true);
    let mut net = oracle.clone();
    net[150] = true;
    let r = brt_compare(&mask(&net), &mask(&oracle)).unwrap();
    assert_eq!(r.iou, 100.0 / 101.0);
    assert_eq!(r.false_safe_rate, 0.0);
    assert_eq!(r.false_unsafe_rate, 1.0 / 101.0);
    let swapped = brt_compare(&mask(&oracle), &mask(&net)).unwrap();
    assert_eq!(swapped.iou, r.iou);
    assert_eq!(swapped.false_safe_rate, r.false_unsafe_rate);
    let empty = mask(&[false; 4]);
    let r = brt_compare(&empty, &empty).unwrap();
    assert_eq!(r.iou, 1.0);
    assert!(r.oracle_empty && r.network_empty);
    assert!(brt_compare(&empty, &mask(&[false; 3])).is_err());
}

#[test]
fn zero_network_residuals_match_terminal_field_and_loss() {
    let spec = ProblemSpec::air3d();
    let grid = GridSpec::for_problem(&spec, [9, 9, 10]).unwrap();
    let arch = NetworkArch::sine(vec![8, 8]);
    let net = ValueNetwork::new(arch.clone(), NetworkParams::zeros(&arch), &spec).unwrap();
    let times = [0.0, 0.4, 0.9];
    let r = residual_fields(&net, &spec, &grid, &times).unwrap();
    let ell = terminal_field(&spec, &grid);
    let max_ell = ell.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(r.delta_sup, max_ell);
    assert_eq!(r.eps_field.len(), 3);
    for f in &r.eps_field {
        for v in &f.values {
            assert!(v.abs() <= r.eps_sup);
        }
    }
    let batch = grid_batch(&spec, &grid, &times);
    let loss = compute_loss(&net.params, &arch, &spec, &batch, 1.0, Reduction::Max).unwrap();
    assert!((loss.h1 - r.delta_sup).abs() <= 1e-12);
    assert!((loss.h2 - r.eps_sup).abs() <= 1e-12);
}

#[test]
fn random_network_residuals_match_loss() {
    let spec = ProblemSpec::air3d();
    let grid = GridSpec::for_problem(&spec, [7, 7, 8]).unwrap();
    let arch = NetworkArch::sine(vec![16, 16]);
    let params = hjreach::sirennet::init_params(&arch, 5);
    let net = ValueNetwork::new(arch.clone(), params, &spec).unwrap();
    let times = [0.1, 0.5];
    let r = residual_fields(&net, &spec, &grid, &times).unwrap();
    let batch = grid_batch(&spec, &grid, &times);
    let loss = compute_loss(&net.params, &arch, &spec, &batch, 1.0, Reduction::Max).unwrap();
    assert!((loss.h1 - r.delta_sup).abs() <= 1e-12);
    assert!((loss.h2 - r.eps_sup).abs() <= 1e-12);
}

#[test]
fn oracle_residual_shrinks_with_refinement() {
    let times = [1.0, 0.52, 0.5, 0.48];
    let mut sups = Vec::new();
    for n in [11usize, 21, 41] {
        let (spec, tube) = small_tube(n, &times);
        let r = residual_fields(&tube, &spec, &tube.grid, &[0.5]).unwrap();
        sups.push(r.eps_sup);
    }
    assert!(sups[1] < sups[0] && sups[2] < sups[1], "{sups:?}");
}

#[test]
fn cf_estimate_bounds() {
    assert_eq!(estimate_cf(&ProblemSpec::zero(), 11), 0.0);
    let spec = ProblemSpec::air3d();
    let witness = spec.flow(&[1.0, 1.0, std::f64::consts::PI], -3.0, 3.0);
    let norm = witness.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(estimate_cf(&spec, 21) >= norm);
    let mut faster = spec.clone();
    faster.omega_max = 4.0;
    assert!(estimate_cf(&faster, 21) >= estimate_cf(&spec, 21));
}

#[test]
fn lipschitz_bound_holds() {
    let spec = ProblemSpec::air3d();
    let r = lipschitz_hamiltonian_check(&spec, 2000, &[0.0, 1e-3, 1e-1, 1.0], 3);
    assert!(r.passed(), "{}", r.line());
    assert!(r.max_observed <= r.bound);
    let (ratio, c_f) = near_tight_lipschitz_ratio(&spec, 101, 1e-3);
    assert!(ratio <= c_f && ratio >= 0.95 * c_f, "{ratio} vs {c_f}");
}

#[test]
fn properness_holds() {
    let spec = ProblemSpec::air3d();
    let r = properness_check(&spec, 2000, 9);
    assert!(r.passed(), "{}", r.line());
    let x = [0.3, -0.2, 1.0];
    let p = Costate([0.1, 0.2, 0.3]);
    let a = properness_operator(&spec, &x, 0.4, 0.5, &p);
    assert_eq!(a, properness_operator(&spec, &x, 0.4, 0.5, &p));
    let lo = properness_operator(&spec, &x, -1e6, 0.5, &p);
    let hi = properness_operator(&spec, &x, -1e5, 0.5, &p);
    assert_eq!(lo, hi);
}

#[test]
fn agreement_check_detects_sign_flip() {
    let spec = ProblemSpec::air3d();
    let good = |x: &[f64; 3], p: &Costate| spec.hamiltonian(x, p);
    let r = hamiltonian_agreement_check(&spec, &good, 50, 201, 1).unwrap();
    assert!(r.passed(), "{}", r.line());
    let bad = |x: &[f64; 3], p: &Costate| -spec.hamiltonian(x, p);
    let r = hamiltonian_agreement_check(&spec, &bad, 50, 201, 1).unwrap();
    assert!(!r.passed());
}

#[test]
fn gradient_checks_pass() {
    let r = input_gradient_check(100, 1);
    assert!(r.passed(), "{}", r.line());
    let r = param_gradient_check(20, 2).unwrap();
    assert!(r.passed(), "{}", r.line());
}

#[test]
fn kendall_tau_cases() {
    assert_eq!(kendall_tau(&[3.0, 2.0, 1.0], &[0.3, 0.2, 0.1]), Some(1.0));
    assert_eq!(kendall_tau(&[3.0, 2.0, 1.0], &[0.1, 0.2, 0.3]), Some(-1.0));
    assert_eq!(kendall_tau(&[1.0, 1.0, 1.0], &[0.1, 0.2, 0.3]), None);
    let p = |step, l, e| ConvergencePoint {
        step,
        sampled_loss: l,
        sup_err: e,
    };
    let s = ConvergenceSeries::from_points(vec![p(0, 1.0, 0.5), p(1, 1.0, 0.5), p(2, 1.0, 0.5)]).unwrap();
    assert!(s.degenerate && s.kendall_tau == 1.0);
    assert!(ConvergenceSeries::from_points(vec![p(1, 1.0, 0.5), p(1, 1.0, 0.5)]).is_err());
}

#[test]
fn slices_have_one_block_per_heading() {
    let (_, tube) = small_tube(9, &[1.0, 0.7, 0.0]);
    let rows = slice_rows(&tube, &tube, 0.7, &default_slice_thetas()).unwrap();
    assert_eq!(rows.len(), 4 * 81);
    assert!(rows.iter().all(|r| r.abs_err == 0.0 && r.t == 0.7));
    let csv = slice_csv(&rows);
    assert!(csv.starts_with(SLICE_HEADER));
    assert_eq!(csv.lines().count(), 4 * 81 + 1);
}
