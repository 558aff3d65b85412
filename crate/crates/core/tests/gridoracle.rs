use hjreach::gridoracle::*;
use hjreach::problem::{ProblemSpec, StateVec};
use hjreach::Error;
use std::f64::consts::PI;
use std::fs;

fn grid31(spec: &ProblemSpec) -> GridSpec {
    GridSpec::for_problem(spec, [31, 31, 31]).unwrap()
}

#[test]
fn axis_layout() {
    let spec = ProblemSpec::air3d();
    let g = grid31(&spec);
    assert_eq!(g.axes[0].node(0), -1.0);
    assert_eq!(g.axes[0].node(30), 1.0);
    assert!(g.axes[0].node(15).abs() < 1e-15);
    assert!((g.axes[2].spacing() - 2.0 * PI / 31.0).abs() < 1e-15);
    assert!(g.axes[2].node(30) < PI);
    for lin in [0, 17, 1234, g.len() - 1] {
        assert_eq!(g.linear(g.multi(lin)), lin);
    }
    assert!(GridSpec::for_problem(&spec, [2, 31, 31]).is_err());
}

#[test]
fn terminal_field_and_mask() {
    let spec = ProblemSpec::air3d();
    let g = grid31(&spec);
    let f = terminal_field(&spec, &g);
    assert_eq!(f.time, 1.0);
    let origin = g.linear([15, 15, 0]);
    assert!((f.values[origin] + 0.25).abs() < 1e-15);
    let min = f.values.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!((min + 0.25).abs() < 1e-15);
    let mask = extract_brt(&f);
    for (i, &inside) in mask.mask.iter().enumerate() {
        let x = g.node(i);
        assert_eq!(inside, x[0].hypot(x[1]) <= 0.25);
    }
}

#[test]
fn dissipation_defaults() {
    let spec = ProblemSpec::air3d();
    let a = dissipation_bounds(&spec, &grid31(&spec));
    assert!((a[0] - 4.5).abs() < 1e-15);
    assert_eq!(a[2], 6.0);
    assert_eq!(dissipation_bounds(&ProblemSpec::zero(), &grid31(&spec)), [0.0; 3]);
}

#[test]
fn zero_dynamics_is_stationary() {
    let spec = ProblemSpec::zero();
    let g = GridSpec::for_problem(&spec, [11, 11, 11]).unwrap();
    let term = terminal_field(&spec, &g);
    let mut f = term.clone();
    for _ in 0..5 {
        f = step_backward(&f, &spec, &g, 0.1).unwrap();
        assert_eq!(f.values, term.values);
    }
    let fields = solve_hji(&spec, &g, &[1.0, 0.4, 0.0], 0.5).unwrap();
    for f in &fields {
        assert_eq!(f.values, term.values);
    }
    assert_eq!(fields[2].time, 0.0);
}

#[test]
fn cfl_enforced() {
    let spec = ProblemSpec::air3d();
    let g = grid31(&spec);
    let term = terminal_field(&spec, &g);
    let dt = stable_dt(&spec, &g, 1.0);
    assert!(step_backward(&term, &spec, &g, 1.01 * dt).is_err());
    assert!(step_backward(&term, &spec, &g, 0.99 * dt).is_ok());
    assert!(solve_hji(&spec, &g, &[1.0], 1.2).is_err());
    assert!(solve_hji(&spec, &g, &[1.0], 1.0).is_err());
    assert!(solve_hji(&spec, &g, &[0.5, 0.7], 0.5).is_err());
}

#[test]
fn one_step_respects_obstacle() {
    let spec = ProblemSpec::air3d();
    let g = grid31(&spec);
    let term = terminal_field(&spec, &g);
    let next = step_backward(&term, &spec, &g, stable_dt(&spec, &g, 0.5)).unwrap();
    for (v, l) in next.values.iter().zip(&term.values) {
        assert!(v <= l);
    }
}

#[test]
fn terminal_only_request() {
    let spec = ProblemSpec::air3d();
    let g = grid31(&spec);
    let fields = solve_hji(&spec, &g, &[1.0], 0.5).unwrap();
    assert_eq!(fields.len(), 1);
    assert_eq!(fields[0], terminal_field(&spec, &g));
}

#[test]
fn air3d_backward_monotone_and_growing() {
    let spec = ProblemSpec::air3d();
    let g = grid31(&spec);
    let ts = [1.0, 0.7, 0.0];
    let fields = solve_hji(&spec, &g, &ts, 0.5).unwrap();
    let ell = terminal_field(&spec, &g);
    for (f, t) in fields.iter().zip(ts) {
        assert_eq!(f.time, t);
        for (v, l) in f.values.iter().zip(&ell.values) {
            assert!(v <= l);
        }
    }
    for w in fields.windows(2) {
        for (later, earlier) in w[0].values.iter().zip(&w[1].values) {
            assert!(earlier <= later);
        }
    }
    let vol: Vec<usize> = fields.iter().map(|f| extract_brt(f).count()).collect();
    assert!(vol[2] > vol[0], "{vol:?}");
    assert!(vol[1] >= vol[0] && vol[2] >= vol[1]);
}

#[test]
fn interpolation_properties() {
    let spec = ProblemSpec::air3d();
    let g = GridSpec::for_problem(&spec, [7, 9, 8]).unwrap();
    let affine = |x: &[f64; 3]| 0.3 + 1.5 * x[0] - 0.7 * x[1];
    let field = GridField {
        time: 0.0,
        values: g.nodes().map(|x| affine(&x)).collect(),
    };
    for lin in [0, 5, 77, g.len() - 1] {
        let x = g.node(lin);
        assert_eq!(interpolate(&field, &g, &StateVec(x)).unwrap(), field.values[lin]);
    }
    for x in [[0.13, -0.77, 2.0], [-1.0, 1.0, -3.0], [0.999, 0.0, 0.1]] {
        let v = interpolate(&field, &g, &StateVec(x)).unwrap();
        assert!((v - affine(&x)).abs() < 1e-12);
    }
    let a = interpolate(&field, &g, &StateVec::new(0.2, 0.1, -PI)).unwrap();
    let b = interpolate(&field, &g, &StateVec::new(0.2, 0.1, PI)).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        interpolate(&field, &g, &StateVec::new(1.2, 0.0, 0.0)),
        Err(Error::Range(_))
    ));

    let p = gradient(&field, &g, &StateVec::new(0.1, 0.2, 0.0)).unwrap();
    assert!((p.0[0] - 1.5).abs() < 1e-12 && (p.0[1] + 0.7).abs() < 1e-12 && p.0[2].abs() < 1e-12);
    let p = gradient(&field, &g, &StateVec::new(1.0, -1.0, 0.0)).unwrap();
    assert!((p.0[0] - 1.5).abs() < 1e-12 && (p.0[1] + 0.7).abs() < 1e-12);
}

#[test]
fn csv_round_trip_and_tube() {
    let spec = ProblemSpec::air3d();
    let g = GridSpec::for_problem(&spec, [5, 5, 6]).unwrap();
    let fields = solve_hji(&spec, &g, &[1.0, 0.5, 0.0], 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let meta = export_oracle(dir.path(), &spec, &g, &fields, 0.5).unwrap();
    assert_eq!(meta.times, vec![1.0, 0.5, 0.0]);
    let (_, tube) = load_oracle(dir.path()).unwrap();
    assert_eq!(tube.fields, fields);
    let x = g.node(31);
    assert_eq!(tube.value(0.5, &x).unwrap(), fields[1].values[31]);
    let mid = tube.value(0.75, &x).unwrap();
    assert!((mid - 0.5 * (fields[0].values[31] + fields[1].values[31])).abs() < 1e-15);
    assert!(tube.value(1.5, &x).is_err());
    let mask = fs::read_to_string(dir.path().join(mask_file_name(0.0))).unwrap();
    assert!(mask.starts_with(MASK_HEADER));
    assert_eq!(mask.lines().count(), g.len() + 1);
}

#[test]
fn refinement_reduces_discrepancy() {
    // 16 / 31 / 61 points per spatial axis share nodes at every second step
    let spec = ProblemSpec::air3d();
    let coarse = GridSpec::for_problem(&spec, [16, 16, 16]).unwrap();
    let mid = GridSpec::for_problem(&spec, [31, 31, 32]).unwrap();
    let fine = GridSpec::for_problem(&spec, [61, 61, 64]).unwrap();
    let ts = [1.0, 0.5];
    let fc = solve_hji(&spec, &coarse, &ts, 0.5).unwrap();
    let fm = solve_hji(&spec, &mid, &ts, 0.5).unwrap();
    let ff = solve_hji(&spec, &fine, &ts, 0.5).unwrap();
    let sup_diff = |a: &GridSpec, fa: &GridField, b: &GridSpec, fb: &GridField| {
        (0..a.len())
            .map(|i| {
                let x = a.node(i);
                (fa.values[i] - interpolate(fb, b, &StateVec(x)).unwrap()).abs()
            })
            .fold(0.0f64, f64::max)
    };
    let d_coarse = sup_diff(&coarse, &fc[1], &fine, &ff[1]);
    let d_mid = sup_diff(&mid, &fm[1], &fine, &ff[1]);
    assert!(d_mid < d_coarse, "{d_mid} vs {d_coarse}");
}
