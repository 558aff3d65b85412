mod support;
use hjreach::sirennet::grad::*;
use hjreach::sirennet::{eval_scaled, Trace, INPUT_DIM};
use hjreach::sirennet::{init_params, NetworkArch, NetworkParams};
use hjreach::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

fn eval_loss(params: &NetworkParams, arch: &NetworkArch, seeds: &[SeedTerm]) -> f64 {
    let mut trace = Trace::default();
    seeds
        .iter()
        .map(|s| {
            eval_scaled(params, arch, &s.z, &mut trace);
            s.value_bar * trace.value + s.jac_bar.iter().zip(&trace.jac).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

fn fd_gradient(params: &NetworkParams, arch: &NetworkArch, seeds: &[SeedTerm], h: f64) -> Vec<f64> {
    let mut p = params.clone();
    (0..params.len())
        .map(|i| {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let fp = eval_loss(&p, arch, seeds);
            p.as_mut_slice()[i] = orig - h;
            let fm = eval_loss(&p, arch, seeds);
            p.as_mut_slice()[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[test]
fn value_gradient_single_unit_matches_hand() {
    let (omega, a, b, c, w_out) = (30.0, 0.2, [-0.1, 0.15, 0.05], 0.01, 0.7);
    let (arch, params) = single_unit(omega, a, b, c, w_out, -0.3);
    let z = [0.4, 0.3, -0.6, 0.9];
    let seeds = [SeedTerm {
        z,
        value_bar: 1.0,
        jac_bar: [0.0; INPUT_DIM],
    }];
    let g = loss_param_grad(&params, &arch, &seeds).unwrap();
    let pre = a * z[0] + b[0] * z[1] + b[1] * z[2] + b[2] * z[3] + c;
    let dsin = w_out * omega * (omega * pre).cos();
    let expected = [
        dsin * z[0],
        dsin * z[1],
        dsin * z[2],
        dsin * z[3],
        dsin,
        (omega * pre).sin(),
        1.0,
    ];
    for (got, want) in g.0.iter().zip(expected) {
        assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
    }
}

#[test]
fn zero_loss_gives_zero_gradient() {
    let arch = NetworkArch::sine(vec![8, 8]);
    let params = init_params(&arch, 3);
    let seeds = [SeedTerm {
        z: [0.1, 0.2, 0.3, 0.4],
        value_bar: 0.0,
        jac_bar: [0.0; INPUT_DIM],
    }];
    let g = loss_param_grad(&params, &arch, &seeds).unwrap();
    assert!(g.0.iter().all(|&v| v == 0.0));
    assert!(loss_param_grad(&params, &arch, &[])
        .unwrap()
        .0
        .iter()
        .all(|&v| v == 0.0));
}

#[test]
fn time_derivative_loss_matches_finite_differences() {
    let arch = NetworkArch::sine(vec![8, 8]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for case in 0..20 {
        let params = init_params(&arch, 100 + case);
        let z = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let seeds = [SeedTerm {
            z,
            value_bar: 0.0,
            jac_bar: [1.0, 0.0, 0.0, 0.0],
        }];
        let g = loss_param_grad(&params, &arch, &seeds).unwrap();
        let fd = fd_gradient(&params, &arch, &seeds, 1e-6);
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (i, (a, b)) in g.0.iter().zip(&fd).enumerate() {
            let rel = (a - b).abs() / scale.max(1e-8);
            assert!(rel <= 1e-4, "case {case} param {i}: {a} vs {b}");
        }
    }
}

#[test]
fn mixed_multi_sample_loss_matches_finite_differences() {
    let arch = NetworkArch::sine(vec![6, 5, 4]);
    let params = random_params(&arch, 4, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let seeds: Vec<SeedTerm> = (0..4)
        .map(|_| SeedTerm {
            z: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
            value_bar: rng.gen_range(-1.0..1.0),
            jac_bar: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        })
        .collect();
    let g = loss_param_grad(&params, &arch, &seeds).unwrap();
    let fd = fd_gradient(&params, &arch, &seeds, 1e-6);
    let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in g.0.iter().zip(&fd) {
        assert!((a - b).abs() / scale <= 1e-6, "{a} vs {b}");
    }
}

#[test]
fn non_finite_adjoint_reports_index() {
    let arch = NetworkArch::sine(vec![4]);
    let params = init_params(&arch, 0);
    let mut seeds = vec![
        SeedTerm {
            z: [0.0; INPUT_DIM],
            value_bar: 1.0,
            jac_bar: [0.0; INPUT_DIM],
        };
        3
    ];
    seeds[2].value_bar = f64::NAN;
    match loss_param_grad(&params, &arch, &seeds) {
        Err(Error::Numeric { index, .. }) => assert_eq!(index, 2),
        other => panic!("expected numeric error, got {other:?}"),
    }
}
