//! Reverse pass through the value-and-tangent forward computation.
//!
//! A scalar loss built from finitely many evaluations is described by one
//! [`SeedTerm`] per sample: the adjoint of `V` and of `dV/dz` at that
//! sample's scaled input. Backpropagating both through the tangent
//! recurrences `T_out = omega cos(omega a) (W T_in)` gives the exact
//! parameter gradient, second-order paths included.

use crate::error::{Error, Result};

use super::{eval_scaled, NetworkArch, NetworkParams, Trace, INPUT_DIM};

/// `dLoss/dtheta`, laid out like [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad(pub Vec<f64>);

impl ParamGrad {
    pub fn zeros(len: usize) -> Self {
        ParamGrad(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn add_assign(&mut self, other: &ParamGrad) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }
}

/// Adjoint seed for one sample of a scalar loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedTerm {
    /// Scaled network input.
    pub z: [f64; INPUT_DIM],
    /// `dLoss/dV` at this sample.
    pub value_bar: f64,
    /// `dLoss/d(dV/dz)` at this sample, in scaled coordinates.
    pub jac_bar: [f64; INPUT_DIM],
}

/// Scratch buffers for [`backward`].
#[derive(Clone, Debug, Default)]
pub struct BackwardScratch {
    act_bar: Vec<f64>,
    tan_bar: Vec<f64>,
    next_act_bar: Vec<f64>,
    next_tan_bar: Vec<f64>,
    pre_bar: Vec<f64>,
    pre_tan_bar: Vec<f64>,
}

/// Accumulates the gradient of `value_bar * V + jac_bar . dV/dz` into `grad`,
/// using the activations already recorded in `trace`.
pub fn backward(
    params: &NetworkParams,
    arch: &NetworkArch,
    trace: &Trace,
    value_bar: f64,
    jac_bar: &[f64; INPUT_DIM],
    grad: &mut [f64],
    scratch: &mut BackwardScratch,
) {
    let n_hidden = params.n_layers() - 1;

    // linear head: V = w.h + b, J = w^T T
    let head = n_hidden;
    let (_, cols) = params.shape(head);
    let (w_range, b_range) = params.layer_ranges(head);
    let w = params.weights(head);
    let h = &trace.acts[head];
    let t = &trace.tangents[head];
    {
        let gw = &mut grad[w_range];
        for i in 0..cols {
            let mut g = value_bar * h[i];
            for k in 0..INPUT_DIM {
                g += jac_bar[k] * t[i * INPUT_DIM + k];
            }
            gw[i] += g;
        }
    }
    grad[b_range.start] += value_bar;

    scratch.act_bar.clear();
    scratch.act_bar.extend(w.iter().map(|wi| value_bar * wi));
    scratch.tan_bar.clear();
    for &wi in w {
        for &jb in jac_bar {
            scratch.tan_bar.push(jb * wi);
        }
    }

    for layer in (0..n_hidden).rev() {
        let omega = arch.omega(layer);
        let (rows, cols) = params.shape(layer);
        let (w_range, b_range) = params.layer_ranges(layer);
        let w = params.weights(layer);
        let sines = &trace.acts[layer + 1];
        let cosines = &trace.cosines[layer];
        let pre = &trace.pre_tangents[layer];
        let h_in = &trace.acts[layer];
        let t_in = &trace.tangents[layer];

        scratch.pre_bar.clear();
        scratch.pre_bar.resize(rows, 0.0);
        scratch.pre_tan_bar.clear();
        scratch.pre_tan_bar.resize(rows * INPUT_DIM, 0.0);
        for j in 0..rows {
            let (s, c) = (sines[j], cosines[j]);
            let mut cross = 0.0;
            for k in 0..INPUT_DIM {
                let tb = scratch.tan_bar[j * INPUT_DIM + k];
                cross += tb * pre[j * INPUT_DIM + k];
                scratch.pre_tan_bar[j * INPUT_DIM + k] = omega * c * tb;
            }
            scratch.pre_bar[j] = omega * c * scratch.act_bar[j] - omega * omega * s * cross;
        }

        {
            let gw = &mut grad[w_range];
            for j in 0..rows {
                let ab = scratch.pre_bar[j];
                let ptb = &scratch.pre_tan_bar[j * INPUT_DIM..(j + 1) * INPUT_DIM];
                let row = &mut gw[j * cols..(j + 1) * cols];
                for i in 0..cols {
                    let ti = &t_in[i * INPUT_DIM..(i + 1) * INPUT_DIM];
                    let mut g = ab * h_in[i];
                    for k in 0..INPUT_DIM {
                        g += ptb[k] * ti[k];
                    }
                    row[i] += g;
                }
            }
        }
        {
            let gb = &mut grad[b_range];
            for j in 0..rows {
                gb[j] += scratch.pre_bar[j];
            }
        }

        if layer == 0 {
            break;
        }
        scratch.next_act_bar.clear();
        scratch.next_act_bar.resize(cols, 0.0);
        scratch.next_tan_bar.clear();
        scratch.next_tan_bar.resize(cols * INPUT_DIM, 0.0);
        for j in 0..rows {
            let ab = scratch.pre_bar[j];
            let ptb = &scratch.pre_tan_bar[j * INPUT_DIM..(j + 1) * INPUT_DIM];
            let row = &w[j * cols..(j + 1) * cols];
            for i in 0..cols {
                let wji = row[i];
                scratch.next_act_bar[i] += wji * ab;
                let dst = &mut scratch.next_tan_bar[i * INPUT_DIM..(i + 1) * INPUT_DIM];
                for k in 0..INPUT_DIM {
                    dst[k] += wji * ptb[k];
                }
            }
        }
        std::mem::swap(&mut scratch.act_bar, &mut scratch.next_act_bar);
        std::mem::swap(&mut scratch.tan_bar, &mut scratch.next_tan_bar);
    }
}

/// Gradient of `sum_s (value_bar_s V(z_s) + jac_bar_s . dV/dz(z_s))` with
/// respect to every parameter. Terms are accumulated in the given order.
pub fn loss_param_grad(params: &NetworkParams, arch: &NetworkArch, seeds: &[SeedTerm]) -> Result<ParamGrad> {
    let mut grad = ParamGrad::zeros(params.len());
    let mut trace = Trace::default();
    let mut scratch = BackwardScratch::default();
    for (index, seed) in seeds.iter().enumerate() {
        if seed.value_bar == 0.0 && seed.jac_bar.iter().all(|&v| v == 0.0) {
            continue;
        }
        if !(seed.value_bar.is_finite() && seed.jac_bar.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric {
                what: "loss adjoint",
                index,
            });
        }
        eval_scaled(params, arch, &seed.z, &mut trace);
        if !(trace.value.is_finite() && trace.jac.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric {
                what: "network evaluation",
                index,
            });
        }
        backward(
            params,
            arch,
            &trace,
            seed.value_bar,
            &seed.jac_bar,
            &mut grad.0,
            &mut scratch,
        );
    }
    if let Some(index) = grad.0.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            what: "parameter gradient entry",
            index,
        });
    }
    Ok(grad)
}
