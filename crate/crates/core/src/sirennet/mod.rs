//! Fully connected sine networks with analytic input derivatives.
//!
//! A network maps the scaled input `z = (t_s, x_s)` to a scalar through
//! hidden layers `h <- sin(omega * (W h + b))` and a linear head. The
//! forward pass carries the tangent matrix `dh/dz` alongside each
//! activation, so `dV/dz` is exact. [`grad`] runs the reverse pass over
//! that extended computation to obtain parameter gradients of losses that
//! depend on both `V` and `dV/dz`.

pub mod adam;
pub mod checkpoint;
pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Scaling, StateVec, STATE_DIM};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use grad::{loss_param_grad, ParamGrad, SeedTerm};

/// Input width for a `(t, x)` network over [`STATE_DIM`] states.
pub const INPUT_DIM: usize = STATE_DIM + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkArch {
    pub in_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub omega0_first: f64,
    pub omega0_hidden: f64,
    pub out_dim: usize,
}

impl NetworkArch {
    pub fn sine(hidden_widths: Vec<usize>) -> Self {
        NetworkArch {
            in_dim: INPUT_DIM,
            hidden_widths,
            activation: Activation::Sine,
            omega0_first: 30.0,
            omega0_hidden: 1.0,
            out_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim != INPUT_DIM {
            return Err(Error::schema(
                "arch.in_dim",
                format!("expected {INPUT_DIM} for (t, x) inputs"),
            ));
        }
        if self.out_dim != 1 {
            return Err(Error::schema("arch.out_dim", "value networks are scalar"));
        }
        if self.hidden_widths.is_empty() {
            return Err(Error::schema("arch.hidden_widths", "need at least one hidden layer"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::schema("arch.hidden_widths", "widths must be >= 1"));
        }
        if !(self.omega0_first.is_finite() && self.omega0_hidden.is_finite()) {
            return Err(Error::schema("arch.omega0_first", "frequencies must be finite"));
        }
        Ok(())
    }

    /// `(rows, cols)` of each affine layer, head included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.in_dim;
        for &w in &self.hidden_widths {
            shapes.push((w, fan_in));
            fan_in = w;
        }
        shapes.push((self.out_dim, fan_in));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    /// Frequency multiplying the pre-activation of hidden layer `l`.
    #[inline]
    pub fn omega(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega0_first
        } else {
            self.omega0_hidden
        }
    }
}

/// Flat parameter vector; each layer stores its row-major weight matrix
/// followed by its bias column.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: &NetworkArch) -> Self {
        Self::from_flat(arch, vec![0.0; arch.param_count()]).expect("length matches arch")
    }

    pub fn from_flat(arch: &NetworkArch, data: Vec<f64>) -> Result<Self> {
        let shapes = arch.layer_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut acc = 0;
        for &(r, c) in &shapes {
            offsets.push(acc);
            acc += r * c + r;
        }
        if data.len() != acc {
            return Err(Error::schema(
                "params",
                format!("{} values for an architecture with {acc} parameters", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("params", "non-finite parameter"));
        }
        Ok(NetworkParams { shapes, offsets, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    pub fn shape(&self, layer: usize) -> (usize, usize) {
        self.shapes[layer]
    }

    /// Range of `layer`'s weights and bias inside the flat vector.
    pub fn layer_ranges(&self, layer: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (r, c) = self.shapes[layer];
        let w0 = self.offsets[layer];
        (w0..w0 + r * c, w0 + r * c..w0 + r * c + r)
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.data[self.layer_ranges(layer).0]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.data[self.layer_ranges(layer).1]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layer_ranges(layer).0;
        &mut self.data[r]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let r = self.layer_ranges(layer).1;
        &mut self.data[r]
    }
}

/// Frequency-aware uniform initialization with zero biases.
pub fn init_params(arch: &NetworkArch, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros(arch);
    for layer in 0..params.n_layers() {
        let (_, fan_in) = params.shape(layer);
        let bound = if layer == 0 {
            1.0 / fan_in as f64
        } else {
            (6.0 / fan_in as f64).sqrt() / arch.omega0_hidden
        };
        for w in params.weights_mut(layer) {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    params
}

/// Value and physical-coordinate derivatives at one `(t, x)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalBundle {
    pub value: f64,
    pub dt: f64,
    pub dx: [f64; STATE_DIM],
}

/// Per-sample activations and tangents, reused across evaluations.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// `acts[l]` is the input to layer `l`; `acts[0] = z`.
    pub(crate) acts: Vec<Vec<f64>>,
    /// `tangents[l] = d acts[l] / dz`, row-major `width x INPUT_DIM`.
    pub(crate) tangents: Vec<Vec<f64>>,
    /// `cos(omega a)` of each hidden layer.
    pub(crate) cosines: Vec<Vec<f64>>,
    /// `W T_in` of each hidden layer, before the activation derivative.
    pub(crate) pre_tangents: Vec<Vec<f64>>,
    pub value: f64,
    pub jac: [f64; INPUT_DIM],
}

impl Trace {
    fn prepare(&mut self, params: &NetworkParams) {
        let n_hidden = params.n_layers() - 1;
        if self.acts.len() == n_hidden + 1 {
            return;
        }
        self.acts = Vec::with_capacity(n_hidden + 1);
        self.tangents = Vec::with_capacity(n_hidden + 1);
        self.acts.push(vec![0.0; INPUT_DIM]);
        self.tangents.push(identity_tangent());
        self.cosines.clear();
        self.pre_tangents.clear();
        for layer in 0..n_hidden {
            let (rows, _) = params.shape(layer);
            self.acts.push(vec![0.0; rows]);
            self.tangents.push(vec![0.0; rows * INPUT_DIM]);
            self.cosines.push(vec![0.0; rows]);
            self.pre_tangents.push(vec![0.0; rows * INPUT_DIM]);
        }
    }
}

fn identity_tangent() -> Vec<f64> {
    let mut t = vec![0.0; INPUT_DIM * INPUT_DIM];
    for k in 0..INPUT_DIM {
        t[k * INPUT_DIM + k] = 1.0;
    }
    t
}

fn check_shapes(params: &NetworkParams, arch: &NetworkArch) -> Result<()> {
    if params.shapes != arch.layer_shapes() {
        return Err(Error::invalid("parameter shapes do not match the architecture"));
    }
    Ok(())
}

/// Evaluates `V` and `dV/dz` at scaled input `z`, filling `trace`.
pub fn eval_scaled(params: &NetworkParams, arch: &NetworkArch, z: &[f64; INPUT_DIM], trace: &mut Trace) {
    trace.prepare(params);
    trace.acts[0].copy_from_slice(z);
    let n_hidden = params.n_layers() - 1;
    for layer in 0..n_hidden {
        let omega = arch.omega(layer);
        let (rows, cols) = params.shape(layer);
        let w = params.weights(layer);
        let b = params.bias(layer);
        let (head, tail) = trace.acts.split_at_mut(layer + 1);
        let h_in = &head[layer];
        let h_out = &mut tail[0];
        let (thead, ttail) = trace.tangents.split_at_mut(layer + 1);
        let t_in = &thead[layer];
        let t_out = &mut ttail[0];
        let cosines = &mut trace.cosines[layer];
        let pre = &mut trace.pre_tangents[layer];
        for j in 0..rows {
            let row = &w[j * cols..(j + 1) * cols];
            let mut a = b[j];
            let mut da = [0.0; INPUT_DIM];
            for (i, &wji) in row.iter().enumerate() {
                a += wji * h_in[i];
                let ti = &t_in[i * INPUT_DIM..(i + 1) * INPUT_DIM];
                for k in 0..INPUT_DIM {
                    da[k] += wji * ti[k];
                }
            }
            let (s, c) = (omega * a).sin_cos();
            h_out[j] = s;
            cosines[j] = c;
            for k in 0..INPUT_DIM {
                pre[j * INPUT_DIM + k] = da[k];
                t_out[j * INPUT_DIM + k] = omega * c * da[k];
            }
        }
    }
    let head = n_hidden;
    let (_, cols) = params.shape(head);
    let w = params.weights(head);
    let h = &trace.acts[head];
    let t = &trace.tangents[head];
    let mut value = params.bias(head)[0];
    let mut jac = [0.0; INPUT_DIM];
    for i in 0..cols {
        value += w[i] * h[i];
        for k in 0..INPUT_DIM {
            jac[k] += w[i] * t[i * INPUT_DIM + k];
        }
    }
    trace.value = value;
    trace.jac = jac;
}

/// Network value at a scaled input.
pub fn forward(params: &NetworkParams, arch: &NetworkArch, t_scaled: f64, x_scaled: &[f64]) -> Result<f64> {
    check_shapes(params, arch)?;
    if x_scaled.len() != STATE_DIM {
        return Err(Error::invalid(format!(
            "expected {STATE_DIM} state coordinates, got {}",
            x_scaled.len()
        )));
    }
    let z = [t_scaled, x_scaled[0], x_scaled[1], x_scaled[2]];
    let mut trace = Trace::default();
    eval_scaled(params, arch, &z, &mut trace);
    Ok(trace.value)
}

/// Scaled network input for a physical `(t, x)`. Periodic coordinates are
/// wrapped by the caller's canonicalization; values outside the box
/// extrapolate.
#[inline]
pub fn scaled_input(scaling: &Scaling, t: f64, x: &[f64; STATE_DIM]) -> [f64; INPUT_DIM] {
    let zs = scaling.scale(x);
    [scaling.scale_time(t), zs[0], zs[1], zs[2]]
}

/// Converts a scaled-input Jacobian into physical `(dt, dx)`.
#[inline]
pub fn physical_derivatives(scaling: &Scaling, jac: &[f64; INPUT_DIM]) -> (f64, [f64; STATE_DIM]) {
    let dt = jac[0] / scaling.horizon;
    let dx = std::array::from_fn(|i| jac[i + 1] / scaling.half_width[i]);
    (dt, dx)
}

/// A network bound to its architecture and coordinate scaling.
#[derive(Clone, Debug)]
pub struct ValueNetwork {
    pub arch: NetworkArch,
    pub params: NetworkParams,
    pub scaling: Scaling,
    /// Heading period, used to wrap the angular coordinate before scaling.
    pub periodic: [bool; STATE_DIM],
    pub lo: [f64; STATE_DIM],
    pub hi: [f64; STATE_DIM],
}

impl ValueNetwork {
    pub fn new(arch: NetworkArch, params: NetworkParams, spec: &crate::problem::ProblemSpec) -> Result<Self> {
        check_shapes(&params, &arch)?;
        Ok(ValueNetwork {
            arch,
            params,
            scaling: spec.scaling(),
            periodic: spec.periodic,
            lo: spec.state_lo,
            hi: spec.state_hi,
        })
    }

    #[inline]
    pub fn wrap(&self, x: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        let mut out = *x;
        for i in 0..STATE_DIM {
            if self.periodic[i] {
                let span = self.hi[i] - self.lo[i];
                let mut w = self.lo[i] + (out[i] - self.lo[i]).rem_euclid(span);
                if w >= self.hi[i] {
                    w = self.lo[i];
                }
                out[i] = w;
            }
        }
        out
    }

    #[inline]
    pub fn input(&self, t: f64, x: &[f64; STATE_DIM]) -> [f64; INPUT_DIM] {
        scaled_input(&self.scaling, t, &self.wrap(x))
    }

    pub fn value(&self, t: f64, x: &[f64; STATE_DIM]) -> f64 {
        let mut trace = Trace::default();
        self.eval_with(t, x, &mut trace).value
    }

    pub fn eval(&self, t: f64, x: &StateVec) -> EvalBundle {
        let mut trace = Trace::default();
        self.eval_with(t, &x.0, &mut trace)
    }

    pub fn eval_with(&self, t: f64, x: &[f64; STATE_DIM], trace: &mut Trace) -> EvalBundle {
        let z = self.input(t, x);
        eval_scaled(&self.params, &self.arch, &z, trace);
        let (dt, dx) = physical_derivatives(&self.scaling, &trace.jac);
        EvalBundle {
            value: trace.value,
            dt,
            dx,
        }
    }
}

/// Value, `dV/dt` and `grad_x V` in physical units at `(t_phys, x_phys)`.
pub fn forward_with_input_grads(
    params: &NetworkParams,
    arch: &NetworkArch,
    spec: &crate::problem::ProblemSpec,
    t_phys: f64,
    x_phys: &StateVec,
) -> Result<EvalBundle> {
    check_shapes(params, arch)?;
    let scaling = spec.scaling();
    let z = scaled_input(&scaling, t_phys, &spec.canonical(x_phys).0);
    let mut trace = Trace::default();
    eval_scaled(params, arch, &z, &mut trace);
    let (dt, dx) = physical_derivatives(&scaling, &trace.jac);
    Ok(EvalBundle {
        value: trace.value,
        dt,
        dx,
    })
}
