//! Reachability problem definitions.
//!
//! A [`ProblemSpec`] fixes the relative pursuit-evasion dynamics, the input
//! bounds, the target margin and the physical state box. The air3d game is
//! written in relative coordinates `(x1, x2, theta)`:
//!
//! ```text
//! x1' = -v_e + v_p cos(theta) + u x2
//! x2' =  v_p sin(theta) - u x1
//! theta' = d - u
//! ```
//!
//! with the evader control `u` and the pursuer input `d` (the disturbance)
//! both bounded by `omega_max`. The Hamiltonian `sup_u inf_d <p, f>` has the
//! closed form
//!
//! ```text
//! H(x, p) = p1 (-v_e + v_p cos x3) + p2 v_p sin x3
//!         + omega_max |p1 x2 - p2 x1 - p3| - omega_max |p3|
//! ```

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Every supported problem lives in three state dimensions.
pub const STATE_DIM: usize = 3;

/// Physical state `(x1, x2, theta)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVec(pub [f64; STATE_DIM]);

/// Spatial value gradient `(p1, p2, p3)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Costate(pub [f64; STATE_DIM]);

impl StateVec {
    pub fn new(x1: f64, x2: f64, theta: f64) -> Self {
        StateVec([x1, x2, theta])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Costate {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Costate([p1, p2, p3])
    }

    pub fn scaled(&self, c: f64) -> Self {
        Costate(self.0.map(|v| c * v))
    }

    pub fn dot(&self, v: &[f64; STATE_DIM]) -> f64 {
        self.0.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicsKind {
    /// Relative air3d pursuit-evasion game.
    Air3d,
    /// `f = 0`; the value function equals the target margin for all time.
    Zero,
}

/// Reachability problem: dynamics, input bounds, target and domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub dynamics: DynamicsKind,
    pub v_e: f64,
    pub v_p: f64,
    pub omega_max: f64,
    pub beta: f64,
    pub state_lo: [f64; STATE_DIM],
    pub state_hi: [f64; STATE_DIM],
    pub periodic: [bool; STATE_DIM],
    pub horizon: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec::air3d()
    }
}

impl ProblemSpec {
    /// air3d with speeds 0.75, turn bound 3, collision radius 0.25 on
    /// `[-1, 1]^2 x [-pi, pi]` over a unit horizon.
    pub fn air3d() -> Self {
        ProblemSpec {
            dynamics: DynamicsKind::Air3d,
            v_e: 0.75,
            v_p: 0.75,
            omega_max: 3.0,
            beta: 0.25,
            state_lo: [-1.0, -1.0, -PI],
            state_hi: [1.0, 1.0, PI],
            periodic: [false, false, true],
            horizon: 1.0,
        }
    }

    /// Same domain and target as [`ProblemSpec::air3d`] with `f = 0`.
    pub fn zero() -> Self {
        ProblemSpec {
            dynamics: DynamicsKind::Zero,
            ..ProblemSpec::air3d()
        }
    }

    /// SHA-256 of the canonical JSON encoding; ties exported fields to the
    /// problem that produced them.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("problem serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn n_state(&self) -> usize {
        STATE_DIM
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..STATE_DIM {
            if !(self.state_lo[i].is_finite() && self.state_hi[i].is_finite()) {
                return Err(Error::schema(format!("problem.state_lo[{i}]"), "non-finite bound"));
            }
            if self.state_lo[i] >= self.state_hi[i] {
                return Err(Error::schema(format!("problem.state_hi[{i}]"), "must exceed state_lo"));
            }
        }
        if !(self.omega_max >= 0.0) {
            return Err(Error::schema("problem.omega_max", "must be >= 0"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::schema("problem.beta", "must be > 0"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::schema("problem.horizon", "must be > 0"));
        }
        if !(self.v_e.is_finite() && self.v_p.is_finite()) {
            return Err(Error::schema("problem.v_e", "speeds must be finite"));
        }
        if self.dynamics == DynamicsKind::Air3d {
            if self.periodic != [false, false, true] {
                return Err(Error::schema("problem.periodic", "air3d requires [false, false, true]"));
            }
            if self.state_lo[2] != -PI || self.state_hi[2] != PI {
                return Err(Error::schema(
                    "problem.state_lo[2]",
                    "air3d heading must span exactly [-pi, pi]",
                ));
            }
        }
        Ok(())
    }

    /// Wraps periodic coordinates into `[lo, hi)`; other coordinates pass through.
    pub fn canonical(&self, x: &StateVec) -> StateVec {
        let mut out = x.0;
        for i in 0..STATE_DIM {
            if self.periodic[i] {
                let lo = self.state_lo[i];
                let span = self.state_hi[i] - lo;
                let mut w = lo + (out[i] - lo).rem_euclid(span);
                if w >= self.state_hi[i] {
                    w = lo;
                }
                out[i] = w;
            }
        }
        StateVec(out)
    }

    /// Checks finiteness and non-periodic box membership.
    pub fn check_in_box(&self, x: &StateVec) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("non-finite state {:?}", x.0)));
        }
        for i in 0..STATE_DIM {
            if !self.periodic[i] && (x.0[i] < self.state_lo[i] || x.0[i] > self.state_hi[i]) {
                return Err(Error::range(format!(
                    "coordinate {i} = {} outside [{}, {}]",
                    x.0[i], self.state_lo[i], self.state_hi[i]
                )));
            }
        }
        Ok(())
    }

    /// `l(x) = ||(x1, x2)|| - beta`; non-positive inside the target set.
    pub fn target_margin(&self, x: &StateVec) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("non-finite state {:?}", x.0)));
        }
        Ok(self.margin(&x.0))
    }

    /// Unchecked [`ProblemSpec::target_margin`] for hot loops.
    #[inline]
    pub fn margin(&self, x: &[f64; STATE_DIM]) -> f64 {
        x[0].hypot(x[1]) - self.beta
    }

    /// Vector field `f(x, u, d)` with bound checks on both inputs.
    pub fn dynamics(&self, x: &StateVec, u: f64, d: f64) -> Result<[f64; STATE_DIM]> {
        let tol = 1e-12 * self.omega_max.max(1.0);
        if !(u.abs() <= self.omega_max + tol) {
            return Err(Error::invalid(format!("control {u} exceeds bound {}", self.omega_max)));
        }
        if !(d.abs() <= self.omega_max + tol) {
            return Err(Error::invalid(format!(
                "disturbance {d} exceeds bound {}",
                self.omega_max
            )));
        }
        Ok(self.flow(&x.0, u, d))
    }

    /// Unchecked vector field.
    #[inline]
    pub fn flow(&self, x: &[f64; STATE_DIM], u: f64, d: f64) -> [f64; STATE_DIM] {
        match self.dynamics {
            DynamicsKind::Zero => [0.0; STATE_DIM],
            DynamicsKind::Air3d => {
                let (s, c) = x[2].sin_cos();
                [-self.v_e + self.v_p * c + u * x[1], self.v_p * s - u * x[0], d - u]
            }
        }
    }

    /// Closed-form `sup_u inf_d <p, f(x, u, d)>`.
    #[inline]
    pub fn hamiltonian(&self, x: &[f64; STATE_DIM], p: &Costate) -> f64 {
        match self.dynamics {
            DynamicsKind::Zero => 0.0,
            DynamicsKind::Air3d => {
                let [p1, p2, p3] = p.0;
                let (s, c) = x[2].sin_cos();
                p1 * (-self.v_e + self.v_p * c)
                    + p2 * self.v_p * s
                    + self.omega_max * (p1 * x[1] - p2 * x[0] - p3).abs()
                    - self.omega_max * p3.abs()
            }
        }
    }

    /// Closed-form Hamiltonian taking a [`StateVec`].
    pub fn hamiltonian_closed_form(&self, x: &StateVec, p: &Costate) -> f64 {
        self.hamiltonian(&x.0, p)
    }

    /// Brute-force `max_u min_d <p, f>` over evenly spaced input grids.
    pub fn hamiltonian_bruteforce(&self, x: &StateVec, p: &Costate, n_u: usize, n_d: usize) -> Result<f64> {
        if n_u < 2 || n_d < 2 {
            return Err(Error::invalid("input grids need at least two points"));
        }
        let grid = |n: usize, k: usize| -self.omega_max + 2.0 * self.omega_max * k as f64 / (n - 1) as f64;
        let mut best = f64::NEG_INFINITY;
        for iu in 0..n_u {
            let u = grid(n_u, iu);
            let mut worst = f64::INFINITY;
            for id in 0..n_d {
                let d = grid(n_d, id);
                worst = worst.min(p.dot(&self.flow(&x.0, u, d)));
            }
            best = best.max(worst);
        }
        Ok(best)
    }

    /// Saddle inputs attaining the closed-form Hamiltonian; `sign(0) = +1`.
    pub fn optimal_inputs(&self, x: &StateVec, p: &Costate) -> (f64, f64) {
        self.optimal_inputs_raw(&x.0, p)
    }

    #[inline]
    pub fn optimal_inputs_raw(&self, x: &[f64; STATE_DIM], p: &Costate) -> (f64, f64) {
        let [p1, p2, p3] = p.0;
        let u = self.omega_max * sign(p1 * x[1] - p2 * x[0] - p3);
        let d = -self.omega_max * sign(p3);
        (u, d)
    }

    /// `dH/dp` at a point where the closed form is differentiable; equals
    /// `f(x, u*, d*)` by the envelope property of the saddle inputs.
    #[inline]
    pub fn hamiltonian_costate_gradient(&self, x: &[f64; STATE_DIM], p: &Costate) -> [f64; STATE_DIM] {
        let (u, d) = self.optimal_inputs_raw(x, p);
        self.flow(x, u, d)
    }

    /// Global bounds `alpha_i >= sup |dH/dp_i|` over the state box.
    /// Bounds on `|dH/dp_i|` over all costates at the single state `x`.
    /// Never larger than [`Self::costate_partial_bounds`] inside the box.
    pub fn costate_partial_bounds_at(&self, x: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        match self.dynamics {
            DynamicsKind::Zero => [0.0; STATE_DIM],
            DynamicsKind::Air3d => {
                let (s, c) = x[2].sin_cos();
                [
                    (-self.v_e + self.v_p * c).abs() + self.omega_max * x[1].abs(),
                    (self.v_p * s).abs() + self.omega_max * x[0].abs(),
                    2.0 * self.omega_max,
                ]
            }
        }
    }

    pub fn costate_partial_bounds(&self) -> [f64; STATE_DIM] {
        match self.dynamics {
            DynamicsKind::Zero => [0.0; STATE_DIM],
            DynamicsKind::Air3d => {
                let x1_max = self.state_lo[0].abs().max(self.state_hi[0].abs());
                let x2_max = self.state_lo[1].abs().max(self.state_hi[1].abs());
                // |-v_e + v_p cos| peaks at cos = +-1 on a full heading circle
                let drift = (-self.v_e + self.v_p).abs().max((-self.v_e - self.v_p).abs());
                [
                    drift + self.omega_max * x2_max,
                    self.v_p.abs() + self.omega_max * x1_max,
                    2.0 * self.omega_max,
                ]
            }
        }
    }

    /// Upper bound on the Lipschitz constant of `x -> ||f(x, u, d)||`,
    /// uniform over admissible inputs (Frobenius norm of `df/dx`).
    pub fn flow_state_lipschitz(&self) -> f64 {
        match self.dynamics {
            DynamicsKind::Zero => 0.0,
            DynamicsKind::Air3d => (2.0 * self.omega_max * self.omega_max + self.v_p * self.v_p).sqrt(),
        }
    }

    pub fn scaling(&self) -> Scaling {
        let mut center = [0.0; STATE_DIM];
        let mut half = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            center[i] = 0.5 * (self.state_lo[i] + self.state_hi[i]);
            half[i] = 0.5 * (self.state_hi[i] - self.state_lo[i]);
        }
        Scaling {
            center,
            half_width: half,
            horizon: self.horizon,
        }
    }

    /// Maps a physical state into `[-1, 1]^n`, wrapping periodic coordinates.
    pub fn scale_state(&self, x: &StateVec) -> Result<[f64; STATE_DIM]> {
        self.check_in_box(x)?;
        Ok(self.scaling().scale(&self.canonical(x).0))
    }

    pub fn unscale_state(&self, z: &[f64; STATE_DIM]) -> StateVec {
        StateVec(self.scaling().unscale(z))
    }
}

#[inline]
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Affine map between the physical domain and the network's input box:
/// states to `[-1, 1]^n`, time to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub center: [f64; STATE_DIM],
    pub half_width: [f64; STATE_DIM],
    pub horizon: f64,
}

impl Scaling {
    #[inline]
    pub fn scale(&self, x: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        let mut z = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            z[i] = (x[i] - self.center[i]) / self.half_width[i];
        }
        z
    }

    #[inline]
    pub fn unscale(&self, z: &[f64; STATE_DIM]) -> [f64; STATE_DIM] {
        let mut x = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            x[i] = self.center[i] + self.half_width[i] * z[i];
        }
        x
    }

    #[inline]
    pub fn scale_time(&self, t: f64) -> f64 {
        t / self.horizon
    }

    #[inline]
    pub fn unscale_time(&self, s: f64) -> f64 {
        s * self.horizon
    }
}
