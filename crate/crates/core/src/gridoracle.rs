//! Dense-grid Lax-Friedrichs solver for the reachability variational
//! inequality, used as the reference value function.
//!
//! Marching backward from `V(T, .) = l`, each explicit step computes
//!
//! ```text
//! H_hat = H(x, (D+ + D-)/2) + sum_i alpha_i (D+_i - D-_i) / 2
//! V(t - dt) = min(V(t) + dt H_hat, l(x))
//! ```
//!
//! With `alpha_i >= sup |dH/dp_i|` and `dt sum_i alpha_i / dx_i <= 1` the
//! update is monotone, which is what makes the value non-increasing
//! backward in time.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{Costate, ProblemSpec, StateVec, STATE_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    pub periodic: bool,
}

impl GridAxis {
    /// Node spacing; periodic axes omit the duplicate endpoint.
    #[inline]
    pub fn spacing(&self) -> f64 {
        if self.periodic {
            (self.hi - self.lo) / self.points as f64
        } else {
            (self.hi - self.lo) / (self.points - 1) as f64
        }
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if !self.periodic && i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: [GridAxis; STATE_DIM],
}

impl GridSpec {
    /// Grid covering the problem's state box.
    pub fn for_problem(spec: &ProblemSpec, points: [usize; STATE_DIM]) -> Result<Self> {
        let axes = std::array::from_fn(|i| GridAxis {
            lo: spec.state_lo[i],
            hi: spec.state_hi[i],
            points: points[i],
            periodic: spec.periodic[i],
        });
        let grid = GridSpec { axes };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.axes.iter().enumerate() {
            if a.points < 3 {
                return Err(Error::schema(format!("grid.points[{i}]"), "need at least 3 points"));
            }
            if !(a.hi > a.lo) {
                return Err(Error::schema(format!("grid.axes[{i}]"), "empty axis"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; STATE_DIM] {
        std::array::from_fn(|i| self.axes[i].spacing())
    }

    pub fn strides(&self) -> [usize; STATE_DIM] {
        let n = self.axes.map(|a| a.points);
        [n[1] * n[2], n[2], 1]
    }

    #[inline]
    pub fn linear(&self, idx: [usize; STATE_DIM]) -> usize {
        let s = self.strides();
        idx[0] * s[0] + idx[1] * s[1] + idx[2]
    }

    #[inline]
    pub fn multi(&self, mut linear: usize) -> [usize; STATE_DIM] {
        let s = self.strides();
        let i0 = linear / s[0];
        linear %= s[0];
        [i0, linear / s[1], linear % s[1]]
    }

    #[inline]
    pub fn node(&self, linear: usize) -> [f64; STATE_DIM] {
        let idx = self.multi(linear);
        std::array::from_fn(|i| self.axes[i].node(idx[i]))
    }

    pub fn nodes(&self) -> impl Iterator<Item = [f64; STATE_DIM]> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    pub fn matches(&self, spec: &ProblemSpec) -> bool {
        (0..STATE_DIM).all(|i| {
            self.axes[i].lo == spec.state_lo[i]
                && self.axes[i].hi == spec.state_hi[i]
                && self.axes[i].periodic == spec.periodic[i]
        })
    }
}

/// Value array on a grid at one time, row-major in dimension order.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub time: f64,
    pub values: Vec<f64>,
}

/// Sublevel set `{V <= 0}` of a field.
#[derive(Clone, Debug, PartialEq)]
pub struct BrtMask {
    pub time: f64,
    pub mask: Vec<bool>,
}

impl BrtMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn volume_fraction(&self) -> f64 {
        self.count() as f64 / self.mask.len() as f64
    }
}

pub fn terminal_field(spec: &ProblemSpec, grid: &GridSpec) -> GridField {
    GridField {
        time: spec.horizon,
        values: grid.nodes().map(|x| spec.margin(&x)).collect(),
    }
}

/// Global Lax-Friedrichs dissipation coefficients.
pub fn dissipation_bounds(spec: &ProblemSpec, _grid: &GridSpec) -> [f64; STATE_DIM] {
    spec.costate_partial_bounds()
}

/// Largest stable step for a given CFL number; infinite when every
/// dissipation bound is zero.
pub fn stable_dt(spec: &ProblemSpec, grid: &GridSpec, cfl: f64) -> f64 {
    let alpha = dissipation_bounds(spec, grid);
    let dx = grid.spacing();
    let rate: f64 = (0..STATE_DIM).map(|i| alpha[i] / dx[i]).sum();
    if rate == 0.0 {
        f64::INFINITY
    } else {
        cfl / rate
    }
}

/// One-sided differences `(D-, D+)` along `axis` at `idx`. Non-periodic
/// faces use a constant ghost node, which keeps the update monotone.
#[inline]
fn one_sided(values: &[f64], grid: &GridSpec, idx: [usize; STATE_DIM], axis: usize, dx: f64) -> (f64, f64) {
    let a = &grid.axes[axis];
    let n = a.points;
    let stride = grid.strides()[axis];
    let here = grid.linear(idx);
    let i = idx[axis];
    let v = values[here];
    let prev = if i > 0 {
        Some(values[here - stride])
    } else if a.periodic {
        Some(values[here + (n - 1) * stride])
    } else {
        None
    };
    let next = if i + 1 < n {
        Some(values[here + stride])
    } else if a.periodic {
        Some(values[here - (n - 1) * stride])
    } else {
        None
    };
    // a missing neighbour is a ghost node holding the face value
    let p = prev.unwrap_or(v);
    let q = next.unwrap_or(v);
    ((v - p) / dx, (q - v) / dx)
}

/// One explicit backward step of size `dt`. Dissipation uses the bound on
/// `|dH/dp|` at each node, the CFL check the global bound.
pub fn step_backward(field: &GridField, spec: &ProblemSpec, grid: &GridSpec, dt: f64) -> Result<GridField> {
    if field.values.len() != grid.len() {
        return Err(Error::invalid("field size does not match grid"));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("time step {dt} must be positive")));
    }
    let alpha = dissipation_bounds(spec, grid);
    let dx = grid.spacing();
    let rate: f64 = (0..STATE_DIM).map(|i| alpha[i] / dx[i]).sum();
    if dt * rate > 1.0 + 1e-12 {
        return Err(Error::invalid(format!(
            "CFL violated: dt * sum(alpha/dx) = {} > 1",
            dt * rate
        )));
    }
    let values = &field.values;
    let row = grid.strides()[0];
    let mut next = vec![0.0; values.len()];
    next.par_chunks_mut(row).enumerate().for_each(|(i0, out)| {
        for (offset, slot) in out.iter_mut().enumerate() {
            let lin = i0 * row + offset;
            let idx = grid.multi(lin);
            let x: [f64; STATE_DIM] = std::array::from_fn(|i| grid.axes[i].node(idx[i]));
            let alpha = spec.costate_partial_bounds_at(&x);
            let mut p = [0.0; STATE_DIM];
            let mut dissipation = 0.0;
            for axis in 0..STATE_DIM {
                let (dm, dp) = one_sided(values, grid, idx, axis, dx[axis]);
                p[axis] = 0.5 * (dm + dp);
                dissipation += 0.5 * alpha[axis] * (dp - dm);
            }
            let h_hat = spec.hamiltonian(&x, &Costate(p)) + dissipation;
            let relaxed = values[lin] + dt * h_hat;
            *slot = relaxed.min(spec.margin(&x));
        }
    });
    Ok(GridField {
        time: field.time - dt,
        values: next,
    })
}

/// Integrates backward from the terminal field and returns the field at
/// each requested time (descending, within `[0, T]`).
pub fn solve_hji(spec: &ProblemSpec, grid: &GridSpec, t_samples: &[f64], cfl: f64) -> Result<Vec<GridField>> {
    if !(cfl > 0.0 && cfl < 1.0) {
        return Err(Error::invalid(format!("CFL number {cfl} must lie in (0, 1)")));
    }
    grid.validate()?;
    if t_samples.is_empty() {
        return Err(Error::invalid("no output times requested"));
    }
    for w in t_samples.windows(2) {
        if !(w[1] < w[0]) {
            return Err(Error::invalid("output times must be strictly descending"));
        }
    }
    let horizon = spec.horizon;
    if t_samples.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(Error::invalid(format!("output times must lie in [0, {horizon}]")));
    }
    let dt_max = stable_dt(spec, grid, cfl);
    let mut field = terminal_field(spec, grid);
    let mut out = Vec::with_capacity(t_samples.len());
    for &target in t_samples {
        while field.time > target {
            let remaining = field.time - target;
            // land exactly on the requested time
            let (dt, exact) = if remaining <= dt_max * (1.0 + 1e-9) {
                (remaining, true)
            } else {
                (dt_max, false)
            };
            field = step_backward(&field, spec, grid, dt.min(dt_max))?;
            if exact {
                field.time = target;
            }
        }
        out.push(field.clone());
    }
    Ok(out)
}

/// Snaps cell coordinates within rounding distance of a node onto it, so
/// node queries return stored values exactly.
#[inline]
fn snap(s: f64) -> f64 {
    let r = s.round();
    if (s - r).abs() <= 1e-9 {
        r
    } else {
        s
    }
}

#[inline]
fn locate(axis: &GridAxis, x: f64) -> Result<(usize, usize, f64)> {
    let n = axis.points;
    let h = axis.spacing();
    if axis.periodic {
        let s = snap((x - axis.lo) / h).rem_euclid(n as f64);
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        Ok((i, (i + 1) % n, frac))
    } else {
        if !(x >= axis.lo && x <= axis.hi) {
            return Err(Error::range(format!("{x} outside [{}, {}]", axis.lo, axis.hi)));
        }
        let s = snap((x - axis.lo) / h);
        let i = (s.floor() as usize).min(n - 2);
        Ok((i, i + 1, s - i as f64))
    }
}

/// Multilinear interpolation; periodic axes wrap.
pub fn interpolate(field: &GridField, grid: &GridSpec, x: &StateVec) -> Result<f64> {
    interpolate_values(&field.values, grid, &x.0)
}

pub(crate) fn interpolate_values(values: &[f64], grid: &GridSpec, x: &[f64; STATE_DIM]) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite query point"));
    }
    let loc: [(usize, usize, f64); STATE_DIM] = [
        locate(&grid.axes[0], x[0])?,
        locate(&grid.axes[1], x[1])?,
        locate(&grid.axes[2], x[2])?,
    ];
    let mut acc = 0.0;
    for corner in 0..(1 << STATE_DIM) {
        let mut w = 1.0;
        let mut idx = [0usize; STATE_DIM];
        for d in 0..STATE_DIM {
            let (i0, i1, f) = loc[d];
            if corner >> d & 1 == 1 {
                idx[d] = i1;
                w *= f;
            } else {
                idx[d] = i0;
                w *= 1.0 - f;
            }
        }
        if w != 0.0 {
            acc += w * values[grid.linear(idx)];
        }
    }
    Ok(acc)
}

/// Central-difference costate of the interpolated field at `x`, one node
/// spacing wide; sides are clipped to the box on non-periodic axes.
pub fn gradient(field: &GridField, grid: &GridSpec, x: &StateVec) -> Result<Costate> {
    gradient_values(&field.values, grid, &x.0)
}

pub(crate) fn gradient_values(values: &[f64], grid: &GridSpec, x: &[f64; STATE_DIM]) -> Result<Costate> {
    let mut p = [0.0; STATE_DIM];
    for d in 0..STATE_DIM {
        let axis = &grid.axes[d];
        let h = axis.spacing();
        let (mut lo, mut hi) = (x[d] - h, x[d] + h);
        if !axis.periodic {
            if !(x[d] >= axis.lo && x[d] <= axis.hi) {
                return Err(Error::range(format!("{} outside [{}, {}]", x[d], axis.lo, axis.hi)));
            }
            lo = lo.max(axis.lo);
            hi = hi.min(axis.hi);
        }
        let mut xm = *x;
        let mut xp = *x;
        xm[d] = lo;
        xp[d] = hi;
        p[d] = (interpolate_values(values, grid, &xp)? - interpolate_values(values, grid, &xm)?) / (hi - lo);
    }
    Ok(Costate(p))
}

pub fn extract_brt(field: &GridField) -> BrtMask {
    BrtMask {
        time: field.time,
        mask: field.values.iter().map(|&v| v <= 0.0).collect(),
    }
}

/// Oracle fields at several times with linear interpolation between them.
#[derive(Clone, Debug)]
pub struct OracleTube {
    pub grid: GridSpec,
    /// Strictly descending in time.
    pub fields: Vec<GridField>,
}

impl OracleTube {
    pub fn new(grid: GridSpec, mut fields: Vec<GridField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::invalid("oracle tube needs at least one field"));
        }
        fields.sort_by(|a, b| b.time.total_cmp(&a.time));
        for f in &fields {
            if f.values.len() != grid.len() {
                return Err(Error::invalid("field size does not match grid"));
            }
        }
        Ok(OracleTube { grid, fields })
    }

    /// Bracketing fields and the weight on the later one.
    fn bracket(&self, t: f64) -> Result<(usize, usize, f64)> {
        let first = self.fields[0].time;
        let last = self.fields[self.fields.len() - 1].time;
        let tol = 1e-9;
        if t > first + tol || t < last - tol {
            return Err(Error::range(format!("time {t} outside oracle span [{last}, {first}]")));
        }
        if self.fields.len() == 1 {
            return Ok((0, 0, 1.0));
        }
        for k in 0..self.fields.len() - 1 {
            let (hi, lo) = (self.fields[k].time, self.fields[k + 1].time);
            if t >= lo - tol {
                let w = ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
                return Ok((k, k + 1, w));
            }
        }
        let n = self.fields.len() - 1;
        Ok((n, n, 1.0))
    }

    pub fn value(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<f64> {
        let (a, b, w) = self.bracket(t)?;
        let va = interpolate_values(&self.fields[a].values, &self.grid, x)?;
        if a == b {
            return Ok(va);
        }
        let vb = interpolate_values(&self.fields[b].values, &self.grid, x)?;
        Ok(w * va + (1.0 - w) * vb)
    }

    pub fn costate(&self, t: f64, x: &[f64; STATE_DIM]) -> Result<Costate> {
        let (a, b, w) = self.bracket(t)?;
        let pa = gradient_values(&self.fields[a].values, &self.grid, x)?;
        if a == b {
            return Ok(pa);
        }
        let pb = gradient_values(&self.fields[b].values, &self.grid, x)?;
        Ok(Costate(std::array::from_fn(|i| w * pa.0[i] + (1.0 - w) * pb.0[i])))
    }

    pub fn field_at(&self, t: f64) -> Option<&GridField> {
        self.fields.iter().find(|f| (f.time - t).abs() <= 1e-9)
    }
}

pub const FIELD_HEADER: &str = "t,x1,x2,theta,v";
pub const MASK_HEADER: &str = "t,x1,x2,theta,inside";

pub fn field_csv(field: &GridField, grid: &GridSpec) -> String {
    let mut out = String::with_capacity(field.values.len() * 48);
    out.push_str(FIELD_HEADER);
    out.push('\n');
    for (i, v) in field.values.iter().enumerate() {
        let x = grid.node(i);
        let _ = writeln!(out, "{},{},{},{},{}", field.time, x[0], x[1], x[2], v);
    }
    out
}

pub fn mask_csv(mask: &BrtMask, grid: &GridSpec) -> String {
    let mut out = String::with_capacity(mask.mask.len() * 40);
    out.push_str(MASK_HEADER);
    out.push('\n');
    for (i, &b) in mask.mask.iter().enumerate() {
        let x = grid.node(i);
        let _ = writeln!(out, "{},{},{},{},{}", mask.time, x[0], x[1], x[2], u8::from(b));
    }
    out
}

/// Parses a field written by [`field_csv`], checking node coordinates
/// against `grid`.
pub fn parse_field_csv(text: &str, grid: &GridSpec) -> Result<GridField> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == FIELD_HEADER => {}
        other => {
            return Err(Error::schema(
                "header",
                format!("expected `{FIELD_HEADER}`, found {other:?}"),
            ))
        }
    }
    let mut values = Vec::with_capacity(grid.len());
    let mut time = None;
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(Error::schema(format!("row {row}"), "expected 5 columns"));
        }
        let parse = |s: &str, col: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::schema(format!("row {row}.{col}"), e.to_string()))
        };
        let t = parse(cols[0], "t")?;
        match time {
            None => time = Some(t),
            Some(t0) if t0 != t => return Err(Error::schema(format!("row {row}.t"), "mixed times in one field")),
            _ => {}
        }
        if values.len() >= grid.len() {
            return Err(Error::schema(format!("row {row}"), "more rows than grid nodes"));
        }
        let node = grid.node(values.len());
        for d in 0..STATE_DIM {
            let c = parse(cols[d + 1], ["x1", "x2", "theta"][d])?;
            if (c - node[d]).abs() > 1e-9 * (1.0 + node[d].abs()) {
                return Err(Error::schema(
                    format!("row {row}"),
                    "node coordinates do not match grid",
                ));
            }
        }
        values.push(parse(cols[4], "v")?);
    }
    if values.len() != grid.len() {
        return Err(Error::schema(
            "rows",
            format!("{} rows for a grid of {} nodes", values.len(), grid.len()),
        ));
    }
    Ok(GridField {
        time: time.unwrap_or(0.0),
        values,
    })
}

/// Sidecar metadata for exported oracle fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleMeta {
    pub grid: GridSpec,
    pub problem: ProblemSpec,
    pub spec_hash: String,
    pub cfl: f64,
    pub times: Vec<f64>,
    pub files: Vec<String>,
}

/// File name used for the field at time `t`.
pub fn field_file_name(t: f64) -> String {
    format!("field_t{t}.csv")
}

pub fn mask_file_name(t: f64) -> String {
    format!("brt_t{t}.csv")
}

/// Writes fields, BRT masks and `meta.json` into `dir`.
pub fn export_oracle(
    dir: &Path,
    spec: &ProblemSpec,
    grid: &GridSpec,
    fields: &[GridField],
    cfl: f64,
) -> Result<OracleMeta> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for f in fields {
        let name = field_file_name(f.time);
        fs::write(dir.join(&name), field_csv(f, grid))?;
        files.push(name);
        let mname = mask_file_name(f.time);
        fs::write(dir.join(&mname), mask_csv(&extract_brt(f), grid))?;
        files.push(mname);
    }
    let meta = OracleMeta {
        grid: grid.clone(),
        problem: spec.clone(),
        spec_hash: spec.content_hash(),
        cfl,
        times: fields.iter().map(|f| f.time).collect(),
        files,
    };
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    fs::write(dir.join("meta.json"), text)?;
    Ok(meta)
}

/// Reads a directory written by [`export_oracle`].
pub fn load_oracle(dir: &Path) -> Result<(OracleMeta, OracleTube)> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let meta: OracleMeta = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::schema(format!("meta.json:{}", e.path()), e.into_inner().to_string()))?;
    if meta.spec_hash != meta.problem.content_hash() {
        return Err(Error::schema(
            "meta.json:spec_hash",
            "hash does not match the stored problem",
        ));
    }
    let mut fields = Vec::with_capacity(meta.times.len());
    for &t in &meta.times {
        let csv = fs::read_to_string(dir.join(field_file_name(t)))?;
        fields.push(parse_field_csv(&csv, &meta.grid)?);
    }
    let tube = OracleTube::new(meta.grid.clone(), fields)?;
    Ok((meta, tube))
}
