//! Small-noise jump SDEs `dX = b(X) dt + ε ∫ G(X(s−), y) N^{1/ε}(dy, ds)`,
//! their fluid limits and the rescaled fluctuation `Y = (X − X⁰)/a(ε)`.
//!
//! Paths are advanced by RK4 between breakpoints; jump times are breakpoints,
//! so every jump is applied at its exact time using the left limit of the
//! state. Output is sampled on a uniform grid with the left-limit convention.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{param, Error, Result};
use crate::mark_space::{MarkFunction, MarkMeasure};
use crate::ode::Rk4;
use crate::prm::{self, ControlField, CostReport, Event, PointRealization};
use crate::rng;

/// Coefficients of a jump SDE. Matrices are written row-major into `out`
/// (`out[i * d + j] = ∂f_i/∂x_j`).
pub trait Dynamics: Send + Sync {
    /// State dimension `d`.
    fn dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut [f64]);
    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]);
    /// `G(x, y)` for the atom `atom` with coordinates `mark`.
    fn jump(&self, x: &[f64], atom: usize, mark: &[f64], out: &mut [f64]);
    fn jump_jacobian(&self, x: &[f64], atom: usize, mark: &[f64], out: &mut [f64]);
}

/// Lipschitz and growth witnesses a model declares for itself. They are
/// recorded for reporting and never enforced.
#[derive(Clone, Debug, Default)]
pub struct DeclaredBounds {
    pub lipschitz_drift: Option<f64>,
    pub lipschitz_jump: Option<MarkFunction>,
    pub growth_jump: Option<MarkFunction>,
}

/// A model: dynamics, mark measure, initial point and horizon.
#[derive(Clone)]
pub struct ModelSpec {
    pub dynamics: Arc<dyn Dynamics>,
    pub measure: MarkMeasure,
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub bounds: DeclaredBounds,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("dim", &self.dim())
            .field("atoms", &self.measure.len())
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl ModelSpec {
    pub fn new(dynamics: Arc<dyn Dynamics>, measure: MarkMeasure, x0: Vec<f64>, horizon: f64) -> Result<Self> {
        if x0.len() != dynamics.dim() {
            return Err(Error::Dimension {
                expected: dynamics.dim(),
                got: x0.len(),
            });
        }
        if !(horizon > 0.0) {
            return Err(param("horizon", "must be positive"));
        }
        Ok(Self {
            dynamics,
            measure,
            x0,
            horizon,
            bounds: DeclaredBounds::default(),
        })
    }

    pub fn with_bounds(mut self, bounds: DeclaredBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    /// `G(x, y_k)`.
    pub fn jump_at(&self, x: &[f64], atom: usize, out: &mut [f64]) {
        self.dynamics.jump(x, atom, self.measure.mark(atom), out);
    }

    /// `∫ G(x, y) ν(dy)` accumulated into `out` (overwritten).
    pub fn compensator(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.measure.len() {
            let w = self.measure.weight(k);
            self.jump_at(x, k, scratch);
            for (o, g) in out.iter_mut().zip(scratch.iter()) {
                *o += w * g;
            }
        }
    }

    /// Compares the analytic Jacobians against central finite differences
    /// with step `1e-5` at the given points. Returns the largest normalized
    /// mismatch `‖D − FD‖ / (1 + ‖D‖)` over drift and all atoms.
    pub fn derivative_mismatch(&self, points: &[Vec<f64>]) -> f64 {
        const STEP: f64 = 1e-5;
        let d = self.dim();
        let mut worst = 0.0f64;
        let mut jac = vec![0.0; d * d];
        let mut fd = vec![0.0; d * d];
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        let mut xp = vec![0.0; d];
        let mut compare = |jac: &[f64], fd: &[f64]| {
            let num: f64 = jac.iter().zip(fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = 1.0 + jac.iter().map(|a| a * a).sum::<f64>().sqrt();
            worst = worst.max(num / den);
        };
        for x in points {
            self.dynamics.drift_jacobian(x, &mut jac);
            for j in 0..d {
                xp.copy_from_slice(x);
                xp[j] = x[j] + STEP;
                self.dynamics.drift(&xp, &mut fp);
                xp[j] = x[j] - STEP;
                self.dynamics.drift(&xp, &mut fm);
                for i in 0..d {
                    fd[i * d + j] = (fp[i] - fm[i]) / (2.0 * STEP);
                }
            }
            compare(&jac, &fd);
            for k in 0..self.measure.len() {
                let mark = self.measure.mark(k);
                self.dynamics.jump_jacobian(x, k, mark, &mut jac);
                for j in 0..d {
                    xp.copy_from_slice(x);
                    xp[j] = x[j] + STEP;
                    self.dynamics.jump(&xp, k, mark, &mut fp);
                    xp[j] = x[j] - STEP;
                    self.dynamics.jump(&xp, k, mark, &mut fm);
                    for i in 0..d {
                        fd[i * d + j] = (fp[i] - fm[i]) / (2.0 * STEP);
                    }
                }
                compare(&jac, &fd);
            }
        }
        worst
    }

    /// Finite-difference check at `n_points` points drawn uniformly from the
    /// cube `x0 ± radius`; fails when the mismatch exceeds `1e-5`.
    pub fn check_derivatives(&self, n_points: usize, radius: f64, seed: u64) -> Result<f64> {
        use rand::Rng;
        let mut rng = rng::stream(seed, 0);
        let points: Vec<Vec<f64>> = (0..n_points)
            .map(|_| self.x0.iter().map(|c| c + rng.random_range(-radius..=radius)).collect())
            .collect();
        let worst = self.derivative_mismatch(&points);
        if worst <= 1e-5 {
            Ok(worst)
        } else {
            Err(Error::Domain(format!(
                "analytic Jacobian disagrees with finite differences (mismatch {worst:.3e})"
            )))
        }
    }
}

/// `ε`, `a(ε)` and `b(ε) = ε / a(ε)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSchedule {
    pub eps: f64,
    pub a_eps: f64,
    pub b_eps: f64,
}

impl ScalingSchedule {
    /// `a(ε) = ε^ρ` for `ρ ∈ (0, 1/2)`.
    pub fn power(eps: f64, rho: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(param("eps", "must be positive"));
        }
        if !(rho > 0.0 && rho < 0.5) {
            return Err(param("rho", "must lie in (0, 1/2)"));
        }
        let a_eps = eps.powf(rho);
        Ok(Self {
            eps,
            a_eps,
            b_eps: eps / (a_eps * a_eps),
        })
    }

    /// Default `a(ε) = ε^{1/4}`, so `b(ε) = √ε`.
    pub fn default_for(eps: f64) -> Result<Self> {
        Self::power(eps, 0.25)
    }

    /// Schedules along a strictly decreasing `ε` grid; checks that `a` and `b`
    /// decrease along it.
    pub fn grid(eps: &[f64], rho: f64) -> Result<Vec<Self>> {
        let out: Vec<Self> = eps.iter().map(|&e| Self::power(e, rho)).collect::<Result<_>>()?;
        for w in out.windows(2) {
            if !(w[1].eps < w[0].eps) {
                return Err(param("eps grid", "must be strictly decreasing"));
            }
            if !(w[1].a_eps < w[0].a_eps && w[1].b_eps < w[0].b_eps) {
                return Err(param("eps grid", "a(eps) and b(eps) must decrease"));
            }
        }
        Ok(out)
    }
}

/// Values of a path on the uniform grid `t_i = i T / n`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    horizon: f64,
    n_steps: usize,
    dim: usize,
    values: Vec<f64>,
}

impl PathGrid {
    pub fn new(horizon: f64, n_steps: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if n_steps == 0 {
            return Err(param("n_steps", "must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(param("horizon", "must be positive"));
        }
        if values.len() != (n_steps + 1) * dim {
            return Err(Error::Dimension {
                expected: (n_steps + 1) * dim,
                got: values.len(),
            });
        }
        Ok(Self {
            horizon,
            n_steps,
            dim,
            values,
        })
    }

    pub fn zeros(horizon: f64, n_steps: usize, dim: usize) -> Self {
        Self {
            horizon,
            n_steps,
            dim,
            values: vec![0.0; (n_steps + 1) * dim],
        }
    }

    /// Samples `f(t)` at the grid nodes.
    pub fn from_fn(horizon: f64, n_steps: usize, dim: usize, f: impl Fn(f64, &mut [f64])) -> Self {
        let mut p = Self::zeros(horizon, n_steps, dim);
        for i in 0..=n_steps {
            let t = p.time(i);
            f(t, p.value_mut(i));
        }
        p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        node_time(self.horizon, self.n_steps, i)
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.n_steps)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_grid(&self, other: &PathGrid) -> bool {
        self.n_steps == other.n_steps
            && self.dim == other.dim
            && (self.horizon - other.horizon).abs() <= 1e-12 * self.horizon
    }

    pub(crate) fn require_same_grid(&self, other: &PathGrid) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "({}, {} steps, dim {}) vs ({}, {} steps, dim {})",
                self.horizon, self.n_steps, self.dim, other.horizon, other.n_steps, other.dim
            )))
        }
    }

    /// `sup_i |x_i − y_i|` (Euclidean norm per node).
    pub fn sup_distance(&self, other: &PathGrid) -> Result<f64> {
        self.require_same_grid(other)?;
        Ok((0..=self.n_steps)
            .map(|i| euclid_dist(self.value(i), other.value(i)))
            .fold(0.0, f64::max))
    }

    /// `sup_i |x_i|`.
    pub fn sup_norm(&self) -> f64 {
        (0..=self.n_steps)
            .map(|i| self.value(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Pointwise linear combination `α self + β other`.
    pub fn combine(&self, alpha: f64, other: &PathGrid, beta: f64) -> Result<PathGrid> {
        self.require_same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        Ok(PathGrid { values, ..*self })
    }
}

pub(crate) fn node_time(horizon: f64, n: usize, i: usize) -> f64 {
    if i == n {
        horizon
    } else {
        horizon * i as f64 / n as f64
    }
}

fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Integrated quantities recorded at the grid nodes alongside a path.
pub(crate) struct EngineOutput {
    pub path: PathGrid,
    /// `(n+1) × extra_dim` running integrals of the auxiliary field.
    pub extra: Vec<f64>,
    /// `(n+1) × d` running sums of the applied jumps.
    pub jumps: Vec<f64>,
}

/// Shared path engine. Between breakpoints (grid nodes, event times and the
/// extra `breaks`) the augmented state `(x, q)` follows
/// `ẋ = drift(x)`, `q̇ = aux(t_mid, x)` under RK4, where `t_mid` is the
/// midpoint of the current sub-step. At an event the state jumps by
/// `jump_scale · jump(x(s−), atom)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_engine<D, J, A>(
    x0: &[f64],
    horizon: f64,
    n_steps: usize,
    events: &[Event],
    jump_scale: f64,
    breaks: &[f64],
    drift: D,
    jump: J,
    aux_dim: usize,
    aux: A,
) -> Result<EngineOutput>
where
    D: Fn(&[f64], &mut [f64]),
    J: Fn(&[f64], usize, &mut [f64]),
    A: Fn(f64, &[f64], &mut [f64]),
{
    if n_steps == 0 {
        return Err(param("n_steps", "must be positive"));
    }
    let d = x0.len();
    let mut path = PathGrid::zeros(horizon, n_steps, d);
    let mut extra = vec![0.0; (n_steps + 1) * aux_dim];
    let mut jumps = vec![0.0; (n_steps + 1) * d];
    let mut y = vec![0.0; d + aux_dim];
    y[..d].copy_from_slice(x0);
    let mut jump_acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut rk = Rk4::new(d + aux_dim);

    path.value_mut(0).copy_from_slice(x0);
    let mut t = 0.0;
    let (mut i, mut j, mut b) = (1usize, 0usize, 0usize);
    while b < breaks.len() && breaks[b] <= 0.0 {
        b += 1;
    }
    while i <= n_steps {
        let tn = node_time(horizon, n_steps, i);
        let te = events.get(j).map_or(f64::INFINITY, |e| e.time);
        let tb = breaks.get(b).copied().unwrap_or(f64::INFINITY);
        let target = tn.min(te).min(tb);
        if target > t {
            let t_mid = 0.5 * (t + target);
            let mut field = |s: &[f64], ds: &mut [f64]| {
                let (x, _) = s.split_at(d);
                let (dx, dq) = ds.split_at_mut(d);
                drift(x, dx);
                aux(t_mid, x, dq);
            };
            rk.step(&mut field, &mut y, target - t);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::Integration { time: target });
            }
            t = target;
        }
        if target == tn {
            path.value_mut(i).copy_from_slice(&y[..d]);
            extra[i * aux_dim..(i + 1) * aux_dim].copy_from_slice(&y[d..]);
            jumps[i * d..(i + 1) * d].copy_from_slice(&jump_acc);
            i += 1;
        }
        while j < events.len() && events[j].time <= target {
            jump(&y[..d], events[j].atom, &mut g);
            for k in 0..d {
                let inc = jump_scale * g[k];
                y[k] += inc;
                jump_acc[k] += inc;
            }
            j += 1;
        }
        while b < breaks.len() && breaks[b] <= target {
            b += 1;
        }
    }
    Ok(EngineOutput { path, extra, jumps })
}

fn check_events(model: &ModelSpec, events: &PointRealization) -> Result<()> {
    for e in &events.events {
        if !(e.time >= 0.0 && e.time <= model.horizon) {
            return Err(Error::EventOutOfRange {
                time: e.time,
                horizon: model.horizon,
            });
        }
        if e.atom >= model.measure.len() {
            return Err(Error::BadAtomIndex {
                atom: e.atom,
                n_atoms: model.measure.len(),
            });
        }
    }
    Ok(())
}

/// Integrates `X^ε` driven by the given realization of `N^{1/ε}`.
pub fn integrate_xeps(model: &ModelSpec, eps: f64, events: &PointRealization, n_steps: usize) -> Result<PathGrid> {
    Ok(integrate_xeps_audited(model, eps, events, n_steps)?.0)
}

/// As [`integrate_xeps`], also returning the running sum `ε Σ G(X(s−), y)` of
/// applied jumps at each grid node.
pub fn integrate_xeps_audited(
    model: &ModelSpec,
    eps: f64,
    events: &PointRealization,
    n_steps: usize,
) -> Result<(PathGrid, PathGrid)> {
    if !(eps > 0.0) {
        return Err(param("eps", "must be positive"));
    }
    check_events(model, events)?;
    let dyn_ = &model.dynamics;
    let out = run_engine(
        &model.x0,
        model.horizon,
        n_steps,
        &events.events,
        eps,
        &[],
        |x, dx| dyn_.drift(x, dx),
        |x, k, g| model.jump_at(x, k, g),
        0,
        |_, _, _| {},
    )?;
    let jumps = PathGrid::new(model.horizon, n_steps, model.dim(), out.jumps)?;
    Ok((out.path, jumps))
}

/// Fluid limit `X⁰` and `m_T = sup_t |X⁰(t)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidLimit {
    pub path: PathGrid,
    pub sup_norm: f64,
}

/// Solves `ẋ = b(x) + ∫ G(x, y) ν(dy)` by RK4.
pub fn fluid_limit(model: &ModelSpec, n_steps: usize) -> Result<FluidLimit> {
    let d = model.dim();
    let dyn_ = &model.dynamics;
    let scratch = core::cell::RefCell::new((vec![0.0; d], vec![0.0; d]));
    let out = run_engine(
        &model.x0,
        model.horizon,
        n_steps,
        &[],
        0.0,
        &[],
        |x, dx| {
            let mut s = scratch.borrow_mut();
            let (comp, g) = &mut *s;
            dyn_.drift(x, dx);
            model.compensator(x, comp, g);
            for (a, c) in dx.iter_mut().zip(comp.iter()) {
                *a += c;
            }
        },
        |_, _, _| {},
        0,
        |_, _, _| {},
    )?;
    let sup_norm = out.path.sup_norm();
    Ok(FluidLimit {
        path: out.path,
        sup_norm,
    })
}

/// `(X^ε − X⁰) / a(ε)` pointwise.
pub fn rescale_yeps(xeps: &PathGrid, x0path: &PathGrid, a_eps: f64) -> Result<PathGrid> {
    if !(a_eps > 0.0) {
        return Err(param("a_eps", "must be positive"));
    }
    xeps.combine(1.0 / a_eps, x0path, -1.0 / a_eps)
}

/// Samples `N^{φ/ε}` for the tilt in `ctrl` and integrates the controlled
/// process. Also returns the sampled realization and the control's cost.
pub fn integrate_controlled_xeps(
    model: &ModelSpec,
    eps: f64,
    ctrl: &ControlField,
    seed: u64,
    n_steps: usize,
) -> Result<(PathGrid, CostReport, PointRealization)> {
    if !(eps > 0.0) {
        return Err(param("eps", "must be positive"));
    }
    let events = prm::sample_controlled_prm(&model.measure, 1.0 / eps, ctrl, seed)?;
    let path = integrate_xeps(model, eps, &events, n_steps)?;
    let cost = prm::cost_lt(ctrl, &model.measure)?;
    Ok((path, cost, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::AffineTanh;
    use approx::assert_relative_eq;

    fn scalar(kappa: f64, x0: f64, nu: MarkMeasure) -> ModelSpec {
        let dynamics = AffineTanh::scalar(kappa, 1.0);
        ModelSpec::new(Arc::new(dynamics), nu, vec![x0], 1.0).unwrap()
    }

    fn realization(times: &[(f64, usize)], horizon: f64) -> PointRealization {
        let ev = times.iter().map(|&(time, atom)| Event { time, atom }).collect();
        PointRealization::new(ev, horizon, 1.0, usize::MAX).unwrap()
    }

    #[test]
    fn no_events_zero_drift_is_constant() {
        let m = scalar(0.0, 0.7, MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let p = integrate_xeps(&m, 0.1, &PointRealization::empty(1.0, 10.0), 50).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn single_jump_is_applied_at_its_time() {
        let m = scalar(0.0, 0.0, MarkMeasure::scalar(&[(2.0, 1.0)]).unwrap());
        let ev = realization(&[(0.33, 0)], 1.0);
        let p = integrate_xeps(&m, 0.1, &ev, 100).unwrap();
        for i in 0..=100 {
            let expect = if p.time(i) > 0.33 { 0.2 } else { 0.0 };
            assert!((p.value(i)[0] - expect).abs() < 1e-15, "node {i}");
        }
    }

    #[test]
    fn jump_at_node_uses_left_limit() {
        let m = scalar(0.0, 0.0, MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let ev = realization(&[(0.5, 0)], 1.0);
        let p = integrate_xeps(&m, 1.0, &ev, 4).unwrap();
        assert_eq!(p.value(2)[0], 0.0);
        assert_eq!(p.value(3)[0], 1.0);
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let m = scalar(1.0, 1.3, MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let p = integrate_xeps(&m, 0.1, &PointRealization::empty(1.0, 10.0), 1000).unwrap();
        for i in 0..=1000 {
            assert!((p.value(i)[0] - 1.3 * (-p.time(i)).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn fluid_limit_linear_closed_form() {
        let m = scalar(1.0, 3.0, MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let f = fluid_limit(&m, 1000).unwrap();
        for i in 0..=1000 {
            let t = f.path.time(i);
            assert!((f.path.value(i)[0] - (1.0 + 2.0 * (-t).exp())).abs() < 1e-8);
        }
        assert_relative_eq!(f.sup_norm, 3.0, max_relative = 1e-15);
    }

    #[test]
    fn fluid_limit_rotation_preserves_norm() {
        let rot = AffineTanh::new(2, 1, vec![0.0, -1.0, 1.0, 0.0], 0.0, vec![0.0, 0.0], 0.0).unwrap();
        let m = ModelSpec::new(
            Arc::new(rot),
            MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap(),
            vec![1.0, 0.5],
            3.0,
        )
        .unwrap();
        let f = fluid_limit(&m, 1000).unwrap();
        let r0 = (1.25f64).sqrt();
        for i in 0..=1000 {
            let v = f.path.value(i);
            assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - r0).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_coefficients_give_constant_fluid() {
        let m = scalar(0.0, 0.4, MarkMeasure::scalar(&[(0.0, 1.0)]).unwrap());
        let f = fluid_limit(&m, 10).unwrap();
        assert!(f.path.values().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn rescale_examples() {
        let x = PathGrid::from_fn(1.0, 10, 1, |t, v| v[0] = t);
        assert!(rescale_yeps(&x, &x, 0.3).unwrap().values().iter().all(|&v| v == 0.0));
        let shifted = PathGrid::from_fn(1.0, 10, 1, |t, v| v[0] = t + 0.25);
        let y = rescale_yeps(&shifted, &x, 0.25).unwrap();
        assert!(y.values().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let zero = PathGrid::zeros(1.0, 10, 1);
        let y = rescale_yeps(&x, &zero, 0.5).unwrap();
        for i in 0..=10 {
            assert!((y.value(i)[0] - 2.0 * y.time(i)).abs() < 1e-15);
        }
        let other = PathGrid::zeros(1.0, 11, 1);
        assert!(matches!(rescale_yeps(&x, &other, 0.5), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn jump_bookkeeping_replays_exactly() {
        let m = scalar(0.0, 0.2, MarkMeasure::scalar(&[(1.0, 0.5), (-2.0, 0.5)]).unwrap());
        let ev = prm::sample_prm(&m.measure, 50.0, 1.0, 3).unwrap();
        let (p, jumps) = integrate_xeps_audited(&m, 0.02, &ev, 64).unwrap();
        let replay: f64 = ev.events.iter().map(|e| 0.02 * m.measure.mark(e.atom)[0]).sum();
        assert!((jumps.last()[0] - replay).abs() < 1e-12);
        assert!((p.last()[0] - 0.2 - jumps.last()[0]).abs() < 1e-12);
    }

    #[test]
    fn grid_refinement_is_stable() {
        let m = scalar(1.0, 0.5, MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let ev = prm::sample_prm(&m.measure, 20.0, 1.0, 17).unwrap();
        let a = integrate_xeps(&m, 0.05, &ev, 200).unwrap();
        let b = integrate_xeps(&m, 0.05, &ev, 400).unwrap();
        assert!((a.last()[0] - b.last()[0]).abs() <= 1e-6);
    }

    #[test]
    fn events_outside_horizon_are_rejected() {
        let m = scalar(1.0, 0.5, MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let ev = PointRealization {
            events: vec![Event { time: 2.0, atom: 0 }],
            horizon: 2.0,
            base_rate: 1.0,
        };
        assert!(matches!(
            integrate_xeps(&m, 0.1, &ev, 10),
            Err(Error::EventOutOfRange { .. })
        ));
    }

    #[test]
    fn schedule_grid() {
        let s = ScalingSchedule::default_for(0.01).unwrap();
        assert_relative_eq!(s.b_eps, 0.1, max_relative = 1e-14);
        assert!(ScalingSchedule::grid(&[0.2, 0.1, 0.05], 0.25).is_ok());
        assert!(ScalingSchedule::grid(&[0.1, 0.2], 0.25).is_err());
        assert!(ScalingSchedule::power(0.1, 0.5).is_err());
    }
}
