//! Linearization around the fluid limit: the per-cell `L²(ν)` frame of the
//! jump coefficient, the matrices `A₁(s)` and `A(s)`, the limit equation for
//! `η`, the covariance of the equivalent Gaussian limit, and a replay of the
//! controlled fluctuation split into its drift, martingale and control parts.
//!
//! Coefficients are frozen on each grid cell at the midpoint of the fluid
//! path. One RK4 step of `η̇ = A₁η + f` with frozen `A₁` and constant `f` is
//! the affine map `η ↦ P η + Q f` with `P = R(hA₁)` and `Q = h S(hA₁)`,
//! `R(Z) = I + Z + Z²/2 + Z³/6 + Z⁴/24` and `S(Z) = I + Z/2 + Z²/6 + Z³/24`.
//! Both matrices are stored per cell so the rate module can invert the
//! discrete dynamics exactly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::jump_sde::{node_time, run_engine, FluidLimit, ModelSpec, PathGrid};
use crate::linalg::{Mat, Vector, RANK_TOL};
use crate::prm::{self, ControlField, PointRealization};

/// A piecewise-constant `R^d`-valued function on the cells of a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPath {
    horizon: f64,
    n_cells: usize,
    dim: usize,
    values: Vec<f64>,
}

impl CellPath {
    pub fn new(horizon: f64, n_cells: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_cells * dim {
            return Err(Error::Dimension {
                expected: n_cells * dim,
                got: values.len(),
            });
        }
        Ok(Self {
            horizon,
            n_cells,
            dim,
            values,
        })
    }

    pub fn zeros(horizon: f64, n_cells: usize, dim: usize) -> Self {
        Self {
            horizon,
            n_cells,
            dim,
            values: vec![0.0; n_cells * dim],
        }
    }

    /// Samples `f` at cell midpoints.
    pub fn from_fn(horizon: f64, n_cells: usize, dim: usize, f: impl Fn(f64, &mut [f64])) -> Self {
        let mut p = Self::zeros(horizon, n_cells, dim);
        for k in 0..n_cells {
            let t = p.midpoint(k);
            f(t, p.cell_mut(k));
        }
        p
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_cells as f64
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cell_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `∫ |u|² dt`.
    pub fn energy(&self) -> f64 {
        let dt = self.dt();
        crate::sum::sum(self.values.iter().map(|v| v * v * dt))
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..*self
        }
    }
}

/// Per-cell linearization of a model around its fluid limit.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    horizon: f64,
    n_cells: usize,
    dim: usize,
    weights: Vec<f64>,
    /// Fluid state at cell midpoints.
    pub fluid_mid: Vec<Vector>,
    /// `Db(X⁰)`.
    pub drift_jac: Vec<Mat>,
    /// `G₁(X⁰) = ∫ DₓG(X⁰, y) ν(dy)`.
    pub g1: Vec<Mat>,
    /// `A₁ = Db(X⁰) + G₁(X⁰)`.
    pub a1: Vec<Mat>,
    /// Rows `G_i(X⁰, y_k)`: `d × n_atoms`.
    pub gframe: Vec<Mat>,
    /// Rows `e_j(y_k)`, orthonormal in `L²(ν)`; dropped directions are zero rows.
    pub frame: Vec<Mat>,
    /// `A_ij = ⟨G_i, e_j⟩`.
    pub a: Vec<Mat>,
    pub rank: Vec<usize>,
    /// RK4 propagator `R(hA₁)` of each cell.
    pub step_prop: Vec<Mat>,
    /// RK4 forcing map `h S(hA₁)` of each cell.
    pub step_forcing: Vec<Mat>,
}

fn rk4_polys(a1: &Mat, h: f64) -> (Mat, Mat) {
    let d = a1.nrows();
    let z = a1 * h;
    let z2 = &z * &z;
    let z3 = &z2 * &z;
    let z4 = &z3 * &z;
    let id = Mat::identity(d, d);
    let r = &id + &z + &z2 * 0.5 + &z3 * (1.0 / 6.0) + &z4 * (1.0 / 24.0);
    let s = (&id + &z * 0.5 + &z2 * (1.0 / 6.0) + &z3 * (1.0 / 24.0)) * h;
    (r, s)
}

/// Modified Gram–Schmidt (two passes) on the rows of `g` in `L²(ν)`. Rows
/// whose residual norm is at most `RANK_TOL · max_i ‖g_i‖` are dropped and
/// left as zero rows.
pub fn weighted_gram_schmidt(g: &Mat, weights: &[f64]) -> (Mat, usize) {
    let (d, n) = g.shape();
    let inner =
        |a: &[f64], b: &[f64]| -> f64 { crate::sum::sum(a.iter().zip(b).zip(weights).map(|((x, y), w)| x * y * w)) };
    let rows: Vec<Vec<f64>> = (0..d).map(|i| g.row(i).iter().copied().collect()).collect();
    let max_norm = rows.iter().map(|r| inner(r, r).sqrt()).fold(0.0, f64::max);
    let mut basis: Vec<Option<Vec<f64>>> = Vec::with_capacity(d);
    let mut rank = 0;
    for row in &rows {
        let mut v = row.clone();
        for _ in 0..2 {
            for e in basis.iter().flatten() {
                let c = inner(&v, e);
                for (vi, ei) in v.iter_mut().zip(e) {
                    *vi -= c * ei;
                }
            }
        }
        let nv = inner(&v, &v).sqrt();
        if max_norm > 0.0 && nv > RANK_TOL * max_norm {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(Some(v));
            rank += 1;
        } else {
            basis.push(None);
        }
    }
    let mut e = Mat::zeros(d, n);
    for (j, b) in basis.iter().enumerate() {
        if let Some(v) = b {
            for k in 0..n {
                e[(j, k)] = v[k];
            }
        }
    }
    (e, rank)
}

impl LinearizedSystem {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_atoms(&self) -> usize {
        self.weights.len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_cells as f64
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Builds a system directly from per-cell `A₁` and `A`, with the trivial
    /// mark space `ν = Σ_{j<d} δ_j` and frame `e_j = 1_{j}`, so that
    /// `G_i(·) = Σ_j A_ij e_j`.
    pub fn from_matrices(horizon: f64, a1: Vec<Mat>, a: Vec<Mat>) -> Result<Self> {
        let n_cells = a1.len();
        if a.len() != n_cells || n_cells == 0 {
            return Err(Error::GridMismatch(format!(
                "{} drift matrices vs {} frame matrices",
                n_cells,
                a.len()
            )));
        }
        let dim = a1[0].nrows();
        let weights = vec![1.0; dim];
        let h = horizon / n_cells as f64;
        let mut sys = Self::empty(horizon, n_cells, dim, weights);
        for k in 0..n_cells {
            let (r, s) = rk4_polys(&a1[k], h);
            let (frame, rank) = weighted_gram_schmidt(&a[k], &sys.weights);
            let amat = &a[k] * frame.transpose();
            sys.fluid_mid.push(Vector::zeros(dim));
            sys.drift_jac.push(a1[k].clone());
            sys.g1.push(Mat::zeros(dim, dim));
            sys.a1.push(a1[k].clone());
            sys.gframe.push(a[k].clone());
            sys.frame.push(frame);
            sys.a.push(amat);
            sys.rank.push(rank);
            sys.step_prop.push(r);
            sys.step_forcing.push(s);
        }
        Ok(sys)
    }

    /// Constant-coefficient system on `n_cells` cells.
    pub fn constant(horizon: f64, n_cells: usize, a1: Mat, a: Mat) -> Result<Self> {
        Self::from_matrices(horizon, vec![a1; n_cells], vec![a; n_cells])
    }

    fn empty(horizon: f64, n_cells: usize, dim: usize, weights: Vec<f64>) -> Self {
        Self {
            horizon,
            n_cells,
            dim,
            weights,
            fluid_mid: Vec::with_capacity(n_cells),
            drift_jac: Vec::with_capacity(n_cells),
            g1: Vec::with_capacity(n_cells),
            a1: Vec::with_capacity(n_cells),
            gframe: Vec::with_capacity(n_cells),
            frame: Vec::with_capacity(n_cells),
            a: Vec::with_capacity(n_cells),
            rank: Vec::with_capacity(n_cells),
            step_prop: Vec::with_capacity(n_cells),
            step_forcing: Vec::with_capacity(n_cells),
        }
    }

    /// `f(s) = ∫ ψ(y, s) G(X⁰(s), y) ν(dy)` on cell `k`.
    pub fn forcing(&self, k: usize, psi_cell: &[f64]) -> Vector {
        let wpsi: Vec<f64> = psi_cell.iter().zip(&self.weights).map(|(p, w)| p * w).collect();
        &self.gframe[k] * Vector::from_vec(wpsi)
    }

    /// `ψ(y_k, s) = Σ_i u_i(s) e_i(y_k, s)` on cell `k`.
    pub fn psi_from_u(&self, k: usize, u: &[f64]) -> Vec<f64> {
        let e = &self.frame[k];
        (0..self.n_atoms())
            .map(|atom| (0..self.dim).map(|i| u[i] * e[(i, atom)]).sum())
            .collect()
    }

    /// `ψ = Σ_i u_i e_i` over all cells, atom-major.
    pub fn psi_field_from_u(&self, u: &CellPath) -> Vec<f64> {
        let n = self.n_atoms();
        let mut out = vec![0.0; n * self.n_cells];
        for k in 0..self.n_cells {
            for (atom, p) in self.psi_from_u(k, u.cell(k)).into_iter().enumerate() {
                out[atom * self.n_cells + k] = p;
            }
        }
        out
    }

    pub(crate) fn check_cells(&self, n_cells: usize, horizon: f64) -> Result<()> {
        if n_cells != self.n_cells || (horizon - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(Error::GridMismatch(format!(
                "system has {} cells on [0, {}], input has {} cells on [0, {}]",
                self.n_cells, self.horizon, n_cells, horizon
            )));
        }
        Ok(())
    }

    /// Propagates `η̇ = A₁η + f_k` from `η(0) = 0` with per-cell forcing.
    pub(crate) fn propagate(&self, forcing: impl Fn(usize) -> Vector) -> PathGrid {
        let mut out = PathGrid::zeros(self.horizon, self.n_cells, self.dim);
        let mut eta = Vector::zeros(self.dim);
        for k in 0..self.n_cells {
            eta = &self.step_prop[k] * &eta + &self.step_forcing[k] * forcing(k);
            out.value_mut(k + 1).copy_from_slice(eta.as_slice());
        }
        out
    }
}

/// Linearizes `model` around the fluid path `x0path` (one cell per grid step).
pub fn build_linearization(model: &ModelSpec, x0path: &PathGrid) -> Result<LinearizedSystem> {
    let d = model.dim();
    if x0path.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: x0path.dim(),
        });
    }
    let nu = &model.measure;
    let n_cells = x0path.n_steps();
    let h = x0path.dt();
    let mut sys = LinearizedSystem::empty(x0path.horizon(), n_cells, d, nu.weights().to_vec());
    let mut jac = vec![0.0; d * d];
    let mut g = vec![0.0; d];
    for k in 0..n_cells {
        let x: Vec<f64> = x0path
            .value(k)
            .iter()
            .zip(x0path.value(k + 1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        model.dynamics.drift_jacobian(&x, &mut jac);
        let db = Mat::from_row_slice(d, d, &jac);
        let mut g1 = Mat::zeros(d, d);
        let mut gframe = Mat::zeros(d, nu.len());
        for atom in 0..nu.len() {
            let mark = nu.mark(atom);
            model.dynamics.jump_jacobian(&x, atom, mark, &mut jac);
            g1 += Mat::from_row_slice(d, d, &jac) * nu.weight(atom);
            model.dynamics.jump(&x, atom, mark, &mut g);
            for i in 0..d {
                gframe[(i, atom)] = g[i];
            }
        }
        let a1 = &db + &g1;
        let (frame, rank) = weighted_gram_schmidt(&gframe, nu.weights());
        let wframe = Mat::from_fn(d, nu.len(), |j, atom| frame[(j, atom)] * nu.weight(atom));
        let a = &gframe * wframe.transpose();
        let (r, s) = rk4_polys(&a1, h);
        sys.fluid_mid.push(Vector::from_vec(x));
        sys.drift_jac.push(db);
        sys.g1.push(g1);
        sys.a1.push(a1);
        sys.gframe.push(gframe);
        sys.frame.push(frame);
        sys.a.push(a);
        sys.rank.push(rank);
        sys.step_prop.push(r);
        sys.step_forcing.push(s);
    }
    Ok(sys)
}

/// Solves `η̇ = A₁η + ∫ ψ G(X⁰, y) ν(dy)`, `η(0) = 0`.
pub fn solve_eta(sys: &LinearizedSystem, psi: &ControlField) -> Result<PathGrid> {
    sys.check_cells(psi.n_cells(), psi.horizon())?;
    if psi.n_atoms() != sys.n_atoms() {
        return Err(Error::Dimension {
            expected: sys.n_atoms(),
            got: psi.n_atoms(),
        });
    }
    Ok(solve_eta_values(sys, psi.psi_values()))
}

/// As [`solve_eta`] for raw atom-major `ψ` values on the system's grid.
pub fn solve_eta_values(sys: &LinearizedSystem, psi: &[f64]) -> PathGrid {
    let n = sys.n_cells;
    sys.propagate(|k| {
        let cell: Vec<f64> = (0..sys.n_atoms()).map(|a| psi[a * n + k]).collect();
        sys.forcing(k, &cell)
    })
}

/// Solves `η̇ = A₁η + A u`, `η(0) = 0`.
pub fn solve_eta_from_u(sys: &LinearizedSystem, u: &CellPath) -> Result<PathGrid> {
    sys.check_cells(u.n_cells(), u.horizon())?;
    if u.dim() != sys.dim {
        return Err(Error::Dimension {
            expected: sys.dim,
            got: u.dim(),
        });
    }
    Ok(sys.propagate(|k| &sys.a[k] * Vector::from_column_slice(u.cell(k))))
}

/// Covariance of the Gaussian fluctuation `dZ = A₁Z dt + A dW` at each node.
#[derive(Debug, Clone)]
pub struct GaussianLimit {
    pub horizon: f64,
    pub sigma: Vec<Mat>,
}

impl GaussianLimit {
    pub fn terminal(&self) -> &Mat {
        self.sigma.last().expect("at least one node")
    }
}

/// Integrates `Σ̇ = A₁Σ + ΣA₁ᵀ + AAᵀ`, `Σ(0) = 0`, by RK4 per cell,
/// symmetrizing after each step.
pub fn gaussian_covariance(sys: &LinearizedSystem) -> GaussianLimit {
    let d = sys.dim;
    let h = sys.dt();
    let mut sigma = Mat::zeros(d, d);
    let mut out = Vec::with_capacity(sys.n_cells + 1);
    out.push(sigma.clone());
    for k in 0..sys.n_cells {
        let a1 = &sys.a1[k];
        let q = &sys.a[k] * sys.a[k].transpose();
        let f = |s: &Mat| a1 * s + s * a1.transpose() + &q;
        let k1 = f(&sigma);
        let k2 = f(&(&sigma + &k1 * (0.5 * h)));
        let k3 = f(&(&sigma + &k2 * (0.5 * h)));
        let k4 = f(&(&sigma + &k3 * h));
        sigma += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        sigma = (&sigma + sigma.transpose()) * 0.5;
        out.push(sigma.clone());
    }
    GaussianLimit {
        horizon: sys.horizon,
        sigma: out,
    }
}

/// Terms of the controlled fluctuation `Ȳ = A + M + B + E₁ + C` on the grid.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub y: PathGrid,
    /// `(1/a) ∫ (b(X̄) − b(X⁰)) ds`.
    pub drift: PathGrid,
    /// `(ε/a) ∫ G(X̄(s−), y) Ñ^{φ/ε}(dy, ds)`.
    pub martingale: PathGrid,
    /// `(1/a) ∫∫ (G(X̄) − G(X⁰)) ν(dy) ds`.
    pub jump_drift: PathGrid,
    /// `∫∫ (G(X̄) − G(X⁰)) ψ ν(dy) ds`.
    pub cross: PathGrid,
    /// `∫∫ G(X⁰) ψ ν(dy) ds`.
    pub control: PathGrid,
    pub events: PointRealization,
}

impl Decomposition {
    /// Largest nodewise deviation of the sum of the parts from `y`.
    pub fn reconstruction_error(&self) -> f64 {
        let d = self.y.dim();
        let mut worst = 0.0f64;
        for i in 0..=self.y.n_steps() {
            for c in 0..d {
                let s = self.drift.value(i)[c]
                    + self.martingale.value(i)[c]
                    + self.jump_drift.value(i)[c]
                    + self.cross.value(i)[c]
                    + self.control.value(i)[c];
                worst = worst.max((s - self.y.value(i)[c]).abs());
            }
        }
        worst
    }
}

/// Replays one controlled path and its fluid limit on a common set of
/// breakpoints, accumulating every integral of the decomposition with the
/// same RK4 stages that advance the paths.
pub fn decompose_controlled_y(
    model: &ModelSpec,
    eps: f64,
    ctrl: &ControlField,
    seed: u64,
    n_steps: usize,
) -> Result<Decomposition> {
    if !(eps > 0.0) {
        return Err(crate::error::param("eps", "must be positive"));
    }
    let d = model.dim();
    let nu = &model.measure;
    if (ctrl.horizon() - model.horizon).abs() > 1e-12 * model.horizon {
        return Err(Error::GridMismatch(format!(
            "control horizon {} vs model horizon {}",
            ctrl.horizon(),
            model.horizon
        )));
    }
    let a_eps = ctrl.a_eps();
    let events = prm::sample_controlled_prm(nu, 1.0 / eps, ctrl, seed)?;
    let breaks: Vec<f64> = (1..ctrl.n_cells())
        .map(|c| node_time(ctrl.horizon(), ctrl.n_cells(), c))
        .collect();
    let dyn_ = &model.dynamics;

    let scratch = core::cell::RefCell::new(vec![0.0; d]);
    // aux = [b(x), ∫G(x,y)ν(dy), ∫ψ G(x,y)ν(dy)]
    let aux = |t_mid: f64, x: &[f64], out: &mut [f64]| {
        let cell = ctrl.cell_of(t_mid);
        let mut g = scratch.borrow_mut();
        let (ob, rest) = out.split_at_mut(d);
        let (og, ogp) = rest.split_at_mut(d);
        dyn_.drift(x, ob);
        og.iter_mut().for_each(|v| *v = 0.0);
        ogp.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..nu.len() {
            model.jump_at(x, k, &mut g);
            let w = nu.weight(k);
            let p = ctrl.psi(k, cell);
            for i in 0..d {
                og[i] += w * g[i];
                ogp[i] += w * p * g[i];
            }
        }
    };

    let controlled = run_engine(
        &model.x0,
        model.horizon,
        n_steps,
        &events.events,
        eps,
        &breaks,
        |x, dx| dyn_.drift(x, dx),
        |x, k, g| model.jump_at(x, k, g),
        3 * d,
        aux,
    )?;
    let fluid_scratch = core::cell::RefCell::new((vec![0.0; d], vec![0.0; d]));
    let fluid = run_engine(
        &model.x0,
        model.horizon,
        n_steps,
        &[],
        0.0,
        &breaks,
        |x, dx| {
            let mut s = fluid_scratch.borrow_mut();
            let (comp, g) = &mut *s;
            dyn_.drift(x, dx);
            model.compensator(x, comp, g);
            for (a, c) in dx.iter_mut().zip(comp.iter()) {
                *a += c;
            }
        },
        |_, _, _| {},
        3 * d,
        aux,
    )?;

    let n = n_steps;
    let mk = || PathGrid::zeros(model.horizon, n, d);
    let (mut drift, mut mart, mut jd, mut cross, mut control) = (mk(), mk(), mk(), mk(), mk());
    let y = crate::jump_sde::rescale_yeps(&controlled.path, &fluid.path, a_eps)?;
    for i in 0..=n {
        let qc = &controlled.extra[i * 3 * d..(i + 1) * 3 * d];
        let qf = &fluid.extra[i * 3 * d..(i + 1) * 3 * d];
        let jumps = &controlled.jumps[i * d..(i + 1) * d];
        for c in 0..d {
            let (qb, qg, qgp) = (qc[c], qc[d + c], qc[2 * d + c]);
            let (fb, fg, fgp) = (qf[c], qf[d + c], qf[2 * d + c]);
            drift.value_mut(i)[c] = (qb - fb) / a_eps;
            mart.value_mut(i)[c] = (jumps[c] - (qg + a_eps * qgp)) / a_eps;
            jd.value_mut(i)[c] = (qg - fg) / a_eps;
            cross.value_mut(i)[c] = qgp - fgp;
            control.value_mut(i)[c] = fgp;
        }
    }
    Ok(Decomposition {
        y,
        drift,
        martingale: mart,
        jump_drift: jd,
        cross,
        control,
        events,
    })
}

/// Fluid limit and linearization on an `n_steps` grid.
pub fn linearize_model(model: &ModelSpec, n_steps: usize) -> Result<(FluidLimit, LinearizedSystem)> {
    let fluid = crate::jump_sde::fluid_limit(model, n_steps)?;
    let sys = build_linearization(model, &fluid.path)?;
    Ok((fluid, sys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mark_space::MarkMeasure;
    use crate::models::AffineTanh;
    use alloc::sync::Arc;
    use approx::assert_relative_eq;

    fn scalar_model(nu: MarkMeasure) -> ModelSpec {
        ModelSpec::new(Arc::new(AffineTanh::scalar(1.0, 1.0)), nu, vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn single_atom_frame() {
        let m = scalar_model(MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap());
        let (_, sys) = linearize_model(&m, 20).unwrap();
        for k in 0..20 {
            assert_relative_eq!(sys.frame[k][(0, 0)], 1.0, max_relative = 1e-15);
            assert_relative_eq!(sys.a[k][(0, 0)], 1.0, max_relative = 1e-15);
            assert_relative_eq!(sys.a1[k][(0, 0)], -1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn two_atom_frame_norm() {
        let m = scalar_model(MarkMeasure::scalar(&[(1.0, 1.0), (2.0, 1.0)]).unwrap());
        let (_, sys) = linearize_model(&m, 5).unwrap();
        assert_relative_eq!(sys.a[3][(0, 0)], 5f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn dependent_rows_drop_rank() {
        // G₂ = 2 G₁
        let dynamics = AffineTanh::new(2, 1, vec![-1.0, 0.0, 0.0, -1.0], 0.0, vec![1.0, 2.0], 0.0).unwrap();
        let nu = MarkMeasure::scalar(&[(1.0, 0.5), (-0.5, 1.0), (3.0, 0.2)]).unwrap();
        let m = ModelSpec::new(Arc::new(dynamics), nu.clone(), vec![0.0, 0.0], 1.0).unwrap();
        let (_, sys) = linearize_model(&m, 4).unwrap();
        for k in 0..4 {
            assert_eq!(sys.rank[k], 1);
            assert_eq!(sys.a[k][(0, 1)], 0.0);
            assert_eq!(sys.a[k][(1, 1)], 0.0);
            let g = &sys.gframe[k];
            let aat = &sys.a[k] * sys.a[k].transpose();
            for i in 0..2 {
                for j in 0..2 {
                    let gram = nu.inner_values(
                        g.row(i).iter().copied().collect::<Vec<_>>().as_slice(),
                        g.row(j).iter().copied().collect::<Vec<_>>().as_slice(),
                    );
                    assert!((aat[(i, j)] - gram).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn eta_closed_form_and_zero() {
        let a = 0.7;
        let c = 1.3;
        let sys =
            LinearizedSystem::constant(1.0, 1000, Mat::from_element(1, 1, a), Mat::from_element(1, 1, 1.0)).unwrap();
        let u = CellPath::from_fn(1.0, 1000, 1, |_, v| v[0] = c);
        let eta = solve_eta_from_u(&sys, &u).unwrap();
        for i in 0..=1000 {
            let t = eta.time(i);
            assert!((eta.value(i)[0] - c / a * ((a * t).exp() - 1.0)).abs() < 1e-8);
        }
        let zero = solve_eta_from_u(&sys, &CellPath::zeros(1.0, 1000, 1)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eta_integrator_of_unit_control() {
        let sys = LinearizedSystem::constant(2.0, 50, Mat::zeros(1, 1), Mat::from_element(1, 1, 1.0)).unwrap();
        let u = CellPath::from_fn(2.0, 50, 1, |_, v| v[0] = 1.0);
        let eta = solve_eta_from_u(&sys, &u).unwrap();
        for i in 0..=50 {
            assert!((eta.value(i)[0] - eta.time(i)).abs() < 1e-13);
        }
    }

    #[test]
    fn covariance_closed_forms() {
        let sigma = 0.8;
        let sys = LinearizedSystem::constant(1.5, 500, Mat::zeros(1, 1), Mat::from_element(1, 1, sigma)).unwrap();
        let g = gaussian_covariance(&sys);
        for (i, s) in g.sigma.iter().enumerate() {
            let t = 1.5 * i as f64 / 500.0;
            assert!((s[(0, 0)] - sigma * sigma * t).abs() < 1e-12);
        }
        let a = -0.6;
        let sys =
            LinearizedSystem::constant(2.0, 1000, Mat::from_element(1, 1, a), Mat::from_element(1, 1, sigma)).unwrap();
        let g = gaussian_covariance(&sys);
        let exact = sigma * sigma * ((2.0 * a * 2.0).exp() - 1.0) / (2.0 * a);
        assert!((g.terminal()[(0, 0)] - exact).abs() < 1e-8);

        let sys = LinearizedSystem::constant(1.0, 10, Mat::from_element(1, 1, 1.0), Mat::zeros(1, 1)).unwrap();
        assert!(gaussian_covariance(&sys).sigma.iter().all(|s| s[(0, 0)] == 0.0));
    }

    #[test]
    fn decomposition_with_no_noise_is_zero() {
        let m = scalar_model(MarkMeasure::scalar(&[(1.0, 1e-300)]).unwrap());
        let ctrl = ControlField::zero(1, 10, 1.0, 0.5).unwrap();
        let dec = decompose_controlled_y(&m, 0.1, &ctrl, 1, 10).unwrap();
        assert!(dec.events.is_empty());
        for p in [&dec.drift, &dec.martingale, &dec.jump_drift, &dec.cross, &dec.control] {
            assert!(p.sup_norm() < 1e-250);
        }
    }

    #[test]
    fn decomposition_reconstructs() {
        let dynamics = AffineTanh::planar();
        let nu = MarkMeasure::new([([1.0, 0.0], 0.5), ([0.0, 1.0], 0.7), ([-0.5, 0.5], 0.3)]).unwrap();
        let m = ModelSpec::new(Arc::new(dynamics), nu, vec![0.2, -0.1], 1.0).unwrap();
        let psi: Vec<f64> = (0..3 * 7).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.2).collect();
        let ctrl = ControlField::new(psi, 3, 7, 1.0, 0.3).unwrap();
        let dec = decompose_controlled_y(&m, 0.05, &ctrl, 4, 40).unwrap();
        assert!(!dec.events.is_empty());
        assert!(dec.reconstruction_error() < 1e-8, "{}", dec.reconstruction_error());
    }
}
