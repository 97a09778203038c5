//! Moderate-deviation rate function of the linearized dynamics.
//!
//! All routines work on the discrete system stored in a [`LinearizedSystem`]:
//! on cell `k` the limit equation is the affine step
//! `η_{k+1} = P_k η_k + Q_k A_k u_k`. Path rates invert that step exactly and
//! terminal rates use the matching discrete controllability Gramian, so a
//! control returned by one routine replays to roundoff through
//! [`solve_eta_from_u`].

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::jump_sde::PathGrid;
use crate::linalg::{pinv, sym_max_eigen, Mat, Vector, RANK_TOL};
use crate::mdp_limit::{solve_eta, solve_eta_from_u, CellPath, LinearizedSystem};
use crate::prm::ControlField;

/// Relative residual above which a target is declared outside the reachable set.
pub const RANGE_TOL: f64 = 1e-8;

/// A rate value: finite, or `+∞` together with the residual that decided it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rate {
    Finite(f64),
    Infinite { residual: f64 },
}

impl Rate {
    pub fn is_finite(&self) -> bool {
        matches!(self, Rate::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Rate::Finite(v) => Some(v),
            Rate::Infinite { .. } => None,
        }
    }

    /// `f64::INFINITY` for the infinite case; intended for display only.
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl core::fmt::Display for Rate {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Rate::Finite(v) => write!(f, "{v}"),
            Rate::Infinite { residual } => write!(f, "inf (residual {residual:e})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RateSolution {
    pub rate: Rate,
    /// Minimizing `u`, constant on each cell.
    pub u_opt: CellPath,
    /// `ψ_opt(y_k, s) = Σ u_i(s) e_i(y_k, s)`, atom-major over cells.
    pub psi_opt: Vec<f64>,
    pub eta: PathGrid,
    pub residual: f64,
}

impl RateSolution {
    /// `½ ∫ |u_opt|² dt`.
    pub fn u_cost(&self) -> f64 {
        0.5 * self.u_opt.energy()
    }

    /// `½ ‖ψ_opt‖²` in `L²(ν ⊗ dt)`.
    pub fn psi_cost(&self, sys: &LinearizedSystem) -> f64 {
        psi_cost(sys, &self.psi_opt)
    }

    /// `ψ_opt` as a control field at scale `a_eps`.
    pub fn psi_field(&self, sys: &LinearizedSystem, a_eps: f64) -> Result<ControlField> {
        ControlField::new(self.psi_opt.clone(), sys.n_atoms(), sys.n_cells(), sys.horizon(), a_eps)
    }
}

/// `½ Σ_k Δt Σ_atoms w ψ²` for atom-major `ψ` on the system's cells.
pub fn psi_cost(sys: &LinearizedSystem, psi: &[f64]) -> f64 {
    let n = sys.n_cells();
    let dt = sys.dt();
    0.5 * crate::sum::sum(
        sys.weights()
            .iter()
            .enumerate()
            .flat_map(|(a, w)| psi[a * n..(a + 1) * n].iter().map(move |p| w * p * p * dt)),
    )
}

fn require_grid(sys: &LinearizedSystem, eta: &PathGrid) -> Result<()> {
    if eta.dim() != sys.dim() {
        return Err(Error::Dimension {
            expected: sys.dim(),
            got: eta.dim(),
        });
    }
    if eta.n_steps() != sys.n_cells() || (eta.horizon() - sys.horizon()).abs() > 1e-12 * sys.horizon() {
        return Err(Error::GridMismatch(format!(
            "path has {} steps on [0, {}], system has {} cells on [0, {}]",
            eta.n_steps(),
            eta.horizon(),
            sys.n_cells(),
            sys.horizon()
        )));
    }
    Ok(())
}

/// `I(η) = inf { ½∫|u|² : η solves the limit equation driven by u }`.
pub fn rate_of_path(sys: &LinearizedSystem, eta: &PathGrid) -> Result<RateSolution> {
    require_grid(sys, eta)?;
    let d = sys.dim();
    let start = eta.value(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if start > 0.0 {
        return Err(Error::Domain(format!("eta(0) must vanish, got sup-norm {start:e}")));
    }
    let mut u = CellPath::zeros(sys.horizon(), sys.n_cells(), d);
    let mut residual = 0.0f64;
    for k in 0..sys.n_cells() {
        let now = Vector::from_column_slice(eta.value(k));
        let next = Vector::from_column_slice(eta.value(k + 1));
        let rhs = next - &sys.step_prop[k] * now;
        let r = sys.step_forcing[k]
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Domain(format!("singular step map on cell {k}")))?;
        let uk = pinv(&sys.a[k], RANK_TOL) * &r;
        let miss = (&sys.a[k] * &uk - &r).norm() / (1.0 + r.norm());
        residual = residual.max(miss);
        u.cell_mut(k).copy_from_slice(uk.as_slice());
    }
    let rate = if residual > RANGE_TOL {
        Rate::Infinite { residual }
    } else {
        Rate::Finite(0.5 * u.energy())
    };
    let psi_opt = sys.psi_field_from_u(&u);
    Ok(RateSolution {
        rate,
        u_opt: u,
        psi_opt,
        eta: eta.clone(),
        residual,
    })
}

/// Discrete controllability Gramian.
#[derive(Debug, Clone)]
pub struct Gramian {
    pub w: Mat,
    /// Per cell, the transition `Φ_k` with `η(T) = Σ_k Φ_k A_k u_k Δt` for
    /// `η(0) = 0`.
    pub phi_flow: Vec<Mat>,
    dt: f64,
}

impl Gramian {
    pub fn new(sys: &LinearizedSystem) -> Self {
        let d = sys.dim();
        let n = sys.n_cells();
        let h = sys.dt();
        let mut phi_flow = alloc::vec![Mat::zeros(d, d); n];
        let mut tail = Mat::identity(d, d);
        for k in (0..n).rev() {
            phi_flow[k] = &tail * &sys.step_forcing[k] / h;
            tail = &tail * &sys.step_prop[k];
        }
        let mut w = Mat::zeros(d, d);
        for k in 0..n {
            let b = &phi_flow[k] * &sys.a[k];
            w += &b * b.transpose() * h;
        }
        w = (&w + w.transpose()) * 0.5;
        Self { w, phi_flow, dt: h }
    }

    /// Largest deviation between `W` and a fresh sum of `Φ A Aᵀ Φᵀ Δt`.
    pub fn audit(&self, sys: &LinearizedSystem) -> f64 {
        let mut w = Mat::zeros(self.w.nrows(), self.w.ncols());
        for (phi, a) in self.phi_flow.iter().zip(&sys.a) {
            w += phi * a * a.transpose() * phi.transpose() * self.dt;
        }
        (w - &self.w).amax()
    }
}

/// Minimal energy `½ zᵀ W⁺ z` of reaching `η(T) = z`, with the optimal control.
pub fn rate_terminal(sys: &LinearizedSystem, z: &[f64]) -> Result<RateSolution> {
    let gram = Gramian::new(sys);
    rate_terminal_with(sys, &gram, z)
}

/// As [`rate_terminal`] with a precomputed Gramian.
pub fn rate_terminal_with(sys: &LinearizedSystem, gram: &Gramian, z: &[f64]) -> Result<RateSolution> {
    let d = sys.dim();
    if z.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: z.len(),
        });
    }
    let z = Vector::from_column_slice(z);
    let wp = pinv(&gram.w, RANK_TOL);
    let lam = &wp * &z;
    let range_miss = (&gram.w * &lam - &z).norm() / (1.0 + z.norm());
    let mut u = CellPath::zeros(sys.horizon(), sys.n_cells(), d);
    for k in 0..sys.n_cells() {
        let uk = (&gram.phi_flow[k] * &sys.a[k]).transpose() * &lam;
        u.cell_mut(k).copy_from_slice(uk.as_slice());
    }
    let eta = solve_eta_from_u(sys, &u)?;
    let hit = (Vector::from_column_slice(eta.last()) - &z).norm();
    let rate = if range_miss > RANGE_TOL {
        Rate::Infinite { residual: range_miss }
    } else {
        Rate::Finite(0.5 * z.dot(&lam))
    };
    let psi_opt = sys.psi_field_from_u(&u);
    Ok(RateSolution {
        rate,
        u_opt: u,
        psi_opt,
        eta,
        residual: hit,
    })
}

/// `inf { I(η) : |η(T)| ≥ c }` and its minimizer.
#[derive(Debug, Clone)]
pub struct SphereRate {
    pub rate: Rate,
    pub lambda_max: f64,
    /// Minimizing terminal point `c · v_max`.
    pub z: Vec<f64>,
    pub solution: RateSolution,
}

pub fn sphere_rate(sys: &LinearizedSystem, c: f64) -> Result<SphereRate> {
    if !(c >= 0.0) {
        return Err(crate::error::param("c", "threshold must be nonnegative"));
    }
    let gram = Gramian::new(sys);
    let (lambda_max, v) = sym_max_eigen(&gram.w);
    let z: Vec<f64> = v.iter().map(|x| c * x).collect();
    let solution = rate_terminal_with(sys, &gram, &z)?;
    let rate = if c == 0.0 {
        Rate::Finite(0.0)
    } else if lambda_max <= 0.0 {
        Rate::Infinite { residual: c }
    } else {
        Rate::Finite(c * c / (2.0 * lambda_max))
    };
    Ok(SphereRate {
        rate,
        lambda_max,
        z,
        solution,
    })
}

#[derive(Debug, Clone)]
pub struct EquivalenceReport {
    pub path_rate: Rate,
    /// `½ ‖ψ‖²` in `L²(ν ⊗ dt)`.
    pub psi_cost: f64,
    /// Sup distance between `η` and the path re-solved from the returned `u`.
    pub replay_error: f64,
    pub holds: bool,
}

/// Checks `I(η_ψ) ≤ ½‖ψ‖²` and that the minimizing `u` reproduces `η_ψ`.
pub fn verify_rate_equivalence(sys: &LinearizedSystem, psi: &ControlField) -> Result<EquivalenceReport> {
    let eta = solve_eta(sys, psi)?;
    let sol = rate_of_path(sys, &eta)?;
    let replay = solve_eta_from_u(sys, &sol.u_opt)?;
    let replay_error = replay.sup_distance(&eta)?;
    let cost = psi_cost(sys, psi.psi_values());
    let holds = match sol.rate {
        Rate::Finite(i) => i <= cost + 1e-8 && replay_error <= 1e-6,
        Rate::Infinite { .. } => false,
    };
    Ok(EquivalenceReport {
        path_rate: sol.rate,
        psi_cost: cost,
        replay_error,
        holds,
    })
}
