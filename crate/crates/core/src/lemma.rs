//! Constants of the elementary inequalities for `ℓ(x) = x log x − x + 1` and
//! the integral bounds they imply for controls of bounded cost.
//!
//! * `κ₁(β) = sup { |x−1| / ℓ(x) : x ≥ 0, |x−1| ≥ β }`
//! * `κ₁′(β) = sup { x / ℓ(x) : x ≥ β }`, infinite when `β ≤ 1`
//! * `κ₂(β) = sup { (x−1)² / ℓ(x) : x ≥ 0, 0 < |x−1| ≤ β }`
//! * `κ₃ = sup { max(ℓ(x)/(x−1)², |ℓ(x) − (x−1)²/2| / |x−1|³) : x ≥ 0 }`
//!
//! Suprema are taken over a dense grid that always contains the endpoints
//! `1 ± β` and `β`; every ratio above is monotone on each side of `x = 1`,
//! so the grid value is the exact supremum up to rounding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{param, Result};
use crate::mark_space::MarkMeasure;
use crate::prm::{cost_lt, ell_unchecked, ControlField};

/// Largest grid point.
pub const X_MAX: f64 = 1e6;

/// Log-spaced grid on `[0, X_MAX]` refined around `x = 1`.
pub fn ratio_grid(points_per_decade: usize) -> Vec<f64> {
    let mut xs = vec![0.0, 1.0];
    let n = points_per_decade.max(1);
    let decades = |lo: i32, hi: i32| {
        let steps = (hi - lo) as usize * n;
        (0..=steps).map(move |i| 10f64.powf(lo as f64 + i as f64 / n as f64))
    };
    xs.extend(decades(-12, 6));
    for h in decades(-6, 0) {
        xs.push(1.0 + h);
        if h < 1.0 {
            xs.push(1.0 - h);
        }
    }
    xs.retain(|x| (0.0..=X_MAX).contains(x));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaConstants {
    pub beta: f64,
    pub kappa1: f64,
    pub kappa1_prime: f64,
    pub kappa2: f64,
    pub kappa3: f64,
}

fn sup_over(xs: &[f64], extra: &[f64], keep: impl Fn(f64) -> bool, ratio: impl Fn(f64) -> f64) -> f64 {
    xs.iter()
        .chain(extra)
        .copied()
        .filter(|&x| x >= 0.0 && keep(x))
        .map(&ratio)
        .fold(0.0, f64::max)
}

/// `κ₃` over `grid`.
pub fn kappa3(grid: &[f64]) -> f64 {
    sup_over(
        grid,
        &[],
        |x| x != 1.0,
        |x| {
            let h = x - 1.0;
            let l = ell_unchecked(x);
            (l / (h * h)).max((l - 0.5 * h * h).abs() / h.abs().powi(3))
        },
    )
}

/// `κ₁(β)`, `κ₁′(β)`, `κ₂(β)` and `κ₃` for one `β > 0`.
pub fn lemma_constants(beta: f64, grid: &[f64]) -> Result<LemmaConstants> {
    if !(beta > 0.0) {
        return Err(param("beta", "must be positive"));
    }
    let ends = [1.0 - beta, 1.0 + beta, beta];
    let kappa1 = sup_over(
        grid,
        &ends,
        |x| (x - 1.0).abs() >= beta,
        |x| (x - 1.0).abs() / ell_unchecked(x),
    );
    let kappa1_prime = if beta <= 1.0 {
        f64::INFINITY
    } else {
        sup_over(grid, &ends, |x| x >= beta, |x| x / ell_unchecked(x))
    };
    let kappa2 = sup_over(
        grid,
        &ends,
        |x| x != 1.0 && (x - 1.0).abs() <= beta,
        |x| (x - 1.0) * (x - 1.0) / ell_unchecked(x),
    );
    Ok(LemmaConstants {
        beta,
        kappa1,
        kappa1_prime,
        kappa2,
        kappa3: kappa3(grid),
    })
}

/// Constants for every `β` in `betas`, on the default grid.
pub fn compute_lemma_constants(betas: &[f64]) -> Result<Vec<LemmaConstants>> {
    let grid = ratio_grid(200);
    betas.iter().map(|&b| lemma_constants(b, &grid)).collect()
}

/// Whether `κ₁` and `κ₁′` are nonincreasing along increasing `β`.
pub fn kappa1_monotone(table: &[LemmaConstants]) -> bool {
    let mut sorted = table.to_vec();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    sorted
        .windows(2)
        .all(|w| w[1].kappa1 <= w[0].kappa1 && w[1].kappa1_prime <= w[0].kappa1_prime)
}

/// The three integrals and their bounds for one control.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralBoundRow {
    pub name: String,
    pub a_eps: f64,
    pub cost: f64,
    /// `∫ |ψ| 1{|ψ| ≥ β/a} dν_T` against `M a κ₁(β)`.
    pub part_a: (f64, f64),
    /// `∫ φ 1{φ ≥ β} dν_T` against `M a² κ₁′(β)`.
    pub part_b: (f64, f64),
    /// `∫ |ψ|² 1{|ψ| ≤ β/a} dν_T` against `M κ₂(β)`.
    pub part_c: (f64, f64),
}

impl IntegralBoundRow {
    /// Smallest `bound − value` over the three parts.
    pub fn slack(&self) -> f64 {
        [self.part_a, self.part_b, self.part_c]
            .iter()
            .map(|(v, b)| b - v)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        [self.part_a, self.part_b, self.part_c]
            .iter()
            .all(|(v, b)| *v <= b + 1e-12 * (1.0 + b.abs().min(1e300)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralBoundReport {
    pub m: f64,
    pub constants: LemmaConstants,
    pub rows: Vec<IntegralBoundRow>,
    /// Controls whose cost exceeds `M a²`, with their cost.
    pub excluded: Vec<(String, f64, f64)>,
}

impl IntegralBoundReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(IntegralBoundRow::holds)
    }
}

/// Evaluates the three bounds for one admissible control.
pub fn integral_bound_row(
    name: &str,
    ctrl: &ControlField,
    nu: &MarkMeasure,
    m: f64,
    k: &LemmaConstants,
) -> Result<IntegralBoundRow> {
    let a = ctrl.a_eps();
    let beta = k.beta;
    let dt = ctrl.dt();
    let (mut ia, mut ib, mut ic) = (0.0, 0.0, 0.0);
    for atom in 0..ctrl.n_atoms() {
        let w = nu.weight(atom) * dt;
        for c in 0..ctrl.n_cells() {
            let psi = ctrl.psi(atom, c);
            let phi = ctrl.phi(atom, c);
            if psi.abs() >= beta / a {
                ia += psi.abs() * w;
            }
            if phi >= beta {
                ib += phi * w;
            }
            if psi.abs() <= beta / a {
                ic += psi * psi * w;
            }
        }
    }
    Ok(IntegralBoundRow {
        name: name.into(),
        a_eps: a,
        cost: cost_lt(ctrl, nu)?.total,
        part_a: (ia, m * a * k.kappa1),
        part_b: (ib, m * a * a * k.kappa1_prime),
        part_c: (ic, m * k.kappa2),
    })
}

/// Shapes `(atom, t) ↦ ψ` used to build the control catalog.
pub fn catalog_shapes() -> Vec<(&'static str, fn(usize, f64) -> f64)> {
    vec![
        ("zero", |_, _| 0.0),
        ("constant", |_, _| 1.0),
        ("ramp", |k, t| (1.0 + k as f64) * (t - 0.5)),
        ("wave", |k, t| (6.0 * t + k as f64).sin()),
        ("spike", |k, t| if k == 0 && t < 0.1 { 5.0 } else { 0.1 }),
        ("sink", |_, t| if t < 0.5 { -1.0 } else { 0.3 }),
    ]
}

/// Largest `s ≥ 0` with `1 + a s ψ ≥ 0` everywhere.
fn positivity_limit(shape: &[f64], a: f64) -> f64 {
    shape
        .iter()
        .filter(|&&p| p < 0.0)
        .map(|&p| 1.0 / (a * -p))
        .fold(f64::INFINITY, f64::min)
}

/// Scales `shape` so that its cost is `fraction · M a²` (or as close as
/// positivity of `φ` allows).
pub fn scale_to_budget(
    shape: &[f64],
    nu: &MarkMeasure,
    n_cells: usize,
    horizon: f64,
    a: f64,
    budget: f64,
) -> Result<ControlField> {
    let n_atoms = nu.len();
    let field = |s: f64| ControlField::new(shape.iter().map(|p| s * p).collect(), n_atoms, n_cells, horizon, a);
    let cost = |s: f64| -> Result<f64> { Ok(cost_lt(&field(s)?, nu)?.total) };
    if shape.iter().all(|&p| p == 0.0) || budget <= 0.0 {
        return field(0.0);
    }
    let cap = positivity_limit(shape, a);
    let mut hi = if cap.is_finite() { cap } else { 1.0 };
    if cap.is_infinite() {
        while cost(hi)? < budget {
            hi *= 2.0;
        }
    } else if cost(hi)? <= budget {
        return field(hi);
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cost(mid)? <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    field(lo)
}

/// Builds the catalog for one `a(ε)`: every shape at the full budget `M a²`
/// and at half of it, plus one control at four times the budget that the
/// check must exclude.
pub fn psi_catalog(
    nu: &MarkMeasure,
    n_cells: usize,
    horizon: f64,
    a: f64,
    m: f64,
) -> Result<Vec<(String, ControlField)>> {
    let budget = m * a * a;
    let dt = horizon / n_cells as f64;
    let mut out = Vec::new();
    for (name, f) in catalog_shapes() {
        let mut shape = vec![0.0; nu.len() * n_cells];
        for k in 0..nu.len() {
            for c in 0..n_cells {
                shape[k * n_cells + c] = f(k, (c as f64 + 0.5) * dt / horizon);
            }
        }
        for (tag, frac) in [("full", 1.0), ("half", 0.5)] {
            out.push((
                format!("{name}/{tag}"),
                scale_to_budget(&shape, nu, n_cells, horizon, a, frac * budget)?,
            ));
        }
        if name == "constant" {
            out.push((
                format!("{name}/over"),
                scale_to_budget(&shape, nu, n_cells, horizon, a, 4.0 * budget)?,
            ));
        }
    }
    Ok(out)
}

/// Checks all three bounds over the catalog for each `a(ε)` in `a_grid`.
pub fn verify_integral_bounds(
    m: f64,
    a_grid: &[f64],
    beta: f64,
    nu: &MarkMeasure,
    n_cells: usize,
    horizon: f64,
) -> Result<IntegralBoundReport> {
    if !(m > 0.0) {
        return Err(param("M", "must be positive"));
    }
    let constants = lemma_constants(beta, &ratio_grid(200))?;
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &a in a_grid {
        for (name, ctrl) in psi_catalog(nu, n_cells, horizon, a, m)? {
            let cost = cost_lt(&ctrl, nu)?.total;
            if cost > m * a * a * (1.0 + 1e-12) {
                excluded.push((name, a, cost));
                continue;
            }
            rows.push(integral_bound_row(&name, &ctrl, nu, m, &constants)?);
        }
    }
    Ok(IntegralBoundReport {
        m,
        constants,
        rows,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa2_tends_to_two() {
        let grid = ratio_grid(200);
        let k = lemma_constants(1e-3, &grid).unwrap();
        assert!((k.kappa2 - 2.0).abs() < 0.01 * 2.0);
        assert!(lemma_constants(1.0, &grid).unwrap().kappa2 >= 1.0);
    }

    #[test]
    fn kappa1_decreases() {
        let t = compute_lemma_constants(&[1.0, 2.0, 5.0, 10.0, 100.0]).unwrap();
        assert!(kappa1_monotone(&t));
        assert!(t[0].kappa1_prime.is_infinite());
        assert!(t[4].kappa1 < 0.5 && t[4].kappa1_prime < 0.5);
        assert!(t.windows(2).all(|w| w[1].kappa1 < w[0].kappa1));
    }

    #[test]
    fn kappa3_is_attained_at_zero() {
        assert!((kappa3(&ratio_grid(200)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_control_has_zero_integrals() {
        let nu = MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap();
        let k = lemma_constants(0.5, &ratio_grid(50)).unwrap();
        let z = ControlField::zero(1, 10, 1.0, 0.1).unwrap();
        let row = integral_bound_row("zero", &z, &nu, 1.0, &k).unwrap();
        assert_eq!(row.part_a.0, 0.0);
        assert_eq!(row.part_c.0, 0.0);
    }

    #[test]
    fn catalog_respects_bounds_and_excludes_overspend() {
        let nu = MarkMeasure::scalar(&[(1.0, 1.0), (-1.0, 0.5)]).unwrap();
        let rep = verify_integral_bounds(2.0, &[0.5, 0.2, 0.1], 0.5, &nu, 20, 1.0).unwrap();
        assert!(rep.holds(), "{:?}", rep.rows.iter().find(|r| !r.holds()));
        assert_eq!(rep.excluded.len(), 3);
        let full = rep.rows.iter().find(|r| r.name == "constant/full").unwrap();
        assert!((full.cost - 2.0 * 0.25).abs() < 1e-9);
    }
}
