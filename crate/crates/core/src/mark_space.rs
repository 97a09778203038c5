//! Finite atomic measures on the mark space and exact `L²(ν)` geometry.
//!
//! Every integral against `ν` in the crate reduces to a weighted sum over the
//! atoms of a [`MarkMeasure`]. Functions on the mark space are carried either
//! as evaluation rules ([`MarkFunction`]) or, once tabulated against a measure,
//! as plain slices of atom values.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::sum::KahanSum;

/// A finite measure `ν = Σ_k w_k δ_{y_k}` on `R^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkMeasure {
    dim: usize,
    marks: Vec<f64>,
    weights: Vec<f64>,
    total_mass: f64,
}

impl MarkMeasure {
    /// Builds a measure from `(mark, weight)` pairs. Duplicate marks are merged
    /// by adding their weights; first-occurrence order is kept.
    pub fn new<M: AsRef<[f64]>>(atoms: impl IntoIterator<Item = (M, f64)>) -> Result<Self> {
        let mut dim = None;
        let mut marks: Vec<f64> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (mark, w) in atoms {
            let mark = mark.as_ref();
            let m = *dim.get_or_insert(mark.len());
            if mark.len() != m {
                return Err(Error::InvalidMeasure(format!(
                    "mark dimension {} differs from {}",
                    mark.len(),
                    m
                )));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "weight {w} must be finite and nonnegative"
                )));
            }
            if mark.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidMeasure(format!("non-finite mark {mark:?}")));
            }
            let n = weights.len();
            match (0..n).find(|&k| &marks[k * m..(k + 1) * m] == mark) {
                Some(k) => weights[k] += w,
                None => {
                    marks.extend_from_slice(mark);
                    weights.push(w);
                }
            }
        }
        let dim = dim.ok_or_else(|| Error::InvalidMeasure("no atoms".into()))?;
        let total_mass = crate::sum::sum(weights.iter().copied());
        Ok(Self {
            dim,
            marks,
            weights,
            total_mass,
        })
    }

    /// Scalar marks.
    pub fn scalar(atoms: &[(f64, f64)]) -> Result<Self> {
        Self::new(atoms.iter().map(|&(y, w)| ([y], w)))
    }

    /// Unit point mass `δ_y` scaled by `weight`.
    pub fn dirac(mark: &[f64], weight: f64) -> Result<Self> {
        Self::new([(mark, weight)])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mark_dim(&self) -> usize {
        self.dim
    }

    pub fn mark(&self, k: usize) -> &[f64] {
        &self.marks[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ν(X)`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.marks.chunks_exact(self.dim).zip(self.weights.iter().copied())
    }

    /// Evaluates `f` on every atom, failing on the first non-finite value.
    pub fn tabulate(&self, f: &MarkFunction) -> Result<Vec<f64>> {
        self.atoms()
            .enumerate()
            .map(|(k, (y, _))| {
                let v = f.eval(y);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteEvaluation { atom: k, value: v })
                }
            })
            .collect()
    }

    /// `Σ_k v_k w_k` for atom values `v`.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .collect::<KahanSum>()
            .value()
    }

    /// `Σ_k f_k g_k w_k`.
    pub fn inner_values(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .collect::<KahanSum>()
            .value()
    }

    /// `L²(ν)` norm of atom values.
    pub fn norm_values(&self, f: &[f64]) -> f64 {
        self.inner_values(f, f).sqrt()
    }
}

/// A real-valued function on the mark space.
#[derive(Clone)]
pub struct MarkFunction(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>);

impl MarkFunction {
    pub fn new(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c)
    }

    /// The `i`-th coordinate of the mark.
    pub fn coordinate(i: usize) -> Self {
        Self::new(move |y| y[i])
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        (self.0)(y)
    }

    /// Checks `∫|f| dν < ∞` and `∫f² dν < ∞` by direct summation.
    pub fn check_integrable(&self, nu: &MarkMeasure) -> Result<()> {
        let v = nu.tabulate(self)?;
        let l1 = nu.integrate_values(&v.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let l2 = nu.inner_values(&v, &v);
        if l1.is_finite() && l2.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "function not integrable: L1 = {l1}, L2^2 = {l2}"
            )))
        }
    }
}

impl fmt::Debug for MarkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MarkFunction(..)")
    }
}

/// `∫ f dν`.
pub fn integrate(f: &MarkFunction, nu: &MarkMeasure) -> Result<f64> {
    Ok(nu.integrate_values(&nu.tabulate(f)?))
}

/// `∫ f g dν`.
pub fn inner_l2(f: &MarkFunction, g: &MarkFunction, nu: &MarkMeasure) -> Result<f64> {
    Ok(nu.inner_values(&nu.tabulate(f)?, &nu.tabulate(g)?))
}

/// Result of [`class_h_spot_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassHCheck {
    /// `∫ exp(δ h²) dν`, `+∞` on overflow.
    pub value: f64,
    /// First atom whose term overflowed.
    pub overflow_atom: Option<usize>,
}

/// Advisory evaluation of `∫ exp(δ h²) dν` for a finite atomic `ν`.
pub fn class_h_spot_check(h: &MarkFunction, nu: &MarkMeasure, delta: f64) -> Result<ClassHCheck> {
    if !(delta > 0.0) {
        return Err(crate::error::param("delta", "must be > 0"));
    }
    let mut acc = KahanSum::new();
    for (k, (y, w)) in nu.atoms().enumerate() {
        let hv = h.eval(y);
        if !hv.is_finite() {
            return Err(Error::NonFiniteEvaluation { atom: k, value: hv });
        }
        let term = (delta * hv * hv).exp() * w;
        if !term.is_finite() {
            return Ok(ClassHCheck {
                value: f64::INFINITY,
                overflow_atom: Some(k),
            });
        }
        acc.add(term);
    }
    Ok(ClassHCheck {
        value: acc.value(),
        overflow_atom: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn id() -> MarkFunction {
        MarkFunction::coordinate(0)
    }

    #[test]
    fn integrate_examples() {
        let nu = MarkMeasure::scalar(&[(0.0, 0.5), (1.0, 1.5)]).unwrap();
        assert_eq!(integrate(&MarkFunction::constant(1.0), &nu).unwrap(), 2.0);

        let nu = MarkMeasure::scalar(&[(1.0, 1.0), (2.0, 3.0)]).unwrap();
        assert_eq!(integrate(&id(), &nu).unwrap(), 7.0);

        let nu = MarkMeasure::scalar(&[(-1.0, 2.0), (3.0, 1.0)]).unwrap();
        let sq = MarkFunction::new(|y| y[0] * y[0]);
        assert_eq!(integrate(&sq, &nu).unwrap(), 11.0);
    }

    #[test]
    fn inner_examples() {
        let nu = MarkMeasure::scalar(&[(0.0, 1.0), (1.0, 1.0)]).unwrap();
        let one = MarkFunction::constant(1.0);
        assert_eq!(inner_l2(&one, &one, &nu).unwrap(), 2.0);

        let left = MarkFunction::new(|y| if y[0] < 0.5 { 1.0 } else { 0.0 });
        let right = MarkFunction::new(|y| if y[0] >= 0.5 { 1.0 } else { 0.0 });
        assert_eq!(inner_l2(&left, &right, &nu).unwrap(), 0.0);

        let nu = MarkMeasure::scalar(&[(1.0, 1.0), (2.0, 1.0)]).unwrap();
        let sq = MarkFunction::new(|y| y[0] * y[0]);
        assert_eq!(inner_l2(&id(), &sq, &nu).unwrap(), 9.0);
    }

    #[test]
    fn class_h_examples() {
        let nu = MarkMeasure::scalar(&[(1.0, 0.3), (2.0, 0.7)]).unwrap();
        let zero = MarkFunction::constant(0.0);
        let r = class_h_spot_check(&zero, &nu, 1.0).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-15);

        let nu1 = MarkMeasure::scalar(&[(0.0, 1.0)]).unwrap();
        let r = class_h_spot_check(&MarkFunction::constant(1.0), &nu1, 1.0).unwrap();
        assert_relative_eq!(r.value, core::f64::consts::E, max_relative = 1e-15);

        let nu = MarkMeasure::scalar(&[(1.0, 1.0), (2.0, 1.0)]).unwrap();
        let r = class_h_spot_check(&id(), &nu, 0.5).unwrap();
        assert_relative_eq!(r.value, 0.5f64.exp() + 2.0f64.exp(), max_relative = 1e-14);
    }

    #[test]
    fn class_h_overflow_names_atom() {
        let nu = MarkMeasure::scalar(&[(1.0, 1.0), (100.0, 1.0)]).unwrap();
        let r = class_h_spot_check(&id(), &nu, 1.0).unwrap();
        assert!(r.value.is_infinite());
        assert_eq!(r.overflow_atom, Some(1));
        assert!(class_h_spot_check(&id(), &nu, 0.0).is_err());
    }

    #[test]
    fn non_finite_names_atom() {
        let nu = MarkMeasure::scalar(&[(1.0, 1.0), (0.0, 1.0)]).unwrap();
        let inv = MarkFunction::new(|y| 1.0 / y[0]);
        match integrate(&inv, &nu) {
            Err(Error::NonFiniteEvaluation { atom, .. }) => assert_eq!(atom, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_weights_and_merges_duplicates() {
        assert!(MarkMeasure::scalar(&[(1.0, -0.1)]).is_err());
        let nu = MarkMeasure::scalar(&[(1.0, 0.25), (2.0, 1.0), (1.0, 0.5)]).unwrap();
        assert_eq!(nu.len(), 2);
        assert_eq!(nu.weight(0), 0.75);
        assert_eq!(nu.total_mass(), 1.75);
    }

    fn atoms_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-5.0f64..5.0, 0.0f64..3.0), 1..20)
    }

    proptest! {
        #[test]
        fn integrate_is_linear(atoms in atoms_strategy(), a in -3.0f64..3.0, b in -3.0f64..3.0,
                               p in -2.0f64..2.0, q in -2.0f64..2.0) {
            let nu = MarkMeasure::scalar(&atoms).unwrap();
            let f = MarkFunction::new(move |y| (p * y[0]).sin());
            let g = MarkFunction::new(move |y| y[0] * y[0] + q);
            let (f2, g2) = (f.clone(), g.clone());
            let combo = MarkFunction::new(move |y| a * f2.eval(y) + b * g2.eval(y));
            let lhs = integrate(&combo, &nu).unwrap();
            let rhs = a * integrate(&f, &nu).unwrap() + b * integrate(&g, &nu).unwrap();
            let scale = 1.0 + lhs.abs().max(rhs.abs());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
        }

        #[test]
        fn cauchy_schwarz(atoms in atoms_strategy(), p in -2.0f64..2.0, q in -2.0f64..2.0) {
            let nu = MarkMeasure::scalar(&atoms).unwrap();
            let f = MarkFunction::new(move |y| (p * y[0]).cos() + y[0]);
            let g = MarkFunction::new(move |y| q * y[0] * y[0] - 1.0);
            let fg = inner_l2(&f, &g, &nu).unwrap();
            let ff = inner_l2(&f, &f, &nu).unwrap();
            let gg = inner_l2(&g, &g, &nu).unwrap();
            prop_assert!(fg * fg <= ff * gg * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn merging_duplicates_preserves_integrals(atoms in atoms_strategy(), split in 0.0f64..1.0) {
            let nu = MarkMeasure::scalar(&atoms).unwrap();
            let mut doubled = Vec::new();
            for &(y, w) in &atoms {
                doubled.push((y, w * split));
                doubled.push((y, w * (1.0 - split)));
            }
            let nu2 = MarkMeasure::scalar(&doubled).unwrap();
            let f = MarkFunction::new(|y| y[0].exp());
            let a = integrate(&f, &nu).unwrap();
            let b = integrate(&f, &nu2).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
