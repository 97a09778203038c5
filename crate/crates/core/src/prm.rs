//! Poisson random measures, controlled (thinned) random measures, the
//! entropy cost of a tilt and the likelihood ratio between tilted and
//! untilted laws.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Poisson;

use crate::error::{param, Error, Result};
use crate::mark_space::MarkMeasure;
use crate::rng;
use crate::sum::KahanSum;

/// `ℓ(r) = r log r − r + 1` for `r ≥ 0`, with `ℓ(0) = 1`.
pub fn ell(r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("ell({r}) undefined for r < 0")));
    }
    Ok(ell_unchecked(r))
}

#[inline]
pub(crate) fn ell_unchecked(r: f64) -> f64 {
    let h = r - 1.0;
    if r == 0.0 {
        1.0
    } else if h.abs() < 1e-2 {
        // Σ_{n≥2} (−h)^n / (n(n−1)), free of cancellation near r = 1.
        let mut term = h * h;
        let mut acc = 0.0;
        for n in 2..14 {
            acc += term / (n * (n - 1)) as f64;
            term *= -h;
        }
        acc
    } else {
        r * r.ln() - r + 1.0
    }
}

/// One point of a realization: a jump time and the index of its mark atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub atom: usize,
}

/// A sampled random measure on `X × [0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRealization {
    pub events: Vec<Event>,
    pub horizon: f64,
    /// Intensity multiplier `θ` the realization was drawn with.
    pub base_rate: f64,
}

impl PointRealization {
    /// Validates ordering, time range and atom indices, then wraps `events`.
    pub fn new(events: Vec<Event>, horizon: f64, base_rate: f64, n_atoms: usize) -> Result<Self> {
        let r = Self {
            events,
            horizon,
            base_rate,
        };
        r.validate(n_atoms)?;
        Ok(r)
    }

    pub fn empty(horizon: f64, base_rate: f64) -> Self {
        Self {
            events: Vec::new(),
            horizon,
            base_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn validate(&self, n_atoms: usize) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.time >= 0.0 && e.time <= self.horizon) {
                return Err(Error::EventOutOfRange {
                    time: e.time,
                    horizon: self.horizon,
                });
            }
            if e.atom >= n_atoms {
                return Err(Error::BadAtomIndex { atom: e.atom, n_atoms });
            }
            if !(e.time > prev) {
                return Err(Error::Construction(format!(
                    "event times not strictly increasing at t = {}",
                    e.time
                )));
            }
            prev = e.time;
        }
        Ok(())
    }

    /// Event counts per `(atom, cell)` on a uniform grid of `n_cells` cells,
    /// laid out atom-major.
    pub fn cell_counts(&self, n_atoms: usize, n_cells: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_atoms * n_cells];
        let dt = self.horizon / n_cells as f64;
        for e in &self.events {
            let c = cell_index(e.time, dt, n_cells);
            counts[e.atom * n_cells + c] += 1;
        }
        counts
    }
}

#[inline]
pub(crate) fn cell_index(t: f64, dt: f64, n_cells: usize) -> usize {
    let c = (t / dt).floor();
    if c < 0.0 {
        0
    } else {
        (c as usize).min(n_cells - 1)
    }
}

/// A deterministic centered control `ψ(y_k, cell)` on a uniform time grid and
/// the intensity tilt `φ = 1 + a ψ` it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    psi: Vec<f64>,
    n_atoms: usize,
    n_cells: usize,
    horizon: f64,
    a_eps: f64,
}

impl ControlField {
    /// `psi` is atom-major: `psi[k * n_cells + c]`. Rejects any cell where the
    /// tilt `1 + a_eps ψ` is negative.
    pub fn new(psi: Vec<f64>, n_atoms: usize, n_cells: usize, horizon: f64, a_eps: f64) -> Result<Self> {
        if n_cells == 0 {
            return Err(param("n_cells", "must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(param("horizon", "must be positive"));
        }
        if !(a_eps > 0.0) {
            return Err(param("a_eps", "must be positive"));
        }
        if psi.len() != n_atoms * n_cells {
            return Err(Error::Dimension {
                expected: n_atoms * n_cells,
                got: psi.len(),
            });
        }
        for (i, &p) in psi.iter().enumerate() {
            let phi = 1.0 + a_eps * p;
            if !(phi >= 0.0) {
                return Err(Error::NegativeTilt {
                    atom: i / n_cells,
                    cell: i % n_cells,
                    value: phi,
                });
            }
        }
        Ok(Self {
            psi,
            n_atoms,
            n_cells,
            horizon,
            a_eps,
        })
    }

    /// `ψ ≡ 0`.
    pub fn zero(n_atoms: usize, n_cells: usize, horizon: f64, a_eps: f64) -> Result<Self> {
        Self::new(vec![0.0; n_atoms * n_cells], n_atoms, n_cells, horizon, a_eps)
    }

    /// Builds the field from tilt values `φ` (atom-major), setting `ψ = (φ − 1)/a`.
    pub fn from_phi(phi: &[f64], n_atoms: usize, n_cells: usize, horizon: f64, a_eps: f64) -> Result<Self> {
        for (i, &f) in phi.iter().enumerate() {
            if !(f >= 0.0) {
                return Err(Error::NegativeTilt {
                    atom: i / n_cells.max(1),
                    cell: i % n_cells.max(1),
                    value: f,
                });
            }
        }
        let psi = phi.iter().map(|f| (f - 1.0) / a_eps).collect();
        Self::new(psi, n_atoms, n_cells, horizon, a_eps)
    }

    /// Constant tilt `φ ≡ c` with `a = 1`.
    pub fn constant_phi(c: f64, n_atoms: usize, n_cells: usize, horizon: f64) -> Result<Self> {
        Self::from_phi(&vec![c; n_atoms * n_cells], n_atoms, n_cells, horizon, 1.0)
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn a_eps(&self) -> f64 {
        self.a_eps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_cells as f64
    }

    pub fn psi_values(&self) -> &[f64] {
        &self.psi
    }

    #[inline]
    pub fn psi(&self, atom: usize, cell: usize) -> f64 {
        self.psi[atom * self.n_cells + cell]
    }

    #[inline]
    pub fn phi(&self, atom: usize, cell: usize) -> f64 {
        1.0 + self.a_eps * self.psi(atom, cell)
    }

    pub fn cell_of(&self, t: f64) -> usize {
        cell_index(t, self.dt(), self.n_cells)
    }

    /// `ψ` values of one cell across atoms.
    pub fn psi_cell(&self, cell: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_atoms).map(move |k| self.psi(k, cell))
    }

    /// `‖ψ‖²` in `L²(ν ⊗ dt)`.
    pub fn psi_norm_sq(&self, nu: &MarkMeasure) -> f64 {
        let dt = self.dt();
        let mut acc = KahanSum::new();
        for k in 0..self.n_atoms {
            let w = nu.weight(k);
            for c in 0..self.n_cells {
                let p = self.psi(k, c);
                acc.add(p * p * w * dt);
            }
        }
        acc.value()
    }

    fn check_measure(&self, nu: &MarkMeasure) -> Result<()> {
        if nu.len() != self.n_atoms {
            return Err(Error::Dimension {
                expected: self.n_atoms,
                got: nu.len(),
            });
        }
        Ok(())
    }
}

/// Entropy cost `L_T(φ) = ∫ ℓ(φ) dν_T`, broken down by time cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub total: f64,
    pub per_cell: Vec<f64>,
}

/// Cost of the tilt carried by `ctrl`.
pub fn cost_lt(ctrl: &ControlField, nu: &MarkMeasure) -> Result<CostReport> {
    ctrl.check_measure(nu)?;
    let dt = ctrl.dt();
    let per_cell: Vec<f64> = (0..ctrl.n_cells)
        .map(|c| {
            (0..ctrl.n_atoms)
                .map(|k| ell_unchecked(ctrl.phi(k, c)) * nu.weight(k) * dt)
                .collect::<KahanSum>()
                .value()
        })
        .collect();
    let total = crate::sum::sum(per_cell.iter().copied());
    Ok(CostReport { total, per_cell })
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // `Poisson::new` only fails for non-positive or non-finite means.
    let d = Poisson::new(mean).expect("finite positive Poisson mean");
    d.sample(rng) as u64
}

fn sort_and_untie<R: Rng + ?Sized>(events: &mut [Event], lo: f64, hi: f64, rng: &mut R) {
    loop {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let tie = events.windows(2).position(|w| w[0].time == w[1].time);
        match tie {
            Some(i) => events[i + 1].time = rng.random_range(lo..hi),
            None => break,
        }
    }
}

/// Samples a Poisson random measure with intensity `θ ν ⊗ dt` on `[0, T]`.
pub fn sample_prm(nu: &MarkMeasure, theta: f64, horizon: f64, seed: u64) -> Result<PointRealization> {
    if !(theta > 0.0) {
        return Err(param("theta", "must be > 0"));
    }
    if !(horizon > 0.0) {
        return Err(param("horizon", "must be > 0"));
    }
    let mass = nu.total_mass();
    if mass == 0.0 {
        return Ok(PointRealization::empty(horizon, theta));
    }
    let mut rng = rng::stream(seed, 0);
    let n = poisson_count(theta * mass * horizon, &mut rng);
    let marks = WeightedIndex::new(nu.weights()).map_err(|e| Error::InvalidMeasure(format!("{e}")))?;
    let mut events: Vec<Event> = (0..n)
        .map(|_| Event {
            time: rng.random_range(0.0..horizon),
            atom: marks.sample(&mut rng),
        })
        .collect();
    sort_and_untie(&mut events, 0.0, horizon, &mut rng);
    Ok(PointRealization {
        events,
        horizon,
        base_rate: theta,
    })
}

/// Samples the controlled measure `N^{θφ}` by thinning: in each time cell a
/// dominating measure with intensity `θ φ_max(cell) ν` is drawn and each point
/// is kept with probability `φ(atom, cell) / φ_max(cell)`.
pub fn sample_controlled_prm(nu: &MarkMeasure, theta: f64, ctrl: &ControlField, seed: u64) -> Result<PointRealization> {
    if !(theta > 0.0) {
        return Err(param("theta", "must be > 0"));
    }
    ctrl.check_measure(nu)?;
    let horizon = ctrl.horizon;
    let mass = nu.total_mass();
    if mass == 0.0 {
        return Ok(PointRealization::empty(horizon, theta));
    }
    let marks = WeightedIndex::new(nu.weights()).map_err(|e| Error::InvalidMeasure(format!("{e}")))?;
    let dt = ctrl.dt();
    let mut events = Vec::new();
    for c in 0..ctrl.n_cells {
        let phi_max = (0..ctrl.n_atoms).map(|k| ctrl.phi(k, c)).fold(0.0f64, f64::max);
        if phi_max <= 0.0 {
            continue;
        }
        let mut rng = rng::stream(seed, c as u64 + 1);
        let lo = c as f64 * dt;
        let hi = if c + 1 == ctrl.n_cells { horizon } else { lo + dt };
        let n = poisson_count(theta * phi_max * mass * (hi - lo), &mut rng);
        let start = events.len();
        for _ in 0..n {
            let atom = marks.sample(&mut rng);
            let time = rng.random_range(lo..hi);
            let keep = ctrl.phi(atom, c) / phi_max;
            let u: f64 = rng.random();
            if u < keep {
                events.push(Event { time, atom });
            }
        }
        let mut cell_events = events.split_off(start);
        sort_and_untie(&mut cell_events, lo, hi, &mut rng);
        events.extend(cell_events);
    }
    Ok(PointRealization {
        events,
        horizon,
        base_rate: theta,
    })
}

/// Log-density of the `φ`-tilted law of `N^θ` with respect to the untilted
/// law, evaluated on `real`:
/// `Σ_events log φ − θ Σ_cells (φ − 1) w Δt`.
///
/// Returns `-∞` when an event falls where `φ = 0`.
pub fn girsanov_log_lr(real: &PointRealization, ctrl: &ControlField, nu: &MarkMeasure, theta: f64) -> Result<f64> {
    ctrl.check_measure(nu)?;
    if (real.horizon - ctrl.horizon).abs() > 1e-12 * ctrl.horizon {
        return Err(Error::GridMismatch(format!(
            "realization horizon {} vs control horizon {}",
            real.horizon, ctrl.horizon
        )));
    }
    let mut acc = KahanSum::new();
    for e in &real.events {
        if e.atom >= ctrl.n_atoms {
            return Err(Error::BadAtomIndex {
                atom: e.atom,
                n_atoms: ctrl.n_atoms,
            });
        }
        let phi = ctrl.phi(e.atom, ctrl.cell_of(e.time));
        if phi <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        acc.add(phi.ln());
    }
    let dt = ctrl.dt();
    for k in 0..ctrl.n_atoms {
        let w = nu.weight(k);
        for c in 0..ctrl.n_cells {
            acc.add(-theta * (ctrl.phi(k, c) - 1.0) * w * dt);
        }
    }
    Ok(acc.value())
}

/// Truncated tilt `φ = 1 + a ψ 1{|ψ| ≤ β/a}`; the stored `ψ` is the truncated one.
pub fn build_tilt_from_psi(
    psi: &[f64],
    n_atoms: usize,
    n_cells: usize,
    horizon: f64,
    a_eps: f64,
    beta: f64,
) -> Result<ControlField> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(param("beta", "must lie in (0, 1]"));
    }
    if !(a_eps > 0.0) {
        return Err(param("a_eps", "must be positive"));
    }
    let cut = beta / a_eps;
    let truncated = psi.iter().map(|&p| if p.abs() <= cut { p } else { 0.0 }).collect();
    ControlField::new(truncated, n_atoms, n_cells, horizon, a_eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ell_examples() {
        assert_eq!(ell(1.0).unwrap(), 0.0);
        assert_eq!(ell(0.0).unwrap(), 1.0);
        assert_relative_eq!(ell(core::f64::consts::E).unwrap(), 1.0, max_relative = 1e-15);
        assert!(ell(-1e-3).is_err());
    }

    #[test]
    fn cost_examples() {
        let nu = MarkMeasure::scalar(&[(1.0, 0.5)]).unwrap();
        let ones = ControlField::zero(1, 4, 2.0, 0.3).unwrap();
        assert_eq!(cost_lt(&ones, &nu).unwrap().total, 0.0);

        let e = ControlField::constant_phi(core::f64::consts::E, 1, 4, 2.0).unwrap();
        assert_relative_eq!(cost_lt(&e, &nu).unwrap().total, 1.0, max_relative = 1e-14);

        let z = ControlField::constant_phi(0.0, 1, 4, 2.0).unwrap();
        let r = cost_lt(&z, &nu).unwrap();
        assert_relative_eq!(r.total, 1.0, max_relative = 1e-14);
        assert_eq!(r.per_cell.len(), 4);
    }

    #[test]
    fn tilt_truncation_examples() {
        let f = build_tilt_from_psi(&[0.0; 6], 2, 3, 1.0, 0.1, 1.0).unwrap();
        assert!((0..2).all(|k| (0..3).all(|c| f.phi(k, c) == 1.0)));

        let f = build_tilt_from_psi(&[-2.0; 6], 2, 3, 1.0, 0.1, 1.0).unwrap();
        assert_relative_eq!(f.phi(1, 2), 0.8, max_relative = 1e-15);

        let f = build_tilt_from_psi(&[20.0; 6], 2, 3, 1.0, 0.1, 1.0).unwrap();
        assert_eq!(f.phi(0, 0), 1.0);

        assert!(build_tilt_from_psi(&[0.0; 6], 2, 3, 1.0, 0.1, 0.0).is_err());
        assert!(build_tilt_from_psi(&[0.0; 6], 2, 3, 1.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn negative_tilt_is_rejected() {
        match ControlField::new(alloc::vec![0.0, -20.0], 1, 2, 1.0, 0.1) {
            Err(Error::NegativeTilt { atom: 0, cell: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lr_closed_form_for_constant_tilt() {
        let nu = MarkMeasure::scalar(&[(1.0, 0.7), (2.0, 0.3)]).unwrap();
        let theta = 3.0;
        let c = 1.7;
        let ctrl = ControlField::constant_phi(c, 2, 5, 2.0).unwrap();
        let real = sample_prm(&nu, theta, 2.0, 11).unwrap();
        let lam = theta * nu.total_mass() * 2.0;
        let expected = real.len() as f64 * c.ln() - lam * (c - 1.0);
        let got = girsanov_log_lr(&real, &ctrl, &nu, theta).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);

        let ones = ControlField::zero(2, 5, 2.0, 1.0).unwrap();
        assert_eq!(girsanov_log_lr(&real, &ones, &nu, theta).unwrap(), 0.0);
    }

    #[test]
    fn lr_is_neg_infinite_on_killed_cells() {
        let nu = MarkMeasure::scalar(&[(1.0, 1.0)]).unwrap();
        let ctrl = ControlField::constant_phi(0.0, 1, 1, 1.0).unwrap();
        let real = PointRealization::new(alloc::vec![Event { time: 0.5, atom: 0 }], 1.0, 1.0, 1).unwrap();
        assert_eq!(girsanov_log_lr(&real, &ctrl, &nu, 1.0).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn samples_are_sorted_valid_and_seeded() {
        let nu = MarkMeasure::scalar(&[(1.0, 0.25), (2.0, 0.75)]).unwrap();
        let a = sample_prm(&nu, 50.0, 1.0, 5).unwrap();
        let b = sample_prm(&nu, 50.0, 1.0, 5).unwrap();
        assert_eq!(a, b);
        a.validate(2).unwrap();

        let ctrl = ControlField::from_phi(&[2.0, 0.0, 1.0, 0.5], 2, 2, 1.0, 0.5).unwrap();
        let c = sample_controlled_prm(&nu, 50.0, &ctrl, 9).unwrap();
        c.validate(2).unwrap();
        assert!(c.events.iter().all(|e| !(e.atom == 0 && e.time >= 0.5)));
    }

    #[test]
    fn zero_mass_gives_empty_realization() {
        let nu = MarkMeasure::scalar(&[(1.0, 0.0)]).unwrap();
        assert!(sample_prm(&nu, 2.0, 1.0, 1).unwrap().is_empty());
    }

    #[test]
    fn bad_events_are_rejected() {
        let e = alloc::vec![Event { time: 1.5, atom: 0 }];
        assert!(matches!(
            PointRealization::new(e, 1.0, 1.0, 1),
            Err(Error::EventOutOfRange { .. })
        ));
        let e = alloc::vec![Event { time: 0.5, atom: 3 }];
        assert!(matches!(
            PointRealization::new(e, 1.0, 1.0, 1),
            Err(Error::BadAtomIndex { .. })
        ));
    }

    proptest! {
        #[test]
        fn ell_is_convex(x in 0.0f64..50.0, y in 0.0f64..50.0, lam in 0.0f64..1.0) {
            let mid = ell_unchecked(lam * x + (1.0 - lam) * y);
            let chord = lam * ell_unchecked(x) + (1.0 - lam) * ell_unchecked(y);
            prop_assert!(mid <= chord + 1e-12 * (1.0 + chord));
            prop_assert!(ell_unchecked(x) >= 0.0);
        }
    }
}
