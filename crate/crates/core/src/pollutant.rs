//! Galerkin truncation of a pollutant transport model on the box `[0, l]^d`:
//!
//! `∂u = DΔu − V·∇u − αu + Σ_i K_i(u[η₁], …, u[η_m]) ζ_i + injections`
//!
//! with Neumann boundary conditions. Each injection atom `(x, a)` adds mass
//! `a · K₀(u[η]) · c_ζ⁻¹ · 1_{B_ζ(x)}` at rate `ν(x, a) / ε`.
//!
//! Coordinates are taken against the eigenbasis of `A = DΔ − V·∇`, which is
//! orthonormal in `L²(ρ₀ dx)` with `ρ₀(x) = exp(−2 Σ c_i x_i)` and
//! `c_i = V_i / (2D)`. Per axis the eigenpairs are
//!
//! * `φ₀ = √(2c / (1 − e^{−2cl}))`, `λ₀ = 0`;
//! * `φ_j(x) = √(2/l) e^{cx} sin(jπx/l + α_j)` with `α_j = atan(−jπ/(lc))`
//!   and `λ_j = D(c² + (jπ/l)²)`.
//!
//! When `V_i = 0` the limits `φ₀ = √(1/l)` and `α_j = −π/2` are used.
//! Multi-index modes are tensor products; all multi-indices with every
//! component at most `J` are kept.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::jump_sde::{fluid_limit, integrate_xeps, rescale_yeps, Dynamics, ModelSpec, PathGrid};
use crate::mark_space::MarkMeasure;
use crate::prm::sample_prm;
use crate::quadrature::gauss_legendre;

/// Sparse coefficients keyed by multi-index. Entries for modes outside the
/// retained set are ignored.
pub type ModeVector = Vec<(Vec<usize>, f64)>;

/// Nonlinearities `K : R^m → R`.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    Constant(f64),
    /// `offset + weights · p`
    Affine {
        weights: Vec<f64>,
        offset: f64,
    },
    /// `amplitude · tanh(offset + weights · p)`
    Tanh {
        amplitude: f64,
        weights: Vec<f64>,
        offset: f64,
    },
}

impl Kernel {
    fn weights(&self) -> Option<&[f64]> {
        match self {
            Kernel::Constant(_) => None,
            Kernel::Affine { weights, .. } | Kernel::Tanh { weights, .. } => Some(weights),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.weights().is_none_or(|w| w.iter().all(|&c| c == 0.0))
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        let dot = |w: &[f64]| w.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
        match self {
            Kernel::Constant(c) => *c,
            Kernel::Affine { weights, offset } => offset + dot(weights),
            Kernel::Tanh {
                amplitude,
                weights,
                offset,
            } => amplitude * (offset + dot(weights)).tanh(),
        }
    }

    /// `∇K(p)` written into `out`.
    pub fn gradient(&self, p: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Constant(_) => out.iter_mut().for_each(|v| *v = 0.0),
            Kernel::Affine { weights, .. } => out.copy_from_slice(weights),
            Kernel::Tanh {
                amplitude,
                weights,
                offset,
            } => {
                let s: f64 = offset + weights.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
                let t = s.tanh();
                let scale = amplitude * (1.0 - t * t);
                for (o, w) in out.iter_mut().zip(weights) {
                    *o = scale * w;
                }
            }
        }
    }
}

/// One atom `(x, a)` of the injection measure with weight `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionAtom {
    pub center: Vec<f64>,
    pub magnitude: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct PollutantParams {
    pub d_space: usize,
    pub side: f64,
    pub diffusivity: f64,
    pub velocity: Vec<f64>,
    pub decay: f64,
    pub radius: f64,
    /// Box truncation level `J`.
    pub modes: usize,
    /// `K₀`, multiplying every injection.
    pub jump_kernel: Kernel,
    /// `K₁, …, K_ℓ`, paired with `outputs`.
    pub drift_kernels: Vec<Kernel>,
    /// `η₁, …, η_m`.
    pub probes: Vec<ModeVector>,
    /// `ζ₁, …, ζ_ℓ`.
    pub outputs: Vec<ModeVector>,
    pub atoms: Vec<InjectionAtom>,
    pub x0: ModeVector,
    pub horizon: f64,
    /// Points per coordinate of the ball quadrature.
    pub ball_points: usize,
}

fn bad(name: &'static str, reason: impl Into<String>) -> Error {
    crate::error::param(name, reason)
}

impl PollutantParams {
    /// One-dimensional linear model on `[0, 1]` with a single injection site.
    pub fn linear_1d(modes: usize) -> Self {
        Self {
            d_space: 1,
            side: 1.0,
            diffusivity: 1.0,
            velocity: vec![2.0],
            decay: 0.5,
            radius: 0.1,
            modes,
            jump_kernel: Kernel::Constant(1.0),
            drift_kernels: Vec::new(),
            probes: Vec::new(),
            outputs: Vec::new(),
            atoms: vec![InjectionAtom {
                center: vec![0.3],
                magnitude: 1.0,
                weight: 1.0,
            }],
            x0: Vec::new(),
            horizon: 1.0,
            ball_points: 32,
        }
    }

    /// Nonlinear one-dimensional benchmark: injections throttled by the
    /// mean concentration and a saturating feedback on the first mode.
    pub fn nonlinear_1d(modes: usize) -> Self {
        Self {
            jump_kernel: Kernel::Tanh {
                amplitude: 1.0,
                weights: vec![-0.5],
                offset: 1.0,
            },
            drift_kernels: vec![Kernel::Tanh {
                amplitude: 0.5,
                weights: vec![1.0],
                offset: 0.0,
            }],
            probes: vec![vec![(vec![0], 1.0)]],
            outputs: vec![vec![(vec![1], -1.0)]],
            atoms: vec![
                InjectionAtom {
                    center: vec![0.3],
                    magnitude: 1.0,
                    weight: 1.0,
                },
                InjectionAtom {
                    center: vec![0.7],
                    magnitude: 0.5,
                    weight: 2.0,
                },
            ],
            ..Self::linear_1d(modes)
        }
    }

    pub fn with_modes(&self, modes: usize) -> Self {
        Self { modes, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.d_space) {
            return Err(bad("d_space", "must be 1, 2 or 3"));
        }
        if !(self.side > 0.0) {
            return Err(bad("side", "must be positive"));
        }
        if !(self.diffusivity > 0.0) {
            return Err(bad("diffusivity", "must be positive"));
        }
        if self.velocity.len() != self.d_space || self.velocity.iter().any(|v| !v.is_finite()) {
            return Err(bad("velocity", format!("needs {} finite components", self.d_space)));
        }
        if !(self.decay >= 0.0) {
            return Err(bad("decay", "must be nonnegative"));
        }
        if !(self.radius > 0.0) {
            return Err(bad("radius", "must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(bad("horizon", "must be positive"));
        }
        if self.ball_points < 2 {
            return Err(bad("ball_points", "needs at least 2"));
        }
        if self.drift_kernels.len() != self.outputs.len() {
            return Err(bad("outputs", "one output function per drift kernel"));
        }
        let m = self.probes.len();
        for k in self.drift_kernels.iter().chain([&self.jump_kernel]) {
            if k.weights().is_some_and(|w| w.len() != m) {
                return Err(bad("kernels", format!("kernel arity must equal the {m} probes")));
            }
        }
        for mv in self.probes.iter().chain(&self.outputs).chain([&self.x0]) {
            if mv.iter().any(|(j, _)| j.len() != self.d_space) {
                return Err(bad("mode vector", "multi-index length must equal d_space"));
            }
        }
        if self.atoms.is_empty() {
            return Err(bad("atoms", "at least one injection atom"));
        }
        for (k, a) in self.atoms.iter().enumerate() {
            if a.center.len() != self.d_space {
                return Err(bad("atoms", format!("atom {k}: center has wrong dimension")));
            }
            if !(a.magnitude >= 0.0) {
                return Err(bad("atoms", format!("atom {k}: magnitude must be nonnegative")));
            }
            let tol = 1e-12 * self.side;
            if a.center
                .iter()
                .any(|&c| c - self.radius < -tol || c + self.radius > self.side + tol)
            {
                return Err(Error::Construction(format!(
                    "atom {k}: injection ball of radius {} around {:?} leaves the box [0, {}]^{}",
                    self.radius, a.center, self.side, self.d_space
                )));
            }
        }
        Ok(())
    }
}

/// Tensor-product eigenpairs of `A` on the retained modes.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    d_space: usize,
    side: f64,
    diffusivity: f64,
    c: Vec<f64>,
    j_max: usize,
    indices: Vec<Vec<usize>>,
    lambda: Vec<f64>,
}

fn for_each_multi(d: usize, n: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; d];
    loop {
        f(&idx);
        let mut axis = d;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
}

pub fn build_eigensystem(params: &PollutantParams) -> Result<EigenSystem> {
    params.validate()?;
    let c: Vec<f64> = params.velocity.iter().map(|v| v / (2.0 * params.diffusivity)).collect();
    let mut sys = EigenSystem {
        d_space: params.d_space,
        side: params.side,
        diffusivity: params.diffusivity,
        c,
        j_max: params.modes,
        indices: Vec::new(),
        lambda: Vec::new(),
    };
    let mut indices = Vec::new();
    let mut lambda = Vec::new();
    for_each_multi(params.d_space, params.modes + 1, |j| {
        indices.push(j.to_vec());
        lambda.push(j.iter().enumerate().map(|(i, &ji)| sys.axis_lambda(i, ji)).sum());
    });
    sys.indices = indices;
    sys.lambda = lambda;
    Ok(sys)
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn d_space(&self) -> usize {
        self.d_space
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `(1 + λ_j)^n`.
    pub fn norm_factor(&self, mode: usize, n: f64) -> f64 {
        (1.0 + self.lambda[mode]).powf(n)
    }

    /// Position of a multi-index among the retained modes.
    pub fn position(&self, j: &[usize]) -> Option<usize> {
        if j.len() != self.d_space || j.iter().any(|&c| c > self.j_max) {
            return None;
        }
        Some(j.iter().fold(0, |acc, &c| acc * (self.j_max + 1) + c))
    }

    pub fn axis_lambda(&self, axis: usize, j: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        let k = j as f64 * PI / self.side;
        self.diffusivity * (self.c[axis] * self.c[axis] + k * k)
    }

    /// `φ_j^{(axis)}(x)`.
    pub fn axis_phi(&self, axis: usize, j: usize, x: f64) -> f64 {
        let c = self.c[axis];
        let l = self.side;
        if j == 0 {
            return if c == 0.0 {
                (1.0 / l).sqrt()
            } else {
                (2.0 * c / (1.0 - (-2.0 * c * l).exp())).sqrt()
            };
        }
        let k = j as f64 * PI / l;
        let phase = if c == 0.0 { -0.5 * PI } else { (-k / c).atan() };
        (2.0 / l).sqrt() * (c * x).exp() * (k * x + phase).sin()
    }

    fn axis_table(&self, axis: usize, x: f64, weighted: bool, out: &mut [f64]) {
        let rho = if weighted { (-2.0 * self.c[axis] * x).exp() } else { 1.0 };
        for (j, o) in out.iter_mut().enumerate() {
            *o = rho * self.axis_phi(axis, j, x);
        }
    }

    /// `φ_j(x)` for the mode at position `mode`.
    pub fn phi(&self, mode: usize, x: &[f64]) -> f64 {
        self.indices[mode]
            .iter()
            .enumerate()
            .map(|(i, &j)| self.axis_phi(i, j, x[i]))
            .product()
    }

    /// `ρ₀(x) = exp(−2 Σ c_i x_i)`.
    pub fn rho0(&self, x: &[f64]) -> f64 {
        (-2.0 * self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>()).exp()
    }

    /// Accumulates `Σ_points w(z) g(z) φ_j(z) [ρ₀(z)]` for all modes into `out`.
    fn accumulate(&self, z: &[f64], weight: f64, weighted: bool, tables: &mut [Vec<f64>], out: &mut [f64]) {
        for (i, t) in tables.iter_mut().enumerate() {
            self.axis_table(i, z[i], weighted, t);
        }
        for (o, j) in out.iter_mut().zip(&self.indices) {
            let mut v = weight;
            for (i, &ji) in j.iter().enumerate() {
                v *= tables[i][ji];
            }
            *o += v;
        }
    }

    fn tables(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.j_max + 1]; self.d_space]
    }

    /// `⟨f, φ_j⟩_{ρ₀}` by an `n_gauss`-point tensor Gauss rule.
    pub fn project_function(&self, f: impl Fn(&[f64]) -> f64, n_gauss: usize) -> Vec<f64> {
        let (x, w) = gauss_legendre(n_gauss, 0.0, self.side);
        let mut out = vec![0.0; self.len()];
        let mut tables = self.tables();
        let mut z = vec![0.0; self.d_space];
        for_each_multi(self.d_space, n_gauss, |p| {
            let mut wt = 1.0;
            for (i, &pi) in p.iter().enumerate() {
                z[i] = x[pi];
                wt *= w[pi];
            }
            let fz = f(&z);
            if fz != 0.0 {
                self.accumulate(&z, wt * fz, true, &mut tables, &mut out);
            }
        });
        out
    }

    /// Dense coefficients of a sparse mode vector; unretained modes are dropped.
    pub fn project_modes(&self, mv: &ModeVector) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (j, v) in mv {
            if let Some(p) = self.position(j) {
                out[p] += v;
            }
        }
        out
    }

    /// `u(x) = Σ_j v_j φ_j(x)`.
    pub fn reconstruct(&self, coeffs: &[f64], x: &[f64]) -> f64 {
        let mut tables = self.tables();
        let mut vals = vec![0.0; self.len()];
        self.accumulate(x, 1.0, false, &mut tables, &mut vals);
        vals.iter().zip(coeffs).map(|(a, b)| a * b).sum()
    }

    /// `max_{j,k} |∫ φ_j φ_k ρ₀ − δ_jk|` under an `n_gauss`-point rule per axis.
    /// The weighted Gram matrix factorizes over axes, so each axis is
    /// integrated separately.
    pub fn orthonormality_error(&self, n_gauss: usize) -> f64 {
        let n = self.j_max + 1;
        let (x, w) = gauss_legendre(n_gauss, 0.0, self.side);
        let axis_gram: Vec<Vec<f64>> = (0..self.d_space)
            .map(|i| {
                let mut g = vec![0.0; n * n];
                let mut t = vec![0.0; n];
                for (xq, wq) in x.iter().zip(&w) {
                    self.axis_table(i, *xq, false, &mut t);
                    let rho = (-2.0 * self.c[i] * xq).exp();
                    for a in 0..n {
                        for b in 0..n {
                            g[a * n + b] += wq * rho * t[a] * t[b];
                        }
                    }
                }
                g
            })
            .collect();
        let mut worst = 0.0f64;
        for (p, j) in self.indices.iter().enumerate() {
            for (q, k) in self.indices.iter().enumerate() {
                let v: f64 = (0..self.d_space).map(|i| axis_gram[i][j[i] * n + k[i]]).product();
                let target = if p == q { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// `∫_{B_ζ(x)} φ_j ρ₀ dz` for every mode, with `n` nodes per coordinate.
    /// The ball is parametrized by an interval (`d = 1`), polar (`d = 2`) or
    /// spherical (`d = 3`) coordinates, with Gauss rules in the radial and
    /// polar directions and the trapezoid rule in azimuth.
    pub fn ball_integrals(&self, center: &[f64], radius: f64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        let mut tables = self.tables();
        let mut z = center.to_vec();
        match self.d_space {
            1 => {
                let (x, w) = gauss_legendre(n, center[0] - radius, center[0] + radius);
                for (xq, wq) in x.iter().zip(&w) {
                    z[0] = *xq;
                    self.accumulate(&z, *wq, true, &mut tables, &mut out);
                }
            }
            2 => {
                let (r, wr) = gauss_legendre(n, 0.0, radius);
                let m = 2 * n;
                let dth = 2.0 * PI / m as f64;
                for (rq, wq) in r.iter().zip(&wr) {
                    for t in 0..m {
                        let th = t as f64 * dth;
                        z[0] = center[0] + rq * th.cos();
                        z[1] = center[1] + rq * th.sin();
                        self.accumulate(&z, wq * rq * dth, true, &mut tables, &mut out);
                    }
                }
            }
            _ => {
                let (r, wr) = gauss_legendre(n, 0.0, radius);
                let (mu, wmu) = gauss_legendre(n, -1.0, 1.0);
                let m = 2 * n;
                let dph = 2.0 * PI / m as f64;
                for (rq, wq) in r.iter().zip(&wr) {
                    for (cq, wc) in mu.iter().zip(&wmu) {
                        let s = (1.0 - cq * cq).sqrt();
                        for p in 0..m {
                            let ph = p as f64 * dph;
                            z[0] = center[0] + rq * s * ph.cos();
                            z[1] = center[1] + rq * s * ph.sin();
                            z[2] = center[2] + rq * cq;
                            self.accumulate(&z, wq * wc * rq * rq * dph, true, &mut tables, &mut out);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Volume of the ball of radius `r` in `R^d`, `d ≤ 3`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    match d {
        1 => 2.0 * r,
        2 => PI * r * r,
        _ => 4.0 / 3.0 * PI * r * r * r,
    }
}

/// Coefficient dynamics of the truncated model.
#[derive(Debug, Clone)]
pub struct PollutantDynamics {
    n: usize,
    damping: Vec<f64>,
    probes: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    drift_kernels: Vec<Kernel>,
    jump_kernel: Kernel,
    /// Per atom `a · c_ζ⁻¹ · ∫_{B_ζ(x)} φ_j ρ₀`.
    injections: Vec<Vec<f64>>,
}

impl PollutantDynamics {
    fn probe_values(&self, v: &[f64]) -> Vec<f64> {
        self.probes
            .iter()
            .map(|eta| eta.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Σ_k ∂_k K(p) η_k` as a row over modes.
    fn chain_row(&self, kernel: &Kernel, p: &[f64], row: &mut [f64]) {
        row.iter_mut().for_each(|r| *r = 0.0);
        if kernel.is_constant() {
            return;
        }
        let mut grad = vec![0.0; p.len()];
        kernel.gradient(p, &mut grad);
        for (g, eta) in grad.iter().zip(&self.probes) {
            for (r, e) in row.iter_mut().zip(eta) {
                *r += g * e;
            }
        }
    }

    pub fn injection(&self, atom: usize) -> &[f64] {
        &self.injections[atom]
    }
}

impl Dynamics for PollutantDynamics {
    fn dim(&self) -> usize {
        self.n
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), lam) in out.iter_mut().zip(x).zip(&self.damping) {
            *o = -lam * v;
        }
        if self.drift_kernels.is_empty() {
            return;
        }
        let p = self.probe_values(x);
        for (k, zeta) in self.drift_kernels.iter().zip(&self.outputs) {
            let kv = k.eval(&p);
            for (o, z) in out.iter_mut().zip(zeta) {
                *o += kv * z;
            }
        }
    }

    fn drift_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            out[j * n + j] = -self.damping[j];
        }
        if self.drift_kernels.is_empty() {
            return;
        }
        let p = self.probe_values(x);
        let mut row = vec![0.0; n];
        for (k, zeta) in self.drift_kernels.iter().zip(&self.outputs) {
            self.chain_row(k, &p, &mut row);
            for j in 0..n {
                if zeta[j] != 0.0 {
                    for l in 0..n {
                        out[j * n + l] += zeta[j] * row[l];
                    }
                }
            }
        }
    }

    fn jump(&self, x: &[f64], atom: usize, _mark: &[f64], out: &mut [f64]) {
        let k0 = if self.jump_kernel.is_constant() {
            self.jump_kernel.eval(&[])
        } else {
            self.jump_kernel.eval(&self.probe_values(x))
        };
        for (o, i) in out.iter_mut().zip(&self.injections[atom]) {
            *o = k0 * i;
        }
    }

    fn jump_jacobian(&self, x: &[f64], atom: usize, _mark: &[f64], out: &mut [f64]) {
        let n = self.n;
        let mut row = vec![0.0; n];
        let p = self.probe_values(x);
        self.chain_row(&self.jump_kernel, &p, &mut row);
        for (j, ij) in self.injections[atom].iter().enumerate() {
            for l in 0..n {
                out[j * n + l] = ij * row[l];
            }
        }
    }
}

/// An assembled Galerkin model with its eigensystem.
#[derive(Debug, Clone)]
pub struct PollutantModel {
    pub model: ModelSpec,
    pub eigen: EigenSystem,
    pub dynamics: Arc<PollutantDynamics>,
    /// Largest relative change of the ball integrals when the quadrature
    /// is refined from `n` to `2n` nodes per coordinate.
    pub quadrature_refinement: f64,
}

/// Tolerance for the ball-quadrature refinement check.
pub const BALL_REFINEMENT_TOL: f64 = 1e-4;

pub fn assemble_model(params: &PollutantParams) -> Result<PollutantModel> {
    let eigen = build_eigensystem(params)?;
    let n = eigen.len();
    let measure = MarkMeasure::new(params.atoms.iter().map(|a| {
        let mut mark = a.center.clone();
        mark.push(a.magnitude);
        (mark, a.weight)
    }))?;
    let c_zeta = ball_volume(params.d_space, params.radius);
    let mut worst = 0.0f64;
    let mut injections = Vec::with_capacity(measure.len());
    for k in 0..measure.len() {
        let mark = measure.mark(k);
        let (center, a) = mark.split_at(params.d_space);
        let coarse = eigen.ball_integrals(center, params.radius, params.ball_points);
        let fine = eigen.ball_integrals(center, params.radius, 2 * params.ball_points);
        let scale = fine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            let diff = coarse.iter().zip(&fine).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(diff / scale);
        }
        injections.push(fine.iter().map(|i| a[0] * i / c_zeta).collect::<Vec<f64>>());
    }
    if worst > BALL_REFINEMENT_TOL {
        return Err(Error::Construction(format!(
            "ball quadrature with {} nodes is not resolved (relative change {worst:.2e} on refinement)",
            params.ball_points
        )));
    }
    let dynamics = Arc::new(PollutantDynamics {
        n,
        damping: eigen.lambda().iter().map(|l| l + params.decay).collect(),
        probes: params.probes.iter().map(|p| eigen.project_modes(p)).collect(),
        outputs: params.outputs.iter().map(|p| eigen.project_modes(p)).collect(),
        drift_kernels: params.drift_kernels.clone(),
        jump_kernel: params.jump_kernel.clone(),
        injections,
    });
    let x0 = eigen.project_modes(&params.x0);
    let model = ModelSpec::new(dynamics.clone(), measure, x0, params.horizon)?;
    Ok(PollutantModel {
        model,
        eigen,
        dynamics,
        quadrature_refinement: worst,
    })
}

/// Partial sums of `Σ_j (1 + λ_j)^{−2r}` over the boxes `max j ≤ J`.
#[derive(Debug, Clone)]
pub struct HilbertSchmidtReport {
    pub r: f64,
    /// `S_J` for `J = 0, …, j_max`.
    pub partial_sums: Vec<f64>,
    /// Partial sums of `Σ_j λ_j² (1 + λ_j)^{−2r}`.
    pub lambda_sq_sums: Vec<f64>,
    /// `S_{j_max} − S_{j_max − 1}`.
    pub cauchy_increment: f64,
    /// Upper bound on `Σ_{max j > j_max} (1 + λ_j)^{−2r}`; infinite when `4r ≤ d`.
    pub tail_bound: f64,
}

/// Cauchy tolerance on the last increment of the partial sums.
pub const HS_CAUCHY_TOL: f64 = 1e-8;

impl HilbertSchmidtReport {
    pub fn converged(&self) -> bool {
        self.cauchy_increment < HS_CAUCHY_TOL && self.tail_bound.is_finite()
    }
}

pub fn hilbert_schmidt_sums(params: &PollutantParams, r: f64, j_max: usize) -> Result<HilbertSchmidtReport> {
    if !(r > 0.0) {
        return Err(bad("r", "must be positive"));
    }
    if j_max == 0 {
        return Err(bad("j_max", "needs at least one refinement"));
    }
    let eigen = build_eigensystem(&params.with_modes(j_max))?;
    let mut shell = vec![0.0; j_max + 1];
    let mut shell_sq = vec![0.0; j_max + 1];
    for (j, lam) in eigen.indices().iter().zip(eigen.lambda()) {
        let m = *j.iter().max().unwrap_or(&0);
        let w = (1.0 + lam).powf(-2.0 * r);
        shell[m] += w;
        shell_sq[m] += lam * lam * w;
    }
    let prefix = |v: &[f64]| -> Vec<f64> {
        let mut acc = crate::sum::KahanSum::new();
        v.iter()
            .map(|x| {
                acc.add(*x);
                acc.value()
            })
            .collect()
    };
    let partial_sums = prefix(&shell);
    let lambda_sq_sums = prefix(&shell_sq);
    let d = params.d_space as f64;
    let s = 2.0 * r / d;
    let tail_bound = if s > 0.5 {
        let mut full = 1.0;
        let mut head = 1.0;
        let coef = params.side * params.side / (params.diffusivity * PI * PI);
        for axis in 0..params.d_space {
            let f: f64 = (0..=j_max).map(|j| (1.0 + eigen.axis_lambda(axis, j)).powf(-s)).sum();
            let rem = coef.powf(s) * (j_max as f64).powf(1.0 - 2.0 * s) / (2.0 * s - 1.0);
            full *= f + rem;
            head *= f;
        }
        full - head
    } else {
        f64::INFINITY
    };
    Ok(HilbertSchmidtReport {
        r,
        cauchy_increment: partial_sums[j_max] - partial_sums[j_max - 1],
        partial_sums,
        lambda_sq_sums,
        tail_bound,
    })
}

/// Truncations at `J` and `2J` of the same model, for Galerkin comparisons.
#[derive(Debug, Clone)]
pub struct GalerkinPair {
    pub coarse: PollutantModel,
    pub fine: PollutantModel,
    pub coarse_fluid: PathGrid,
    pub fine_fluid: PathGrid,
    /// Position in the fine system of each coarse mode.
    embedding: Vec<usize>,
    n_steps: usize,
}

impl GalerkinPair {
    pub fn new(params: &PollutantParams, n_steps: usize) -> Result<Self> {
        let coarse = assemble_model(params)?;
        let fine = assemble_model(&params.with_modes(2 * params.modes))?;
        let embedding = coarse
            .eigen
            .indices()
            .iter()
            .map(|j| fine.eigen.position(j).expect("coarse modes are retained at 2J"))
            .collect();
        let coarse_fluid = fluid_limit(&coarse.model, n_steps)?.path;
        let fine_fluid = fluid_limit(&fine.model, n_steps)?.path;
        Ok(Self {
            coarse,
            fine,
            coarse_fluid,
            fine_fluid,
            embedding,
            n_steps,
        })
    }

    /// `sup_t (Σ_{j ≤ J} (c_j(t) − f_j(t))² (1 + λ_j)^{−2q})^{1/2}` on the shared modes.
    pub fn weighted_distance(&self, coarse: &PathGrid, fine: &PathGrid, q: f64) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..=coarse.n_steps() {
            let (c, f) = (coarse.value(i), fine.value(i));
            let s: f64 = self
                .embedding
                .iter()
                .enumerate()
                .map(|(a, &b)| {
                    let diff = c[a] - f[b];
                    diff * diff / self.coarse.eigen.norm_factor(a, 2.0 * q)
                })
                .sum();
            worst = worst.max(s.sqrt());
        }
        worst
    }

    pub fn fluid_distance(&self, q: f64) -> f64 {
        self.weighted_distance(&self.coarse_fluid, &self.fine_fluid, q)
    }

    /// Fluctuations `Y^ε` at both levels driven by one shared event stream.
    pub fn fluctuations(&self, eps: f64, a_eps: f64, seed: u64) -> Result<(PathGrid, PathGrid)> {
        let nu = &self.coarse.model.measure;
        let events = sample_prm(nu, 1.0 / eps, self.coarse.model.horizon, seed)?;
        let xc = integrate_xeps(&self.coarse.model, eps, &events, self.n_steps)?;
        let xf = integrate_xeps(&self.fine.model, eps, &events, self.n_steps)?;
        Ok((
            rescale_yeps(&xc, &self.coarse_fluid, a_eps)?,
            rescale_yeps(&xf, &self.fine_fluid, a_eps)?,
        ))
    }

    pub fn sample_distance(&self, eps: f64, a_eps: f64, seed: u64, q: f64) -> Result<f64> {
        let (yc, yf) = self.fluctuations(eps, a_eps, seed)?;
        Ok(self.weighted_distance(&yc, &yf, q))
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinReport {
    pub coarse_modes: usize,
    pub fine_modes: usize,
    pub q: f64,
    pub fluid_distance: f64,
    pub mc_distance_mean: f64,
    pub mc_distance_se: f64,
    pub tail_bound: f64,
    pub r: f64,
}

/// Serial Galerkin comparison over `seeds`.
pub fn galerkin_convergence_study(
    params: &PollutantParams,
    eps: f64,
    a_eps: f64,
    seeds: &[u64],
    n_steps: usize,
    q: f64,
    r: f64,
) -> Result<GalerkinReport> {
    let pair = GalerkinPair::new(params, n_steps)?;
    let dists = seeds
        .iter()
        .map(|&s| pair.sample_distance(eps, a_eps, s, q))
        .collect::<Result<Vec<f64>>>()?;
    let (mean, se) = crate::sum::mean_se(&dists);
    Ok(GalerkinReport {
        coarse_modes: pair.coarse.eigen.len(),
        fine_modes: pair.fine.eigen.len(),
        q,
        fluid_distance: pair.fluid_distance(q),
        mc_distance_mean: mean,
        mc_distance_se: se,
        tail_bound: hilbert_schmidt_sums(params, r, params.modes.max(1))?.tail_bound,
        r,
    })
}
