//! Monte Carlo experiments and numerical audits behind the CLI.
//!
//! Replications run on a dedicated rayon pool. Each replication draws its
//! randomness from `replication_seed(level_seed, index)`, results are
//! collected in index order and reduced sequentially, so outputs do not
//! depend on the number of workers.

use anyhow::{Context, Result};
use modev_core::jump_sde::{fluid_limit, integrate_xeps, ScalingSchedule};
use modev_core::lemma::{self, IntegralBoundReport, LemmaConstants};
use modev_core::linalg::Mat;
use modev_core::mdp_limit::{
    decompose_controlled_y, gaussian_covariance, linearize_model, solve_eta, CellPath, LinearizedSystem,
};
use modev_core::pollutant::{
    self, assemble_model, build_eigensystem, hilbert_schmidt_sums, GalerkinPair, HilbertSchmidtReport, Kernel,
    PollutantParams,
};
use modev_core::prm::{self, build_tilt_from_psi, girsanov_log_lr, sample_controlled_prm, sample_prm, ControlField};
use modev_core::rate::{psi_cost, rate_of_path, rate_terminal, sphere_rate, Gramian, Rate, SphereRate};
use modev_core::rng::{replication_seed, stream};
use modev_core::sum::{mean_se, sum};
use modev_core::{MarkMeasure, ModelSpec, PathGrid};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, FunctionalConfig, VarRepConfig};
use crate::formats::{EstimateRow, Estimator};

/// A fixed-size worker pool.
pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    /// `workers = 0` uses every available core.
    pub fn new(workers: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")?;
        Ok(Self { pool })
    }

    /// `f(0), …, f(n − 1)` in index order.
    pub fn map<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    pub fn try_map<T: Send>(&self, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        self.map(n, f).into_iter().collect()
    }
}

/// Collects failed assertions, each tagged with the config hash and seed.
#[derive(Debug, Clone, Default)]
pub struct Checks {
    tag: String,
    pub passed: Vec<String>,
    pub failures: Vec<String>,
}

impl Checks {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            tag: format!("config {} seed {}", cfg.hash(), cfg.seed),
            ..Self::default()
        }
    }

    pub fn check(&mut self, ok: bool, name: &str, detail: impl FnOnce() -> String) {
        if ok {
            self.passed.push(name.to_string());
        } else {
            self.failures.push(format!("[{}] {name}: {}", self.tag, detail()));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn merge(&mut self, other: Checks) {
        self.passed.extend(other.passed);
        self.failures.extend(other.failures);
    }
}

fn level_seed(base: u64, level: usize) -> u64 {
    replication_seed(base, level as u64)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|Y^ε(T)|` for one untilted replication.
pub fn terminal_deviation(
    model: &ModelSpec,
    fluid: &PathGrid,
    sched: &ScalingSchedule,
    n_steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let events = sample_prm(&model.measure, 1.0 / sched.eps, model.horizon, seed)?;
    let x = integrate_xeps(model, sched.eps, &events, n_steps)?;
    Ok(x.last()
        .iter()
        .zip(fluid.last())
        .map(|(a, b)| (a - b) / sched.a_eps)
        .collect())
}

/// The `±ψ*` tilt pair used by the importance sampler.
#[derive(Debug, Clone)]
pub struct TiltPair {
    pub plus: ControlField,
    pub minus: ControlField,
}

impl TiltPair {
    pub fn new(sys: &LinearizedSystem, sphere: &SphereRate, a_eps: f64, beta: f64) -> Result<Self> {
        let psi = &sphere.solution.psi_opt;
        let neg: Vec<f64> = psi.iter().map(|p| -p).collect();
        let build = |p: &[f64]| build_tilt_from_psi(p, sys.n_atoms(), sys.n_cells(), sys.horizon(), a_eps, beta);
        Ok(Self {
            plus: build(psi)?,
            minus: build(&neg)?,
        })
    }

    /// One importance-sampling replication: `(weight, |Y^ε(T)|)`.
    pub fn sample(
        &self,
        model: &ModelSpec,
        fluid: &PathGrid,
        sched: &ScalingSchedule,
        n_steps: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        let theta = 1.0 / sched.eps;
        let coin: f64 = stream(seed, u64::MAX).random();
        let ctrl = if coin < 0.5 { &self.plus } else { &self.minus };
        let events = sample_controlled_prm(&model.measure, theta, ctrl, seed)?;
        let lp = girsanov_log_lr(&events, &self.plus, &model.measure, theta)?;
        let lm = girsanov_log_lr(&events, &self.minus, &model.measure, theta)?;
        let top = lp.max(lm);
        let log_mix = top + (0.5 * (lp - top).exp() + 0.5 * (lm - top).exp()).ln();
        let x = integrate_xeps(model, sched.eps, &events, n_steps)?;
        let dev: Vec<f64> = x
            .last()
            .iter()
            .zip(fluid.last())
            .map(|(a, b)| (a - b) / sched.a_eps)
            .collect();
        Ok(((-log_mix).exp(), norm(&dev)))
    }
}

fn estimate_row(sched: &ScalingSchedule, samples: &[f64], predicted: f64, estimator: Estimator) -> EstimateRow {
    let (p_hat, se) = mean_se(samples);
    EstimateRow {
        eps: sched.eps,
        a_eps: sched.a_eps,
        b_eps: sched.b_eps,
        p_hat,
        se,
        neg_b_log_p: (p_hat > 0.0).then(|| -sched.b_eps * p_hat.ln()),
        predicted_rate: predicted,
        estimator,
    }
}

#[derive(Debug, Clone)]
pub struct MdpSlopeReport {
    pub rows: Vec<EstimateRow>,
    pub predicted_rate: Rate,
    pub lambda_max: f64,
    pub checks: Checks,
}

/// Standard error of `−b log p̂` by the delta method.
fn slope_se(r: &EstimateRow) -> f64 {
    r.b_eps * r.se / r.p_hat
}

/// Plain and importance-sampling estimates of `P(|Y^ε(T)| ≥ c)` over the
/// configured `ε` grid, with the predicted rate `c² / (2 λ_max(W))`.
pub fn run_mdp_slope(cfg: &ExperimentConfig, model: &ModelSpec, runner: &Runner) -> Result<MdpSlopeReport> {
    let m = &cfg.mdp;
    let n_steps = cfg.model.n_steps;
    let (fluid, sys) = linearize_model(model, n_steps)?;
    let sphere = sphere_rate(&sys, m.threshold)?;
    let predicted = sphere.rate.as_f64();
    let c = m.threshold;
    let mut rows = Vec::new();
    for (level, sched) in ScalingSchedule::grid(&m.eps, m.rho)?.iter().enumerate() {
        let seed = level_seed(cfg.seed, level);
        let plain = runner.try_map(m.replications, |r| {
            let dev = terminal_deviation(model, &fluid.path, sched, n_steps, replication_seed(seed, r as u64))?;
            Ok(if norm(&dev) >= c { 1.0 } else { 0.0 })
        })?;
        rows.push(estimate_row(sched, &plain, predicted, Estimator::PlainMc));
        let tilts = TiltPair::new(&sys, &sphere, sched.a_eps, m.beta)?;
        let is_seed = level_seed(seed, usize::MAX);
        let weighted = runner.try_map(m.is_replications, |r| {
            let (w, dev) = tilts.sample(model, &fluid.path, sched, n_steps, replication_seed(is_seed, r as u64))?;
            Ok(if dev >= c { w } else { 0.0 })
        })?;
        rows.push(estimate_row(sched, &weighted, predicted, Estimator::ImportanceSampling));
    }
    let mut checks = Checks::new(cfg);
    let plain: Vec<&EstimateRow> = rows.iter().filter(|r| r.estimator == Estimator::PlainMc).collect();
    let is: Vec<&EstimateRow> = rows
        .iter()
        .filter(|r| r.estimator == Estimator::ImportanceSampling)
        .collect();
    let (p0, i0) = (plain[0], is[0]);
    let combined = (p0.se * p0.se + i0.se * i0.se).sqrt();
    checks.check(
        (p0.p_hat - i0.p_hat).abs() <= 3.0 * combined,
        "IS agrees with plain MC at the largest eps",
        || {
            format!(
                "eps {}: plain {} vs IS {} (3 SE = {})",
                p0.eps,
                p0.p_hat,
                i0.p_hat,
                3.0 * combined
            )
        },
    );
    if c > 0.0 && predicted.is_finite() {
        let last = is[is.len() - 1];
        let rel = last.neg_b_log_p.map(|v| (v - predicted).abs() / predicted);
        checks.check(
            rel.is_some_and(|r| r <= 0.25),
            "slope at the smallest eps within 25% of the prediction",
            || {
                format!(
                    "eps {}: -b log p = {:?}, predicted {}",
                    last.eps, last.neg_b_log_p, predicted
                )
            },
        );
        let offending = is.windows(2).find(|w| match (w[0].neg_b_log_p, w[1].neg_b_log_p) {
            (Some(a), Some(b)) => {
                let slack = 2.0 * (slope_se(w[0]).powi(2) + slope_se(w[1]).powi(2)).sqrt();
                (b - predicted).abs() > (a - predicted).abs() + slack
            }
            _ => true,
        });
        checks.check(
            offending.is_none(),
            "slope moves monotonically toward the prediction",
            || {
                let w = offending.expect("failure has a row");
                format!(
                    "eps {} -> {}: {:?} -> {:?}",
                    w[0].eps, w[1].eps, w[0].neg_b_log_p, w[1].neg_b_log_p
                )
            },
        );
    }
    Ok(MdpSlopeReport {
        rows,
        predicted_rate: sphere.rate,
        lambda_max: sphere.lambda_max,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct CltReport {
    pub eps: f64,
    pub replications: usize,
    pub mean: Vec<f64>,
    pub mean_se: Vec<f64>,
    pub sample_cov: Mat,
    pub sigma: Mat,
    pub relative_error: f64,
    pub skewness: Vec<f64>,
    pub excess_kurtosis: Vec<f64>,
    pub checks: Checks,
}

/// Relative tolerance of the covariance comparison.
pub const CLT_COV_TOL: f64 = 0.15;

/// Compares the law of `(X^ε(T) − X⁰(T)) / √ε` with the Gaussian limit.
pub fn run_clt_check(cfg: &ExperimentConfig, model: &ModelSpec, runner: &Runner) -> Result<CltReport> {
    let n_steps = cfg.model.n_steps;
    let eps = cfg.clt.eps;
    let r = cfg.clt.replications;
    let (fluid, sys) = linearize_model(model, n_steps)?;
    let sigma = gaussian_covariance(&sys).terminal().clone();
    let sched = ScalingSchedule {
        eps,
        a_eps: eps.sqrt(),
        b_eps: 1.0,
    };
    let seed = level_seed(cfg.seed, 0);
    let ys = runner.try_map(r, |i| {
        terminal_deviation(model, &fluid.path, &sched, n_steps, replication_seed(seed, i as u64))
    })?;
    let d = model.dim();
    let n = r as f64;
    let mean: Vec<f64> = (0..d).map(|j| sum(ys.iter().map(|y| y[j])) / n).collect();
    let sample_cov = Mat::from_fn(d, d, |i, j| {
        sum(ys.iter().map(|y| (y[i] - mean[i]) * (y[j] - mean[j]))) / (n - 1.0)
    });
    let mean_se: Vec<f64> = (0..d).map(|j| (sample_cov[(j, j)] / n).sqrt()).collect();
    let moment = |j: usize, k: i32| sum(ys.iter().map(|y| (y[j] - mean[j]).powi(k))) / n;
    let skewness = (0..d)
        .map(|j| {
            let m2 = moment(j, 2);
            if m2 > 0.0 {
                moment(j, 3) / m2.powf(1.5)
            } else {
                0.0
            }
        })
        .collect();
    let excess_kurtosis = (0..d)
        .map(|j| {
            let m2 = moment(j, 2);
            if m2 > 0.0 {
                moment(j, 4) / (m2 * m2) - 3.0
            } else {
                0.0
            }
        })
        .collect();
    let diff = (&sample_cov - &sigma).norm();
    let relative_error = if sigma.norm() > 0.0 { diff / sigma.norm() } else { diff };
    let mut checks = Checks::new(cfg);
    checks.check(
        relative_error <= CLT_COV_TOL,
        "sample covariance matches the Lyapunov covariance",
        || format!("relative Frobenius error {relative_error:.4} > {CLT_COV_TOL}"),
    );
    let bad = (0..d).find(|&j| mean[j].abs() > 3.0 * mean_se[j] && mean[j] != 0.0);
    checks.check(bad.is_none(), "mean of Y within 3 SE of 0", || {
        let j = bad.expect("failure has a component");
        format!("component {j}: mean {} vs 3 SE {}", mean[j], 3.0 * mean_se[j])
    });
    Ok(CltReport {
        eps,
        replications: r,
        mean,
        mean_se,
        sample_cov,
        sigma,
        relative_error,
        skewness,
        excess_kurtosis,
        checks,
    })
}

/// Bounded functionals of the event count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CountFunctional {
    Zero,
    Linear { gamma: f64 },
    Capped { gamma: f64, cap: u64 },
}

impl From<FunctionalConfig> for CountFunctional {
    fn from(f: FunctionalConfig) -> Self {
        match f {
            FunctionalConfig::Zero => Self::Zero,
            FunctionalConfig::Linear { gamma } => Self::Linear { gamma },
            FunctionalConfig::Capped { gamma, cap } => Self::Capped { gamma, cap },
        }
    }
}

impl CountFunctional {
    pub fn eval(&self, count: u64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Linear { gamma } => gamma * count as f64,
            Self::Capped { gamma, cap } => gamma * count.min(cap) as f64,
        }
    }

    /// `−log E e^{−F(N)}` for `N ~ Poisson(μ)`, when available in closed form.
    pub fn exact_lhs(&self, mu: f64) -> Option<f64> {
        match *self {
            Self::Zero => Some(0.0),
            Self::Linear { gamma } => Some(mu * (1.0 - (-gamma).exp())),
            Self::Capped { .. } => None,
        }
    }
}

/// Constant tilts `0.25 · 2^{k/4}`, `k = 0, …, 16`.
pub fn tilt_family() -> Vec<f64> {
    (0..=16).map(|k| 0.25 * 2f64.powf(k as f64 / 4.0)).collect()
}

#[derive(Debug, Clone)]
pub struct VarRepReport {
    pub theta: f64,
    pub mass: f64,
    pub horizon: f64,
    pub lhs: f64,
    pub lhs_se: f64,
    pub lhs_exact: Option<f64>,
    /// `(φ, mean, se)` of `θ L_T(φ) + F(N^{θφ})`.
    pub rhs: Vec<(f64, f64, f64)>,
    pub best: (f64, f64, f64),
    pub checks: Checks,
}

/// One-sided check of `−log E e^{−F(N^θ)} ≤ inf_φ E[θ L_T(φ) + F(N^{θφ})]`
/// over constant tilts, on a single atom of mass `Λ`. All tilts share one
/// dominating point process per replication and are obtained by thinning.
pub fn run_var_rep(cfg: &ExperimentConfig, vr: &VarRepConfig, horizon: f64, runner: &Runner) -> Result<VarRepReport> {
    let f = CountFunctional::from(vr.functional);
    let nu = MarkMeasure::dirac(&[0.0], vr.mass)?;
    let tilts = tilt_family();
    let phi_max = tilts.iter().copied().fold(1.0, f64::max);
    let seed = level_seed(cfg.seed, 0);
    let samples = runner.try_map(vr.replications, |r| {
        let s = replication_seed(seed, r as u64);
        let base = sample_prm(&nu, vr.theta, horizon, s)?;
        let dominating = sample_prm(&nu, vr.theta * phi_max, horizon, replication_seed(s, 1))?;
        let mut rng = stream(s, 2);
        let marks: Vec<f64> = (0..dominating.len()).map(|_| rng.random::<f64>()).collect();
        let counts: Vec<u64> = tilts
            .iter()
            .map(|&phi| marks.iter().filter(|&&u| u < phi / phi_max).count() as u64)
            .collect();
        Ok(((-f.eval(base.len() as u64)).exp(), counts))
    })?;
    let expo: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (m, se) = mean_se(&expo);
    let lhs = -m.ln();
    let lhs_se = se / m;
    let rhs: Vec<(f64, f64, f64)> = tilts
        .iter()
        .enumerate()
        .map(|(k, &phi)| {
            let cost = vr.theta * prm::ell(phi).expect("positive tilt") * vr.mass * horizon;
            let vals: Vec<f64> = samples.iter().map(|s| cost + f.eval(s.1[k])).collect();
            let (mean, se) = mean_se(&vals);
            (phi, mean, se)
        })
        .collect();
    let best = *rhs.iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty family");
    let lhs_exact = f.exact_lhs(vr.mass * vr.theta * horizon);
    let mut checks = Checks::new(cfg);
    let slack = 3.0 * (lhs_se * lhs_se + best.2 * best.2).sqrt();
    checks.check(
        lhs <= best.1 + slack,
        "LHS does not exceed the best constant-tilt RHS",
        || format!("LHS {lhs} > RHS {} + 3 SE at phi = {}", best.1, best.0),
    );
    if let Some(exact) = lhs_exact {
        let two_se = 2.0 * (lhs_se * lhs_se + best.2 * best.2).sqrt();
        checks.check(
            (best.1 - exact).abs() <= two_se.max(1e-12),
            "best tilt attains the exact LHS within 2 SE",
            || {
                format!(
                    "RHS {} at phi = {} vs exact LHS {exact} (2 SE = {two_se})",
                    best.1, best.0
                )
            },
        );
    }
    Ok(VarRepReport {
        theta: vr.theta,
        mass: vr.mass,
        horizon,
        lhs,
        lhs_se,
        lhs_exact,
        rhs,
        best,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct LemmaReport {
    pub ell_at_one: f64,
    pub ell_at_zero: f64,
    pub min_second_difference: f64,
    pub constants: Vec<LemmaConstants>,
    pub integral_bounds: IntegralBoundReport,
    pub part_d_violation: f64,
    pub checks: Checks,
}

/// `ℓ` sanity, the `κ` table and the integral bounds over the control catalog.
pub fn run_lemma_check(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<LemmaReport> {
    let lc = &cfg.lemma;
    let ell = |x: f64| prm::ell(x).expect("nonnegative argument");
    let grid: Vec<f64> = (0..10_000).map(|i| 10.0 * i as f64 / 9_999.0).collect();
    let min_second_difference = grid
        .windows(3)
        .map(|w| ell(w[0]) - 2.0 * ell(w[1]) + ell(w[2]))
        .fold(f64::INFINITY, f64::min);
    let constants = lemma::compute_lemma_constants(&lc.betas)?;
    let kappa3 = constants.first().map(|k| k.kappa3).unwrap_or(1.0);
    let part_d_violation = (0..=100_000)
        .map(|i| 100.0 * i as f64 / 100_000.0)
        .map(|x| {
            let h = x - 1.0;
            let l = ell(x);
            (l - kappa3 * h * h).max((l - 0.5 * h * h).abs() - kappa3 * h.abs().powi(3))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let integral_bounds = lemma::verify_integral_bounds(
        lc.m,
        &lc.a_grid,
        lc.beta,
        &model.measure,
        cfg.model.n_steps,
        model.horizon,
    )?;
    let mut checks = Checks::new(cfg);
    checks.check(ell(1.0) == 0.0 && ell(0.0) == 1.0, "ell(1) = 0 and ell(0) = 1", || {
        format!("ell(1) = {}, ell(0) = {}", ell(1.0), ell(0.0))
    });
    checks.check(min_second_difference >= -1e-12, "ell is convex on the grid", || {
        format!("second difference {min_second_difference:e}")
    });
    checks.check(
        lemma::kappa1_monotone(&constants),
        "kappa1 and kappa1' nonincreasing in beta",
        || format!("{constants:?}"),
    );
    if let Some(small) = constants.iter().min_by(|a, b| a.beta.total_cmp(&b.beta)) {
        if small.beta <= 1e-2 {
            checks.check(
                (small.kappa2 - 2.0).abs() <= 0.02,
                "kappa2 tends to 2 as beta -> 0",
                || format!("kappa2({}) = {}", small.beta, small.kappa2),
            );
        }
    }
    checks.check(
        part_d_violation <= 1e-12,
        "ell(x) <= kappa3 (x-1)^2 and the cubic remainder bound",
        || format!("violation {part_d_violation:e}"),
    );
    let bad = integral_bounds.rows.iter().find(|r| !r.holds());
    checks.check(bad.is_none(), "integral bounds hold over the control catalog", || {
        format!("first offending row {:?}", bad.expect("failure has a row"))
    });
    Ok(LemmaReport {
        ell_at_one: ell(1.0),
        ell_at_zero: ell(0.0),
        min_second_difference,
        constants,
        integral_bounds,
        part_d_violation,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct RateSuiteReport {
    pub trials: usize,
    /// Largest `I(η_ψ) − ½‖ψ‖²` over random `ψ` (must be `≤ 1e-8`).
    pub max_excess: f64,
    /// Largest `|I − ½‖ψ‖²|` over frame-form `ψ`.
    pub max_frame_gap: f64,
    /// Largest relative `|½‖ψ*‖² − I| / I` over terminal targets.
    pub max_psi_star_gap: f64,
    pub checks: Checks,
}

/// Random-`ψ` audit of the two rate representations on `sys`.
pub fn rate_equivalence_suite(
    cfg: &ExperimentConfig,
    sys: &LinearizedSystem,
    trials: usize,
    seed: u64,
) -> Result<RateSuiteReport> {
    let mut rng = stream(seed, 0);
    let n = sys.n_atoms() * sys.n_cells();
    let (mut max_excess, mut max_frame_gap, mut max_psi_star_gap) = (f64::NEG_INFINITY, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let psi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ctrl = ControlField::new(psi.clone(), sys.n_atoms(), sys.n_cells(), sys.horizon(), 1e-3)?;
        let eta = solve_eta(sys, &ctrl)?;
        let sol = rate_of_path(sys, &eta)?;
        let i = sol.rate.finite().context("rate of a reachable path is finite")?;
        max_excess = max_excess.max(i - psi_cost(sys, &psi));

        let u = CellPath::from_fn(sys.horizon(), sys.n_cells(), sys.dim(), |_, v| {
            v.iter_mut().for_each(|x| *x = 0.0)
        });
        let mut u = u;
        for k in 0..sys.n_cells() {
            for (j, x) in u.cell_mut(k).iter_mut().enumerate() {
                if j < sys.rank[k] || sys.a[k].column(j).norm() > 0.0 {
                    *x = rng.random_range(-1.0..1.0);
                }
            }
        }
        let framed = sys.psi_field_from_u(&u);
        let ctrl = ControlField::new(framed.clone(), sys.n_atoms(), sys.n_cells(), sys.horizon(), 1e-3)?;
        let sol = rate_of_path(sys, &solve_eta(sys, &ctrl)?)?;
        let i = sol.rate.finite().context("rate of a reachable path is finite")?;
        max_frame_gap = max_frame_gap.max((i - psi_cost(sys, &framed)).abs());

        let z: Vec<f64> = (0..sys.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = rate_terminal(sys, &z)?;
        if let Some(i) = t.rate.finite() {
            if i > 0.0 {
                max_psi_star_gap = max_psi_star_gap.max((t.psi_cost(sys) - i).abs() / i);
            }
        }
    }
    let mut checks = Checks::new(cfg);
    checks.check(max_excess <= 1e-8, "I(eta_psi) <= 1/2 |psi|^2", || {
        format!("excess {max_excess:e}")
    });
    checks.check(max_frame_gap <= 1e-8, "equality for frame-form psi", || {
        format!("gap {max_frame_gap:e}")
    });
    checks.check(max_psi_star_gap <= 1e-8, "psi* cost equals the terminal rate", || {
        format!("relative gap {max_psi_star_gap:e}")
    });
    Ok(RateSuiteReport {
        trials,
        max_excess,
        max_frame_gap,
        max_psi_star_gap,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct AuditRow {
    pub eps: f64,
    pub b_eps: f64,
    pub max_reconstruction_error: f64,
    pub sup_m_mean: f64,
    pub sup_m_se: f64,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub checks: Checks,
}

/// Tolerance on `|A + M + B + E₁ + C − Ȳ|`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// Replays controlled paths under the importance-sampling tilt and checks
/// the split of `Ȳ` into drift, martingale and control terms.
pub fn run_decomposition_audit(cfg: &ExperimentConfig, model: &ModelSpec, runner: &Runner) -> Result<AuditReport> {
    let m = &cfg.mdp;
    let n_steps = cfg.model.n_steps;
    let (_, sys) = linearize_model(model, n_steps)?;
    let sphere = sphere_rate(&sys, m.threshold.max(1e-3))?;
    let mut rows = Vec::new();
    for (level, sched) in ScalingSchedule::grid(&m.eps, m.rho)?.iter().enumerate() {
        let seed = level_seed(replication_seed(cfg.seed, 0xA0D1), level);
        let ctrl = TiltPair::new(&sys, &sphere, sched.a_eps, m.beta)?.plus;
        let out = runner.try_map(cfg.audit.paths, |r| {
            let dec = decompose_controlled_y(model, sched.eps, &ctrl, replication_seed(seed, r as u64), n_steps)?;
            Ok((dec.reconstruction_error(), dec.martingale.sup_norm()))
        })?;
        let sup_m: Vec<f64> = out.iter().map(|o| o.1).collect();
        let (mean, se) = mean_se(&sup_m);
        rows.push(AuditRow {
            eps: sched.eps,
            b_eps: sched.b_eps,
            max_reconstruction_error: out.iter().map(|o| o.0).fold(0.0, f64::max),
            sup_m_mean: mean,
            sup_m_se: se,
        });
    }
    let mut checks = Checks::new(cfg);
    let bad = rows.iter().find(|r| r.max_reconstruction_error > RECONSTRUCTION_TOL);
    checks.check(bad.is_none(), "decomposition reconstructs Y", || {
        format!("first offending row {:?}", bad.expect("row"))
    });
    let trend = rows
        .windows(2)
        .find(|w| w[1].sup_m_mean > w[0].sup_m_mean + 2.0 * (w[0].sup_m_se.powi(2) + w[1].sup_m_se.powi(2)).sqrt());
    checks.check(trend.is_none(), "sup|M| shrinks with b(eps)", || {
        format!("first offending pair {:?}", trend.expect("pair"))
    });
    Ok(AuditReport { rows, checks })
}

#[derive(Debug, Clone)]
pub struct PollutantReport {
    pub modes: usize,
    pub orthonormality_error: f64,
    pub lambda_spot_error: f64,
    pub linear_decoupling_fluid: f64,
    pub linear_decoupling_mc: f64,
    pub hilbert_schmidt: HilbertSchmidtReport,
    pub quadrature_refinement: f64,
    pub galerkin_fluid: f64,
    pub galerkin_mc_mean: f64,
    pub galerkin_mc_se: f64,
    /// `(x, u(T, x))` of the fluid limit on a grid.
    pub snapshot: Vec<(Vec<f64>, f64)>,
    pub checks: Checks,
}

/// Tolerance on the weighted Gram matrix.
pub const ORTHONORMALITY_TOL: f64 = 1e-6;

/// The configured model with every kernel frozen at its value at the origin.
pub fn linearized_params(p: &PollutantParams) -> PollutantParams {
    let freeze = |k: &Kernel| Kernel::Constant(k.eval(&vec![0.0; p.probes.len()]));
    PollutantParams {
        jump_kernel: freeze(&p.jump_kernel),
        drift_kernels: p.drift_kernels.iter().map(freeze).collect(),
        ..p.clone()
    }
}

pub fn run_pollutant(cfg: &ExperimentConfig, runner: &Runner) -> Result<PollutantReport> {
    let pc = &cfg.pollutant;
    let n_steps = cfg.model.n_steps;
    let params = pc.params(cfg.model.horizon);
    let eigen = build_eigensystem(&params)?;
    let orthonormality_error = eigen.orthonormality_error(64);

    let spot = PollutantParams {
        d_space: 1,
        side: 1.0,
        diffusivity: 1.0,
        velocity: vec![2.0],
        modes: 8,
        ..PollutantParams::linear_1d(8)
    };
    let spot_eigen = build_eigensystem(&spot)?;
    let lambda_spot_error = (0..=8)
        .map(|j| {
            let k = j as f64 * std::f64::consts::PI;
            let exact = if j == 0 { 0.0 } else { 1.0 + k * k };
            (spot_eigen.lambda()[j] - exact).abs()
        })
        .fold(0.0, f64::max);

    let eps = pc.eps;
    let a_eps = ScalingSchedule::power(eps, cfg.mdp.rho)?.a_eps;
    let linear = GalerkinPair::new(&linearized_params(&params), n_steps)?;
    let linear_decoupling_fluid = linear.fluid_distance(0.0);
    let lseed = level_seed(cfg.seed, 1);
    let linear_mc = runner.try_map(pc.seeds.min(10), |r| {
        Ok(linear.sample_distance(eps, a_eps, replication_seed(lseed, r as u64), 0.0)?)
    })?;
    let linear_decoupling_mc = linear_mc.iter().copied().fold(0.0, f64::max);

    let hilbert_schmidt = hilbert_schmidt_sums(&params, pc.r, pc.hs_levels)?;
    let built = assemble_model(&params)?;
    let pair = GalerkinPair::new(&params, n_steps)?;
    let gseed = level_seed(cfg.seed, 2);
    let dists = runner.try_map(pc.seeds, |r| {
        Ok(pair.sample_distance(eps, a_eps, replication_seed(gseed, r as u64), pc.q)?)
    })?;
    let (galerkin_mc_mean, galerkin_mc_se) = mean_se(&dists);

    let fluid = fluid_limit(&built.model, n_steps)?;
    let per_axis = match params.d_space {
        1 => pc.snapshot_points,
        2 => pc.snapshot_points.min(41),
        _ => pc.snapshot_points.min(21),
    }
    .max(2);
    let mut snapshot = Vec::new();
    let mut idx = vec![0usize; params.d_space];
    'grid: loop {
        let x: Vec<f64> = idx
            .iter()
            .map(|&i| params.side * i as f64 / (per_axis - 1) as f64)
            .collect();
        let u = built.eigen.reconstruct(fluid.path.last(), &x);
        snapshot.push((x, u));
        for axis in (0..params.d_space).rev() {
            idx[axis] += 1;
            if idx[axis] < per_axis {
                continue 'grid;
            }
            idx[axis] = 0;
        }
        break;
    }

    let mut checks = Checks::new(cfg);
    checks.check(
        orthonormality_error <= ORTHONORMALITY_TOL,
        "eigenfunctions orthonormal in L2(rho0)",
        || format!("max Gram error {orthonormality_error:e} at J = {}", params.modes),
    );
    checks.check(
        lambda_spot_error == 0.0,
        "lambda_j = 1 + (j pi)^2 for D = 1, l = 1, V = 2",
        || format!("max deviation {lambda_spot_error:e}"),
    );
    checks.check(
        linear_decoupling_fluid <= 1e-12 && linear_decoupling_mc <= 1e-10,
        "linear modes unchanged from J to 2J",
        || format!("fluid {linear_decoupling_fluid:e}, MC {linear_decoupling_mc:e}"),
    );
    checks.check(
        hilbert_schmidt.converged(),
        "Hilbert-Schmidt partial sums are Cauchy",
        || {
            format!(
                "increment {:e}, tail bound {:e} at r = {}",
                hilbert_schmidt.cauchy_increment, hilbert_schmidt.tail_bound, pc.r
            )
        },
    );
    Ok(PollutantReport {
        modes: eigen.len(),
        orthonormality_error,
        lambda_spot_error,
        linear_decoupling_fluid,
        linear_decoupling_mc,
        hilbert_schmidt,
        quadrature_refinement: built.quadrature_refinement,
        galerkin_fluid: pair.fluid_distance(pc.q),
        galerkin_mc_mean,
        galerkin_mc_se,
        snapshot,
        checks,
    })
}

/// Terminal and sphere rates with the Gramian for the configured model.
pub struct RateReport {
    pub sys: LinearizedSystem,
    pub gramian: Gramian,
    pub sphere: SphereRate,
    pub suite: RateSuiteReport,
}

pub fn run_rate(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<RateReport> {
    let (_, sys) = linearize_model(model, cfg.model.n_steps)?;
    let gramian = Gramian::new(&sys);
    let sphere = sphere_rate(&sys, cfg.mdp.threshold)?;
    let suite = rate_equivalence_suite(cfg, &sys, 50, cfg.seed)?;
    Ok(RateReport {
        sys,
        gramian,
        sphere,
        suite,
    })
}

pub use pollutant::GalerkinReport;
