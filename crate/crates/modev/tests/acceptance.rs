//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any fails.

use std::time::Instant;

use modev::config::{ExperimentConfig, ModelId};
use modev::experiments::{self as ex, Runner};
use modev_core::linalg::Mat;
use modev_core::mdp_limit::{linearize_model, LinearizedSystem};
use modev_core::prm::{girsanov_log_lr, sample_controlled_prm, sample_prm, ControlField};
use modev_core::rate::{rate_terminal, Gramian};
use modev_core::rng::replication_seed;
use modev_core::sum::mean_se;
use modev_core::MarkMeasure;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const CHI2_MIN_P: f64 = 1e-3;
const DISPERSION_BAND: (f64, f64) = (0.9, 1.1);
const LR_SE_MULT: f64 = 3.0;
const GRAMIAN_REL_TOL: f64 = 1e-6;
const QUADRATIC_REL_TOL: f64 = 1e-8;
const KAPPA2_REL_TOL: f64 = 0.01;
const KAPPA_LARGE_BETA_MAX: f64 = 0.3;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn verdict(checks: &ex::Checks, summary: String) -> Outcome {
    if checks.ok() {
        Ok(summary)
    } else {
        Err(checks.failures.join("; "))
    }
}

fn lemma_suite(cfg: &ExperimentConfig) -> Outcome {
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let rep = ex::run_lemma_check(cfg, &model).map_err(|e| e.to_string())?;
    let mut checks = rep.checks.clone();
    let at = |b: f64| {
        rep.constants
            .iter()
            .find(|k| k.beta == b)
            .cloned()
            .expect("beta in table")
    };
    let large: Vec<_> = [1.0, 2.0, 5.0, 10.0, 100.0].into_iter().map(at).collect();
    let strictly = large
        .windows(2)
        .all(|w| w[1].kappa1 < w[0].kappa1 && w[1].kappa1_prime <= w[0].kappa1_prime);
    let last = &large[large.len() - 1];
    checks.check(
        strictly && last.kappa1 < KAPPA_LARGE_BETA_MAX && last.kappa1_prime < KAPPA_LARGE_BETA_MAX,
        "kappa1, kappa1' decay over beta in {1,2,5,10,100}",
        || format!("{large:?}"),
    );
    let small = at(1e-3);
    checks.check(
        (small.kappa2 / 2.0 - 1.0).abs() <= KAPPA2_REL_TOL,
        "kappa2 near 2",
        || format!("kappa2(1e-3) = {}", small.kappa2),
    );
    verdict(
        &checks,
        format!(
            "kappa1(100) = {:.4}, kappa2(1e-3) = {:.5}, {} catalog rows",
            last.kappa1,
            small.kappa2,
            rep.integral_bounds.rows.len()
        ),
    )
}

fn controlled_prm() -> Outcome {
    let nu = MarkMeasure::scalar(&[(1.0, 0.5), (-1.0, 1.0), (2.0, 1.5)]).unwrap();
    let horizon = 1.0;
    let (n_atoms, n_cells) = (3, 10);
    let phi = [1.5, 0.75, 0.3];
    let mut values = Vec::new();
    for &p in &phi {
        values.extend(std::iter::repeat_n(p, n_cells));
    }
    let ctrl = ControlField::from_phi(&values, n_atoms, n_cells, horizon, 0.1).unwrap();
    let constant = ControlField::constant_phi(1.5, n_atoms, n_cells, horizon).unwrap();

    let chi2_p = |ctrl: &ControlField, seed: u64| -> f64 {
        let rate: f64 = (0..n_atoms).map(|k| nu.weight(k) * ctrl.phi(k, 0)).sum();
        let real = sample_controlled_prm(&nu, 1e4 / (rate * horizon), ctrl, seed).unwrap();
        let counts = real.cell_counts(n_atoms, n_cells);
        let total = real.len() as f64;
        let stat: f64 = (0..n_atoms * n_cells)
            .map(|i| {
                let k = i / n_cells;
                let expected = total * nu.weight(k) * ctrl.phi(k, 0) / (rate * n_cells as f64);
                (counts[i] as f64 - expected).powi(2) / expected
            })
            .sum();
        1.0 - ChiSquared::new((n_atoms * n_cells - 1) as f64).unwrap().cdf(stat)
    };
    let p_thin = chi2_p(&ctrl, 11);
    let p_const = chi2_p(&constant, 12);

    let reps = 10_000;
    let theta = 20.0;
    let samples: Vec<Vec<u64>> = (0..reps)
        .map(|r| {
            sample_controlled_prm(&nu, theta, &ctrl, replication_seed(21, r))
                .unwrap()
                .cell_counts(n_atoms, n_cells)
        })
        .collect();
    let dispersions: Vec<f64> = (0..n_atoms * n_cells)
        .map(|i| {
            let xs: Vec<f64> = samples.iter().map(|s| s[i] as f64).collect();
            let (m, se) = mean_se(&xs);
            let var = se * se * reps as f64;
            var / m
        })
        .collect();
    let (dmin, dmax) = dispersions
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));

    let psi: Vec<f64> = (0..n_atoms * n_cells)
        .map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.4)
        .collect();
    let tilt = ControlField::new(psi, n_atoms, n_cells, horizon, 0.1).unwrap();
    let lrs: Vec<f64> = (0..100_000u64)
        .map(|r| {
            let real = sample_prm(&nu, theta, horizon, replication_seed(31, r)).unwrap();
            girsanov_log_lr(&real, &tilt, &nu, theta).unwrap().exp()
        })
        .collect();
    let (lr_mean, lr_se) = mean_se(&lrs);

    let summary = format!(
        "chi2 p = {p_thin:.3} (thinned), {p_const:.3} (constant); dispersion in [{dmin:.3}, {dmax:.3}]; E[LR] = {lr_mean:.4} +/- {lr_se:.4}"
    );
    let ok = p_thin > CHI2_MIN_P
        && p_const > CHI2_MIN_P
        && dmin >= DISPERSION_BAND.0
        && dmax <= DISPERSION_BAND.1
        && (lr_mean - 1.0).abs() <= LR_SE_MULT * lr_se;
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn var_rep(cfg: &ExperimentConfig, runner: &Runner) -> Outcome {
    let rep = ex::run_var_rep(cfg, &cfg.var_rep, cfg.model.horizon, runner).map_err(|e| e.to_string())?;
    verdict(
        &rep.checks,
        format!(
            "LHS exact {:.5}, MC {:.5}; best RHS {:.5} +/- {:.5} at phi = {}",
            rep.lhs_exact.unwrap_or(f64::NAN),
            rep.lhs,
            rep.best.1,
            rep.best.2,
            rep.best.0
        ),
    )
}

fn rate_equivalence(cfg: &ExperimentConfig) -> Outcome {
    let mut parts = Vec::new();
    let mut all = ex::Checks::new(cfg);
    for id in [ModelId::Scalar, ModelId::Planar] {
        let mut c = cfg.clone();
        c.model.id = id;
        let model = c.build_model().map_err(|e| e.to_string())?;
        let (_, sys) = linearize_model(&model, c.model.n_steps).map_err(|e| e.to_string())?;
        let rep = ex::rate_equivalence_suite(&c, &sys, 50, c.seed).map_err(|e| e.to_string())?;
        parts.push(format!(
            "{id:?}: excess {:.1e}, frame gap {:.1e}, psi* gap {:.1e}",
            rep.max_excess, rep.max_frame_gap, rep.max_psi_star_gap
        ));
        all.merge(rep.checks);
    }
    verdict(&all, parts.join("; "))
}

fn gramian_closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    for &(a, sigma, t) in &[(-1.0, 1.0, 1.0), (0.7, 0.5, 2.0), (-2.5, 1.3, 0.8)] {
        let sys =
            LinearizedSystem::constant(t, 2000, Mat::from_element(1, 1, a), Mat::from_element(1, 1, sigma)).unwrap();
        let w = Gramian::new(&sys).w[(0, 0)];
        let exact = sigma * sigma * ((2.0 * a * t).exp() - 1.0) / (2.0 * a);
        worst = worst.max((w - exact).abs() / exact);
    }
    let sys =
        LinearizedSystem::constant(1.0, 200, Mat::from_element(1, 1, -1.0), Mat::from_element(1, 1, 1.0)).unwrap();
    let base = rate_terminal(&sys, &[1.0]).unwrap().rate.as_f64();
    let scale = [0.3, 2.0, 5.0]
        .iter()
        .map(|&c| (rate_terminal(&sys, &[c]).unwrap().rate.as_f64() - c * c * base).abs() / (c * c * base))
        .fold(0.0f64, f64::max);
    let summary = format!("max relative W error {worst:.2e}, quadratic scaling error {scale:.2e}");
    if worst <= GRAMIAN_REL_TOL && scale <= QUADRATIC_REL_TOL {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn clt(cfg: &ExperimentConfig, runner: &Runner) -> Outcome {
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let rep = ex::run_clt_check(cfg, &model, runner).map_err(|e| e.to_string())?;
    verdict(
        &rep.checks,
        format!(
            "Var {:.5} vs Sigma {:.5} (rel {:.3}), mean {:.4} +/- {:.4}",
            rep.sample_cov[(0, 0)],
            rep.sigma[(0, 0)],
            rep.relative_error,
            rep.mean[0],
            rep.mean_se[0]
        ),
    )
}

fn mdp_slope(cfg: &ExperimentConfig, runner: &Runner) -> Outcome {
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let rep = ex::run_mdp_slope(cfg, &model, runner).map_err(|e| e.to_string())?;
    let slopes: Vec<String> = rep
        .rows
        .iter()
        .filter(|r| r.estimator == modev::formats::Estimator::ImportanceSampling)
        .map(|r| r.neg_b_log_p.map_or("-".into(), |v| format!("{v:.3}")))
        .collect();
    verdict(
        &rep.checks,
        format!(
            "IS slopes [{}] toward predicted {:.4}",
            slopes.join(", "),
            rep.predicted_rate.as_f64()
        ),
    )
}

fn audit(cfg: &ExperimentConfig, runner: &Runner) -> Outcome {
    let model = cfg.build_model().map_err(|e| e.to_string())?;
    let rep = ex::run_decomposition_audit(cfg, &model, runner).map_err(|e| e.to_string())?;
    let worst = rep.rows.iter().map(|r| r.max_reconstruction_error).fold(0.0, f64::max);
    let sup: Vec<String> = rep.rows.iter().map(|r| format!("{:.3}", r.sup_m_mean)).collect();
    verdict(
        &rep.checks,
        format!("reconstruction error {worst:.1e}; mean sup|M| [{}]", sup.join(", ")),
    )
}

fn pollutant(cfg: &ExperimentConfig, runner: &Runner) -> Outcome {
    let rep = ex::run_pollutant(cfg, runner).map_err(|e| e.to_string())?;
    verdict(
        &rep.checks,
        format!(
            "orthonormality {:.1e}, lambda error {:e}, decoupling {:.1e}/{:.1e}, HS increment {:.1e}",
            rep.orthonormality_error,
            rep.lambda_spot_error,
            rep.linear_decoupling_fluid,
            rep.linear_decoupling_mc,
            rep.hilbert_schmidt.cauchy_increment
        ),
    )
}

fn main() {
    let cfg = ExperimentConfig::default();
    let runner = Runner::new(0).expect("worker pool");
    let criteria: Vec<Criterion> = vec![
        ("ell and kappa constants", Box::new(|| lemma_suite(&cfg))),
        ("controlled PRM law", Box::new(controlled_prm)),
        ("variational representation", Box::new(|| var_rep(&cfg, &runner))),
        ("rate-function equivalence", Box::new(|| rate_equivalence(&cfg))),
        ("Gramian closed forms", Box::new(gramian_closed_forms)),
        ("CLT regime", Box::new(|| clt(&cfg, &runner))),
        ("MDP slope", Box::new(|| mdp_slope(&cfg, &runner))),
        ("decomposition audit", Box::new(|| audit(&cfg, &runner))),
        ("pollutant model", Box::new(|| pollutant(&cfg, &runner))),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(s) => println!("criterion {}: PASS {name} ({secs:.1}s): {s}", i + 1),
            Err(s) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {s}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
