//! Command-line interface: argument parsing and the output files of each subcommand.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use modev_core::jump_sde::{fluid_limit, integrate_xeps};
use modev_core::mdp_limit::{gaussian_covariance, linearize_model};
use modev_core::prm::sample_prm;
use modev_core::rate::rate_terminal;
use modev_core::rng::replication_seed;

use crate::config::ExperimentConfig;
use crate::experiments::{self as ex, Checks, Runner};
use crate::formats::{self, num, write_table};

#[derive(Debug, Parser)]
#[command(
    name = "modev",
    version,
    about = "Moderate-deviation numerics for PRM-driven jump SDEs"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample one realization of X^ε and write the events and path.
    Simulate {
        /// Noise level; defaults to the first entry of `mdp.eps`.
        #[arg(long)]
        eps: Option<f64>,
        /// Also dump this many further paths under `paths/`.
        #[arg(long, default_value_t = 0)]
        paths: usize,
        /// Run the decomposition audit over the `mdp.eps` grid.
        #[arg(long)]
        audit: bool,
    },
    /// Fluid limit, linearization blocks and the Gaussian covariance.
    Fluid,
    /// Compare the spread of Y^ε(T) with the Lyapunov covariance.
    CltCheck,
    /// Plain and importance-sampling estimates of the deviation probability.
    MdpSlope,
    /// Gramian, sphere rate and the rate-equivalence suite.
    Rate {
        /// Terminal target; defaults to the sphere minimizer.
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<f64>>,
    },
    /// ℓ checks, κ constants and the integral bounds over the control catalog.
    LemmaCheck,
    /// One-sided check of the variational representation.
    VarRep,
    /// Eigenbasis, Hilbert-Schmidt and Galerkin checks for the pollutant model.
    Pollutant,
}

impl CommonArgs {
    /// Loads the config file and applies the flag overrides.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn mat_rows(name: &str, m: &modev_core::linalg::Mat) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rows.push(vec![name.to_string(), i.to_string(), j.to_string(), num(m[(i, j)])]);
        }
    }
    rows
}

fn create(dir: &Path, name: &str) -> Result<File> {
    let p = dir.join(name);
    File::create(&p).with_context(|| format!("creating {}", p.display()))
}

/// Runs one subcommand, writing its outputs under `cfg.out`.
pub fn run(command: &Command, cfg: &ExperimentConfig) -> Result<Checks> {
    let out = cfg.out.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), cfg.to_toml())?;
    let runner = Runner::new(cfg.workers)?;
    let mut checks = Checks::new(cfg);
    match command {
        Command::Simulate { eps, paths, audit } => {
            let model = cfg.build_model()?;
            let eps = eps.unwrap_or(cfg.mdp.eps[0]);
            let n = cfg.model.n_steps;
            let events = sample_prm(&model.measure, 1.0 / eps, model.horizon, cfg.seed)?;
            formats::write_measure(&model.measure, create(out, "measure.txt")?)?;
            formats::write_realization(&events, create(out, "realization.csv")?)?;
            formats::write_path(&integrate_xeps(&model, eps, &events, n)?, create(out, "path.csv")?)?;
            if *paths > 0 {
                let dir = out.join("paths");
                std::fs::create_dir_all(&dir)?;
                let all = runner.try_map(*paths, |r| {
                    let ev = sample_prm(
                        &model.measure,
                        1.0 / eps,
                        model.horizon,
                        replication_seed(cfg.seed, r as u64),
                    )?;
                    Ok(integrate_xeps(&model, eps, &ev, n)?)
                })?;
                for (r, p) in all.iter().enumerate() {
                    formats::write_path(p, create(&dir, &format!("path_{r:05}.csv"))?)?;
                }
            }
            if *audit {
                let rep = ex::run_decomposition_audit(cfg, &model, &runner)?;
                let rows: Vec<Vec<String>> = rep
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            num(r.eps),
                            num(r.b_eps),
                            num(r.max_reconstruction_error),
                            num(r.sup_m_mean),
                            num(r.sup_m_se),
                        ]
                    })
                    .collect();
                write_table(
                    &out.join("audit.csv"),
                    &["eps", "b_eps", "max_reconstruction_error", "sup_m_mean", "sup_m_se"],
                    &rows,
                )?;
                checks.merge(rep.checks);
            }
        }
        Command::Fluid => {
            let model = cfg.build_model()?;
            let n = cfg.model.n_steps;
            let fluid = fluid_limit(&model, n)?;
            formats::write_path(&fluid.path, create(out, "fluid.csv")?)?;
            let (_, sys) = linearize_model(&model, n)?;
            formats::write_matrix_blocks(
                &[
                    ("A1", &sys.a1),
                    ("A", &sys.a),
                    ("P", &sys.step_prop),
                    ("Q", &sys.step_forcing),
                ],
                sys.horizon(),
                create(out, "linearization.csv")?,
            )?;
            let gauss = gaussian_covariance(&sys);
            formats::write_matrix_blocks(
                &[("Sigma", &gauss.sigma)],
                sys.horizon(),
                create(out, "covariance.csv")?,
            )?;
        }
        Command::CltCheck => {
            let model = cfg.build_model()?;
            let rep = ex::run_clt_check(cfg, &model, &runner)?;
            let mut rows = mat_rows("sample_cov", &rep.sample_cov);
            rows.extend(mat_rows("sigma", &rep.sigma));
            for (j, m) in rep.mean.iter().enumerate() {
                rows.push(vec!["mean".into(), j.to_string(), "0".into(), num(*m)]);
                rows.push(vec!["mean_se".into(), j.to_string(), "0".into(), num(rep.mean_se[j])]);
                rows.push(vec!["skewness".into(), j.to_string(), "0".into(), num(rep.skewness[j])]);
                rows.push(vec![
                    "excess_kurtosis".into(),
                    j.to_string(),
                    "0".into(),
                    num(rep.excess_kurtosis[j]),
                ]);
            }
            rows.push(vec![
                "relative_error".into(),
                "0".into(),
                "0".into(),
                num(rep.relative_error),
            ]);
            write_table(&out.join("clt.csv"), &["quantity", "row", "col", "value"], &rows)?;
            checks.merge(rep.checks);
        }
        Command::MdpSlope => {
            let model = cfg.build_model()?;
            let rep = ex::run_mdp_slope(cfg, &model, &runner)?;
            formats::write_summary(&rep.rows, create(out, "summary.csv")?)?;
            checks.merge(rep.checks);
        }
        Command::Rate { target } => {
            let model = cfg.build_model()?;
            let rep = ex::run_rate(cfg, &model)?;
            formats::write_matrix_blocks(
                &[("W", std::slice::from_ref(&rep.gramian.w))],
                rep.sys.horizon(),
                create(out, "gramian.csv")?,
            )?;
            let sol = match target {
                Some(z) => rate_terminal(&rep.sys, z)?,
                None => rep.sphere.solution.clone(),
            };
            formats::write_rate_solution(&sol, rep.sys.n_atoms(), out)?;
            write_table(
                &out.join("sphere.csv"),
                &["threshold", "rate", "lambda_max"],
                &[vec![
                    num(cfg.mdp.threshold),
                    num(rep.sphere.rate.as_f64()),
                    num(rep.sphere.lambda_max),
                ]],
            )?;
            let s = &rep.suite;
            write_table(
                &out.join("rate_suite.csv"),
                &["trials", "max_excess", "max_frame_gap", "max_psi_star_gap"],
                &[vec![
                    s.trials.to_string(),
                    num(s.max_excess),
                    num(s.max_frame_gap),
                    num(s.max_psi_star_gap),
                ]],
            )?;
            checks.merge(rep.suite.checks);
        }
        Command::LemmaCheck => {
            let model = cfg.build_model()?;
            let rep = ex::run_lemma_check(cfg, &model)?;
            let rows: Vec<Vec<String>> = rep
                .constants
                .iter()
                .map(|k| {
                    vec![
                        num(k.beta),
                        num(k.kappa1),
                        num(k.kappa1_prime),
                        num(k.kappa2),
                        num(k.kappa3),
                    ]
                })
                .collect();
            write_table(
                &out.join("kappa.csv"),
                &["beta", "kappa1", "kappa1_prime", "kappa2", "kappa3"],
                &rows,
            )?;
            let mut rows: Vec<Vec<String>> = rep
                .integral_bounds
                .rows
                .iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        num(r.a_eps),
                        num(r.cost),
                        num(r.part_a.0),
                        num(r.part_a.1),
                        num(r.part_b.0),
                        num(r.part_b.1),
                        num(r.part_c.0),
                        num(r.part_c.1),
                        "checked".into(),
                    ]
                })
                .collect();
            for (name, a, cost) in &rep.integral_bounds.excluded {
                let mut row = vec![name.clone(), num(*a), num(*cost)];
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push("excluded".into());
                rows.push(row);
            }
            write_table(
                &out.join("integral_bounds.csv"),
                &[
                    "psi", "a_eps", "cost", "part_a", "bound_a", "part_b", "bound_b", "part_c", "bound_c", "status",
                ],
                &rows,
            )?;
            checks.merge(rep.checks);
        }
        Command::VarRep => {
            let rep = ex::run_var_rep(cfg, &cfg.var_rep, cfg.model.horizon, &runner)?;
            let mut rows = vec![vec!["lhs".into(), String::new(), num(rep.lhs), num(rep.lhs_se)]];
            if let Some(e) = rep.lhs_exact {
                rows.push(vec!["lhs_exact".into(), String::new(), num(e), "0.0".into()]);
            }
            for (phi, m, se) in &rep.rhs {
                rows.push(vec!["rhs".into(), num(*phi), num(*m), num(*se)]);
            }
            write_table(&out.join("var_rep.csv"), &["side", "phi", "value", "se"], &rows)?;
            checks.merge(rep.checks);
        }
        Command::Pollutant => {
            let rep = ex::run_pollutant(cfg, &runner)?;
            let metrics = [
                ("modes", rep.modes as f64),
                ("orthonormality_error", rep.orthonormality_error),
                ("lambda_spot_error", rep.lambda_spot_error),
                ("linear_decoupling_fluid", rep.linear_decoupling_fluid),
                ("linear_decoupling_mc", rep.linear_decoupling_mc),
                ("hs_cauchy_increment", rep.hilbert_schmidt.cauchy_increment),
                ("hs_tail_bound", rep.hilbert_schmidt.tail_bound),
                ("quadrature_refinement", rep.quadrature_refinement),
                ("galerkin_fluid", rep.galerkin_fluid),
                ("galerkin_mc_mean", rep.galerkin_mc_mean),
                ("galerkin_mc_se", rep.galerkin_mc_se),
            ];
            let rows: Vec<Vec<String>> = metrics.iter().map(|(k, v)| vec![k.to_string(), num(*v)]).collect();
            write_table(&out.join("pollutant.csv"), &["metric", "value"], &rows)?;
            let hs = &rep.hilbert_schmidt;
            let rows: Vec<Vec<String>> = hs
                .partial_sums
                .iter()
                .zip(&hs.lambda_sq_sums)
                .enumerate()
                .map(|(j, (s, l))| vec![j.to_string(), num(*s), num(*l)])
                .collect();
            write_table(
                &out.join("hilbert_schmidt.csv"),
                &["level", "partial_sum", "lambda_sq_sum"],
                &rows,
            )?;
            let rows: Vec<Vec<String>> = rep
                .snapshot
                .iter()
                .map(|(x, u)| {
                    let mut r: Vec<String> = x.iter().map(|v| num(*v)).collect();
                    r.push(num(*u));
                    r
                })
                .collect();
            let d = rep.snapshot.first().map_or(1, |s| s.0.len());
            let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
            header.push("u".into());
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_table(&out.join("snapshot.csv"), &header, &rows)?;
            checks.merge(rep.checks);
        }
    }
    Ok(checks)
}
