//! TOML experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use modev_core::models::AffineTanh;
use modev_core::pollutant::{InjectionAtom, Kernel, ModeVector, PollutantParams};
use modev_core::{MarkMeasure, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub model: ModelConfig,
    pub mdp: MdpConfig,
    pub clt: CltConfig,
    pub var_rep: VarRepConfig,
    pub lemma: LemmaConfig,
    pub audit: AuditConfig,
    pub pollutant: PollutantConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            out: PathBuf::from("out"),
            workers: 0,
            model: ModelConfig::default(),
            mdp: MdpConfig::default(),
            clt: CltConfig::default(),
            var_rep: VarRepConfig::default(),
            lemma: LemmaConfig::default(),
            audit: AuditConfig::default(),
            pollutant: PollutantConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    /// `b(x) = −κx`, `G(x, y) = c·y`.
    Scalar,
    /// Two-dimensional nonlinear benchmark.
    Planar,
    /// Galerkin truncation of the pollutant model from `[pollutant]`.
    Pollutant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub id: ModelId,
    pub horizon: f64,
    pub n_steps: usize,
    /// Initial point; defaults to the origin.
    pub x0: Option<Vec<f64>>,
    pub kappa: f64,
    pub jump_gain: f64,
    /// Atoms as `[mark..., weight]`.
    pub atoms: Option<Vec<Vec<f64>>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            id: ModelId::Scalar,
            horizon: 1.0,
            n_steps: 100,
            x0: None,
            kappa: 1.0,
            jump_gain: 1.0,
            atoms: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpConfig {
    pub eps: Vec<f64>,
    pub rho: f64,
    /// Deviation threshold `c`.
    pub threshold: f64,
    pub replications: usize,
    pub is_replications: usize,
    pub beta: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.2, 0.1, 0.05, 0.02, 0.01],
            rho: 0.25,
            threshold: 1.0,
            replications: 10_000,
            is_replications: 2_000,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CltConfig {
    pub eps: f64,
    pub replications: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            replications: 2_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    Zero,
    /// `F(m) = γ · count`
    Linear {
        gamma: f64,
    },
    /// `F(m) = γ · min(count, cap)`
    Capped {
        gamma: f64,
        cap: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarRepConfig {
    pub theta: f64,
    pub mass: f64,
    pub functional: FunctionalConfig,
    pub replications: usize,
}

impl Default for VarRepConfig {
    fn default() -> Self {
        Self {
            theta: 1.0,
            mass: 1.0,
            functional: FunctionalConfig::Linear {
                gamma: std::f64::consts::LN_2,
            },
            replications: 20_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    pub betas: Vec<f64>,
    /// Cost budget `M` of the control catalog.
    pub m: f64,
    pub beta: f64,
    pub a_grid: Vec<f64>,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            betas: vec![1e-3, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0],
            m: 2.0,
            beta: 0.5,
            a_grid: vec![0.5, 0.2, 0.1, 0.05],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub paths: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { paths: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub center: Vec<f64>,
    pub magnitude: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Constant {
        value: f64,
    },
    Affine {
        weights: Vec<f64>,
        offset: f64,
    },
    Tanh {
        amplitude: f64,
        weights: Vec<f64>,
        offset: f64,
    },
}

impl From<&KernelConfig> for Kernel {
    fn from(k: &KernelConfig) -> Self {
        match k {
            KernelConfig::Constant { value } => Kernel::Constant(*value),
            KernelConfig::Affine { weights, offset } => Kernel::Affine {
                weights: weights.clone(),
                offset: *offset,
            },
            KernelConfig::Tanh {
                amplitude,
                weights,
                offset,
            } => Kernel::Tanh {
                amplitude: *amplitude,
                weights: weights.clone(),
                offset: *offset,
            },
        }
    }
}

/// One mode coefficient: multi-index and value.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeEntry {
    pub index: Vec<usize>,
    pub value: f64,
}

fn modes(v: &[ModeEntry]) -> ModeVector {
    v.iter().map(|e| (e.index.clone(), e.value)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PollutantConfig {
    pub d_space: usize,
    pub side: f64,
    pub diffusivity: f64,
    pub velocity: Vec<f64>,
    pub decay: f64,
    pub radius: f64,
    pub modes: usize,
    pub jump_kernel: KernelConfig,
    pub drift_kernels: Vec<KernelConfig>,
    pub probes: Vec<Vec<ModeEntry>>,
    pub outputs: Vec<Vec<ModeEntry>>,
    pub atoms: Vec<AtomConfig>,
    pub x0: Vec<ModeEntry>,
    pub ball_points: usize,
    /// Exponent `r` of the Hilbert–Schmidt sums.
    pub r: f64,
    /// Exponent `q` of the weighted Galerkin distance.
    pub q: f64,
    pub hs_levels: usize,
    pub eps: f64,
    pub seeds: usize,
    pub snapshot_points: usize,
}

impl Default for PollutantConfig {
    fn default() -> Self {
        let p = PollutantParams::nonlinear_1d(5);
        let kernel = |k: &Kernel| match k {
            Kernel::Constant(value) => KernelConfig::Constant { value: *value },
            Kernel::Affine { weights, offset } => KernelConfig::Affine {
                weights: weights.clone(),
                offset: *offset,
            },
            Kernel::Tanh {
                amplitude,
                weights,
                offset,
            } => KernelConfig::Tanh {
                amplitude: *amplitude,
                weights: weights.clone(),
                offset: *offset,
            },
        };
        let entries = |m: &ModeVector| {
            m.iter()
                .map(|(index, value)| ModeEntry {
                    index: index.clone(),
                    value: *value,
                })
                .collect::<Vec<_>>()
        };
        Self {
            d_space: p.d_space,
            side: p.side,
            diffusivity: p.diffusivity,
            velocity: p.velocity.clone(),
            decay: p.decay,
            radius: p.radius,
            modes: p.modes,
            jump_kernel: kernel(&p.jump_kernel),
            drift_kernels: p.drift_kernels.iter().map(kernel).collect(),
            probes: p.probes.iter().map(entries).collect(),
            outputs: p.outputs.iter().map(entries).collect(),
            atoms: p
                .atoms
                .iter()
                .map(|a| AtomConfig {
                    center: a.center.clone(),
                    magnitude: a.magnitude,
                    weight: a.weight,
                })
                .collect(),
            x0: entries(&p.x0),
            ball_points: p.ball_points,
            r: 2.0,
            q: 1.0,
            hs_levels: 40,
            eps: 0.05,
            seeds: 50,
            snapshot_points: 101,
        }
    }
}

impl PollutantConfig {
    pub fn params(&self, horizon: f64) -> PollutantParams {
        PollutantParams {
            d_space: self.d_space,
            side: self.side,
            diffusivity: self.diffusivity,
            velocity: self.velocity.clone(),
            decay: self.decay,
            radius: self.radius,
            modes: self.modes,
            jump_kernel: (&self.jump_kernel).into(),
            drift_kernels: self.drift_kernels.iter().map(Kernel::from).collect(),
            probes: self.probes.iter().map(|p| modes(p)).collect(),
            outputs: self.outputs.iter().map(|p| modes(p)).collect(),
            atoms: self
                .atoms
                .iter()
                .map(|a| InjectionAtom {
                    center: a.center.clone(),
                    magnitude: a.magnitude,
                    weight: a.weight,
                })
                .collect(),
            x0: modes(&self.x0),
            horizon,
            ball_points: self.ball_points,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// `out` and `workers` cleared.
    pub fn hash(&self) -> String {
        let canonical = Self {
            out: PathBuf::new(),
            workers: 0,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.mdp;
        ensure!(!m.eps.is_empty(), "mdp.eps must not be empty");
        ensure!(
            m.eps.iter().all(|&e| e > 0.0) && m.eps.windows(2).all(|w| w[1] < w[0]),
            "mdp.eps must be positive and strictly decreasing"
        );
        ensure!(m.rho > 0.0 && m.rho < 0.5, "mdp.rho must lie in (0, 1/2)");
        ensure!(m.threshold >= 0.0, "mdp.threshold must be nonnegative");
        ensure!(
            m.replications >= 100 && m.is_replications >= 100,
            "replication counts must be at least 100"
        );
        ensure!(m.beta > 0.0 && m.beta <= 1.0, "mdp.beta must lie in (0, 1]");
        ensure!(self.clt.eps > 0.0, "clt.eps must be positive");
        ensure!(self.clt.replications >= 100, "clt.replications must be at least 100");
        ensure!(self.var_rep.theta > 0.0, "var_rep.theta must be positive");
        ensure!(self.var_rep.mass > 0.0, "var_rep.mass must be positive");
        ensure!(
            self.var_rep.replications >= 100,
            "var_rep.replications must be at least 100"
        );
        ensure!(self.model.horizon > 0.0, "model.horizon must be positive");
        ensure!(self.model.n_steps > 0, "model.n_steps must be positive");
        ensure!(
            self.lemma.betas.iter().all(|&b| b > 0.0),
            "lemma.betas must be positive"
        );
        ensure!(self.audit.paths > 0, "audit.paths must be positive");
        Ok(())
    }

    /// Builds the configured model.
    pub fn build_model(&self) -> Result<ModelSpec> {
        let mc = &self.model;
        match mc.id {
            ModelId::Scalar | ModelId::Planar => {
                let (dynamics, default_atoms): (AffineTanh, Vec<Vec<f64>>) = match mc.id {
                    ModelId::Scalar => (AffineTanh::scalar(mc.kappa, mc.jump_gain), vec![vec![1.0, 1.0]]),
                    _ => (
                        AffineTanh::planar(),
                        vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.7], vec![-0.5, 0.5, 0.3]],
                    ),
                };
                let atoms = mc.atoms.clone().unwrap_or(default_atoms);
                let m = dynamics.mark_dim();
                for a in &atoms {
                    if a.len() != m + 1 {
                        bail!("model.atoms entries need {} mark coordinates and a weight", m);
                    }
                }
                let nu = MarkMeasure::new(atoms.iter().map(|a| (a[..m].to_vec(), a[m])))?;
                let d = modev_core::jump_sde::Dynamics::dim(&dynamics);
                let x0 = mc.x0.clone().unwrap_or_else(|| vec![0.0; d]);
                Ok(ModelSpec::new(Arc::new(dynamics), nu, x0, mc.horizon)?)
            }
            ModelId::Pollutant => {
                let built = modev_core::pollutant::assemble_model(&self.pollutant.params(mc.horizon))?;
                Ok(built.model)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_ignores_runtime_knobs() {
        let cfg = ExperimentConfig::default();
        let other = ExperimentConfig {
            workers: 7,
            out: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(cfg.hash(), other.hash());
        let reseeded = ExperimentConfig { seed: 1, ..cfg.clone() };
        assert_ne!(cfg.hash(), reseeded.hash());
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ExperimentConfig::parse("[mdp]\neps = [0.1, 0.2]\n").is_err());
        assert!(ExperimentConfig::parse("[mdp]\nrho = 0.5\n").is_err());
        assert!(ExperimentConfig::parse("[mdp]\nbeta = 1.5\n").is_err());
        assert!(ExperimentConfig::parse("[mdp]\nreplications = 10\n").is_err());
        assert!(ExperimentConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn builds_each_model() {
        let mut cfg = ExperimentConfig::default();
        for id in [ModelId::Scalar, ModelId::Planar, ModelId::Pollutant] {
            cfg.model.id = id;
            let m = cfg.build_model().unwrap();
            assert_eq!(m.x0.len(), m.dim());
        }
    }
}
