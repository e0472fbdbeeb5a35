//! Experiment configuration: a flat TOML file with one table per concern.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use leafdiff_core::entropy::{BowenParams, ProbeSampling};
use leafdiff_core::MetricKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Workers {
    Count(usize),
    Named(String),
}

impl Workers {
    /// Thread count for the pool, `None` meaning one per available core.
    pub fn threads(&self) -> Result<Option<usize>, String> {
        match self {
            Workers::Count(0) => Err("workers must be positive or \"auto\"".into()),
            Workers::Count(n) => Ok(Some(*n)),
            Workers::Named(s) if s == "auto" => Ok(None),
            Workers::Named(s) => Err(format!("workers must be a positive integer or \"auto\", got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    pub kind: MetricKind,
    pub amplitude: f64,
    pub width: f64,
    pub cutoff: usize,
}

impl Default for MetricSection {
    fn default() -> Self {
        Self { kind: MetricKind::Constant, amplitude: 0.1, width: 0.5, cutoff: 3 }
    }
}

/// A `[flow]` table present in the file replaces the default entirely, so giving only
/// `epsilon` does not clash with the default `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// `0` selects the deterministic reversed geodesic flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_step_factor")]
    pub step_factor: f64,
}

fn default_step_factor() -> f64 {
    0.1
}

impl Default for FlowSection {
    fn default() -> Self {
        Self { rho: Some(-4.0), epsilon: None, step_factor: default_step_factor() }
    }
}

/// Step counts are per trajectory; `n_steps` includes the burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub n_traj: usize,
    pub n_steps: u64,
    pub burn_in: u64,
    pub sample_every: u64,
    pub grid: [usize; 3],
}

impl Default for RunSection {
    fn default() -> Self {
        // 10⁶ retained samples at ρ = −4 with the default step 10⁻³
        Self { n_traj: 16, n_steps: 20_000 + 625_000, burn_in: 20_000, sample_every: 10, grid: [16, 16, 8] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub rho_list: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { rho_list: vec![-1.0, -4.0, -16.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropySection {
    pub eta: f64,
    pub n: u32,
    pub k_probes: usize,
    pub n_centers: usize,
    pub ball_radius: f64,
    pub sampling: ProbeSampling,
    pub quotient_neutral: bool,
    pub pesin_samples: usize,
    pub lyapunov_time: f64,
}

impl Default for EntropySection {
    fn default() -> Self {
        let b = BowenParams::default();
        Self {
            eta: b.eta,
            n: b.n,
            k_probes: b.k_probes,
            n_centers: b.n_centers,
            ball_radius: b.ball_radius,
            sampling: b.sampling,
            quotient_neutral: b.quotient_neutral,
            pesin_samples: 4096,
            lyapunov_time: 500.0,
        }
    }
}

impl EntropySection {
    pub fn bowen(&self) -> BowenParams {
        BowenParams {
            eta: self.eta,
            n: self.n,
            k_probes: self.k_probes,
            n_centers: self.n_centers,
            ball_radius: self.ball_radius,
            sampling: self.sampling,
            quotient_neutral: self.quotient_neutral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub eps_list: Vec<f64>,
    pub n_states: usize,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        Self { eps_list: vec![0.5, 0.25, 0.125], n_states: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub workers: Workers,
    pub metric: MetricSection,
    pub flow: FlowSection,
    pub run: RunSection,
    pub sweep: SweepSection,
    pub entropy: EntropySection,
    pub converge: ConvergeSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: Workers::Named("auto".into()),
            metric: MetricSection::default(),
            flow: FlowSection::default(),
            run: RunSection::default(),
            sweep: SweepSection::default(),
            entropy: EntropySection::default(),
            converge: ConvergeSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.workers.threads()?;
        match (self.flow.rho, self.flow.epsilon) {
            (Some(_), Some(_)) | (None, None) => return Err("exactly one of flow.rho and flow.epsilon must be given".into()),
            (Some(r), None) if !r.is_finite() => return Err(format!("flow.rho must be finite, got {r}")),
            (None, Some(e)) if !(e >= 0.0 && e.is_finite()) => {
                return Err(format!("flow.epsilon must be finite and non-negative, got {e}"))
            }
            _ => {}
        }
        let run = &self.run;
        let counts = [
            ("run.n_traj", run.n_traj as u64),
            ("run.n_steps", run.n_steps),
            ("run.sample_every", run.sample_every),
            ("entropy.n", self.entropy.n as u64),
            ("entropy.k_probes", self.entropy.k_probes as u64),
            ("entropy.n_centers", self.entropy.n_centers as u64),
            ("entropy.pesin_samples", self.entropy.pesin_samples as u64),
            ("converge.n_states", self.converge.n_states as u64),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        if run.grid.iter().any(|&d| d < 2) {
            return Err(format!("run.grid dimensions must be at least 2, got {:?}", run.grid));
        }
        if self.sweep.rho_list.is_empty() || self.sweep.rho_list.iter().any(|r| !r.is_finite()) {
            return Err("sweep.rho_list must be a non-empty list of finite values".into());
        }
        if self.converge.eps_list.is_empty() || self.converge.eps_list.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err("converge.eps_list must be a non-empty list of positive values".into());
        }
        Ok(())
    }

    /// Hash of everything that determines the results, excluding the seed (which is
    /// named separately) and the worker count (which never changes them).
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig { seed: 0, workers: Workers::Named("auto".into()), ..self.clone() };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(&digest[..6])
    }
}
