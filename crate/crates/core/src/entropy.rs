//! Lyapunov exponents, the mean log-Jacobian of the time-one flow map, and a Bowen-ball
//! survival estimate of the leafwise entropy of the random flow.
//!
//! The Bowen-ball estimator evolves a cloud of probes around a stationary center `u`
//! with common noise and measures the mass that stays within `η` of the orbit of `u`
//! at every integer time up to `n`. Masses are taken with respect to the conditional
//! Liouville density along the leaf, `P(w, ξ)/P(u, ξ)` times area. This is exact in
//! constant curvature; for the perturbed metric it uses `g`-area with the hyperbolic
//! Poisson kernel, an approximation flagged in the result.
//! The surviving mass is normalized by the mass of the initial `η`-ball, so the
//! estimate `−(1/n) log f_n` carries no offset from the size of the sampling region.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::flow::{flow_states, tangent_flow_from, FlowParams, FlowSegment, FlowState, LeafTangent};
use crate::hyperbolic::{busemann_c, hyp_dist_c, recentered_boundary, uncenter, DiskPoint, LineElement};
use crate::measure::burned_in_state;
use crate::noise::mix_seed;
use crate::quadrature;

pub const LYAPUNOV_BATCHES: usize = 16;
pub const MIN_LYAPUNOV_TIME: f64 = 500.0;
pub const PESIN_CHAINS: usize = 16;
/// Fewer surviving probes than this make a Bowen estimate unreliable.
pub const MIN_SURVIVORS: f64 = 50.0;
pub const MIN_BOWEN_PROBES: usize = 10_000;
pub const MAX_BOWEN_TIME: u32 = 20;
/// Enlargement of the linearized Bowen set used as the proposal region.
pub const PROPOSAL_MARGIN: f64 = 1.5;

/// Noise streams derived from a per-item seed.
const BURN_IN_STREAM: u64 = 0;
const FLOW_STREAM: u64 = 1;
const PROBE_STREAM: u64 = 2;

fn student_half_width(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    t * (var / n as f64).sqrt()
}

fn mean_and_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Exponents per unit time, descending.
    pub chi: [f64; 2],
    /// 95% half-widths from batch means.
    pub half_width: [f64; 2],
    /// Growth rate of the log-determinant, with its half-width.
    pub log_jacobian_rate: f64,
    pub log_jacobian_half_width: f64,
    pub n_steps: u64,
    pub total_time: f64,
}

/// Exponents from the QR-reorthonormalized tangent cocycle along one trajectory of
/// length `total_time`, started from a burned-in state.
pub fn lyapunov_spectrum(p: &FlowParams, total_time: f64, master_seed: u64) -> Result<LyapunovReport> {
    if total_time.is_nan() || total_time < MIN_LYAPUNOV_TIME {
        return Err(Error::InvalidParameter(format!(
            "total time must be at least {MIN_LYAPUNOV_TIME}, got {total_time}"
        )));
    }
    let seed = mix_seed(master_seed, 0);
    let start = burned_in_state(p, 0, mix_seed(seed, BURN_IN_STREAM))?;
    let batch_steps = (total_time / LYAPUNOV_BATCHES as f64 / p.step).round() as u64;
    let batch_time = batch_steps as f64 * p.step;
    let flow_seed = mix_seed(seed, FLOW_STREAM);
    let mut state = start;
    let mut tangent = LeafTangent::identity();
    let mut batches = Vec::with_capacity(LYAPUNOV_BATCHES);
    for b in 0..LYAPUNOV_BATCHES as u64 {
        let before = tangent.log_diag;
        let seg = FlowSegment::new(flow_seed, b * batch_steps, batch_steps);
        let (next, t) = tangent_flow_from(p, &seg, state, tangent)?;
        state = next;
        tangent = t;
        batches.push([
            (tangent.log_diag[0] - before[0]) / batch_time,
            (tangent.log_diag[1] - before[1]) / batch_time,
        ]);
    }
    let time = batch_time * LYAPUNOV_BATCHES as f64;
    let first: Vec<f64> = batches.iter().map(|b| b[0]).collect();
    let second: Vec<f64> = batches.iter().map(|b| b[1]).collect();
    let sums: Vec<f64> = batches.iter().map(|b| b[0] + b[1]).collect();
    Ok(LyapunovReport {
        chi: [tangent.log_diag[0] / time, tangent.log_diag[1] / time],
        half_width: [student_half_width(&first), student_half_width(&second)],
        log_jacobian_rate: tangent.log_det() / time,
        log_jacobian_half_width: student_half_width(&sums),
        n_steps: batch_steps * LYAPUNOV_BATCHES as u64,
        total_time: time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PesinEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Mean of `log det` of the time-one flow map over stationary states and independent
/// noise. Each of [`PESIN_CHAINS`] chains is burned in, then alternates a time-one
/// derivative evaluation on a fresh noise segment with one unit of its own evolution.
pub fn pesin_integral(p: &FlowParams, n_samples: usize, master_seed: u64) -> Result<PesinEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    let unit = p.steps_for_unit()?;
    let per_chain: Vec<usize> =
        (0..PESIN_CHAINS).map(|c| n_samples / PESIN_CHAINS + usize::from(c < n_samples % PESIN_CHAINS)).collect();
    let chains: Vec<Vec<f64>> = (0..PESIN_CHAINS)
        .into_par_iter()
        .map(|c| {
            let seed = mix_seed(master_seed, c as u64);
            let chain_seed = mix_seed(seed, BURN_IN_STREAM);
            let mut state = burned_in_state(p, c, chain_seed)?;
            let burn = (crate::measure::MIN_BURN_IN_TIME / p.step).ceil() as u64;
            let mut values = Vec::with_capacity(per_chain[c]);
            for j in 0..per_chain[c] as u64 {
                let probe = FlowSegment::new(mix_seed(seed, FLOW_STREAM + 1 + j), 0, unit);
                let (_, t) = tangent_flow_from(p, &probe, state, LeafTangent::identity())?;
                values.push(t.log_det());
                // the chain's own noise continues where the burn-in stopped
                let next = FlowSegment::new(chain_seed, burn + j * unit, unit);
                state = flow_states(p, &next, &[state])?[0];
            }
            Ok(values)
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = chains.into_iter().flatten().collect();
    let (mean, std_error) = mean_and_error(&values);
    Ok(PesinEstimate { mean, std_error, n_samples: values.len() })
}

impl FlowParams {
    /// Steps in one time unit.
    pub fn steps_for_unit(&self) -> Result<u64> {
        self.steps_for(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeSampling {
    /// Uniform in the leaf ball of radius `ball_radius` around the center.
    Uniform,
    /// Uniform in the enlarged Bowen set of the linearized flow along the center's
    /// orbit, reweighted to the target density.
    Linearized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowenParams {
    pub eta: f64,
    /// Number of unit time steps.
    pub n: u32,
    pub k_probes: usize,
    pub n_centers: usize,
    /// Sampling radius of [`ProbeSampling::Uniform`]; at least `eta`.
    pub ball_radius: f64,
    pub sampling: ProbeSampling,
    /// Measure separation transversally to the flow direction after time 0.
    pub quotient_neutral: bool,
}

impl Default for BowenParams {
    fn default() -> Self {
        Self {
            eta: 0.05,
            n: 8,
            k_probes: MIN_BOWEN_PROBES,
            n_centers: 16,
            ball_radius: 0.5,
            sampling: ProbeSampling::Linearized,
            quotient_neutral: false,
        }
    }
}

impl BowenParams {
    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParameter(format!("eta must lie in (0, 1), got {}", self.eta)));
        }
        if self.n == 0 || self.n > MAX_BOWEN_TIME {
            return Err(Error::InvalidParameter(format!("n must lie in 1..={MAX_BOWEN_TIME}, got {}", self.n)));
        }
        if self.k_probes < MIN_BOWEN_PROBES {
            return Err(Error::InvalidParameter(format!(
                "k_probes must be at least {MIN_BOWEN_PROBES}, got {}",
                self.k_probes
            )));
        }
        if self.n_centers == 0 {
            return Err(Error::InvalidParameter("n_centers must be positive".into()));
        }
        if self.sampling == ProbeSampling::Uniform && !(self.ball_radius >= self.eta && self.ball_radius < 2.0) {
            return Err(Error::InvalidParameter(format!(
                "ball_radius must lie in [eta, 2), got {}",
                self.ball_radius
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenEstimate {
    pub value: f64,
    pub std_error: f64,
    /// `−(1/n) log f_n` of each center.
    pub per_center: Vec<f64>,
    /// Smallest number of surviving probes over the centers.
    pub min_survivors: usize,
    pub params: BowenParams,
    /// True when the leaf density is the uniform stand-in rather than the exact one.
    pub approximate_density: bool,
}

/// Leaf geometry around a center, in `g`-orthonormal coordinates of its tangent plane.
struct LeafBall<'a> {
    p: &'a FlowParams,
    center: FlowState,
    /// `e^{φ}` at the center; `g`-lengths are hyperbolic lengths times this.
    scale: f64,
}

impl LeafBall<'_> {
    fn new(p: &FlowParams, center: FlowState) -> LeafBall<'_> {
        let scale = p.metric.phi_local(center.element.x.z()).exp();
        LeafBall { p, center, scale }
    }

    /// Chart point reached by the geodesic from the center with initial `g`-vector `delta`.
    fn exp(&self, delta: C64) -> C64 {
        let r = delta.norm() / self.scale;
        let x = self.center.element.x.z();
        if r == 0.0 {
            return x;
        }
        uncenter(x, delta / delta.norm() * (r / 2.0).tanh())
    }

    /// Density of the target measure per unit `g`-area of the tangent plane.
    fn density(&self, delta: C64) -> f64 {
        let r = delta.norm() / self.scale;
        let area = if r < 1e-8 { 1.0 } else { r.sinh() / r };
        let w = self.exp(delta);
        let x = self.center.element.x.z();
        let xi = self.center.element.xi;
        let poisson = (busemann_c(x, xi) - busemann_c(w, xi)).exp();
        let metric = &self.p.metric;
        if metric.is_hyperbolic() {
            area * poisson
        } else {
            area * poisson * (2.0 * (metric.phi_local(w) - metric.phi_local(x))).exp()
        }
    }

    /// Target mass of the `g`-ball of radius `eta`, by polar Gauss–Legendre quadrature.
    fn ball_mass(&self, eta: f64) -> f64 {
        quadrature::integrate(0.0, eta, 24, |r| {
            r * quadrature::integrate(0.0, TAU, 48, |t| self.density(C64::from_polar(r, t)))
        })
    }
}

/// `g`-separation of a probe from the center, both given as flow states.
fn separation(p: &FlowParams, center: &FlowState, probe: &FlowState, quotient: bool) -> f64 {
    let to_center = center.lift.compose(&probe.lift.inverse());
    let w = to_center.apply_c(probe.element.x.z());
    let x = center.element.x.z();
    let scale = p.metric.phi_local(x).exp();
    if !quotient {
        return hyp_dist_c(w, x) * scale;
    }
    // distance to the geodesic through the center toward ξ
    let zeta = recentered_boundary(x, center.element.xi);
    let z = (w - x) / (C64::new(1.0, 0.0) - x.conj() * w) * zeta.conj();
    (2.0 * z.im.abs() / (1.0 - z.norm_sqr())).asinh() * scale
}

/// Sampling region for probe offsets in the tangent plane of the center.
enum Proposal {
    Disk(f64),
    /// A box in the right singular frame of the linearized flow map: axes `frame`
    /// columns, half-sides `half`.
    Box { frame: Matrix2<f64>, half: [f64; 2] },
}

impl Proposal {
    /// Covers the enlarged linearized Bowen set `{|δ| < η, |Dδ| < PROPOSAL_MARGIN η}`.
    fn linearized(d: &Matrix2<f64>, eta: f64) -> Self {
        let svd = d.svd(false, true);
        let frame = svd.v_t.expect("requested").transpose();
        let reach = PROPOSAL_MARGIN * eta;
        let half = [0, 1].map(|i| (reach / svd.singular_values[i]).min(eta));
        Proposal::Box { frame, half }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> C64 {
        match self {
            Proposal::Disk(r) => C64::from_polar(r * rng.random::<f64>().sqrt(), TAU * rng.random::<f64>()),
            Proposal::Box { frame, half } => {
                let s = Vector2::new(
                    half[0] * (2.0 * rng.random::<f64>() - 1.0),
                    half[1] * (2.0 * rng.random::<f64>() - 1.0),
                );
                let d = frame * s;
                C64::new(d[0], d[1])
            }
        }
    }

    fn density(&self) -> f64 {
        match self {
            Proposal::Disk(r) => 1.0 / (PI * r * r),
            Proposal::Box { half, .. } => 1.0 / (4.0 * half[0] * half[1]),
        }
    }
}

/// `−(1/n) log f_n` and the survivor count for one center.
fn bowen_center(p: &FlowParams, params: &BowenParams, index: usize, master_seed: u64) -> Result<(f64, usize)> {
    let seed = mix_seed(master_seed, index as u64);
    let center = burned_in_state(p, index, mix_seed(seed, BURN_IN_STREAM))?;
    let unit = p.steps_for_unit()?;
    let noise = mix_seed(seed, FLOW_STREAM);
    let ball = LeafBall::new(p, center);
    let eta = params.eta;

    let proposal = match params.sampling {
        ProbeSampling::Uniform => Proposal::Disk(params.ball_radius),
        ProbeSampling::Linearized => {
            let seg = FlowSegment::new(noise, 0, unit * params.n as u64);
            let (_, t) = tangent_flow_from(p, &seg, center, LeafTangent::identity())?;
            Proposal::linearized(&t.matrix(), eta)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, PROBE_STREAM));
    let mut weights = Vec::with_capacity(params.k_probes);
    let mut states = vec![center];
    let group = p.metric.group();
    for _ in 0..params.k_probes {
        let delta = proposal.sample(&mut rng);
        // the Bowen condition at time 0 is the g-ball of radius η
        if delta.norm() >= eta {
            continue;
        }
        let w = ball.exp(delta);
        let reduced = group.reduce(LineElement::new(DiskPoint::from_complex(w), center.element.xi))?;
        states.push(FlowState { element: reduced.element, lift: reduced.applied });
        weights.push(ball.density(delta) / proposal.density());
    }
    for k in 0..params.n as u64 {
        let seg = FlowSegment::new(noise, k * unit, unit);
        let moved = flow_states(p, &seg, &states)?;
        let c = moved[0];
        let mut kept_states = vec![c];
        let mut kept_weights = Vec::with_capacity(weights.len());
        for (s, w) in moved[1..].iter().zip(&weights) {
            if separation(p, &c, s, params.quotient_neutral) < eta {
                kept_states.push(*s);
                kept_weights.push(*w);
            }
        }
        states = kept_states;
        weights = kept_weights;
    }
    let survivors = weights.len();
    if (survivors as f64) < MIN_SURVIVORS {
        return Err(Error::Starvation { survivors: survivors as f64, required: MIN_SURVIVORS });
    }
    let surviving_mass = weights.iter().sum::<f64>() / params.k_probes as f64;
    let fraction = surviving_mass / ball.ball_mass(eta);
    Ok((-fraction.ln() / params.n as f64, survivors))
}

/// Average Bowen-ball decay rate over stationary centers, each with its own noise.
pub fn bowen_entropy(p: &FlowParams, params: &BowenParams, master_seed: u64) -> Result<BowenEstimate> {
    params.validate()?;
    let results: Vec<(f64, usize)> = (0..params.n_centers)
        .into_par_iter()
        .map(|c| bowen_center(p, params, c, master_seed))
        .collect::<Result<_>>()?;
    let per_center: Vec<f64> = results.iter().map(|r| r.0).collect();
    let (value, std_error) = mean_and_error(&per_center);
    Ok(BowenEstimate {
        value,
        std_error,
        min_survivors: results.iter().map(|r| r.1).min().unwrap_or(0),
        per_center,
        params: *params,
        approximate_density: !p.metric.is_hyperbolic(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub rho: f64,
    pub pesin: PesinEstimate,
    pub bowen: BowenEstimate,
    /// `bowen − pesin`, and its standard error.
    pub gap: f64,
    pub gap_std_error: f64,
}

/// Both entropy estimates from the same master seed, and their difference.
pub fn pesin_gap(p: &FlowParams, bowen: &BowenParams, pesin_samples: usize, master_seed: u64) -> Result<EntropyReport> {
    let pesin = pesin_integral(p, pesin_samples, master_seed)?;
    let bowen = bowen_entropy(p, bowen, master_seed)?;
    Ok(EntropyReport {
        rho: p.rho,
        gap: bowen.value - pesin.mean,
        gap_std_error: bowen.std_error.hypot(pesin.std_error),
        pesin,
        bowen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::FuchsianGroup;
    use crate::metric::MetricModel;
    use std::sync::Arc;

    fn constant() -> Arc<MetricModel> {
        Arc::new(MetricModel::constant(Arc::new(FuchsianGroup::octagon().unwrap())))
    }

    #[test]
    fn ball_mass_is_hyperbolic_area() {
        let p = FlowParams::from_epsilon(0.0, 1.0, constant()).unwrap();
        let center = burned_in_state(&p, 0, 1).unwrap();
        let ball = LeafBall::new(&p, center);
        // the Poisson kernel is harmonic, so its ball average is its central value
        for eta in [0.05, 0.5] {
            let m = ball.ball_mass(eta);
            let hyperbolic_area = 2.0 * PI * (eta.cosh() - 1.0);
            assert!((m / hyperbolic_area - 1.0).abs() < 1e-9, "{m} vs {hyperbolic_area}");
        }
    }

    #[test]
    fn quotient_separation_ignores_the_flow_direction() {
        let p = FlowParams::from_epsilon(0.0, 1.0, constant()).unwrap();
        let center = burned_in_state(&p, 3, 9).unwrap();
        let x = center.element.x;
        let along = crate::hyperbolic::geodesic_flow_leaf(x, center.element.xi, 0.3);
        let probe = FlowState::new(crate::hyperbolic::LineElement::new(along, center.element.xi));
        assert!(separation(&p, &center, &probe, true) < 1e-9);
        assert!((separation(&p, &center, &probe, false) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn parameters_are_validated() {
        let p = FlowParams::from_epsilon(0.0, 1.0, constant()).unwrap();
        let bad = BowenParams { k_probes: 100, ..BowenParams::default() };
        assert!(matches!(bowen_entropy(&p, &bad, 0), Err(Error::InvalidParameter(_))));
        let bad = BowenParams { n: 25, ..BowenParams::default() };
        assert!(bowen_entropy(&p, &bad, 0).is_err());
        assert!(lyapunov_spectrum(&p, 100.0, 0).is_err());
    }

    #[test]
    fn uniform_probes_starve_at_long_horizons() {
        let p = FlowParams::from_epsilon(0.0, 1.0, constant()).unwrap();
        let params = BowenParams { sampling: ProbeSampling::Uniform, n_centers: 1, n: 12, ..BowenParams::default() };
        assert!(matches!(bowen_entropy(&p, &params, 0), Err(Error::Starvation { .. })));
    }
}
