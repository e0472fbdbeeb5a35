//! The leafwise diffusion as a common-noise stochastic flow on line elements.
//!
//! For `ρ < 0` the simulated generator is `−X̄ + ε² Δ_g` with `ε² = −1/ρ`, a constant
//! time change of `Δ_g + ρ X̄` with the same stationary measures. For `0 ≤ ρ` the
//! generator `Δ_g + ρ X̄` is simulated directly. Both are written as `a X̄ + ε² Δ_g`.
//!
//! A step is taken in the chart recentered at the current point `x`: with
//! `u = X̄(x) / (1 − |x|²)` (the spray seen from the origin of that chart), the
//! step is `x' = T_x^{-1}(u · (a h + ε (dW₁ + i dW₂)))` where
//! `T_x^{-1}(δ) = (δ + x)/(1 + x̄ δ)`. Because `T_x^{-1}` is holomorphic and the
//! complex increment has `E[w²] = 0`, the step has generator exactly `a X̄ + ε² Δ_g`
//! to first order in `h`, and it commutes with every isometry.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperbolic::{
    conformal_factor, recentered_boundary, recentered_boundary_wirtinger, uncenter, uncenter_wirtinger,
    wirtinger_to_real, BoundaryPoint, DiskPoint, LineElement, MobiusMap,
};
use crate::metric::MetricModel;
use crate::noise::NoiseStream;
use crate::group::ReducedState;

/// Largest step, and the step-to-`ε²` ratio bound.
pub const MAX_STEP: f64 = 1e-2;
pub const DEFAULT_STEP_FACTOR: f64 = 0.1;
/// Steps between QR re-orthonormalizations of the tangent cocycle.
pub const QR_CADENCE: usize = 16;
/// Spacing of the central differences of the interpolated spray.
pub const SPRAY_FD_SPACING: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct FlowParams {
    /// `−∞` for the deterministic reversed geodesic flow.
    pub rho: f64,
    pub epsilon: f64,
    /// Coefficient of `X̄` in the simulated generator.
    pub drift: f64,
    pub step: f64,
    pub metric: Arc<MetricModel>,
}

impl FlowParams {
    pub fn from_rho(rho: f64, step_factor: f64, metric: Arc<MetricModel>) -> Result<Self> {
        if rho.is_nan() || rho == f64::INFINITY {
            return Err(Error::InvalidParameter(format!("rho must be a real number or -inf, got {rho}")));
        }
        let (drift, eps_sq) = if rho == f64::NEG_INFINITY {
            (-1.0, 0.0)
        } else if rho < 0.0 {
            (-1.0, -1.0 / rho)
        } else {
            (rho, 1.0)
        };
        Self::assemble(rho, drift, eps_sq, step_factor, metric)
    }

    pub fn from_epsilon(epsilon: f64, step_factor: f64, metric: Arc<MetricModel>) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        let rho = if epsilon == 0.0 { f64::NEG_INFINITY } else { -1.0 / (epsilon * epsilon) };
        Self::assemble(rho, -1.0, epsilon * epsilon, step_factor, metric)
    }

    fn assemble(rho: f64, drift: f64, eps_sq: f64, step_factor: f64, metric: Arc<MetricModel>) -> Result<Self> {
        if !(step_factor > 0.0 && step_factor <= 1.0) {
            return Err(Error::InvalidParameter(format!("step_factor must lie in (0, 1], got {step_factor}")));
        }
        let scale = if eps_sq > 0.0 { MAX_STEP.min(eps_sq) } else { MAX_STEP };
        Ok(Self { rho, epsilon: eps_sq.sqrt(), drift, step: step_factor * scale, metric })
    }

    /// Overrides the step; must respect `h ≤ 10⁻²` and `h ≤ ε²`.
    pub fn with_step(mut self, step: f64) -> Result<Self> {
        let eps_sq = self.epsilon * self.epsilon;
        if step.is_nan() || step <= 0.0 || step > MAX_STEP || (eps_sq > 0.0 && step > eps_sq) {
            return Err(Error::InvalidParameter(format!("step {step} violates h ≤ min(1e-2, ε²)")));
        }
        self.step = step;
        Ok(self)
    }

    /// Variance of each increment component.
    #[inline]
    pub fn noise_variance(&self) -> f64 {
        2.0 * self.step
    }

    /// Number of steps covering `time`, which must be a multiple of the step.
    pub fn steps_for(&self, time: f64) -> Result<u64> {
        let n = (time / self.step).round();
        if n < 0.0 || (n * self.step - time).abs() > 1e-9 * time.abs().max(1.0) {
            return Err(Error::InvalidParameter(format!("time {time} is not a multiple of the step {}", self.step)));
        }
        Ok(n as u64)
    }
}

/// A window of the common noise: steps `start_step .. start_step + n_steps` of the stream `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSegment {
    pub seed: u64,
    pub start_step: u64,
    pub n_steps: u64,
}

impl FlowSegment {
    pub fn new(seed: u64, start_step: u64, n_steps: u64) -> Self {
        Self { seed, start_step, n_steps }
    }

    /// Splits after `k` steps into the segment and its shifted continuation.
    pub fn split(&self, k: u64) -> (Self, Self) {
        let k = k.min(self.n_steps);
        (
            Self::new(self.seed, self.start_step, k),
            Self::new(self.seed, self.start_step + k, self.n_steps - k),
        )
    }

    pub fn stream(&self, p: &FlowParams) -> NoiseStream {
        NoiseStream::new(self.seed, p.noise_variance(), self.start_step)
    }

    pub fn increments(&self, p: &FlowParams) -> Vec<[f64; 2]> {
        let mut s = self.stream(p);
        (0..self.n_steps).map(|_| s.next_increment()).collect()
    }
}

/// A reduced line element together with the accumulated reduction map, which carries
/// the initial chart to the current one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub element: LineElement,
    pub lift: MobiusMap,
}

impl FlowState {
    pub fn new(element: LineElement) -> Self {
        Self { element, lift: MobiusMap::IDENTITY }
    }

    /// The current point in the initial chart (on the universal cover).
    pub fn cover_point(&self) -> DiskPoint {
        self.lift.inverse().apply(self.element.x)
    }
}

/// Leaf derivative `Q · diag(e^{l₁}, e^{l₂}) · U` in `g`-orthonormal frames, with `Q`
/// orthogonal and `U` unit upper triangular, so large growth never overflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafTangent {
    pub q: Matrix2<f64>,
    pub log_diag: [f64; 2],
    pub upper: f64,
}

impl Default for LeafTangent {
    fn default() -> Self {
        Self::identity()
    }
}

impl LeafTangent {
    pub fn identity() -> Self {
        Self { q: Matrix2::identity(), log_diag: [0.0, 0.0], upper: 0.0 }
    }

    pub fn log_det(&self) -> f64 {
        self.log_diag[0] + self.log_diag[1]
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        let d = Matrix2::new(self.log_diag[0].exp(), 0.0, 0.0, self.log_diag[1].exp());
        let u = Matrix2::new(1.0, self.upper, 0.0, 1.0);
        self.q * d * u
    }

    /// Left-multiplies by `block` and re-orthonormalizes.
    pub fn absorb(&mut self, block: &Matrix2<f64>) {
        let z = block * self.q;
        // Givens QR with a positive diagonal
        let (a, c) = (z[(0, 0)], z[(1, 0)]);
        let r11 = a.hypot(c);
        let (cs, sn) = (a / r11, c / r11);
        let q = Matrix2::new(cs, -sn, sn, cs);
        let r = q.transpose() * z;
        let (mut q, r12, mut r22) = (q, r[(0, 1)], r[(1, 1)]);
        if r22 < 0.0 {
            r22 = -r22;
            q[(0, 1)] = -q[(0, 1)];
            q[(1, 1)] = -q[(1, 1)];
        }
        let gap = (self.log_diag[1] - self.log_diag[0]).exp();
        self.upper += r12 / r11 * gap;
        self.log_diag[0] += r11.ln();
        self.log_diag[1] += r22.ln();
        self.q = q;
    }
}

/// One step's outcome at the raw level.
struct Stepped {
    x: C64,
    xi: BoundaryPoint,
    applied: Option<MobiusMap>,
}

impl FlowParams {
    #[inline]
    fn stochastic_factor(&self, dw: [f64; 2]) -> C64 {
        C64::new(self.drift * self.step + self.epsilon * dw[0], self.epsilon * dw[1])
    }

    /// `u(x) = X̄(x)/(1 − |x|²)`, a complex number of modulus `e^{−φ(x)}/2`.
    #[inline]
    fn recentered_spray(&self, x: C64, xi: BoundaryPoint) -> C64 {
        let metric = &self.metric;
        if metric.is_hyperbolic() {
            return recentered_boundary(x, xi) * 0.5;
        }
        let v = metric.spray_angle(x, xi);
        C64::from_polar(0.5 * (-metric.phi_local(x)).exp(), v)
    }

    #[inline]
    fn advance(&self, x: C64, xi: BoundaryPoint, dw: [f64; 2]) -> Result<Stepped> {
        let delta = self.recentered_spray(x, xi) * self.stochastic_factor(dw);
        let moved = uncenter(x, delta);
        let group = self.metric.group();
        if group.contains_c(moved) {
            return Ok(Stepped { x: moved, xi, applied: None });
        }
        let (x, m, _) = group.reduce_point(moved)?;
        Ok(Stepped { x, xi: m.apply_boundary(xi), applied: Some(m) })
    }

    /// Conformal scale `λ e^{φ}` of `g` in the chart, near the fundamental domain.
    #[inline]
    fn frame_scale(&self, x: C64) -> f64 {
        conformal_factor(x) * self.metric.phi_local(x).exp()
    }

    /// One step together with its leaf derivative in `g`-orthonormal frames.
    fn advance_with_tangent(&self, x: C64, xi: BoundaryPoint, dw: [f64; 2]) -> Result<(Stepped, Matrix2<f64>)> {
        let c = self.stochastic_factor(dw);
        let metric = &self.metric;
        let (u, u_z, u_zb) = if metric.is_hyperbolic() {
            let zeta = recentered_boundary(x, xi);
            let (dz, dzb) = recentered_boundary_wirtinger(x, xi);
            (zeta * 0.5, dz * 0.5, dzb * 0.5)
        } else {
            let table = metric.spray_table();
            let jet = metric.phi_jet_local(x);
            let v = metric.spray_angle(x, xi);
            let u = C64::from_polar(0.5 * (-jet.value).exp(), v);
            let h = SPRAY_FD_SPACING;
            let dv = |e: C64| crate::hyperbolic::angle_diff(table.spray_angle(x + e, xi), table.spray_angle(x - e, xi)) / (2.0 * h);
            let (v_x, v_y) = (dv(C64::new(h, 0.0)), dv(C64::new(0.0, h)));
            let i = C64::new(0.0, 1.0);
            let u_x = u * (i * v_x - jet.grad.re);
            let u_y = u * (i * v_y - jet.grad.im);
            (u, (u_x - i * u_y) * 0.5, (u_x + i * u_y) * 0.5)
        };
        let delta = u * c;
        let (a, b) = uncenter_wirtinger(x, delta, u_z * c, u_zb * c);
        let moved = uncenter(x, delta);
        let mut jac = wirtinger_to_real(a, b) * (self.frame_scale(moved) / self.frame_scale(x));
        let group = metric.group();
        if group.contains_c(moved) {
            return Ok((Stepped { x: moved, xi, applied: None }, jac));
        }
        let (reduced, m, _) = group.reduce_point(moved)?;
        // an isometry of g acts on orthonormal frames by the rotation arg m'
        let (s, co) = m.derivative(moved).arg().sin_cos();
        jac = Matrix2::new(co, -s, s, co) * jac;
        Ok((Stepped { x: reduced, xi: m.apply_boundary(xi), applied: Some(m) }, jac))
    }
}

/// One Euler step of the leafwise diffusion from `v` with increment `dw`, followed by reduction.
pub fn step_sde(p: &FlowParams, v: LineElement, dw: [f64; 2]) -> Result<ReducedState> {
    let start = p.metric.group().reduce(v)?;
    let s = p.advance(start.element.x.z(), start.element.xi, dw)?;
    let (applied, word) = match s.applied {
        Some(m) => (m.compose(&start.applied), start.word_length + 1),
        None => (start.applied, start.word_length),
    };
    Ok(ReducedState {
        element: LineElement::new(DiskPoint::from_complex(s.x), s.xi),
        applied,
        word_length: word,
    })
}

/// Advances a reduced state through `increments`, calling `observe(k, state)` after step `k`.
pub fn advance_state<F: FnMut(u64, &FlowState)>(
    p: &FlowParams,
    state: FlowState,
    increments: impl IntoIterator<Item = [f64; 2]>,
    mut observe: F,
) -> Result<FlowState> {
    let (mut x, mut xi, mut lift) = (state.element.x.z(), state.element.xi, state.lift);
    for (k, dw) in increments.into_iter().enumerate() {
        let s = p.advance(x, xi, dw)?;
        x = s.x;
        match s.applied {
            Some(m) => {
                lift = m.compose(&lift);
                xi = s.xi;
            }
            // the flow never moves ξ within a leaf
            None => debug_assert_eq!(xi, s.xi),
        }
        let current = FlowState { element: LineElement::new(DiskPoint { re: x.re, im: x.im }, xi), lift };
        observe(k as u64, &current);
    }
    Ok(FlowState { element: LineElement::new(DiskPoint::from_complex(x), xi), lift })
}

/// Advances every initial state with the same noise: the stochastic flow evaluated at many points.
pub fn flow_map(p: &FlowParams, seg: &FlowSegment, initial: &[LineElement]) -> Result<Vec<FlowState>> {
    let group = p.metric.group();
    let states = initial
        .iter()
        .map(|v| {
            let r = group.reduce(*v)?;
            Ok(FlowState { element: r.element, lift: r.applied })
        })
        .collect::<Result<Vec<_>>>()?;
    flow_states(p, seg, &states)
}

/// Continues already reduced flow states (keeping their lifts) through a segment.
pub fn flow_states(p: &FlowParams, seg: &FlowSegment, states: &[FlowState]) -> Result<Vec<FlowState>> {
    let noise = seg.increments(p);
    states
        .par_iter()
        .map(|s| advance_state(p, *s, noise.iter().copied(), |_, _| {}))
        .collect()
}

/// Propagates the leaf derivative along the trajectory from `v` over the segment.
pub fn tangent_flow(p: &FlowParams, seg: &FlowSegment, v: LineElement) -> Result<(FlowState, LeafTangent)> {
    let start = p.metric.group().reduce(v)?;
    let state = FlowState { element: start.element, lift: start.applied };
    tangent_flow_from(p, seg, state, LeafTangent::identity())
}

/// Continues a tangent cocycle from a given state.
pub fn tangent_flow_from(
    p: &FlowParams,
    seg: &FlowSegment,
    state: FlowState,
    tangent: LeafTangent,
) -> Result<(FlowState, LeafTangent)> {
    let mut stream = seg.stream(p);
    let (mut x, mut xi, mut lift) = (state.element.x.z(), state.element.xi, state.lift);
    let mut tangent = tangent;
    let mut block = Matrix2::identity();
    for k in 0..seg.n_steps {
        let (s, jac) = p.advance_with_tangent(x, xi, stream.next_increment())?;
        x = s.x;
        xi = s.xi;
        if let Some(m) = s.applied {
            lift = m.compose(&lift);
        }
        block = jac * block;
        if (k as usize + 1).is_multiple_of(QR_CADENCE) {
            tangent.absorb(&block);
            block = Matrix2::identity();
        }
    }
    if !(seg.n_steps as usize).is_multiple_of(QR_CADENCE) {
        tangent.absorb(&block);
    }
    Ok((FlowState { element: LineElement::new(DiskPoint::from_complex(x), xi), lift }, tangent))
}

/// Accumulated log-determinant of the leaf derivative over the segment.
pub fn log_jacobian(p: &FlowParams, seg: &FlowSegment, v: LineElement) -> Result<f64> {
    Ok(tangent_flow(p, seg, v)?.1.log_det())
}

/// Distance of the time-one flow map from its zero-noise limit at one noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub step: f64,
    pub median_distance: f64,
}

/// Median hyperbolic distance, over `n_states` quasi-random line elements, between the
/// time-one flow map at each `ε` and the reversed geodesic flow. The reference is the
/// closed form in constant curvature and the `ε = 0` simulation otherwise.
///
/// Each state gets its own noise stream derived from `seed`, the same at every `ε`.
/// With one shared stream every state of a constant-curvature flow would sit at the
/// same distance, since the noise acts in the frame of the spray.
pub fn zero_noise_convergence(
    metric: Arc<MetricModel>,
    epsilons: &[f64],
    n_states: usize,
    step_factor: f64,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if n_states == 0 {
        return Err(Error::InvalidParameter("n_states must be positive".into()));
    }
    let group = metric.group();
    let initial: Vec<LineElement> = crate::metric::domain_points(group, n_states)
        .into_iter()
        .enumerate()
        .map(|(i, z)| {
            let xi = BoundaryPoint::new(TAU * crate::quadrature::radical_inverse(i as u64 + 1, 5));
            LineElement::new(DiskPoint::from_complex(z), xi)
        })
        .collect();
    let time_one = |p: &FlowParams| -> Result<Vec<DiskPoint>> {
        let n = p.steps_for(1.0)?;
        initial
            .par_iter()
            .enumerate()
            .map(|(i, v)| {
                let seg = FlowSegment::new(crate::noise::mix_seed(seed, i as u64), 0, n);
                Ok(flow_map(p, &seg, std::slice::from_ref(v))?[0].cover_point())
            })
            .collect()
    };
    let reference: Vec<DiskPoint> = if metric.is_hyperbolic() {
        initial.iter().map(|v| crate::hyperbolic::geodesic_flow_leaf(v.x, v.xi, -1.0)).collect()
    } else {
        time_one(&FlowParams::from_epsilon(0.0, step_factor, metric.clone())?)?
    };
    epsilons
        .iter()
        .map(|&epsilon| {
            let p = FlowParams::from_epsilon(epsilon, step_factor, metric.clone())?;
            let mut d: Vec<f64> = time_one(&p)?
                .iter()
                .zip(&reference)
                .map(|(a, b)| crate::hyperbolic::hyp_dist(*a, *b))
                .collect();
            d.sort_by(f64::total_cmp);
            let n = d.len();
            let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
            Ok(ConvergenceRow { epsilon, step: p.step, median_distance: median })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::FuchsianGroup;
    use crate::hyperbolic::{geodesic_flow_leaf, hyp_dist, leaf_jacobian_exact, spray, visual_angle};
    use crate::noise::increment_at;

    fn constant() -> Arc<MetricModel> {
        Arc::new(MetricModel::constant(Arc::new(FuchsianGroup::octagon().unwrap())))
    }

    fn element(re: f64, im: f64, theta: f64) -> LineElement {
        LineElement::new(DiskPoint::new(re, im), BoundaryPoint::new(theta))
    }

    #[test]
    fn parameter_rules() {
        let m = constant();
        let p = FlowParams::from_rho(-16.0, 0.1, m.clone()).unwrap();
        assert_eq!(p.epsilon, 0.25);
        assert!((p.epsilon * p.epsilon * p.rho + 1.0).abs() < 1e-15);
        assert!((p.step - 1e-3).abs() < 1e-18);
        let p = FlowParams::from_rho(-400.0, 0.1, m.clone()).unwrap();
        assert!((p.step - 0.1 / 400.0).abs() < 1e-15);
        let p = FlowParams::from_epsilon(0.0, 0.1, m.clone()).unwrap();
        assert_eq!(p.rho, f64::NEG_INFINITY);
        assert!((p.step - 1e-3).abs() < 1e-18);
        assert!(FlowParams::from_rho(f64::NAN, 0.1, m.clone()).is_err());
        assert!(FlowParams::from_rho(-1.0, 0.1, m.clone()).unwrap().with_step(0.05).is_err());
        assert_eq!(p.steps_for(1.0).unwrap(), 1000);
        assert!(p.steps_for(1.0005).is_err());
    }

    #[test]
    fn deterministic_step_follows_reversed_geodesic() {
        let m = constant();
        for h in [1e-2, 1e-3] {
            let p = FlowParams::from_epsilon(0.0, 0.1, m.clone()).unwrap().with_step(h).unwrap();
            let v = element(0.2, -0.3, 1.1);
            let out = step_sde(&p, v, [0.0, 0.0]).unwrap();
            let exact = geodesic_flow_leaf(v.x, v.xi, -h);
            let err = hyp_dist(out.element.x, exact);
            assert!(err < 5.0 * h * h, "h = {h}: error {err}");
        }
    }

    /// Closed-form generator of `a X̄ + ε²Δ` on `f(x) = |x|²`, against antithetic Monte Carlo.
    #[test]
    fn weak_generator() {
        let m = constant();
        for rho in [-1.0, -4.0] {
            let p = FlowParams::from_rho(rho, 0.1, m.clone()).unwrap();
            let v = element(0.3, 0.2, 2.5);
            let x = v.x.z();
            let s = spray(v.x, v.xi);
            let one_minus = 1.0 - x.norm_sqr();
            let exact = p.drift * 2.0 * (x.conj() * s.v()).re + p.epsilon.powi(2) * one_minus * one_minus;
            let mut stream = NoiseStream::new(99, p.noise_variance(), 0);
            let n = 500_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let w = stream.next_increment();
                for dw in [w, [-w[0], -w[1]]] {
                    // unreduced image, so the test sees the chart step itself
                    let delta = p.recentered_spray(x, v.xi) * p.stochastic_factor(dw);
                    acc += uncenter(x, delta).norm_sqr() - x.norm_sqr();
                }
            }
            let estimate = acc / (2.0 * n as f64) / p.step;
            assert!((estimate / exact - 1.0).abs() < 0.02, "rho {rho}: {estimate} vs {exact}");
        }
    }

    #[test]
    fn step_is_equivariant() {
        let m = constant();
        let p = FlowParams::from_rho(-4.0, 0.1, m.clone()).unwrap();
        let g = m.group();
        let v = element(0.1, 0.25, 0.7);
        for (k, gen) in g.generators.iter().enumerate() {
            let dw = increment_at(k as u64, p.noise_variance(), 3);
            let a = step_sde(&p, v, dw).unwrap().element;
            let b = step_sde(&p, gen.apply_line(v), dw).unwrap().element;
            assert!(hyp_dist(a.x, b.x) < 1e-9);
        }
    }

    #[test]
    fn cocycle_is_bitwise() {
        let m = constant();
        let p = FlowParams::from_rho(-4.0, 0.1, m).unwrap();
        let seg = FlowSegment::new(11, 0, 1500);
        let initial = [element(0.1, 0.2, 0.3), element(-0.4, 0.1, 5.0)];
        let whole = flow_map(&p, &seg, &initial).unwrap();
        let (first, second) = seg.split(600);
        let mid = flow_map(&p, &first, &initial).unwrap();
        let split = flow_states(&p, &second, &mid).unwrap();
        assert_eq!(whole, split);
    }

    #[test]
    fn singleton_flow_matches_step_iteration() {
        let m = constant();
        let p = FlowParams::from_rho(-1.0, 0.1, m).unwrap();
        let seg = FlowSegment::new(5, 20, 300);
        let v = element(0.3, -0.1, 4.0);
        let flowed = flow_map(&p, &seg, &[v]).unwrap()[0];
        let mut state = v;
        for k in 0..300 {
            state = step_sde(&p, state, increment_at(5, p.noise_variance(), 20 + k)).unwrap().element;
        }
        assert_eq!(flowed.element, state);
    }

    #[test]
    fn tangent_matches_exact_jacobian_at_zero_noise() {
        let m = constant();
        let p = FlowParams::from_epsilon(0.0, 0.1, m).unwrap();
        let v = element(0.05, 0.1, 2.0);
        let seg = FlowSegment::new(0, 0, 1000);
        let (_, t) = tangent_flow(&p, &seg, v).unwrap();
        assert!((t.log_det() - 1.0).abs() < 5e-3, "log det {}", t.log_det());
        let exact = leaf_jacobian_exact(v.x, v.xi, -1.0);
        let sv = t.matrix().singular_values();
        let ev = exact.singular_values();
        let sorted = |s: nalgebra::Vector2<f64>| (s[0].max(s[1]), s[0].min(s[1]));
        let (a, b) = (sorted(sv), sorted(ev));
        assert!((a.0 - b.0).abs() < 5e-3 && (a.1 - b.1).abs() < 5e-3);
        let (_, zero) = tangent_flow(&p, &FlowSegment::new(0, 0, 0), v).unwrap();
        assert_eq!(zero.matrix(), Matrix2::identity());
    }

    /// The per-step derivative against central differences of the step map.
    #[test]
    fn step_jacobian_matches_finite_differences() {
        let m = constant();
        let p = FlowParams::from_rho(-4.0, 0.1, m).unwrap();
        let xi = BoundaryPoint::new(3.3);
        let x = C64::new(0.2, 0.35);
        let dw = [0.03, -0.02];
        let (_, jac) = p.advance_with_tangent(x, xi, dw).unwrap();
        let f = |z: C64| {
            let delta = p.recentered_spray(z, xi) * p.stochastic_factor(dw);
            uncenter(z, delta)
        };
        let h = 1e-7;
        let cx = (f(x + h) - f(x - h)) / (2.0 * h);
        let cy = (f(x + C64::new(0.0, h)) - f(x - C64::new(0.0, h))) / (2.0 * h);
        let scale = conformal_factor(f(x)) / conformal_factor(x);
        let fd = Matrix2::new(cx.re, cy.re, cx.im, cy.im) * scale;
        assert!((fd - jac).norm() < 1e-6, "{fd} vs {jac}");
    }

    #[test]
    fn chain_rule_in_log_det() {
        let m = constant();
        let p = FlowParams::from_rho(-16.0, 0.1, m).unwrap();
        let v = element(0.2, 0.2, 1.0);
        let seg = FlowSegment::new(3, 0, 800);
        let (_, whole) = tangent_flow(&p, &seg, v).unwrap();
        let (a, b) = seg.split(320);
        let (mid, first) = tangent_flow(&p, &a, v).unwrap();
        let (_, second) = tangent_flow_from(&p, &b, mid, LeafTangent::identity()).unwrap();
        assert!((whole.log_det() - first.log_det() - second.log_det()).abs() < 1e-12);
        let product = second.matrix() * first.matrix();
        assert!((product - whole.matrix()).norm() < 1e-10 * whole.matrix().norm());
        // inverse cocycle
        let inv = whole.matrix().try_inverse().unwrap();
        assert!((inv.determinant().ln() + whole.log_det()).abs() < 1e-12);
    }

    #[test]
    fn lifted_flow_tracks_cover_point() {
        let m = constant();
        let p = FlowParams::from_epsilon(0.0, 0.1, m).unwrap();
        let v = element(0.5, 0.3, 3.0);
        let out = flow_map(&p, &FlowSegment::new(0, 0, 3000), &[v]).unwrap()[0];
        let exact = geodesic_flow_leaf(v.x, v.xi, -3.0);
        assert!(hyp_dist(out.cover_point(), exact) < 1e-5);
        // the visual angle at the reduced state is that of the lifted one, rotated
        let direct = visual_angle(out.element.x, out.element.xi);
        assert!(direct.is_finite());
    }
}
