//! Riemannian metrics on the surface: the hyperbolic metric and the conformal
//! perturbation `g = e^{2φ} g_hyp`, where `φ` is a sum of radial bumps centered
//! on the orbit of the origin.
//!
//! The bump around each orbit point has hyperbolic support radius `3w`. As long
//! as `3w` is below the inradius of the octagon, supports around distinct orbit
//! points are disjoint, so `φ(z)` equals the single bump evaluated at the
//! reduced point. The literal truncated orbit sum is kept for the invariance audit.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::FuchsianGroup;
use crate::hyperbolic::{
    angle_diff, conformal_factor, hyp_dist_c, normalize_angle, spray, visual_angle, visual_boundary_c,
    BoundaryPoint, DiskPoint, MobiusMap, TangentVector,
};
use crate::quadrature;
use crate::spray_table::SprayTable;

/// Euclidean radius at which a shot geodesic is considered to have reached the boundary.
pub const SHOOTING_EXIT_RADIUS: f64 = 1.0 - 1e-4;
pub const SHOOTING_STEP: f64 = 1e-3;
pub const SHOOTING_MAX_BISECTIONS: usize = 60;
pub const SHOOTING_TOLERANCE: f64 = 1e-6;
/// Curvature must stay below this value at every audit point.
pub const CURVATURE_CEILING: f64 = -0.05;
pub const CURVATURE_AUDIT_POINTS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Constant,
    Perturbed,
}

/// Radial bump `b(r) = A (1 − (r/3w)²)³` for `r < 3w`, zero beyond; `C²` at the edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub width: f64,
}

impl Bump {
    #[inline]
    pub fn support(&self) -> f64 {
        3.0 * self.width
    }

    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let s = r / self.support();
        if s >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - s * s;
        self.amplitude * u * u * u
    }

    /// `b'(r)`.
    #[inline]
    pub fn slope(&self, r: f64) -> f64 {
        let big = self.support();
        let s = r / big;
        if s >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - s * s;
        -6.0 * self.amplitude * r * u * u / (big * big)
    }

    /// Hyperbolic Laplacian of `z ↦ b(d(z, c))` at distance `r` from the center: `b'' + coth(r) b'`.
    #[inline]
    pub fn laplacian(&self, r: f64) -> f64 {
        let big = self.support();
        let s = r / big;
        if s >= 1.0 {
            return 0.0;
        }
        let s2 = s * s;
        let u = 1.0 - s2;
        let k = -6.0 * self.amplitude / (big * big);
        let second = k * u * (1.0 - 5.0 * s2);
        let r_coth = if r < 1e-6 { 1.0 } else { r / r.tanh() };
        second + k * u * u * r_coth
    }
}

/// Value, Euclidean gradient `(φ_x, φ_y)` packed as a complex number, and hyperbolic Laplacian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiJet {
    pub value: f64,
    pub grad: C64,
    pub laplacian: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingResult {
    pub direction: TangentVector,
    pub residual: f64,
    pub iterations: usize,
}

/// Outcome of the negative-curvature audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureAudit {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub passed: bool,
}

#[derive(Debug)]
pub struct MetricModel {
    pub kind: MetricKind,
    pub bump: Bump,
    /// Word-length cutoff of the literal orbit sum used by [`MetricModel::phi_orbit_sum`].
    pub cutoff: usize,
    group: Arc<FuchsianGroup>,
    orbit: Vec<C64>,
    table: OnceLock<SprayTable>,
    volume_entropy: OnceLock<f64>,
}

impl Clone for MetricModel {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            bump: self.bump,
            cutoff: self.cutoff,
            group: self.group.clone(),
            orbit: self.orbit.clone(),
            table: self.table.clone(),
            volume_entropy: self.volume_entropy.clone(),
        }
    }
}

impl MetricModel {
    pub fn constant(group: Arc<FuchsianGroup>) -> Self {
        Self {
            kind: MetricKind::Constant,
            bump: Bump { amplitude: 0.0, width: 0.5 },
            cutoff: 0,
            group,
            orbit: vec![C64::new(0.0, 0.0)],
            table: OnceLock::new(),
            volume_entropy: OnceLock::new(),
        }
    }

    pub fn perturbed(group: Arc<FuchsianGroup>, amplitude: f64, width: f64, cutoff: usize) -> Result<Self> {
        if !amplitude.is_finite() {
            return Err(Error::InvalidParameter(format!("amplitude must be finite, got {amplitude}")));
        }
        if width.is_nan() || width <= 0.0 || 3.0 * width >= group.inradius {
            return Err(Error::InvalidParameter(format!(
                "bump width must lie in (0, {:.4}) so that bump supports stay disjoint, got {width}",
                group.inradius / 3.0
            )));
        }
        if cutoff > 6 {
            return Err(Error::InvalidParameter(format!("cutoff must be at most 6, got {cutoff}")));
        }
        let orbit = orbit_points(&group, cutoff);
        Ok(Self {
            kind: MetricKind::Perturbed,
            bump: Bump { amplitude, width },
            cutoff,
            group,
            orbit,
            table: OnceLock::new(),
            volume_entropy: OnceLock::new(),
        })
    }

    pub fn group(&self) -> &FuchsianGroup {
        &self.group
    }

    pub fn group_arc(&self) -> Arc<FuchsianGroup> {
        self.group.clone()
    }

    /// True when the model is the hyperbolic metric, including a perturbation of zero amplitude.
    pub fn is_hyperbolic(&self) -> bool {
        self.kind == MetricKind::Constant || self.bump.amplitude == 0.0
    }

    /// `φ` and its derivatives at a point near the fundamental domain, summing the
    /// bump around the origin and around its eight neighbors.
    #[inline]
    pub fn phi_jet_local(&self, z: C64) -> PhiJet {
        let mut jet = PhiJet { value: 0.0, grad: C64::new(0.0, 0.0), laplacian: 0.0 };
        if self.is_hyperbolic() {
            return jet;
        }
        let support = self.bump.support();
        let z2 = z.norm_sqr();
        let one_minus = 1.0 - z2;
        let lam = 2.0 / one_minus;
        // bump around 0
        let r0 = z.norm();
        if r0 > 0.0 {
            let d = 2.0 * r0.atanh();
            if d < support {
                jet.value += self.bump.value(d);
                jet.grad += z * (self.bump.slope(d) * lam / r0);
                jet.laplacian += self.bump.laplacian(d);
            }
        } else {
            jet.value += self.bump.value(0.0);
            jet.laplacian += self.bump.laplacian(0.0);
        }
        // cosh d = 1 + 2q, skip centers with d ≥ support without transcendental calls
        let q_max = (support.cosh() - 1.0) / 2.0;
        let group = &*self.group;
        for c in group.centers() {
            let diff = z - c;
            let q = diff.norm_sqr() / (one_minus * (1.0 - c.norm_sqr()));
            if q >= q_max {
                continue;
            }
            let d = (1.0 + 2.0 * q).acosh();
            let toward = (c - z) / (C64::new(1.0, 0.0) - z.conj() * c);
            let n = toward.norm();
            jet.value += self.bump.value(d);
            if n > 0.0 {
                jet.grad -= toward * (self.bump.slope(d) * lam / n);
            }
            jet.laplacian += self.bump.laplacian(d);
        }
        jet
    }

    /// Value of [`MetricModel::phi_jet_local`] alone.
    #[inline]
    pub fn phi_local(&self, z: C64) -> f64 {
        if self.is_hyperbolic() {
            return 0.0;
        }
        let support = self.bump.support();
        let z2 = z.norm_sqr();
        let mut value = self.bump.value(2.0 * z2.sqrt().atanh());
        let q_max = (support.cosh() - 1.0) / 2.0;
        let one_minus = 1.0 - z2;
        for c in self.group.centers() {
            let q = (z - c).norm_sqr() / (one_minus * (1.0 - c.norm_sqr()));
            if q < q_max {
                value += self.bump.value((1.0 + 2.0 * q).acosh());
            }
        }
        value
    }

    /// `φ(z)` at any disk point, exactly Γ-invariant.
    pub fn phi(&self, z: DiskPoint) -> f64 {
        if self.is_hyperbolic() {
            return 0.0;
        }
        match self.group.reduce_point(z.z()) {
            Ok((zr, _, _)) => self.bump.value(hyp_dist_c(zr, C64::new(0.0, 0.0))),
            // far beyond any simulation scale; fall back to the truncated sum
            Err(_) => self.phi_orbit_sum(z),
        }
    }

    /// Literal truncated Poincaré series `Σ_{|γ| ≤ cutoff} b(d(z, γ·0))`.
    pub fn phi_orbit_sum(&self, z: DiskPoint) -> f64 {
        if self.is_hyperbolic() {
            return 0.0;
        }
        self.orbit.iter().map(|&c| self.bump.value(hyp_dist_c(z.z(), c))).sum()
    }

    /// Jet of `φ` at any point, via reduction and the chain rule.
    pub fn phi_jet(&self, z: C64) -> Result<PhiJet> {
        if self.is_hyperbolic() {
            return Ok(self.phi_jet_local(z));
        }
        let (zr, m, n) = self.group.reduce_point(z)?;
        let jet = self.phi_jet_local(zr);
        if n == 0 {
            return Ok(jet);
        }
        // φ = F ∘ m with m holomorphic: ∇φ = ∇F · conj(m')
        Ok(PhiJet { grad: jet.grad * m.derivative(z).conj(), ..jet })
    }

    /// Gaussian curvature `K = e^{−2φ}(−1 − Δ_hyp φ)`.
    pub fn curvature(&self, z: DiskPoint) -> f64 {
        if self.is_hyperbolic() {
            return -1.0;
        }
        let (zr, _, _) = match self.group.reduce_point(z.z()) {
            Ok(r) => r,
            Err(_) => return f64::NAN,
        };
        let jet = self.phi_jet_local(zr);
        (-2.0 * jet.value).exp() * (-1.0 - jet.laplacian)
    }

    /// Area density of `g` in chart coordinates, `λ² e^{2φ}`.
    pub fn liouville_weight(&self, z: DiskPoint) -> f64 {
        let lam = conformal_factor(z.z());
        lam * lam * (2.0 * self.phi(z)).exp()
    }

    /// `∫_F K dA_g` by polar Gauss–Legendre quadrature; `−4π` by Gauss–Bonnet.
    pub fn total_curvature(&self, nodes: usize) -> f64 {
        let t = self.group.inradius.tanh();
        let support = self.bump.support();
        let (gx, gw) = quadrature::gauss_legendre(nodes);
        let mut total = 0.0;
        for sector in 0..8 {
            let alpha = sector as f64 * FRAC_PI_4;
            let ang = |phi: f64| {
                let edge = (t / phi.cos()).atanh();
                let radial = |r: f64| {
                    let z = DiskPoint::from_complex(C64::from_polar((r / 2.0).tanh(), alpha + phi));
                    self.curvature(z) * (2.0 * self.phi(z)).exp() * r.sinh()
                };
                // the integrand is only C² at the edge of the bump support
                let split = edge.min(support);
                let inner = integrate_on(&gx, &gw, 0.0, split, radial);
                let outer = if edge > split { integrate_on(&gx, &gw, split, edge, radial) } else { 0.0 };
                inner + outer
            };
            total += integrate_on(&gx, &gw, -PI / 8.0, PI / 8.0, ang);
        }
        total
    }

    /// Checks `K < −0.05` on quasi-random points of the fundamental domain.
    pub fn curvature_audit(&self, n_points: usize) -> CurvatureAudit {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for z in domain_points(&self.group, n_points) {
            let k = self.curvature(DiskPoint::from_complex(z));
            min = min.min(k);
            max = max.max(k);
        }
        CurvatureAudit { min, max, points: n_points, passed: max < CURVATURE_CEILING }
    }

    /// Largest `|φ(z) − φ(γ z)|` of the truncated orbit sum over probe points and generators.
    pub fn invariance_defect(&self, n_points: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for z in domain_points(&self.group, n_points) {
            let base = self.phi_orbit_sum(DiskPoint::from_complex(z));
            for g in &self.group.generators {
                let moved = self.phi_orbit_sum(DiskPoint::from_complex(g.apply_c(z)));
                worst = worst.max((base - moved).abs());
            }
        }
        worst
    }

    /// Right-hand side of the unit-speed geodesic equation for `e^{2ψ}|dz|²`, `ψ = ln λ + φ`,
    /// in the chart where `z` lies near the fundamental domain.
    #[inline]
    fn geodesic_rhs(&self, z: C64, theta: f64) -> (C64, f64, f64) {
        let jet = self.phi_jet_local(z);
        let one_minus = 1.0 - z.norm_sqr();
        let psi = (2.0 / one_minus).ln() + jet.value;
        let grad = z * (2.0 / one_minus) + jet.grad;
        let speed = (-psi).exp();
        let (s, c) = theta.sin_cos();
        let dz = C64::new(c, s) * speed;
        let dtheta = speed * (-grad.re * s + grad.im * c);
        (dz, dtheta, jet.value)
    }

    /// Boundary endpoint of the `g`-geodesic leaving `z` with chart direction `v`.
    pub fn shoot(&self, z: C64, v: f64, step: f64) -> Result<BoundaryPoint> {
        let mut ray = GeodesicRay::start(self, z, v)?;
        while !ray.reached_boundary() {
            ray.advance(self, step)?;
        }
        Ok(ray.endpoint())
    }

    /// The `g`-geodesic spray by shooting and bisection on the initial direction.
    pub fn shoot_spray(&self, z: DiskPoint, xi: BoundaryPoint) -> Result<ShootingResult> {
        self.shoot_spray_with(z, xi, SHOOTING_STEP)
    }

    pub fn shoot_spray_with(&self, z: DiskPoint, xi: BoundaryPoint, step: f64) -> Result<ShootingResult> {
        let target = xi.theta();
        let zc = z.z();
        let miss = |v: f64| -> Result<f64> { Ok(angle_diff(self.shoot(zc, v, step)?.theta(), target)) };
        let guess = visual_angle(z, xi);
        // the endpoint map is an orientation-preserving circle homeomorphism
        let mut half = 0.05;
        let (mut lo, mut hi);
        loop {
            lo = guess - half;
            hi = guess + half;
            if miss(lo)? <= 0.0 && miss(hi)? >= 0.0 {
                break;
            }
            half *= 2.0;
            if half > PI {
                return Err(Error::ShootingFailed { residual: f64::INFINITY });
            }
        }
        let mut iterations = 0;
        let mut best = (guess, f64::INFINITY);
        while iterations < SHOOTING_MAX_BISECTIONS {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let m = miss(mid)?;
            if m.abs() < best.1.abs() {
                best = (mid, m);
            }
            if m.abs() < 1e-13 || hi - lo < 1e-14 {
                break;
            }
            if m < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (v, residual) = (best.0, best.1.abs());
        if residual >= SHOOTING_TOLERANCE {
            return Err(Error::ShootingFailed { residual });
        }
        Ok(ShootingResult { direction: self.unit_vector(zc, v), residual, iterations })
    }

    /// The `g`-unit vector at `z` with chart direction angle `v`.
    pub fn unit_vector(&self, z: C64, v: f64) -> TangentVector {
        let phi = self.phi(DiskPoint::from_complex(z));
        let len = 1.0 / (conformal_factor(z) * phi.exp());
        let w = C64::from_polar(len, v);
        TangentVector { at: DiskPoint::from_complex(z), vx: w.re, vy: w.im }
    }

    /// Geodesic spray of `g`; exact in constant curvature, by shooting otherwise.
    pub fn metric_spray(&self, z: DiskPoint, xi: BoundaryPoint) -> Result<TangentVector> {
        if self.is_hyperbolic() {
            return Ok(spray(z, xi));
        }
        Ok(self.shoot_spray(z, xi)?.direction)
    }

    /// Lazily built interpolation table of the spray for the perturbed metric.
    pub fn spray_table(&self) -> &SprayTable {
        self.table.get_or_init(|| SprayTable::build(self))
    }

    /// Direction angle of the spray, fast path. Exact in constant curvature; interpolated
    /// otherwise, always at the reduced point so the result is exactly equivariant.
    #[inline]
    pub fn spray_angle(&self, z: C64, xi: BoundaryPoint) -> f64 {
        if self.is_hyperbolic() {
            return visual_angle(DiskPoint { re: z.re, im: z.im }, xi);
        }
        let table = self.spray_table();
        if self.group.contains_c(z) {
            return table.spray_angle(z, xi);
        }
        match self.group.reduce_point(z) {
            Ok((zr, m, _)) => {
                let v = table.spray_angle(zr, m.apply_boundary(xi));
                normalize_angle(v - m.derivative(z).arg())
            }
            Err(_) => visual_angle(DiskPoint::from_complex(z), xi),
        }
    }

    /// Spray vector from the fast path.
    pub fn spray_fast(&self, z: DiskPoint, xi: BoundaryPoint) -> TangentVector {
        self.unit_vector(z.z(), self.spray_angle(z.z(), xi))
    }

    /// Largest ratio `|X̄(z, ξ) − X̄(z, ξ')| / |θ_ξ − θ_ξ'|` (Euclidean components) over probe pairs.
    pub fn spray_lipschitz_constant(&self, n_points: usize, dtheta: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, z) in domain_points(&self.group, n_points).into_iter().enumerate() {
            let theta = TAU * quadrature::radical_inverse(i as u64 + 1, 7);
            let z = DiskPoint::from_complex(z);
            let a = self.spray_fast(z, BoundaryPoint::new(theta));
            let b = self.spray_fast(z, BoundaryPoint::new(theta + dtheta));
            worst = worst.max((a.v() - b.v()).norm() / dtheta);
        }
        worst
    }

    /// Exponential growth rate of `g`-balls around the origin: slope of `log Vol(B(0, r))`
    /// against `r` over `[r_lo, r_hi]`. Volumes come from Jacobi fields `J'' + K J = 0`
    /// along `n_dirs` geodesics leaving the origin (polar exponential coordinates).
    pub fn volume_entropy_estimate_with(&self, n_dirs: usize, step: f64, r_lo: f64, r_hi: f64) -> Result<f64> {
        let n_steps = (r_hi / step).round() as usize;
        let mut areas = vec![0.0; n_steps + 1];
        for i in 0..n_dirs {
            let v = TAU * (i as f64 + 0.5) / n_dirs as f64;
            let profile = self.jacobi_profile(v, step, n_steps)?;
            // ∫_0^r J by the trapezoid rule, accumulated
            let mut acc = 0.0;
            for k in 1..=n_steps {
                acc += 0.5 * step * (profile[k - 1] + profile[k]);
                areas[k] += acc * TAU / n_dirs as f64;
            }
        }
        let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &area) in areas.iter().enumerate() {
            let r = k as f64 * step;
            if r + 1e-12 < r_lo || r > r_hi + 1e-12 {
                continue;
            }
            let y = area.ln();
            sx += r;
            sy += y;
            sxx += r * r;
            sxy += r * y;
            n += 1.0;
        }
        Ok((n * sxy - sx * sy) / (n * sxx - sx * sx))
    }

    pub fn volume_entropy_estimate(&self) -> Result<f64> {
        self.volume_entropy_estimate_with(64, 0.01, 4.0, 8.0)
    }

    /// Threshold of the coercivity gate: exactly 1 in constant curvature, the
    /// (cached) estimate otherwise.
    pub fn volume_entropy(&self) -> Result<f64> {
        if self.is_hyperbolic() {
            return Ok(1.0);
        }
        if let Some(v) = self.volume_entropy.get() {
            return Ok(*v);
        }
        let v = self.volume_entropy_estimate()?;
        Ok(*self.volume_entropy.get_or_init(|| v))
    }

    /// Rejects `ρ ≥ V`.
    pub fn check_coercive(&self, rho: f64) -> Result<()> {
        let v = self.volume_entropy()?;
        if rho >= v {
            return Err(Error::NotCoercive { rho, volume_entropy: v });
        }
        Ok(())
    }

    /// `J(s)` along the unit-speed geodesic from the origin with direction `v`, sampled every `step`.
    fn jacobi_profile(&self, v: f64, step: f64, n_steps: usize) -> Result<Vec<f64>> {
        let mut ray = GeodesicRay::start(self, C64::new(0.0, 0.0), v)?;
        let mut out = Vec::with_capacity(n_steps + 1);
        // g-arclength; J measured against it
        let (mut j, mut dj) = (0.0, 1.0);
        out.push(j);
        for _ in 0..n_steps {
            let (j1, dj1) = ray.advance_with_jacobi(self, step, j, dj)?;
            j = j1;
            dj = dj1;
            out.push(j);
        }
        Ok(out)
    }
}

fn integrate_on<F: FnMut(f64) -> f64>(x: &[f64], w: &[f64], a: f64, b: f64, mut f: F) -> f64 {
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    x.iter().zip(w).map(|(&xi, &wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}

/// Orbit points of words of length at most `max_len`, deduplicated.
fn orbit_points(group: &FuchsianGroup, max_len: usize) -> Vec<C64> {
    let mut points = vec![C64::new(0.0, 0.0)];
    let mut frontier = vec![(MobiusMap::IDENTITY, usize::MAX)];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for (m, last) in &frontier {
            for k in 0..8 {
                if *last != usize::MAX && k == FuchsianGroup::inverse_index(*last) {
                    continue;
                }
                let word = m.compose(&group.generators[k]);
                let p = word.apply_c(C64::new(0.0, 0.0));
                if points.iter().all(|q| hyp_dist_c(*q, p) > 1e-6) {
                    points.push(p);
                }
                next.push((word, k));
            }
        }
        frontier = next;
    }
    points
}

/// Quasi-random points of the fundamental domain by Halton rejection sampling in its bounding box.
pub fn domain_points(group: &FuchsianGroup, n: usize) -> Vec<C64> {
    let r = group.octagon_vertex_radius;
    let mut out = Vec::with_capacity(n);
    let mut i = 1u64;
    while out.len() < n {
        let z = C64::new(
            r * (2.0 * quadrature::radical_inverse(i, 2) - 1.0),
            r * (2.0 * quadrature::radical_inverse(i, 3) - 1.0),
        );
        i += 1;
        if group.contains_c(z) {
            out.push(z);
        }
    }
    out
}

/// A unit-speed `g`-geodesic integrated with RK4 in a chart kept near the
/// fundamental domain; `chart` maps the original chart to the current one.
pub(crate) struct GeodesicRay {
    pub z: C64,
    pub theta: f64,
    pub chart: MobiusMap,
}

impl GeodesicRay {
    pub fn start(metric: &MetricModel, z: C64, v: f64) -> Result<Self> {
        let (zr, m, n) = metric.group.reduce_point(z)?;
        let theta = if n == 0 { v } else { v + m.derivative(z).arg() };
        Ok(Self { z: zr, theta, chart: m })
    }

    pub fn original_position(&self) -> C64 {
        self.chart.inverse().apply_c(self.z)
    }

    pub fn reached_boundary(&self) -> bool {
        self.original_position().norm() >= SHOOTING_EXIT_RADIUS
    }

    /// Endpoint of the hyperbolic geodesic continuing the current direction, in the original chart.
    pub fn endpoint(&self) -> BoundaryPoint {
        let local = visual_boundary_c(self.z, self.theta);
        self.chart.inverse().apply_boundary(local)
    }

    fn renormalize(&mut self, metric: &MetricModel) -> Result<()> {
        if metric.group.contains_c(self.z) {
            return Ok(());
        }
        let (zr, m, _) = metric.group.reduce_point(self.z)?;
        self.theta += m.derivative(self.z).arg();
        self.z = zr;
        self.chart = m.compose(&self.chart);
        Ok(())
    }

    pub fn advance(&mut self, metric: &MetricModel, h: f64) -> Result<()> {
        let (z, t) = (self.z, self.theta);
        let (k1z, k1t, _) = metric.geodesic_rhs(z, t);
        let (k2z, k2t, _) = metric.geodesic_rhs(z + k1z * (h / 2.0), t + k1t * h / 2.0);
        let (k3z, k3t, _) = metric.geodesic_rhs(z + k2z * (h / 2.0), t + k2t * h / 2.0);
        let (k4z, k4t, _) = metric.geodesic_rhs(z + k3z * h, t + k3t * h);
        self.z = z + (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (h / 6.0);
        self.theta = t + (k1t + 2.0 * k2t + 2.0 * k3t + k4t) * h / 6.0;
        self.renormalize(metric)
    }

    /// Advances the ray together with a Jacobi field `(J, J')` along it.
    pub fn advance_with_jacobi(&mut self, metric: &MetricModel, h: f64, j: f64, dj: f64) -> Result<(f64, f64)> {
        let curv = |z: C64| {
            let jet = metric.phi_jet_local(z);
            (-2.0 * jet.value).exp() * (-1.0 - jet.laplacian)
        };
        let f = |z: C64, t: f64, j: f64, dj: f64| {
            let (dz, dt, _) = metric.geodesic_rhs(z, t);
            (dz, dt, dj, -curv(z) * j)
        };
        let (z, t) = (self.z, self.theta);
        let k1 = f(z, t, j, dj);
        let k2 = f(z + k1.0 * (h / 2.0), t + k1.1 * h / 2.0, j + k1.2 * h / 2.0, dj + k1.3 * h / 2.0);
        let k3 = f(z + k2.0 * (h / 2.0), t + k2.1 * h / 2.0, j + k2.2 * h / 2.0, dj + k2.3 * h / 2.0);
        let k4 = f(z + k3.0 * h, t + k3.1 * h, j + k3.2 * h, dj + k3.3 * h);
        self.z = z + (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (h / 6.0);
        self.theta = t + (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1) * h / 6.0;
        let j1 = j + (k1.2 + 2.0 * k2.2 + 2.0 * k3.2 + k4.2) * h / 6.0;
        let dj1 = dj + (k1.3 + 2.0 * k2.3 + 2.0 * k3.3 + k4.3) * h / 6.0;
        self.renormalize(metric)?;
        Ok((j1, dj1))
    }
}
