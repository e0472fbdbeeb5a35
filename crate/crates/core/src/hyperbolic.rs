//! Exact geometry of the Poincaré disk model of the hyperbolic plane (curvature −1).
//!
//! A unit tangent vector of the disk is encoded by its base point `x` and the
//! boundary point `ξ` its geodesic converges to. In that encoding the leaf
//! through `(x, ξ)` is the whole disk with `ξ` frozen, and every quantity here
//! (Busemann function, Poisson kernel, spray, leafwise geodesic flow) has a
//! closed form obtained by conjugating `x` to the origin.

use std::f64::consts::{PI, TAU};

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;

/// Largest modulus a disk point may have after a public operation.
pub const DISK_LIMIT: f64 = 1.0 - 1e-12;

/// A point of the open unit disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    pub re: f64,
    pub im: f64,
}

impl DiskPoint {
    pub const ORIGIN: DiskPoint = DiskPoint { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    /// Pulls points that drifted onto or past the unit circle back inside.
    pub fn from_complex(z: C64) -> Self {
        let r = z.norm();
        if r > DISK_LIMIT {
            let s = DISK_LIMIT / r;
            Self { re: z.re * s, im: z.im * s }
        } else {
            Self { re: z.re, im: z.im }
        }
    }

    #[inline]
    pub fn z(self) -> C64 {
        C64::new(self.re, self.im)
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// A point `e^{iθ}` of the boundary circle, stored by its angle in `[0, 2π)` together
/// with `e^{iθ}` itself. Serialized as the angle alone.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(from = "f64", into = "f64")]
pub struct BoundaryPoint {
    theta: f64,
    unit: C64,
}

impl PartialEq for BoundaryPoint {
    fn eq(&self, other: &Self) -> bool {
        self.theta == other.theta
    }
}

impl From<f64> for BoundaryPoint {
    fn from(theta: f64) -> Self {
        Self::new(theta)
    }
}

impl From<BoundaryPoint> for f64 {
    fn from(xi: BoundaryPoint) -> f64 {
        xi.theta
    }
}

impl BoundaryPoint {
    pub fn new(theta: f64) -> Self {
        let theta = normalize_angle(theta);
        Self { theta, unit: C64::from_polar(1.0, theta) }
    }

    #[inline]
    pub fn from_complex(w: C64) -> Self {
        let n = w.norm_sqr().sqrt();
        Self { theta: normalize_angle(w.im.atan2(w.re)), unit: w / n }
    }

    #[inline]
    pub fn theta(self) -> f64 {
        self.theta
    }

    #[inline]
    pub fn z(self) -> C64 {
        self.unit
    }
}

/// A unit tangent vector in stable coordinates: base point and forward endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineElement {
    pub x: DiskPoint,
    pub xi: BoundaryPoint,
}

impl LineElement {
    pub fn new(x: DiskPoint, xi: BoundaryPoint) -> Self {
        Self { x, xi }
    }
}

/// A tangent vector at `at`, in Euclidean chart components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub at: DiskPoint,
    pub vx: f64,
    pub vy: f64,
}

impl TangentVector {
    #[inline]
    pub fn v(self) -> C64 {
        C64::new(self.vx, self.vy)
    }

    /// Euclidean direction angle in `[0, 2π)`.
    pub fn angle(self) -> f64 {
        normalize_angle(self.vy.atan2(self.vx))
    }

    /// Length in the metric `(scale · |dz|)`, e.g. `scale = λ(at)` for the hyperbolic metric.
    pub fn length_with_scale(self, scale: f64) -> f64 {
        scale * self.vx.hypot(self.vy)
    }
}

/// Orientation-preserving isometry `z ↦ (a z + b) / (b̄ z + ā)` with `|a|² − |b|² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobiusMap {
    pub a: C64,
    pub b: C64,
}

impl MobiusMap {
    pub const IDENTITY: MobiusMap = MobiusMap {
        a: C64 { re: 1.0, im: 0.0 },
        b: C64 { re: 0.0, im: 0.0 },
    };

    pub fn identity() -> Self {
        Self::IDENTITY
    }

    /// Rotation `z ↦ e^{iα} z`.
    pub fn rotation(alpha: f64) -> Self {
        Self {
            a: C64::from_polar(1.0, alpha / 2.0),
            b: C64::new(0.0, 0.0),
        }
    }

    /// Translation by hyperbolic length `t` along the real diameter, toward `+1`.
    pub fn translation(t: f64) -> Self {
        Self {
            a: C64::new((t / 2.0).cosh(), 0.0),
            b: C64::new((t / 2.0).sinh(), 0.0),
        }
    }

    /// Translation by `t` along the diameter at angle `alpha`.
    pub fn translation_along(alpha: f64, t: f64) -> Self {
        Self::rotation(alpha)
            .compose(&Self::translation(t))
            .compose(&Self::rotation(-alpha))
    }

    /// The isometry `w ↦ (w − z)/(1 − z̄ w)` sending `z` to the origin.
    pub fn recentering(z: DiskPoint) -> Self {
        let z = z.z();
        let s = (1.0 - z.norm_sqr()).sqrt();
        Self { a: C64::new(1.0 / s, 0.0), b: -z / s }
    }

    pub fn inverse(&self) -> Self {
        Self { a: self.a.conj(), b: -self.b }
    }

    /// `self ∘ other`, renormalized to unit determinant.
    pub fn compose(&self, other: &MobiusMap) -> Self {
        Self {
            a: self.a * other.a + self.b * other.b.conj(),
            b: self.a * other.b + self.b * other.a.conj(),
        }
        .normalized()
    }

    #[must_use]
    pub fn normalized(self) -> Self {
        let det = self.a.norm_sqr() - self.b.norm_sqr();
        let s = 1.0 / det.sqrt();
        Self { a: self.a * s, b: self.b * s }
    }

    pub fn determinant(&self) -> f64 {
        self.a.norm_sqr() - self.b.norm_sqr()
    }

    #[inline]
    pub fn apply_c(&self, z: C64) -> C64 {
        (self.a * z + self.b) / (self.b.conj() * z + self.a.conj())
    }

    pub fn apply(&self, z: DiskPoint) -> DiskPoint {
        DiskPoint::from_complex(self.apply_c(z.z()))
    }

    pub fn apply_boundary(&self, xi: BoundaryPoint) -> BoundaryPoint {
        BoundaryPoint::from_complex(self.apply_c(xi.z()))
    }

    /// Complex derivative `m'(z) = 1 / (b̄ z + ā)²`.
    #[inline]
    pub fn derivative(&self, z: C64) -> C64 {
        let d = self.b.conj() * z + self.a.conj();
        (d * d).inv()
    }

    pub fn apply_line(&self, v: LineElement) -> LineElement {
        LineElement::new(self.apply(v.x), self.apply_boundary(v.xi))
    }

    /// Pushes a tangent vector forward by the differential of the map.
    pub fn push_tangent(&self, t: TangentVector) -> TangentVector {
        let v = self.derivative(t.at.z()) * t.v();
        TangentVector { at: self.apply(t.at), vx: v.re, vy: v.im }
    }

    /// Entrywise distance to ±identity, as a 2×2 complex matrix.
    pub fn distance_to_identity(&self) -> f64 {
        let plus = (self.a - 1.0).norm().max(self.b.norm());
        let minus = (self.a + 1.0).norm().max(self.b.norm());
        plus.min(minus)
    }
}

#[inline]
pub fn normalize_angle(theta: f64) -> f64 {
    if (0.0..TAU).contains(&theta) {
        return theta;
    }
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Signed difference `a − b` wrapped into `(−π, π]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Conformal factor `λ(z) = 2 / (1 − |z|²)` of the hyperbolic metric.
#[inline]
pub fn conformal_factor(z: C64) -> f64 {
    2.0 / (1.0 - z.norm_sqr())
}

pub fn mobius_apply(m: &MobiusMap, z: DiskPoint) -> DiskPoint {
    m.apply(z)
}

pub fn mobius_boundary(m: &MobiusMap, xi: BoundaryPoint) -> BoundaryPoint {
    m.apply_boundary(xi)
}

/// Hyperbolic distance, evaluated as `2 artanh |z − w| / |1 − z̄ w|`
/// (equal to the arccosh form, better conditioned for nearby points).
pub fn hyp_dist(z: DiskPoint, w: DiskPoint) -> f64 {
    hyp_dist_c(z.z(), w.z())
}

#[inline]
pub fn hyp_dist_c(z: C64, w: C64) -> f64 {
    let num = (z - w).norm();
    let den = (C64::new(1.0, 0.0) - z.conj() * w).norm();
    2.0 * (num / den).min(1.0).atanh()
}

/// `|ξ − z|²` in angle-difference form, free of cancellation as `z → ξ`.
#[inline]
fn boundary_gap_sqr(z: C64, xi: BoundaryPoint) -> f64 {
    let r = z.norm();
    if r == 0.0 {
        return 1.0;
    }
    let phase = xi.theta() - z.im.atan2(z.re);
    // 1 − 2r cos φ + r² = (1 − r)² + 4 r sin²(φ/2)
    let s = (phase / 2.0).sin();
    (1.0 - r) * (1.0 - r) + 4.0 * r * s * s
}

/// Busemann function `B_ξ(z) = log(|ξ − z|² / (1 − |z|²))`, normalized by `B_ξ(0) = 0`.
pub fn busemann(z: DiskPoint, xi: BoundaryPoint) -> f64 {
    busemann_c(z.z(), xi)
}

#[inline]
pub fn busemann_c(z: C64, xi: BoundaryPoint) -> f64 {
    (boundary_gap_sqr(z, xi) / (1.0 - z.norm_sqr())).ln()
}

/// Poisson kernel `P = e^{−B}`.
pub fn poisson(z: DiskPoint, xi: BoundaryPoint) -> f64 {
    (-busemann(z, xi)).exp()
}

/// Image of `ξ` under the recentering map at `z`; a unit complex number.
#[inline]
pub fn recentered_boundary(z: C64, xi: BoundaryPoint) -> C64 {
    let w = xi.z();
    let zeta = (w - z) / (C64::new(1.0, 0.0) - z.conj() * w);
    zeta / zeta.norm()
}

/// Geodesic spray: the hyperbolic unit vector at `z` pointing along the geodesic
/// asymptotic to `ξ`. Equals `−∇_g B_ξ`; in the chart it is `((1 − |z|²)/2) ζ` with
/// `ζ` the recentered endpoint.
pub fn spray(z: DiskPoint, xi: BoundaryPoint) -> TangentVector {
    let zc = z.z();
    let v = recentered_boundary(zc, xi) * ((1.0 - zc.norm_sqr()) / 2.0);
    TangentVector { at: z, vx: v.re, vy: v.im }
}

/// Direction angle at `z` of the geodesic heading to `ξ`.
#[inline]
pub fn visual_angle(z: DiskPoint, xi: BoundaryPoint) -> f64 {
    // arg((w − z)/(1 − z̄w)) without the division
    let (w, z) = (xi.z(), z.z());
    let zeta = (w - z) * (C64::new(1.0, 0.0) - z.conj() * w).conj();
    normalize_angle(zeta.im.atan2(zeta.re))
}

/// Endpoint of the geodesic leaving `z` with direction angle `v`.
pub fn visual_boundary(z: DiskPoint, v: f64) -> BoundaryPoint {
    visual_boundary_c(z.z(), v)
}

#[inline]
pub fn visual_boundary_c(z: C64, v: f64) -> BoundaryPoint {
    let e = C64::from_polar(1.0, v);
    BoundaryPoint::from_complex((e + z) / (C64::new(1.0, 0.0) + z.conj() * e))
}

/// Point at signed distance `t` from `z` along the geodesic asymptotic to `ξ`
/// (`t > 0` moves toward `ξ`).
pub fn geodesic_flow_leaf(z: DiskPoint, xi: BoundaryPoint, t: f64) -> DiskPoint {
    let zc = z.z();
    let delta = recentered_boundary(zc, xi) * (t / 2.0).tanh();
    DiskPoint::from_complex(uncenter(zc, delta))
}

/// `T_z^{-1}(δ) = (δ + z)/(1 + z̄ δ)`: the point whose recentered coordinate at `z` is `δ`.
#[inline]
pub fn uncenter(z: C64, delta: C64) -> C64 {
    (delta + z) / (C64::new(1.0, 0.0) + z.conj() * delta)
}

/// Wirtinger derivatives `(∂F/∂z, ∂F/∂z̄)` of `F(z) = T_z^{-1}(δ(z))` given those of `δ`.
#[inline]
pub fn uncenter_wirtinger(z: C64, delta: C64, d_dz: C64, d_dzbar: C64) -> (C64, C64) {
    let one = C64::new(1.0, 0.0);
    let n = delta + z;
    let d = one + z.conj() * delta;
    let n_z = d_dz + one;
    let n_zb = d_dzbar;
    let d_z = z.conj() * d_dz;
    let d_zb = delta + z.conj() * d_dzbar;
    let d2 = d * d;
    ((n_z * d - n * d_z) / d2, (n_zb * d - n * d_zb) / d2)
}

/// Real 2×2 Jacobian of a map with Wirtinger derivatives `(a, b)`.
#[inline]
pub fn wirtinger_to_real(a: C64, b: C64) -> Matrix2<f64> {
    let s = a + b;
    let d = a - b;
    Matrix2::new(s.re, -d.im, s.im, d.re)
}

/// Wirtinger derivatives of the recentered endpoint `ζ(z) = (ξ − z)/(1 − z̄ ξ)`.
#[inline]
pub fn recentered_boundary_wirtinger(z: C64, xi: BoundaryPoint) -> (C64, C64) {
    let w = xi.z();
    let den = C64::new(1.0, 0.0) - z.conj() * w;
    let zeta = (w - z) / den;
    (-den.inv(), zeta * w / den)
}

/// Tangent map of `z ↦ geodesic_flow_leaf(z, ξ, t)` in hyperbolic orthonormal
/// frames aligned with the chart axes. Singular values are `{1, e^{−t}}`.
pub fn leaf_jacobian_exact(z: DiskPoint, xi: BoundaryPoint, t: f64) -> Matrix2<f64> {
    let zc = z.z();
    let tau = (t / 2.0).tanh();
    let zeta = recentered_boundary(zc, xi);
    let (zeta_z, zeta_zb) = recentered_boundary_wirtinger(zc, xi);
    let delta = zeta * tau;
    let (a, b) = uncenter_wirtinger(zc, delta, zeta_z * tau, zeta_zb * tau);
    let image = uncenter(zc, delta);
    wirtinger_to_real(a, b) * (conformal_factor(image) / conformal_factor(zc))
}

/// Relative residual of the stationary density equation `Δk − ρ Div(k X̄) = 0` for
/// `k = P(·, ξ)` at `z`, by central differences with Euclidean spacing `h`.
///
/// Both operators are hyperbolic: `Δf = λ^{-2}(f_xx + f_yy)` and
/// `Div Y = λ^{-2} ∂_i(λ² Y^i)` for chart components `Y^i`. The residual is
/// divided by `k(z)`, the natural scale of each term.
pub fn density_equation_residual(z: DiskPoint, xi: BoundaryPoint, rho: f64, h: f64) -> f64 {
    let k = |p: C64| poisson(DiskPoint::new(p.re, p.im), xi);
    // λ² k X̄, the flux whose Euclidean divergence enters Div(k X̄)
    let flux = |p: C64| {
        let s = spray(DiskPoint::new(p.re, p.im), xi);
        let lam = conformal_factor(p);
        s.v() * (lam * lam * k(p))
    };
    let zc = z.z();
    let ex = C64::new(h, 0.0);
    let ey = C64::new(0.0, h);
    let k0 = k(zc);
    let lap_e = (k(zc + ex) + k(zc - ex) + k(zc + ey) + k(zc - ey) - 4.0 * k0) / (h * h);
    let div_e = ((flux(zc + ex) - flux(zc - ex)).re + (flux(zc + ey) - flux(zc - ey)).im) / (2.0 * h);
    let lam = conformal_factor(zc);
    let residual = (lap_e - rho * div_e) / (lam * lam);
    residual.abs() / k0
}
