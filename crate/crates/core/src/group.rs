//! The genus-2 surface group generated by the side pairings of the regular
//! hyperbolic octagon with interior angles π/4, and reduction into its
//! Dirichlet domain centered at the origin.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperbolic::{hyp_dist_c, DiskPoint, LineElement, MobiusMap};
use crate::quadrature;

/// Slack in the Dirichlet inequality `d(z, 0) ≤ d(z, γ·0) + tol`.
pub const DOMAIN_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_WORD_BUDGET: usize = 64;

/// Ordered pairs `(source side, target side)` for the four generators. With this
/// choice `g1 g2 g1⁻¹ g2⁻¹ g3 g4 g3⁻¹ g4⁻¹ = ±1`.
const PAIRINGS: [(usize, usize); 4] = [(2, 0), (1, 3), (6, 4), (5, 7)];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FuchsianGroup {
    /// `g1, g2, g3, g4, g1⁻¹, g2⁻¹, g3⁻¹, g4⁻¹`; the inverse of entry `k` is entry `(k + 4) % 8`.
    pub generators: [MobiusMap; 8],
    /// Euclidean radius of the octagon's vertices.
    pub octagon_vertex_radius: f64,
    pub max_word_budget: usize,
    /// Hyperbolic distance from the origin to each side.
    pub inradius: f64,
    /// Hyperbolic distance from the origin to each vertex.
    pub circumradius: f64,
    /// Orbit points `g_k · 0`, in generator order.
    centers: [C64; 8],
    /// `1 − |g_k · 0|²`, used by the Dirichlet test.
    center_weights: [f64; 8],
    /// Squared Euclidean radius of the inscribed disk, which lies inside the domain.
    inner_radius_sqr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub element: LineElement,
    pub applied: MobiusMap,
    pub word_length: usize,
}

/// Interior angle of the regular octagon with hyperbolic circumradius `r`.
fn interior_angle(r: f64) -> f64 {
    // right triangle (center, side midpoint, vertex): cosh r = cot(π/8) cot(θ/2)
    2.0 * (1.0 / (r.cosh() * FRAC_PI_8.tan())).atan()
}

/// Orientation-preserving pairing carrying side `from` onto side `to`,
/// mapping the octagon to the neighbor across side `to`.
fn side_pairing(inradius: f64, from: usize, to: usize) -> MobiusMap {
    let alpha_from = from as f64 * FRAC_PI_4;
    let alpha_to = to as f64 * FRAC_PI_4;
    MobiusMap::translation_along(alpha_to, 2.0 * inradius)
        .compose(&MobiusMap::rotation(alpha_to + PI - alpha_from))
}

pub fn build_octagon_group() -> Result<FuchsianGroup> {
    FuchsianGroup::octagon()
}

impl FuchsianGroup {
    pub fn octagon() -> Result<Self> {
        // interior_angle decreases from 3π/4 (r → 0) to 0 (r → ∞)
        let (mut lo, mut hi) = (1e-6, 10.0);
        if !(interior_angle(lo) > FRAC_PI_4 && interior_angle(hi) < FRAC_PI_4) {
            return Err(Error::RootFinding("octagon circumradius not bracketed".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if interior_angle(mid) > FRAC_PI_4 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let circumradius = 0.5 * (lo + hi);
        if (interior_angle(circumradius) - FRAC_PI_4).abs() > 1e-12 {
            return Err(Error::RootFinding("octagon circumradius did not converge".into()));
        }
        // the same triangle: tanh(inradius) = cos(π/8) tanh(circumradius)
        let inradius = (FRAC_PI_8.cos() * circumradius.tanh()).atanh();

        let mut generators = [MobiusMap::IDENTITY; 8];
        for (k, &(from, to)) in PAIRINGS.iter().enumerate() {
            generators[k] = side_pairing(inradius, from, to);
            generators[k + 4] = generators[k].inverse();
        }
        let mut centers = [C64::new(0.0, 0.0); 8];
        let mut center_weights = [0.0; 8];
        for k in 0..8 {
            centers[k] = generators[k].apply_c(C64::new(0.0, 0.0));
            center_weights[k] = 1.0 - centers[k].norm_sqr();
        }
        Ok(Self {
            generators,
            octagon_vertex_radius: (circumradius / 2.0).tanh(),
            max_word_budget: DEFAULT_WORD_BUDGET,
            inradius,
            circumradius,
            centers,
            center_weights,
            inner_radius_sqr: (inradius / 2.0).tanh().powi(2) * (1.0 - 1e-12),
        })
    }

    #[must_use]
    pub fn with_word_budget(mut self, budget: usize) -> Self {
        self.max_word_budget = budget;
        self
    }

    #[inline]
    pub fn inverse_index(k: usize) -> usize {
        (k + 4) % 8
    }

    pub fn centers(&self) -> &[C64; 8] {
        &self.centers
    }

    /// Euclidean vertex positions, counterclockwise from angle π/8.
    pub fn vertices(&self) -> [C64; 8] {
        std::array::from_fn(|k| C64::from_polar(self.octagon_vertex_radius, FRAC_PI_8 + k as f64 * FRAC_PI_4))
    }

    /// Interior angle at each vertex, measured between the circles carrying the two
    /// sides that meet there.
    pub fn interior_angles(&self) -> [f64; 8] {
        let m = (self.inradius / 2.0).tanh();
        let center_dist = (1.0 + m * m) / (2.0 * m);
        let vertices = self.vertices();
        std::array::from_fn(|k| {
            let v = vertices[k];
            let c1 = C64::from_polar(center_dist, k as f64 * FRAC_PI_4);
            let c2 = C64::from_polar(center_dist, (k + 1) as f64 * FRAC_PI_4);
            // side tangents at v, each pointing away from v along the boundary
            let t1 = (v - c1) * C64::new(0.0, -1.0);
            let t2 = (v - c2) * C64::new(0.0, 1.0);
            (t1 / t2).arg().abs()
        })
    }

    /// `g1 g2 g1⁻¹ g2⁻¹ g3 g4 g3⁻¹ g4⁻¹`.
    pub fn relation_product(&self) -> MobiusMap {
        let g = &self.generators;
        [0, 1, 4, 5, 2, 3, 6, 7]
            .iter()
            .fold(MobiusMap::IDENTITY, |acc, &k| acc.compose(&g[k]))
    }

    /// Hyperbolic area of the octagon by Gauss–Legendre quadrature in polar
    /// coordinates: each side at angle `α` is the curve `tanh r · cos(θ − α) = tanh(inradius)`.
    pub fn domain_area(&self, nodes: usize) -> f64 {
        let t = self.inradius.tanh();
        let sector = quadrature::integrate(-FRAC_PI_8, FRAC_PI_8, nodes, |phi| {
            let r = (t / phi.cos()).atanh();
            r.cosh() - 1.0
        });
        8.0 * sector
    }

    /// Index of the nearest orbit center strictly closer to `z` than the origin, if any.
    /// Ties between centers go to the lowest generator index.
    #[inline]
    fn violated_center(&self, z: C64) -> Option<usize> {
        let z2 = z.norm_sqr();
        if z2 < self.inner_radius_sqr {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for k in 0..8 {
            // d(z, 0) ≤ d(z, c) ⇔ |z|² ≤ |z − c|² / (1 − |c|²)
            let q = (z - self.centers[k]).norm_sqr() / self.center_weights[k];
            let gap = q - z2;
            let violated = if gap.abs() < 1e-9 {
                let d0 = hyp_dist_c(z, C64::new(0.0, 0.0));
                d0 > hyp_dist_c(z, self.centers[k]) + DOMAIN_TOLERANCE
            } else {
                gap < 0.0
            };
            if violated && best.is_none_or(|(_, bq)| q < bq) {
                best = Some((k, q));
            }
        }
        best.map(|(k, _)| k)
    }

    pub fn in_fundamental_domain(&self, z: DiskPoint) -> bool {
        self.violated_center(z.z()).is_none()
    }

    #[inline]
    pub fn contains_c(&self, z: C64) -> bool {
        self.violated_center(z).is_none()
    }

    /// Reduces a chart point, returning the reduced point, the applied map and the word length.
    pub fn reduce_point(&self, z: C64) -> Result<(C64, MobiusMap, usize)> {
        let mut z = z;
        let mut applied = MobiusMap::IDENTITY;
        let mut word_length = 0;
        while let Some(k) = self.violated_center(z) {
            word_length += 1;
            if word_length > self.max_word_budget {
                return Err(Error::BudgetExceeded { word_length });
            }
            let step = &self.generators[Self::inverse_index(k)];
            z = step.apply_c(z);
            applied = step.compose(&applied);
        }
        Ok((z, applied, word_length))
    }

    pub fn reduce(&self, v: LineElement) -> Result<ReducedState> {
        let (z, applied, word_length) = self.reduce_point(v.x.z())?;
        let xi = if word_length == 0 { v.xi } else { applied.apply_boundary(v.xi) };
        Ok(ReducedState {
            element: LineElement::new(DiskPoint::from_complex(z), xi),
            applied,
            word_length,
        })
    }

    /// Bounding box half-width of the domain in the chart.
    pub fn bounding_radius(&self) -> f64 {
        self.octagon_vertex_radius
    }
}
