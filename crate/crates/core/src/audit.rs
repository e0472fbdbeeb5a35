//! Geometry self-checks run before any simulation: the surface group, the
//! stationary density equation in constant curvature, and the metric.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperbolic::{density_equation_residual, BoundaryPoint, DiskPoint};
use crate::metric::{domain_points, MetricModel, CURVATURE_AUDIT_POINTS, CURVATURE_CEILING};
use crate::quadrature::radical_inverse;

pub const RESIDUAL_POINTS: usize = 200;
pub const RESIDUAL_RHOS: [f64; 4] = [0.0, -1.0, -4.0, -16.0];
pub const RESIDUAL_SPACING: f64 = 1e-4;
pub const RESIDUAL_TOLERANCE: f64 = 1e-5;
pub const VOLUME_ENTROPY_TOLERANCE: f64 = 0.05;
/// Accepted range of the volume entropy of a perturbed metric.
pub const PERTURBED_VOLUME_ENTROPY: (f64, f64) = (0.8, 1.3);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCheck {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance condition.
    pub condition: String,
    pub passed: bool,
}

impl AuditCheck {
    fn new(name: &str, value: f64, condition: String, passed: bool) -> Self {
        Self { name: name.into(), value, condition, passed }
    }

    fn below(name: &str, value: f64, bound: f64) -> Self {
        Self::new(name, value, format!("< {bound:e}"), value < bound)
    }
}

/// Largest relative residual of `Δk − ρ Div(k X̄) = 0` for the Poisson kernel over
/// quasi-random line elements of the fundamental domain and each `ρ`.
pub fn density_equation_audit(metric: &MetricModel, n_points: usize, rhos: &[f64]) -> f64 {
    let points = domain_points(metric.group(), n_points);
    let mut worst: f64 = 0.0;
    for (i, z) in points.iter().enumerate() {
        let xi = BoundaryPoint::new(TAU * radical_inverse(i as u64 + 1, 7));
        for &rho in rhos {
            let r = density_equation_residual(DiskPoint::from_complex(*z), xi, rho, RESIDUAL_SPACING);
            worst = worst.max(r);
        }
    }
    worst
}

/// Every geometry check in a fixed order.
pub fn geometry_audit(metric: &MetricModel) -> Result<Vec<AuditCheck>> {
    let group = metric.group();
    let mut checks = Vec::new();
    checks.push(AuditCheck::below("group_relation", group.relation_product().distance_to_identity(), 1e-8));
    let angle_sum: f64 = group.interior_angles().iter().sum();
    checks.push(AuditCheck::below("interior_angle_sum", (angle_sum - TAU).abs(), 1e-9));
    checks.push(AuditCheck::below("domain_area", (group.domain_area(64) - 4.0 * PI).abs(), 1e-6));
    checks.push(AuditCheck::below(
        "density_equation_residual",
        density_equation_audit(metric, RESIDUAL_POINTS, &RESIDUAL_RHOS),
        RESIDUAL_TOLERANCE,
    ));
    checks.push(AuditCheck::below("gauss_bonnet", (metric.total_curvature(32) + 4.0 * PI).abs(), 1e-3));
    let curvature = metric.curvature_audit(CURVATURE_AUDIT_POINTS);
    checks.push(AuditCheck::new(
        "max_curvature",
        curvature.max,
        format!("< {CURVATURE_CEILING} (min {:.4})", curvature.min),
        curvature.passed,
    ));
    if !metric.is_hyperbolic() {
        checks.push(AuditCheck::below("phi_invariance", metric.invariance_defect(200), 1e-6));
    }
    // the volume entropy is only meaningful for a negatively curved metric
    if curvature.passed {
        let v = if metric.is_hyperbolic() { metric.volume_entropy_estimate()? } else { metric.volume_entropy()? };
        let (lo, hi) = if metric.is_hyperbolic() {
            (1.0 - VOLUME_ENTROPY_TOLERANCE, 1.0 + VOLUME_ENTROPY_TOLERANCE)
        } else {
            PERTURBED_VOLUME_ENTROPY
        };
        checks.push(AuditCheck::new("volume_entropy", v, format!("in [{lo}, {hi}]"), (lo..=hi).contains(&v)));
    }
    Ok(checks)
}

/// The first failing check as an error.
pub fn first_failure(checks: &[AuditCheck]) -> Result<()> {
    match checks.iter().find(|c| !c.passed) {
        None => Ok(()),
        Some(c) => Err(Error::AuditFailed(format!("{}: {} (required {})", c.name, c.value, c.condition))),
    }
}
