//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use leafdiff_core::{BoundaryPoint, DiskPoint, FuchsianGroup, LineElement, MetricModel};

pub fn constant_metric() -> Arc<MetricModel> {
    Arc::new(MetricModel::constant(Arc::new(FuchsianGroup::octagon().expect("octagon group builds"))))
}

/// The default perturbed metric (amplitude 0.1, width 0.5), with its spray table
/// already built so that no measurement includes the build.
pub fn perturbed_metric() -> Arc<MetricModel> {
    let group = Arc::new(FuchsianGroup::octagon().expect("octagon group builds"));
    let metric = MetricModel::perturbed(group, 0.1, 0.5, 3).expect("perturbed metric builds");
    metric.spray_table();
    Arc::new(metric)
}

pub fn sample_element() -> LineElement {
    LineElement::new(DiskPoint::new(0.2, -0.15), BoundaryPoint::new(1.3))
}
