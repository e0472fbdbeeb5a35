use std::sync::Arc;

use leafdiff_core::measure::{
    chi_square, convergence_sweep, direction_chi_square, harmonic_reference_at_zero, liouville_reference,
    liouville_reference_with, run_stationary, spread, tv_distance, z_scores, SweepBudget,
};
use leafdiff_core::{Error, FlowParams, FuchsianGroup, Grid, MetricModel, StationaryConfig};

fn group() -> Arc<FuchsianGroup> {
    Arc::new(FuchsianGroup::octagon().unwrap())
}

fn constant() -> Arc<MetricModel> {
    Arc::new(MetricModel::constant(group()))
}

/// `samples` retained samples over 16 trajectories, sampled every `every` steps after a
/// burn-in of `burn_in_time`.
fn config(grid: Grid, step: f64, samples: u64, every: u64, burn_in_time: f64) -> StationaryConfig {
    let n_traj = 16;
    let burn_in = (burn_in_time / step).ceil() as u64;
    let per_traj = samples / n_traj as u64;
    StationaryConfig { n_traj, n_steps: burn_in + per_traj * every, burn_in, sample_every: every, grid }
}

fn default_grid(g: &FuchsianGroup) -> Grid {
    Grid::for_group(g, 16, 16, 8).unwrap()
}

// Step factor 1 (h = 1e-2) keeps these runs short; its bias is far below the
// tolerances checked here.
const FAST: f64 = 1.0;

#[test]
fn constant_curvature_cells_within_five_sigma() {
    let metric = constant();
    let p = FlowParams::from_rho(-4.0, FAST, metric.clone()).unwrap();
    let grid = default_grid(metric.group());
    let run = run_stationary(&p, &config(grid, p.step, 1_000_000, 30, 20.0), 11).unwrap();
    assert_eq!(run.n_samples, 1_000_000);
    let reference = liouville_reference(&metric, &grid);
    let z = z_scores(&run.histogram, &reference, run.effective_samples).unwrap();
    let worst = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 5.0, "largest |z| = {worst}");
    let sd = spread(&z);
    assert!((0.8..=1.3).contains(&sd), "z spread {sd}");
}

#[test]
fn merging_is_order_independent() {
    let metric = constant();
    let p = FlowParams::from_rho(-4.0, FAST, metric.clone()).unwrap();
    let grid = Grid::for_group(metric.group(), 8, 8, 4).unwrap();
    let cfg = StationaryConfig { n_traj: 1, n_steps: 4000, burn_in: 2000, sample_every: 3, grid };
    let a = run_stationary(&p, &cfg, 1).unwrap().histogram;
    let b = run_stationary(&p, &cfg, 2).unwrap().histogram;
    let mut ab = a.clone();
    ab.merge(&b).unwrap();
    let mut ba = b.clone();
    ba.merge(&a).unwrap();
    assert_eq!(ab, ba);
    assert_eq!(ab.total(), a.total() + b.total());
}

#[test]
fn direction_marginal_is_uniform() {
    let metric = constant();
    let p = FlowParams::from_rho(-4.0, FAST, metric.clone()).unwrap();
    let grid = Grid::for_group(metric.group(), 4, 4, 16).unwrap();
    // the direction only moves through the noise, so it decorrelates far more slowly
    // than the spatial observable behind the effective sample size: sample sparsely
    let run = run_stationary(&p, &config(grid, p.step, 250_000, 400, 20.0), 5).unwrap();
    let reference = liouville_reference(&metric, &grid);
    let chi = direction_chi_square(&run.histogram, &reference, run.effective_samples).unwrap();
    assert_eq!(chi.dof, 15);
    assert!(chi.statistic < chi.quantile(0.99), "{chi:?}");
}

#[test]
fn independent_runs_agree_to_the_noise_floor() {
    let metric = constant();
    let p = FlowParams::from_rho(-4.0, FAST, metric.clone()).unwrap();
    let cfg = config(default_grid(metric.group()), p.step, 1_000_000, 30, 20.0);
    let a = run_stationary(&p, &cfg, 100).unwrap();
    let b = run_stationary(&p, &cfg, 200).unwrap();
    let tv = tv_distance(&a.histogram, &b.histogram).unwrap();
    assert!(tv < 0.03, "two-run TV {tv}");
}

#[test]
fn constant_curvature_sweep_sits_at_the_noise_floor() {
    let metric = constant();
    let grid = default_grid(metric.group());
    let budget = SweepBudget { run: config(grid, 1e-2, 1_000_000, 30, 20.0), step_factor: FAST };
    let report = convergence_sweep(metric, &[-16.0, -1.0, -4.0], &budget, 3).unwrap();
    let rhos: Vec<f64> = report.rows.iter().map(|r| r.rho).collect();
    assert_eq!(rhos, vec![-1.0, -4.0, -16.0]);
    let tvs: Vec<f64> = report.rows.iter().map(|r| r.tv_to_liouville).collect();
    for row in &report.rows {
        assert!(row.tv_to_liouville < 0.05, "{row:?}");
        assert!((0.8..=1.3).contains(&row.z_spread), "{row:?}");
    }
    let (lo, hi) = tvs.iter().fold((f64::MAX, f64::MIN), |(a, b), &t| (a.min(t), b.max(t)));
    assert!(hi - lo < 0.02, "{tvs:?}");
}

#[test]
fn doubling_burn_in_stays_within_the_noise_floor() {
    let metric = constant();
    let p = FlowParams::from_rho(-1.0, FAST, metric.clone()).unwrap();
    let grid = Grid::for_group(metric.group(), 8, 8, 8).unwrap();
    let reference = liouville_reference(&metric, &grid);
    let tv = |burn: f64| {
        let run = run_stationary(&p, &config(grid, p.step, 500_000, 30, burn), 9).unwrap();
        tv_distance(&run.histogram, &reference).unwrap()
    };
    let floor = {
        let cfg = config(grid, p.step, 500_000, 30, 20.0);
        let a = run_stationary(&p, &cfg, 21).unwrap();
        let b = run_stationary(&p, &cfg, 22).unwrap();
        tv_distance(&a.histogram, &b.histogram).unwrap()
    };
    let (short, long) = (tv(20.0), tv(40.0));
    assert!((short - long).abs() < floor, "burn-in 20: {short}, 40: {long}, floor {floor}");
}

#[test]
fn reference_quadrature_is_converged() {
    let metric = constant();
    let grid = default_grid(metric.group());
    let coarse = liouville_reference_with(&metric, &grid, 4).masses();
    let fine = liouville_reference_with(&metric, &grid, 8).masses();
    let worst = coarse.iter().zip(&fine).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn harmonic_measure_of_the_perturbed_metric_is_not_liouville() {
    let metric = Arc::new(MetricModel::perturbed(group(), 0.1, 0.5, 3).unwrap());
    let p = FlowParams::from_rho(0.0, FAST, metric.clone()).unwrap();
    let grid = Grid::for_group(metric.group(), 4, 4, 8).unwrap();
    let run = run_stationary(&p, &config(grid, p.step, 1_000_000, 100, 20.0), 17).unwrap();
    // at ρ = 0 the diffusion is a time change of hyperbolic Brownian motion, whose
    // stationary law is known in closed form
    let harmonic = harmonic_reference_at_zero(&metric, &grid);
    let liouville = liouville_reference(&metric, &grid);
    let to_harmonic = tv_distance(&run.histogram, &harmonic).unwrap();
    let to_liouville = tv_distance(&run.histogram, &liouville).unwrap();
    let chi = chi_square(&run.histogram, &harmonic, run.effective_samples).unwrap();
    assert!(chi.statistic < chi.quantile(0.999), "{chi:?}");
    assert!(to_liouville > 2.0 * to_harmonic, "harmonic {to_harmonic}, Liouville {to_liouville}");
}

#[test]
fn preconditions_are_enforced() {
    let metric = constant();
    let grid = Grid::for_group(metric.group(), 4, 4, 4).unwrap();
    let p = FlowParams::from_rho(0.5, FAST, metric.clone()).unwrap();
    let ok = StationaryConfig { n_traj: 1, n_steps: 2100, burn_in: 2000, sample_every: 10, grid };
    assert!(run_stationary(&p, &ok, 0).is_ok());

    let p = FlowParams::from_rho(2.0, FAST, metric.clone()).unwrap();
    assert!(matches!(run_stationary(&p, &ok, 0), Err(Error::NotCoercive { .. })));

    let p = FlowParams::from_rho(-4.0, FAST, metric.clone()).unwrap();
    let empty = StationaryConfig { n_steps: 2000, ..ok };
    assert!(matches!(run_stationary(&p, &empty, 0), Err(Error::EmptyHistogram { .. })));
    let short = StationaryConfig { n_steps: 1100, burn_in: 1000, ..ok };
    assert!(matches!(run_stationary(&p, &short, 0), Err(Error::InvalidParameter(_))));

    let other = Grid::for_group(metric.group(), 8, 4, 4).unwrap();
    let a = liouville_reference(&metric, &grid);
    let b = liouville_reference(&metric, &other);
    assert!(matches!(tv_distance(&a, &b), Err(Error::GridMismatch(_))));
}

#[test]
fn runs_are_deterministic_in_the_seed() {
    let metric = constant();
    let p = FlowParams::from_rho(-4.0, FAST, metric.clone()).unwrap();
    let grid = Grid::for_group(metric.group(), 8, 8, 4).unwrap();
    let cfg = StationaryConfig { n_traj: 4, n_steps: 3000, burn_in: 2000, sample_every: 5, grid };
    let a = run_stationary(&p, &cfg, 77).unwrap();
    let b = run_stationary(&p, &cfg, 77).unwrap();
    assert_eq!(a, b);
    let c = run_stationary(&p, &cfg, 78).unwrap();
    assert_ne!(a.histogram, c.histogram);
}
