//! Acceptance suite: one line per criterion. Pass criterion numbers as arguments to run
//! a subset, e.g. `cargo test --release --test acceptance -- 4 5`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use leafdiff_core::audit::{density_equation_audit, geometry_audit, RESIDUAL_POINTS, RESIDUAL_RHOS, RESIDUAL_TOLERANCE};
use leafdiff_core::entropy::{lyapunov_spectrum, pesin_gap, pesin_integral};
use leafdiff_core::flow::{flow_map, flow_states, zero_noise_convergence};
use leafdiff_core::hyperbolic::{angle_diff, geodesic_flow_leaf, hyp_dist, poisson, uncenter};
use leafdiff_core::measure::{convergence_sweep, liouville_reference, run_stationary, tv_distance, SweepBudget};
use leafdiff_core::metric::domain_points;
use leafdiff_core::{
    BoundaryPoint, BowenParams, DiskPoint, FlowParams, FlowSegment, FuchsianGroup, Grid, LineElement, MetricModel,
    MobiusMap, StationaryConfig,
};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn group() -> Arc<FuchsianGroup> {
    Arc::new(FuchsianGroup::octagon().unwrap())
}

fn constant() -> Arc<MetricModel> {
    Arc::new(MetricModel::constant(group()))
}

fn perturbed() -> Arc<MetricModel> {
    Arc::new(MetricModel::perturbed(group(), 0.1, 0.5, 3).unwrap())
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Budget giving `samples` retained samples over 16 trajectories after `burn_in_time`.
fn budget(step: f64, samples: u64, every: u64, burn_in_time: f64, grid: Grid) -> StationaryConfig {
    let n_traj = 16;
    let burn_in = (burn_in_time / step).ceil() as u64;
    StationaryConfig { n_traj, n_steps: burn_in + samples / n_traj as u64 * every, burn_in, sample_every: every, grid }
}

fn density_equation() -> Outcome {
    let started = Instant::now();
    let worst = density_equation_audit(&constant(), RESIDUAL_POINTS, &RESIDUAL_RHOS);
    let secs = started.elapsed().as_secs_f64();
    verdict(
        worst < RESIDUAL_TOLERANCE && secs < 1.0,
        format!("max residual {worst:.2e} (< {RESIDUAL_TOLERANCE:e}) over {RESIDUAL_POINTS} points, {secs:.2} s (< 1 s)"),
    )
}

fn exact_case() -> Outcome {
    let metric = constant();
    let grid = Grid::for_group(metric.group(), 16, 16, 8).map_err(|e| e.to_string())?;
    // default step factor; sampling every 500 steps (half a time unit) keeps the
    // retained samples close to independent
    let cfg = budget(1e-3, 1_000_000, 500, 20.0, grid);
    let sweep = SweepBudget { run: cfg, step_factor: 0.1 };
    let report = convergence_sweep(metric, &[-1.0, -4.0, -16.0], &sweep, 2024).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut rows = Vec::new();
    for r in &report.rows {
        ok &= r.n_samples == 1_000_000 && r.tv_to_liouville < 0.05 && (0.8..=1.3).contains(&r.z_spread);
        rows.push(format!("rho {}: TV {:.4}, z spread {:.3}", r.rho, r.tv_to_liouville, r.z_spread));
    }
    verdict(ok, format!("{} (TV < 0.05, z spread in [0.8, 1.3])", rows.join("; ")))
}

fn variable_curvature_trend() -> Outcome {
    let metric = perturbed();
    let audit = geometry_audit(&metric).map_err(|e| e.to_string())?;
    if let Some(bad) = audit.iter().find(|c| !c.passed) {
        return Err(format!("geometry audit failed: {} = {}", bad.name, bad.value));
    }
    let grid = Grid::for_group(metric.group(), 4, 4, 8).map_err(|e| e.to_string())?;
    let reference = liouville_reference(&metric, &grid);
    let run = |rho: f64, seed: u64| {
        let p = FlowParams::from_rho(rho, 1.0, metric.clone()).map_err(|e| e.to_string())?;
        run_stationary(&p, &budget(p.step, 3_000_000, 100, 20.0, grid), seed).map_err(|e| e.to_string())
    };
    let a = run(0.0, 31)?;
    let b = run(0.0, 32)?;
    let floor = tv_distance(&a.histogram, &b.histogram).map_err(|e| e.to_string())?;
    let at_zero = tv_distance(&a.histogram, &reference).map_err(|e| e.to_string())?;
    let mut tvs = Vec::new();
    for (i, rho) in [-1.0, -4.0, -16.0].into_iter().enumerate() {
        let r = run(rho, 40 + i as u64)?;
        tvs.push(tv_distance(&r.histogram, &reference).map_err(|e| e.to_string())?);
    }
    let rises: Vec<f64> = tvs.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    let trend_ok = rises.is_empty() || (rises.len() == 1 && rises[0] < floor);
    let gap_ok = at_zero >= 3.0 * floor;
    verdict(
        trend_ok && gap_ok,
        format!(
            "TV at rho -1, -4, -16: {:.4}, {:.4}, {:.4}; floor {floor:.4}; TV at rho 0 {at_zero:.4} = {:.1} x floor (>= 3)",
            tvs[0],
            tvs[1],
            tvs[2],
            at_zero / floor
        ),
    )
}

fn random_element(rng: &mut ChaCha8Rng) -> LineElement {
    let r = 0.8 * rng.random::<f64>().sqrt();
    let z = C64::from_polar(r, TAU * rng.random::<f64>());
    LineElement::new(DiskPoint::from_complex(z), BoundaryPoint::new(TAU * rng.random::<f64>()))
}

fn random_word(rng: &mut ChaCha8Rng, g: &FuchsianGroup) -> MobiusMap {
    let len = rng.random_range(1..=3);
    (0..len).fold(MobiusMap::IDENTITY, |m, _| g.generators[rng.random_range(0..8)].compose(&m))
}

fn flow_structure() -> Outcome {
    let metric = constant();
    let p = FlowParams::from_rho(-4.0, 0.1, metric.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut bitwise = true;
    for trial in 0..20u64 {
        let initial: Vec<LineElement> = (0..8).map(|_| random_element(&mut rng)).collect();
        let seg = FlowSegment::new(trial, rng.random_range(0..10_000), 1000);
        let whole = flow_map(&p, &seg, &initial).map_err(|e| e.to_string())?;
        let (first, second) = seg.split(rng.random_range(1..1000));
        let mid = flow_map(&p, &first, &initial).map_err(|e| e.to_string())?;
        bitwise &= flow_states(&p, &second, &mid).map_err(|e| e.to_string())? == whole;
    }

    let g = metric.group();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let gamma = random_word(&mut rng, g);
        let v = random_element(&mut rng);
        let seg = FlowSegment::new(rng.random(), 0, 100);
        let a = flow_map(&p, &seg, &[v]).map_err(|e| e.to_string())?[0];
        let b = flow_map(&p, &seg, &[gamma.apply_line(v)]).map_err(|e| e.to_string())?[0];
        // the flow of γv is γ applied to the flow of v, both on the universal cover
        let point = hyp_dist(gamma.apply(a.cover_point()), b.cover_point());
        let moved = a.lift.inverse().apply_boundary(a.element.xi);
        let direction = angle_diff(gamma.apply_boundary(moved).theta(), b.lift.inverse().apply_boundary(b.element.xi).theta()).abs();
        worst = worst.max(point).max(direction);
    }
    verdict(
        bitwise && worst < 1e-9,
        format!("cocycle bitwise over 20 splits: {bitwise}; equivariance max error {worst:.2e} over 1000 triples (< 1e-9)"),
    )
}

fn zero_noise_limit() -> Outcome {
    let rows = zero_noise_convergence(constant(), &[0.5, 0.25, 0.125], 256, 0.1, 5).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[0].median_distance / w[1].median_distance).collect();
    let medians: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.median_distance)).collect();
    verdict(
        ratios.iter().all(|r| (1.5..=2.5).contains(r)),
        format!("medians {} ; ratios {:.3}, {:.3} (in [1.5, 2.5])", medians.join(", "), ratios[0], ratios[1]),
    )
}

fn jacobian_limit() -> Outcome {
    let metric = constant();
    let deterministic = FlowParams::from_epsilon(0.0, 1.0, metric.clone()).map_err(|e| e.to_string())?;
    let at_zero = pesin_integral(&deterministic, 256, 6).map_err(|e| e.to_string())?.mean;
    let p = FlowParams::from_rho(-16.0, 1.0, metric).map_err(|e| e.to_string())?;
    let pesin = pesin_integral(&p, 32_768, 6).map_err(|e| e.to_string())?;
    let lyap = lyapunov_spectrum(&p, 20_000.0, 6).map_err(|e| e.to_string())?;
    let sum = lyap.chi[0] + lyap.chi[1];
    let relative = (pesin.mean - sum).abs() / sum;
    verdict(
        (at_zero - 1.0).abs() <= 0.005 && (pesin.mean - 1.0).abs() <= 0.1 && relative < 0.02,
        format!(
            "eps 0: {at_zero:.5} (1 +- 0.005); rho -16: {:.4} +- {:.4} (1 +- 0.1), exponent sum {sum:.4}, relative gap {relative:.4} (< 0.02)",
            pesin.mean, pesin.std_error
        ),
    )
}

/// Bowen-ball shrinkage of the exact reversed geodesic flow by plain Monte Carlo on the
/// universal cover: uniform probes in the hyperbolic `η`-ball, Poisson-kernel weights.
fn brute_force_bowen(centers: &[(DiskPoint, BoundaryPoint)], eta: f64, n: u32, probes: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut total_rate = 0.0;
    for &(x, xi) in centers {
        let orbit: Vec<DiskPoint> = (1..=n).map(|k| geodesic_flow_leaf(x, xi, -(k as f64))).collect();
        let (mut total, mut kept) = (0.0, 0.0);
        for _ in 0..probes {
            let r = (1.0 + rng.random::<f64>() * (eta.cosh() - 1.0)).acosh();
            let w = DiskPoint::from_complex(uncenter(x.z(), C64::from_polar((r / 2.0).tanh(), TAU * rng.random::<f64>())));
            let weight = poisson(w, xi) / poisson(x, xi);
            total += weight;
            if orbit.iter().enumerate().all(|(k, &c)| hyp_dist(geodesic_flow_leaf(w, xi, -(k as f64 + 1.0)), c) < eta) {
                kept += weight;
            }
        }
        total_rate += -(kept / total).ln() / n as f64;
    }
    total_rate / centers.len() as f64
}

fn entropy_inequality() -> Outcome {
    let metric = constant();
    let params = BowenParams::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for rho in [-4.0, -16.0] {
        let p = FlowParams::from_rho(rho, 1.0, metric.clone()).map_err(|e| e.to_string())?;
        let r = pesin_gap(&p, &params, 4096, 7).map_err(|e| e.to_string())?;
        ok &= r.gap >= -0.15;
        parts.push(format!("rho {rho}: bowen {:.3} pesin {:.3} gap {:.3}", r.bowen.value, r.pesin.mean, r.gap));
    }
    let p = FlowParams::from_epsilon(0.0, 1.0, metric.clone()).map_err(|e| e.to_string())?;
    let r = pesin_gap(&p, &params, 256, 7).map_err(|e| e.to_string())?;
    let centers: Vec<_> = domain_points(metric.group(), 4)
        .into_iter()
        .enumerate()
        .map(|(i, z)| (DiskPoint::from_complex(z), BoundaryPoint::new(1.0 + 1.7 * i as f64)))
        .collect();
    let oracle = brute_force_bowen(&centers, params.eta, params.n, 400_000);
    ok &= r.gap >= -0.15 && (0.8..=1.2).contains(&r.bowen.value) && (r.bowen.value - oracle).abs() < 0.03;
    parts.push(format!(
        "eps 0: bowen {:.3} (in [0.8, 1.2]) vs brute force {oracle:.3} (within 0.03), gap {:.3}",
        r.bowen.value, r.gap
    ));
    verdict(ok, format!("{} (gaps >= -0.15)", parts.join("; ")))
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leafdiff"))
}

fn volume_entropy_gate() -> Outcome {
    let v = constant().volume_entropy_estimate().map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut codes = Vec::new();
    for rho in ["1.0", "2.0"] {
        let config = dir.path().join(format!("rho{rho}.toml"));
        fs::write(&config, format!("[flow]\nrho = {rho}\n")).map_err(|e| e.to_string())?;
        let status = cli()
            .args(["stationary", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path())
            .output()
            .map_err(|e| e.to_string())?
            .status;
        codes.push(status.code());
    }
    verdict(
        (v - 1.0).abs() <= 0.05 && codes.iter().all(|c| *c == Some(3)),
        format!("volume entropy {v:.4} (1 +- 0.05); exit codes for rho 1, 2: {codes:?} (expected 3)"),
    )
}

/// Result files of a directory keyed by name, manifests excluded: those record the
/// worker count and the wall time.
fn results(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if !name.ends_with(".manifest.json") && !name.ends_with(".toml") {
            out.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn determinism() -> Outcome {
    let config = "seed = 3\n\
        [flow]\nrho = -4.0\nstep_factor = 1.0\n\
        [run]\nn_traj = 8\nn_steps = 22000\nburn_in = 2000\nsample_every = 10\ngrid = [8, 8, 4]\n\
        [entropy]\nn = 3\nn_centers = 4\npesin_samples = 256\nlyapunov_time = 500.0\n\
        [converge]\nn_states = 32\n";
    let mut runs = Vec::new();
    for workers in ["1", "2"] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("run.toml");
        fs::write(&path, config).map_err(|e| e.to_string())?;
        for command in ["stationary", "entropy", "converge-flow"] {
            let status = cli()
                .arg(command)
                .arg("--config")
                .arg(&path)
                .args(["--workers", workers, "--out"])
                .arg(dir.path())
                .output()
                .map_err(|e| e.to_string())?
                .status;
            if status.code() != Some(0) {
                return Err(format!("{command} with {workers} workers exited with {status}"));
            }
        }
        runs.push(results(dir.path())?);
    }
    let same = runs[0] == runs[1];
    verdict(
        same && runs[0].len() == 6,
        format!("{} result files from stationary, entropy, converge-flow; identical across 1 and 2 workers: {same}", runs[0].len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("density equation residual", density_equation),
        ("constant curvature stationary law", exact_case),
        ("variable curvature trend", variable_curvature_trend),
        ("stochastic flow structure", flow_structure),
        ("zero-noise limit", zero_noise_limit),
        ("Jacobian limit", jacobian_limit),
        ("entropy inequality", entropy_inequality),
        ("volume entropy gate", volume_entropy_gate),
        ("determinism", determinism),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let number = i + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {number} PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("criterion {number} FAIL {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
