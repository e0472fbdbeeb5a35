use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use leafdiff_core::audit::{first_failure, geometry_audit};
use leafdiff_core::entropy::{lyapunov_spectrum, pesin_gap};
use leafdiff_core::flow::zero_noise_convergence;
use leafdiff_core::measure::{
    chi_square, convergence_sweep, liouville_reference, run_stationary, spread, tv_distance, z_scores, SweepBudget,
};
use leafdiff_core::{
    Error, FlowParams, FuchsianGroup, Grid, MetricKind, MetricModel, StationaryConfig,
};

use crate::config::ExperimentConfig;

/// Criterion recorded in the run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

/// Files to write, keyed by suffix (`csv`, `json`, `centers.csv`, …), plus checks.
/// A command whose report is worth keeping even when it fails sets `failure`.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub failure: Option<Error>,
}

impl Outcome {
    fn json(&mut self, value: serde_json::Value) {
        let mut text = serde_json::to_string_pretty(&value).expect("JSON serializes");
        text.push('\n');
        self.files.push(("json".into(), text));
    }

    fn csv(&mut self, suffix: &str, text: String) {
        self.files.push((suffix.into(), text));
    }
}

pub fn metric(cfg: &ExperimentConfig) -> Result<Arc<MetricModel>, Error> {
    let group = Arc::new(FuchsianGroup::octagon()?);
    let m = &cfg.metric;
    Ok(Arc::new(match m.kind {
        MetricKind::Constant => MetricModel::constant(group),
        MetricKind::Perturbed => MetricModel::perturbed(group, m.amplitude, m.width, m.cutoff)?,
    }))
}

fn flow_params(cfg: &ExperimentConfig, metric: Arc<MetricModel>) -> Result<FlowParams, Error> {
    match (cfg.flow.rho, cfg.flow.epsilon) {
        (Some(rho), _) => FlowParams::from_rho(rho, cfg.flow.step_factor, metric),
        (None, Some(eps)) => FlowParams::from_epsilon(eps, cfg.flow.step_factor, metric),
        (None, None) => Err(Error::InvalidParameter("no rho or epsilon given".into())),
    }
}

fn grid(cfg: &ExperimentConfig, metric: &MetricModel) -> Result<Grid, Error> {
    let [nx, ny, nv] = cfg.run.grid;
    Grid::for_group(metric.group(), nx, ny, nv)
}

fn stationary_config(cfg: &ExperimentConfig, grid: Grid) -> StationaryConfig {
    let r = &cfg.run;
    StationaryConfig { n_traj: r.n_traj, n_steps: r.n_steps, burn_in: r.burn_in, sample_every: r.sample_every, grid }
}

/// `ρ` as JSON, `null` for the deterministic flow.
fn rho_json(rho: f64) -> serde_json::Value {
    if rho.is_finite() {
        json!(rho)
    } else {
        serde_json::Value::Null
    }
}

pub fn check_geometry(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let metric = metric(cfg)?;
    let audit = geometry_audit(&metric)?;
    let mut out = Outcome::default();
    out.json(json!({ "metric": cfg.metric, "checks": audit, "seed": cfg.seed }));
    out.checks = audit.iter().map(|c| Check::new(&c.name, c.passed, format!("{} {}", c.value, c.condition))).collect();
    out.failure = first_failure(&audit).err();
    Ok(out)
}

pub fn stationary(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let metric = metric(cfg)?;
    let p = flow_params(cfg, metric.clone())?;
    let grid = grid(cfg, &metric)?;
    let run = run_stationary(&p, &stationary_config(cfg, grid), cfg.seed)?;
    let reference = liouville_reference(&metric, &grid);
    let tv = tv_distance(&run.histogram, &reference)?;
    let chi = chi_square(&run.histogram, &reference, run.effective_samples)?;
    let z_spread = spread(&z_scores(&run.histogram, &reference, run.effective_samples)?);

    let mut csv = String::from("ix,iy,iv,mass_emp,mass_ref\n");
    let (emp, refm) = (run.histogram.masses(), reference.masses());
    for idx in 0..grid.n_cells() {
        if run.histogram.is_masked(idx) {
            let (ix, iy, iv) = grid.unflatten(idx);
            writeln!(csv, "{ix},{iy},{iv},{:e},{:e}", emp[idx], refm[idx]).unwrap();
        }
    }
    let mut out = Outcome::default();
    out.csv("csv", csv);
    out.json(json!({
        "rho": rho_json(p.rho),
        "epsilon": p.epsilon,
        "tv": tv,
        "chi2": chi.statistic,
        "dof": chi.dof,
        "n_eff": run.effective_samples,
        "n_samples": run.n_samples,
        "autocorrelation_time": run.autocorrelation_time,
        "z_spread": z_spread,
        "seed": cfg.seed,
        "grid": cfg.run.grid,
    }));
    if metric.is_hyperbolic() {
        // the stationary law is exactly Liouville in constant curvature
        out.checks.push(Check::new("tv_below_0.05", tv < 0.05, format!("{tv}")));
        out.checks.push(Check::new("z_spread_in_[0.8,1.3]", (0.8..=1.3).contains(&z_spread), format!("{z_spread}")));
    }
    Ok(out)
}

pub fn sweep(cfg: &ExperimentConfig, rho_list: &[f64]) -> Result<Outcome, Error> {
    let metric = metric(cfg)?;
    let grid = grid(cfg, &metric)?;
    let budget = SweepBudget { run: stationary_config(cfg, grid), step_factor: cfg.flow.step_factor };
    let report = convergence_sweep(metric.clone(), rho_list, &budget, cfg.seed)?;
    let mut csv = String::from("rho,n_samples,effective_samples,autocorrelation_time,tv_to_liouville,chi_square,dof,z_spread\n");
    for r in &report.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.rho, r.n_samples, r.effective_samples, r.autocorrelation_time, r.tv_to_liouville, r.chi_square, r.dof, r.z_spread
        )
        .unwrap();
    }
    let mut out = Outcome::default();
    out.csv("csv", csv);
    out.json(json!({ "rows": report.rows, "seed": cfg.seed, "grid": cfg.run.grid, "metric": cfg.metric }));
    if metric.is_hyperbolic() {
        for r in &report.rows {
            out.checks.push(Check::new(&format!("tv_below_0.05_at_rho_{}", r.rho), r.tv_to_liouville < 0.05, format!("{}", r.tv_to_liouville)));
        }
    } else {
        let tvs: Vec<f64> = report.rows.iter().map(|r| r.tv_to_liouville).collect();
        let inversions = tvs.windows(2).filter(|w| w[1] > w[0]).count();
        out.checks.push(Check::new("tv_non_increasing", inversions == 0, format!("{tvs:?}")));
    }
    Ok(out)
}

pub fn entropy(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let metric = metric(cfg)?;
    let p = flow_params(cfg, metric)?;
    let lyap = lyapunov_spectrum(&p, cfg.entropy.lyapunov_time, cfg.seed)?;
    let report = pesin_gap(&p, &cfg.entropy.bowen(), cfg.entropy.pesin_samples, cfg.seed)?;
    let mut csv = String::from("center,rate\n");
    for (i, r) in report.bowen.per_center.iter().enumerate() {
        writeln!(csv, "{i},{r}").unwrap();
    }
    let mut out = Outcome::default();
    out.csv("centers.csv", csv);
    out.json(json!({
        "rho": rho_json(p.rho),
        "epsilon": p.epsilon,
        "chi1": lyap.chi[0],
        "chi2": lyap.chi[1],
        "pesin_integral": report.pesin.mean,
        "pesin_std_error": report.pesin.std_error,
        "bowen_entropy": report.bowen.value,
        "bowen_std_error": report.bowen.std_error,
        "bowen_min_survivors": report.bowen.min_survivors,
        "approximate_density": report.bowen.approximate_density,
        "gap": report.gap,
        "gap_std_error": report.gap_std_error,
        "params": report.bowen.params,
        "estimator": "Bowen-ball survival with common noise; the partition entropy is not computed",
        "seed": cfg.seed,
    }));
    out.checks.push(Check::new("gap_at_least_-0.15", report.gap >= -0.15, format!("{}", report.gap)));
    out.checks.push(Check::new("bowen_non_negative", report.bowen.value >= 0.0, format!("{}", report.bowen.value)));
    Ok(out)
}

pub fn lyapunov(cfg: &ExperimentConfig) -> Result<Outcome, Error> {
    let metric = metric(cfg)?;
    let p = flow_params(cfg, metric)?;
    let r = lyapunov_spectrum(&p, cfg.entropy.lyapunov_time, cfg.seed)?;
    let sum = r.chi[0] + r.chi[1];
    let mut out = Outcome::default();
    out.json(json!({
        "rho": rho_json(p.rho),
        "epsilon": p.epsilon,
        "chi1": r.chi[0],
        "chi2": r.chi[1],
        "half_width": r.half_width,
        "log_jacobian_rate": r.log_jacobian_rate,
        "log_jacobian_half_width": r.log_jacobian_half_width,
        "n_steps": r.n_steps,
        "total_time": r.total_time,
        "seed": cfg.seed,
    }));
    let agree = (sum - r.log_jacobian_rate).abs() <= 0.02 * r.log_jacobian_rate.abs().max(1e-12);
    out.checks.push(Check::new("exponent_sum_matches_log_jacobian", agree, format!("{sum} vs {}", r.log_jacobian_rate)));
    Ok(out)
}

pub fn converge_flow(cfg: &ExperimentConfig, eps_list: &[f64]) -> Result<Outcome, Error> {
    let metric = metric(cfg)?;
    let rows = zero_noise_convergence(metric, eps_list, cfg.converge.n_states, cfg.flow.step_factor, cfg.seed)?;
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[0].median_distance / w[1].median_distance).collect();
    let mut csv = String::from("epsilon,step,median_distance\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.epsilon, r.step, r.median_distance).unwrap();
    }
    let mut out = Outcome::default();
    out.csv("csv", csv);
    out.json(json!({ "rows": rows, "ratios": ratios, "n_states": cfg.converge.n_states, "seed": cfg.seed }));
    let halvings = rows.windows(2).all(|w| (w[0].epsilon / w[1].epsilon - 2.0).abs() < 1e-12);
    if halvings {
        let ok = ratios.iter().all(|r| (1.5..=2.5).contains(r));
        out.checks.push(Check::new("ratio_per_halving_in_[1.5,2.5]", ok, format!("{ratios:?}")));
    }
    Ok(out)
}
