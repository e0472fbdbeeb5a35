//! Occupation histograms of the leafwise diffusion on the unit tangent bundle of the
//! surface, the Liouville reference, and distances between them.
//!
//! States are binned in the visual chart `(x, v)`: `x` is the reduced point in the
//! bounding box of the fundamental domain and `v` the direction angle of the spray
//! toward `ξ`. Liouville measure is `g`-area times the uniform law in `v`.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::flow::{advance_state, FlowParams, FlowState};
use crate::group::FuchsianGroup;
use crate::hyperbolic::{angle_diff, normalize_angle, visual_boundary, DiskPoint, LineElement, MobiusMap};
use crate::metric::{domain_points, MetricModel};
use crate::noise::{mix_seed, NoiseStream};
use crate::quadrature::radical_inverse;

/// Shortest admissible burn-in, in time units.
pub const MIN_BURN_IN_TIME: f64 = 20.0;
pub const DEFAULT_SAMPLE_EVERY: u64 = 10;
/// Upper cap of the integrated autocorrelation time, in samples.
pub const MAX_AUTOCORRELATION_TIME: f64 = 100.0;
/// Sokal window constant: the summation window `M` is the first with `M ≥ c τ(M)`.
pub const SOKAL_WINDOW: f64 = 5.0;
/// Cells with a smaller expected count are left out of chi-square statistics.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;
/// Default midpoint subsampling of the reference quadrature, per axis.
pub const REFERENCE_SUBSAMPLING: usize = 4;
/// Extra halvings applied to sub-squares that straddle the boundary of the domain.
const BOUNDARY_REFINEMENT: usize = 6;
const MASK_DEPTH: usize = 12;

/// Cells of `[−w, w]² × [0, 2π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nv: usize,
    pub half_width: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nv: usize, half_width: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || nv == 0 {
            return Err(Error::InvalidParameter(format!("grid dimensions must be positive, got {nx}×{ny}×{nv}")));
        }
        if !(half_width > 0.0 && half_width < 1.0) {
            return Err(Error::InvalidParameter(format!("grid half-width must lie in (0, 1), got {half_width}")));
        }
        Ok(Self { nx, ny, nv, half_width })
    }

    /// A grid over the bounding box of the fundamental domain.
    pub fn for_group(group: &FuchsianGroup, nx: usize, ny: usize, nv: usize) -> Result<Self> {
        Self::new(nx, ny, nv, group.bounding_radius())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nv
    }

    pub fn n_spatial(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iv: usize) -> usize {
        (ix * self.ny + iy) * self.nv + iv
    }

    /// `(ix, iy, iv)` of a flat index.
    pub fn unflatten(&self, idx: usize) -> (usize, usize, usize) {
        (idx / (self.ny * self.nv), (idx / self.nv) % self.ny, idx % self.nv)
    }

    /// `(x0, x1, y0, y1)` of a spatial cell.
    pub fn cell_bounds(&self, ix: usize, iy: usize) -> (f64, f64, f64, f64) {
        let (w, h) = (2.0 * self.half_width / self.nx as f64, 2.0 * self.half_width / self.ny as f64);
        let x0 = -self.half_width + ix as f64 * w;
        let y0 = -self.half_width + iy as f64 * h;
        (x0, x0 + w, y0, y0 + h)
    }

    /// Cell of a chart point and direction; points on or beyond the box edge go to the edge cells.
    #[inline]
    pub fn locate(&self, x: C64, v: f64) -> usize {
        let coord = |t: f64, n: usize| {
            let f = (t + self.half_width) / (2.0 * self.half_width) * n as f64;
            (f.max(0.0) as usize).min(n - 1)
        };
        let iv = ((normalize_angle(v) / TAU * self.nv as f64) as usize).min(self.nv - 1);
        self.index(coord(x.re, self.nx), coord(x.im, self.ny), iv)
    }
}

/// Bins over a [`Grid`] with the mask of spatial cells that meet the fundamental domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram3D {
    pub grid: Grid,
    bins: Vec<f64>,
    mask: Vec<bool>,
    total: f64,
}

impl Histogram3D {
    pub fn empty(grid: Grid, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), grid.n_spatial());
        Self { grid, bins: vec![0.0; grid.n_cells()], mask, total: 0.0 }
    }

    /// An empty histogram masked to the fundamental domain of `group`.
    pub fn for_domain(group: &FuchsianGroup, grid: Grid) -> Self {
        Self::empty(grid, domain_mask(group, &grid))
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn is_masked(&self, idx: usize) -> bool {
        self.mask[idx / self.grid.nv]
    }

    #[inline]
    pub fn add(&mut self, idx: usize, weight: f64) {
        self.bins[idx] += weight;
        self.total += weight;
    }

    /// Weight that fell outside the masked cells; zero for histograms of reduced states.
    pub fn unmasked_weight(&self) -> f64 {
        self.bins.iter().enumerate().filter(|(i, _)| !self.is_masked(*i)).map(|(_, b)| b).sum()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        if self.mask != other.mask {
            return Err(Error::GridMismatch("masks differ".into()));
        }
        Ok(())
    }

    /// Adds the bins of `other`. Exact, hence order-independent, for integer counts.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// Cell masses normalized to total 1 (all zero for an empty histogram).
    pub fn masses(&self) -> Vec<f64> {
        if self.total == 0.0 {
            return vec![0.0; self.bins.len()];
        }
        self.bins.iter().map(|b| b / self.total).collect()
    }

    /// Normalized mass of each direction bin.
    pub fn direction_marginal(&self) -> Vec<f64> {
        let nv = self.grid.nv;
        let mut out = vec![0.0; nv];
        for (i, m) in self.masses().iter().enumerate() {
            out[i % nv] += m;
        }
        out
    }
}

/// Disks `{|z − c/|c|²|² < 1/|c|² − 1}` whose union with the outside of the unit disk
/// is the complement of the Dirichlet domain: `d(z, 0) > d(z, c)` exactly inside them.
fn bisector_disks(group: &FuchsianGroup) -> Vec<(C64, f64)> {
    group
        .centers()
        .iter()
        .map(|c| {
            let n2 = c.norm_sqr();
            (c / n2, (1.0 / n2 - 1.0).sqrt())
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Cover {
    Inside,
    Outside,
    Straddles,
}

/// Classifies a rectangle (center, half sides) against the fundamental domain.
fn classify(disks: &[(C64, f64)], center: C64, hw: f64, hh: f64) -> Cover {
    let reach = hw.hypot(hh);
    let r0 = center.norm();
    if r0 - reach >= 1.0 {
        return Cover::Outside;
    }
    let mut inside = r0 + reach < 1.0;
    for &(c, r) in disks {
        let d = (center - c).norm();
        if d + reach <= r {
            return Cover::Outside;
        }
        if d - reach < r {
            inside = false;
        }
    }
    if inside {
        Cover::Inside
    } else {
        Cover::Straddles
    }
}

const QUADRANTS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)];

fn rect_meets_domain(group: &FuchsianGroup, disks: &[(C64, f64)], center: C64, hw: f64, hh: f64, depth: usize) -> bool {
    match classify(disks, center, hw, hh) {
        Cover::Inside => return true,
        Cover::Outside => return false,
        Cover::Straddles => {}
    }
    let probes = std::iter::once(center).chain(QUADRANTS.iter().map(|(a, b)| center + C64::new(a * hw, b * hh)));
    if probes.into_iter().any(|z| z.norm_sqr() < 1.0 && group.contains_c(z)) {
        return true;
    }
    if depth == 0 {
        return false;
    }
    let (qw, qh) = (hw / 2.0, hh / 2.0);
    QUADRANTS
        .iter()
        .any(|(a, b)| rect_meets_domain(group, disks, center + C64::new(a * qw, b * qh), qw, qh, depth - 1))
}

/// Which spatial cells of the grid meet the fundamental domain.
pub fn domain_mask(group: &FuchsianGroup, grid: &Grid) -> Vec<bool> {
    let disks = bisector_disks(group);
    (0..grid.n_spatial())
        .map(|s| {
            let (x0, x1, y0, y1) = grid.cell_bounds(s / grid.ny, s % grid.ny);
            let center = C64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1));
            rect_meets_domain(group, &disks, center, 0.5 * (x1 - x0), 0.5 * (y1 - y0), MASK_DEPTH)
        })
        .collect()
}

/// `∫ f · 1_F` over a rectangle by the midpoint rule on an `n × n` subgrid; sub-rectangles
/// crossing the boundary of `F` are halved further, up to [`BOUNDARY_REFINEMENT`] times.
fn masked_integral<F: Fn(C64) -> f64>(
    group: &FuchsianGroup,
    disks: &[(C64, f64)],
    bounds: (f64, f64, f64, f64),
    n: usize,
    f: &F,
) -> f64 {
    fn piece<F: Fn(C64) -> f64>(
        group: &FuchsianGroup,
        disks: &[(C64, f64)],
        center: C64,
        hw: f64,
        hh: f64,
        depth: usize,
        f: &F,
    ) -> f64 {
        let area = 4.0 * hw * hh;
        match classify(disks, center, hw, hh) {
            Cover::Inside => return f(center) * area,
            Cover::Outside => return 0.0,
            Cover::Straddles => {}
        }
        if depth == 0 {
            return if center.norm_sqr() < 1.0 && group.contains_c(center) { f(center) * area } else { 0.0 };
        }
        let (qw, qh) = (hw / 2.0, hh / 2.0);
        QUADRANTS
            .iter()
            .map(|(a, b)| piece(group, disks, center + C64::new(a * qw, b * qh), qw, qh, depth - 1, f))
            .sum()
    }
    let (x0, x1, y0, y1) = bounds;
    let (hw, hh) = ((x1 - x0) / (2 * n) as f64, (y1 - y0) / (2 * n) as f64);
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let center = C64::new(x0 + (2 * a + 1) as f64 * hw, y0 + (2 * b + 1) as f64 * hh);
            total += piece(group, disks, center, hw, hh, BOUNDARY_REFINEMENT, f);
        }
    }
    total
}

/// Normalized Liouville measure on the grid: `g`-area of each cell's part of the
/// fundamental domain, times the uniform law in direction.
pub fn liouville_reference(metric: &MetricModel, grid: &Grid) -> Histogram3D {
    liouville_reference_with(metric, grid, REFERENCE_SUBSAMPLING)
}

pub fn liouville_reference_with(metric: &MetricModel, grid: &Grid, subsampling: usize) -> Histogram3D {
    let group = metric.group();
    let disks = bisector_disks(group);
    let mut h = Histogram3D::for_domain(group, *grid);
    let weight = |z: C64| metric.liouville_weight(DiskPoint { re: z.re, im: z.im });
    let areas: Vec<f64> = (0..grid.n_spatial())
        .into_par_iter()
        .map(|s| {
            if !h.mask[s] {
                return 0.0;
            }
            masked_integral(group, &disks, grid.cell_bounds(s / grid.ny, s % grid.ny), subsampling, &weight)
        })
        .collect();
    let total: f64 = areas.iter().sum();
    for (s, a) in areas.iter().enumerate() {
        for iv in 0..grid.nv {
            h.add(s * grid.nv + iv, a / total / grid.nv as f64);
        }
    }
    h
}

/// Stationary law of the flow at `ρ = 0` for a perturbed metric. The generator
/// `Δ_g = e^{−2φ} Δ_hyp` is a time change of hyperbolic Brownian motion, whose
/// stationary law is hyperbolic area times the uniform law of `ξ` seen from `x`
/// under the hyperbolic visual map. Weighting by the time change gives `g`-area times
/// the uniform law of the hyperbolic visual angle; the mass of a bin `[a, b]` of
/// `g`-directions is then `(w(b) − w(a)) / 2π`, with `w(v)` the hyperbolic visual angle
/// of the endpoint of the `g`-geodesic leaving in direction `v`.
pub fn harmonic_reference_at_zero(metric: &MetricModel, grid: &Grid) -> Histogram3D {
    let group = metric.group();
    let disks = bisector_disks(group);
    let mut h = Histogram3D::for_domain(group, *grid);
    let nv = grid.nv;
    let edges: Vec<f64> = (0..=nv).map(|k| TAU * k as f64 / nv as f64).collect();
    let masses: Vec<Vec<f64>> = (0..grid.n_spatial())
        .into_par_iter()
        .map(|s| {
            if !h.mask[s] {
                return vec![0.0; nv];
            }
            let bounds = grid.cell_bounds(s / grid.ny, s % grid.ny);
            (0..nv)
                .map(|iv| {
                    let f = |z: C64| {
                        let w = metric.liouville_weight(DiskPoint { re: z.re, im: z.im });
                        let (a, b) = (edges[iv], edges[iv + 1]);
                        let width = if metric.is_hyperbolic() {
                            b - a
                        } else {
                            let table = metric.spray_table();
                            let shift = |v: f64| angle_diff(table.hyperbolic_angle(z, v), v);
                            (b - a) + shift(b) - shift(a)
                        };
                        w * width / TAU
                    };
                    masked_integral(group, &disks, bounds, REFERENCE_SUBSAMPLING, &f)
                })
                .collect()
        })
        .collect();
    let total: f64 = masses.iter().flatten().sum();
    for (s, row) in masses.iter().enumerate() {
        for (iv, m) in row.iter().enumerate() {
            h.add(s * nv + iv, m / total);
        }
    }
    h
}

/// Sampling plan of [`run_stationary`]. Step counts are per trajectory; `n_steps` includes the burn-in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryConfig {
    pub n_traj: usize,
    pub n_steps: u64,
    pub burn_in: u64,
    pub sample_every: u64,
    pub grid: Grid,
}

impl StationaryConfig {
    pub fn samples_per_trajectory(&self) -> u64 {
        if self.n_steps <= self.burn_in {
            return 0;
        }
        (self.n_steps - self.burn_in).div_ceil(self.sample_every)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRun {
    pub histogram: Histogram3D,
    pub n_samples: u64,
    /// Integrated autocorrelation time of the test observable, in samples.
    pub autocorrelation_time: f64,
    pub effective_samples: f64,
}

/// Integer autocorrelation sums of a ±1 series, which add exactly across trajectories.
#[derive(Debug, Clone, Default)]
struct LagSums {
    n: i64,
    sum: i64,
    /// `Σ_t o_t o_{t+k}`, and `Σ_{t < n−k} o_t + Σ_{t ≥ k} o_t`, per lag `k`.
    products: Vec<i64>,
    ends: Vec<i64>,
    /// Number of pairs at each lag.
    pairs: Vec<i64>,
}

impl LagSums {
    fn from_series(series: &[i8], max_lag: usize) -> Self {
        let n = series.len();
        let lags = max_lag.min(n.saturating_sub(1)) + 1;
        let sum: i64 = series.iter().map(|&o| o as i64).sum();
        let mut products = vec![0i64; max_lag + 1];
        let mut ends = vec![0i64; max_lag + 1];
        let mut pairs = vec![0i64; max_lag + 1];
        let (mut head_drop, mut tail_drop) = (0i64, 0i64);
        for k in 0..lags {
            if k > 0 {
                tail_drop += series[n - k] as i64;
                head_drop += series[k - 1] as i64;
            }
            products[k] = series[..n - k].iter().zip(&series[k..]).map(|(&a, &b)| (a * b) as i64).sum();
            ends[k] = (sum - tail_drop) + (sum - head_drop);
            pairs[k] = (n - k) as i64;
        }
        Self { n: n as i64, sum, products, ends, pairs }
    }

    fn add(&mut self, other: &Self) {
        if self.products.is_empty() {
            *self = other.clone();
            return;
        }
        self.n += other.n;
        self.sum += other.sum;
        for k in 0..self.products.len() {
            self.products[k] += other.products[k];
            self.ends[k] += other.ends[k];
            self.pairs[k] += other.pairs[k];
        }
    }

    /// Sokal-windowed integrated autocorrelation time, clamped to `[1, cap]`.
    fn integrated_time(&self) -> f64 {
        if self.n < 2 || self.products.is_empty() {
            return 1.0;
        }
        let mean = self.sum as f64 / self.n as f64;
        let cov = |k: usize| {
            let p = self.pairs[k] as f64;
            if p == 0.0 {
                return 0.0;
            }
            (self.products[k] as f64 - mean * self.ends[k] as f64 + mean * mean * p) / p
        };
        let c0 = cov(0);
        if c0 <= 0.0 {
            return 1.0;
        }
        let mut tau = 1.0;
        for k in 1..self.products.len() {
            if self.pairs[k] == 0 {
                break;
            }
            tau += 2.0 * cov(k) / c0;
            if k as f64 >= SOKAL_WINDOW * tau {
                break;
            }
        }
        tau.clamp(1.0, MAX_AUTOCORRELATION_TIME)
    }
}

/// Test observable for the autocorrelation estimate: the checkerboard sign of the cell.
#[inline]
fn checkerboard(grid: &Grid, idx: usize) -> i8 {
    let (ix, iy, iv) = grid.unflatten(idx);
    if (ix + iy + iv) % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Initial state of trajectory `i`: a quasi-random point of the domain and direction.
pub fn initial_state(points: &[C64], i: usize) -> LineElement {
    let x = DiskPoint::from_complex(points[i]);
    let v = TAU * radical_inverse(i as u64 + 1, 5);
    LineElement::new(x, visual_boundary(x, v))
}

/// Approximately stationary state: quasi-random initial state `index` advanced through
/// [`MIN_BURN_IN_TIME`] with the noise stream `seed`.
pub fn burned_in_state(p: &FlowParams, index: usize, seed: u64) -> Result<FlowState> {
    let group = p.metric.group();
    let points = domain_points(group, index + 1);
    let start = group.reduce(initial_state(&points, index))?;
    let state = FlowState { element: start.element, lift: MobiusMap::IDENTITY };
    let steps = (MIN_BURN_IN_TIME / p.step).ceil() as u64;
    let mut stream = NoiseStream::new(seed, p.noise_variance(), 0);
    let end = advance_state(p, state, (0..steps).map(|_| stream.next_increment()), |_, _| {})?;
    // later estimates work in the chart of the stationary state itself
    Ok(FlowState { element: end.element, lift: MobiusMap::IDENTITY })
}

struct Tally {
    counts: Vec<u64>,
    lags: LagSums,
}

fn run_trajectory(p: &FlowParams, cfg: &StationaryConfig, seed: u64, start: LineElement) -> Result<Tally> {
    let grid = &cfg.grid;
    let metric = &p.metric;
    let reduced = metric.group().reduce(start)?;
    let state = FlowState { element: reduced.element, lift: reduced.applied };
    let stream = NoiseStream::new(seed, p.noise_variance(), 0);
    let mut counts = vec![0u64; grid.n_cells()];
    let mut series = Vec::with_capacity(cfg.samples_per_trajectory() as usize);
    let mut stream = stream;
    advance_state(p, state, (0..cfg.n_steps).map(|_| stream.next_increment()), |k, s| {
        if k >= cfg.burn_in && (k - cfg.burn_in).is_multiple_of(cfg.sample_every) {
            let x = s.element.x.z();
            let idx = grid.locate(x, metric.spray_angle(x, s.element.xi));
            counts[idx] += 1;
            series.push(checkerboard(grid, idx));
        }
    })?;
    let max_lag = (SOKAL_WINDOW * MAX_AUTOCORRELATION_TIME) as usize;
    Ok(Tally { lags: LagSums::from_series(&series, max_lag), counts })
}

/// Occupation histogram of `n_traj` independent trajectories started from quasi-random
/// states, after discarding the burn-in. Trajectory `i` uses the noise stream
/// `mix_seed(master_seed, i)`, so the result does not depend on the number of workers.
pub fn run_stationary(p: &FlowParams, cfg: &StationaryConfig, master_seed: u64) -> Result<StationaryRun> {
    p.metric.check_coercive(p.rho)?;
    if cfg.n_steps <= cfg.burn_in {
        return Err(Error::EmptyHistogram { n_steps: cfg.n_steps, burn_in_steps: cfg.burn_in });
    }
    if (cfg.burn_in as f64) * p.step < MIN_BURN_IN_TIME - 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "burn-in of {} steps is {} time units, below the minimum of {MIN_BURN_IN_TIME}",
            cfg.burn_in,
            cfg.burn_in as f64 * p.step
        )));
    }
    if cfg.n_traj == 0 || cfg.sample_every == 0 {
        return Err(Error::InvalidParameter("n_traj and sample_every must be positive".into()));
    }
    let group = p.metric.group();
    let points = domain_points(group, cfg.n_traj);
    let (counts, lags) = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| run_trajectory(p, cfg, mix_seed(master_seed, i as u64), initial_state(&points, i)))
        .try_fold(
            || (vec![0u64; cfg.grid.n_cells()], LagSums::default()),
            |(mut counts, mut lags), tally| {
                let tally = tally?;
                for (a, b) in counts.iter_mut().zip(&tally.counts) {
                    *a += b;
                }
                lags.add(&tally.lags);
                Ok::<_, Error>((counts, lags))
            },
        )
        .try_reduce(
            || (vec![0u64; cfg.grid.n_cells()], LagSums::default()),
            |(mut a, mut la), (b, lb)| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                la.add(&lb);
                Ok((a, la))
            },
        )?;
    let mut histogram = Histogram3D::for_domain(group, cfg.grid);
    for (idx, c) in counts.iter().enumerate() {
        if *c > 0 {
            histogram.add(idx, *c as f64);
        }
    }
    let n_samples: u64 = counts.iter().sum();
    let tau = lags.integrated_time();
    Ok(StationaryRun { histogram, n_samples, autocorrelation_time: tau, effective_samples: n_samples as f64 / tau })
}

/// `½ Σ |p_i − q_i|` over normalized masses.
pub fn tv_distance(h1: &Histogram3D, h2: &Histogram3D) -> Result<f64> {
    h1.check_compatible(h2)?;
    let (p, q) = (h1.masses(), h2.masses());
    Ok((0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
}

impl ChiSquare {
    /// Upper-tail probability of the statistic.
    pub fn p_value(&self) -> f64 {
        if self.dof == 0 {
            return 1.0;
        }
        match ChiSquared::new(self.dof as f64) {
            Ok(d) => d.sf(self.statistic),
            Err(_) => f64::NAN,
        }
    }

    /// The `level` quantile of the reference distribution.
    pub fn quantile(&self, level: f64) -> f64 {
        match ChiSquared::new(self.dof.max(1) as f64) {
            Ok(d) => d.inverse_cdf(level),
            Err(_) => f64::NAN,
        }
    }
}

/// Pearson statistic of the empirical histogram against the reference, with counts
/// rescaled to `n_eff` effective samples, over cells expecting at least
/// [`MIN_EXPECTED_COUNT`]. `dof` is one less than the number of cells used.
pub fn chi_square(emp: &Histogram3D, reference: &Histogram3D, n_eff: f64) -> Result<ChiSquare> {
    emp.check_compatible(reference)?;
    let (p, q) = (emp.masses(), reference.masses());
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (pi, qi) in p.iter().zip(&q) {
        let expected = n_eff * qi;
        if expected < MIN_EXPECTED_COUNT {
            continue;
        }
        let observed = n_eff * pi;
        statistic += (observed - expected).powi(2) / expected;
        used += 1;
    }
    Ok(ChiSquare { statistic, dof: used.saturating_sub(1) })
}

/// Chi-square of the direction marginal against the reference's.
pub fn direction_chi_square(emp: &Histogram3D, reference: &Histogram3D, n_eff: f64) -> Result<ChiSquare> {
    emp.check_compatible(reference)?;
    let (p, q) = (emp.direction_marginal(), reference.direction_marginal());
    let mut statistic = 0.0;
    for (pi, qi) in p.iter().zip(&q) {
        statistic += n_eff * (pi - qi).powi(2) / qi;
    }
    Ok(ChiSquare { statistic, dof: p.len() - 1 })
}

/// Per-cell standardized deviations `(p − q) / √(q(1 − q)/n_eff)` over cells expecting
/// at least [`MIN_EXPECTED_COUNT`].
pub fn z_scores(emp: &Histogram3D, reference: &Histogram3D, n_eff: f64) -> Result<Vec<f64>> {
    emp.check_compatible(reference)?;
    let (p, q) = (emp.masses(), reference.masses());
    Ok(p.iter()
        .zip(&q)
        .filter(|(_, &qi)| n_eff * qi >= MIN_EXPECTED_COUNT)
        .map(|(pi, qi)| (pi - qi) / (qi * (1.0 - qi) / n_eff).sqrt())
        .collect())
}

/// Sample standard deviation.
pub fn spread(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Sampling budget of a sweep, shared by every `ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepBudget {
    pub run: StationaryConfig,
    pub step_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho: f64,
    pub n_samples: u64,
    pub effective_samples: f64,
    pub autocorrelation_time: f64,
    pub tv_to_liouville: f64,
    pub chi_square: f64,
    pub dof: usize,
    pub z_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Seed of the run at a given `ρ`, independent of the order of the sweep list.
pub fn rho_seed(master_seed: u64, rho: f64) -> u64 {
    mix_seed(master_seed, rho.to_bits())
}

/// Stationary runs for each `ρ` compared with the Liouville reference, rows sorted by
/// `ρ` descending.
pub fn convergence_sweep(
    metric: Arc<MetricModel>,
    rho_list: &[f64],
    budget: &SweepBudget,
    master_seed: u64,
) -> Result<SweepReport> {
    for &rho in rho_list {
        metric.check_coercive(rho)?;
    }
    let reference = liouville_reference(&metric, &budget.run.grid);
    let mut rhos = rho_list.to_vec();
    rhos.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::with_capacity(rhos.len());
    for rho in rhos {
        let p = FlowParams::from_rho(rho, budget.step_factor, metric.clone())?;
        let run = run_stationary(&p, &budget.run, rho_seed(master_seed, rho))?;
        let chi = chi_square(&run.histogram, &reference, run.effective_samples)?;
        let z = z_scores(&run.histogram, &reference, run.effective_samples)?;
        rows.push(SweepRow {
            rho,
            n_samples: run.n_samples,
            effective_samples: run.effective_samples,
            autocorrelation_time: run.autocorrelation_time,
            tv_to_liouville: tv_distance(&run.histogram, &reference)?,
            chi_square: chi.statistic,
            dof: chi.dof,
            z_spread: spread(&z),
        });
    }
    Ok(SweepReport { rows })
}
