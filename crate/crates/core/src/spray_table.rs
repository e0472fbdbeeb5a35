//! Interpolated geodesic spray for the perturbed metric.
//!
//! For a chart point `x` and initial direction `v`, let `E(x, v)` be the boundary
//! endpoint of the `g`-geodesic. The table stores the small correction
//! `Δ(x, v) = v_h(x, E(x, v)) − v`, where `v_h` is the hyperbolic direction toward
//! a boundary point, and the correction of the inverse map, `Δ⁻(x, w) = v − w` where
//! `w = v + Δ(x, v)`. The spray toward `ξ` is then `w + Δ⁻(x, w)` with `w = v_h(x, ξ)`.
//!
//! The metric is invariant under rotation by π/4, so only one sector of polar
//! coordinates is tabulated. Interpolation is Catmull–Rom in all three axes. The
//! boundary correspondence of two negatively curved metrics is only Hölder
//! continuous, so interpolation errors are of order 10⁻³ rad at this resolution.

use std::f64::consts::{FRAC_PI_4, TAU};

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::hyperbolic::{angle_diff, normalize_angle, visual_angle, BoundaryPoint, DiskPoint};
use crate::metric::MetricModel;

/// Table resolution and the integration step used to fill it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableResolution {
    pub radial: usize,
    pub angular: usize,
    pub directions: usize,
    pub max_radius: f64,
    pub step: f64,
}

impl Default for TableResolution {
    fn default() -> Self {
        Self { radial: 40, angular: 10, directions: 64, max_radius: 0.86, step: 0.02 }
    }
}

#[derive(Debug, Clone)]
pub struct SprayTable {
    res: TableResolution,
    dr: f64,
    da: f64,
    dv: f64,
    /// Rows `0..=radial + 2`, so interpolation near `max_radius` has its stencil.
    rows: usize,
    data: Vec<f64>,
    /// `data` with one ghost layer below and wrapped ghost layers around the
    /// angular and direction axes, so a stencil is plain indexing.
    padded: Vec<f64>,
    /// The inverse correction `Δ⁻`, padded the same way.
    inverse: Vec<f64>,
}

struct Stencil {
    rows: [usize; 16],
    weights: [f64; 16],
    shift: f64,
}

#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

#[inline]
fn catmull_rom_slope(t: f64) -> [f64; 4] {
    let t2 = t * t;
    [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ]
}

impl SprayTable {
    pub fn build(metric: &MetricModel) -> Self {
        Self::build_with(metric, TableResolution::default())
    }

    pub fn build_with(metric: &MetricModel, res: TableResolution) -> Self {
        assert!(res.directions.is_multiple_of(8), "direction count must be a multiple of 8");
        let rows = res.radial + 3;
        let dr = res.max_radius / res.radial as f64;
        let da = FRAC_PI_4 / res.angular as f64;
        let dv = TAU / res.directions as f64;
        let per_row = res.angular * res.directions;
        let data: Vec<f64> = (0..rows * per_row)
            .into_par_iter()
            .map(|idx| {
                let i = idx / per_row;
                let j = (idx / res.directions) % res.angular;
                let k = idx % res.directions;
                let x = C64::from_polar(i as f64 * dr, j as f64 * da);
                let v = k as f64 * dv;
                match metric.shoot(x, v, res.step) {
                    Ok(end) => angle_diff(visual_angle(DiskPoint::from_complex(x), end), v),
                    Err(_) => f64::NAN,
                }
            })
            .collect();
        let mut table = Self { res, dr, da, dv, rows, data, padded: Vec::new(), inverse: Vec::new() };
        table.padded = table.pad(&table.data);
        let inverse = table.invert_rows();
        table.inverse = table.pad(&inverse);
        table
    }

    fn padded_dims(&self) -> (usize, usize, usize) {
        (self.rows + 1, self.res.angular + 3, self.res.directions + 3)
    }

    fn pad(&self, data: &[f64]) -> Vec<f64> {
        let (pr, pa, pv) = self.padded_dims();
        let mut padded = vec![0.0; pr * pa * pv];
        for i in 0..pr {
            for j in 0..pa {
                for k in 0..pv {
                    padded[(i * pa + j) * pv + k] = self.get(data, i as isize - 1, j as isize - 1, k as isize - 1);
                }
            }
        }
        padded
    }

    /// `Δ⁻` at the nodes, by inverting the interpolated forward map at each node point.
    fn invert_rows(&self) -> Vec<f64> {
        let (na, nv) = (self.res.angular, self.res.directions);
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..na {
                let st = self.node_stencil(i, j);
                for k in 0..nv {
                    let w = k as f64 * self.dv;
                    let v = self.solve(&self.padded, &st, w);
                    out[(i * na + j) * nv + k] = angle_diff(v, w);
                }
            }
        }
        out
    }

    pub fn max_radius(&self) -> f64 {
        self.res.max_radius
    }

    pub fn resolution(&self) -> TableResolution {
        self.res
    }

    /// Largest `|Δ|` over the table.
    pub fn max_correction(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, d| m.max(d.abs()))
    }

    #[inline]
    fn get(&self, data: &[f64], i: isize, j: isize, k: isize) -> f64 {
        let (na, nv) = (self.res.angular as isize, self.res.directions as isize);
        let (mut i, mut k) = (i, k);
        if i < 0 {
            // −x is x rotated by π
            i = -i;
            k += nv / 2;
        }
        let i = (i as usize).min(self.rows - 1);
        let wraps = j.div_euclid(na);
        let j = j.rem_euclid(na) as usize;
        // a point one sector over is this one rotated by π/4, directions rotated along
        let k = (k - wraps * (nv / 8)).rem_euclid(nv) as usize;
        data[(i * self.res.angular + j) * self.res.directions + k]
    }

    /// Stencil that reads the direction row of node `(i, j)` unweighted.
    fn node_stencil(&self, i: usize, j: usize) -> Stencil {
        let (_, pa, pv) = self.padded_dims();
        let row = ((i + 1) * pa + j + 1) * pv;
        let mut weights = [0.0; 16];
        weights[0] = 1.0;
        Stencil { rows: [row; 16], weights, shift: 0.0 }
    }

    /// Position-dependent part of an interpolation: the 16 radial-angular stencil
    /// rows with their weights, and the sector rotation.
    #[inline]
    fn stencil(&self, x: C64) -> Stencil {
        let r = x.norm_sqr().sqrt();
        let a = if r > 0.0 { normalize_angle(x.im.atan2(x.re)) } else { 0.0 };
        let sector = (a / FRAC_PI_4).floor().min(7.0);
        let alpha = a - sector * FRAC_PI_4;
        let fr = r / self.dr;
        let fa = alpha / self.da;
        let (ir, ia) = (fr.floor(), fa.floor());
        let wr = catmull_rom(fr - ir);
        let wa = catmull_rom(fa - ia);
        let (_, pa, pv) = self.padded_dims();
        let pr = self.rows + 1;
        // stencil rows ir-1..ir+2 sit at padded rows ir..ir+3
        let ir = (ir as usize).min(pr - 4);
        let ia = (ia as usize).min(self.res.angular - 1);
        let mut rows = [0usize; 16];
        let mut weights = [0.0; 16];
        for p in 0..4 {
            for q in 0..4 {
                rows[4 * p + q] = ((ir + p) * pa + ia + q) * pv;
                weights[4 * p + q] = wr[p] * wa[q];
            }
        }
        Stencil { rows, weights, shift: sector * FRAC_PI_4 }
    }

    #[inline]
    fn eval(&self, table: &[f64], st: &Stencil, v: f64) -> (f64, f64) {
        let v = normalize_angle(v - st.shift);
        let fv = v / self.dv;
        let iv = fv.floor();
        let wv = catmull_rom(fv - iv);
        let sv = catmull_rom_slope(fv - iv);
        let iv = (iv as usize).min(self.res.directions - 1);
        let mut value = 0.0;
        let mut slope = 0.0;
        for (row, w) in st.rows.iter().zip(&st.weights) {
            let d = &table[row + iv..row + iv + 4];
            value += w * (wv[0] * d[0] + wv[1] * d[1] + wv[2] * d[2] + wv[3] * d[3]);
            slope += w * (sv[0] * d[0] + sv[1] * d[1] + sv[2] * d[2] + sv[3] * d[3]);
        }
        (value, slope / self.dv)
    }

    #[inline]
    fn value(&self, table: &[f64], st: &Stencil, v: f64) -> f64 {
        let v = normalize_angle(v - st.shift);
        let fv = v / self.dv;
        let iv = fv.floor();
        let wv = catmull_rom(fv - iv);
        let iv = (iv as usize).min(self.res.directions - 1);
        let mut value = 0.0;
        for (row, w) in st.rows.iter().zip(&st.weights) {
            let d = &table[row + iv..row + iv + 4];
            value += w * (wv[0] * d[0] + wv[1] * d[1] + wv[2] * d[2] + wv[3] * d[3]);
        }
        value
    }

    /// Root `v` of `v + D(x, v) = target` for the interpolated correction `D` in `table`.
    fn solve(&self, table: &[f64], st: &Stencil, target: f64) -> f64 {
        let mut v = target - self.eval(table, st, target).0;
        for _ in 0..30 {
            let (d, dd) = self.eval(table, st, v);
            let delta = angle_diff(v + d, target) / (1.0 + dd);
            v -= delta;
            if delta.abs() < 1e-13 {
                break;
            }
        }
        normalize_angle(v)
    }

    /// `Δ(x, v)` and `∂Δ/∂v`.
    pub fn correction(&self, x: C64, v: f64) -> (f64, f64) {
        self.eval(&self.padded, &self.stencil(x), v)
    }

    /// `Δ⁻(x, w)` and `∂Δ⁻/∂w`.
    #[inline]
    pub fn inverse_correction(&self, x: C64, w: f64) -> (f64, f64) {
        self.eval(&self.inverse, &self.stencil(x), w)
    }

    /// Chart direction of the `g`-spray at `x` toward `ξ`, for `|x| ≤ max_radius`.
    #[inline]
    pub fn spray_angle(&self, x: C64, xi: BoundaryPoint) -> f64 {
        let w = visual_angle(DiskPoint { re: x.re, im: x.im }, xi);
        normalize_angle(w + self.value(&self.inverse, &self.stencil(x), w))
    }

    /// Hyperbolic visual angle of the boundary point hit by the `g`-geodesic leaving `x`
    /// in direction `v`: the exact inverse of [`SprayTable::spray_angle`] at `x`.
    pub fn hyperbolic_angle(&self, x: C64, v: f64) -> f64 {
        self.solve(&self.inverse, &self.stencil(x), v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::FuchsianGroup;
    use crate::metric::{domain_points, MetricModel};
    use std::sync::Arc;

    fn metric() -> MetricModel {
        MetricModel::perturbed(Arc::new(FuchsianGroup::octagon().unwrap()), 0.1, 0.5, 3).unwrap()
    }

    #[test]
    fn interpolation_reproduces_shooting() {
        let m = metric();
        let table = m.spray_table();
        assert!(table.data.iter().all(|d| d.is_finite()));
        assert!(table.inverse.iter().all(|d| d.is_finite()));
        let mut worst: f64 = 0.0;
        for (n, z) in domain_points(m.group(), 12).into_iter().enumerate() {
            let xi = BoundaryPoint::new(0.37 + 1.9 * n as f64);
            let shot = m.shoot_spray(DiskPoint::from_complex(z), xi).unwrap();
            let fast = table.spray_angle(z, xi);
            worst = worst.max(angle_diff(fast, shot.direction.angle()).abs());
        }
        // Hölder boundary correspondence: the error decays slowly with resolution
        assert!(worst < 5e-3, "table error {worst}");
    }

    #[test]
    fn inverse_round_trip() {
        let m = metric();
        let table = m.spray_table();
        for (n, z) in domain_points(m.group(), 50).into_iter().enumerate() {
            let xi = BoundaryPoint::new(0.1 + 0.77 * n as f64);
            let v = table.spray_angle(z, xi);
            let w = table.hyperbolic_angle(z, v);
            let direct = visual_angle(DiskPoint::from_complex(z), xi);
            assert!(angle_diff(w, direct).abs() < 1e-11);
            // the two interpolants invert each other up to interpolation error
            let (fwd, _) = table.correction(z, v);
            assert!(angle_diff(v + fwd, direct).abs() < 5e-3);
        }
    }

    #[test]
    fn corrections_are_small_but_nonzero() {
        let m = metric();
        let max = m.spray_table().max_correction();
        assert!(max > 1e-3 && max < 0.5, "max correction {max}");
    }

    #[test]
    fn unreduced_queries_are_consistent() {
        let m = metric();
        let z = C64::new(0.1, 0.2);
        let xi = BoundaryPoint::new(2.2);
        let base = m.spray_angle(z, xi);
        for g in &m.group().generators {
            let gz = g.apply_c(z);
            let moved = m.spray_angle(gz, g.apply_boundary(xi));
            let expected = normalize_angle(base + g.derivative(z).arg());
            assert!(angle_diff(moved, expected).abs() < 1e-9);
        }
    }
}
