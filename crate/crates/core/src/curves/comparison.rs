use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::ExprAst;
use crate::numeric::{brent, periodic_grid};

/// Time-independent comparison nonlinearities `g1 = min_t g - 1`,
/// `g2 = max_t g + 1` with tabulated primitives and the energies
/// `H_i = y²/2 + G_i(x)`.
#[derive(Clone, Debug)]
pub struct ComparisonPair {
    pub g: ExprAst,
    pub period: f64,
    pub t_grid: Vec<f64>,
    pub r0: f64,
    /// Smallest audited energy whose level sets are star-shaped and clear
    /// the disc of radius² `r0² + 1`.
    pub e0: f64,
    pub x_max: f64,
    xs: Vec<f64>,
    gv: [Vec<f64>; 2],
    cum: [Vec<f64>; 2],
    /// Running maxima of G_i away from 0, for locating the outer crossing.
    run_pos: [Vec<f64>; 2],
    run_neg: [Vec<f64>; 2],
    zero: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonSummary {
    pub r0: f64,
    pub e0: f64,
    pub x_max: f64,
    pub nodes: usize,
    pub t_grid_n: usize,
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let s = (x - x0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
}

impl ComparisonPair {
    fn extremum(&self, x: f64, upper: bool) -> f64 {
        let mut best = if upper { f64::NEG_INFINITY } else { f64::INFINITY };
        for &t in &self.t_grid {
            let v = self.g.eval(t, x, 0.0);
            best = if upper { best.max(v) } else { best.min(v) };
        }
        best
    }

    pub fn g1(&self, x: f64) -> f64 {
        self.extremum(x, false) - 1.0
    }

    pub fn g2(&self, x: f64) -> f64 {
        self.extremum(x, true) + 1.0
    }

    /// `g_i` for `i` in {1, 2}.
    pub fn g_i(&self, i: usize, x: f64) -> f64 {
        if i == 1 {
            self.g1(x)
        } else {
            self.g2(x)
        }
    }

    /// Primitive `G_i(x)` with `G_i(0) = 0`; NaN outside the table.
    pub fn big_g(&self, i: usize, x: f64) -> f64 {
        let k = i - 1;
        let n = self.xs.len();
        if !(x >= self.xs[0] && x <= self.xs[n - 1]) {
            return f64::NAN;
        }
        let j = self.xs.partition_point(|v| *v <= x).clamp(1, n - 1);
        let (a, b) = (j - 1, j);
        if x == self.xs[a] {
            return self.cum[k][a];
        }
        hermite(self.xs[a], self.xs[b], self.cum[k][a], self.cum[k][b], self.gv[k][a], self.gv[k][b], x)
    }

    pub fn energy(&self, i: usize, x: f64, y: f64) -> f64 {
        0.5 * y * y + self.big_g(i, x)
    }

    pub fn disc_radius(&self) -> f64 {
        (self.r0 * self.r0 + 1.0).sqrt()
    }

    /// Outer solution of `G_i(x) = level` with `x` of sign `side`.
    pub fn solve_g(&self, i: usize, level: f64, side: f64) -> Result<f64> {
        let k = i - 1;
        let (run, idx_of): (&Vec<f64>, Box<dyn Fn(usize) -> usize>) = if side > 0.0 {
            (&self.run_pos[k], Box::new(|m| self.zero + m))
        } else {
            (&self.run_neg[k], Box::new(|m| self.zero - m))
        };
        let m = run.partition_point(|v| *v <= level);
        if m == 0 || m >= run.len() {
            return Err(Error::RootBracket(format!(
                "G{i} = {level:e} has no solution with sign {side} inside |x| <= {}",
                self.x_max
            )));
        }
        let (a, b) = (self.xs[idx_of(m - 1)], self.xs[idx_of(m)]);
        brent(|x| self.big_g(i, x) - level, a, b, 1e-14 * a.abs().max(b.abs()).max(1.0))
    }

    /// Radius along angle `phi` (modified polar convention) where `H_i = level`.
    pub fn ray_radius(&self, i: usize, level: f64, phi: f64) -> Result<f64> {
        let (s, c) = phi.sin_cos();
        let h = |r: f64| 0.5 * r * r * c * c + self.big_g(i, r * s) - level;
        let mut lo = self.disc_radius();
        if !(h(lo) < 0.0) {
            lo = 0.0;
        }
        let r_cap = if s.abs() > 1e-300 { self.x_max / s.abs() * (1.0 - 1e-12) } else { f64::INFINITY };
        let mut hi = (lo * 2.0).max((2.0 * level.max(0.0)).sqrt()).max(1.0).min(r_cap);
        let mut fh = h(hi);
        while fh < 0.0 {
            if hi >= r_cap {
                return Err(Error::RootBracket(format!(
                    "level H{i} = {level:e} exceeds the table along phi = {phi}"
                )));
            }
            lo = hi;
            hi = (hi * 2.0).min(r_cap);
            fh = h(hi);
        }
        if !fh.is_finite() {
            return Err(Error::RootBracket(format!("non-finite energy along phi = {phi}")));
        }
        brent(h, lo, hi, 1e-13 * hi)
    }

    /// Along each sampled ray, the energy crosses `level` once outside the
    /// disc and increases from there on.
    fn star_shaped_at(&self, level: f64, n_rays: usize) -> bool {
        let rd = self.disc_radius();
        for i in [1, 2] {
            for j in 0..n_rays {
                let phi = 2.0 * PI * j as f64 / n_rays as f64;
                let (s, c) = phi.sin_cos();
                let h = |r: f64| 0.5 * r * r * c * c + self.big_g(i, r * s);
                if !(h(rd) < level) {
                    return false;
                }
                let cap = if s.abs() > 1e-12 { 0.999 * self.x_max / s.abs() } else { f64::INFINITY };
                let r_end = cap.min(1e3 * rd.max((2.0 * level).sqrt()));
                let n = 512;
                let ratio = (r_end / rd).powf(1.0 / n as f64);
                let mut r = rd;
                let mut prev = h(r);
                let mut crossed = false;
                for _ in 0..n {
                    r *= ratio;
                    let v = h(r);
                    if crossed && !(v > prev) {
                        return false;
                    }
                    if !crossed && v >= level {
                        crossed = true;
                    }
                    prev = v;
                }
            }
        }
        true
    }

    pub fn summary(&self) -> ComparisonSummary {
        ComparisonSummary {
            r0: self.r0,
            e0: self.e0,
            x_max: self.x_max,
            nodes: self.xs.len(),
            t_grid_n: self.t_grid.len(),
        }
    }
}

/// Tabulate the comparison pair for the scalar nonlinearity `g` on
/// `|x| <= x_range` and find `E0` for the disc of radius² `r0² + 1`.
pub fn build_comparison(g: &ExprAst, period: f64, t_grid_n: usize, x_range: f64, r0: f64) -> Result<ComparisonPair> {
    if t_grid_n < 64 {
        return Err(Error::Config(format!("t grid needs at least 64 points, got {t_grid_n}")));
    }
    // Even counts include the half period, where cos-type forcing is extremal.
    let n_t = t_grid_n + t_grid_n % 2;
    let t_grid = periodic_grid(period, n_t);
    let mut pos = vec![0.0];
    while *pos.last().unwrap() < x_range {
        let x: f64 = *pos.last().unwrap();
        pos.push((x + 1e-3 * x.max(1.0)).min(x_range));
    }
    let zero = pos.len() - 1;
    let mut xs: Vec<f64> = pos.iter().rev().map(|x| -x).collect();
    xs.extend_from_slice(&pos[1..]);

    let mut pair = ComparisonPair {
        g: g.clone(),
        period,
        t_grid,
        r0,
        e0: f64::NAN,
        x_max: x_range,
        xs: Vec::new(),
        gv: [Vec::new(), Vec::new()],
        cum: [Vec::new(), Vec::new()],
        run_pos: [Vec::new(), Vec::new()],
        run_neg: [Vec::new(), Vec::new()],
        zero,
    };
    let g1: Vec<f64> = xs.iter().map(|&x| pair.g1(x)).collect();
    let g2: Vec<f64> = xs.iter().map(|&x| pair.g2(x)).collect();
    if g1.iter().chain(&g2).any(|v| !v.is_finite()) {
        return Err(Error::Domain("g is not finite on the comparison window".into()));
    }
    let mut cum = [vec![0.0; xs.len()], vec![0.0; xs.len()]];
    for (k, gk) in [&g1, &g2].into_iter().enumerate() {
        for j in zero + 1..xs.len() {
            let (a, b) = (xs[j - 1], xs[j]);
            let mid = pair.g_i(k + 1, 0.5 * (a + b));
            cum[k][j] = cum[k][j - 1] + (b - a) / 6.0 * (gk[j - 1] + 4.0 * mid + gk[j]);
        }
        for j in (0..zero).rev() {
            let (a, b) = (xs[j], xs[j + 1]);
            let mid = pair.g_i(k + 1, 0.5 * (a + b));
            cum[k][j] = cum[k][j + 1] - (b - a) / 6.0 * (gk[j] + 4.0 * mid + gk[j + 1]);
        }
    }
    let running = |v: &[f64], idx: &mut dyn Iterator<Item = usize>| {
        let mut acc = f64::NEG_INFINITY;
        idx.map(|j| {
            acc = acc.max(v[j]);
            acc
        })
        .collect::<Vec<f64>>()
    };
    let n = xs.len();
    pair.run_pos = [
        running(&cum[0], &mut (zero..n)),
        running(&cum[1], &mut (zero..n)),
    ];
    pair.run_neg = [
        running(&cum[0], &mut (0..=zero).rev()),
        running(&cum[1], &mut (0..=zero).rev()),
    ];
    pair.xs = xs;
    pair.gv = [g1, g2];
    pair.cum = cum;
    pair.e0 = find_e0(&pair)?;
    Ok(pair)
}

fn find_e0(pair: &ComparisonPair) -> Result<f64> {
    let rd = pair.disc_radius();
    let mut disc_max = f64::NEG_INFINITY;
    for a in 0..=64 {
        let r = rd * a as f64 / 64.0;
        for b in 0..256 {
            let phi = 2.0 * PI * b as f64 / 256.0;
            let (x, y) = (r * phi.sin(), r * phi.cos());
            disc_max = disc_max.max(pair.energy(1, x, y)).max(pair.energy(2, x, y));
        }
    }
    let mut e = disc_max.max(1e-9) * (1.0 + 1e-6) + 1e-9;
    let ceiling = pair.big_g(1, 0.5 * pair.x_max).min(pair.big_g(1, -0.5 * pair.x_max));
    while e < ceiling {
        if pair.star_shaped_at(e, 256) {
            return Ok(e);
        }
        e *= 1.5;
    }
    Err(Error::E0NotFound(ceiling))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn linear_primitives_are_exact() {
        let p = build_comparison(&parse("x").unwrap(), 2.0 * PI, 64, 50.0, 0.5).unwrap();
        for &x in &[-20.0, -3.3, -0.4, 0.0, 0.7, 2.0, 13.1] {
            assert!((p.g1(x) - (x - 1.0)).abs() < 1e-14);
            assert!((p.big_g(1, x) - (0.5 * x * x - x)).abs() < 1e-10 * (1.0 + x * x));
            assert!((p.big_g(2, x) - (0.5 * x * x + x)).abs() < 1e-10 * (1.0 + x * x));
        }
    }

    #[test]
    fn cubic_upper_primitive() {
        let p = build_comparison(&parse("x^3").unwrap(), 2.0 * PI, 64, 50.0, 1.0).unwrap();
        for &x in &[0.3f64, 1.0, 4.5, 17.0] {
            let exact = x.powi(4) / 4.0 + x;
            assert!((p.big_g(2, x) - exact).abs() < 1e-10 * exact.max(1.0));
        }
    }

    #[test]
    fn forced_duffing_envelopes() {
        let p = build_comparison(&parse("x^3 + 0.5*cos(t)").unwrap(), 2.0 * PI, 64, 50.0, 1.2).unwrap();
        for &x in &[-2.0, 0.0, 1.5] {
            assert!((p.g2(x) - (x * x * x + 1.5)).abs() < 1e-12);
            assert!((p.g1(x) - (x * x * x - 1.5)).abs() < 1e-12);
        }
    }

    #[test]
    fn primitive_ordering() {
        let p = build_comparison(&parse("x^3 + 0.5*cos(t)").unwrap(), 2.0 * PI, 64, 50.0, 1.2).unwrap();
        for j in 1..100 {
            let x = 0.37 * j as f64;
            assert!(p.big_g(1, x) < p.big_g(2, x));
            assert!(p.big_g(1, -x) > p.big_g(2, -x));
            assert!(p.g1(x) < p.g2(x) && p.g1(-x) < p.g2(-x));
        }
    }

    #[test]
    fn level_sets_clear_the_disc() {
        let p = build_comparison(&parse("x^3").unwrap(), 2.0 * PI, 64, 100.0, 1.0).unwrap();
        let rd2 = p.disc_radius().powi(2);
        for i in [1, 2] {
            for j in 0..360 {
                let phi = 2.0 * PI * j as f64 / 360.0;
                let r = p.ray_radius(i, p.e0, phi).unwrap();
                assert!(r * r > rd2);
            }
        }
    }

    #[test]
    fn solve_and_ray_agree() {
        let p = build_comparison(&parse("x").unwrap(), 2.0 * PI, 64, 50.0, 0.5).unwrap();
        let xa = p.solve_g(2, 2.0, -1.0).unwrap();
        assert!((xa - (-1.0 - 5f64.sqrt())).abs() < 1e-10);
        let r = p.ray_radius(2, 2.0, 1.5 * PI).unwrap();
        assert!((r + xa).abs() < 1e-9);
    }

    #[test]
    fn out_of_table_levels_are_errors() {
        let p = build_comparison(&parse("x").unwrap(), 2.0 * PI, 64, 10.0, 0.5).unwrap();
        assert!(matches!(p.solve_g(1, 1e6, 1.0), Err(Error::RootBracket(_))));
    }
}
