//! Graph coordinates, Heisenberg balls, dilations and the lattice charts that
//! carry every field.
//!
//! Lattice layout: axes are `(Re z^1, Im z^1, …, Re z^{n-1}, Im z^{n-1}, x^n)`,
//! flattened with `x^n` fastest. A chart built at radius `ρ` has spacing
//! `√ρ·u` on the `z'` axes and `ρ·u` on the `x^n` axis (`u = 2/(res-1)`), so
//! the lattice at radius `ρ` is exactly the dilation `T_ρ` of the unit
//! lattice and ball membership only depends on integer indices.

use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A point of `M` in graph coordinates; `y^n` is reconstructed on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub zprime: Vec<C64>,
    pub xn: f64,
}

impl Point {
    pub fn new(zprime: Vec<C64>, xn: f64) -> Self {
        Self { zprime, xn }
    }

    pub fn zprime_norm_sq(&self) -> f64 {
        self.zprime.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `y^n = |z'|²` on the hyperquadric.
    pub fn yn(&self) -> f64 {
        self.zprime_norm_sq()
    }

    /// `z^n = x^n + i y^n` on the hyperquadric.
    pub fn zn(&self) -> C64 {
        C64::new(self.xn, self.yn())
    }

    /// Korányi gauge `(|z'|⁴ + (x^n)²)^{1/4}`.
    pub fn koranyi(&self) -> f64 {
        let s = self.zprime_norm_sq();
        (s * s + self.xn * self.xn).sqrt().sqrt()
    }

    /// Membership in the Heisenberg ball `D_ρ`: `|z'|⁴ + (x^n)² ≤ ρ²`.
    pub fn in_ball(&self, rho: f64) -> bool {
        let s = self.zprime_norm_sq();
        s * s + self.xn * self.xn <= rho * rho
    }

    /// Group law of the Heisenberg group in graph coordinates:
    /// `(z, t)·(w, s) = (z + w, t + s + 2 Im ⟨z, w̄⟩)`.
    pub fn group_mul(&self, other: &Point) -> Point {
        let z: Vec<C64> = self.zprime.iter().zip(&other.zprime).map(|(a, b)| a + b).collect();
        let twist: f64 = self
            .zprime
            .iter()
            .zip(&other.zprime)
            .map(|(a, b)| (a * b.conj()).im)
            .sum();
        Point::new(z, self.xn + other.xn + 2.0 * twist)
    }

    pub fn group_inv(&self) -> Point {
        Point::new(self.zprime.iter().map(|z| -z).collect(), -self.xn)
    }
}

/// Non-isotropic dilation `T_κ(z', z^n) = (√κ z', κ z^n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dilation {
    kappa: f64,
}

impl Dilation {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(Error::invalid(format!("dilation scale must be positive, got {kappa}")));
        }
        Ok(Self { kappa })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn apply(&self, p: &Point) -> Point {
        let s = self.kappa.sqrt();
        Point::new(p.zprime.iter().map(|z| z * s).collect(), p.xn * self.kappa)
    }
}

/// `T_κ(p)`.
pub fn dilate(p: &Point, kappa: f64) -> Result<Point> {
    Ok(Dilation::new(kappa)?.apply(p))
}

/// Masked uniform lattice over the bounding box of a Heisenberg ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridChart {
    n: usize,
    resolution: usize,
    /// Radius the lattice was built for; fixes the spacing.
    lattice_rho: f64,
    /// Radius of the current mask (`≤ lattice_rho`).
    rho: f64,
    #[serde(skip)]
    mask: Vec<bool>,
}

impl GridChart {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lattice_rho(&self) -> f64 {
        self.lattice_rho
    }

    /// Number of real graph coordinates, `2n - 1`.
    pub fn dims(&self) -> usize {
        2 * self.n - 1
    }

    /// Total lattice points, masked or not.
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn half(&self) -> i64 {
        (self.resolution as i64 - 1) / 2
    }

    /// Lattice step per axis: `(z-axis step, x-axis step)`.
    pub fn spacing(&self) -> (f64, f64) {
        let u = 1.0 / self.half() as f64;
        (self.lattice_rho.sqrt() * u, self.lattice_rho * u)
    }

    pub fn axis_spacing(&self, axis: usize) -> f64 {
        let (hz, hx) = self.spacing();
        if axis + 1 == self.dims() {
            hx
        } else {
            hz
        }
    }

    /// Volume of one lattice cell.
    pub fn cell_volume(&self) -> f64 {
        let (hz, hx) = self.spacing();
        hz.powi(2 * (self.n as i32 - 1)) * hx
    }

    /// Signed integer offsets from the center, one per axis.
    pub fn multi_index(&self, idx: usize) -> Vec<i64> {
        let d = self.dims();
        let res = self.resolution;
        let mut out = vec![0i64; d];
        let mut rem = idx;
        for a in (0..d).rev() {
            out[a] = (rem % res) as i64 - self.half();
            rem /= res;
        }
        out
    }

    pub fn flat_index(&self, mi: &[i64]) -> Option<usize> {
        let h = self.half();
        let mut idx = 0usize;
        for &m in mi {
            if m < -h || m > h {
                return None;
            }
            idx = idx * self.resolution + (m + h) as usize;
        }
        Some(idx)
    }

    /// Index of the lattice origin.
    pub fn origin(&self) -> usize {
        self.len() / 2
    }

    /// Stride of `axis` in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.resolution.pow((self.dims() - 1 - axis) as u32)
    }

    /// Neighbor one step along `axis` in direction `dir` (±1).
    pub fn neighbor(&self, idx: usize, axis: usize, dir: i64) -> Option<usize> {
        let stride = self.stride(axis);
        let pos = (idx / stride) % self.resolution;
        let np = pos as i64 + dir;
        if np < 0 || np >= self.resolution as i64 {
            return None;
        }
        Some((idx as i64 + dir * stride as i64) as usize)
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        let (hz, hx) = self.spacing();
        let mi = self.multi_index(idx);
        let d = self.dims();
        mi.iter()
            .enumerate()
            .map(|(a, &m)| m as f64 * if a + 1 == d { hx } else { hz })
            .collect()
    }

    pub fn point(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        let zp = (0..self.n - 1).map(|a| C64::new(c[2 * a], c[2 * a + 1])).collect();
        Point::new(zp, c[self.dims() - 1])
    }

    /// Membership of a lattice index in `D_{t·lattice_rho}`, computed on the
    /// integer indices: `s² + k² m² ≤ t² m⁴` with `s = Σ i²`, `m = (res-1)/2`.
    fn index_in_ball(&self, idx: usize, t: f64) -> bool {
        let mi = self.multi_index(idx);
        let d = self.dims();
        let s: i64 = mi[..d - 1].iter().map(|i| i * i).sum();
        let k = mi[d - 1];
        let m = self.half();
        let lhs = (s * s + k * k * m * m) as f64;
        lhs <= t * t * (m as f64).powi(4)
    }

    /// Points whose star stencil (±1 along every axis) lies inside `set`.
    pub fn erode(&self, set: &[bool]) -> Vec<bool> {
        let d = self.dims();
        let mut out = vec![false; set.len()];
        crate::par::fill(&mut out, |i| {
            set[i]
                && (0..d).all(|a| {
                    [-1, 1]
                        .iter()
                        .all(|&s| self.neighbor(i, a, s).is_some_and(|j| set[j]))
                })
        });
        out
    }

    /// Points of the mask at which a first-order central difference is valid.
    pub fn stencil_valid(&self) -> Vec<bool> {
        self.erode(&self.mask)
    }

    pub fn same_lattice(&self, other: &GridChart) -> bool {
        self.n == other.n
            && self.resolution == other.resolution
            && self.lattice_rho == other.lattice_rho
    }

    /// Rebuild a chart from its header fields (used by the file loader).
    pub fn from_parts(n: usize, resolution: usize, lattice_rho: f64, rho: f64) -> Result<Self> {
        let base = build_grid(n, lattice_rho, resolution)?;
        if rho < lattice_rho {
            base.restrict(rho)
        } else if rho == lattice_rho {
            Ok(base)
        } else {
            Err(Error::invalid(format!("mask radius {rho} exceeds lattice radius {lattice_rho}")))
        }
    }

    /// Tighten the mask to `D_{rho_new}` on the same lattice.
    pub fn restrict(&self, rho_new: f64) -> Result<GridChart> {
        if !(rho_new > 0.0) || rho_new > self.rho {
            return Err(Error::invalid(format!(
                "restrict radius {rho_new} must lie in (0, {}]",
                self.rho
            )));
        }
        if rho_new == self.rho {
            return Ok(self.clone());
        }
        let t = rho_new / self.lattice_rho;
        let mut mask = vec![false; self.len()];
        crate::par::fill(&mut mask, |i| self.mask[i] && self.index_in_ball(i, t));
        Ok(GridChart { mask, rho: rho_new, ..self.clone() })
    }

    /// The lattice `T_κ^{-1}` of this one: same indices, radius `ρ/κ`.
    pub fn pulled_back(&self, kappa: f64) -> Result<GridChart> {
        Dilation::new(kappa)?;
        Ok(GridChart {
            lattice_rho: self.lattice_rho / kappa,
            rho: self.rho / kappa,
            ..self.clone()
        })
    }
}

/// Uniform lattice over the bounding box of `D_ρ` with the Heisenberg-ball
/// mask. `resolution` must be odd so that the origin is a lattice point.
pub fn build_grid(n: usize, rho: f64, resolution: usize) -> Result<GridChart> {
    if n < 3 {
        return Err(Error::invalid(format!("ambient dimension n must be >= 3, got {n}")));
    }
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::invalid(format!("radius must be positive, got {rho}")));
    }
    if resolution < 3 || resolution % 2 == 0 {
        return Err(Error::invalid(format!(
            "resolution must be odd and >= 3 (got {resolution}); jets at 0 need a centered stencil"
        )));
    }
    let dims = 2 * n - 1;
    let len = resolution
        .checked_pow(dims as u32)
        .filter(|&l| l <= 1 << 28)
        .ok_or_else(|| Error::invalid("lattice too large"))?;
    let mut chart = GridChart {
        n,
        resolution,
        lattice_rho: rho,
        rho,
        mask: Vec::new(),
    };
    let mut mask = vec![false; len];
    crate::par::fill(&mut mask, |i| chart.index_in_ball(i, 1.0));
    chart.mask = mask;
    Ok(chart)
}

pub fn restrict(chart: &GridChart, rho_new: f64) -> Result<GridChart> {
    chart.restrict(rho_new)
}

pub type SharedChart = Arc<GridChart>;

/// Shrinking radii `ρ_{j+1} = ρ_j (1 - σ_j)`, `σ_j = 2^{-j-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSchedule {
    pub rho0: f64,
    pub sigmas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub rho_infinity: f64,
}

impl RadiusSchedule {
    pub fn sigma(j: usize) -> f64 {
        0.5_f64.powi(j as i32 + 1)
    }

    pub fn rho(&self, j: usize) -> f64 {
        self.rhos[j]
    }
}

/// Number of factors used for the partial product estimating `ρ_∞`; the tail
/// beyond it changes the product by less than `2^{-61}`.
const LIMIT_FACTORS: usize = 61;

pub fn radius_schedule(rho0: f64, jmax: usize) -> Result<RadiusSchedule> {
    if !(rho0 > 0.0) || !rho0.is_finite() {
        return Err(Error::invalid(format!("rho0 must be positive, got {rho0}")));
    }
    if jmax < 1 {
        return Err(Error::invalid("jmax must be >= 1"));
    }
    let sigmas: Vec<f64> = (0..jmax).map(RadiusSchedule::sigma).collect();
    let mut rhos = Vec::with_capacity(jmax + 1);
    rhos.push(rho0);
    for s in &sigmas {
        let last = *rhos.last().unwrap();
        rhos.push(last * (1.0 - s));
    }
    let rho_infinity = (0..LIMIT_FACTORS).fold(rho0, |acc, j| acc * (1.0 - RadiusSchedule::sigma(j)));
    Ok(RadiusSchedule { rho0, sigmas, rhos, rho_infinity })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_values() {
        let s = radius_schedule(1.0, 10).unwrap();
        assert_eq!(s.rhos[1], 0.5);
        assert_eq!(s.rhos[2], 0.375);
        // Independently: running product of (1 - 2^{-j-1}) until it stops changing.
        let mut p = 1.0_f64;
        for j in 0..200 {
            p *= 1.0 - 0.5_f64.powi(j + 1);
        }
        assert!((s.rho_infinity - p).abs() < 1e-15);
        assert!((s.rho_infinity - 0.2887880951).abs() < 1e-10);
        assert!(s.rhos.windows(2).all(|w| w[1] < w[0]));
        assert!(s.rhos.iter().all(|&r| r >= 0.288));
    }

    #[test]
    fn schedule_rejects_bad_input() {
        assert!(radius_schedule(0.0, 3).is_err());
        assert!(radius_schedule(-1.0, 3).is_err());
        assert!(radius_schedule(1.0, 0).is_err());
    }

    #[test]
    fn dilation_examples() {
        let p = Point::new(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)], 0.0);
        assert_eq!(dilate(&p, 1.0).unwrap(), p);
        let q = dilate(&p, 4.0).unwrap();
        assert_eq!(q.zprime, vec![C64::new(2.0, 0.0), C64::new(0.0, 0.0)]);
        assert_eq!(q.xn, 0.0);
        assert_eq!(q.yn(), 4.0);
        assert!(dilate(&p, 0.0).is_err());
        assert!(dilate(&p, -2.0).is_err());
    }

    #[test]
    fn dilation_group_law_powers_of_two_bit_exact() {
        let p = Point::new(vec![C64::new(0.3, -0.7), C64::new(0.11, 0.5)], -0.4);
        for (a, b) in [(4.0, 0.25), (16.0, 4.0), (0.25, 0.0625)] {
            let lhs = dilate(&dilate(&p, a).unwrap(), b).unwrap();
            let rhs = dilate(&p, a * b).unwrap();
            assert_eq!(lhs, rhs);
        }
        let lhs = dilate(&dilate(&p, 0.3).unwrap(), 1.7).unwrap();
        let rhs = dilate(&p, 0.3 * 1.7).unwrap();
        assert!((lhs.xn - rhs.xn).abs() <= 1e-14 * rhs.xn.abs());
        for (a, b) in lhs.zprime.iter().zip(&rhs.zprime) {
            assert!((a - b).norm() <= 1e-14 * b.norm());
        }
    }

    #[test]
    fn dilation_maps_unit_ball_into_rho_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0;
        while tested < 100 {
            let p = Point::new(
                (0..2).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect(),
                rng.gen_range(-1.0..1.0),
            );
            if !p.in_ball(1.0) {
                continue;
            }
            tested += 1;
            for rho in [0.5, 0.1, 3.0] {
                let q = dilate(&p, rho).unwrap();
                // Brute-force membership with 1 ulp-scale slack for the sqrt.
                let s = q.zprime_norm_sq();
                assert!(s * s + q.xn * q.xn <= rho * rho * (1.0 + 1e-12));
            }
        }
    }

    fn brute_count(chart: &GridChart, rho: f64) -> usize {
        (0..chart.len())
            .filter(|&i| {
                let c = chart.coords(i);
                let s: f64 = c[..c.len() - 1].iter().map(|v| v * v).sum();
                let x = c[c.len() - 1];
                s * s + x * x <= rho * rho + 1e-12
            })
            .count()
    }

    #[test]
    fn grid_basics() {
        let g = build_grid(3, 1.0, 9).unwrap();
        assert_eq!(g.len(), 9usize.pow(5));
        assert!(g.masked_count() < g.len());
        assert!(g.mask()[g.origin()]);
        assert_eq!(g.coords(g.origin()), vec![0.0; 5]);
        assert_eq!(g.masked_count(), brute_count(&g, 1.0));
        assert!(build_grid(3, 1.0, 8).is_err());
        assert!(build_grid(2, 1.0, 9).is_err());
    }

    #[test]
    fn restrict_matches_brute_force() {
        let g = build_grid(3, 1.0, 13).unwrap();
        let r = g.restrict(0.5).unwrap();
        assert_eq!(r.masked_count(), brute_count(&g, 0.5));
        assert_eq!(g.restrict(1.0).unwrap().mask(), g.mask());
        assert!(g.restrict(1.5).is_err());
        let ab = g.restrict(0.7).unwrap().restrict(0.4).unwrap();
        assert_eq!(ab.mask(), g.restrict(0.4).unwrap().mask());
        // nested
        assert!(r.mask().iter().zip(g.mask()).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn neighbors_and_indices() {
        let g = build_grid(3, 1.0, 5).unwrap();
        let o = g.origin();
        assert_eq!(g.multi_index(o), vec![0; 5]);
        let nx = g.neighbor(o, 4, 1).unwrap();
        assert_eq!(g.multi_index(nx), vec![0, 0, 0, 0, 1]);
        let corner = g.flat_index(&[2, 2, 2, 2, 2]).unwrap();
        assert!(g.neighbor(corner, 0, 1).is_none());
        assert_eq!(g.flat_index(&g.multi_index(1234)).unwrap(), 1234);
    }

    #[test]
    fn pulled_back_lattice_is_dilation_preimage() {
        let g = build_grid(3, 0.25, 7).unwrap();
        let u = g.pulled_back(0.25).unwrap();
        assert_eq!(u.lattice_rho(), 1.0);
        for idx in [0, 17, u.origin(), 5000] {
            let p = u.point(idx);
            let q = dilate(&p, 0.25).unwrap();
            assert_eq!(q, g.point(idx));
        }
        assert_eq!(u.mask(), build_grid(3, 1.0, 7).unwrap().mask());
    }
}
