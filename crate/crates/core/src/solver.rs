//! Approximate right inverses of `∂̄_M`.
//!
//! Three backends share one contract: given `ω` on `D_ρ`, return `B` with
//! `X_ᾱ B ≈ -Γ_ᾱ`, reported on a smaller target ball.
//!
//! * `Iterative`: Tikhonov-regularized least squares over grid unknowns,
//!   solved matrix-free by CGLS.
//! * `Direct`: the same objective solved densely by SVD (small grids only).
//! * `Series`: exact-arithmetic solve on the weighted Taylor expansion of an
//!   exactly represented form.

use crate::calculus::{pullback_form, TangentialFrame, VectorField};
use crate::field::{ConnectionForm, ExactForm, MatrixField};
use crate::geometry::GridChart;
use crate::norms::{ck_norm, random_matrix_poly};
use crate::poly::{Grading, MatPoly};
use crate::series::Series;
use crate::{par, Error, Result, C64};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Largest unknown count accepted by the dense backend.
pub const DIRECT_MAX_UNKNOWNS: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverBackend {
    Iterative,
    Direct,
    Series,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Tikhonov weight on `‖B‖²`; `None` means `1e-8 ×` the lattice cell volume.
    pub lambda: Option<f64>,
    /// CGLS stops when the normal-equation residual falls below this
    /// fraction of `‖Aᴴb‖`.
    pub residual_tol: f64,
    pub max_iterations: usize,
    pub backend: SolverBackend,
    /// Weight through which the series backend solves.
    pub series_weight: u32,
    /// Norm order used for the reported `η̂`.
    pub k: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            residual_tol: 1e-10,
            max_iterations: 20_000,
            backend: SolverBackend::Iterative,
            series_weight: 6,
            k: 0,
        }
    }
}

impl SolverConfig {
    pub fn lambda_for(&self, chart: &GridChart) -> f64 {
        self.lambda.unwrap_or(1e-8 * chart.cell_volume())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub rho: f64,
    pub sigma: f64,
    pub k: usize,
    /// `‖B‖_{ρ',k} / ‖ω‖_{ρ,k}`.
    pub eta_hat: f64,
    /// `‖∂̄_M B + ω‖_{ρ',0}` on the target ball.
    pub residual: f64,
    pub iters: usize,
}

impl SolverReport {
    pub const CSV_HEADER: &'static str = "rho,sigma,k,eta_hat,residual,iters";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{}",
            self.rho, self.sigma, self.k, self.eta_hat, self.residual, self.iters
        )
    }
}

/// Matrix-free central-difference `X_ᾱ` restricted to unknowns `U` and
/// equations at the points of `U` whose whole stencil lies in `U`.
struct GridOperator {
    chart: Arc<GridChart>,
    m: usize,
    dims: usize,
    unknown: Vec<bool>,
    eq: Vec<usize>,
    eq_pos: Vec<u32>,
    /// `w[(e·m + α)·dims + axis]`: coefficient of `u(p+e_axis) - u(p-e_axis)`.
    w: Vec<C64>,
}

impl GridOperator {
    fn new(chart: &Arc<GridChart>, unknown: Vec<bool>, frame: &TangentialFrame) -> Result<Self> {
        let m = chart.n() - 1;
        let dims = chart.dims();
        let eq_set = chart.erode(&unknown);
        let eq: Vec<usize> = (0..chart.len()).filter(|&i| eq_set[i]).collect();
        let mut eq_pos = vec![u32::MAX; chart.len()];
        for (k, &i) in eq.iter().enumerate() {
            eq_pos[i] = k as u32;
        }
        let coeffs: Vec<Result<Vec<C64>>> = par::map_collect(eq.len(), |k| {
            let p = chart.point(eq[k]);
            let mut out = Vec::with_capacity(m * dims);
            for a in 0..m {
                let c = frame.axis_coeffs(VectorField::XBar(a), &p, dims)?;
                for (axis, ca) in c.iter().enumerate() {
                    out.push(ca / (2.0 * chart.axis_spacing(axis)));
                }
            }
            Ok(out)
        });
        let mut w = Vec::with_capacity(eq.len() * m * dims);
        for c in coeffs {
            w.extend(c?);
        }
        Ok(Self { chart: chart.clone(), m, dims, unknown, eq, eq_pos, w })
    }

    fn rows(&self) -> usize {
        self.m * self.eq.len()
    }

    /// `A u`, laid out `[α][equation]`.
    fn apply(&self, u: &[C64]) -> Vec<C64> {
        let ne = self.eq.len();
        let mut out = vec![ZERO; self.rows()];
        par::fill(&mut out, |row| {
            let (a, k) = (row / ne, row % ne);
            let i = self.eq[k];
            let base = (k * self.m + a) * self.dims;
            let mut acc = ZERO;
            for axis in 0..self.dims {
                let w = self.w[base + axis];
                if w != ZERO {
                    let plus = self.chart.neighbor(i, axis, 1).expect("interior");
                    let minus = self.chart.neighbor(i, axis, -1).expect("interior");
                    acc += w * (u[plus] - u[minus]);
                }
            }
            acc
        });
        out
    }

    /// `Aᴴ v`, zero outside the unknown set.
    fn adjoint(&self, v: &[C64]) -> Vec<C64> {
        let ne = self.eq.len();
        let mut out = vec![ZERO; self.chart.len()];
        par::fill(&mut out, |q| {
            if !self.unknown[q] {
                return ZERO;
            }
            let mut acc = ZERO;
            for axis in 0..self.dims {
                for (dir, sign) in [(-1i64, 1.0), (1, -1.0)] {
                    if let Some(p) = self.chart.neighbor(q, axis, dir) {
                        let k = self.eq_pos[p];
                        if k != u32::MAX {
                            let k = k as usize;
                            for a in 0..self.m {
                                let w = self.w[(k * self.m + a) * self.dims + axis];
                                acc += w.conj() * v[a * ne + k] * sign;
                            }
                        }
                    }
                }
            }
            acc
        });
        out
    }
}

/// CGLS for `min ‖Au - b‖² + λ‖u‖²` from `u = 0`.
fn cgls(op: &GridOperator, b: &[C64], lambda: f64, tol: f64, max_iter: usize) -> Result<(Vec<C64>, usize)> {
    let n = op.chart.len();
    let mut x = vec![ZERO; n];
    let mut r = b.to_vec();
    let mut s = op.adjoint(&r);
    let norm0 = par::norm2_sq(&s).sqrt();
    if norm0 == 0.0 {
        return Ok((x, 0));
    }
    let mut p = s.clone();
    let mut gamma = norm0 * norm0;
    for it in 1..=max_iter {
        let q = op.apply(&p);
        let delta = par::norm2_sq(&q) + lambda * par::norm2_sq(&p);
        if delta == 0.0 {
            return Ok((x, it));
        }
        let alpha = gamma / delta;
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += pi * alpha);
        r.iter_mut().zip(&q).for_each(|(ri, qi)| *ri -= qi * alpha);
        s = op.adjoint(&r);
        s.iter_mut().zip(&x).for_each(|(si, xi)| *si -= xi * lambda);
        let gamma_new = par::norm2_sq(&s);
        if gamma_new.sqrt() <= tol * norm0 {
            return Ok((x, it));
        }
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        p.iter_mut().zip(&s).for_each(|(pi, si)| *pi = si + *pi * beta);
    }
    Err(Error::SolverFailure { iterations: max_iter, residual: gamma.sqrt() / norm0 })
}

/// Dense Tikhonov solve via SVD: `x = V diag(s / (s² + λ)) Uᴴ b`.
fn direct(op: &GridOperator, rhs: &[Vec<C64>], lambda: f64) -> Result<Vec<Vec<C64>>> {
    let cols: Vec<usize> = (0..op.chart.len()).filter(|&i| op.unknown[i]).collect();
    if cols.len() > DIRECT_MAX_UNKNOWNS {
        return Err(Error::invalid(format!(
            "direct backend limited to {DIRECT_MAX_UNKNOWNS} unknowns, got {}",
            cols.len()
        )));
    }
    // Columns of A are A e_j.
    let mut a = DMatrix::<C64>::zeros(op.rows(), cols.len());
    let mut e = vec![ZERO; op.chart.len()];
    for (j, &c) in cols.iter().enumerate() {
        e[c] = C64::new(1.0, 0.0);
        for (i, v) in op.apply(&e).into_iter().enumerate() {
            a[(i, j)] = v;
        }
        e[c] = ZERO;
    }
    let svd = a.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if lambda == 0.0 && sv.iter().any(|&s| s <= 1e-12 * smax) {
        return Err(Error::NonUniqueSolution);
    }
    Ok(rhs
        .iter()
        .map(|b| {
            let bv = DVector::from_column_slice(b);
            let mut c = u.adjoint() * bv;
            for (k, ck) in c.iter_mut().enumerate() {
                let s = sv[k];
                *ck *= if s > 0.0 { s / (s * s + lambda) } else { 0.0 };
            }
            let x = vt.adjoint() * c;
            let mut full = vec![ZERO; op.chart.len()];
            for (j, &col) in cols.iter().enumerate() {
                full[col] = x[j];
            }
            full
        })
        .collect())
}

fn target_chart(omega: &ConnectionForm, target_rho: f64) -> Result<Arc<GridChart>> {
    let rho = omega.chart.rho();
    if !(target_rho > 0.0 && target_rho <= rho) {
        return Err(Error::invalid(format!("target radius {target_rho} must lie in (0, {rho}]")));
    }
    Ok(Arc::new(omega.chart.restrict(target_rho)?))
}

fn grid_solve(
    omega: &ConnectionForm,
    cfg: &SolverConfig,
    frame: &TangentialFrame,
) -> Result<(MatrixField, usize)> {
    let chart = &omega.chart;
    let lambda = cfg.lambda_for(chart);
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let r = omega.rank;
    let rr = r * r;
    let unknown: Vec<bool> = chart.mask().iter().zip(&omega.defined).map(|(&a, &b)| a && b).collect();
    if let Some(i) = (0..chart.len()).find(|&i| unknown[i] && omega.comps.iter().any(|c| c[i * rr..(i + 1) * rr].iter().any(|z| !z.is_finite()))) {
        return Err(Error::invalid(format!("omega is not finite at {:?}", chart.coords(i))));
    }
    let op = GridOperator::new(chart, unknown, frame)?;
    let ne = op.eq.len();
    let rhs: Vec<Vec<C64>> = (0..rr)
        .map(|ent| {
            let mut b = vec![ZERO; op.rows()];
            for a in 0..op.m {
                for (k, &i) in op.eq.iter().enumerate() {
                    b[a * ne + k] = -omega.comps[a][i * rr + ent];
                }
            }
            b
        })
        .collect();
    let (sols, iters) = match cfg.backend {
        SolverBackend::Direct => (direct(&op, &rhs, lambda)?, 0),
        _ => {
            if lambda == 0.0 {
                // constants always lie in the kernel of the difference operator
                return Err(Error::NonUniqueSolution);
            }
            let mut sols = Vec::with_capacity(rr);
            let mut iters = 0;
            for b in &rhs {
                let (x, it) = cgls(&op, b, lambda, cfg.residual_tol, cfg.max_iterations)?;
                iters = iters.max(it);
                sols.push(x);
            }
            (sols, iters)
        }
    };
    let mut values = vec![ZERO; chart.len() * rr];
    for (ent, x) in sols.iter().enumerate() {
        for (i, v) in x.iter().enumerate() {
            values[i * rr + ent] = *v;
        }
    }
    let defined = op.unknown.clone();
    Ok((MatrixField { chart: chart.clone(), rank: r, values, defined, poly: None }, iters))
}

/// `‖∂̄_M B + ω‖` over the target ball, exact when both are exactly known.
fn solve_residual(b: &MatrixField, omega: &ConnectionForm, frame: &TangentialFrame) -> Result<f64> {
    let db = crate::calculus::dbar_matrix(b, frame)?;
    let om = omega.restricted(&b.chart)?;
    let rr = b.rank * b.rank;
    let mask = b.chart.mask();
    Ok(par::max_by(b.chart.len(), |i| {
        if !(mask[i] && db.defined[i] && om.defined[i]) {
            return 0.0;
        }
        (0..db.n_comps())
            .map(|a| {
                let d: Vec<C64> = db.comps[a][i * rr..(i + 1) * rr]
                    .iter()
                    .zip(&om.comps[a][i * rr..(i + 1) * rr])
                    .map(|(x, y)| x + y)
                    .collect();
                crate::linalg::op_norm(&d, b.rank)
            })
            .fold(0.0, f64::max)
    }))
}

fn eta_hat(b: &MatrixField, omega: &ConnectionForm, k: usize) -> Result<f64> {
    let den = ck_norm(omega, omega.chart.rho(), k)?.value;
    let num = ck_norm(b, b.chart.rho(), k)?.value;
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

/// The discrete homotopy operator: `B` with `∂̄_M B ≈ -ω`, solved on all of
/// `D_ρ` and reported on `D_{target_rho}`.
#[allow(non_snake_case)]
pub fn solve_P(
    omega: &ConnectionForm,
    target_rho: f64,
    cfg: &SolverConfig,
    frame: &TangentialFrame,
) -> Result<(MatrixField, SolverReport)> {
    let target = target_chart(omega, target_rho)?;
    let rho = omega.chart.rho();
    let (b, iters) = match (&omega.exact, cfg.backend) {
        (Some(exact), SolverBackend::Series) if frame.is_heisenberg() => {
            let sol = solve_series(exact, cfg.series_weight)?;
            (MatrixField::from_poly(target.clone(), &sol.b), 0)
        }
        (_, SolverBackend::Series) => {
            log::info!("series backend needs an exact form on the hyperquadric; using the grid solver");
            let grid_cfg = SolverConfig { backend: SolverBackend::Iterative, ..cfg.clone() };
            let (b, it) = grid_solve(omega, &grid_cfg, frame)?;
            (b.restricted(&target)?, it)
        }
        _ => {
            let (b, it) = grid_solve(omega, cfg, frame)?;
            (b.restricted(&target)?, it)
        }
    };
    let report = SolverReport {
        rho,
        sigma: 1.0 - target_rho / rho,
        k: cfg.k,
        eta_hat: eta_hat(&b, omega, cfg.k)?,
        residual: solve_residual(&b, omega, frame)?,
        iters,
    };
    Ok((b, report))
}

/// `P_(ρ) = T*_{1/ρ} ∘ P_(1) ∘ T*_ρ`: pull `ω` back to the unit ball, solve
/// there with the unit-chart configuration, and carry `B` back index by index.
#[allow(non_snake_case)]
pub fn solve_P_scaled(
    omega: &ConnectionForm,
    sigma: f64,
    cfg: &SolverConfig,
    frame: &TangentialFrame,
) -> Result<(MatrixField, SolverReport)> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::invalid(format!("sigma must lie in (0, 1), got {sigma}")));
    }
    let rho = omega.chart.rho();
    if !frame.is_heisenberg() {
        log::info!("scaled solve needs h = 0; solving directly on D_{rho}");
        return solve_P(omega, rho * (1.0 - sigma), cfg, frame);
    }
    let unit = pullback_form(omega, rho)?;
    let unit_cfg = SolverConfig { lambda: Some(cfg.lambda_for(&unit.chart)), ..cfg.clone() };
    let (b1, mut report) = solve_P(&unit, 1.0 - sigma, &unit_cfg, frame)?;
    let target = Arc::new(omega.chart.restrict(rho * (1.0 - sigma))?);
    let b = MatrixField {
        chart: target,
        poly: b1.poly.as_ref().map(|p| p.dilate_args(1.0 / rho)),
        ..b1
    };
    report.rho = rho;
    Ok((b, report))
}

/// Statistics of measured `η̂` over seeded random polynomial forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeStats {
    pub trials: usize,
    pub sigma: f64,
    pub k: usize,
    pub max: f64,
    pub mean: f64,
    pub samples: Vec<f64>,
}

/// Measure `‖solve_P(ω)‖_{ρ',k} / ‖ω‖_{ρ,k}` over `trials` seeded random
/// degree-2 polynomial forms on `chart`.
pub fn operator_norm_probe(
    cfg: &SolverConfig,
    chart: &Arc<GridChart>,
    rank: usize,
    sigma: f64,
    trials: usize,
    seed: u64,
    frame: &TangentialFrame,
) -> Result<ProbeStats> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.n();
    let mut samples = Vec::with_capacity(trials);
    for _ in 0..trials {
        let polys: Vec<MatPoly> = (0..n - 1).map(|_| random_matrix_poly(n, rank, 2, &mut rng)).collect();
        let omega = ConnectionForm::from_polys(chart.clone(), polys)?;
        let (_, rep) = solve_P(&omega, chart.rho() * (1.0 - sigma), cfg, frame)?;
        samples.push(rep.eta_hat);
    }
    let max = samples.iter().cloned().fold(0.0, f64::max);
    let mean = samples.iter().sum::<f64>() / trials as f64;
    Ok(ProbeStats { trials, sigma, k: cfg.k, max, mean, samples })
}

/// Outcome of a series solve.
#[derive(Clone, Debug)]
pub struct SeriesSolution {
    pub b: MatPoly,
    /// Largest Taylor coefficient of `X̄B + ω` through the solved weight.
    pub coefficient_residual: f64,
}

/// Solve `X_ᾱ B = -ω_ᾱ` on the weighted Taylor expansion of `ω` through
/// weight `max_weight`.
///
/// In the coordinates `(z', z̄', w)`, `w = x^n + i|z'|²`, every `X_ᾱ` is the
/// plain derivative `∂/∂z̄^α`, so the radial homotopy in `z̄'` inverts `∂̄_M`
/// on closed forms. For integrable `ω` the defect `∂̄ω = ω∧ω` is quadratic,
/// and so is the residual.
pub fn solve_series(omega: &ExactForm, max_weight: u32) -> Result<SeriesSolution> {
    let taylor = omega.taylor_series(Grading::Weighted, max_weight)?;
    let to_cr = C64::new(0.0, -1.0);
    let cr: Vec<Series> = taylor.iter().map(|s| s.shear(to_cr)).collect::<Result<_>>()?;
    let b = Series::zbar_homotopy(&cr)?.shear(-to_cr)?.scale(C64::new(-1.0, 0.0));
    let mut residual = 0.0_f64;
    for (a, t) in taylor.iter().enumerate() {
        residual = residual.max(b.xbar(a).truncated(max_weight).add(t)?.max_abs_through(max_weight));
    }
    if !residual.is_finite() {
        return Err(Error::SolverFailure { iterations: 0, residual });
    }
    Ok(SeriesSolution { b: b.to_poly(), coefficient_residual: residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{tangential_frame, DefiningSurface};
    use crate::geometry::build_grid;

    fn heis() -> TangentialFrame {
        tangential_frame(&DefiningSurface::heisenberg(3)).unwrap()
    }

    fn chart(rho: f64, res: usize) -> Arc<GridChart> {
        Arc::new(build_grid(3, rho, res).unwrap())
    }

    fn e12(r: usize, s: f64) -> Vec<C64> {
        let mut m = vec![ZERO; r * r];
        m[1] = C64::new(s, 0.0);
        m
    }

    fn minus_e12_dzbar1(c: &Arc<GridChart>) -> ConnectionForm {
        ConnectionForm::constant(c.clone(), &[e12(2, -1.0), vec![ZERO; 4]], 2).unwrap()
    }

    fn cfg(backend: SolverBackend) -> SolverConfig {
        SolverConfig { backend, ..SolverConfig::default() }
    }

    #[test]
    fn zero_form_gives_zero() {
        let c = chart(1.0, 5);
        let om = ConnectionForm::zero(c, 2);
        for be in [SolverBackend::Iterative, SolverBackend::Direct] {
            let (b, rep) = solve_P(&om, 0.5, &cfg(be), &heis()).unwrap();
            assert!(b.values.iter().all(|z| *z == ZERO));
            assert_eq!(rep.eta_hat, 0.0);
        }
    }

    #[test]
    fn constant_form_iterative_matches_direct() {
        let c = chart(1.0, 5);
        let om = minus_e12_dzbar1(&c);
        let (bi, ri) = solve_P(&om, 0.5, &cfg(SolverBackend::Iterative), &heis()).unwrap();
        let (bd, rd) = solve_P(&om, 0.5, &cfg(SolverBackend::Direct), &heis()).unwrap();
        assert!(bi.max_abs_diff(&bd) < 1e-7, "{}", bi.max_abs_diff(&bd));
        assert!(ri.residual < 1e-8 && rd.residual < 1e-8, "{} {}", ri.residual, rd.residual);
        // only the (1,2) entry is excited
        for i in 0..bi.chart.len() {
            let blk = bi.at(i);
            assert!(blk[0].norm() + blk[2].norm() + blk[3].norm() < 1e-14);
        }
    }

    #[test]
    fn series_backend_recovers_closed_form() {
        let c = chart(1.0, 5);
        let polys = vec![MatPoly::constant(3, 2, &e12(2, -1.0)), MatPoly::zero(3, 2)];
        let om = ConnectionForm::from_polys(c, polys).unwrap();
        let (b, rep) = solve_P(&om, 0.5, &cfg(SolverBackend::Series), &heis()).unwrap();
        let expect = MatPoly::var_zbar(3, 0).scalar_times_matrix(&e12(2, 1.0), 2);
        assert!(b.poly.as_ref().unwrap().sub(&expect).max_coeff() < 1e-15);
        assert!(rep.residual < 1e-15);
    }

    #[test]
    fn closed_scalar_form_is_solved() {
        let c = chart(1.0, 7);
        let z1 = MatPoly::var_zbar(3, 0);
        let z2 = MatPoly::var_zbar(3, 1);
        let om = ConnectionForm::from_polys(c, vec![z2.clone(), z1.clone()]).unwrap().into_grid();
        let (_, rep) = solve_P(&om, 0.75, &cfg(SolverBackend::Iterative), &heis()).unwrap();
        // central differences are exact on quadratics, so only the solver tolerance remains
        assert!(rep.residual < 1e-7, "{}", rep.residual);
    }

    #[test]
    fn linear_in_the_form() {
        let c = chart(1.0, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |rng: &mut ChaCha8Rng| {
            let polys = (0..2).map(|_| random_matrix_poly(3, 2, 1, rng)).collect();
            ConnectionForm::from_polys(c.clone(), polys).unwrap().into_grid()
        };
        let (w1, w2) = (mk(&mut rng), mk(&mut rng));
        let (a, b) = (C64::new(0.7, -0.2), C64::new(-1.3, 0.4));
        let comb = w1.scale(a).axpy(b, &w2).unwrap();
        let d = cfg(SolverBackend::Direct);
        let s1 = solve_P(&w1, 0.5, &d, &heis()).unwrap().0;
        let s2 = solve_P(&w2, 0.5, &d, &heis()).unwrap().0;
        let sc = solve_P(&comb, 0.5, &d, &heis()).unwrap().0;
        let lin = s1.scale(a).axpy(b, &s2).unwrap();
        assert!(sc.max_abs_diff(&lin) < 1e-10, "{}", sc.max_abs_diff(&lin));
    }

    fn objective(op: &GridOperator, u: &[C64], b: &[C64], lambda: f64) -> f64 {
        let au = op.apply(u);
        au.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>()
            + lambda * u.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    #[test]
    fn minimizer_is_not_improved_by_perturbation() {
        use rand::Rng;
        let c = chart(1.0, 5);
        let om = ConnectionForm::from_polys(c.clone(), vec![MatPoly::var_z(3, 0), MatPoly::var_zbar(3, 0)])
            .unwrap()
            .into_grid();
        let unknown: Vec<bool> = c.mask().to_vec();
        let op = GridOperator::new(&c, unknown.clone(), &heis()).unwrap();
        let ne = op.eq.len();
        let mut b = vec![ZERO; op.rows()];
        for a in 0..2 {
            for (k, &i) in op.eq.iter().enumerate() {
                b[a * ne + k] = -om.comps[a][i];
            }
        }
        let lambda = 1e-3;
        let u = direct(&op, &[b.clone()], lambda).unwrap().pop().unwrap();
        let j0 = objective(&op, &u, &b, lambda);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut du: Vec<C64> = (0..u.len())
                .map(|i| if unknown[i] { C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) } else { ZERO })
                .collect();
            let nrm = du.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            du.iter_mut().for_each(|z| *z *= 1e-3 / nrm);
            let pert: Vec<C64> = u.iter().zip(&du).map(|(x, y)| x + y).collect();
            assert!(objective(&op, &pert, &b, lambda) >= j0);
        }
    }

    #[test]
    fn block_diagonal_forms_decouple() {
        let c = chart(1.0, 5);
        let p = MatPoly::var_z(3, 1).add(&MatPoly::var_zbar(3, 0));
        let diag = |s: f64| vec![C64::new(1.0, 0.0), ZERO, ZERO, C64::new(s, 0.0)];
        let om2 = ConnectionForm::from_polys(
            c.clone(),
            vec![p.scalar_times_matrix(&diag(1.0), 2), MatPoly::zero(3, 2)],
        )
        .unwrap()
        .into_grid();
        let om1 = ConnectionForm::from_polys(c, vec![p.clone(), MatPoly::zero(3, 1)]).unwrap().into_grid();
        let it = cfg(SolverBackend::Iterative);
        let (b2, r2) = solve_P(&om2, 0.5, &it, &heis()).unwrap();
        let (_, r1) = solve_P(&om1, 0.5, &it, &heis()).unwrap();
        assert!((r1.eta_hat - r2.eta_hat).abs() < 1e-12);
        assert!(b2.values.chunks(4).all(|blk| blk[1] == ZERO && blk[2] == ZERO));
    }

    #[test]
    fn zero_lambda_is_rejected() {
        let c = chart(1.0, 5);
        let om = minus_e12_dzbar1(&c);
        for be in [SolverBackend::Iterative, SolverBackend::Direct] {
            let bad = SolverConfig { lambda: Some(0.0), backend: be, ..SolverConfig::default() };
            assert!(matches!(solve_P(&om, 0.5, &bad, &heis()), Err(Error::NonUniqueSolution)));
        }
    }

    #[test]
    fn scaled_solve_at_unit_radius_is_plain_solve() {
        let c = chart(1.0, 5);
        let om = minus_e12_dzbar1(&c);
        let it = cfg(SolverBackend::Iterative);
        let (bs, _) = solve_P_scaled(&om, 0.5, &it, &heis()).unwrap();
        let (bp, _) = solve_P(&om, 0.5, &it, &heis()).unwrap();
        assert_eq!(bs.max_abs_diff(&bp), 0.0);
    }

    #[test]
    fn scaled_solve_conjugates_dilations() {
        let it = cfg(SolverBackend::Iterative);
        for rho in [0.25, 1.0 / 16.0] {
            let c = chart(rho, 5);
            let om = minus_e12_dzbar1(&c);
            let (b_rho, _) = solve_P_scaled(&om, 0.5, &it, &heis()).unwrap();
            // independent right-hand side: solve the pulled-back constant on the unit ball
            let unit = chart(1.0, 5);
            let s = rho.sqrt();
            let om1 = ConnectionForm::constant(unit.clone(), &[e12(2, -s), vec![ZERO; 4]], 2).unwrap();
            let cfg1 = SolverConfig { lambda: Some(it.lambda_for(&unit)), ..it.clone() };
            let (b1, _) = solve_P(&om1, 0.5, &cfg1, &heis()).unwrap();
            let diff = b_rho.values.iter().zip(&b1.values).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-12, "rho={rho}: {diff}");
        }
    }

    #[test]
    fn eta_grows_as_margin_shrinks_and_is_scale_free() {
        let c = chart(1.0, 5);
        let it = cfg(SolverBackend::Iterative);
        let wide = operator_norm_probe(&it, &c, 2, 0.25, 3, 5, &heis()).unwrap();
        let narrow = operator_norm_probe(&it, &c, 2, 0.5, 3, 5, &heis()).unwrap();
        assert!(wide.max >= narrow.max);
        let om = minus_e12_dzbar1(&c);
        let (_, r1) = solve_P(&om, 0.5, &it, &heis()).unwrap();
        let (_, r2) = solve_P(&om.scale(C64::new(3.0, 0.0)), 0.5, &it, &heis()).unwrap();
        assert!((r1.eta_hat - r2.eta_hat).abs() < 1e-9 * r1.eta_hat);
    }
}
