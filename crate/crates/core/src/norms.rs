//! Grid norms: `C^k`, Hölder seminorms, Folland–Stein norms and their
//! dilation-scaled variant, plus the arithmetic constants of the iteration
//! bookkeeping.
//!
//! The pointwise matrix norm is the operator 2-norm. A connection form is
//! measured by the largest norm among its components.

use crate::calculus::{apply_fd, TangentialFrame, VectorField};
use crate::field::{ConnectionForm, MatrixField};
use crate::geometry::{GridChart, Point, RadiusSchedule};
use crate::poly::MatPoly;
use crate::{linalg, par, Error, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Ck,
    Holder,
    Fs,
    FsScaled,
}

impl NormKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::Ck => "ck",
            NormKind::Holder => "holder",
            NormKind::Fs => "fs",
            NormKind::FsScaled => "fs_scaled",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub kind: NormKind,
    pub k: usize,
    pub alpha: f64,
    pub rho: f64,
    pub value: f64,
    /// Per-derivative (or per-order) contributions.
    pub breakdown: Vec<(String, f64)>,
    /// True when the value is only a lower bound (sampled Hölder pairs).
    pub lower_bound: bool,
}

impl NormReport {
    pub const CSV_HEADER: &'static str = "kind,k,alpha,rho,value";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{:e}", self.kind.as_str(), self.k, self.alpha, self.rho, self.value)
    }
}

/// Borrowed view of a field as a list of block arrays.
pub struct FieldView<'a> {
    pub chart: &'a Arc<GridChart>,
    pub rank: usize,
    pub comps: Vec<&'a [C64]>,
    pub defined: &'a [bool],
    pub polys: Option<Vec<MatPoly>>,
}

pub trait AsFieldView {
    fn view(&self) -> FieldView<'_>;
}

impl AsFieldView for MatrixField {
    fn view(&self) -> FieldView<'_> {
        FieldView {
            chart: &self.chart,
            rank: self.rank,
            comps: vec![&self.values],
            defined: &self.defined,
            polys: self.poly.clone().map(|p| vec![p]),
        }
    }
}

impl AsFieldView for ConnectionForm {
    fn view(&self) -> FieldView<'_> {
        FieldView {
            chart: &self.chart,
            rank: self.rank,
            comps: self.comps.iter().map(|c| c.as_slice()).collect(),
            defined: &self.defined,
            polys: self.exact.as_ref().and_then(|e| e.as_polys().map(|p| p.to_vec())),
        }
    }
}

/// Max over `points` of the operator norm of block `i` in every array.
fn sup_blocks(arrays: &[&[C64]], rank: usize, points: &[bool]) -> f64 {
    let rr = rank * rank;
    par::max_by(points.len(), |i| {
        if !points[i] {
            return 0.0;
        }
        arrays
            .iter()
            .map(|a| linalg::op_norm(&a[i * rr..(i + 1) * rr], rank))
            .fold(0.0, f64::max)
    })
}

fn and(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(&x, &y)| x && y).collect()
}

fn ball_mask(chart: &Arc<GridChart>, rho: f64) -> Result<Vec<bool>> {
    if rho >= chart.rho() {
        Ok(chart.mask().to_vec())
    } else {
        Ok(chart.restrict(rho)?.mask().to_vec())
    }
}

/// Real coordinate derivative of a polynomial along lattice axis `axis`.
fn poly_axis_derivative(p: &MatPoly, axis: usize) -> MatPoly {
    let m = p.n() - 1;
    if axis == 2 * m {
        p.d_x()
    } else if axis % 2 == 0 {
        p.d_z(axis / 2).add(&p.d_zbar(axis / 2))
    } else {
        p.d_z(axis / 2).sub(&p.d_zbar(axis / 2)).scale(crate::I)
    }
}

/// Non-decreasing axis sequences of length `k` (unordered multi-indices).
fn multi_indices(dims: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for prev in multi_indices(dims, k - 1) {
        let start = prev.last().copied().unwrap_or(0);
        for a in start..dims {
            let mut v = prev.clone();
            v.push(a);
            out.push(v);
        }
    }
    out
}

/// All coordinate derivatives of exact order `k` of each component, with
/// their defined sets. Exact when polynomial data is present.
fn coordinate_derivatives(
    f: &FieldView<'_>,
    frame_dummy: &TangentialFrame,
    k: usize,
) -> Result<Vec<(String, Vec<Vec<C64>>, Vec<bool>)>> {
    let chart = f.chart;
    let dims = chart.dims();
    let rr = f.rank * f.rank;
    let mut out = Vec::new();
    for mi in multi_indices(dims, k) {
        let label = if mi.is_empty() {
            "id".to_string()
        } else {
            mi.iter().map(|a| format!("d{a}")).collect::<Vec<_>>().join("")
        };
        if let Some(polys) = &f.polys {
            let arrays: Vec<Vec<C64>> = polys
                .iter()
                .map(|p| {
                    let d = mi.iter().fold(p.clone(), |acc, &a| poly_axis_derivative(&acc, a));
                    let mut v = vec![C64::new(0.0, 0.0); chart.len() * rr];
                    par::fill_blocks(&mut v, rr, |i, blk| {
                        if f.defined[i] {
                            blk.copy_from_slice(&d.eval(&chart.point(i)));
                        }
                    });
                    v
                })
                .collect();
            out.push((label, arrays, f.defined.to_vec()));
        } else {
            let mut arrays = Vec::new();
            let mut def = f.defined.to_vec();
            for comp in &f.comps {
                let mut vals = comp.to_vec();
                let mut d = f.defined.to_vec();
                for &a in &mi {
                    let (v, nd) = apply_fd(chart, frame_dummy, VectorField::Axis(a), &vals, rr, &d)?;
                    vals = v;
                    d = nd;
                }
                def = d;
                arrays.push(vals);
            }
            out.push((label, arrays, def));
        }
    }
    Ok(out)
}

fn axis_frame(chart: &GridChart) -> TangentialFrame {
    crate::calculus::tangential_frame(&crate::calculus::DefiningSurface::heisenberg(chart.n())).expect("frame")
}

/// `‖F‖_{ρ,k}`: max over stencil-valid points of `D_ρ` of the operator norm
/// of every coordinate derivative of order `≤ k`.
pub fn ck_norm<F: AsFieldView + ?Sized>(field: &F, rho: f64, k: usize) -> Result<NormReport> {
    let f = field.view();
    if f.chart.resolution() < 2 * k + 1 {
        return Err(Error::invalid(format!(
            "resolution {} cannot resolve derivatives of order {k}",
            f.chart.resolution()
        )));
    }
    let ball = ball_mask(f.chart, rho)?;
    let frame = axis_frame(f.chart);
    let mut breakdown = Vec::new();
    let mut value = 0.0_f64;
    for order in 0..=k {
        let mut best = 0.0_f64;
        for (_, arrays, def) in coordinate_derivatives(&f, &frame, order)? {
            let pts = and(&def, &ball);
            let refs: Vec<&[C64]> = arrays.iter().map(|a| a.as_slice()).collect();
            best = best.max(sup_blocks(&refs, f.rank, &pts));
        }
        breakdown.push((format!("order{order}"), best));
        value = value.max(best);
    }
    Ok(NormReport { kind: NormKind::Ck, k, alpha: 0.0, rho, value, breakdown, lower_bound: false })
}

/// Sup over sampled pairs of `‖D(x) - D(y)‖ / dist(x, y)^α`.
fn holder_over_pairs<D>(
    arrays: &[Vec<C64>],
    rank: usize,
    points: &[usize],
    coords: &[Vec<f64>],
    dist: D,
    alpha: f64,
    pair_budget: usize,
    seed: u64,
) -> (f64, bool)
where
    D: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    let rr = rank * rank;
    let np = points.len();
    if np < 2 {
        return (0.0, false);
    }
    let ratio = |a: usize, b: usize| -> f64 {
        let (i, j) = (points[a], points[b]);
        let d = dist(&coords[a], &coords[b]);
        if d == 0.0 {
            return 0.0;
        }
        let diff = arrays
            .iter()
            .map(|arr| {
                let x = &arr[i * rr..(i + 1) * rr];
                let y = &arr[j * rr..(j + 1) * rr];
                let delta: Vec<C64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
                linalg::op_norm(&delta, rank)
            })
            .fold(0.0, f64::max);
        diff / d.powf(alpha)
    };
    let total = np * (np - 1) / 2;
    if total <= pair_budget {
        let v = par::max_by(np, |a| (a + 1..np).map(|b| ratio(a, b)).fold(0.0, f64::max));
        (v, false)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs: Vec<(usize, usize)> = (0..pair_budget)
            .map(|_| {
                let a = rng.gen_range(0..np);
                let mut b = rng.gen_range(0..np - 1);
                if b >= a {
                    b += 1;
                }
                (a, b)
            })
            .collect();
        (par::max_by(pairs.len(), |t| ratio(pairs[t].0, pairs[t].1)), true)
    }
}

/// Hölder seminorm `H_α(∂^k F)` over the defined points of the chart's mask,
/// Euclidean distance in graph coordinates. Exhaustive below `pair_budget`
/// pairs, seeded sampling above it (then a lower bound).
pub fn holder_seminorm<F: AsFieldView + ?Sized>(
    field: &F,
    k: usize,
    alpha: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<NormReport> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("Hölder exponent must lie in [0, 1), got {alpha}")));
    }
    let f = field.view();
    let frame = axis_frame(f.chart);
    let mut value = 0.0_f64;
    let mut lower = false;
    let mut breakdown = Vec::new();
    for (label, arrays, def) in coordinate_derivatives(&f, &frame, k)? {
        let pts: Vec<usize> = (0..f.chart.len()).filter(|&i| def[i] && f.chart.mask()[i]).collect();
        let coords: Vec<Vec<f64>> = pts.iter().map(|&i| f.chart.coords(i)).collect();
        let euclid = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let (v, lb) = holder_over_pairs(&arrays, f.rank, &pts, &coords, euclid, alpha, pair_budget, seed);
        lower |= lb;
        breakdown.push((label, v));
        value = value.max(v);
    }
    Ok(NormReport {
        kind: NormKind::Holder,
        k,
        alpha,
        rho: f.chart.rho(),
        value,
        breakdown,
        lower_bound: lower,
    })
}

/// Folland–Stein word `T^m X^S X̄^R`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FsWord {
    pub m: usize,
    pub s: Vec<usize>,
    pub r: Vec<usize>,
}

impl FsWord {
    pub fn weight(&self) -> usize {
        2 * self.m + self.s.iter().sum::<usize>() + self.r.iter().sum::<usize>()
    }

    /// Operators in application order (rightmost first).
    pub fn operators(&self) -> Vec<VectorField> {
        let mut ops = Vec::new();
        for (a, &c) in self.r.iter().enumerate() {
            ops.extend(std::iter::repeat_n(VectorField::XBar(a), c));
        }
        for (a, &c) in self.s.iter().enumerate() {
            ops.extend(std::iter::repeat_n(VectorField::X(a), c));
        }
        ops.extend(std::iter::repeat_n(VectorField::T, self.m));
        ops
    }

    pub fn label(&self) -> String {
        format!("T{}X{:?}Xb{:?}", self.m, self.s, self.r)
    }
}

fn compositions(parts: usize, total: usize) -> Vec<Vec<usize>> {
    if parts == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    (0..=total)
        .flat_map(|first| {
            compositions(parts - 1, total - first).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

/// Every word with `2m + |S| + |R| ≤ k`, sorted by weight.
pub fn fs_words(n: usize, k: usize) -> Vec<FsWord> {
    let m = n - 1;
    let mut out = Vec::new();
    for w in 0..=k {
        for tm in 0..=w / 2 {
            let rest = w - 2 * tm;
            for ns in 0..=rest {
                for s in compositions(m, ns) {
                    for r in compositions(m, rest - ns) {
                        out.push(FsWord { m: tm, s: s.clone(), r });
                    }
                }
            }
        }
    }
    out
}

/// Apply an FS word to every component; exact for polynomial data.
pub fn apply_fs_word(
    f: &FieldView<'_>,
    frame: &TangentialFrame,
    word: &FsWord,
) -> Result<(Vec<Vec<C64>>, Vec<bool>)> {
    let chart = f.chart;
    let rr = f.rank * f.rank;
    if let Some(polys) = &f.polys {
        let arrays = polys
            .iter()
            .map(|p| {
                let d = word
                    .operators()
                    .into_iter()
                    .fold(p.clone(), |acc, v| frame.apply_poly(v, &acc).expect("hyperquadric"));
                let mut v = vec![C64::new(0.0, 0.0); chart.len() * rr];
                par::fill_blocks(&mut v, rr, |i, blk| {
                    if f.defined[i] {
                        blk.copy_from_slice(&d.eval(&chart.point(i)));
                    }
                });
                v
            })
            .collect();
        return Ok((arrays, f.defined.to_vec()));
    }
    let mut arrays = Vec::new();
    let mut def = f.defined.to_vec();
    for comp in &f.comps {
        let mut vals = comp.to_vec();
        let mut d = f.defined.to_vec();
        for v in word.operators() {
            let (nv, nd) = apply_fd(chart, frame, v, &vals, rr, &d)?;
            vals = nv;
            d = nd;
        }
        def = d;
        arrays.push(vals);
    }
    Ok((arrays, def))
}

/// Korányi distance `|q^{-1} p|` between graph points.
pub fn koranyi_distance(n: usize, x: &[f64], y: &[f64]) -> f64 {
    let to_point = |c: &[f64]| {
        Point::new((0..n - 1).map(|a| C64::new(c[2 * a], c[2 * a + 1])).collect(), c[2 * n - 2])
    };
    let p = to_point(x);
    let q = to_point(y);
    q.group_inv().group_mul(&p).koranyi()
}

pub const FS_PAIR_BUDGET: usize = 20_000;
pub const FS_PAIR_SEED: u64 = 0x5eed;

/// Folland–Stein norm on the hyperquadric: sup of every `T^m X^S X̄^R F`
/// with weight `≤ k`, plus (for `α > 0`) the Korányi Hölder seminorm of the
/// weight-`k` derivatives.
pub fn fs_norm<F: AsFieldView + ?Sized>(field: &F, k: usize, alpha: f64, frame: &TangentialFrame) -> Result<NormReport> {
    if !frame.is_heisenberg() {
        return Err(Error::UnsupportedSurface("Folland-Stein norms need h = 0".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("Hölder exponent must lie in [0, 1), got {alpha}")));
    }
    let f = field.view();
    let chart = f.chart;
    let n = chart.n();
    let mut sup = 0.0_f64;
    let mut hol = 0.0_f64;
    let mut lower = false;
    let mut breakdown = Vec::new();
    for word in fs_words(n, k) {
        let (arrays, def) = apply_fs_word(&f, frame, &word)?;
        let pts = and(&def, chart.mask());
        let refs: Vec<&[C64]> = arrays.iter().map(|a| a.as_slice()).collect();
        let v = sup_blocks(&refs, f.rank, &pts);
        breakdown.push((word.label(), v));
        sup = sup.max(v);
        if alpha > 0.0 && word.weight() == k {
            let idx: Vec<usize> = (0..chart.len()).filter(|&i| pts[i]).collect();
            let coords: Vec<Vec<f64>> = idx.iter().map(|&i| chart.coords(i)).collect();
            let (h, lb) = holder_over_pairs(
                &arrays,
                f.rank,
                &idx,
                &coords,
                |x, y| koranyi_distance(n, x, y),
                alpha,
                FS_PAIR_BUDGET,
                FS_PAIR_SEED,
            );
            lower |= lb;
            hol = hol.max(h);
        }
    }
    if alpha > 0.0 {
        breakdown.push(("holder".into(), hol));
    }
    Ok(NormReport {
        kind: NormKind::Fs,
        k,
        alpha,
        rho: chart.rho(),
        value: sup + hol,
        breakdown,
        lower_bound: lower,
    })
}

/// `‖φ‖_{ρ,k,α} = ‖T_ρ^* φ‖_{1,k,α}`: restrict to `D_ρ`, pull back to the
/// unit ball and take the ordinary FS norm there.
pub fn scaled_fs_norm(
    phi: &ConnectionForm,
    rho: f64,
    k: usize,
    alpha: f64,
    frame: &TangentialFrame,
) -> Result<NormReport> {
    let restricted = if rho < phi.chart.rho() {
        phi.restricted(&Arc::new(phi.chart.restrict(rho)?))?
    } else if rho == phi.chart.rho() {
        phi.clone()
    } else {
        return Err(Error::invalid(format!("radius {rho} exceeds the chart radius {}", phi.chart.rho())));
    };
    let pulled = crate::calculus::pullback_form(&restricted, rho)?;
    let mut rep = fs_norm(&pulled, k, alpha, frame)?;
    rep.kind = NormKind::FsScaled;
    rep.rho = rho;
    Ok(rep)
}


/// Measured constants for the iteration predicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub k: usize,
    /// `c̃_k ≥ 1` with `‖AB‖_{ρ,k} ≤ c̃_k ‖A‖_{ρ,k} ‖B‖_{ρ,k}`.
    pub c_tilde: f64,
    /// Largest ratio actually observed over the trials.
    pub observed_ratio: f64,
    pub trials: usize,
    /// Calibration standing in for the kernel constant, from solver probes.
    pub c_k3: Option<f64>,
}

/// Seeded random matrix polynomial of degree `≤ degree` in `(z', z̄', x^n)`
/// with coefficients uniform in the unit square.
pub fn random_matrix_poly(n: usize, r: usize, degree: u32, rng: &mut ChaCha8Rng) -> MatPoly {
    let nv = 2 * (n - 1) + 1;
    let mut p = MatPoly::zero(n, r);
    let mut exps: Vec<Vec<u16>> = vec![vec![]];
    for _ in 0..nv {
        exps = exps
            .into_iter()
            .flat_map(|e| (0..=degree as u16).map(move |k| {
                let mut v = e.clone();
                v.push(k);
                v
            }))
            .filter(|e| e.iter().map(|&k| k as u32).sum::<u32>() <= degree)
            .collect();
    }
    for e in exps {
        let c: Vec<C64> = (0..r * r)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        p.add_term(e, &c);
    }
    p
}

/// Measure `c̃_k` as the largest `‖AB‖/(‖A‖‖B‖)` over seeded random
/// polynomial pairs of degree `≤ 2`, floored at 1.
pub fn submultiplicativity_constant(
    chart: &Arc<GridChart>,
    rank: usize,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<NormConstants> {
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = chart.n();
    let mut observed = 0.0_f64;
    for _ in 0..trials {
        let a = MatrixField::from_poly(chart.clone(), &random_matrix_poly(n, rank, 2, &mut rng));
        let b = MatrixField::from_poly(chart.clone(), &random_matrix_poly(n, rank, 2, &mut rng));
        let ab = a.mul(&b)?;
        let rho = chart.rho();
        let ratio = ck_norm(&ab, rho, k)?.value / (ck_norm(&a, rho, k)?.value * ck_norm(&b, rho, k)?.value);
        observed = observed.max(ratio);
    }
    Ok(NormConstants { k, c_tilde: observed.max(1.0), observed_ratio: observed, trials, c_k3: None })
}

/// Kernel-estimate law `c · σ^{-2n-2k+1} ρ^{-2k}` for comparison with
/// measured solver norms.
pub fn eta_bound(n: usize, k: usize, rho: f64, sigma: f64, c: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::invalid(format!("sigma must lie in (0, 1), got {sigma}")));
    }
    let e = -(2 * n as i32) - 2 * k as i32 + 1;
    Ok(c * sigma.powi(e) * rho.powi(-2 * k as i32))
}

/// Growth factor `α_j = 2^{2n+2k-1} (1 - σ_j)^{-2k}` with `σ_j = 2^{-j-1}`.
pub fn alpha_j(n: usize, k: usize, j: usize) -> f64 {
    let s = RadiusSchedule::sigma(j);
    2.0_f64.powi(2 * n as i32 + 2 * k as i32 - 1) * (1.0 - s).powi(-2 * k as i32)
}
