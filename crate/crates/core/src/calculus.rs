//! Tangential vector fields, `∂̄_M`, wedge products, the integrability
//! residual and the gauge law, with an exact polynomial path and a
//! second-order central-difference grid path.

use crate::field::{check_lattice, check_rank, ConnectionForm, ExactForm, MatrixField, TwoForm};
use crate::geometry::{GridChart, Point};
use crate::poly::MatPoly;
use crate::{field, linalg, par, Error, Result, C64, I};
use std::sync::Arc;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Defining function `r = -y^n + |z'|² + h(z', x^n)`.
#[derive(Clone, Debug, PartialEq)]
pub enum DefiningSurface {
    /// `h ≡ 0`: the Heisenberg group.
    Heisenberg { n: usize },
    /// Real polynomial `h` in `(z', z̄', x^n)` vanishing to second order at 0.
    Graph { n: usize, h: MatPoly },
}

impl DefiningSurface {
    pub fn heisenberg(n: usize) -> Self {
        DefiningSurface::Heisenberg { n }
    }

    pub fn graph(h: MatPoly) -> Result<Self> {
        if h.rank() != 1 {
            return Err(Error::invalid("h must be scalar"));
        }
        if h.min_degree(crate::poly::Grading::Ordinary).is_some_and(|d| d < 2) {
            return Err(Error::invalid("h must satisfy h(0) = 0 and dh(0) = 0"));
        }
        // Real-valuedness: coefficient of z^S z̄^R x^m is the conjugate of that of z^R z̄^S x^m.
        let m = h.n() - 1;
        for (e, c) in h.terms() {
            let mut swapped = e.clone();
            for a in 0..m {
                swapped.swap(a, m + a);
            }
            let other = h.coeff(&swapped).map(|v| v[0]).unwrap_or(ZERO);
            if (other.conj() - c[0]).norm() > 1e-14 * (1.0 + c[0].norm()) {
                return Err(Error::invalid("h must be real-valued"));
            }
        }
        Ok(DefiningSurface::Graph { n: h.n(), h })
    }

    pub fn n(&self) -> usize {
        match self {
            DefiningSurface::Heisenberg { n } | DefiningSurface::Graph { n, .. } => *n,
        }
    }

    pub fn is_heisenberg(&self) -> bool {
        matches!(self, DefiningSurface::Heisenberg { .. })
    }

    pub fn h(&self, p: &Point) -> f64 {
        match self {
            DefiningSurface::Heisenberg { .. } => 0.0,
            DefiningSurface::Graph { h, .. } => h.eval(p)[0].re,
        }
    }

    /// `y^n` of the point of `M` above the graph point.
    pub fn yn(&self, p: &Point) -> f64 {
        p.zprime_norm_sq() + self.h(p)
    }
}

/// First-order operators `X_α`, `X_ᾱ`, `T` in graph coordinates.
///
/// `X_ᾱ = ∂_{z̄^α} + c_α ∂_{x^n}` with `c_α = -(z^α + h_ᾱ)/(h_x - i)`, which is
/// `-i z^α` on the hyperquadric; `X_α` is its conjugate and `T = ∂_{x^n}`.
#[derive(Clone, Debug)]
pub struct TangentialFrame {
    surface: DefiningSurface,
    /// `∂h/∂z̄^α` and `∂h/∂x` as polynomials (graph case only).
    dh: Option<(Vec<MatPoly>, MatPoly)>,
}

/// A single first-order operator of the frame or a coordinate axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VectorField {
    XBar(usize),
    X(usize),
    T,
    Axis(usize),
}

pub fn tangential_frame(surface: &DefiningSurface) -> Result<TangentialFrame> {
    let dh = match surface {
        DefiningSurface::Heisenberg { .. } => None,
        DefiningSurface::Graph { n, h } => {
            let m = n - 1;
            Some(((0..m).map(|a| h.d_zbar(a)).collect(), h.d_x()))
        }
    };
    Ok(TangentialFrame { surface: surface.clone(), dh })
}

impl TangentialFrame {
    pub fn surface(&self) -> &DefiningSurface {
        &self.surface
    }

    pub fn is_heisenberg(&self) -> bool {
        self.surface.is_heisenberg()
    }

    /// Coefficient `c_α(p)` of `∂_{x^n}` in `X_ᾱ`.
    pub fn xbar_coeff(&self, alpha: usize, p: &Point) -> Result<C64> {
        match &self.dh {
            None => Ok(-I * p.zprime[alpha]),
            Some((hz, hx)) => {
                let rn = C64::new(hx.eval(p)[0].re, -1.0);
                if !(rn.norm() > 0.0) || !rn.norm().is_finite() {
                    return Err(Error::DegenerateSurface(vec![p.xn]));
                }
                Ok(-(p.zprime[alpha] + hz[alpha].eval(p)[0]) / rn)
            }
        }
    }

    /// Coefficients of `v` along every lattice axis at point `p`.
    pub fn axis_coeffs(&self, v: VectorField, p: &Point, dims: usize) -> Result<Vec<C64>> {
        let mut c = vec![ZERO; dims];
        match v {
            VectorField::XBar(a) => {
                c[2 * a] = C64::new(0.5, 0.0);
                c[2 * a + 1] = C64::new(0.0, 0.5);
                c[dims - 1] = self.xbar_coeff(a, p)?;
            }
            VectorField::X(a) => {
                c[2 * a] = C64::new(0.5, 0.0);
                c[2 * a + 1] = C64::new(0.0, -0.5);
                c[dims - 1] = self.xbar_coeff(a, p)?.conj();
            }
            VectorField::T => c[dims - 1] = C64::new(1.0, 0.0),
            VectorField::Axis(a) => c[a] = C64::new(1.0, 0.0),
        }
        Ok(c)
    }

    /// Exact action on a polynomial (hyperquadric only).
    pub fn apply_poly(&self, v: VectorField, p: &MatPoly) -> Option<MatPoly> {
        if !self.is_heisenberg() {
            return None;
        }
        Some(match v {
            VectorField::XBar(a) => p.xbar(a),
            VectorField::X(a) => p.x_hol(a),
            VectorField::T => p.d_x(),
            VectorField::Axis(_) => return None,
        })
    }
}

/// Central-difference application of `v` to a block field.
///
/// Returns the new values and the eroded defined set.
pub fn apply_fd(
    chart: &GridChart,
    frame: &TangentialFrame,
    v: VectorField,
    values: &[C64],
    block: usize,
    defined: &[bool],
) -> Result<(Vec<C64>, Vec<bool>)> {
    let dims = chart.dims();
    let out_def = chart.erode(defined);
    let h: Vec<f64> = (0..dims).map(|a| chart.axis_spacing(a)).collect();
    let coeffs: Vec<Option<Vec<C64>>> = par::map_collect(chart.len(), |i| {
        out_def[i].then(|| frame.axis_coeffs(v, &chart.point(i), dims)).transpose().ok().flatten()
    });
    if coeffs.iter().zip(&out_def).any(|(c, &d)| d && c.is_none()) {
        return Err(Error::DegenerateSurface(vec![]));
    }
    let mut out = vec![ZERO; values.len()];
    par::fill_blocks(&mut out, block, |i, blk| {
        let Some(c) = &coeffs[i] else { return };
        for (a, &ca) in c.iter().enumerate() {
            if ca == ZERO {
                continue;
            }
            let w = ca / (2.0 * h[a]);
            let ip = chart.neighbor(i, a, 1).unwrap();
            let im = chart.neighbor(i, a, -1).unwrap();
            for k in 0..block {
                blk[k] += w * (values[ip * block + k] - values[im * block + k]);
            }
        }
    });
    Ok((out, out_def))
}

/// Apply `v` to a matrix field: exact for polynomial fields on the
/// hyperquadric, central differences otherwise.
pub fn apply_field(field: &MatrixField, frame: &TangentialFrame, v: VectorField) -> Result<MatrixField> {
    if let Some(p) = field.poly.as_ref().and_then(|p| frame.apply_poly(v, p)) {
        let mut out = MatrixField::from_poly(field.chart.clone(), &p);
        out.defined = field.defined.clone();
        return Ok(out);
    }
    let (values, defined) = apply_fd(&field.chart, frame, v, &field.values, field.block_len(), &field.defined)?;
    Ok(MatrixField { chart: field.chart.clone(), rank: field.rank, values, defined, poly: None })
}

/// `∂̄_M A = Σ_α (X_ᾱ A) dz̄^α`, entrywise.
pub fn dbar_matrix(a: &MatrixField, frame: &TangentialFrame) -> Result<ConnectionForm> {
    check_n(&a.chart, frame)?;
    let m = a.chart.n() - 1;
    let comps = (0..m)
        .map(|al| apply_field(a, frame, VectorField::XBar(al)))
        .collect::<Result<Vec<_>>>()?;
    ConnectionForm::from_components(comps)
}

/// `∂̄_M f` for a scalar (rank 1) field.
pub fn dbar_scalar(f: &MatrixField, frame: &TangentialFrame) -> Result<ConnectionForm> {
    if f.rank != 1 {
        return Err(Error::invalid("dbar_scalar expects a rank-1 field"));
    }
    dbar_matrix(f, frame)
}

fn check_n(chart: &GridChart, frame: &TangentialFrame) -> Result<()> {
    if chart.n() != frame.surface().n() {
        return Err(Error::invalid("chart and surface disagree on n"));
    }
    Ok(())
}

fn two_form_from_pointwise<F>(chart: &Arc<GridChart>, rank: usize, defined: Vec<bool>, f: F) -> TwoForm
where
    F: Fn(usize, usize, usize) -> Vec<C64> + Sync + Send,
{
    let pairs = field::ordered_pairs(chart.n() - 1);
    let rr = rank * rank;
    let comps = pairs
        .iter()
        .map(|&(a, b)| {
            let mut v = vec![ZERO; chart.len() * rr];
            par::fill_blocks(&mut v, rr, |i, blk| {
                if defined[i] {
                    blk.copy_from_slice(&f(a, b, i));
                }
            });
            v
        })
        .collect();
    TwoForm { chart: chart.clone(), rank, pairs, comps, defined }
}

/// Exact `X_β̄ Γ_ᾱ` at every defined point, indexed `[α][β]`.
fn exact_derivatives(phi: &ConnectionForm, exact: &ExactForm) -> Result<Vec<Option<Vec<Vec<Vec<C64>>>>>> {
    let chart = &phi.chart;
    let prepared = exact.prepare();
    Ok(par::map_collect(chart.len(), |i| {
        if !phi.defined[i] {
            return None;
        }
        prepared.jets(&chart.point(i)).map(|j| j.into_iter().map(|jet| jet.d).collect())
    }))
}

/// `∂̄_M φ` with coefficient `X_ᾱ φ_β̄ - X_β̄ φ_ᾱ` at `(α, β)`, `α < β`.
pub fn dbar_form(phi: &ConnectionForm, frame: &TangentialFrame) -> Result<TwoForm> {
    check_n(&phi.chart, frame)?;
    let r = phi.rank;
    let m = phi.n_comps();
    if let (Some(exact), true) = (&phi.exact, frame.is_heisenberg()) {
        let ders = exact_derivatives(phi, exact)?;
        if ders.iter().zip(&phi.defined).any(|(d, &def)| def && d.is_none()) {
            return Err(Error::invalid("exact form is singular on the chart"));
        }
        return Ok(two_form_from_pointwise(&phi.chart, r, phi.defined.clone(), |a, b, i| {
            let d = ders[i].as_ref().unwrap();
            d[b][a].iter().zip(&d[a][b]).map(|(x, y)| x - y).collect()
        }));
    }
    // grid: X_β̄ applied to each component
    let mut ders: Vec<Vec<Vec<C64>>> = vec![Vec::new(); m];
    let mut defined = vec![true; phi.chart.len()];
    for (a, comp) in phi.comps.iter().enumerate() {
        for b in 0..m {
            let (v, d) = apply_fd(&phi.chart, frame, VectorField::XBar(b), comp, r * r, &phi.defined)?;
            defined.iter_mut().zip(&d).for_each(|(x, &y)| *x &= y);
            ders[a].push(v);
        }
    }
    let rr = r * r;
    Ok(two_form_from_pointwise(&phi.chart, r, defined, |a, b, i| {
        (0..rr).map(|k| ders[b][a][i * rr + k] - ders[a][b][i * rr + k]).collect()
    }))
}

/// `ω ∧ ω'` with coefficient `Γ_ᾱ Γ'_β̄ - Γ_β̄ Γ'_ᾱ` at `(α, β)`.
pub fn wedge(omega: &ConnectionForm, omega2: &ConnectionForm) -> Result<TwoForm> {
    check_lattice(&omega.chart, &omega2.chart)?;
    check_rank(omega.rank, omega2.rank)?;
    let r = omega.rank;
    let defined: Vec<bool> = omega.defined.iter().zip(&omega2.defined).map(|(&a, &b)| a && b).collect();
    Ok(two_form_from_pointwise(&omega.chart, r, defined, |a, b, i| {
        let x = linalg::mul(omega.at(a, i), omega2.at(b, i), r);
        let y = linalg::mul(omega.at(b, i), omega2.at(a, i), r);
        x.iter().zip(&y).map(|(p, q)| p - q).collect()
    }))
}

/// `∂̄_M ω - ω ∧ ω`; vanishes exactly when `ω` is integrable.
pub fn integrability_residual(omega: &ConnectionForm, frame: &TangentialFrame) -> Result<TwoForm> {
    let d = dbar_form(omega, frame)?;
    let w = wedge(omega, omega)?;
    let defined: Vec<bool> = d.defined.iter().zip(&w.defined).map(|(&a, &b)| a && b).collect();
    let comps = d
        .comps
        .iter()
        .zip(&w.comps)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
        .collect();
    Ok(TwoForm { chart: d.chart, rank: d.rank, pairs: d.pairs, comps, defined })
}

/// Tolerance on the smallest singular value of a gauge matrix.
pub const GAUGE_SINGULAR_TOL: f64 = 1e-12;

/// `ω̃ = (∂̄_M A + A ω) A^{-1}`, componentwise `Γ̃_ᾱ = (X_ᾱA + AΓ_ᾱ)A^{-1}`.
pub fn gauge_transform(omega: &ConnectionForm, a: &MatrixField, frame: &TangentialFrame) -> Result<ConnectionForm> {
    check_lattice(&omega.chart, &a.chart)?;
    check_rank(omega.rank, a.rank)?;
    check_n(&omega.chart, frame)?;
    let ainv = a.inverse(GAUGE_SINGULAR_TOL)?;
    if let (Some(ex), Some(ap), true) = (&omega.exact, &a.poly, frame.is_heisenberg()) {
        let exact = ex.gauged(ap);
        let mut out = ConnectionForm::from_exact(omega.chart.clone(), &exact)?;
        out.defined = omega.defined.iter().zip(&a.defined).map(|(&x, &y)| x && y).collect();
        return Ok(out);
    }
    let r = a.rank;
    let rr = r * r;
    let da = dbar_matrix(a, frame)?;
    let defined: Vec<bool> = da
        .defined
        .iter()
        .zip(&omega.defined)
        .zip(&ainv.defined)
        .map(|((&x, &y), &z)| x && y && z)
        .collect();
    let comps = (0..omega.n_comps())
        .map(|al| {
            let mut v = vec![ZERO; omega.chart.len() * rr];
            par::fill_blocks(&mut v, rr, |i, blk| {
                if defined[i] {
                    let mut t = linalg::mul(a.at(i), omega.at(al, i), r);
                    t.iter_mut().zip(da.at(al, i)).for_each(|(x, y)| *x += y);
                    linalg::mul_into(&t, ainv.at(i), r, blk);
                }
            });
            v
        })
        .collect();
    Ok(ConnectionForm { chart: omega.chart.clone(), rank: r, comps, defined, exact: None })
}

/// `T_κ^* ω = √κ Σ Γ_ᾱ(√κ z', κ x^n) dz̄^α`, on the lattice `T_κ^{-1}` of
/// the input chart (same indices, radius `ρ/κ`).
pub fn pullback_form(omega: &ConnectionForm, kappa: f64) -> Result<ConnectionForm> {
    let chart = Arc::new(omega.chart.pulled_back(kappa)?);
    let s = kappa.sqrt();
    let exact = omega.exact.as_ref().map(|e| pullback_exact(e, kappa));
    Ok(ConnectionForm {
        chart,
        rank: omega.rank,
        comps: omega.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
        defined: omega.defined.clone(),
        exact,
    })
}

/// Pull back onto an arbitrary chart. Needs exact data unless the target is
/// the dilated lattice of the source.
pub fn pullback_form_onto(omega: &ConnectionForm, kappa: f64, target: &Arc<GridChart>) -> Result<ConnectionForm> {
    let own = omega.chart.pulled_back(kappa)?;
    if own.same_lattice(target) {
        return pullback_form(omega, kappa)?.restricted(target);
    }
    match &omega.exact {
        Some(e) => ConnectionForm::from_exact(target.clone(), &pullback_exact(e, kappa)),
        None => Err(Error::UnsupportedScale(kappa)),
    }
}

pub fn pullback_exact(e: &ExactForm, kappa: f64) -> ExactForm {
    let s = C64::new(kappa.sqrt(), 0.0);
    ExactForm {
        base: e.base.iter().map(|b| b.dilate_args(kappa).scale(s)).collect(),
        p: e.p.dilate_args(kappa),
        q: e.q.iter().map(|f| f.dilate_args(kappa)).collect(),
    }
}

/// Pull back a function: `(T_κ^* f)(p) = f(T_κ p)`; same indices on the
/// dilated lattice.
pub fn pullback_function(f: &MatrixField, kappa: f64) -> Result<MatrixField> {
    let chart = Arc::new(f.chart.pulled_back(kappa)?);
    Ok(MatrixField {
        chart,
        poly: f.poly.as_ref().map(|p| p.dilate_args(kappa)),
        ..f.clone()
    })
}
