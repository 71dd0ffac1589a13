//! Preliminary frame changes that make `ω` vanish to high order at the
//! origin, plus the dilation prescale.
//!
//! Stage `s` kills the grade-`s` part of `ω` with `A = I + A^{(s+1)}`,
//! `X_ᾱ A^{(s+1)} = -Γ_ᾱ^{(s)}` to leading order. In ordinary grading the
//! leading part of `X_ᾱ` is `∂/∂z̄^α` with `(z', x^n)` as parameters; in
//! weighted grading `X_ᾱ` is homogeneous and becomes exactly `∂/∂z̄^α` in the
//! CR coordinates `(z', z̄', w)`. Either way the equation is a flat `∂̄` in
//! `z̄'`, solved by the radial homotopy, which is consistent exactly when the
//! barred coefficients are symmetric.

use crate::calculus::{gauge_transform, pullback_exact, pullback_form, TangentialFrame};
use crate::field::{ConnectionForm, MatrixField};
use crate::geometry::build_grid;
use crate::norms::ck_norm;
use crate::poly::{Exponent, Grading, MatPoly};
use crate::series::{Basis, Series};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Relative symmetry defect above which a jet is treated as non-integrable.
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JetMode {
    Ordinary,
    Weighted,
}

impl JetMode {
    pub fn grading(self) -> Grading {
        match self {
            JetMode::Ordinary => Grading::Ordinary,
            JetMode::Weighted => Grading::Weighted,
        }
    }
}

/// The grade-`order` part of `ω` at the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JetSpec {
    pub order: u32,
    pub mode: JetMode,
    pub n: usize,
    pub rank: usize,
    /// Homogeneous grade-`order` part of each `Γ_ᾱ`, in `(z', z̄', x^n)`.
    pub components: Vec<MatPoly>,
    /// Largest coefficient of `∂_{z̄^α}Γ_β̄ - ∂_{z̄^β}Γ_ᾱ` over `α < β`.
    pub symmetry_defect: f64,
    /// `symmetry_defect` divided by the largest jet coefficient.
    pub relative_defect: f64,
    pub warning: Option<String>,
}

impl JetSpec {
    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_zero())
    }

    pub fn max_coeff(&self) -> f64 {
        self.components.iter().map(|c| c.max_coeff()).fold(0.0, f64::max)
    }

    /// `Γ_{ᾱ,B̄}`: the coefficient of `z̄^B` in `Γ_ᾱ^{(s)}`, a polynomial in
    /// `(z', x^n)`.
    pub fn barred_coefficient(&self, alpha: usize, b: &[u16]) -> MatPoly {
        let m = self.n - 1;
        let mut out = MatPoly::zero(self.n, self.rank);
        for (e, c) in self.components[alpha].terms() {
            if e[m..2 * m] == *b {
                let mut rest = e.clone();
                rest[m..2 * m].iter_mut().for_each(|d| *d = 0);
                out.add_term(rest, c);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Components in the coordinates where `X_ᾱ` acts as `∂/∂z̄^α`.
    fn flat_components(&self) -> Result<Vec<MatPoly>> {
        match self.mode {
            JetMode::Ordinary => Ok(self.components.clone()),
            JetMode::Weighted => shear_all(&self.components, self.order, C64::new(0.0, -1.0)),
        }
    }
}

fn shear_all(polys: &[MatPoly], grade: u32, c: C64) -> Result<Vec<MatPoly>> {
    let n = polys.first().map(|p| p.n()).ok_or_else(|| Error::invalid("empty jet"))?;
    let basis = Basis::get(n, Grading::Weighted, grade + 1);
    polys.iter().map(|p| Ok(Series::from_poly(basis.clone(), p).shear(c)?.to_poly())).collect()
}

fn unit(n: usize, v: usize) -> Exponent {
    let mut e = vec![0u16; 2 * (n - 1) + 1];
    e[v] = 1;
    e
}

fn symmetry_defect(flat: &[MatPoly]) -> f64 {
    let m = flat.len();
    let mut d = 0.0_f64;
    for a in 0..m {
        for b in a + 1..m {
            d = d.max(flat[b].d_zbar(a).sub(&flat[a].d_zbar(b)).max_coeff());
        }
    }
    d
}

/// Radial homotopy in `z̄'`: `Σ_α z̄^α φ_α / (deg_z̄ + 1)` termwise.
fn zbar_homotopy(flat: &[MatPoly]) -> MatPoly {
    let n = flat[0].n();
    let m = n - 1;
    let mut out = MatPoly::zero(n, flat[0].rank());
    for (alpha, phi) in flat.iter().enumerate() {
        let shift = unit(n, m + alpha);
        for (e, c) in phi.terms() {
            let dz: u32 = e[m..2 * m].iter().map(|&d| d as u32).sum();
            let f = C64::new(1.0 / (dz as f64 + 1.0), 0.0);
            let ne: Exponent = e.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let scaled: Vec<C64> = c.iter().map(|z| z * f).collect();
            out.add_term(ne, &scaled);
        }
    }
    out
}

/// Real-coordinate central-difference Taylor polynomial of degree `≤ s`
/// (`s ≤ 2`) of each component at the lattice origin.
fn fd_taylor(omega: &ConnectionForm, s: u32) -> Result<Vec<MatPoly>> {
    if s > 2 {
        return Err(Error::invalid("grid jets are available through order 2 only"));
    }
    let chart = &omega.chart;
    let n = chart.n();
    let m = n - 1;
    let dims = chart.dims();
    let r = omega.rank;
    let rr = r * r;
    let o = chart.origin();
    let star = chart.erode(&omega.defined);
    if !star[o] {
        return Err(Error::invalid("origin stencil leaves the defined region"));
    }
    // real coordinates as polynomials in (z', z̄', x)
    let half = C64::new(0.5, 0.0);
    let coord: Vec<MatPoly> = (0..dims)
        .map(|ax| {
            if ax == dims - 1 {
                MatPoly::var_x(n)
            } else if ax % 2 == 0 {
                MatPoly::var_z(n, ax / 2).add(&MatPoly::var_zbar(n, ax / 2)).scale(half)
            } else {
                MatPoly::var_z(n, ax / 2).sub(&MatPoly::var_zbar(n, ax / 2)).scale(C64::new(0.0, -0.5))
            }
        })
        .collect();
    let val = |a: usize, i: usize| -> &[C64] { &omega.comps[a][i * rr..(i + 1) * rr] };
    let nb = |i: usize, ax: usize, d: i64| chart.neighbor(i, ax, d).expect("interior origin");
    let mut out = vec![MatPoly::zero(n, r); m];
    for (a, poly) in out.iter_mut().enumerate() {
        let mut add = |coef: Vec<C64>, mono: MatPoly| {
            *poly = poly.add(&mono.scalar_times_matrix(&coef, r));
        };
        if s == 0 {
            add(val(a, o).to_vec(), MatPoly::identity(n, 1));
            continue;
        }
        for ax in 0..dims {
            let h = chart.axis_spacing(ax);
            let (p, q) = (nb(o, ax, 1), nb(o, ax, -1));
            if s == 1 {
                let c = val(a, p).iter().zip(val(a, q)).map(|(x, y)| (x - y) / (2.0 * h)).collect();
                add(c, coord[ax].clone());
                continue;
            }
            // s == 2: pure second derivative / 2
            let c = (0..rr).map(|k| (val(a, p)[k] - 2.0 * val(a, o)[k] + val(a, q)[k]) / (2.0 * h * h)).collect();
            add(c, coord[ax].mul(&coord[ax]));
            for bx in ax + 1..dims {
                let hb = chart.axis_spacing(bx);
                let pp = nb(nb(o, ax, 1), bx, 1);
                let pm = nb(nb(o, ax, 1), bx, -1);
                let mp = nb(nb(o, ax, -1), bx, 1);
                let mm = nb(nb(o, ax, -1), bx, -1);
                let c = (0..rr)
                    .map(|k| (val(a, pp)[k] - val(a, pm)[k] - val(a, mp)[k] + val(a, mm)[k]) / (4.0 * h * hb))
                    .collect();
                add(c, coord[ax].mul(&coord[bx]));
            }
        }
    }
    Ok(out)
}

/// Grade-`s` jet of `ω` at the origin: exact for exactly represented forms
/// on the hyperquadric, central differences otherwise (ordinary mode only).
pub fn extract_jet(omega: &ConnectionForm, s: u32, mode: JetMode, frame: &TangentialFrame) -> Result<JetSpec> {
    let n = omega.chart.n();
    let g = mode.grading();
    if mode == JetMode::Weighted && !frame.is_heisenberg() {
        return Err(Error::UnsupportedSurface("weighted jets need h = 0".into()));
    }
    let components: Vec<MatPoly> = match (&omega.exact, frame.is_heisenberg()) {
        (Some(exact), true) => exact.taylor(g, s)?.iter().map(|p| p.homogeneous_part(g, s)).collect(),
        _ => {
            if mode == JetMode::Weighted {
                return Err(Error::invalid("weighted jets need an exactly represented form"));
            }
            fd_taylor(omega, s)?.iter().map(|p| p.homogeneous_part(g, s)).collect()
        }
    };
    let mut jet = JetSpec {
        order: s,
        mode,
        n,
        rank: omega.rank,
        components,
        symmetry_defect: 0.0,
        relative_defect: 0.0,
        warning: None,
    };
    let flat = jet.flat_components()?;
    jet.symmetry_defect = symmetry_defect(&flat);
    let scale = jet.max_coeff();
    jet.relative_defect = if scale > 0.0 { jet.symmetry_defect / scale } else { 0.0 };
    if jet.relative_defect > SYMMETRY_TOL {
        let msg = format!(
            "grade-{s} jet is not symmetric (relative defect {:.3e}); the form is not integrable at 0",
            jet.relative_defect
        );
        log::warn!("{msg}");
        jet.warning = Some(msg);
    }
    Ok(jet)
}

/// `A = I + A^{(s+1)}` killing the jet, as an exact polynomial. The free CR
/// summand is taken to be zero: every term of `A^{(s+1)}` carries a `z̄'`.
pub fn taylor_gauge(jet: &JetSpec) -> Result<MatPoly> {
    let id = MatPoly::identity(jet.n, jet.rank);
    if jet.is_zero() {
        return Ok(id);
    }
    if jet.relative_defect > SYMMETRY_TOL {
        return Err(Error::NoSolution { defect: jet.relative_defect, tol: SYMMETRY_TOL });
    }
    let h = zbar_homotopy(&jet.flat_components()?);
    let a1 = match jet.mode {
        JetMode::Ordinary => h,
        JetMode::Weighted => shear_all(&[h], jet.order + 1, C64::new(0.0, 1.0))?.remove(0),
    };
    Ok(id.sub(&a1))
}

/// Result of [`normalize_to_order`].
#[derive(Clone, Debug)]
pub struct Normalized {
    /// Total frame change `A_k ⋯ A_0`.
    pub gauge: MatrixField,
    /// The stage gauges, leftmost applied last.
    pub factors: Vec<MatPoly>,
    pub omega: ConnectionForm,
    pub jets: Vec<JetSpec>,
}

/// Kill the jets of grade `0..=k` one stage at a time.
pub fn normalize_to_order(omega: &ConnectionForm, k: u32, mode: JetMode, frame: &TangentialFrame) -> Result<Normalized> {
    let chart = omega.chart.clone();
    let n = chart.n();
    let r = omega.rank;
    let mut current = omega.clone();
    let mut factors: Vec<MatPoly> = Vec::new();
    let mut jets = Vec::new();
    for s in 0..=k {
        let jet = extract_jet(&current, s, mode, frame)?;
        let a = taylor_gauge(&jet)?;
        jets.push(jet);
        if a == MatPoly::identity(n, r) {
            continue;
        }
        current = match (&current.exact, frame.is_heisenberg()) {
            (Some(exact), true) => ConnectionForm::from_exact(chart.clone(), &exact.gauged(&a))?,
            _ => gauge_transform(&current, &MatrixField::from_poly(chart.clone(), &a), frame)?,
        };
        factors.insert(0, a);
    }
    let total = factors.iter().fold(MatPoly::identity(n, r), |acc, f| acc.mul(f));
    Ok(Normalized { gauge: MatrixField::from_poly(chart, &total), factors, omega: current, jets })
}

/// `ω^κ = T_κ^* ω` on the unit ball, with its achieved `‖ω^κ‖_{1,0}`.
///
/// Exactly represented forms are re-evaluated on a fresh unit lattice of the
/// same resolution; grid forms are restricted to `D_κ` and carried over.
pub fn dilation_prescale(omega: &ConnectionForm, kappa: f64, frame: &TangentialFrame) -> Result<(ConnectionForm, f64)> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::invalid(format!("prescale kappa must lie in (0, 1], got {kappa}")));
    }
    if !frame.is_heisenberg() {
        return Err(Error::UnsupportedSurface("dilations need h = 0".into()));
    }
    let chart = &omega.chart;
    if chart.rho() < kappa {
        return Err(Error::invalid(format!("form known on D_{} only, need D_{kappa}", chart.rho())));
    }
    let scaled = match &omega.exact {
        Some(exact) => {
            let unit = Arc::new(build_grid(chart.n(), 1.0, chart.resolution())?);
            ConnectionForm::from_exact(unit, &pullback_exact(exact, kappa))?
        }
        None => {
            let sub = omega.restricted(&Arc::new(chart.restrict(kappa)?))?;
            pullback_form(&sub, kappa)?
        }
    };
    let norm = ck_norm(&scaled, 1.0, 0)?.value;
    Ok((scaled, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{tangential_frame, DefiningSurface};
    use crate::field::ExactForm;
    use crate::norms::random_matrix_poly;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heis() -> TangentialFrame {
        tangential_frame(&DefiningSurface::heisenberg(3)).unwrap()
    }

    fn gauge_form(seed: u64, amp: f64, res: usize) -> ConnectionForm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_matrix_poly(3, 2, 2, &mut rng);
        let a = MatPoly::identity(3, 2).add(&p.scale(C64::new(amp, 0.0)));
        let chart = Arc::new(build_grid(3, 1.0, res).unwrap());
        ConnectionForm::from_exact(chart, &ExactForm::pure_gauge(&a)).unwrap()
    }

    fn jet_size(omega: &ConnectionForm, g: Grading, k: u32) -> f64 {
        let t = omega.exact.as_ref().unwrap().taylor(g, k).unwrap();
        t.iter().map(|p| p.max_coeff()).fold(0.0, f64::max)
    }

    #[test]
    fn ordinary_normalization_kills_jets() {
        let om = gauge_form(3, 0.1, 5);
        assert!(jet_size(&om, Grading::Ordinary, 2) > 1e-3);
        let out = normalize_to_order(&om, 2, JetMode::Ordinary, &heis()).unwrap();
        assert!(jet_size(&out.omega, Grading::Ordinary, 2) < 1e-13);
        assert!(out.jets.iter().all(|j| j.relative_defect < 1e-12));
        assert_eq!(out.factors.len(), 3);
    }

    #[test]
    fn weighted_normalization_kills_jets() {
        let om = gauge_form(4, 0.1, 5);
        let out = normalize_to_order(&om, 3, JetMode::Weighted, &heis()).unwrap();
        assert!(jet_size(&out.omega, Grading::Weighted, 3) < 1e-13);
    }

    #[test]
    fn grid_jets_are_exact_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let polys: Vec<MatPoly> = (0..2).map(|_| random_matrix_poly(3, 2, 2, &mut rng)).collect();
        let chart = Arc::new(build_grid(3, 0.5, 5).unwrap());
        let mut om = ConnectionForm::from_polys(chart, polys.clone()).unwrap();
        om.exact = None;
        for s in 0..=2 {
            let jet = extract_jet(&om, s, JetMode::Ordinary, &heis()).unwrap();
            for (c, p) in jet.components.iter().zip(&polys) {
                let want = p.homogeneous_part(Grading::Ordinary, s);
                assert!(c.sub(&want).max_coeff() < 1e-11, "s={s}");
            }
        }
    }

    #[test]
    fn asymmetric_jet_is_rejected() {
        // z̄² dz̄¹ is not ∂̄-closed
        let e12 = [C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        let g1 = MatPoly::var_zbar(3, 1).scalar_times_matrix(&e12, 2);
        let chart = Arc::new(build_grid(3, 1.0, 5).unwrap());
        let om = ConnectionForm::from_polys(chart, vec![g1, MatPoly::zero(3, 2)]).unwrap();
        let jet = extract_jet(&om, 1, JetMode::Ordinary, &heis()).unwrap();
        assert!(jet.warning.is_some());
        assert!((jet.symmetry_defect - 1.0).abs() < 1e-14);
        assert!(matches!(taylor_gauge(&jet), Err(Error::NoSolution { .. })));
    }

    #[test]
    fn jet_json_round_trip() {
        let om = gauge_form(5, 0.1, 5);
        let jet = extract_jet(&om, 0, JetMode::Weighted, &heis()).unwrap();
        let back = JetSpec::from_json(&jet.to_json().unwrap()).unwrap();
        assert_eq!(back, jet);
        assert!(jet.warning.is_none());
        let b = jet.barred_coefficient(0, &[0, 0]);
        assert!(!b.is_zero());
        assert!(b.terms().all(|(e, _)| e[2] == 0 && e[3] == 0));
    }

    #[test]
    fn prescale_shrinks_constants_by_root_kappa() {
        let chart = Arc::new(build_grid(3, 1.0, 5).unwrap());
        let c = vec![C64::new(1.0, 0.0); 4];
        let om = ConnectionForm::from_polys(
            chart,
            vec![MatPoly::constant(3, 2, &c), MatPoly::zero(3, 2)],
        )
        .unwrap();
        let (_, n1) = dilation_prescale(&om, 1.0, &heis()).unwrap();
        let (_, n4) = dilation_prescale(&om, 0.25, &heis()).unwrap();
        assert!((n4 / n1 - 0.5).abs() < 1e-14, "{n1} {n4}");
        assert!(dilation_prescale(&om, 1.5, &heis()).is_err());
    }
}
