//! Matrix-valued fields on a lattice chart, (0,1) connection forms and
//! (0,2) forms.
//!
//! Every field stores one `r×r` block per lattice point (masked or not) and a
//! `defined` flag per point. Derivative operators shrink `defined` by one
//! star stencil; points outside it are never read.

use crate::geometry::{GridChart, Point};
use crate::poly::{Grading, MatPoly};
use crate::series::{Basis, Series};
use crate::{linalg, par, Error, Result, C64};
use std::sync::Arc;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Grid,
    Polynomial,
}

#[derive(Clone, Debug)]
pub struct MatrixField {
    pub chart: Arc<GridChart>,
    pub rank: usize,
    pub values: Vec<C64>,
    pub defined: Vec<bool>,
    /// Exact polynomial behind the grid values, when there is one.
    pub poly: Option<MatPoly>,
}

impl MatrixField {
    pub fn block_len(&self) -> usize {
        self.rank * self.rank
    }

    pub fn from_fn<F>(chart: Arc<GridChart>, rank: usize, f: F) -> Self
    where
        F: Fn(&Point) -> Vec<C64> + Sync + Send,
    {
        let rr = rank * rank;
        let mut values = vec![ZERO; chart.len() * rr];
        let mask = chart.mask();
        par::fill_blocks(&mut values, rr, |i, blk| {
            if mask[i] {
                blk.copy_from_slice(&f(&chart.point(i)));
            }
        });
        let defined = mask.to_vec();
        Self { chart, rank, values, defined, poly: None }
    }

    pub fn from_poly(chart: Arc<GridChart>, poly: &MatPoly) -> Self {
        let mut f = Self::from_fn(chart, poly.rank(), |p| poly.eval(p));
        f.poly = Some(poly.clone());
        f
    }

    pub fn constant(chart: Arc<GridChart>, mat: &[C64], rank: usize) -> Self {
        let poly = MatPoly::constant(chart.n(), rank, mat);
        Self::from_poly(chart, &poly)
    }

    pub fn identity(chart: Arc<GridChart>, rank: usize) -> Self {
        Self::constant(chart, &linalg::identity(rank), rank)
    }

    pub fn zeros(chart: Arc<GridChart>, rank: usize) -> Self {
        Self::constant(chart, &vec![ZERO; rank * rank], rank)
    }

    pub fn backend(&self) -> Backend {
        if self.poly.is_some() {
            Backend::Polynomial
        } else {
            Backend::Grid
        }
    }

    pub fn at(&self, idx: usize) -> &[C64] {
        let rr = self.block_len();
        &self.values[idx * rr..(idx + 1) * rr]
    }

    /// Drop the polynomial tag, keeping grid values only.
    pub fn into_grid(mut self) -> Self {
        self.poly = None;
        self
    }

    /// Restrict the defined set to the mask of `chart` (same lattice).
    pub fn restricted(&self, chart: &Arc<GridChart>) -> Result<Self> {
        check_lattice(&self.chart, chart)?;
        let defined = self
            .defined
            .iter()
            .zip(chart.mask())
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(Self { chart: chart.clone(), defined, ..self.clone() })
    }

    /// Pointwise `self * other` on the common defined set.
    pub fn mul(&self, other: &MatrixField) -> Result<Self> {
        check_lattice(&self.chart, &other.chart)?;
        check_rank(self.rank, other.rank)?;
        let r = self.rank;
        let mut values = vec![ZERO; self.values.len()];
        let defined: Vec<bool> = self.defined.iter().zip(&other.defined).map(|(&a, &b)| a && b).collect();
        par::fill_blocks(&mut values, r * r, |i, blk| {
            if defined[i] {
                linalg::mul_into(self.at(i), other.at(i), r, blk);
            }
        });
        let poly = match (&self.poly, &other.poly) {
            (Some(a), Some(b)) => Some(a.mul(b)),
            _ => None,
        };
        Ok(Self { chart: self.chart.clone(), rank: r, values, defined, poly })
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: C64, other: &MatrixField) -> Result<Self> {
        check_lattice(&self.chart, &other.chart)?;
        check_rank(self.rank, other.rank)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        let defined = self.defined.iter().zip(&other.defined).map(|(&a, &b)| a && b).collect();
        let poly = match (&self.poly, &other.poly) {
            (Some(a), Some(b)) => Some(a.add(&b.scale(s))),
            _ => None,
        };
        Ok(Self { chart: self.chart.clone(), rank: self.rank, values, defined, poly })
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            poly: self.poly.as_ref().map(|p| p.scale(s)),
            ..self.clone()
        }
    }

    /// Pointwise inverse; fails at the first point whose smallest singular
    /// value is below `tol`.
    pub fn inverse(&self, tol: f64) -> Result<Self> {
        let r = self.rank;
        let idxs: Vec<usize> = (0..self.chart.len()).filter(|&i| self.defined[i]).collect();
        let sm = par::map_collect(idxs.len(), |k| linalg::sigma_min(self.at(idxs[k]), r));
        if let Some((k, s)) = sm.iter().enumerate().find(|(_, &s)| !(s > tol)) {
            let index = idxs[k];
            return Err(Error::GaugeSingular { index, coords: self.chart.coords(index), sigma_min: *s });
        }
        let mut values = vec![ZERO; self.values.len()];
        par::fill_blocks(&mut values, r * r, |i, blk| {
            if self.defined[i] {
                if let Some(inv) = linalg::inverse(self.at(i), r) {
                    blk.copy_from_slice(&inv);
                }
            }
        });
        Ok(Self { values, poly: None, ..self.clone() })
    }

    /// Smallest singular value over the defined points.
    pub fn min_sigma(&self) -> f64 {
        let r = self.rank;
        let v = par::map_collect(self.chart.len(), |i| {
            if self.defined[i] {
                linalg::sigma_min(self.at(i), r)
            } else {
                f64::INFINITY
            }
        });
        v.into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &MatrixField) -> f64 {
        let rr = self.block_len();
        par::max_by(self.chart.len(), |i| {
            if self.defined[i] && other.defined[i] {
                linalg::max_abs_diff(&self.values[i * rr..(i + 1) * rr], &other.values[i * rr..(i + 1) * rr])
            } else {
                0.0
            }
        })
    }
}

pub(crate) fn check_lattice(a: &GridChart, b: &GridChart) -> Result<()> {
    if a.same_lattice(b) {
        Ok(())
    } else {
        Err(Error::invalid("fields live on different lattices"))
    }
}

pub(crate) fn check_rank(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::invalid(format!("rank mismatch: {a} vs {b}")))
    }
}

/// Closed-form description of a connection form, exact up to rounding:
/// `ω = gauge(Γ_base, Q P^{-1})`, i.e.
/// `ω_ᾱ = (X_ᾱQ)Q^{-1} - Q P^{-1}(X_ᾱP)Q^{-1} + Q P^{-1} Γ_ᾱ P Q^{-1}`.
///
/// Polynomial forms have `P = Q = I`; the pure gauge `-A^{-1}∂̄_M A` has
/// `Γ = 0`, `P = A`, `Q = I`. Gauging by a polynomial `N` prepends `N` to
/// the factor list of `Q`, so the family is closed under polynomial gauges
/// and repeated gauging never expands a product.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExactForm {
    pub base: Vec<MatPoly>,
    pub p: MatPoly,
    /// `Q = q[0] q[1] ⋯`; empty means the identity.
    pub q: Vec<MatPoly>,
}

/// First-order jet of a matrix function along the `X_β̄` directions.
#[derive(Clone, Debug)]
pub(crate) struct Jet {
    pub val: Vec<C64>,
    pub d: Vec<Vec<C64>>,
}

impl Jet {
    fn mul(&self, o: &Jet, r: usize) -> Jet {
        Jet {
            val: linalg::mul(&self.val, &o.val, r),
            d: self
                .d
                .iter()
                .zip(&o.d)
                .map(|(da, db)| {
                    let a = linalg::mul(da, &o.val, r);
                    let b = linalg::mul(&self.val, db, r);
                    a.iter().zip(&b).map(|(x, y)| x + y).collect()
                })
                .collect(),
        }
    }

    fn inv(&self, r: usize) -> Option<Jet> {
        let vi = linalg::inverse(&self.val, r)?;
        let d = self
            .d
            .iter()
            .map(|da| {
                let t = linalg::mul(&linalg::mul(&vi, da, r), &vi, r);
                t.into_iter().map(|x| -x).collect()
            })
            .collect();
        Some(Jet { val: vi, d })
    }

    fn add(&self, o: &Jet, s: f64) -> Jet {
        let add = |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x + y * s).collect();
        Jet { val: add(&self.val, &o.val), d: self.d.iter().zip(&o.d).map(|(a, b)| add(a, b)).collect() }
    }
}

/// A polynomial together with its `X_β̄` derivatives.
#[derive(Clone, Debug)]
pub(crate) struct PolyJet {
    f: MatPoly,
    xd: Vec<MatPoly>,
    /// `X_β̄ X_ᾱ f` at `[α][β]`; only filled for the factors of `Q`.
    xxd: Vec<Vec<MatPoly>>,
}

impl PolyJet {
    fn jet(&self, pt: &Point) -> Jet {
        Jet { val: self.f.eval(pt), d: self.xd.iter().map(|g| g.eval(pt)).collect() }
    }
}

/// An [`ExactForm`] with every derivative polynomial precomputed, for
/// evaluation at many points.
#[derive(Clone, Debug)]
pub struct PreparedExact {
    r: usize,
    m: usize,
    q: Vec<PolyJet>,
    p: PolyJet,
    xp: Vec<PolyJet>,
    base: Vec<PolyJet>,
}

impl PreparedExact {
    pub fn rank(&self) -> usize {
        self.r
    }

    /// Value, first and second `X_β̄` derivatives of `Q` at a point.
    fn q_second(&self, pt: &Point) -> (Jet, Vec<Jet>) {
        let r = self.r;
        let m = self.m;
        let id = linalg::identity(r);
        let zero = vec![C64::new(0.0, 0.0); r * r];
        // Q as a jet, and X_ᾱQ as a jet, by the Leibniz rule over factors.
        let mut q = Jet { val: id, d: vec![zero.clone(); m] };
        let mut xq: Vec<Jet> = (0..m).map(|_| Jet { val: zero.clone(), d: vec![zero.clone(); m] }).collect();
        for f in &self.q {
            let fj = f.jet(pt);
            let fx: Vec<Jet> = (0..m)
                .map(|a| Jet { val: fj.d[a].clone(), d: f.xxd[a].iter().map(|g| g.eval(pt)).collect() })
                .collect();
            for a in 0..m {
                xq[a] = xq[a].mul(&fj, r).add(&q.mul(&fx[a], r), 1.0);
            }
            q = q.mul(&fj, r);
        }
        (q, xq)
    }

    pub(crate) fn jets(&self, pt: &Point) -> Option<Vec<Jet>> {
        let r = self.r;
        let (q, xqs) = self.q_second(pt);
        let p = self.p.jet(pt);
        let qi = q.inv(r)?;
        let h = q.mul(&p.inv(r)?, r);
        let hinv = p.mul(&qi, r);
        Some(
            (0..self.m)
                .map(|a| {
                    let xq = xqs[a].clone();
                    let xp = self.xp[a].jet(pt);
                    let g = self.base[a].jet(pt);
                    let t1 = xq.mul(&qi, r);
                    let t2 = h.mul(&xp, r).mul(&qi, r);
                    let t3 = h.mul(&g, r).mul(&hinv, r);
                    t1.add(&t2, -1.0).add(&t3, 1.0)
                })
                .collect(),
        )
    }

    /// `Q` and its `X_ᾱ` derivatives at a point.
    fn q_first(&self, pt: &Point) -> Jet {
        let r = self.r;
        let mut q = Jet { val: linalg::identity(r), d: vec![vec![C64::new(0.0, 0.0); r * r]; self.m] };
        for f in &self.q {
            q = q.mul(&f.jet(pt), r);
        }
        q
    }

    pub fn eval(&self, pt: &Point) -> Option<Vec<Vec<C64>>> {
        let r = self.r;
        let qj = self.q_first(pt);
        let qv = qj.val.clone();
        let pv = self.p.f.eval(pt);
        let qi = linalg::inverse(&qv, r)?;
        let pi = linalg::inverse(&pv, r)?;
        let h = linalg::mul(&qv, &pi, r);
        let hinv = linalg::mul(&pv, &qi, r);
        Some(
            (0..self.m)
                .map(|a| {
                    let t1 = linalg::mul(&qj.d[a], &qi, r);
                    let t2 = linalg::mul(&linalg::mul(&h, &self.p.xd[a].eval(pt), r), &qi, r);
                    let t3 = linalg::mul(&linalg::mul(&h, &self.base[a].f.eval(pt), r), &hinv, r);
                    t1.iter().zip(&t2).zip(&t3).map(|((x, y), z)| x - y + z).collect()
                })
                .collect(),
        )
    }
}

impl ExactForm {
    pub fn from_polys(components: Vec<MatPoly>) -> Self {
        let n = components[0].n();
        let r = components[0].rank();
        Self { base: components, p: MatPoly::identity(n, r), q: Vec::new() }
    }

    /// `ω = -A^{-1} ∂̄_M A`.
    pub fn pure_gauge(a: &MatPoly) -> Self {
        let n = a.n();
        let r = a.rank();
        Self { base: vec![MatPoly::zero(n, r); n - 1], p: a.clone(), q: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.p.n()
    }

    pub fn rank(&self) -> usize {
        self.p.rank()
    }

    /// Is this literally polynomial (`P = Q = I`)?
    pub fn as_polys(&self) -> Option<&[MatPoly]> {
        let id = MatPoly::identity(self.n(), self.rank());
        (self.p == id && self.q.iter().all(|f| *f == id)).then_some(self.base.as_slice())
    }

    /// Gauge by a polynomial frame change `N`.
    pub fn gauged(&self, a: &MatPoly) -> Self {
        let mut q = Vec::with_capacity(self.q.len() + 1);
        q.push(a.clone());
        q.extend(self.q.iter().cloned());
        Self { base: self.base.clone(), p: self.p.clone(), q }
    }

    /// `Q` expanded into a single polynomial.
    pub fn q_product(&self) -> MatPoly {
        self.q.iter().fold(MatPoly::identity(self.n(), self.rank()), |acc, f| acc.mul(f))
    }

    /// Precompute the derivative polynomials needed for pointwise evaluation.
    pub fn prepare(&self) -> PreparedExact {
        let m = self.n() - 1;
        let xs = |f: &MatPoly| (0..m).map(|a| f.xbar(a)).collect::<Vec<_>>();
        let pj = |f: &MatPoly| PolyJet { xd: xs(f), f: f.clone(), xxd: Vec::new() };
        let pj2 = |f: &MatPoly| {
            let xd = xs(f);
            let xxd = xd.iter().map(xs).collect();
            PolyJet { xd, f: f.clone(), xxd }
        };
        let xp = xs(&self.p);
        PreparedExact {
            r: self.rank(),
            m,
            q: self.q.iter().map(pj2).collect(),
            p: pj(&self.p),
            xp: xp.iter().map(pj).collect(),
            base: self.base.iter().map(pj).collect(),
        }
    }

    /// Value and first `X_β̄` derivatives of each component at a point.
    #[cfg(test)]
    pub(crate) fn jets(&self, pt: &Point) -> Option<Vec<Jet>> {
        self.prepare().jets(pt)
    }

    /// Component values at a point.
    pub fn eval(&self, pt: &Point) -> Option<Vec<Vec<C64>>> {
        self.prepare().eval(pt)
    }

    /// Truncated Taylor (or weighted-Taylor) expansion of each component at
    /// the origin, up to degree `max` in `grading`.
    pub fn taylor(&self, g: Grading, max: u32) -> Result<Vec<MatPoly>> {
        Ok(self.taylor_series(g, max)?.iter().map(|s| s.to_poly()).collect())
    }

    /// Same expansion as dense series over the basis of grade `max + 1`, with
    /// every coefficient above `max` zeroed.
    pub fn taylor_series(&self, g: Grading, max: u32) -> Result<Vec<Series>> {
        let basis = Basis::get(self.n(), g, max + 1);
        let r = self.rank();
        let mut q = Series::identity(basis.clone(), r);
        for f in &self.q {
            q = q.mul(&Series::from_poly(basis.clone(), f))?;
        }
        let p = Series::from_poly(basis.clone(), &self.p);
        let qi = q.inverse()?;
        let h = q.mul(&p.inverse()?)?;
        let hinv = p.mul(&qi)?;
        (0..self.n() - 1)
            .map(|a| {
                let t1 = q.xbar(a).mul(&qi)?;
                let t2 = h.mul(&p.xbar(a))?.mul(&qi)?;
                let t3 = h.mul(&Series::from_poly(basis.clone(), &self.base[a]))?.mul(&hinv)?;
                Ok(t1.sub(&t2)?.add(&t3)?.truncated(max))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ConnectionForm {
    pub chart: Arc<GridChart>,
    pub rank: usize,
    /// One value array per `Γ_ᾱ`, `α = 1…n-1`.
    pub comps: Vec<Vec<C64>>,
    pub defined: Vec<bool>,
    pub exact: Option<ExactForm>,
}

impl ConnectionForm {
    pub fn n_comps(&self) -> usize {
        self.comps.len()
    }

    pub fn from_exact(chart: Arc<GridChart>, exact: &ExactForm) -> Result<Self> {
        check_rank(chart.n(), exact.n())
            .map_err(|_| Error::invalid("form and chart disagree on n"))?;
        let r = exact.rank();
        let m = chart.n() - 1;
        let rr = r * r;
        let mask = chart.mask();
        let prepared = exact.prepare();
        let vals: Vec<Option<Vec<Vec<C64>>>> = par::map_collect(chart.len(), |i| {
            if mask[i] {
                prepared.eval(&chart.point(i))
            } else {
                Some(vec![vec![ZERO; rr]; m])
            }
        });
        let mut comps = vec![vec![ZERO; chart.len() * rr]; m];
        for (i, v) in vals.into_iter().enumerate() {
            let v = v.ok_or_else(|| Error::GaugeSingular {
                index: i,
                coords: chart.coords(i),
                sigma_min: 0.0,
            })?;
            for (a, blk) in v.iter().enumerate() {
                comps[a][i * rr..(i + 1) * rr].copy_from_slice(blk);
            }
        }
        Ok(Self { defined: mask.to_vec(), chart, rank: r, comps, exact: Some(exact.clone()) })
    }

    pub fn from_polys(chart: Arc<GridChart>, polys: Vec<MatPoly>) -> Result<Self> {
        if polys.len() + 1 != chart.n() {
            return Err(Error::invalid("need n-1 components"));
        }
        Self::from_exact(chart, &ExactForm::from_polys(polys))
    }

    /// Constant components `Γ_ᾱ = mats[α]`.
    pub fn constant(chart: Arc<GridChart>, mats: &[Vec<C64>], rank: usize) -> Result<Self> {
        let n = chart.n();
        let polys = mats.iter().map(|m| MatPoly::constant(n, rank, m)).collect();
        Self::from_polys(chart, polys)
    }

    pub fn zero(chart: Arc<GridChart>, rank: usize) -> Self {
        let m = chart.n() - 1;
        Self::constant(chart, &vec![vec![ZERO; rank * rank]; m], rank).expect("zero form")
    }

    pub fn component(&self, alpha: usize) -> MatrixField {
        MatrixField {
            chart: self.chart.clone(),
            rank: self.rank,
            values: self.comps[alpha].clone(),
            defined: self.defined.clone(),
            poly: self.exact.as_ref().and_then(|e| e.as_polys().map(|p| p[alpha].clone())),
        }
    }

    pub fn from_components(fields: Vec<MatrixField>) -> Result<Self> {
        let first = fields.first().ok_or_else(|| Error::invalid("empty form"))?;
        let chart = first.chart.clone();
        let rank = first.rank;
        let mut defined = first.defined.clone();
        for f in &fields {
            check_lattice(&chart, &f.chart)?;
            check_rank(rank, f.rank)?;
            defined.iter_mut().zip(&f.defined).for_each(|(d, &e)| *d &= e);
        }
        if fields.len() + 1 != chart.n() {
            return Err(Error::invalid("need n-1 components"));
        }
        let exact = if fields.iter().all(|f| f.poly.is_some()) {
            Some(ExactForm::from_polys(fields.iter().map(|f| f.poly.clone().unwrap()).collect()))
        } else {
            None
        };
        Ok(Self { chart, rank, comps: fields.into_iter().map(|f| f.values).collect(), defined, exact })
    }

    pub fn at(&self, alpha: usize, idx: usize) -> &[C64] {
        let rr = self.rank * self.rank;
        &self.comps[alpha][idx * rr..(idx + 1) * rr]
    }

    pub fn into_grid(mut self) -> Self {
        self.exact = None;
        self
    }

    pub fn restricted(&self, chart: &Arc<GridChart>) -> Result<Self> {
        check_lattice(&self.chart, chart)?;
        let defined = self.defined.iter().zip(chart.mask()).map(|(&a, &b)| a && b).collect();
        Ok(Self { chart: chart.clone(), defined, ..self.clone() })
    }

    pub fn scale(&self, s: C64) -> Self {
        let exact = self.exact.as_ref().and_then(|e| {
            e.as_polys().map(|p| ExactForm::from_polys(p.iter().map(|q| q.scale(s)).collect()))
        });
        Self {
            comps: self.comps.iter().map(|c| c.iter().map(|v| v * s).collect()).collect(),
            exact,
            ..self.clone()
        }
    }

    /// `self + s·other` on the common defined set (grid result).
    pub fn axpy(&self, s: C64, other: &ConnectionForm) -> Result<Self> {
        check_lattice(&self.chart, &other.chart)?;
        check_rank(self.rank, other.rank)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + s * y).collect())
            .collect();
        let defined = self.defined.iter().zip(&other.defined).map(|(&a, &b)| a && b).collect();
        Ok(Self { chart: self.chart.clone(), rank: self.rank, comps, defined, exact: None })
    }

    pub fn max_abs_diff(&self, other: &ConnectionForm) -> f64 {
        let rr = self.rank * self.rank;
        par::max_by(self.chart.len(), |i| {
            if self.defined[i] && other.defined[i] {
                (0..self.comps.len())
                    .map(|a| {
                        linalg::max_abs_diff(
                            &self.comps[a][i * rr..(i + 1) * rr],
                            &other.comps[a][i * rr..(i + 1) * rr],
                        )
                    })
                    .fold(0.0, f64::max)
            } else {
                0.0
            }
        })
    }
}

/// `(0,2)` matrix form; the coefficient of `dz̄^α ∧ dz̄^β` is stored at the
/// ordered pair `(α, β)`, `α < β` (0-based).
#[derive(Clone, Debug)]
pub struct TwoForm {
    pub chart: Arc<GridChart>,
    pub rank: usize,
    pub pairs: Vec<(usize, usize)>,
    pub comps: Vec<Vec<C64>>,
    pub defined: Vec<bool>,
}

impl TwoForm {
    pub fn pair_index(&self, a: usize, b: usize) -> Option<usize> {
        self.pairs.iter().position(|&p| p == (a, b))
    }

    pub fn at(&self, pair: usize, idx: usize) -> &[C64] {
        let rr = self.rank * self.rank;
        &self.comps[pair][idx * rr..(idx + 1) * rr]
    }

    /// Largest entry magnitude over defined points and all pairs.
    pub fn max_abs(&self) -> f64 {
        let rr = self.rank * self.rank;
        par::max_by(self.chart.len(), |i| {
            if self.defined[i] {
                self.comps
                    .iter()
                    .flat_map(|c| c[i * rr..(i + 1) * rr].iter().map(|v| v.norm()))
                    .fold(0.0, f64::max)
            } else {
                0.0
            }
        })
    }
}

pub fn ordered_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;

    #[test]
    fn exact_pure_gauge_matches_direct_formula() {
        let chart = Arc::new(build_grid(3, 1.0, 5).unwrap());
        let e12 = linalg::elementary(2, 1, 2);
        let a = MatPoly::identity(3, 2).add(&MatPoly::var_zbar(3, 0).scalar_times_matrix(&e12, 2));
        let w = ConnectionForm::from_exact(chart.clone(), &ExactForm::pure_gauge(&a)).unwrap();
        // -A^{-1} ∂̄A = -(I - E12 z̄1) E12 dz̄^1 = -E12 dz̄^1
        let o = chart.origin();
        assert!(linalg::max_abs_diff(w.at(0, o), &e12.iter().map(|x| -x).collect::<Vec<_>>()) < 1e-15);
        for i in 0..chart.len() {
            if chart.mask()[i] {
                assert!(w.at(1, i).iter().all(|x| x.norm() < 1e-15));
            }
        }
    }

    #[test]
    fn jets_match_polynomial_derivatives() {
        let n = 3;
        let e21 = linalg::elementary(2, 2, 1);
        let g0 = MatPoly::var_zbar(n, 1).mul(&MatPoly::var_x(n)).scalar_times_matrix(&e21, 2);
        let form = ExactForm::from_polys(vec![g0.clone(), MatPoly::zero(n, 2)]);
        let pt = Point::new(vec![C64::new(0.2, 0.1), C64::new(-0.3, 0.4)], 0.25);
        let jets = form.jets(&pt).unwrap();
        for b in 0..2 {
            assert!(linalg::max_abs_diff(&jets[0].d[b], &g0.xbar(b).eval(&pt)) < 1e-14);
        }
    }
}
