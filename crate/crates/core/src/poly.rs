//! Exact polynomial backend: matrix-coefficient polynomials in
//! `(z^1…z^m, z̄^1…z̄^m, x^n)`, `m = n - 1`.
//!
//! Monomials are exponent vectors ordered `[z…, z̄…, x]` and kept in a
//! `BTreeMap`, so iteration and JSON output are lexicographic. On the
//! hyperquadric the tangential fields act exactly:
//! `X_ᾱ = ∂_{z̄^α} - i z^α ∂_x`, `X_α = ∂_{z^α} + i z̄^α ∂_x`, `T = ∂_x`.

use crate::geometry::Point;
use crate::{linalg, Error, Result, C64, I};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type Exponent = Vec<u16>;

/// How monomials are graded when truncating or extracting homogeneous parts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    /// Total degree, `x^n` of degree 1.
    Ordinary,
    /// Heisenberg weight `|R| + |S| + 2m`: `x^n` counts twice.
    Weighted,
}

impl Grading {
    pub fn degree(self, e: &[u16]) -> u32 {
        let last = e.len() - 1;
        let base: u32 = e[..last].iter().map(|&k| k as u32).sum();
        match self {
            Grading::Ordinary => base + e[last] as u32,
            Grading::Weighted => base + 2 * e[last] as u32,
        }
    }

    /// Every exponent in `2(n-1)+1` variables of grade exactly `s`, in
    /// lexicographic order.
    pub fn monomials(self, n: usize, s: u32) -> Vec<Exponent> {
        let nv = 2 * (n - 1) + 1;
        let xw = match self {
            Grading::Ordinary => 1,
            Grading::Weighted => 2,
        };
        let mut out = Vec::new();
        for kx in 0..=s / xw {
            let rest = s - kx * xw;
            let mut e = vec![0u16; nv];
            e[nv - 1] = kx as u16;
            spread(&mut e, 0, nv - 1, rest, &mut out);
        }
        out.sort();
        out
    }
}

fn spread(e: &mut Vec<u16>, pos: usize, end: usize, left: u32, out: &mut Vec<Exponent>) {
    if pos + 1 == end {
        e[pos] = left as u16;
        out.push(e.clone());
        return;
    }
    for k in 0..=left {
        e[pos] = k as u16;
        spread(e, pos + 1, end, left - k, out);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatPoly {
    /// `m = n - 1`, the number of `z'` variables.
    m: usize,
    r: usize,
    #[serde(with = "term_list")]
    terms: BTreeMap<Exponent, Vec<C64>>,
}

mod term_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Term {
        exponent: Exponent,
        entries: Vec<C64>,
    }

    pub fn serialize<S: Serializer>(t: &BTreeMap<Exponent, Vec<C64>>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Term> = t
            .iter()
            .map(|(e, c)| Term { exponent: e.clone(), entries: c.clone() })
            .collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<Exponent, Vec<C64>>, D::Error> {
        let v: Vec<Term> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|t| (t.exponent, t.entries)).collect())
    }
}

const ZERO: C64 = C64::new(0.0, 0.0);

impl MatPoly {
    pub fn zero(n: usize, r: usize) -> Self {
        Self { m: n - 1, r, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, r: usize, mat: &[C64]) -> Self {
        let mut p = Self::zero(n, r);
        p.add_term(vec![0; 2 * (n - 1) + 1], mat);
        p
    }

    pub fn identity(n: usize, r: usize) -> Self {
        Self::constant(n, r, &linalg::identity(r))
    }

    /// `coeff · monomial(exponent)`.
    pub fn monomial(n: usize, r: usize, exponent: Exponent, coeff: &[C64]) -> Self {
        let mut p = Self::zero(n, r);
        p.add_term(exponent, coeff);
        p
    }

    /// Scalar (`r = 1`) variable helpers.
    pub fn var_z(n: usize, alpha: usize) -> Self {
        let mut e = vec![0; 2 * (n - 1) + 1];
        e[alpha] = 1;
        Self::monomial(n, 1, e, &[C64::new(1.0, 0.0)])
    }

    pub fn var_zbar(n: usize, alpha: usize) -> Self {
        let mut e = vec![0; 2 * (n - 1) + 1];
        e[n - 1 + alpha] = 1;
        Self::monomial(n, 1, e, &[C64::new(1.0, 0.0)])
    }

    pub fn var_x(n: usize) -> Self {
        let mut e = vec![0; 2 * (n - 1) + 1];
        e[2 * (n - 1)] = 1;
        Self::monomial(n, 1, e, &[C64::new(1.0, 0.0)])
    }

    pub fn n(&self) -> usize {
        self.m + 1
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn nvars(&self) -> usize {
        2 * self.m + 1
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponent, &Vec<C64>)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, e: &[u16]) -> Option<&Vec<C64>> {
        self.terms.get(e)
    }

    /// Accumulate `coeff` into the term with exponent `e`, dropping exact zeros.
    pub fn add_term(&mut self, e: Exponent, coeff: &[C64]) {
        debug_assert_eq!(e.len(), self.nvars());
        debug_assert_eq!(coeff.len(), self.r * self.r);
        if coeff.iter().all(|c| *c == ZERO) {
            return;
        }
        let key = e.clone();
        let entry = self.terms.entry(e).or_insert_with(|| vec![ZERO; coeff.len()]);
        for (a, b) in entry.iter_mut().zip(coeff) {
            *a += b;
        }
        if entry.iter().all(|c| *c == ZERO) {
            self.terms.remove(&key);
        }
    }

    fn check_compatible(&self, other: &Self) {
        assert_eq!(self.m, other.m, "polynomials over different dimensions");
    }

    pub fn add(&self, other: &Self) -> Self {
        self.check_compatible(other);
        assert_eq!(self.r, other.r);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = Self::zero(self.n(), self.r);
        for (e, c) in &self.terms {
            let v: Vec<C64> = c.iter().map(|x| x * s).collect();
            out.add_term(e.clone(), &v);
        }
        out
    }

    /// Multiply every coefficient on the left by a constant matrix.
    pub fn left_mul_const(&self, a: &[C64]) -> Self {
        let mut out = Self::zero(self.n(), self.r);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), &linalg::mul(a, c, self.r));
        }
        out
    }

    /// Matrix product; terms above `max_degree` in `grading` are dropped.
    pub fn mul_truncated(&self, other: &Self, trunc: Option<(Grading, u32)>) -> Self {
        self.check_compatible(other);
        let r = self.r;
        // scalar × matrix broadcasting
        let (ra, rb) = (self.r, other.r);
        let rout = ra.max(rb);
        let mut out = Self::zero(self.n(), rout);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Exponent = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                if let Some((g, d)) = trunc {
                    if g.degree(&e) > d {
                        continue;
                    }
                }
                let c = if ra == rb {
                    linalg::mul(ca, cb, r)
                } else if ra == 1 {
                    cb.iter().map(|x| x * ca[0]).collect()
                } else if rb == 1 {
                    ca.iter().map(|x| x * cb[0]).collect()
                } else {
                    panic!("rank mismatch {ra} vs {rb}");
                };
                out.add_term(e, &c);
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.mul_truncated(other, None)
    }

    fn d_var(&self, var: usize) -> Self {
        let mut out = Self::zero(self.n(), self.r);
        for (e, c) in &self.terms {
            let k = e[var];
            if k == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[var] -= 1;
            let f = k as f64;
            let v: Vec<C64> = c.iter().map(|x| x * f).collect();
            out.add_term(e2, &v);
        }
        out
    }

    fn times_var(&self, var: usize) -> Self {
        let mut out = Self::zero(self.n(), self.r);
        for (e, c) in &self.terms {
            let mut e2 = e.clone();
            e2[var] += 1;
            out.add_term(e2, c);
        }
        out
    }

    /// `∂/∂z^α` (0-based `alpha`).
    pub fn d_z(&self, alpha: usize) -> Self {
        self.d_var(alpha)
    }

    /// `∂/∂z̄^α`.
    pub fn d_zbar(&self, alpha: usize) -> Self {
        self.d_var(self.m + alpha)
    }

    /// `T = ∂/∂x^n`.
    pub fn d_x(&self) -> Self {
        self.d_var(2 * self.m)
    }

    pub fn times_z(&self, alpha: usize) -> Self {
        self.times_var(alpha)
    }

    pub fn times_zbar(&self, alpha: usize) -> Self {
        self.times_var(self.m + alpha)
    }

    pub fn times_x(&self) -> Self {
        self.times_var(2 * self.m)
    }

    /// `X_ᾱ = ∂_{z̄^α} - i z^α ∂_x` on the hyperquadric.
    pub fn xbar(&self, alpha: usize) -> Self {
        self.d_zbar(alpha).sub(&self.d_x().times_z(alpha).scale(I))
    }

    /// `X_α = ∂_{z^α} + i z̄^α ∂_x` on the hyperquadric.
    pub fn x_hol(&self, alpha: usize) -> Self {
        self.d_z(alpha).add(&self.d_x().times_zbar(alpha).scale(I))
    }

    /// Evaluate at a point of the hyperquadric given in graph coordinates.
    pub fn eval(&self, p: &Point) -> Vec<C64> {
        let mut vals: Vec<C64> = p.zprime.clone();
        vals.extend(p.zprime.iter().map(|z| z.conj()));
        vals.push(C64::new(p.xn, 0.0));
        self.eval_vars(&vals)
    }

    /// Evaluate with every variable given explicitly (`z̄` need not be `conj(z)`).
    pub fn eval_vars(&self, vals: &[C64]) -> Vec<C64> {
        let mut out = vec![ZERO; self.r * self.r];
        // cache powers per variable
        let maxdeg: Vec<u16> = (0..self.nvars())
            .map(|v| self.terms.keys().map(|e| e[v]).max().unwrap_or(0))
            .collect();
        let pows: Vec<Vec<C64>> = vals
            .iter()
            .zip(&maxdeg)
            .map(|(&v, &d)| {
                let mut pw = Vec::with_capacity(d as usize + 1);
                let mut acc = C64::new(1.0, 0.0);
                for _ in 0..=d {
                    pw.push(acc);
                    acc *= v;
                }
                pw
            })
            .collect();
        for (e, c) in &self.terms {
            let mut mono = C64::new(1.0, 0.0);
            for (v, &k) in e.iter().enumerate() {
                if k > 0 {
                    mono *= pows[v][k as usize];
                }
            }
            for (o, x) in out.iter_mut().zip(c) {
                *o += x * mono;
            }
        }
        out
    }

    pub fn max_degree(&self, g: Grading) -> Option<u32> {
        self.terms.keys().map(|e| g.degree(e)).max()
    }

    pub fn min_degree(&self, g: Grading) -> Option<u32> {
        self.terms.keys().map(|e| g.degree(e)).min()
    }

    /// Terms of exact degree `s`.
    pub fn homogeneous_part(&self, g: Grading, s: u32) -> Self {
        self.filter(|e| g.degree(e) == s)
    }

    pub fn truncate(&self, g: Grading, max: u32) -> Self {
        self.filter(|e| g.degree(e) <= max)
    }

    pub fn filter(&self, keep: impl Fn(&[u16]) -> bool) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(e, _)| keep(e))
            .map(|(e, c)| (e.clone(), c.clone()))
            .collect();
        Self { m: self.m, r: self.r, terms }
    }

    /// Drop every term whose largest entry has modulus `< tol`.
    pub fn pruned(&self, tol: f64) -> Self {
        let mut out = self.clone();
        out.terms.retain(|_, c| c.iter().any(|z| z.norm() >= tol));
        out
    }

    pub fn constant_term(&self) -> Vec<C64> {
        self.terms
            .get(&vec![0; self.nvars()])
            .cloned()
            .unwrap_or_else(|| vec![ZERO; self.r * self.r])
    }

    /// Truncated power-series inverse up to degree `max` (constant term must
    /// be invertible): `A^{-1} = Σ_k (-A_0^{-1} N)^k A_0^{-1}`, `N = A - A_0`.
    pub fn inverse_series(&self, g: Grading, max: u32) -> Result<Self> {
        let a0 = self.constant_term();
        let a0inv = linalg::inverse(&a0, self.r)
            .ok_or_else(|| Error::invalid("series inverse needs an invertible constant term"))?;
        let a0inv_p = Self::constant(self.n(), self.r, &a0inv);
        let nil = self.filter(|e| g.degree(e) > 0);
        // K = -A_0^{-1} N has no constant term, so K^k starts in degree k.
        let k = a0inv_p.mul(&nil).scale(C64::new(-1.0, 0.0)).truncate(g, max);
        let mut sum = Self::identity(self.n(), self.r);
        let mut pow = Self::identity(self.n(), self.r);
        for _ in 0..max {
            pow = pow.mul_truncated(&k, Some((g, max)));
            if pow.is_zero() {
                break;
            }
            sum = sum.add(&pow);
        }
        Ok(sum.mul_truncated(&a0inv_p, Some((g, max))))
    }

    /// Pull back a function by `T_κ`: substitute `(√κ z', κ x^n)`.
    pub fn dilate_args(&self, kappa: f64) -> Self {
        let s = kappa.sqrt();
        let mut out = Self::zero(self.n(), self.r);
        for (e, c) in &self.terms {
            let zdeg: i32 = e[..2 * self.m].iter().map(|&k| k as i32).sum();
            let f = s.powi(zdeg) * kappa.powi(e[2 * self.m] as i32);
            let v: Vec<C64> = c.iter().map(|x| x * f).collect();
            out.add_term(e.clone(), &v);
        }
        out
    }

    /// Entry `(i, j)` (0-based) as a scalar polynomial.
    pub fn entry(&self, i: usize, j: usize) -> Self {
        let mut out = Self::zero(self.n(), 1);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), &[c[i * self.r + j]]);
        }
        out
    }

    /// Largest coefficient magnitude (entrywise).
    pub fn max_coeff(&self) -> f64 {
        self.terms
            .values()
            .flat_map(|c| c.iter().map(|x| x.norm()))
            .fold(0.0, f64::max)
    }

    /// Scalar polynomial times a constant matrix.
    pub fn scalar_times_matrix(&self, mat: &[C64], r: usize) -> Self {
        assert_eq!(self.r, 1);
        let mut out = Self::zero(self.n(), r);
        for (e, c) in &self.terms {
            let v: Vec<C64> = mat.iter().map(|x| x * c[0]).collect();
            out.add_term(e.clone(), &v);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if p.terms.keys().any(|e| e.len() != 2 * p.m + 1)
            || p.terms.values().any(|c| c.len() != p.r * p.r)
        {
            return Err(Error::Format("polynomial term shape mismatch".into()));
        }
        Ok(p)
    }
}
