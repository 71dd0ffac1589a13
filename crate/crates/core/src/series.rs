//! Dense truncated matrix power series in `(z', z̄', x^n)`.
//!
//! A [`Basis`] lists every monomial of grade `≤ max` sorted by grade, with an
//! O(1) exponent lookup through a mixed-radix key. Products are computed
//! output-first: each coefficient sums over the sub-exponents of its own
//! monomial, which keeps the loop embarrassingly parallel and deterministic.

use crate::poly::{Exponent, Grading, MatPoly};
use crate::{linalg, par, Error, Result, C64};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

const ZERO: C64 = C64::new(0.0, 0.0);
const DENSE_LOOKUP_LIMIT: u64 = 1 << 22;

enum Lookup {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

pub struct Basis {
    n: usize,
    nv: usize,
    grading: Grading,
    max: u32,
    exps: Vec<Exponent>,
    grades: Vec<u32>,
    /// `levels[s]..levels[s+1]` are the indices of grade `s`.
    levels: Vec<usize>,
    radix: u64,
    keys: Vec<u64>,
    lookup: Lookup,
}

impl Basis {
    /// Shared basis for `(n, grading, max)`.
    pub fn get(n: usize, grading: Grading, max: u32) -> Arc<Basis> {
        type Cache = Mutex<HashMap<(usize, Grading, u32), Arc<Basis>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = (n, grading, max);
        if let Some(b) = cache.lock().expect("basis cache").get(&key) {
            return b.clone();
        }
        let b = Arc::new(Self::build(n, grading, max));
        cache.lock().expect("basis cache").insert(key, b.clone());
        b
    }

    fn build(n: usize, grading: Grading, max: u32) -> Basis {
        let nv = 2 * (n - 1) + 1;
        let radix = max as u64 + 1;
        let mut exps = Vec::new();
        let mut grades = Vec::new();
        let mut levels = vec![0];
        for s in 0..=max {
            for e in grading.monomials(n, s) {
                exps.push(e);
                grades.push(s);
            }
            levels.push(exps.len());
        }
        let keys: Vec<u64> = exps.iter().map(|e| encode(e, radix)).collect();
        let total = radix.checked_pow(nv as u32).unwrap_or(u64::MAX);
        let lookup = if total <= DENSE_LOOKUP_LIMIT {
            let mut t = vec![u32::MAX; total as usize];
            for (i, &k) in keys.iter().enumerate() {
                t[k as usize] = i as u32;
            }
            Lookup::Dense(t)
        } else {
            Lookup::Sparse(keys.iter().enumerate().map(|(i, &k)| (k, i as u32)).collect())
        };
        Basis { n, nv, grading, max, exps, grades, levels, radix, keys, lookup }
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn max(&self) -> u32 {
        self.max
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn exponent(&self, i: usize) -> &Exponent {
        &self.exps[i]
    }

    pub fn grade(&self, i: usize) -> u32 {
        self.grades[i]
    }

    pub fn level(&self, s: u32) -> std::ops::Range<usize> {
        self.levels[s as usize]..self.levels[s as usize + 1]
    }

    fn by_key(&self, key: u64) -> Option<usize> {
        match &self.lookup {
            Lookup::Dense(t) => t.get(key as usize).and_then(|&i| (i != u32::MAX).then_some(i as usize)),
            Lookup::Sparse(m) => m.get(&key).map(|&i| i as usize),
        }
    }

    pub fn index(&self, e: &[u16]) -> Option<usize> {
        if self.grading.degree(e) > self.max {
            return None;
        }
        self.by_key(encode(e, self.radix))
    }

    fn unit_key(&self, var: usize) -> u64 {
        self.radix.pow(var as u32)
    }

    /// Visit every `(i, j)` with `exps[i] + exps[j] = exps[k]`.
    fn for_each_split(&self, k: usize, mut f: impl FnMut(usize, usize)) {
        let e = &self.exps[k];
        let key = self.keys[k];
        let mut digits = vec![0u16; self.nv];
        loop {
            let ki = encode(&digits, self.radix);
            let i = self.by_key(ki).expect("sub-exponent in basis");
            let j = self.by_key(key - ki).expect("complement in basis");
            f(i, j);
            // odometer over 0..=e[v]
            let mut v = 0;
            loop {
                if v == self.nv {
                    return;
                }
                if digits[v] < e[v] {
                    digits[v] += 1;
                    break;
                }
                digits[v] = 0;
                v += 1;
            }
        }
    }
}

fn encode(e: &[u16], radix: u64) -> u64 {
    e.iter().rev().fold(0u64, |acc, &d| acc * radix + d as u64)
}

/// Truncated `r×r` matrix series over a [`Basis`].
#[derive(Clone)]
pub struct Series {
    basis: Arc<Basis>,
    r: usize,
    c: Vec<C64>,
}

impl Series {
    pub fn zero(basis: Arc<Basis>, r: usize) -> Self {
        let len = basis.len() * r * r;
        Self { basis, r, c: vec![ZERO; len] }
    }

    pub fn identity(basis: Arc<Basis>, r: usize) -> Self {
        let mut s = Self::zero(basis, r);
        for d in 0..r {
            s.c[d * r + d] = C64::new(1.0, 0.0);
        }
        s
    }

    pub fn from_poly(basis: Arc<Basis>, p: &MatPoly) -> Self {
        let r = p.rank();
        let mut s = Self::zero(basis, r);
        let rr = r * r;
        for (e, c) in p.terms() {
            if let Some(i) = s.basis.index(e) {
                s.c[i * rr..(i + 1) * rr].copy_from_slice(c);
            }
        }
        s
    }

    pub fn to_poly(&self) -> MatPoly {
        let rr = self.r * self.r;
        let mut p = MatPoly::zero(self.basis.n, self.r);
        for i in 0..self.basis.len() {
            p.add_term(self.basis.exps[i].clone(), &self.c[i * rr..(i + 1) * rr]);
        }
        p
    }

    pub fn basis(&self) -> &Arc<Basis> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn block(&self, i: usize) -> &[C64] {
        let rr = self.r * self.r;
        &self.c[i * rr..(i + 1) * rr]
    }

    fn nonzero(&self) -> Vec<bool> {
        let rr = self.r * self.r;
        self.c.chunks(rr).map(|b| b.iter().any(|z| *z != ZERO)).collect()
    }

    fn check(&self, o: &Series) -> Result<()> {
        if Arc::ptr_eq(&self.basis, &o.basis) && self.r == o.r {
            Ok(())
        } else {
            Err(Error::invalid("series over different bases or ranks"))
        }
    }

    pub fn add(&self, o: &Series) -> Result<Series> {
        self.check(o)?;
        let c = self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect();
        Ok(Series { basis: self.basis.clone(), r: self.r, c })
    }

    pub fn sub(&self, o: &Series) -> Result<Series> {
        self.check(o)?;
        let c = self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect();
        Ok(Series { basis: self.basis.clone(), r: self.r, c })
    }

    pub fn scale(&self, s: C64) -> Series {
        Series { basis: self.basis.clone(), r: self.r, c: self.c.iter().map(|z| z * s).collect() }
    }

    /// Truncated product.
    pub fn mul(&self, o: &Series) -> Result<Series> {
        self.check(o)?;
        let r = self.r;
        let rr = r * r;
        let (nza, nzb) = (self.nonzero(), o.nonzero());
        let mut out = vec![ZERO; self.c.len()];
        par::fill_blocks(&mut out, rr, |k, blk| {
            let mut tmp = vec![ZERO; rr];
            self.basis.for_each_split(k, |i, j| {
                if nza[i] && nzb[j] {
                    linalg::mul_into(self.block(i), o.block(j), r, &mut tmp);
                    for (b, t) in blk.iter_mut().zip(&tmp) {
                        *b += t;
                    }
                }
            });
        });
        if !out.iter().all(|z| z.is_finite()) {
            return Err(Error::invalid("non-finite series product"));
        }
        Ok(Series { basis: self.basis.clone(), r, c: out })
    }

    /// Multiplicative inverse, solved grade by grade.
    pub fn inverse(&self) -> Result<Series> {
        let r = self.r;
        let rr = r * r;
        let g0inv = linalg::inverse(self.block(0), r)
            .ok_or_else(|| Error::invalid("series inverse needs an invertible constant term"))?;
        let nz = self.nonzero();
        let mut h = vec![ZERO; self.c.len()];
        h[..rr].copy_from_slice(&g0inv);
        for s in 1..=self.basis.max {
            let range = self.basis.level(s);
            let start = range.start;
            let mut level = vec![ZERO; range.len() * rr];
            {
                let h_ref = &h;
                par::fill_blocks(&mut level, rr, |off, blk| {
                    let k = start + off;
                    let mut acc = vec![ZERO; rr];
                    let mut tmp = vec![ZERO; rr];
                    self.basis.for_each_split(k, |i, j| {
                        if i != 0 && nz[i] {
                            linalg::mul_into(self.block(i), &h_ref[j * rr..(j + 1) * rr], r, &mut tmp);
                            for (a, t) in acc.iter_mut().zip(&tmp) {
                                *a += t;
                            }
                        }
                    });
                    linalg::mul_into(&g0inv, &acc, r, &mut tmp);
                    for (b, t) in blk.iter_mut().zip(&tmp) {
                        *b = -t;
                    }
                });
            }
            h[start * rr..range.end * rr].copy_from_slice(&level);
        }
        Ok(Series { basis: self.basis.clone(), r, c: h })
    }

    /// `X_ᾱ` on the hyperquadric. Coefficients of the top grade are
    /// incomplete (they would need inputs beyond the basis).
    pub fn xbar(&self, alpha: usize) -> Series {
        let b = &self.basis;
        let m = b.n - 1;
        let (zv, zbv, xv) = (alpha, m + alpha, 2 * m);
        let rr = self.r * self.r;
        let mut out = vec![ZERO; self.c.len()];
        par::fill_blocks(&mut out, rr, |k, blk| {
            let e = &b.exps[k];
            let g = b.grades[k];
            // ∂_{z̄α}: from e + ε_{z̄α}
            if g < b.max {
                if let Some(i) = b.by_key(b.keys[k] + b.unit_key(zbv)) {
                    let f = (e[zbv] + 1) as f64;
                    for (o, v) in blk.iter_mut().zip(self.block(i)) {
                        *o += v * f;
                    }
                }
            }
            // -i z_α ∂_x: from e - ε_{zα} + ε_x
            let xw = match b.grading {
                Grading::Ordinary => 1,
                Grading::Weighted => 2,
            };
            if e[zv] > 0 && g + xw - 1 <= b.max {
                let key = b.keys[k] - b.unit_key(zv) + b.unit_key(xv);
                if let Some(i) = b.by_key(key) {
                    let f = C64::new(0.0, -((e[xv] + 1) as f64));
                    for (o, v) in blk.iter_mut().zip(self.block(i)) {
                        *o += v * f;
                    }
                }
            }
        });
        Series { basis: self.basis.clone(), r: self.r, c: out }
    }

    /// Zero every coefficient of grade `> max`.
    pub fn truncated(&self, max: u32) -> Series {
        let mut s = self.clone();
        if max < self.basis.max {
            let rr = self.r * self.r;
            let start = self.basis.level(max + 1).start;
            s.c[start * rr..].iter_mut().for_each(|z| *z = ZERO);
        }
        s
    }

    /// Substitute `x ↦ x + c·Σ z_α z̄_α` (weighted grading only, where the
    /// substitution preserves grade). With `c = -i` this rewrites a series in
    /// `(z, z̄, x)` into the CR coordinates `(z, z̄, w)`, `w = x + i|z|²`.
    pub fn shear(&self, c: C64) -> Result<Series> {
        let b = &self.basis;
        if b.grading != Grading::Weighted {
            return Err(Error::invalid("shear needs weighted grading"));
        }
        let m = b.n - 1;
        let xv = 2 * m;
        // powers of Y = x + c S as scalar sparse lists (exponent key, coeff)
        let kmax = (b.max / 2) as usize;
        let mut y = MatPoly::var_x(b.n);
        for a in 0..m {
            let mut e = vec![0u16; b.nv];
            e[a] = 1;
            e[m + a] = 1;
            y.add_term(e, &[c]);
        }
        let mut pows = vec![MatPoly::identity(b.n, 1)];
        for k in 1..=kmax {
            let next = pows[k - 1].mul(&y);
            pows.push(next);
        }
        let pow_terms: Vec<Vec<(u64, C64)>> =
            pows.iter().map(|p| p.terms().map(|(e, v)| (encode(e, b.radix), v[0])).collect()).collect();
        let rr = self.r * self.r;
        let mut out = vec![ZERO; self.c.len()];
        for (i, e) in b.exps.iter().enumerate() {
            let blk = self.block(i);
            if blk.iter().all(|z| *z == ZERO) {
                continue;
            }
            let k = e[xv] as usize;
            let base_key = b.keys[i] - (k as u64) * b.unit_key(xv);
            for &(pk, pc) in &pow_terms[k] {
                let j = b.by_key(base_key + pk).expect("grade-preserving substitution");
                for (o, v) in out[j * rr..(j + 1) * rr].iter_mut().zip(blk) {
                    *o += v * pc;
                }
            }
        }
        Ok(Series { basis: self.basis.clone(), r: self.r, c: out })
    }

    /// Largest coefficient modulus among grades `≤ max`.
    pub fn max_abs_through(&self, max: u32) -> f64 {
        let rr = self.r * self.r;
        let end = self.basis.level(max.min(self.basis.max)).end;
        self.c[..end * rr].iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Radial homotopy in `z̄` for a (0,1)-form given in CR coordinates:
    /// `H(Σ φ_α dz̄^α) = Σ_α z̄^α φ_α / (deg_z̄ + 1)` termwise. Grades are
    /// raised by one, so inputs must be truncated below the top grade.
    pub fn zbar_homotopy(form: &[Series]) -> Result<Series> {
        let first = form.first().ok_or_else(|| Error::invalid("empty form"))?;
        let b = first.basis.clone();
        let m = b.n - 1;
        let rr = first.r * first.r;
        let mut out = Series::zero(b.clone(), first.r);
        for (alpha, phi) in form.iter().enumerate() {
            first.check(phi)?;
            for i in 0..b.len() {
                let blk = phi.block(i);
                if blk.iter().all(|z| *z == ZERO) {
                    continue;
                }
                if b.grades[i] >= b.max {
                    return Err(Error::invalid("homotopy input reaches the top grade"));
                }
                let e = &b.exps[i];
                let dz: u32 = e[m..2 * m].iter().map(|&d| d as u32).sum();
                let j = b.by_key(b.keys[i] + b.unit_key(m + alpha)).expect("grade within basis");
                let f = 1.0 / (dz as f64 + 1.0);
                for (o, v) in out.c[j * rr..(j + 1) * rr].iter_mut().zip(blk) {
                    *o += v * f;
                }
            }
        }
        Ok(out)
    }
}
