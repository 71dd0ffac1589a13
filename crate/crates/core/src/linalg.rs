//! Dense `r×r` complex matrices stored row-major in flat slices.
//!
//! Fields hold one such block per lattice point, so everything here works on
//! borrowed slices and avoids per-point allocation where it can.

use crate::C64;
use nalgebra::DMatrix;

pub fn identity(r: usize) -> Vec<C64> {
    let mut m = vec![C64::new(0.0, 0.0); r * r];
    for i in 0..r {
        m[i * r + i] = C64::new(1.0, 0.0);
    }
    m
}

/// Elementary matrix `E_{ij}` (1-based indices, as in the usual notation).
pub fn elementary(r: usize, i: usize, j: usize) -> Vec<C64> {
    let mut m = vec![C64::new(0.0, 0.0); r * r];
    m[(i - 1) * r + (j - 1)] = C64::new(1.0, 0.0);
    m
}

/// `out = a * b`.
pub fn mul_into(a: &[C64], b: &[C64], r: usize, out: &mut [C64]) {
    for i in 0..r {
        for j in 0..r {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..r {
                s += a[i * r + k] * b[k * r + j];
            }
            out[i * r + j] = s;
        }
    }
}

pub fn mul(a: &[C64], b: &[C64], r: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); r * r];
    mul_into(a, b, r, &mut out);
    out
}

/// `a*b - b*a`.
pub fn commutator(a: &[C64], b: &[C64], r: usize) -> Vec<C64> {
    let ab = mul(a, b, r);
    let ba = mul(b, a, r);
    ab.iter().zip(&ba).map(|(x, y)| x - y).collect()
}

/// Gauss-Jordan inverse with partial pivoting. `None` when a pivot vanishes.
pub fn inverse(a: &[C64], r: usize) -> Option<Vec<C64>> {
    if r == 1 {
        return (a[0] != C64::new(0.0, 0.0)).then(|| vec![a[0].inv()]);
    }
    if r == 2 {
        let det = a[0] * a[3] - a[1] * a[2];
        if det == C64::new(0.0, 0.0) {
            return None;
        }
        let d = det.inv();
        return Some(vec![a[3] * d, -a[1] * d, -a[2] * d, a[0] * d]);
    }
    let mut m = a.to_vec();
    let mut inv = identity(r);
    for col in 0..r {
        let piv = (col..r)
            .max_by(|&x, &y| m[x * r + col].norm().total_cmp(&m[y * r + col].norm()))?;
        if m[piv * r + col].norm() == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..r {
                m.swap(piv * r + k, col * r + k);
                inv.swap(piv * r + k, col * r + k);
            }
        }
        let p = m[col * r + col].inv();
        for k in 0..r {
            m[col * r + k] *= p;
            inv[col * r + k] *= p;
        }
        for row in 0..r {
            if row != col {
                let f = m[row * r + col];
                if f != C64::new(0.0, 0.0) {
                    for k in 0..r {
                        let mc = m[col * r + k];
                        let ic = inv[col * r + k];
                        m[row * r + k] -= f * mc;
                        inv[row * r + k] -= f * ic;
                    }
                }
            }
        }
    }
    Some(inv)
}

fn singular_values(a: &[C64], r: usize) -> (f64, f64) {
    match r {
        1 => (a[0].norm(), a[0].norm()),
        2 => {
            // Eigenvalues of the Hermitian 2x2 matrix a^* a.
            let fro = a.iter().map(|x| x.norm_sqr()).sum::<f64>();
            let det = (a[0] * a[3] - a[1] * a[2]).norm();
            let disc = (fro * fro - 4.0 * det * det).max(0.0).sqrt();
            let smax = ((fro + disc) / 2.0).sqrt();
            let smin = if smax > 0.0 { det / smax } else { 0.0 };
            (smax, smin)
        }
        _ => {
            let m = DMatrix::from_row_slice(r, r, a);
            let sv = m.singular_values();
            (sv.max(), sv.min())
        }
    }
}

/// Operator 2-norm (largest singular value).
pub fn op_norm(a: &[C64], r: usize) -> f64 {
    singular_values(a, r).0
}

/// Smallest singular value.
pub fn sigma_min(a: &[C64], r: usize) -> f64 {
    singular_values(a, r).1
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn inverse_roundtrip_3x3() {
        let a = vec![
            c(2.0, 0.1), c(0.3, 0.0), c(0.0, -1.0),
            c(0.0, 0.0), c(1.0, 1.0), c(0.5, 0.0),
            c(1.0, 0.0), c(0.0, 0.2), c(3.0, 0.0),
        ];
        let inv = inverse(&a, 3).unwrap();
        let p = mul(&a, &inv, 3);
        assert!(max_abs_diff(&p, &identity(3)) < 1e-14);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let a = vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)];
        assert!(inverse(&a, 2).is_none());
    }

    #[test]
    fn two_by_two_norms_agree_with_svd() {
        let a = vec![c(0.3, -0.2), c(1.5, 0.0), c(-0.7, 0.4), c(0.1, 0.9)];
        let m = DMatrix::from_row_slice(2, 2, &a);
        let sv = m.singular_values();
        assert!((op_norm(&a, 2) - sv.max()).abs() < 1e-13);
        assert!((sigma_min(&a, 2) - sv.min()).abs() < 1e-13);
    }

    #[test]
    fn nilpotent_norm_is_one() {
        assert!((op_norm(&elementary(2, 1, 2), 2) - 1.0).abs() < 1e-15);
        assert_eq!(sigma_min(&elementary(2, 1, 2), 2), 0.0);
    }
}
