//! Convergence diagnostics computed from a finished trace.

use crate::engine::IterationTrace;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Slack on the measured quadratic law `δ_{j+1} ≤ η̂_j δ_j²`.
pub const QUADRATIC_SLACK: f64 = 1.5;

/// Fitted exponents below this are flagged as not quadratic.
pub const QUADRATIC_EXPONENT: f64 = 1.5;

/// The Hölder ratios count as bounded when none exceeds this multiple of
/// the first one.
pub const HOLDER_GROWTH_LIMIT: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// Mean of `log δ_{j+1} / log δ_j` over steps with `0 < δ_j < 1`.
    pub p_hat: f64,
    /// The individual log ratios behind `p_hat`, keyed by `j + 1`.
    pub log_ratios: Vec<(usize, f64)>,
    pub quadratic: bool,
    /// First step at which `c̃ ‖B_{j+1}‖ < 1/2`.
    pub smallness_from: Option<usize>,
    /// `δ_{j+1} ≤ 1.5 η̂_j δ_j²` for every step from `smallness_from` on.
    pub quadratic_bound_holds: bool,
    pub quadratic_bound_ratios: Vec<f64>,
    /// First step with `ζ_j < 1/2`.
    pub zeta_start: Option<usize>,
    /// `ζ_{j+1} ≤ ζ_j²` from `zeta_start` on; `None` if `ζ` never drops
    /// below one half.
    pub zeta_chain: Option<bool>,
    /// First index from which `δ^{(1)}` strictly decreases (`k ≥ 1` only).
    pub j1: Option<usize>,
    /// `‖B_{j+1}‖_{0,α} / ‖ω_j‖_{0}` per recorded step.
    pub holder_ratios: Vec<f64>,
    pub holder_bound: f64,
    pub holder_bounded: bool,
    /// `δ_{j+1}^{(s)} / δ_j^{(s)}` for `s = 1..=k`.
    pub gammas: Vec<Vec<f64>>,
    /// `(η̂_j^{(k)} / η̂_j^{(k-1)}) / 4^j`, compared against a constant.
    pub eta_order_growth: Vec<f64>,
}

/// Fitted exponent over the given deltas.
pub fn fitted_exponent(deltas: &[f64]) -> (f64, Vec<(usize, f64)>) {
    let ratios: Vec<(usize, f64)> = deltas
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > 0.0 && w[0] < 1.0 && w[1] > 0.0)
        .map(|(j, w)| (j + 1, w[1].ln() / w[0].ln()))
        .collect();
    let p = if ratios.is_empty() { f64::NAN } else { ratios.iter().map(|r| r.1).sum::<f64>() / ratios.len() as f64 };
    (p, ratios)
}

pub fn convergence_diagnostics(trace: &IterationTrace) -> Result<ConvergenceReport> {
    let rows = &trace.rows;
    if rows.len() < 3 {
        return Err(Error::invalid(format!("diagnostics need at least 3 trace rows, got {}", rows.len())));
    }
    let d0 = trace.deltas(0);
    let (p_hat, log_ratios) = fitted_exponent(&d0);

    let smallness_from = rows.iter().position(|r| trace.c_tilde * r.norm_b < 0.5);
    let quadratic_bound_ratios: Vec<f64> = match smallness_from {
        Some(s) => rows[s..]
            .windows(2)
            .map(|w| {
                let bound = QUADRATIC_SLACK * w[0].eta_hat * w[0].delta[0] * w[0].delta[0];
                if bound > 0.0 { w[1].delta[0] / bound } else if w[1].delta[0] == 0.0 { 0.0 } else { f64::INFINITY }
            })
            .collect(),
        None => Vec::new(),
    };
    let quadratic_bound_holds = smallness_from.is_some() && quadratic_bound_ratios.iter().all(|&r| r <= 1.0);

    let zeta_start = rows.iter().position(|r| r.zeta_j < 0.5);
    let zeta_chain = zeta_start.map(|s| rows[s..].windows(2).all(|w| w[1].zeta_j <= w[0].zeta_j * w[0].zeta_j));

    let j1 = (trace.k >= 1).then(|| {
        let d1 = trace.deltas(1);
        let mut j1 = d1.len() - 1;
        while j1 > 0 && d1[j1] < d1[j1 - 1] {
            j1 -= 1;
        }
        j1
    });
    let j1 = j1.filter(|&j| j + 1 < rows.len());

    let holder_ratios: Vec<f64> = rows
        .iter()
        .map(|r| {
            let h = if r.norm_b_holder0.is_nan() { r.norm_b_holder } else { r.norm_b_holder0 };
            if r.delta[0] > 0.0 { h / r.delta[0] } else { 0.0 }
        })
        .collect();
    let holder_bound = holder_ratios.iter().cloned().fold(0.0, f64::max);
    let holder_bounded = holder_ratios.iter().all(|r| r.is_finite())
        && holder_bound <= HOLDER_GROWTH_LIMIT * holder_ratios[0].max(f64::MIN_POSITIVE);

    let gammas = (1..=trace.k).map(|s| trace.gammas(s)).collect();
    let eta_order_growth = if trace.k >= 1 {
        rows.iter()
            .filter(|r| r.eta_by_order.len() > trace.k && r.eta_by_order[trace.k - 1] > 0.0)
            .map(|r| r.eta_by_order[trace.k] / r.eta_by_order[trace.k - 1] / 4f64.powi(r.j as i32))
            .collect()
    } else {
        Vec::new()
    };

    Ok(ConvergenceReport {
        p_hat,
        quadratic: p_hat >= QUADRATIC_EXPONENT,
        log_ratios,
        smallness_from,
        quadratic_bound_holds,
        quadratic_bound_ratios,
        zeta_start,
        zeta_chain,
        j1,
        holder_ratios,
        holder_bound,
        holder_bounded,
        gammas,
        eta_order_growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::TraceRow;

    fn fake(deltas: &[f64]) -> IterationTrace {
        let rows = deltas
            .iter()
            .enumerate()
            .map(|(j, &d)| TraceRow {
                j,
                rho: 1.0,
                sigma: 0.5,
                delta: vec![d, 2.0 * d],
                eta_hat: 1.0,
                alpha_j: 32.0,
                zeta_j: 32.0 * d,
                norm_b: d,
                norm_b_holder: 2.0 * d,
                norm_b_holder0: 1.5 * d,
                residual: d,
                telescoping: 0.0,
                eta_by_order: vec![1.0, 1.0],
                applied: true,
            })
            .collect();
        IterationTrace { k: 1, c_tilde: 1.0, rows }
    }

    #[test]
    fn geometric_trace_is_not_quadratic() {
        let d: Vec<f64> = (0..40).map(|j| 0.5f64.powi(j)).collect();
        let rep = convergence_diagnostics(&fake(&d)).unwrap();
        assert!(rep.p_hat < 1.2, "{}", rep.p_hat);
        assert!(!rep.quadratic);
        assert!(!rep.quadratic_bound_holds);
    }

    #[test]
    fn doubly_exponential_trace_has_exponent_two() {
        let d: Vec<f64> = (0..5).map(|j| 10f64.powi(-(1 << j))).collect();
        let rep = convergence_diagnostics(&fake(&d)).unwrap();
        assert!((rep.p_hat - 2.0).abs() < 1e-12, "{}", rep.p_hat);
        assert!(rep.quadratic);
        assert!(rep.quadratic_bound_holds);
        assert_eq!(rep.zeta_start, Some(1));
        assert_eq!(rep.zeta_chain, Some(true));
        assert_eq!(rep.j1, Some(0));
        assert!(rep.holder_bounded);
        assert!((rep.holder_bound - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zeta_chain_detects_a_slow_step() {
        // zeta = 32 δ: 0.32, then 0.2 > 0.32²
        let rep = convergence_diagnostics(&fake(&[1e-2, 6.25e-3, 1e-6])).unwrap();
        assert_eq!(rep.zeta_chain, Some(false));
    }

    #[test]
    fn late_pull_in_index() {
        let mut t = fake(&[1e-2, 1e-3, 1e-5, 1e-9]);
        let d1 = [1.0, 2.0, 0.5, 0.1];
        for (r, d) in t.rows.iter_mut().zip(d1) {
            r.delta[1] = d;
        }
        assert_eq!(convergence_diagnostics(&t).unwrap().j1, Some(1));
    }

    #[test]
    fn short_trace_is_rejected() {
        assert!(matches!(convergence_diagnostics(&fake(&[0.1, 0.01])), Err(Error::InvalidArgument(_))));
    }
}
