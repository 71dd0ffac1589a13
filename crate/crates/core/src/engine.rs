//! The rapid-convergence iteration.
//!
//! Each step solves `∂̄_M B = -ω_j` on the next ball, sets `A = I + B`, and
//! updates both the connection (by the gauge law, exactly when possible) and
//! the product frame `G_{j+1} = A G_j`. The measured quantities of every
//! step are kept in an [`IterationTrace`].

use crate::calculus::{dbar_matrix, gauge_transform, integrability_residual, TangentialFrame};
use crate::field::{ConnectionForm, MatrixField};
use crate::geometry::{radius_schedule, GridChart, Point, RadiusSchedule};
use crate::linalg;
use crate::normalization::{dilation_prescale, normalize_to_order, JetMode};
use crate::norms::{alpha_j, ck_norm, holder_seminorm, submultiplicativity_constant, NormKind, NormReport};
use crate::par;
use crate::poly::MatPoly;
use crate::solver::{solve_P, solve_series, SolverBackend, SolverConfig};
use crate::{Error, Result, C64};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Initial frame change applied before iterating.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Kill the ordinary Taylor jet through `normalization_order`.
    Taylor,
    /// Kill the weighted (Folland–Stein) jet through `normalization_order`.
    Fs,
    /// Pull back by the dilation `T_κ`.
    Dilation,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Highest derivative order tracked in the trace.
    pub k: usize,
    /// Hölder exponent of the recorded `‖B‖_{k,α}`.
    pub alpha: f64,
    pub normalization: Normalization,
    pub normalization_order: u32,
    /// Dilation prescale for [`Normalization::Dilation`].
    pub kappa: f64,
    pub jmax: usize,
    /// Stop once `δ_j ≤ max(tol_abs, tol_rel · δ_0)`.
    pub tol_rel: f64,
    pub tol_abs: f64,
    /// Weighted truncation of the series solve at step `j` is
    /// `min(weight_start + j · weight_step, weight_cap)`.
    pub weight_start: u32,
    pub weight_step: u32,
    pub weight_cap: u32,
    /// Gauge factor coefficients below this are dropped.
    pub prune: f64,
    pub max_restarts: usize,
    pub holder_pairs: usize,
    pub c_tilde_trials: usize,
    pub seed: u64,
    /// Integrability residual above which the input is flagged.
    pub integrability_tol: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k: 0,
            alpha: 0.5,
            normalization: Normalization::Taylor,
            normalization_order: 1,
            kappa: 1.0,
            jmax: 8,
            tol_rel: 1e-7,
            tol_abs: 0.0,
            weight_start: 8,
            weight_step: 6,
            weight_cap: 16,
            prune: 1e-20,
            max_restarts: 3,
            holder_pairs: 20_000,
            c_tilde_trials: 20,
            seed: 7,
            integrability_tol: 1e-10,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.jmax < 1 {
            return Err(Error::invalid("jmax must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(Error::invalid(format!("kappa must lie in (0, 1], got {}", self.kappa)));
        }
        if !(self.tol_rel >= 0.0 && self.tol_abs >= 0.0) {
            return Err(Error::invalid("tolerances must be nonnegative"));
        }
        if self.weight_start == 0 || self.weight_cap < self.weight_start {
            return Err(Error::invalid("series weights need 0 < weight_start <= weight_cap"));
        }
        Ok(())
    }

    fn weight(&self, j: usize) -> u32 {
        (self.weight_start + self.weight_step * j as u32).min(self.weight_cap)
    }
}

/// One recorded step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub j: usize,
    pub rho: f64,
    pub sigma: f64,
    /// `δ_j^{(s)} = ‖ω_j‖_{ρ_j,s}` for `s = 0..=k`.
    pub delta: Vec<f64>,
    pub eta_hat: f64,
    pub alpha_j: f64,
    pub zeta_j: f64,
    /// `‖B_{j+1}‖_{ρ_{j+1},k}`.
    pub norm_b: f64,
    /// `‖B_{j+1}‖_{k,α}`.
    pub norm_b_holder: f64,
    /// `‖B_{j+1}‖_{0,α}`.
    pub norm_b_holder0: f64,
    /// `‖∂̄_M G_j + G_j ω_0‖_{ρ_j,0}`.
    pub residual: f64,
    /// `‖∂̄_M G_j + G_j ω_0 - ω_j G_j‖_{ρ_j,0}`.
    pub telescoping: f64,
    /// Measured `η̂_j^{(s)}` for `s = 0..=k`.
    pub eta_by_order: Vec<f64>,
    /// Whether `B_{j+1}` was applied.
    pub applied: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub k: usize,
    /// Submultiplicativity constant used in the smallness predicate.
    pub c_tilde: f64,
    pub rows: Vec<TraceRow>,
}

impl IterationTrace {
    pub fn new(k: usize) -> Self {
        Self { k, c_tilde: 1.0, rows: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `δ_j^{(s)}` over all rows.
    pub fn deltas(&self, s: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.delta[s]).collect()
    }

    /// Measured `δ_{j+1}^{(s)} / δ_j^{(s)}`.
    pub fn gammas(&self, s: usize) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[1].delta[s] / w[0].delta[s]).collect()
    }

    pub fn csv_header(k: usize) -> String {
        let deltas: Vec<String> = (0..=k).map(|s| format!("delta{s}")).collect();
        format!("j,rho,sigma,{},eta_hat,alpha_j,zeta_j,normB,normB_holder,residual", deltas.join(","))
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.k);
        out.push('\n');
        for r in &self.rows {
            let deltas: Vec<String> = r.delta.iter().map(|d| format!("{d:e}")).collect();
            out.push_str(&format!(
                "{},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                r.j,
                r.rho,
                r.sigma,
                deltas.join(","),
                r.eta_hat,
                r.alpha_j,
                r.zeta_j,
                r.norm_b,
                r.norm_b_holder,
                r.residual
            ));
        }
        out
    }

    /// Parse the CSV written by [`IterationTrace::to_csv`]. Columns that the
    /// CSV does not carry are left empty.
    pub fn from_csv(s: &str) -> Result<Self> {
        let mut lines = s.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty trace".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let ndelta = cols.iter().filter(|c| c.starts_with("delta")).count();
        if ndelta == 0 || header != Self::csv_header(ndelta - 1) {
            return Err(Error::Format(format!("unexpected trace header {header:?}")));
        }
        let k = ndelta - 1;
        let mut rows = Vec::new();
        for (ln, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Format(format!("trace row {} has {} fields, want {}", ln + 1, f.len(), cols.len())));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].trim().parse().map_err(|_| Error::Format(format!("bad number {:?} in trace row {}", f[i], ln + 1)))
            };
            let j = f[0].trim().parse().map_err(|_| Error::Format(format!("bad step index {:?}", f[0])))?;
            let delta = (0..=k).map(|s| num(3 + s)).collect::<Result<Vec<_>>>()?;
            let o = 4 + k;
            rows.push(TraceRow {
                j,
                rho: num(1)?,
                sigma: num(2)?,
                delta,
                eta_hat: num(o)?,
                alpha_j: num(o + 1)?,
                zeta_j: num(o + 2)?,
                norm_b: num(o + 3)?,
                norm_b_holder: num(o + 4)?,
                norm_b_holder0: if k == 0 { num(o + 4)? } else { f64::NAN },
                residual: num(o + 5)?,
                telescoping: 0.0,
                eta_by_order: Vec::new(),
                applied: false,
            });
        }
        Ok(Self { k, c_tilde: 1.0, rows })
    }
}

/// A product frame `G = f_0 f_1 ⋯`, exactly known when `factors` is set.
#[derive(Clone, Debug)]
pub struct Gauge {
    pub field: MatrixField,
    pub factors: Option<Vec<MatPoly>>,
}

impl Gauge {
    pub fn identity(chart: Arc<GridChart>, rank: usize) -> Self {
        let n = chart.n();
        Self { field: MatrixField::identity(chart, rank), factors: Some(vec![MatPoly::identity(n, rank)]) }
    }

    /// Evaluate the factor product onto `chart`.
    pub fn from_factors(chart: Arc<GridChart>, factors: Vec<MatPoly>) -> Result<Self> {
        let r = factors.first().ok_or_else(|| Error::invalid("empty factor list"))?.rank();
        let prepared = PreparedGauge::new(&factors, r);
        let rr = r * r;
        let mask = chart.mask();
        let mut values = vec![C64::new(0.0, 0.0); chart.len() * rr];
        par::fill_blocks(&mut values, rr, |i, blk| {
            if mask[i] {
                blk.copy_from_slice(&prepared.value(&chart.point(i)));
            }
        });
        let field = MatrixField { defined: mask.to_vec(), chart, rank: r, values, poly: None };
        Ok(Self { field, factors: Some(factors) })
    }
}

/// Factor polynomials with their `X_ᾱ` derivatives.
struct PreparedGauge {
    r: usize,
    factors: Vec<(MatPoly, Vec<MatPoly>)>,
}

impl PreparedGauge {
    fn new(factors: &[MatPoly], r: usize) -> Self {
        let m = factors.first().map(|f| f.n() - 1).unwrap_or(0);
        Self { r, factors: factors.iter().map(|f| (f.clone(), (0..m).map(|a| f.xbar(a)).collect())).collect() }
    }

    fn value(&self, pt: &Point) -> Vec<C64> {
        self.factors.iter().fold(linalg::identity(self.r), |g, (f, _)| linalg::mul(&g, &f.eval(pt), self.r))
    }

    /// `G` and `X_ᾱ G` by the Leibniz rule over the factors.
    fn jet(&self, pt: &Point) -> (Vec<C64>, Vec<Vec<C64>>) {
        let r = self.r;
        let m = self.factors.first().map(|f| f.1.len()).unwrap_or(0);
        let mut g = linalg::identity(r);
        let mut d = vec![vec![C64::new(0.0, 0.0); r * r]; m];
        for (f, xd) in &self.factors {
            let fv = f.eval(pt);
            for (a, da) in d.iter_mut().enumerate() {
                let left = linalg::mul(da, &fv, r);
                let right = linalg::mul(&g, &xd[a].eval(pt), r);
                *da = left.iter().zip(&right).map(|(x, y)| x + y).collect();
            }
            g = linalg::mul(&g, &fv, r);
        }
        (g, d)
    }
}

/// Pointwise flatness measurements of a gauge against a reference form.
struct Flatness {
    raw: f64,
    normalized: f64,
    telescoping: f64,
    sigma_min: f64,
}

/// `∂̄_M G + G ω_ref` on `chart`, also compared with `ω G` when `omega` is
/// given. Exact for factored gauges and exact forms on the hyperquadric.
fn flatness(
    chart: &Arc<GridChart>,
    gauge: &Gauge,
    reference: &ConnectionForm,
    omega: Option<&ConnectionForm>,
    frame: &TangentialFrame,
) -> Result<Flatness> {
    let r = reference.rank;
    let rr = r * r;
    let m = chart.n() - 1;
    let ref_on = eval_on(reference, chart)?;
    let om_on = omega.map(|o| eval_on(o, chart)).transpose()?;
    let exact = gauge.factors.as_ref().filter(|_| frame.is_heisenberg());
    let (gvals, dg, defined): (Vec<C64>, Vec<Vec<C64>>, Vec<bool>) = match exact {
        Some(f) => {
            let prepared = PreparedGauge::new(f, r);
            let mask = chart.mask();
            let width = rr * (m + 1);
            let mut buf = vec![C64::new(0.0, 0.0); chart.len() * width];
            par::fill_blocks(&mut buf, width, |i, blk| {
                if mask[i] {
                    let (g, d) = prepared.jet(&chart.point(i));
                    blk[..rr].copy_from_slice(&g);
                    for (a, da) in d.iter().enumerate() {
                        blk[rr * (a + 1)..rr * (a + 2)].copy_from_slice(da);
                    }
                }
            });
            let mut gv = vec![C64::new(0.0, 0.0); chart.len() * rr];
            let mut dv = vec![vec![C64::new(0.0, 0.0); chart.len() * rr]; m];
            for i in 0..chart.len() {
                let blk = &buf[i * width..(i + 1) * width];
                gv[i * rr..(i + 1) * rr].copy_from_slice(&blk[..rr]);
                for (a, da) in dv.iter_mut().enumerate() {
                    da[i * rr..(i + 1) * rr].copy_from_slice(&blk[rr * (a + 1)..rr * (a + 2)]);
                }
            }
            (gv, dv, mask.to_vec())
        }
        None => {
            let g = gauge.field.restricted(chart)?;
            let d = dbar_matrix(&g, frame)?;
            let defined = d.defined.clone();
            (g.values, d.comps, defined)
        }
    };
    let ok = |i: usize| defined[i] && ref_on.defined[i] && om_on.as_ref().is_none_or(|o| o.defined[i]);
    let stats: Vec<[f64; 4]> = par::map_collect(chart.len(), |i| {
        if !ok(i) {
            return [0.0, 0.0, 0.0, f64::INFINITY];
        }
        let g = &gvals[i * rr..(i + 1) * rr];
        let ginv = linalg::inverse(g, r);
        let mut out = [0.0, 0.0, 0.0, linalg::sigma_min(g, r)];
        for a in 0..m {
            let gw = linalg::mul(g, ref_on.at(a, i), r);
            let flat: Vec<C64> = dg[a][i * rr..(i + 1) * rr].iter().zip(&gw).map(|(x, y)| x + y).collect();
            out[0] = out[0].max(linalg::op_norm(&flat, r));
            out[1] = out[1].max(match &ginv {
                Some(gi) => linalg::op_norm(&linalg::mul(&flat, gi, r), r),
                None => f64::INFINITY,
            });
            if let Some(o) = &om_on {
                let wg = linalg::mul(o.at(a, i), g, r);
                let d: Vec<C64> = flat.iter().zip(&wg).map(|(x, y)| x - y).collect();
                out[2] = out[2].max(linalg::op_norm(&d, r));
            }
        }
        out
    });
    let mut f = Flatness { raw: 0.0, normalized: 0.0, telescoping: 0.0, sigma_min: f64::INFINITY };
    for s in stats {
        f.raw = f.raw.max(s[0]);
        f.normalized = f.normalized.max(s[1]);
        f.telescoping = f.telescoping.max(s[2]);
        f.sigma_min = f.sigma_min.min(s[3]);
    }
    Ok(f)
}

/// `form` on `chart`: re-evaluated when exact, restricted otherwise.
fn eval_on(form: &ConnectionForm, chart: &Arc<GridChart>) -> Result<ConnectionForm> {
    if Arc::ptr_eq(&form.chart, chart) {
        return Ok(form.clone());
    }
    match &form.exact {
        Some(e) => ConnectionForm::from_exact(chart.clone(), e),
        None => form.restricted(chart),
    }
}

/// Everything [`kam_step`] carries from one step to the next.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub j: usize,
    /// Chart at `ρ_j`.
    pub chart: Arc<GridChart>,
    /// `ω_j` on `chart`.
    pub omega: ConnectionForm,
    /// `G_j` on `chart`.
    pub gauge: Gauge,
    pub frame: TangentialFrame,
    pub schedule: RadiusSchedule,
    /// The form `G_j` flattens; `ω_j` is its gauge transform by `G_j`.
    pub reference: ConnectionForm,
    /// Chart at `ρ_0` that every `chart` is restricted from.
    pub base: Arc<GridChart>,
}

impl IterationState {
    /// Start from `reference` already gauged by `prefix` (the normalization).
    pub fn new(
        reference: ConnectionForm,
        omega: ConnectionForm,
        prefix: Vec<MatPoly>,
        frame: TangentialFrame,
        jmax: usize,
    ) -> Result<Self> {
        let base = omega.chart.clone();
        let schedule = radius_schedule(base.rho(), jmax + 1)?;
        let r = omega.rank;
        let n = base.n();
        let factors = if prefix.is_empty() { vec![MatPoly::identity(n, r)] } else { prefix };
        let exact_ok = omega.exact.is_some() && reference.exact.is_some() && frame.is_heisenberg();
        let gauge = if exact_ok {
            Gauge::from_factors(base.clone(), factors)?
        } else {
            let field = factors.iter().try_fold(MatrixField::identity(base.clone(), r), |g, f| {
                g.mul(&MatrixField::from_poly(base.clone(), f))
            })?;
            Gauge { field, factors: None }
        };
        Ok(Self { j: 0, chart: base.clone(), omega, gauge, frame, schedule, reference, base })
    }

    fn is_exact(&self) -> bool {
        self.omega.exact.is_some() && self.gauge.factors.is_some() && self.frame.is_heisenberg()
    }
}

/// Per-run constants a step needs.
#[derive(Clone, Debug)]
pub struct StepContext {
    pub cfg: EngineConfig,
    pub solver: SolverConfig,
    pub c_tilde: f64,
    /// Stop threshold on `δ_j^{(0)}`.
    pub tol: f64,
}

/// What one call to [`kam_step`] produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub row: TraceRow,
    /// `None` when the step was final (converged or at `jmax`).
    pub next: Option<IterationState>,
}

/// Measure `ω_j`, solve for `B_{j+1}`, and, unless `δ_j` is already below
/// tolerance or `j = jmax`, apply `A_{j+1} = I + B_{j+1}`.
pub fn kam_step(state: &IterationState, ctx: &StepContext) -> Result<StepOutcome> {
    let cfg = &ctx.cfg;
    let j = state.j;
    let n = state.chart.n();
    let r = state.omega.rank;
    let rho = state.schedule.rho(j);
    let sigma = RadiusSchedule::sigma(j);
    let next_chart = Arc::new(state.base.restrict(state.schedule.rho(j + 1))?);

    let delta = (0..=cfg.k).map(|s| Ok(ck_norm(&state.omega, rho, s)?.value)).collect::<Result<Vec<_>>>()?;
    let flat = flatness(&state.chart, &state.gauge, &state.reference, Some(&state.omega), &state.frame)?;
    let fin = delta[0] <= ctx.tol || j >= cfg.jmax;

    let exact = state.is_exact() && ctx.solver.backend == SolverBackend::Series;
    let (b_poly, b_field) = if exact {
        let sol = solve_series(state.omega.exact.as_ref().expect("exact"), cfg.weight(j))?;
        log::debug!("step {j}: series weight {} coefficient residual {:.3e}", cfg.weight(j), sol.coefficient_residual);
        let b = sol.b.pruned(cfg.prune);
        let field = MatrixField::from_poly(next_chart.clone(), &b);
        (Some(b), field)
    } else {
        let (b, rep) = solve_P(&state.omega, next_chart.rho(), &ctx.solver, &state.frame)?;
        log::debug!("step {j}: grid solve residual {:.3e} in {} iterations", rep.residual, rep.iters);
        (None, b)
    };

    let norm_b_by = (0..=cfg.k).map(|s| Ok(ck_norm(&b_field, next_chart.rho(), s)?.value)).collect::<Result<Vec<_>>>()?;
    let eta_by_order: Vec<f64> =
        norm_b_by.iter().zip(&delta).map(|(b, d)| if *d > 0.0 { b / d } else { 0.0 }).collect();
    let norm_b = norm_b_by[cfg.k];
    let eta_hat = eta_by_order[cfg.k];
    let holder = holder_seminorm(&b_field, cfg.k, cfg.alpha, cfg.holder_pairs, cfg.seed.wrapping_add(j as u64))?;
    let holder0 = if cfg.k == 0 {
        holder.value
    } else {
        holder_seminorm(&b_field, 0, cfg.alpha, cfg.holder_pairs, cfg.seed.wrapping_add(j as u64))?.value
    };
    let a_j = alpha_j(n, cfg.k, j);
    let row = TraceRow {
        j,
        rho,
        sigma,
        zeta_j: a_j * eta_hat * delta[cfg.k],
        delta,
        eta_hat,
        alpha_j: a_j,
        norm_b,
        norm_b_holder: norm_b + holder.value,
        norm_b_holder0: norm_b_by[0] + holder0,
        residual: flat.raw,
        telescoping: flat.telescoping,
        eta_by_order,
        applied: !fin,
    };
    log::info!(
        "step {j}: rho {rho:.4} delta0 {:.3e} |B| {norm_b:.3e} eta {eta_hat:.3e} zeta {:.3e} residual {:.3e}",
        row.delta[0],
        row.zeta_j,
        row.residual
    );
    if fin {
        return Ok(StepOutcome { row, next: None });
    }
    if ctx.c_tilde * norm_b >= 0.5 {
        return Err(Error::SmallnessViolation { step: j, value: ctx.c_tilde * norm_b });
    }

    let id = MatPoly::identity(n, r);
    let (omega, gauge) = match b_poly {
        Some(b) => {
            let a = id.add(&b);
            let exact = state.omega.exact.as_ref().expect("exact").gauged(&a);
            let mut factors = state.gauge.factors.clone().expect("exact");
            factors.insert(0, a);
            let omega = ConnectionForm::from_exact(next_chart.clone(), &exact)?;
            (omega, Gauge::from_factors(next_chart.clone(), factors)?)
        }
        None => {
            let a = b_field.axpy(C64::new(1.0, 0.0), &MatrixField::identity(next_chart.clone(), r))?;
            let omega = gauge_transform(&state.omega.restricted(&next_chart)?, &a, &state.frame)?;
            let g = a.mul(&state.gauge.field.restricted(&next_chart)?)?;
            (omega, Gauge { field: g, factors: None })
        }
    };
    let next = IterationState { j: j + 1, chart: next_chart, omega, gauge, ..state.clone() };
    Ok(StepOutcome { row, next: Some(next) })
}

/// Lower bound on `σ_min(G_∞)` from the factor norms, with the measured value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// `1 - Σ ‖F - I‖_0` over all factors.
    pub margin: f64,
    /// Measured `min σ_min(G_∞)` over `D_∞`.
    pub sigma_min: f64,
    pub factor_norms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// `G_∞` on `D_∞` in the coordinates of `ω0`.
    pub gauge: Gauge,
    pub trace: IterationTrace,
    pub certificate: Certificate,
    pub converged: bool,
    /// Number of gauge steps applied (excluding normalization).
    pub steps: usize,
    pub restarts: usize,
    pub tol: f64,
    pub normalization: Normalization,
    pub normalization_order: u32,
    pub kappa: f64,
    pub c_tilde: f64,
    pub omega0_norm: f64,
    /// `‖∂̄_M G_∞ + G_∞ ω_0‖_{ρ_∞,0}` in the working coordinates.
    pub final_residual: f64,
}

/// Serializable digest of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub converged: bool,
    pub steps: usize,
    pub restarts: usize,
    pub tol: f64,
    pub normalization: Normalization,
    pub normalization_order: u32,
    pub kappa: f64,
    pub c_tilde: f64,
    pub rho_infinity: f64,
    pub omega0_norm: f64,
    pub final_delta: f64,
    pub final_residual: f64,
    pub relative_residual: f64,
    pub certificate: Certificate,
}

impl RunOutcome {
    pub fn summary(&self) -> RunSummary {
        let last = self.trace.rows.last();
        RunSummary {
            converged: self.converged,
            steps: self.steps,
            restarts: self.restarts,
            tol: self.tol,
            normalization: self.normalization,
            normalization_order: self.normalization_order,
            kappa: self.kappa,
            c_tilde: self.c_tilde,
            rho_infinity: self.gauge.field.chart.rho(),
            omega0_norm: self.omega0_norm,
            final_delta: last.map(|r| r.delta[0]).unwrap_or(0.0),
            final_residual: self.final_residual,
            relative_residual: if self.omega0_norm > 0.0 { self.final_residual / self.omega0_norm } else { 0.0 },
            certificate: self.certificate.clone(),
        }
    }
}

/// Run the iteration; see [`run_with_trace`].
pub fn run(
    omega0: &ConnectionForm,
    cfg: &EngineConfig,
    solver: &SolverConfig,
    frame: &TangentialFrame,
) -> Result<RunOutcome> {
    run_with_trace(omega0, cfg, solver, frame).1
}

/// Run the iteration, returning the trace of the last attempt even when it
/// fails.
///
/// A smallness violation restarts with a harder normalization (`κ/4` in
/// dilation mode, one more jet order in Taylor and FS modes) up to
/// `max_restarts` times. `δ^{(0)}` rising on two consecutive steps is
/// divergence.
pub fn run_with_trace(
    omega0: &ConnectionForm,
    cfg: &EngineConfig,
    solver: &SolverConfig,
    frame: &TangentialFrame,
) -> (IterationTrace, Result<RunOutcome>) {
    let mut trace = IterationTrace::new(cfg.k);
    let result = (|| {
        cfg.validate()?;
        let defect = integrability_residual(omega0, frame).map(|t| t.max_abs()).unwrap_or(f64::NAN);
        if !(defect <= cfg.integrability_tol) {
            log::warn!("input integrability residual {defect:.3e} exceeds {:.1e}", cfg.integrability_tol);
        }
        let c_tilde = submultiplicativity_constant(&omega0.chart, omega0.rank, cfg.k, cfg.c_tilde_trials, cfg.seed)?.c_tilde;
        let mut attempt_cfg = cfg.clone();
        let mut restarts = 0;
        loop {
            match attempt(omega0, &attempt_cfg, solver, frame, c_tilde, &mut trace) {
                Err(Error::SmallnessViolation { step, value })
                    if restarts < cfg.max_restarts && attempt_cfg.normalization != Normalization::None =>
                {
                    restarts += 1;
                    match attempt_cfg.normalization {
                        Normalization::Dilation => attempt_cfg.kappa /= 4.0,
                        _ => attempt_cfg.normalization_order += 1,
                    }
                    log::warn!(
                        "smallness violated at step {step} (c|B| = {value:.3e}); restart {restarts} with kappa {} order {}",
                        attempt_cfg.kappa,
                        attempt_cfg.normalization_order
                    );
                }
                Err(e) => return Err(e),
                Ok(mut out) => {
                    out.restarts = restarts;
                    return Ok(out);
                }
            }
        }
    })();
    (trace, result)
}

fn attempt(
    omega0: &ConnectionForm,
    cfg: &EngineConfig,
    solver: &SolverConfig,
    frame: &TangentialFrame,
    c_tilde: f64,
    trace: &mut IterationTrace,
) -> Result<RunOutcome> {
    *trace = IterationTrace { c_tilde, ..IterationTrace::new(cfg.k) };
    let omega0_norm = ck_norm(omega0, omega0.chart.rho(), 0)?.value;
    let (reference, start, prefix) = match cfg.normalization {
        Normalization::None => (omega0.clone(), omega0.clone(), Vec::new()),
        Normalization::Taylor | Normalization::Fs => {
            let mode = if cfg.normalization == Normalization::Taylor { JetMode::Ordinary } else { JetMode::Weighted };
            let out = normalize_to_order(omega0, cfg.normalization_order, mode, frame)?;
            (omega0.clone(), out.omega, out.factors)
        }
        Normalization::Dilation => {
            let (scaled, achieved) = dilation_prescale(omega0, cfg.kappa, frame)?;
            log::info!("prescaled by kappa {} to norm {achieved:.3e}", cfg.kappa);
            (scaled.clone(), scaled, Vec::new())
        }
    };
    let mut state = IterationState::new(reference, start, prefix.clone(), frame.clone(), cfg.jmax)?;
    let delta0 = ck_norm(&state.omega, state.chart.rho(), 0)?.value;
    let tol = cfg.tol_abs.max(cfg.tol_rel * delta0);
    let ctx = StepContext { cfg: cfg.clone(), solver: solver.clone(), c_tilde, tol };
    let mut factor_norms: Vec<f64> = Vec::new();
    let mut steps = 0;
    let last_state = loop {
        let out = kam_step(&state, &ctx)?;
        let applied = out.row.applied;
        let norm_b0 = out.row.eta_by_order.first().copied().unwrap_or(0.0) * out.row.delta[0];
        trace.rows.push(out.row);
        let rows = &trace.rows;
        let t = rows.len();
        if t >= 3 && rows[t - 1].delta[0] > rows[t - 2].delta[0] && rows[t - 2].delta[0] > rows[t - 3].delta[0] {
            return Err(Error::Diverged { step: t - 1, previous: rows[t - 2].delta[0], current: rows[t - 1].delta[0] });
        }
        match out.next {
            Some(next) if applied => {
                factor_norms.push(norm_b0);
                steps += 1;
                state = next;
            }
            _ => break state,
        }
    };
    let converged = last_state.omega.chart.len() > 0 && trace.rows.last().is_some_and(|r| r.delta[0] <= tol);
    let final_residual = trace.rows.last().map(|r| r.residual).unwrap_or(0.0);

    // map back to the coordinates of ω0
    let gauge = match (cfg.normalization, &last_state.gauge.factors) {
        (Normalization::Dilation, Some(f)) => {
            let inv = 1.0 / cfg.kappa;
            let factors: Vec<MatPoly> = f.iter().map(|p| p.dilate_args(inv)).collect();
            let chart = Arc::new(omega0.chart.restrict(cfg.kappa * last_state.chart.rho())?);
            Gauge::from_factors(chart, factors)?
        }
        (Normalization::Dilation, None) => {
            let chart = Arc::new(omega0.chart.restrict(cfg.kappa * last_state.chart.rho())?);
            if chart.len() != last_state.chart.len() {
                return Err(Error::invalid("scaled lattice does not match the original lattice"));
            }
            let field = MatrixField { chart, ..last_state.gauge.field.clone() };
            Gauge { field, factors: None }
        }
        _ => last_state.gauge.clone(),
    };
    let prefix_norms: Vec<f64> = prefix
        .iter()
        .map(|f| {
            let d = f.sub(&MatPoly::identity(f.n(), f.rank()));
            ck_norm(&MatrixField::from_poly(gauge.field.chart.clone(), &d), gauge.field.chart.rho(), 0).map(|r| r.value)
        })
        .collect::<Result<_>>()?;
    factor_norms.extend(prefix_norms);
    let margin = 1.0 - factor_norms.iter().sum::<f64>();
    let sigma_min = gauge.field.min_sigma();
    if margin <= 0.0 {
        return Err(Error::FrameDegenerate(margin));
    }
    Ok(RunOutcome {
        gauge,
        trace: trace.clone(),
        certificate: Certificate { margin, sigma_min, factor_norms },
        converged,
        steps,
        restarts: 0,
        tol,
        normalization: cfg.normalization,
        normalization_order: cfg.normalization_order,
        kappa: cfg.kappa,
        c_tilde,
        omega0_norm,
        final_residual,
    })
}

/// Flatness of `G` against `ω0`, recomputed from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// `‖∂̄_M G + G ω_0‖_{ρ,0}`.
    pub raw: NormReport,
    /// `‖(∂̄_M G + G ω_0) G^{-1}‖_{ρ,0}`.
    pub normalized: NormReport,
    pub sigma_min: f64,
}

/// Recompute the flatness residual of `gauge` against `omega0` on the
/// gauge's chart, exactly for factored gauges and exact forms on the
/// hyperquadric, by finite differences otherwise.
pub fn verify_solution(omega0: &ConnectionForm, gauge: &Gauge, frame: &TangentialFrame) -> Result<VerifyReport> {
    let chart = &gauge.field.chart;
    let f = flatness(chart, gauge, omega0, None, frame)?;
    if f.sigma_min <= crate::calculus::GAUGE_SINGULAR_TOL {
        return Err(Error::GaugeSingular { index: 0, coords: Vec::new(), sigma_min: f.sigma_min });
    }
    let report = |value: f64, label: &str| NormReport {
        kind: NormKind::Ck,
        k: 0,
        alpha: 0.0,
        rho: chart.rho(),
        value,
        breakdown: vec![(label.to_string(), value)],
        lower_bound: false,
    };
    Ok(VerifyReport {
        raw: report(f.raw, "dbar G + G omega0"),
        normalized: report(f.normalized, "(dbar G + G omega0) G^-1"),
        sigma_min: f.sigma_min,
    })
}
