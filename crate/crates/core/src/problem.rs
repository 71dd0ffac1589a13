//! Manufactured problems and run configuration.

use crate::engine::EngineConfig;
use crate::field::{ConnectionForm, ExactForm, MatrixField};
use crate::geometry::build_grid;
use crate::norms::{ck_norm, random_matrix_poly};
use crate::poly::MatPoly;
use crate::solver::{SolverBackend, SolverConfig};
use crate::{Error, Result, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

/// How the ground-truth frame `A_true` is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    /// `I + amplitude · P`, `P` a random matrix polynomial of unit sup norm.
    Polynomial,
    /// `I + amplitude · E_{1r} p(z̄')`, closed-form inverse.
    Nilpotent,
    /// Truncated `exp(amplitude · P)` through the cubic term.
    ExpPolynomial,
    /// `A_true` read from a polynomial JSON file.
    CustomFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub n: usize,
    pub rank: usize,
    pub rho0: f64,
    pub resolution: usize,
    pub amplitude: f64,
    pub seed: u64,
    pub generator: Generator,
    /// Degree of the random polynomial behind `A_true`.
    pub degree: u32,
    pub custom_path: Option<PathBuf>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            n: 3,
            rank: 2,
            rho0: 1.0,
            resolution: 9,
            amplitude: 1e-2,
            seed: 1,
            generator: Generator::Polynomial,
            degree: 2,
            custom_path: None,
        }
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::invalid(format!("n must be >= 3, got {}", self.n)));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be >= 1"));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return Err(Error::invalid(format!("rho0 must be positive, got {}", self.rho0)));
        }
        if self.resolution < 3 || self.resolution % 2 == 0 {
            return Err(Error::invalid(format!("resolution must be odd and >= 3, got {}", self.resolution)));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid(format!("amplitude must be nonnegative, got {}", self.amplitude)));
        }
        if self.generator == Generator::Nilpotent && self.rank < 2 {
            return Err(Error::invalid("the nilpotent generator needs rank >= 2"));
        }
        if self.generator == Generator::CustomFile && self.custom_path.is_none() {
            return Err(Error::invalid("the custom-file generator needs custom_path"));
        }
        Ok(())
    }
}

/// A manufactured instance: `ω0 = -A^{-1} ∂̄_M A` for a known `A`.
#[derive(Clone, Debug)]
pub struct Manufactured {
    pub omega0: ConnectionForm,
    pub a_true: MatrixField,
    pub a_poly: MatPoly,
    /// Seed that produced the accepted draw.
    pub seed_used: u64,
    pub attempts: usize,
}

const MAX_ATTEMPTS: usize = 5;

fn draw(spec: &ProblemSpec, seed: u64, chart: &Arc<crate::geometry::GridChart>) -> Result<MatPoly> {
    let (n, r) = (spec.n, spec.rank);
    let id = MatPoly::identity(n, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_sup = |p: MatPoly| -> Result<MatPoly> {
        let sup = ck_norm(&MatrixField::from_poly(chart.clone(), &p), chart.rho(), 0)?.value;
        Ok(if sup > 0.0 { p.scale(C64::new(1.0 / sup, 0.0)) } else { p })
    };
    let amp = C64::new(spec.amplitude, 0.0);
    Ok(match spec.generator {
        Generator::Polynomial => id.add(&unit_sup(random_matrix_poly(n, r, spec.degree, &mut rng))?.scale(amp)),
        Generator::ExpPolynomial => {
            let x = unit_sup(random_matrix_poly(n, r, spec.degree, &mut rng))?.scale(amp);
            let x2 = x.mul(&x);
            let x3 = x2.mul(&x);
            id.add(&x).add(&x2.scale(C64::new(0.5, 0.0))).add(&x3.scale(C64::new(1.0 / 6.0, 0.0)))
        }
        Generator::Nilpotent => {
            let m = n - 1;
            let p = random_matrix_poly(n, 1, spec.degree, &mut rng)
                .filter(|e| e[..m].iter().all(|&d| d == 0) && e[2 * m] == 0);
            let p = unit_sup(p)?;
            let mut e1r = vec![C64::new(0.0, 0.0); r * r];
            e1r[r - 1] = amp;
            id.add(&p.scalar_times_matrix(&e1r, r))
        }
        Generator::CustomFile => {
            let path = spec.custom_path.as_ref().expect("validated");
            let a = MatPoly::from_json(&std::fs::read_to_string(path)?)?;
            if a.n() != n || a.rank() != r {
                return Err(Error::invalid(format!(
                    "custom frame has n={}, r={}, spec asks for n={n}, r={r}",
                    a.n(),
                    a.rank()
                )));
            }
            a
        }
    })
}

/// Draw `A_true`, check `σ_min(A_true) ≥ 1 - 2·amplitude` on `D_{ρ0}`, and
/// build `ω0` exactly. Failed draws are retried with the next seed. Custom
/// frames are only checked for invertibility.
pub fn manufacture_problem(spec: &ProblemSpec) -> Result<Manufactured> {
    spec.validate()?;
    let chart = Arc::new(build_grid(spec.n, spec.rho0, spec.resolution)?);
    let custom = spec.generator == Generator::CustomFile;
    // a custom frame only has to be invertible
    let floor = if custom { crate::calculus::GAUGE_SINGULAR_TOL } else { 1.0 - 2.0 * spec.amplitude };
    let attempts = if custom { 1 } else { MAX_ATTEMPTS };
    let mut last = 0.0;
    for attempt in 0..attempts {
        let seed = spec.seed.wrapping_add(attempt as u64);
        let a = draw(spec, seed, &chart)?;
        let field = MatrixField::from_poly(chart.clone(), &a);
        last = field.min_sigma();
        if last >= floor && last > 0.0 {
            let omega0 = ConnectionForm::from_exact(chart, &ExactForm::pure_gauge(&a))?;
            return Ok(Manufactured { omega0, a_true: field, a_poly: a, seed_used: seed, attempts: attempt + 1 });
        }
        log::warn!("draw with seed {seed} has min singular value {last:.3e} < {floor:.3e}; redrawing");
    }
    Err(Error::GaugeSingular { index: 0, coords: Vec::new(), sigma_min: last })
}

/// Where a run writes its artifacts. Unset paths are skipped.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    pub omega: Option<PathBuf>,
    pub gauge: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

/// Everything a `flatten` run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub engine: EngineConfig,
    pub solver: SolverConfig,
    pub output: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemSpec::default(),
            engine: EngineConfig::default(),
            solver: SolverConfig { backend: SolverBackend::Series, ..SolverConfig::default() },
            output: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    /// The n = 4 smoke configuration: coarse lattice, lower series weights,
    /// and a fixed number of steps instead of a tolerance.
    pub fn smoke_n4() -> Self {
        let mut cfg = Self::default();
        cfg.problem.n = 4;
        cfg.problem.resolution = 5;
        cfg.engine.weight_start = 4;
        cfg.engine.weight_step = 2;
        cfg.engine.weight_cap = 10;
        cfg.engine.tol_rel = 0.0;
        cfg.engine.jmax = 4;
        cfg
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Apply the `CRVB_SEED` override.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(s) = std::env::var("CRVB_SEED") {
            self.problem.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("CRVB_SEED must be an unsigned integer, got {s:?}")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.engine.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{integrability_residual, tangential_frame, DefiningSurface};
    use crate::io::encode_form;

    fn frame(n: usize) -> crate::calculus::TangentialFrame {
        tangential_frame(&DefiningSurface::heisenberg(n)).unwrap()
    }

    fn small(generator: Generator) -> ProblemSpec {
        ProblemSpec { resolution: 5, generator, ..ProblemSpec::default() }
    }

    #[test]
    fn zero_amplitude_gives_flat_problem() {
        let m = manufacture_problem(&ProblemSpec { amplitude: 0.0, ..small(Generator::Polynomial) }).unwrap();
        assert!(m.omega0.comps.iter().flatten().all(|z| z.norm() == 0.0));
        assert_eq!(m.a_poly, MatPoly::identity(3, 2));
    }

    #[test]
    fn nilpotent_form_is_closed_form() {
        let spec = ProblemSpec { amplitude: 0.3, ..small(Generator::Nilpotent) };
        let m = manufacture_problem(&spec).unwrap();
        // ω0 = -amplitude · E_12 X̄p with p the (1,2) entry of (A - I)/amplitude
        let p = m.a_poly.entry(0, 1).scale(C64::new(1.0 / spec.amplitude, 0.0));
        let c = &m.omega0.chart;
        for a in 0..2 {
            let xp = p.xbar(a);
            for i in (0..c.len()).filter(|&i| c.mask()[i]) {
                let want = -spec.amplitude * xp.eval(&c.point(i))[0];
                let got = m.omega0.at(a, i);
                assert!((got[1] - want).norm() < 1e-14);
                assert!(got[0].norm() + got[2].norm() + got[3].norm() < 1e-14);
            }
        }
    }

    #[test]
    fn every_generator_is_integrable() {
        for g in [Generator::Polynomial, Generator::Nilpotent, Generator::ExpPolynomial] {
            let m = manufacture_problem(&ProblemSpec { amplitude: 0.1, ..small(g) }).unwrap();
            let res = integrability_residual(&m.omega0, &frame(3)).unwrap().max_abs();
            assert!(res <= 1e-12, "{g:?}: {res}");
            assert!(m.a_true.min_sigma() >= 0.8);
        }
    }

    #[test]
    fn seed_determinism() {
        let a = manufacture_problem(&small(Generator::Polynomial)).unwrap();
        let b = manufacture_problem(&small(Generator::Polynomial)).unwrap();
        assert_eq!(encode_form(&a.omega0).unwrap(), encode_form(&b.omega0).unwrap());
        let c = manufacture_problem(&ProblemSpec { seed: 2, ..small(Generator::Polynomial) }).unwrap();
        assert_ne!(encode_form(&a.omega0).unwrap(), encode_form(&c.omega0).unwrap());
    }

    #[test]
    fn custom_file_generator() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let a = MatPoly::identity(3, 2).add(&MatPoly::var_zbar(3, 0).scalar_times_matrix(&[C64::new(0.01, 0.0); 4], 2));
        std::fs::write(&path, a.to_json().unwrap()).unwrap();
        let spec = ProblemSpec { custom_path: Some(path), ..small(Generator::CustomFile) };
        assert_eq!(manufacture_problem(&spec).unwrap().a_poly, a);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            ProblemSpec { n: 2, ..ProblemSpec::default() },
            ProblemSpec { rank: 0, ..ProblemSpec::default() },
            ProblemSpec { resolution: 8, ..ProblemSpec::default() },
            ProblemSpec { amplitude: -1.0, ..ProblemSpec::default() },
            ProblemSpec { rank: 1, generator: Generator::Nilpotent, ..ProblemSpec::default() },
            ProblemSpec { generator: Generator::CustomFile, ..ProblemSpec::default() },
        ] {
            assert!(matches!(manufacture_problem(&spec), Err(Error::InvalidArgument(_))), "{spec:?}");
        }
    }

    #[test]
    fn run_config_json_round_trip() {
        let cfg = RunConfig::smoke_n4();
        assert_eq!(RunConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"problem": {"bogus": 1}}"#).is_err());
        let partial = RunConfig::from_json(r#"{"engine": {"jmax": 3}}"#).unwrap();
        assert_eq!(partial.engine.jmax, 3);
        assert_eq!(partial.problem, ProblemSpec::default());
    }
}
