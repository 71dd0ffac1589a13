//! The `CRVB1` field container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "CRVB1"                       magic
//! u32  0x01020304               endianness marker
//! u8   kind                     0 matrix field, 1 connection form, 2 gauge
//! u8   backend                  0 grid values only, 1 exact section present
//! u32  n, u32 rank, u32 resolution
//! f64  rho, f64 lattice_rho
//! u32  components               1 for fields and gauges, n-1 for forms
//! u64  points
//! u8   defined[points]
//! f64  (re, im) × rank² × points × components, lattice order (x^n fastest)
//! u64  exact length, then that many bytes of JSON
//! ```
//!
//! The exact section holds the polynomial of a field, the exact data of a
//! form, or the factor list of a gauge.

use crate::engine::Gauge;
use crate::field::{ConnectionForm, ExactForm, MatrixField};
use crate::geometry::GridChart;
use crate::poly::MatPoly;
use crate::{Error, Result, C64};
use std::path::Path;
use std::sync::Arc;

pub const MAGIC: &[u8; 5] = b"CRVB1";
const ENDIAN: u32 = 0x0102_0304;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Field = 0,
    Form = 1,
    Gauge = 2,
}

impl Kind {
    fn from_u8(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Kind::Field),
            1 => Ok(Kind::Form),
            2 => Ok(Kind::Gauge),
            _ => Err(Error::Format(format!("unknown container kind {b}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Field => "matrix field",
            Kind::Form => "connection form",
            Kind::Gauge => "gauge",
        }
    }
}

struct Container<'a> {
    kind: Kind,
    chart: &'a GridChart,
    rank: usize,
    comps: Vec<&'a [C64]>,
    defined: &'a [bool],
    exact: Option<String>,
}

fn encode(c: &Container) -> Vec<u8> {
    let pts = c.chart.len();
    let rr = c.rank * c.rank;
    let exact = c.exact.as_deref().unwrap_or("");
    let mut out = Vec::with_capacity(64 + pts + c.comps.len() * pts * rr * 16 + exact.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ENDIAN.to_le_bytes());
    out.push(c.kind as u8);
    out.push(u8::from(c.exact.is_some()));
    for v in [c.chart.n(), c.rank, c.chart.resolution()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.chart.rho().to_le_bytes());
    out.extend_from_slice(&c.chart.lattice_rho().to_le_bytes());
    out.extend_from_slice(&(c.comps.len() as u32).to_le_bytes());
    out.extend_from_slice(&(pts as u64).to_le_bytes());
    out.extend(c.defined.iter().map(|&d| u8::from(d)));
    for comp in &c.comps {
        for z in comp.iter() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out.extend_from_slice(&(exact.len() as u64).to_le_bytes());
    out.extend_from_slice(exact.as_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, k: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::Format(format!("truncated file: {what} needs {k} bytes at offset {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct Decoded {
    kind: Kind,
    chart: Arc<GridChart>,
    rank: usize,
    comps: Vec<Vec<C64>>,
    defined: Vec<bool>,
    exact: Option<String>,
}

fn decode(buf: &[u8]) -> Result<Decoded> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(5, "magic")? != MAGIC {
        return Err(Error::Format("not a CRVB1 file (bad magic)".into()));
    }
    if r.u32("endianness marker")? != ENDIAN {
        return Err(Error::Format("endianness marker mismatch".into()));
    }
    let kind = Kind::from_u8(r.u8("kind")?)?;
    let backend = r.u8("backend")?;
    if backend > 1 {
        return Err(Error::Format(format!("unknown backend tag {backend}")));
    }
    let n = r.u32("n")? as usize;
    let rank = r.u32("rank")? as usize;
    let resolution = r.u32("resolution")? as usize;
    let rho = r.f64("rho")?;
    let lattice_rho = r.f64("lattice rho")?;
    let ncomp = r.u32("component count")? as usize;
    let pts = r.u64("point count")? as usize;
    if !(2..=16).contains(&n) || rank == 0 || rank > 64 {
        return Err(Error::Format(format!("bad header: n={n}, rank={rank}")));
    }
    let expected = u32::try_from(2 * n - 1).ok().and_then(|d| resolution.checked_pow(d));
    if expected != Some(pts) {
        return Err(Error::Format(format!("header has {pts} points, lattice {resolution}^{} disagrees", 2 * n - 1)));
    }
    if pts > buf.len() {
        return Err(Error::Format(format!("truncated file: header promises {pts} points")));
    }
    let chart = GridChart::from_parts(n, resolution, lattice_rho, rho)
        .map_err(|e| Error::Format(format!("bad chart header: {e}")))?;
    if chart.len() != pts {
        return Err(Error::Format(format!("header has {pts} points, chart has {}", chart.len())));
    }
    let want = match kind {
        Kind::Form => n - 1,
        _ => 1,
    };
    if ncomp != want {
        return Err(Error::Format(format!("{} with {ncomp} components, want {want}", kind.name())));
    }
    let defined: Vec<bool> = r.take(pts, "defined mask")?.iter().map(|&b| b != 0).collect();
    let rr = rank * rank;
    let bytes = r.take(ncomp * pts * rr * 16, "values")?;
    let vals: Vec<C64> = bytes
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    let comps = vals.chunks(pts * rr).map(|c| c.to_vec()).collect();
    let len = r.u64("exact length")? as usize;
    let exact = r.take(len, "exact section")?;
    if r.pos != buf.len() {
        return Err(Error::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let exact = match (backend, len) {
        (0, 0) => None,
        (1, _) => Some(String::from_utf8(exact.to_vec()).map_err(|_| Error::Format("exact section is not UTF-8".into()))?),
        _ => return Err(Error::Format("grid-only file carries an exact section".into())),
    };
    Ok(Decoded { kind, chart: Arc::new(chart), rank, comps, defined, exact })
}

fn bad_exact(e: serde_json::Error) -> Error {
    Error::Format(format!("exact section: {e}"))
}

fn expect(d: &Decoded, kind: Kind) -> Result<()> {
    if d.kind != kind {
        return Err(Error::Format(format!("expected a {}, found a {}", kind.name(), d.kind.name())));
    }
    Ok(())
}

pub fn encode_field(f: &MatrixField) -> Result<Vec<u8>> {
    let exact = f.poly.as_ref().map(|p| serde_json::to_string(p)).transpose()?;
    Ok(encode(&Container {
        kind: Kind::Field,
        chart: &f.chart,
        rank: f.rank,
        comps: vec![&f.values],
        defined: &f.defined,
        exact,
    }))
}

pub fn decode_field(buf: &[u8]) -> Result<MatrixField> {
    let mut d = decode(buf)?;
    expect(&d, Kind::Field)?;
    let poly = d.exact.as_deref().map(serde_json::from_str::<MatPoly>).transpose().map_err(bad_exact)?;
    Ok(MatrixField { chart: d.chart, rank: d.rank, values: d.comps.remove(0), defined: d.defined, poly })
}

pub fn encode_form(f: &ConnectionForm) -> Result<Vec<u8>> {
    let exact = f.exact.as_ref().map(serde_json::to_string).transpose()?;
    Ok(encode(&Container {
        kind: Kind::Form,
        chart: &f.chart,
        rank: f.rank,
        comps: f.comps.iter().map(|c| c.as_slice()).collect(),
        defined: &f.defined,
        exact,
    }))
}

pub fn decode_form(buf: &[u8]) -> Result<ConnectionForm> {
    let d = decode(buf)?;
    expect(&d, Kind::Form)?;
    let exact = d.exact.as_deref().map(serde_json::from_str::<ExactForm>).transpose().map_err(bad_exact)?;
    Ok(ConnectionForm { chart: d.chart, rank: d.rank, comps: d.comps, defined: d.defined, exact })
}

pub fn encode_gauge(g: &Gauge) -> Result<Vec<u8>> {
    let exact = g.factors.as_ref().map(serde_json::to_string).transpose()?;
    Ok(encode(&Container {
        kind: Kind::Gauge,
        chart: &g.field.chart,
        rank: g.field.rank,
        comps: vec![&g.field.values],
        defined: &g.field.defined,
        exact,
    }))
}

pub fn decode_gauge(buf: &[u8]) -> Result<Gauge> {
    let mut d = decode(buf)?;
    expect(&d, Kind::Gauge)?;
    let factors = d.exact.as_deref().map(serde_json::from_str::<Vec<MatPoly>>).transpose().map_err(bad_exact)?;
    let field = MatrixField { chart: d.chart, rank: d.rank, values: d.comps.remove(0), defined: d.defined, poly: None };
    Ok(Gauge { field, factors })
}

/// Kind of the container in `buf`, from the header alone.
pub fn peek_kind(buf: &[u8]) -> Result<Kind> {
    if buf.len() < 10 || &buf[..5] != MAGIC {
        return Err(Error::Format("not a CRVB1 file (bad magic)".into()));
    }
    Kind::from_u8(buf[9])
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = std::fs::write(&tmp, bytes).and_then(|_| std::fs::rename(&tmp, path));
    if res.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn save_field(path: &Path, f: &MatrixField) -> Result<()> {
    write_atomic(path, &encode_field(f)?)
}

pub fn load_field(path: &Path) -> Result<MatrixField> {
    decode_field(&std::fs::read(path)?)
}

pub fn save_form(path: &Path, f: &ConnectionForm) -> Result<()> {
    write_atomic(path, &encode_form(f)?)
}

pub fn load_form(path: &Path) -> Result<ConnectionForm> {
    decode_form(&std::fs::read(path)?)
}

pub fn save_gauge(path: &Path, g: &Gauge) -> Result<()> {
    write_atomic(path, &encode_gauge(g)?)
}

pub fn load_gauge(path: &Path) -> Result<Gauge> {
    decode_gauge(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::norms::random_matrix_poly;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn poly(seed: u64) -> MatPoly {
        random_matrix_poly(3, 2, 2, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn chart() -> Arc<GridChart> {
        Arc::new(build_grid(3, 1.0, 5).unwrap().restrict(0.6).unwrap())
    }

    #[test]
    fn field_round_trip_is_byte_identical() {
        let f = MatrixField::from_poly(chart(), &poly(1));
        let a = encode_field(&f).unwrap();
        let g = decode_field(&a).unwrap();
        assert_eq!(encode_field(&g).unwrap(), a);
        assert_eq!(g.max_abs_diff(&f), 0.0);
        assert_eq!(g.poly, f.poly);
        assert_eq!(g.chart.mask(), f.chart.mask());
    }

    #[test]
    fn grid_only_field_reloads_exactly() {
        let f = MatrixField::from_poly(chart(), &poly(2)).into_grid();
        let g = decode_field(&encode_field(&f).unwrap()).unwrap();
        assert!(g.poly.is_none());
        assert_eq!(g.values, f.values);
    }

    #[test]
    fn form_round_trip_keeps_exact_data() {
        let e = ExactForm::pure_gauge(&MatPoly::identity(3, 2).add(&poly(3).scale(C64::new(0.1, 0.0))));
        let f = ConnectionForm::from_exact(chart(), &e).unwrap();
        let a = encode_form(&f).unwrap();
        let g = decode_form(&a).unwrap();
        assert_eq!(g.exact.as_ref(), Some(&e));
        assert_eq!(g.comps, f.comps);
        assert_eq!(encode_form(&g).unwrap(), a);
    }

    #[test]
    fn gauge_round_trip() {
        let g = Gauge::from_factors(chart(), vec![poly(4), poly(5)]).unwrap();
        let a = encode_gauge(&g).unwrap();
        let h = decode_gauge(&a).unwrap();
        assert_eq!(h.factors, g.factors);
        assert_eq!(encode_gauge(&h).unwrap(), a);
    }

    #[test]
    fn truncation_and_kind_errors() {
        let f = MatrixField::from_poly(chart(), &poly(6));
        let a = encode_field(&f).unwrap();
        for cut in [0, 4, 20, a.len() / 2, a.len() - 1] {
            assert!(matches!(decode_field(&a[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        assert!(matches!(decode_form(&a), Err(Error::Format(_))));
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(decode_field(&bad), Err(Error::Format(_))));
        assert_eq!(peek_kind(&a).unwrap(), Kind::Field);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.crvb");
        let f = MatrixField::from_poly(chart(), &poly(7));
        save_field(&p, &f).unwrap();
        save_field(&p, &f).unwrap();
        assert_eq!(load_field(&p).unwrap().values, f.values);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
