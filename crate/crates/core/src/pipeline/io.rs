//! Point-set files: plain `x y z` text, legacy ASCII polydata, and a raw
//! little-endian binary layout.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Backend, Error, MomentumSet, PointSet, Real, Result, ShootingConfig, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointFormat {
    /// One `x y z` triple per line; `#` starts a comment.
    XyzText,
    /// `# vtk DataFile Version` header, `DATASET POLYDATA`, `POINTS n type`.
    /// Cells are ignored on read.
    LegacyPolydataAscii,
    /// `GSPT` magic, u32 version, u64 count, then `3n` f64 values, all
    /// little-endian. Round-trips f64 bit for bit.
    Binary,
}

impl PointFormat {
    /// Guesses from the extension: `.vtk`, `.bin`/`.gspt`, anything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("vtk") => PointFormat::LegacyPolydataAscii,
            Some("bin" | "gspt") => PointFormat::Binary,
            _ => PointFormat::XyzText,
        }
    }
}

const MAGIC: &[u8; 4] = b"GSPT";
const BINARY_VERSION: u32 = 1;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

fn parse_real<T: Real>(tok: &str, line: usize) -> Result<T> {
    let v: T = tok.parse().map_err(|_| parse_err(line, format!("invalid number {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

pub fn parse_xyz<T: Real>(text: &str) -> Result<Vec<Vec3<T>>> {
    let mut pts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(line, format!("expected 3 values, found {}", toks.len())));
        }
        pts.push(Vec3::new(parse_real(toks[0], line)?, parse_real(toks[1], line)?, parse_real(toks[2], line)?));
    }
    if pts.is_empty() {
        return Err(parse_err(text.lines().count().max(1), "no points"));
    }
    Ok(pts)
}

pub fn parse_polydata<T: Real>(text: &str) -> Result<Vec<Vec3<T>>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next_nonblank = |what: &str| -> Result<(usize, &str)> {
        lines.by_ref().find(|(_, l)| !l.is_empty()).ok_or_else(|| parse_err(0, format!("missing {what}")))
    };
    let (n, header) = next_nonblank("header")?;
    if !header.starts_with("# vtk DataFile Version") {
        return Err(parse_err(n, "missing '# vtk DataFile Version' header"));
    }
    let _title = next_nonblank("title")?;
    let (n, enc) = next_nonblank("encoding")?;
    match enc.to_ascii_uppercase().as_str() {
        "ASCII" => {}
        "BINARY" => return Err(Error::UnsupportedFormat("binary legacy polydata".into())),
        _ => return Err(parse_err(n, format!("unknown encoding {enc:?}"))),
    }
    let (n, dataset) = next_nonblank("DATASET")?;
    let kind = dataset.split_whitespace().collect::<Vec<_>>();
    match kind.as_slice() {
        [d, k] if d.eq_ignore_ascii_case("DATASET") && k.eq_ignore_ascii_case("POLYDATA") => {}
        [d, k] if d.eq_ignore_ascii_case("DATASET") => {
            return Err(Error::UnsupportedFormat(format!("dataset type {k}")));
        }
        _ => return Err(parse_err(n, "expected 'DATASET POLYDATA'")),
    }
    let (n, points) = next_nonblank("POINTS")?;
    let toks: Vec<&str> = points.split_whitespace().collect();
    let count: usize = match toks.as_slice() {
        [p, c, ty] if p.eq_ignore_ascii_case("POINTS") => {
            if !matches!(ty.to_ascii_lowercase().as_str(), "float" | "double") {
                return Err(Error::UnsupportedFormat(format!("point type {ty}")));
            }
            c.parse().map_err(|_| parse_err(n, format!("invalid point count {c:?}")))?
        }
        _ => return Err(parse_err(n, "expected 'POINTS n float|double'")),
    };
    if count == 0 {
        return Err(parse_err(n, "no points"));
    }
    let mut values: Vec<T> = Vec::with_capacity(3 * count);
    let mut last = n;
    for (n, l) in lines {
        last = n;
        for tok in l.split_whitespace() {
            if values.len() == 3 * count {
                break;
            }
            values.push(parse_real(tok, n)?);
        }
        if values.len() == 3 * count {
            break;
        }
    }
    if values.len() < 3 * count {
        return Err(parse_err(last, format!("expected {} coordinates, found {}", 3 * count, values.len())));
    }
    Ok(values.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

pub fn decode_binary<T: Real>(bytes: &[u8]) -> Result<Vec<Vec3<T>>> {
    let bad = |m: &str| parse_err(0, m);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a binary point file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != BINARY_VERSION {
        return Err(Error::UnsupportedFormat(format!("binary point file version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if n == 0 {
        return Err(bad("no points"));
    }
    let body = &bytes[16..];
    if body.len() != n.checked_mul(24).ok_or_else(|| bad("point count overflow"))? {
        return Err(bad("truncated binary point file"));
    }
    let vals: Vec<T> = body
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Ok(vals.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect())
}

fn encode_binary<T: Real>(pts: &[Vec3<T>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 24 * pts.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(pts.len() as u64).to_le_bytes());
    for p in pts {
        for c in p.0 {
            out.extend_from_slice(&c.as_f64().to_le_bytes());
        }
    }
    out
}

fn push_row<T: Real>(s: &mut String, p: &Vec3<T>) {
    let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p.x(), p.y(), p.z());
}

fn encode_xyz<T: Real>(pts: &[Vec3<T>], header: &[String]) -> String {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    pts.iter().for_each(|p| push_row(&mut s, p));
    s
}

fn encode_polydata<T: Real>(pts: &[Vec3<T>]) -> String {
    let n = pts.len();
    let mut s = format!("# vtk DataFile Version 3.0\ngeoshoot points\nASCII\nDATASET POLYDATA\nPOINTS {n} double\n");
    pts.iter().for_each(|p| push_row(&mut s, p));
    let _ = writeln!(s, "VERTICES {n} {}", 2 * n);
    for i in 0..n {
        let _ = writeln!(s, "1 {i}");
    }
    s
}

fn read_raw<T: Real>(path: &Path, format: PointFormat) -> Result<Vec<Vec3<T>>> {
    match format {
        PointFormat::Binary => decode_binary(&fs::read(path)?),
        PointFormat::XyzText => parse_xyz(&fs::read_to_string(path)?),
        PointFormat::LegacyPolydataAscii => parse_polydata(&fs::read_to_string(path)?),
    }
}

fn write_raw<T: Real>(pts: &[Vec3<T>], path: &Path, format: PointFormat, header: &[String]) -> Result<()> {
    if pts.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    match format {
        PointFormat::Binary => fs::write(path, encode_binary(pts))?,
        PointFormat::XyzText => fs::write(path, encode_xyz(pts, header))?,
        PointFormat::LegacyPolydataAscii => fs::write(path, encode_polydata(pts))?,
    }
    Ok(())
}

pub fn read_points<T: Real>(path: impl AsRef<Path>, format: PointFormat) -> Result<PointSet<T>> {
    PointSet::new(read_raw(path.as_ref(), format)?)
}

pub fn write_points<T: Real>(points: &PointSet<T>, path: impl AsRef<Path>, format: PointFormat) -> Result<()> {
    write_raw(points.as_slice(), path.as_ref(), format, &[])
}

/// Settings stored alongside momenta so a warp can be replayed.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentaHeader {
    pub sigma: f64,
    pub lambda: f64,
    pub timesteps: usize,
    pub backend: Backend,
    pub threshold_multiplier: f64,
}

impl MomentaHeader {
    pub fn from_config<T: Real>(c: &ShootingConfig<T>) -> Self {
        MomentaHeader {
            sigma: c.sigma.as_f64(),
            lambda: c.lambda.as_f64(),
            timesteps: c.timesteps,
            backend: c.backend,
            threshold_multiplier: c.threshold_multiplier.as_f64(),
        }
    }

    /// Copies the stored settings onto `base`.
    pub fn apply<T: Real>(&self, base: ShootingConfig<T>) -> ShootingConfig<T> {
        ShootingConfig {
            sigma: T::lit(self.sigma),
            lambda: T::lit(self.lambda),
            timesteps: self.timesteps,
            backend: self.backend,
            threshold_multiplier: T::lit(self.threshold_multiplier),
            ..base
        }
    }

    fn render(&self) -> String {
        let backend = self.backend;
        format!(
            "geoshoot momenta sigma={:e} lambda={:e} timesteps={} backend={backend} threshold_mult={:e}",
            self.sigma, self.lambda, self.timesteps, self.threshold_multiplier
        )
    }

    fn parse(text: &str) -> Option<Self> {
        let line = text.lines().map(str::trim).find(|l| l.starts_with("# geoshoot momenta"))?;
        let mut h = MomentaHeader {
            sigma: f64::NAN,
            lambda: f64::NAN,
            timesteps: 0,
            backend: Backend::Exact,
            threshold_multiplier: 3.0,
        };
        for kv in line.split_whitespace() {
            let Some((k, v)) = kv.split_once('=') else { continue };
            match k {
                "sigma" => h.sigma = v.parse().ok()?,
                "lambda" => h.lambda = v.parse().ok()?,
                "timesteps" => h.timesteps = v.parse().ok()?,
                "threshold_mult" => h.threshold_multiplier = v.parse().ok()?,
                "backend" => h.backend = v.parse().ok()?,
                _ => {}
            }
        }
        (h.sigma.is_finite() && h.lambda.is_finite() && h.timesteps > 0).then_some(h)
    }
}

/// Writes momenta as text with a settings comment on the first line.
pub fn write_momenta<T: Real>(p: &MomentumSet<T>, path: impl AsRef<Path>, header: &MomentaHeader) -> Result<()> {
    write_raw(p.as_slice(), path.as_ref(), PointFormat::XyzText, &[header.render()])
}

/// Reads momenta text; the header is `None` when absent or malformed.
pub fn read_momenta<T: Real>(path: impl AsRef<Path>) -> Result<(MomentumSet<T>, Option<MomentaHeader>)> {
    let text = fs::read_to_string(path)?;
    let p = MomentumSet::new(parse_xyz(&text)?)?;
    Ok((p, MomentaHeader::parse(&text)))
}
