//! Plain-text point cloud formats: whitespace-separated `x y z` lines and
//! ASCII PLY.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom3d::{Point3, PointCloud};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// `.ply` selects PLY, anything else XYZ.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::Ply,
            _ => CloudFormat::Xyz,
        }
    }
}

fn parse_err(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn parse_coord(path: &Path, line: usize, tok: Option<&str>) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(path, line, "expected 3 coordinates"))?;
    tok.parse::<f64>()
        .map_err(|e| parse_err(path, line, format!("bad number `{tok}`: {e}")))
}

pub fn parse_xyz<T: Real>(text: &str, path: &Path) -> Result<PointCloud<T>> {
    let mut points = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let x = parse_coord(path, lineno + 1, toks.next())?;
        let y = parse_coord(path, lineno + 1, toks.next())?;
        let z = parse_coord(path, lineno + 1, toks.next())?;
        if toks.next().is_some() {
            return Err(parse_err(
                path,
                lineno + 1,
                "expected exactly 3 coordinates",
            ));
        }
        points.push(Point3::new(T::lit(x), T::lit(y), T::lit(z)));
    }
    PointCloud::new(points)
}

pub fn read_xyz<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_xyz(&text, path)
}

pub fn format_xyz<T: Real>(cloud: &PointCloud<T>) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn write_xyz<T: Real>(path: &Path, cloud: &PointCloud<T>) -> Result<()> {
    fs::write(path, format_xyz(cloud)).map_err(|e| Error::io(path, e))
}

pub fn parse_ply<T: Real>(text: &str, path: &Path) -> Result<PointCloud<T>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err(path, 1, "missing `ply` magic")),
    }
    let mut vertex_count = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    loop {
        let (lineno, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "unterminated header"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] => {
                if *fmt != "ascii" {
                    return Err(parse_err(
                        path,
                        lineno + 1,
                        format!("unsupported format `{fmt}`"),
                    ));
                }
            }
            ["element", "vertex", count] => {
                let n = count
                    .parse::<usize>()
                    .map_err(|e| parse_err(path, lineno + 1, e.to_string()))?;
                vertex_count = Some(n);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {}
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = vertex_count.ok_or_else(|| parse_err(path, 0, "no `element vertex` in header"))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(path, 0, format!("vertex property `{name}` missing")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(count);
    for (lineno, line) in lines {
        if points.len() == count {
            break;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let get = |i: usize| parse_coord(path, lineno + 1, toks.get(i).copied());
        points.push(Point3::new(
            T::lit(get(ix)?),
            T::lit(get(iy)?),
            T::lit(get(iz)?),
        ));
    }
    if points.len() != count {
        return Err(parse_err(
            path,
            0,
            format!("expected {count} vertices, found {}", points.len()),
        ));
    }
    PointCloud::new(points)
}

pub fn read_ply<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, path)
}

pub fn format_ply<T: Real>(cloud: &PointCloud<T>) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    out.push_str(&format_xyz(cloud));
    out
}

pub fn write_ply<T: Real>(path: &Path, cloud: &PointCloud<T>) -> Result<()> {
    fs::write(path, format_ply(cloud)).map_err(|e| Error::io(path, e))
}

/// Reads a cloud, choosing the format from the file extension.
pub fn read_cloud<T: Real>(path: &Path) -> Result<PointCloud<T>> {
    match CloudFormat::from_path(path) {
        CloudFormat::Ply => read_ply(path),
        CloudFormat::Xyz => read_xyz(path),
    }
}
