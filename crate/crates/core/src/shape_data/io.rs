//! Plain-text readers and writers.
//!
//! Point files hold one point per row, whitespace-separated. Landmark files
//! prefix every row with a curve name. Volume files start with an `SDTVOL1`
//! magic line followed by `dims:`, `origin:` and `spacing:` header lines and a
//! row-major payload (x slowest, z fastest). Floats are written with the
//! shortest representation that round-trips, so save/load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LandmarkCurve, LandmarkSet, PointSet, ScalarVolume};
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &str = "SDTVOL1";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("non-numeric token '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value '{tok}'")));
    }
    Ok(v)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses point-file text; `path` is only used for error messages.
pub fn parse_point_set(text: &str, path: &Path) -> Result<PointSet> {
    let mut dim = None;
    let mut coords = Vec::new();
    for (lineno, line) in content_lines(text) {
        let row = line
            .split_whitespace()
            .map(|t| parse_f64(t, path, lineno))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => {
                if row.len() != 2 && row.len() != 3 {
                    return Err(parse_err(
                        path,
                        lineno,
                        format!("expected 2 or 3 coordinates, found {}", row.len()),
                    ));
                }
                dim = Some(row.len());
            }
            Some(d) if d != row.len() => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("inconsistent dimension: expected {d} coordinates, found {}", row.len()),
                ));
            }
            _ => {}
        }
        coords.extend(row);
    }
    let dim = dim.ok_or_else(|| parse_err(path, 0, "file contains no points"))?;
    PointSet::new(dim, coords)
}

pub fn load_point_set(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_point_set(&text, path)
}

pub fn format_point_set(ps: &PointSet) -> String {
    let mut out = String::with_capacity(ps.coords().len() * 12);
    for p in ps.points() {
        let row: Vec<String> = p.iter().map(|c| c.to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn save_point_set(path: impl AsRef<Path>, ps: &PointSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_point_set(ps)).map_err(|e| Error::io(path, e))
}

pub fn parse_landmark_set(text: &str, path: &Path) -> Result<LandmarkSet> {
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for (lineno, line) in content_lines(text) {
        let mut toks = line.split_whitespace();
        let name = toks.next().unwrap_or_default().to_string();
        let row = toks.map(|t| parse_f64(t, path, lineno)).collect::<Result<Vec<_>>>()?;
        if row.len() != 3 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected curve name and 3 coordinates, found {} numbers", row.len()),
            ));
        }
        match curves.iter_mut().find(|(n, _)| *n == name) {
            Some((_, c)) => c.extend(row),
            None => curves.push((name, row)),
        }
    }
    let curves = curves
        .into_iter()
        .map(|(name, coords)| {
            Ok(LandmarkCurve {
                name,
                points: PointSet::new(3, coords)?,
            })
        })
        .collect::<Result<_>>()?;
    LandmarkSet::new(curves)
}

pub fn load_landmark_set(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmark_set(&text, path)
}

pub fn format_landmark_set(ls: &LandmarkSet) -> String {
    let mut out = String::new();
    for c in ls.curves() {
        for p in c.points.points() {
            let _ = writeln!(out, "{} {} {} {}", c.name, p[0], p[1], p[2]);
        }
    }
    out
}

pub fn save_landmark_set(path: impl AsRef<Path>, ls: &LandmarkSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_landmark_set(ls)).map_err(|e| Error::io(path, e))
}

fn header_values<const N: usize>(line: Option<(usize, &str)>, key: &str, path: &Path) -> Result<[f64; N]> {
    let (lineno, line) = line.ok_or_else(|| parse_err(path, 0, format!("missing '{key}:' header")))?;
    let rest = line
        .strip_prefix(key)
        .and_then(|r| r.strip_prefix(':'))
        .ok_or_else(|| parse_err(path, lineno, format!("expected '{key}:' header")))?;
    let vals = rest
        .split_whitespace()
        .map(|t| parse_f64(t, path, lineno))
        .collect::<Result<Vec<_>>>()?;
    vals.try_into()
        .map_err(|_| parse_err(path, lineno, format!("'{key}:' needs {N} values")))
}

pub fn parse_volume(text: &str, path: &Path) -> Result<ScalarVolume> {
    let mut lines = content_lines(text);
    match lines.next() {
        Some((_, VOLUME_MAGIC)) => {}
        Some((l, _)) => return Err(parse_err(path, l, format!("missing '{VOLUME_MAGIC}' magic"))),
        None => return Err(parse_err(path, 0, "empty volume file")),
    }
    let dims_f: [f64; 3] = header_values(lines.next(), "dims", path)?;
    let origin: [f64; 3] = header_values(lines.next(), "origin", path)?;
    let spacing: [f64; 3] = header_values(lines.next(), "spacing", path)?;
    let mut dims = [0usize; 3];
    for (d, f) in dims.iter_mut().zip(dims_f) {
        if f < 1.0 || f.fract() != 0.0 {
            return Err(parse_err(path, 2, format!("invalid grid dimension {f}")));
        }
        *d = f as usize;
    }
    let mut values = Vec::with_capacity(dims.iter().product());
    for (lineno, line) in lines {
        for t in line.split_whitespace() {
            values.push(parse_f64(t, path, lineno)?);
        }
    }
    ScalarVolume::new(dims, origin, spacing, values)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_volume(&text, path)
}

pub fn format_volume(vol: &ScalarVolume) -> String {
    let [nx, ny, nz] = vol.dims();
    let mut out = String::with_capacity(vol.values().len() * 20);
    let _ = writeln!(out, "{VOLUME_MAGIC}");
    let _ = writeln!(out, "dims: {nx} {ny} {nz}");
    let o = vol.origin();
    let _ = writeln!(out, "origin: {} {} {}", o[0], o[1], o[2]);
    let s = vol.spacing();
    let _ = writeln!(out, "spacing: {} {} {}", s[0], s[1], s[2]);
    for row in vol.values().chunks(nz) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_volume(path: impl AsRef<Path>, vol: &ScalarVolume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_volume(vol)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.pts")
    }

    #[test]
    fn parses_three_points() {
        let ps = parse_point_set("0 0 0\n1 0 0\n0 1 0", p()).unwrap();
        assert_eq!(ps.len(), 3);
        assert_eq!(ps.dim(), 3);
        assert_eq!(ps.point(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn ragged_rows_report_line() {
        let err = parse_point_set("1 2\n1 2 3\n", p()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("inconsistent dimension"));
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn non_numeric_token_reports_line() {
        let err = parse_point_set("1 2 3\n4 x 6\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_point_set("/nonexistent/definitely.pts"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn landmark_curves_keep_order() {
        let text = "rim 0 0 0\nrim 1 0 0\ntip 5 5 5\n";
        let ls = parse_landmark_set(text, p()).unwrap();
        assert_eq!(ls.curves().len(), 2);
        assert_eq!(ls.curves()[0].name, "rim");
        assert_eq!(ls.curves()[0].points.len(), 2);
        assert_eq!(parse_landmark_set(&format_landmark_set(&ls), p()).unwrap(), ls);
    }

    #[test]
    fn volume_header_is_validated() {
        assert!(parse_volume("NOPE\n", p()).is_err());
        let bad = "SDTVOL1\ndims: 2 2 2\norigin: 0 0 0\nspacing: 1 1 1\n1 2 3\n";
        assert!(parse_volume(bad, p()).is_err());
    }

    proptest! {
        #[test]
        fn point_set_round_trip_is_bit_exact(
            coords in prop::collection::vec(-1e6f64..1e6, 1..40).prop_map(|mut v| {
                while v.len() % 3 != 0 { v.push(0.1); }
                v
            })
        ) {
            let ps = PointSet::new(3, coords).unwrap();
            let back = parse_point_set(&format_point_set(&ps), p()).unwrap();
            prop_assert_eq!(back, ps);
        }

        #[test]
        fn volume_round_trip_is_bit_exact(
            values in prop::collection::vec(-1e3f64..1e3, 24),
            ox in -50.0f64..50.0,
            sp in 0.01f64..3.0,
        ) {
            let vol = ScalarVolume::new([2, 3, 4], [ox, -ox, 0.5], [sp, sp * 1.5, 0.7], values).unwrap();
            let back = parse_volume(&format_volume(&vol), p()).unwrap();
            prop_assert_eq!(back, vol);
        }
    }
}
