use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{normalize_unit_ball, Point3, PointCloud};

/// Parses the point text format: one point per line, `x y z` or
/// `x y z label`, whitespace separated. Blank lines and lines starting
/// with `#` are skipped. All point lines must agree on the column count.
pub fn parse_points(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points: Vec<Point3> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut columns = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(err(format!("expected 3 or 4 fields, found {}", fields.len())));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(err(format!("expected {c} fields, found {}", fields.len())))
            }
            _ => {}
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            let v: f64 = f
                .parse()
                .map_err(|_| err(format!("invalid coordinate {f:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite coordinate {f:?}")));
            }
            *slot = v;
        }
        points.push(p);
        if let Some(f) = fields.get(3) {
            labels.push(f.parse().map_err(|_| err(format!("invalid label {f:?}")))?);
        }
    }
    if points.is_empty() {
        return Err(Error::Data(format!("{} contains no points", path.display())));
    }
    if columns == Some(4) {
        PointCloud::with_labels(points, labels)
    } else {
        PointCloud::new(points)
    }
}

/// Reads a point file and normalizes it into the unit ball.
pub fn load_point_file(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(normalize_unit_ball(&parse_points(&text, path)?))
}

/// Renders a cloud in the point text format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn format_points(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.points().iter().enumerate() {
        write!(out, "{} {} {}", p[0], p[1], p[2]).unwrap();
        if let Some(l) = cloud.labels() {
            write!(out, " {}", l[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn write_point_file(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_points(cloud)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PointCloud> {
        parse_points(text, Path::new("t.pts"))
    }

    #[test]
    fn two_point_file_normalizes() {
        let c = normalize_unit_ball(&parse("0 0 0\n1 0 0\n").unwrap());
        assert_eq!(c.points(), &[[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(c.labels().is_none());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match parse("a b c\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse("0 0 0\n\n1 2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("0 0 0 1\n0 0 0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("0 0 nan\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn labels_from_fourth_column() {
        let c = parse("0 0 0 2\n1 0 0 5\n").unwrap();
        assert_eq!(c.labels(), Some(&[2, 5][..]));
    }

    #[test]
    fn empty_file_is_a_data_error() {
        assert!(matches!(parse(""), Err(Error::Data(_))));
        assert!(matches!(parse("# only a comment\n\n"), Err(Error::Data(_))));
    }

    #[test]
    fn format_round_trips_exactly() {
        let pts = vec![[0.1, -1e-300, 1.0 / 3.0], [f64::MAX, -0.0, 12345.678]];
        let c = PointCloud::with_labels(pts, vec![0, 7]).unwrap();
        assert_eq!(parse(&format_points(&c)).unwrap(), c);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_point_file(Path::new("/nonexistent/x.pts")),
            Err(Error::Io { .. })
        ));
    }
}
