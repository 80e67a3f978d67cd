use std::fs;
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Parses whitespace-separated `x y z` lines. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(format!("line {}: expected 3 coordinates, found {}", n + 1, fields.len())));
        }
        let mut p = [0.0; 3];
        for (slot, f) in p.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(format!("line {}: bad coordinate {f:?}", n + 1)))?;
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::contract("XYZ input contains no points"));
    }
    PointCloud::new(points)
}

/// One `x y z` line per point, each value in shortest round-trip form.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 60);
    for p in cloud.points() {
        s.push_str(&format!("{} {} {}\n", p[0], p[1], p[2]));
    }
    s
}

pub fn load_xyz(path: &Path) -> Result<PointCloud> {
    parse_xyz(&fs::read_to_string(path)?)
}

pub fn save_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, format_xyz(cloud))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_points_and_comments() {
        let c = parse_xyz("# header\n0 0 0\n\n1 2 3\n").unwrap();
        assert_eq!(c.points(), &[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]);
    }

    #[test]
    fn comments_only_is_empty() {
        assert!(matches!(parse_xyz("# a\n# b\n"), Err(Error::Contract(_))));
    }

    #[test]
    fn malformed_line_is_reported() {
        let e = parse_xyz("0 0 0\n1 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(parse_xyz("0 0 x\n").unwrap_err().to_string().contains("line 1"));
        assert!(parse_xyz("0 0 nan\n").is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let c = PointCloud::new(vec![[0.1, -1.0 / 3.0, 1e-300], [std::f64::consts::PI, 2.5e17, -0.0]]).unwrap();
        assert_eq!(parse_xyz(&format_xyz(&c)).unwrap(), c);
    }
}
