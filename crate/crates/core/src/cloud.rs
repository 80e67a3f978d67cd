use crate::error::{Error, Result};

/// An unordered set of 3-D points.
///
/// Points are stored in a fixed order for I/O and for the order-dependent
/// reconstruction loss, but every consumer that treats the cloud as a set
/// must be invariant to that order.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::contract("a point cloud needs at least one point"));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::contract(format!("point {i} has a non-finite coordinate")));
        }
        Ok(PointCloud { points })
    }

    /// Builds a cloud from `3·M` interleaved coordinates.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if !coords.len().is_multiple_of(3) {
            return Err(Error::shape(format!("{} coordinates is not a multiple of 3", coords.len())));
        }
        PointCloud::new(coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn flat(&self) -> &[f64] {
        self.points.as_flattened()
    }

    pub fn into_points(self) -> Vec<[f64; 3]> {
        self.points
    }

    /// Applies `perm` so that output point `i` is input point `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.len() {
            return Err(Error::shape("permutation length differs from cloud size"));
        }
        Ok(PointCloud { points: perm.iter().map(|&i| self.points[i]).collect() })
    }
}

/// Checks that a non-empty batch shares a point count and returns it.
pub(crate) fn common_size(batch: &[PointCloud]) -> Result<usize> {
    let first = batch.first().ok_or_else(|| Error::contract("empty batch"))?;
    let m = first.len();
    if let Some(i) = batch.iter().position(|c| c.len() != m) {
        return Err(Error::shape(format!(
            "cloud {i} has {} points, expected {m}",
            batch[i].len()
        )));
    }
    Ok(m)
}

pub(crate) fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        assert!(PointCloud::from_flat(&[1.0, 2.0]).is_err());
        let c = PointCloud::from_flat(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(c.points(), &[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(c.flat(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn common_size_checks() {
        let a = PointCloud::from_flat(&[0.0; 6]).unwrap();
        let b = PointCloud::from_flat(&[0.0; 3]).unwrap();
        assert_eq!(common_size(&[a.clone(), a.clone()]).unwrap(), 2);
        assert!(matches!(common_size(&[a, b]), Err(Error::Shape(_))));
        assert!(common_size(&[]).is_err());
    }
}
