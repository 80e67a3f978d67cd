//! Point-cloud files, datasets, normalization and synthetic shapes.

mod ply;
mod xyz;

pub use ply::{format_ply, load_ply, parse_ply, save_ply, PlyFormat};
pub use xyz::{format_xyz, load_xyz, parse_xyz, save_xyz};

use std::fs;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Default points per cloud.
pub const DEFAULT_NUM_POINTS: usize = 128;
/// Standard deviation of the jitter added to duplicated points when upsampling.
pub const UPSAMPLE_JITTER: f64 = 1e-6;

/// Loads `.xyz` or `.ply` by extension.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("xyz") | Some("txt") => load_xyz(path),
        Some("ply") => load_ply(path),
        _ => Err(Error::parse(format!("{}: unknown point-cloud extension (xyz|ply)", path.display()))),
    }
}

/// Saves `.xyz` or (binary) `.ply` by extension.
pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("xyz") | Some("txt") => save_xyz(path, cloud),
        Some("ply") => save_ply(path, cloud, PlyFormat::BinaryLittleEndian),
        _ => Err(Error::parse(format!("{}: unknown point-cloud extension (xyz|ply)", path.display()))),
    }
}

/// One manifest line: a cloud file and its label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
}

/// Parses `path<TAB>label` lines; the label may be omitted. Relative paths
/// are resolved against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let path = fields.next().unwrap_or_default().trim();
        if path.is_empty() {
            return Err(Error::parse(format!("manifest line {}: empty path", n + 1)));
        }
        let label = fields.next().unwrap_or("").trim().to_string();
        if fields.next().is_some() {
            return Err(Error::parse(format!("manifest line {}: expected path<TAB>label", n + 1)));
        }
        entries.push(ManifestEntry { path: base.join(path), label });
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(&fs::read_to_string(path)?, base)
}

/// Writes entries with paths relative to the manifest's directory when possible.
pub fn format_manifest(entries: &[ManifestEntry], base: &Path) -> String {
    entries
        .iter()
        .map(|e| {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            format!("{}\t{}\n", p.display(), e.label)
        })
        .collect()
}

/// A per-axis affine map `x ↦ (x − mean) / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAffine {
    pub mean: [f64; 3],
    pub scale: [f64; 3],
}

impl AxisAffine {
    pub const IDENTITY: AxisAffine = AxisAffine { mean: [0.0; 3], scale: [1.0; 3] };

    /// Mean and population standard deviation per axis over all points.
    pub fn fit<'a>(clouds: impl IntoIterator<Item = &'a PointCloud> + Clone) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; 3];
        for c in clouds.clone() {
            for p in c.points() {
                for d in 0..3 {
                    sum[d] += p[d];
                }
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::contract("normalization needs at least one point"));
        }
        let mean = sum.map(|s| s / n as f64);
        let mut sq = [0.0; 3];
        for c in clouds {
            for p in c.points() {
                for d in 0..3 {
                    sq[d] += (p[d] - mean[d]) * (p[d] - mean[d]);
                }
            }
        }
        let mut scale = [0.0; 3];
        for d in 0..3 {
            let var = sq[d] / n as f64;
            if !(var > 0.0) {
                return Err(Error::contract(format!("axis {} has zero variance", ["x", "y", "z"][d])));
            }
            scale[d] = var.sqrt();
        }
        Ok(AxisAffine { mean, scale })
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        map_points(cloud, |p| [0, 1, 2].map(|d| (p[d] - self.mean[d]) / self.scale[d]))
    }

    pub fn invert(&self, cloud: &PointCloud) -> PointCloud {
        map_points(cloud, |p| [0, 1, 2].map(|d| p[d] * self.scale[d] + self.mean[d]))
    }
}

fn map_points(cloud: &PointCloud, f: impl Fn(&[f64; 3]) -> [f64; 3]) -> PointCloud {
    PointCloud::new(cloud.points().iter().map(f).collect()).expect("finite affine image")
}

#[derive(Clone, Debug, PartialEq)]
pub enum Normalization {
    /// One affine over all points of all clouds.
    Pooled(AxisAffine),
    /// One affine per cloud.
    PerCloud(Vec<AxisAffine>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub names: Vec<String>,
    pub labels: Vec<String>,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(clouds: Vec<PointCloud>, names: Vec<String>, labels: Vec<String>) -> Result<Self> {
        if clouds.len() != names.len() || clouds.len() != labels.len() {
            return Err(Error::shape("dataset needs one name and label per cloud"));
        }
        Ok(Dataset { clouds, names, labels, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Points per cloud if uniform.
    pub fn num_points(&self) -> Option<usize> {
        let m = self.clouds.first()?.len();
        self.clouds.iter().all(|c| c.len() == m).then_some(m)
    }

    /// Distinct labels in sorted order.
    pub fn classes(&self) -> Vec<String> {
        let mut c = self.labels.clone();
        c.sort();
        c.dedup();
        c
    }

    /// Loads every cloud of a manifest, resampling to `num_points` when
    /// given and otherwise requiring equal sizes.
    pub fn load<R: Rng + ?Sized>(manifest: &Path, num_points: Option<usize>, rng: &mut R) -> Result<Self> {
        let entries = load_manifest(manifest)?;
        if entries.is_empty() {
            return Err(Error::contract(format!("manifest {} lists no clouds", manifest.display())));
        }
        let mut clouds = Vec::with_capacity(entries.len());
        for e in &entries {
            let c = load_cloud(&e.path).map_err(|err| match err {
                Error::Parse(msg) => Error::parse(format!("{}: {msg}", e.path.display())),
                Error::Contract(msg) => Error::contract(format!("{}: {msg}", e.path.display())),
                other => other,
            })?;
            clouds.push(match num_points {
                Some(m) => resample(&c, m, rng)?,
                None => c,
            });
        }
        let names = entries.iter().map(|e| e.path.display().to_string()).collect();
        let labels = entries.into_iter().map(|e| e.label).collect();
        let ds = Dataset::new(clouds, names, labels)?;
        if ds.num_points().is_none() {
            return Err(Error::shape("clouds differ in size; pass a point count to resample"));
        }
        Ok(ds)
    }
}

/// Rescales to zero mean and unit variance per axis, pooled over all points
/// of all clouds.
pub fn normalize(dataset: &Dataset) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot normalize an empty dataset"));
    }
    let affine = AxisAffine::fit(dataset.clouds.iter())?;
    Ok(Dataset {
        clouds: dataset.clouds.iter().map(|c| affine.apply(c)).collect(),
        normalization: Some(Normalization::Pooled(affine)),
        ..dataset.clone()
    })
}

/// Normalizes each cloud with its own statistics.
pub fn normalize_per_cloud(dataset: &Dataset) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot normalize an empty dataset"));
    }
    let affines = dataset.clouds.iter().map(|c| AxisAffine::fit([c])).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        clouds: dataset.clouds.iter().zip(&affines).map(|(c, a)| a.apply(c)).collect(),
        normalization: Some(Normalization::PerCloud(affines)),
        ..dataset.clone()
    })
}

/// Undoes the recorded normalization.
pub fn denormalize(dataset: &Dataset) -> Result<Dataset> {
    let clouds = match &dataset.normalization {
        None => dataset.clouds.clone(),
        Some(Normalization::Pooled(a)) => dataset.clouds.iter().map(|c| a.invert(c)).collect(),
        Some(Normalization::PerCloud(list)) => {
            if list.len() != dataset.len() {
                return Err(Error::shape("per-cloud normalization record does not match the dataset"));
            }
            dataset.clouds.iter().zip(list).map(|(c, a)| a.invert(c)).collect()
        }
    };
    Ok(Dataset { clouds, normalization: None, ..dataset.clone() })
}

/// Brings a cloud to exactly `target` points: a random permutation when
/// sizes agree, a subset without replacement when shrinking, and all
/// original points plus jittered duplicates when growing.
pub fn resample<R: Rng + ?Sized>(cloud: &PointCloud, target: usize, rng: &mut R) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::config("target point count must be >= 1"));
    }
    let m = cloud.len();
    let pts = cloud.points();
    let out = if m >= target {
        index::sample(rng, m, target).into_iter().map(|i| pts[i]).collect()
    } else {
        let jitter = Normal::new(0.0, UPSAMPLE_JITTER).expect("valid sd");
        let mut out = pts.to_vec();
        for _ in m..target {
            let p = pts[rng.random_range(0..m)];
            out.push(p.map(|v| v + jitter.sample(rng)));
        }
        out.shuffle(rng);
        out
    };
    PointCloud::new(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Sphere,
    Box,
    Torus,
    Plane,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Torus, ShapeKind::Plane];
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "box" => Ok(ShapeKind::Box),
            "torus" => Ok(ShapeKind::Torus),
            "plane" => Ok(ShapeKind::Plane),
            _ => Err(Error::config(format!("unknown shape {s:?} (sphere|box|torus|plane)"))),
        }
    }
}

impl std::fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Box => "box",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
        })
    }
}

/// Half side lengths of the synthetic box.
pub const BOX_HALF_EXTENTS: [f64; 3] = [1.0, 0.75, 0.5];
pub const TORUS_MAJOR_RADIUS: f64 = 1.0;
pub const TORUS_MINOR_RADIUS: f64 = 0.4;

/// Surface areas of the box faces, ordered −x, +x, −y, +y, −z, +z.
pub fn box_face_areas() -> [f64; 6] {
    let [a, b, c] = BOX_HALF_EXTENTS;
    let (x, y, z) = (4.0 * b * c, 4.0 * a * c, 4.0 * a * b);
    [x, x, y, y, z, z]
}

/// `m` points uniform on the surface of `kind`, plus isotropic Gaussian
/// jitter of standard deviation `noise_sd`.
pub fn synth_shape<R: Rng + ?Sized>(kind: ShapeKind, m: usize, noise_sd: f64, rng: &mut R) -> Result<PointCloud> {
    if m == 0 {
        return Err(Error::config("point count must be >= 1"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::config("noise standard deviation must be >= 0"));
    }
    let faces = WeightedIndex::new(box_face_areas()).expect("positive areas");
    let mut points = Vec::with_capacity(m);
    while points.len() < m {
        let p = match kind {
            ShapeKind::Sphere => {
                let g: [f64; 3] = [0; 3].map(|_| rng.sample(StandardNormal));
                let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n < 1e-12 {
                    continue;
                }
                g.map(|v| v / n)
            }
            ShapeKind::Box => {
                let face = faces.sample(rng);
                let axis = face / 2;
                let sign = if face % 2 == 0 { -1.0 } else { 1.0 };
                let mut p = [0.0; 3];
                for d in 0..3 {
                    let h = BOX_HALF_EXTENTS[d];
                    p[d] = if d == axis { sign * h } else { rng.random_range(-h..=h) };
                }
                p
            }
            ShapeKind::Torus => {
                let (big, small) = (TORUS_MAJOR_RADIUS, TORUS_MINOR_RADIUS);
                let tube: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let around: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                // Surface element is proportional to R + r cos(tube).
                if rng.random::<f64>() * (big + small) > big + small * tube.cos() {
                    continue;
                }
                let ring = big + small * tube.cos();
                [ring * around.cos(), ring * around.sin(), small * tube.sin()]
            }
            ShapeKind::Plane => [rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5), 0.0],
        };
        points.push(p);
    }
    if noise_sd > 0.0 {
        for p in &mut points {
            for v in p.iter_mut() {
                *v += noise_sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sphere_points_are_unit() {
        let c = synth_shape(ShapeKind::Sphere, 500, 0.0, &mut rng(1)).unwrap();
        assert!(c.points().iter().all(|p| (p.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn plane_is_flat_and_torus_on_surface() {
        let c = synth_shape(ShapeKind::Plane, 200, 0.0, &mut rng(2)).unwrap();
        assert!(c.points().iter().all(|p| p[2] == 0.0 && p[0].abs() <= 0.5 && p[1].abs() <= 0.5));
        let t = synth_shape(ShapeKind::Torus, 300, 0.0, &mut rng(3)).unwrap();
        for p in t.points() {
            let ring = (p[0] * p[0] + p[1] * p[1]).sqrt() - TORUS_MAJOR_RADIUS;
            assert!((ring * ring + p[2] * p[2] - 0.16).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes_are_seeded() {
        for kind in ShapeKind::ALL {
            assert_eq!(
                synth_shape(kind, 50, 0.01, &mut rng(4)).unwrap(),
                synth_shape(kind, 50, 0.01, &mut rng(4)).unwrap()
            );
        }
        assert!("cone".parse::<ShapeKind>().unwrap_err().to_string().contains("sphere|box|torus|plane"));
    }

    #[test]
    fn normalize_round_trip() {
        let mut r = rng(5);
        let clouds: Vec<_> = (0..3)
            .map(|_| {
                let c = synth_shape(ShapeKind::Box, 40, 0.0, &mut r).unwrap();
                map_points(&c, |p| [3.0 * p[0] + 1.0, p[1] - 2.0, 0.5 * p[2]])
            })
            .collect();
        let ds = Dataset::new(clouds, vec!["a".into(), "b".into(), "c".into()], vec![String::new(); 3]).unwrap();
        let n = normalize(&ds).unwrap();
        let refit = AxisAffine::fit(n.clouds.iter()).unwrap();
        for d in 0..3 {
            assert!(refit.mean[d].abs() < 1e-12 && (refit.scale[d] - 1.0).abs() < 1e-12);
        }
        let back = denormalize(&n).unwrap();
        for (a, b) in back.clouds.iter().zip(&ds.clouds) {
            for (x, y) in a.flat().iter().zip(b.flat()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let again = normalize(&n).unwrap();
        for (a, b) in again.clouds.iter().zip(&n.clouds) {
            for (x, y) in a.flat().iter().zip(b.flat()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let pc = normalize_per_cloud(&ds).unwrap();
        assert_eq!(denormalize(&pc).unwrap().len(), 3);
    }

    #[test]
    fn zero_variance_axis_is_named() {
        let ds = Dataset::new(
            vec![synth_shape(ShapeKind::Plane, 10, 0.0, &mut rng(6)).unwrap()],
            vec!["p".into()],
            vec![String::new()],
        )
        .unwrap();
        assert!(normalize(&ds).unwrap_err().to_string().contains("axis z"));
    }

    #[test]
    fn resampling() {
        let c = synth_shape(ShapeKind::Sphere, 20, 0.0, &mut rng(7)).unwrap();
        let same = resample(&c, 20, &mut rng(8)).unwrap();
        let mut a: Vec<_> = same.points().to_vec();
        let mut b: Vec<_> = c.points().to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
        let down = resample(&c, 7, &mut rng(9)).unwrap();
        assert!(down.points().iter().all(|p| c.points().contains(p)));
        let up = resample(&c, 50, &mut rng(10)).unwrap();
        assert_eq!(up.len(), 50);
        for p in up.points() {
            let near = c.points().iter().map(|q| crate::cloud::squared_distance(p, q).sqrt()).fold(f64::MAX, f64::min);
            assert!(near < 1e-4);
        }
    }

    #[test]
    fn manifest_parsing() {
        let base = Path::new("/data");
        let e = parse_manifest("# list\na.xyz\tsphere\nsub/b.ply\tbox\r\nc.xyz\n", base).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(e[0], ManifestEntry { path: "/data/a.xyz".into(), label: "sphere".into() });
        assert_eq!(e[1].label, "box");
        assert_eq!(e[2].label, "");
        assert_eq!(format_manifest(&e[..2], base), "a.xyz\tsphere\nsub/b.ply\tbox\n");
        assert!(parse_manifest("a\tb\tc\n", base).is_err());
    }
}
