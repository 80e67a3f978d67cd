//! Max-pooled network features, a one-versus-all linear SVM on top of
//! them, and corruption robustness tests.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::net::{EnergyNet, Pool};

/// Feature rows with aligned integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::shape(format!("{} feature rows but {} labels", features.len(), labels.len())));
        }
        if let Some(first) = features.first() {
            if features.iter().any(|r| r.len() != first.len()) {
                return Err(Error::shape("feature rows have different lengths"));
            }
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("features must be finite"));
        }
        Ok(FeatureSet { features, labels })
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// One row per sample: the label, then the feature columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for j in 0..self.dim() {
            s.push_str(&format!(",f{j}"));
        }
        s.push('\n');
        for (row, label) in self.features.iter().zip(&self.labels) {
            s.push_str(&label.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        lines.next().ok_or_else(|| Error::parse("feature CSV has no header"))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines {
            let mut cells = line.split(',');
            let bad = |what: &str| Error::parse(format!("line {}: bad {what}", n + 1));
            labels.push(cells.next().and_then(|c| c.trim().parse().ok()).ok_or_else(|| bad("label"))?);
            features.push(cells.map(|c| c.trim().parse::<f64>().map_err(|_| bad("feature"))).collect::<Result<_>>()?);
        }
        FeatureSet::new(features, labels)
    }
}

/// Max-pooled global features with eval-mode normalization, one row per cloud.
pub fn extract_features(net: &EnergyNet, clouds: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
    clouds.iter().map(|c| net.global_feature(c, Pool::Max)).collect()
}

/// One-versus-all linear classifier over standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    /// Per class: weights over the standardized features, then the bias.
    pub weights: Vec<Vec<f64>>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

impl LinearClassifier {
    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_mean.len() {
            return Err(Error::shape(format!(
                "classifier expects {} features, got {}",
                self.feature_mean.len(),
                x.len()
            )));
        }
        let z = standardize(x, &self.feature_mean, &self.feature_scale);
        Ok(self.weights.iter().map(|w| score(w, &z)).collect())
    }
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s).collect()
}

/// `w · [z, 1]`.
fn score(w: &[f64], z: &[f64]) -> f64 {
    let (bias, wz) = w.split_last().expect("bias present");
    wz.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + bias
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains one binary linear SVM per class (that class against the rest) by
/// full-batch Pegasos subgradient descent on
/// `reg/2 · ‖w‖² + mean_i max(0, 1 − y_i w·[z_i, 1])`, where `z` are the
/// standardized features and the bias is the last weight.
pub fn train_linear_classifier(data: &FeatureSet, reg: f64, epochs: usize) -> Result<LinearClassifier> {
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::config("regularization must be > 0"));
    }
    let k = data.num_classes();
    let mut present = vec![false; k];
    for &l in &data.labels {
        present[l] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::contract("classifier training needs at least two classes"));
    }
    let c = data.dim();
    let n = data.len() as f64;
    let mut mean = vec![0.0; c];
    for row in &data.features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; c];
    for row in &data.features {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = data.features.iter().map(|r| standardize(r, &mean, &scale)).collect();

    let radius = 1.0 / reg.sqrt();
    let weights = (0..k)
        .map(|class| {
            let mut w = vec![0.0; c + 1];
            for t in 1..=epochs {
                let eta = 1.0 / (reg * t as f64);
                let mut step = vec![0.0; c + 1];
                for (zi, &label) in z.iter().zip(&data.labels) {
                    let y = if label == class { 1.0 } else { -1.0 };
                    if y * score(&w, zi) < 1.0 {
                        for (s, v) in step.iter_mut().zip(zi) {
                            *s += y * v;
                        }
                        step[c] += y;
                    }
                }
                for (wj, sj) in w.iter_mut().zip(&step) {
                    *wj = (1.0 - eta * reg) * *wj + eta * sj / n;
                }
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > radius {
                    w.iter_mut().for_each(|v| *v *= radius / norm);
                }
            }
            w
        })
        .collect();
    Ok(LinearClassifier { weights, feature_mean: mean, feature_scale: scale })
}

pub fn classify(model: &LinearClassifier, features: &[Vec<f64>]) -> Result<Vec<usize>> {
    features.iter().map(|x| Ok(argmax_first(&model.scores(x)?))).collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionKind {
    /// Delete a fraction of the points.
    Missing,
    /// Append a fraction of extra points uniform in the unit ball.
    Added,
    /// Add Gaussian noise of the given standard deviation to every coordinate.
    Perturb,
}

impl std::str::FromStr for CorruptionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "missing" => Ok(CorruptionKind::Missing),
            "added" => Ok(CorruptionKind::Added),
            "perturb" => Ok(CorruptionKind::Perturb),
            _ => Err(Error::config(format!("unknown corruption {s:?} (missing|added|perturb)"))),
        }
    }
}

impl std::fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorruptionKind::Missing => "missing",
            CorruptionKind::Added => "added",
            CorruptionKind::Perturb => "perturb",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    /// Ratio in `[0, 1)` for missing/added points, standard deviation for perturbation.
    pub level: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CorruptionKind::Missing | CorruptionKind::Added => (0.0..1.0).contains(&self.level),
            CorruptionKind::Perturb => self.level >= 0.0 && self.level.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid {} level {}", self.kind, self.level)))
        }
    }
}

pub fn corrupt(cloud: &PointCloud, spec: &CorruptionSpec) -> Result<PointCloud> {
    spec.validate()?;
    corrupt_with_rng(cloud, spec.kind, spec.level, &mut ChaCha8Rng::seed_from_u64(spec.seed))
}

pub fn corrupt_with_rng<R: Rng + ?Sized>(
    cloud: &PointCloud,
    kind: CorruptionKind,
    level: f64,
    rng: &mut R,
) -> Result<PointCloud> {
    if level == 0.0 {
        return Ok(cloud.clone());
    }
    let m = cloud.len();
    let count = (level * m as f64).floor() as usize;
    match kind {
        CorruptionKind::Missing => {
            if count >= m {
                return Err(Error::contract(format!("deleting {count} of {m} points leaves none")));
            }
            let mut keep = index::sample(rng, m, m - count).into_vec();
            keep.sort_unstable();
            PointCloud::new(keep.into_iter().map(|i| cloud.points()[i]).collect())
        }
        CorruptionKind::Added => {
            let mut pts = cloud.points().to_vec();
            while pts.len() < m + count {
                let p: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.0..=1.0));
                if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                    pts.push(p);
                }
            }
            PointCloud::new(pts)
        }
        CorruptionKind::Perturb => {
            let pts = cloud
                .points()
                .iter()
                .map(|p| p.map(|v| v + level * rng.sample::<f64, _>(StandardNormal)))
                .collect();
            PointCloud::new(pts)
        }
    }
}

/// Test accuracy at each corruption level. Cloud `i` is corrupted with the
/// generator `ChaCha8(seed)` on stream `i`, so every level sees the same
/// per-cloud randomness.
pub fn robustness_curve(
    net: &EnergyNet,
    model: &LinearClassifier,
    clouds: &[PointCloud],
    labels: &[usize],
    kind: CorruptionKind,
    levels: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if clouds.len() != labels.len() {
        return Err(Error::shape("one label per test cloud required"));
    }
    levels
        .iter()
        .map(|&level| {
            CorruptionSpec { kind, level, seed }.validate()?;
            let corrupted = clouds
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(i as u64);
                    corrupt_with_rng(c, kind, level, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let feats = extract_features(net, &corrupted)?;
            Ok((level, accuracy(&classify(model, &feats)?, labels)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> FeatureSet {
        let xs = [-2.0, -1.5, -1.0, -0.7, 0.8, 1.1, 1.6, 2.5];
        FeatureSet::new(xs.iter().map(|&x| vec![x]).collect(), vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap()
    }

    fn square() -> PointCloud {
        PointCloud::from_flat(&(0..24).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs();
        let model = train_linear_classifier(&data, 1e-2, 200).unwrap();
        let pred = classify(&model, data.features()).unwrap();
        assert_eq!(accuracy(&pred, data.labels()), 1.0);
    }

    #[test]
    fn weights_shrink_with_regularization() {
        let data = blobs();
        let norms: Vec<f64> = [1e-2, 1.0, 1e2]
            .iter()
            .map(|&r| {
                let m = train_linear_classifier(&data, r, 100).unwrap();
                m.weights.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
    }

    #[test]
    fn single_class_rejected() {
        let data = FeatureSet::new(vec![vec![1.0], vec![2.0]], vec![1, 1]).unwrap();
        assert!(matches!(train_linear_classifier(&data, 1.0, 10), Err(Error::Contract(_))));
    }

    #[test]
    fn argmax_ties_and_zero_weights() {
        assert_eq!(argmax_first(&[3.0, 1.0, 3.0]), 0);
        let model = LinearClassifier {
            weights: vec![vec![0.0; 3]; 4],
            feature_mean: vec![0.0; 2],
            feature_scale: vec![1.0; 2],
        };
        assert_eq!(classify(&model, &[vec![1.0, -2.0], vec![5.0, 5.0]]).unwrap(), vec![0, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let data = FeatureSet::new(vec![vec![0.5, -1.25], vec![1e-17, 3.0]], vec![2, 0]).unwrap();
        let csv = data.to_csv();
        assert!(csv.starts_with("label,f0,f1\n2,0.5,-1.25\n"));
        assert_eq!(FeatureSet::from_csv(&csv).unwrap(), data);
    }

    #[test]
    fn zero_level_is_identity() {
        let c = square();
        for kind in [CorruptionKind::Missing, CorruptionKind::Added, CorruptionKind::Perturb] {
            assert_eq!(corrupt(&c, &CorruptionSpec { kind, level: 0.0, seed: 3 }).unwrap(), c);
        }
    }

    #[test]
    fn missing_points_are_a_subset() {
        let c = PointCloud::from_flat(&(0..384).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let out = corrupt(&c, &CorruptionSpec { kind: CorruptionKind::Missing, level: 0.5, seed: 1 }).unwrap();
        assert_eq!(out.len(), 64);
        assert!(out.points().iter().all(|p| c.points().contains(p)));
        let tiny = PointCloud::from_flat(&[0.0; 3]).unwrap();
        let spec = CorruptionSpec { kind: CorruptionKind::Missing, level: 0.99, seed: 1 };
        assert!(corrupt(&tiny, &spec).is_ok());
        assert!(CorruptionSpec { level: 1.0, ..spec }.validate().is_err());
    }

    #[test]
    fn added_points_lie_in_unit_ball() {
        let c = square();
        let out = corrupt(&c, &CorruptionSpec { kind: CorruptionKind::Added, level: 0.75, seed: 2 }).unwrap();
        assert_eq!(out.len(), 8 + 6);
        assert_eq!(&out.points()[..8], c.points());
        assert!(out.points()[8..].iter().all(|p| p.iter().map(|v| v * v).sum::<f64>() <= 1.0));
    }

    #[test]
    fn corruption_is_seeded() {
        let c = square();
        let spec = CorruptionSpec { kind: CorruptionKind::Perturb, level: 0.3, seed: 5 };
        assert_eq!(corrupt(&c, &spec).unwrap(), corrupt(&c, &spec).unwrap());
        assert_ne!(corrupt(&c, &spec).unwrap(), corrupt(&c, &CorruptionSpec { seed: 6, ..spec }).unwrap());
    }
}
