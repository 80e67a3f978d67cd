//! Distances between point clouds and set-level generation metrics.
//!
//! Conventions: Chamfer distance is the un-averaged sum of squared
//! nearest-neighbour distances in both directions; EMD is the minimum over
//! bijections of the summed Euclidean (non-squared) distances; JSD uses
//! the natural logarithm over a fixed `[-1, 1]³` voxel grid. Totals are
//! summed in sorted order so every distance is bit-exactly invariant to
//! point order.

mod assignment;

pub use assignment::{assignment_auction, assignment_solve, ApproxAssignment, Assignment, CostMatrix};

use crate::cloud::{squared_distance, PointCloud};
use crate::error::{Error, Result};
use crate::tensor::order_free_sum;

/// Largest cloud size solved exactly by [`emd`].
pub const EMD_EXACT_THRESHOLD: usize = 256;
/// Relative ε of the approximate EMD solver, as a fraction of the largest cost.
pub const EMD_AUCTION_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_JSD_RESOLUTION: usize = 28;
pub const JSD_BOUNDS: (f64, f64) = (-1.0, 1.0);

fn nearest_sum(from: &PointCloud, to: &PointCloud) -> f64 {
    let mins: Vec<f64> = from
        .points()
        .iter()
        .map(|a| to.points().iter().map(|b| squared_distance(a, b)).fold(f64::INFINITY, f64::min))
        .collect();
    order_free_sum(&mins)
}

/// `Σ_a min_b ‖a − b‖² + Σ_b min_a ‖a − b‖²`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("chamfer distance needs non-empty clouds"));
    }
    Ok(nearest_sum(a, b) + nearest_sum(b, a))
}

/// Result of an EMD computation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmdResult {
    pub cost: f64,
    /// Equal to `cost` for exact solves.
    pub lower_bound: f64,
    pub exact: bool,
    /// `b`'s point matched to each point of `a`.
    pub matching: Vec<usize>,
}

fn distance_matrix(a: &PointCloud, b: &PointCloud) -> Result<CostMatrix> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("EMD needs equal sizes, got {} and {}", a.len(), b.len())));
    }
    CostMatrix::from_fn(a.len(), |i, j| squared_distance(&a.points()[i], &b.points()[j]).sqrt())
}

/// Exact EMD regardless of size.
pub fn emd_exact(a: &PointCloud, b: &PointCloud) -> Result<EmdResult> {
    let s = assignment_solve(&distance_matrix(a, b)?)?;
    Ok(EmdResult { cost: s.total, lower_bound: s.total, exact: true, matching: s.perm })
}

/// Auction-approximated EMD with its certified lower bound.
pub fn emd_approx(a: &PointCloud, b: &PointCloud) -> Result<EmdResult> {
    let s = assignment_auction(&distance_matrix(a, b)?, EMD_AUCTION_TOLERANCE)?;
    Ok(EmdResult {
        cost: s.assignment.total,
        lower_bound: s.lower_bound,
        exact: false,
        matching: s.assignment.perm,
    })
}

/// EMD, exact up to [`EMD_EXACT_THRESHOLD`] points and approximate above.
pub fn emd_detailed(a: &PointCloud, b: &PointCloud) -> Result<EmdResult> {
    if a.len() <= EMD_EXACT_THRESHOLD {
        emd_exact(a, b)
    } else {
        emd_approx(a, b)
    }
}

pub fn emd(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(emd_detailed(a, b)?.cost)
}

/// Occupancy counts over an `R³` grid spanning `[lo, hi]³`.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelHistogram {
    resolution: usize,
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
}

impl VoxelHistogram {
    pub fn new(resolution: usize, lo: f64, hi: f64) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::contract("voxel resolution must be >= 1"));
        }
        if !(lo < hi) {
            return Err(Error::contract("voxel bounds must satisfy lo < hi"));
        }
        let cells = resolution.checked_pow(3).ok_or_else(|| Error::contract("voxel resolution too large"))?;
        Ok(VoxelHistogram { resolution, lo, hi, counts: vec![0; cells] })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Cell index along one axis; out-of-range values land in boundary cells.
    fn bin(&self, v: f64) -> usize {
        let r = self.resolution;
        let t = ((v - self.lo) / (self.hi - self.lo) * r as f64).floor();
        if t < 0.0 {
            0
        } else {
            (t as usize).min(r - 1)
        }
    }

    pub fn add_point(&mut self, p: &[f64; 3]) {
        let r = self.resolution;
        let idx = (self.bin(p[0]) * r + self.bin(p[1])) * r + self.bin(p[2]);
        self.counts[idx] += 1;
    }

    pub fn add_cloud(&mut self, cloud: &PointCloud) {
        for p in cloud.points() {
            self.add_point(p);
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn normalized(&self) -> Result<Vec<f64>> {
        let total = self.total();
        if total == 0 {
            return Err(Error::contract("cannot normalize an empty histogram"));
        }
        Ok(self.counts.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

/// `½ KL(p ‖ m) + ½ KL(q ‖ m)` with `m = (p + q)/2`, natural log, clamped
/// into `[0, ln 2]`.
pub fn jsd_distributions(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::shape("distributions have different supports"));
    }
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += a * (a / m).ln();
        }
        if b > 0.0 {
            total += b * (b / m).ln();
        }
    }
    Ok((0.5 * total).clamp(0.0, std::f64::consts::LN_2))
}

fn histogram(set: &[PointCloud], resolution: usize) -> Result<VoxelHistogram> {
    let mut h = VoxelHistogram::new(resolution, JSD_BOUNDS.0, JSD_BOUNDS.1)?;
    for c in set {
        h.add_cloud(c);
    }
    Ok(h)
}

/// Jensen–Shannon divergence between the pooled point-occupancy histograms
/// of two cloud sets.
pub fn jsd(gen: &[PointCloud], reference: &[PointCloud], resolution: usize) -> Result<f64> {
    if gen.is_empty() || reference.is_empty() {
        return Err(Error::contract("JSD needs non-empty sets"));
    }
    let p = histogram(gen, resolution)?.normalized()?;
    let q = histogram(reference, resolution)?.normalized()?;
    jsd_distributions(&p, &q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Chamfer,
    Emd,
}

impl Distance {
    pub fn eval(self, a: &PointCloud, b: &PointCloud) -> Result<f64> {
        match self {
            Distance::Chamfer => chamfer(a, b),
            Distance::Emd => emd(a, b),
        }
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" => Ok(Distance::Chamfer),
            "emd" => Ok(Distance::Emd),
            _ => Err(Error::config(format!("unknown distance {s:?} (cd|emd)"))),
        }
    }
}

/// `D(gen_i, ref_j)` for all pairs, row-major by generated cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseDistances {
    n_gen: usize,
    n_ref: usize,
    values: Vec<f64>,
}

impl PairwiseDistances {
    pub fn compute(gen: &[PointCloud], reference: &[PointCloud], distance: Distance) -> Result<Self> {
        if gen.is_empty() || reference.is_empty() {
            return Err(Error::contract("set metrics need non-empty sets"));
        }
        let mut values = Vec::with_capacity(gen.len() * reference.len());
        for g in gen {
            for r in reference {
                values.push(distance.eval(g, r)?);
            }
        }
        Ok(PairwiseDistances { n_gen: gen.len(), n_ref: reference.len(), values })
    }

    pub fn get(&self, g: usize, r: usize) -> f64 {
        self.values[g * self.n_ref + r]
    }

    /// Fraction of reference clouds that are the nearest neighbour of some
    /// generated cloud; ties go to the lowest reference index.
    pub fn coverage(&self) -> f64 {
        let mut hit = vec![false; self.n_ref];
        for g in 0..self.n_gen {
            let mut best = 0;
            for r in 1..self.n_ref {
                if self.get(g, r) < self.get(g, best) {
                    best = r;
                }
            }
            hit[best] = true;
        }
        hit.iter().filter(|&&h| h).count() as f64 / self.n_ref as f64
    }

    /// Mean over reference clouds of the distance to the nearest generated cloud.
    pub fn mmd(&self) -> f64 {
        let mins: Vec<f64> = (0..self.n_ref)
            .map(|r| (0..self.n_gen).map(|g| self.get(g, r)).fold(f64::INFINITY, f64::min))
            .collect();
        order_free_sum(&mins) / self.n_ref as f64
    }
}

pub fn coverage(gen: &[PointCloud], reference: &[PointCloud], distance: Distance) -> Result<f64> {
    Ok(PairwiseDistances::compute(gen, reference, distance)?.coverage())
}

pub fn mmd(gen: &[PointCloud], reference: &[PointCloud], distance: Distance) -> Result<f64> {
    Ok(PairwiseDistances::compute(gen, reference, distance)?.mmd())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub jsd: f64,
    pub mmd_cd: f64,
    pub mmd_emd: f64,
    pub cov_cd: f64,
    pub cov_emd: f64,
    pub n_gen: usize,
    pub n_ref: usize,
    /// Whether every EMD was solved exactly.
    pub emd_exact: bool,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "jsd,mmd_cd,mmd_emd,cov_cd,cov_emd,n_gen,n_ref";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.jsd, self.mmd_cd, self.mmd_emd, self.cov_cd, self.cov_emd, self.n_gen, self.n_ref
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_text(&self) -> String {
        format!(
            "generated clouds: {}\nreference clouds: {}\nJSD:     {:.6}\nMMD-CD:  {:.6}\nMMD-EMD: {:.6}\nCOV-CD:  {:.4}\nCOV-EMD: {:.4}\nEMD solver: {}\n",
            self.n_gen,
            self.n_ref,
            self.jsd,
            self.mmd_cd,
            self.mmd_emd,
            self.cov_cd,
            self.cov_emd,
            if self.emd_exact { "exact" } else { "approximate" }
        )
    }
}

/// The full report for a generated set against a reference set.
pub fn evaluate(gen: &[PointCloud], reference: &[PointCloud], resolution: usize) -> Result<MetricsReport> {
    let cd = PairwiseDistances::compute(gen, reference, Distance::Chamfer)?;
    let em = PairwiseDistances::compute(gen, reference, Distance::Emd)?;
    Ok(MetricsReport {
        jsd: jsd(gen, reference, resolution)?,
        mmd_cd: cd.mmd(),
        mmd_emd: em.mmd(),
        cov_cd: cd.coverage(),
        cov_emd: em.coverage(),
        n_gen: gen.len(),
        n_ref: reference.len(),
        emd_exact: gen.iter().chain(reference).all(|c| c.len() <= EMD_EXACT_THRESHOLD),
    })
}
