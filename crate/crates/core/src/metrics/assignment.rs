//! Linear assignment: exact shortest-augmenting-path solver and an
//! ε-scaling auction solver with a dual lower bound.

use crate::error::{Error, Result};
use crate::tensor::order_free_sum;

/// A square cost matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(format!("{n}x{n} cost matrix needs {} entries, got {}", n * n, data.len())));
        }
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(Error::contract(format!("cost entry ({}, {}) is not finite", i / n.max(1), i % n.max(1))));
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix::new(n, data)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Total of `cost[i][perm[i]]`, summed in an order independent of `i`.
    pub fn total(&self, perm: &[usize]) -> f64 {
        let c: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).collect();
        order_free_sum(&c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Row `i` is matched to column `perm[i]`.
    pub perm: Vec<usize>,
    pub total: f64,
}

/// Minimum-cost perfect matching, exact, in `O(n³)`.
///
/// Shortest augmenting paths with row/column potentials (the
/// Hungarian/Jonker-Volgenant family).
pub fn assignment_solve(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.n;
    if n == 0 {
        return Ok(Assignment { perm: Vec::new(), total: 0.0 });
    }
    // 1-based internal indexing; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            if j1 == 0 {
                return Err(Error::contract("assignment solver lost feasibility"));
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    let total = cost.total(&perm);
    Ok(Assignment { perm, total })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApproxAssignment {
    pub assignment: Assignment,
    /// A certified lower bound on the optimal total.
    pub lower_bound: f64,
}

impl ApproxAssignment {
    /// `(total − lower_bound) / total`, or 0 for a zero total.
    pub fn relative_gap(&self) -> f64 {
        let t = self.assignment.total;
        if t > 0.0 {
            ((t - self.lower_bound) / t).max(0.0)
        } else {
            0.0
        }
    }
}

/// Auction algorithm with ε-scaling. The result is within `n · ε_final` of
/// optimal, where `ε_final = tolerance · max|cost|`; the returned lower
/// bound is the dual value `Σ_i min_j (c_ij + p_j) − Σ_j p_j` at the final
/// prices.
pub fn assignment_auction(cost: &CostMatrix, tolerance: f64) -> Result<ApproxAssignment> {
    if !(tolerance > 0.0) {
        return Err(Error::contract("auction tolerance must be > 0"));
    }
    let n = cost.n;
    if n == 0 {
        return Ok(ApproxAssignment { assignment: Assignment { perm: Vec::new(), total: 0.0 }, lower_bound: 0.0 });
    }
    let scale = cost.data.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        let perm: Vec<usize> = (0..n).collect();
        return Ok(ApproxAssignment { assignment: Assignment { perm, total: 0.0 }, lower_bound: 0.0 });
    }
    let eps_final = tolerance * scale;
    let mut eps = scale / 4.0;
    let mut prices = vec![0.0; n];
    let mut owner: Vec<Option<usize>> = vec![None; n];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    loop {
        eps = eps.max(eps_final);
        owner.fill(None);
        assigned.fill(None);
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            // Lowest reduced cost c_ij + p_j and the runner-up.
            let row = cost.row(i);
            let (mut best, mut best_j, mut second) = (f64::INFINITY, 0, f64::INFINITY);
            for (j, (&c, &p)) in row.iter().zip(&prices).enumerate() {
                let r = c + p;
                if r < best {
                    second = best;
                    best = r;
                    best_j = j;
                } else if r < second {
                    second = r;
                }
            }
            let raise = if second.is_finite() { second - best + eps } else { eps };
            prices[best_j] += raise;
            if let Some(prev) = owner[best_j].replace(i) {
                assigned[prev] = None;
                queue.push(prev);
            }
            assigned[i] = Some(best_j);
        }
        if eps <= eps_final {
            break;
        }
        eps /= 4.0;
    }
    let perm: Vec<usize> = assigned.into_iter().map(|j| j.expect("auction assigns every row")).collect();
    let total = cost.total(&perm);
    let mut dual: Vec<f64> = (0..n)
        .map(|i| cost.row(i).iter().zip(&prices).map(|(c, p)| c + p).fold(f64::INFINITY, f64::min))
        .collect();
    dual.extend(prices.iter().map(|p| -p));
    let lower_bound = order_free_sum(&dual).min(total);
    Ok(ApproxAssignment { assignment: Assignment { perm, total }, lower_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &CostMatrix) -> f64 {
        fn rec(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, perm: &mut Vec<usize>, best: &mut f64) {
            let n = cost.size();
            if row == n {
                *best = best.min(cost.total(perm));
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    perm.push(j);
                    rec(cost, row + 1, used, perm, best);
                    perm.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.size()], &mut Vec::new(), &mut best);
        best
    }

    fn random(rng: &mut ChaCha8Rng, n: usize) -> CostMatrix {
        CostMatrix::from_fn(n, |_, _| rng.random::<f64>() * 10.0).unwrap()
    }

    #[test]
    fn diagonal_dominant_gives_identity() {
        let c = CostMatrix::from_fn(5, |i, j| if i == j { 0.0 } else { 1.0 + (i * j) as f64 }).unwrap();
        let a = assignment_solve(&c).unwrap();
        assert_eq!(a.perm, vec![0, 1, 2, 3, 4]);
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn single_entry() {
        let a = assignment_solve(&CostMatrix::new(1, vec![3.5]).unwrap()).unwrap();
        assert_eq!(a, Assignment { perm: vec![0], total: 3.5 });
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(CostMatrix::new(2, vec![0.0, f64::NAN, 1.0, 2.0]), Err(Error::Contract(_))));
        assert!(matches!(CostMatrix::new(2, vec![0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_brute_force_on_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let c = random(&mut rng, 8);
            let a = assignment_solve(&c).unwrap();
            let mut seen = a.perm.clone();
            seen.sort();
            assert_eq!(seen, (0..8).collect::<Vec<_>>());
            assert_eq!(a.total, brute_force(&c));
        }
    }

    #[test]
    fn auction_is_bracketed_by_exact_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 7, 30, 90] {
            let c = random(&mut rng, n);
            let exact = assignment_solve(&c).unwrap().total;
            let approx = assignment_auction(&c, 1e-6).unwrap();
            assert!(approx.lower_bound <= exact + 1e-9, "n={n}");
            assert!(exact <= approx.assignment.total, "n={n}");
            assert!(approx.assignment.total - exact <= n as f64 * 1e-5 + 1e-9, "n={n}");
            assert!(approx.relative_gap() < 1e-3);
        }
    }
}
