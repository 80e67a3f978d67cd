use crate::cloud::{common_size, PointCloud};
use crate::error::Result;

/// Per-point coordinate vectors matching a cloud (gradients, adjoints).
pub type Coords = Vec<[f64; 3]>;

/// A differentiable negative energy `f(X)` over point clouds, defining the
/// density `p(X) ∝ exp(f(X))` that Langevin dynamics samples from.
pub trait EnergyFunction {
    fn energies(&self, batch: &[PointCloud]) -> Result<Vec<f64>>;

    /// Energies and per-cloud coordinate gradients.
    fn energies_and_grads(&self, batch: &[PointCloud]) -> Result<(Vec<f64>, Vec<Coords>)>;

    /// Hessian-vector products `∇²f(X_i) · v_i`, needed to differentiate
    /// through unrolled Langevin trajectories.
    fn hessian_vector(&self, batch: &[PointCloud], v: &[Coords]) -> Result<Vec<Coords>>;
}

/// `f(X) = -precision · ‖X‖² / 2`: the standard Gaussian at unit precision.
///
/// Its Langevin dynamics has a closed-form stationary law, which makes it
/// the reference energy for checking the sampler.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianEnergy {
    pub precision: f64,
}

impl Default for GaussianEnergy {
    fn default() -> Self {
        GaussianEnergy { precision: 1.0 }
    }
}

impl EnergyFunction for GaussianEnergy {
    fn energies(&self, batch: &[PointCloud]) -> Result<Vec<f64>> {
        common_size(batch)?;
        Ok(batch
            .iter()
            .map(|c| -0.5 * self.precision * c.flat().iter().map(|v| v * v).sum::<f64>())
            .collect())
    }

    fn energies_and_grads(&self, batch: &[PointCloud]) -> Result<(Vec<f64>, Vec<Coords>)> {
        let energies = self.energies(batch)?;
        let grads = batch
            .iter()
            .map(|c| c.points().iter().map(|p| p.map(|v| -self.precision * v)).collect())
            .collect();
        Ok((energies, grads))
    }

    fn hessian_vector(&self, batch: &[PointCloud], v: &[Coords]) -> Result<Vec<Coords>> {
        common_size(batch)?;
        Ok(v.iter().map(|c| c.iter().map(|p| p.map(|x| -self.precision * x)).collect()).collect())
    }
}
