//! The noise-free short-run sampler `M(Z)` used as a generator:
//! reconstruction by descent on the latent cloud, and latent interpolation.
//!
//! The reconstruction loss is `L(Z) = ‖X − M(Z)‖²` under the stored point
//! order. Its gradient is computed by a reverse sweep over the unrolled
//! trajectory `X_{k+1} = X_k + (δ²/2)∇f(X_k)`:
//!
//! ```text
//! v_K = 2 (X_K − X),   v_k = v_{k+1} + (δ²/2) ∇²f(X_k) v_{k+1},   ∂L/∂Z = v_0
//! ```

use rand::Rng;

use crate::cloud::{common_size, PointCloud};
use crate::energy::{Coords, EnergyFunction};
use crate::error::{Error, Result};
use crate::sampler::{noise_clouds, run_chain, NoiseStream, SamplerConfig};

/// Longest trajectory reconstruction will store for the reverse sweep.
pub const MAX_UNROLL: usize = 256;

const MAX_HALVINGS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconConfig {
    pub recon_steps: usize,
    pub recon_step_size: f64,
    pub restarts: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig { recon_steps: 200, recon_step_size: 0.1, restarts: 3 }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.recon_steps == 0 || self.restarts == 0 {
            return Err(Error::config("recon_steps and restarts must be >= 1"));
        }
        if !(self.recon_step_size > 0.0 && self.recon_step_size.is_finite()) {
            return Err(Error::config("recon_step_size must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    /// Optimized latent `Z*`.
    pub latent: PointCloud,
    /// `M(Z*)`.
    pub output: PointCloud,
    /// `L(Z*)`.
    pub loss: f64,
    /// Index of the winning restart.
    pub restart: usize,
    /// `M(Z0)` and `L(Z0)` of the winning restart before descent.
    pub initial_output: PointCloud,
    pub initial_loss: f64,
}

fn squared_error(a: &PointCloud, b: &PointCloud) -> f64 {
    a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn noise_free_run<E: EnergyFunction + ?Sized>(
    energy: &E,
    z: &[PointCloud],
    sampler: &SamplerConfig,
) -> Result<Vec<PointCloud>> {
    Ok(run_chain(energy, z, &sampler.noise_free(), &NoiseStream::new(0))?.clouds)
}

/// Losses, latent gradients and outputs for a batch of `(Z, target)` pairs.
fn loss_and_grad<E: EnergyFunction + ?Sized>(
    energy: &E,
    z: &[PointCloud],
    targets: &[PointCloud],
    sampler: &SamplerConfig,
) -> Result<(Vec<f64>, Vec<Coords>, Vec<PointCloud>)> {
    sampler.validate()?;
    if z.len() != targets.len() {
        return Err(Error::contract("one target per latent cloud required"));
    }
    let m = common_size(z)?;
    if targets.iter().any(|t| t.len() != m) {
        return Err(Error::contract(format!("targets must have {m} points like the latent")));
    }
    let drift = 0.5 * sampler.step_size * sampler.step_size;

    // Forward pass storing every state and whether the clamp was active.
    let mut states = vec![z.to_vec()];
    let mut masks: Vec<Vec<Vec<[bool; 3]>>> = Vec::with_capacity(sampler.num_steps);
    for step in 0..sampler.num_steps {
        let cur = states.last().expect("non-empty");
        let (_, grads) = energy.energies_and_grads(cur)?;
        let mut next = Vec::with_capacity(cur.len());
        let mut mask = Vec::with_capacity(cur.len());
        for (i, (cloud, g)) in cur.iter().zip(&grads).enumerate() {
            let mut pts = Vec::with_capacity(m);
            let mut free = Vec::with_capacity(m);
            for (p, gp) in cloud.points().iter().zip(g) {
                let mut q = [0.0; 3];
                let mut f = [true; 3];
                for d in 0..3 {
                    q[d] = p[d] + drift * gp[d];
                    if let Some(b) = sampler.clamp_bound {
                        f[d] = q[d].abs() <= b;
                        q[d] = q[d].clamp(-b, b);
                    }
                }
                pts.push(q);
                free.push(f);
            }
            next.push(PointCloud::new(pts).map_err(|_| Error::Divergence {
                context: format!("step {step}, chain {i}"),
                message: "non-finite coordinates in unrolled dynamics".into(),
            })?);
            mask.push(free);
        }
        states.push(next);
        masks.push(mask);
    }

    let outputs = states.pop().expect("final state");
    let losses: Vec<f64> = outputs.iter().zip(targets).map(|(x, t)| squared_error(x, t)).collect();
    let mut adj: Vec<Coords> = outputs
        .iter()
        .zip(targets)
        .map(|(x, t)| x.points().iter().zip(t.points()).map(|(a, b)| [0, 1, 2].map(|d| 2.0 * (a[d] - b[d]))).collect())
        .collect();
    for (state, mask) in states.iter().zip(&masks).rev() {
        for (v, mk) in adj.iter_mut().zip(mask) {
            for (p, f) in v.iter_mut().zip(mk) {
                for d in 0..3 {
                    if !f[d] {
                        p[d] = 0.0;
                    }
                }
            }
        }
        let hv = energy.hessian_vector(state, &adj)?;
        for (v, h) in adj.iter_mut().zip(&hv) {
            for (p, hp) in v.iter_mut().zip(h) {
                for d in 0..3 {
                    p[d] += drift * hp[d];
                }
            }
        }
    }
    Ok((losses, adj, outputs))
}

/// `∂L/∂Z` through the noise-free unrolled dynamics.
pub fn grad_latent<E: EnergyFunction + ?Sized>(
    energy: &E,
    z: &PointCloud,
    target: &PointCloud,
    sampler: &SamplerConfig,
) -> Result<Coords> {
    let (_, mut grads, _) = loss_and_grad(energy, std::slice::from_ref(z), std::slice::from_ref(target), sampler)?;
    Ok(grads.remove(0))
}

/// `L(Z) = ‖target − M(Z)‖²` under the stored point order.
pub fn latent_loss<E: EnergyFunction + ?Sized>(
    energy: &E,
    z: &PointCloud,
    target: &PointCloud,
    sampler: &SamplerConfig,
) -> Result<f64> {
    if z.len() != target.len() {
        return Err(Error::contract("latent and target sizes differ"));
    }
    let out = noise_free_run(energy, std::slice::from_ref(z), sampler)?;
    Ok(squared_error(&out[0], target))
}

struct Slot {
    target: usize,
    restart: usize,
    z: PointCloud,
    grad: Coords,
    loss: f64,
    output: PointCloud,
    initial_output: PointCloud,
    initial_loss: f64,
    eta: f64,
    steps: usize,
    failures: usize,
    done: bool,
}

/// Reconstructs one target; see [`reconstruct_many`].
pub fn reconstruct<E: EnergyFunction + ?Sized, R: Rng + ?Sized>(
    energy: &E,
    target: &PointCloud,
    sampler: &SamplerConfig,
    recon: &ReconConfig,
    rng: &mut R,
) -> Result<Reconstruction> {
    Ok(reconstruct_many(energy, std::slice::from_ref(target), sampler, recon, rng)?.remove(0))
}

/// Finds `Z` minimizing `‖target − M(Z)‖²` for each target by gradient
/// descent with backtracking: a trial step is accepted only if the loss
/// does not increase, otherwise the step is halved (at most 20 times in a
/// row, after which that restart stops). Accepted steps let the step grow
/// back by 2× up to `recon_step_size`. Every restart starts from its own
/// Gaussian latent; the lowest final loss wins.
///
/// All (target, restart) descents are evaluated as one batch, so the
/// result for a target does not depend on which other targets are present
/// except through the order latents are drawn from `rng`.
pub fn reconstruct_many<E: EnergyFunction + ?Sized, R: Rng + ?Sized>(
    energy: &E,
    targets: &[PointCloud],
    sampler: &SamplerConfig,
    recon: &ReconConfig,
    rng: &mut R,
) -> Result<Vec<Reconstruction>> {
    recon.validate()?;
    sampler.validate()?;
    if sampler.num_steps > MAX_UNROLL {
        return Err(Error::config(format!(
            "reconstruction unrolls at most {MAX_UNROLL} Langevin steps, sampler has {}; use a smaller K",
            sampler.num_steps
        )));
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let m = common_size(targets)?;

    let mut latents = Vec::new();
    let mut owners = Vec::new();
    for t in 0..targets.len() {
        for r in 0..recon.restarts {
            latents.extend(noise_clouds(rng, 1, m));
            owners.push((t, r));
        }
    }
    let tgt: Vec<PointCloud> = owners.iter().map(|&(t, _)| targets[t].clone()).collect();
    let (losses, grads, outputs) = loss_and_grad(energy, &latents, &tgt, sampler)?;
    let mut slots: Vec<Slot> = Vec::with_capacity(latents.len());
    for ((((z, (t, r)), loss), grad), output) in latents.into_iter().zip(owners).zip(losses).zip(grads).zip(outputs) {
        check_loss(loss, r)?;
        slots.push(Slot {
            target: t,
            restart: r,
            z,
            grad,
            loss,
            initial_output: output.clone(),
            output,
            initial_loss: loss,
            eta: recon.recon_step_size,
            steps: 0,
            failures: 0,
            done: false,
        });
    }

    loop {
        let active: Vec<usize> = (0..slots.len()).filter(|&i| !slots[i].done).collect();
        if active.is_empty() {
            break;
        }
        let mut trials = Vec::with_capacity(active.len());
        for &i in &active {
            let s = &slots[i];
            let pts = s
                .z
                .points()
                .iter()
                .zip(&s.grad)
                .map(|(p, g)| [0, 1, 2].map(|d| p[d] - s.eta * g[d]))
                .collect();
            trials.push(PointCloud::new(pts).map_err(|_| Error::Divergence {
                context: format!("restart {}", s.restart),
                message: "non-finite latent".into(),
            })?);
        }
        let tgt: Vec<PointCloud> = active.iter().map(|&i| targets[slots[i].target].clone()).collect();
        let (losses, grads, outputs) = loss_and_grad(energy, &trials, &tgt, sampler)?;
        for ((((&i, z), loss), grad), output) in active.iter().zip(trials).zip(losses).zip(grads).zip(outputs) {
            let s = &mut slots[i];
            check_loss(loss, s.restart)?;
            if loss <= s.loss {
                s.z = z;
                s.loss = loss;
                s.grad = grad;
                s.output = output;
                s.steps += 1;
                s.failures = 0;
                s.eta = (2.0 * s.eta).min(recon.recon_step_size);
                s.done = s.steps >= recon.recon_steps;
            } else {
                s.failures += 1;
                s.eta *= 0.5;
                s.done = s.failures > MAX_HALVINGS;
            }
        }
    }

    let mut best: Vec<Option<Slot>> = (0..targets.len()).map(|_| None).collect();
    for s in slots {
        let b = &mut best[s.target];
        if b.as_ref().is_none_or(|cur| s.loss < cur.loss) {
            *b = Some(s);
        }
    }
    Ok(best
        .into_iter()
        .map(|s| {
            let s = s.expect("every target has a restart");
            Reconstruction {
                latent: s.z,
                output: s.output,
                loss: s.loss,
                restart: s.restart,
                initial_output: s.initial_output,
                initial_loss: s.initial_loss,
            }
        })
        .collect())
}

fn check_loss(loss: f64, restart: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { context: format!("restart {restart}"), message: "reconstruction loss is not finite".into() })
    }
}

/// The interpolation weights `ρ_i = i / (n − 1)`.
pub fn interpolation_grid(num_steps: usize) -> Result<Vec<f64>> {
    if num_steps < 2 {
        return Err(Error::config("interpolation needs at least 2 steps"));
    }
    let last = (num_steps - 1) as f64;
    Ok((0..num_steps).map(|i| i as f64 / last).collect())
}

/// Frames `M((1 − ρ) Z1 + ρ Z2)` over [`interpolation_grid`], noise disabled.
/// The end frames are generated from `Z1` and `Z2` themselves; inner
/// latents are formed as `Z1 + ρ (Z2 − Z1)` so equal endpoints give equal
/// frames exactly.
pub fn interpolate<E: EnergyFunction + ?Sized>(
    energy: &E,
    z1: &PointCloud,
    z2: &PointCloud,
    num_steps: usize,
    sampler: &SamplerConfig,
) -> Result<Vec<PointCloud>> {
    if z1.len() != z2.len() {
        return Err(Error::contract(format!("latent sizes differ: {} vs {}", z1.len(), z2.len())));
    }
    let grid = interpolation_grid(num_steps)?;
    let last = grid.len() - 1;
    let latents = grid
        .iter()
        .enumerate()
        .map(|(i, &rho)| match i {
            0 => Ok(z1.clone()),
            i if i == last => Ok(z2.clone()),
            _ => {
                let pts = z1
                    .points()
                    .iter()
                    .zip(z2.points())
                    .map(|(a, b)| [0, 1, 2].map(|d| a[d] + rho * (b[d] - a[d])))
                    .collect();
                PointCloud::new(pts)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    noise_free_run(energy, &latents, sampler)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::GaussianEnergy;
    use crate::net::{EnergyNet, NetConfig};
    use crate::sampler::short_run_generate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, m: usize) -> PointCloud {
        noise_clouds(rng, 1, m).remove(0)
    }

    fn mini_net(seed: u64) -> EnergyNet {
        let cfg = NetConfig { encoder_widths: vec![8, 16], head_widths: vec![8, 1], use_batch_norm_encoder: true };
        let mut net = EnergyNet::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.update_running_stats(&noise_clouds(&mut rng, 4, 16)).unwrap();
        net
    }

    fn sampler(k: usize, delta: f64) -> SamplerConfig {
        SamplerConfig { num_steps: k, step_size: delta, noise_scale: 0.0, ..Default::default() }
    }

    fn fd_grad<E: EnergyFunction>(e: &E, z: &PointCloud, t: &PointCloud, s: &SamplerConfig, h: f64) -> Vec<f64> {
        let base = z.flat().to_vec();
        (0..base.len())
            .map(|i| {
                let mut p = base.clone();
                p[i] += h;
                let lp = latent_loss(e, &PointCloud::from_flat(&p).unwrap(), t, s).unwrap();
                p[i] -= 2.0 * h;
                let lm = latent_loss(e, &PointCloud::from_flat(&p).unwrap(), t, s).unwrap();
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gaussian_unroll_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = GaussianEnergy { precision: 0.7 };
        let s = sampler(8, 0.3);
        let (z, t) = (cloud(&mut rng, 5), cloud(&mut rng, 5));
        let g = grad_latent(&e, &z, &t, &s).unwrap();
        let fd = fd_grad(&e, &z, &t, &s, 1e-5);
        for (a, b) in g.as_flattened().iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
        // Closed form: M(Z) = c^K Z with c = 1 − precision·δ²/2.
        let c: f64 = (1.0 - 0.7 * 0.045_f64).powi(8);
        for ((gv, zv), tv) in g.as_flattened().iter().zip(z.flat()).zip(t.flat()) {
            assert!((gv - 2.0 * c * (c * zv - tv)).abs() < 1e-12);
        }
    }

    #[test]
    fn net_unroll_matches_finite_differences() {
        let net = mini_net(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sampler(4, 0.5);
        let (z, t) = (cloud(&mut rng, 16), cloud(&mut rng, 16));
        let g = grad_latent(&net, &z, &t, &s).unwrap();
        let fd = fd_grad(&net, &z, &t, &s, 1e-6);
        let diff: f64 = g.as_flattened().iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff <= 1e-3 * norm, "{diff} vs {norm}");
    }

    #[test]
    fn exact_target_gives_zero_gradient() {
        let e = GaussianEnergy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = sampler(3, 0.2);
        let z = cloud(&mut rng, 6);
        let t = noise_free_run(&e, std::slice::from_ref(&z), &s).unwrap().remove(0);
        assert!(grad_latent(&e, &z, &t, &s).unwrap().as_flattened().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_limit_reconstructs_target() {
        let e = GaussianEnergy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = cloud(&mut rng, 8);
        let recon = ReconConfig { recon_steps: 100, recon_step_size: 0.25, restarts: 2 };
        let r = reconstruct(&e, &t, &sampler(1, 1e-6), &recon, &mut rng).unwrap();
        assert!(r.loss < 1e-10, "{}", r.loss);
        assert!(r.loss <= r.initial_loss);
        for (a, b) in r.latent.flat().iter().zip(t.flat()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn reconstruction_is_reproducible_and_never_worse() {
        let net = mini_net(6);
        let mut data_rng = ChaCha8Rng::seed_from_u64(7);
        let targets: Vec<_> = (0..3).map(|_| cloud(&mut data_rng, 16)).collect();
        let recon = ReconConfig { recon_steps: 10, recon_step_size: 0.1, restarts: 2 };
        let s = sampler(4, 0.3);
        let a = reconstruct_many(&net, &targets, &s, &recon, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = reconstruct_many(&net, &targets, &s, &recon, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert!(r.loss <= r.initial_loss);
        }
    }

    #[test]
    fn refuses_long_unrolls() {
        let e = GaussianEnergy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = cloud(&mut rng, 4);
        let r = reconstruct(&e, &t, &sampler(257, 0.01), &ReconConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn grid_has_even_spacing() {
        let g = interpolation_grid(8).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[7], 1.0);
        for (i, r) in g.iter().enumerate() {
            assert_eq!(*r, i as f64 / 7.0);
        }
        assert_eq!(interpolation_grid(2).unwrap(), vec![0.0, 1.0]);
        assert!(interpolation_grid(1).is_err());
    }

    #[test]
    fn interpolation_endpoints_match_generation() {
        let net = mini_net(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (z1, z2) = (cloud(&mut rng, 16), cloud(&mut rng, 16));
        let s = SamplerConfig { num_steps: 5, step_size: 0.2, ..Default::default() };
        let frames = interpolate(&net, &z1, &z2, 8, &s).unwrap();
        let ns = NoiseStream::new(99);
        let a = short_run_generate(&net, std::slice::from_ref(&z1), &s, &ns, true).unwrap().clouds;
        let b = short_run_generate(&net, std::slice::from_ref(&z2), &s, &ns, true).unwrap().clouds;
        assert_eq!(frames[0], a[0]);
        assert_eq!(frames[7], b[0]);
        let same = interpolate(&net, &z1, &z1, 4, &s).unwrap();
        assert!(same.iter().all(|f| *f == same[0]));
        assert!(interpolate(&net, &z1, &cloud(&mut rng, 15), 3, &s).is_err());
    }
}
