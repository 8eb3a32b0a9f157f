//! Particle sets in `D` dimensions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Vector<const D: usize> = [f64; D];

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<const D: usize> {
    pub positions: Vec<Vector<D>>,
    pub masses: Vec<f64>,
    pub velocities: Vec<Vector<D>>,
    /// Side length of the cubic box `[0, box_size)^D`.
    pub box_size: f64,
}

impl<const D: usize> ParticleSet<D> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn in_box(&self) -> bool {
        self.positions.iter().all(|p| p.iter().all(|&x| (0.0..self.box_size).contains(&x)))
    }
}

/// Unit-box particles with equal masses summing to one. A `clustering`
/// fraction of the particles is drawn from Plummer-like clumps, the rest
/// uniformly.
pub fn gen_particles<const D: usize>(n: usize, seed: u64, clustering: f64) -> ParticleSet<D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clustering = clustering.clamp(0.0, 1.0);
    let clumps: Vec<Vector<D>> = (0..(n / 256).max(1))
        .map(|_| std::array::from_fn(|_| rng.random_range(0.1..0.9)))
        .collect();
    let scale = 0.03;
    let mut positions = Vec::with_capacity(n);
    for _ in 0..n {
        if rng.random::<f64>() < clustering {
            let centre = clumps[rng.random_range(0..clumps.len())];
            positions.push(plummer_point(&mut rng, centre, scale));
        } else {
            positions.push(std::array::from_fn(|_| rng.random_range(0.0..1.0)));
        }
    }
    ParticleSet { positions, masses: vec![1.0 / n.max(1) as f64; n], velocities: vec![[0.0; D]; n], box_size: 1.0 }
}

fn plummer_point<const D: usize>(rng: &mut ChaCha8Rng, centre: Vector<D>, scale: f64) -> Vector<D> {
    loop {
        let u: f64 = rng.random_range(1e-6..1.0);
        let r = scale / (u.powf(-2.0 / 3.0) - 1.0).max(1e-12).sqrt();
        let mut dir: Vector<D> = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 1e-9 && norm <= 1.0) {
            continue;
        }
        for x in dir.iter_mut() {
            *x /= norm;
        }
        let p: Vector<D> = std::array::from_fn(|i| centre[i] + r * dir[i]);
        if p.iter().all(|&x| (0.0..1.0).contains(&x)) {
            return p;
        }
    }
}

/// Variance of per-cell counts on a `cells^D` grid.
pub fn density_variance<const D: usize>(ps: &ParticleSet<D>, cells: usize) -> f64 {
    let total = cells.pow(D as u32);
    let mut counts = vec![0usize; total];
    for p in &ps.positions {
        let mut idx = 0;
        for &x in p {
            let c = ((x / ps.box_size * cells as f64) as usize).min(cells - 1);
            idx = idx * cells + c;
        }
        counts[idx] += 1;
    }
    let mean = ps.len() as f64 / total as f64;
    counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_reproducible_and_in_box() {
        let a = gen_particles::<2>(8, 1, 0.0);
        let b = gen_particles::<2>(8, 1, 0.0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        assert!(a.in_box());
        assert!((a.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clustering_raises_density_variance() {
        let uniform = gen_particles::<2>(4096, 3, 0.0);
        let clumpy = gen_particles::<2>(4096, 3, 0.9);
        assert!(clumpy.in_box());
        assert!(density_variance(&clumpy, 16) > 2.0 * density_variance(&uniform, 16));
    }

    #[test]
    fn single_particle() {
        let p = gen_particles::<3>(1, 5, 0.5);
        assert_eq!(p.len(), 1);
        assert!(p.in_box());
    }
}
