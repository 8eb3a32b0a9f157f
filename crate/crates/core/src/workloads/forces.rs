//! Softened Newtonian gravity: the direct O(n²) oracle and the Barnes-Hut
//! evaluation over interaction lists.

use thiserror::Error;

use super::particles::{gen_particles, ParticleSet, Vector};
use super::tree::{build_bucket_tree, build_interaction_lists, BucketTree, InteractionList};

/// Softening length in box units.
pub const DEFAULT_SOFTENING: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ForceError {
    #[error("particles {0} and {1} coincide and softening is zero")]
    Singular(usize, usize),
}

/// Force on a unit of mass at `xi` from mass `mj` at `xj`.
#[inline]
fn pull<const D: usize>(xi: &Vector<D>, xj: &Vector<D>, mj: f64, eps2: f64) -> Vector<D> {
    let d: Vector<D> = std::array::from_fn(|k| xj[k] - xi[k]);
    let r2 = d.iter().map(|x| x * x).sum::<f64>() + eps2;
    let inv = mj / (r2 * r2.sqrt());
    std::array::from_fn(|k| d[k] * inv)
}

pub fn direct_force_oracle<const D: usize>(ps: &ParticleSet<D>, g: f64, eps: f64) -> Result<Vec<Vector<D>>, ForceError> {
    let n = ps.len();
    let eps2 = eps * eps;
    if eps2 == 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                if ps.positions[i] == ps.positions[j] {
                    return Err(ForceError::Singular(i, j));
                }
            }
        }
    }
    let mut out = vec![[0.0; D]; n];
    for i in 0..n {
        let mut acc = [0.0; D];
        for j in 0..n {
            if i != j {
                let f = pull(&ps.positions[i], &ps.positions[j], ps.masses[j], eps2);
                for k in 0..D {
                    acc[k] += f[k];
                }
            }
        }
        out[i] = std::array::from_fn(|k| g * ps.masses[i] * acc[k]);
    }
    Ok(out)
}

/// Forces from the interaction lists: node entries act through their centre
/// of mass, bucket entries particle by particle.
pub fn tree_forces<const D: usize>(
    ps: &ParticleSet<D>,
    tree: &BucketTree<D>,
    lists: &[InteractionList],
    g: f64,
    eps: f64,
) -> Vec<Vector<D>> {
    let eps2 = eps * eps;
    let mut out = vec![[0.0; D]; ps.len()];
    for list in lists {
        for &i in tree.particles_of(list.bucket) {
            let xi = &ps.positions[i];
            let mut acc = [0.0; D];
            for &n in &list.nodes {
                let node = tree.node(n);
                let f = pull(xi, &node.com, node.mass, eps2);
                for k in 0..D {
                    acc[k] += f[k];
                }
            }
            for &b in &list.buckets {
                for &j in tree.particles_of(b) {
                    if j != i {
                        let f = pull(xi, &ps.positions[j], ps.masses[j], eps2);
                        for k in 0..D {
                            acc[k] += f[k];
                        }
                    }
                }
            }
            out[i] = std::array::from_fn(|k| g * ps.masses[i] * acc[k]);
        }
    }
    out
}

fn norm<const D: usize>(v: &Vector<D>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-particle |approx − exact| / |exact|.
pub fn relative_errors<const D: usize>(approx: &[Vector<D>], exact: &[Vector<D>]) -> Vec<f64> {
    approx
        .iter()
        .zip(exact)
        .map(|(a, e)| {
            let diff: Vector<D> = std::array::from_fn(|k| a[k] - e[k]);
            let scale = norm(e);
            if scale > 0.0 {
                norm(&diff) / scale
            } else {
                norm(&diff)
            }
        })
        .collect()
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Tree-versus-direct relative force errors for a generated particle set.
pub fn force_errors(
    particles: usize,
    dims: usize,
    clustering: f64,
    bucket_size: usize,
    theta: f64,
    eps: f64,
    seed: u64,
) -> Result<Vec<f64>, ForceError> {
    fn run<const D: usize>(n: usize, c: f64, b: usize, theta: f64, eps: f64, seed: u64) -> Result<Vec<f64>, ForceError> {
        let ps = gen_particles::<D>(n, seed, c);
        let tree = build_bucket_tree(&ps, b);
        let lists = build_interaction_lists(&tree, theta);
        let exact = direct_force_oracle(&ps, 1.0, eps)?;
        Ok(relative_errors(&tree_forces(&ps, &tree, &lists, 1.0, eps), &exact))
    }
    match dims {
        3 => run::<3>(particles, clustering, bucket_size, theta, eps, seed),
        _ => run::<2>(particles, clustering, bucket_size, theta, eps, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::particles::gen_particles;
    use crate::workloads::tree::{build_bucket_tree, build_interaction_lists};

    fn set(points: &[[f64; 2]]) -> ParticleSet<2> {
        ParticleSet {
            positions: points.to_vec(),
            masses: vec![1.0; points.len()],
            velocities: vec![[0.0; 2]; points.len()],
            box_size: 2.0,
        }
    }

    #[test]
    fn two_unit_masses_at_unit_distance() {
        let f = direct_force_oracle(&set(&[[0.0, 0.0], [1.0, 0.0]]), 1.0, 0.0).unwrap();
        assert_eq!(f, vec![[1.0, 0.0], [-1.0, 0.0]]);
    }

    #[test]
    fn equilateral_triangle_has_equal_magnitudes() {
        let h = 3f64.sqrt() / 2.0;
        let f = direct_force_oracle(&set(&[[0.0, 0.0], [1.0, 0.0], [0.5, h]]), 1.0, 0.0).unwrap();
        let m: Vec<f64> = f.iter().map(norm).collect();
        assert!((m[0] - m[1]).abs() < 1e-12 && (m[1] - m[2]).abs() < 1e-12);
    }

    #[test]
    fn momentum_is_conserved() {
        let ps = gen_particles::<3>(300, 4, 0.5);
        let f = direct_force_oracle(&ps, 1.0, 1e-4).unwrap();
        let total: f64 = f.iter().map(norm).sum();
        let net: [f64; 3] = std::array::from_fn(|k| f.iter().map(|v| v[k]).sum());
        assert!(norm(&net) / total < 1e-9);
    }

    #[test]
    fn coincident_particles_without_softening_are_singular() {
        let ps = set(&[[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(direct_force_oracle(&ps, 1.0, 0.0), Err(ForceError::Singular(0, 1)));
        assert!(direct_force_oracle(&ps, 1.0, 1e-4).is_ok());
    }

    #[test]
    fn opening_angle_trades_accuracy() {
        let ps = gen_particles::<2>(400, 6, 0.5);
        let exact = direct_force_oracle(&ps, 1.0, 1e-4).unwrap();
        let tree = build_bucket_tree(&ps, 8);
        let err = |theta: f64| {
            let lists = build_interaction_lists(&tree, theta);
            median(&relative_errors(&tree_forces(&ps, &tree, &lists, 1.0, 1e-4), &exact))
        };
        assert!(err(0.0) < 1e-12);
        assert!(err(0.3) < err(1.0));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
