//! Bucket tree (quadtree in 2D, octree in 3D) and Barnes-Hut interaction
//! lists.
//!
//! Nodes live in a preorder arena, so a node's index doubles as the device
//! buffer index of its data and a subtree occupies a contiguous index range.

use std::ops::Range;

use super::particles::{ParticleSet, Vector};

/// Depth cap so coincident particles cannot recurse forever.
const MAX_DEPTH: u32 = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode<const D: usize> {
    /// Lower corner of the node's cubic cell.
    pub lo: Vector<D>,
    /// Side length of the cell.
    pub size: f64,
    pub mass: f64,
    pub com: Vector<D>,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    /// Range into [`BucketTree::order`].
    pub particles: Range<usize>,
    /// One past the last preorder index of the subtree.
    pub end: u32,
}

impl<const D: usize> TreeNode<D> {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Distance from `p` to the closest point of this node's cell.
    pub fn distance_to_cell(&self, p: &Vector<D>) -> f64 {
        (0..D)
            .map(|i| {
                let lo = self.lo[i];
                let hi = lo + self.size;
                let d = if p[i] < lo { lo - p[i] } else if p[i] > hi { p[i] - hi } else { 0.0 };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketTree<const D: usize> {
    pub nodes: Vec<TreeNode<D>>,
    /// Particle indices grouped so every node covers a contiguous range.
    pub order: Vec<usize>,
    /// Leaf node indices in preorder.
    pub buckets: Vec<u32>,
    pub bucket_size: usize,
}

impl<const D: usize> BucketTree<D> {
    pub fn root(&self) -> &TreeNode<D> {
        &self.nodes[0]
    }

    pub fn node(&self, idx: u32) -> &TreeNode<D> {
        &self.nodes[idx as usize]
    }

    /// Particle indices held by node `idx`.
    pub fn particles_of(&self, idx: u32) -> &[usize] {
        &self.order[self.node(idx).particles.clone()]
    }

    /// Whether `a` is a strict ancestor of `b`.
    pub fn is_ancestor(&self, a: u32, b: u32) -> bool {
        a < b && b < self.node(a).end
    }
}

pub fn build_bucket_tree<const D: usize>(ps: &ParticleSet<D>, bucket_size: usize) -> BucketTree<D> {
    let bucket_size = bucket_size.max(1);
    let mut tree = BucketTree { nodes: Vec::new(), order: (0..ps.len()).collect(), buckets: Vec::new(), bucket_size };
    build(&mut tree, ps, [0.0; D], ps.box_size, 0..ps.len(), None, 0);
    tree
}

fn build<const D: usize>(
    tree: &mut BucketTree<D>,
    ps: &ParticleSet<D>,
    lo: Vector<D>,
    size: f64,
    range: Range<usize>,
    parent: Option<u32>,
    depth: u32,
) -> u32 {
    let idx = tree.nodes.len() as u32;
    tree.nodes.push(TreeNode {
        lo,
        size,
        mass: 0.0,
        com: [0.0; D],
        parent,
        children: Vec::new(),
        particles: range.clone(),
        end: idx + 1,
    });
    if range.len() > tree.bucket_size && depth < MAX_DEPTH {
        let half = size / 2.0;
        let child_of = |p: &Vector<D>| (0..D).fold(0usize, |acc, i| acc | (usize::from(p[i] >= lo[i] + half) << i));
        tree.order[range.clone()].sort_by_key(|&i| child_of(&ps.positions[i]));
        let mut start = range.start;
        for c in 0..(1usize << D) {
            let mut end = start;
            while end < range.end && child_of(&ps.positions[tree.order[end]]) == c {
                end += 1;
            }
            if end > start {
                let clo: Vector<D> = std::array::from_fn(|i| if c >> i & 1 == 1 { lo[i] + half } else { lo[i] });
                let child = build(tree, ps, clo, half, start..end, Some(idx), depth + 1);
                tree.nodes[idx as usize].children.push(child);
            }
            start = end;
        }
    } else {
        tree.buckets.push(idx);
    }
    let end = tree.nodes.len() as u32;
    let (mass, com) = if tree.nodes[idx as usize].children.is_empty() {
        moments(range.clone().map(|k| tree.order[k]).map(|i| (ps.masses[i], ps.positions[i])))
    } else {
        let children = tree.nodes[idx as usize].children.clone();
        moments(children.iter().map(|&c| (tree.nodes[c as usize].mass, tree.nodes[c as usize].com)))
    };
    let node = &mut tree.nodes[idx as usize];
    node.end = end;
    node.mass = mass;
    node.com = com;
    idx
}

fn moments<const D: usize>(items: impl Iterator<Item = (f64, Vector<D>)>) -> (f64, Vector<D>) {
    let mut mass = 0.0;
    let mut weighted = [0.0; D];
    for (m, x) in items {
        mass += m;
        for i in 0..D {
            weighted[i] += m * x[i];
        }
    }
    let com = if mass > 0.0 { std::array::from_fn(|i| weighted[i] / mass) } else { weighted };
    (mass, com)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionList {
    pub bucket: u32,
    /// Nodes approximated by their centre of mass.
    pub nodes: Vec<u32>,
    /// Buckets whose particles interact directly, including the bucket itself.
    pub buckets: Vec<u32>,
}

impl InteractionList {
    /// Buffer indices read by the bucket's work request: nodes first, then
    /// buckets.
    pub fn buffers(&self) -> Vec<u32> {
        self.nodes.iter().chain(self.buckets.iter()).copied().collect()
    }
}

/// Interaction list of every bucket, in bucket (preorder) order.
///
/// A node that is not an ancestor of the bucket is accepted when its cell
/// size is below `theta` times the distance from its centre of mass to the
/// bucket's cell. Rejected leaves become direct bucket interactions.
pub fn build_interaction_lists<const D: usize>(tree: &BucketTree<D>, theta: f64) -> Vec<InteractionList> {
    tree.buckets.iter().map(|&b| walk(tree, b, theta)).collect()
}

fn walk<const D: usize>(tree: &BucketTree<D>, bucket: u32, theta: f64) -> InteractionList {
    let target = tree.node(bucket);
    let mut list = InteractionList { bucket, nodes: Vec::new(), buckets: Vec::new() };
    let mut stack = vec![0u32];
    while let Some(n) = stack.pop() {
        let node = tree.node(n);
        if n == bucket {
            list.buckets.push(n);
            continue;
        }
        if !tree.is_ancestor(n, bucket) {
            let d = target.distance_to_cell(&node.com);
            if d > 0.0 && node.size < theta * d {
                list.nodes.push(n);
                continue;
            }
            if node.is_leaf() {
                list.buckets.push(n);
                continue;
            }
        }
        stack.extend(node.children.iter().rev());
    }
    list
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::particles::gen_particles;

    fn set(points: &[[f64; 2]]) -> ParticleSet<2> {
        ParticleSet {
            positions: points.to_vec(),
            masses: vec![1.0; points.len()],
            velocities: vec![[0.0; 2]; points.len()],
            box_size: 1.0,
        }
    }

    fn quadrants() -> ParticleSet<2> {
        set(&[[0.1, 0.1], [0.9, 0.1], [0.1, 0.9], [0.9, 0.9]])
    }

    #[test]
    fn small_set_is_one_bucket() {
        let t = build_bucket_tree(&quadrants(), 4);
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.buckets, vec![0]);
    }

    #[test]
    fn one_particle_per_quadrant() {
        let t = build_bucket_tree(&quadrants(), 1);
        assert_eq!(t.buckets, vec![1, 2, 3, 4]);
        assert_eq!(t.root().mass, 4.0);
        assert_eq!(t.root().com, [0.5, 0.5]);
        for &b in &t.buckets {
            assert_eq!(t.particles_of(b).len(), 1);
        }
    }

    #[test]
    fn every_particle_in_exactly_one_bucket_and_mass_is_conserved() {
        let ps = gen_particles::<2>(1000, 11, 0.7);
        let t = build_bucket_tree(&ps, 8);
        let mut seen = vec![0; ps.len()];
        for &b in &t.buckets {
            assert!(t.particles_of(b).len() <= 8);
            for &i in t.particles_of(b) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!((t.root().mass - ps.total_mass()).abs() < 1e-12);
        for n in &t.nodes {
            if !n.is_leaf() {
                let sum: f64 = n.children.iter().map(|&c| t.node(c).mass).sum();
                assert!((sum - n.mass).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn theta_zero_expands_every_bucket() {
        let ps = gen_particles::<2>(200, 2, 0.3);
        let t = build_bucket_tree(&ps, 4);
        for list in build_interaction_lists(&t, 0.0) {
            assert!(list.nodes.is_empty());
            let mut b = list.buckets.clone();
            b.sort_unstable();
            assert_eq!(b, t.buckets);
        }
    }

    #[test]
    fn huge_theta_keeps_only_siblings_and_neighbours() {
        // two levels: the root splits into four leaf quadrants
        let t = build_bucket_tree(&quadrants(), 1);
        let lists = build_interaction_lists(&t, 1.0e9);
        let first = &lists[0];
        // the root is an ancestor and must open; every other quadrant has its
        // centre of mass off the bucket cell and is accepted whole
        assert_eq!(first.bucket, 1);
        assert_eq!(first.buckets, vec![1]);
        assert_eq!(first.nodes, vec![2, 3, 4]);
    }

    #[test]
    fn neighbouring_buckets_share_far_field_nodes() {
        let ps = gen_particles::<2>(2048, 5, 0.6);
        let t = build_bucket_tree(&ps, 16);
        let lists = build_interaction_lists(&t, 0.7);
        let shared = lists
            .windows(2)
            .filter(|w| w[0].nodes.iter().any(|n| w[1].nodes.contains(n)))
            .count();
        assert!(shared * 2 > lists.len(), "{shared} of {}", lists.len());
    }

    #[test]
    fn no_list_contains_an_ancestor_or_itself_as_a_node() {
        let ps = gen_particles::<3>(600, 8, 0.5);
        let t = build_bucket_tree(&ps, 8);
        for l in build_interaction_lists(&t, 0.6) {
            assert!(l.nodes.iter().all(|&n| n != l.bucket && !t.is_ancestor(n, l.bucket)));
        }
    }
}
