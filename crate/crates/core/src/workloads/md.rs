//! Patch-decomposed 2D molecular dynamics.
//!
//! Space is cut into a grid of patches no narrower than the interaction
//! cutoff, so every interacting pair lives in the same or a neighbouring
//! patch. Each neighbouring patch pair (self pairs included) is one
//! `interact` work request whose item count is the product of the two
//! populations. A constant external field drives particles towards one side
//! of the box, so populations and item counts grow more skewed every step.
//!
//! As a workload, chare 0 integrates and chares `1..=P` own patches. A patch
//! emits the pairs it owns on `step` and reports `patch_done` when they
//! complete; once every patch has reported, the integrator advances the
//! system and starts the next step.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::runtime::{ChareId, Effects, EntryHooks, KernelClass, Message, Time, WorkDraft, CALLBACK_ENTRY};
use crate::sim::{Injection, Workload};

pub const STEP_ENTRY: &str = "step";
pub const PATCH_DONE_ENTRY: &str = "patch_done";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdParams {
    /// Patch grid as (rows, cols).
    pub grid: (usize, usize),
    pub particles_per_patch: usize,
    pub cutoff: f64,
    /// Patch side; must be at least the cutoff.
    pub patch_size: f64,
    pub periodic: bool,
    pub dt: f64,
    pub steps: u32,
    /// Constant acceleration applied to every particle.
    pub field: (f64, f64),
    /// Peak pairwise repulsion at zero distance.
    pub repulsion: f64,
    /// Initial velocities are uniform in ±`initial_speed` per axis.
    pub initial_speed: f64,
    pub bytes_per_buffer: u64,
    /// Delay between consecutive pair requests emitted by one patch.
    pub emit_interval: Time,
}

impl Default for MdParams {
    fn default() -> Self {
        MdParams {
            grid: (8, 8),
            particles_per_patch: 24,
            cutoff: 1.0,
            patch_size: 1.0,
            periodic: false,
            dt: 0.05,
            steps: 20,
            field: (0.0, -2.0),
            repulsion: 4.0,
            initial_speed: 0.5,
            bytes_per_buffer: 256,
            emit_interval: 0.5,
        }
    }
}

impl MdParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err("md.grid dimensions must be at least 1".into());
        }
        if !(self.cutoff > 0.0) {
            return Err(format!("md.cutoff must be positive, got {}", self.cutoff));
        }
        if !(self.patch_size >= self.cutoff) {
            return Err(format!("md.patch_size {} is below the cutoff {}", self.patch_size, self.cutoff));
        }
        if !(self.dt > 0.0) || self.steps == 0 {
            return Err("md.dt must be positive and md.steps at least 1".into());
        }
        if self.bytes_per_buffer == 0 || !(self.emit_interval >= 0.0) {
            return Err("md.bytes_per_buffer must be positive and md.emit_interval non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub patch_size: f64,
    pub cutoff: f64,
    pub periodic: bool,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// Particle indices per patch, patches in row-major order.
    pub members: Vec<Vec<usize>>,
}

/// One patch pair's force computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairWork {
    pub a: usize,
    pub b: usize,
    pub items: u64,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.cols as f64 * self.patch_size, self.rows as f64 * self.patch_size]
    }

    pub fn patch_of(&self, p: &[f64; 2]) -> usize {
        let col = ((p[0] / self.patch_size) as usize).min(self.cols - 1);
        let row = ((p[1] / self.patch_size) as usize).min(self.rows - 1);
        row * self.cols + col
    }

    pub fn populations(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn particle_count(&self) -> usize {
        self.positions.len()
    }

    fn reassign(&mut self) {
        let mut members = vec![Vec::new(); self.patch_count()];
        for (i, p) in self.positions.iter().enumerate() {
            members[self.patch_of(p)].push(i);
        }
        self.members = members;
    }

    /// Every unordered pair of patches within one cell of each other,
    /// self pairs included, as `(a, b)` with `a ≤ b`, in ascending order.
    pub fn neighbour_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = BTreeSet::new();
        let (rows, cols) = (self.rows as isize, self.cols as isize);
        for r in 0..rows {
            for c in 0..cols {
                let a = (r * cols + c) as usize;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (mut nr, mut nc) = (r + dr, c + dc);
                        if self.periodic {
                            nr = nr.rem_euclid(rows);
                            nc = nc.rem_euclid(cols);
                        } else if nr < 0 || nr >= rows || nc < 0 || nc >= cols {
                            continue;
                        }
                        let b = (nr * cols + nc) as usize;
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        pairs.into_iter().collect()
    }

    /// Pair work for the current populations, skipping empty products.
    pub fn pair_work(&self) -> Vec<PairWork> {
        let pop = self.populations();
        self.neighbour_pairs()
            .into_iter()
            .map(|(a, b)| PairWork { a, b, items: (pop[a] * pop[b]) as u64 })
            .filter(|p| p.items > 0)
            .collect()
    }

    fn displacement(&self, from: &[f64; 2], to: &[f64; 2]) -> [f64; 2] {
        let ext = self.extent();
        std::array::from_fn(|k| {
            let mut d = to[k] - from[k];
            if self.periodic {
                d -= ext[k] * (d / ext[k]).round();
            }
            d
        })
    }
}

/// Uniformly populated grid with `patch_size = cutoff` and reflective walls.
pub fn gen_md_system(grid: (usize, usize), particles_per_patch: usize, cutoff: f64, seed: u64) -> (PatchGrid, Vec<PairWork>) {
    let params = MdParams { grid, particles_per_patch, cutoff, patch_size: cutoff, ..MdParams::default() };
    let g = build_grid(&params, seed);
    let pairs = g.pair_work();
    (g, pairs)
}

pub fn build_grid(params: &MdParams, seed: u64) -> PatchGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = params.grid;
    let s = params.patch_size;
    let mut positions = Vec::with_capacity(rows * cols * params.particles_per_patch);
    let mut velocities = Vec::with_capacity(positions.capacity());
    for r in 0..rows {
        for c in 0..cols {
            for _ in 0..params.particles_per_patch {
                positions.push([(c as f64 + rng.random_range(0.0..1.0)) * s, (r as f64 + rng.random_range(0.0..1.0)) * s]);
                let v = params.initial_speed;
                velocities.push(if v > 0.0 { [rng.random_range(-v..=v), rng.random_range(-v..=v)] } else { [0.0, 0.0] });
            }
        }
    }
    let mut g = PatchGrid {
        rows,
        cols,
        patch_size: s,
        cutoff: params.cutoff,
        periodic: params.periodic,
        positions,
        velocities,
        members: Vec::new(),
    };
    g.reassign();
    g
}

/// One explicit Euler step: soft pairwise repulsion within the cutoff plus
/// the constant field, then wall handling and patch reassignment. Returns
/// the next step's pair work.
pub fn md_step(grid: &mut PatchGrid, dt: f64, field: (f64, f64), repulsion: f64) -> Vec<PairWork> {
    let n = grid.particle_count();
    let mut acc = vec![[field.0, field.1]; n];
    let rc = grid.cutoff;
    for (a, b) in grid.neighbour_pairs() {
        for (ia, &i) in grid.members[a].iter().enumerate() {
            let others: &[usize] = if a == b { &grid.members[a][ia + 1..] } else { &grid.members[b] };
            for &j in others {
                let d = grid.displacement(&grid.positions[i], &grid.positions[j]);
                let r = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if r > 0.0 && r < rc {
                    let f = repulsion * (1.0 - r / rc) / r;
                    for k in 0..2 {
                        acc[i][k] -= f * d[k];
                        acc[j][k] += f * d[k];
                    }
                }
            }
        }
    }
    let ext = grid.extent();
    for i in 0..n {
        for k in 0..2 {
            grid.velocities[i][k] += acc[i][k] * dt;
            let mut x = grid.positions[i][k] + grid.velocities[i][k] * dt;
            if grid.periodic {
                x = x.rem_euclid(ext[k]);
                if x >= ext[k] {
                    x = 0.0;
                }
            } else {
                // reflect until inside; a step can cross at most a few widths
                let mut flips = 0;
                while !(0.0..ext[k]).contains(&x) && flips < 8 {
                    x = if x < 0.0 { -x } else { 2.0 * ext[k] - x };
                    grid.velocities[i][k] = -grid.velocities[i][k];
                    flips += 1;
                }
                x = x.clamp(0.0, ext[k].next_down());
            }
            grid.positions[i][k] = x;
        }
    }
    grid.reassign();
    grid.pair_work()
}

#[derive(Debug, Clone)]
pub struct MdWorkload {
    params: MdParams,
    grid: PatchGrid,
    pairs: Vec<PairWork>,
    step: u32,
    kernel: KernelClass,
    /// Item counts of every step's pairs, for inspection.
    history: Vec<Vec<u64>>,
}

impl MdWorkload {
    pub fn new(params: MdParams, seed: u64) -> Result<Self, String> {
        params.validate()?;
        let grid = build_grid(&params, seed);
        let pairs = grid.pair_work();
        let history = vec![pairs.iter().map(|p| p.items).collect()];
        Ok(MdWorkload { params, grid, pairs, step: 0, kernel: KernelClass::new("interact"), history })
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn history(&self) -> &[Vec<u64>] {
        &self.history
    }

    fn patches(&self) -> u32 {
        self.grid.patch_count() as u32
    }

    fn buffer(&self, patch: usize) -> u32 {
        self.step * self.patches() + patch as u32
    }

    fn emit(&self, patch: usize, now: Time) -> Effects {
        let work: Vec<WorkDraft> = self
            .pairs
            .iter()
            .filter(|p| p.a == patch)
            .enumerate()
            .map(|(k, p)| {
                let buffers = if p.a == p.b { vec![self.buffer(p.a)] } else { vec![self.buffer(p.a), self.buffer(p.b)] };
                WorkDraft {
                    kernel: self.kernel.clone(),
                    buffers,
                    items: p.items,
                    bytes_per_item: self.params.bytes_per_buffer,
                    delay: (k + 1) as f64 * self.params.emit_interval,
                }
            })
            .collect();
        if work.is_empty() {
            return self.done(now);
        }
        Effects { work, messages: vec![] }
    }

    fn done(&self, now: Time) -> Effects {
        Effects { work: vec![], messages: vec![Message::new(ChareId(0), PATCH_DONE_ENTRY, self.patches(), now)] }
    }

    fn advance(&mut self, now: Time) -> Effects {
        self.pairs = md_step(&mut self.grid, self.params.dt, self.params.field, self.params.repulsion);
        self.step += 1;
        self.history.push(self.pairs.iter().map(|p| p.items).collect());
        if self.step >= self.params.steps {
            return Effects::default();
        }
        let messages = (1..=self.patches()).map(|c| Message::new(ChareId(c), STEP_ENTRY, 1, now)).collect();
        Effects { work: vec![], messages }
    }
}

impl EntryHooks for MdWorkload {
    fn invoke(&mut self, chare: ChareId, entry: &'static str, now: Time) -> Effects {
        match (chare.0, entry) {
            (0, PATCH_DONE_ENTRY) => self.advance(now),
            (c, STEP_ENTRY) if c > 0 => self.emit(c as usize - 1, now),
            (c, CALLBACK_ENTRY) if c > 0 => self.done(now),
            _ => Effects::default(),
        }
    }
}

impl Workload for MdWorkload {
    fn chare_count(&self) -> u32 {
        self.patches() + 1
    }

    fn start(&mut self) -> Injection {
        let messages = (1..=self.patches()).map(|c| Message::new(ChareId(c), STEP_ENTRY, 1, 0.0)).collect();
        Injection { messages, work: vec![] }
    }
}
