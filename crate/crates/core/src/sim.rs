//! Ground-truth n-body and string simulations.
//!
//! Forces are reported per unit receiver mass, i.e. as the sender's
//! contribution to the receiver's acceleration. With `Δ = x_s − x_r` and
//! `r = |Δ|`, a `1/r^n` law contributes `m_s Δ / r^(n+1)` and the string's
//! spring contributes `k r Δ` (magnitude `k r²`, zero rest length).

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{fmt17, mix_seed, Error, Result, FORMAT_VERSION};

/// Number of times an initial condition is redrawn before giving up.
pub const MAX_DRAW_ATTEMPTS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceLaw {
    /// Gravity-like `1/r` magnitude.
    InverseR,
    /// Newtonian `1/r²` magnitude.
    InverseR2,
    /// Zero rest-length `k r²` springs between adjacent string nodes.
    SpringR2,
}

impl ForceLaw {
    pub fn is_nbody(self) -> bool {
        !matches!(self, ForceLaw::SpringR2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub law: ForceLaw,
    pub dim: usize,
    pub n_bodies: usize,
    #[serde(serialize_with = "fmt17::serialize")]
    pub dt: f64,
    /// Uniform gravitational acceleration; only used by the string.
    #[serde(serialize_with = "fmt17::serialize_vec")]
    pub gravity: Vec<f64>,
    #[serde(serialize_with = "fmt17::serialize")]
    pub spring_k: f64,
    #[serde(serialize_with = "fmt17::serialize")]
    pub softening_min_r: f64,
}

impl EnvConfig {
    /// An n-body environment with the default time step and softening radius.
    pub fn nbody(law: ForceLaw, dim: usize, n_bodies: usize) -> Self {
        Self {
            law,
            dim,
            n_bodies,
            dt: 0.01,
            gravity: vec![0.0; dim],
            spring_k: 1.0,
            softening_min_r: 0.05,
        }
    }

    /// A hanging 2D string with pinned endpoints.
    pub fn string(n_nodes: usize) -> Self {
        Self {
            law: ForceLaw::SpringR2,
            dim: 2,
            n_bodies: n_nodes,
            dt: 0.005,
            gravity: vec![0.0, -1.0],
            spring_k: 1.0,
            softening_min_r: 0.05,
        }
    }

    pub fn with_bodies(&self, n_bodies: usize) -> Self {
        Self {
            n_bodies,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.dim == 2 || self.dim == 3) {
            return fail(format!("dimension must be 2 or 3, got {}", self.dim));
        }
        if self.n_bodies == 0 {
            return fail("need at least one body".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.softening_min_r > 0.0 && self.softening_min_r.is_finite()) {
            return fail(format!(
                "softening_min_r must be positive, got {}",
                self.softening_min_r
            ));
        }
        if self.gravity.len() != self.dim {
            return fail(format!(
                "gravity has {} components for dimension {}",
                self.gravity.len(),
                self.dim
            ));
        }
        if self.law == ForceLaw::SpringR2 {
            if self.dim != 2 {
                return fail("the string environment is two-dimensional".into());
            }
            if self.n_bodies < 2 {
                return fail("a string needs at least its two fixed endpoints".into());
            }
        }
        Ok(())
    }
}

/// One snapshot of a system. Positions and velocities are row-major `n × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub dim: usize,
    pub masses: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub fixed: Vec<bool>,
}

impl SystemState {
    pub fn n_bodies(&self) -> usize {
        self.masses.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn body(&self, i: usize) -> BodyRef<'_> {
        BodyRef {
            index: i,
            mass: self.masses[i],
            position: self.position(i),
        }
    }

    pub fn validate(&self, env: &EnvConfig) -> Result<()> {
        let n = self.n_bodies();
        if self.dim != env.dim {
            return Err(Error::Dimension(format!(
                "state has dimension {}, environment {}",
                self.dim, env.dim
            )));
        }
        if self.positions.len() != n * self.dim
            || self.velocities.len() != n * self.dim
            || self.fixed.len() != n
        {
            return Err(Error::Shape(format!(
                "state arrays disagree on body count {n}"
            )));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m > 0.0)) {
            return Err(Error::Config(format!("mass must be positive, got {m}")));
        }
        if env.law == ForceLaw::SpringR2 {
            let pinned = self
                .fixed
                .iter()
                .enumerate()
                .all(|(i, &f)| f == (i == 0 || i == n - 1));
            if !pinned {
                return Err(Error::Config(
                    "exactly the first and last string nodes must be fixed".into(),
                ));
            }
        } else if self.fixed.iter().any(|&f| f) {
            return Err(Error::Config("n-body systems have no fixed bodies".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BodyRef<'a> {
    pub index: usize,
    pub mass: f64,
    pub position: &'a [f64],
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        .sqrt()
}

/// Adds the sender's per-unit-receiver-mass force on the receiver into `out`.
fn accumulate_force(
    env: &EnvConfig,
    receiver: BodyRef<'_>,
    sender: BodyRef<'_>,
    out: &mut [f64],
) -> Result<()> {
    if env.law == ForceLaw::SpringR2 && receiver.index.abs_diff(sender.index) != 1 {
        return Err(Error::Topology(receiver.index, sender.index));
    }
    let r = distance(receiver.position, sender.position);
    if !(r >= env.softening_min_r) {
        return Err(Error::Singularity {
            receiver: receiver.index,
            sender: sender.index,
            distance: r,
            min_r: env.softening_min_r,
        });
    }
    let scale = match env.law {
        ForceLaw::InverseR => sender.mass / (r * r),
        ForceLaw::InverseR2 => sender.mass / (r * r * r),
        ForceLaw::SpringR2 => env.spring_k * r,
    };
    for ((o, xr), xs) in out.iter_mut().zip(receiver.position).zip(sender.position) {
        *o += scale * (xs - xr);
    }
    Ok(())
}

/// Force per unit receiver mass exerted by `sender` on `receiver`.
pub fn pairwise_force(
    env: &EnvConfig,
    receiver: BodyRef<'_>,
    sender: BodyRef<'_>,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; env.dim];
    accumulate_force(env, receiver, sender, &mut out)?;
    Ok(out)
}

/// The interacting (receiver, sender) pairs of an environment, in a fixed
/// order: receiver-major, then sender.
pub fn interaction_pairs(law: ForceLaw, n: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for r in 0..n {
        if law.is_nbody() {
            pairs.extend((0..n).filter(|&s| s != r).map(|s| (r, s)));
        } else {
            if r > 0 {
                pairs.push((r, r - 1));
            }
            if r + 1 < n {
                pairs.push((r, r + 1));
            }
        }
    }
    pairs
}

/// Per-body accelerations (row-major `n × dim`), including gravity for the
/// string. Rows of fixed nodes are computed like any other.
pub fn net_acceleration(env: &EnvConfig, state: &SystemState) -> Result<Vec<f64>> {
    let d = env.dim;
    let n = state.n_bodies();
    let mut acc = vec![0.0; n * d];
    for (r, s) in interaction_pairs(env.law, n) {
        accumulate_force(env, state.body(r), state.body(s), &mut acc[r * d..(r + 1) * d])?;
    }
    if env.law == ForceLaw::SpringR2 {
        for row in acc.chunks_mut(d) {
            for (a, g) in row.iter_mut().zip(&env.gravity) {
                *a += g;
            }
        }
    }
    Ok(acc)
}

/// One semi-implicit Euler step, returning the new state and the applied
/// velocity update (zero for fixed nodes).
pub fn step_with_update(env: &EnvConfig, state: &SystemState) -> Result<(SystemState, Vec<f64>)> {
    let d = env.dim;
    let acc = net_acceleration(env, state)?;
    let mut next = state.clone();
    let mut dv = vec![0.0; acc.len()];
    for i in 0..state.n_bodies() {
        if state.fixed[i] {
            next.velocities[i * d..(i + 1) * d].fill(0.0);
            continue;
        }
        for c in i * d..(i + 1) * d {
            dv[c] = acc[c] * env.dt;
            next.velocities[c] = state.velocities[c] + dv[c];
            next.positions[c] = state.positions[c] + next.velocities[c] * env.dt;
        }
    }
    Ok((next, dv))
}

pub fn step(env: &EnvConfig, state: &SystemState) -> Result<SystemState> {
    step_with_update(env, state).map(|(next, _)| next)
}

/// One supervised example: a snapshot and the velocity update the simulator
/// applied to it.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub sim: usize,
    pub step: usize,
    pub state: SystemState,
    pub dv: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub env: EnvConfig,
    pub seed: u64,
    pub n_sims: usize,
    pub n_steps: usize,
    pub records: Vec<Record>,
}

impl TrajectoryDataset {
    /// Records whose simulation index lies in `sims`, with the same metadata.
    pub fn subset_sims(&self, sims: std::ops::Range<usize>) -> TrajectoryDataset {
        TrajectoryDataset {
            records: self
                .records
                .iter()
                .filter(|r| sims.contains(&r.sim))
                .cloned()
                .collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> TrajectoryDataset {
        TrajectoryDataset {
            env: self.env.clone(),
            seed: self.seed,
            n_sims: self.n_sims,
            n_steps: self.n_steps,
            records: Vec::new(),
        }
    }

    /// Mean absolute velocity update, i.e. the L1 loss of a model that always
    /// predicts zero.
    pub fn mean_abs_dv(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for rec in &self.records {
            sum += rec.dv.iter().map(|x| x.abs()).sum::<f64>();
            count += rec.dv.len();
        }
        if count == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(sum / count as f64)
    }
}

fn min_pair_distance(env: &EnvConfig, state: &SystemState) -> f64 {
    interaction_pairs(env.law, state.n_bodies())
        .into_iter()
        .filter(|(r, s)| r < s)
        .map(|(r, s)| distance(state.position(r), state.position(s)))
        .fold(f64::INFINITY, f64::min)
}

/// Draws a random initial condition for `env`.
pub fn random_state(env: &EnvConfig, rng: &mut impl Rng) -> SystemState {
    let n = env.n_bodies;
    let d = env.dim;
    let (lo, hi) = (0.5f64.ln(), 2.0f64.ln());
    let masses: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi).exp()).collect();
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    match env.law {
        ForceLaw::SpringR2 => {
            let fixed: Vec<bool> = (0..n).map(|i| i == 0 || i == n - 1).collect();
            let mut positions = vec![0.0; n * d];
            let mut velocities = vec![0.0; n * d];
            for i in 0..n {
                positions[i * d] = 0.2 * i as f64;
                if !fixed[i] {
                    positions[i * d + 1] = rng.random_range(-0.05..0.05);
                    for c in 0..d {
                        velocities[i * d + c] = normal.sample(rng);
                    }
                }
            }
            SystemState {
                dim: d,
                masses,
                positions,
                velocities,
                fixed,
            }
        }
        _ => SystemState {
            dim: d,
            masses,
            positions: (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            velocities: (0..n * d).map(|_| normal.sample(rng)).collect(),
            fixed: vec![false; n],
        },
    }
}

fn sim_seed(seed: u64, sim: usize, attempt: u64) -> u64 {
    mix_seed(seed ^ mix_seed(((sim as u64) << 20) ^ attempt))
}

/// Runs one simulation, truncating at the first snapshot that violates the
/// softening radius.
fn simulate_one(env: &EnvConfig, sim: usize, n_steps: usize, seed: u64) -> Result<Vec<Record>> {
    for attempt in 0..MAX_DRAW_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(sim_seed(seed, sim, attempt));
        let mut state = random_state(env, &mut rng);
        let mut records = Vec::with_capacity(n_steps);
        for t in 0..n_steps {
            if min_pair_distance(env, &state) < env.softening_min_r {
                break;
            }
            let Ok((next, dv)) = step_with_update(env, &state) else {
                break;
            };
            records.push(Record {
                sim,
                step: t,
                state,
                dv,
            });
            state = next;
        }
        if !records.is_empty() {
            return Ok(records);
        }
    }
    Err(Error::Config(format!(
        "simulation {sim}: no admissible initial condition in {MAX_DRAW_ATTEMPTS} draws"
    )))
}

/// Generates `n_sims` simulations of `n_steps` steps each. The result is a
/// pure function of the arguments; records are ordered by (simulation, step).
pub fn generate_dataset(
    env: &EnvConfig,
    n_sims: usize,
    n_steps: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    env.validate()?;
    if n_sims == 0 || n_steps == 0 {
        return Err(Error::Config("n_sims and n_steps must be at least 1".into()));
    }
    let mut records = Vec::new();
    for sim in 0..n_sims {
        records.extend(simulate_one(env, sim, n_steps, seed)?);
    }
    Ok(TrajectoryDataset {
        env: env.clone(),
        seed,
        n_sims,
        n_steps,
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    env: EnvConfig,
    seed: u64,
    n_sims: usize,
    n_steps: usize,
    n_records: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    sim: usize,
    step: usize,
    #[serde(serialize_with = "fmt17::serialize_vec")]
    masses: Vec<f64>,
    #[serde(serialize_with = "fmt17::serialize_vec")]
    positions: Vec<f64>,
    #[serde(serialize_with = "fmt17::serialize_vec")]
    velocities: Vec<f64>,
    #[serde(serialize_with = "fmt17::serialize_vec")]
    dv: Vec<f64>,
    fixed: Vec<bool>,
}

/// Writes the dataset as JSON lines: a metadata header, then one record per
/// line.
pub fn write_dataset<W: Write>(dataset: &TrajectoryDataset, mut out: W) -> Result<()> {
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        env: dataset.env.clone(),
        seed: dataset.seed,
        n_sims: dataset.n_sims,
        n_steps: dataset.n_steps,
        n_records: dataset.records.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in &dataset.records {
        let line = RecordLine {
            sim: rec.sim,
            step: rec.step,
            masses: rec.state.masses.clone(),
            positions: rec.state.positions.clone(),
            velocities: rec.state.velocities.clone(),
            dv: rec.dv.clone(),
            fixed: rec.state.fixed.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<TrajectoryDataset> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format("dataset file is empty".into()))??;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            header.format_version
        )));
    }
    header.env.validate()?;
    let d = header.env.dim;
    let mut records = Vec::with_capacity(header.n_records);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line)?;
        let state = SystemState {
            dim: d,
            masses: rec.masses,
            positions: rec.positions,
            velocities: rec.velocities,
            fixed: rec.fixed,
        };
        state
            .validate(&header.env)
            .map_err(|e| Error::Format(format!("record {i}: {e}")))?;
        if rec.dv.len() != state.positions.len() {
            return Err(Error::Format(format!("record {i}: dv has wrong length")));
        }
        records.push(Record {
            sim: rec.sim,
            step: rec.step,
            state,
            dv: rec.dv,
        });
    }
    if records.len() != header.n_records {
        return Err(Error::Format(format!(
            "header announces {} records, found {}",
            header.n_records,
            records.len()
        )));
    }
    Ok(TrajectoryDataset {
        env: header.env,
        seed: header.seed,
        n_sims: header.n_sims,
        n_steps: header.n_steps,
        records,
    })
}
