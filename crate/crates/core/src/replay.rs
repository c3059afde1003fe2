//! Growing-batch replay: an append-only store aggregating every cycle's data,
//! uniform n-step sampling, samples-per-insert pacing, and a binary snapshot format.
//!
//! # File format
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! magic     8 bytes  "GBREPLAY"
//! version   u32      = 1
//! obs_dim   u32
//! act_dim   u32
//! capacity  u64
//! count     u64
//! body      count records of packed f64:
//!           obs[obs_dim] action[act_dim] reward next_obs[obs_dim]
//!           terminal(0|1) episode_id step_index cycle
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{dim_mismatch, Error, Result};
use crate::numeric::Matrix;
use crate::targets::{nstep_fold, NStepSegment};

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Absorbing termination. Time-limit episode ends are *not* terminal.
    pub terminal: bool,
    pub episode_id: u64,
    pub step_index: u64,
    pub cycle: u32,
}

/// Append-only transition store spanning every cycle collected so far.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    transitions: Vec<Transition>,
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    /// `(cycle, index of its first transition)`, sorted by index.
    boundaries: Vec<(u32, usize)>,
}

pub const DEFAULT_CAPACITY: usize = 10_000_000;

impl ReplayStore {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self {
            transitions: Vec::new(),
            capacity,
            obs_dim,
            act_dim,
            boundaries: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.transitions.get(i)
    }

    /// Start index of each cycle's data, in insertion order.
    pub fn cycle_boundaries(&self) -> &[(u32, usize)] {
        &self.boundaries
    }

    /// Number of distinct episodes currently stored.
    pub fn episode_count(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for t in &self.transitions {
            if last != Some(t.episode_id) {
                n += 1;
                last = Some(t.episode_id);
            }
        }
        n
    }

    fn validate(&self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(dim_mismatch("transition observation", self.obs_dim, t.obs.len()));
        }
        if t.action.len() != self.act_dim {
            return Err(dim_mismatch("transition action", self.act_dim, t.action.len()));
        }
        let finite = t.reward.is_finite()
            && t.obs.iter().chain(&t.action).chain(&t.next_obs).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvariantViolation("transition holds a non-finite value".into()));
        }
        match self.transitions.last() {
            Some(last) if last.episode_id == t.episode_id => {
                if last.terminal {
                    return Err(Error::InvariantViolation(format!(
                        "episode {} continues after a terminal step",
                        t.episode_id
                    )));
                }
                if t.step_index != last.step_index + 1 {
                    return Err(Error::InvariantViolation(format!(
                        "episode {} step {} follows step {}",
                        t.episode_id, t.step_index, last.step_index
                    )));
                }
            }
            Some(last) if t.episode_id < last.episode_id => {
                return Err(Error::InvariantViolation(format!(
                    "episode {} appended after episode {}",
                    t.episode_id, last.episode_id
                )));
            }
            _ if t.step_index != 0 => {
                return Err(Error::InvariantViolation(format!(
                    "episode {} starts at step {}",
                    t.episode_id, t.step_index
                )));
            }
            _ => {}
        }
        if let Some(&(cycle, _)) = self.boundaries.last() {
            if t.cycle < cycle {
                return Err(Error::InvariantViolation(format!(
                    "cycle {} appended after cycle {cycle}",
                    t.cycle
                )));
            }
        }
        Ok(())
    }

    /// Appends one transition. When full, the oldest whole episode is evicted first.
    pub fn append(&mut self, t: Transition) -> Result<()> {
        self.validate(&t)?;
        if self.transitions.len() >= self.capacity {
            self.evict_oldest_episode();
        }
        if self.boundaries.last().map(|b| b.0) != Some(t.cycle) {
            self.boundaries.push((t.cycle, self.transitions.len()));
        }
        self.transitions.push(t);
        Ok(())
    }

    fn evict_oldest_episode(&mut self) {
        let Some(first) = self.transitions.first() else {
            return;
        };
        let id = first.episode_id;
        let n = self.transitions.iter().take_while(|t| t.episode_id == id).count();
        log::warn!("replay full at {} transitions; evicting episode {id} ({n} steps)", self.capacity);
        self.transitions.drain(..n);
        for b in &mut self.boundaries {
            b.1 = b.1.saturating_sub(n);
        }
        // Cycles whose data is entirely gone collapse onto the next boundary.
        let mut kept: Vec<(u32, usize)> = Vec::with_capacity(self.boundaries.len());
        for &b in &self.boundaries {
            match kept.last_mut() {
                Some(last) if last.1 == b.1 => *last = b,
                _ => kept.push(b),
            }
        }
        kept.retain(|b| b.1 < self.transitions.len() || self.transitions.is_empty());
        self.boundaries = kept;
    }

    /// The n-step segment starting at `index`, truncated at the end of its episode.
    pub fn segment_at(&self, index: usize, n: usize, gamma: f64) -> Result<NStepSegment> {
        if index >= self.transitions.len() {
            return Err(Error::Caller(format!("segment start {index} out of range")));
        }
        let id = self.transitions[index].episode_id;
        let end = self.transitions[index..]
            .iter()
            .take(n)
            .take_while(|t| t.episode_id == id)
            .count();
        nstep_fold(&self.transitions[index..index + end], gamma, n)
    }

    /// Draws `batch_size` start indices uniformly with replacement over the whole
    /// store and folds each into an n-step segment.
    pub fn sample_nstep_batch<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch_size: usize,
        n: usize,
        gamma: f64,
    ) -> Result<Vec<NStepSegment>> {
        Ok(self
            .sample_with_indices(rng, batch_size, n, gamma)?
            .into_iter()
            .map(|(_, s)| s)
            .collect())
    }

    /// Like [`sample_nstep_batch`](Self::sample_nstep_batch), also returning the
    /// start index of each segment.
    pub fn sample_with_indices<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch_size: usize,
        n: usize,
        gamma: f64,
    ) -> Result<Vec<(usize, NStepSegment)>> {
        if self.transitions.is_empty() {
            return Err(Error::Caller("cannot sample from an empty replay".into()));
        }
        (0..batch_size)
            .map(|_| {
                let i = rng.random_range(0..self.transitions.len());
                Ok((i, self.segment_at(i, n, gamma)?))
            })
            .collect()
    }

    /// Observations and actions of every stored transition, as matrices.
    pub fn obs_action_matrices(&self) -> Result<(Matrix, Matrix)> {
        let obs: Vec<&[f64]> = self.transitions.iter().map(|t| t.obs.as_slice()).collect();
        let act: Vec<&[f64]> = self.transitions.iter().map(|t| t.action.as_slice()).collect();
        Ok((Matrix::from_rows(&obs)?, Matrix::from_rows(&act)?))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.obs_dim as u32).to_le_bytes())?;
        w.write_all(&(self.act_dim as u32).to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.transitions.len() as u64).to_le_bytes())?;
        for t in &self.transitions {
            let scalars = [
                if t.terminal { 1.0 } else { 0.0 },
                t.episode_id as f64,
                t.step_index as f64,
                t.cycle as f64,
            ];
            let record = t
                .obs
                .iter()
                .chain(&t.action)
                .chain(std::iter::once(&t.reward))
                .chain(&t.next_obs)
                .chain(&scalars);
            for v in record {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a replay file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported replay version {version}")));
        }
        let obs_dim = read_u32(r)? as usize;
        let act_dim = read_u32(r)? as usize;
        let capacity = read_u64(r)? as usize;
        let count = read_u64(r)? as usize;
        let mut store = ReplayStore::new(obs_dim, act_dim, capacity)?;
        for _ in 0..count {
            let obs = read_f64s(r, obs_dim)?;
            let action = read_f64s(r, act_dim)?;
            let reward = read_f64(r)?;
            let next_obs = read_f64s(r, obs_dim)?;
            let tail = read_f64s(r, 4)?;
            store.append(Transition {
                obs,
                action,
                reward,
                next_obs,
                terminal: tail[0] != 0.0,
                episode_id: tail[1] as u64,
                step_index: tail[2] as u64,
                cycle: tail[3] as u32,
            })?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

const MAGIC: &[u8; 8] = b"GBREPLAY";
const VERSION: u32 = 1;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

/// Learner pacing: an update is due while fewer than
/// `⌊actor_steps · spi / batch_size⌋` batches have been consumed.
pub fn spi_gate(actor_steps: u64, learner_batches_done: u64, spi: u64, batch_size: u64) -> bool {
    debug_assert!(spi > 0 && batch_size > 0);
    learner_batches_done < paced_batches(actor_steps, spi, batch_size)
}

/// Total learner batches owed after `actor_steps` inserts.
pub fn paced_batches(actor_steps: u64, spi: u64, batch_size: u64) -> u64 {
    actor_steps * spi / batch_size
}
