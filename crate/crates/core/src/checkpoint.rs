//! Versioned binary checkpoints holding a policy and, optionally, its critic.
//!
//! ```text
//! magic         8 bytes "GBCHKPT1"
//! version       u32 = 1
//! flags         u32     bit 0: critic present
//! learner_step  u64
//! eval_return   f64     NaN when never evaluated
//! policy        network, then u32 n + n × f64 action scale
//! critic        u32 obs_dim, f64 v_min, f64 v_max, u32 n_atoms, network
//! network       u32 output (0 tanh, 1 linear), u32 n_layers,
//!               (n_layers + 1) × u32 widths, then per layer weights and biases as f64
//! ```
//!
//! Everything is little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::networks::{CriticNet, PolicyNet, Support};
use crate::numeric::{Layer, Matrix, NetworkParams, OutputActivation};
use crate::replay::{read_f64, read_f64s, read_u32, read_u64};

const MAGIC: &[u8; 8] = b"GBCHKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: PolicyNet,
    pub critic: Option<CriticNet>,
    pub learner_step: u64,
    pub eval_return: f64,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_network<W: Write>(w: &mut W, p: &NetworkParams) -> Result<()> {
    write_u32(
        w,
        match p.output_activation() {
            OutputActivation::Tanh => 0,
            OutputActivation::Linear => 1,
        },
    )?;
    write_u32(w, p.layers().len() as u32)?;
    for s in p.sizes() {
        write_u32(w, s as u32)?;
    }
    for l in p.layers() {
        write_f64s(w, l.weight.data())?;
        write_f64s(w, &l.bias)?;
    }
    Ok(())
}

fn read_network<R: Read>(r: &mut R) -> Result<NetworkParams> {
    let output = match read_u32(r)? {
        0 => OutputActivation::Tanh,
        1 => OutputActivation::Linear,
        other => return Err(Error::Format(format!("unknown output activation {other}"))),
    };
    let n_layers = read_u32(r)? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let sizes: Vec<usize> = (0..=n_layers)
        .map(|_| read_u32(r).map(|v| v as usize))
        .collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(n_layers);
    for w in sizes.windows(2) {
        let weight = Matrix::from_vec(w[1], w[0], read_f64s(r, w[0] * w[1])?)
            .map_err(|e| Error::Format(format!("bad weights: {e}")))?;
        let bias = read_f64s(r, w[1])?;
        layers.push(Layer { weight, bias });
    }
    NetworkParams::from_layers(layers, output).map_err(|e| Error::Format(e.to_string()))
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u32(w, u32::from(self.critic.is_some()))?;
        w.write_all(&self.learner_step.to_le_bytes())?;
        w.write_all(&self.eval_return.to_le_bytes())?;
        write_network(w, self.policy.params())?;
        write_u32(w, self.policy.action_scale().len() as u32)?;
        write_f64s(w, self.policy.action_scale())?;
        if let Some(c) = &self.critic {
            write_u32(w, c.obs_dim() as u32)?;
            write_f64s(w, &[c.support().v_min(), c.support().v_max()])?;
            write_u32(w, c.support().len() as u32)?;
            write_network(w, c.params())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let flags = read_u32(r)?;
        let learner_step = read_u64(r)?;
        let eval_return = read_f64(r)?;
        let params = read_network(r)?;
        let n = read_u32(r)? as usize;
        let scale = read_f64s(r, n)?;
        let policy = PolicyNet::new(params, scale).map_err(|e| Error::Format(e.to_string()))?;
        let critic = if flags & 1 == 1 {
            let obs_dim = read_u32(r)? as usize;
            let v_min = read_f64(r)?;
            let v_max = read_f64(r)?;
            let atoms = read_u32(r)? as usize;
            let support = Support::new(v_min, v_max, atoms).map_err(|e| Error::Format(e.to_string()))?;
            let params = read_network(r)?;
            Some(CriticNet::new(params, support, obs_dim).map_err(|e| Error::Format(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            policy,
            critic,
            learner_step,
            eval_return,
        })
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
