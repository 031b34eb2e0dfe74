//! Trained policies and their binary form.
//!
//! ```text
//! magic "LRPS" | u16 version | u8 env | u8 arch | u64 seed | u64 progress
//! [u8;32] sha256(judge description) | u32 len + judge description
//! arch payload | u32 n + f64 learner state | u64 n + f64 parameters
//! ```
//! All integers and floats little-endian. A Q-network payload is
//! `u32 input_dim | u32 layers | (u8 kind, u32 width, u8 activation)*`;
//! a negotiation payload is `u32 context_width | u32 hidden`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainError;
use crate::judge::EnvTag;
use crate::nn::{Activation, LayerSpec, NetworkSpec};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"LRPS";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyArch {
    QNetwork(NetworkSpec),
    Negotiation { context_width: usize, hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub env: EnvTag,
    pub arch: PolicyArch,
    pub params: Vec<f64>,
    /// Description of the judge that produced the rewards.
    pub judge: String,
    pub seed: u64,
    /// Training steps (DQN) or contexts (REINFORCE) completed.
    pub progress: u64,
    /// Extra learner state needed to resume (e.g. the reward baseline).
    pub learner_state: Vec<f64>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| malformed("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<usize, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, TrainError> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn malformed(m: &str) -> TrainError {
    TrainError::Contract(format!("malformed policy snapshot: {m}"))
}

fn env_byte(env: EnvTag) -> u8 {
    match env {
        EnvTag::Ultimatum => 0,
        EnvTag::Matrix => 1,
        EnvTag::Negotiation => 2,
    }
}

fn activation_byte(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Tanh => 2,
    }
}

impl PolicySnapshot {
    pub fn judge_digest(&self) -> [u8; 32] {
        Sha256::digest(self.judge.as_bytes()).into()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(SNAPSHOT_MAGIC);
        w.u16(SNAPSHOT_VERSION);
        w.u8(env_byte(self.env));
        w.u8(match self.arch {
            PolicyArch::QNetwork(_) => 0,
            PolicyArch::Negotiation { .. } => 1,
        });
        w.u64(self.seed);
        w.u64(self.progress);
        w.0.extend_from_slice(&self.judge_digest());
        w.u32(self.judge.len());
        w.0.extend_from_slice(self.judge.as_bytes());
        match &self.arch {
            PolicyArch::QNetwork(spec) => {
                w.u32(spec.input_dim);
                w.u32(spec.layers.len());
                for l in &spec.layers {
                    match *l {
                        LayerSpec::Dense { width, activation } => {
                            w.u8(0);
                            w.u32(width);
                            w.u8(activation_byte(activation));
                        }
                        LayerSpec::Recurrent { hidden } => {
                            w.u8(1);
                            w.u32(hidden);
                            w.u8(0);
                        }
                        LayerSpec::Softmax => {
                            w.u8(2);
                            w.u32(0);
                            w.u8(0);
                        }
                    }
                }
            }
            PolicyArch::Negotiation { context_width, hidden } => {
                w.u32(*context_width);
                w.u32(*hidden);
            }
        }
        w.u32(self.learner_state.len());
        w.f64s(&self.learner_state);
        w.u64(self.params.len() as u64);
        w.f64s(&self.params);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(malformed("bad magic"));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(malformed(&format!("unsupported version {version}")));
        }
        let env = match r.u8()? {
            0 => EnvTag::Ultimatum,
            1 => EnvTag::Matrix,
            2 => EnvTag::Negotiation,
            _ => return Err(malformed("unknown environment")),
        };
        let arch_kind = r.u8()?;
        let seed = r.u64()?;
        let progress = r.u64()?;
        let digest: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let judge_len = r.u32()?;
        let judge = String::from_utf8(r.take(judge_len)?.to_vec()).map_err(|_| malformed("judge is not UTF-8"))?;
        if <[u8; 32]>::from(Sha256::digest(judge.as_bytes())) != digest {
            return Err(malformed("judge digest mismatch"));
        }
        let arch = match arch_kind {
            0 => {
                let input_dim = r.u32()?;
                let n = r.u32()?;
                let mut layers = Vec::with_capacity(n.min(64));
                for _ in 0..n {
                    let (kind, width, act) = (r.u8()?, r.u32()?, r.u8()?);
                    let activation = match act {
                        0 => Activation::Identity,
                        1 => Activation::Relu,
                        2 => Activation::Tanh,
                        _ => return Err(malformed("unknown activation")),
                    };
                    layers.push(match kind {
                        0 => LayerSpec::Dense { width, activation },
                        1 => LayerSpec::Recurrent { hidden: width },
                        2 => LayerSpec::Softmax,
                        _ => return Err(malformed("unknown layer")),
                    });
                }
                PolicyArch::QNetwork(NetworkSpec::new(input_dim, layers))
            }
            1 => PolicyArch::Negotiation { context_width: r.u32()?, hidden: r.u32()? },
            _ => return Err(malformed("unknown architecture")),
        };
        let n_state = r.u32()?;
        let learner_state = r.f64s(n_state)?;
        let n_params = r.u64()? as usize;
        let params = r.f64s(n_params)?;
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes"));
        }
        if !params.iter().chain(&learner_state).all(|v| v.is_finite()) {
            return Err(malformed("non-finite values"));
        }
        Ok(Self { env, arch, params, judge, seed, progress, learner_state })
    }
}
