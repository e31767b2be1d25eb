//! `MNRV1` model checkpoints.
//!
//! ```text
//! "MNRV1" | u16 version | config block | u64 n | n * f64 params
//! | u8 flags (bit 0: beta, bit 1: outer optimizer)
//! | [n * f64 beta]
//! | [u64 outer_iter | u64 t, n * f64 m, n * f64 v (theta0)
//!                   | u64 t, n * f64 m, n * f64 v (beta)]
//! | u32 CRC-32 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use crate::codec::{check_magic, read_config, verify_crc, write_config, Reader, Writer};
use crate::error::{Error, Result};
use crate::meta::MetaState;
use crate::model::ModelParams;
use crate::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MNRV1";
pub const CHECKPOINT_VERSION: u16 = 1;

const FLAG_BETA: u8 = 1;
const FLAG_OPTIMIZER: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct OuterOptimizer {
    pub outer_iter: u64,
    pub theta: AdamState,
    pub beta: AdamState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub beta: Option<Vec<f64>>,
    pub optimizer: Option<OuterOptimizer>,
}

impl Checkpoint {
    pub fn params_only(params: ModelParams) -> Self {
        Checkpoint {
            params,
            beta: None,
            optimizer: None,
        }
    }

    pub fn from_meta_state(template: &ModelParams, state: &MetaState) -> Result<Self> {
        Ok(Checkpoint {
            params: state.theta0_params(template)?,
            beta: Some(state.beta.clone()),
            optimizer: Some(OuterOptimizer {
                outer_iter: state.outer_iter,
                theta: state.theta_opt.clone(),
                beta: state.beta_opt.clone(),
            }),
        })
    }

    /// Resumable state; `None` unless both beta and optimizer moments are
    /// stored.
    pub fn meta_state(&self) -> Option<MetaState> {
        let (beta, opt) = (self.beta.as_ref()?, self.optimizer.as_ref()?);
        Some(MetaState {
            theta0: self.params.flatten(),
            beta: beta.clone(),
            theta_opt: opt.theta.clone(),
            beta_opt: opt.beta.clone(),
            outer_iter: opt.outer_iter,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.params.len();
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        write_config(&mut w, self.params.config())?;
        w.u64(n as u64);
        w.f64s(self.params.as_flat());
        let flags = self.beta.as_ref().map_or(0, |_| FLAG_BETA)
            | self.optimizer.as_ref().map_or(0, |_| FLAG_OPTIMIZER);
        w.u8(flags);
        if let Some(beta) = &self.beta {
            if beta.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: beta.len(),
                });
            }
            w.f64s(beta);
        }
        if let Some(opt) = &self.optimizer {
            w.u64(opt.outer_iter);
            for st in [&opt.theta, &opt.beta] {
                if st.len() != n {
                    return Err(Error::LengthMismatch {
                        expected: n,
                        actual: st.len(),
                    });
                }
                w.u64(st.step);
                w.f64s(&st.m);
                w.f64s(&st.v);
            }
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        check_magic(&mut r, CHECKPOINT_MAGIC, "MNRV1")?;
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let body = verify_crc(bytes)?;
        let mut r = Reader::new(body);
        r.take(CHECKPOINT_MAGIC.len() + 2)?;
        let cfg = read_config(&mut r)?;
        let n = r.u64()? as usize;
        let params = ModelParams::unflatten(&cfg, r.f64s(n)?)?;
        let flags = r.u8()?;
        let beta = if flags & FLAG_BETA != 0 {
            Some(r.f64s(n)?)
        } else {
            None
        };
        let optimizer = if flags & FLAG_OPTIMIZER != 0 {
            let outer_iter = r.u64()?;
            let mut read_adam = || -> Result<AdamState> {
                let step = r.u64()?;
                Ok(AdamState {
                    step,
                    m: r.f64s(n)?,
                    v: r.f64s(n)?,
                })
            };
            let theta = read_adam()?;
            let beta = read_adam()?;
            Some(OuterOptimizer {
                outer_iter,
                theta,
                beta,
            })
        } else {
            None
        };
        if r.remaining() != 0 {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                r.remaining()
            )));
        }
        Ok(Checkpoint {
            params,
            beta,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
