//! Checkpoint container.
//!
//! ```text
//! magic      b"AICK"
//! version    u16                      (currently 1)
//! spec_hash  u16 length + ASCII hex   (sha-256 of the network spec)
//! epoch      u32
//! config     u32 length + UTF-8 TOML  ([network] and [train] tables)
//! count      u32                      number of parameter tensors
//! per tensor:
//!   name     u16 length + UTF-8
//!   decay    u8                       1 if weight decay applies
//!   rank     u8, then rank × u32 dims
//!   data     product(dims) × f32
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};
use crate::training::sgd::TrainConfig;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"AICK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigEcho {
    network: NetworkSpec,
    train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub epoch: u32,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(spec: &NetworkSpec, train: &TrainConfig, epoch: usize, params: &ParamStore<T>) -> Self {
        Checkpoint {
            spec: spec.clone(),
            train: train.clone(),
            epoch: epoch as u32,
            params: params.cast(),
        }
    }

    /// Number of scalars the serializer writes.
    pub fn scalar_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(&CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.str16(&self.spec.spec_hash());
        w.u32(self.epoch);
        let echo = ConfigEcho {
            network: self.spec.clone(),
            train: self.train.clone(),
        };
        w.str32(&toml::to_string(&echo).expect("config serializes"));
        w.u32(self.params.len() as u32);
        for (name, p) in self.params.iter() {
            w.str16(name);
            w.u8(p.decay as u8);
            w.u8(p.value.rank() as u8);
            for &d in p.value.shape() {
                w.u32(d as u32);
            }
            w.f32s(p.value.data().iter().copied());
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.array::<4>("magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = r.u16("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let hash = r.str16("spec hash")?;
        let epoch = r.u32("epoch")?;
        let at = r.offset();
        let echo: ConfigEcho = toml::from_str(&r.str32("config")?).map_err(|e| Error::Corrupt {
            offset: at,
            detail: format!("config echo: {e}"),
        })?;
        let expected = echo.network.spec_hash();
        if hash != expected {
            return Err(Error::SpecHash {
                checkpoint: hash,
                expected,
            });
        }
        let count = r.u32("parameter count")?;
        let mut params = ParamStore::new();
        for i in 0..count {
            let section = format!("parameter {i}");
            let name = r.str16(&section)?;
            let decay = r.u8(&section)? != 0;
            let rank = r.u8(&section)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&section)? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r.f32s(n, &format!("data of `{name}`"))?;
            params.insert(name, Tensor::new(shape, data)?, decay);
        }
        r.expect_end()?;
        Ok(Checkpoint {
            spec: echo.network,
            train: echo.train,
            epoch,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Parameters converted to the requested precision.
    pub fn params_as<T: Scalar>(&self) -> ParamStore<T> {
        self.params.cast()
    }
}
