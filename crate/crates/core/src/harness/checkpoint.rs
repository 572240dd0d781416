//! Binary checkpoints of server state.
//!
//! Layout, little endian throughout:
//!
//! ```text
//! "FCS1" | u32 version | [u8; 32] config hash | u8 strategy | u64 round | u64 seed
//! model(global)
//! u8 has_ra [ tensor S | tensor Φ | tensor mean | u64 updates | u8 initialized ]
//! u32 locals, model(local)*
//!
//! model  = u32 count, tensor* (trainable), u8 has_projection [ tensor P ]
//! tensor = u32 ndim, u64 dim*, f64 data*
//! ```
//!
//! Everything that is a pure function of the configuration (architecture,
//! alignment hyperparameters) is rebuilt from the config on load, and the
//! hash guards against loading under a different config.

use std::path::Path;

use crate::error::{FedError, Result};
use crate::federation::{ServerState, Strategy};
use crate::model::GlobalModel;
use crate::numerics::Tensor;
use crate::ra::ProjectionBasis;

use super::config::{hex, ExperimentConfig};
use super::output::write_atomic;

const MAGIC: &[u8; 4] = b"FCS1";
const VERSION: u32 = 1;

/// Fixed-size prefix, readable without the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config_hash: [u8; 32],
    pub strategy: Strategy,
    pub round: usize,
    pub seed: u64,
}

fn strategy_code(s: Strategy) -> u8 {
    Strategy::ALL.iter().position(|x| *x == s).unwrap_or(0) as u8
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn model(&mut self, m: &GlobalModel) {
        let params = m.trainable();
        self.u32(params.len() as u32);
        for p in params {
            self.tensor(p);
        }
        match &m.projection {
            Some(p) => {
                self.u8(1);
                self.tensor(p.as_tensor());
            }
            None => self.u8(0),
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                FedError::Format(format!("checkpoint truncated at byte {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(FedError::Format(format!(
                "checkpoint flag byte {b} at {}",
                self.pos - 1
            ))),
        }
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(FedError::Format(format!(
                "checkpoint tensor with {ndim} dimensions"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut len = 1usize;
        for _ in 0..ndim {
            let d = self.u64()? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| FedError::Format("checkpoint tensor size overflows".into()))?;
            shape.push(d);
        }
        let bytes = self.take(
            len.checked_mul(8)
                .ok_or_else(|| FedError::Format("checkpoint tensor size overflows".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data)
    }
    /// Overwrites the parameters of `m`, which must already have the right
    /// architecture.
    fn model_into(&mut self, m: &mut GlobalModel) -> Result<()> {
        let count = self.u32()? as usize;
        let expected = m.trainable().len();
        if count != expected {
            return Err(FedError::Format(format!(
                "checkpoint holds {count} parameter tensors, model has {expected}"
            )));
        }
        let params = (0..count)
            .map(|_| self.tensor())
            .collect::<Result<Vec<_>>>()?;
        m.set_trainable(params)?;
        if self.flag()? {
            let p = ProjectionBasis::new(self.tensor()?)?;
            m.set_projection(p)?;
        } else if m.projection.is_some() {
            return Err(FedError::Format(
                "checkpoint lacks the projection layer".into(),
            ));
        }
        Ok(())
    }
}

pub fn encode(state: &ServerState, config: &ExperimentConfig) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.0.extend_from_slice(&config.hash());
    w.u8(strategy_code(config.strategy));
    w.u64(state.round as u64);
    w.u64(config.seed);
    w.model(&state.global);
    match &state.ra {
        Some(ra) => {
            w.u8(1);
            w.tensor(&ra.s);
            w.tensor(&ra.phi);
            w.tensor(&Tensor::vector(ra.global_mean.clone()));
            w.u64(ra.update_count);
            w.u8(ra.initialized as u8);
        }
        None => w.u8(0),
    }
    w.u32(state.locals.len() as u32);
    for m in &state.locals {
        w.model(m);
    }
    w.0
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(4)? != MAGIC {
        return Err(FedError::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FedError::Format(format!(
            "checkpoint version {version} unsupported (expected {VERSION})"
        )));
    }
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let code = r.u8()? as usize;
    let strategy = *Strategy::ALL
        .get(code)
        .ok_or_else(|| FedError::Format(format!("checkpoint strategy code {code}")))?;
    let round = r.u64()? as usize;
    let seed = r.u64()?;
    Ok(CheckpointHeader {
        version,
        config_hash,
        strategy,
        round,
        seed,
    })
}

pub fn decode_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    read_header(&mut Reader { buf: bytes, pos: 0 })
}

/// Restores a server state saved under `config`. A different config hash is
/// refused.
pub fn decode(
    bytes: &[u8],
    config: &ExperimentConfig,
    dims: crate::model::ModelDims,
    num_clients: usize,
) -> Result<ServerState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let header = read_header(&mut r)?;
    let expected = config.hash();
    if header.config_hash != expected {
        return Err(FedError::Config(format!(
            "checkpoint was written under config hash {} but the current config hashes to {}; \
             refusing to resume under different settings",
            hex(&header.config_hash),
            hex(&expected)
        )));
    }
    if header.strategy != config.strategy || header.seed != config.seed {
        return Err(FedError::Config(format!(
            "checkpoint is for {} seed {}, config asks for {} seed {}",
            header.strategy, header.seed, config.strategy, config.seed
        )));
    }
    let mut state = ServerState::init(
        &config.fed_config(),
        config.strategy,
        &config.model,
        dims,
        num_clients,
    )?;
    state.round = header.round;
    r.model_into(&mut state.global)?;
    let has_ra = r.flag()?;
    match (&mut state.ra, has_ra) {
        (Some(ra), true) => {
            let s = r.tensor()?;
            let phi = r.tensor()?;
            let mean = r.tensor()?;
            if s.shape() != ra.s.shape() || phi.shape() != ra.phi.shape() || mean.len() != ra.dim {
                return Err(FedError::Format(
                    "checkpoint alignment state has the wrong shape".into(),
                ));
            }
            ra.s = s;
            ra.phi = phi;
            ra.global_mean = mean.data().to_vec();
            ra.update_count = r.u64()?;
            ra.initialized = r.flag()?;
        }
        (None, false) => {}
        _ => {
            return Err(FedError::Format(
                "checkpoint alignment section does not match strategy".into(),
            ))
        }
    }
    let locals = r.u32()? as usize;
    if locals != state.locals.len() {
        return Err(FedError::Format(format!(
            "checkpoint holds {locals} local models, expected {}",
            state.locals.len()
        )));
    }
    for m in &mut state.locals {
        r.model_into(m)?;
    }
    if r.pos != bytes.len() {
        return Err(FedError::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(state)
}

pub fn save(path: &Path, state: &ServerState, config: &ExperimentConfig) -> Result<()> {
    write_atomic(path, &encode(state, config))
}

pub fn load(
    path: &Path,
    config: &ExperimentConfig,
    dims: crate::model::ModelDims,
    num_clients: usize,
) -> Result<ServerState> {
    let bytes = std::fs::read(path).map_err(|e| FedError::io(path, e))?;
    decode(&bytes, config, dims, num_clients).map_err(|e| match e {
        FedError::Format(m) => FedError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::Simulation;

    fn small(strategy: Strategy) -> ExperimentConfig {
        let mut c = ExperimentConfig::from_json(
            r#"{"dataset": {"source": "synthetic", "clients": 6, "groups": 3, "train_groups": 2,
                            "samples_per_client": 30, "dim": 8, "classes": 3},
                "federation": {"sampled_per_round": 2, "rounds": 4, "ra_cadence": 2},
                "model": {"hidden": [12, 8, 6], "rank": 4}}"#,
        )
        .unwrap();
        c.strategy = strategy;
        c.seed = 11;
        c
    }

    fn advanced(
        c: &ExperimentConfig,
        rounds: usize,
    ) -> (ServerState, crate::model::ModelDims, usize) {
        let built = c.build_shards().unwrap();
        let n = built.shards.len();
        let mut sim = Simulation::new(
            c.fed_config(),
            c.strategy,
            &c.model,
            built.dims,
            built.shards,
        )
        .unwrap();
        for _ in 0..rounds {
            sim.step().unwrap();
        }
        (sim.state, built.dims, n)
    }

    #[test]
    fn round_trip_every_strategy() {
        for s in Strategy::ALL {
            let c = small(s);
            let (state, dims, n) = advanced(&c, 3);
            let bytes = encode(&state, &c);
            let back = decode(&bytes, &c, dims, n).unwrap();
            assert_eq!(back, state, "{s}");
            let h = decode_header(&bytes).unwrap();
            assert_eq!((h.round, h.seed, h.strategy), (3, 11, s));
        }
    }

    #[test]
    fn truncation_is_a_format_error() {
        let c = small(Strategy::FedCs);
        let (state, dims, n) = advanced(&c, 1);
        let bytes = encode(&state, &c);
        for cut in [0, 3, 10, 60, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut], &c, dims, n), Err(FedError::Format(_))),
                "cut {cut}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            decode(&long, &c, dims, n),
            Err(FedError::Format(_))
        ));
    }

    #[test]
    fn other_config_is_refused() {
        let c = small(Strategy::FedAvg);
        let (state, dims, n) = advanced(&c, 1);
        let bytes = encode(&state, &c);
        let mut other = c.clone();
        other.federation.lr0 *= 2.0;
        match decode(&bytes, &other, dims, n) {
            Err(FedError::Config(m)) => assert!(m.contains("refusing"), "{m}"),
            r => panic!("{r:?}"),
        }
        let mut longer = c.clone();
        longer.federation.rounds = 40;
        assert!(decode(&bytes, &longer, dims, n).is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let c = small(Strategy::FedCs);
        let (state, dims, n) = advanced(&c, 2);
        save(&path, &state, &c).unwrap();
        assert_eq!(load(&path, &c, dims, n).unwrap(), state);
        assert!(matches!(
            load(&dir.path().join("missing"), &c, dims, n),
            Err(FedError::Io { .. })
        ));
    }
}
