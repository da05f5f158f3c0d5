//! Bit-exact agent persistence.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "WMTL" | u32 version | u32 len, JSON metadata
//! u64 tensor count | tensor records
//! u8 optimizer flag | [u32 count | per optimizer: u32 len, name,
//!                      u32 len, JSON state, u64 count, tensor records]
//! ```
//!
//! A tensor record is `u32 len, path | u8 role | u8 dtype (0 = f64) |
//! u32 rank | u64 dims.. | payload`. Records are sorted by path.

mod codec;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::{path_has_prefix, ModelSpec, NamedParamSet};
use crate::tensor::{AdamConfig, AdamState, RngSnapshot};
use codec::{Reader, Writer};

pub const MAGIC: &[u8; 4] = b"WMTL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Domains the agent was trained on.
    pub domains: Vec<String>,
    pub spec: ModelSpec,
    pub a_max: usize,
    pub env_steps: u64,
    pub encoder_fingerprint: String,
    /// Whether the encoder was held frozen during training.
    #[serde(default)]
    pub encoder_frozen: bool,
    #[serde(default)]
    pub rng_streams: BTreeMap<String, RngSnapshot>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct AgentCheckpoint {
    pub meta: CheckpointMeta,
    pub params: NamedParamSet,
    /// Optimizer states by name; empty unless the run is meant to resume.
    pub optimizers: BTreeMap<String, AdamState>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    step: u64,
}

/// SHA-256 over the encoder payload bytes, paths in lexicographic order.
pub fn encoder_fingerprint(params: &NamedParamSet) -> String {
    let mut h = Sha256::new();
    for (_, entry) in params.iter().filter(|(p, _)| path_has_prefix(p, "encoder")) {
        h.update(entry.tensor.to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl AgentCheckpoint {
    /// Checkpoint of `params` with a freshly computed encoder fingerprint.
    pub fn new(
        params: NamedParamSet,
        spec: ModelSpec,
        domains: Vec<String>,
        env_steps: u64,
    ) -> Self {
        let meta = CheckpointMeta {
            domains,
            a_max: spec.action_dim,
            spec,
            env_steps,
            encoder_fingerprint: encoder_fingerprint(&params),
            encoder_frozen: false,
            rng_streams: BTreeMap::new(),
            notes: BTreeMap::new(),
        };
        AgentCheckpoint {
            meta,
            params,
            optimizers: BTreeMap::new(),
        }
    }

    /// Canonical file bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u32(FORMAT_VERSION);
        let meta =
            serde_json::to_vec(&self.meta).map_err(|e| Error::format("metadata", e.to_string()))?;
        w.blob(&meta);
        w.u64(self.params.len() as u64);
        for (path, entry) in self.params.iter() {
            w.tensor(path, entry.role.tag(), &entry.tensor);
        }
        w.u8(u8::from(!self.optimizers.is_empty()));
        if !self.optimizers.is_empty() {
            w.u32(self.optimizers.len() as u32);
            for (name, opt) in &self.optimizers {
                w.blob(name.as_bytes());
                let header = OptimizerHeader {
                    config: opt.config,
                    step: opt.step_count(),
                };
                let json = serde_json::to_vec(&header)
                    .map_err(|e| Error::format("optimizer", e.to_string()))?;
                w.blob(&json);
                w.u64(2 * opt.first_moments().len() as u64);
                for (path, t) in opt.first_moments() {
                    w.tensor(&format!("first/{path}"), 0, t);
                }
                for (path, t) in opt.second_moments() {
                    w.tensor(&format!("second/{path}"), 0, t);
                }
            }
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4, "header")?;
        if magic != MAGIC {
            return Err(Error::format("header", "bad magic bytes"));
        }
        let version = r.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::format(
                "header",
                format!("unsupported version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let meta_bytes = r.blob("metadata")?;
        let meta: CheckpointMeta = serde_json::from_slice(meta_bytes)
            .map_err(|e| Error::format("metadata", e.to_string()))?;

        let count = r.u64("tensor table")?;
        let mut params = NamedParamSet::new();
        let mut last: Option<String> = None;
        for _ in 0..count {
            let (path, role, t) = r.tensor()?;
            let role = crate::nets::ParamRole::from_tag(role).ok_or_else(|| {
                Error::format(format!("tensor {path}"), format!("unknown role tag {role}"))
            })?;
            if last.as_deref().is_some_and(|l| l >= path.as_str()) {
                return Err(Error::format(
                    format!("tensor {path}"),
                    "records out of order",
                ));
            }
            last = Some(path.clone());
            params.insert(path, t, role);
        }

        let mut optimizers = BTreeMap::new();
        if r.u8("optimizer")? == 1 {
            let n = r.u32("optimizer")?;
            for _ in 0..n {
                let name = String::from_utf8(r.blob("optimizer")?.to_vec())
                    .map_err(|_| Error::format("optimizer", "name is not UTF-8"))?;
                let header: OptimizerHeader = serde_json::from_slice(r.blob("optimizer")?)
                    .map_err(|e| Error::format("optimizer", e.to_string()))?;
                let records = r.u64("optimizer")?;
                let (mut first, mut second) = (BTreeMap::new(), BTreeMap::new());
                for _ in 0..records {
                    let (path, _, t) = r.tensor()?;
                    if let Some(p) = path.strip_prefix("first/") {
                        first.insert(p.to_string(), t);
                    } else if let Some(p) = path.strip_prefix("second/") {
                        second.insert(p.to_string(), t);
                    } else {
                        return Err(Error::format(
                            "optimizer",
                            format!("unexpected record {path}"),
                        ));
                    }
                }
                let state = AdamState::from_parts(header.config, header.step, first, second)?;
                optimizers.insert(name, state);
            }
        }
        if !r.is_done() {
            return Err(Error::format(
                "trailer",
                "unexpected bytes after the last section",
            ));
        }
        Ok(AgentCheckpoint {
            meta,
            params,
            optimizers,
        })
    }

    /// Writes the file and syncs it to disk.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        f.sync_all().map_err(|e| Error::io(path, e))
    }

    /// Reads and validates a file; validation warnings are logged.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::from_bytes(&bytes)?;
        for w in ckpt.warnings() {
            log::warn!("{}: {w}", path.display());
        }
        Ok(ckpt)
    }

    /// Non-fatal problems: an empty tensor table, a parameter layout that
    /// does not match the recorded spec, or a stale encoder fingerprint.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.params.is_empty() {
            out.push("tensor table is empty".to_string());
            return out;
        }
        let layout = self.meta.spec.layout();
        let matches = layout.len() == self.params.len()
            && layout.iter().all(|slot| {
                self.params
                    .tensor(&slot.path)
                    .is_some_and(|t| t.shape() == slot.shape.as_slice())
            });
        if !matches {
            out.push("parameters do not match the recorded model spec".to_string());
        }
        if encoder_fingerprint(&self.params) != self.meta.encoder_fingerprint {
            out.push("encoder fingerprint does not match the stored encoder".to_string());
        }
        out
    }

    /// Human-readable summary: metadata, then one line per tensor.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let m = &self.meta;
        s.push_str(&format!("format version: {FORMAT_VERSION}\n"));
        s.push_str(&format!("domains: {}\n", m.domains.join(", ")));
        s.push_str(&format!("action width: {}\n", m.a_max));
        s.push_str(&format!("env steps: {}\n", m.env_steps));
        s.push_str(&format!("encoder fingerprint: {}\n", m.encoder_fingerprint));
        s.push_str(&format!("encoder frozen: {}\n", m.encoder_frozen));
        for (k, v) in &m.notes {
            s.push_str(&format!("{k}: {v}\n"));
        }
        s.push_str(&format!(
            "tensors: {} ({} values)\n",
            self.params.len(),
            self.params.num_values()
        ));
        for (path, e) in self.params.iter() {
            s.push_str(&format!(
                "  {path} {:?} {}\n",
                e.tensor.shape(),
                e.role.name()
            ));
        }
        for (name, opt) in &self.optimizers {
            s.push_str(&format!("optimizer {name}: step {}\n", opt.step_count()));
        }
        for w in self.warnings() {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}
