//! Flat parameter archive.
//!
//! ```text
//! "S2CK" | version u16 | precision u8 (4 = f32, 8 = f64)
//! header_len u32 | header (UTF-8 `key=value` lines, encoder widths first)
//! entry_count u32 | entries
//! entry: name_len u16 | name | rank u8 | dims u32×rank | payload
//! ```
//!
//! Adam moments, when present, are stored as ordinary entries under
//! `adam/first/` and `adam/second/`.

use std::collections::BTreeMap;
use std::path::Path;

use s2daft_core::model::EncoderConfig;
use s2daft_core::optim::{Adam, AdamConfig};
use s2daft_core::{ParamStore, Tensor};

use crate::container::{write, Reader, VERSION};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"S2CK";
const FIRST: &str = "adam/first/";
const SECOND: &str = "adam/second/";
const HEADER_AT: u64 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: EncoderConfig,
    /// Free-form metadata (kind, epoch, classes, seed ...).
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn new(encoder: EncoderConfig, params: ParamStore) -> Self {
        Self { encoder, meta: BTreeMap::new(), params, optimizer: None }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }
}

fn encoder_lines(e: &EncoderConfig) -> Vec<(String, String)> {
    [
        ("channels", e.channels.to_string()),
        ("dim", e.dim.to_string()),
        ("heads", e.heads.to_string()),
        ("kernel", e.kernel.to_string()),
        ("branch_depth", e.branch_depth.to_string()),
        ("cross_layers", e.cross_layers.to_string()),
        ("fusion_depth", e.fusion_depth.to_string()),
        ("recon_depth", e.recon_depth.to_string()),
        ("diff_depth", e.diff_depth.to_string()),
        ("ffn_mult", e.ffn_mult.to_string()),
        ("window", e.window.to_string()),
        ("patch", e.patch.to_string()),
        ("cross_attention", e.cross_attention.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (format!("encoder.{k}"), v))
    .collect()
}

fn parse_encoder(map: &BTreeMap<String, String>, err: impl Fn(String) -> CliError) -> Result<EncoderConfig> {
    let get = |k: &str| map.get(&format!("encoder.{k}")).ok_or_else(|| err(format!("header lacks encoder.{k}")));
    let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| err(format!("encoder.{k} is not a count"))) };
    Ok(EncoderConfig {
        channels: num("channels")?,
        dim: num("dim")?,
        heads: num("heads")?,
        kernel: num("kernel")?,
        branch_depth: num("branch_depth")?,
        cross_layers: num("cross_layers")?,
        fusion_depth: num("fusion_depth")?,
        recon_depth: num("recon_depth")?,
        diff_depth: num("diff_depth")?,
        ffn_mult: num("ffn_mult")?,
        window: num("window")?,
        patch: num("patch")?,
        cross_attention: get("cross_attention")?.parse().map_err(|_| err("encoder.cross_attention is not a bool".into()))?,
    })
}

fn push_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64], precision: Precision) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        match precision {
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

pub fn encode(ckpt: &Checkpoint, precision: Precision) -> Vec<u8> {
    let mut header: Vec<(String, String)> = encoder_lines(&ckpt.encoder);
    header.extend(ckpt.meta.iter().map(|(k, v)| (k.clone(), v.clone())));
    if let Some(adam) = &ckpt.optimizer {
        header.push(("adam.step".into(), adam.step.to_string()));
        header.push(("adam.beta1".into(), format!("{:?}", adam.config.beta1)));
        header.push(("adam.beta2".into(), format!("{:?}", adam.config.beta2)));
        header.push(("adam.eps".into(), format!("{:?}", adam.config.eps)));
    }
    let text: String = header.iter().map(|(k, v)| format!("{k}={v}\n")).collect();

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(precision.tag());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());

    let mut entries: Vec<(String, Vec<usize>, &[f64])> =
        ckpt.params.iter().map(|(k, t)| (k.clone(), t.shape().to_vec(), t.data())).collect();
    if let Some(adam) = &ckpt.optimizer {
        for (prefix, map) in [(FIRST, &adam.first), (SECOND, &adam.second)] {
            for (k, v) in map {
                entries.push((format!("{prefix}{k}"), vec![v.len()], v.as_slice()));
            }
        }
    }
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, shape, data) in &entries {
        push_entry(&mut out, name, shape, data, precision);
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC)?;
    r.version()?;
    let precision = match r.u8("precision")? {
        4 => Precision::F32,
        8 => Precision::F64,
        other => return Err(r.err(format!("unknown precision tag {other}"))),
    };
    let header_len = r.u32("header length")? as usize;
    let header = std::str::from_utf8(r.take(header_len, "header")?)
        .map_err(|e| CliError::format(path, HEADER_AT + e.valid_up_to() as u64, "header is not UTF-8"))?;
    let mut map = BTreeMap::new();
    for line in header.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::format(path, HEADER_AT, format!("header line {line:?} lacks '='")))?;
        map.insert(k.to_string(), v.to_string());
    }
    let encoder = parse_encoder(&map, |m| CliError::format(path, HEADER_AT, m))?;

    let count = r.u32("entry count")?;
    let mut params = ParamStore::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "entry name")?).map_err(|_| r.err("entry name is not UTF-8"))?.to_string();
        let rank = r.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("dimension")?);
        }
        let elem = match precision {
            Precision::F32 => 4,
            Precision::F64 => 8,
        };
        let n = r.count(&dims, elem)?;
        let at = r.pos();
        let payload = r.take(n, &format!("payload of {name}"))?;
        let data: Vec<f64> = match precision {
            Precision::F32 => payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
            Precision::F64 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CliError::format(path, at, format!("non-finite value in {name}")));
        }
        if let Some(k) = name.strip_prefix(FIRST) {
            first.insert(k.to_string(), data);
        } else if let Some(k) = name.strip_prefix(SECOND) {
            second.insert(k.to_string(), data);
        } else {
            let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
    }
    r.finish()?;

    let optimizer = match map.get("adam.step") {
        Some(step) => {
            let num = |k: &str| -> Result<f64> {
                map.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::format(path, HEADER_AT, format!("bad or missing {k}")))
            };
            Some(Adam {
                config: AdamConfig { beta1: num("adam.beta1")?, beta2: num("adam.beta2")?, eps: num("adam.eps")? },
                step: step.parse().map_err(|_| CliError::format(path, HEADER_AT, "adam.step is not a count"))?,
                first,
                second,
            })
        }
        None => None,
    };
    let meta = map.into_iter().filter(|(k, _)| !k.starts_with("encoder.") && !k.starts_with("adam.")).collect();
    Ok(Checkpoint { encoder, meta, params, optimizer })
}

pub fn save(ckpt: &Checkpoint, path: &Path, precision: Precision) -> Result<()> {
    write(path, &encode(ckpt, precision))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

/// Fails with every name/shape difference when `have` does not match the
/// parameter layout `want`.
pub fn check_layout(have: &ParamStore, want: &ParamStore, what: &str) -> Result<()> {
    let diff = have.structural_diff(want);
    if diff.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} does not match the configured model:\n{}", diff.join("\n"))))
    }
}
