//! Checkpoint directory: `manifest.txt` (text, one `key = value` per line)
//! and `weights.bin` (flat little-endian f32 payload).
//!
//! Manifest keys:
//! - `net.*`: network configuration
//! - `param.<layer path> = <d0>x<d1>x... @ <offset>`: offsets count f32 elements
//! - `adam_m.<layer path>`, `adam_v.<layer path>`: optimizer moments, same form
//! - `adam.step`: optimizer step counter
//! - `meta.*`: free-form training metadata (epoch, best RMSE, ...)

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::network::model::{DepthNet, NetworkConfig};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const PAYLOAD_FILE: &str = "weights.bin";
const FORMAT_TAG: &str = "depthfill-checkpoint-v1";

/// ADAM moments, one entry per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: crate::tensor::Scalar> OptimizerState<T> {
    /// Zero moments shaped like `params`.
    pub fn zeros(params: &crate::nn::ParamStore<T>) -> Self {
        let m: Vec<Tensor<T>> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: DepthNet<f32>,
    pub optimizer: Option<OptimizerState>,
    pub meta: KvMap,
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn parse_entry(value: &str) -> Result<(Vec<usize>, usize)> {
    let (shape, offset) = value
        .split_once('@')
        .ok_or_else(|| Error::Checkpoint(format!("malformed tensor entry {value:?}")))?;
    let shape = shape
        .trim()
        .split('x')
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad dimension in {value:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let offset = offset
        .trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad offset in {value:?}")))?;
    Ok((shape, offset))
}

pub fn save_checkpoint(dir: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut kv = KvMap::new();
    kv.set("format", FORMAT_TAG);
    ckpt.net.config().write_kv(&mut kv, "net.");
    for (k, v) in ckpt.meta.iter() {
        kv.set(format!("meta.{k}"), v);
    }
    let mut payload: Vec<u8> = Vec::with_capacity(ckpt.net.num_params() * 4 * 3);
    let mut offset = 0usize;
    let mut push = |kv: &mut KvMap, key: String, t: &Tensor<f32>| {
        kv.set(key, format!("{} @ {offset}", shape_str(t.shape())));
        payload.extend(t.data().iter().flat_map(|v| v.to_le_bytes()));
        offset += t.len();
    };
    for (_, name, t) in ckpt.net.params.iter() {
        push(&mut kv, format!("param.{name}"), t);
    }
    if let Some(opt) = &ckpt.optimizer {
        if opt.m.len() != ckpt.net.params.len() || opt.v.len() != ckpt.net.params.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameter count".into(),
            ));
        }
        kv.set("adam.step", opt.step);
        for ((_, name, _), (m, v)) in ckpt.net.params.iter().zip(opt.m.iter().zip(&opt.v)) {
            push(&mut kv, format!("adam_m.{name}"), m);
            push(&mut kv, format!("adam_v.{name}"), v);
        }
    }
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let tmp = dir.join(format!("{name}.tmp"));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, dir.join(name)).map_err(|e| Error::io(dir.join(name), e))
    };
    write(PAYLOAD_FILE, &payload)?;
    write(MANIFEST_FILE, kv.to_text().as_bytes())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let kv = KvMap::parse(&text)?;
    if kv.get("format") != Some(FORMAT_TAG) {
        return Err(Error::Checkpoint(format!(
            "{} is not a {FORMAT_TAG} manifest",
            manifest_path.display()
        )));
    }
    let payload_path = dir.join(PAYLOAD_FILE);
    let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(
            "payload length is not a multiple of 4".into(),
        ));
    }
    let floats: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let read = |key: &str, expect: &[usize]| -> Result<Tensor<f32>> {
        let value = kv
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
        let (shape, offset) = parse_entry(value)?;
        if shape != expect {
            return Err(Error::Checkpoint(format!(
                "{key}: stored shape {shape:?}, network expects {expect:?}"
            )));
        }
        let len: usize = shape.iter().product();
        let data = floats
            .get(offset..offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("{key}: payload too short")))?;
        Tensor::from_vec(&shape, data.to_vec())
    };

    let config = NetworkConfig::read_kv(&kv, "net.", &NetworkConfig::default())?;
    let mut net = DepthNet::<f32>::new(config)?;
    let names: Vec<(crate::nn::ParamId, String, Vec<usize>)> = net
        .params
        .iter()
        .map(|(id, n, t)| (id, n.to_string(), t.shape().to_vec()))
        .collect();
    for (id, name, shape) in &names {
        *net.params.get_mut(*id) = read(&format!("param.{name}"), shape)?;
    }
    let stored = kv.keys().filter(|k| k.starts_with("param.")).count();
    if stored != names.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {stored} tensors, network has {}",
            names.len()
        )));
    }

    let optimizer = match kv.parse_opt::<u64>("adam.step")? {
        None => None,
        Some(step) => {
            let mut m = Vec::with_capacity(names.len());
            let mut v = Vec::with_capacity(names.len());
            for (_, name, shape) in &names {
                m.push(read(&format!("adam_m.{name}"), shape)?);
                v.push(read(&format!("adam_v.{name}"), shape)?);
            }
            Some(OptimizerState { step, m, v })
        }
    };

    let mut meta = KvMap::new();
    for (k, v) in kv.iter() {
        if let Some(rest) = k.strip_prefix("meta.") {
            meta.set(rest, v);
        }
    }
    Ok(Checkpoint {
        net,
        optimizer,
        meta,
    })
}
