//! Model checkpoints: a UTF-8 header naming the graph, its configuration,
//! the seed and every parameter shape, then the parameters as little-endian
//! `f64` in declaration order.
//!
//! ```text
//! SHAPESEG-CHECKPOINT
//! version: 1
//! graph: multihead-unet
//! depth: 3
//! base_channels: 8
//! num_classes: 5
//! seed: 42
//! params: 38
//! param: enc0.conv0.weight 8 1 3 3
//! ...
//! sha256: <payload digest>
//! <empty line>
//! <payload>
//! ```

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::format::{element_count, parse_shape, sha256_hex, split_header, write_atomic, HeaderFields, MAX_ELEMENTS};
use crate::tensor::{ParamSet, Tensor};
use crate::unet::{NetConfig, UNet};

pub const CHECKPOINT_MAGIC: &str = "SHAPESEG-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;
const GRAPH: &str = "multihead-unet";

pub fn encode_checkpoint(model: &UNet) -> Vec<u8> {
    let c = model.config();
    let params = model.params();
    let payload: Vec<u8> = params
        .iter()
        .flat_map(|p| p.value().data().iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    let mut header = format!(
        "{CHECKPOINT_MAGIC}\nversion: {CHECKPOINT_VERSION}\ngraph: {GRAPH}\ndepth: {}\nbase_channels: {}\nnum_classes: {}\nseed: {}\nparams: {}\n",
        c.depth,
        c.base_channels,
        c.num_classes,
        model.seed(),
        params.len()
    );
    for p in params.iter() {
        let dims: Vec<String> = p.value().shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("param: {} {}\n", p.name(), dims.join(" ")));
    }
    header.push_str(&format!("sha256: {}\n\n", sha256_hex(&payload)));
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<UNet, FormatError> {
    let (header, payload) = split_header(bytes, CHECKPOINT_MAGIC)?;
    let mut fields = HeaderFields::parse(header, CHECKPOINT_MAGIC)?;
    let version = fields.version()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let graph = fields.take("graph")?;
    if graph != GRAPH {
        return Err(FormatError::Header(format!("unknown graph {graph:?}")));
    }
    let config = NetConfig {
        depth: fields.take_parsed("depth")?,
        base_channels: fields.take_parsed("base_channels")?,
        num_classes: fields.take_parsed("num_classes")?,
    };
    let seed: u64 = fields.take_parsed("seed")?;
    let count: usize = fields.take_parsed("params")?;
    let mut declared = Vec::new();
    let mut total = 0usize;
    for _ in 0..count {
        let line = fields.take("param")?;
        let (name, dims) = line
            .split_once(' ')
            .ok_or_else(|| FormatError::Header(format!("bad param line {line:?}")))?;
        let shape = parse_shape(dims)?;
        total = total
            .checked_add(element_count(&shape)?)
            .filter(|&t| t <= MAX_ELEMENTS)
            .ok_or_else(|| FormatError::Header("checkpoint too large".into()))?;
        declared.push((name.to_string(), shape));
    }
    let digest = fields.take("sha256")?;
    fields.finish()?;

    let expected = total * 8;
    if payload.len() < expected {
        return Err(FormatError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::TrailingData(payload.len() - expected));
    }
    if sha256_hex(payload) != digest {
        return Err(FormatError::Checksum);
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut params = ParamSet::new();
    for (name, shape) in declared {
        let n = shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(n).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| FormatError::Content(e.to_string()))?;
        params.add(name, tensor);
    }
    UNet::from_params(config, seed, params).map_err(|e| FormatError::Content(e.to_string()))
}

pub fn save_checkpoint(model: &UNet, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint(path: &Path) -> Result<UNet> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(FormatError::MissingFile(path.to_path_buf()).into())
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    Ok(decode_checkpoint(&bytes)?)
}
