//! Parameter checkpoint file: a one-line JSON header (architecture tag,
//! shape descriptors, parameter count) followed by the raw little-endian
//! 64-bit float parameter vector.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneSpec};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    spec: BackboneSpec,
    param_len: usize,
}

const KIND: &str = "backbone-checkpoint";

pub fn save_checkpoint(path: impl AsRef<Path>, backbone: &Backbone) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    let header = Header {
        kind: KIND.to_string(),
        version: 1,
        spec: *backbone.spec(),
        param_len: backbone.param_len(),
    };
    let line = serde_json::to_string(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
    let io = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    writer.write_all(line.as_bytes()).map_err(io)?;
    writer.write_all(b"\n").map_err(io)?;
    for &p in backbone.params() {
        writer.write_f64::<LittleEndian>(p).map_err(io)?;
    }
    writer.flush().map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Backbone> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader
        .read_line(&mut line)
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
    if header.kind != KIND {
        return Err(Error::Checkpoint(format!(
            "unexpected file kind `{}`",
            header.kind
        )));
    }
    if header.param_len != header.spec.param_len() {
        return Err(Error::Checkpoint(format!(
            "header says {} parameters but the shape implies {}",
            header.param_len,
            header.spec.param_len()
        )));
    }
    let mut params = vec![0.0; header.param_len];
    reader
        .read_f64_into::<LittleEndian>(&mut params)
        .map_err(|e| Error::Checkpoint(format!("truncated parameter vector: {e}")))?;
    let mut tail = Vec::new();
    reader
        .read_to_end(&mut tail)
        .map_err(|e| Error::Checkpoint(format!("trailing read: {e}")))?;
    if !tail.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected trailing bytes",
            tail.len()
        )));
    }
    let mut backbone = Backbone::zeros(header.spec);
    backbone.set_params(&params)?;
    Ok(backbone)
}
