//! Versioned binary checkpoints: a JSON header (format version, model
//! config, tokenizer vocabulary) followed by a flat name -> f64 matrix
//! map. Round trips are bit-exact.
//!
//! Layout: magic `MFCK`, format version u32, header length u64, header
//! JSON bytes, parameter count u64, then per parameter (sorted by name):
//! name length u16 + UTF-8 name, rows u32, cols u32, row-major f64 LE data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{Model, Params};
use crate::tokenizer::Vocab;

const MAGIC: &[u8; 4] = b"MFCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocab: Vec<String>,
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(format!("create {}", parent.display()), e))?;
        }
    }
    let file =
        File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(format!("write {}", path.display()), e);

    let header = Header {
        version: VERSION,
        config: model.config.clone(),
        vocab: model.vocab.words().to_vec(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::json("serialize checkpoint header", e))?;

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header_json).map_err(io)?;
    w.write_all(&(model.params.len() as u64).to_le_bytes()).map_err(io)?;
    for (name, value) in model.params.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(bytes).map_err(io)?;
        let (rows, cols) = value.dim();
        w.write_all(&(rows as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(cols as u32).to_le_bytes()).map_err(io)?;
        for &x in value.iter() {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::io(format!("read {}", path.display()), e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let mut v = [0u8; 4];
    r.read_exact(&mut v).map_err(io)?;
    let version = u32::from_le_bytes(v);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8).map_err(io)?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes).map_err(io)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::json("parse checkpoint header", e))?;

    r.read_exact(&mut len8).map_err(io)?;
    let n_params = u64::from_le_bytes(len8) as usize;
    let mut params = Params::default();
    for _ in 0..n_params {
        let mut len2 = [0u8; 2];
        r.read_exact(&mut len2).map_err(io)?;
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
        let mut dim = [0u8; 4];
        r.read_exact(&mut dim).map_err(io)?;
        let rows = u32::from_le_bytes(dim) as usize;
        r.read_exact(&mut dim).map_err(io)?;
        let cols = u32::from_le_bytes(dim) as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for x in data.iter_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            *x = f64::from_le_bytes(buf);
        }
        let m = Mat::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        params.insert(name, m);
    }

    let mut vocab = Vocab::from_words(header.vocab);
    vocab.rebuild_index();
    Model::from_parts(header.config, vocab, params)
}
