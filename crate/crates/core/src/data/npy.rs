//! Minimal NPY (v1.0) reader/writer for little-endian f32 arrays in C
//! order. Frame stacks are stored as `(T, H, W, C)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

pub fn write_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::Input(format!(
            "npy shape {shape:?} does not match {} elements",
            data.len()
        )));
    }
    let shape_str = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!("({})", shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_str}, }}"
    );
    // pad so magic + version + len + header is a multiple of 64, newline-terminated
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    header.push_str(&" ".repeat(pad));
    header.push('\n');

    let file = File::create(path).map_err(|e| Error::io(format!("create {}", path.display()), e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(format!("write {}", path.display()), e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&[1u8, 0u8]).map_err(io)?;
    w.write_all(&(header.len() as u16).to_le_bytes()).map_err(io)?;
    w.write_all(header.as_bytes()).map_err(io)?;
    for &x in data {
        w.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn read_f32(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {}", path.display()), e))?;
    let mut r = BufReader::new(file);
    let io = |e: std::io::Error| Error::io(format!("read {}", path.display()), e);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(io)?;
    if magic != MAGIC {
        return Err(Error::Input(format!("{} is not an npy file", path.display())));
    }
    let mut version = [0u8; 2];
    r.read_exact(&mut version).map_err(io)?;
    let header_len = match version[0] {
        1 => {
            let mut b = [0u8; 2];
            r.read_exact(&mut b).map_err(io)?;
            u16::from_le_bytes(b) as usize
        }
        2 | 3 => {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            u32::from_le_bytes(b) as usize
        }
        v => return Err(Error::Input(format!("unsupported npy version {v}"))),
    };
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io)?;
    let header = String::from_utf8_lossy(&header);
    if !header.contains("'<f4'") {
        return Err(Error::Input(format!("{}: only <f4 npy supported", path.display())));
    }
    if header.contains("'fortran_order': True") {
        return Err(Error::Input(format!("{}: fortran order unsupported", path.display())));
    }
    let shape = parse_shape(&header)
        .ok_or_else(|| Error::Input(format!("{}: malformed npy header {header:?}", path.display())))?;
    let count: usize = shape.iter().product();
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw).map_err(io)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((shape, data))
}

fn parse_shape(header: &str) -> Option<Vec<usize>> {
    let start = header.find("'shape':")? + "'shape':".len();
    let open = header[start..].find('(')? + start + 1;
    let close = header[open..].find(')')? + open;
    let inner = &header[open..close];
    let mut out = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(part.parse().ok()?);
    }
    Some(out)
}
