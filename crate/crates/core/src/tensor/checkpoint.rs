//! `CKPT v1` text checkpoints.
//!
//! ```text
//! CKPT v1
//! META key=value key=value ...
//! <name> <d0>x<d1>... <base64 of little-endian f64 values>
//! ```
//!
//! Zero-dimensional tensors use the shape token `scalar`.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "CKPT v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn shape_token(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("x")
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str("META");
    for (k, v) in &ckpt.meta {
        debug_assert!(!k.contains([' ', '=']) && !v.contains(' '));
        out.push_str(&format!(" {k}={v}"));
    }
    out.push('\n');
    for (name, t) in &ckpt.tensors {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        out.push_str(&format!(
            "{name} {} {}\n",
            shape_token(t.shape()),
            STANDARD.encode(bytes)
        ));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(err(1, "missing `CKPT v1` header")),
    }
    let mut ckpt = Checkpoint::default();
    for (i, line) in lines {
        let lineno = i + 1;
        let mut tok = line.split_whitespace();
        let Some(first) = tok.next() else { continue };
        if first == "META" {
            for kv in tok {
                let (k, v) = kv.split_once('=').ok_or_else(|| err(lineno, "bad META entry"))?;
                ckpt.meta.push((k.to_string(), v.to_string()));
            }
            continue;
        }
        let (Some(shape), Some(b64), None) = (tok.next(), tok.next(), tok.next()) else {
            return Err(err(lineno, "expected `<name> <shape> <base64>`"));
        };
        let shape: Vec<usize> = if shape == "scalar" {
            vec![]
        } else {
            shape
                .split('x')
                .map(|d| d.parse().map_err(|_| err(lineno, "bad shape")))
                .collect::<Result<_>>()?
        };
        let bytes = STANDARD
            .decode(b64)
            .map_err(|_| err(lineno, "bad base64 payload"))?;
        if bytes.len() % 8 != 0 {
            return Err(err(lineno, "payload is not a whole number of f64"));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| err(lineno, "shape/payload mismatch"))?;
        ckpt.tensors.push((first.to_string(), t));
    }
    Ok(ckpt)
}
