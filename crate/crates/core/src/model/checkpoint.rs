//! Checkpoint container: raw little-endian `f64` tensors in one binary file
//! plus a text manifest of `name\trows\tcols\tbyte_offset` lines.

use std::fs;
use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_BIN: &str = "params.bin";
pub const CHECKPOINT_MANIFEST: &str = "params.manifest";
const HEADER: &str = "# desmil checkpoint v1";

pub fn save_checkpoint(params: &ModelParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes = Vec::new();
    let mut manifest = format!("{HEADER}\n");
    for (name, m) in params.tensors() {
        manifest.push_str(&format!("{name}\t{}\t{}\t{}\n", m.rows(), m.cols(), bytes.len()));
        for v in m.as_slice() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin = dir.join(CHECKPOINT_BIN);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let man = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&man, manifest).map_err(|e| Error::io(&man, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelParams> {
    let man = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&man).map_err(|e| Error::io(&man, e))?;
    let bin = dir.join(CHECKPOINT_BIN);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;

    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Checkpoint(format!("{} lacks the manifest header", man.display())));
    }
    let mut tensors = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad manifest line {line:?}")))
        };
        if f.len() != 4 {
            return Err(Error::Checkpoint(format!("bad manifest line {line:?}")));
        }
        let (rows, cols, offset) = (parse(f[1])?, parse(f[2])?, parse(f[3])?);
        let end = offset + rows * cols * 8;
        let raw = bytes
            .get(offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of the data", f[0])))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((f[0].to_string(), Matrix::from_vec(rows, cols, data)?));
    }
    let mut take = |name: &str| -> Result<Matrix> {
        let pos = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        Ok(tensors.swap_remove(pos).1)
    };
    let params = ModelParams {
        items: take("items")?,
        positions: take("positions")?,
        w1: take("w1")?,
        w2: take("w2")?,
    };
    params.validate()?;
    Ok(params)
}
