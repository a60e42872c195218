//! On-disk layout shared by datasets and model checkpoints: a directory with
//! a `meta.json` plus one flat little-endian binary file per array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamSet;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

pub fn write_f32(path: &Path, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &x in data {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

pub fn write_f64(path: &Path, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_f64(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_i64(path: &Path, data: &[i64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_i64(path: &Path) -> Result<Vec<i64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Element type of a saved array, recorded as the file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    /// Exact copies, used for resumable training state.
    F64,
}

impl Dtype {
    fn extension(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

fn file_name_for(name: &str, dtype: Dtype) -> String {
    format!("{}.{}", name.replace(['/', '.'], "_"), dtype.extension())
}

/// Writes one array; the returned entry goes into the caller's metadata.
pub fn save_array(
    dir: &Path,
    name: &str,
    shape: Vec<usize>,
    data: &[f64],
    dtype: Dtype,
) -> Result<ArrayEntry> {
    let file = file_name_for(name, dtype);
    match dtype {
        Dtype::F32 => write_f32(&dir.join(&file), data)?,
        Dtype::F64 => write_f64(&dir.join(&file), data)?,
    }
    Ok(ArrayEntry {
        name: name.to_owned(),
        shape,
        file,
    })
}

/// Reads an array written by [`save_array`], checking its element count.
pub fn load_array(dir: &Path, entry: &ArrayEntry) -> Result<Vec<f64>> {
    let path = dir.join(&entry.file);
    let data = if entry.file.ends_with(".f64") {
        read_f64(&path)?
    } else {
        read_f32(&path)?
    };
    let n: usize = entry.shape.iter().product();
    if data.len() != n {
        return Err(Error::Checkpoint(format!(
            "{}: {} values, expected {n}",
            entry.file,
            data.len()
        )));
    }
    Ok(data)
}

/// Writes every tensor of `params` as float32 and returns the array table
/// for the caller's metadata.
pub fn save_params<P: ParamSet>(dir: &Path, params: &P) -> Result<Vec<ArrayEntry>> {
    save_params_as(dir, params, Dtype::F32)
}

pub fn save_params_as<P: ParamSet>(
    dir: &Path,
    params: &P,
    dtype: Dtype,
) -> Result<Vec<ArrayEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for t in params.tensors() {
        let file = file_name_for(&t.name, dtype);
        match dtype {
            Dtype::F32 => write_f32(&dir.join(&file), t.data)?,
            Dtype::F64 => write_f64(&dir.join(&file), t.data)?,
        }
        entries.push(ArrayEntry {
            name: t.name,
            shape: t.shape,
            file,
        });
    }
    Ok(entries)
}

/// Loads tensors into an already-shaped `params`, checking names and shapes.
pub fn load_params<P: ParamSet>(dir: &Path, entries: &[ArrayEntry], params: &mut P) -> Result<()> {
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != entries.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} arrays, metadata lists {}",
            expected.len(),
            entries.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(entries) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Shape {
                what: format!("{} (checkpoint has {})", name, entry.name),
                expected: shape.clone(),
                got: entry.shape.clone(),
            });
        }
    }
    for (slot, entry) in params.tensors_mut().into_iter().zip(entries) {
        let data = load_array(dir, entry)?;
        if data.len() != slot.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} values, expected {}",
                entry.file,
                data.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(&data);
    }
    Ok(())
}

/// SHA-256 over every regular file in `dir` (sorted by name, recursive).
pub fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel)).map_err(|e| Error::io(dir.join(&rel), e))?;
        hasher.update(rel.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
