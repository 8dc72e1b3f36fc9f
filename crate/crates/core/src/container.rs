//! On-disk models: a JSON manifest next to one little-endian complex128
//! binary file per core, plus raw vector files in the same encoding.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dense::{DenseMatrix, C64};
use crate::error::{Error, Result};
use crate::init::LowRankPair;
use crate::network::{ButterflyNetwork, Core, QttNetwork};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreFile {
    pub file: String,
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub levels: usize,
    pub leaf: usize,
    pub rank: usize,
    pub cores: Vec<CoreFile>,
}

/// Any model the tools can store and evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Butterfly(ButterflyNetwork),
    Qtt(QttNetwork),
    LowRank(LowRankPair),
}

impl Model {
    pub fn format(&self) -> &'static str {
        match self {
            Model::Butterfly(_) => "butterfly",
            Model::Qtt(_) => "qtt",
            Model::LowRank(_) => "lowrank",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Model::Butterfly(net) => net.n(),
            Model::Qtt(net) => net.n(),
            Model::LowRank(pair) => pair.n(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> Result<C64> {
        let n = self.n();
        if i >= n || j >= n {
            return Err(Error::IndexOutOfRange {
                index: i.max(j),
                bound: n,
            });
        }
        match self {
            Model::Butterfly(net) => net.reconstruct_entry(i, j),
            Model::Qtt(net) => net.reconstruct_entry(i, j),
            Model::LowRank(pair) => Ok(pair.entry(i, j)),
        }
    }

    pub fn to_dense(&self) -> Result<DenseMatrix> {
        match self {
            Model::Butterfly(net) => net.reconstruct_dense(),
            Model::Qtt(net) => net.reconstruct_dense(),
            Model::LowRank(pair) => pair.to_dense(),
        }
    }

    fn parts(&self) -> (usize, usize, usize, Vec<Core>) {
        match self {
            Model::Butterfly(net) => (net.levels, net.leaf, net.rank, net.cores.clone()),
            Model::Qtt(net) => (net.levels, net.leaf, net.rank, net.cores.clone()),
            Model::LowRank(pair) => {
                let net = pair
                    .clone()
                    .into_network()
                    .expect("pair shapes are consistent");
                (0, net.leaf, net.rank, net.cores)
            }
        }
    }
}

fn core_path(manifest: &Path, k: usize) -> (String, PathBuf) {
    let stem = manifest
        .file_stem()
        .map_or_else(|| "model".to_string(), |s| s.to_string_lossy().into_owned());
    let name = format!("{stem}.core{k}.bin");
    let path = manifest.parent().unwrap_or(Path::new("")).join(&name);
    (name, path)
}

pub fn encode_complex(values: &[C64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

pub fn decode_complex(bytes: &[u8]) -> Result<Vec<C64>> {
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of complex128 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect())
}

/// Writes the manifest to `path` and the cores beside it.
pub fn save_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let (levels, leaf, rank, cores) = model.parts();
    let mut files = Vec::with_capacity(cores.len());
    for (k, core) in cores.iter().enumerate() {
        let (name, core_file) = core_path(path, k);
        fs::write(&core_file, encode_complex(&core.data)).map_err(|e| Error::io(&core_file, e))?;
        files.push(CoreFile {
            file: name,
            slices: core.slices,
            rows: core.rows,
            cols: core.cols,
        });
    }
    let manifest = Manifest {
        format: model.format().to_string(),
        levels,
        leaf,
        rank,
        cores: files,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut cores = Vec::with_capacity(manifest.cores.len());
    for entry in &manifest.cores {
        let file = dir.join(&entry.file);
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        let data = decode_complex(&bytes)?;
        cores.push(Core::from_data(entry.slices, entry.rows, entry.cols, data)?);
    }
    let (levels, leaf, rank) = (manifest.levels, manifest.leaf, manifest.rank);
    match manifest.format.as_str() {
        "butterfly" => Ok(Model::Butterfly(ButterflyNetwork::from_cores(
            levels, leaf, rank, cores,
        )?)),
        "qtt" => Ok(Model::Qtt(QttNetwork::from_cores(
            levels, leaf, rank, cores,
        )?)),
        "lowrank" => {
            let net = ButterflyNetwork::from_cores(0, leaf, rank, cores)?;
            let mut cores = net.cores;
            let b = cores.pop().expect("two cores");
            let a = cores.pop().expect("two cores");
            Ok(Model::LowRank(LowRankPair::new(
                DenseMatrix::from_vec(leaf, rank, a.data)?,
                DenseMatrix::from_vec(leaf, rank, b.data)?,
            )?))
        }
        other => Err(Error::Format(format!("unknown model format '{other}'"))),
    }
}

pub fn save_vector(path: impl AsRef<Path>, v: &[C64]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_complex(v)).map_err(|e| Error::io(path, e))
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<C64>> {
    let path = path.as_ref();
    decode_complex(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::random_network;

    #[test]
    fn roundtrip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let models = [
            Model::Butterfly(random_network(2, 2, 2, 1, 1.0).unwrap()),
            Model::Qtt(QttNetwork::random(2, 2, 2, 1, 1.0).unwrap()),
            Model::LowRank(LowRankPair::random(6, 2, 1, 1.0)),
        ];
        for (k, m) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{k}.json"));
            save_model(&path, m).unwrap();
            assert_eq!(&load_model(&path).unwrap(), m);
        }
    }

    #[test]
    fn truncated_core_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_model(
            &path,
            &Model::Butterfly(random_network(1, 2, 1, 1, 1.0).unwrap()),
        )
        .unwrap();
        let core = dir.path().join("net.core0.bin");
        let bytes = std::fs::read(&core).unwrap();
        std::fs::write(&core, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_model(&path), Err(Error::Format(_))));
    }

    #[test]
    fn vectors_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bin");
        let v = vec![C64::new(1.5, -2.0), C64::new(0.0, 1e-300)];
        save_vector(&path, &v).unwrap();
        assert_eq!(load_vector(&path).unwrap(), v);
    }
}
