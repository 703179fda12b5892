//! Model checkpoints. The binary form is one JSON manifest line followed by
//! every parameter as little-endian f64 in manifest order; the text form is
//! a single JSON document. Both round-trip bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::{Model, ModelConfig, Strategy};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "fairfuse-checkpoint";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointFormat {
    Binary,
    Json,
}

impl CheckpointFormat {
    /// `.json` selects the text form; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Binary,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    strategy: Strategy,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

fn manifest(model: &Model, inline: bool) -> Manifest {
    Manifest {
        format: MAGIC.to_string(),
        version: CHECKPOINT_VERSION,
        strategy: model.strategy,
        config: model.config.clone(),
        params: model
            .params
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: inline.then(|| t.data().to_vec()),
            })
            .collect(),
    }
}

pub fn write_checkpoint<W: Write>(model: &Model, format: CheckpointFormat, w: &mut W) -> Result<()> {
    match format {
        CheckpointFormat::Json => {
            serde_json::to_writer(&mut *w, &manifest(model, true))?;
            w.write_all(b"\n")?;
        }
        CheckpointFormat::Binary => {
            serde_json::to_writer(&mut *w, &manifest(model, false))?;
            w.write_all(b"\n")?;
            for (_, t) in model.params.iter() {
                for v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, CheckpointFormat::from_path(path), &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut reader: R, format: CheckpointFormat) -> Result<Model> {
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let manifest: Manifest =
        serde_json::from_str(line.trim_end()).map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.format != MAGIC {
        return Err(Error::Checkpoint(format!("not a checkpoint (format `{}`)", manifest.format)));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.version
        )));
    }
    manifest
        .config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
    let expected = Model::expected_layout(manifest.strategy, &manifest.config)?;
    let names: Vec<&str> = manifest.params.iter().map(|p| p.name.as_str()).collect();
    let expected_names: Vec<&str> = expected.names().collect();
    if names != expected_names {
        return Err(Error::Checkpoint(format!(
            "parameter names do not match a `{}` model: found {names:?}, expected {expected_names:?}",
            manifest.strategy
        )));
    }

    let mut params = ParamStore::new();
    for entry in manifest.params {
        let want = expected.get(&entry.name).expect("names checked").shape();
        if entry.shape != want {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has shape {:?}, expected {want:?}",
                entry.name, entry.shape
            )));
        }
        let n: usize = want.iter().product();
        let values = match format {
            CheckpointFormat::Json => entry
                .values
                .ok_or_else(|| Error::Checkpoint(format!("parameter `{}` has no values", entry.name)))?,
            CheckpointFormat::Binary => {
                let mut buf = vec![0u8; 8 * n];
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("payload truncated in `{}`", entry.name)))?;
                buf.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect()
            }
        };
        if values.len() != n {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has {} values, expected {n}",
                entry.name,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter `{}` holds non-finite values", entry.name)));
        }
        params.insert(entry.name, Tensor::new(want, values)?);
    }
    if format == CheckpointFormat::Binary {
        let mut rest = Vec::new();
        reader.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after payload", rest.len())));
        }
    }
    Ok(Model {
        strategy: manifest.strategy,
        config: manifest.config,
        params,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let reader = BufReader::new(File::open(path)?);
    read_checkpoint(reader, CheckpointFormat::from_path(path))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::{generate_synthetic, SynthSpec};
    use crate::training::ArchConfig;

    fn model(strategy: Strategy) -> Model {
        let splits = generate_synthetic(&SynthSpec::default()).unwrap();
        let config = ModelConfig::new(&splits.train.header, &ArchConfig::default()).unwrap();
        Model::init(strategy, config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    fn roundtrip(m: &Model, format: CheckpointFormat) -> Result<Model> {
        let mut buf = Vec::new();
        write_checkpoint(m, format, &mut buf).unwrap();
        read_checkpoint(&buf[..], format)
    }

    #[test]
    fn bit_exact_in_both_formats() {
        for s in Strategy::ALL {
            let m = model(s);
            for f in [CheckpointFormat::Binary, CheckpointFormat::Json] {
                let back = roundtrip(&m, f).unwrap();
                assert_eq!(back.strategy, m.strategy);
                for ((_, a), (_, b)) in m.params.iter().zip(back.params.iter()) {
                    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                    assert_eq!(bits(a), bits(b));
                }
            }
        }
    }

    #[test]
    fn format_from_extension() {
        assert_eq!(CheckpointFormat::from_path(Path::new("m.json")), CheckpointFormat::Json);
        assert_eq!(CheckpointFormat::from_path(Path::new("m.ckpt")), CheckpointFormat::Binary);
    }

    #[test]
    fn rejects_tampered_names_and_versions() {
        let m = model(Strategy::Itm);
        let mut buf = Vec::new();
        write_checkpoint(&m, CheckpointFormat::Json, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let renamed = text.replacen("itm.head.match_linear.bias", "itm.head.other.bias", 1);
        assert!(matches!(read_checkpoint(renamed.as_bytes(), CheckpointFormat::Json), Err(Error::Checkpoint(_))));
        let versioned = text.replacen("\"version\":1", "\"version\":99", 1);
        let err = read_checkpoint(versioned.as_bytes(), CheckpointFormat::Json).unwrap_err();
        assert!(err.to_string().contains("version 99"));
        let restrat = text.replacen("\"strategy\":\"itm\"", "\"strategy\":\"fusion\"", 1);
        assert!(read_checkpoint(restrat.as_bytes(), CheckpointFormat::Json).is_err());
    }

    #[test]
    fn rejects_truncated_and_padded_payloads() {
        let m = model(Strategy::Baseline);
        let mut buf = Vec::new();
        write_checkpoint(&m, CheckpointFormat::Binary, &mut buf).unwrap();
        assert!(read_checkpoint(&buf[..buf.len() - 3], CheckpointFormat::Binary).is_err());
        let mut padded = buf.clone();
        padded.push(0);
        assert!(read_checkpoint(&padded[..], CheckpointFormat::Binary).is_err());
    }
}
