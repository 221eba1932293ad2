//! Binary snapshots of trained model parameters.
//!
//! Layout, all integers little endian:
//!
//! ```text
//! magic   4 bytes  "FMXP"
//! version u8       1
//! kind    u8       0 = logistic, 1 = mlp
//! act     u8       0 = tanh, 1 = relu (0 for logistic)
//! input_dim  u32
//! hidden_dim u32   (0 for logistic)
//! count   u64      number of f64 values
//! values  count * f64
//! ```
//!
//! `count` is redundant with the architecture fields; the reader checks the
//! two agree so a truncated or mismatched file fails loudly instead of
//! producing a silently wrong model.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, ArchSpec, ModelParams};

const MAGIC: &[u8; 4] = b"FMXP";
const VERSION: u8 = 1;

fn arch_bytes(arch: &ArchSpec) -> (u8, u8, u32, u32) {
    match *arch {
        ArchSpec::Logistic { input_dim } => (0, 0, input_dim as u32, 0),
        ArchSpec::Mlp {
            input_dim,
            hidden_dim,
            activation,
        } => {
            let act = match activation {
                Activation::Tanh => 0,
                Activation::Relu => 1,
            };
            (1, act, input_dim as u32, hidden_dim as u32)
        }
    }
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (kind, act, input_dim, hidden_dim) = arch_bytes(params.arch());
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION, kind, act])?;
    w.write_all(&input_dim.to_le_bytes())?;
    w.write_all(&hidden_dim.to_le_bytes())?;
    w.write_all(&(params.values().len() as u64).to_le_bytes())?;
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, what: &str) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}

pub fn load_params(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
    );
    let mut head = [0u8; 7];
    r.read_exact(&mut head)
        .map_err(|_| bad(path, "file too short for header"))?;
    if &head[..4] != MAGIC {
        return Err(bad(path, "not a parameter snapshot (bad magic)"));
    }
    if head[4] != VERSION {
        return Err(bad(path, &format!("unsupported version {}", head[4])));
    }
    let kind = head[5];
    let act = head[6];
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| bad(path, "file too short for header"))?;
    let input_dim = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)
        .map_err(|_| bad(path, "file too short for header"))?;
    let hidden_dim = u32::from_le_bytes(u32buf) as usize;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)
        .map_err(|_| bad(path, "file too short for header"))?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let arch = match kind {
        0 => ArchSpec::Logistic { input_dim },
        1 => {
            let activation = match act {
                0 => Activation::Tanh,
                1 => Activation::Relu,
                _ => return Err(bad(path, &format!("unknown activation code {act}"))),
            };
            ArchSpec::Mlp {
                input_dim,
                hidden_dim,
                activation,
            }
        }
        _ => return Err(bad(path, &format!("unknown architecture code {kind}"))),
    };
    arch.validate().map_err(|e| bad(path, &e.to_string()))?;
    if count != arch.param_count() {
        return Err(bad(
            path,
            &format!(
                "value count {count} does not match architecture ({} expected)",
                arch.param_count()
            ),
        ));
    }

    let mut values = Vec::with_capacity(count);
    let mut f64buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut f64buf)
            .map_err(|_| bad(path, "file truncated inside values"))?;
        values.push(f64::from_le_bytes(f64buf));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(Error::Io)? != 0 {
        return Err(bad(path, "trailing bytes after values"));
    }
    ModelParams::new(arch, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // keep the dir alive by leaking it; tests are short-lived
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn roundtrip_is_bitwise_for_both_archs() {
        for arch in [
            ArchSpec::Logistic { input_dim: 5 },
            ArchSpec::Mlp {
                input_dim: 10,
                hidden_dim: 8,
                activation: Activation::Tanh,
            },
            ArchSpec::Mlp {
                input_dim: 3,
                hidden_dim: 4,
                activation: Activation::Relu,
            },
        ] {
            let params = model::init_params(arch, 1234).unwrap();
            let path = tmp("params.bin");
            save_params(&params, &path).unwrap();
            let back = load_params(&path).unwrap();
            assert_eq!(back.arch(), params.arch());
            assert_eq!(back.values(), params.values());
        }
    }

    #[test]
    fn truncated_file_rejected() {
        let arch = ArchSpec::Logistic { input_dim: 4 };
        let params = model::init_params(arch, 9).unwrap();
        let path = tmp("trunc.bin");
        save_params(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn wrong_magic_rejected() {
        let path = tmp("magic.bin");
        std::fs::write(&path, b"NOPE some junk bytes here").unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn count_mismatch_rejected() {
        let arch = ArchSpec::Logistic { input_dim: 4 };
        let params = model::init_params(arch, 9).unwrap();
        let path = tmp("count.bin");
        save_params(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // header: magic 4 + ver/kind/act 3 + input 4 + hidden 4 = 15; count at 15..23
        bytes[15] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }

    #[test]
    fn trailing_bytes_rejected() {
        let arch = ArchSpec::Logistic { input_dim: 2 };
        let params = model::init_params(arch, 1).unwrap();
        let path = tmp("tail.bin");
        save_params(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_params(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }
}
