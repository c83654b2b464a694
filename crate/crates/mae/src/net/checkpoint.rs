//! Checkpoint files: a text header (format version, D, M, layer sizes,
//! optimizer step) followed by little-endian f64 data — per layer the
//! row-major weight matrix then the bias vector, then the Adam first and
//! second moments in the same layout.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{AdamState, LayerSpec, Mlp, NetworkParams};
use crate::error::{Error, Result};

const MAGIC: &str = "mae-checkpoint";
const VERSION: u32 = 1;
const HEADER_END: &str = "---";

fn push_matrix_row_major(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

fn push_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    for &x in v.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    let sizes = params.spec.sizes();
    let mut header = String::new();
    header.push_str(&format!("{MAGIC} {VERSION}\n"));
    header.push_str(&format!("joints {}\n", params.spec.joint_count));
    header.push_str(&format!("muscles {}\n", params.spec.muscle_count));
    header.push_str("sizes");
    for s in sizes {
        header.push_str(&format!(" {s}"));
    }
    header.push('\n');
    header.push_str(&format!("adam_step {}\n", params.adam.step));
    header.push_str(HEADER_END);
    header.push('\n');

    let mut body = Vec::new();
    for layer in 0..params.mlp.layer_count() {
        push_matrix_row_major(&mut body, &params.mlp.weights[layer]);
        push_vector(&mut body, &params.mlp.biases[layer]);
    }
    for layer in 0..params.mlp.layer_count() {
        push_matrix_row_major(&mut body, &params.adam.m_weights[layer]);
        push_vector(&mut body, &params.adam.m_biases[layer]);
    }
    for layer in 0..params.mlp.layer_count() {
        push_matrix_row_major(&mut body, &params.adam.v_weights[layer]);
        push_vector(&mut body, &params.adam.v_biases[layer]);
    }

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(header.as_bytes())?;
    file.write_all(&body)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn f64(&mut self) -> Result<f64> {
        if self.pos + 8 > self.bytes.len() {
            return Err(Error::Checkpoint("truncated float data".into()));
        }
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&self.bytes[self.pos..self.pos + 8]);
        self.pos += 8;
        Ok(f64::from_le_bytes(buf))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }

    fn vector(&mut self, len: usize) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(len);
        for i in 0..len {
            v[i] = self.f64()?;
        }
        Ok(v)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let bytes = fs::read(path)?;

    // split the text header from the binary body at the terminator line
    let needle = format!("{HEADER_END}\n");
    let split = bytes
        .windows(needle.len())
        .position(|w| w == needle.as_bytes())
        .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
    let header = std::str::from_utf8(&bytes[..split])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let body_start = split + needle.len();

    let mut joints = None;
    let mut muscles = None;
    let mut sizes: Option<Vec<usize>> = None;
    let mut adam_step = 0u64;
    for (i, line) in header.lines().enumerate() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some(MAGIC) => {
                let v: u32 = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Checkpoint("bad version line".into()))?;
                if v != VERSION {
                    return Err(Error::Checkpoint(format!("unsupported version {v}")));
                }
            }
            Some("joints") => joints = tok.next().and_then(|t| t.parse::<usize>().ok()),
            Some("muscles") => muscles = tok.next().and_then(|t| t.parse::<usize>().ok()),
            Some("sizes") => {
                sizes = Some(
                    tok.map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::Checkpoint("bad sizes line".into()))?,
                )
            }
            Some("adam_step") => {
                adam_step = tok
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Checkpoint("bad adam_step line".into()))?
            }
            Some(other) => {
                return Err(Error::Checkpoint(format!("unknown header line {i}: {other}")))
            }
            None => {}
        }
    }
    let joints = joints.ok_or_else(|| Error::Checkpoint("missing joints".into()))?;
    let muscles = muscles.ok_or_else(|| Error::Checkpoint("missing muscles".into()))?;
    let spec = LayerSpec::new(joints, muscles)?;
    let expected = spec.sizes().to_vec();
    let sizes = sizes.ok_or_else(|| Error::Checkpoint("missing sizes".into()))?;
    if sizes != expected {
        return Err(Error::Checkpoint(format!(
            "sizes {sizes:?} do not match D={joints}, M={muscles} (expected {expected:?})"
        )));
    }

    let template = NetworkParams::new(spec, 0);
    let mut mlp = Mlp {
        sizes: template.mlp.sizes.clone(),
        activations: template.mlp.activations.clone(),
        weights: Vec::new(),
        biases: Vec::new(),
    };
    let mut reader = Reader { bytes: &bytes, pos: body_start };
    for layer in 0..template.mlp.layer_count() {
        let (rows, cols) = (expected[layer + 1], expected[layer]);
        mlp.weights.push(reader.matrix(rows, cols)?);
        mlp.biases.push(reader.vector(rows)?);
    }
    let mut adam = AdamState::zeros_like(&mlp);
    adam.step = adam_step;
    for layer in 0..mlp.layer_count() {
        let (rows, cols) = (expected[layer + 1], expected[layer]);
        adam.m_weights[layer] = reader.matrix(rows, cols)?;
        adam.m_biases[layer] = reader.vector(rows)?;
    }
    for layer in 0..mlp.layer_count() {
        let (rows, cols) = (expected[layer + 1], expected[layer]);
        adam.v_weights[layer] = reader.matrix(rows, cols)?;
        adam.v_biases[layer] = reader.vector(rows)?;
    }
    if reader.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameter data",
            bytes.len() - reader.pos
        )));
    }
    Ok(NetworkParams { spec, mlp, adam })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut params = NetworkParams::new(LayerSpec::new(3, 4).unwrap(), 77);
        params.adam.step = 123;
        params.adam.m_weights[2][(1, 1)] = 0.5;
        params.adam.v_biases[4][0] = 2.25;

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
    }

    #[test]
    fn header_shape_mismatch_is_rejected() {
        let params = NetworkParams::new(LayerSpec::new(3, 4).unwrap(), 77);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&params, &path).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..100]).to_string();
        let corrupted = text.replace("muscles 4", "muscles 5");
        bytes.splice(..100, corrupted.into_bytes());
        let bad = dir.path().join("bad.ckpt");
        fs::write(&bad, &bytes).unwrap();
        assert!(load_checkpoint(&bad).is_err());
    }

    #[test]
    fn truncated_body_is_rejected() {
        let params = NetworkParams::new(LayerSpec::new(2, 2).unwrap(), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &bytes[..bytes.len() - 16]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::Checkpoint(_))));
    }
}
