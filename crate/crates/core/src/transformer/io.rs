//! Model persistence: a self-describing binary blob with a version byte and
//! a shape-tagged parameter list. The reader treats input as untrusted:
//! every length is bounds-checked before allocation.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trace::Standardizer;

use super::tensor::Tensor;
use super::{Informer, TrainedModel, TransformerConfig};

const MAGIC: &[u8; 4] = b"DMCT";
const VERSION: u8 = 1;
/// Upper bound on a single parameter tensor (elements).
const MAX_TENSOR_ELEMS: u64 = 1 << 24;
const MAX_PARAMS: u32 = 4096;
const MAX_NAME_LEN: u16 = 512;

pub fn save_model(trained: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model_to_bytes(trained);
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model_bytes(&bytes)
}

pub fn model_to_bytes(trained: &TrainedModel) -> Vec<u8> {
    let cfg = &trained.model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for v in [
        cfg.d_model,
        cfg.n_heads,
        cfg.enc_layers,
        cfg.dec_layers,
        cfg.d_ff,
        cfg.seq_len,
        cfg.label_len,
        cfg.pred_len,
        cfg.batch_size,
        cfg.epochs,
        cfg.patience,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [
        cfg.sampling_factor_c,
        cfg.dropout,
        cfg.learning_rate,
        trained.standardizer.mean,
        trained.standardizer.std,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());

    let params = &trained.model.params;
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.names.iter().zip(&params.tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rows as u32).to_le_bytes());
        out.extend_from_slice(&(tensor.cols as u32).to_le_bytes());
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::parse(
                self.pos,
                format!("truncated model blob: need {n} bytes at offset {}", self.pos),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a model blob. Malformed or oversized input is rejected without
/// unbounded allocation.
pub fn load_model_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::parse(0, "bad magic, not a model blob"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }

    let mut dims = [0usize; 11];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let [d_model, n_heads, enc_layers, dec_layers, d_ff, seq_len, label_len, pred_len, batch_size, epochs, patience] =
        dims;
    let sampling_factor_c = r.f64()?;
    let dropout = r.f64()?;
    let learning_rate = r.f64()?;
    let std_mean = r.f64()?;
    let std_std = r.f64()?;
    let seed = r.u64()?;

    for (name, v) in [
        ("sampling_factor_c", sampling_factor_c),
        ("dropout", dropout),
        ("learning_rate", learning_rate),
        ("standardizer mean", std_mean),
        ("standardizer std", std_std),
    ] {
        if !v.is_finite() {
            return Err(Error::parse(r.pos, format!("non-finite {name}")));
        }
    }
    if !(std_std > 0.0) {
        return Err(Error::parse(r.pos, "standardizer std must be > 0"));
    }

    let config = TransformerConfig {
        d_model,
        n_heads,
        enc_layers,
        dec_layers,
        d_ff,
        sampling_factor_c,
        seq_len,
        label_len,
        pred_len,
        dropout,
        learning_rate,
        batch_size,
        epochs,
        patience,
        seed,
        max_batches_per_epoch: None,
        check_finite: true,
    };
    config.validate()?;
    // reject configs whose parameter tensors would be degenerate or huge
    if d_model > 4096 || d_ff > 65536 || enc_layers > 64 || dec_layers > 64 {
        return Err(Error::parse(r.pos, "model dimensions out of range"));
    }

    let mut model = Informer::new(config)?;

    let n_params = r.u32()?;
    if n_params > MAX_PARAMS {
        return Err(Error::parse(r.pos, format!("{n_params} parameters")));
    }
    if n_params as usize != model.params.len() {
        return Err(Error::parse(
            r.pos,
            format!(
                "blob has {n_params} parameters, config implies {}",
                model.params.len()
            ),
        ));
    }
    for idx in 0..n_params as usize {
        let name_len = r.u16()?;
        if name_len > MAX_NAME_LEN {
            return Err(Error::parse(r.pos, "parameter name too long"));
        }
        let name = std::str::from_utf8(r.take(name_len as usize)?)
            .map_err(|_| Error::parse(r.pos, "parameter name not utf-8"))?;
        if name != model.params.names[idx] {
            return Err(Error::parse(
                r.pos,
                format!(
                    "parameter {idx} named `{name}`, expected `{}`",
                    model.params.names[idx]
                ),
            ));
        }
        let rows = r.u32()? as u64;
        let cols = r.u32()? as u64;
        let expected = model.params.tensors[idx].shape();
        if rows.saturating_mul(cols) > MAX_TENSOR_ELEMS {
            return Err(Error::parse(r.pos, "parameter tensor too large"));
        }
        if (rows as usize, cols as usize) != expected {
            return Err(Error::parse(
                r.pos,
                format!("parameter `{name}` is {rows}x{cols}, expected {expected:?}"),
            ));
        }
        let count = (rows * cols) as usize;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let v = r.f64()?;
            if !v.is_finite() {
                return Err(Error::parse(r.pos, format!("non-finite weight in `{name}`")));
            }
            data.push(v);
        }
        model.params.tensors[idx] = Tensor::from_vec(rows as usize, cols as usize, data)?;
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after parameter list"));
    }

    Ok(TrainedModel {
        model,
        standardizer: Standardizer {
            mean: std_mean,
            std: std_std,
        },
    })
}
