//! `.fcw` weights files: magic `FCW1`, then one record per parameter tensor
//! `{u32 name_len, name, u8 dtype, u8 rank, u64 dims[rank], little-endian payload}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::params::layer_of;
use super::{DType, ParamStore, Real, SegModel, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FCW1";

pub fn encode_params<F: Real>(params: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + params.num_values() * F::DTYPE.size());
    out.extend_from_slice(MAGIC);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(F::DTYPE.code());
        out.push(4);
        for d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            match F::DTYPE {
                DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
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
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Weights(format!("truncated record at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decodes a weights file. Values are widened to `f64`, which is exact for both
/// stored dtypes.
pub fn decode_params(bytes: &[u8]) -> Result<ParamStore<f64>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Weights("bad magic bytes (expected FCW1)".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut params = ParamStore::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Weights("parameter name is not UTF-8".into()))?
            .to_string();
        let dtype = DType::from_code(r.u8()?).ok_or_else(|| Error::Weights(format!("{name}: unknown dtype")))?;
        let rank = r.u8()? as usize;
        if rank > 4 {
            return Err(Error::Weights(format!("{name}: rank {rank} > 4")));
        }
        let mut shape = [1usize; 4];
        for i in 0..rank {
            shape[4 - rank + i] = r.u64()? as usize;
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(dtype.size()).ok_or_else(|| Error::Weights(format!("{name}: size overflow")))?)?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        params.insert(name, Tensor::from_vec(shape, data)?);
    }
    Ok(params)
}

pub fn write_params<F: Real>(params: &ParamStore<F>, path: &Path) -> Result<()> {
    fs::write(path, encode_params(params)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: &Path) -> Result<ParamStore<f64>> {
    decode_params(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_weights<F: Real>(model: &SegModel<F>, path: &Path) -> Result<()> {
    write_params(model.params(), path)
}

/// Which layers a load filled from the file, left at their current (random)
/// initialization, or skipped because the model has no such layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub matched: Vec<String>,
    pub random_init: Vec<String>,
    pub ignored: Vec<String>,
}

impl LoadReport {
    pub fn all_matched(&self) -> bool {
        self.random_init.is_empty() && self.ignored.is_empty()
    }
}

/// Copies every layer whose parameters all appear in `stored` with equal shapes.
/// A same-named parameter with a different shape is an error naming the layer.
pub fn apply_params<F: Real>(model: &mut SegModel<F>, stored: &ParamStore<f64>) -> Result<LoadReport> {
    let mut by_layer: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for name in model.params().names() {
        by_layer.entry(layer_of(name)).or_default();
    }
    let model_names: Vec<String> = model.params().names().map(str::to_string).collect();
    for name in &model_names {
        by_layer.get_mut(layer_of(name)).expect("inserted").push(name);
    }

    let mut report = LoadReport::default();
    let mut updates = Vec::new();
    let layers: Vec<String> = model.param_layers().map(str::to_string).collect();
    for layer in &layers {
        let names = &by_layer[layer.as_str()];
        let mut complete = true;
        for &name in names {
            let cur = model.params().require(name)?;
            match stored.get(name) {
                Some(t) if t.shape() == cur.shape() => updates.push((name.to_string(), t.cast::<F>())),
                Some(t) => {
                    return Err(Error::Weights(format!(
                        "layer {layer}: {name} has shape {:?} in file, model expects {:?}",
                        t.shape(),
                        cur.shape()
                    )))
                }
                None => complete = false,
            }
        }
        if complete {
            report.matched.push(layer.clone());
        } else {
            report.random_init.push(layer.clone());
            updates.retain(|(n, _)| layer_of(n) != layer);
        }
    }
    let mut extra: Vec<String> = stored
        .names()
        .map(layer_of)
        .filter(|l| !by_layer.contains_key(l))
        .map(str::to_string)
        .collect();
    extra.dedup();
    report.ignored = extra;

    for (name, t) in updates {
        *model.params_mut().get_mut(&name).expect("model parameter") = t;
    }
    Ok(report)
}

pub fn load_weights<F: Real>(model: &mut SegModel<F>, path: &Path) -> Result<LoadReport> {
    apply_params(model, &read_params(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensornet::{build_segresnet, SegModelConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let model = build_segresnet::<f32>(SegModelConfig::reduced(), 5).unwrap();
        let bytes = encode_params(model.params());
        let back = decode_params(&bytes).unwrap().cast::<f32>();
        assert_eq!(&back, model.params());
        let m64 = build_segresnet::<f64>(SegModelConfig::reduced(), 5).unwrap();
        assert_eq!(&decode_params(&encode_params(m64.params())).unwrap(), m64.params());
    }

    #[test]
    fn missing_head_is_reported() {
        let src = build_segresnet::<f32>(SegModelConfig::reduced(), 1).unwrap();
        let mut stored = decode_params(&encode_params(src.params())).unwrap();
        let mut trimmed = ParamStore::new();
        for (n, t) in stored.iter_mut() {
            if !n.starts_with("head.") {
                trimmed.insert(n, t.clone());
            }
        }
        trimmed.insert("extra.layer.weight", Tensor::zeros([1, 1, 1, 1]));
        let mut dst = build_segresnet::<f32>(SegModelConfig::reduced(), 2).unwrap();
        let report = apply_params(&mut dst, &trimmed).unwrap();
        assert_eq!(report.random_init, vec!["head.norm", "head.conv"]);
        assert_eq!(report.ignored, vec!["extra.layer"]);
        assert_eq!(dst.params().get("enc.conv_init.weight"), src.params().get("enc.conv_init.weight"));
        assert_ne!(dst.params().get("head.conv.weight"), src.params().get("head.conv.weight"));
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let src = build_segresnet::<f32>(SegModelConfig::default(), 1).unwrap();
        let mut dst = build_segresnet::<f32>(SegModelConfig::reduced(), 1).unwrap();
        let stored = decode_params(&encode_params(src.params())).unwrap();
        let err = apply_params(&mut dst, &stored).unwrap_err().to_string();
        assert!(err.contains("layer enc.conv_init"), "{err}");
    }

    #[test]
    fn corrupt_files() {
        assert!(decode_params(b"FCW2").is_err());
        assert!(decode_params(b"").is_err());
        let model = build_segresnet::<f32>(SegModelConfig::reduced(), 1).unwrap();
        let bytes = encode_params(model.params());
        assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
    }
}
