//! Binary checkpoint format. Files begin with the magic bytes `MDDAE` and a
//! version word; tensors are stored as 32-bit little-endian floats, so a
//! save -> load -> save cycle is byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nets::{Arch, Dims, Mode, ModelParams, ValueRange};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"MDDAE";
pub const VERSION: u32 = 1;

/// Optimizer snapshot stored alongside the parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    /// First and second moments per tensor, aligned with the tensor list.
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub mode: Mode,
    pub value_range: ValueRange,
    pub dims: Dims,
    pub arch: Arch,
    /// Echo of the training configuration text (may be empty).
    pub config_echo: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    /// Capture a model (and optionally its optimizer state) for saving.
    pub fn from_model(
        params: &ModelParams,
        config_echo: &str,
        optimizer: Option<&AdamState>,
    ) -> Checkpoint {
        let tensors = params
            .params()
            .iter()
            .map(|(name, t)| {
                (
                    name.clone(),
                    t.shape().to_vec(),
                    t.values().iter().map(|&v| v as f32).collect(),
                )
            })
            .collect();
        let optimizer = optimizer.map(|state| {
            let (m, v) = state.moments();
            OptimizerState {
                step: state.step_count(),
                m: m.iter()
                    .map(|a| a.iter().map(|&x| x as f32).collect())
                    .collect(),
                v: v.iter()
                    .map(|a| a.iter().map(|&x| x as f32).collect())
                    .collect(),
            }
        });
        Checkpoint {
            version: VERSION,
            mode: params.mode,
            value_range: params.value_range,
            dims: params.dims,
            arch: params.arch,
            config_echo: config_echo.to_string(),
            tensors,
            optimizer,
        }
    }

    /// Rebuild the model parameters this checkpoint captured.
    pub fn to_model(&self) -> Result<ModelParams> {
        let tensors: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .map(|(name, shape, values)| {
                let v64: Vec<f64> = values.iter().map(|&v| v as f64).collect();
                Tensor::new(shape, v64).map(|t| (name.clone(), t))
            })
            .collect::<Result<_>>()?;
        ModelParams::from_named_tensors(
            self.mode,
            self.dims,
            self.arch,
            self.value_range,
            tensors,
        )
    }

    /// Restore saved optimizer moments into a fresh Adam state for the given
    /// model.
    pub fn restore_optimizer(&self, params: &ModelParams, adam: &mut AdamState) -> Result<()> {
        let Some(opt) = &self.optimizer else {
            return Err(Error::State(
                "checkpoint holds no optimizer state".to_string(),
            ));
        };
        if opt.m.len() != params.params().len() {
            return Err(Error::Format(format!(
                "optimizer state covers {} tensors, model has {}",
                opt.m.len(),
                params.params().len()
            )));
        }
        let widen = |a: &Vec<Vec<f32>>| {
            a.iter()
                .map(|v| v.iter().map(|&x| x as f64).collect())
                .collect()
        };
        adam.restore(opt.step, widen(&opt.m), widen(&opt.v));
        Ok(())
    }
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.bytes.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn str16(&mut self, s: &str) -> Result<()> {
        let b = s.as_bytes();
        if b.len() > u16::MAX as usize {
            return Err(Error::Contract("name too long for checkpoint".to_string()));
        }
        self.bytes.extend_from_slice(&(b.len() as u16).to_le_bytes());
        self.bytes.extend_from_slice(b);
        Ok(())
    }
    fn str32(&mut self, s: &str) {
        let b = s.as_bytes();
        self.bytes.extend_from_slice(&(b.len() as u32).to_le_bytes());
        self.bytes.extend_from_slice(b);
    }
}

/// Serialize a checkpoint to bytes.
pub fn to_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer { bytes: Vec::new() };
    w.bytes.extend_from_slice(MAGIC);
    w.u32(ck.version);
    w.u8(match ck.mode {
        Mode::Class => 0,
        Mode::Attribute => 1,
    });
    w.u8(match ck.value_range {
        ValueRange::Unit => 0,
        ValueRange::Symmetric => 1,
    });
    for v in [
        ck.dims.c,
        ck.dims.z,
        ck.dims.channels,
        ck.dims.height,
        ck.dims.width,
        ck.arch.conv1,
        ck.arch.conv2,
        ck.arch.hidden,
    ] {
        w.u32(v as u32);
    }
    w.str32(&ck.config_echo);
    w.u32(ck.tensors.len() as u32);
    for (name, shape, values) in &ck.tensors {
        w.str16(name)?;
        w.u8(shape.len() as u8);
        for &d in shape {
            w.u32(d as u32);
        }
        w.f32s(values);
    }
    match &ck.optimizer {
        None => w.u8(0),
        Some(opt) => {
            w.u8(1);
            w.u64(opt.step);
            for (m, v) in opt.m.iter().zip(&opt.v) {
                w.f32s(m);
                w.f32s(v);
            }
        }
    }
    Ok(w.bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated checkpoint while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(4 * n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
    fn str16(&mut self, what: &str) -> Result<String> {
        let b = self.take(2, what)?;
        let len = u16::from_le_bytes([b[0], b[1]]) as usize;
        let s = self.take(len, what)?;
        String::from_utf8(s.to_vec())
            .map_err(|_| Error::Format(format!("non-utf8 {what} in checkpoint")))
    }
    fn str32(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let s = self.take(len, what)?;
        String::from_utf8(s.to_vec())
            .map_err(|_| Error::Format(format!("non-utf8 {what} in checkpoint")))
    }
}

/// Parse checkpoint bytes; rejects bad magic, unknown versions, truncation,
/// and trailing garbage.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, this build reads version {VERSION}"
        )));
    }
    let mode = match r.u8("mode")? {
        0 => Mode::Class,
        1 => Mode::Attribute,
        other => return Err(Error::Format(format!("unknown mode tag {other}"))),
    };
    let value_range = match r.u8("value range")? {
        0 => ValueRange::Unit,
        1 => ValueRange::Symmetric,
        other => return Err(Error::Format(format!("unknown value-range tag {other}"))),
    };
    let mut dims_raw = [0u32; 8];
    for (i, what) in [
        "dims.c",
        "dims.z",
        "dims.channels",
        "dims.height",
        "dims.width",
        "arch.conv1",
        "arch.conv2",
        "arch.hidden",
    ]
    .iter()
    .enumerate()
    {
        dims_raw[i] = r.u32(what)?;
    }
    let dims = Dims {
        c: dims_raw[0] as usize,
        z: dims_raw[1] as usize,
        channels: dims_raw[2] as usize,
        height: dims_raw[3] as usize,
        width: dims_raw[4] as usize,
    };
    let arch = Arch {
        conv1: dims_raw[5] as usize,
        conv2: dims_raw[6] as usize,
        hidden: dims_raw[7] as usize,
    };
    let config_echo = r.str32("config echo")?;
    let tensor_count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let name = r.str16("tensor name")?;
        let ndim = r.u8("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("tensor dim")? as usize);
        }
        let count: usize = shape.iter().product();
        let values = r.f32s(count, &format!("values of '{name}'"))?;
        tensors.push((name, shape, values));
    }
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            let mut m = Vec::with_capacity(tensors.len());
            let mut v = Vec::with_capacity(tensors.len());
            for (name, shape, _) in &tensors {
                let count: usize = shape.iter().product();
                m.push(r.f32s(count, &format!("first moment of '{name}'"))?);
                v.push(r.f32s(count, &format!("second moment of '{name}'"))?);
            }
            Some(OptimizerState { step, m, v })
        }
        other => {
            return Err(Error::Format(format!(
                "unknown optimizer flag {other} in checkpoint"
            )))
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint payload",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        version,
        mode,
        value_range,
        dims,
        arch,
        config_echo,
        tensors,
        optimizer,
    })
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(ck)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams {
        ModelParams::init(
            Mode::Attribute,
            Dims {
                c: 3,
                z: 2,
                channels: 1,
                height: 8,
                width: 8,
            },
            Arch {
                conv1: 3,
                conv2: 4,
                hidden: 10,
            },
            ValueRange::Unit,
            17,
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let params = model();
        let ck = Checkpoint::from_model(&params, "mode = attribute\n", None);
        let bytes = to_bytes(&ck).unwrap();
        let reloaded = from_bytes(&bytes).unwrap();
        let bytes2 = to_bytes(&reloaded).unwrap();
        assert_eq!(bytes, bytes2);
        let rebuilt = reloaded.to_model().unwrap();
        assert_eq!(rebuilt.parameter_count(), params.parameter_count());
        assert_eq!(reloaded.config_echo, "mode = attribute\n");
    }

    #[test]
    fn optimizer_state_round_trips() {
        let params = model();
        let mut adam = AdamState::new(&params, 1e-3, 0.5, 0.999);
        let t = params.params()[0].1.clone();
        let mut grad = vec![0.0; t.len()];
        grad[0] = 0.5;
        t.set_grad(grad);
        let mut p = model();
        crate::optim::adam_step(&mut p, &mut adam).unwrap();
        let ck = Checkpoint::from_model(&p, "", Some(&adam));
        let bytes = to_bytes(&ck).unwrap();
        let reloaded = from_bytes(&bytes).unwrap();
        let opt = reloaded.optimizer.as_ref().unwrap();
        assert_eq!(opt.step, 1);
        let mut adam2 = AdamState::new(&p, 1e-3, 0.5, 0.999);
        reloaded.restore_optimizer(&p, &mut adam2).unwrap();
        assert_eq!(adam2.step_count(), 1);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let params = model();
        let ck = Checkpoint::from_model(&params, "", None);
        let bytes = to_bytes(&ck).unwrap();
        for cut in [3, 9, 40, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn version_bump_is_rejected() {
        let params = model();
        let ck = Checkpoint::from_model(&params, "", None);
        let mut bytes = to_bytes(&ck).unwrap();
        bytes[5] = (VERSION + 1) as u8;
        let err = from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let err = from_bytes(b"NOTCK\x01\x00\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let params = model();
        let ck = Checkpoint::from_model(&params, "", None);
        let mut bytes = to_bytes(&ck).unwrap();
        bytes.push(0);
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
