//! The encoder-decoder pair. The encoder maps an image batch to a soft
//! target representation ŷ (class or attribute probabilities) and a free
//! latent code z; the decoder reconstructs the image from both. At edit time
//! ŷ may carry values outside [0, 1], so the decoder never clamps its code
//! inputs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor};

/// Slope of the hidden-layer leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Initialization scale of the latent head relative to its Glorot limit.
/// The decorrelation loss scales with the spread of both code batches, so a
/// latent code that starts wide produces batch-level gradients that swamp
/// the per-sample discriminative signal and pin the soft-target head at its
/// uninformative saddle. Starting the latent head small lets the soft target
/// lock onto the labels first; the latent spread then grows under the
/// reconstruction pressure while the decorrelation term keeps it off the
/// label directions.
pub const Z_HEAD_INIT_SCALE: f64 = 0.05;

const CONV_KERNEL: usize = 4;
const CONV_STRIDE: usize = 2;
const CONV_PAD: usize = 1;

/// Whether the soft target head models mutually exclusive classes (softmax)
/// or independent binary attributes (sigmoid).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Class,
    Attribute,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Class => write!(f, "class"),
            Mode::Attribute => write!(f, "attribute"),
        }
    }
}

/// Pixel value convention of the data the model was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    /// Values in [0, 1]; decoder output activation is a sigmoid.
    Unit,
    /// Values in [-1, 1]; decoder output activation is tanh.
    Symmetric,
}

impl ValueRange {
    pub fn peak(self) -> f64 {
        match self {
            ValueRange::Unit => 1.0,
            ValueRange::Symmetric => 2.0,
        }
    }

    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Symmetric => (-1.0, 1.0),
        }
    }
}

/// Code and image dimensions: C soft-target slots, D_z latent dims, and the
/// image layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub z: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Channel/width settings of the two-conv encoder and its mirrored decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            conv1: 8,
            conv2: 16,
            hidden: 128,
        }
    }
}

/// Encoder output pair for a batch: ŷ is N×C, z is N×D_z.
pub struct Codes {
    pub y_hat: Tensor,
    pub z: Tensor,
}

/// Named parameter tensors of encoder (φ) and decoder (θ), plus the shape
/// metadata needed to wire them up.
pub struct ModelParams {
    pub mode: Mode,
    pub dims: Dims,
    pub arch: Arch,
    pub value_range: ValueRange,
    params: Vec<(String, Tensor)>,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let count: usize = shape.iter().product();
    let values: Vec<f64> = (0..count).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::from_parts(shape.to_vec(), values)
}

impl ModelParams {
    /// Expected (name, shape) pairs for the given dimensions, in creation
    /// order.
    fn layout(dims: &Dims, arch: &Arch) -> Vec<(String, Vec<usize>)> {
        let (c1, c2, hidden) = (arch.conv1, arch.conv2, arch.hidden);
        let flat = c2 * (dims.height / 4) * (dims.width / 4);
        let code = dims.c + dims.z;
        vec![
            ("enc.conv1.w".into(), vec![c1, dims.channels, CONV_KERNEL, CONV_KERNEL]),
            ("enc.conv1.b".into(), vec![c1]),
            ("enc.conv2.w".into(), vec![c2, c1, CONV_KERNEL, CONV_KERNEL]),
            ("enc.conv2.b".into(), vec![c2]),
            ("enc.fc.w".into(), vec![flat, hidden]),
            ("enc.fc.b".into(), vec![hidden]),
            ("enc.head_y.w".into(), vec![hidden, dims.c]),
            ("enc.head_y.b".into(), vec![dims.c]),
            ("enc.head_z.w".into(), vec![hidden, dims.z]),
            ("enc.head_z.b".into(), vec![dims.z]),
            ("dec.fc1.w".into(), vec![code, hidden]),
            ("dec.fc1.b".into(), vec![hidden]),
            ("dec.fc2.w".into(), vec![hidden, flat]),
            ("dec.fc2.b".into(), vec![flat]),
            ("dec.deconv1.w".into(), vec![c2, c1, CONV_KERNEL, CONV_KERNEL]),
            ("dec.deconv1.b".into(), vec![c1]),
            ("dec.deconv2.w".into(), vec![c1, dims.channels, CONV_KERNEL, CONV_KERNEL]),
            ("dec.deconv2.b".into(), vec![dims.channels]),
        ]
    }

    fn validate_dims(dims: &Dims, arch: &Arch) -> Result<()> {
        if dims.c == 0 || dims.z == 0 || dims.channels == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive, got {dims:?}"
            )));
        }
        if dims.height % 4 != 0 || dims.width % 4 != 0 || dims.height < 4 || dims.width < 4 {
            return Err(Error::Config(format!(
                "image extent must be a positive multiple of 4 for the two stride-2 stages, \
                 got {}x{}",
                dims.height, dims.width
            )));
        }
        if arch.conv1 == 0 || arch.conv2 == 0 || arch.hidden == 0 {
            return Err(Error::Config(format!(
                "architecture widths must be positive, got {arch:?}"
            )));
        }
        Ok(())
    }

    /// Fresh parameters with Glorot-uniform weights and zero biases,
    /// deterministic in the seed.
    pub fn init(
        mode: Mode,
        dims: Dims,
        arch: Arch,
        value_range: ValueRange,
        seed: u64,
    ) -> Result<ModelParams> {
        Self::validate_dims(&dims, &arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for (name, shape) in Self::layout(&dims, &arch) {
            let tensor = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let (fan_in, fan_out) = match shape.len() {
                    // Convolution kernels: fan counts include the window.
                    4 => (shape[1] * shape[2] * shape[3], shape[0] * shape[2] * shape[3]),
                    2 => (shape[0], shape[1]),
                    _ => (shape.iter().product(), shape.iter().product()),
                };
                let t = glorot(&mut rng, &shape, fan_in, fan_out);
                if name == "enc.head_z.w" {
                    let scaled: Vec<f64> =
                        t.values().iter().map(|v| v * Z_HEAD_INIT_SCALE).collect();
                    Tensor::from_parts(shape.clone(), scaled)
                } else {
                    t
                }
            };
            params.push((name, tensor));
        }
        Ok(ModelParams {
            mode,
            dims,
            arch,
            value_range,
            params,
        })
    }

    /// Rebuild a model from named tensors (checkpoint loading). The set of
    /// names and shapes must match the layout exactly.
    pub fn from_named_tensors(
        mode: Mode,
        dims: Dims,
        arch: Arch,
        value_range: ValueRange,
        tensors: Vec<(String, Tensor)>,
    ) -> Result<ModelParams> {
        Self::validate_dims(&dims, &arch)?;
        let layout = Self::layout(&dims, &arch);
        if tensors.len() != layout.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut by_name: std::collections::HashMap<String, Tensor> = tensors.into_iter().collect();
        let mut params = Vec::new();
        for (name, shape) in layout {
            let t = by_name.remove(&name).ok_or_else(|| {
                Error::Format(format!("missing parameter tensor '{name}'"))
            })?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter '{name}' has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            params.push((name, t));
        }
        Ok(ModelParams {
            mode,
            dims,
            arch,
            value_range,
            params,
        })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Vec<(String, Tensor)> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("no parameter named '{name}'")))
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.clear_grad();
        }
    }

    /// Deep copy with detached tensors (fresh gradient storage).
    pub fn snapshot(&self) -> ModelParams {
        ModelParams {
            mode: self.mode,
            dims: self.dims,
            arch: self.arch,
            value_range: self.value_range,
            params: self
                .params
                .iter()
                .map(|(n, t)| (n.clone(), t.detached()))
                .collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Softmax head for mutually exclusive classes: rows are positive and sum
/// to 1, stabilized by subtracting each row's maximum.
pub fn softmax_head(g: &Graph, a: &Tensor) -> Result<Tensor> {
    g.softmax_rows(a)
}

/// Sigmoid head for independent binary attributes: every entry in (0, 1).
pub fn sigmoid_head(g: &Graph, a: &Tensor) -> Result<Tensor> {
    Ok(g.sigmoid(a))
}

fn fc(g: &Graph, x: &Tensor, params: &ModelParams, name: &str) -> Result<Tensor> {
    let w = params.param(&format!("{name}.w"))?;
    let b = params.param(&format!("{name}.b"))?;
    let n = x.shape()[0];
    let prod = g.matmul(x, w)?;
    g.add(&prod, &g.broadcast_row(b, n)?)
}

/// Run the encoder: image batch N×C_img×H×W to codes (ŷ: N×C, z: N×D_z),
/// recorded on the graph.
pub fn encode(g: &Graph, params: &ModelParams, x: &Tensor) -> Result<Codes> {
    let d = &params.dims;
    let s = x.shape();
    if s.len() != 4 || s[1] != d.channels || s[2] != d.height || s[3] != d.width {
        return Err(Error::Dimension(format!(
            "encode: input shape {s:?} does not match model image dims \
             {}x{}x{}",
            d.channels, d.height, d.width
        )));
    }
    let n = s[0];
    let conv = |x: &Tensor, name: &str| -> Result<Tensor> {
        let w = params.param(&format!("{name}.w"))?;
        let b = params.param(&format!("{name}.b"))?;
        let y = g.conv2d(x, w, CONV_STRIDE, CONV_PAD)?;
        let ys = y.shape().to_vec();
        let biased = g.add(&y, &g.broadcast_channel(b, ys[0], ys[2], ys[3])?)?;
        Ok(g.leaky_relu(&biased, LEAKY_SLOPE))
    };
    let h1 = conv(x, "enc.conv1")?;
    let h2 = conv(&h1, "enc.conv2")?;
    let flat = params.arch.conv2 * (d.height / 4) * (d.width / 4);
    let f = g.reshape(&h2, &[n, flat])?;
    let trunk = g.leaky_relu(&fc(g, &f, params, "enc.fc")?, LEAKY_SLOPE);
    let a_y = fc(g, &trunk, params, "enc.head_y")?;
    let y_hat = match params.mode {
        Mode::Class => softmax_head(g, &a_y)?,
        Mode::Attribute => sigmoid_head(g, &a_y)?,
    };
    let z = fc(g, &trunk, params, "enc.head_z")?;
    Ok(Codes { y_hat, z })
}

/// Run the decoder on a code pair. ŷ entries may lie outside [0, 1] (the
/// editing contract); only the output activation maps pixels into the data
/// range.
pub fn decode(g: &Graph, params: &ModelParams, y_hat: &Tensor, z: &Tensor) -> Result<Tensor> {
    let d = &params.dims;
    let (sy, sz) = (y_hat.shape(), z.shape());
    if sy.len() != 2 || sy[1] != d.c {
        return Err(Error::Dimension(format!(
            "decode: y_hat shape {sy:?} does not match C = {}",
            d.c
        )));
    }
    if sz.len() != 2 || sz[1] != d.z {
        return Err(Error::Dimension(format!(
            "decode: z shape {sz:?} does not match D_z = {}",
            d.z
        )));
    }
    if sy[0] != sz[0] {
        return Err(Error::Dimension(format!(
            "decode: batch sizes {} and {} differ",
            sy[0], sz[0]
        )));
    }
    let n = sy[0];
    let code = g.concat_cols(y_hat, z)?;
    let t1 = g.leaky_relu(&fc(g, &code, params, "dec.fc1")?, LEAKY_SLOPE);
    let t2 = g.leaky_relu(&fc(g, &t1, params, "dec.fc2")?, LEAKY_SLOPE);
    let (h4, w4) = (d.height / 4, d.width / 4);
    let grid = g.reshape(&t2, &[n, params.arch.conv2, h4, w4])?;
    let deconv = |x: &Tensor, name: &str, activate: bool| -> Result<Tensor> {
        let w = params.param(&format!("{name}.w"))?;
        let b = params.param(&format!("{name}.b"))?;
        let y = g.conv2d_transpose(x, w, CONV_STRIDE, CONV_PAD)?;
        let ys = y.shape().to_vec();
        let biased = g.add(&y, &g.broadcast_channel(b, ys[0], ys[2], ys[3])?)?;
        Ok(if activate {
            g.leaky_relu(&biased, LEAKY_SLOPE)
        } else {
            biased
        })
    };
    let u1 = deconv(&grid, "dec.deconv1", true)?;
    let pre = deconv(&u1, "dec.deconv2", false)?;
    Ok(match params.value_range {
        ValueRange::Unit => g.sigmoid(&pre),
        ValueRange::Symmetric => g.tanh(&pre),
    })
}

/// Encode then decode in one go.
pub fn forward(g: &Graph, params: &ModelParams, x: &Tensor) -> Result<(Codes, Tensor)> {
    let codes = encode(g, params, x)?;
    let x_hat = decode(g, params, &codes.y_hat, &codes.z)?;
    Ok((codes, x_hat))
}

/// Encode raw image values (n stacked images) off-graph, in chunks, and
/// return the flat ŷ (n×C) and z (n×D_z) value matrices.
pub fn encode_values(
    params: &ModelParams,
    images: &[f64],
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = &params.dims;
    let per = d.channels * d.height * d.width;
    if images.len() != n * per {
        return Err(Error::Dimension(format!(
            "encode_values: {} values do not form {} images of {} scalars",
            images.len(),
            n,
            per
        )));
    }
    let mut y = Vec::with_capacity(n * d.c);
    let mut z = Vec::with_capacity(n * d.z);
    let chunk = 256usize;
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let g = Graph::new();
        let x = Tensor::new(
            &[len, d.channels, d.height, d.width],
            images[start * per..(start + len) * per].to_vec(),
        )?;
        let codes = encode(&g, params, &x)?;
        y.extend_from_slice(codes.y_hat.values());
        z.extend_from_slice(codes.z.values());
        start += len;
    }
    Ok((y, z))
}

/// Decode raw code values (n rows each) off-graph, in chunks, returning the
/// stacked image values.
pub fn decode_values(
    params: &ModelParams,
    y_hat: &[f64],
    z: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    let d = &params.dims;
    if y_hat.len() != n * d.c || z.len() != n * d.z {
        return Err(Error::Dimension(format!(
            "decode_values: code lengths {} / {} do not match {} rows of C={} D_z={}",
            y_hat.len(),
            z.len(),
            n,
            d.c,
            d.z
        )));
    }
    let per = d.channels * d.height * d.width;
    let mut out = Vec::with_capacity(n * per);
    let chunk = 256usize;
    let mut start = 0;
    while start < n {
        let len = chunk.min(n - start);
        let g = Graph::new();
        let yt = Tensor::new(&[len, d.c], y_hat[start * d.c..(start + len) * d.c].to_vec())?;
        let zt = Tensor::new(&[len, d.z], z[start * d.z..(start + len) * d.z].to_vec())?;
        let x_hat = decode(&g, params, &yt, &zt)?;
        out.extend_from_slice(x_hat.values());
        start += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_params(mode: Mode) -> ModelParams {
        ModelParams::init(
            mode,
            Dims {
                c: 3,
                z: 2,
                channels: 1,
                height: 8,
                width: 8,
            },
            Arch {
                conv1: 4,
                conv2: 6,
                hidden: 16,
            },
            ValueRange::Unit,
            7,
        )
        .unwrap()
    }

    fn batch(n: usize) -> Tensor {
        let mut v = Vec::with_capacity(n * 64);
        for i in 0..n * 64 {
            v.push(((i * 37 + 11) % 100) as f64 / 100.0);
        }
        Tensor::new(&[n, 1, 8, 8], v).unwrap()
    }

    #[test]
    fn class_mode_rows_sum_to_one() {
        let params = tiny_params(Mode::Class);
        let g = Graph::new();
        let codes = encode(&g, &params, &batch(3)).unwrap();
        for row in 0..3 {
            let sum: f64 = codes.y_hat.values()[row * 3..(row + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attribute_mode_entries_in_unit_interval() {
        let params = tiny_params(Mode::Attribute);
        let g = Graph::new();
        let codes = encode(&g, &params, &batch(3)).unwrap();
        for &v in codes.y_hat.values() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn identical_inputs_give_identical_codes() {
        let params = tiny_params(Mode::Class);
        let g = Graph::new();
        let one = batch(1);
        let mut v = one.values().to_vec();
        v.extend_from_slice(one.values());
        let two = Tensor::new(&[2, 1, 8, 8], v).unwrap();
        let codes = encode(&g, &params, &two).unwrap();
        let y = codes.y_hat.values();
        assert_eq!(&y[0..3], &y[3..6]);
        let z = codes.z.values();
        assert_eq!(&z[0..2], &z[2..4]);
    }

    #[test]
    fn round_trip_preserves_shape() {
        let params = tiny_params(Mode::Class);
        let g = Graph::new();
        let x = batch(2);
        let (_, x_hat) = forward(&g, &params, &x).unwrap();
        assert_eq!(x_hat.shape(), x.shape());
    }

    #[test]
    fn decode_accepts_out_of_range_soft_targets() {
        let params = tiny_params(Mode::Attribute);
        let g = Graph::new();
        let y = Tensor::new(&[1, 3], vec![0.02, 1.7, 0.4]).unwrap();
        let z = Tensor::new(&[1, 2], vec![0.1, -0.5]).unwrap();
        let out = decode(&g, &params, &y, &z).unwrap();
        assert_eq!(out.shape(), &[1, 1, 8, 8]);
        assert!(out.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn encode_rejects_wrong_shape() {
        let params = tiny_params(Mode::Class);
        let g = Graph::new();
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(
            encode(&g, &params, &x),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn decoder_first_layer_width_is_c_plus_z() {
        let params = tiny_params(Mode::Class);
        let w = params.param("dec.fc1.w").unwrap();
        assert_eq!(w.shape()[0], 3 + 2);
    }

    #[test]
    fn init_is_deterministic_in_seed() {
        let a = tiny_params(Mode::Class);
        let b = tiny_params(Mode::Class);
        for ((_, ta), (_, tb)) in a.params().iter().zip(b.params()) {
            assert_eq!(ta.values(), tb.values());
        }
    }

    #[test]
    fn rejects_non_multiple_of_four_extent() {
        let r = ModelParams::init(
            Mode::Class,
            Dims {
                c: 3,
                z: 2,
                channels: 1,
                height: 10,
                width: 8,
            },
            Arch::default(),
            ValueRange::Unit,
            0,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
