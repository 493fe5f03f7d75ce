//! Image manipulation through the soft target representation. Both editing
//! cases leave the latent code untouched (bit-identical): class mode swaps
//! the target slot with the current maximum so the probability structure is
//! preserved, attribute mode writes an arbitrary real intensity into one
//! slot (values outside [0, 1], such as 1.7, are deliberately allowed).

use crate::error::{Error, Result};
use crate::nets::{decode, encode, Mode, ModelParams};
use crate::tensor::{Graph, Tensor};

/// One requested edit of a soft target vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EditRequest {
    /// Exchange the maximum element and the target element.
    ClassSwap { target: usize },
    /// Write `intensity` into the target slot.
    AttributeSet { target: usize, intensity: f64 },
}

impl EditRequest {
    pub fn target(&self) -> usize {
        match self {
            EditRequest::ClassSwap { target } => *target,
            EditRequest::AttributeSet { target, .. } => *target,
        }
    }

    fn required_mode(&self) -> Mode {
        match self {
            EditRequest::ClassSwap { .. } => Mode::Class,
            EditRequest::AttributeSet { .. } => Mode::Attribute,
        }
    }
}

/// Exchange the values at the argmax and the target index, leaving every
/// other element untouched. The output is a permutation of the input, so the
/// component sum is preserved exactly.
pub fn edit_class_swap(y_hat: &[f64], target: usize) -> Result<Vec<f64>> {
    if target >= y_hat.len() {
        return Err(Error::Contract(format!(
            "swap target {target} out of range for {} slots",
            y_hat.len()
        )));
    }
    let mut argmax = 0;
    for (i, &v) in y_hat.iter().enumerate() {
        if v > y_hat[argmax] {
            argmax = i;
        }
    }
    let mut out = y_hat.to_vec();
    out.swap(argmax, target);
    Ok(out)
}

/// Set the target slot to the given intensity, leaving every other element
/// bit-identical. The intensity is not clamped.
pub fn edit_attribute_set(y_hat: &[f64], target: usize, intensity: f64) -> Result<Vec<f64>> {
    if target >= y_hat.len() {
        return Err(Error::Contract(format!(
            "attribute target {target} out of range for {} slots",
            y_hat.len()
        )));
    }
    if !intensity.is_finite() {
        return Err(Error::Contract(format!(
            "attribute intensity must be finite, got {intensity}"
        )));
    }
    let mut out = y_hat.to_vec();
    out[target] = intensity;
    Ok(out)
}

fn apply_request(y_hat: &[f64], request: &EditRequest) -> Result<Vec<f64>> {
    match request {
        EditRequest::ClassSwap { target } => edit_class_swap(y_hat, *target),
        EditRequest::AttributeSet { target, intensity } => {
            edit_attribute_set(y_hat, *target, *intensity)
        }
    }
}

fn check_mode(params: &ModelParams, request: &EditRequest) -> Result<()> {
    let required = request.required_mode();
    if params.mode != required {
        return Err(Error::Contract(format!(
            "edit requires a {required}-mode model, but the model is {}-mode",
            params.mode
        )));
    }
    Ok(())
}

fn encode_single(params: &ModelParams, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = &params.dims;
    let per = d.channels * d.height * d.width;
    if x.len() != per {
        return Err(Error::Dimension(format!(
            "edit input has {} values, expected a single {}x{}x{} image",
            x.len(),
            d.channels,
            d.height,
            d.width
        )));
    }
    let g = Graph::new();
    let xt = Tensor::new(&[1, d.channels, d.height, d.width], x.to_vec())?;
    let codes = encode(&g, params, &xt)?;
    Ok((codes.y_hat.values().to_vec(), codes.z.values().to_vec()))
}

fn decode_single(params: &ModelParams, y_hat: Vec<f64>, z: Vec<f64>) -> Result<Vec<f64>> {
    let g = Graph::new();
    let yt = Tensor::new(&[1, params.dims.c], y_hat)?;
    let zt = Tensor::new(&[1, params.dims.z], z)?;
    let out = decode(&g, params, &yt, &zt)?;
    Ok(out.values().to_vec())
}

/// Plain reconstruction: decode(encode(x)) with nothing edited.
pub fn reconstruct(params: &ModelParams, x: &[f64]) -> Result<Vec<f64>> {
    let (y, z) = encode_single(params, x)?;
    decode_single(params, y, z)
}

/// Encode, edit one soft target slot, decode with the unchanged latent code.
/// No labels are consumed.
pub fn edit_image(params: &ModelParams, x: &[f64], request: &EditRequest) -> Result<Vec<f64>> {
    check_mode(params, request)?;
    if request.target() >= params.dims.c {
        return Err(Error::Contract(format!(
            "edit target {} out of range for C = {}",
            request.target(),
            params.dims.c
        )));
    }
    let (y, z) = encode_single(params, x)?;
    let edited = apply_request(&y, request)?;
    decode_single(params, edited, z)
}

/// Decode one edited image per intensity, reusing a single encoding (the
/// latent code is identical across the sweep).
pub fn intensity_sweep(
    params: &ModelParams,
    x: &[f64],
    target: usize,
    intensities: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if intensities.is_empty() {
        return Err(Error::Contract(
            "intensity sweep needs at least one intensity".to_string(),
        ));
    }
    if params.mode != Mode::Attribute {
        return Err(Error::Contract(
            "intensity sweep requires an attribute-mode model".to_string(),
        ));
    }
    if target >= params.dims.c {
        return Err(Error::Contract(format!(
            "sweep target {target} out of range for C = {}",
            params.dims.c
        )));
    }
    let (y, z) = encode_single(params, x)?;
    let mut out = Vec::with_capacity(intensities.len());
    for &intensity in intensities {
        let edited = edit_attribute_set(&y, target, intensity)?;
        out.push(decode_single(params, edited, z.clone())?);
    }
    Ok(out)
}

/// Batched attribute edit used by the evaluation protocol: encode `n` stacked
/// images, overwrite one ŷ column with the intensity, decode.
pub fn edit_batch_attribute(
    params: &ModelParams,
    images: &[f64],
    n: usize,
    target: usize,
    intensity: f64,
) -> Result<Vec<f64>> {
    if params.mode != Mode::Attribute {
        return Err(Error::Contract(
            "batched attribute edit requires an attribute-mode model".to_string(),
        ));
    }
    if target >= params.dims.c {
        return Err(Error::Contract(format!(
            "edit target {target} out of range for C = {}",
            params.dims.c
        )));
    }
    let (mut y, z) = crate::nets::encode_values(params, images, n)?;
    let c = params.dims.c;
    for row in 0..n {
        y[row * c + target] = intensity;
    }
    crate::nets::decode_values(params, &y, &z, n)
}

/// The default intensity grid for sweeps and the evaluation protocol.
pub const DEFAULT_INTENSITIES: [f64; 5] = [0.25, 0.5, 1.0, 1.5, 2.0];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Arch, Dims, ValueRange};

    #[test]
    fn class_swap_example() {
        let y = [0.05, 0.90, 0.01, 0.04];
        let out = edit_class_swap(&y, 2).unwrap();
        assert_eq!(out, vec![0.05, 0.01, 0.90, 0.04]);
    }

    #[test]
    fn class_swap_on_argmax_is_identity() {
        let y = [0.05, 0.90, 0.01, 0.04];
        let out = edit_class_swap(&y, 1).unwrap();
        assert_eq!(out, y.to_vec());
    }

    #[test]
    fn class_swap_preserves_multiset_and_sum() {
        let y = [0.3, 0.1, 0.25, 0.35];
        for target in 0..4 {
            let out = edit_class_swap(&y, target).unwrap();
            let mut a = y.to_vec();
            let mut b = out.clone();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            // The output is a permutation, so the sorted values (and hence
            // any order-canonical sum) match bit for bit.
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
            let sum_a: f64 = a.iter().sum();
            let sum_b: f64 = b.iter().sum();
            assert_eq!(sum_a.to_bits(), sum_b.to_bits());
        }
    }

    #[test]
    fn class_swap_rejects_out_of_range() {
        assert!(matches!(
            edit_class_swap(&[0.5, 0.5], 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn attribute_set_changes_exactly_one_slot() {
        let y = [0.02, 0.4, 0.9];
        let out = edit_attribute_set(&y, 0, 1.7).unwrap();
        assert_eq!(out[0], 1.7);
        assert_eq!(out[1].to_bits(), y[1].to_bits());
        assert_eq!(out[2].to_bits(), y[2].to_bits());

        let same = edit_attribute_set(&y, 1, 0.4).unwrap();
        assert_eq!(same, y.to_vec());

        let zeroed = edit_attribute_set(&y, 2, 0.0).unwrap();
        assert_eq!(zeroed[2], 0.0);
    }

    #[test]
    fn attribute_set_rejects_non_finite() {
        assert!(edit_attribute_set(&[0.1], 0, f64::NAN).is_err());
    }

    fn model(mode: Mode) -> ModelParams {
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
                conv1: 3,
                conv2: 4,
                hidden: 10,
            },
            ValueRange::Unit,
            21,
        )
        .unwrap()
    }

    fn image() -> Vec<f64> {
        (0..64).map(|i| (i % 10) as f64 / 10.0).collect()
    }

    #[test]
    fn identity_edit_equals_reconstruction_bitwise() {
        let params = model(Mode::Attribute);
        let x = image();
        let (y, _) = encode_single(&params, &x).unwrap();
        // Setting the slot to its current value leaves y_hat bit-identical.
        let request = EditRequest::AttributeSet {
            target: 1,
            intensity: y[1],
        };
        let edited = edit_image(&params, &x, &request).unwrap();
        let recon = reconstruct(&params, &x).unwrap();
        assert_eq!(edited, recon);
    }

    #[test]
    fn edit_mode_mismatch_rejected() {
        let params = model(Mode::Attribute);
        let request = EditRequest::ClassSwap { target: 0 };
        assert!(matches!(
            edit_image(&params, &image(), &request),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn sweep_length_and_shapes() {
        let params = model(Mode::Attribute);
        let outs = intensity_sweep(&params, &image(), 2, &DEFAULT_INTENSITIES).unwrap();
        assert_eq!(outs.len(), 5);
        for o in &outs {
            assert_eq!(o.len(), 64);
        }
        let single = intensity_sweep(&params, &image(), 2, &[1.3]).unwrap();
        let direct = edit_image(
            &params,
            &image(),
            &EditRequest::AttributeSet {
                target: 2,
                intensity: 1.3,
            },
        )
        .unwrap();
        assert_eq!(single[0], direct);
    }

    #[test]
    fn sweep_rejects_empty_list() {
        let params = model(Mode::Attribute);
        assert!(matches!(
            intensity_sweep(&params, &image(), 0, &[]),
            Err(Error::Contract(_))
        ));
    }
}
