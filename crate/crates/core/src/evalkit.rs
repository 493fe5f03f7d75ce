//! Reconstruction-quality metrics and the classification-based protocol for
//! quantifying disentanglement strength: train a linear SVM on real images
//! with/without an attribute, synthesize the attribute into negative test
//! images at a chosen intensity, and read the classifier's error rate on the
//! synthesized set. Lower error at higher intensity means the attribute is
//! rendered more perceptibly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::editing::edit_batch_attribute;
use crate::error::{Error, Result};
use crate::losses::{ssim, SsimOptions};
use crate::nets::{Mode, ModelParams};
use crate::tensor::{Graph, Tensor};

/// Per-image reconstruction metrics.
#[derive(Debug, Clone, Copy)]
pub struct QualityRecord {
    pub rmse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image metrics plus their mean and standard deviation.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub per_image: Vec<QualityRecord>,
    pub mean: QualityRecord,
    pub std: QualityRecord,
}

/// PSNR ceiling used when a reconstruction is pixel-identical.
pub const PSNR_CAP_DB: f64 = 100.0;

/// RMSE, PSNR (dB) and single-scale SSIM between two images of the given
/// layout. Images are expected in [0, 1] with `peak` = 1 (rescale first for
/// other ranges). Identical images report the capped PSNR.
pub fn image_quality(
    x: &[f64],
    x_hat: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    peak: f64,
) -> Result<QualityRecord> {
    if x.len() != x_hat.len() || x.len() != channels * height * width {
        return Err(Error::Dimension(format!(
            "image_quality: lengths {} / {} do not match {channels}x{height}x{width}",
            x.len(),
            x_hat.len()
        )));
    }
    let mse: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    let rmse = mse.sqrt();
    let psnr = if rmse == 0.0 {
        PSNR_CAP_DB
    } else {
        20.0 * (peak / rmse).log10()
    };
    let g = Graph::new();
    let xt = Tensor::new(&[channels, height, width], x.to_vec())?;
    let yt = Tensor::new(&[channels, height, width], x_hat.to_vec())?;
    let ssim_value = ssim(
        &g,
        &xt,
        &yt,
        &SsimOptions {
            peak,
            ..SsimOptions::default()
        },
    )?
    .item();
    Ok(QualityRecord {
        rmse,
        psnr,
        ssim: ssim_value,
    })
}

/// Aggregate per-image records into mean and standard deviation rows.
pub fn quality_report(per_image: Vec<QualityRecord>) -> Result<QualityReport> {
    if per_image.is_empty() {
        return Err(Error::Contract(
            "quality report needs at least one image".to_string(),
        ));
    }
    let n = per_image.len() as f64;
    let mean = QualityRecord {
        rmse: per_image.iter().map(|r| r.rmse).sum::<f64>() / n,
        psnr: per_image.iter().map(|r| r.psnr.min(PSNR_CAP_DB)).sum::<f64>() / n,
        ssim: per_image.iter().map(|r| r.ssim).sum::<f64>() / n,
    };
    let var = |f: &dyn Fn(&QualityRecord) -> f64, m: f64| {
        per_image.iter().map(|r| (f(r) - m) * (f(r) - m)).sum::<f64>() / n
    };
    let std = QualityRecord {
        rmse: var(&|r| r.rmse, mean.rmse).sqrt(),
        psnr: var(&|r| r.psnr.min(PSNR_CAP_DB), mean.psnr).sqrt(),
        ssim: var(&|r| r.ssim, mean.ssim).sqrt(),
    };
    Ok(QualityReport {
        per_image,
        mean,
        std,
    })
}

/// Two-class linear classifier trained by seeded stochastic subgradient
/// descent on the hinge loss with L2 regularization.
#[derive(Debug, Clone)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
    pub train_accuracy: f64,
    /// Regularized objective after each epoch (the trace starts with the
    /// initial objective).
    pub objective_trace: Vec<f64>,
}

impl LinearSvm {
    /// Signed decision value; >= 0 classifies as the positive class.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut acc = self.bias;
        for (w, v) in self.weights.iter().zip(x) {
            acc += w * v;
        }
        acc
    }

    pub fn classify_positive(&self, x: &[f64]) -> bool {
        self.decision(x) >= 0.0
    }
}

fn svm_objective(w: &[f64], b: f64, lambda: f64, xs: &[(&[f64], f64)]) -> f64 {
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = xs
        .iter()
        .map(|(x, y)| {
            let mut d = b;
            for (wi, xi) in w.iter().zip(*x) {
                d += wi * xi;
            }
            (1.0 - y * d).max(0.0)
        })
        .sum::<f64>()
        / xs.len() as f64;
    reg + hinge
}

/// Train a linear SVM on flattened images: `positives` get label +1,
/// `negatives` -1. Deterministic given the seed.
pub fn train_attribute_svm(
    positives: &[&[f64]],
    negatives: &[&[f64]],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearSvm> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Contract(
            "SVM training needs at least one sample of each class".to_string(),
        ));
    }
    if lambda <= 0.0 {
        return Err(Error::Contract(format!(
            "SVM regularization must be positive, got {lambda}"
        )));
    }
    let dim = positives[0].len();
    let mut samples: Vec<(&[f64], f64)> = Vec::with_capacity(positives.len() + negatives.len());
    for &x in positives {
        if x.len() != dim {
            return Err(Error::Dimension(
                "SVM samples must share one feature width".to_string(),
            ));
        }
        samples.push((x, 1.0));
    }
    for &x in negatives {
        if x.len() != dim {
            return Err(Error::Dimension(
                "SVM samples must share one feature width".to_string(),
            ));
        }
        samples.push((x, -1.0));
    }

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    // Step-size schedule 1/(lambda * (t + t0)) with t0 = 1/lambda, so the
    // first steps are bounded near 1 instead of 1/lambda.
    let t_shift = (1.0 / lambda).ceil() as u64;
    let mut t = 1u64;
    let mut trace = vec![svm_objective(&w, b, lambda, &samples)];
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = samples[i];
            let eta = 1.0 / (lambda * (t + t_shift) as f64);
            let margin = y * {
                let mut d = b;
                for (wi, xi) in w.iter().zip(x) {
                    d += wi * xi;
                }
                d
            };
            let shrink = 1.0 - eta * lambda;
            if margin < 1.0 {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi = *wi * shrink + eta * y * xi;
                }
                b += eta * y;
            } else {
                for wi in w.iter_mut() {
                    *wi *= shrink;
                }
            }
            t += 1;
        }
        trace.push(svm_objective(&w, b, lambda, &samples));
    }
    let svm = LinearSvm {
        weights: w,
        bias: b,
        lambda,
        train_accuracy: 0.0,
        objective_trace: trace,
    };
    let correct = samples
        .iter()
        .filter(|(x, y)| (svm.decision(x) >= 0.0) == (*y > 0.0))
        .count();
    Ok(LinearSvm {
        train_accuracy: correct as f64 / samples.len() as f64,
        ..svm
    })
}

/// Fraction of images the classifier assigns to the opposite of the expected
/// class.
pub fn svm_error_rate(svm: &LinearSvm, images: &[&[f64]], expected_positive: bool) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Contract(
            "error rate needs at least one image".to_string(),
        ));
    }
    let wrong = images
        .iter()
        .filter(|x| svm.classify_positive(x) != expected_positive)
        .count();
    Ok(wrong as f64 / images.len() as f64)
}

/// Settings for the protocol's classifier runs.
#[derive(Debug, Clone)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-4,
            epochs: 20,
            runs: 5,
            seed: 0,
        }
    }
}

/// Protocol output: classification error rates per intensity and run, plus
/// the per-intensity mean over runs.
#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub attribute: usize,
    pub attribute_name: Option<String>,
    pub intensities: Vec<f64>,
    pub runs: usize,
    /// `error_rates[i][r]` is the rate at intensity i in run r.
    pub error_rates: Vec<Vec<f64>>,
    pub means: Vec<f64>,
}

/// The four-step disentanglement-strength protocol:
/// 1. split the training set by the designated attribute,
/// 2. train a two-class classifier on the two subsets,
/// 3. take attribute-negative test images and synthesize the attribute at
///    each intensity via the model's soft target slot,
/// 4. record the classifier's error rate (against the positive label) on the
///    synthesized images.
/// Steps 2-4 repeat over `runs` seeds and the per-intensity mean is reported.
pub fn disentanglement_protocol(
    params: &ModelParams,
    train: &Dataset,
    test: &Dataset,
    attribute: usize,
    intensities: &[f64],
    cfg: &SvmConfig,
) -> Result<ProtocolReport> {
    if params.mode != Mode::Attribute {
        return Err(Error::Contract(
            "the protocol requires an attribute-mode model".to_string(),
        ));
    }
    if attribute >= train.label_width() {
        return Err(Error::Contract(format!(
            "attribute {attribute} out of range for label width {}",
            train.label_width()
        )));
    }
    if intensities.is_empty() {
        return Err(Error::Contract(
            "protocol needs at least one intensity".to_string(),
        ));
    }
    if intensities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(
            "protocol intensities must be strictly increasing".to_string(),
        ));
    }
    if cfg.runs == 0 {
        return Err(Error::Contract("protocol needs at least one run".to_string()));
    }

    let positives: Vec<&[f64]> = (0..train.len())
        .filter(|&i| train.label(i)[attribute] == 1.0)
        .map(|i| train.image(i))
        .collect();
    let negatives: Vec<&[f64]> = (0..train.len())
        .filter(|&i| train.label(i)[attribute] == 0.0)
        .map(|i| train.image(i))
        .collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Contract(format!(
            "training set lacks one class for attribute {attribute}"
        )));
    }

    let neg_test: Vec<usize> = (0..test.len())
        .filter(|&i| test.label(i)[attribute] == 0.0)
        .collect();
    if neg_test.is_empty() {
        return Err(Error::Contract(format!(
            "no attribute-negative test images for attribute {attribute}"
        )));
    }
    let batch = test.gather(&neg_test)?;
    let n = neg_test.len();
    let per: usize = batch.x.len() / n;

    // One classifier per run; reused across intensities.
    let svms: Vec<LinearSvm> = (0..cfg.runs)
        .map(|r| {
            train_attribute_svm(
                &positives,
                &negatives,
                cfg.lambda,
                cfg.epochs,
                cfg.seed + r as u64,
            )
        })
        .collect::<Result<_>>()?;

    let mut error_rates = Vec::with_capacity(intensities.len());
    let mut means = Vec::with_capacity(intensities.len());
    for &intensity in intensities {
        let edited = edit_batch_attribute(params, batch.x.values(), n, attribute, intensity)?;
        let views: Vec<&[f64]> = (0..n).map(|i| &edited[i * per..(i + 1) * per]).collect();
        let mut rates = Vec::with_capacity(cfg.runs);
        for svm in &svms {
            rates.push(svm_error_rate(svm, &views, true)?);
        }
        means.push(rates.iter().sum::<f64>() / rates.len() as f64);
        error_rates.push(rates);
    }

    Ok(ProtocolReport {
        attribute,
        attribute_name: train
            .attr_names
            .as_ref()
            .and_then(|names| names.get(attribute).cloned()),
        intensities: intensities.to_vec(),
        runs: cfg.runs,
        error_rates,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quality_identity_image() {
        let x: Vec<f64> = (0..144).map(|i| (i % 7) as f64 / 7.0).collect();
        let q = image_quality(&x, &x, 1, 12, 12, 1.0).unwrap();
        assert_eq!(q.rmse, 0.0);
        assert_eq!(q.psnr, PSNR_CAP_DB);
        assert!((q.ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_formula_exact() {
        // rmse 0.1 against peak 1 is exactly 20 dB.
        let x = vec![0.5; 16];
        let y = vec![0.6; 16];
        let q = image_quality(&x, &y, 1, 4, 4, 1.0).unwrap();
        assert!((q.rmse - 0.1).abs() < 1e-12);
        assert!((q.psnr - 20.0).abs() < 1e-9);
        assert!((q.psnr - 20.0 * (1.0 / q.rmse).log10()).abs() < 1e-12);
    }

    #[test]
    fn svm_separates_blobs() {
        // Two clearly separated 2-d blobs.
        let pos: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![1.0 + (i % 5) as f64 * 0.01, 1.0])
            .collect();
        let neg: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![-1.0 - (i % 5) as f64 * 0.01, -1.0])
            .collect();
        let pos_refs: Vec<&[f64]> = pos.iter().map(|v| v.as_slice()).collect();
        let neg_refs: Vec<&[f64]> = neg.iter().map(|v| v.as_slice()).collect();
        let svm = train_attribute_svm(&pos_refs, &neg_refs, 1e-4, 20, 3).unwrap();
        assert_eq!(svm.train_accuracy, 1.0);
        assert!(svm.objective_trace.last().unwrap() <= svm.objective_trace.first().unwrap());
    }

    #[test]
    fn svm_deterministic_given_seed() {
        let pos = [[0.9, 0.8], [1.1, 1.2]];
        let neg = [[-0.9, -0.8], [-1.1, -1.2]];
        let pos_refs: Vec<&[f64]> = pos.iter().map(|v| v.as_slice()).collect();
        let neg_refs: Vec<&[f64]> = neg.iter().map(|v| v.as_slice()).collect();
        let a = train_attribute_svm(&pos_refs, &neg_refs, 1e-3, 10, 7).unwrap();
        let b = train_attribute_svm(&pos_refs, &neg_refs, 1e-3, 10, 7).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn svm_rejects_empty_class() {
        let pos = [[1.0, 1.0]];
        let pos_refs: Vec<&[f64]> = pos.iter().map(|v| v.as_slice()).collect();
        assert!(matches!(
            train_attribute_svm(&pos_refs, &[], 1e-4, 5, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn error_rate_extremes() {
        let svm = LinearSvm {
            weights: vec![1.0],
            bias: 0.0,
            lambda: 1e-4,
            train_accuracy: 1.0,
            objective_trace: Vec::new(),
        };
        let pos = [[1.0], [2.0]];
        let neg = [[-1.0], [-2.0]];
        let pos_refs: Vec<&[f64]> = pos.iter().map(|v| v.as_slice()).collect();
        let neg_refs: Vec<&[f64]> = neg.iter().map(|v| v.as_slice()).collect();
        assert_eq!(svm_error_rate(&svm, &pos_refs, true).unwrap(), 0.0);
        assert_eq!(svm_error_rate(&svm, &pos_refs, false).unwrap(), 1.0);
        assert_eq!(svm_error_rate(&svm, &neg_refs, true).unwrap(), 1.0);
        let mixed: Vec<&[f64]> = pos_refs.iter().chain(&neg_refs).copied().collect();
        assert_eq!(svm_error_rate(&svm, &mixed, true).unwrap(), 0.5);
    }

    #[test]
    fn shuffled_labels_sit_near_chance() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Random features, random labels: held-out accuracy should hover
        // around 0.5.
        let data: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<bool> = (0..300).map(|_| rng.random_bool(0.5)).collect();
        let train_pos: Vec<&[f64]> = (0..200)
            .filter(|&i| labels[i])
            .map(|i| data[i].as_slice())
            .collect();
        let train_neg: Vec<&[f64]> = (0..200)
            .filter(|&i| !labels[i])
            .map(|i| data[i].as_slice())
            .collect();
        let svm = train_attribute_svm(&train_pos, &train_neg, 1e-3, 10, 5).unwrap();
        let held: Vec<&[f64]> = (200..300).map(|i| data[i].as_slice()).collect();
        let correct = held
            .iter()
            .enumerate()
            .filter(|(i, x)| svm.classify_positive(x) == labels[200 + i])
            .count();
        let acc = correct as f64 / 100.0;
        assert!((0.35..=0.65).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn protocol_rejects_bad_inputs() {
        use crate::data::{generate_synth, SynthFactorSpec};
        use crate::nets::{Arch, Dims, ValueRange};
        let ds = generate_synth(
            &SynthFactorSpec {
                size: 16,
                samples: 30,
            },
            3,
        )
        .unwrap();
        let params = ModelParams::init(
            Mode::Attribute,
            Dims {
                c: 3,
                z: 2,
                channels: 1,
                height: 16,
                width: 16,
            },
            Arch {
                conv1: 3,
                conv2: 4,
                hidden: 10,
            },
            ValueRange::Unit,
            1,
        )
        .unwrap();
        let cfg = SvmConfig {
            runs: 1,
            epochs: 2,
            ..SvmConfig::default()
        };
        // Non-increasing intensities.
        assert!(disentanglement_protocol(&params, &ds, &ds, 0, &[1.0, 0.5], &cfg).is_err());
        // Attribute out of range.
        assert!(disentanglement_protocol(&params, &ds, &ds, 9, &[1.0], &cfg).is_err());
        // Single intensity on valid data produces a report of length 1.
        let report = disentanglement_protocol(&params, &ds, &ds, 0, &[1.0], &cfg).unwrap();
        assert_eq!(report.intensities.len(), 1);
        assert_eq!(report.error_rates.len(), 1);
        assert_eq!(report.error_rates[0].len(), 1);
        assert!(report.means[0] >= 0.0 && report.means[0] <= 1.0);
        assert_eq!(report.attribute_name.as_deref(), Some("box"));
    }
}
