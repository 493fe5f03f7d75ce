//! Loss terms: reconstruction (squared error plus optional structural
//! dissimilarity), discriminative (cross entropy / binary cross entropy
//! against the soft target representation), and the two decorrelation
//! regularizers (squared sample distance covariance and cross covariance).
//! All losses are built on the differentiation graph so their gradients flow
//! into whatever produced the inputs.

use crate::error::{Error, Result};
use crate::nets::Mode;
use crate::tensor::{Graph, Tensor, EPS_NUM};

/// Wang'03 per-scale exponents for the multi-scale structural similarity
/// index; renormalized to sum to 1 over however many scales are used.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Which decorrelation regularizer the total loss applies to (Ŷ, Z).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decorrelation {
    DCov2,
    XCov,
    None,
}

impl std::fmt::Display for Decorrelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Decorrelation::DCov2 => write!(f, "dcov2"),
            Decorrelation::XCov => write!(f, "xcov"),
            Decorrelation::None => write!(f, "none"),
        }
    }
}

/// Constant weights of the total loss: `alpha` scales the structural
/// dissimilarity inside the reconstruction term, `beta` the discriminative
/// term, `gamma` the decorrelation term.
#[derive(Debug, Clone)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub decorrelation: Decorrelation,
    pub use_dssim: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 5.0,
            decorrelation: Decorrelation::DCov2,
            use_dssim: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Contract(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-term values of one total-loss evaluation, for logging.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown {
    pub rec: f64,
    pub dis: f64,
    pub dec: f64,
    pub total: f64,
}

/// Pairwise-distance matrix of a batch together with its doubly centered
/// form and the means removed by the centering.
pub struct CenteredDistanceMatrix {
    pub raw: Tensor,
    pub centered: Tensor,
    pub row_means: Vec<f64>,
    pub col_means: Vec<f64>,
    pub grand_mean: f64,
}

/// Squared L2 norm of the difference, summed over every element of the
/// given tensors. For a batch this is the sum over samples; the total loss
/// divides by the batch size.
pub fn mse_loss(g: &Graph, x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "mse_loss: shapes {:?} and {:?} differ",
            x.shape(),
            x_hat.shape()
        )));
    }
    let diff = g.sub(x, x_hat)?;
    let sq = g.mul(&diff, &diff)?;
    g.sum_all(&sq)
}

/// Settings for the structural similarity index.
#[derive(Debug, Clone)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values (1 for [0,1] data, 2 for [-1,1]).
    pub peak: f64,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

/// Settings for the multi-scale index.
#[derive(Debug, Clone)]
pub struct MsSsimOptions {
    pub ssim: SsimOptions,
    /// Requested number of scales; reduced automatically when the image is
    /// too small.
    pub scales: usize,
}

impl Default for MsSsimOptions {
    fn default() -> Self {
        MsSsimOptions {
            ssim: SsimOptions::default(),
            scales: 5,
        }
    }
}

/// What the multi-scale computation actually ran with.
#[derive(Debug, Clone, Copy)]
pub struct MsSsimReport {
    pub requested_scales: usize,
    pub used_scales: usize,
    pub window: usize,
    /// True when the scale count had to be reduced for the image size.
    pub reduced: bool,
}

pub(crate) fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut w = vec![0.0; size * size];
    let mut sum = 0.0;
    for i in 0..size {
        for j in 0..size {
            let di = i as f64 - c;
            let dj = j as f64 - c;
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            w[i * size + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

fn as_nchw(g: &Graph, t: &Tensor) -> Result<Tensor> {
    match t.shape().len() {
        4 => Ok(t.clone()),
        3 => {
            let s = t.shape().to_vec();
            g.reshape(t, &[1, s[0], s[1], s[2]])
        }
        _ => Err(Error::Dimension(format!(
            "expected an image of shape CxHxW or NxCxHxW, got {:?}",
            t.shape()
        ))),
    }
}

struct SsimMaps {
    ssim_map: Tensor,
    cs_map: Tensor,
}

fn ssim_maps(g: &Graph, x: &Tensor, y: &Tensor, opts: &SsimOptions) -> Result<SsimMaps> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let win = opts.window.min(h).min(w);
    let kernel = gaussian_window(win, opts.sigma);
    let c1 = (opts.k1 * opts.peak) * (opts.k1 * opts.peak);
    let c2 = (opts.k2 * opts.peak) * (opts.k2 * opts.peak);

    let filt = |t: &Tensor| g.depthwise_conv2d_fixed(t, &kernel, win, win, 1, 0);
    let mu_x = filt(x)?;
    let mu_y = filt(y)?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let sxx = g.sub(&filt(&xx)?, &g.mul(&mu_x, &mu_x)?)?;
    let syy = g.sub(&filt(&yy)?, &g.mul(&mu_y, &mu_y)?)?;
    let sxy = g.sub(&filt(&xy)?, &g.mul(&mu_x, &mu_y)?)?;

    let l_num = g.affine(&g.mul(&mu_x, &mu_y)?, 2.0, c1)?;
    let l_den = g.affine(
        &g.add(&g.mul(&mu_x, &mu_x)?, &g.mul(&mu_y, &mu_y)?)?,
        1.0,
        c1,
    )?;
    let cs_num = g.affine(&sxy, 2.0, c2)?;
    let cs_den = g.affine(&g.add(&sxx, &syy)?, 1.0, c2)?;

    let l_map = g.div(&l_num, &l_den)?;
    let cs_map = g.div(&cs_num, &cs_den)?;
    let ssim_map = g.mul(&l_map, &cs_map)?;
    Ok(SsimMaps { ssim_map, cs_map })
}

/// Single-scale structural similarity: mean of the local index over all
/// valid window positions, channels, and (if batched) samples. The window
/// shrinks to the image when the spatial extent is below the window size.
pub fn ssim(g: &Graph, x: &Tensor, x_hat: &Tensor, opts: &SsimOptions) -> Result<Tensor> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "ssim: shapes {:?} and {:?} differ",
            x.shape(),
            x_hat.shape()
        )));
    }
    let a = as_nchw(g, x)?;
    let b = as_nchw(g, x_hat)?;
    let maps = ssim_maps(g, &a, &b, opts)?;
    g.mean_all(&maps.ssim_map)
}

/// Multi-scale structural similarity: contrast-structure terms at every
/// scale and the full index at the coarsest scale, each term averaged over
/// its map and raised to the (renormalized) per-scale weight. Downsampling
/// between scales is 2x2 mean pooling. With a single scale this reduces to
/// plain [`ssim`].
pub fn ms_ssim(
    g: &Graph,
    x: &Tensor,
    x_hat: &Tensor,
    opts: &MsSsimOptions,
) -> Result<(Tensor, MsSsimReport)> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "ms_ssim: shapes {:?} and {:?} differ",
            x.shape(),
            x_hat.shape()
        )));
    }
    if opts.scales == 0 || opts.scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::Contract(format!(
            "ms_ssim: scales must be in 1..={}, got {}",
            MS_SSIM_WEIGHTS.len(),
            opts.scales
        )));
    }
    let mut a = as_nchw(g, x)?;
    let mut b = as_nchw(g, x_hat)?;
    let min_dim = a.shape()[2].min(a.shape()[3]);
    let used = if min_dim < opts.ssim.window {
        1
    } else {
        let max_scales =
            1 + ((min_dim as f64) / (opts.ssim.window as f64)).log2().floor() as usize;
        opts.scales.min(max_scales)
    };
    let report = MsSsimReport {
        requested_scales: opts.scales,
        used_scales: used,
        window: opts.ssim.window.min(min_dim),
        reduced: used < opts.scales,
    };
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..used].iter().sum();

    let pool = [0.25; 4];
    let mut log_acc: Option<Tensor> = None;
    for scale in 0..used {
        let maps = ssim_maps(g, &a, &b, &opts.ssim)?;
        let term = if scale + 1 == used {
            g.mean_all(&maps.ssim_map)?
        } else {
            g.mean_all(&maps.cs_map)?
        };
        let weighted = g.affine(&g.log(&term), MS_SSIM_WEIGHTS[scale] / weight_sum, 0.0)?;
        log_acc = Some(match log_acc {
            Some(acc) => g.add(&acc, &weighted)?,
            None => weighted,
        });
        if scale + 1 < used {
            a = g.depthwise_conv2d_fixed(&a, &pool, 2, 2, 2, 0)?;
            b = g.depthwise_conv2d_fixed(&b, &pool, 2, 2, 2, 0)?;
        }
    }
    let value = g.exp(&log_acc.expect("at least one scale"));
    Ok((value, report))
}

/// Structural dissimilarity `(1 - MS-SSIM) / 2`, in [0, 1].
pub fn dssim_loss(
    g: &Graph,
    x: &Tensor,
    x_hat: &Tensor,
    opts: &MsSsimOptions,
) -> Result<(Tensor, MsSsimReport)> {
    let (ms, report) = ms_ssim(g, x, x_hat, opts)?;
    Ok((g.affine(&ms, -0.5, 0.5)?, report))
}

/// Batch-mean reconstruction loss: per-sample squared error plus
/// `alpha` times the per-sample structural dissimilarity (when enabled),
/// averaged over the batch. For a single image this is exactly
/// `mse + alpha * dssim`.
pub fn reconstruction_loss(
    g: &Graph,
    x: &Tensor,
    x_hat: &Tensor,
    weights: &LossWeights,
    peak: f64,
) -> Result<Tensor> {
    let a = as_nchw(g, x)?;
    let b = as_nchw(g, x_hat)?;
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "reconstruction_loss: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.shape()[0];
    let mse_sum = mse_loss(g, &a, &b)?;
    let mut loss = g.affine(&mse_sum, 1.0 / n as f64, 0.0)?;
    if weights.use_dssim && weights.alpha > 0.0 {
        let opts = MsSsimOptions {
            ssim: SsimOptions {
                peak,
                ..SsimOptions::default()
            },
            ..MsSsimOptions::default()
        };
        let mut dssim_acc: Option<Tensor> = None;
        for i in 0..n {
            let xi = g.slice_batch(&a, i, 1)?;
            let yi = g.slice_batch(&b, i, 1)?;
            let (d, _) = dssim_loss(g, &xi, &yi, &opts)?;
            dssim_acc = Some(match dssim_acc {
                Some(acc) => g.add(&acc, &d)?,
                None => d,
            });
        }
        let dssim_mean = g.affine(
            &dssim_acc.expect("batch is non-empty"),
            weights.alpha / n as f64,
            0.0,
        )?;
        loss = g.add(&loss, &dssim_mean)?;
    }
    Ok(loss)
}

fn check_one_hot(y: &[f64]) -> Result<()> {
    let mut ones = 0;
    for &v in y {
        if v == 1.0 {
            ones += 1;
        } else if v != 0.0 {
            return Err(Error::Contract(format!(
                "label entry {v} is not 0 or 1; expected a one-hot vector"
            )));
        }
    }
    if ones != 1 {
        return Err(Error::Contract(format!(
            "expected exactly one 1 in a one-hot label, found {ones}"
        )));
    }
    Ok(())
}

fn check_binary(y: &[f64]) -> Result<()> {
    for &v in y {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Contract(format!(
                "label entry {v} is not 0 or 1; expected a binary vector"
            )));
        }
    }
    Ok(())
}

/// Cross entropy `-sum_i y_i log(y_hat_i)` between a one-hot label and a
/// probability vector. Probabilities are clamped into
/// `[EPS_NUM, 1 - EPS_NUM]` before the log.
pub fn ce_loss(g: &Graph, y: &[f64], y_hat: &Tensor) -> Result<Tensor> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "ce_loss: label length {} does not match prediction length {}",
            y.len(),
            y_hat.len()
        )));
    }
    check_one_hot(y)?;
    let flat = g.reshape(y_hat, &[1, y.len()])?;
    ce_loss_batch(g, y, &flat)
}

/// Batch mean of the per-row cross entropy. `labels` is a row-major N×C
/// matrix of one-hot rows.
pub fn ce_loss_batch(g: &Graph, labels: &[f64], y_hat: &Tensor) -> Result<Tensor> {
    let s = y_hat.shape();
    if s.len() != 2 || labels.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "ce_loss_batch: labels ({}) do not match predictions of shape {s:?}",
            labels.len()
        )));
    }
    let (n, c) = (s[0], s[1]);
    for row in 0..n {
        check_one_hot(&labels[row * c..(row + 1) * c])?;
    }
    let y = Tensor::new(&[n, c], labels.to_vec())?;
    let clamped = g.clamp01(y_hat, EPS_NUM);
    let log_p = g.log(&clamped);
    let picked = g.mul(&y, &log_p)?;
    let total = g.sum_all(&picked)?;
    g.affine(&total, -1.0 / n as f64, 0.0)
}

/// Binary cross entropy with the 1/C prefactor:
/// `-(1/C) sum_i [y_i log(y_hat_i) + (1-y_i) log(1-y_hat_i)]`.
pub fn bce_loss(g: &Graph, y: &[f64], y_hat: &Tensor) -> Result<Tensor> {
    if y.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "bce_loss: label length {} does not match prediction length {}",
            y.len(),
            y_hat.len()
        )));
    }
    check_binary(y)?;
    let flat = g.reshape(y_hat, &[1, y.len()])?;
    bce_loss_batch(g, y, &flat)
}

/// Batch mean of the per-row binary cross entropy.
pub fn bce_loss_batch(g: &Graph, labels: &[f64], y_hat: &Tensor) -> Result<Tensor> {
    let s = y_hat.shape();
    if s.len() != 2 || labels.len() != y_hat.len() {
        return Err(Error::Dimension(format!(
            "bce_loss_batch: labels ({}) do not match predictions of shape {s:?}",
            labels.len()
        )));
    }
    let (n, c) = (s[0], s[1]);
    check_binary(labels)?;
    let y = Tensor::new(&[n, c], labels.to_vec())?;
    let clamped = g.clamp01(y_hat, EPS_NUM);
    let log_p = g.log(&clamped);
    let one_minus = g.affine(&clamped, -1.0, 1.0)?;
    let log_q = g.log(&one_minus);
    let y_flip = g.affine(&y, -1.0, 1.0)?;
    let pos = g.mul(&y, &log_p)?;
    let neg = g.mul(&y_flip, &log_q)?;
    let total = g.sum_all(&g.add(&pos, &neg)?)?;
    g.affine(&total, -1.0 / (n * c) as f64, 0.0)
}

/// Pairwise Euclidean distances between batch rows: the raw part of a
/// centered distance matrix.
pub fn pairwise_distances(g: &Graph, m: &Tensor) -> Result<Tensor> {
    g.pairwise_distances(m)
}

/// Doubly centered distance matrix: subtract row and column means of the raw
/// distances and add back the grand mean.
pub fn double_center(g: &Graph, raw: &Tensor) -> Result<Tensor> {
    g.double_center(raw)
}

/// Raw and centered distance matrices plus the removed means.
pub fn centered_distances(g: &Graph, m: &Tensor) -> Result<CenteredDistanceMatrix> {
    let raw = g.pairwise_distances(m)?;
    let centered = g.double_center(&raw)?;
    let n = raw.shape()[0];
    let v = raw.values();
    let mut row_means = vec![0.0; n];
    let mut col_means = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = v[i * n + j];
            row_means[i] += x;
            col_means[j] += x;
            grand += x;
        }
    }
    for m in row_means.iter_mut().chain(col_means.iter_mut()) {
        *m /= n as f64;
    }
    grand /= (n * n) as f64;
    Ok(CenteredDistanceMatrix {
        raw,
        centered,
        row_means,
        col_means,
        grand_mean: grand,
    })
}

fn check_paired_batches(ctx: &str, y: &Tensor, z: &Tensor) -> Result<usize> {
    let (sy, sz) = (y.shape(), z.shape());
    if sy.len() != 2 || sz.len() != 2 {
        return Err(Error::Dimension(format!(
            "{ctx}: expected two matrices, got shapes {sy:?} and {sz:?}"
        )));
    }
    if sy[0] != sz[0] {
        return Err(Error::Contract(format!(
            "{ctx}: batch sizes {} and {} differ",
            sy[0], sz[0]
        )));
    }
    if sy[0] < 2 {
        return Err(Error::Contract(format!(
            "{ctx}: needs at least 2 samples, got {}",
            sy[0]
        )));
    }
    Ok(sy[0])
}

/// Squared sample distance covariance of two batches: the mean over all
/// (n, m) of the product of doubly centered distances. Non-negative; zero
/// when either batch is constant.
pub fn dcov2(g: &Graph, y_hat: &Tensor, z: &Tensor) -> Result<Tensor> {
    check_paired_batches("dcov2", y_hat, z)?;
    let a = g.double_center(&g.pairwise_distances(y_hat)?)?;
    let b = g.double_center(&g.pairwise_distances(z)?)?;
    let prod = g.mul(&a, &b)?;
    g.mean_all(&prod)
}

/// Cross covariance: half the sum over coordinate pairs of the squared
/// empirical covariance between the batches.
pub fn xcov(g: &Graph, y_hat: &Tensor, z: &Tensor) -> Result<Tensor> {
    let n = check_paired_batches("xcov", y_hat, z)?;
    let center = |t: &Tensor| -> Result<Tensor> {
        let means = g.reduce_mean(t, &[0])?;
        let wide = g.broadcast_row(&means, n)?;
        g.sub(t, &wide)
    };
    let yc = center(y_hat)?;
    let zc = center(z)?;
    let cross = g.matmul(&g.transpose(&yc)?, &zc)?;
    let scaled = g.affine(&cross, 1.0 / n as f64, 0.0)?;
    let sq = g.mul(&scaled, &scaled)?;
    g.affine(&g.sum_all(&sq)?, 0.5, 0.0)
}

/// The total training loss: batch-mean reconstruction, plus `beta` times the
/// batch-mean discriminative loss, plus `gamma` times the batch-level
/// decorrelation loss. Returns the scalar on the graph plus a breakdown for
/// logging.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &Graph,
    x: &Tensor,
    x_hat: &Tensor,
    labels: &[f64],
    y_hat: &Tensor,
    z: &Tensor,
    mode: Mode,
    weights: &LossWeights,
    peak: f64,
) -> Result<(Tensor, LossBreakdown)> {
    weights.validate()?;
    let rec = reconstruction_loss(g, x, x_hat, weights, peak)?;
    let dis = match mode {
        Mode::Class => ce_loss_batch(g, labels, y_hat)?,
        Mode::Attribute => bce_loss_batch(g, labels, y_hat)?,
    };
    let dec = match weights.decorrelation {
        Decorrelation::DCov2 => Some(dcov2(g, y_hat, z)?),
        Decorrelation::XCov => Some(xcov(g, y_hat, z)?),
        Decorrelation::None => None,
    };
    let mut total = g.add(&rec, &g.affine(&dis, weights.beta, 0.0)?)?;
    let dec_value = match &dec {
        Some(d) => {
            total = g.add(&total, &g.affine(d, weights.gamma, 0.0)?)?;
            d.item()
        }
        None => 0.0,
    };
    let breakdown = LossBreakdown {
        rec: rec.item(),
        dis: dis.item(),
        dec: dec_value,
        total: total.item(),
    };
    Ok((total, breakdown))
}
