//! Straight-line reference implementations used as independent oracles.
//! These deliberately avoid the graph engine: plain nested loops over plain
//! slices.

/// Direct six-nested-loop 2-D cross-correlation.
/// x: N x C_in x H x W, k: C_out x C_in x KH x KW.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_loops(
    x: &[f64],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: &[f64],
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let h_out = (h + 2 * pad - kh) / stride + 1;
    let w_out = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * c_out * h_out * w_out];
    for ni in 0..n {
        for co in 0..c_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (oh * stride + ki) as isize - pad as isize;
                                let iw = (ow * stride + kj) as isize - pad as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * c_in + ci) * h + ih as usize) * w + iw as usize];
                                let kv = k[((co * c_in + ci) * kh + ki) * kw + kj];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((ni * c_out + co) * h_out + oh) * w_out + ow] = acc;
                }
            }
        }
    }
    out
}

/// Double-loop pairwise Euclidean distances between the rows of an n x d
/// matrix.
pub fn pairwise_loops(m: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..d {
                let diff = m[i * d + t] - m[j * d + t];
                acc += diff * diff;
            }
            out[i * n + j] = acc.sqrt();
        }
    }
    out
}

/// Double centering by explicit row/column/grand means.
pub fn double_center_loops(raw: &[f64], n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    let mut col = vec![0.0; n];
    let mut grand = 0.0;
    for i in 0..n {
        for j in 0..n {
            row[i] += raw[i * n + j];
            col[j] += raw[i * n + j];
            grand += raw[i * n + j];
        }
    }
    for v in row.iter_mut().chain(col.iter_mut()) {
        *v /= n as f64;
    }
    grand /= (n * n) as f64;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = raw[i * n + j] - row[i] - col[j] + grand;
        }
    }
    out
}

/// Squared sample distance covariance evaluated literally: pairwise
/// distances, double centering, mean of the elementwise product.
pub fn dcov2_loops(y: &[f64], z: &[f64], n: usize, dy: usize, dz: usize) -> f64 {
    let a = double_center_loops(&pairwise_loops(y, n, dy), n);
    let b = double_center_loops(&pairwise_loops(z, n, dz), n);
    let mut acc = 0.0;
    for i in 0..n * n {
        acc += a[i] * b[i];
    }
    acc / (n * n) as f64
}

/// Cross covariance evaluated literally from the definition.
pub fn xcov_direct(y: &[f64], z: &[f64], n: usize, c: usize, d: usize) -> f64 {
    let mut y_mean = vec![0.0; c];
    let mut z_mean = vec![0.0; d];
    for row in 0..n {
        for i in 0..c {
            y_mean[i] += y[row * c + i];
        }
        for j in 0..d {
            z_mean[j] += z[row * d + j];
        }
    }
    for v in y_mean.iter_mut() {
        *v /= n as f64;
    }
    for v in z_mean.iter_mut() {
        *v /= n as f64;
    }
    let mut acc = 0.0;
    for i in 0..c {
        for j in 0..d {
            let mut cov = 0.0;
            for row in 0..n {
                cov += (y[row * c + i] - y_mean[i]) * (z[row * d + j] - z_mean[j]);
            }
            cov /= n as f64;
            acc += cov * cov;
        }
    }
    0.5 * acc
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
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

/// Mean SSIM map value and mean contrast-structure value for one C x H x W
/// image pair at one scale, computed window by window.
#[allow(clippy::too_many_arguments)]
fn ssim_scale_loops(
    x: &[f64],
    y: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    window: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
    peak: f64,
) -> (f64, f64) {
    let win = window.min(h).min(w);
    let kern = gaussian_window(win, sigma);
    let c1 = (k1 * peak) * (k1 * peak);
    let c2 = (k2 * peak) * (k2 * peak);
    let h_out = h - win + 1;
    let w_out = w - win + 1;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for c in 0..channels {
        let xs = &x[c * h * w..(c + 1) * h * w];
        let ys = &y[c * h * w..(c + 1) * h * w];
        for oh in 0..h_out {
            for ow in 0..w_out {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let kv = kern[i * win + j];
                        let xv = xs[(oh + i) * w + ow + j];
                        let yv = ys[(oh + i) * w + ow + j];
                        mx += kv * xv;
                        my += kv * yv;
                        sxx += kv * xv * xv;
                        syy += kv * yv * yv;
                        sxy += kv * xv * yv;
                    }
                }
                sxx -= mx * mx;
                syy -= my * my;
                sxy -= mx * my;
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                let cs = (2.0 * sxy + c2) / (sxx + syy + c2);
                ssim_sum += l * cs;
                cs_sum += cs;
            }
        }
    }
    let count = (channels * h_out * w_out) as f64;
    (ssim_sum / count, cs_sum / count)
}

fn downsample_2x2(x: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let h2 = h / 2;
    let w2 = w / 2;
    let mut out = vec![0.0; channels * h2 * w2];
    for c in 0..channels {
        for i in 0..h2 {
            for j in 0..w2 {
                let mut acc = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        acc += x[(c * h + 2 * i + di) * w + 2 * j + dj];
                    }
                }
                out[(c * h2 + i) * w2 + j] = 0.25 * acc;
            }
        }
    }
    (out, h2, w2)
}

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Straight-line multi-scale structural similarity for one C x H x W pair,
/// mirroring the documented conventions: contrast-structure means at every
/// scale, the full index mean at the coarsest scale, weights renormalized,
/// terms floored at 1e-12 before the power.
#[allow(clippy::too_many_arguments)]
pub fn ms_ssim_loops(
    x: &[f64],
    y: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    requested_scales: usize,
    window: usize,
    sigma: f64,
    k1: f64,
    k2: f64,
    peak: f64,
) -> f64 {
    let min_dim = h.min(w);
    let used = if min_dim < window {
        1
    } else {
        requested_scales.min(1 + ((min_dim as f64) / (window as f64)).log2().floor() as usize)
    };
    let weight_sum: f64 = MS_SSIM_WEIGHTS[..used].iter().sum();
    let mut cur_x = x.to_vec();
    let mut cur_y = y.to_vec();
    let (mut ch, mut cw) = (h, w);
    let mut result = 1.0;
    for scale in 0..used {
        let (ssim_mean, cs_mean) =
            ssim_scale_loops(&cur_x, &cur_y, channels, ch, cw, window, sigma, k1, k2, peak);
        let term = if scale + 1 == used { ssim_mean } else { cs_mean };
        result *= term.max(1e-12).powf(MS_SSIM_WEIGHTS[scale] / weight_sum);
        if scale + 1 < used {
            let (nx, nh, nw) = downsample_2x2(&cur_x, channels, ch, cw);
            let (ny, _, _) = downsample_2x2(&cur_y, channels, ch, cw);
            cur_x = nx;
            cur_y = ny;
            ch = nh;
            cw = nw;
        }
    }
    result
}
