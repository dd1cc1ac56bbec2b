//! Image quality metrics: PSNR, SSIM (both optionally restricted to a mask)
//! and a kernel MMD distance between image sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAX_VALUE: f64 = 1.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(op: &'static str, a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    if let Some(m) = mask {
        if m.shape() != a.shape() {
            return Err(Error::dim(op, format!("mask {:?} vs image {:?}", m.shape(), a.shape())));
        }
        if !m.data().iter().any(|&v| v > 0.5) {
            return Err(Error::Domain(format!("{op}: mask selects no pixels")));
        }
    }
    Ok(())
}

fn selected(mask: Option<&Tensor>, i: usize) -> bool {
    mask.is_none_or(|m| m.data()[i] > 0.5)
}

/// Peak signal-to-noise ratio in decibels with peak value 1. Identical inputs
/// give `f64::INFINITY`. A mask restricts the error to pixels where it is 1.
pub fn psnr(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    check_pair("psnr", a, b, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        if selected(mask, i) {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Domain("psnr: empty image".into()));
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (MAX_VALUE * MAX_VALUE / mse).log10()
    })
}

/// Normalised 1-D Gaussian window of length [`SSIM_WINDOW`].
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (k, wk) in w.iter_mut().enumerate() {
        let x = k as f64 - c;
        *wk = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * (n - 1);
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - r;
    }
    r as usize
}

fn blur(img: &[f64], h: usize, w: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as i64;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * img[y * w + reflect(x as i64 + k as i64 - half, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, wk)| wk * rows[reflect(y as i64 + k as i64 - half, h) * w + x])
                .sum();
        }
    }
    out
}

/// Per-pixel SSIM map. Every pixel is a window center; the borders are
/// mirror-padded.
pub fn ssim_map(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_pair("ssim", a, b, None)?;
    let (h, w) = match a.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::dim("ssim", format!("expected rank 2, got {other:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(
            "ssim",
            format!("{h}x{w} image is smaller than the {SSIM_WINDOW}-pixel window"),
        ));
    }
    let kernel = gaussian_window();
    let (ad, bd) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = blur(ad, h, w, &kernel);
    let mu_b = blur(bd, h, w, &kernel);
    let e_aa = blur(&prod(&|x, _| x * x), h, w, &kernel);
    let e_bb = blur(&prod(&|_, y| y * y), h, w, &kernel);
    let e_ab = blur(&prod(&|x, y| x * y), h, w, &kernel);
    let c1 = (SSIM_K1 * MAX_VALUE).powi(2);
    let c2 = (SSIM_K2 * MAX_VALUE).powi(2);
    let data = (0..h * w)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .collect();
    Tensor::new(vec![h, w], data)
}

/// Mean SSIM over all window centers, or over the centers selected by `mask`.
pub fn ssim(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> Result<f64> {
    check_pair("ssim", a, b, mask)?;
    let map = ssim_map(a, b)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, v) in map.data().iter().enumerate() {
        if selected(mask, i) {
            sum += v;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median Euclidean distance over all distinct pairs of the pooled sets, or 1
/// when that median is zero.
pub fn median_bandwidth(set_a: &[Tensor], set_b: &[Tensor]) -> f64 {
    let pooled: Vec<&[f64]> = set_a.iter().chain(set_b).map(Tensor::data).collect();
    let mut d = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            d.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 {
        d[n / 2]
    } else {
        0.5 * (d[n / 2 - 1] + d[n / 2])
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

/// Unbiased MMD² with a Gaussian RBF kernel on flattened pixels and
/// median-heuristic bandwidth. The two sets must be the same size; the
/// estimator is the U-statistic over index pairs `i != j` of
/// `k(a_i, a_j) + k(b_i, b_j) - k(a_i, b_j) - k(a_j, b_i)`, which is exactly
/// zero when the sets are equal element by element.
pub fn kernel_mmd(set_a: &[Tensor], set_b: &[Tensor]) -> Result<f64> {
    let n = set_a.len();
    if n < 2 || set_b.len() < 2 {
        return Err(Error::Domain("kernel_mmd: each set needs at least 2 images".into()));
    }
    if set_b.len() != n {
        return Err(Error::dim(
            "kernel_mmd",
            format!("set sizes {} and {} differ", n, set_b.len()),
        ));
    }
    let len = set_a[0].len();
    if set_a.iter().chain(set_b).any(|t| t.len() != len) {
        return Err(Error::dim("kernel_mmd", "images differ in size"));
    }
    let sigma = median_bandwidth(set_a, set_b);
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |x: &Tensor, y: &Tensor| (-gamma * sq_dist(x.data(), y.data())).exp();
    let kaa = gram(set_a, set_a, &k);
    let kbb = gram(set_b, set_b, &k);
    let kab = gram(set_a, set_b, &k);
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += (kaa[i * n + j] + kbb[i * n + j]) - (kab[i * n + j] + kab[j * n + i]);
            }
        }
    }
    Ok(total / (n * (n - 1)) as f64)
}

fn gram(xs: &[Tensor], ys: &[Tensor], k: &dyn Fn(&Tensor, &Tensor) -> f64) -> Vec<f64> {
    xs.iter().flat_map(|x| ys.iter().map(move |y| k(x, y))).collect()
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub model: String,
    pub task: String,
    pub m: usize,
    pub alpha: f64,
    pub psnr_full: f64,
    pub ssim_full: f64,
    pub psnr_region: f64,
    pub ssim_region: f64,
    pub mmd: Option<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "method,model,task,M,alpha,psnr_full,ssim_full,psnr_region,ssim_region,mmd,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.model,
            self.task,
            self.m,
            self.alpha,
            fmt_metric(self.psnr_full),
            fmt_metric(self.ssim_full),
            fmt_metric(self.psnr_region),
            fmt_metric(self.ssim_region),
            self.mmd.map(fmt_metric).unwrap_or_default(),
            self.seed
        )
    }
}

/// Shortest round-trip formatting, with `inf` for the identical-image PSNR.
pub fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Mean of metric values with `+inf` entries capped at [`PSNR_CAP`].
pub fn mean_capped(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().map(|v| v.min(PSNR_CAP)).sum::<f64>() / values.len() as f64
}

pub const PSNR_CAP: f64 = 100.0;
