//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use flowsteer::Tensor;

/// Mirror an out-of-range index back into `0..n` by repeated reflection.
fn mirror(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// SSIM computed window by window with explicit 2-D Gaussian weights and
/// two-pass (centered) moments.
pub fn ssim_direct(a: &Tensor, b: &Tensor, mask: Option<&Tensor>) -> f64 {
    let (h, w) = (a.shape()[0], a.shape()[1]);
    let radius = 5i64;
    let sigma: f64 = 1.5;
    let mut g = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            g.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let (mut sum, mut count) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            if let Some(m) = mask {
                if m.data()[y * w + x] <= 0.5 {
                    continue;
                }
            }
            let mut pa = Vec::new();
            let mut pb = Vec::new();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let yy = mirror(y as i64 + dy, h);
                    let xx = mirror(x as i64 + dx, w);
                    pa.push(a.data()[yy * w + xx]);
                    pb.push(b.data()[yy * w + xx]);
                }
            }
            let mu_a: f64 = g.iter().zip(&pa).map(|(k, v)| k * v).sum();
            let mu_b: f64 = g.iter().zip(&pb).map(|(k, v)| k * v).sum();
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for k in 0..g.len() {
                var_a += g[k] * (pa[k] - mu_a) * (pa[k] - mu_a);
                var_b += g[k] * (pb[k] - mu_b) * (pb[k] - mu_b);
                cov += g[k] * (pa[k] - mu_a) * (pb[k] - mu_b);
            }
            sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    sum / count as f64
}

fn distance(x: &Tensor, y: &Tensor) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        s += (x.data()[i] - y.data()[i]).powi(2);
    }
    s.sqrt()
}

/// Paired U-statistic MMD² by explicit double loop, with its own
/// median-distance bandwidth.
pub fn mmd_double_loop(xs: &[Tensor], ys: &[Tensor]) -> f64 {
    let pooled: Vec<&Tensor> = xs.iter().chain(ys.iter()).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in 0..pooled.len() {
            if i < j {
                dists.push(distance(pooled[i], pooled[j]));
            }
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let mut sigma = if m % 2 == 1 {
        dists[m / 2]
    } else {
        (dists[m / 2 - 1] + dists[m / 2]) / 2.0
    };
    if sigma == 0.0 {
        sigma = 1.0;
    }
    let k = |a: &Tensor, b: &Tensor| (-distance(a, b).powi(2) / (2.0 * sigma * sigma)).exp();
    let n = xs.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            total += k(&xs[i], &xs[j]) + k(&ys[i], &ys[j]) - k(&xs[i], &ys[j]) - k(&xs[j], &ys[i]);
        }
    }
    total / (n * (n - 1)) as f64
}

/// Row-major triple-loop matrix product.
pub fn matmul_loops(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    Tensor::matrix(m, n, out).unwrap()
}
