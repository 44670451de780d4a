//! Discrete convolutions: a one-shot FFT convolution and an online
//! (relaxed) variant for Volterra-type recursions whose inputs become
//! known one sample at a time.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

const DIRECT_LIMIT: usize = 64;

/// Full linear convolution `c[n] = Σ_k a[k] b[n-k]`, of length
/// `a.len() + b.len() - 1`.
pub fn linear_convolution(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= DIRECT_LIMIT || a.len().saturating_mul(b.len()) <= 1 << 16 {
        let mut out = vec![0.0; out_len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let size = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa = to_complex(a, size);
    let mut fb = to_complex(b, size);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa.iter().take(out_len).map(|c| c.re * scale).collect()
}

fn to_complex(v: &[f64], size: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); size];
    for (o, &x) in out.iter_mut().zip(v) {
        o.re = x;
    }
    out
}

struct Level {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kernel_hat: Vec<Complex<f64>>,
}

/// Online evaluation of `s[n] = Σ_{d=1}^{n} w[d] g[n-d]` where `g[n]` may
/// depend on `s[n]`.
///
/// Inputs are split into dyadic blocks of size `p` aligned at multiples of
/// `p`; each completed block is convolved with the kernel lags `[p, 2p)`.
/// Every pair `(j, d)` is covered exactly once and always before `s[j + d]`
/// is requested, for a total cost of `O(n log² n)`.
pub struct OnlineConvolution {
    kernel: Vec<f64>,
    values: Vec<f64>,
    acc: Vec<f64>,
    planner: FftPlanner<f64>,
    levels: Vec<Option<Level>>,
}

impl OnlineConvolution {
    /// `kernel[d]` is the weight of lag `d`; `kernel[0]` is never used.
    /// `len` bounds the number of outputs that will be requested.
    pub fn new(kernel: Vec<f64>, len: usize) -> Self {
        Self {
            kernel,
            values: Vec::with_capacity(len),
            acc: vec![0.0; len + 1],
            planner: FftPlanner::new(),
            levels: Vec::new(),
        }
    }

    /// History sum for the next index `n = self.len()`.
    pub fn history(&self) -> f64 {
        self.acc.get(self.values.len()).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Append the next input value.
    pub fn push(&mut self, g: f64) {
        self.values.push(g);
        let done = self.values.len();
        let mut p = 1;
        let mut level = 0;
        while done.is_multiple_of(p) {
            if p >= self.kernel.len() {
                break;
            }
            self.flush_block(done - p, p, level);
            p <<= 1;
            level += 1;
        }
    }

    fn flush_block(&mut self, start: usize, p: usize, level: usize) {
        let lag_hi = (2 * p).min(self.kernel.len());
        let out_base = start + p;
        if out_base >= self.acc.len() {
            return;
        }
        if p <= DIRECT_LIMIT {
            for j in 0..p {
                let g = self.values[start + j];
                if g == 0.0 {
                    continue;
                }
                for d in p..lag_hi {
                    let n = start + j + d;
                    if n >= self.acc.len() {
                        break;
                    }
                    self.acc[n] += self.kernel[d] * g;
                }
            }
            return;
        }
        if self.levels.len() <= level {
            self.levels.resize_with(level + 1, || None);
        }
        if self.levels[level].is_none() {
            let size = 2 * p;
            let fwd = self.planner.plan_fft_forward(size);
            let inv = self.planner.plan_fft_inverse(size);
            let mut kernel_hat = to_complex(&self.kernel[p..lag_hi], size);
            fwd.process(&mut kernel_hat);
            self.levels[level] = Some(Level { fwd, inv, kernel_hat });
        }
        let lvl = self.levels[level].as_ref().expect("level initialised");
        let size = 2 * p;
        let mut buf = to_complex(&self.values[start..start + p], size);
        lvl.fwd.process(&mut buf);
        for (x, k) in buf.iter_mut().zip(&lvl.kernel_hat) {
            *x *= k;
        }
        lvl.inv.process(&mut buf);
        let scale = 1.0 / size as f64;
        for (t, c) in buf.iter().take(2 * p - 1).enumerate() {
            let n = out_base + t;
            if n >= self.acc.len() {
                break;
            }
            self.acc[n] += c.re * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for i in 0..a.len() {
            for j in 0..b.len() {
                out[i + j] += a[i] * b[j];
            }
        }
        out
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let a: Vec<f64> = (0..700).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let b: Vec<f64> = (0..500).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
        let fast = linear_convolution(&a, &b);
        let slow = direct(&a, &b);
        for (x, y) in fast.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn online_recursion_matches_direct_recursion() {
        // g[n] = 1 + s[n] / 2 with a decaying kernel, long enough to hit the FFT levels.
        let n = 3000;
        let kernel: Vec<f64> = (0..=n).map(|d| if d == 0 { 0.0 } else { (-0.01 * d as f64).exp() * 0.01 }).collect();
        let mut online = OnlineConvolution::new(kernel.clone(), n);
        let mut g_direct = Vec::new();
        for i in 0..n {
            let s_online = online.history();
            let s_direct: f64 = (1..=i).map(|d| kernel[d] * g_direct[i - d]).sum();
            assert!((s_online - s_direct).abs() < 1e-10 * (1.0 + s_direct.abs()), "index {i}");
            let g = 1.0 + 0.5 * s_direct;
            g_direct.push(g);
            online.push(g);
        }
    }
}
