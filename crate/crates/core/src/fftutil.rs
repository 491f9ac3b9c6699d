//! Thin n-dimensional wrapper over rustfft.
//!
//! Transforms are unnormalized in both directions (forward kernel
//! `e^{-i xi x}`, inverse kernel `e^{+i xi x}`, `inverse(forward(x)) = N^k x`);
//! every caller applies its own scaling so the conventions stay visible at
//! the call sites.

use num_complex::Complex64;
use rustfft::FftPlanner;

pub struct FftEngine {
    planner: FftPlanner<f64>,
    scratch: Vec<Complex64>,
}

impl Default for FftEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl FftEngine {
    pub fn new() -> Self {
        FftEngine { planner: FftPlanner::new(), scratch: Vec::new() }
    }

    pub fn forward(&mut self, data: &mut [Complex64], shape: &[usize]) {
        self.transform(data, shape, rustfft::FftDirection::Forward);
    }

    pub fn inverse(&mut self, data: &mut [Complex64], shape: &[usize]) {
        self.transform(data, shape, rustfft::FftDirection::Inverse);
    }

    fn transform(&mut self, data: &mut [Complex64], shape: &[usize], dir: rustfft::FftDirection) {
        let len: usize = shape.iter().product();
        assert_eq!(data.len(), len, "data length does not match shape");
        for axis in 0..shape.len() {
            let n = shape[axis];
            if n == 1 {
                continue;
            }
            let fft = self.planner.plan_fft(n, dir);
            let stride: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            if stride == 1 {
                // Contiguous lines: transform in place, chunk by chunk.
                let mut inner_scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
                for chunk in data.chunks_exact_mut(n) {
                    fft.process_with_scratch(chunk, &mut inner_scratch);
                }
            } else {
                self.scratch.resize(n, Complex64::ZERO);
                let mut inner_scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
                for o in 0..outer {
                    let base = o * n * stride;
                    for i in 0..stride {
                        for j in 0..n {
                            self.scratch[j] = data[base + i + j * stride];
                        }
                        fft.process_with_scratch(&mut self.scratch, &mut inner_scratch);
                        for j in 0..n {
                            data[base + i + j * stride] = self.scratch[j];
                        }
                    }
                }
            }
        }
    }
}

pub fn real_to_complex(x: &[f64]) -> Vec<Complex64> {
    x.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn complex_to_real(x: &[Complex64]) -> Vec<f64> {
    x.iter().map(|c| c.re).collect()
}
