//! Layer primitives with hand-derived backward passes.
//!
//! Every layer works on flat row-major slices. Backward functions accumulate
//! (`+=`) into the caller's gradient slices so several uses of a layer can
//! share one gradient buffer.

use rand::Rng;

use crate::error::{Error, Result};

use super::real::{gemm, Mat};
use super::Real;

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected {want} values, got {got}")));
    }
    Ok(())
}

/// Fully connected layer, `y = W·x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim }
    }

    pub fn weight_len(&self) -> usize {
        self.in_dim * self.out_dim
    }

    /// Forward pass over `batch` input rows.
    pub fn forward<T: Real>(&self, weights: &[T], bias: &[T], input: &[T], batch: usize) -> Result<Vec<T>> {
        check_len("dense weights", weights.len(), self.weight_len())?;
        check_len("dense bias", bias.len(), self.out_dim)?;
        check_len("dense input", input.len(), batch * self.in_dim)?;
        let mut out = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            out.extend_from_slice(bias);
        }
        gemm(
            Mat::new(input, batch, self.in_dim),
            Mat::new(weights, self.out_dim, self.in_dim).t(),
            T::one(),
            &mut out,
        );
        Ok(out)
    }

    /// Accumulates `dW += dyᵀ·x`, `db += Σ dy` and, when requested,
    /// writes `dx = dy·W`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        weights: &[T],
        input: &[T],
        d_out: &[T],
        batch: usize,
        grad_weights: &mut [T],
        grad_bias: &mut [T],
        d_input: Option<&mut [T]>,
    ) -> Result<()> {
        check_len("dense upstream", d_out.len(), batch * self.out_dim)?;
        check_len("dense input", input.len(), batch * self.in_dim)?;
        check_len("dense weight grad", grad_weights.len(), self.weight_len())?;
        check_len("dense bias grad", grad_bias.len(), self.out_dim)?;
        gemm(
            Mat::new(d_out, batch, self.out_dim).t(),
            Mat::new(input, batch, self.in_dim),
            T::one(),
            grad_weights,
        );
        for row in d_out.chunks_exact(self.out_dim) {
            for (g, d) in grad_bias.iter_mut().zip(row) {
                *g += *d;
            }
        }
        if let Some(dx) = d_input {
            check_len("dense input grad", dx.len(), batch * self.in_dim)?;
            gemm(
                Mat::new(d_out, batch, self.out_dim),
                Mat::new(weights, self.out_dim, self.in_dim),
                T::zero(),
                dx,
            );
        }
        Ok(())
    }
}

/// 3×3, stride 1, zero-padded ("same") convolution over a `C × H × W` input.
/// Kernels are stored `filters × C × 3 × 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub filters: usize,
    pub height: usize,
    pub width: usize,
}

pub const KERNEL: usize = 3;

impl Conv2d {
    pub fn kernel_len(&self) -> usize {
        self.filters * self.in_channels * KERNEL * KERNEL
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.filters * self.height * self.width
    }

    /// Unfolds the input into a `(C·9) × (H·W)` patch matrix.
    fn im2col<T: Real>(&self, input: &[T]) -> Vec<T> {
        let (h, w) = (self.height, self.width);
        let hw = h * w;
        let mut cols = vec![T::zero(); self.in_channels * KERNEL * KERNEL * hw];
        for c in 0..self.in_channels {
            let plane = &input[c * hw..(c + 1) * hw];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        let out = &mut dst[y * w..(y + 1) * w];
                        match kx {
                            0 => out[1..].copy_from_slice(&src[..w - 1]),
                            1 => out.copy_from_slice(src),
                            _ => out[..w - 1].copy_from_slice(&src[1..]),
                        }
                    }
                }
            }
        }
        cols
    }

    /// Folds a patch-matrix gradient back onto the input, accumulating.
    fn col2im<T: Real>(&self, cols: &[T], d_input: &mut [T]) {
        let (h, w) = (self.height, self.width);
        let hw = h * w;
        for c in 0..self.in_channels {
            let plane = &mut d_input[c * hw..(c + 1) * hw];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let row = (c * KERNEL + ky) * KERNEL + kx;
                    let src = &cols[row * hw..(row + 1) * hw];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                        let g = &src[y * w..(y + 1) * w];
                        let (d, s) = match kx {
                            0 => (&mut dst[..w - 1], &g[1..]),
                            1 => (&mut dst[..], g),
                            _ => (&mut dst[1..], &g[..w - 1]),
                        };
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += *b;
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, kernels: &[T], bias: &[T], input: &[T]) -> Result<Vec<T>> {
        check_len("conv kernels", kernels.len(), self.kernel_len())?;
        check_len("conv bias", bias.len(), self.filters)?;
        check_len("conv input", input.len(), self.input_len())?;
        let hw = self.height * self.width;
        let cols = self.im2col(input);
        let mut out = Vec::with_capacity(self.output_len());
        for &b in bias {
            out.extend(std::iter::repeat_n(b, hw));
        }
        gemm(
            Mat::new(kernels, self.filters, self.in_channels * KERNEL * KERNEL),
            Mat::new(&cols, self.in_channels * KERNEL * KERNEL, hw),
            T::one(),
            &mut out,
        );
        Ok(out)
    }

    pub fn backward<T: Real>(
        &self,
        kernels: &[T],
        input: &[T],
        d_out: &[T],
        grad_kernels: &mut [T],
        grad_bias: &mut [T],
        d_input: Option<&mut [T]>,
    ) -> Result<()> {
        check_len("conv upstream", d_out.len(), self.output_len())?;
        check_len("conv kernel grad", grad_kernels.len(), self.kernel_len())?;
        check_len("conv bias grad", grad_bias.len(), self.filters)?;
        let hw = self.height * self.width;
        let patch = self.in_channels * KERNEL * KERNEL;
        let cols = self.im2col(input);
        gemm(
            Mat::new(d_out, self.filters, hw),
            Mat::new(&cols, patch, hw).t(),
            T::one(),
            grad_kernels,
        );
        for (g, plane) in grad_bias.iter_mut().zip(d_out.chunks_exact(hw)) {
            *g += plane.iter().copied().sum::<T>();
        }
        if let Some(dx) = d_input {
            check_len("conv input grad", dx.len(), self.input_len())?;
            let mut d_cols = vec![T::zero(); patch * hw];
            gemm(
                Mat::new(kernels, self.filters, patch).t(),
                Mat::new(d_out, self.filters, hw),
                T::zero(),
                &mut d_cols,
            );
            self.col2im(&d_cols, dx);
        }
        Ok(())
    }
}

/// 2×2, stride 2 max pooling over `C × H × W`; odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MaxPool2 {
    pub fn out_height(&self) -> usize {
        self.height / 2
    }

    pub fn out_width(&self) -> usize {
        self.width / 2
    }

    pub fn output_len(&self) -> usize {
        self.channels * self.out_height() * self.out_width()
    }

    /// Returns the pooled values and, per output cell, the flat input index
    /// of the winning element (first maximum in row-major window order).
    pub fn forward<T: Real>(&self, input: &[T]) -> Result<(Vec<T>, Vec<usize>)> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Shape(format!(
                "max-pool needs at least 2x2 input, got {}x{}",
                self.height, self.width
            )));
        }
        check_len("pool input", input.len(), self.channels * self.height * self.width)?;
        let (oh, ow) = (self.out_height(), self.out_width());
        let mut out = Vec::with_capacity(self.output_len());
        let mut argmax = Vec::with_capacity(self.output_len());
        for c in 0..self.channels {
            let base = c * self.height * self.width;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * self.width + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * oy + dy) * self.width + 2 * ox + dx;
                        if input[i] > input[best] {
                            best = i;
                        }
                    }
                    out.push(input[best]);
                    argmax.push(best);
                }
            }
        }
        Ok((out, argmax))
    }

    /// Routes each upstream gradient to its recorded argmax, accumulating.
    pub fn backward<T: Real>(&self, argmax: &[usize], d_out: &[T], d_input: &mut [T]) -> Result<()> {
        check_len("pool upstream", d_out.len(), argmax.len())?;
        check_len("pool input grad", d_input.len(), self.channels * self.height * self.width)?;
        for (&i, &g) in argmax.iter().zip(d_out) {
            d_input[i] += g;
        }
        Ok(())
    }
}

pub fn elu<T: Real>(x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_inplace<T: Real>(values: &mut [T]) {
    for v in values {
        *v = elu(*v);
    }
}

/// Derivative of ELU expressed through its output: 1 for `y ≥ 0`, `y + 1` otherwise.
pub fn elu_grad_from_output<T: Real>(y: T) -> T {
    if y >= T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

/// Multiplies `grad` in place by the ELU derivative at `outputs`.
pub fn elu_backward<T: Real>(outputs: &[T], grad: &mut [T]) {
    for (g, &y) in grad.iter_mut().zip(outputs) {
        *g *= elu_grad_from_output(y);
    }
}

/// Softmax restricted to `mask`; masked entries come out exactly zero.
pub fn masked_softmax<T: Real>(logits: &[T], mask: &[bool]) -> Result<Vec<T>> {
    let log_p = masked_log_softmax(logits, mask)?;
    Ok(log_p
        .iter()
        .zip(mask)
        .map(|(&lp, &m)| if m { lp.exp() } else { T::zero() })
        .collect())
}

/// Log-softmax over the unmasked entries; masked entries are `-inf`.
pub fn masked_log_softmax<T: Real>(logits: &[T], mask: &[bool]) -> Result<Vec<T>> {
    check_len("softmax mask", mask.len(), logits.len())?;
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(None, |acc: Option<T>, l| Some(acc.map_or(l, |a| a.max(l))))
        .ok_or_else(|| Error::Contract("softmax over an all-masked action set".into()))?;
    let sum: T = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_z = max + sum.ln();
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - log_z } else { T::neg_infinity() })
        .collect())
}

/// Inverted dropout. In train mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; the returned mask
/// holds the per-entry multiplier. Eval mode is the identity and returns no mask.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    values: &mut [T],
    rate: f64,
    rng: &mut R,
    train: bool,
) -> Option<Vec<T>> {
    if !train || rate <= 0.0 {
        return None;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = values
        .iter()
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    for (v, m) in values.iter_mut().zip(&mask) {
        *v *= *m;
    }
    Some(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let layer = Dense::new(3, 3);
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let x = [0.3, -2.0, 5.0];
        assert_eq!(layer.forward(&eye, &[0.0; 3], &x, 1).unwrap(), x.to_vec());
        let b = [1.0, 2.0, 3.0];
        assert_eq!(layer.forward(&[0.0; 9], &b, &x, 1).unwrap(), b.to_vec());
        assert!(matches!(layer.forward(&eye, &b, &x[..2], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = Dense::new(4, 3);
        let (w, b, x) = (random(12, &mut rng), random(3, &mut rng), random(8, &mut rng));
        let y = layer.forward(&w, &b, &x, 2).unwrap();
        for r in 0..2 {
            for o in 0..3 {
                let mut acc = b[o];
                for i in 0..4 {
                    acc += w[o * 4 + i] * x[r * 4 + i];
                }
                assert!((y[r * 3 + o] - acc).abs() < 1e-12);
            }
        }
    }

    /// For L = |Wx + b − t|², dL/dW = 2 (Wx + b − t) xᵀ.
    #[test]
    fn dense_squared_error_gradient_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer = Dense::new(3, 2);
        let (w, b, x, t) = (random(6, &mut rng), random(2, &mut rng), random(3, &mut rng), random(2, &mut rng));
        let y = layer.forward(&w, &b, &x, 1).unwrap();
        let r: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a - b).collect();
        let dy: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let (mut gw, mut gb) = (vec![0.0; 6], vec![0.0; 2]);
        layer.backward(&w, &x, &dy, 1, &mut gw, &mut gb, None).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((gw[o * 3 + i] - 2.0 * r[o] * x[i]).abs() < 1e-12);
            }
            assert!((gb[o] - 2.0 * r[o]).abs() < 1e-12);
        }
        let (mut gw0, mut gb0) = (vec![0.0; 6], vec![0.0; 2]);
        layer.backward(&w, &x, &[0.0; 2], 1, &mut gw0, &mut gb0, None).unwrap();
        assert!(gw0.iter().chain(&gb0).all(|&g| g == 0.0));
    }

    fn naive_conv(c: &Conv2d, k: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let (h, w) = (c.height as isize, c.width as isize);
        let mut out = vec![0.0; c.output_len()];
        for f in 0..c.filters {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = b[f];
                    for ch in 0..c.in_channels {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                let kv = k[((f * c.in_channels + ch) * 3 + ky as usize) * 3 + kx as usize];
                                acc += kv * x[(ch * c.height + sy as usize) * c.width + sx as usize];
                            }
                        }
                    }
                    out[(f * c.height + y as usize) * c.width + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_delta_kernel_sums_channels() {
        let conv = Conv2d { in_channels: 2, filters: 1, height: 4, width: 5 };
        let mut k = vec![0.0; 18];
        k[4] = 1.0;
        k[9 + 4] = 1.0;
        let x: Vec<f64> = (0..40).map(|v| v as f64).collect();
        let y = conv.forward(&k, &[0.0], &x).unwrap();
        for i in 0..20 {
            assert_eq!(y[i], x[i] + x[20 + i]);
        }
    }

    #[test]
    fn conv_zero_kernels_give_bias() {
        let conv = Conv2d { in_channels: 1, filters: 32, height: 6, width: 6 };
        let y = conv.forward(&vec![0.0; conv.kernel_len()], &[0.5; 32], &[1.0; 36]).unwrap();
        assert!(y.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn conv_matches_quadruple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let conv = Conv2d { in_channels: 1, filters: 32, height: 8, width: 8 };
        let (k, b, x) = (random(conv.kernel_len(), &mut rng), random(32, &mut rng), random(64, &mut rng));
        let y = conv.forward(&k, &b, &x).unwrap();
        let want = naive_conv(&conv, &k, &b, &x);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let multi = Conv2d { in_channels: 3, filters: 4, height: 5, width: 7 };
        let (k, b, x) = (random(multi.kernel_len(), &mut rng), random(4, &mut rng), random(105, &mut rng));
        let y = multi.forward(&k, &b, &x).unwrap();
        for (a, b) in y.iter().zip(&naive_conv(&multi, &k, &b, &x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn maxpool_definition_and_constant() {
        let pool = MaxPool2 { channels: 1, height: 2, width: 2 };
        let (out, arg) = pool.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(out, vec![4.0]);
        assert_eq!(arg, vec![3]);
        let pool = MaxPool2 { channels: 2, height: 4, width: 6 };
        let (out, _) = pool.forward(&[7.5; 48]).unwrap();
        assert_eq!(out, vec![7.5; 12]);
        let tiny = MaxPool2 { channels: 1, height: 1, width: 4 };
        assert!(matches!(tiny.forward(&[0.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pool = MaxPool2 { channels: 32, height: 16, width: 16 };
        let x = random(32 * 256, &mut rng);
        let (out, arg) = pool.forward(&x).unwrap();
        for c in 0..32 {
            for oy in 0..8 {
                for ox in 0..8 {
                    let window = [
                        x[c * 256 + 2 * oy * 16 + 2 * ox],
                        x[c * 256 + 2 * oy * 16 + 2 * ox + 1],
                        x[c * 256 + (2 * oy + 1) * 16 + 2 * ox],
                        x[c * 256 + (2 * oy + 1) * 16 + 2 * ox + 1],
                    ];
                    let m = window.iter().cloned().fold(f64::MIN, f64::max);
                    let o = c * 64 + oy * 8 + ox;
                    assert_eq!(out[o], m);
                    assert_eq!(x[arg[o]], m);
                }
            }
        }
    }

    #[test]
    fn elu_softmax_dropout_basics() {
        assert_eq!(elu(0.0f64), 0.0);
        assert_eq!(elu(1.0f64), 1.0);
        assert!((elu(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);

        let p = masked_softmax(&[0.7f64; 5], &[true, false, true, true, false]).unwrap();
        for (i, v) in p.iter().enumerate() {
            if [1, 4].contains(&i) {
                assert_eq!(*v, 0.0);
            } else {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert!(matches!(
            masked_softmax(&[1.0f64, 2.0], &[false, false]),
            Err(Error::Contract(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut v = vec![1.0f64, -2.0, 3.0];
        assert!(dropout(&mut v, 0.0, &mut rng, true).is_none());
        assert_eq!(v, vec![1.0, -2.0, 3.0]);
        assert!(dropout(&mut v, 0.5, &mut rng, false).is_none());
        assert_eq!(v, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn dropout_rescales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut v = vec![1.0f64; 20_000];
        let mask = dropout(&mut v, 0.25, &mut rng, true).unwrap();
        let kept = v.iter().filter(|&&x| x != 0.0).count() as f64 / v.len() as f64;
        assert!((kept - 0.75).abs() < 0.02);
        assert!(v.iter().all(|&x| x == 0.0 || (x - 4.0 / 3.0).abs() < 1e-12));
        assert_eq!(mask, v);
    }

    proptest::proptest! {
        #[test]
        fn softmax_sums_to_one(
            logits in proptest::collection::vec(-30.0f64..30.0, 1..12),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mask: Vec<bool> = logits.iter().map(|_| rng.gen_bool(0.6)).collect();
            mask[0] = true;
            let p = masked_softmax(&logits, &mask).unwrap();
            let total: f64 = p.iter().sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-6);
            for (v, m) in p.iter().zip(&mask) {
                if !m { proptest::prop_assert_eq!(*v, 0.0); }
            }
        }
    }
}
