//! Dense CHW feature maps and the layer primitives (forward + backward)
//! the model is assembled from. Everything runs in `f64`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Grads, ParamId, ParamStore};

/// A single feature map laid out channel-major: `data[(c * h + y) * w + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::InputShape(format!(
                "buffer of {} values cannot be viewed as {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Per-channel spatial mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = (self.height * self.width) as f64;
        (0..self.channels).map(|c| self.plane(c).iter().sum::<f64>() / n).collect()
    }
}

/// Output length of a strided window: `floor((n + 2p - k) / s) + 1`.
pub fn conv_out_len(n: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - kernel) / stride + 1
}

/// 2-D convolution with square kernel, zero padding and a bias per output channel.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.he_normal(
            format!("{name}.weight"),
            vec![out_channels, in_channels, kernel, kernel],
            fan_in,
            rng,
        );
        let bias = store.zeros(format!("{name}.bias"), vec![out_channels]);
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_len(h, self.kernel, self.stride, self.pad),
            conv_out_len(w, self.kernel, self.stride, self.pad),
        )
    }

    /// Half-open range of output coordinates whose tap `k` lands inside `[0, n)`.
    #[inline]
    fn valid_range(&self, k: usize, n: usize, out: usize) -> (usize, usize) {
        // input index = o * s + k - pad, need 0 <= idx < n
        let s = self.stride;
        let lo = if k >= self.pad { 0 } else { (self.pad - k).div_ceil(s) };
        let hi = if n + self.pad > k { (n + self.pad - k - 1) / s + 1 } else { 0 };
        (lo.min(out), hi.min(out))
    }

    pub fn forward(&self, store: &ParamStore, input: &Tensor) -> Tensor {
        debug_assert_eq!(input.channels, self.in_channels);
        let (oh, ow) = self.out_size(input.height, input.width);
        let w = store.value(self.weight);
        let b = store.value(self.bias);
        let k = self.kernel;
        let s = self.stride;
        let mut out = Tensor::zeros(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            let plane = &mut out.data[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(b[o]);
            for i in 0..self.in_channels {
                let inp = input.plane(i);
                for ky in 0..k {
                    let (ylo, yhi) = self.valid_range(ky, input.height, oh);
                    for kx in 0..k {
                        let wv = w[((o * self.in_channels + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = self.valid_range(kx, input.width, ow);
                        for y in ylo..yhi {
                            let iy = y * s + ky - self.pad;
                            let row_in = &inp[iy * input.width..(iy + 1) * input.width];
                            let row_out = &mut plane[y * ow..(y + 1) * ow];
                            if s == 1 {
                                let base = kx + xlo - self.pad;
                                for (dst, src) in row_out[xlo..xhi].iter_mut().zip(&row_in[base..base + (xhi - xlo)]) {
                                    *dst += wv * src;
                                }
                            } else {
                                for x in xlo..xhi {
                                    row_out[x] += wv * row_in[x * s + kx - self.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the gradient w.r.t. `input`.
    pub fn backward(&self, store: &ParamStore, input: &Tensor, grad_out: &Tensor, grads: &mut Grads) -> Tensor {
        self.backward_inner(store, input, grad_out, grads, true)
    }

    /// Like [`Conv2d::backward`] but skips the input gradient (first layer).
    pub fn backward_params(&self, store: &ParamStore, input: &Tensor, grad_out: &Tensor, grads: &mut Grads) {
        self.backward_inner(store, input, grad_out, grads, false);
    }

    fn backward_inner(
        &self,
        store: &ParamStore,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut Grads,
        want_input: bool,
    ) -> Tensor {
        let (oh, ow) = (grad_out.height, grad_out.width);
        let w = store.value(self.weight);
        let k = self.kernel;
        let s = self.stride;
        let mut grad_in = if want_input {
            Tensor::zeros(input.channels, input.height, input.width)
        } else {
            Tensor::zeros(0, 0, 0)
        };
        {
            let gb = grads.slot(self.bias);
            for (o, g) in gb.iter_mut().enumerate() {
                *g += grad_out.plane(o).iter().sum::<f64>();
            }
        }
        let mut gw = vec![0.0; w.len()];
        for o in 0..self.out_channels {
            let gplane = grad_out.plane(o);
            for i in 0..self.in_channels {
                let inp = input.plane(i);
                let hw = input.height * input.width;
                for ky in 0..k {
                    let (ylo, yhi) = self.valid_range(ky, input.height, oh);
                    for kx in 0..k {
                        let widx = ((o * self.in_channels + i) * k + ky) * k + kx;
                        let wv = w[widx];
                        let (xlo, xhi) = self.valid_range(kx, input.width, ow);
                        let mut acc = 0.0;
                        for y in ylo..yhi {
                            let iy = y * s + ky - self.pad;
                            let row_g = &gplane[y * ow..(y + 1) * ow];
                            let off = iy * input.width;
                            for x in xlo..xhi {
                                acc += row_g[x] * inp[off + x * s + kx - self.pad];
                            }
                            if want_input && wv != 0.0 {
                                let gin = &mut grad_in.data[i * hw..(i + 1) * hw];
                                for x in xlo..xhi {
                                    gin[off + x * s + kx - self.pad] += wv * row_g[x];
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        for (dst, src) in grads.slot(self.weight).iter_mut().zip(gw) {
            *dst += src;
        }
        grad_in
    }
}

/// Fully connected layer, weight stored row-major `[out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, name: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), vec![out_features, in_features], bound, rng);
        let bias = store.zeros(format!("{name}.bias"), vec![out_features]);
        Self {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.value(self.weight);
        let b = store.value(self.bias);
        (0..self.out_features)
            .map(|o| {
                let row = &w[o * self.in_features..(o + 1) * self.in_features];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&self, store: &ParamStore, x: &[f64], grad_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        let w = store.value(self.weight);
        let mut grad_in = vec![0.0; self.in_features];
        for (gb, g) in grads.slot(self.bias).iter_mut().zip(grad_out) {
            *gb += g;
        }
        let gw = grads.slot(self.weight);
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * self.in_features..(o + 1) * self.in_features];
            let grow = &mut gw[o * self.in_features..(o + 1) * self.in_features];
            for j in 0..self.in_features {
                grow[j] += g * x[j];
                grad_in[j] += g * row[j];
            }
        }
        grad_in
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    Tensor {
        data: output
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
            .collect(),
        ..*grad
    }
}

/// Square max pooling with implicit negative-infinity padding.
/// Returns the pooled map and the flat argmax index for every output cell.
pub fn max_pool(input: &Tensor, kernel: usize, stride: usize, pad: usize) -> (Tensor, Vec<usize>) {
    let oh = conv_out_len(input.height, kernel, stride, pad);
    let ow = conv_out_len(input.width, kernel, stride, pad);
    let mut out = Tensor::zeros(input.channels, oh, ow);
    let mut arg = vec![0usize; out.data.len()];
    for c in 0..input.channels {
        for y in 0..oh {
            for x in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..kernel {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= input.height as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (x * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= input.width as isize {
                            continue;
                        }
                        let idx = (c * input.height + iy as usize) * input.width + ix as usize;
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = best;
                arg[o] = best_idx;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(input_shape: (usize, usize, usize), argmax: &[usize], grad: &Tensor) -> Tensor {
    let (c, h, w) = input_shape;
    let mut g = Tensor::zeros(c, h, w);
    for (o, &idx) in argmax.iter().enumerate() {
        g.data[idx] += grad.data[o];
    }
    g
}

/// Nearest-neighbour ×2 upsampling, cropped to `(height, width)`.
///
/// The crop only bites when the coarser map came from a ceil-rounded
/// stride (e.g. 4×4 feeding a 7×7 level).
pub fn upsample2_nearest(x: &Tensor, height: usize, width: usize) -> Tensor {
    let mut out = Tensor::zeros(x.channels, height, width);
    for c in 0..x.channels {
        for y in 0..height {
            let sy = (y / 2).min(x.height - 1);
            for xx in 0..width {
                let sx = (xx / 2).min(x.width - 1);
                *out.at_mut(c, y, xx) = x.at(c, sy, sx);
            }
        }
    }
    out
}

/// Adjoint of [`upsample2_nearest`]: sums each output cell back into its source.
pub fn upsample2_nearest_backward(grad: &Tensor, src_height: usize, src_width: usize) -> Tensor {
    let mut out = Tensor::zeros(grad.channels, src_height, src_width);
    for c in 0..grad.channels {
        for y in 0..grad.height {
            let sy = (y / 2).min(src_height - 1);
            for x in 0..grad.width {
                let sx = (x / 2).min(src_width - 1);
                *out.at_mut(c, sy, sx) += grad.at(c, y, x);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-from-definition convolution used as an oracle for the
    /// range-clipped fast path.
    fn conv_naive(conv: &Conv2d, store: &ParamStore, input: &Tensor) -> Tensor {
        let (oh, ow) = conv.out_size(input.height, input.width);
        let w = store.value(conv.weight);
        let b = store.value(conv.bias);
        let k = conv.kernel;
        let mut out = Tensor::zeros(conv.out_channels, oh, ow);
        for o in 0..conv.out_channels {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = b[o];
                    for i in 0..conv.in_channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * conv.stride + ky) as isize - conv.pad as isize;
                                let ix = (x * conv.stride + kx) as isize - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy >= input.height as isize || ix >= input.width as isize {
                                    continue;
                                }
                                acc += w[((o * conv.in_channels + i) * k + ky) * k + kx]
                                    * input.at(i, iy as usize, ix as usize);
                            }
                        }
                    }
                    *out.at_mut(o, y, x) = acc;
                }
            }
        }
        out
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        let data = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(c, h, w, data).unwrap()
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(k, s, p, h, w) in &[(3, 1, 1, 5, 6), (3, 2, 1, 7, 7), (1, 1, 0, 4, 3), (7, 2, 3, 9, 8), (3, 2, 0, 6, 5)] {
            let mut store = ParamStore::new();
            let conv = Conv2d::new(&mut store, "c", 2, 3, k, s, p, &mut rng);
            for v in store.get_mut("c.bias").unwrap().data.iter_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let x = random_tensor(&mut rng, 2, h, w);
            let fast = conv.forward(&store, &x);
            let slow = conv_naive(&conv, &store, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <conv(x) - b, g> == <x, conv^T g> for any g
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, "c", 3, 2, 3, 2, 1, &mut rng);
        let x = random_tensor(&mut rng, 3, 7, 6);
        let y = conv.forward(&store, &x);
        let g = random_tensor(&mut rng, y.channels, y.height, y.width);
        let mut grads = store.zero_grads();
        let gx = conv.backward(&store, &x, &g, &mut grads);
        let lhs: f64 = y.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&gx.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn stride_two_rounds_up() {
        assert_eq!(conv_out_len(7, 3, 2, 1), 4);
        assert_eq!(conv_out_len(112, 7, 2, 3), 56);
        assert_eq!(conv_out_len(8, 3, 2, 1), 4);
    }

    #[test]
    fn upsample_crop_and_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, 2, 4, 4);
        let up = upsample2_nearest(&x, 7, 7);
        assert_eq!(up.at(1, 6, 5), x.at(1, 3, 2));
        let g = random_tensor(&mut rng, 2, 7, 7);
        let back = upsample2_nearest_backward(&g, 4, 4);
        let lhs: f64 = up.data.iter().zip(&g.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&back.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec(1, 2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap();
        let (y, arg) = max_pool(&x, 3, 2, 1);
        assert_eq!(y.data, vec![5.0]);
        let g = max_pool_backward(x.shape(), &arg, &Tensor::filled(1, 1, 1, 2.0));
        assert_eq!(g.data, vec![0.0, 2.0, 0.0, 0.0]);
    }
}
