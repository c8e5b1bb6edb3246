//! Dense numeric kernels with explicit backward passes.
//!
//! Everything is `f64`, row-major `(channel, row, column)`, and CPU-only.
//! Convolutions use symmetric zero same-padding of `(k-1)/2`, so an input of
//! extent `n` maps to `ceil(n / stride)`. Backward functions accumulate into
//! the parameter gradient buffers; call `zero_grad` between steps.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Dense rank-3 activation grid, the universal carrier between layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Config(format!(
                "feature map data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    #[inline]
    pub fn idx(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }

    #[inline]
    pub fn at(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Rank-2 positive-real grid in meters. Invalid pixels hold the 0.0 sentinel
/// and are flagged by a mask travelling alongside; the sentinel is never read
/// as geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        DepthMap { height, width, data: vec![0.0; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Config(format!(
                "depth map data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(DepthMap { height, width, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Ceil-division output extent of a same-padded strided convolution.
#[inline]
pub fn conv_out_extent(extent: usize, stride: usize) -> usize {
    (extent + stride - 1) / stride
}

/// Convolution parameters with their gradient buffers.
///
/// `depthwise` layers hold one `k x k` filter per channel (`channels*k*k`
/// weights); regular layers hold `out*in*k*k`.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub depthwise: bool,
    pub has_bias: bool,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize) -> Result<Self> {
        Self::build(in_channels, out_channels, kernel_size, stride, false, true)
    }

    pub fn new_no_bias(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize) -> Result<Self> {
        Self::build(in_channels, out_channels, kernel_size, stride, false, false)
    }

    pub fn depthwise(channels: usize, kernel_size: usize) -> Result<Self> {
        Self::build(channels, channels, kernel_size, 1, true, true)
    }

    fn build(
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        depthwise: bool,
        has_bias: bool,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 || kernel_size == 0 || stride == 0 {
            return Err(Error::Config("conv dimensions must be positive".into()));
        }
        if kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel size {kernel_size} must be odd for symmetric same-padding"
            )));
        }
        if depthwise && in_channels != out_channels {
            return Err(Error::Config("depthwise conv requires in == out channels".into()));
        }
        let n_w = if depthwise {
            in_channels * kernel_size * kernel_size
        } else {
            out_channels * in_channels * kernel_size * kernel_size
        };
        Ok(ConvParams {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            depthwise,
            has_bias,
            weights: vec![0.0; n_w],
            bias: vec![0.0; out_channels],
            grad_weights: vec![0.0; n_w],
            grad_bias: vec![0.0; out_channels],
        })
    }

    /// He-style normal init; biases stay zero.
    pub fn init_normal(&mut self, std: f64, rng: &mut ChaCha8Rng) {
        let dist = Normal::new(0.0, std).expect("finite std");
        for w in &mut self.weights {
            *w = dist.sample(rng);
        }
    }

    #[inline]
    pub fn w_idx(&self, o: usize, c: usize, di: usize, dj: usize) -> usize {
        ((o * self.in_channels + c) * self.kernel_size + di) * self.kernel_size + dj
    }

    #[inline]
    pub fn w_idx_dw(&self, c: usize, di: usize, dj: usize) -> usize {
        (c * self.kernel_size + di) * self.kernel_size + dj
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + if self.has_bias { self.bias.len() } else { 0 }
    }
}

/// Standard dense convolution. Output extent is `ceil(n/stride)` per axis.
pub fn conv2d(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    if p.depthwise {
        return Err(Error::Config("use dwconv2d for depthwise parameters".into()));
    }
    if x.channels != p.in_channels {
        return Err(Error::Config(format!(
            "conv2d channel mismatch: input {} vs params {}",
            x.channels, p.in_channels
        )));
    }
    let k = p.kernel_size;
    let pad = (k - 1) / 2;
    let (oh, ow) = (conv_out_extent(x.height, p.stride), conv_out_extent(x.width, p.stride));
    let mut y = FeatureMap::zeros(p.out_channels, oh, ow);
    for o in 0..p.out_channels {
        for oi in 0..oh {
            let base_i = (oi * p.stride) as isize - pad as isize;
            for oj in 0..ow {
                let base_j = (oj * p.stride) as isize - pad as isize;
                let mut acc = if p.has_bias { p.bias[o] } else { 0.0 };
                for c in 0..p.in_channels {
                    for di in 0..k {
                        let ii = base_i + di as isize;
                        if ii < 0 || ii >= x.height as isize {
                            continue;
                        }
                        for dj in 0..k {
                            let jj = base_j + dj as isize;
                            if jj < 0 || jj >= x.width as isize {
                                continue;
                            }
                            acc += p.weights[p.w_idx(o, c, di, dj)] * x.at(c, ii as usize, jj as usize);
                        }
                    }
                }
                y.set(o, oi, oj, acc);
            }
        }
    }
    debug_assert!(y.all_finite(), "conv2d produced non-finite values");
    Ok(y)
}

/// Backward pass of [`conv2d`]: accumulates weight/bias gradients and returns
/// the gradient with respect to the input.
pub fn conv2d_backward(p: &mut ConvParams, x: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let k = p.kernel_size;
    let pad = (k - 1) / 2;
    let mut gx = FeatureMap::zeros(x.channels, x.height, x.width);
    for o in 0..p.out_channels {
        for oi in 0..grad_out.height {
            let base_i = (oi * p.stride) as isize - pad as isize;
            for oj in 0..grad_out.width {
                let base_j = (oj * p.stride) as isize - pad as isize;
                let g = grad_out.at(o, oi, oj);
                if p.has_bias {
                    p.grad_bias[o] += g;
                }
                for c in 0..p.in_channels {
                    for di in 0..k {
                        let ii = base_i + di as isize;
                        if ii < 0 || ii >= x.height as isize {
                            continue;
                        }
                        for dj in 0..k {
                            let jj = base_j + dj as isize;
                            if jj < 0 || jj >= x.width as isize {
                                continue;
                            }
                            let (iu, ju) = (ii as usize, jj as usize);
                            p.grad_weights[p.w_idx(o, c, di, dj)] += g * x.at(c, iu, ju);
                            let gi = gx.idx(c, iu, ju);
                            gx.data[gi] += g * p.weights[p.w_idx(o, c, di, dj)];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Depthwise convolution: one filter per channel, stride 1, channel `c` of
/// the output depends only on channel `c` of the input.
pub fn dwconv2d(x: &FeatureMap, p: &ConvParams) -> Result<FeatureMap> {
    if !p.depthwise {
        return Err(Error::Config("dwconv2d requires depthwise parameters".into()));
    }
    if x.channels != p.in_channels {
        return Err(Error::Config(format!(
            "dwconv2d channel mismatch: input {} vs params {}",
            x.channels, p.in_channels
        )));
    }
    if p.stride != 1 {
        return Err(Error::Config("dwconv2d supports stride 1 only".into()));
    }
    let k = p.kernel_size;
    let pad = (k - 1) / 2;
    let mut y = FeatureMap::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        for oi in 0..x.height {
            for oj in 0..x.width {
                let mut acc = if p.has_bias { p.bias[c] } else { 0.0 };
                for di in 0..k {
                    let ii = oi as isize + di as isize - pad as isize;
                    if ii < 0 || ii >= x.height as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let jj = oj as isize + dj as isize - pad as isize;
                        if jj < 0 || jj >= x.width as isize {
                            continue;
                        }
                        acc += p.weights[p.w_idx_dw(c, di, dj)] * x.at(c, ii as usize, jj as usize);
                    }
                }
                y.set(c, oi, oj, acc);
            }
        }
    }
    debug_assert!(y.all_finite(), "dwconv2d produced non-finite values");
    Ok(y)
}

pub fn dwconv2d_backward(p: &mut ConvParams, x: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let k = p.kernel_size;
    let pad = (k - 1) / 2;
    let mut gx = FeatureMap::zeros(x.channels, x.height, x.width);
    for c in 0..x.channels {
        for oi in 0..x.height {
            for oj in 0..x.width {
                let g = grad_out.at(c, oi, oj);
                if p.has_bias {
                    p.grad_bias[c] += g;
                }
                for di in 0..k {
                    let ii = oi as isize + di as isize - pad as isize;
                    if ii < 0 || ii >= x.height as isize {
                        continue;
                    }
                    for dj in 0..k {
                        let jj = oj as isize + dj as isize - pad as isize;
                        if jj < 0 || jj >= x.width as isize {
                            continue;
                        }
                        let (iu, ju) = (ii as usize, jj as usize);
                        p.grad_weights[p.w_idx_dw(c, di, dj)] += g * x.at(c, iu, ju);
                        let gi = gx.idx(c, iu, ju);
                        gx.data[gi] += g * p.weights[p.w_idx_dw(c, di, dj)];
                    }
                }
            }
        }
    }
    gx
}

/// Batch-norm parameters. Training mode normalizes each channel with its own
/// spatial statistics over H*W and updates the running stats via EMA;
/// inference mode uses the running stats.
#[derive(Debug, Clone)]
pub struct BatchNormParams {
    pub channels: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        Self::with_gamma(channels, 1.0)
    }

    pub fn with_gamma(channels: usize, gamma_init: f64) -> Self {
        BatchNormParams {
            channels,
            gamma: vec![gamma_init; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            epsilon: 1e-5,
            grad_gamma: vec![0.0; channels],
            grad_beta: vec![0.0; channels],
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_gamma.iter_mut().for_each(|g| *g = 0.0);
        self.grad_beta.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone)]
pub struct BnCache {
    pub training: bool,
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn batchnorm2d(x: &FeatureMap, p: &mut BatchNormParams, training: bool) -> Result<(FeatureMap, BnCache)> {
    if x.channels != p.channels {
        return Err(Error::Config(format!(
            "batchnorm channel mismatch: input {} vs params {}",
            x.channels, p.channels
        )));
    }
    let n = x.height * x.width;
    if n == 0 {
        return Err(Error::Config("batchnorm requires nonzero spatial extent".into()));
    }
    let mut y = FeatureMap::zeros(x.channels, x.height, x.width);
    let mut xhat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; x.channels];
    for c in 0..x.channels {
        let off = c * n;
        let (mean, var) = if training {
            let mean = x.data[off..off + n].iter().sum::<f64>() / n as f64;
            let var = x.data[off..off + n].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean;
            p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * var;
            (mean, var)
        } else {
            (p.running_mean[c], p.running_var[c])
        };
        let istd = 1.0 / (var + p.epsilon).sqrt();
        inv_std[c] = istd;
        for i in 0..n {
            let xh = (x.data[off + i] - mean) * istd;
            xhat[off + i] = xh;
            y.data[off + i] = p.gamma[c] * xh + p.beta[c];
        }
    }
    Ok((y, BnCache { training, xhat, inv_std }))
}

pub fn batchnorm2d_backward(p: &mut BatchNormParams, grad_out: &FeatureMap, cache: &BnCache) -> FeatureMap {
    let n = grad_out.height * grad_out.width;
    let mut gx = FeatureMap::zeros(grad_out.channels, grad_out.height, grad_out.width);
    for c in 0..grad_out.channels {
        let off = c * n;
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for i in 0..n {
            let g = grad_out.data[off + i];
            sum_g += g;
            sum_gx += g * cache.xhat[off + i];
        }
        p.grad_beta[c] += sum_g;
        p.grad_gamma[c] += sum_gx;
        let istd = cache.inv_std[c];
        if cache.training {
            // Batch statistics depend on the input, so the gradient carries
            // the mean-subtraction and variance terms.
            let mean_g = sum_g / n as f64;
            let mean_gx = sum_gx / n as f64;
            for i in 0..n {
                let g = grad_out.data[off + i];
                gx.data[off + i] = p.gamma[c] * istd * (g - mean_g - cache.xhat[off + i] * mean_gx);
            }
        } else {
            for i in 0..n {
                gx.data[off + i] = grad_out.data[off + i] * p.gamma[c] * istd;
            }
        }
    }
    gx
}

/// Per-channel spatial mean.
pub fn global_avg_pool(x: &FeatureMap) -> Vec<f64> {
    let n = (x.height * x.width) as f64;
    (0..x.channels)
        .map(|c| {
            let off = c * x.height * x.width;
            x.data[off..off + x.height * x.width].iter().sum::<f64>() / n
        })
        .collect()
}

pub fn global_avg_pool_backward(channels: usize, height: usize, width: usize, grad: &[f64]) -> FeatureMap {
    let mut gx = FeatureMap::zeros(channels, height, width);
    let n = (height * width) as f64;
    for c in 0..channels {
        let gv = grad[c] / n;
        let off = c * height * width;
        for v in &mut gx.data[off..off + height * width] {
            *v = gv;
        }
    }
    gx
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Gradient of ReLU given the pre-activation input.
pub fn relu_backward(pre: &FeatureMap, grad_out: &FeatureMap) -> FeatureMap {
    let mut gx = grad_out.clone();
    for (g, x) in gx.data.iter_mut().zip(&pre.data) {
        if *x <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Fully-connected layer with gradient buffers; weights are `out x in`
/// row-major.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weights: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("dense dimensions must be positive".into()));
        }
        Ok(Dense {
            in_dim,
            out_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            grad_weights: vec![0.0; out_dim * in_dim],
            grad_bias: vec![0.0; out_dim],
        })
    }

    pub fn init_normal(&mut self, std: f64, rng: &mut ChaCha8Rng) {
        let dist = Normal::new(0.0, std).expect("finite std");
        for w in &mut self.weights {
            *w = dist.sample(rng);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(&mut self, x: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out[o];
            self.grad_bias[o] += g;
            let row = o * self.in_dim;
            for i in 0..self.in_dim {
                self.grad_weights[row + i] += g * x[i];
                gx[i] += g * self.weights[row + i];
            }
        }
        gx
    }

    pub fn zero_grad(&mut self) {
        self.grad_weights.iter_mut().for_each(|g| *g = 0.0);
        self.grad_bias.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Channel concatenation `[a; b]`.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Config("concat requires matching spatial extents".into()));
    }
    let mut data = Vec::with_capacity((a.channels + b.channels) * a.height * a.width);
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    FeatureMap::from_vec(a.channels + b.channels, a.height, a.width, data)
}

/// Split a concat gradient back into the two operands' gradients.
pub fn split_channels(g: &FeatureMap, first_channels: usize) -> (FeatureMap, FeatureMap) {
    let n = g.height * g.width;
    let cut = first_channels * n;
    let ga = FeatureMap {
        channels: first_channels,
        height: g.height,
        width: g.width,
        data: g.data[..cut].to_vec(),
    };
    let gb = FeatureMap {
        channels: g.channels - first_channels,
        height: g.height,
        width: g.width,
        data: g.data[cut..].to_vec(),
    };
    (ga, gb)
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &FeatureMap) -> FeatureMap {
    let mut y = FeatureMap::zeros(x.channels, x.height * 2, x.width * 2);
    for c in 0..x.channels {
        for i in 0..y.height {
            for j in 0..y.width {
                y.set(c, i, j, x.at(c, i / 2, j / 2));
            }
        }
    }
    y
}

pub fn upsample2_backward(grad_out: &FeatureMap) -> FeatureMap {
    let (h, w) = (grad_out.height / 2, grad_out.width / 2);
    let mut gx = FeatureMap::zeros(grad_out.channels, h, w);
    for c in 0..grad_out.channels {
        for i in 0..grad_out.height {
            for j in 0..grad_out.width {
                let gi = gx.idx(c, i / 2, j / 2);
                gx.data[gi] += grad_out.at(c, i, j);
            }
        }
    }
    gx
}
