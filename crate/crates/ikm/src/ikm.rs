//! Image-specific kernel modulation: contextual attention generation,
//! kernel modulation, and the per-image (IsO) and batch-averaged (GO)
//! convolution paths.

use crate::conv::{
    conv2d_backward, conv2d_forward, group_conv2d_forward, ConvParams, GradPack,
};
use crate::error::{IkmError, Result};
use crate::ops::{adaptive_avg_pool, heaviside_ge, sigmoid_scalar, softmax_2d};
use crate::tensor::{Scalar, Tensor};

/// Configuration of the contextual attention generator for one host
/// convolution. The attention lives on the K x K tap grid; the pooled
/// context spans the dilated extent R = K + (K-1)(D-1).
#[derive(Debug, Clone, Copy)]
pub struct CagConfig {
    pub threshold: f64,
    pub kernel: (usize, usize),
    pub dilation: (usize, usize),
}

impl CagConfig {
    pub fn new(threshold: f64, kernel: (usize, usize), dilation: (usize, usize)) -> Self {
        CagConfig {
            threshold,
            kernel,
            dilation,
        }
    }

    pub fn receptive_field(&self) -> (usize, usize) {
        (
            self.kernel.0 + (self.kernel.0 - 1) * (self.dilation.0 - 1),
            self.kernel.1 + (self.kernel.1 - 1) * (self.dilation.1 - 1),
        )
    }
}

/// Per-image attention weights on the kernel tap grid, shape
/// B x c_in x K_h x K_w. Every entry lies in (1, 2); the c_out replicas of a
/// given (b, i) slice are identical by construction.
#[derive(Debug, Clone)]
pub struct KernelAttention<T: Scalar> {
    pub values: Tensor<T>,
    pub receptive_field: (usize, usize),
}

/// Threshold -> pool-to-R -> tap sampling -> proportion transformation.
/// Pooled entries equal the fraction of above-threshold pixels per bin;
/// a = 1 + sigmoid(|R| * softmax_2d(taps) - 1) with |R| the tap count.
pub fn cag_generate<T: Scalar>(x: &Tensor<T>, cfg: &CagConfig) -> Result<KernelAttention<T>> {
    let (b, c, h, w) = x.dims4()?;
    let (rh, rw) = cfg.receptive_field();
    if h < rh || w < rw {
        return Err(IkmError::ShapeMismatch(format!(
            "input {}x{} smaller than receptive field {}x{}",
            h, w, rh, rw
        )));
    }
    let mask = heaviside_ge(x, T::from_f64(cfg.threshold));
    let pooled = adaptive_avg_pool(&mask, rh, rw)?;
    // Sample pooled context at the tap positions (identity when dilation = 1).
    let (kh, kw) = cfg.kernel;
    let mut taps = Tensor::zeros(&[b, c, kh, kw]);
    for bi in 0..b {
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    *taps.at4_mut(bi, ci, ky, kx) =
                        pooled.at4(bi, ci, ky * cfg.dilation.0, kx * cfg.dilation.1);
                }
            }
        }
    }
    let sm = softmax_2d(&taps)?;
    let tap_count = T::from_f64((kh * kw) as f64);
    let values = sm.map(|v| T::one() + sigmoid_scalar(tap_count * v - T::one()));
    Ok(KernelAttention {
        values,
        receptive_field: (rh, rw),
    })
}

/// Eq.-style tap-wise modulation: w_hat[(b,j),i,p] = a[b,i,p] * w[j,i,p],
/// stacking one bank per batch item.
pub fn modulate_kernels<T: Scalar>(
    a: &KernelAttention<T>,
    p: &ConvParams<T>,
) -> Result<Tensor<T>> {
    let (b, c_in, kh, kw) = a.values.dims4()?;
    let (c_out, pc_in, pkh, pkw) = p.weights.dims4()?;
    if c_in != pc_in || kh != pkh || kw != pkw || a.receptive_field != p.receptive_field() {
        return Err(IkmError::ShapeMismatch(
            "attention grid does not match kernel taps".into(),
        ));
    }
    let mut w_hat = Tensor::zeros(&[b * c_out, c_in, kh, kw]);
    for bi in 0..b {
        for j in 0..c_out {
            for i in 0..c_in {
                for ky in 0..kh {
                    for kx in 0..kw {
                        *w_hat.at4_mut(bi * c_out + j, i, ky, kx) =
                            a.values.at4(bi, i, ky, kx) * p.weights.at4(j, i, ky, kx);
                    }
                }
            }
        }
    }
    Ok(w_hat)
}

/// Forward cache: the raw input and the computed attention. The attention is
/// never recomputed in backward (the hard threshold is sensitive to numeric
/// noise).
#[derive(Debug, Clone)]
pub struct IkmCache<T: Scalar> {
    pub input: Tensor<T>,
    pub attention: KernelAttention<T>,
}

/// IsO forward: per-image modulated banks run as one group convolution over
/// the batch reshaped to a single stacked sample.
pub fn ikm_conv_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    cfg: &CagConfig,
) -> Result<(Tensor<T>, IkmCache<T>)> {
    let (b, c_in, h, w) = x.dims4()?;
    let a = cag_generate(x, cfg)?;
    let w_hat = modulate_kernels(&a, p)?;
    let flat = x.clone().reshape(&[1, b * c_in, h, w])?;
    let y = group_conv2d_forward(&flat, &w_hat, b, p.stride, p.dilation, p.padding)?;
    let (_, ct, oh, ow) = y.dims4()?;
    let c_out = ct / b;
    let mut y = y.reshape(&[b, c_out, oh, ow])?;
    for bi in 0..b {
        for j in 0..c_out {
            let bj = p.bias.data()[j];
            for yy in 0..oh {
                for xx in 0..ow {
                    *y.at4_mut(bi, j, yy, xx) = y.at4(bi, j, yy, xx) + bj;
                }
            }
        }
    }
    Ok((
        y,
        IkmCache {
            input: x.clone(),
            attention: a,
        },
    ))
}

/// IsO backward. Per image b, G_b is the standard weight adjoint against the
/// modulated bank; the shared-weight gradient is the batch sum of a_b (.) G_b.
/// The attention branch contributes zero input gradient: the hard threshold
/// has zero derivative almost everywhere, so the attention is treated as a
/// detached function of the input.
pub fn ikm_conv_backward<T: Scalar>(
    cache: &IkmCache<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<GradPack<T>> {
    let x = &cache.input;
    let (batch, _, _, _) = x.dims4()?;
    let (ab, _, _, _) = cache.attention.values.dims4()?;
    if ab != batch {
        return Err(IkmError::ShapeMismatch(
            "cache does not match forward batch".into(),
        ));
    }
    let w_hat = modulate_kernels(&cache.attention, p)?;
    let (c_out, c_in, kh, kw) = p.weights.dims4()?;
    let n_bank = c_out * c_in * kh * kw;
    let mut gx_items = Vec::with_capacity(batch);
    let mut gw = Tensor::zeros(p.weights.shape());
    let mut gb = Tensor::zeros(p.bias.shape());
    for b in 0..batch {
        let xb = x.batch_item(b)?;
        let gob = grad_out.batch_item(b)?;
        let wb = Tensor::from_vec(
            &[c_out, c_in, kh, kw],
            w_hat.data()[b * n_bank..(b + 1) * n_bank].to_vec(),
        )?;
        let pb = ConvParams::with_meta(wb, p.bias.clone(), p.stride, p.dilation, p.padding)?;
        let pack = conv2d_backward(&xb, &pb, &gob)?;
        for j in 0..c_out {
            for i in 0..c_in {
                for ky in 0..kh {
                    for kx in 0..kw {
                        *gw.at4_mut(j, i, ky, kx) = gw.at4(j, i, ky, kx)
                            + cache.attention.values.at4(b, i, ky, kx)
                                * pack.grad_weights.at4(j, i, ky, kx);
                    }
                }
            }
        }
        gb.add_assign(&pack.grad_bias)?;
        gx_items.push(pack.grad_input);
    }
    let mut data = Vec::with_capacity(x.len());
    for g in &gx_items {
        data.extend_from_slice(g.data());
    }
    Ok(GradPack {
        grad_input: Tensor::from_vec(x.shape(), data)?,
        grad_weights: gw,
        grad_bias: gb,
    })
}

#[derive(Debug, Clone)]
pub struct GoCache<T: Scalar> {
    pub input: Tensor<T>,
    /// Batch-averaged attention, c_in x K_h x K_w.
    pub mean_attention: Tensor<T>,
}

fn go_modulated<T: Scalar>(
    mean_a: &Tensor<T>,
    p: &ConvParams<T>,
) -> Result<ConvParams<T>> {
    let (c_out, c_in, kh, kw) = p.weights.dims4()?;
    let mut w_hat = Tensor::zeros(p.weights.shape());
    for j in 0..c_out {
        for i in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    *w_hat.at4_mut(j, i, ky, kx) =
                        mean_a.at3(i, ky, kx) * p.weights.at4(j, i, ky, kx);
                }
            }
        }
    }
    ConvParams::with_meta(w_hat, p.bias.clone(), p.stride, p.dilation, p.padding)
}

/// GO baseline: attention averaged over the batch, folded into one shared
/// kernel, followed by a single vanilla convolution over the whole batch.
pub fn go_conv_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    cfg: &CagConfig,
) -> Result<(Tensor<T>, GoCache<T>)> {
    let (batch, c_in, _, _) = x.dims4()?;
    let a = cag_generate(x, cfg)?;
    let (kh, kw) = cfg.kernel;
    let mut mean = Tensor::zeros(&[c_in, kh, kw]);
    let inv_b = T::from_f64(1.0 / batch as f64);
    for b in 0..batch {
        for i in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    *mean.at3_mut(i, ky, kx) =
                        mean.at3(i, ky, kx) + a.values.at4(b, i, ky, kx) * inv_b;
                }
            }
        }
    }
    let ph = go_modulated(&mean, p)?;
    let y = conv2d_forward(x, &ph)?;
    Ok((
        y,
        GoCache {
            input: x.clone(),
            mean_attention: mean,
        },
    ))
}

pub fn go_conv_backward<T: Scalar>(
    cache: &GoCache<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<GradPack<T>> {
    let ph = go_modulated(&cache.mean_attention, p)?;
    let pack = conv2d_backward(&cache.input, &ph, grad_out)?;
    let (c_out, c_in, kh, kw) = p.weights.dims4()?;
    let mut gw = Tensor::zeros(p.weights.shape());
    for j in 0..c_out {
        for i in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    *gw.at4_mut(j, i, ky, kx) =
                        cache.mean_attention.at3(i, ky, kx) * pack.grad_weights.at4(j, i, ky, kx);
                }
            }
        }
    }
    Ok(GradPack {
        grad_input: pack.grad_input,
        grad_weights: gw,
        grad_bias: pack.grad_bias,
    })
}
