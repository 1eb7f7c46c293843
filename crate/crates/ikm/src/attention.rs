//! Channel-attention and spatial-attention baselines used for the ablation
//! comparison against IKM.

use crate::conv::{conv2d_backward, conv2d_forward, ConvParams};
use crate::error::{IkmError, Result};
use crate::ops::sigmoid_scalar;
use crate::tensor::{Scalar, Tensor};

/// Squeeze-and-excitation style channel attention: two fully-connected
/// layers around a reduction ratio r.
#[derive(Debug, Clone)]
pub struct CaParams<T: Scalar> {
    /// c -> c/r
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    /// c/r -> c
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> CaParams<T> {
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let inner = channels / reduction;
        if inner == 0 {
            return Err(IkmError::InvalidArgument(format!(
                "reduction {} collapses {} channels to zero",
                reduction, channels
            )));
        }
        Ok(CaParams {
            w1: Tensor::zeros(&[inner, channels]),
            b1: Tensor::zeros(&[inner]),
            w2: Tensor::zeros(&[channels, inner]),
            b2: Tensor::zeros(&[channels]),
        })
    }

    pub fn channels(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn inner(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }
}

#[derive(Debug, Clone)]
pub struct CaGrads<T: Scalar> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct CaCache<T: Scalar> {
    input: Tensor<T>,
    pooled: Tensor<T>,
    hidden: Tensor<T>,
    scale: Tensor<T>,
}

/// s = sigmoid(FC(relu(FC(gap(y))))); output = s broadcast over each channel.
pub fn channel_attention<T: Scalar>(
    y: &Tensor<T>,
    p: &CaParams<T>,
) -> Result<(Tensor<T>, CaCache<T>)> {
    let (b, c, h, w) = y.dims4()?;
    if c != p.channels() {
        return Err(IkmError::ShapeMismatch(format!(
            "channel attention built for {} channels, input has {}",
            p.channels(),
            c
        )));
    }
    let inner = p.inner();
    let hw = T::from_f64((h * w) as f64);
    let mut pooled = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for ci in 0..c {
            let mut acc = T::zero();
            for yy in 0..h {
                for xx in 0..w {
                    acc = acc + y.at4(bi, ci, yy, xx);
                }
            }
            pooled.data_mut()[bi * c + ci] = acc / hw;
        }
    }
    let mut hidden = Tensor::zeros(&[b, inner]);
    for bi in 0..b {
        for k in 0..inner {
            let mut acc = p.b1.data()[k];
            for ci in 0..c {
                acc = acc + p.w1.data()[k * c + ci] * pooled.data()[bi * c + ci];
            }
            hidden.data_mut()[bi * inner + k] = if acc > T::zero() { acc } else { T::zero() };
        }
    }
    let mut scale = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for j in 0..c {
            let mut acc = p.b2.data()[j];
            for k in 0..inner {
                acc = acc + p.w2.data()[j * inner + k] * hidden.data()[bi * inner + k];
            }
            scale.data_mut()[bi * c + j] = sigmoid_scalar(acc);
        }
    }
    let mut out = Tensor::zeros(y.shape());
    for bi in 0..b {
        for j in 0..c {
            let s = scale.data()[bi * c + j];
            for yy in 0..h {
                for xx in 0..w {
                    *out.at4_mut(bi, j, yy, xx) = s * y.at4(bi, j, yy, xx);
                }
            }
        }
    }
    Ok((
        out,
        CaCache {
            input: y.clone(),
            pooled,
            hidden,
            scale,
        },
    ))
}

pub fn channel_attention_backward<T: Scalar>(
    cache: &CaCache<T>,
    p: &CaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, CaGrads<T>)> {
    let y = &cache.input;
    let (b, c, h, w) = y.dims4()?;
    if grad_out.shape() != y.shape() {
        return Err(IkmError::ShapeMismatch("grad_out shape mismatch".into()));
    }
    let inner = p.inner();
    let mut gy = Tensor::zeros(y.shape());
    let mut d_scale = Tensor::zeros(&[b, c]);
    for bi in 0..b {
        for j in 0..c {
            let s = cache.scale.data()[bi * c + j];
            let mut acc = T::zero();
            for yy in 0..h {
                for xx in 0..w {
                    let g = grad_out.at4(bi, j, yy, xx);
                    *gy.at4_mut(bi, j, yy, xx) = s * g;
                    acc = acc + g * y.at4(bi, j, yy, xx);
                }
            }
            d_scale.data_mut()[bi * c + j] = acc;
        }
    }
    let mut gw1 = Tensor::zeros(p.w1.shape());
    let mut gb1 = Tensor::zeros(p.b1.shape());
    let mut gw2 = Tensor::zeros(p.w2.shape());
    let mut gb2 = Tensor::zeros(p.b2.shape());
    let hw = T::from_f64((h * w) as f64);
    for bi in 0..b {
        // through the sigmoid
        let mut d_pre2 = vec![T::zero(); c];
        for j in 0..c {
            let s = cache.scale.data()[bi * c + j];
            d_pre2[j] = d_scale.data()[bi * c + j] * s * (T::one() - s);
            gb2.data_mut()[j] = gb2.data()[j] + d_pre2[j];
        }
        let mut d_hidden = vec![T::zero(); inner];
        for j in 0..c {
            for k in 0..inner {
                gw2.data_mut()[j * inner + k] = gw2.data()[j * inner + k]
                    + d_pre2[j] * cache.hidden.data()[bi * inner + k];
                d_hidden[k] = d_hidden[k] + p.w2.data()[j * inner + k] * d_pre2[j];
            }
        }
        // through the ReLU
        let mut d_pre1 = vec![T::zero(); inner];
        for k in 0..inner {
            if cache.hidden.data()[bi * inner + k] > T::zero() {
                d_pre1[k] = d_hidden[k];
            }
            gb1.data_mut()[k] = gb1.data()[k] + d_pre1[k];
        }
        let mut d_pool = vec![T::zero(); c];
        for k in 0..inner {
            for ci in 0..c {
                gw1.data_mut()[k * c + ci] =
                    gw1.data()[k * c + ci] + d_pre1[k] * cache.pooled.data()[bi * c + ci];
                d_pool[ci] = d_pool[ci] + p.w1.data()[k * c + ci] * d_pre1[k];
            }
        }
        // global average pool spreads evenly over spatial positions
        for ci in 0..c {
            let g = d_pool[ci] / hw;
            for yy in 0..h {
                for xx in 0..w {
                    *gy.at4_mut(bi, ci, yy, xx) = gy.at4(bi, ci, yy, xx) + g;
                }
            }
        }
    }
    Ok((
        gy,
        CaGrads {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        },
    ))
}

/// CBAM-style spatial attention: one convolution over the channel mean and
/// max maps producing a per-pixel gate.
#[derive(Debug, Clone)]
pub struct SaParams<T: Scalar> {
    /// 2 -> 1 convolution, kernel k_sa x k_sa.
    pub conv: ConvParams<T>,
}

impl<T: Scalar> SaParams<T> {
    pub fn zeros(kernel: usize) -> Result<Self> {
        let pad = kernel / 2;
        Ok(SaParams {
            conv: ConvParams::with_meta(
                Tensor::zeros(&[1, 2, kernel, kernel]),
                Tensor::zeros(&[1]),
                (1, 1),
                (1, 1),
                (pad, pad),
            )?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv.weights.len() + self.conv.bias.len()
    }
}

#[derive(Debug, Clone)]
pub struct SaGrads<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct SaCache<T: Scalar> {
    input: Tensor<T>,
    stats: Tensor<T>,
    argmax: Vec<usize>,
    gate: Tensor<T>,
}

/// a = sigmoid(conv([channel-mean, channel-max])); output = a broadcast over
/// channels.
pub fn spatial_attention<T: Scalar>(
    y: &Tensor<T>,
    p: &SaParams<T>,
) -> Result<(Tensor<T>, SaCache<T>)> {
    let (b, c, h, w) = y.dims4()?;
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut stats = Tensor::zeros(&[b, 2, h, w]);
    let mut argmax = vec![0usize; b * h * w];
    for bi in 0..b {
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = T::zero();
                let mut best = y.at4(bi, 0, yy, xx);
                let mut best_c = 0;
                for ci in 0..c {
                    let v = y.at4(bi, ci, yy, xx);
                    acc = acc + v;
                    if v > best {
                        best = v;
                        best_c = ci;
                    }
                }
                *stats.at4_mut(bi, 0, yy, xx) = acc * inv_c;
                *stats.at4_mut(bi, 1, yy, xx) = best;
                argmax[(bi * h + yy) * w + xx] = best_c;
            }
        }
    }
    let pre = conv2d_forward(&stats, &p.conv)?;
    let gate = pre.map(sigmoid_scalar);
    let mut out = Tensor::zeros(y.shape());
    for bi in 0..b {
        for ci in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    *out.at4_mut(bi, ci, yy, xx) = gate.at4(bi, 0, yy, xx) * y.at4(bi, ci, yy, xx);
                }
            }
        }
    }
    Ok((
        out,
        SaCache {
            input: y.clone(),
            stats,
            argmax,
            gate,
        },
    ))
}

pub fn spatial_attention_backward<T: Scalar>(
    cache: &SaCache<T>,
    p: &SaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, SaGrads<T>)> {
    let y = &cache.input;
    let (b, c, h, w) = y.dims4()?;
    if grad_out.shape() != y.shape() {
        return Err(IkmError::ShapeMismatch("grad_out shape mismatch".into()));
    }
    let mut gy = Tensor::zeros(y.shape());
    let mut d_gate = Tensor::zeros(&[b, 1, h, w]);
    for bi in 0..b {
        for yy in 0..h {
            for xx in 0..w {
                let a = cache.gate.at4(bi, 0, yy, xx);
                let mut acc = T::zero();
                for ci in 0..c {
                    let g = grad_out.at4(bi, ci, yy, xx);
                    *gy.at4_mut(bi, ci, yy, xx) = a * g;
                    acc = acc + g * y.at4(bi, ci, yy, xx);
                }
                *d_gate.at4_mut(bi, 0, yy, xx) = acc * a * (T::one() - a);
            }
        }
    }
    let pack = conv2d_backward(&cache.stats, &p.conv, &d_gate)?;
    let inv_c = T::from_f64(1.0 / c as f64);
    for bi in 0..b {
        for yy in 0..h {
            for xx in 0..w {
                let dm = pack.grad_input.at4(bi, 0, yy, xx) * inv_c;
                for ci in 0..c {
                    *gy.at4_mut(bi, ci, yy, xx) = gy.at4(bi, ci, yy, xx) + dm;
                }
                // max routes to the winning channel
                let mc = cache.argmax[(bi * h + yy) * w + xx];
                *gy.at4_mut(bi, mc, yy, xx) =
                    gy.at4(bi, mc, yy, xx) + pack.grad_input.at4(bi, 1, yy, xx);
            }
        }
    }
    Ok((
        gy,
        SaGrads {
            weights: pack.grad_weights,
            bias: pack.grad_bias,
        },
    ))
}
