//! 2-D convolution: direct reference loop, an im2col fast path, the adjoint,
//! and the grouped form used for per-image kernel banks.

use crate::error::{IkmError, Result};
use crate::tensor::{Scalar, Tensor};

/// Shared convolution parameters. Weights are c_out x c_in x K_h x K_w.
#[derive(Debug, Clone)]
pub struct ConvParams<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        Self::with_meta(weights, bias, (1, 1), (1, 1), (0, 0))
    }

    pub fn with_meta(
        weights: Tensor<T>,
        bias: Tensor<T>,
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        let (c_out, _, kh, kw) = weights.dims4()?;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(IkmError::InvalidArgument(format!(
                "kernel extents must be odd, got {}x{}",
                kh, kw
            )));
        }
        if bias.shape() != [c_out] {
            return Err(IkmError::ShapeMismatch(format!(
                "bias shape {:?} does not match c_out {}",
                bias.shape(),
                c_out
            )));
        }
        if stride.0 == 0 || stride.1 == 0 || dilation.0 == 0 || dilation.1 == 0 {
            return Err(IkmError::InvalidArgument(
                "stride and dilation must be positive".into(),
            ));
        }
        Ok(ConvParams {
            weights,
            bias,
            stride,
            dilation,
            padding,
        })
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }

    /// Effective receptive field R = K + (K-1)(D-1) per axis.
    pub fn receptive_field(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel();
        (
            kh + (kh - 1) * (self.dilation.0 - 1),
            kw + (kw - 1) * (self.dilation.1 - 1),
        )
    }

    pub fn out_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let eh = self.dilation.0 * (kh - 1) + 1;
        let ew = self.dilation.1 * (kw - 1) + 1;
        if h + 2 * self.padding.0 < eh || w + 2 * self.padding.1 < ew {
            return Err(IkmError::ShapeMismatch(format!(
                "input {}x{} too small for dilated kernel {}x{}",
                h, w, eh, ew
            )));
        }
        Ok((
            (h + 2 * self.padding.0 - eh) / self.stride.0 + 1,
            (w + 2 * self.padding.1 - ew) / self.stride.1 + 1,
        ))
    }
}

/// Gradients of one convolution layer, shapes matching the forward inputs.
#[derive(Debug, Clone)]
pub struct GradPack<T: Scalar> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

fn check_input<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<(usize, usize, usize)> {
    let (b, c, h, w) = x.dims4()?;
    if c != p.c_in() {
        return Err(IkmError::ShapeMismatch(format!(
            "input has {} channels, kernel expects {}",
            c,
            p.c_in()
        )));
    }
    let _ = b;
    let (oh, ow) = p.out_size(h, w)?;
    Ok((b, oh, ow))
}

/// Naive quadruple-loop convolution. Authoritative reference path; the
/// im2col path below is checked against it.
pub fn conv2d_forward_direct<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (batch, oh, ow) = check_input(x, p)?;
    let (_, _, h, w) = x.dims4()?;
    let (c_out, c_in) = (p.c_out(), p.c_in());
    let (kh, kw) = p.kernel();
    let mut y = Tensor::zeros(&[batch, c_out, oh, ow]);
    for b in 0..batch {
        for j in 0..c_out {
            let bias = p.bias.data()[j];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = T::zero();
                    for i in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * p.stride.0 + ky * p.dilation.0) as isize
                                    - p.padding.0 as isize;
                                let ix = (ox * p.stride.1 + kx * p.dilation.1) as isize
                                    - p.padding.1 as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc = acc
                                        + x.at4(b, i, iy as usize, ix as usize)
                                            * p.weights.at4(j, i, ky, kx);
                                }
                            }
                        }
                    }
                    *y.at4_mut(b, j, oy, ox) = acc + bias;
                }
            }
        }
    }
    Ok(y)
}

/// im2col patch matrix for one batch item: rows are c_in*K_h*K_w taps,
/// columns are output positions.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    b: usize,
    p: &ConvParams<T>,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let (_, c_in, h, w) = x.dims4().unwrap();
    let (kh, kw) = p.kernel();
    let cols = oh * ow;
    let mut m = vec![T::zero(); c_in * kh * kw * cols];
    let mut row = 0;
    for i in 0..c_in {
        for ky in 0..kh {
            for kx in 0..kw {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let iy =
                            (oy * p.stride.0 + ky * p.dilation.0) as isize - p.padding.0 as isize;
                        let ix =
                            (ox * p.stride.1 + kx * p.dilation.1) as isize - p.padding.1 as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            m[row * cols + oy * ow + ox] = x.at4(b, i, iy as usize, ix as usize);
                        }
                    }
                }
                row += 1;
            }
        }
    }
    m
}

/// Optimized forward path: im2col patch matrix times the flattened kernel.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let (batch, oh, ow) = check_input(x, p)?;
    let (c_out, c_in) = (p.c_out(), p.c_in());
    let (kh, kw) = p.kernel();
    let k = c_in * kh * kw;
    let cols = oh * ow;
    let wdat = p.weights.data();
    let mut y = Tensor::zeros(&[batch, c_out, oh, ow]);
    for b in 0..batch {
        let m = im2col(x, b, p, oh, ow);
        let ydat = y.data_mut();
        let ybase = b * c_out * cols;
        for j in 0..c_out {
            let out = &mut ydat[ybase + j * cols..ybase + (j + 1) * cols];
            let bias = p.bias.data()[j];
            for o in out.iter_mut() {
                *o = bias;
            }
            for r in 0..k {
                let wj = wdat[j * k + r];
                if wj == T::zero() {
                    continue;
                }
                let mrow = &m[r * cols..(r + 1) * cols];
                for (o, &v) in out.iter_mut().zip(mrow) {
                    *o = *o + wj * v;
                }
            }
        }
    }
    Ok(y)
}

/// Adjoint of `conv2d_forward`. grad_input is the full correlation of
/// grad_out with the weights; grad_weights and grad_bias are summed over the
/// batch.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
    grad_out: &Tensor<T>,
) -> Result<GradPack<T>> {
    let (batch, oh, ow) = check_input(x, p)?;
    if grad_out.shape() != [batch, p.c_out(), oh, ow] {
        return Err(IkmError::ShapeMismatch(format!(
            "grad_out shape {:?} does not match forward output [{},{},{},{}]",
            grad_out.shape(),
            batch,
            p.c_out(),
            oh,
            ow
        )));
    }
    let (_, _, h, w) = x.dims4()?;
    let (c_out, c_in) = (p.c_out(), p.c_in());
    let (kh, kw) = p.kernel();
    let k = c_in * kh * kw;
    let cols = oh * ow;
    let wdat = p.weights.data();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(p.weights.shape());
    let mut gb = Tensor::zeros(p.bias.shape());
    let mut gcol = vec![T::zero(); k * cols];
    for b in 0..batch {
        let m = im2col(x, b, p, oh, ow);
        let gdat = &grad_out.data()[b * c_out * cols..(b + 1) * c_out * cols];
        // bias: column sums; weights: patch-matrix row dot products;
        // input: kernel-transposed gradient columns scattered back (col2im)
        for v in gcol.iter_mut() {
            *v = T::zero();
        }
        let gwdat = gw.data_mut();
        for j in 0..c_out {
            let gj = &gdat[j * cols..(j + 1) * cols];
            let mut bsum = T::zero();
            for &g in gj {
                bsum = bsum + g;
            }
            gb.data_mut()[j] = gb.data()[j] + bsum;
            for r in 0..k {
                let mrow = &m[r * cols..(r + 1) * cols];
                let mut acc = T::zero();
                for (&g, &v) in gj.iter().zip(mrow) {
                    acc = acc + g * v;
                }
                gwdat[j * k + r] = gwdat[j * k + r] + acc;
                let wj = wdat[j * k + r];
                if wj == T::zero() {
                    continue;
                }
                let grow = &mut gcol[r * cols..(r + 1) * cols];
                for (o, &g) in grow.iter_mut().zip(gj) {
                    *o = *o + wj * g;
                }
            }
        }
        let gxdat = gx.data_mut();
        let base = b * c_in * h * w;
        let mut row = 0;
        for i in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    let grow = &gcol[row * cols..(row + 1) * cols];
                    for oy in 0..oh {
                        let iy = (oy * p.stride.0 + ky * p.dilation.0) as isize
                            - p.padding.0 as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        let xbase = base + i * h * w + iy as usize * w;
                        for ox in 0..ow {
                            let ix = (ox * p.stride.1 + kx * p.dilation.1) as isize
                                - p.padding.1 as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            gxdat[xbase + ix as usize] =
                                gxdat[xbase + ix as usize] + grow[oy * ow + ox];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    Ok(GradPack {
        grad_input: gx,
        grad_weights: gw,
        grad_bias: gb,
    })
}

/// Grouped convolution over a single sample whose channels hold `groups`
/// independent inputs; `w_hat` stacks one kernel bank per group. Used to run
/// B per-image kernel banks in one call (groups = B).
pub fn group_conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w_hat: &Tensor<T>,
    groups: usize,
    stride: (usize, usize),
    dilation: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let (n, c_total, h, w) = x.dims4()?;
    if n != 1 {
        return Err(IkmError::ShapeMismatch(
            "group_conv2d_forward expects a single stacked sample".into(),
        ));
    }
    if c_total % groups != 0 {
        return Err(IkmError::ShapeMismatch(format!(
            "channel count {} not divisible by {} groups",
            c_total, groups
        )));
    }
    let (bank_out, c_in, kh, kw) = w_hat.dims4()?;
    if bank_out % groups != 0 || c_total / groups != c_in {
        return Err(IkmError::ShapeMismatch(
            "kernel bank does not match grouping".into(),
        ));
    }
    let c_out = bank_out / groups;
    let mut outs = Vec::with_capacity(groups);
    let n_in = c_in * h * w;
    let n_bank = c_out * c_in * kh * kw;
    for g in 0..groups {
        let xg = Tensor::from_vec(&[1, c_in, h, w], x.data()[g * n_in..(g + 1) * n_in].to_vec())?;
        let wg = Tensor::from_vec(
            &[c_out, c_in, kh, kw],
            w_hat.data()[g * n_bank..(g + 1) * n_bank].to_vec(),
        )?;
        let pg = ConvParams::with_meta(wg, Tensor::zeros(&[c_out]), stride, dilation, padding)?;
        outs.push(conv2d_forward(&xg, &pg)?);
    }
    let refs: Vec<&Tensor<T>> = outs.iter().collect();
    let cat = Tensor::concat_channels(&refs)?;
    let (_, ct, oh, ow) = cat.dims4()?;
    cat.reshape(&[1, ct, oh, ow])
}
