//! Pointwise and spatial primitives shared by the layers.

use crate::error::{IkmError, Result};
use crate::tensor::{Scalar, Tensor};

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// 1 where x >= t, else 0. Ties at exactly t map to 1.
pub fn heaviside_ge<T: Scalar>(x: &Tensor<T>, t: T) -> Tensor<T> {
    x.map(|v| if v >= t { T::one() } else { T::zero() })
}

/// Exp-normalization over the spatial positions of each (batch, channel)
/// slice. Each slice sums to 1; the per-slice max is subtracted first.
pub fn softmax_2d<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = Tensor::zeros(x.shape());
    for s in 0..b * c {
        let slice = &x.data()[s * hw..(s + 1) * hw];
        let max = slice.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        let dst = &mut out.data_mut()[s * hw..(s + 1) * hw];
        for (d, &v) in dst.iter_mut().zip(slice) {
            *d = (v - max).exp();
            sum = sum + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / sum;
        }
    }
    Ok(out)
}

/// Adaptive average pooling. Output cell (i, j) averages the input bin
/// [floor(i*H/out_h), ceil((i+1)*H/out_h)) x [floor(j*W/out_w), ceil((j+1)*W/out_w)).
pub fn adaptive_avg_pool<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(IkmError::InvalidArgument("zero-size pool output".into()));
    }
    if out_h > h || out_w > w {
        return Err(IkmError::InvalidArgument(format!(
            "pool output {}x{} exceeds input {}x{}",
            out_h, out_w, h, w
        )));
    }
    let mut out = Tensor::zeros(&[b, c, out_h, out_w]);
    for bi in 0..b {
        for ci in 0..c {
            for i in 0..out_h {
                let y0 = i * h / out_h;
                let y1 = ((i + 1) * h + out_h - 1) / out_h;
                for j in 0..out_w {
                    let x0 = j * w / out_w;
                    let x1 = ((j + 1) * w + out_w - 1) / out_w;
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc = acc + x.at4(bi, ci, y, xx);
                        }
                    }
                    let n = T::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                    *out.at4_mut(bi, ci, i, j) = acc / n;
                }
            }
        }
    }
    Ok(out)
}

/// Rearranges [B, C*s^2, H, W] into [B, C, s*H, s*W]:
/// out[b, c, s*i+di, s*j+dj] = x[b, c*s^2 + di*s + dj, i, j].
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, c_in, h, w) = x.dims4()?;
    if s == 0 || c_in % (s * s) != 0 {
        return Err(IkmError::ShapeMismatch(format!(
            "channel count {} not divisible by s^2 = {}",
            c_in,
            s * s
        )));
    }
    let c = c_in / (s * s);
    let mut out = Tensor::zeros(&[b, c, s * h, s * w]);
    for bi in 0..b {
        for ci in 0..c {
            for di in 0..s {
                for dj in 0..s {
                    for i in 0..h {
                        for j in 0..w {
                            *out.at4_mut(bi, ci, s * i + di, s * j + dj) =
                                x.at4(bi, ci * s * s + di * s + dj, i, j);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of `pixel_shuffle`.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let (b, c, sh, sw) = x.dims4()?;
    if s == 0 || sh % s != 0 || sw % s != 0 {
        return Err(IkmError::ShapeMismatch(
            "spatial extents not divisible by s".into(),
        ));
    }
    let (h, w) = (sh / s, sw / s);
    let mut out = Tensor::zeros(&[b, c * s * s, h, w]);
    for bi in 0..b {
        for ci in 0..c {
            for di in 0..s {
                for dj in 0..s {
                    for i in 0..h {
                        for j in 0..w {
                            *out.at4_mut(bi, ci * s * s + di * s + dj, i, j) =
                                x.at4(bi, ci, s * i + di, s * j + dj);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f64>::zeros(&[1]);
        assert_eq!(sigmoid(&x).data()[0], 0.5);
    }

    #[test]
    fn relu_clamps_negative() {
        let x = Tensor::<f64>::from_vec(&[2], vec![-3.5, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn heaviside_tie_maps_to_one() {
        let x = Tensor::<f64>::from_vec(&[3], vec![-0.1, 0.0, 0.1]).unwrap();
        assert_eq!(heaviside_ge(&x, 0.0).data(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn softmax_uniform_slice() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 4.2);
        let s = softmax_2d(&x).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_dominant_entry() {
        let mut x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        x.data_mut()[0] = 1e3;
        let s = softmax_2d(&x).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert!(s.data()[1..].iter().all(|&v| v < 1e-12));
    }

    #[test]
    fn softmax_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f64>::from_vec(
            &[1, 1, 3, 3],
            (0..9).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let s = softmax_2d(&x).unwrap();
        let sum: f64 = x.data().iter().map(|v| v.exp()).sum();
        for (o, v) in s.data().iter().zip(x.data()) {
            assert!((o - v.exp() / sum).abs() < 1e-12);
        }
        assert!((s.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pool_identity_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Tensor::<f64>::from_vec(
            &[1, 1, 4, 4],
            (0..16).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let same = adaptive_avg_pool(&x, 4, 4).unwrap();
        assert_eq!(same, x);
        let one = adaptive_avg_pool(&x, 1, 1).unwrap();
        let mean: f64 = x.data().iter().sum::<f64>() / 16.0;
        assert!((one.data()[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn pool_ones_to_one() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let y = adaptive_avg_pool(&x, 1, 1).unwrap();
        assert_eq!(y.data()[0], 1.0);
    }

    #[test]
    fn pool_ramp_matches_bin_means() {
        // 6x6 ramp pooled to 3x3 equals explicit bin means over 2x2 bins.
        let x =
            Tensor::<f64>::from_vec(&[1, 1, 6, 6], (0..36).map(|v| v as f64).collect()).unwrap();
        let y = adaptive_avg_pool(&x, 3, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += x.at4(0, 0, 2 * i + dy, 2 * j + dx);
                    }
                }
                assert!((y.at4(0, 0, i, j) - acc / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pool_rejects_zero_output() {
        let x = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!(adaptive_avg_pool(&x, 0, 1).is_err());
    }

    #[test]
    fn pixel_shuffle_small_case() {
        let x = Tensor::<f64>::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn pixel_shuffle_s1_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x = Tensor::<f64>::from_vec(
            &[1, 3, 2, 2],
            (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn pixel_shuffle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::<f64>::from_vec(
            &[1, 8, 3, 3],
            (0..72).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let back = pixel_unshuffle(&pixel_shuffle(&x, 2).unwrap(), 2).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible() {
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(pixel_shuffle(&x, 2).is_err());
    }
}
