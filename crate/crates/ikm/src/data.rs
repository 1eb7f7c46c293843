//! Image I/O, bicubic degradation, HR-LR pair generation, patch sampling,
//! augmentation and mean-RGB normalization.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Rgb};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{IkmError, Result};
use crate::tensor::{Scalar, Tensor};

/// Aligned HR-LR training pair; both in [0,1], HR extents divisible by the
/// scale.
#[derive(Debug, Clone)]
pub struct ImagePair {
    pub hr: Tensor<f32>,
    pub lr: Tensor<f32>,
    pub scale: usize,
    pub source: String,
}

/// Per-channel RGB means of the training HR set, in [0,1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetStats {
    pub mean_rgb: [f32; 3],
}

impl DatasetStats {
    /// Neutral stats (no shift); used when no training set is available.
    pub fn zero() -> Self {
        DatasetStats {
            mean_rgb: [0.0; 3],
        }
    }

    /// Text form: three decimal numbers, one per line.
    pub fn to_text(&self) -> String {
        format!(
            "{}\n{}\n{}\n",
            self.mean_rgb[0], self.mean_rgb[1], self.mean_rgb[2]
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let vals: Vec<f32> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f32>()
                    .map_err(|_| IkmError::Data(format!("bad stats line '{}'", l)))
            })
            .collect::<Result<Vec<f32>>>()?;
        if vals.len() != 3 {
            return Err(IkmError::Data(format!(
                "stats file must hold 3 numbers, found {}",
                vals.len()
            )));
        }
        Ok(DatasetStats {
            mean_rgb: [vals[0], vals[1], vals[2]],
        })
    }
}

/// Loads an 8-bit RGB or grayscale PNG as a [3,H,W] tensor in [0,1];
/// grayscale is replicated across the three channels.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| IkmError::Image(format!("{}: {}", path.display(), e)))?;
    let rgb = match img {
        DynamicImage::ImageRgb8(b) => b,
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageRgba8(_) => {
            img.to_rgb8()
        }
        other => {
            return Err(IkmError::Image(format!(
                "{}: unsupported bit depth / color type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let px = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                *t.at3_mut(c, y, x) = px[c] as f32 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Saves a [3,H,W] tensor as an 8-bit RGB PNG; values are clamped to [0,1]
/// and quantized round-half-up.
pub fn save_png(t: &Tensor<f32>, path: &Path) -> Result<()> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(IkmError::ShapeMismatch(format!(
            "save_png expects 3 channels, got {}",
            c
        )));
    }
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for ci in 0..3 {
                let v = t.at3(ci, y, x).clamp(0.0, 1.0);
                px[ci] = (v * 255.0 + 0.5).floor() as u8;
            }
            buf.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| IkmError::Image(format!("{}: {}", path.display(), e)))?;
    Ok(())
}

/// Cubic convolution kernel with a = -0.5.
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * (x * x * x - 5.0 * x * x + 8.0 * x - 4.0)
    } else {
        0.0
    }
}

/// Per-output-index source taps and normalized weights along one axis.
/// Downscaling widens the kernel by the scale ratio (anti-aliasing); borders
/// are handled by clamping source indices (edge replication).
fn resample_weights(in_size: usize, out_size: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let ratio = in_size as f64 / out_size as f64;
    let widen = ratio.max(1.0);
    let radius = 2.0 * widen;
    let mut plan = Vec::with_capacity(out_size);
    for o in 0..out_size {
        let center = (o as f64 + 0.5) * ratio - 0.5;
        let lo = (center - radius).floor() as isize;
        let hi = (center + radius).ceil() as isize;
        let mut idx = Vec::new();
        let mut wts = Vec::new();
        let mut sum = 0.0;
        for i in lo..=hi {
            let w = cubic((i as f64 - center) / widen);
            if w != 0.0 {
                idx.push(i.clamp(0, in_size as isize - 1) as usize);
                wts.push(w);
                sum += w;
            }
        }
        for w in &mut wts {
            *w /= sum;
        }
        plan.push((idx, wts));
    }
    plan
}

/// Separable bicubic resize of a [C,H,W] tensor (a = -0.5, anti-aliased on
/// downscale, edge replication).
pub fn bicubic_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if out_h == 0 || out_w == 0 {
        return Err(IkmError::InvalidArgument("zero output size".into()));
    }
    let rows = resample_weights(h, out_h);
    let cols = resample_weights(w, out_w);
    // rows first
    let mut mid = Tensor::<T>::zeros(&[c, out_h, w]);
    for ci in 0..c {
        for (oy, (idx, wts)) in rows.iter().enumerate() {
            for xx in 0..w {
                let mut acc = 0.0f64;
                for (&i, &wt) in idx.iter().zip(wts) {
                    acc += wt * Scalar::to_f64(x.at3(ci, i, xx));
                }
                *mid.at3_mut(ci, oy, xx) = T::from_f64(acc);
            }
        }
    }
    let mut out = Tensor::<T>::zeros(&[c, out_h, out_w]);
    for ci in 0..c {
        for oy in 0..out_h {
            for (ox, (idx, wts)) in cols.iter().enumerate() {
                let mut acc = 0.0f64;
                for (&i, &wt) in idx.iter().zip(wts) {
                    acc += wt * Scalar::to_f64(mid.at3(ci, oy, i));
                }
                *out.at3_mut(ci, oy, ox) = T::from_f64(acc);
            }
        }
    }
    Ok(out)
}

/// Crops an HR image to extents divisible by the scale and degrades it with
/// the anti-aliased bicubic kernel to build an aligned pair.
pub fn make_pair(hr: &Tensor<f32>, scale: usize, source: &str) -> Result<ImagePair> {
    let (_, h, w) = hr.dims3()?;
    if scale == 0 {
        return Err(IkmError::InvalidArgument("scale must be positive".into()));
    }
    let (ch, cw) = (h - h % scale, w - w % scale);
    if ch == 0 || cw == 0 {
        return Err(IkmError::Data(format!(
            "image {}x{} too small for scale {}",
            h, w, scale
        )));
    }
    let hr_c = crop3(hr, 0, 0, ch, cw)?;
    let lr = bicubic_resize(&hr_c, ch / scale, cw / scale)?;
    Ok(ImagePair {
        hr: hr_c,
        lr,
        scale,
        source: source.to_string(),
    })
}

/// Rectangular crop of a [C,H,W] tensor.
pub fn crop3<T: Scalar>(
    x: &Tensor<T>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if top + height > h || left + width > w {
        return Err(IkmError::ShapeMismatch(format!(
            "crop {}x{}+{}+{} exceeds {}x{}",
            height, width, top, left, h, w
        )));
    }
    let mut out = Tensor::zeros(&[c, height, width]);
    for ci in 0..c {
        for y in 0..height {
            for xx in 0..width {
                *out.at3_mut(ci, y, xx) = x.at3(ci, top + y, left + xx);
            }
        }
    }
    Ok(out)
}

/// Draws an aligned LR/HR patch pair: a `patch`x`patch` LR crop at a random
/// offset (r, c) and the s-aligned HR crop at (s*r, s*c).
pub fn sample_patch_pair(
    pair: &ImagePair,
    patch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (_, lh, lw) = pair.lr.dims3()?;
    if lh < patch || lw < patch {
        return Err(IkmError::Data(format!(
            "{}: LR {}x{} smaller than patch {}",
            pair.source, lh, lw, patch
        )));
    }
    let r = if lh == patch { 0 } else { rng.gen_range(0..=lh - patch) };
    let c = if lw == patch { 0 } else { rng.gen_range(0..=lw - patch) };
    let s = pair.scale;
    let lr = crop3(&pair.lr, r, c, patch, patch)?;
    let hr = crop3(&pair.hr, s * r, s * c, s * patch, s * patch)?;
    Ok((lr, hr))
}

fn hflip3(x: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = x.dims3().unwrap();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                *out.at3_mut(ci, y, xx) = x.at3(ci, y, w - 1 - xx);
            }
        }
    }
    out
}

fn rot90_3(x: &Tensor<f32>) -> Tensor<f32> {
    // (y, x) -> (x, H-1-y): counter-clockwise quarter turn
    let (c, h, w) = x.dims3().unwrap();
    let mut out = Tensor::zeros(&[c, w, h]);
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                *out.at3_mut(ci, w - 1 - xx, y) = x.at3(ci, y, xx);
            }
        }
    }
    out
}

/// Applies one draw from {identity, h-flip} x {0, 90, 180, 270} degrees
/// identically to both patches.
pub fn augment(
    lr: &Tensor<f32>,
    hr: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> (Tensor<f32>, Tensor<f32>) {
    let flip: bool = rng.gen();
    let quarter: u8 = rng.gen_range(0..4);
    let apply = |t: &Tensor<f32>| {
        let mut t = if flip { hflip3(t) } else { t.clone() };
        for _ in 0..quarter {
            t = rot90_3(&t);
        }
        t
    };
    (apply(lr), apply(hr))
}

/// Per-channel mean subtraction over a [C,H,W] tensor.
pub fn normalize(x: &Tensor<f32>, stats: &DatasetStats) -> Result<Tensor<f32>> {
    shift(x, stats, -1.0)
}

/// Exact inverse of `normalize`.
pub fn denormalize(x: &Tensor<f32>, stats: &DatasetStats) -> Result<Tensor<f32>> {
    shift(x, stats, 1.0)
}

fn shift(x: &Tensor<f32>, stats: &DatasetStats, sign: f32) -> Result<Tensor<f32>> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(IkmError::ShapeMismatch(format!(
            "normalization expects 3 channels, got {}",
            c
        )));
    }
    let mut out = x.clone();
    for ci in 0..3 {
        let m = sign * stats.mean_rgb[ci];
        for y in 0..h {
            for xx in 0..w {
                *out.at3_mut(ci, y, xx) += m;
            }
        }
    }
    Ok(out)
}

/// Channel means over a set of [3,H,W] images (pixel-weighted).
pub fn compute_stats(images: &[Tensor<f32>]) -> Result<DatasetStats> {
    if images.is_empty() {
        return Err(IkmError::Data("no images for dataset stats".into()));
    }
    let mut acc = [0.0f64; 3];
    let mut count = 0.0f64;
    for img in images {
        let (c, h, w) = img.dims3()?;
        if c != 3 {
            return Err(IkmError::ShapeMismatch("stats expect 3 channels".into()));
        }
        for ci in 0..3 {
            for y in 0..h {
                for xx in 0..w {
                    acc[ci] += img.at3(ci, y, xx) as f64;
                }
            }
        }
        count += (h * w) as f64;
    }
    Ok(DatasetStats {
        mean_rgb: [
            (acc[0] / count) as f32,
            (acc[1] / count) as f32,
            (acc[2] / count) as f32,
        ],
    })
}

/// Sorted list of PNG paths under a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false)
        {
            out.push(path);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(IkmError::Data(format!(
            "no PNG files under {}",
            dir.display()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_img(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_vec(
            &[3, h, w],
            (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        let img = rand_img(&mut rng, 7, 9);
        let dir = std::env::temp_dir().join("ikm_png_rt");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");
        save_png(&img, &path).unwrap();
        let back = load_png(&path).unwrap();
        let bound = 0.5 / 255.0 + 1e-6;
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
    }

    #[test]
    fn grayscale_promoted_to_rgb() {
        let dir = std::env::temp_dir().join("ikm_png_gray");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("g.png");
        let gray = image::GrayImage::from_fn(4, 4, |x, y| image::Luma([(x * 40 + y * 10) as u8]));
        gray.save(&path).unwrap();
        let t = load_png(&path).unwrap();
        assert_eq!(t.shape(), &[3, 4, 4]);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(t.at3(0, y, x), t.at3(1, y, x));
                assert_eq!(t.at3(1, y, x), t.at3(2, y, x));
            }
        }
    }

    #[test]
    fn crafted_png_exact_pixels() {
        let dir = std::env::temp_dir().join("ikm_png_craft");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("c.png");
        let mut buf = image::RgbImage::new(2, 2);
        buf.put_pixel(0, 0, Rgb([0, 128, 255]));
        buf.put_pixel(1, 0, Rgb([255, 0, 0]));
        buf.put_pixel(0, 1, Rgb([1, 2, 3]));
        buf.put_pixel(1, 1, Rgb([254, 253, 252]));
        buf.save(&path).unwrap();
        let t = load_png(&path).unwrap();
        assert_eq!(t.at3(0, 0, 0), 0.0);
        assert_eq!(t.at3(1, 0, 0), 128.0 / 255.0);
        assert_eq!(t.at3(2, 0, 0), 1.0);
        assert_eq!(t.at3(0, 0, 1), 1.0);
        assert_eq!(t.at3(0, 1, 0), 1.0 / 255.0);
        assert_eq!(t.at3(2, 1, 1), 252.0 / 255.0);
    }

    #[test]
    fn bicubic_constant_stays_constant() {
        let img = Tensor::<f64>::full(&[3, 8, 8], 0.37);
        for (oh, ow) in [(4, 4), (8, 8), (16, 12), (3, 5)] {
            let out = bicubic_resize(&img, oh, ow).unwrap();
            for &v in out.data() {
                assert!((v - 0.37).abs() < 1e-12, "{oh}x{ow}: {v}");
            }
        }
    }

    #[test]
    fn bicubic_identity_resize() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let img = rand_img(&mut rng, 6, 7).cast::<f64>();
        let out = bicubic_resize(&img, 6, 7).unwrap();
        for (a, b) in out.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn bicubic_downscale_matches_direct_kernel_sum() {
        // 8x8 ramp halved: evaluate the widened 2-D kernel sum directly.
        let img = Tensor::<f64>::from_vec(
            &[1, 8, 8],
            (0..64).map(|v| (v as f64) / 63.0).collect(),
        )
        .unwrap();
        let out = bicubic_resize(&img, 4, 4).unwrap();
        let widen = 2.0;
        for oy in 0..4 {
            for ox in 0..4 {
                let cy = (oy as f64 + 0.5) * 2.0 - 0.5;
                let cx = (ox as f64 + 0.5) * 2.0 - 0.5;
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for iy in -6..14i64 {
                    for ix in -6..14i64 {
                        let wy = cubic((iy as f64 - cy) / widen);
                        let wx = cubic((ix as f64 - cx) / widen);
                        let w = wy * wx;
                        if w != 0.0 {
                            let sy = iy.clamp(0, 7) as usize;
                            let sx = ix.clamp(0, 7) as usize;
                            acc += w * img.at3(0, sy, sx);
                            wsum += w;
                        }
                    }
                }
                let expect = acc / wsum;
                assert!(
                    (out.at3(0, oy, ox) - expect).abs() < 1e-6,
                    "({oy},{ox}): {} vs {expect}",
                    out.at3(0, oy, ox)
                );
            }
        }
    }

    #[test]
    fn bicubic_round_trip_mean_error_small() {
        // smooth low-frequency image survives x2 up then x2 down
        let mut img = Tensor::<f64>::zeros(&[1, 16, 16]);
        for y in 0..16 {
            for x in 0..16 {
                *img.at3_mut(0, y, x) = 0.5
                    + 0.3 * ((y as f64) * 0.2).sin() * ((x as f64) * 0.25).cos();
            }
        }
        let up = bicubic_resize(&img, 32, 32).unwrap();
        let back = bicubic_resize(&up, 16, 16).unwrap();
        let mae: f64 = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 256.0;
        assert!(mae < 2.0 / 255.0, "round-trip MAE {mae}");
    }

    #[test]
    fn make_pair_crops_to_multiple() {
        let mut rng = ChaCha8Rng::seed_from_u64(305);
        let hr = rand_img(&mut rng, 11, 10);
        let pair = make_pair(&hr, 4, "t").unwrap();
        assert_eq!(pair.hr.shape(), &[3, 8, 8]);
        assert_eq!(pair.lr.shape(), &[3, 2, 2]);
    }

    #[test]
    fn patch_alignment_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(307);
        let hr = rand_img(&mut rng, 24, 24);
        let pair = make_pair(&hr, 2, "t").unwrap();
        // forced whole-image patch when LR equals the patch size
        let (lp, hp) = sample_patch_pair(&pair, 12, &mut rng).unwrap();
        assert_eq!(lp, pair.lr);
        assert_eq!(hp, pair.hr);
        // random offsets stay aligned: compare HR crop pixels to pair.hr
        for _ in 0..50 {
            let (lp, hp) = sample_patch_pair(&pair, 4, &mut rng).unwrap();
            assert_eq!(lp.shape(), &[3, 4, 4]);
            assert_eq!(hp.shape(), &[3, 8, 8]);
            // locate the LR offset by matching the first pixel row
            let mut found = false;
            'outer: for r in 0..=8 {
                for c in 0..=8 {
                    if (0..4).all(|x| pair.lr.at3(0, r, c + x) == lp.at3(0, 0, x))
                        && pair.lr.at3(0, r + 1, c) == lp.at3(0, 1, 0)
                    {
                        // HR must start at (2r, 2c)
                        if pair.hr.at3(0, 2 * r, 2 * c) == hp.at3(0, 0, 0) {
                            found = true;
                            break 'outer;
                        }
                    }
                }
            }
            assert!(found, "no aligned offset located");
        }
    }

    #[test]
    fn patch_bounds_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(309);
        let hr = rand_img(&mut rng, 30, 26);
        let pair = make_pair(&hr, 2, "t").unwrap();
        for _ in 0..1000 {
            let (lp, hp) = sample_patch_pair(&pair, 5, &mut rng).unwrap();
            assert_eq!(lp.shape(), &[3, 5, 5]);
            assert_eq!(hp.shape(), &[3, 10, 10]);
        }
    }

    #[test]
    fn patch_too_small_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(311);
        let hr = rand_img(&mut rng, 8, 8);
        let pair = make_pair(&hr, 2, "t").unwrap();
        assert!(sample_patch_pair(&pair, 48, &mut rng).is_err());
    }

    #[test]
    fn rotation_group_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(313);
        let img = rand_img(&mut rng, 5, 7);
        let twice = rot90_3(&rot90_3(&img));
        // 180 degrees: (y,x) -> (H-1-y, W-1-x)
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..7 {
                    assert_eq!(twice.at3(c, 4 - y, 6 - x), img.at3(c, y, x));
                }
            }
        }
        let four = rot90_3(&rot90_3(&twice));
        assert_eq!(four, img);
    }

    #[test]
    fn augment_preserves_pixel_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(315);
        let lr = rand_img(&mut rng, 6, 6);
        let hr = rand_img(&mut rng, 12, 12);
        for _ in 0..20 {
            let (l2, h2) = augment(&lr, &hr, &mut rng);
            let mut a: Vec<u32> = lr.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = l2.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
            let mut a: Vec<u32> = hr.data().iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = h2.data().iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn normalize_round_trip_and_mean_image() {
        let stats = DatasetStats {
            mean_rgb: [0.25, 0.5, 0.75],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(317);
        let img = rand_img(&mut rng, 4, 4);
        let back = denormalize(&normalize(&img, &stats).unwrap(), &stats).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-7);
        }
        let mut mean_img = Tensor::<f32>::zeros(&[3, 2, 2]);
        for c in 0..3 {
            for k in 0..4 {
                *mean_img.at3_mut(c, k / 2, k % 2) = stats.mean_rgb[c];
            }
        }
        let z = normalize(&mean_img, &stats).unwrap();
        assert!(z.data().iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn stats_match_hand_computation() {
        let a = Tensor::<f32>::full(&[3, 2, 2], 0.2);
        let mut b = Tensor::<f32>::full(&[3, 2, 2], 0.6);
        for k in 0..4 {
            *b.at3_mut(0, k / 2, k % 2) = 1.0;
        }
        let stats = compute_stats(&[a, b]).unwrap();
        assert!((stats.mean_rgb[0] - 0.6).abs() < 1e-6); // (0.2 + 1.0)/2
        assert!((stats.mean_rgb[1] - 0.4).abs() < 1e-6);
        assert!((stats.mean_rgb[2] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn stats_text_round_trip() {
        let s = DatasetStats {
            mean_rgb: [0.1, 0.2, 0.3],
        };
        assert_eq!(DatasetStats::from_text(&s.to_text()).unwrap(), s);
        assert!(DatasetStats::from_text("0.1\n0.2\n").is_err());
    }
}
