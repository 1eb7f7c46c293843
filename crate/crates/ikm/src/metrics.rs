//! PSNR and SSIM on the luminance channel with scale-dependent border crop.

use crate::error::{IkmError, Result};
use crate::tensor::Tensor;

/// Per-image and aggregate quality numbers.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<(String, f64, f64)>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub wall_ms: u128,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<(String, f64, f64)>, wall_ms: u128) -> Self {
        let n = rows.len().max(1) as f64;
        let mean_psnr = rows.iter().map(|r| r.1).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.2).sum::<f64>() / n;
        EvalReport {
            rows,
            mean_psnr,
            mean_ssim,
            wall_ms,
        }
    }

    /// CSV with columns image, psnr_db, ssim; crop convention in the header.
    pub fn to_csv(&self, border: usize) -> String {
        let mut out = format!("# border_crop={}\nimage,psnr_db,ssim\n", border);
        for (name, p, s) in &self.rows {
            out.push_str(&format!("{},{},{}\n", name, p, s));
        }
        out.push_str(&format!("mean,{},{}\n", self.mean_psnr, self.mean_ssim));
        out
    }
}

/// ITU-R BT.601 luminance on the [0,255] scale:
/// Y = 65.481 R + 128.553 G + 24.966 B + 16, from RGB in [0,1].
pub fn luminance(x: &Tensor<f32>) -> Result<Tensor<f64>> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(IkmError::ShapeMismatch(format!(
            "luminance expects 3 channels, got {}",
            c
        )));
    }
    let mut y = Tensor::zeros(&[1, h, w]);
    for yy in 0..h {
        for xx in 0..w {
            *y.at3_mut(0, yy, xx) = 65.481 * x.at3(0, yy, xx) as f64
                + 128.553 * x.at3(1, yy, xx) as f64
                + 24.966 * x.at3(2, yy, xx) as f64
                + 16.0;
        }
    }
    Ok(y)
}

fn cropped_luma(x: &Tensor<f32>, border: usize) -> Result<Tensor<f64>> {
    let y = luminance(x)?;
    let (_, h, w) = y.dims3()?;
    if h <= 2 * border || w <= 2 * border {
        return Err(IkmError::InvalidArgument(format!(
            "image {}x{} vanishes under border crop {}",
            h, w, border
        )));
    }
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    let mut out = Tensor::zeros(&[1, ch, cw]);
    for yy in 0..ch {
        for xx in 0..cw {
            *out.at3_mut(0, yy, xx) = y.at3(0, border + yy, border + xx);
        }
    }
    Ok(out)
}

/// Luminance PSNR in dB after cropping a `border`-pixel frame:
/// 10 log10(255^2 / MSE). Identical images return +infinity.
pub fn psnr(pred: &Tensor<f32>, target: &Tensor<f32>, border: usize) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(IkmError::ShapeMismatch(format!(
            "psnr on {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let p = cropped_luma(pred, border)?;
    let t = cropped_luma(target, border)?;
    let mse = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / p.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// 11-tap Gaussian, sigma 1.5, normalized.
fn gaussian_window() -> [f64; 11] {
    let mut w = [0.0f64; 11];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM over luminance with an 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, L = 255, mean over valid positions.
pub fn ssim(pred: &Tensor<f32>, target: &Tensor<f32>, border: usize) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(IkmError::ShapeMismatch(format!(
            "ssim on {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let p = cropped_luma(pred, border)?;
    let t = cropped_luma(target, border)?;
    let (_, h, w) = p.dims3()?;
    if h < 11 || w < 11 {
        return Err(IkmError::InvalidArgument(format!(
            "image {}x{} smaller than the 11x11 SSIM window",
            h, w
        )));
    }
    let win = gaussian_window();
    let c1 = (0.01f64 * 255.0) * (0.01 * 255.0);
    let c2 = (0.03f64 * 255.0) * (0.03 * 255.0);
    // separable Gaussian filtering helper over valid positions
    let filt = |img: &Tensor<f64>| -> Vec<f64> {
        let mut rows = vec![0.0; (h - 10) * w];
        for y in 0..h - 10 {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &wk) in win.iter().enumerate() {
                    acc += wk * img.at3(0, y + k, x);
                }
                rows[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; (h - 10) * (w - 10)];
        for y in 0..h - 10 {
            for x in 0..w - 10 {
                let mut acc = 0.0;
                for (k, &wk) in win.iter().enumerate() {
                    acc += wk * rows[y * w + x + k];
                }
                out[y * (w - 10) + x] = acc;
            }
        }
        out
    };
    let pp = p.zip_map(&p, |a, b| a * b)?;
    let tt = t.zip_map(&t, |a, b| a * b)?;
    let pt = p.zip_map(&t, |a, b| a * b)?;
    let mu_p = filt(&p);
    let mu_t = filt(&t);
    let e_pp = filt(&pp);
    let e_tt = filt(&tt);
    let e_pt = filt(&pt);
    let mut acc = 0.0;
    for i in 0..mu_p.len() {
        let (mp, mt) = (mu_p[i], mu_t[i]);
        let var_p = e_pp[i] - mp * mp;
        let var_t = e_tt[i] - mt * mt;
        let cov = e_pt[i] - mp * mt;
        acc += ((2.0 * mp * mt + c1) * (2.0 * cov + c2))
            / ((mp * mp + mt * mt + c1) * (var_p + var_t + c2));
    }
    Ok(acc / mu_p.len() as f64)
}
