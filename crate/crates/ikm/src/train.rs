//! MAE objective, Adam with the halving schedule, the mini-batch training
//! loop and whole-image evaluation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::Uhdn;
use crate::data::{augment, denormalize, normalize, sample_patch_pair, DatasetStats, ImagePair};
use crate::error::{IkmError, Result};
use crate::metrics::{psnr, ssim, EvalReport};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    /// Steps between learning-rate halvings.
    pub halve_period: usize,
    pub steps: usize,
    pub seed: u64,
    pub patch: usize,
    pub log_interval: usize,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr0: 1e-4,
            halve_period: 100_000,
            steps: 2000,
            seed: 0,
            patch: 48,
            log_interval: 100,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(IkmError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(IkmError::Config("lr0 must be > 0".into()));
        }
        if self.halve_period == 0 || self.patch == 0 || self.log_interval == 0 {
            return Err(IkmError::Config(
                "halve_period, patch and log_interval must be positive".into(),
            ));
        }
        Ok(())
    }

    /// lr(step) = lr0 * 2^(-floor(step / period)).
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr0 * 0.5f64.powi((step / self.halve_period) as i32)
    }
}

/// Mean absolute error and its subgradient (sign(0) = 0), normalized by the
/// element count.
pub fn mae_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(IkmError::ShapeMismatch(format!(
            "mae on {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let inv = T::from_f64(1.0 / n);
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for (k, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let d = p - t;
        loss += Scalar::to_f64(d).abs();
        grad.data_mut()[k] = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((loss / n, grad))
}

/// Bias-corrected Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) over a flat
/// parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: usize,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(shapes: &[&Tensor<f32>]) -> Self {
        Adam {
            m: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: shapes.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }

    /// One update. Rejects non-finite gradients before mutating anything.
    pub fn apply(
        &mut self,
        params: &mut [&mut Tensor<f32>],
        grads: &[&Tensor<f32>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(IkmError::ShapeMismatch(
                "optimizer state does not match parameter list".into(),
            ));
        }
        for g in grads {
            if !g.all_finite() {
                return Err(IkmError::NonFinite("gradient".into()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].data();
            let p = params[i].data_mut();
            for k in 0..g.len() {
                let gk = g[k] as f64;
                let mk = ADAM_BETA1 * m.data()[k] as f64 + (1.0 - ADAM_BETA1) * gk;
                let vk = ADAM_BETA2 * v.data()[k] as f64 + (1.0 - ADAM_BETA2) * gk * gk;
                m.data_mut()[k] = mk as f32;
                v.data_mut()[k] = vk as f32;
                let m_hat = mk / bc1;
                let v_hat = vk / bc2;
                p[k] = (p[k] as f64 - lr * m_hat / (v_hat.sqrt() + ADAM_EPS)) as f32;
            }
        }
        Ok(())
    }
}

/// One metrics row per logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub train_mae: f64,
    pub wall_ms: u128,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,lr,train_mae,wall_ms\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.lr, r.train_mae, r.wall_ms));
    }
    out
}

/// Stacks [3,h,w] items into a [B,3,h,w] batch.
pub fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let (c, h, w) = items[0].dims3()?;
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for it in items {
        if it.shape() != [c, h, w] {
            return Err(IkmError::ShapeMismatch("ragged batch".into()));
        }
        data.extend_from_slice(it.data());
    }
    Tensor::from_vec(&[items.len(), c, h, w], data)
}

/// Runs the step loop: sample batch, normalize, forward under the model's
/// convolution mode, MAE, backward, Adam. Returns the metrics log.
pub fn train(
    model: &mut Uhdn<f32>,
    pairs: &[ImagePair],
    stats: &DatasetStats,
    cfg: &TrainConfig,
) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(IkmError::Data("no training pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = {
        let named = model.named_params();
        let refs: Vec<&Tensor<f32>> = named.iter().map(|(_, t)| *t).collect();
        Adam::new(&refs)
    };
    let mut rows = Vec::new();
    let start = Instant::now();
    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    for step in 0..cfg.steps {
        let mut lr_items = Vec::with_capacity(cfg.batch_size);
        let mut hr_items = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let pair = &pairs[rng.gen_range(0..pairs.len())];
            let (lp, hp) = sample_patch_pair(pair, cfg.patch, &mut rng)?;
            let (lp, hp) = if cfg.augment {
                augment(&lp, &hp, &mut rng)
            } else {
                (lp, hp)
            };
            lr_items.push(normalize(&lp, stats)?);
            hr_items.push(normalize(&hp, stats)?);
        }
        let x = stack_batch(&lr_items)?;
        let target = stack_batch(&hr_items)?;
        let (pred, cache) = model.forward(&x, &mut None)?;
        let (loss, grad) = mae_loss(&pred, &target)?;
        if !loss.is_finite() {
            return Err(IkmError::NonFinite(format!("loss at step {}", step)));
        }
        let (_, grads) = model.backward(&cache, &grad)?;
        let lr = cfg.lr_at(step);
        {
            let flat_grads = grads.flat();
            let mut named = model.named_params_mut();
            let mut refs: Vec<&mut Tensor<f32>> =
                named.iter_mut().map(|(_, t)| &mut **t).collect();
            opt.apply(&mut refs, &flat_grads, lr)?;
        }
        window_loss += loss;
        window_n += 1;
        if (step + 1) % cfg.log_interval == 0 || step + 1 == cfg.steps {
            rows.push(LogRow {
                step: step + 1,
                lr,
                train_mae: window_loss / window_n as f64,
                wall_ms: start.elapsed().as_millis(),
            });
            window_loss = 0.0;
            window_n = 0;
        }
    }
    Ok(rows)
}

/// Whole-image inference on one LR image: normalize, forward, denormalize,
/// clamp to [0,1].
pub fn infer_image(
    model: &Uhdn<f32>,
    lr: &Tensor<f32>,
    stats: &DatasetStats,
) -> Result<Tensor<f32>> {
    let (c, h, w) = lr.dims3()?;
    let x = normalize(lr, stats)?
        .reshape(&[1, c, h, w])?;
    let (y, _) = model.forward(&x, &mut None)?;
    let (_, yc, yh, yw) = y.dims4()?;
    let y = y.reshape(&[yc, yh, yw])?;
    Ok(denormalize(&y, stats)?.map(|v| v.clamp(0.0, 1.0)))
}

/// Per-image PSNR/SSIM over aligned LR/HR lists, border crop = scale.
pub fn evaluate(
    model: &Uhdn<f32>,
    items: &[(String, Tensor<f32>, Tensor<f32>)],
    stats: &DatasetStats,
) -> Result<EvalReport> {
    let border = model.cfg.scale;
    let start = Instant::now();
    let mut rows = Vec::with_capacity(items.len());
    for (name, lr, hr) in items {
        let sr = infer_image(model, lr, stats)?;
        if sr.shape() != hr.shape() {
            return Err(IkmError::ShapeMismatch(format!(
                "{}: SR {:?} vs HR {:?}",
                name,
                sr.shape(),
                hr.shape()
            )));
        }
        rows.push((
            name.clone(),
            psnr(&sr, hr, border)?,
            ssim(&sr, hr, border)?,
        ));
    }
    Ok(EvalReport::from_rows(rows, start.elapsed().as_millis()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{Mode, UhdnConfig};
    use crate::data::make_pair;

    fn rand_img(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_vec(
            &[3, h, w],
            (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn tiny_cfg(mode: Mode) -> UhdnConfig {
        UhdnConfig {
            n_blocks: 1,
            depths: vec![1, 1],
            growth: 4,
            channels: 8,
            scale: 2,
            mode,
            threshold: 0.0,
            dilation: 1,
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 2,
            lr0: 1e-3,
            halve_period: 1000,
            steps: 0,
            seed: 7,
            patch: 8,
            log_interval: 5,
            augment: true,
        }
    }

    #[test]
    fn mae_identical_is_zero() {
        let a = Tensor::<f64>::full(&[2, 3], 0.4);
        let (l, g) = mae_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mae_constant_offset() {
        let t = Tensor::<f64>::zeros(&[4]);
        let p = Tensor::<f64>::full(&[4], 1.0);
        let (l, g) = mae_loss(&p, &t).unwrap();
        assert!((l - 1.0).abs() < 1e-15);
        for &v in g.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn mae_gradient_matches_finite_differences() {
        use crate::gradcheck::finite_diff_check;
        let mut rng = ChaCha8Rng::seed_from_u64(501);
        let t = Tensor::<f64>::from_vec(&[6], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let p = Tensor::<f64>::from_vec(&[6], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let (_, g) = mae_loss(&p, &t).unwrap();
        let err = finite_diff_check(
            &mut |x: &Tensor<f64>| mae_loss(x, &t).unwrap().0,
            &p,
            &g,
            1e-7,
        )
        .unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn lr_schedule_exact() {
        let cfg = TrainConfig {
            lr0: 1e-4,
            halve_period: 100,
            ..tiny_train_cfg()
        };
        assert_eq!(cfg.lr_at(0), 1e-4);
        assert_eq!(cfg.lr_at(99), 1e-4);
        assert_eq!(cfg.lr_at(100), 5e-5);
        assert_eq!(cfg.lr_at(250), 2.5e-5);
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = Tensor::<f32>::full(&[3], 1.5);
        let g = Tensor::<f32>::zeros(&[3]);
        let mut opt = Adam::new(&[&p]);
        opt.apply(&mut [&mut p], &[&g], 1e-3).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let g = Tensor::<f32>::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let mut opt = Adam::new(&[&p]);
        opt.apply(&mut [&mut p], &[&g], 1e-2).unwrap();
        // bias correction makes m_hat/sqrt(v_hat) ~ sign(g)
        assert!((p.data()[0] + 1e-2).abs() < 1e-5);
        assert!((p.data()[1] - 1e-2).abs() < 1e-5);
    }

    #[test]
    fn adam_matches_scripted_oracle_on_quadratic() {
        // f(w) = w^2 from w = 1, 3 steps; oracle scripted in f64
        let mut p = Tensor::<f32>::from_vec(&[1], vec![1.0]).unwrap();
        let mut opt = Adam::new(&[&p]);
        let lr = 0.1;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut w = 1.0f64;
        for t in 1..=3 {
            let g32 = 2.0 * p.data()[0];
            let g = Tensor::<f32>::from_vec(&[1], vec![g32]).unwrap();
            opt.apply(&mut [&mut p], &[&g], lr).unwrap();
            let gk = g32 as f64;
            m = 0.9 * m + 0.1 * gk;
            v = 0.999 * v + 0.001 * gk * gk;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            w -= lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert!(
                (p.data()[0] as f64 - w).abs() < 1e-6,
                "step {t}: {} vs {w}",
                p.data()[0]
            );
        }
    }

    #[test]
    fn adam_rejects_non_finite_grad() {
        let mut p = Tensor::<f32>::zeros(&[1]);
        let g = Tensor::<f32>::from_vec(&[1], vec![f32::NAN]).unwrap();
        let mut opt = Adam::new(&[&p]);
        assert!(opt.apply(&mut [&mut p], &[&g], 1e-3).is_err());
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(503);
        let mut model = Uhdn::init(&tiny_cfg(Mode::Iso), &mut rng).unwrap();
        let snapshot: Vec<Vec<f32>> = model
            .named_params()
            .iter()
            .map(|(_, t)| t.data().to_vec())
            .collect();
        let hr = rand_img(&mut rng, 32, 32);
        let pair = make_pair(&hr, 2, "t").unwrap();
        let rows = train(
            &mut model,
            &[pair],
            &DatasetStats::zero(),
            &tiny_train_cfg(),
        )
        .unwrap();
        assert!(rows.is_empty());
        for ((_, t), before) in model.named_params().iter().zip(&snapshot) {
            assert_eq!(t.data(), before.as_slice());
        }
    }

    #[test]
    fn fixed_seed_training_is_bitwise_deterministic() {
        let cfg = TrainConfig {
            steps: 10,
            ..tiny_train_cfg()
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut rng = ChaCha8Rng::seed_from_u64(505);
            let mut model = Uhdn::init(&tiny_cfg(Mode::Iso), &mut rng).unwrap();
            let hr = rand_img(&mut rng, 32, 32);
            let pair = make_pair(&hr, 2, "t").unwrap();
            let rows = train(&mut model, &[pair], &DatasetStats::zero(), &cfg).unwrap();
            let params: Vec<Vec<u32>> = model
                .named_params()
                .iter()
                .map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect())
                .collect();
            runs.push((rows, params));
        }
        assert_eq!(runs[0].1, runs[1].1);
        assert_eq!(runs[0].0.len(), runs[1].0.len());
        for (a, b) in runs[0].0.iter().zip(&runs[1].0) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.lr, b.lr);
            assert_eq!(a.train_mae.to_bits(), b.train_mae.to_bits());
        }
    }

    #[test]
    fn short_overfit_reduces_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(507);
        let mut model = Uhdn::init(&tiny_cfg(Mode::Vanilla), &mut rng).unwrap();
        let hr = rand_img(&mut rng, 16, 16);
        let pair = make_pair(&hr, 2, "t").unwrap();
        let cfg = TrainConfig {
            steps: 60,
            batch_size: 2,
            lr0: 1e-3,
            patch: 8,
            log_interval: 10,
            augment: false,
            ..tiny_train_cfg()
        };
        let rows = train(&mut model, &[pair], &DatasetStats::zero(), &cfg).unwrap();
        assert!(
            rows.last().unwrap().train_mae < rows.first().unwrap().train_mae,
            "no improvement: {:?}",
            rows
        );
    }

    #[test]
    fn evaluate_identity_against_itself() {
        // zero-step model is irrelevant: feed HR as both SR source and target
        // by using scale-1-like check through psnr directly; here check that
        // evaluate wires names and shapes, and the report is finite.
        let mut rng = ChaCha8Rng::seed_from_u64(509);
        let model = Uhdn::init(&tiny_cfg(Mode::Iso), &mut rng).unwrap();
        let hr = rand_img(&mut rng, 32, 32);
        let pair = make_pair(&hr, 2, "e").unwrap();
        let report = evaluate(
            &model,
            &[("e".into(), pair.lr.clone(), pair.hr.clone())],
            &DatasetStats::zero(),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.rows[0].1.is_finite());
        assert!(report.rows[0].2 <= 1.0);
    }

    #[test]
    fn zero_weight_model_matches_constant_predictor_oracle() {
        // all-zero weights predict exactly the dataset mean after
        // denormalization; PSNR must match the scripted constant predictor.
        let mut rng = ChaCha8Rng::seed_from_u64(511);
        let model = Uhdn::<f32>::zeros(&tiny_cfg(Mode::Vanilla)).unwrap();
        let stats = DatasetStats {
            mean_rgb: [0.4, 0.5, 0.6],
        };
        let hr = rand_img(&mut rng, 24, 24);
        let pair = make_pair(&hr, 2, "z").unwrap();
        let report = evaluate(
            &model,
            &[("z".into(), pair.lr.clone(), pair.hr.clone())],
            &stats,
        )
        .unwrap();
        let mut constant = Tensor::<f32>::zeros(&[3, 24, 24]);
        for c in 0..3 {
            for y in 0..24 {
                for x in 0..24 {
                    *constant.at3_mut(c, y, x) = stats.mean_rgb[c];
                }
            }
        }
        let want = psnr(&constant, &pair.hr, 2).unwrap();
        assert!(
            (report.rows[0].1 - want).abs() < 1e-9,
            "{} vs {want}",
            report.rows[0].1
        );
    }

    #[test]
    fn csv_layout() {
        let rows = vec![LogRow {
            step: 100,
            lr: 1e-4,
            train_mae: 0.5,
            wall_ms: 12,
        }];
        let csv = log_to_csv(&rows);
        assert!(csv.starts_with("step,lr,train_mae,wall_ms\n"));
        assert!(csv.contains("100,0.0001,0.5,12"));
    }
}
