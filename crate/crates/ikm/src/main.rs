//! Command-line surface: training, evaluation, inference, gradient checks,
//! parameter/MAC accounting, bicubic degradation and attention dumps.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ikm::arch::{count_flops, count_params, DenseUnit, Mode, Uhdb, Uhdn};
use ikm::checkpoint::{load_checkpoint, save_checkpoint};
use ikm::config::parse_run_config;
use ikm::conv::{conv2d_backward, conv2d_forward, ConvParams};
use ikm::data::{compute_stats, list_pngs, load_png, make_pair, save_png};
use ikm::error::IkmError;
use ikm::gradcheck::finite_diff_check;
use ikm::ikm::{ikm_conv_backward, ikm_conv_forward, CagConfig};
use ikm::tensor::Tensor;
use ikm::train::{evaluate, infer_image, log_to_csv, train};

#[derive(Parser)]
#[command(name = "ikm", about = "Single-image super-resolution with image-specific kernel modulation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Vanilla,
    Iso,
    Go,
    Ca,
    Sa,
}

impl From<CliMode> for Mode {
    fn from(m: CliMode) -> Mode {
        match m {
            CliMode::Vanilla => Mode::Vanilla,
            CliMode::Iso => Mode::Iso,
            CliMode::Go => Mode::Go,
            CliMode::Ca => Mode::Ca,
            CliMode::Sa => Mode::Sa,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckLayer {
    Conv,
    Ikm,
    Ca,
    Sa,
    Dense,
    Uhdb,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountWhat {
    Params,
    Flops,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run config; writes checkpoint and CSV log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides model.mode from the config.
        #[arg(long, value_enum)]
        mode: Option<CliMode>,
    },
    /// Evaluate a checkpoint over aligned LR/HR directories.
    Eval {
        #[arg(long, required_unless_present = "bicubic")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        lr_dir: PathBuf,
        #[arg(long)]
        hr_dir: PathBuf,
        /// Must match the checkpoint's scale when given; sets the border
        /// crop for the bicubic baseline.
        #[arg(long)]
        scale: Option<usize>,
        /// Score plain bicubic upscaling instead of a model.
        #[arg(long, requires = "scale")]
        bicubic: bool,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upscale one PNG.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Finite-difference checks of the hand-written backward passes.
    Gradcheck {
        #[arg(long, value_enum)]
        layer: CheckLayer,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Parameter or multiply-accumulate counts for a config.
    Count {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        what: CountWhat,
        /// Output height for flops accounting.
        #[arg(long, default_value_t = 360)]
        height: usize,
        /// Output width for flops accounting.
        #[arg(long, default_value_t = 480)]
        width: usize,
    },
    /// Bicubic-degrade a directory of HR PNGs into LR PNGs.
    Degrade {
        #[arg(long)]
        hr_dir: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the per-layer kernel attention maps for one input image.
    AttnDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Layer name prefix filter (e.g. "head" or "block0"); all when omitted.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(e: &IkmError) -> u8 {
    match e {
        IkmError::Config(_) | IkmError::InvalidArgument(_) => 2,
        IkmError::Data(_) | IkmError::Image(_) | IkmError::Io(_) | IkmError::ShapeMismatch(_) => 3,
        IkmError::NonFinite(_) => 4,
    }
}

/// Thread-count knob, default 1 for determinism. All compute is currently
/// single-threaded; values above 1 are accepted and noted, not exploited.
fn thread_count() -> Result<usize, IkmError> {
    match std::env::var("IKM_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(IkmError::Config(format!(
                "IKM_THREADS must be a positive integer, got '{}'",
                v
            ))),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match thread_count() {
        Ok(n) => {
            if n > 1 {
                eprintln!("note: IKM_THREADS={n} requested; compute runs single-threaded");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode, IkmError> {
    match cmd {
        Command::Train {
            config,
            out,
            seed,
            mode,
        } => cmd_train(&config, &out, seed, mode.map(Mode::from)),
        Command::Eval {
            checkpoint,
            lr_dir,
            hr_dir,
            scale,
            bicubic,
            out,
        } => cmd_eval(
            checkpoint.as_deref(),
            &lr_dir,
            &hr_dir,
            scale,
            bicubic,
            out.as_deref(),
        ),
        Command::Infer {
            checkpoint,
            input,
            output,
        } => cmd_infer(&checkpoint, &input, &output),
        Command::Gradcheck {
            layer,
            trials,
            seed,
        } => cmd_gradcheck(layer, trials, seed),
        Command::Count {
            config,
            what,
            height,
            width,
        } => cmd_count(&config, what, height, width),
        Command::Degrade { hr_dir, scale, out } => cmd_degrade(&hr_dir, scale, &out),
        Command::AttnDump {
            checkpoint,
            input,
            layer,
            out,
        } => cmd_attn_dump(&checkpoint, &input, layer.as_deref(), &out),
    }
}

fn cmd_train(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    mode: Option<Mode>,
) -> Result<ExitCode, IkmError> {
    let text = std::fs::read_to_string(config)?;
    let mut run_cfg = parse_run_config(&text)?;
    if let Some(s) = seed {
        run_cfg.train.seed = s;
    }
    if let Some(m) = mode {
        run_cfg.model.mode = m;
    }
    let train_dir = run_cfg
        .data
        .train_dir
        .clone()
        .ok_or_else(|| IkmError::Config("missing required key 'data.train_dir'".into()))?;
    let paths = list_pngs(&train_dir)?;
    let mut images = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(load_png(p)?);
    }
    let stats = compute_stats(&images)?;
    let mut pairs = Vec::with_capacity(images.len());
    for (img, p) in images.iter().zip(&paths) {
        pairs.push(make_pair(img, run_cfg.model.scale, &p.display().to_string())?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run_cfg.train.seed);
    let mut model = Uhdn::init(&run_cfg.model, &mut rng)?;
    let rows = train(&mut model, &pairs, &stats, &run_cfg.train)?;
    std::fs::create_dir_all(out)?;
    save_checkpoint(&model, &stats, &out.join("model.ckpt"))?;
    std::fs::write(out.join("train_log.csv"), log_to_csv(&rows))?;
    std::fs::write(out.join("stats.txt"), stats.to_text())?;
    if let Some(last) = rows.last() {
        println!(
            "trained {} steps, final window MAE {:.6}",
            last.step, last.train_mae
        );
    } else {
        println!("trained 0 steps (checkpoint equals initialization)");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    checkpoint: Option<&Path>,
    lr_dir: &Path,
    hr_dir: &Path,
    scale: Option<usize>,
    bicubic: bool,
    out: Option<&Path>,
) -> Result<ExitCode, IkmError> {
    let lr_paths = list_pngs(lr_dir)?;
    let hr_paths = list_pngs(hr_dir)?;
    if lr_paths.len() != hr_paths.len() {
        return Err(IkmError::Data(format!(
            "misaligned lists: {} LR vs {} HR files",
            lr_paths.len(),
            hr_paths.len()
        )));
    }
    let mut items = Vec::with_capacity(lr_paths.len());
    for (lp, hp) in lr_paths.iter().zip(&hr_paths) {
        let name = lp
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        items.push((name, load_png(lp)?, load_png(hp)?));
    }
    let csv = if bicubic {
        let border = scale.unwrap();
        let start = std::time::Instant::now();
        let mut rows = Vec::with_capacity(items.len());
        for (name, lr, hr) in &items {
            let (_, hh, hw) = hr.dims3()?;
            let sr = ikm::data::bicubic_resize(lr, hh, hw)?;
            rows.push((
                name.clone(),
                ikm::metrics::psnr(&sr, hr, border)?,
                ikm::metrics::ssim(&sr, hr, border)?,
            ));
        }
        ikm::metrics::EvalReport::from_rows(rows, start.elapsed().as_millis()).to_csv(border)
    } else {
        let (model, stats) = load_checkpoint(checkpoint.unwrap())?;
        if let Some(s) = scale {
            if s != model.cfg.scale {
                return Err(IkmError::Config(format!(
                    "--scale {} does not match checkpoint scale {}",
                    s, model.cfg.scale
                )));
            }
        }
        evaluate(&model, &items, &stats)?.to_csv(model.cfg.scale)
    };
    match out {
        Some(p) => std::fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(checkpoint: &Path, input: &Path, output: &Path) -> Result<ExitCode, IkmError> {
    let (model, stats) = load_checkpoint(checkpoint)?;
    let lr = load_png(input)?;
    let sr = infer_image(&model, &lr, &stats)?;
    save_png(&sr, output)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(layer: CheckLayer, trials: usize, seed: u64) -> Result<ExitCode, IkmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = match layer {
        CheckLayer::Conv => 1e-6,
        _ => 1e-4,
    };
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let err = gradcheck_trial(layer, &mut rng)?;
        println!("trial {trial}: max relative error {err:.3e}");
        worst = worst.max(err);
    }
    if worst > threshold {
        eprintln!("error: gradient check failed ({worst:.3e} > {threshold:.0e})");
        return Ok(ExitCode::from(4));
    }
    println!("ok (threshold {threshold:.0e})");
    Ok(ExitCode::SUCCESS)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn gradcheck_trial(layer: CheckLayer, rng: &mut ChaCha8Rng) -> Result<f64, IkmError> {
    match layer {
        CheckLayer::Conv => {
            let x = rand_tensor(rng, &[2, 3, 6, 6]);
            let w = rand_tensor(rng, &[2, 3, 3, 3]);
            let bias = rand_tensor(rng, &[2]);
            let p = ConvParams::with_meta(w.clone(), bias.clone(), (1, 1), (1, 1), (1, 1))?;
            let y = conv2d_forward(&x, &p)?;
            let pack = conv2d_backward(&x, &p, &y.scale(2.0))?;
            finite_diff_check(
                &mut |wt: &Tensor<f64>| {
                    let pp = ConvParams::with_meta(
                        wt.clone(),
                        bias.clone(),
                        (1, 1),
                        (1, 1),
                        (1, 1),
                    )
                    .unwrap();
                    let yy = conv2d_forward(&x, &pp).unwrap();
                    yy.data().iter().map(|v| v * v).sum()
                },
                &w,
                &pack.grad_weights,
                1e-5,
            )
        }
        CheckLayer::Ikm => {
            let x = rand_tensor(rng, &[2, 2, 8, 8]);
            let w = rand_tensor(rng, &[2, 2, 3, 3]);
            let bias = rand_tensor(rng, &[2]);
            let cfg = CagConfig::new(0.0, (3, 3), (1, 1));
            let p = ConvParams::with_meta(w.clone(), bias.clone(), (1, 1), (1, 1), (1, 1))?;
            let (y, cache) = ikm_conv_forward(&x, &p, &cfg)?;
            let pack = ikm_conv_backward(&cache, &p, &y.scale(2.0))?;
            finite_diff_check(
                &mut |wt: &Tensor<f64>| {
                    let pp = ConvParams::with_meta(
                        wt.clone(),
                        bias.clone(),
                        (1, 1),
                        (1, 1),
                        (1, 1),
                    )
                    .unwrap();
                    let (yy, _) = ikm_conv_forward(&x, &pp, &cfg).unwrap();
                    yy.data().iter().map(|v| v * v).sum()
                },
                &w,
                &pack.grad_weights,
                1e-5,
            )
        }
        CheckLayer::Ca => {
            use ikm::attention::{channel_attention, channel_attention_backward, CaParams};
            let y = rand_tensor(rng, &[2, 4, 4, 4]);
            let mut p = CaParams::zeros(4, 2)?;
            for t in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2] {
                for v in t.data_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
            let (out, cache) = channel_attention(&y, &p)?;
            let (_, grads) = channel_attention_backward(&cache, &p, &out.scale(2.0))?;
            finite_diff_check(
                &mut |t: &Tensor<f64>| {
                    let mut pp = p.clone();
                    pp.w1 = t.clone();
                    let (o, _) = channel_attention(&y, &pp).unwrap();
                    o.data().iter().map(|v| v * v).sum()
                },
                &p.w1.clone(),
                &grads.w1,
                1e-5,
            )
        }
        CheckLayer::Sa => {
            use ikm::attention::{spatial_attention, spatial_attention_backward, SaParams};
            let y = rand_tensor(rng, &[2, 3, 5, 5]);
            let mut p = SaParams::zeros(3)?;
            for v in p.conv.weights.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
            let (out, cache) = spatial_attention(&y, &p)?;
            let (_, grads) = spatial_attention_backward(&cache, &p, &out.scale(2.0))?;
            finite_diff_check(
                &mut |t: &Tensor<f64>| {
                    let mut pp = p.clone();
                    pp.conv.weights = t.clone();
                    let (o, _) = spatial_attention(&y, &pp).unwrap();
                    o.data().iter().map(|v| v * v).sum()
                },
                &p.conv.weights.clone(),
                &grads.weights,
                1e-5,
            )
        }
        CheckLayer::Dense => {
            let unit = rand_dense_unit(rng)?;
            let x = rand_tensor(rng, &[2, 4, 6, 6]);
            let (y, cache) = unit.forward(&x, Mode::Iso, "u", &mut None)?;
            let (_, grads) = unit.backward(&cache, &y.scale(2.0))?;
            finite_diff_check(
                &mut |t: &Tensor<f64>| {
                    let mut u2 = unit.clone();
                    u2.composites[0].conv.weights = t.clone();
                    let (yy, _) = u2.forward(&x, Mode::Iso, "u", &mut None).unwrap();
                    yy.data().iter().map(|v| v * v).sum()
                },
                &unit.composites[0].conv.weights.clone(),
                &grads.composites[0].weights,
                1e-5,
            )
        }
        CheckLayer::Uhdb => {
            let block = Uhdb {
                units: vec![
                    rand_dense_unit(rng)?,
                    rand_dense_unit(rng)?,
                    rand_dense_unit(rng)?,
                    rand_dense_unit(rng)?,
                ],
            };
            let x = rand_tensor(rng, &[1, 4, 6, 6]);
            let (y, cache) = block.forward(&x, Mode::Vanilla, "b", &mut None)?;
            let (_, grads) = block.backward(&cache, &y.scale(2.0))?;
            finite_diff_check(
                &mut |t: &Tensor<f64>| {
                    let mut b2 = block.clone();
                    b2.units[1].transition.weights = t.clone();
                    let (yy, _) = b2.forward(&x, Mode::Vanilla, "b", &mut None).unwrap();
                    yy.data().iter().map(|v| v * v).sum()
                },
                &block.units[1].transition.weights.clone(),
                &grads.units[1].transition_weights,
                1e-5,
            )
        }
    }
}

fn rand_dense_unit(rng: &mut ChaCha8Rng) -> Result<DenseUnit<f64>, IkmError> {
    let mut unit = DenseUnit::new(2, 4, 3, 4, 1, Mode::Vanilla, 0.0)?;
    for comp in &mut unit.composites {
        for v in comp.conv.weights.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    for v in unit.transition.weights.data_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    Ok(unit)
}

fn cmd_count(
    config: &Path,
    what: CountWhat,
    height: usize,
    width: usize,
) -> Result<ExitCode, IkmError> {
    let text = std::fs::read_to_string(config)?;
    let run_cfg = parse_run_config(&text)?;
    match what {
        CountWhat::Params => {
            let n = count_params(&run_cfg.model)?;
            println!("{} ({:.1}K)", n, n as f64 / 1000.0);
        }
        CountWhat::Flops => {
            let n = count_flops(&run_cfg.model, height, width)?;
            println!("{} ({:.1}G MACs at {}x{})", n, n as f64 / 1e9, width, height);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_degrade(hr_dir: &Path, scale: usize, out: &Path) -> Result<ExitCode, IkmError> {
    if scale == 0 {
        return Err(IkmError::Config("scale must be positive".into()));
    }
    let paths = list_pngs(hr_dir)?;
    // load everything first: no partial outputs on bad inputs
    let mut lrs = Vec::with_capacity(paths.len());
    for p in &paths {
        let hr = load_png(p)?;
        let pair = make_pair(&hr, scale, &p.display().to_string())?;
        lrs.push(pair.lr);
    }
    std::fs::create_dir_all(out)?;
    for (p, lr) in paths.iter().zip(&lrs) {
        let name = p.file_name().unwrap();
        save_png(lr, &out.join(name))?;
    }
    println!("degraded {} images to 1/{} scale", paths.len(), scale);
    Ok(ExitCode::SUCCESS)
}

fn cmd_attn_dump(
    checkpoint: &Path,
    input: &Path,
    layer: Option<&str>,
    out: &Path,
) -> Result<ExitCode, IkmError> {
    let (model, stats) = load_checkpoint(checkpoint)?;
    if !matches!(model.cfg.mode, Mode::Iso | Mode::Go) {
        return Err(IkmError::Config(format!(
            "checkpoint mode '{}' has no kernel attention",
            model.cfg.mode.as_str()
        )));
    }
    let img = load_png(input)?;
    let (c, h, w) = img.dims3()?;
    let x = ikm::data::normalize(&img, &stats)?.reshape(&[1, c, h, w])?;
    let mut maps = Vec::new();
    let mut sink = Some(&mut maps);
    model.forward(&x, &mut sink)?;
    let selected: Vec<_> = maps
        .iter()
        .filter(|(name, _)| layer.map(|l| name.starts_with(l)).unwrap_or(true))
        .collect();
    if selected.is_empty() {
        return Err(IkmError::InvalidArgument(format!(
            "no layer matches '{}'",
            layer.unwrap_or("")
        )));
    }
    std::fs::create_dir_all(out)?;
    let written = selected.len();
    for (name, attn) in selected {
        let (_, c_in, kh, kw) = attn.values.dims4()?;
        // tile the per-channel KxK grids horizontally; gray value = a - 1
        let mut tile = Tensor::<f32>::zeros(&[3, kh, c_in * kw]);
        for ci in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    let v = attn.values.at4(0, ci, ky, kx) - 1.0;
                    for ch in 0..3 {
                        *tile.at3_mut(ch, ky, ci * kw + kx) = v;
                    }
                }
            }
        }
        save_png(&tile, &out.join(format!("{}.png", name.replace('.', "_"))))?;
    }
    println!("wrote {} attention maps", written);
    Ok(ExitCode::SUCCESS)
}
