//! U-hourglass dense network: dense units closed by 1x1 transitions,
//! U-style residual blocks with symmetric hourglass depths, and the full
//! head / blocks / sub-pixel upscaler / tail model with hand-written
//! backward passes and parameter/MAC accounting.

use crate::attention::{
    channel_attention, channel_attention_backward, spatial_attention, spatial_attention_backward,
    CaGrads, CaParams, SaCache, SaGrads, SaParams,
};
use crate::attention::CaCache;
use crate::conv::{conv2d_backward, conv2d_forward, ConvParams};
use crate::error::{IkmError, Result};
use crate::ikm::{
    go_conv_backward, go_conv_forward, ikm_conv_backward, ikm_conv_forward, CagConfig, GoCache,
    IkmCache, KernelAttention,
};
use crate::ops::relu;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// How every attention-bearing convolution in the model executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Plain shared-kernel convolution.
    Vanilla,
    /// IKM with image-specific optimization (per-image kernel banks).
    Iso,
    /// IKM with the batch-averaged attention baseline.
    Go,
    /// Channel attention after each modulated convolution site.
    Ca,
    /// Spatial attention after each modulated convolution site.
    Sa,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "vanilla" => Ok(Mode::Vanilla),
            "iso" | "ikm" => Ok(Mode::Iso),
            "go" => Ok(Mode::Go),
            "ca" => Ok(Mode::Ca),
            "sa" => Ok(Mode::Sa),
            _ => Err(IkmError::Config(format!(
                "unknown mode '{}', expected vanilla|iso|go|ca|sa",
                s
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Iso => "iso",
            Mode::Go => "go",
            Mode::Ca => "ca",
            Mode::Sa => "sa",
        }
    }
}

pub const CA_REDUCTION: usize = 16;
pub const SA_KERNEL: usize = 7;

/// Full architecture description.
#[derive(Debug, Clone, PartialEq)]
pub struct UhdnConfig {
    /// Number of U-HDBs in the trunk.
    pub n_blocks: usize,
    /// Per-unit depths inside each block; length M (even), symmetric, and
    /// non-increasing toward the middle.
    pub depths: Vec<usize>,
    pub growth: usize,
    pub channels: usize,
    pub scale: usize,
    pub mode: Mode,
    /// PIA hard threshold t.
    pub threshold: f64,
    /// Dilation of the composite 3x3 convolutions.
    pub dilation: usize,
}

impl UhdnConfig {
    /// The paper's lightweight setting: N=4, M=6 with depths [6,5,4,4,5,6],
    /// g=12, C=64, t=0.
    pub fn lightweight(scale: usize, mode: Mode) -> Self {
        UhdnConfig {
            n_blocks: 4,
            depths: vec![6, 5, 4, 4, 5, 6],
            growth: 12,
            channels: 64,
            scale,
            mode,
            threshold: 0.0,
            dilation: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.depths.len();
        if m == 0 || m % 2 != 0 {
            return Err(IkmError::Config(format!(
                "unit count M must be even and positive, got {}",
                m
            )));
        }
        for i in 0..m {
            if self.depths[i] == 0 {
                return Err(IkmError::Config("unit depths must be >= 1".into()));
            }
            if self.depths[i] != self.depths[m - 1 - i] {
                return Err(IkmError::Config(format!(
                    "depths must be symmetric: depths[{}]={} vs depths[{}]={}",
                    i,
                    self.depths[i],
                    m - 1 - i,
                    self.depths[m - 1 - i]
                )));
            }
        }
        for i in 0..m / 2 {
            if i + 1 < m / 2 && self.depths[i] < self.depths[i + 1] {
                return Err(IkmError::Config(
                    "depths must be non-increasing toward the middle (hourglass)".into(),
                ));
            }
        }
        if self.n_blocks == 0 || self.growth == 0 || self.channels == 0 {
            return Err(IkmError::Config(
                "n_blocks, growth and channels must be positive".into(),
            ));
        }
        if !matches!(self.scale, 2 | 3 | 4) {
            return Err(IkmError::Config(format!(
                "unsupported scale {}, expected 2, 3 or 4",
                self.scale
            )));
        }
        if self.dilation == 0 {
            return Err(IkmError::Config("dilation must be positive".into()));
        }
        Ok(())
    }

    /// Per-stage shuffle factors of the upscaling module: x4 runs as two x2
    /// stages, x2 and x3 as a single stage.
    pub fn upscale_stages(&self) -> Vec<usize> {
        match self.scale {
            4 => vec![2, 2],
            s => vec![s],
        }
    }

    /// Canonical single-line text form embedded in checkpoints.
    pub fn to_canonical_text(&self) -> String {
        let depths: Vec<String> = self.depths.iter().map(|d| d.to_string()).collect();
        format!(
            "n={} depths={} growth={} channels={} scale={} mode={} threshold={} dilation={}",
            self.n_blocks,
            depths.join(","),
            self.growth,
            self.channels,
            self.scale,
            self.mode.as_str(),
            self.threshold,
            self.dilation
        )
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for tok in text.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| IkmError::Config(format!("bad config token '{}'", tok)))?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| -> Result<String> {
            map.get(k)
                .cloned()
                .ok_or_else(|| IkmError::Config(format!("missing config key '{}'", k)))
        };
        let cfg = UhdnConfig {
            n_blocks: get("n")?.parse().map_err(|_| IkmError::Config("bad n".into()))?,
            depths: get("depths")?
                .split(',')
                .map(|d| d.parse().map_err(|_| IkmError::Config("bad depths".into())))
                .collect::<Result<Vec<usize>>>()?,
            growth: get("growth")?
                .parse()
                .map_err(|_| IkmError::Config("bad growth".into()))?,
            channels: get("channels")?
                .parse()
                .map_err(|_| IkmError::Config("bad channels".into()))?,
            scale: get("scale")?
                .parse()
                .map_err(|_| IkmError::Config("bad scale".into()))?,
            mode: Mode::parse(&get("mode")?)?,
            threshold: get("threshold")?
                .parse()
                .map_err(|_| IkmError::Config("bad threshold".into()))?,
            dilation: get("dilation")?
                .parse()
                .map_err(|_| IkmError::Config("bad dilation".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A convolution plus its attention attachment. The attention variant is
/// fixed by the model mode at construction; parameter inventory is identical
/// for vanilla/iso/go.
#[derive(Debug, Clone)]
pub struct ModConv<T: Scalar> {
    pub conv: ConvParams<T>,
    pub ca: Option<CaParams<T>>,
    pub sa: Option<SaParams<T>>,
    pub cag: CagConfig,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub enum ConvPathCache<T: Scalar> {
    Vanilla(Tensor<T>),
    Iso(IkmCache<T>),
    Go(GoCache<T>),
}

#[derive(Debug, Clone)]
pub struct ModConvCache<T: Scalar> {
    path: ConvPathCache<T>,
    ca: Option<CaCache<T>>,
    sa: Option<SaCache<T>>,
    /// Pre-activation output, kept when relu is applied.
    pre_relu: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct ModConvGrads<T: Scalar> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
    pub ca: Option<CaGrads<T>>,
    pub sa: Option<SaGrads<T>>,
}

/// Sink for attention maps captured during a forward pass.
pub type AttnSink<'a, T> = &'a mut Vec<(String, KernelAttention<T>)>;

impl<T: Scalar> ModConv<T> {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        relu: bool,
        mode: Mode,
        threshold: f64,
    ) -> Result<Self> {
        let pad = dilation * (kernel - 1) / 2;
        let conv = ConvParams::with_meta(
            Tensor::zeros(&[c_out, c_in, kernel, kernel]),
            Tensor::zeros(&[c_out]),
            (1, 1),
            (dilation, dilation),
            (pad, pad),
        )?;
        let ca = if mode == Mode::Ca {
            Some(CaParams::zeros(c_out, CA_REDUCTION.min(c_out))?)
        } else {
            None
        };
        let sa = if mode == Mode::Sa {
            Some(SaParams::zeros(SA_KERNEL)?)
        } else {
            None
        };
        Ok(ModConv {
            conv,
            ca,
            sa,
            cag: CagConfig::new(threshold, (kernel, kernel), (dilation, dilation)),
            relu,
        })
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        name: &str,
        sink: &mut Option<AttnSink<T>>,
    ) -> Result<(Tensor<T>, ModConvCache<T>)> {
        let (mut y, path) = match mode {
            Mode::Iso => {
                let (y, cache) = ikm_conv_forward(x, &self.conv, &self.cag)?;
                if let Some(s) = sink.as_deref_mut() {
                    s.push((name.to_string(), cache.attention.clone()));
                }
                (y, ConvPathCache::Iso(cache))
            }
            Mode::Go => {
                let (y, cache) = go_conv_forward(x, &self.conv, &self.cag)?;
                (y, ConvPathCache::Go(cache))
            }
            Mode::Vanilla | Mode::Ca | Mode::Sa => {
                let y = conv2d_forward(x, &self.conv)?;
                (y, ConvPathCache::Vanilla(x.clone()))
            }
        };
        let mut ca_cache = None;
        if let Some(ca) = &self.ca {
            let (out, cache) = channel_attention(&y, ca)?;
            y = out;
            ca_cache = Some(cache);
        }
        let mut sa_cache = None;
        if let Some(sa) = &self.sa {
            let (out, cache) = spatial_attention(&y, sa)?;
            y = out;
            sa_cache = Some(cache);
        }
        let pre_relu = if self.relu {
            let pre = y.clone();
            y = relu(&y);
            Some(pre)
        } else {
            None
        };
        Ok((
            y,
            ModConvCache {
                path,
                ca: ca_cache,
                sa: sa_cache,
                pre_relu,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &ModConvCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, ModConvGrads<T>)> {
        let mut g = if let Some(pre) = &cache.pre_relu {
            grad_out.zip_map(pre, |gv, pv| if pv > T::zero() { gv } else { T::zero() })?
        } else {
            grad_out.clone()
        };
        let mut sa_grads = None;
        if let Some(sa) = &self.sa {
            let (gy, grads) = spatial_attention_backward(cache.sa.as_ref().unwrap(), sa, &g)?;
            g = gy;
            sa_grads = Some(grads);
        }
        let mut ca_grads = None;
        if let Some(ca) = &self.ca {
            let (gy, grads) = channel_attention_backward(cache.ca.as_ref().unwrap(), ca, &g)?;
            g = gy;
            ca_grads = Some(grads);
        }
        let pack = match &cache.path {
            ConvPathCache::Vanilla(x) => conv2d_backward(x, &self.conv, &g)?,
            ConvPathCache::Iso(c) => ikm_conv_backward(c, &self.conv, &g)?,
            ConvPathCache::Go(c) => go_conv_backward(c, &self.conv, &g)?,
        };
        Ok((
            pack.grad_input,
            ModConvGrads {
                weights: pack.grad_weights,
                bias: pack.grad_bias,
                ca: ca_grads,
                sa: sa_grads,
            },
        ))
    }

    fn zero_grads(&self) -> ModConvGrads<T> {
        ModConvGrads {
            weights: Tensor::zeros(self.conv.weights.shape()),
            bias: Tensor::zeros(self.conv.bias.shape()),
            ca: self.ca.as_ref().map(|ca| CaGrads {
                w1: Tensor::zeros(ca.w1.shape()),
                b1: Tensor::zeros(ca.b1.shape()),
                w2: Tensor::zeros(ca.w2.shape()),
                b2: Tensor::zeros(ca.b2.shape()),
            }),
            sa: self.sa.as_ref().map(|sa| SaGrads {
                weights: Tensor::zeros(sa.conv.weights.shape()),
                bias: Tensor::zeros(sa.conv.bias.shape()),
            }),
        }
    }
}

/// Chain of 3x3 conv+ReLU composite layers over concatenated inputs, closed
/// by a 1x1 transition convolution without ReLU.
#[derive(Debug, Clone)]
pub struct DenseUnit<T: Scalar> {
    pub composites: Vec<ModConv<T>>,
    pub transition: ConvParams<T>,
    in_channels: usize,
    growth: usize,
}

#[derive(Debug, Clone)]
pub struct DenseUnitCache<T: Scalar> {
    composite_caches: Vec<ModConvCache<T>>,
    /// Concatenation of the input and all composite outputs (transition input).
    full_cat: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseUnitGrads<T: Scalar> {
    pub composites: Vec<ModConvGrads<T>>,
    pub transition_weights: Tensor<T>,
    pub transition_bias: Tensor<T>,
}

impl<T: Scalar> DenseUnit<T> {
    pub fn new(
        depth: usize,
        in_channels: usize,
        growth: usize,
        out_channels: usize,
        dilation: usize,
        mode: Mode,
        threshold: f64,
    ) -> Result<Self> {
        let mut composites = Vec::with_capacity(depth);
        for l in 0..depth {
            composites.push(ModConv::new(
                in_channels + l * growth,
                growth,
                3,
                dilation,
                true,
                mode,
                threshold,
            )?);
        }
        let trans_in = in_channels + depth * growth;
        let transition = ConvParams::with_meta(
            Tensor::zeros(&[out_channels, trans_in, 1, 1]),
            Tensor::zeros(&[out_channels]),
            (1, 1),
            (1, 1),
            (0, 0),
        )?;
        Ok(DenseUnit {
            composites,
            transition,
            in_channels,
            growth,
        })
    }

    fn feature_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.in_channels];
        sizes.extend(std::iter::repeat(self.growth).take(self.composites.len()));
        sizes
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        name: &str,
        sink: &mut Option<AttnSink<T>>,
    ) -> Result<(Tensor<T>, DenseUnitCache<T>)> {
        let mut feats: Vec<Tensor<T>> = vec![x.clone()];
        let mut caches = Vec::with_capacity(self.composites.len());
        for (l, comp) in self.composites.iter().enumerate() {
            let refs: Vec<&Tensor<T>> = feats.iter().collect();
            let cat = Tensor::concat_channels(&refs)?;
            let (y, cache) = comp.forward(&cat, mode, &format!("{name}.comp{l}"), sink)?;
            feats.push(y);
            caches.push(cache);
        }
        let refs: Vec<&Tensor<T>> = feats.iter().collect();
        let full_cat = Tensor::concat_channels(&refs)?;
        let out = conv2d_forward(&full_cat, &self.transition)?;
        Ok((
            out,
            DenseUnitCache {
                composite_caches: caches,
                full_cat,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &DenseUnitCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, DenseUnitGrads<T>)> {
        let pack = conv2d_backward(&cache.full_cat, &self.transition, grad_out)?;
        let sizes = self.feature_sizes();
        let mut g_feats = pack.grad_input.split_channels(&sizes)?;
        let mut comp_grads: Vec<Option<ModConvGrads<T>>> =
            (0..self.composites.len()).map(|_| None).collect();
        for l in (0..self.composites.len()).rev() {
            let g_out = g_feats[l + 1].clone();
            let (g_in, grads) = self.composites[l].backward(&cache.composite_caches[l], &g_out)?;
            let parts = g_in.split_channels(&sizes[..=l])?;
            for (i, part) in parts.into_iter().enumerate() {
                g_feats[i].add_assign(&part)?;
            }
            comp_grads[l] = Some(grads);
        }
        Ok((
            g_feats[0].clone(),
            DenseUnitGrads {
                composites: comp_grads.into_iter().map(Option::unwrap).collect(),
                transition_weights: pack.grad_weights,
                transition_bias: pack.grad_bias,
            },
        ))
    }

    fn zero_grads(&self) -> DenseUnitGrads<T> {
        DenseUnitGrads {
            composites: self.composites.iter().map(|c| c.zero_grads()).collect(),
            transition_weights: Tensor::zeros(self.transition.weights.shape()),
            transition_bias: Tensor::zeros(self.transition.bias.shape()),
        }
    }
}

/// M dense units under U-style residual learning: paired skip additions
/// around an hourglass of depths, inside one residual branch.
#[derive(Debug, Clone)]
pub struct Uhdb<T: Scalar> {
    pub units: Vec<DenseUnit<T>>,
}

#[derive(Debug, Clone)]
pub struct UhdbCache<T: Scalar> {
    forward_chain: Vec<DenseUnitCache<T>>,
    middle: DenseUnitCache<T>,
    /// Return-chain caches in application order (k = M/2 down to 2).
    return_chain: Vec<DenseUnitCache<T>>,
}

#[derive(Debug, Clone)]
pub struct UhdbGrads<T: Scalar> {
    pub units: Vec<DenseUnitGrads<T>>,
}

impl<T: Scalar> Uhdb<T> {
    pub fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        name: &str,
        sink: &mut Option<AttnSink<T>>,
    ) -> Result<(Tensor<T>, UhdbCache<T>)> {
        let m = self.units.len();
        let half = m / 2;
        let mut a = vec![x.clone()];
        let mut forward_chain = Vec::with_capacity(half);
        for k in 1..=half {
            let (y, cache) = self.units[k - 1].forward(
                a.last().unwrap(),
                mode,
                &format!("{name}.unit{}", k - 1),
                sink,
            )?;
            a.push(y);
            forward_chain.push(cache);
        }
        let (mut r, middle) =
            self.units[half].forward(&a[half], mode, &format!("{name}.unit{half}"), sink)?;
        let mut return_chain = Vec::with_capacity(half.saturating_sub(1));
        for k in (2..=half).rev() {
            let s = a[k - 1].add(&r)?;
            let idx = m - k + 1;
            let (y, cache) =
                self.units[idx].forward(&s, mode, &format!("{name}.unit{idx}"), sink)?;
            r = y;
            return_chain.push(cache);
        }
        let y = x.add(&r)?;
        Ok((
            y,
            UhdbCache {
                forward_chain,
                middle,
                return_chain,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &UhdbCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, UhdbGrads<T>)> {
        let m = self.units.len();
        let half = m / 2;
        let mut unit_grads: Vec<Option<DenseUnitGrads<T>>> = (0..m).map(|_| None).collect();
        let mut g_a: Vec<Tensor<T>> = Vec::new(); // accumulators for a_0..a_half
        let mut gx = grad_out.clone();
        let mut g_r = grad_out.clone();
        // Return chain applied for k = half..2; undo in ascending k.
        for k in 2..=half {
            let idx = m - k + 1;
            let cache_idx = half - k; // application order was k = half..2
            let (g_s, grads) =
                self.units[idx].backward(&cache.return_chain[cache_idx], &g_r)?;
            unit_grads[idx] = Some(grads);
            // s = a_{k-1} + r_k: the gradient splits to both.
            while g_a.len() < k {
                g_a.push(Tensor::zeros(g_s.shape()));
            }
            g_a[k - 1].add_assign(&g_s)?;
            g_r = g_s;
        }
        let (g_ah, grads_mid) = self.units[half].backward(&cache.middle, &g_r)?;
        unit_grads[half] = Some(grads_mid);
        while g_a.len() <= half {
            g_a.push(Tensor::zeros(g_ah.shape()));
        }
        g_a[half].add_assign(&g_ah)?;
        for k in (1..=half).rev() {
            let g_out = g_a[k].clone();
            let (g_prev, grads) =
                self.units[k - 1].backward(&cache.forward_chain[k - 1], &g_out)?;
            unit_grads[k - 1] = Some(grads);
            g_a[k - 1].add_assign(&g_prev)?;
        }
        gx.add_assign(&g_a[0])?;
        Ok((
            gx,
            UhdbGrads {
                units: unit_grads.into_iter().map(Option::unwrap).collect(),
            },
        ))
    }

    fn zero_grads(&self) -> UhdbGrads<T> {
        UhdbGrads {
            units: self.units.iter().map(|u| u.zero_grads()).collect(),
        }
    }
}

/// The full backbone: head conv, N U-HDBs with a global residual from the
/// head output, sub-pixel upscaling stages, tail conv.
#[derive(Debug, Clone)]
pub struct Uhdn<T: Scalar> {
    pub cfg: UhdnConfig,
    pub head: ModConv<T>,
    pub blocks: Vec<Uhdb<T>>,
    pub upscale: Vec<ConvParams<T>>,
    pub tail: ConvParams<T>,
}

#[derive(Debug, Clone)]
pub struct UhdnCache<T: Scalar> {
    head: ModConvCache<T>,
    blocks: Vec<UhdbCache<T>>,
    upscale_inputs: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct UhdnGrads<T: Scalar> {
    pub head: ModConvGrads<T>,
    pub blocks: Vec<UhdbGrads<T>>,
    pub upscale: Vec<(Tensor<T>, Tensor<T>)>,
    pub tail_weights: Tensor<T>,
    pub tail_bias: Tensor<T>,
}

impl<T: Scalar> Uhdn<T> {
    /// Builds the model with all parameters zero.
    pub fn zeros(cfg: &UhdnConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let head = ModConv::new(3, c, 3, 1, false, cfg.mode, cfg.threshold)?;
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for _ in 0..cfg.n_blocks {
            let units = cfg
                .depths
                .iter()
                .map(|&d| DenseUnit::new(d, c, cfg.growth, c, cfg.dilation, cfg.mode, cfg.threshold))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(Uhdb { units });
        }
        let mut upscale = Vec::new();
        for f in cfg.upscale_stages() {
            upscale.push(ConvParams::with_meta(
                Tensor::zeros(&[c * f * f, c, 1, 1]),
                Tensor::zeros(&[c * f * f]),
                (1, 1),
                (1, 1),
                (0, 0),
            )?);
        }
        let tail = ConvParams::with_meta(
            Tensor::zeros(&[3, c, 3, 3]),
            Tensor::zeros(&[3]),
            (1, 1),
            (1, 1),
            (1, 1),
        )?;
        Ok(Uhdn {
            cfg: cfg.clone(),
            head,
            blocks,
            upscale,
            tail,
        })
    }

    /// He-normal initialization of conv weights, zero biases. Kernel-
    /// modulated convolutions carry an extra mean attention gain of ~1.5
    /// (attention lies in (1,2)); their init is shrunk accordingly so the
    /// effective forward gain matches the unmodulated network.
    pub fn init(cfg: &UhdnConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let modulated = matches!(cfg.mode, Mode::Iso | Mode::Go);
        let mut model = Self::zeros(cfg)?;
        for (name, t) in model.named_params_mut() {
            if name.ends_with(".w") || name.ends_with("w1") || name.ends_with("w2") {
                let shape = t.shape().to_vec();
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let mut std = (2.0 / fan_in as f64).sqrt();
                if modulated && (name == "head.w" || name.contains(".comp")) {
                    std /= 1.5;
                }
                for v in t.data_mut() {
                    *v = T::from_f64(normal_sample(rng) * std);
                }
            }
        }
        Ok(model)
    }

    /// Forward over a mean-subtracted RGB batch [B,3,h,w] -> [B,3,sh,sw].
    pub fn forward(
        &self,
        x: &Tensor<T>,
        sink: &mut Option<AttnSink<T>>,
    ) -> Result<(Tensor<T>, UhdnCache<T>)> {
        let mode = self.cfg.mode;
        let (h0, head_cache) = self.head.forward(x, mode, "head", sink)?;
        let mut t = h0.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for (bi, block) in self.blocks.iter().enumerate() {
            let (y, cache) = block.forward(&t, mode, &format!("block{bi}"), sink)?;
            t = y;
            block_caches.push(cache);
        }
        t.add_assign(&h0)?;
        let mut upscale_inputs = Vec::with_capacity(self.upscale.len());
        for (stage, f) in self.upscale.iter().zip(self.cfg.upscale_stages()) {
            upscale_inputs.push(t.clone());
            let y = conv2d_forward(&t, stage)?;
            t = crate::ops::pixel_shuffle(&y, f)?;
        }
        upscale_inputs.push(t.clone()); // tail input
        let y = conv2d_forward(&t, &self.tail)?;
        Ok((
            y,
            UhdnCache {
                head: head_cache,
                blocks: block_caches,
                upscale_inputs,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &UhdnCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, UhdnGrads<T>)> {
        let tail_in = cache.upscale_inputs.last().unwrap();
        let pack = conv2d_backward(tail_in, &self.tail, grad_out)?;
        let mut g = pack.grad_input;
        let tail_weights = pack.grad_weights;
        let tail_bias = pack.grad_bias;
        let stages = self.cfg.upscale_stages();
        let mut upscale_grads: Vec<Option<(Tensor<T>, Tensor<T>)>> =
            (0..self.upscale.len()).map(|_| None).collect();
        for i in (0..self.upscale.len()).rev() {
            let g_shuffled = crate::ops::pixel_unshuffle(&g, stages[i])?;
            let pack = conv2d_backward(&cache.upscale_inputs[i], &self.upscale[i], &g_shuffled)?;
            upscale_grads[i] = Some((pack.grad_weights, pack.grad_bias));
            g = pack.grad_input;
        }
        // Global residual: gradient reaches both the last block and the head.
        let mut g_head = g.clone();
        let mut block_grads: Vec<Option<UhdbGrads<T>>> =
            (0..self.blocks.len()).map(|_| None).collect();
        for i in (0..self.blocks.len()).rev() {
            let (gi, grads) = self.blocks[i].backward(&cache.blocks[i], &g)?;
            block_grads[i] = Some(grads);
            g = gi;
        }
        g_head.add_assign(&g)?;
        let (gx, head_grads) = self.head.backward(&cache.head, &g_head)?;
        Ok((
            gx,
            UhdnGrads {
                head: head_grads,
                blocks: block_grads.into_iter().map(Option::unwrap).collect(),
                upscale: upscale_grads.into_iter().map(Option::unwrap).collect(),
                tail_weights,
                tail_bias,
            },
        ))
    }

    pub fn zero_grads(&self) -> UhdnGrads<T> {
        UhdnGrads {
            head: self.head.zero_grads(),
            blocks: self.blocks.iter().map(|b| b.zero_grads()).collect(),
            upscale: self
                .upscale
                .iter()
                .map(|u| {
                    (
                        Tensor::zeros(u.weights.shape()),
                        Tensor::zeros(u.bias.shape()),
                    )
                })
                .collect(),
            tail_weights: Tensor::zeros(self.tail.weights.shape()),
            tail_bias: Tensor::zeros(self.tail.bias.shape()),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        collect_mod_conv(&mut out, "head", &self.head);
        for (bi, block) in self.blocks.iter().enumerate() {
            for (ui, unit) in block.units.iter().enumerate() {
                let prefix = format!("block{bi}.unit{ui}");
                for (ci, comp) in unit.composites.iter().enumerate() {
                    collect_mod_conv(&mut out, &format!("{prefix}.comp{ci}"), comp);
                }
                out.push((format!("{prefix}.transition.w"), &unit.transition.weights));
                out.push((format!("{prefix}.transition.b"), &unit.transition.bias));
            }
        }
        for (i, stage) in self.upscale.iter().enumerate() {
            out.push((format!("up{i}.w"), &stage.weights));
            out.push((format!("up{i}.b"), &stage.bias));
        }
        out.push(("tail.w".into(), &self.tail.weights));
        out.push(("tail.b".into(), &self.tail.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        collect_mod_conv_mut(&mut out, "head", &mut self.head);
        for (bi, block) in self.blocks.iter_mut().enumerate() {
            for (ui, unit) in block.units.iter_mut().enumerate() {
                let prefix = format!("block{bi}.unit{ui}");
                for (ci, comp) in unit.composites.iter_mut().enumerate() {
                    collect_mod_conv_mut(&mut out, &format!("{prefix}.comp{ci}"), comp);
                }
                out.push((
                    format!("{prefix}.transition.w"),
                    &mut unit.transition.weights,
                ));
                out.push((format!("{prefix}.transition.b"), &mut unit.transition.bias));
            }
        }
        for (i, stage) in self.upscale.iter_mut().enumerate() {
            out.push((format!("up{i}.w"), &mut stage.weights));
            out.push((format!("up{i}.b"), &mut stage.bias));
        }
        out.push(("tail.w".into(), &mut self.tail.weights));
        out.push(("tail.b".into(), &mut self.tail.bias));
        out
    }

    /// Total trainable scalar count.
    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

impl<T: Scalar> UhdnGrads<T> {
    /// Flat view in the same order as `Uhdn::named_params`.
    pub fn flat(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        flat_mod_conv_grads(&mut out, &self.head);
        for block in &self.blocks {
            for unit in &block.units {
                for comp in &unit.composites {
                    flat_mod_conv_grads(&mut out, comp);
                }
                out.push(&unit.transition_weights);
                out.push(&unit.transition_bias);
            }
        }
        for (w, b) in &self.upscale {
            out.push(w);
            out.push(b);
        }
        out.push(&self.tail_weights);
        out.push(&self.tail_bias);
        out
    }
}

fn collect_mod_conv<'a, T: Scalar>(
    out: &mut Vec<(String, &'a Tensor<T>)>,
    prefix: &str,
    mc: &'a ModConv<T>,
) {
    out.push((format!("{prefix}.w"), &mc.conv.weights));
    out.push((format!("{prefix}.b"), &mc.conv.bias));
    if let Some(ca) = &mc.ca {
        out.push((format!("{prefix}.ca.w1"), &ca.w1));
        out.push((format!("{prefix}.ca.b1"), &ca.b1));
        out.push((format!("{prefix}.ca.w2"), &ca.w2));
        out.push((format!("{prefix}.ca.b2"), &ca.b2));
    }
    if let Some(sa) = &mc.sa {
        out.push((format!("{prefix}.sa.w"), &sa.conv.weights));
        out.push((format!("{prefix}.sa.b"), &sa.conv.bias));
    }
}

fn collect_mod_conv_mut<'a, T: Scalar>(
    out: &mut Vec<(String, &'a mut Tensor<T>)>,
    prefix: &str,
    mc: &'a mut ModConv<T>,
) {
    out.push((format!("{prefix}.w"), &mut mc.conv.weights));
    out.push((format!("{prefix}.b"), &mut mc.conv.bias));
    if let Some(ca) = &mut mc.ca {
        out.push((format!("{prefix}.ca.w1"), &mut ca.w1));
        out.push((format!("{prefix}.ca.b1"), &mut ca.b1));
        out.push((format!("{prefix}.ca.w2"), &mut ca.w2));
        out.push((format!("{prefix}.ca.b2"), &mut ca.b2));
    }
    if let Some(sa) = &mut mc.sa {
        out.push((format!("{prefix}.sa.w"), &mut sa.conv.weights));
        out.push((format!("{prefix}.sa.b"), &mut sa.conv.bias));
    }
}

fn flat_mod_conv_grads<'a, T: Scalar>(out: &mut Vec<&'a Tensor<T>>, g: &'a ModConvGrads<T>) {
    out.push(&g.weights);
    out.push(&g.bias);
    if let Some(ca) = &g.ca {
        out.push(&ca.w1);
        out.push(&ca.b1);
        out.push(&ca.w2);
        out.push(&ca.b2);
    }
    if let Some(sa) = &g.sa {
        out.push(&sa.weights);
        out.push(&sa.bias);
    }
}

/// Box-Muller standard normal from a seeded uniform generator.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exact trainable-scalar count for a config.
pub fn count_params(cfg: &UhdnConfig) -> Result<usize> {
    Ok(Uhdn::<f32>::zeros(cfg)?.param_count())
}

/// Multiply-accumulate count per output image of the given size. Per conv:
/// c_out * c_in * K_h * K_w * H' * W'; CAG costs zero; CA counts its two FC
/// layers once per image; SA counts its gate convolution at layer resolution.
pub fn count_flops(cfg: &UhdnConfig, out_h: usize, out_w: usize) -> Result<u64> {
    cfg.validate()?;
    let c = cfg.channels as u64;
    let g = cfg.growth as u64;
    let lr_px = (out_h as u64 / cfg.scale as u64) * (out_w as u64 / cfg.scale as u64);
    let attn_macs = |c_out: u64, px: u64| -> u64 {
        match cfg.mode {
            Mode::Ca => {
                let inner = (c_out as usize / CA_REDUCTION.min(c_out as usize)).max(1) as u64;
                2 * c_out * inner
            }
            Mode::Sa => 2 * (SA_KERNEL as u64) * (SA_KERNEL as u64) * px,
            _ => 0,
        }
    };
    let mut macs: u64 = 9 * 3 * c * lr_px + attn_macs(c, lr_px);
    for _ in 0..cfg.n_blocks {
        for &d in &cfg.depths {
            let d = d as u64;
            for l in 0..d {
                macs += 9 * (c + l * g) * g * lr_px + attn_macs(g, lr_px);
            }
            macs += (c + d * g) * c * lr_px;
        }
    }
    let mut px = lr_px;
    for f in cfg.upscale_stages() {
        let f = f as u64;
        macs += c * (c * f * f) * px;
        px *= f * f;
    }
    macs += 9 * c * 3 * px;
    Ok(macs)
}
