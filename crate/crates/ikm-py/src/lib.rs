//! Python bindings: tensors, attention generation, model construction,
//! forward inference and accounting.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ikm::arch::{count_flops, count_params, Mode, Uhdn, UhdnConfig};
use ikm::ikm::{cag_generate, CagConfig};
use ikm::tensor::Tensor;

fn to_py_err(e: ikm::IkmError) -> PyErr {
    match e {
        ikm::IkmError::Io(err) => PyIOError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_cfg(
    n_blocks: usize,
    depths: Vec<usize>,
    growth: usize,
    channels: usize,
    scale: usize,
    mode: &str,
    threshold: f64,
    dilation: usize,
) -> PyResult<UhdnConfig> {
    let cfg = UhdnConfig {
        n_blocks,
        depths,
        growth,
        channels,
        scale,
        mode: Mode::parse(mode).map_err(to_py_err)?,
        threshold,
        dilation,
    };
    cfg.validate().map_err(to_py_err)?;
    Ok(cfg)
}

/// A float32 model held behind the bindings.
#[pyclass]
struct Model {
    inner: Uhdn<f32>,
}

#[pymethods]
impl Model {
    /// Builds a freshly initialized model.
    #[new]
    #[pyo3(signature = (n_blocks, depths, growth, channels, scale, mode="iso", threshold=0.0, dilation=1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_blocks: usize,
        depths: Vec<usize>,
        growth: usize,
        channels: usize,
        scale: usize,
        mode: &str,
        threshold: f64,
        dilation: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = parse_cfg(
            n_blocks, depths, growth, channels, scale, mode, threshold, dilation,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Model {
            inner: Uhdn::init(&cfg, &mut rng).map_err(to_py_err)?,
        })
    }

    /// Total trainable scalar count.
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Parameter names in checkpoint order.
    fn param_names(&self) -> Vec<String> {
        self.inner
            .named_params()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    /// Forward pass over a flat row-major [B,3,H,W] buffer; returns the flat
    /// [B,3,sH,sW] output and its shape.
    fn forward(
        &self,
        data: Vec<f32>,
        shape: Vec<usize>,
    ) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let x = Tensor::from_vec(&shape, data).map_err(to_py_err)?;
        let (y, _) = self.inner.forward(&x, &mut None).map_err(to_py_err)?;
        let shape = y.shape().to_vec();
        Ok((y.into_data(), shape))
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.inner.cfg.to_canonical_text())
    }
}

/// Trainable parameters for an architecture, without building weights twice.
#[pyfunction]
#[pyo3(signature = (n_blocks, depths, growth, channels, scale, mode="iso", threshold=0.0, dilation=1))]
#[allow(clippy::too_many_arguments)]
fn params_for(
    n_blocks: usize,
    depths: Vec<usize>,
    growth: usize,
    channels: usize,
    scale: usize,
    mode: &str,
    threshold: f64,
    dilation: usize,
) -> PyResult<usize> {
    let cfg = parse_cfg(
        n_blocks, depths, growth, channels, scale, mode, threshold, dilation,
    )?;
    count_params(&cfg).map_err(to_py_err)
}

/// Multiply-accumulate count for one output image of the given size.
#[pyfunction]
#[pyo3(signature = (n_blocks, depths, growth, channels, scale, out_h, out_w, mode="iso", threshold=0.0, dilation=1))]
#[allow(clippy::too_many_arguments)]
fn flops_for(
    n_blocks: usize,
    depths: Vec<usize>,
    growth: usize,
    channels: usize,
    scale: usize,
    out_h: usize,
    out_w: usize,
    mode: &str,
    threshold: f64,
    dilation: usize,
) -> PyResult<u64> {
    let cfg = parse_cfg(
        n_blocks, depths, growth, channels, scale, mode, threshold, dilation,
    )?;
    count_flops(&cfg, out_h, out_w).map_err(to_py_err)
}

/// Contextual attention over a flat [B,C,H,W] buffer for a KxK kernel with
/// the given dilation and threshold; returns the flat [B,C,K,K] attention.
#[pyfunction]
#[pyo3(signature = (data, shape, kernel=3, dilation=1, threshold=0.0))]
fn attention(
    data: Vec<f64>,
    shape: Vec<usize>,
    kernel: usize,
    dilation: usize,
    threshold: f64,
) -> PyResult<(Vec<f64>, Vec<usize>)> {
    let x = Tensor::from_vec(&shape, data).map_err(to_py_err)?;
    let cfg = CagConfig::new(threshold, (kernel, kernel), (dilation, dilation));
    let a = cag_generate(&x, &cfg).map_err(to_py_err)?;
    let shape = a.values.shape().to_vec();
    Ok((a.values.into_data(), shape))
}

#[pymodule]
fn ikm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(params_for, m)?)?;
    m.add_function(wrap_pyfunction!(flops_for, m)?)?;
    m.add_function(wrap_pyfunction!(attention, m)?)?;
    Ok(())
}
