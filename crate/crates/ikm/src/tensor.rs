//! Dense row-major tensors. 4-D uses are ordered batch, channel, height, width.

use std::io::{Read, Write};

use crate::error::{IkmError, Result};

/// Element type for tensors: f32 for training, f64 for gradient-check suites.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Copy + 'static
{
    /// Dtype code used by the checkpoint format (0 = f32, 1 = f64).
    const DTYPE: u8;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn write_le(self, out: &mut impl Write) -> std::io::Result<()>;
    fn read_le(inp: &mut impl Read) -> std::io::Result<Self>;
}

impl Scalar for f32 {
    const DTYPE: u8 = 0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&self.to_le_bytes())
    }
    fn read_le(inp: &mut impl Read) -> std::io::Result<Self> {
        let mut b = [0u8; 4];
        inp.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }
}

impl Scalar for f64 {
    const DTYPE: u8 = 1;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&self.to_le_bytes())
    }
    fn read_le(inp: &mut impl Read) -> std::io::Result<Self> {
        let mut b = [0u8; 8];
        inp.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(IkmError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, buffer has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    /// Row-major layout makes this a pure view change.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(IkmError::ShapeMismatch(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.shape.len() != 4 {
            return Err(IkmError::ShapeMismatch(format!(
                "expected rank-4 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        if self.shape.len() != 3 {
            return Err(IkmError::ShapeMismatch(format!(
                "expected rank-3 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * cc + c) * hh + h) * ww + w]
    }

    #[inline]
    pub fn at4_mut(&mut self, b: usize, c: usize, h: usize, w: usize) -> &mut T {
        let (cc, hh, ww) = (self.shape[1], self.shape[2], self.shape[3]);
        &mut self.data[((b * cc + c) * hh + h) * ww + w]
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> T {
        let (hh, ww) = (self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w]
    }

    #[inline]
    pub fn at3_mut(&mut self, c: usize, h: usize, w: usize) -> &mut T {
        let (hh, ww) = (self.shape[1], self.shape[2]);
        &mut self.data[(c * hh + h) * ww + w]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(IkmError::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(IkmError::ShapeMismatch(format!(
                "add_assign on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product of two same-shape tensors.
    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(IkmError::ShapeMismatch(format!(
                "dot on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let (b, _, h, w) = parts[0].dims4()?;
        let mut c_total = 0;
        for p in parts {
            let (pb, pc, ph, pw) = p.dims4()?;
            if pb != b || ph != h || pw != w {
                return Err(IkmError::ShapeMismatch(
                    "concat_channels: batch/spatial extents differ".into(),
                ));
            }
            c_total += pc;
        }
        let mut out = Tensor::zeros(&[b, c_total, h, w]);
        for bi in 0..b {
            let mut co = 0;
            for p in parts {
                let pc = p.shape()[1];
                for c in 0..pc {
                    for y in 0..h {
                        for x in 0..w {
                            *out.at4_mut(bi, co + c, y, x) = p.at4(bi, c, y, x);
                        }
                    }
                }
                co += pc;
            }
        }
        Ok(out)
    }

    /// Split a rank-4 tensor along the channel axis at the given channel counts.
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        let (b, c, h, w) = self.dims4()?;
        if sizes.iter().sum::<usize>() != c {
            return Err(IkmError::ShapeMismatch(
                "split_channels: sizes do not sum to channel count".into(),
            ));
        }
        let mut out = Vec::with_capacity(sizes.len());
        let mut c0 = 0;
        for &sz in sizes {
            let mut t = Tensor::zeros(&[b, sz, h, w]);
            for bi in 0..b {
                for ci in 0..sz {
                    for y in 0..h {
                        for x in 0..w {
                            *t.at4_mut(bi, ci, y, x) = self.at4(bi, c0 + ci, y, x);
                        }
                    }
                }
            }
            c0 += sz;
            out.push(t);
        }
        Ok(out)
    }

    /// Slice one batch item out of a rank-4 tensor as a [1,C,H,W] tensor.
    pub fn batch_item(&self, b: usize) -> Result<Tensor<T>> {
        let (_, c, h, w) = self.dims4()?;
        let n = c * h * w;
        Tensor::from_vec(&[1, c, h, w], self.data[b * n..(b + 1) * n].to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64(Scalar::to_f64(v)))
                .collect(),
        }
    }
}

/// One record of the checkpoint tensor stream: name length (u32 LE), name
/// bytes, dtype code (u8), rank (u8), extents (u64 LE each), raw LE buffer.
pub fn write_record<T: Scalar>(
    out: &mut impl Write,
    name: &str,
    t: &Tensor<T>,
) -> std::io::Result<()> {
    let name_bytes = name.as_bytes();
    out.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
    out.write_all(name_bytes)?;
    out.write_all(&[T::DTYPE, t.shape.len() as u8])?;
    for &e in &t.shape {
        out.write_all(&(e as u64).to_le_bytes())?;
    }
    for &v in &t.data {
        v.write_le(out)?;
    }
    Ok(())
}

pub fn read_record<T: Scalar>(inp: &mut impl Read) -> Result<(String, Tensor<T>)> {
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)?;
    let name_len = u32::from_le_bytes(b4) as usize;
    let mut name = vec![0u8; name_len];
    inp.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| IkmError::Data("tensor record name is not UTF-8".into()))?;
    let mut hdr = [0u8; 2];
    inp.read_exact(&mut hdr)?;
    if hdr[0] != T::DTYPE {
        return Err(IkmError::Data(format!(
            "tensor '{}' has dtype code {}, expected {}",
            name,
            hdr[0],
            T::DTYPE
        )));
    }
    let rank = hdr[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b8 = [0u8; 8];
        inp.read_exact(&mut b8)?;
        shape.push(u64::from_le_bytes(b8) as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(T::read_le(inp)?);
    }
    Ok((name, Tensor { shape, data }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_length_mismatch() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn elementwise_rejects_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[2, 2]);
        let b = Tensor::<f64>::zeros(&[4]);
        assert!(a.add(&b).is_err());
    }

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::<f64>::from_vec(&[1, 2, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let b =
            Tensor::<f64>::from_vec(&[1, 1, 2, 2], (8..12).map(|v| v as f64).collect()).unwrap();
        let cat = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[1, 3, 2, 2]);
        let parts = cat.split_channels(&[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn record_round_trip() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1.0, -2.5, 0.0, 4.0, 5.5, -6.0]).unwrap();
        let mut buf = Vec::new();
        write_record(&mut buf, "layer.w", &t).unwrap();
        let mut cur = std::io::Cursor::new(buf);
        let (name, back) = read_record::<f32>(&mut cur).unwrap();
        assert_eq!(name, "layer.w");
        assert_eq!(back, t);
    }

    #[test]
    fn record_dtype_mismatch_is_error() {
        let t = Tensor::<f64>::zeros(&[2]);
        let mut buf = Vec::new();
        write_record(&mut buf, "x", &t).unwrap();
        let mut cur = std::io::Cursor::new(buf);
        assert!(read_record::<f32>(&mut cur).is_err());
    }
}
