//! Small deterministic tensor kernels with multiply-accumulate counting.
//!
//! Storage is generic over [`Element`] (`f32` for the heads, `f64` where a
//! test needs tight tolerances); every kernel accumulates in `f64` with a
//! fixed summation order per output element, so results are bit-identical
//! across runs and thread counts.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub trait Element: Copy + Default + PartialEq + Send + Sync + std::fmt::Debug + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Element for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Element for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Operation tally for one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub macs: u64,
    pub elementwise: u64,
}

impl OpCounter {
    pub fn add(&mut self, other: OpCounter) {
        self.macs += other.macs;
        self.elementwise += other.elementwise;
    }
}

/// Dense row-major tensor. Activations are rank 3 `(C, H, W)`; conv weights
/// are rank 4.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::default(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::ShapeMismatch(format!("expected rank 3 (C, H, W), got {:?}", self.shape))),
        }
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Tensor<f32> {
    /// `TNS1` container: magic, little-endian u32 rank, u32 dims, f32 payload.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"TNS1")?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            let d = u32::try_from(d).map_err(|_| Error::InvalidSize(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"TNS1" {
            return Err(Error::format("TNS1 tensor", format!("bad magic {magic:?}")));
        }
        let read_u32 = |r: &mut dyn Read| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let rank = read_u32(&mut r)?;
        if rank > 8 {
            return Err(Error::format("TNS1 tensor", format!("rank {rank} too large")));
        }
        let shape = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_vec(&shape, data)
    }
}

fn kernel_dims<T: Element>(w: &Tensor<T>) -> Result<[usize; 4]> {
    match *w.shape() {
        [a, b, kh, kw] if kh == kw && kh > 0 => Ok([a, b, kh, kw]),
        _ => Err(Error::ShapeMismatch(format!(
            "expected square rank-4 kernel, got {:?}",
            w.shape()
        ))),
    }
}

fn check_bias<T>(bias: Option<&[T]>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != c_out => Err(Error::ShapeMismatch(format!(
            "bias has {} entries for {c_out} output channels",
            b.len()
        ))),
        _ => Ok(()),
    }
}

/// Cross-correlation with symmetric zero padding.
///
/// `weights` is `(C_out, C_in, k, k)`. Output side is
/// `(H + 2·pad − k) / stride + 1`. Adds `C_out·C_in·k²·H_out·W_out` MACs,
/// tallied from the executed inner loops.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    counter: &mut OpCounter,
) -> Result<Tensor<T>> {
    let (c_in, h, w) = x.chw()?;
    let [c_out, wc_in, k, _] = kernel_dims(weights)?;
    if wc_in != c_in {
        return Err(Error::ShapeMismatch(format!("conv kernel expects {wc_in} input channels, input has {c_in}")));
    }
    check_bias(bias, c_out)?;
    if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::ShapeMismatch(format!("conv k={k} stride={stride} pad={pad} on {h}x{w}")));
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let (ho, wo) = ((hp - k) / stride + 1, (wp - k) / stride + 1);

    let mut padded = vec![0.0f64; c_in * hp * wp];
    for c in 0..c_in {
        for y in 0..h {
            let src = &x.data()[(c * h + y) * w..(c * h + y + 1) * w];
            let dst = &mut padded[(c * hp + y + pad) * wp + pad..][..w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s.to_f64();
            }
        }
    }

    let wdata = weights.data();
    let planes: Vec<(Vec<f64>, u64)> = (0..c_out)
        .into_par_iter()
        .map(|co| {
            let b0 = bias.map_or(0.0, |b| b[co].to_f64());
            let mut acc = vec![b0; ho * wo];
            let mut macs = 0u64;
            for ci in 0..c_in {
                let plane = &padded[ci * hp * wp..(ci + 1) * hp * wp];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdata[((co * c_in + ci) * k + ky) * k + kx].to_f64();
                        for oy in 0..ho {
                            let row = &plane[(oy * stride + ky) * wp + kx..];
                            let out = &mut acc[oy * wo..(oy + 1) * wo];
                            if stride == 1 {
                                for (o, v) in out.iter_mut().zip(&row[..wo]) {
                                    *o += wv * v;
                                }
                            } else {
                                for (ox, o) in out.iter_mut().enumerate() {
                                    *o += wv * row[ox * stride];
                                }
                            }
                            macs += wo as u64;
                        }
                    }
                }
            }
            (acc, macs)
        })
        .collect();

    let mut data = Vec::with_capacity(c_out * ho * wo);
    for (plane, macs) in planes {
        counter.macs += macs;
        data.extend(plane.into_iter().map(T::from_f64));
    }
    Tensor::from_vec(&[c_out, ho, wo], data)
}

/// Transposed convolution (fractionally strided), `weights` is
/// `(C_in, C_out, k, k)`.
///
/// Every input pixel scatters a `k × k` patch into a full buffer, which is
/// then cropped by `pad` on each side; `output_padding` extends the far
/// edges. Output side is `(H − 1)·stride − 2·pad + k + output_padding`.
/// Adds `C_in·C_out·k²·H_in·W_in` MACs.
pub fn deconv2d<T: Element>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    output_padding: usize,
    counter: &mut OpCounter,
) -> Result<Tensor<T>> {
    let (c_in, h, w) = x.chw()?;
    let [wc_in, c_out, k, _] = kernel_dims(weights)?;
    if wc_in != c_in {
        return Err(Error::ShapeMismatch(format!("deconv kernel expects {wc_in} input channels, input has {c_in}")));
    }
    check_bias(bias, c_out)?;
    if stride == 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch(format!("deconv stride={stride} on {h}x{w}")));
    }
    let (hf, wf) = ((h - 1) * stride + k + output_padding, (w - 1) * stride + k + output_padding);
    if hf < 2 * pad + 1 || wf < 2 * pad + 1 {
        return Err(Error::ShapeMismatch(format!("deconv pad {pad} crops away the {hf}x{wf} output")));
    }
    let (ho, wo) = (hf - 2 * pad, wf - 2 * pad);

    let input: Vec<f64> = x.data().iter().map(|v| v.to_f64()).collect();
    let wdata = weights.data();
    let planes: Vec<(Vec<f64>, u64)> = (0..c_out)
        .into_par_iter()
        .map(|co| {
            let mut full = vec![0.0f64; hf * wf];
            let mut macs = 0u64;
            for ci in 0..c_in {
                let plane = &input[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdata[((ci * c_out + co) * k + ky) * k + kx].to_f64();
                        for iy in 0..h {
                            let base = (iy * stride + ky) * wf + kx;
                            let src = &plane[iy * w..(iy + 1) * w];
                            for (ix, v) in src.iter().enumerate() {
                                full[base + ix * stride] += wv * v;
                            }
                            macs += w as u64;
                        }
                    }
                }
            }
            let b0 = bias.map_or(0.0, |b| b[co].to_f64());
            let mut out = Vec::with_capacity(ho * wo);
            for oy in 0..ho {
                out.extend(full[(oy + pad) * wf + pad..][..wo].iter().map(|v| v + b0));
            }
            (out, macs)
        })
        .collect();

    let mut data = Vec::with_capacity(c_out * ho * wo);
    for (plane, macs) in planes {
        counter.macs += macs;
        data.extend(plane.into_iter().map(T::from_f64));
    }
    Tensor::from_vec(&[c_out, ho, wo], data)
}

/// Depth-to-space: `out(c, h·r + i, w·r + j) = in(c·r² + i·r + j, h, w)`.
pub fn pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c_in, h, w) = x.chw()?;
    if r == 0 || c_in % (r * r) != 0 {
        return Err(Error::ShapeMismatch(format!("pixel_shuffle r={r} needs channels divisible by r², got {c_in}")));
    }
    let c = c_in / (r * r);
    let (ho, wo) = (h * r, w * r);
    let src = x.data();
    let mut out = vec![T::default(); src.len()];
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for y in 0..h {
                    let row = &src[(ci * h + y) * w..(ci * h + y + 1) * w];
                    let orow = (co * ho + y * r + i) * wo;
                    for (xx, &v) in row.iter().enumerate() {
                        out[orow + xx * r + j] = v;
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

/// Space-to-depth, the exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (c, ho, wo) = x.chw()?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return Err(Error::ShapeMismatch(format!("pixel_unshuffle r={r} on {ho}x{wo}")));
    }
    let (h, w) = (ho / r, wo / r);
    let src = x.data();
    let mut out = vec![T::default(); src.len()];
    for co in 0..c {
        for i in 0..r {
            for j in 0..r {
                let ci = co * r * r + i * r + j;
                for y in 0..h {
                    let irow = (co * ho + y * r + i) * wo;
                    let orow = &mut out[(ci * h + y) * w..(ci * h + y + 1) * w];
                    for (xx, o) in orow.iter_mut().enumerate() {
                        *o = src[irow + xx * r + j];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c * r * r, h, w], out)
}

/// Inference-mode batch norm parameters, one entry per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: 0.0,
        }
    }
}

/// `y = γ·(x − μ)/√(σ² + ε) + β` per channel; one elementwise op per value.
pub fn batchnorm_inference<T: Element>(
    x: &Tensor<T>,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    eps: f64,
    counter: &mut OpCounter,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.chw()?;
    for (name, p) in [("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta)] {
        if p.len() != c {
            return Err(Error::ShapeMismatch(format!("batch norm {name} has {} entries for {c} channels", p.len())));
        }
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(x.len());
    for ch in 0..c {
        let scale = gamma[ch].to_f64() / (var[ch].to_f64() + eps).sqrt();
        let (mu, b) = (mean[ch].to_f64(), beta[ch].to_f64());
        data.extend(x.data()[ch * hw..(ch + 1) * hw].iter().map(|v| T::from_f64(scale * (v.to_f64() - mu) + b)));
    }
    counter.elementwise += x.len() as u64;
    Tensor::from_vec(x.shape(), data)
}

/// `max(x, 0)`; one elementwise op per value.
pub fn relu<T: Element>(x: &Tensor<T>, counter: &mut OpCounter) -> Tensor<T> {
    counter.elementwise += x.len() as u64;
    x.map(|v| if v.to_f64() > 0.0 { v } else { T::from_f64(0.0) })
}
