//! Primitives over `[height, width, channels]` feature maps.

use super::tensor::gemm;
use super::{Op, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Interpolation taps along one axis: lower index, upper index, fraction
/// toward the upper index, and whether the coordinate was clamped.
///
/// Coordinates outside `[0, size-1]` clamp to the border. An integer
/// coordinate is treated as the right end of the cell to its left, so the
/// derivative there is the left cell's slope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Taps {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
    pub clamped: bool,
}

pub fn taps(coord: f64, size: usize) -> Taps {
    if size <= 1 {
        return Taps {
            lo: 0,
            hi: 0,
            frac: 0.0,
            clamped: true,
        };
    }
    let max = (size - 1) as f64;
    let clamped = !(0.0..=max).contains(&coord);
    let c = coord.clamp(0.0, max);
    let lo = ((c.ceil() as isize) - 1).clamp(0, size as isize - 2) as usize;
    Taps {
        lo,
        hi: lo + 1,
        frac: c - lo as f64,
        clamped,
    }
}

/// Bilinear lookup of a `[h, w, d]` map at continuous pixel `(u, v)`
/// (`u` along width, `v` along height).
pub fn bilinear_lookup(data: &[f64], h: usize, w: usize, d: usize, u: f64, v: f64, out: &mut [f64]) {
    let tx = taps(u, w);
    let ty = taps(v, h);
    let (fx, fy) = (tx.frac, ty.frac);
    let w00 = (1.0 - fx) * (1.0 - fy);
    let w01 = fx * (1.0 - fy);
    let w10 = (1.0 - fx) * fy;
    let w11 = fx * fy;
    let at = |y: usize, x: usize| &data[(y * w + x) * d..(y * w + x + 1) * d];
    let (p00, p01, p10, p11) = (at(ty.lo, tx.lo), at(ty.lo, tx.hi), at(ty.hi, tx.lo), at(ty.hi, tx.hi));
    for k in 0..d {
        out[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
}

fn hwc(t: &Tensor, context: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::shape(context, &[0, 0, 0], t.shape())),
    }
}

/// Samples a `[h, w, d]` field at `[n, 2]` pixel coordinates, giving `[n, d]`.
#[derive(Clone, Copy, Debug)]
pub struct BilinearSample;

impl Op for BilinearSample {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (field, coords) = (inputs[0], inputs[1]);
        let (h, w, d) = hwc(field, "bilinear_sample field")?;
        if coords.shape().len() != 2 || coords.shape()[1] != 2 {
            return Err(Error::shape("bilinear_sample coords", &[coords.rows(), 2], coords.shape()));
        }
        let n = coords.shape()[0];
        let mut out = vec![0.0; n * d];
        for (uv, o) in coords.data().chunks_exact(2).zip(out.chunks_exact_mut(d.max(1))) {
            bilinear_lookup(field.data(), h, w, d, uv[0], uv[1], o);
        }
        Ok(Tensor::from_parts(vec![n, d], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (field, coords) = (inputs[0], inputs[1]);
        let (h, w, d) = hwc(field, "").expect("checked in forward");
        let f = field.data();
        let mut gfield = needs[0].then(|| vec![0.0; field.len()]);
        let mut gcoord = needs[1].then(|| vec![0.0; coords.len()]);
        for (i, (uv, g)) in coords
            .data()
            .chunks_exact(2)
            .zip(grad.data().chunks_exact(d.max(1)))
            .enumerate()
        {
            let tx = taps(uv[0], w);
            let ty = taps(uv[1], h);
            let (fx, fy) = (tx.frac, ty.frac);
            let i00 = (ty.lo * w + tx.lo) * d;
            let i01 = (ty.lo * w + tx.hi) * d;
            let i10 = (ty.hi * w + tx.lo) * d;
            let i11 = (ty.hi * w + tx.hi) * d;
            if let Some(gf) = gfield.as_mut() {
                let ws = [
                    (i00, (1.0 - fx) * (1.0 - fy)),
                    (i01, fx * (1.0 - fy)),
                    (i10, (1.0 - fx) * fy),
                    (i11, fx * fy),
                ];
                for (base, wt) in ws {
                    for k in 0..d {
                        gf[base + k] += wt * g[k];
                    }
                }
            }
            if let Some(gc) = gcoord.as_mut() {
                let (mut du, mut dv) = (0.0, 0.0);
                for k in 0..d {
                    let (a, b, c, e) = (f[i00 + k], f[i01 + k], f[i10 + k], f[i11 + k]);
                    du += g[k] * ((1.0 - fy) * (b - a) + fy * (e - c));
                    dv += g[k] * ((1.0 - fx) * (c - a) + fx * (e - b));
                }
                gc[2 * i] = if tx.clamped { 0.0 } else { du };
                gc[2 * i + 1] = if ty.clamped { 0.0 } else { dv };
            }
        }
        vec![
            gfield.map(|g| Tensor::from_parts(field.shape().to_vec(), g)),
            gcoord.map(|g| Tensor::from_parts(coords.shape().to_vec(), g)),
        ]
    }
}

/// Square-kernel convolution without bias. Weights are `[c_out, k, k, c_in]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad).saturating_sub(self.kernel) / self.stride + 1
    }

    fn im2col(&self, input: &[f64], h: usize, w: usize, c: usize) -> (usize, usize, Vec<f64>) {
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let k = self.kernel;
        let row_len = k * k * c;
        let mut cols = vec![0.0; ho * wo * row_len];
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &mut cols[(oy * wo + ox) * row_len..(oy * wo + ox + 1) * row_len];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = (iy as usize * w + ix as usize) * c;
                        let dst = (ky * k + kx) * c;
                        row[dst..dst + c].copy_from_slice(&input[src..src + c]);
                    }
                }
            }
        }
        (ho, wo, cols)
    }

    fn col2im(&self, cols: &[f64], h: usize, w: usize, c: usize, out: &mut [f64]) {
        let (ho, wo) = (self.out_size(h), self.out_size(w));
        let k = self.kernel;
        let row_len = k * k * c;
        for oy in 0..ho {
            for ox in 0..wo {
                let row = &cols[(oy * wo + ox) * row_len..(oy * wo + ox + 1) * row_len];
                for ky in 0..k {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = (iy as usize * w + ix as usize) * c;
                        let src = (ky * k + kx) * c;
                        for (o, v) in out[dst..dst + c].iter_mut().zip(&row[src..src + c]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
}

impl Op for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (input, weight) = (inputs[0], inputs[1]);
        let (h, w, c) = hwc(input, "conv2d input")?;
        let k = self.kernel;
        let cout = weight.shape().first().copied().unwrap_or(0);
        if weight.shape() != [cout, k, k, c] {
            return Err(Error::shape("conv2d weight", &[cout, k, k, c], weight.shape()));
        }
        let (ho, wo, cols) = self.im2col(input.data(), h, w, c);
        let mut out = vec![0.0; ho * wo * cout];
        gemm(ho * wo, k * k * c, cout, &cols, false, weight.data(), true, &mut out, 0.0);
        Ok(Tensor::from_parts(vec![ho, wo, cout], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (input, weight) = (inputs[0], inputs[1]);
        let (h, w, c) = hwc(input, "").expect("checked in forward");
        let (ho, wo, cout) = hwc(output, "").expect("checked in forward");
        let kkc = self.kernel * self.kernel * c;
        let gweight = needs[1].then(|| {
            let (_, _, cols) = self.im2col(input.data(), h, w, c);
            let mut gw = vec![0.0; cout * kkc];
            gemm(cout, ho * wo, kkc, grad.data(), true, &cols, false, &mut gw, 0.0);
            Tensor::from_parts(weight.shape().to_vec(), gw)
        });
        let ginput = needs[0].then(|| {
            let mut gcols = vec![0.0; ho * wo * kkc];
            gemm(ho * wo, cout, kkc, grad.data(), false, weight.data(), false, &mut gcols, 0.0);
            let mut gi = vec![0.0; input.len()];
            self.col2im(&gcols, h, w, c, &mut gi);
            Tensor::from_parts(input.shape().to_vec(), gi)
        });
        vec![ginput, gweight]
    }
}

/// Half-pixel-centred bilinear resampling of a `[h, w, c]` map.
#[derive(Clone, Copy, Debug)]
pub struct Resize {
    pub height: usize,
    pub width: usize,
}

fn resize_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            if input <= 1 {
                return (0, 0, 0.0);
            }
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = (src.floor() as usize).min(input - 2);
            (lo, lo + 1, src - lo as f64)
        })
        .collect()
}

impl Op for Resize {
    fn name(&self) -> &'static str {
        "resize"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let x = inputs[0];
        let (h, w, c) = hwc(x, "resize")?;
        let ty = resize_taps(self.height, h);
        let tx = resize_taps(self.width, w);
        let d = x.data();
        let mut out = vec![0.0; self.height * self.width * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let o = &mut out[(oy * self.width + ox) * c..(oy * self.width + ox + 1) * c];
                let ws = [
                    ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                    ((y0 * w + x1) * c, (1.0 - fy) * fx),
                    ((y1 * w + x0) * c, fy * (1.0 - fx)),
                    ((y1 * w + x1) * c, fy * fx),
                ];
                for (base, wt) in ws {
                    for k in 0..c {
                        o[k] += wt * d[base + k];
                    }
                }
            }
        }
        Ok(Tensor::from_parts(vec![self.height, self.width, c], out))
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        _needs: &[bool],
    ) -> Vec<Option<Tensor>> {
        let x = inputs[0];
        let (h, w, c) = hwc(x, "").expect("checked in forward");
        let ty = resize_taps(self.height, h);
        let tx = resize_taps(self.width, w);
        let g = grad.data();
        let mut out = vec![0.0; x.len()];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let go = &g[(oy * self.width + ox) * c..(oy * self.width + ox + 1) * c];
                let ws = [
                    ((y0 * w + x0) * c, (1.0 - fy) * (1.0 - fx)),
                    ((y0 * w + x1) * c, (1.0 - fy) * fx),
                    ((y1 * w + x0) * c, fy * (1.0 - fx)),
                    ((y1 * w + x1) * c, fy * fx),
                ];
                for (base, wt) in ws {
                    for k in 0..c {
                        out[base + k] += wt * go[k];
                    }
                }
            }
        }
        vec![Some(Tensor::from_parts(x.shape().to_vec(), out))]
    }
}

impl Tape {
    pub fn bilinear_sample(&mut self, field: Var, coords: Var) -> Result<Var> {
        self.apply(BilinearSample, &[field, coords])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, stride: usize, pad: usize) -> Result<Var> {
        let kernel = self.shape(weight).get(1).copied().unwrap_or(1);
        self.apply(Conv2d { kernel, stride, pad }, &[input, weight])
    }

    pub fn resize(&mut self, input: Var, height: usize, width: usize) -> Result<Var> {
        self.apply(Resize { height, width }, &[input])
    }
}
