use rand::Rng;

use super::{gemm, join, Feat, Params, Tensor};

/// How taps outside the input are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PadMode {
    #[default]
    Zero,
    /// Nearest edge pixel.
    Replicate,
}

/// 2-D convolution over HWC maps.
///
/// Weights are stored `[out, k, k, in]` so a row of the weight matrix lines
/// up with one im2col patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
}

/// Saved activations for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_h: usize,
    out_w: usize,
}

impl Conv2d {
    pub fn zeros(in_c: usize, out_c: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[out_c, k, k, in_c]),
            bias: Tensor::zeros(&[out_c]),
            k,
            stride,
            pad,
            pad_mode: PadMode::Zero,
        }
    }

    /// "Same" convolution with a k×k kernel and stride 1.
    pub fn same(in_c: usize, out_c: usize, k: usize) -> Self {
        Self::zeros(in_c, out_c, k, 1, k / 2)
    }

    /// Stride-1 "same" convolution with edge replication.
    pub fn same_replicate(in_c: usize, out_c: usize, k: usize) -> Self {
        Self {
            pad_mode: PadMode::Replicate,
            ..Self::same(in_c, out_c, k)
        }
    }

    /// Input index for tap position `i` on an axis of length `n`, if any.
    #[inline]
    fn source(&self, i: isize, n: usize) -> Option<usize> {
        if i >= 0 && i < n as isize {
            Some(i as usize)
        } else if self.pad_mode == PadMode::Replicate {
            Some(i.clamp(0, n as isize - 1) as usize)
        } else {
            None
        }
    }

    /// Uniform fan-in initialisation scaled by `gain`.
    pub fn init_<R: Rng>(&mut self, gain: f64, rng: &mut R) {
        let bound = gain * (3.0 / self.patch_len() as f64).sqrt();
        for v in &mut self.weight.data {
            *v = rng.gen_range(-bound..bound);
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[3]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    /// Length of one im2col row, `k·k·in`.
    pub fn patch_len(&self) -> usize {
        self.k * self.k * self.in_channels()
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Feat) -> (Feat, ConvCache) {
        self.forward_with(&self.weight.data, x)
    }

    /// Forward pass using an externally supplied weight buffer with the
    /// layout of `self.weight` (used by low-rank adapters).
    pub fn forward_with(&self, weight: &[f64], x: &Feat) -> (Feat, ConvCache) {
        assert_eq!(x.c, self.in_channels(), "conv input channels");
        let (oh, ow) = self.out_dims(x.h, x.w);
        let kl = self.patch_len();
        let oc = self.out_channels();
        let cols = self.im2col(x, oh, ow);
        let mut out = vec![0.0; oh * ow * oc];
        for row in out.chunks_exact_mut(oc) {
            row.copy_from_slice(&self.bias.data);
        }
        gemm(oh * ow, kl, oc, &cols, false, weight, true, &mut out, 1.0);
        let cache = ConvCache {
            cols,
            in_h: x.h,
            in_w: x.w,
            in_c: x.c,
            out_h: oh,
            out_w: ow,
        };
        (
            Feat {
                h: oh,
                w: ow,
                c: oc,
                data: out,
            },
            cache,
        )
    }

    pub fn backward(
        &self,
        cache: &ConvCache,
        dy: &Feat,
        grad: Option<&mut Conv2d>,
        need_dx: bool,
    ) -> Option<Feat> {
        match grad {
            Some(g) => self.backward_with(
                &self.weight.data,
                cache,
                dy,
                Some(&mut g.weight.data),
                Some(&mut g.bias.data),
                need_dx,
            ),
            None => self.backward_with(&self.weight.data, cache, dy, None, None, need_dx),
        }
    }

    /// Backward pass against an explicit weight buffer. `dw`/`db` are
    /// accumulated into when present.
    pub fn backward_with(
        &self,
        weight: &[f64],
        cache: &ConvCache,
        dy: &Feat,
        dw: Option<&mut [f64]>,
        db: Option<&mut [f64]>,
        need_dx: bool,
    ) -> Option<Feat> {
        let oc = self.out_channels();
        let kl = self.patch_len();
        let rows = cache.out_h * cache.out_w;
        assert_eq!(dy.data.len(), rows * oc, "conv upstream gradient shape");
        if let Some(dw) = dw {
            gemm(oc, rows, kl, &dy.data, true, &cache.cols, false, dw, 1.0);
        }
        if let Some(db) = db {
            for row in dy.data.chunks_exact(oc) {
                for (a, b) in db.iter_mut().zip(row) {
                    *a += b;
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![0.0; rows * kl];
        gemm(rows, oc, kl, &dy.data, false, weight, false, &mut dcols, 0.0);
        Some(self.col2im(&dcols, cache))
    }

    fn im2col(&self, x: &Feat, oh: usize, ow: usize) -> Vec<f64> {
        let (k, s, p, c) = (self.k, self.stride, self.pad as isize, x.c);
        let kl = self.patch_len();
        let mut cols = vec![0.0; oh * ow * kl];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (oy * ow + ox) * kl;
                for ky in 0..k {
                    let Some(iy) = self.source((oy * s + ky) as isize - p, x.h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = self.source((ox * s + kx) as isize - p, x.w) else {
                            continue;
                        };
                        let src = (iy * x.w + ix) * c;
                        let dst = base + (ky * k + kx) * c;
                        cols[dst..dst + c].copy_from_slice(&x.data[src..src + c]);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &[f64], cache: &ConvCache) -> Feat {
        let (k, s, p, c) = (self.k, self.stride, self.pad as isize, cache.in_c);
        let kl = self.patch_len();
        let mut dx = Feat::zeros(cache.in_h, cache.in_w, c);
        for oy in 0..cache.out_h {
            for ox in 0..cache.out_w {
                let base = (oy * cache.out_w + ox) * kl;
                for ky in 0..k {
                    let Some(iy) = self.source((oy * s + ky) as isize - p, cache.in_h) else {
                        continue;
                    };
                    for kx in 0..k {
                        let Some(ix) = self.source((ox * s + kx) as isize - p, cache.in_w) else {
                            continue;
                        };
                        let dst = (iy * cache.in_w + ix) * c;
                        let src = base + (ky * k + kx) * c;
                        for (a, b) in dx.data[dst..dst + c].iter_mut().zip(&dcols[src..src + c]) {
                            *a += b;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Params for Conv2d {
    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
