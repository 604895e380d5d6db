//! Convolution and pooling, forward and backward.
//!
//! Plain direct kernels over row-major NCHW buffers. Inner loops run over
//! contiguous output rows so the compiler can vectorize them; padding is
//! handled by clipping the output-column range per kernel column instead of
//! materializing a padded buffer.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::Var;
use super::{shape_err, Tensor, TensorError};
use crate::element::Element;

#[derive(Clone, Copy)]
struct ConvGeom {
    n: usize,
    ic: usize,
    ih: usize,
    iw: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

fn out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(k).map(|v| v / stride + 1)
}

/// Output-column range [lo, hi] reaching in-bounds input columns for kernel
/// column `kx`; `None` when the whole row falls outside.
#[inline]
fn col_range(kx: usize, geom: &ConvGeom) -> Option<(usize, usize, isize)> {
    let base = kx as isize - geom.pad as isize;
    let lo = if base >= 0 {
        0
    } else {
        ((-base) as usize + geom.stride - 1) / geom.stride
    };
    let max_ix = geom.iw as isize - 1 - base;
    if max_ix < 0 {
        return None;
    }
    let hi = (max_ix as usize / geom.stride).min(geom.ow - 1);
    if lo > hi {
        return None;
    }
    Some((lo, hi, base))
}

fn conv2d_forward<E: Element>(
    input: &[E],
    weight: &[E],
    bias: &[E],
    geom: &ConvGeom,
) -> Vec<E> {
    let g = *geom;
    let mut out = vec![E::zero(); g.n * g.oc * g.oh * g.ow];
    for ni in 0..g.n {
        for oci in 0..g.oc {
            let b = bias[oci];
            for oy in 0..g.oh {
                let orow_start = ((ni * g.oc + oci) * g.oh + oy) * g.ow;
                let out_row = &mut out[orow_start..orow_start + g.ow];
                for o in out_row.iter_mut() {
                    *o = b;
                }
                let iy_base = (oy * g.stride) as isize - g.pad as isize;
                for ici in 0..g.ic {
                    let iplane = (ni * g.ic + ici) * g.ih * g.iw;
                    for ky in 0..g.kh {
                        let iy = iy_base + ky as isize;
                        if iy < 0 || iy >= g.ih as isize {
                            continue;
                        }
                        let in_row = &input[iplane + iy as usize * g.iw..][..g.iw];
                        let wrow = &weight[((oci * g.ic + ici) * g.kh + ky) * g.kw..][..g.kw];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let Some((lo, hi, base)) = col_range(kx, &g) else { continue };
                            if g.stride == 1 {
                                let src = &in_row[(lo as isize + base) as usize..][..hi - lo + 1];
                                for (o, &s) in out_row[lo..=hi].iter_mut().zip(src) {
                                    *o = *o + wv * s;
                                }
                            } else {
                                for ox in lo..=hi {
                                    let ix = (ox * g.stride) as isize + base;
                                    out_row[ox] = out_row[ox] + wv * in_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward_input<E: Element>(grad_out: &[E], weight: &[E], geom: &ConvGeom) -> Vec<E> {
    let g = *geom;
    let mut gin = vec![E::zero(); g.n * g.ic * g.ih * g.iw];
    for ni in 0..g.n {
        for oci in 0..g.oc {
            for oy in 0..g.oh {
                let grow = &grad_out[((ni * g.oc + oci) * g.oh + oy) * g.ow..][..g.ow];
                let iy_base = (oy * g.stride) as isize - g.pad as isize;
                for ici in 0..g.ic {
                    let iplane = (ni * g.ic + ici) * g.ih * g.iw;
                    for ky in 0..g.kh {
                        let iy = iy_base + ky as isize;
                        if iy < 0 || iy >= g.ih as isize {
                            continue;
                        }
                        let gin_row = &mut gin[iplane + iy as usize * g.iw..][..g.iw];
                        let wrow = &weight[((oci * g.ic + ici) * g.kh + ky) * g.kw..][..g.kw];
                        for (kx, &wv) in wrow.iter().enumerate() {
                            let Some((lo, hi, base)) = col_range(kx, &g) else { continue };
                            if g.stride == 1 {
                                let dst = &mut gin_row[(lo as isize + base) as usize..][..hi - lo + 1];
                                for (d, &gv) in dst.iter_mut().zip(&grow[lo..=hi]) {
                                    *d = *d + wv * gv;
                                }
                            } else {
                                for ox in lo..=hi {
                                    let ix = ((ox * g.stride) as isize + base) as usize;
                                    gin_row[ix] = gin_row[ix] + wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gin
}

fn conv2d_backward_weight<E: Element>(grad_out: &[E], input: &[E], geom: &ConvGeom) -> Vec<E> {
    let g = *geom;
    let mut gw = vec![E::zero(); g.oc * g.ic * g.kh * g.kw];
    for ni in 0..g.n {
        for oci in 0..g.oc {
            for oy in 0..g.oh {
                let grow = &grad_out[((ni * g.oc + oci) * g.oh + oy) * g.ow..][..g.ow];
                let iy_base = (oy * g.stride) as isize - g.pad as isize;
                for ici in 0..g.ic {
                    let iplane = (ni * g.ic + ici) * g.ih * g.iw;
                    for ky in 0..g.kh {
                        let iy = iy_base + ky as isize;
                        if iy < 0 || iy >= g.ih as isize {
                            continue;
                        }
                        let in_row = &input[iplane + iy as usize * g.iw..][..g.iw];
                        let gw_row = &mut gw[((oci * g.ic + ici) * g.kh + ky) * g.kw..][..g.kw];
                        for (kx, gw_v) in gw_row.iter_mut().enumerate() {
                            let Some((lo, hi, base)) = col_range(kx, &g) else { continue };
                            let mut acc = E::zero();
                            if g.stride == 1 {
                                let src = &in_row[(lo as isize + base) as usize..][..hi - lo + 1];
                                for (&gv, &s) in grow[lo..=hi].iter().zip(src) {
                                    acc = acc + gv * s;
                                }
                            } else {
                                for ox in lo..=hi {
                                    let ix = ((ox * g.stride) as isize + base) as usize;
                                    acc = acc + grow[ox] * in_row[ix];
                                }
                            }
                            *gw_v = *gw_v + acc;
                        }
                    }
                }
            }
        }
    }
    gw
}

impl<'t, E: Element> Var<'t, E> {
    /// 2-d convolution of an NCHW input with an OIHW weight and per-output
    /// bias. Differentiable with respect to input, weight and bias.
    pub fn conv2d(
        &self,
        weight: &Var<'t, E>,
        bias: &Var<'t, E>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, E>, TensorError> {
        let (n, ic, ih, iw) = self.value().dims4("conv2d")?;
        let (oc, wic, kh, kw) = weight.value().dims4("conv2d")?;
        if wic != ic {
            return Err(shape_err(
                "conv2d",
                format!("input has {ic} channels but weight expects {wic}"),
            ));
        }
        if bias.value().shape() != [oc] {
            return Err(shape_err(
                "conv2d",
                format!("bias shape {:?} does not match {oc} output channels", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", format!("stride must be positive")));
        }
        let (Some(oh), Some(ow)) = (
            out_extent(ih, kh, stride, padding),
            out_extent(iw, kw, stride, padding),
        ) else {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}×{kw} does not fit {ih}×{iw} input padded by {padding}"),
            ));
        };
        let geom = ConvGeom { n, ic, ih, iw, oc, kh, kw, oh, ow, stride, pad: padding };
        let out = conv2d_forward(self.value().data(), weight.value().data(), bias.value().data(), &geom);
        let value = Tensor::from_vec(&[n, oc, oh, ow], out)?;

        let x = self.value().clone();
        let w = weight.value().clone();
        let need = [self.requires_grad(), weight.requires_grad(), bias.requires_grad()];
        Ok(self.record(
            value,
            &[self, weight, bias],
            Box::new(move |g| {
                let gd = g.data();
                let gx = need[0].then(|| {
                    Tensor::from_vec(&[n, ic, ih, iw], conv2d_backward_input(gd, w.data(), &geom))
                        .expect("conv grad input")
                });
                let gw = need[1].then(|| {
                    Tensor::from_vec(&[oc, ic, kh, kw], conv2d_backward_weight(gd, x.data(), &geom))
                        .expect("conv grad weight")
                });
                let gb = need[2].then(|| {
                    let mut acc = vec![E::zero(); oc];
                    for ni in 0..n {
                        for (oci, a) in acc.iter_mut().enumerate() {
                            let start = (ni * oc + oci) * oh * ow;
                            for &v in &gd[start..start + oh * ow] {
                                *a = *a + v;
                            }
                        }
                    }
                    Tensor::from_vec(&[oc], acc).expect("conv grad bias")
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    /// Max pooling with the given square kernel, stride and padding. The
    /// subgradient at ties goes to the first maximum in row-major window
    /// order; padded cells never win.
    pub fn max_pool2d(
        &self,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, E>, TensorError> {
        let (n, c, ih, iw) = self.value().dims4("max_pool2d")?;
        if padding >= kernel {
            return Err(shape_err(
                "max_pool2d",
                format!("padding {padding} must be smaller than kernel {kernel}"),
            ));
        }
        let (Some(oh), Some(ow)) = (
            out_extent(ih, kernel, stride, padding),
            out_extent(iw, kernel, stride, padding),
        ) else {
            return Err(shape_err(
                "max_pool2d",
                format!("kernel {kernel} does not fit {ih}×{iw} input padded by {padding}"),
            ));
        };
        let data = self.value().data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for pi in 0..n * c {
            let plane = &data[pi * ih * iw..(pi + 1) * ih * iw];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ky in 0..kernel {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let idx = iy as usize * iw + ix as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(pi * ih * iw + best_idx);
                }
            }
        }
        let value = Tensor::from_vec(&[n, c, oh, ow], out)?;
        let in_numel = n * c * ih * iw;
        let in_shape = [n, c, ih, iw];
        Ok(self.record(
            value,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![E::zero(); in_numel];
                for (&gv, &idx) in g.data().iter().zip(&argmax) {
                    gx[idx] = gx[idx] + gv;
                }
                vec![Some(Tensor::from_vec(&in_shape, gx).expect("pool grad"))]
            }),
        ))
    }

    /// Global average pooling: NCHW -> N×C×1×1.
    pub fn global_avg_pool(&self) -> Var<'t, E> {
        let (n, c, h, w) = self.value().dims4("global_avg_pool").expect("4-d input");
        let plane = h * w;
        let inv = E::one() / E::from_usize(plane);
        let data = self.value().data();
        let out: Vec<E> = (0..n * c)
            .map(|pi| {
                let mut acc = E::zero();
                for &v in &data[pi * plane..(pi + 1) * plane] {
                    acc = acc + v;
                }
                acc * inv
            })
            .collect();
        let value = Tensor::from_vec(&[n, c, 1, 1], out).expect("global_avg_pool");
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                let mut gx = Vec::with_capacity(n * c * plane);
                for &gv in g.data() {
                    gx.extend(core::iter::repeat(gv * inv).take(plane));
                }
                vec![Some(Tensor::from_vec(&[n, c, h, w], gx).expect("gap grad"))]
            }),
        )
    }
}
