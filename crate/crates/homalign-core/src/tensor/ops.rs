//! Elementwise, reduction and shape operations on tape variables.
//!
//! Binary operations broadcast in the usual right-aligned sense (each
//! dimension pair must match or one side must be 1); the backward pass sums
//! gradient contributions over broadcast dimensions. Shape mismatches are
//! programming errors and panic with a descriptive message.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::Var;
use super::Tensor;
use crate::element::Element;

/// Right-aligned broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Row-major strides with 0 on broadcast dimensions, right-aligned to `out`.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; out.len()];
    let offset = out.len() - shape.len();
    let mut s = 1usize;
    for i in (0..shape.len()).rev() {
        strides[offset + i] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    strides
}

/// Applies `f` elementwise over the broadcast of `a` and `b`.
pub(crate) fn zip_broadcast<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
) -> Tensor<E> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::from_vec(a.shape(), data).expect("same-shape zip");
    }
    if b.numel() == 1 {
        let y = b.data()[0];
        return a.map(|x| f(x, y));
    }
    if a.numel() == 1 {
        let x = a.data()[0];
        return b.map(|y| f(x, y));
    }
    let out_shape = broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "elementwise op: shapes {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        )
    });
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let numel: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut idx = vec![0usize; out_shape.len()];
    let (mut oa, mut ob) = (0usize, 0usize);
    let ad = a.data();
    let bd = b.data();
    for _ in 0..numel {
        data.push(f(ad[oa], bd[ob]));
        // Odometer increment, keeping the two flat offsets in sync.
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::from_vec(&out_shape, data).expect("broadcast zip")
}

/// Sums `g` down to `target` shape (the adjoint of broadcasting).
pub(crate) fn reduce_to_shape<E: Element>(g: &Tensor<E>, target: &[usize]) -> Tensor<E> {
    if g.shape() == target {
        return g.clone();
    }
    let numel_t: usize = target.iter().product();
    let mut acc = vec![E::zero(); numel_t];
    let st = broadcast_strides(target, g.shape());
    let gshape = g.shape();
    let mut idx = vec![0usize; gshape.len()];
    let mut ot = 0usize;
    let gd = g.data();
    for &gv in gd.iter() {
        acc[ot] = acc[ot] + gv;
        for d in (0..gshape.len()).rev() {
            idx[d] += 1;
            ot += st[d];
            if idx[d] < gshape[d] {
                break;
            }
            ot -= st[d] * gshape[d];
            idx[d] = 0;
        }
    }
    Tensor::from_vec(target, acc).expect("reduce to shape")
}

impl<'t, E: Element> Var<'t, E> {
    fn binary(
        &self,
        other: &Var<'t, E>,
        forward: impl Fn(E, E) -> E,
        backward: impl Fn(&Tensor<E>, &Tensor<E>, &Tensor<E>) -> (Tensor<E>, Tensor<E>) + 'static,
    ) -> Var<'t, E> {
        let value = zip_broadcast(self.value(), other.value(), forward);
        let (a, b) = (self.value().clone(), other.value().clone());
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.record(
            value,
            &[self, other],
            Box::new(move |g| {
                let (ga, gb) = backward(g, &a, &b);
                vec![
                    Some(reduce_to_shape(&ga, &sa)),
                    Some(reduce_to_shape(&gb, &sb)),
                ]
            }),
        )
    }

    pub fn add(&self, other: &Var<'t, E>) -> Var<'t, E> {
        self.binary(other, |x, y| x + y, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&self, other: &Var<'t, E>) -> Var<'t, E> {
        self.binary(
            other,
            |x, y| x - y,
            |g, _, _| (g.clone(), g.map(|v| -v)),
        )
    }

    pub fn mul(&self, other: &Var<'t, E>) -> Var<'t, E> {
        self.binary(
            other,
            |x, y| x * y,
            |g, a, b| (zip_broadcast(g, b, |g, b| g * b), zip_broadcast(g, a, |g, a| g * a)),
        )
    }

    pub fn div(&self, other: &Var<'t, E>) -> Var<'t, E> {
        self.binary(
            other,
            |x, y| x / y,
            |g, a, b| {
                let ga = zip_broadcast(g, b, |g, b| g / b);
                let coeff = zip_broadcast(a, b, |a, b| -a / (b * b));
                let gb = zip_broadcast(g, &coeff, |g, c| g * c);
                (ga, gb)
            },
        )
    }

    pub fn relu(&self) -> Var<'t, E> {
        let x = self.value().clone();
        let value = x.map(|v| if v > E::zero() { v } else { E::zero() });
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                let gx = zip_broadcast(g, &x, |g, x| if x > E::zero() { g } else { E::zero() });
                vec![Some(gx)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Var<'t, E> {
        let value = self.value().map(|v| E::one() / (E::one() + (-v).exp()));
        let y = value.clone();
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                let gx = zip_broadcast(g, &y, |g, y| g * y * (E::one() - y));
                vec![Some(gx)]
            }),
        )
    }

    pub fn abs(&self) -> Var<'t, E> {
        let x = self.value().clone();
        let value = x.map(|v| v.abs());
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                // Subgradient 0 at the kink.
                let gx = zip_broadcast(g, &x, |g, x| {
                    if x > E::zero() {
                        g
                    } else if x < E::zero() {
                        -g
                    } else {
                        E::zero()
                    }
                });
                vec![Some(gx)]
            }),
        )
    }

    pub fn neg(&self) -> Var<'t, E> {
        self.affine(-E::one(), E::zero())
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&self, scale: E, shift: E) -> Var<'t, E> {
        let value = self.value().map(|v| scale * v + shift);
        self.record(
            value,
            &[self],
            Box::new(move |g| vec![Some(g.map(|v| v * scale))]),
        )
    }

    pub fn sum(&self) -> Var<'t, E> {
        let total: E = self.value().data().iter().copied().sum();
        let shape = self.shape().to_vec();
        self.record(
            Tensor::scalar(total),
            &[self],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.item()))]),
        )
    }

    pub fn mean(&self) -> Var<'t, E> {
        let n = self.value().numel();
        let total: E = self.value().data().iter().copied().sum();
        let inv = E::one() / E::from_usize(n);
        let shape = self.shape().to_vec();
        self.record(
            Tensor::scalar(total * inv),
            &[self],
            Box::new(move |g| vec![Some(Tensor::full(&shape, g.item() * inv))]),
        )
    }

    /// Per-pixel sum over the channel dimension: NCHW -> N×1×H×W.
    pub fn sum_channels(&self) -> Var<'t, E> {
        let (n, c, h, w) = self.value().dims4("sum_channels").expect("4-d input");
        let plane = h * w;
        let mut out = vec![E::zero(); n * plane];
        let data = self.value().data();
        for ni in 0..n {
            for ci in 0..c {
                let src = &data[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let dst = &mut out[ni * plane..(ni + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *d + *s;
                }
            }
        }
        let value = Tensor::from_vec(&[n, 1, h, w], out).expect("sum_channels");
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![E::zero(); n * c * plane];
                let gd = g.data();
                for ni in 0..n {
                    for ci in 0..c {
                        let dst = &mut gx[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                        dst.copy_from_slice(&gd[ni * plane..(ni + 1) * plane]);
                    }
                }
                vec![Some(Tensor::from_vec(&[n, c, h, w], gx).expect("sum_channels grad"))]
            }),
        )
    }

    /// Matrix product of two 2-d tensors: [m,k] × [k,n] -> [m,n].
    pub fn matmul(&self, other: &Var<'t, E>) -> Var<'t, E> {
        let (sa, sb) = (self.shape(), other.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {:?} × {:?}",
            sa,
            sb
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let a = self.value().clone();
        let b = other.value().clone();
        let value = Tensor::from_vec(&[m, n], matmul_raw(a.data(), b.data(), m, k, n))
            .expect("matmul");
        self.record(
            value,
            &[self, other],
            Box::new(move |g| {
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                let gd = g.data();
                let mut ga = vec![E::zero(); m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = E::zero();
                        for j in 0..n {
                            acc = acc + gd[i * n + j] * b.data()[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                let mut gb = vec![E::zero(); k * n];
                for p in 0..k {
                    for j in 0..n {
                        let mut acc = E::zero();
                        for i in 0..m {
                            acc = acc + a.data()[i * k + p] * gd[i * n + j];
                        }
                        gb[p * n + j] = acc;
                    }
                }
                vec![
                    Some(Tensor::from_vec(&[m, k], ga).expect("matmul grad a")),
                    Some(Tensor::from_vec(&[k, n], gb).expect("matmul grad b")),
                ]
            }),
        )
    }

    /// Concatenation along the channel dimension of two NCHW tensors.
    pub fn concat_channels(&self, other: &Var<'t, E>) -> Var<'t, E> {
        let (n, ca, h, w) = self.value().dims4("concat_channels").expect("4-d input");
        let (nb, cb, hb, wb) = other.value().dims4("concat_channels").expect("4-d input");
        assert!(
            n == nb && h == hb && w == wb,
            "concat_channels: {:?} and {:?} differ outside the channel dim",
            self.shape(),
            other.shape()
        );
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for ni in 0..n {
            out.extend_from_slice(&self.value().data()[ni * ca * plane..(ni + 1) * ca * plane]);
            out.extend_from_slice(&other.value().data()[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        let value = Tensor::from_vec(&[n, ca + cb, h, w], out).expect("concat_channels");
        self.record(
            value,
            &[self, other],
            Box::new(move |g| {
                let gd = g.data();
                let stride = (ca + cb) * plane;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for ni in 0..n {
                    ga.extend_from_slice(&gd[ni * stride..ni * stride + ca * plane]);
                    gb.extend_from_slice(&gd[ni * stride + ca * plane..(ni + 1) * stride]);
                }
                vec![
                    Some(Tensor::from_vec(&[n, ca, h, w], ga).expect("concat grad a")),
                    Some(Tensor::from_vec(&[n, cb, h, w], gb).expect("concat grad b")),
                ]
            }),
        )
    }

    /// Channel range [lo, hi) of an NCHW tensor.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Var<'t, E> {
        let (n, c, h, w) = self.value().dims4("slice_channels").expect("4-d input");
        assert!(lo < hi && hi <= c, "slice_channels: range {}..{} out of {} channels", lo, hi, c);
        let plane = h * w;
        let cs = hi - lo;
        let mut out = Vec::with_capacity(n * cs * plane);
        for ni in 0..n {
            let base = (ni * c + lo) * plane;
            out.extend_from_slice(&self.value().data()[base..base + cs * plane]);
        }
        let value = Tensor::from_vec(&[n, cs, h, w], out).expect("slice_channels");
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                let mut gx = vec![E::zero(); n * c * plane];
                let gd = g.data();
                for ni in 0..n {
                    let base = (ni * c + lo) * plane;
                    gx[base..base + cs * plane]
                        .copy_from_slice(&gd[ni * cs * plane..(ni + 1) * cs * plane]);
                }
                vec![Some(Tensor::from_vec(&[n, c, h, w], gx).expect("slice grad"))]
            }),
        )
    }

    /// Same data under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Var<'t, E> {
        let value = self
            .value()
            .reshaped(shape)
            .unwrap_or_else(|e| panic!("{e}"));
        let old = self.shape().to_vec();
        self.record(
            value,
            &[self],
            Box::new(move |g| vec![Some(g.reshaped(&old).expect("reshape grad"))]),
        )
    }

    /// One element by flat index, as a scalar tensor.
    pub fn pick(&self, flat_index: usize) -> Var<'t, E> {
        assert!(flat_index < self.value().numel(), "pick: index out of range");
        let value = Tensor::scalar(self.value().data()[flat_index]);
        let shape = self.shape().to_vec();
        self.record(
            value,
            &[self],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&shape);
                gx = gx.with_value_at(flat_index, g.item());
                vec![Some(gx)]
            }),
        )
    }
}

pub(crate) fn matmul_raw<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let (orow, brow) = (&mut out[i * n..(i + 1) * n], &b[p * n..(p + 1) * n]);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}
