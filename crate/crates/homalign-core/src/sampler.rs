//! Differentiable bilinear warping by a homography.
//!
//! Backward mapping: output pixel `(x, y)` samples the input at
//! `inverse(h)·(x, y)` with bilinear interpolation and zero padding outside
//! the frame. Pixel centers sit at integer coordinates with the origin at the
//! top-left. A pixel is flagged valid when every sampling neighbor with a
//! positive interpolation weight lies in bounds, so exact integer shifts keep
//! full validity on the overlap.
//!
//! This module also hosts the tape bridge for the 4-point parameterization:
//! [`homography_var`] and [`inverse_homography_var`] record the corner solve
//! as differentiable operations, with gradients propagated through the
//! adjoint of the 8×8 linear system. The warp itself is differentiable with
//! respect to the input values and, through the sampling coordinates, with
//! respect to the matrix entries — hence the 8 offset values.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::element::Element;
use crate::geometry::{
    solve_h4, solve_h4_vjp, CornerOffsets, Frame, GeometryError, Homography,
};
use crate::tensor::{Tensor, Var};
#[allow(unused_imports)]
use num_traits::Float; // float methods under no_std

/// A warped tensor plus its per-pixel validity map (N×1×H×W, values 0/1).
#[derive(Clone, Debug)]
pub struct WarpResult<E: Element = f64> {
    pub warped: Tensor<E>,
    pub validity: Tensor<E>,
}

const DENOM_FLOOR: f64 = 1e-12;

struct SampleGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

/// Neighborhood of one continuous sample point.
struct Taps {
    // Flat offsets within a plane; usize::MAX marks out of bounds.
    idx: [usize; 4],
    wgt: [f64; 4],
    valid: bool,
    sx: f64,
    sy: f64,
    denom: f64,
    degenerate: bool,
}

fn taps(x: usize, y: usize, smat: &[f64; 9], h: usize, w: usize) -> Taps {
    let (xf, yf) = (x as f64, y as f64);
    let denom = smat[6] * xf + smat[7] * yf + smat[8];
    if denom.abs() < DENOM_FLOOR {
        return Taps {
            idx: [usize::MAX; 4],
            wgt: [0.0; 4],
            valid: false,
            sx: 0.0,
            sy: 0.0,
            denom: 1.0,
            degenerate: true,
        };
    }
    let sx = (smat[0] * xf + smat[1] * yf + smat[2]) / denom;
    let sy = (smat[3] * xf + smat[4] * yf + smat[5]) / denom;
    let x0 = sx.floor();
    let y0 = sy.floor();
    let ax = sx - x0;
    let ay = sy - y0;
    let (x0, y0) = (x0 as isize, y0 as isize);
    let coords = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
    let wgt = [
        (1.0 - ax) * (1.0 - ay),
        ax * (1.0 - ay),
        (1.0 - ax) * ay,
        ax * ay,
    ];
    let mut idx = [usize::MAX; 4];
    let mut valid = true;
    for (k, (cx, cy)) in coords.iter().enumerate() {
        let inside = *cx >= 0 && *cx < w as isize && *cy >= 0 && *cy < h as isize;
        if inside {
            idx[k] = *cy as usize * w + *cx as usize;
        } else if wgt[k] > 0.0 {
            valid = false;
        }
    }
    Taps { idx, wgt, valid, sx, sy, denom, degenerate: false }
}

fn warp_forward<E: Element>(
    input: &[E],
    geom: &SampleGeom,
    smat: &[f64; 9],
) -> (Vec<E>, Vec<E>) {
    let plane_in = geom.h * geom.w;
    let plane_out = geom.oh * geom.ow;
    let mut warped = vec![E::zero(); geom.n * geom.c * plane_out];
    let mut validity = vec![E::zero(); geom.n * plane_out];
    for y in 0..geom.oh {
        for x in 0..geom.ow {
            let t = taps(x, y, smat, geom.h, geom.w);
            let o = y * geom.ow + x;
            for ni in 0..geom.n {
                if t.valid {
                    validity[ni * plane_out + o] = E::one();
                }
                for ci in 0..geom.c {
                    let src = &input[(ni * geom.c + ci) * plane_in..][..plane_in];
                    let mut acc = 0.0;
                    for k in 0..4 {
                        if t.idx[k] != usize::MAX {
                            acc += t.wgt[k] * src[t.idx[k]].to_f64();
                        }
                    }
                    warped[(ni * geom.c + ci) * plane_out + o] = E::from_f64(acc);
                }
            }
        }
    }
    (warped, validity)
}

fn warp_backward<E: Element>(
    grad_out: &[E],
    input: &[E],
    geom: &SampleGeom,
    smat: &[f64; 9],
) -> (Vec<E>, [f64; 9]) {
    let plane_in = geom.h * geom.w;
    let plane_out = geom.oh * geom.ow;
    let mut g_input = vec![E::zero(); geom.n * geom.c * plane_in];
    let mut g_smat = [0.0f64; 9];
    for y in 0..geom.oh {
        for x in 0..geom.ow {
            let t = taps(x, y, smat, geom.h, geom.w);
            if t.degenerate {
                continue;
            }
            let o = y * geom.ow + x;
            let ax = t.sx - t.sx.floor();
            let ay = t.sy - t.sy.floor();
            let (mut gsx, mut gsy) = (0.0, 0.0);
            for ni in 0..geom.n {
                for ci in 0..geom.c {
                    let g = grad_out[(ni * geom.c + ci) * plane_out + o].to_f64();
                    if g == 0.0 {
                        continue;
                    }
                    let base = (ni * geom.c + ci) * plane_in;
                    let v = |k: usize| -> f64 {
                        if t.idx[k] == usize::MAX {
                            0.0
                        } else {
                            input[base + t.idx[k]].to_f64()
                        }
                    };
                    // Scatter to the four neighbors.
                    for k in 0..4 {
                        if t.idx[k] != usize::MAX {
                            let slot = &mut g_input[base + t.idx[k]];
                            *slot = *slot + E::from_f64(g * t.wgt[k]);
                        }
                    }
                    // One-sided bilinear subgradient of the containing cell.
                    gsx += g * ((1.0 - ay) * (v(1) - v(0)) + ay * (v(3) - v(2)));
                    gsy += g * ((1.0 - ax) * (v(2) - v(0)) + ax * (v(3) - v(1)));
                }
            }
            if gsx != 0.0 || gsy != 0.0 {
                // sx = (m0·x + m1·y + m2)/d with d = m6·x + m7·y + m8.
                let (xf, yf) = (x as f64, y as f64);
                let inv_d = 1.0 / t.denom;
                g_smat[0] += gsx * xf * inv_d;
                g_smat[1] += gsx * yf * inv_d;
                g_smat[2] += gsx * inv_d;
                g_smat[3] += gsy * xf * inv_d;
                g_smat[4] += gsy * yf * inv_d;
                g_smat[5] += gsy * inv_d;
                let gd = -(gsx * t.sx + gsy * t.sy) * inv_d;
                g_smat[6] += gd * xf;
                g_smat[7] += gd * yf;
                g_smat[8] += gd;
            }
        }
    }
    (g_input, g_smat)
}

/// Warps an NCHW tensor by `h`: output `(x, y)` samples the input at
/// `inverse(h)·(x, y)`.
pub fn warp<E: Element>(input: &Tensor<E>, h: &Homography) -> Result<WarpResult<E>, GeometryError> {
    let inv = h.inverse()?;
    Ok(warp_with_matrix(input, &inv.entries_row_major()))
}

/// Warps using an explicit sampling matrix (output coordinates to input
/// coordinates, row-major).
pub fn warp_with_matrix<E: Element>(input: &Tensor<E>, smat: &[f64; 9]) -> WarpResult<E> {
    let (n, c, h, w) = input.dims4("warp").expect("warp expects an NCHW tensor");
    warp_into(input, smat, h, w, n, c)
}

/// Warps into an output of a different spatial size (resampling).
pub fn warp_resize<E: Element>(
    input: &Tensor<E>,
    smat: &[f64; 9],
    out_h: usize,
    out_w: usize,
) -> WarpResult<E> {
    let (n, c, _, _) = input
        .dims4("warp_resize")
        .expect("warp expects an NCHW tensor");
    warp_into(input, smat, out_h, out_w, n, c)
}

fn warp_into<E: Element>(
    input: &Tensor<E>,
    smat: &[f64; 9],
    oh: usize,
    ow: usize,
    n: usize,
    c: usize,
) -> WarpResult<E> {
    let (_, _, h, w) = input.dims4("warp").expect("NCHW");
    let geom = SampleGeom { n, c, h, w, oh, ow };
    let (warped, validity) = warp_forward(input.data(), &geom, smat);
    WarpResult {
        warped: Tensor::from_vec(&[n, c, oh, ow], warped).expect("warp output"),
        validity: Tensor::from_vec(&[n, 1, oh, ow], validity).expect("warp validity"),
    }
}

fn entries9_from_var<E: Element>(entries: &Var<'_, E>) -> [f64; 9] {
    debug_assert_eq!(entries.value().numel(), 9, "expected 9 matrix entries");
    core::array::from_fn(|i| entries.value().data()[i].to_f64())
}

/// Differentiable warp on the tape. `inv_entries` holds the 9 row-major
/// entries of the matrix mapping output coordinates to input sampling
/// coordinates (the inverse of the warp homography, as produced by
/// [`inverse_homography_var`]). Returns the warped variable and the constant
/// validity map.
pub fn warp_var<'t, E: Element>(
    input: &Var<'t, E>,
    inv_entries: &Var<'t, E>,
) -> (Var<'t, E>, Tensor<E>) {
    let smat = entries9_from_var(inv_entries);
    let (n, c, h, w) = input.value().dims4("warp").expect("NCHW");
    let geom = SampleGeom { n, c, h, w, oh: h, ow: w };
    let (warped, validity) = warp_forward(input.value().data(), &geom, &smat);
    let value = Tensor::from_vec(&[n, c, h, w], warped).expect("warp output");
    let validity = Tensor::from_vec(&[n, 1, h, w], validity).expect("warp validity");

    let x = input.value().clone();
    let need = [input.requires_grad(), inv_entries.requires_grad()];
    let out = input.tape().record(
        value,
        &[input, inv_entries],
        Box::new(move |g| {
            let geom = SampleGeom { n, c, h, w, oh: h, ow: w };
            let (gx, gm) = warp_backward(g.data(), x.data(), &geom, &smat);
            let gi = need[0].then(|| Tensor::from_vec(&[n, c, h, w], gx).expect("warp grad"));
            let ge = need[1].then(|| {
                Tensor::from_vec(&[9], gm.iter().map(|&v| E::from_f64(v)).collect())
                    .expect("warp grad entries")
            });
            vec![gi, ge]
        }),
    );
    (out, validity)
}

/// Which direction the corner solve maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum SolveDirection {
    /// Canonical corners to displaced corners (the homography itself).
    Forward,
    /// Displaced corners to canonical corners (its exact inverse).
    Inverse,
}

fn solve_var<'t, E: Element>(
    offsets: &Var<'t, E>,
    frame: Frame,
    direction: SolveDirection,
) -> Result<Var<'t, E>, GeometryError> {
    debug_assert_eq!(offsets.value().numel(), 8, "expected 8 offset values");
    let flat: [f64; 8] = core::array::from_fn(|i| offsets.value().data()[i].to_f64());
    let off = CornerOffsets::from_flat(&flat, frame);
    let canonical = frame.corners();
    let displaced = off.displaced_corners();
    let (src, dst) = match direction {
        SolveDirection::Forward => (canonical, displaced),
        SolveDirection::Inverse => (displaced, canonical),
    };
    let h8 = solve_h4(&src, &dst)?;
    let mut entries = [E::zero(); 9];
    for i in 0..8 {
        entries[i] = E::from_f64(h8[i]);
    }
    entries[8] = E::one();
    let value = Tensor::from_vec(&[9], entries.to_vec()).expect("solve entries");

    Ok(offsets.tape().record(
        value,
        &[offsets],
        Box::new(move |g| {
            let g8: [f64; 8] = core::array::from_fn(|i| g.data()[i].to_f64());
            let (g_src, g_dst) = solve_h4_vjp(&src, &dst, &h8, &g8)
                .expect("adjoint solve after a successful forward solve");
            // The displaced corners carry the offsets.
            let g_off = match direction {
                SolveDirection::Forward => g_dst,
                SolveDirection::Inverse => g_src,
            };
            let mut out = [E::zero(); 8];
            for i in 0..4 {
                out[2 * i] = E::from_f64(g_off[i][0]);
                out[2 * i + 1] = E::from_f64(g_off[i][1]);
            }
            vec![Some(Tensor::from_vec(&[8], out.to_vec()).expect("solve grad"))]
        }),
    ))
}

/// Records the 4-point solve: 8 offset values to the 9 row-major entries of
/// the homography mapping canonical corners to displaced ones (`h22 = 1`).
pub fn homography_var<'t, E: Element>(
    offsets: &Var<'t, E>,
    frame: Frame,
) -> Result<Var<'t, E>, GeometryError> {
    solve_var(offsets, frame, SolveDirection::Forward)
}

/// Records the reverse solve: entries of the exact inverse homography,
/// suitable as the sampling matrix of [`warp_var`]. Solving the swapped
/// system avoids differentiating through a matrix inversion.
pub fn inverse_homography_var<'t, E: Element>(
    offsets: &Var<'t, E>,
    frame: Frame,
) -> Result<Var<'t, E>, GeometryError> {
    solve_var(offsets, frame, SolveDirection::Inverse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ramp_image(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[1, 1, h, w], |i| {
            let (y, x) = (i / w, i % w);
            0.1 * x as f64 + 0.03 * y as f64
        })
    }

    /// Smooth test image: sum of a few low-frequency sinusoids.
    fn smooth_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.random_range(0.02..0.12),
                    rng.random_range(0.02..0.12),
                    rng.random_range(0.0..core::f64::consts::TAU),
                    rng.random_range(0.1..0.3),
                )
            })
            .collect();
        Tensor::from_fn(&[1, 1, h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.5 + waves
                .iter()
                .map(|(fx, fy, p, a)| a * (fx * x + fy * y + p).sin())
                .sum::<f64>()
                * 0.5
        })
    }

    #[test]
    fn identity_warp_is_bit_exact_with_full_validity() {
        let img = ramp_image(5, 7);
        let res = warp(&img, &Homography::identity()).unwrap();
        assert_eq!(res.warped, img);
        assert!(res.validity.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integer_translation_shifts_and_invalidates_shifted_in_column() {
        // h maps x -> x + 1, so sampling happens at x - 1: column 0 pulls
        // from outside the frame and is the invalid one.
        let img = ramp_image(4, 6);
        let res = warp(&img, &Homography::translation(1.0, 0.0)).unwrap();
        for y in 0..4 {
            for x in 1..6 {
                let got = res.warped.data()[y * 6 + x];
                let expect = img.data()[y * 6 + x - 1];
                assert_eq!(got, expect);
                assert_eq!(res.validity.data()[y * 6 + x], 1.0);
            }
            assert_eq!(res.validity.data()[y * 6], 0.0);
        }
        // The mirrored translation invalidates the rightmost column instead.
        let res = warp(&img, &Homography::translation(-1.0, 0.0)).unwrap();
        for y in 0..4 {
            assert_eq!(res.validity.data()[y * 6 + 5], 0.0);
            assert_eq!(res.validity.data()[y * 6], 1.0);
        }
    }

    #[test]
    fn bilinear_center_of_2x2_is_the_mean() {
        let img = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // Sample output pixel (0,0) at input (0.5, 0.5).
        let smat = [1.0, 0.0, 0.5, 0.0, 1.0, 0.5, 0.0, 0.0, 1.0];
        let res = warp_with_matrix(&img, &smat);
        assert!((res.warped.data()[0] - 2.5).abs() < 1e-15);
        assert_eq!(res.validity.data()[0], 1.0);
    }

    #[test]
    fn warped_values_stay_within_input_range_where_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let img = smooth_image(16, 16, trial);
            let offsets: [f64; 8] = core::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let off = CornerOffsets::from_flat(&offsets, Frame::new(16, 16));
            let h = crate::geometry::offsets_to_homography(&off).unwrap();
            let res = warp(&img, &h).unwrap();
            let lo = img.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = img.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for (v, m) in res.warped.data().iter().zip(res.validity.data()) {
                if *m == 1.0 {
                    assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn composed_integer_translations_match_single_warp_on_interior() {
        let img = ramp_image(8, 8);
        let ta = Homography::translation(2.0, 0.0);
        let tb = Homography::translation(0.0, 1.0);
        let once = warp(&warp(&img, &ta).unwrap().warped, &tb).unwrap().warped;
        let composed = warp(&img, &tb.compose(&ta).unwrap()).unwrap().warped;
        for y in 2..8 {
            for x in 3..8 {
                let i = y * 8 + x;
                assert!((once.data()[i] - composed.data()[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        // d mean(warp) / d offsets through the inverse solve, and d/d input.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let frame = Frame::new(12, 12);
        for trial in 0..20 {
            let img = smooth_image(12, 12, 100 + trial);
            let offsets: [f64; 8] = core::array::from_fn(|_| rng.random_range(-2.0..2.0));
            let off_t = Tensor::from_vec(&[8], offsets.to_vec()).unwrap();

            let tape: Tape = Tape::new();
            let ov = tape.var(off_t.clone());
            let iv = tape.var(img.clone());
            let inv = inverse_homography_var(&ov, frame).unwrap();
            let (warped, _) = warp_var(&iv, &inv);
            let loss = warped.mean();
            tape.backward(&loss).unwrap();

            let forward = |inputs: &[Tensor<f64>]| -> f64 {
                let flat: [f64; 8] = core::array::from_fn(|i| inputs[0].data()[i]);
                let off = CornerOffsets::from_flat(&flat, frame);
                let hinv = crate::geometry::offsets_to_inverse_homography(&off).unwrap();
                let res = warp_with_matrix(&inputs[1], &hinv.entries_row_major());
                res.warped.data().iter().sum::<f64>() / res.warped.numel() as f64
            };
            let inputs = [off_t.clone(), img.clone()];
            crate::gradcheck::check_gradient(forward, &inputs, 0, &ov.grad().unwrap(), 1e-3)
                .unwrap();
            crate::gradcheck::check_gradient(forward, &inputs, 1, &iv.grad().unwrap(), 1e-4)
                .unwrap();
        }
    }

    #[test]
    fn forward_solve_on_tape_matches_pure_geometry() {
        let frame = Frame::new(32, 32);
        let offsets = [1.5, -2.0, 0.5, 1.0, -1.0, 2.5, 2.0, -0.5];
        let tape: Tape = Tape::new();
        let ov = tape.var(Tensor::from_vec(&[8], offsets.to_vec()).unwrap());
        let hv = homography_var(&ov, frame).unwrap();
        let pure =
            crate::geometry::offsets_to_homography(&CornerOffsets::from_flat(&offsets, frame))
                .unwrap();
        for (a, b) in hv.value().data().iter().zip(pure.entries_row_major()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
