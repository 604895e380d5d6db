//! Synthetic image-pair generation with exact ground truth.
//!
//! Pairs are rendered from a procedural canvas larger than the patch: patch_a
//! is an integer crop, patch_b is a bilinear resampling of the same canvas
//! under a random 4-corner-perturbed homography. Wherever the warp stays
//! inside patch_a, `warp(patch_a, gt)` reproduces patch_b bit for bit, which
//! makes the ground truth testable rather than nominal. Five scene categories
//! mirror the evaluation taxonomy: regular (RE), low-texture (LT), low-light
//! (LL), small-foreground (SF) and large-foreground (LF). SF/LF paste an
//! independently translated textured object; LL darkens the scene, adds
//! sensor noise and applies a gain/offset to one patch only.
//!
//! The module also defines the labeled-points annotation text format: one
//! header line `patch_a_path patch_b_path CATEGORY` (paths must not contain
//! whitespace) followed by one `x_a y_a x_b y_b` line per correspondence.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{offsets_to_homography, CornerOffsets, Frame, GeometryError, Homography};
use crate::sampler::warp_resize;
use crate::tensor::Tensor;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid category {0:?} (expected RE, LT, LL, SF or LF)")]
    InvalidCategory(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: <<{content}>>: {detail}")]
    Parse { line: usize, content: String, detail: String },
    #[error("crop {crop:?} does not fit image {image:?}")]
    CropTooLarge { crop: (usize, usize), image: (usize, usize) },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Scene category of a generated pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Regular,
    LowTexture,
    LowLight,
    SmallForeground,
    LargeForeground,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Regular,
        Category::LowTexture,
        Category::LowLight,
        Category::SmallForeground,
        Category::LargeForeground,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Category::Regular => "RE",
            Category::LowTexture => "LT",
            Category::LowLight => "LL",
            Category::SmallForeground => "SF",
            Category::LargeForeground => "LF",
        }
    }

    pub fn parse(s: &str) -> Result<Self, SynthError> {
        match s {
            "RE" => Ok(Category::Regular),
            "LT" => Ok(Category::LowTexture),
            "LL" => Ok(Category::LowLight),
            "SF" => Ok(Category::SmallForeground),
            "LF" => Ok(Category::LargeForeground),
            other => Err(SynthError::InvalidCategory(other.to_string())),
        }
    }

    fn stream_id(self) -> u64 {
        match self {
            Category::Regular => 0,
            Category::LowTexture => 1,
            Category::LowLight => 2,
            Category::SmallForeground => 3,
            Category::LargeForeground => 4,
        }
    }
}

/// Generator configuration. Defaults target 64×64 desk-scale patches with
/// corner perturbations of ±8% of the patch size.
#[derive(Clone, Debug)]
pub struct GenConfig {
    /// (height, width) of the generated patches.
    pub patch_size: (usize, usize),
    /// Corner perturbation range in pixels (uniform in ±this).
    pub perturbation_px: f64,
    /// Scales the number of texture primitives in regular scenes.
    pub texture_richness: f64,
    /// Gain range applied to patch_b only (low-light and illumination pairs).
    pub luminance_gain: (f64, f64),
    /// Offset range applied to patch_b only.
    pub luminance_offset: (f64, f64),
    /// Apply the gain/offset to every category, not just low-light.
    pub illumination_variation: bool,
    /// Mean luminance factor of low-light scenes.
    pub low_light_level: f64,
    /// Texture amplitude of low-texture scenes.
    pub low_texture_amplitude: f64,
    /// Low-texture gradient energy must stay below this fraction of regular.
    pub low_texture_energy_fraction: f64,
    /// Foreground area fraction ranges.
    pub sf_fraction: (f64, f64),
    pub lf_fraction: (f64, f64),
    /// Photometric noise sigma (low-light pairs).
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            patch_size: (64, 64),
            perturbation_px: 0.08 * 64.0,
            texture_richness: 1.0,
            luminance_gain: (0.8, 1.2),
            luminance_offset: (-0.05, 0.05),
            illumination_variation: false,
            low_light_level: 0.15,
            low_texture_amplitude: 0.015,
            low_texture_energy_fraction: 0.05,
            sf_fraction: (0.05, 0.15),
            lf_fraction: (0.25, 0.45),
            noise_level: 0.01,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (h, w) = self.patch_size;
        if h < 8 || w < 8 {
            return Err(SynthError::InvalidConfig(format!(
                "patch size {h}×{w} is too small"
            )));
        }
        if self.perturbation_px < 0.0 || self.noise_level < 0.0 || self.texture_richness < 0.0 {
            return Err(SynthError::InvalidConfig("ranges must be non-negative".into()));
        }
        if self.perturbation_px > (h.min(w) as f64) / 4.0 {
            return Err(SynthError::InvalidConfig(format!(
                "perturbation {} exceeds a quarter of the patch size",
                self.perturbation_px
            )));
        }
        if self.sf_fraction.0 > self.sf_fraction.1 || self.lf_fraction.0 > self.lf_fraction.1 {
            return Err(SynthError::InvalidConfig("fraction ranges must be ordered".into()));
        }
        if self.sf_fraction.1 >= self.lf_fraction.0 {
            return Err(SynthError::InvalidConfig(
                "small-foreground fractions must stay below large-foreground ones".into(),
            ));
        }
        Ok(())
    }
}

/// One synthetic pair with exact supervision.
#[derive(Clone, Debug)]
pub struct PairSample {
    /// Grayscale patches in [0,1], shape 1×1×H×W.
    pub patch_a: Tensor<f64>,
    pub patch_b: Tensor<f64>,
    /// Exact warp from patch_a coordinates to patch_b coordinates.
    pub gt: Homography,
    /// Labeled correspondences (point in a, its exact transfer in b).
    pub gt_points: Vec<([f64; 2], [f64; 2])>,
    /// Footprint of independently moving content on patch_a, 1×1×H×W binary.
    pub dynamic_region: Option<Tensor<f64>>,
    pub category: Category,
}

/// Smooth value-noise field: a coarse uniform grid sampled bilinearly.
struct NoiseField {
    grid: Vec<f64>,
    gw: usize,
    cell: f64,
}

impl NoiseField {
    fn new(rng: &mut ChaCha8Rng, h: usize, w: usize, cell: f64) -> Self {
        let gh = (h as f64 / cell).ceil() as usize + 2;
        let gw = (w as f64 / cell).ceil() as usize + 2;
        let grid = (0..gh * gw).map(|_| rng.random_range(0.0..1.0)).collect();
        Self { grid, gw, cell }
    }

    fn at(&self, y: f64, x: f64) -> f64 {
        let gy = y / self.cell;
        let gx = x / self.cell;
        let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
        let (ay, ax) = (gy - y0 as f64, gx - x0 as f64);
        let v = |r: usize, c: usize| self.grid[r * self.gw + c];
        (1.0 - ay) * ((1.0 - ax) * v(y0, x0) + ax * v(y0, x0 + 1))
            + ay * ((1.0 - ax) * v(y0 + 1, x0) + ax * v(y0 + 1, x0 + 1))
    }
}

fn render_rich_texture(rng: &mut ChaCha8Rng, h: usize, w: usize, richness: f64) -> Vec<f64> {
    let coarse = NoiseField::new(rng, h, w, 9.0);
    let fine = NoiseField::new(rng, h, w, 3.5);
    let gx = rng.random_range(-0.3..0.3) / w as f64;
    let gy = rng.random_range(-0.3..0.3) / h as f64;
    let mut img = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            img[y * w + x] = 0.55 * coarse.at(y as f64, x as f64)
                + 0.25 * fine.at(y as f64, x as f64)
                + gx * x as f64
                + gy * y as f64
                + 0.15;
        }
    }
    // A few solid primitives give the scene distinct edges.
    let count = (richness * 5.0).round() as usize;
    for _ in 0..count {
        let delta = rng.random_range(-0.3..0.3);
        if rng.random_bool(0.5) {
            let r = rng.random_range(3.0..(h.min(w) as f64 / 4.0));
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            stamp(&mut img, h, w, |y, x| {
                let (dy, dx) = (y - cy, x - cx);
                dy * dy + dx * dx <= r * r
            }, delta);
        } else {
            let rh = rng.random_range(3.0..h as f64 / 3.0);
            let rw = rng.random_range(3.0..w as f64 / 3.0);
            let cy = rng.random_range(0.0..h as f64 - rh);
            let cx = rng.random_range(0.0..w as f64 - rw);
            stamp(&mut img, h, w, |y, x| {
                y >= cy && y < cy + rh && x >= cx && x < cx + rw
            }, delta);
        }
    }
    rescale_into_unit(&mut img, 0.08, 0.92);
    img
}

fn stamp(img: &mut [f64], h: usize, w: usize, inside: impl Fn(f64, f64) -> bool, delta: f64) {
    for y in 0..h {
        for x in 0..w {
            if inside(y as f64, x as f64) {
                img[y * w + x] += delta;
            }
        }
    }
}

fn rescale_into_unit(img: &mut [f64], lo: f64, hi: f64) {
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in img.iter() {
        min = min.min(v);
        max = max.max(v);
    }
    let span = (max - min).max(1e-9);
    for v in img.iter_mut() {
        *v = lo + (hi - lo) * (*v - min) / span;
    }
}

/// Mean squared forward-difference magnitude; the testable notion of
/// texture richness.
pub fn gradient_energy(img: &Tensor<f64>) -> f64 {
    let (_, _, h, w) = img.dims4("gradient_energy").expect("NCHW");
    let d = img.data();
    let mut acc = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let v = d[y * w + x];
            let dx = d[y * w + x + 1] - v;
            let dy = d[(y + 1) * w + x] - v;
            acc += dx * dx + dy * dy;
        }
    }
    acc / ((h - 1) * (w - 1)) as f64
}

fn per_sample_rng(cfg: &GenConfig, category: Category, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index * 8 + category.stream_id());
    rng
}

/// Generates one pair. Pure in `(cfg, category, index)`: the same arguments
/// always produce a bit-identical sample.
pub fn generate_pair(
    cfg: &GenConfig,
    category: Category,
    index: u64,
) -> Result<PairSample, SynthError> {
    cfg.validate()?;
    let mut rng = per_sample_rng(cfg, category, index);
    let (h, w) = cfg.patch_size;
    let margin = cfg.perturbation_px.ceil() as usize + 2;
    let (ch, cw) = (h + 2 * margin, w + 2 * margin);

    // Canvas in patch coordinates shifted by `margin`.
    let mut canvas = match category {
        Category::LowTexture => {
            let field = NoiseField::new(&mut rng, ch, cw, 11.0);
            let amp = cfg.low_texture_amplitude;
            let mut img = vec![0.0; ch * cw];
            for y in 0..ch {
                for x in 0..cw {
                    img[y * cw + x] = 0.5 + amp * (field.at(y as f64, x as f64) - 0.5) * 2.0;
                }
            }
            img
        }
        _ => render_rich_texture(&mut rng, ch, cw, cfg.texture_richness),
    };
    if category == Category::LowLight {
        for v in canvas.iter_mut() {
            *v *= cfg.low_light_level;
        }
    }
    let canvas = Tensor::from_vec(&[1, 1, ch, cw], canvas).expect("canvas");

    // Ground-truth homography in patch coordinates.
    let r = cfg.perturbation_px;
    let frame = Frame::new(w, h);
    let offsets: [[f64; 2]; 4] = core::array::from_fn(|_| {
        if r > 0.0 {
            [rng.random_range(-r..r), rng.random_range(-r..r)]
        } else {
            [0.0, 0.0]
        }
    });
    let gt = offsets_to_homography(&CornerOffsets::new(offsets, frame))?;

    // patch_a: integer crop. patch_b: resample the canvas through gt⁻¹.
    let shift = Homography::translation(margin as f64, margin as f64);
    let patch_a = warp_resize(&canvas, &shift.entries_row_major(), h, w).warped;
    let sample_b = shift.compose(&gt.inverse()?)?;
    let mut patch_b = warp_resize(&canvas, &sample_b.entries_row_major(), h, w)
        .warped
        .data()
        .to_vec();
    let mut patch_a = patch_a.data().to_vec();

    // Foreground object with its own translation on top of the scene motion.
    let mut dynamic_region = None;
    if matches!(category, Category::SmallForeground | Category::LargeForeground) {
        let range = if category == Category::SmallForeground {
            cfg.sf_fraction
        } else {
            cfg.lf_fraction
        };
        let fraction = rng.random_range(range.0..=range.1);
        let radius = (fraction * (h * w) as f64 / core::f64::consts::PI).sqrt();
        let cy = rng.random_range(radius + 1.0..h as f64 - radius - 1.0);
        let cx = rng.random_range(radius + 1.0..w as f64 - radius - 1.0);
        let t = loop {
            let t = [rng.random_range(-r..r), rng.random_range(-r..r)];
            if r < 1.5 || (t[0] * t[0] + t[1] * t[1]) >= 1.0 {
                break t;
            }
        };
        let center_b = gt.apply([cx, cy])?;
        let (bx, by) = (center_b[0] + t[0], center_b[1] + t[1]);

        let base = if rng.random_bool(0.5) {
            rng.random_range(0.05..0.25)
        } else {
            rng.random_range(0.75..0.95)
        };
        let tex = NoiseField::new(&mut rng, (2.0 * radius) as usize + 4, (2.0 * radius) as usize + 4, 4.0);
        let level = if category == Category::LowLight { cfg.low_light_level } else { 1.0 };
        let mut mask = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64, x as f64);
                let value_at = |dy: f64, dx: f64| {
                    (base + 0.25 * (tex.at(dy + radius, dx + radius) - 0.5)).clamp(0.02, 0.98)
                        * level
                };
                let (day, dax) = (yf - cy, xf - cx);
                if day * day + dax * dax <= radius * radius {
                    patch_a[y * w + x] = value_at(day, dax);
                    mask[y * w + x] = 1.0;
                }
                let (dby, dbx) = (yf - by, xf - bx);
                if dby * dby + dbx * dbx <= radius * radius {
                    patch_b[y * w + x] = value_at(dby, dbx);
                }
            }
        }
        dynamic_region = Some(Tensor::from_vec(&[1, 1, h, w], mask).expect("mask"));
    }

    // Photometric perturbations: gain/offset on patch_b only, noise on both.
    if category == Category::LowLight || cfg.illumination_variation {
        let gain = rng.random_range(cfg.luminance_gain.0..=cfg.luminance_gain.1);
        let offset = rng.random_range(cfg.luminance_offset.0..=cfg.luminance_offset.1);
        for v in patch_b.iter_mut() {
            *v = (*v * gain + offset).clamp(0.0, 1.0);
        }
    }
    if category == Category::LowLight && cfg.noise_level > 0.0 {
        let mut add_noise = |buf: &mut Vec<f64>| {
            for v in buf.iter_mut() {
                let (u1, u2): (f64, f64) =
                    (rng.random_range(1e-12..1.0), rng.random_range(0.0..1.0));
                let n = (-2.0 * u1.ln()).sqrt() * (core::f64::consts::TAU * u2).cos();
                *v = (*v + cfg.noise_level * n).clamp(0.0, 1.0);
            }
        };
        add_noise(&mut patch_a);
        add_noise(&mut patch_b);
    }

    // 6–8 labeled points on a jittered grid, outside the dynamic region,
    // transferring inside patch_b.
    let n_points = rng.random_range(6..=8usize);
    let mut gt_points = Vec::new();
    let grid = 3usize;
    let (cell_h, cell_w) = (h as f64 / grid as f64, w as f64 / grid as f64);
    let mut cells: Vec<usize> = (0..grid * grid).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    'cells: for &cell in &cells {
        if gt_points.len() >= n_points {
            break;
        }
        let (cy, cx) = (cell / grid, cell % grid);
        for _ in 0..12 {
            let p = [
                (cx as f64 + rng.random_range(0.2..0.8)) * cell_w,
                (cy as f64 + rng.random_range(0.2..0.8)) * cell_h,
            ];
            if let Some(mask) = &dynamic_region {
                let (px, py) = (p[0].round() as usize, p[1].round() as usize);
                if mask.data()[py.min(h - 1) * w + px.min(w - 1)] > 0.0 {
                    continue;
                }
            }
            let q = gt.apply(p)?;
            if q[0] >= 0.0 && q[0] <= (w - 1) as f64 && q[1] >= 0.0 && q[1] <= (h - 1) as f64 {
                gt_points.push((p, q));
                continue 'cells;
            }
        }
    }

    Ok(PairSample {
        patch_a: Tensor::from_vec(&[1, 1, h, w], patch_a).expect("patch_a"),
        patch_b: Tensor::from_vec(&[1, 1, h, w], patch_b).expect("patch_b"),
        gt,
        gt_points,
        dynamic_region,
        category,
    })
}

/// Aligned random crops at one uniformly drawn location.
pub fn random_crop_pair(
    image_a: &Tensor<f64>,
    image_b: &Tensor<f64>,
    crop: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f64>, Tensor<f64>), SynthError> {
    let (_, _, ha, wa) = image_a.dims4("random_crop_pair").expect("NCHW");
    let (_, _, hb, wb) = image_b.dims4("random_crop_pair").expect("NCHW");
    let (ch, cw) = crop;
    let (h, w) = (ha.min(hb), wa.min(wb));
    if ch > h || cw > w {
        return Err(SynthError::CropTooLarge { crop, image: (h, w) });
    }
    let y0 = rng.random_range(0..=h - ch);
    let x0 = rng.random_range(0..=w - cw);
    let cut = |img: &Tensor<f64>, width: usize| {
        let mut out = Vec::with_capacity(ch * cw);
        for y in 0..ch {
            let start = (y0 + y) * width + x0;
            out.extend_from_slice(&img.data()[start..start + cw]);
        }
        Tensor::from_vec(&[1, 1, ch, cw], out).expect("crop")
    };
    Ok((cut(image_a, wa), cut(image_b, wb)))
}

/// A labeled pair reference: image paths, category, correspondences.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub patch_a: String,
    pub patch_b: String,
    pub category: Category,
    pub points: Vec<([f64; 2], [f64; 2])>,
}

/// Serializes an annotation; floats print in shortest round-trip form.
pub fn write_annotation(ann: &Annotation) -> String {
    let mut out = format!("{} {} {}\n", ann.patch_a, ann.patch_b, ann.category.tag());
    for (pa, pb) in &ann.points {
        out += &format!("{} {} {} {}\n", pa[0], pa[1], pb[0], pb[1]);
    }
    out
}

/// Parses the annotation text format; errors carry the 1-based line number.
pub fn parse_annotation(text: &str) -> Result<Annotation, SynthError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| SynthError::Parse {
        line: 1,
        content: String::new(),
        detail: "missing header line".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(SynthError::Parse {
            line: 1,
            content: header.to_string(),
            detail: format!("expected `patch_a patch_b CATEGORY`, got {} fields", fields.len()),
        });
    }
    let category = Category::parse(fields[2]).map_err(|e| SynthError::Parse {
        line: 1,
        content: header.to_string(),
        detail: format!("{e}"),
    })?;
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let nums: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let nums = nums.map_err(|e| SynthError::Parse {
            line: i + 1,
            content: line.to_string(),
            detail: format!("{e}"),
        })?;
        if nums.len() != 4 {
            return Err(SynthError::Parse {
                line: i + 1,
                content: line.to_string(),
                detail: format!("expected 4 coordinates, got {}", nums.len()),
            });
        }
        points.push(([nums[0], nums[1]], [nums[2], nums[3]]));
    }
    Ok(Annotation {
        patch_a: fields[0].to_string(),
        patch_b: fields[1].to_string(),
        category,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::warp;

    fn cfg() -> GenConfig {
        GenConfig { seed: 7, ..GenConfig::default() }
    }

    /// Chebyshev dilation of a binary map by `radius` pixels.
    fn dilate(mask: &Tensor<f64>, radius: usize) -> Tensor<f64> {
        let (_, _, h, w) = mask.dims4("dilate").unwrap();
        let d = mask.data();
        Tensor::from_fn(&[1, 1, h, w], |i| {
            let (y, x) = (i / w, i % w);
            let y0 = y.saturating_sub(radius);
            let x0 = x.saturating_sub(radius);
            for yy in y0..=(y + radius).min(h - 1) {
                for xx in x0..=(x + radius).min(w - 1) {
                    if d[yy * w + xx] > 0.0 {
                        return 1.0;
                    }
                }
            }
            0.0
        })
    }

    #[test]
    fn zero_perturbation_gives_identity_and_equal_static_patches() {
        let mut c = cfg();
        c.perturbation_px = 0.0;
        let s = generate_pair(&c, Category::Regular, 0).unwrap();
        assert!(s.gt.frobenius_distance(&Homography::identity()) < 1e-12);
        assert_eq!(s.patch_a, s.patch_b);
    }

    #[test]
    fn same_seed_and_index_rerenders_bit_identically() {
        for cat in Category::ALL {
            let a = generate_pair(&cfg(), cat, 3).unwrap();
            let b = generate_pair(&cfg(), cat, 3).unwrap();
            assert_eq!(a.patch_a, b.patch_a);
            assert_eq!(a.patch_b, b.patch_b);
            assert_eq!(a.gt_points, b.gt_points);
            let c = generate_pair(&cfg(), cat, 4).unwrap();
            assert_ne!(a.patch_a, c.patch_a);
        }
    }

    #[test]
    fn static_region_of_patch_b_is_the_exact_warp_of_patch_a() {
        // Photometric categories (LL) excluded; SF/LF exclude the dilated
        // footprint of the moving object on both sides.
        for cat in [
            Category::Regular,
            Category::LowTexture,
            Category::SmallForeground,
            Category::LargeForeground,
        ] {
            for index in 0..5 {
                let c = cfg();
                let s = generate_pair(&c, cat, index).unwrap();
                let res = warp(&s.patch_a, &s.gt).unwrap();
                let excluded = s.dynamic_region.as_ref().map(|m| {
                    let warped = warp(&dilate(m, 2), &s.gt).unwrap().warped;
                    dilate(
                        &warped.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                        c.perturbation_px.ceil() as usize + 3,
                    )
                });
                let mut worst = 0.0f64;
                let mut count = 0;
                for i in 0..res.warped.numel() {
                    if res.validity.data()[i] != 1.0 {
                        continue;
                    }
                    if let Some(ex) = &excluded {
                        if ex.data()[i] > 0.0 {
                            continue;
                        }
                    }
                    worst = worst.max((res.warped.data()[i] - s.patch_b.data()[i]).abs());
                    count += 1;
                }
                assert!(count > 0, "no static pixels compared");
                assert!(worst < 1e-6, "{cat:?} sample {index}: worst static diff {worst}");
            }
        }
    }

    #[test]
    fn gt_points_transfer_exactly_and_avoid_dynamic_content() {
        for cat in Category::ALL {
            let s = generate_pair(&cfg(), cat, 1).unwrap();
            assert!(s.gt_points.len() >= 4, "{cat:?}: {} points", s.gt_points.len());
            for (pa, pb) in &s.gt_points {
                let q = s.gt.apply(*pa).unwrap();
                let err = ((q[0] - pb[0]).powi(2) + (q[1] - pb[1]).powi(2)).sqrt();
                assert!(err < 1e-6);
                if let Some(mask) = &s.dynamic_region {
                    let (w, h) = (64usize, 64usize);
                    let idx = (pa[1].round() as usize).min(h - 1) * w
                        + (pa[0].round() as usize).min(w - 1);
                    assert_eq!(mask.data()[idx], 0.0, "{cat:?}: point inside dynamic region");
                }
            }
        }
    }

    #[test]
    fn pure_translation_draw_transfers_points_by_t() {
        // Degenerate perturbation keeps gt at identity; points transfer as-is.
        let mut c = cfg();
        c.perturbation_px = 0.0;
        let s = generate_pair(&c, Category::Regular, 9).unwrap();
        for (pa, pb) in &s.gt_points {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn small_foreground_area_fraction_is_respected() {
        let mut c = cfg();
        c.patch_size = (128, 128);
        c.perturbation_px = 0.08 * 128.0;
        c.sf_fraction = (0.1, 0.1);
        let s = generate_pair(&c, Category::SmallForeground, 2).unwrap();
        let area: f64 = s.dynamic_region.as_ref().unwrap().data().iter().sum();
        let fraction = area / (128.0 * 128.0);
        assert!(
            (0.05..=0.15).contains(&fraction),
            "dynamic fraction {fraction}"
        );
    }

    #[test]
    fn low_texture_has_a_fraction_of_regular_gradient_energy() {
        let c = cfg();
        let mut re = 0.0;
        let mut lt = 0.0;
        for index in 0..8 {
            re += gradient_energy(&generate_pair(&c, Category::Regular, index).unwrap().patch_a);
            lt += gradient_energy(&generate_pair(&c, Category::LowTexture, index).unwrap().patch_a);
        }
        assert!(
            lt < c.low_texture_energy_fraction * re,
            "LT energy {lt} vs RE energy {re}"
        );
    }

    #[test]
    fn values_stay_inside_unit_interval() {
        for cat in Category::ALL {
            let s = generate_pair(&cfg(), cat, 5).unwrap();
            for v in s.patch_a.data().iter().chain(s.patch_b.data()) {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn crops_are_aligned_seeded_and_uniform() {
        use rand::SeedableRng;
        let img_a = Tensor::from_fn(&[1, 1, 7, 7], |i| i as f64);
        let img_b = img_a.map(|v| v + 100.0);

        // Full-size crop is the identity crop.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (ca, cb) = random_crop_pair(&img_a, &img_b, (7, 7), &mut rng).unwrap();
        assert_eq!(ca, img_a);
        assert_eq!(cb, img_b);

        // Seeded reproducibility.
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a1 = random_crop_pair(&img_a, &img_b, (4, 4), &mut r1).unwrap();
        let a2 = random_crop_pair(&img_a, &img_b, (4, 4), &mut r2).unwrap();
        assert_eq!(a1.0, a2.0);

        // Oversized crop errors.
        assert!(matches!(
            random_crop_pair(&img_a, &img_b, (9, 9), &mut r1),
            Err(SynthError::CropTooLarge { .. })
        ));

        // Chi-square uniformity over the 16 possible 4×4 positions:
        // 15 degrees of freedom, critical value 30.578 at α = 0.01.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 16];
        let draws = 10_000;
        for _ in 0..draws {
            let (ca, _) = random_crop_pair(&img_a, &img_b, (4, 4), &mut rng).unwrap();
            let first = ca.data()[0] as usize;
            let (y0, x0) = (first / 7, first % 7);
            counts[y0 * 4 + x0] += 1;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 30.578, "chi-square statistic {chi2}");
    }

    #[test]
    fn annotation_round_trips_exactly() {
        let ann = Annotation {
            patch_a: "pairs/000_a.png".into(),
            patch_b: "pairs/000_b.png".into(),
            category: Category::SmallForeground,
            points: vec![
                ([1.5, 2.25], [3.125, 4.0625]),
                ([0.1, 0.2], [0.30000000000000004, 61.7]),
            ],
        };
        let text = write_annotation(&ann);
        assert_eq!(parse_annotation(&text).unwrap(), ann);

        // Header-only file reads back empty.
        let empty = Annotation { points: Vec::new(), ..ann.clone() };
        assert_eq!(parse_annotation(&write_annotation(&empty)).unwrap(), empty);
    }

    #[test]
    fn malformed_coordinate_names_its_line() {
        let text = "a.png b.png RE\n1.0 2.0 x 4.0\n";
        match parse_annotation(text) {
            Err(SynthError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_cat = "a.png b.png XX\n";
        assert!(matches!(parse_annotation(bad_cat), Err(SynthError::Parse { line: 1, .. })));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut c = cfg();
        c.sf_fraction = (0.3, 0.4);
        c.lf_fraction = (0.25, 0.45);
        assert!(matches!(
            generate_pair(&c, Category::Regular, 0),
            Err(SynthError::InvalidConfig(_))
        ));
    }
}
