//! Artificial face manipulations used as the positive class of the
//! manipulation-classification pretext task: horizontal eye flip, horizontal
//! and vertical mouth flip, and a global piecewise-affine warp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageRGB, LandmarkSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ManipulationError {
    #[error("landmark region has zero area inside the frame")]
    DegenerateRegion,
    #[error("mask is {mask_h}x{mask_w} but image is {img_h}x{img_w}")]
    DimensionMismatch {
        mask_h: usize,
        mask_w: usize,
        img_h: usize,
        img_w: usize,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("part flips need landmarks")]
    MissingLandmarks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManipulationKind {
    EyeFlipH,
    MouthFlipH,
    MouthFlipV,
    PiecewiseAffine,
}

impl ManipulationKind {
    pub const ALL: [ManipulationKind; 4] = [
        ManipulationKind::EyeFlipH,
        ManipulationKind::MouthFlipH,
        ManipulationKind::MouthFlipV,
        ManipulationKind::PiecewiseAffine,
    ];

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..Self::ALL.len())]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacePart {
    Eyes,
    Mouth,
}

impl FacePart {
    /// 0-indexed positions in the 68-point annotation.
    pub fn landmark_range(self) -> std::ops::Range<usize> {
        match self {
            FacePart::Eyes => 36..48,
            FacePart::Mouth => 48..68,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManipulationParams {
    /// Mask dilation as a fraction of the part's bounding-box diagonal.
    pub margin_frac: f64,
    /// Width in pixels of the linear blend ramp; 0 is a hard mask.
    pub blend_band: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Control-point jitter as a fraction of the cell size.
    pub warp_scale: f64,
}

impl Default for ManipulationParams {
    fn default() -> Self {
        Self {
            margin_frac: 0.05,
            blend_band: 3,
            grid_rows: 4,
            grid_cols: 4,
            warp_scale: 0.03,
        }
    }
}

/// Binary mask over the image grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

/// Inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn bbox(&self) -> Option<BBox> {
        let mut b: Option<BBox> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    b = Some(match b {
                        None => BBox {
                            x0: x,
                            y0: y,
                            x1: x,
                            y1: y,
                        },
                        Some(b) => BBox {
                            x0: b.x0.min(x),
                            y0: b.y0.min(y),
                            x1: b.x1.max(x),
                            y1: b.y1.max(y),
                        },
                    });
                }
            }
        }
        b
    }

    /// Union with its own mirror image about the bounding-box centre line.
    pub fn symmetrized(&self, axis: FlipAxis) -> Self {
        let Some(b) = self.bbox() else {
            return self.clone();
        };
        let mut out = self.clone();
        for y in b.y0..=b.y1 {
            for x in b.x0..=b.x1 {
                if self.get(y, x) {
                    let (my, mx) = mirror(b, axis, y, x);
                    out.set(my, mx, true);
                }
            }
        }
        out
    }
}

#[inline]
fn mirror(b: BBox, axis: FlipAxis, y: usize, x: usize) -> (usize, usize) {
    match axis {
        FlipAxis::Horizontal => (y, b.x0 + b.x1 - x),
        FlipAxis::Vertical => (b.y0 + b.y1 - y, x),
    }
}

type Pt = (f64, f64);

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
fn convex_hull(points: &[Pt]) -> Vec<Pt> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Pt> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Pt> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Filled convex hull of a part's landmarks, dilated by `margin_frac` of the
/// part's bounding-box diagonal and clamped to the frame. Pixel `(x, y)` is
/// sampled at its integer coordinates.
pub fn region_mask(
    landmarks: &LandmarkSet,
    part: FacePart,
    height: usize,
    width: usize,
    margin_frac: f64,
) -> Result<Mask, ManipulationError> {
    let pts: Vec<Pt> = landmarks.points()[part.landmark_range()].to_vec();
    let hull = convex_hull(&pts);
    if hull.len() < 3 || polygon_area(&hull) <= 1e-9 {
        return Err(ManipulationError::DegenerateRegion);
    }
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &pts {
        lo = (lo.0.min(p.0), lo.1.min(p.1));
        hi = (hi.0.max(p.0), hi.1.max(p.1));
    }
    let margin = margin_frac.max(0.0) * ((hi.0 - lo.0).powi(2) + (hi.1 - lo.1).powi(2)).sqrt();
    let tol = 1e-9;

    let mut mask = Mask::empty(height, width);
    let range = |a: f64, b: f64, limit: usize| -> Option<(usize, usize)> {
        let start = (a - margin).ceil().max(0.0);
        let end = (b + margin).floor().min(limit as f64 - 1.0);
        (start <= end).then_some((start as usize, end as usize))
    };
    if let (Some((x0, x1)), Some((y0, y1))) = (range(lo.0, hi.0, width), range(lo.1, hi.1, height)) {
        let n = hull.len();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = (x as f64, y as f64);
                let inside = (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= -tol);
                let near = || (0..n).any(|i| segment_distance(p, hull[i], hull[(i + 1) % n]) <= margin + tol);
                if inside || (margin > 0.0 && near()) {
                    mask.set(y, x, true);
                }
            }
        }
    }
    if mask.count() == 0 {
        return Err(ManipulationError::DegenerateRegion);
    }
    Ok(mask)
}

/// Mirrors the masked content about its bounding-box centre line and blends
/// it back with a linear feather.
///
/// The mask is first united with its mirror image so that the operation is
/// an involution for a hard mask. Inside the resulting region the blend
/// weight is `min(d, band) / band`, where `d` is the chessboard distance to
/// the nearest in-frame pixel outside the region. Pixels outside the region
/// are copied unchanged. Arithmetic is integer and rounds half up.
pub fn flip_blend(img: &ImageRGB, mask: &Mask, axis: FlipAxis, band: usize) -> Result<ImageRGB, ManipulationError> {
    if mask.height() != img.height() || mask.width() != img.width() {
        return Err(ManipulationError::DimensionMismatch {
            mask_h: mask.height(),
            mask_w: mask.width(),
            img_h: img.height(),
            img_w: img.width(),
        });
    }
    let Some(b) = mask.bbox() else {
        return Ok(img.clone());
    };
    let region = mask.symmetrized(axis);
    let mut out = img.clone();
    let (h, w) = (img.height() as isize, img.width() as isize);
    for y in b.y0..=b.y1 {
        for x in b.x0..=b.x1 {
            if !region.get(y, x) {
                continue;
            }
            let d = if band == 0 {
                0
            } else {
                let mut d = band;
                for r in 1..band {
                    let ring = (-(r as isize)..=r as isize).any(|dy| {
                        (-(r as isize)..=r as isize).any(|dx| {
                            if dx.abs().max(dy.abs()) != r as isize {
                                return false;
                            }
                            let (yy, xx) = (y as isize + dy, x as isize + dx);
                            yy >= 0 && yy < h && xx >= 0 && xx < w && !region.get(yy as usize, xx as usize)
                        })
                    });
                    if ring {
                        d = r;
                        break;
                    }
                }
                d
            };
            let (my, mx) = mirror(b, axis, y, x);
            let flipped = img.pixel(my, mx);
            if band == 0 {
                out.set_pixel(y, x, flipped);
                continue;
            }
            let orig = img.pixel(y, x);
            let mut px = [0u8; 3];
            for c in 0..3 {
                let v = d * flipped[c] as usize + (band - d) * orig[c] as usize + band / 2;
                px[c] = (v / band) as u8;
            }
            out.set_pixel(y, x, px);
        }
    }
    Ok(out)
}

/// Clamped bilinear sample of channel `c` at real coordinates.
fn sample_bilinear(img: &ImageRGB, sx: f64, sy: f64, c: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let top = lerp(img.get(y0, x0, c) as f64, img.get(y0, x1, c) as f64, fx);
    let bottom = lerp(img.get(y1, x0, c) as f64, img.get(y1, x1, c) as f64, fx);
    lerp(top, bottom, fy)
}

/// Piecewise-affine warp over a jittered `rows x cols` control grid.
///
/// Control points sit on a regular grid spanning the frame; each is offset by
/// i.i.d. uniform jitter in `[-scale * cell, scale * cell]` per axis, drawn
/// row-major from a ChaCha8 stream seeded with `seed`. Every cell is split
/// along its main diagonal. An output pixel's barycentric coordinates in the
/// regular triangle interpolate the jitter, giving its source position, which
/// is sampled bilinearly with clamp-to-edge.
pub fn piecewise_affine(
    img: &ImageRGB,
    rows: usize,
    cols: usize,
    scale: f64,
    seed: u64,
) -> Result<ImageRGB, ManipulationError> {
    if rows < 2 || cols < 2 {
        return Err(ManipulationError::InvalidParams(format!(
            "grid {rows}x{cols} needs at least 2x2"
        )));
    }
    if !(0.0..=0.5).contains(&scale) {
        return Err(ManipulationError::InvalidParams(format!(
            "scale {scale} outside [0, 0.5]"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let cell_w = (w - 1) as f64 / (cols - 1) as f64;
    let cell_h = (h - 1) as f64 / (rows - 1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        let dx = if scale > 0.0 && cell_w > 0.0 {
            rng.random_range(-scale * cell_w..=scale * cell_w)
        } else {
            0.0
        };
        let dy = if scale > 0.0 && cell_h > 0.0 {
            rng.random_range(-scale * cell_h..=scale * cell_h)
        } else {
            0.0
        };
        jitter.push((dx, dy));
    }
    let at = |r: usize, c: usize| jitter[r * cols + c];

    let mut out = img.clone();
    for y in 0..h {
        let v = if cell_h > 0.0 { y as f64 / cell_h } else { 0.0 };
        let ri = (v.floor() as usize).min(rows - 2);
        let fv = v - ri as f64;
        for x in 0..w {
            let u = if cell_w > 0.0 { x as f64 / cell_w } else { 0.0 };
            let ci = (u.floor() as usize).min(cols - 2);
            let fu = u - ci as f64;
            let (d00, d11) = (at(ri, ci), at(ri + 1, ci + 1));
            let (wa, da, wb, db, wc) = if fu >= fv {
                (1.0 - fu, d00, fu - fv, at(ri, ci + 1), fv)
            } else {
                (1.0 - fv, d00, fv - fu, at(ri + 1, ci), fu)
            };
            let sx = x as f64 + (wa * da.0 + wb * db.0 + wc * d11.0);
            let sy = y as f64 + (wa * da.1 + wb * db.1 + wc * d11.1);
            let mut px = [0u8; 3];
            for (c, slot) in px.iter_mut().enumerate() {
                *slot = (sample_bilinear(img, sx, sy, c) + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(y, x, px);
        }
    }
    Ok(out)
}

/// A manipulated image. `label` is always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Manipulated {
    pub image: ImageRGB,
    pub applied: ManipulationKind,
    pub label: u8,
}

pub fn apply_manipulation(
    img: &ImageRGB,
    landmarks: Option<&LandmarkSet>,
    kind: ManipulationKind,
    seed: u64,
    params: &ManipulationParams,
) -> Result<Manipulated, ManipulationError> {
    let flip = |part: FacePart, axis: FlipAxis| -> Result<ImageRGB, ManipulationError> {
        let lm = landmarks.ok_or(ManipulationError::MissingLandmarks)?;
        let mask = region_mask(lm, part, img.height(), img.width(), params.margin_frac)?;
        flip_blend(img, &mask, axis, params.blend_band)
    };
    let image = match kind {
        ManipulationKind::EyeFlipH => flip(FacePart::Eyes, FlipAxis::Horizontal)?,
        ManipulationKind::MouthFlipH => flip(FacePart::Mouth, FlipAxis::Horizontal)?,
        ManipulationKind::MouthFlipV => flip(FacePart::Mouth, FlipAxis::Vertical)?,
        ManipulationKind::PiecewiseAffine => {
            piecewise_affine(img, params.grid_rows, params.grid_cols, params.warp_scale, seed)?
        }
    };
    Ok(Manipulated {
        image,
        applied: kind,
        label: 1,
    })
}

/// Like [`apply_manipulation`], but part flips that cannot be applied
/// (degenerate region, no landmarks) fall back to the piecewise-affine warp.
pub fn manipulate_or_fallback(
    img: &ImageRGB,
    landmarks: Option<&LandmarkSet>,
    kind: ManipulationKind,
    seed: u64,
    params: &ManipulationParams,
) -> Result<Manipulated, ManipulationError> {
    match apply_manipulation(img, landmarks, kind, seed, params) {
        Err(ManipulationError::DegenerateRegion | ManipulationError::MissingLandmarks) => {
            apply_manipulation(img, landmarks, ManipulationKind::PiecewiseAffine, seed, params)
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageRGB {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                data.extend([(x * 7 + y) as u8, (y * 5) as u8, ((x * y) % 251) as u8]);
            }
        }
        ImageRGB::new(h, w, data).unwrap()
    }

    fn landmarks_with(part: FacePart, pts: &[(f64, f64)]) -> LandmarkSet {
        let mut all = vec![(20.0, 20.0); 68];
        for (slot, p) in all[part.landmark_range()].iter_mut().zip(pts.iter().cycle()) {
            *slot = *p;
        }
        LandmarkSet::new(all).unwrap()
    }

    #[test]
    fn collapsed_mouth_is_degenerate() {
        let lm = landmarks_with(FacePart::Mouth, &[(10.0, 10.0)]);
        assert_eq!(
            region_mask(&lm, FacePart::Mouth, 32, 32, 0.05),
            Err(ManipulationError::DegenerateRegion)
        );
    }

    #[test]
    fn rectangle_hull_with_zero_margin() {
        let lm = landmarks_with(
            FacePart::Mouth,
            &[(10.0, 20.0), (30.0, 20.0), (30.0, 25.0), (10.0, 25.0)],
        );
        let mask = region_mask(&lm, FacePart::Mouth, 40, 40, 0.0).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                let expect = (10..=30).contains(&x) && (20..=25).contains(&y);
                assert_eq!(mask.get(y, x), expect, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn region_outside_frame_is_degenerate() {
        let lm = landmarks_with(FacePart::Eyes, &[(100.0, 100.0), (120.0, 100.0), (110.0, 110.0)]);
        assert_eq!(
            region_mask(&lm, FacePart::Eyes, 32, 32, 0.05),
            Err(ManipulationError::DegenerateRegion)
        );
    }

    #[test]
    fn margin_dilates() {
        let lm = landmarks_with(
            FacePart::Mouth,
            &[(10.0, 10.0), (20.0, 10.0), (20.0, 20.0), (10.0, 20.0)],
        );
        let tight = region_mask(&lm, FacePart::Mouth, 40, 40, 0.0).unwrap();
        let loose = region_mask(&lm, FacePart::Mouth, 40, 40, 0.1).unwrap();
        assert!(loose.count() > tight.count());
        assert!(loose.get(15, 9) && !tight.get(15, 9));
    }

    #[test]
    fn hard_double_flip_is_identity() {
        let img = gradient_image(24, 30);
        let lm = landmarks_with(FacePart::Eyes, &[(4.0, 5.0), (17.0, 3.0), (21.0, 12.0), (6.0, 15.0)]);
        let mask = region_mask(&lm, FacePart::Eyes, 24, 30, 0.05).unwrap();
        for axis in [FlipAxis::Horizontal, FlipAxis::Vertical] {
            let once = flip_blend(&img, &mask, axis, 0).unwrap();
            assert_ne!(once, img);
            assert_eq!(flip_blend(&once, &mask, axis, 0).unwrap(), img);
        }
    }

    #[test]
    fn empty_mask_and_uniform_image() {
        let img = gradient_image(10, 10);
        assert_eq!(
            flip_blend(&img, &Mask::empty(10, 10), FlipAxis::Vertical, 3).unwrap(),
            img
        );
        let flat = ImageRGB::filled(16, 16, [90, 20, 200]).unwrap();
        let lm = landmarks_with(FacePart::Mouth, &[(3.0, 3.0), (12.0, 4.0), (9.0, 13.0)]);
        let mask = region_mask(&lm, FacePart::Mouth, 16, 16, 0.05).unwrap();
        assert_eq!(flip_blend(&flat, &mask, FlipAxis::Horizontal, 3).unwrap(), flat);
    }

    #[test]
    fn flip_rejects_mismatched_mask() {
        let img = gradient_image(10, 10);
        assert!(matches!(
            flip_blend(&img, &Mask::empty(10, 11), FlipAxis::Horizontal, 3),
            Err(ManipulationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn feathered_flip_is_local() {
        let img = gradient_image(32, 32);
        let lm = landmarks_with(
            FacePart::Mouth,
            &[(8.0, 18.0), (24.0, 18.0), (20.0, 26.0), (11.0, 27.0)],
        );
        let mask = region_mask(&lm, FacePart::Mouth, 32, 32, 0.05).unwrap();
        let region = mask.symmetrized(FlipAxis::Vertical);
        let out = flip_blend(&img, &mask, FlipAxis::Vertical, 3).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if !region.get(y, x) {
                    assert_eq!(out.pixel(y, x), img.pixel(y, x));
                }
            }
        }
        assert_ne!(out, img);
    }

    #[test]
    fn warp_zero_scale_is_identity() {
        let img = gradient_image(17, 23);
        assert_eq!(piecewise_affine(&img, 4, 4, 0.0, 99).unwrap(), img);
        assert_eq!(piecewise_affine(&img, 2, 5, 0.0, 1).unwrap(), img);
    }

    #[test]
    fn warp_is_seeded() {
        let img = gradient_image(20, 20);
        let a = piecewise_affine(&img, 4, 4, 0.3, 7).unwrap();
        let b = piecewise_affine(&img, 4, 4, 0.3, 7).unwrap();
        let c = piecewise_affine(&img, 4, 4, 0.3, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, img);
    }

    #[test]
    fn warp_of_uniform_image() {
        let flat = ImageRGB::filled(12, 9, [1, 128, 255]).unwrap();
        assert_eq!(piecewise_affine(&flat, 3, 5, 0.5, 3).unwrap(), flat);
    }

    #[test]
    fn warp_rejects_bad_params() {
        let img = gradient_image(8, 8);
        assert!(piecewise_affine(&img, 1, 4, 0.1, 0).is_err());
        assert!(piecewise_affine(&img, 4, 4, 0.6, 0).is_err());
        assert!(piecewise_affine(&img, 4, 4, f64::NAN, 0).is_err());
    }

    #[test]
    fn fallback_for_collapsed_eyes() {
        let img = gradient_image(20, 20);
        let lm = landmarks_with(FacePart::Eyes, &[(5.0, 5.0)]);
        let params = ManipulationParams::default();
        assert!(apply_manipulation(&img, Some(&lm), ManipulationKind::EyeFlipH, 1, &params).is_err());
        let m = manipulate_or_fallback(&img, Some(&lm), ManipulationKind::EyeFlipH, 1, &params).unwrap();
        assert_eq!(m.applied, ManipulationKind::PiecewiseAffine);
        assert_eq!(m.label, 1);
        let m = manipulate_or_fallback(&img, None, ManipulationKind::MouthFlipV, 1, &params).unwrap();
        assert_eq!(m.applied, ManipulationKind::PiecewiseAffine);
    }

    #[test]
    fn zero_scale_warp_keeps_label() {
        let img = gradient_image(10, 10);
        let params = ManipulationParams {
            warp_scale: 0.0,
            ..Default::default()
        };
        let m = apply_manipulation(&img, None, ManipulationKind::PiecewiseAffine, 3, &params).unwrap();
        assert_eq!(m.image, img);
        assert_eq!(m.label, 1);
    }
}
