//! Procedural face-like corpus with exact landmark annotations.
//!
//! Each sample is an elliptical head with two elliptical eyes, a nose
//! stroke and a six-point mouth polygon on a plain background. The landmark
//! positions are the analytic corners of these shapes. The asymmetry
//! parameter pulls the image-right mouth corner and the image-right eye
//! downward and outward, imitating a unilateral droop.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use super::manifest::{write_manifest, Record};
use super::scheme::{synth12, write_scheme, SYNTH_SCHEME};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;

/// Downward displacement of the drooping mouth corner at asymmetry 1, in
/// face half-heights.
pub const MOUTH_DROOP: f64 = 0.15;
/// Outward displacement of the drooping mouth corner at asymmetry 1, in face
/// half-widths.
pub const MOUTH_SPREAD: f64 = 0.08;
/// Downward displacement of the drooping eye at asymmetry 1, in face
/// half-heights.
pub const EYE_DROOP: f64 = 0.08;
/// Outward displacement of the drooping eye at asymmetry 1, in face
/// half-widths.
pub const EYE_SPREAD: f64 = 0.04;

/// Depth of each landmark relative to the nose tip, in face half-widths.
const DEPTH_PROFILE: [f64; 12] = [
    0.35, 0.25, 0.25, 0.35, 0.15, 0.0, 0.35, 0.22, 0.22, 0.35, 0.24, 0.24,
];

/// Shape parameters of one synthetic face. Feature offsets are in units of
/// the face half-width (horizontal) and half-height (vertical).
#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub centre: [f64; 2],
    pub half_width: f64,
    pub half_height: f64,
    pub eye_y: f64,
    pub eye_dx: f64,
    pub eye_half_width: f64,
    pub eye_half_height: f64,
    pub nose_top: f64,
    pub nose_tip: f64,
    pub mouth_y: f64,
    pub mouth_half_width: f64,
    pub lip_top: f64,
    pub lip_bottom: f64,
    pub asymmetry: f64,
    pub background: [f32; 3],
    pub skin: [f32; 3],
}

impl FaceParams {
    fn random(rng: &mut ChaCha8Rng, image_hw: (usize, usize), asymmetry: f64) -> Self {
        let (h, w) = (image_hw.0 as f64, image_hw.1 as f64);
        let half_width = w * rng.gen_range(0.30..0.36);
        let half_height = (half_width * rng.gen_range(1.15..1.30)).min(h * 0.45);
        let centre = [
            (w - 1.0) / 2.0 + w * rng.gen_range(-0.04..0.04),
            (h - 1.0) / 2.0 + h * rng.gen_range(-0.03..0.03),
        ];
        let mut colour = |lo: f32, hi: f32| -> [f32; 3] {
            [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
        };
        let background = colour(0.05, 0.35);
        let tone = colour(-0.08, 0.08);
        let skin = [0.85 + tone[0], 0.65 + tone[1], 0.50 + tone[2]];
        FaceParams {
            centre,
            half_width,
            half_height,
            eye_y: rng.gen_range(-0.30..-0.20),
            eye_dx: rng.gen_range(0.36..0.44),
            eye_half_width: rng.gen_range(0.14..0.19),
            eye_half_height: rng.gen_range(0.06..0.09),
            nose_top: rng.gen_range(-0.18..-0.10),
            nose_tip: rng.gen_range(0.12..0.24),
            mouth_y: rng.gen_range(0.45..0.55),
            mouth_half_width: rng.gen_range(0.30..0.42),
            lip_top: rng.gen_range(0.06..0.10),
            lip_bottom: rng.gen_range(0.10..0.16),
            asymmetry,
            background,
            skin,
        }
    }

    fn to_image(&self, u: f64, v: f64) -> [f64; 2] {
        [
            self.centre[0] + u * self.half_width,
            self.centre[1] + v * self.half_height,
        ]
    }

    /// Analytic landmark positions in the `synth12` order.
    pub fn landmarks(&self) -> Vec<[f64; 2]> {
        let a = self.asymmetry;
        let (ey, ex, ehw) = (self.eye_y, self.eye_dx, self.eye_half_width);
        let (my, mhw) = (self.mouth_y, self.mouth_half_width);
        let lip_x = 0.35 * mhw;
        let (eye_du, eye_dv) = (a * EYE_SPREAD, a * EYE_DROOP);
        vec![
            self.to_image(-ex - ehw, ey),
            self.to_image(-ex + ehw, ey),
            self.to_image(ex - ehw + eye_du, ey + eye_dv),
            self.to_image(ex + ehw + eye_du, ey + eye_dv),
            self.to_image(0.0, self.nose_top),
            self.to_image(0.0, self.nose_tip),
            self.to_image(-mhw, my),
            self.to_image(-lip_x, my - self.lip_top),
            self.to_image(lip_x, my - self.lip_top),
            self.to_image(mhw + a * MOUTH_SPREAD, my + a * MOUTH_DROOP),
            self.to_image(lip_x, my + self.lip_bottom),
            self.to_image(-lip_x, my + self.lip_bottom),
        ]
    }

    pub fn depths(&self) -> Vec<f64> {
        DEPTH_PROFILE.iter().map(|d| d * self.half_width).collect()
    }

    /// Bounding box of the head ellipse.
    pub fn bbox(&self) -> [f64; 4] {
        [
            self.centre[0] - self.half_width,
            self.centre[1] - self.half_height,
            self.centre[0] + self.half_width,
            self.centre[1] + self.half_height,
        ]
    }

    pub fn render(&self, image_hw: (usize, usize)) -> Image {
        let (h, w) = image_hw;
        let mut img = Image::new(w, h);
        for y in 0..h {
            let shade = 1.0 - 0.3 * y as f32 / h.max(1) as f32;
            for x in 0..w {
                img.set_rgb(y, x, self.background.map(|c| c * shade));
            }
        }
        let c = self.centre;
        let (rx, ry) = (self.half_width, self.half_height);
        paint(&mut img, self.skin, |x, y| {
            ((x - c[0]) / rx).powi(2) + ((y - c[1]) / ry).powi(2) <= 1.0
        });

        let lm = self.landmarks();
        let eye_ry = self.eye_half_height * self.half_height;
        for (outer, inner) in [(0, 1), (3, 2)] {
            let (p, q) = (lm[outer], lm[inner]);
            let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
            let erx = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() / 2.0;
            paint(&mut img, [0.10, 0.10, 0.15], |x, y| {
                ((x - mid[0]) / erx).powi(2) + ((y - mid[1]) / eye_ry).powi(2) <= 1.0
            });
        }

        let radius = (0.06 * self.half_width).max(0.8);
        let (top, tip) = (lm[4], lm[5]);
        let nose = self.skin.map(|v| v * 0.7);
        paint(&mut img, nose, |x, y| segment_distance([x, y], top, tip) <= radius);

        let mouth: Vec<[f64; 2]> = lm[6..12].to_vec();
        paint(&mut img, [0.70, 0.15, 0.20], |x, y| point_in_polygon([x, y], &mouth));
        img
    }
}

/// Blends `colour` into every pixel by its 2×2 supersampled coverage.
fn paint(img: &mut Image, colour: [f32; 3], inside: impl Fn(f64, f64) -> bool) {
    const OFFSETS: [f64; 2] = [-0.25, 0.25];
    for y in 0..img.height {
        for x in 0..img.width {
            let mut hits = 0;
            for dy in OFFSETS {
                for dx in OFFSETS {
                    if inside(x as f64 + dx, y as f64 + dy) {
                        hits += 1;
                    }
                }
            }
            if hits == 0 {
                continue;
            }
            let cov = hits as f32 / 4.0;
            let old = [img.get(0, y, x), img.get(1, y, x), img.get(2, y, x)];
            let new = [0, 1, 2].map(|c| old[c] * (1.0 - cov) + colour[c] * cov);
            img.set_rgb(y, x, new);
        }
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[derive(Clone, Debug)]
pub struct SynthSample {
    pub image: Image,
    pub landmarks: LandmarkSet,
    pub face: FaceParams,
}

/// Generates `count` samples. Sample `i` depends only on `(seed, i)`.
pub fn synth_generate(
    count: usize,
    image_hw: (usize, usize),
    asymmetry: f64,
    seed: u64,
) -> Result<Vec<SynthSample>> {
    if count == 0 {
        return Err(Error::Config("synthetic corpus needs count >= 1".into()));
    }
    if !(0.0..=1.0).contains(&asymmetry) {
        return Err(Error::Config(format!("asymmetry must lie in [0,1], got {asymmetry}")));
    }
    if image_hw.0 < 8 || image_hw.1 < 8 {
        return Err(Error::Config("synthetic images must be at least 8x8".into()));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let face = FaceParams::random(&mut rng, image_hw, asymmetry);
            let landmarks = LandmarkSet::all_visible(face.landmarks(), SYNTH_SCHEME)
                .with_depth(face.depths())?;
            Ok(SynthSample {
                image: face.render(image_hw),
                landmarks,
                face,
            })
        })
        .collect()
}

/// Writes `img_NNNN.ppm` files, `manifest.jsonl` and `scheme.json` into `dir`.
pub fn write_corpus(dir: &Path, samples: &[SynthSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("img_{i:04}.ppm");
        s.image.write_ppm(&dir.join(&name))?;
        records.push(Record::from_landmarks(name, &s.landmarks, Some(s.face.bbox())));
    }
    write_manifest(&dir.join("manifest.jsonl"), &records)?;
    write_scheme(&dir.join("scheme.json"), &synth12())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_faces_mirror_about_the_face_axis() {
        let s = synth_generate(4, (64, 64), 0.0, 3).unwrap();
        let perm = synth12().permutation().unwrap();
        for sample in &s {
            let cx = sample.face.centre[0];
            let p = &sample.landmarks.points;
            for i in 0..p.len() {
                let j = perm[i];
                assert!((p[i][0] - cx + (p[j][0] - cx)).abs() < 1e-6);
                assert!((p[i][1] - p[j][1]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn full_asymmetry_drops_mouth_corner_by_the_constant() {
        let s = &synth_generate(1, (64, 64), 1.0, 11).unwrap()[0];
        let p = &s.landmarks.points;
        let drop = p[9][1] - p[6][1];
        assert!((drop - MOUTH_DROOP * s.face.half_height).abs() < 1e-9);
    }

    #[test]
    fn landmarks_sit_on_drawn_features() {
        let s = &synth_generate(1, (64, 64), 0.5, 5).unwrap()[0];
        let skin = s.face.skin;
        // the nose tip stroke and mouth corners differ from bare skin
        for &i in &[4usize, 5] {
            let [x, y] = s.landmarks.points[i];
            let px = [0, 1, 2].map(|c| s.image.get(c, y.round() as usize, x.round() as usize));
            let diff: f32 = px.iter().zip(skin).map(|(a, b)| (a - b).abs()).sum();
            assert!(diff > 0.1, "landmark {i} on bare skin");
        }
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let a = synth_generate(3, (32, 32), 0.4, 9).unwrap();
        let b = synth_generate(5, (32, 32), 0.4, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.landmarks, y.landmarks);
        }
    }
}
