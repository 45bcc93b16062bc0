//! Training-time augmentation applied jointly to an image and its landmarks:
//! horizontal flip, rotation with scale, per-channel colour jitter and a
//! random occluding rectangle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::image::Image;
use crate::data::scheme::Scheme;
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub landmarks: LandmarkSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Rotation angle range in degrees, sampled uniformly.
    pub rotate_deg: [f64; 2],
    pub scale: [f64; 2],
    /// Multiplicative per-channel factor range.
    pub jitter: [f64; 2],
    pub occlusion_prob: f64,
    /// Largest occluder area as a fraction of the landmark bounding box.
    pub occlusion_max_frac: f64,
    pub occlusion_value: f32,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            rotate_deg: [-30.0, 30.0],
            scale: [0.75, 1.25],
            jitter: [0.8, 1.2],
            occlusion_prob: 0.3,
            occlusion_max_frac: 0.3,
            occlusion_value: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Configuration that leaves every sample untouched.
    pub fn none() -> Self {
        AugmentConfig {
            flip_prob: 0.0,
            rotate_deg: [0.0, 0.0],
            scale: [1.0, 1.0],
            jitter: [1.0, 1.0],
            occlusion_prob: 0.0,
            occlusion_max_frac: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Config(format!("augment.{name} must lie in [0,1], got {p}")))
            }
        };
        prob("flip_prob", self.flip_prob)?;
        prob("occlusion_prob", self.occlusion_prob)?;
        prob("occlusion_max_frac", self.occlusion_max_frac)?;
        let range = |name: &str, r: [f64; 2], positive: bool| {
            if !(r[0].is_finite() && r[1].is_finite()) || r[0] > r[1] {
                Err(Error::Config(format!("augment.{name} must be an ordered finite range, got {r:?}")))
            } else if positive && r[0] <= 0.0 {
                Err(Error::Config(format!("augment.{name} must be positive, got {r:?}")))
            } else {
                Ok(())
            }
        };
        range("rotate_deg", self.rotate_deg, false)?;
        range("scale", self.scale, true)?;
        range("jitter", self.jitter, false)?;
        if self.jitter[0] < 0.0 {
            return Err(Error::Config("augment.jitter factors must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        *self == AugmentConfig { seed: self.seed, occlusion_value: self.occlusion_value, ..Self::none() }
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    // always consume one draw so the stream layout does not depend on the ranges
    let u: f64 = rng.gen();
    r[0] + (r[1] - r[0]) * u
}

/// Mirrors the image horizontally. Output landmark `i` is the mirror image of
/// input landmark `perm[i]`, so left/right labels stay semantically correct.
pub fn flip(sample: &Sample, perm: &[usize]) -> Sample {
    let img = &sample.image;
    let (w, h) = (img.width, img.height);
    let mut out = Image::new(w, h);
    for c in 0..3 {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[y * w + (w - 1 - x)];
            }
        }
    }
    let l = &sample.landmarks;
    let mirror = (w - 1) as f64;
    let landmarks = LandmarkSet {
        points: perm.iter().map(|&j| [mirror - l.points[j][0], l.points[j][1]]).collect(),
        depth: l.depth.as_ref().map(|d| perm.iter().map(|&j| d[j]).collect()),
        visible: perm.iter().map(|&j| l.visible[j]).collect(),
        scheme: l.scheme.clone(),
    };
    Sample { image: out, landmarks }
}

/// Centre of the visible landmarks' bounding box, or the image centre when
/// nothing is visible.
fn rotation_centre(sample: &Sample) -> [f64; 2] {
    match sample.landmarks.visible_bbox() {
        Some(b) => [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0],
        None => [
            (sample.image.width as f64 - 1.0) / 2.0,
            (sample.image.height as f64 - 1.0) / 2.0,
        ],
    }
}

/// Similarity transform `p ↦ c + s·R(θ)(p − c)` about the landmark box
/// centre. Positive angles turn +x towards +y (clockwise on screen). Pixels
/// are resampled bilinearly with zero fill; depth scales with `s`. Points
/// leaving the frame become invisible but keep their coordinates.
pub fn rotate_scale(sample: &Sample, angle_deg: f64, scale: f64) -> Sample {
    let c = rotation_centre(sample);
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let img = &sample.image;
    let (w, h) = (img.width, img.height);
    let mut out = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - c[0], y as f64 - c[1]);
            let sx = c[0] + (cos * dx + sin * dy) / scale;
            let sy = c[1] + (-sin * dx + cos * dy) / scale;
            let rgb = [0, 1, 2].map(|ch| img.sample_bilinear(ch, sx, sy));
            out.set_rgb(y, x, rgb);
        }
    }
    let l = &sample.landmarks;
    let points: Vec<[f64; 2]> = l
        .points
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            [
                c[0] + scale * (cos * dx - sin * dy),
                c[1] + scale * (sin * dx + cos * dy),
            ]
        })
        .collect();
    let visible = points
        .iter()
        .zip(&l.visible)
        .map(|(p, &v)| v && LandmarkSet::in_frame(*p, w, h))
        .collect();
    let landmarks = LandmarkSet {
        points,
        depth: l.depth.as_ref().map(|d| d.iter().map(|z| z * scale).collect()),
        visible,
        scheme: l.scheme.clone(),
    };
    Sample { image: out, landmarks }
}

pub fn color_jitter(sample: &Sample, factors: [f32; 3]) -> Sample {
    let mut out = sample.clone();
    for (c, f) in factors.iter().enumerate() {
        for v in out.image.plane_mut(c) {
            *v = (*v * f).clamp(0.0, 1.0);
        }
    }
    out
}

/// Paints the pixel rectangle `[x0, x1) × [y0, y1)` with `value`.
/// Landmarks are left untouched.
pub fn occlude(sample: &Sample, rect: [usize; 4], value: f32) -> Sample {
    let mut out = sample.clone();
    let [x0, y0, x1, y1] = rect;
    let (w, h) = (out.image.width, out.image.height);
    for y in y0.min(h)..y1.min(h) {
        for x in x0.min(w)..x1.min(w) {
            out.image.set_rgb(y, x, [value; 3]);
        }
    }
    out
}

/// Applies the configured augmentations in the order flip, rotate/scale,
/// jitter, occlusion.
#[derive(Clone, Debug)]
pub struct Augmenter {
    pub config: AugmentConfig,
    perm: Vec<usize>,
}

impl Augmenter {
    /// Fails when the configuration is invalid or flips are requested for a
    /// scheme without a swap map.
    pub fn new(config: AugmentConfig, scheme: &Scheme) -> Result<Self> {
        config.validate()?;
        if config.flip_prob > 0.0 && scheme.swap.is_empty() && scheme.m > 1 {
            return Err(Error::Config(format!(
                "augment.flip_prob > 0 but scheme {} has no swap map",
                scheme.id
            )));
        }
        Ok(Augmenter {
            perm: scheme.permutation()?,
            config,
        })
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Augments one sample. The random draws come from the stream
    /// identified by `(config.seed, draw_index)`, so results do not depend
    /// on the order in which samples are processed.
    pub fn apply(&self, sample: &Sample, draw_index: u64) -> Sample {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(draw_index);
        let do_flip = rng.gen::<f64>() < cfg.flip_prob;
        let angle = uniform(&mut rng, cfg.rotate_deg);
        let scale = uniform(&mut rng, cfg.scale);
        let jitter = [0; 3].map(|_| uniform(&mut rng, cfg.jitter) as f32);
        let do_occlude = rng.gen::<f64>() < cfg.occlusion_prob;
        let frac = uniform(&mut rng, [0.0, cfg.occlusion_max_frac]);
        let aspect = uniform(&mut rng, [0.5, 2.0]);
        let pos = [uniform(&mut rng, [0.0, 1.0]), uniform(&mut rng, [0.0, 1.0])];

        let mut s = if do_flip { flip(sample, &self.perm) } else { sample.clone() };
        if angle != 0.0 || scale != 1.0 {
            s = rotate_scale(&s, angle, scale);
        }
        if jitter != [1.0; 3] {
            s = color_jitter(&s, jitter);
        }
        if do_occlude && frac > 0.0 {
            if let Some(b) = s.landmarks.visible_bbox() {
                let (bw, bh) = (b[2] - b[0], b[3] - b[1]);
                let area = frac * bw * bh;
                let rw = (area * aspect).sqrt().min(bw);
                let rh = if rw > 0.0 { (area / rw).min(bh) } else { 0.0 };
                let x0 = b[0] + pos[0] * (bw - rw);
                let y0 = b[1] + pos[1] * (bh - rh);
                let rect = [
                    x0.max(0.0).ceil() as usize,
                    y0.max(0.0).ceil() as usize,
                    (x0 + rw).max(0.0).floor() as usize,
                    (y0 + rh).max(0.0).floor() as usize,
                ];
                s = occlude(&s, rect, cfg.occlusion_value);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_scheme() -> Scheme {
        Scheme {
            id: "toy4".into(),
            m: 4,
            names: (0..4).map(|i| format!("p{i}")).collect(),
            swap: vec![(0, 1), (2, 3)],
            correspondences: vec![],
        }
    }

    fn toy_sample(w: usize, h: usize) -> Sample {
        let mut image = Image::new(w, h);
        for (i, v) in image.data.iter_mut().enumerate() {
            *v = ((i * 37) % 101) as f32 / 100.0;
        }
        let landmarks = LandmarkSet::all_visible(
            vec![[10.0, 20.0], [80.0, 21.0], [30.0, 60.0], [70.0, 61.0]],
            "toy4",
        )
        .with_depth(vec![1.0, 2.0, 3.0, 4.0])
        .unwrap();
        Sample { image, landmarks }
    }

    #[test]
    fn flip_mirrors_and_swaps() {
        let s = toy_sample(100, 80);
        let perm = toy_scheme().permutation().unwrap();
        let f = flip(&s, &perm);
        assert_eq!(f.landmarks.points[1], [89.0, 20.0]);
        assert_eq!(f.landmarks.depth.as_ref().unwrap()[1], 1.0);
        assert_eq!(f.image.get(2, 5, 0), s.image.get(2, 5, 99));
        assert_eq!(flip(&f, &perm), s);
    }

    #[test]
    fn none_config_is_identity() {
        let s = toy_sample(100, 80);
        let a = Augmenter::new(AugmentConfig::none(), &toy_scheme()).unwrap();
        assert!(a.config.is_identity());
        for i in 0..5 {
            assert_eq!(a.apply(&s, i), s);
        }
    }

    #[test]
    fn identity_rotation_keeps_landmarks() {
        let s = toy_sample(100, 80);
        let r = rotate_scale(&s, 0.0, 1.0);
        for (p, q) in r.landmarks.points.iter().zip(&s.landmarks.points) {
            assert!((p[0] - q[0]).abs() < 1e-6 && (p[1] - q[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_moves_offset_onto_y_axis() {
        let mut probe = toy_sample(100, 80);
        // a probe inside the box leaves the rotation centre where it was
        let b = probe.landmarks.visible_bbox().unwrap();
        let c = [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0];
        probe.landmarks.points[2] = [c[0] + 15.0, c[1]];
        assert_eq!(probe.landmarks.visible_bbox(), Some(b));
        let r = rotate_scale(&probe, 90.0, 1.0);
        let p = r.landmarks.points[2];
        assert!((p[0] - c[0]).abs() < 1e-9 && (p[1] - (c[1] + 15.0)).abs() < 1e-9);
    }

    #[test]
    fn rotation_moves_pixels_with_landmarks() {
        let mut s = toy_sample(64, 64);
        s.image = Image::new(64, 64);
        s.landmarks.points = vec![[20.0, 30.0], [44.0, 30.0], [32.0, 20.0], [32.0, 44.0]];
        s.image.set_rgb(20, 32, [1.0; 3]);
        let r = rotate_scale(&s, 90.0, 1.0);
        // bbox centre (32, 32): pixel (x 32, y 20) lands on (x 44, y 32)
        assert!((r.image.get(0, 32, 44) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn points_pushed_out_of_frame_become_invisible() {
        let s = toy_sample(100, 80);
        let r = rotate_scale(&s, 0.0, 3.0);
        assert!(r.landmarks.visible.iter().any(|v| !v));
        assert!(r.landmarks.points.iter().all(|p| p[0].is_finite()));
    }

    #[test]
    fn occlusion_leaves_landmarks_alone() {
        let s = toy_sample(100, 80);
        let o = occlude(&s, [10, 10, 20, 20], 0.5);
        assert_eq!(o.landmarks, s.landmarks);
        assert_eq!(o.image.get(1, 15, 15), 0.5);
        assert_eq!(occlude(&s, [10, 10, 10, 20], 0.5), s);
    }

    #[test]
    fn jitter_clamps() {
        let s = toy_sample(10, 10);
        let j = color_jitter(&s, [2.0, 1.0, 0.0]);
        assert!(j.image.plane(0).iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(j.image.plane(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn draws_are_reproducible_per_index() {
        let s = toy_sample(100, 80);
        let cfg = AugmentConfig { seed: 4, ..Default::default() };
        let a = Augmenter::new(cfg, &toy_scheme()).unwrap();
        assert_eq!(a.apply(&s, 3), a.apply(&s, 3));
        assert_ne!(a.apply(&s, 3), a.apply(&s, 4));
    }

    #[test]
    fn flip_without_swap_map_rejected() {
        let mut scheme = toy_scheme();
        scheme.swap.clear();
        assert!(Augmenter::new(AugmentConfig::default(), &scheme).is_err());
        let cfg = AugmentConfig { flip_prob: 0.0, ..Default::default() };
        assert!(Augmenter::new(cfg, &scheme).is_ok());
    }
}
