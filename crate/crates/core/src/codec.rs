//! Gaussian heatmap encoding of landmarks and sub-pixel argmax decoding.
//!
//! Coordinates: `x` is the column, `y` the row, origin at the centre of the
//! top-left cell. Image and heatmap coordinates differ by a per-axis scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianSpec {
    /// Standard deviation in heatmap cells.
    pub sigma: f64,
    /// Cells farther than this from the landmark are zero.
    pub truncation_radius: f64,
    pub peak: f64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            sigma: 1.0,
            truncation_radius: 3.0,
            peak: 1.0,
        }
    }
}

impl GaussianSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.truncation_radius.is_nan() || self.truncation_radius < self.sigma {
            return Err(Error::Config(format!(
                "truncation radius {} must be >= sigma {}",
                self.truncation_radius, self.sigma
            )));
        }
        Ok(())
    }
}

pub fn image_to_heatmap_coords(
    p: [f64; 2],
    image_hw: (usize, usize),
    heatmap_hw: (usize, usize),
) -> [f64; 2] {
    [
        p[0] * heatmap_hw.1 as f64 / image_hw.1 as f64,
        p[1] * heatmap_hw.0 as f64 / image_hw.0 as f64,
    ]
}

pub fn heatmap_to_image_coords(
    p: [f64; 2],
    heatmap_hw: (usize, usize),
    image_hw: (usize, usize),
) -> [f64; 2] {
    [
        p[0] * image_hw.1 as f64 / heatmap_hw.1 as f64,
        p[1] * image_hw.0 as f64 / heatmap_hw.0 as f64,
    ]
}

/// Encoded target heatmaps (m, H, W).
#[derive(Clone, Debug)]
pub struct Encoded<T> {
    pub heatmaps: Tensor<T>,
    /// Visible landmarks whose mapped position fell outside the heatmap.
    /// Their channels are all zero.
    pub out_of_bounds: Vec<bool>,
}

pub fn encode<T: Real>(
    landmarks: &LandmarkSet,
    image_hw: (usize, usize),
    heatmap_hw: (usize, usize),
    spec: &GaussianSpec,
) -> Result<Encoded<T>> {
    spec.validate()?;
    let (hh, hw) = heatmap_hw;
    if hh == 0 || hw == 0 || !image_hw.0.is_multiple_of(hh) || !image_hw.1.is_multiple_of(hw) {
        return Err(Error::Shape(format!(
            "heatmap {hh}x{hw} does not evenly divide image {}x{}",
            image_hw.0, image_hw.1
        )));
    }
    let m = landmarks.len();
    let mut data = vec![T::zero(); m * hh * hw];
    let mut out_of_bounds = vec![false; m];
    let two_s2 = 2.0 * spec.sigma * spec.sigma;
    let r2 = spec.truncation_radius * spec.truncation_radius;
    for (i, (p, &vis)) in landmarks.points.iter().zip(&landmarks.visible).enumerate() {
        if !vis {
            continue;
        }
        let [cx, cy] = image_to_heatmap_coords(*p, image_hw, heatmap_hw);
        if !(cx >= -0.5 && cy >= -0.5 && cx < hw as f64 - 0.5 && cy < hh as f64 - 0.5) {
            out_of_bounds[i] = true;
            continue;
        }
        let channel = &mut data[i * hh * hw..(i + 1) * hh * hw];
        let r = spec.truncation_radius;
        let r0 = ((cy - r).ceil().max(0.0)) as usize;
        let r1 = ((cy + r).floor().min(hh as f64 - 1.0)) as usize;
        let c0 = ((cx - r).ceil().max(0.0)) as usize;
        let c1 = ((cx + r).floor().min(hw as f64 - 1.0)) as usize;
        for row in r0..=r1 {
            for col in c0..=c1 {
                let d2 = (col as f64 - cx).powi(2) + (row as f64 - cy).powi(2);
                if d2 <= r2 {
                    channel[row * hw + col] = T::from_f64_lossy(spec.peak * (-d2 / two_s2).exp());
                }
            }
        }
    }
    Ok(Encoded {
        heatmaps: Tensor::new(vec![m, hh, hw], data)?,
        out_of_bounds,
    })
}

/// Argmax position of one channel (first index wins ties) together with the
/// maximum value.
pub fn channel_argmax<T: Real>(channel: &[T], width: usize) -> (usize, usize, T) {
    let mut best = 0;
    for (i, &v) in channel.iter().enumerate() {
        if v > channel[best] {
            best = i;
        }
    }
    (best / width, best % width, channel[best])
}

/// Decodes (m, H, W) heatmaps into image-space landmarks: argmax, a quarter
/// cell shift toward the larger neighbour on each axis, then rescaling.
/// Channels whose maximum does not exceed `confidence_floor` are invisible.
pub fn decode<T: Real>(
    heatmaps: &Tensor<T>,
    image_hw: (usize, usize),
    scheme: &str,
    confidence_floor: f64,
) -> Result<LandmarkSet> {
    let (m, hh, hw) = match heatmaps.shape() {
        &[m, h, w] => (m, h, w),
        s => {
            return Err(Error::Shape(format!(
                "decode expects (m,H,W) heatmaps, got {s:?}"
            )))
        }
    };
    let mut points = Vec::with_capacity(m);
    let mut visible = Vec::with_capacity(m);
    for i in 0..m {
        let ch = &heatmaps.data()[i * hh * hw..(i + 1) * hh * hw];
        let (r, c, max) = channel_argmax(ch, hw);
        let at = |rr: usize, cc: usize| ch[rr * hw + cc].to_f64_lossy();
        let mut x = c as f64;
        let mut y = r as f64;
        if c > 0 && c + 1 < hw {
            x += 0.25 * sign(at(r, c + 1) - at(r, c - 1));
        }
        if r > 0 && r + 1 < hh {
            y += 0.25 * sign(at(r + 1, c) - at(r - 1, c));
        }
        points.push(heatmap_to_image_coords([x, y], (hh, hw), image_hw));
        visible.push(max.to_f64_lossy() > confidence_floor);
    }
    LandmarkSet::new(points, visible, scheme)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
