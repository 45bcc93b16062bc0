use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Landmarks in image pixel coordinates. `x` is the column and `y` the row,
/// with the origin at the centre of the top-left pixel. Optional depth is in
/// the same pixel unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<Vec<f64>>,
    pub visible: Vec<bool>,
    pub scheme: String,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, visible: Vec<bool>, scheme: impl Into<String>) -> Result<Self> {
        if points.len() != visible.len() {
            return Err(Error::Data(format!(
                "{} points but {} visibility flags",
                points.len(),
                visible.len()
            )));
        }
        Ok(LandmarkSet {
            points,
            depth: None,
            visible,
            scheme: scheme.into(),
        })
    }

    pub fn all_visible(points: Vec<[f64; 2]>, scheme: impl Into<String>) -> Self {
        let visible = vec![true; points.len()];
        LandmarkSet {
            points,
            depth: None,
            visible,
            scheme: scheme.into(),
        }
    }

    pub fn with_depth(mut self, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != self.points.len() {
            return Err(Error::Data(format!(
                "{} depth values for {} points",
                depth.len(),
                self.points.len()
            )));
        }
        self.depth = Some(depth);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|&&v| v).count()
    }

    /// Tight `(x0, y0, x1, y1)` box around the visible points.
    pub fn visible_bbox(&self) -> Option<[f64; 4]> {
        let mut it = self
            .points
            .iter()
            .zip(&self.visible)
            .filter(|(_, &v)| v)
            .map(|(p, _)| p);
        let first = it.next()?;
        let mut b = [first[0], first[1], first[0], first[1]];
        for p in it {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        Some(b)
    }

    pub fn in_frame(p: [f64; 2], width: usize, height: usize) -> bool {
        p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (width - 1) as f64 && p[1] <= (height - 1) as f64
    }
}
