//! Line-delimited JSON manifests, one sample per line:
//!
//! ```json
//! {"image":"img_0000.ppm","landmarks":[[x,y],...],"visibility":[true,...],"scheme":"synth12","bbox":null}
//! ```
//!
//! Landmarks are `[x, y]` or `[x, y, z]`. Image paths are relative to the
//! manifest's directory unless absolute.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::Image;
use super::scheme::SchemeRegistry;
use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    pub landmarks: Vec<Vec<f64>>,
    pub visibility: Vec<bool>,
    pub scheme: String,
    #[serde(default)]
    pub bbox: Option<[f64; 4]>,
}

impl Record {
    pub fn from_landmarks(image: impl Into<String>, l: &LandmarkSet, bbox: Option<[f64; 4]>) -> Self {
        let landmarks = l
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| match &l.depth {
                Some(d) => vec![p[0], p[1], d[i]],
                None => vec![p[0], p[1]],
            })
            .collect();
        Record {
            image: image.into(),
            landmarks,
            visibility: l.visible.clone(),
            scheme: l.scheme.clone(),
            bbox,
        }
    }

    pub fn to_landmarks(&self) -> Result<LandmarkSet> {
        if self.landmarks.len() != self.visibility.len() {
            return Err(Error::Data(format!(
                "{} landmarks but {} visibility flags",
                self.landmarks.len(),
                self.visibility.len()
            )));
        }
        let dims = self.landmarks.first().map_or(2, |p| p.len());
        if !(dims == 2 || dims == 3) || self.landmarks.iter().any(|p| p.len() != dims) {
            return Err(Error::Data(
                "landmarks must all be [x,y] or all be [x,y,z]".into(),
            ));
        }
        if self.landmarks.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite landmark coordinate".into()));
        }
        let points = self.landmarks.iter().map(|p| [p[0], p[1]]).collect();
        let set = LandmarkSet::new(points, self.visibility.clone(), self.scheme.clone())?;
        if dims == 3 {
            set.with_depth(self.landmarks.iter().map(|p| p[2]).collect())
        } else {
            Ok(set)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub image_path: PathBuf,
    pub landmarks: LandmarkSet,
    pub bbox: Option<[f64; 4]>,
}

impl Entry {
    pub fn load_image(&self) -> Result<Image> {
        Image::read_ppm(&self.image_path)
    }
}

/// Reads and validates a manifest. All invalid records are reported
/// together, each identified by its 1-based line number.
pub fn load_manifest(path: &Path, schemes: &SchemeRegistry) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        match parse_record(line, base, schemes) {
            Ok(e) => entries.push(e),
            Err(e) => problems.push(format!("{}: record at line {line_no}: {e}", path.display())),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Data(problems.join("\n")));
    }
    if entries.is_empty() {
        return Err(Error::Data(format!("{}: manifest has no records", path.display())));
    }
    Ok(entries)
}

fn parse_record(line: &str, base: &Path, schemes: &SchemeRegistry) -> Result<Entry> {
    let rec: Record = serde_json::from_str(line)?;
    let landmarks = rec.to_landmarks()?;
    let scheme = schemes.require(&rec.scheme)?;
    if landmarks.len() != scheme.m {
        return Err(Error::Data(format!(
            "{} landmarks under scheme {} which declares {}",
            landmarks.len(),
            scheme.id,
            scheme.m
        )));
    }
    let image_path = if Path::new(&rec.image).is_absolute() {
        PathBuf::from(&rec.image)
    } else {
        base.join(&rec.image)
    };
    if !image_path.is_file() {
        return Err(Error::Data(format!("image {} does not exist", image_path.display())));
    }
    Ok(Entry {
        image_path,
        landmarks,
        bbox: rec.bbox,
    })
}

pub fn write_manifest(path: &Path, records: &[Record]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads manifest records without resolving or checking images; used for
/// prediction/ground-truth files in evaluation.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{}: record at line {}: {e}", path.display(), i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
