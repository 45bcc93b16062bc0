//! Landmark localisation metrics: face-size normalised mean error,
//! cumulative error distribution, its area, per-landmark error and the
//! projection onto landmarks shared between two annotation schemes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;

/// Semantic correspondences between two annotation schemes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeMap {
    pub name_a: String,
    pub name_b: String,
    /// `(index in a, index in b)`.
    pub pairs: Vec<(usize, usize)>,
}

impl SchemeMap {
    pub fn identity(scheme: &str, m: usize) -> Self {
        SchemeMap {
            name_a: scheme.into(),
            name_b: scheme.into(),
            pairs: (0..m).map(|i| (i, i)).collect(),
        }
    }

    pub fn validate(&self, m_a: usize, m_b: usize) -> Result<()> {
        let mut seen_a = vec![false; m_a];
        let mut seen_b = vec![false; m_b];
        for &(a, b) in &self.pairs {
            if a >= m_a || b >= m_b {
                return Err(Error::Data(format!(
                    "scheme map {}->{}: pair ({a},{b}) out of range for {m_a}/{m_b} landmarks",
                    self.name_a, self.name_b
                )));
            }
            if std::mem::replace(&mut seen_a[a], true) || std::mem::replace(&mut seen_b[b], true) {
                return Err(Error::Data(format!(
                    "scheme map {}->{}: index used twice in pair ({a},{b})",
                    self.name_a, self.name_b
                )));
            }
        }
        Ok(())
    }
}

/// `sqrt(w*h)` of the tight box around the visible ground-truth landmarks;
/// `None` with fewer than two visible landmarks.
pub fn face_size(gt: &LandmarkSet) -> Option<f64> {
    if gt.visible_count() < 2 {
        return None;
    }
    let [x0, y0, x1, y1] = gt.visible_bbox()?;
    Some(((x1 - x0) * (y1 - y0)).sqrt())
}

fn check_pair(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<()> {
    if pred.scheme != gt.scheme || pred.len() != gt.len() {
        return Err(Error::Data(format!(
            "prediction ({}, {} points) does not match ground truth ({}, {} points)",
            pred.scheme,
            pred.len(),
            gt.scheme,
            gt.len()
        )));
    }
    Ok(())
}

fn resolve_subset(subset: Option<&[usize]>, m: usize) -> Result<Vec<usize>> {
    match subset {
        None => Ok((0..m).collect()),
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
                return Err(Error::Data(format!("subset index {bad} out of range for {m} landmarks")));
            }
            Ok(idx.to_vec())
        }
    }
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean error over the subset landmarks visible in `gt`, divided
/// by the face size. `Ok(None)` when undefined (no usable landmarks or no
/// face size).
pub fn nme(pred: &LandmarkSet, gt: &LandmarkSet, subset: Option<&[usize]>) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let idx = resolve_subset(subset, gt.len())?;
    let Some(size) = face_size(gt).filter(|&s| s > 0.0) else {
        return Ok(None);
    };
    let (mut sum, mut n) = (0.0, 0usize);
    for &i in &idx {
        if gt.visible[i] {
            sum += distance(pred.points[i], gt.points[i]);
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64 / size))
}

/// Thresholds `0, step, 2*step, ..., max` (inclusive).
pub fn threshold_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

/// Fraction of samples with error at or below each threshold.
pub fn ced(nmes: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if nmes.is_empty() {
        return Err(Error::Data("cumulative error distribution of no samples".into()));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Data("CED thresholds must be strictly increasing".into()));
    }
    let mut sorted = nmes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let count = sorted.partition_point(|&e| e <= t);
            (t, count as f64 / total)
        })
        .collect())
}

/// Trapezoidal area under the curve on `[0, cutoff]`, divided by `cutoff`.
/// The curve is linearly interpolated at `cutoff` when it is not a grid point.
pub fn auc(curve: &[(f64, f64)], cutoff: f64) -> Result<f64> {
    if cutoff.is_nan() || cutoff <= 0.0 {
        return Err(Error::Data(format!("AUC cutoff must be positive, got {cutoff}")));
    }
    if curve.first().map(|c| c.0) != Some(0.0) {
        return Err(Error::Data("AUC needs a curve starting at threshold 0".into()));
    }
    let mut area = 0.0;
    for w in curve.windows(2) {
        let ((t0, f0), (t1, f1)) = (w[0], w[1]);
        if t0 >= cutoff {
            break;
        }
        if t1 <= cutoff {
            area += 0.5 * (f0 + f1) * (t1 - t0);
        } else {
            let fc = f0 + (f1 - f0) * (cutoff - t0) / (t1 - t0);
            area += 0.5 * (f0 + fc) * (cutoff - t0);
        }
    }
    let last = curve[curve.len() - 1];
    if last.0 < cutoff {
        area += last.1 * (cutoff - last.0);
    }
    Ok(area / cutoff)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerLandmark {
    pub values: BTreeMap<usize, f64>,
    /// Subset landmarks invisible in every ground truth.
    pub omitted: Vec<usize>,
}

/// For each landmark, the mean over samples of its distance divided by that
/// sample's face size, counting only samples where it is visible.
pub fn per_landmark_nme(
    preds: &[LandmarkSet],
    gts: &[LandmarkSet],
    subset: Option<&[usize]>,
) -> Result<PerLandmark> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let m = gts.first().map_or(0, |g| g.len());
    let idx = resolve_subset(subset, m)?;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (p, g) in preds.iter().zip(gts) {
        check_pair(p, g)?;
        if g.len() != m {
            return Err(Error::Data("ground truths use different landmark counts".into()));
        }
        let Some(size) = face_size(g).filter(|&s| s > 0.0) else {
            continue;
        };
        for &i in &idx {
            if g.visible[i] {
                sums[i] += distance(p.points[i], g.points[i]) / size;
                counts[i] += 1;
            }
        }
    }
    let mut out = PerLandmark::default();
    for &i in &idx {
        if counts[i] == 0 {
            out.omitted.push(i);
        } else {
            out.values.insert(i, sums[i] / counts[i] as f64);
        }
    }
    Ok(out)
}

/// Projects two landmark sets onto the mapped pairs. A pair is visible only
/// when both sides are.
pub fn common_subset(
    map: &SchemeMap,
    a: &LandmarkSet,
    b: &LandmarkSet,
) -> Result<(LandmarkSet, LandmarkSet)> {
    if a.scheme != map.name_a || b.scheme != map.name_b {
        return Err(Error::Data(format!(
            "scheme map {}->{} applied to {} and {}",
            map.name_a, map.name_b, a.scheme, b.scheme
        )));
    }
    map.validate(a.len(), b.len())?;
    let visible: Vec<bool> = map.pairs.iter().map(|&(i, j)| a.visible[i] && b.visible[j]).collect();
    let project = |s: &LandmarkSet, pick: &dyn Fn(&(usize, usize)) -> usize| LandmarkSet {
        points: map.pairs.iter().map(|p| s.points[pick(p)]).collect(),
        depth: s
            .depth
            .as_ref()
            .map(|d| map.pairs.iter().map(|p| d[pick(p)]).collect()),
        visible: visible.clone(),
        scheme: s.scheme.clone(),
    };
    let mut pa = project(a, &|p| p.0);
    let mut pb = project(b, &|p| p.1);
    if map.name_a != map.name_b {
        let joint = format!("{}~{}", map.name_a, map.name_b);
        pa.scheme = joint.clone();
        pb.scheme = joint;
    }
    Ok((pa, pb))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// NME of every sample for which it is defined, in input order.
    pub per_sample_nme: Vec<f64>,
    /// Input index of each entry of `per_sample_nme`.
    pub sample_index: Vec<usize>,
    pub mean_nme: f64,
    pub ced: Vec<(f64, f64)>,
    pub auc: f64,
    pub auc_cutoff: f64,
    pub per_landmark_nme: BTreeMap<usize, f64>,
    pub notes: Vec<String>,
}

pub const DEFAULT_CED_MAX: f64 = 0.10;
pub const DEFAULT_CED_STEP: f64 = 0.001;

pub fn evaluate(
    preds: &[LandmarkSet],
    gts: &[LandmarkSet],
    subset: Option<&[usize]>,
    thresholds: &[f64],
    cutoff: f64,
) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    let mut notes = Vec::new();
    let mut per_sample = Vec::new();
    let mut index = Vec::new();
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        match nme(p, g, subset)? {
            Some(e) => {
                per_sample.push(e);
                index.push(i);
            }
            None => notes.push(format!(
                "sample {i} excluded: fewer than two visible ground-truth landmarks or empty subset"
            )),
        }
    }
    if per_sample.is_empty() {
        return Err(Error::Data("no sample has a defined NME".into()));
    }
    let curve = ced(&per_sample, thresholds)?;
    let area = auc(&curve, cutoff)?;
    let per_landmark = per_landmark_nme(preds, gts, subset)?;
    for i in &per_landmark.omitted {
        notes.push(format!("landmark {i} omitted: invisible in every ground truth"));
    }
    Ok(EvalReport {
        mean_nme: per_sample.iter().sum::<f64>() / per_sample.len() as f64,
        per_sample_nme: per_sample,
        sample_index: index,
        ced: curve,
        auc: area,
        auc_cutoff: cutoff,
        per_landmark_nme: per_landmark.values,
        notes,
    })
}

impl EvalReport {
    /// Writes `report.json`, `ced.csv` and `per_landmark.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(self)?;
        write_file(&dir.join("report.json"), json.as_bytes())?;
        write_file(&dir.join("ced.csv"), ced_csv(&self.ced).as_bytes())?;
        let mut pl = String::from("landmark,nme\n");
        for (k, v) in &self.per_landmark_nme {
            pl.push_str(&format!("{k},{v}\n"));
        }
        write_file(&dir.join("per_landmark.csv"), pl.as_bytes())
    }
}

pub fn ced_csv(curve: &[(f64, f64)]) -> String {
    let mut s = String::from("threshold,fraction\n");
    for (t, f) in curve {
        s.push_str(&format!("{t},{f}\n"));
    }
    s
}

/// Parses a `threshold,fraction` CSV. Errors name the 1-based row.
pub fn parse_ced_csv(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "threshold,fraction" => {}
        _ => return Err(Error::Data("row 1: expected header `threshold,fraction`".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = i + 1;
        let mut cols = line.split(',');
        let parse = |c: Option<&str>| -> Result<f64> {
            c.and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("row {row}: malformed CED entry `{line}`")))
        };
        let t = parse(cols.next())?;
        let f = parse(cols.next())?;
        if cols.next().is_some() {
            return Err(Error::Data(format!("row {row}: too many columns in `{line}`")));
        }
        out.push((t, f));
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: &[[f64; 2]]) -> LandmarkSet {
        LandmarkSet::all_visible(points.to_vec(), "s")
    }

    #[test]
    fn face_size_examples() {
        assert_eq!(face_size(&set(&[[0.0, 0.0], [100.0, 100.0]])), Some(100.0));
        assert_eq!(face_size(&set(&[[0.0, 0.0], [200.0, 50.0]])), Some(100.0));
        let mut one = set(&[[0.0, 0.0], [10.0, 10.0]]);
        one.visible[1] = false;
        assert_eq!(face_size(&one), None);
    }

    #[test]
    fn nme_hand_fixture() {
        let gt = set(&[[0.0, 0.0], [100.0, 100.0]]);
        let pred = set(&[[3.0, 4.0], [100.0, 100.0]]);
        assert_eq!(nme(&pred, &gt, None).unwrap(), Some(0.025));
        assert_eq!(nme(&gt, &gt, None).unwrap(), Some(0.0));
    }

    #[test]
    fn nme_rejects_scheme_mismatch_and_bad_subset() {
        let gt = set(&[[0.0, 0.0], [1.0, 1.0]]);
        let mut other = gt.clone();
        other.scheme = "x".into();
        assert!(nme(&other, &gt, None).is_err());
        assert!(nme(&gt, &gt, Some(&[5])).is_err());
        assert_eq!(nme(&gt, &gt, Some(&[])).unwrap(), None);
    }

    #[test]
    fn ced_counts() {
        let c = ced(&[0.01, 0.02, 0.04], &[0.0, 0.02, 0.05]).unwrap();
        assert_eq!(c[1], (0.02, 2.0 / 3.0));
        assert_eq!(c[2].1, 1.0);
        assert!(ced(&[], &[0.0]).is_err());
        assert!(ced(&[0.1], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn auc_of_perfect_curve_is_one() {
        let grid = threshold_grid(DEFAULT_CED_MAX, DEFAULT_CED_STEP);
        assert_eq!(grid.len(), 101);
        let c = ced(&[0.0, 0.0], &grid).unwrap();
        assert!(c.iter().all(|&(_, f)| f == 1.0));
        assert!((auc(&c, 0.1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_linear_curve() {
        let curve = [(0.0, 0.0), (0.1, 1.0)];
        assert!((auc(&curve, 0.1).unwrap() - 0.5).abs() < 1e-12);
        // interpolated at 0.05: area 0.5*0.5*0.05 / 0.05
        assert!((auc(&curve, 0.05).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn per_landmark_examples() {
        let gts: Vec<_> = (0..3).map(|_| set(&[[0.0, 0.0], [100.0, 100.0], [50.0, 50.0]])).collect();
        let mut preds = gts.clone();
        for p in &mut preds {
            p.points[2][0] += 10.0;
        }
        let pl = per_landmark_nme(&preds, &gts, None).unwrap();
        assert_eq!(pl.values[&0], 0.0);
        assert!((pl.values[&2] - 0.1).abs() < 1e-15);

        let mut hidden = gts.clone();
        for g in &mut hidden {
            g.visible[1] = false;
        }
        let pl = per_landmark_nme(&preds, &hidden, None).unwrap();
        assert!(!pl.values.contains_key(&1));
        assert_eq!(pl.omitted, vec![1]);
    }

    #[test]
    fn common_subset_semantics() {
        let a = set(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]);
        let id = SchemeMap::identity("s", 3);
        let (pa, pb) = common_subset(&id, &a, &a).unwrap();
        assert_eq!((pa, pb), (a.clone(), a.clone()));

        let mut b = LandmarkSet::all_visible(vec![[9.0, 9.0], [8.0, 8.0]], "t");
        b.visible[0] = false;
        let map = SchemeMap {
            name_a: "s".into(),
            name_b: "t".into(),
            pairs: vec![(2, 0), (0, 1)],
        };
        let (pa, pb) = common_subset(&map, &a, &b).unwrap();
        assert_eq!(pa.points, vec![[3.0, 3.0], [1.0, 1.0]]);
        assert_eq!(pb.points, vec![[9.0, 9.0], [8.0, 8.0]]);
        assert_eq!(pa.visible, vec![false, true]);
        assert_eq!(pb.visible, pa.visible);
        assert!(common_subset(&map, &b, &a).is_err());
    }

    #[test]
    fn ced_csv_round_trip_and_errors() {
        let c = vec![(0.0, 0.25), (0.05, 1.0)];
        assert_eq!(parse_ced_csv(&ced_csv(&c)).unwrap(), c);
        let err = parse_ced_csv("threshold,fraction\n0,0\n0.1,abc\n").unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }
}
