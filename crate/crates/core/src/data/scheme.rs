//! Landmark annotation schemes: names, the horizontal-flip swap map and
//! correspondences to other schemes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SchemeMap;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheme {
    pub id: String,
    pub m: usize,
    pub names: Vec<String>,
    /// Index pairs exchanged by a horizontal flip. Unlisted indices map to
    /// themselves.
    #[serde(default)]
    pub swap: Vec<(usize, usize)>,
    #[serde(default)]
    pub correspondences: Vec<SchemeMap>,
}

impl Scheme {
    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.m {
            return Err(Error::Data(format!(
                "scheme {}: {} names for m = {}",
                self.id,
                self.names.len(),
                self.m
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &self.names {
            if !seen.insert(n) {
                return Err(Error::Data(format!("scheme {}: duplicate name `{n}`", self.id)));
            }
        }
        self.permutation()?;
        for map in &self.correspondences {
            if map.name_a != self.id {
                return Err(Error::Data(format!(
                    "scheme {}: correspondence table starts from {}",
                    self.id, map.name_a
                )));
            }
            if let Some(&(a, _)) = map.pairs.iter().find(|p| p.0 >= self.m) {
                return Err(Error::Data(format!(
                    "scheme {}: correspondence index {a} out of range",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Flip permutation: `perm[i]` is the index whose point lands at `i`
    /// after mirroring. Always an involution.
    pub fn permutation(&self) -> Result<Vec<usize>> {
        let mut perm: Vec<usize> = (0..self.m).collect();
        let mut used = vec![false; self.m];
        for &(a, b) in &self.swap {
            if a >= self.m || b >= self.m {
                return Err(Error::Data(format!(
                    "scheme {}: swap pair ({a},{b}) out of range",
                    self.id
                )));
            }
            if used[a] || (a != b && used[b]) {
                return Err(Error::Data(format!(
                    "scheme {}: swap map is not an involution (index reused in ({a},{b}))",
                    self.id
                )));
            }
            used[a] = true;
            used[b] = true;
            perm[a] = b;
            perm[b] = a;
        }
        Ok(perm)
    }

    pub fn correspondence(&self, other: &str) -> Option<&SchemeMap> {
        self.correspondences.iter().find(|m| m.name_b == other)
    }
}

pub const SYNTH_SCHEME: &str = "synth12";

/// Built-in 12-point scheme of the synthetic corpus. "left"/"right" refer to
/// image sides.
pub fn synth12() -> Scheme {
    let names = [
        "left_eye_outer",
        "left_eye_inner",
        "right_eye_inner",
        "right_eye_outer",
        "nose_bridge",
        "nose_tip",
        "mouth_left",
        "mouth_upper_left",
        "mouth_upper_right",
        "mouth_right",
        "mouth_lower_right",
        "mouth_lower_left",
    ];
    Scheme {
        id: SYNTH_SCHEME.into(),
        m: names.len(),
        names: names.iter().map(|s| s.to_string()).collect(),
        swap: vec![(0, 3), (1, 2), (6, 9), (7, 8), (10, 11)],
        correspondences: Vec::new(),
    }
}

#[derive(Clone, Debug, Default)]
pub struct SchemeRegistry {
    schemes: BTreeMap<String, Scheme>,
}

impl SchemeRegistry {
    /// Registry holding the built-in schemes.
    pub fn with_builtins() -> Self {
        let mut r = SchemeRegistry::default();
        r.insert(synth12()).expect("built-in scheme is valid");
        r
    }

    pub fn insert(&mut self, scheme: Scheme) -> Result<()> {
        scheme.validate()?;
        self.schemes.insert(scheme.id.clone(), scheme);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Scheme> {
        self.schemes.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&Scheme> {
        self.get(id)
            .ok_or_else(|| Error::Data(format!("unknown landmark scheme `{id}`")))
    }

    /// Loads a scheme file holding either one scheme object or an array.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let schemes: Vec<Scheme> = if value.is_array() {
            serde_json::from_value(value)?
        } else {
            vec![serde_json::from_value(value)?]
        };
        for s in schemes {
            self.insert(s)
                .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}

pub fn write_scheme(path: &Path, scheme: &Scheme) -> Result<()> {
    let json = serde_json::to_string_pretty(scheme)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}
