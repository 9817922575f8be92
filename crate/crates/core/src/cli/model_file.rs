//! JSON model files: `{"name", "K", "weights": [{"c", "k", "s", "w"}]}` with
//! `w` a rational string `"num/den"`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{parse_rational, WeightFunction};
use crate::models::bundled;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightRecord {
    pub c: usize,
    pub k: usize,
    pub s: Vec<usize>,
    pub w: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub name: String,
    #[serde(rename = "K")]
    pub bound: usize,
    pub weights: Vec<WeightRecord>,
}

impl ModelFile {
    pub fn from_weights(w: &WeightFunction) -> Self {
        Self {
            name: w.name().to_string(),
            bound: w.bound(),
            weights: w
                .entries()
                .map(|(e, v)| WeightRecord { c: e.cars, k: e.arity(), s: e.spots.clone(), w: v.to_string() })
                .collect(),
        }
    }

    /// Schema validation: `k = |s|`, no duplicate entries, bound and sign
    /// checks are left to [`WeightFunction::set`].
    pub fn to_weights(&self) -> Result<WeightFunction> {
        let mut w = WeightFunction::new(&self.name, self.bound)?;
        for (i, r) in self.weights.iter().enumerate() {
            if r.k != r.s.len() {
                return Err(Error::Model(format!("weights[{i}]: k = {} but s has {} entries", r.k, r.s.len())));
            }
            let v = parse_rational(&r.w).map_err(|e| Error::Model(format!("weights[{i}].w: {e}")))?;
            if !w.get(r.c, &r.s).eq(&num_traits::Zero::zero()) {
                return Err(Error::Model(format!("weights[{i}]: duplicate entry c={}, s={:?}", r.c, r.s)));
            }
            w.set(r.c, &r.s, v).map_err(|e| Error::Model(format!("weights[{i}]: {e}")))?;
        }
        if w.is_empty() {
            return Err(Error::Model("no nonzero weights".into()));
        }
        Ok(w)
    }

    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Model(format!("model file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// A bundled model name or a path to a model file.
pub fn load_model(spec: &str) -> Result<WeightFunction> {
    let path = Path::new(spec);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        return ModelFile::parse(&text)?.to_weights();
    }
    bundled(spec).ok_or_else(|| Error::Model(format!("{spec:?} is neither a file nor a bundled model")))
}
