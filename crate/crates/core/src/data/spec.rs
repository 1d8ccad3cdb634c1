use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Categorical,
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorValue {
    Number(f64),
    Symbol(String),
}

impl FactorValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            FactorValue::Number(v) => Some(*v),
            FactorValue::Symbol(_) => None,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            FactorValue::Symbol(s) => Some(s),
            FactorValue::Number(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
    pub kind: FactorKind,
    pub values: Vec<FactorValue>,
}

impl Factor {
    pub fn ordinal(name: &str, values: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            cardinality: values.len(),
            kind: FactorKind::Ordinal,
            values: values.into_iter().map(FactorValue::Number).collect(),
        }
    }

    pub fn categorical(name: &str, symbols: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            cardinality: symbols.len(),
            kind: FactorKind::Categorical,
            values: symbols.iter().map(|s| FactorValue::Symbol(s.to_string())).collect(),
        }
    }

    /// Value of index `idx` mapped to `[0, 1]`: min-max of the physical value
    /// for ordinal factors, `idx / (cardinality - 1)` for categorical ones.
    pub fn normalized(&self, idx: usize) -> f64 {
        match self.kind {
            FactorKind::Ordinal => {
                let lo = self.values[0].as_number().unwrap_or(0.0);
                let hi = self.values[self.cardinality - 1].as_number().unwrap_or(1.0);
                let v = self.values[idx].as_number().unwrap_or(0.0);
                (v - lo) / (hi - lo)
            }
            FactorKind::Categorical => idx as f64 / (self.cardinality - 1) as f64,
        }
    }
}

/// The generative factor grid of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
}

/// Per-factor value indices of one grid point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactorTuple(pub Vec<usize>);

impl FactorSpec {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        let spec = Self { factors };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.len() < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 factors, got {}", self.factors.len())));
        }
        for f in &self.factors {
            if f.cardinality < 2 {
                return Err(Error::InvalidSpec(format!("factor {} has cardinality {}", f.name, f.cardinality)));
            }
            if f.values.len() != f.cardinality {
                return Err(Error::InvalidSpec(format!(
                    "factor {} lists {} values for cardinality {}",
                    f.name,
                    f.values.len(),
                    f.cardinality
                )));
            }
            match f.kind {
                FactorKind::Ordinal => {
                    let nums: Option<Vec<f64>> = f.values.iter().map(FactorValue::as_number).collect();
                    let nums = nums.ok_or_else(|| Error::InvalidSpec(format!("ordinal factor {} has symbols", f.name)))?;
                    if nums.windows(2).any(|w| !(w[1] > w[0])) {
                        return Err(Error::InvalidSpec(format!("ordinal factor {} not strictly increasing", f.name)));
                    }
                }
                FactorKind::Categorical => {
                    if f.values.iter().any(|v| v.as_symbol().is_none()) {
                        return Err(Error::InvalidSpec(format!("categorical factor {} has numbers", f.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality).collect()
    }

    pub fn grid_size(&self) -> usize {
        self.factors.iter().map(|f| f.cardinality).product()
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    /// Row-major mixed-radix encoding (last factor varies fastest).
    pub fn flat_id(&self, tuple: &FactorTuple) -> Result<usize> {
        if tuple.0.len() != self.factors.len() {
            return Err(Error::InvalidArgument(format!(
                "tuple has {} entries, spec has {} factors",
                tuple.0.len(),
                self.factors.len()
            )));
        }
        let mut id = 0;
        for (f, &i) in self.factors.iter().zip(&tuple.0) {
            if i >= f.cardinality {
                return Err(Error::InvalidArgument(format!("index {i} out of range for factor {}", f.name)));
            }
            id = id * f.cardinality + i;
        }
        Ok(id)
    }

    pub fn tuple(&self, flat_id: usize) -> FactorTuple {
        let mut idx = vec![0; self.factors.len()];
        let mut rest = flat_id;
        for (k, f) in self.factors.iter().enumerate().rev() {
            idx[k] = rest % f.cardinality;
            rest /= f.cardinality;
        }
        FactorTuple(idx)
    }

    /// Value index of factor `k` for `flat_id`, without building a tuple.
    pub fn index_of(&self, flat_id: usize, k: usize) -> usize {
        let stride: usize = self.factors[k + 1..].iter().map(|f| f.cardinality).product();
        (flat_id / stride) % self.factors[k].cardinality
    }

    /// Normalized attribute vector of a grid point.
    pub fn attributes(&self, tuple: &FactorTuple) -> Vec<f64> {
        self.factors.iter().zip(&tuple.0).map(|(f, &i)| f.normalized(i)).collect()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// The dSprites-like grid: shape, scale, rotation, x, y with cardinalities
/// (3, 6, 10, 32, 32).
pub fn dsprites_like_spec() -> FactorSpec {
    dsprites_like_with(6, 10, 32)
}

/// Reduced dSprites-like grid used for desk-scale runs: (3, 4, 5, 8, 8),
/// 3840 points.
pub fn desk_spec() -> FactorSpec {
    dsprites_like_with(4, 5, 8)
}

/// dSprites-like grid with custom cardinalities. Rotation is sampled evenly
/// on `[0, π/2)`, scale on `[0.5, 1]` and positions on `[0, 1]`.
pub fn dsprites_like_with(n_scale: usize, n_rotation: usize, n_position: usize) -> FactorSpec {
    let rotation = (0..n_rotation).map(|i| FRAC_PI_2 * i as f64 / n_rotation as f64).collect();
    FactorSpec {
        factors: vec![
            Factor::categorical("shape", &["square", "ellipse", "heart"]),
            Factor::ordinal("scale", linspace(0.5, 1.0, n_scale)),
            Factor::ordinal("rotation", rotation),
            Factor::ordinal("x", linspace(0.0, 1.0, n_position)),
            Factor::ordinal("y", linspace(0.0, 1.0, n_position)),
        ],
    }
}
