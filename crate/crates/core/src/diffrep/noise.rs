use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separately managed noise, one value per lattice site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    values: Vec<f64>,
}

impl NoiseField {
    /// Fresh `N(0, 1)` draw at every site.
    pub fn standard<R: Rng + ?Sized>(lattice_size: usize, rng: &mut R) -> Self {
        Self {
            values: (0..lattice_size).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Noise as seen by a view, given that view's lattice sites.
    pub fn extract(&self, sites: &[usize]) -> Result<Vec<f64>> {
        sites
            .iter()
            .map(|&s| {
                self.values.get(s).copied().ok_or_else(|| {
                    Error::Parameter(format!("site {s} outside a lattice of {}", self.values.len()))
                })
            })
            .collect()
    }

    /// `eps[s] <- keep * eps[s] + fresh[s]` once for every site in `touched`
    /// (duplicates are applied once). `fresh` is a full-lattice array.
    pub fn mix(&mut self, touched: &[bool], keep: f64, fresh: &[f64]) -> Result<()> {
        if touched.len() != self.values.len() || fresh.len() != self.values.len() {
            return Err(Error::Dimension {
                context: "noise field update",
                expected: self.values.len(),
                got: touched.len().min(fresh.len()),
            });
        }
        for ((e, &t), f) in self.values.iter_mut().zip(touched).zip(fresh) {
            if t {
                *e = keep * *e + f;
            }
        }
        Ok(())
    }
}
