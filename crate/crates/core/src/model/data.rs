use serde::{Deserialize, Serialize};

use crate::basis::Grid;
use crate::error::{Error, Result};
use crate::spatial::Region;

/// Irregular observations of one variable at one site. `times` are indices
/// into the observation grid (not the extended grid), strictly increasing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SiteSeries {
    pub times: Vec<usize>,
    pub values: Vec<f64>,
}

impl SiteSeries {
    pub fn new(times: Vec<usize>, values: Vec<f64>) -> Self {
        Self { times, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Positivity-rate (`y`) and wastewater (`x`, log copies per liter) series
/// for every site on a common day grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub grid: Grid,
    pub sites: Vec<String>,
    pub y: Vec<SiteSeries>,
    pub x: Vec<SiteSeries>,
    pub regions: Vec<Region>,
}

impl Dataset {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn total_y(&self) -> usize {
        self.y.iter().map(SiteSeries::len).sum()
    }

    pub fn total_x(&self) -> usize {
        self.x.iter().map(SiteSeries::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sites.len();
        if self.y.len() != n || self.x.len() != n || self.regions.len() != n {
            return Err(Error::Dimension(format!(
                "{n} sites but {} y series, {} x series, {} regions",
                self.y.len(),
                self.x.len(),
                self.regions.len()
            )));
        }
        for (i, site) in self.sites.iter().enumerate() {
            if self.regions[i].id != *site {
                return Err(Error::Argument(format!(
                    "region {} listed where site {site} expected",
                    self.regions[i].id
                )));
            }
            for (label, s) in [("y", &self.y[i]), ("x", &self.x[i])] {
                if s.times.len() != s.values.len() {
                    return Err(Error::Dimension(format!("site {site}: {label} times/values mismatch")));
                }
                if s.times.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Argument(format!("site {site}: {label} times not increasing")));
                }
                if let Some(&t) = s.times.iter().find(|&&t| t >= self.grid.len) {
                    return Err(Error::Bounds { index: t, len: self.grid.len });
                }
                if s.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("site {site}: {label} value")));
                }
            }
            if self.y[i].values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Argument(format!("site {site}: positivity rate outside [0, 1]")));
            }
            if self.x[i].is_empty() {
                return Err(Error::Argument(format!("site {site} has no wastewater observations")));
            }
        }
        Ok(())
    }
}
