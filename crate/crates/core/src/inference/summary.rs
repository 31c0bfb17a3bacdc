use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ChainOutput, CurveTrace};
use crate::basis::Grid;
use crate::error::{Error, Result};

/// Pointwise posterior mean and 2.5/50/97.5% quantiles of one curve.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub mean: Vec<f64>,
    pub q025: Vec<f64>,
    pub q50: Vec<f64>,
    pub q975: Vec<f64>,
}

impl Band {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Whether `truth[t]` lies inside the 95% band.
    pub fn covers(&self, t: usize, value: f64) -> bool {
        self.q025[t] <= value && value <= self.q975[t]
    }
}

/// Curve summaries pooled over chains. `gamma`, `fitted_y` live on the
/// observation grid, `mu` and `x` on the extended grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummaries {
    pub grid: Grid,
    pub draws: usize,
    pub gamma: Band,
    pub mu: Band,
    pub x: Vec<Band>,
    pub fitted_y: Vec<Band>,
}

/// Linear-interpolation quantile of sorted values.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn pooled_band(traces: &[&CurveTrace]) -> Band {
    let draws: usize = traces.iter().map(|t| t.draws()).sum();
    let Some(width) = traces.first().map(|t| t.width) else {
        return Band::default();
    };
    if draws == 0 {
        return Band::default();
    }
    let mut band = Band {
        mean: Vec::with_capacity(width),
        q025: Vec::with_capacity(width),
        q50: Vec::with_capacity(width),
        q975: Vec::with_capacity(width),
    };
    let mut column = Vec::with_capacity(draws);
    for t in 0..width {
        column.clear();
        for tr in traces {
            column.extend((0..tr.draws()).map(|d| tr.values[d * width + t] as f64));
        }
        // sorting first makes the sum independent of chain order
        column.sort_by(f64::total_cmp);
        band.mean.push(column.iter().sum::<f64>() / draws as f64);
        band.q025.push(quantile_sorted(&column, 0.025));
        band.q50.push(quantile_sorted(&column, 0.5));
        band.q975.push(quantile_sorted(&column, 0.975));
    }
    band
}

/// Pools the chains and summarizes every stored curve. With no retained
/// draws the bands are empty.
pub fn summarize_curves(outputs: &[ChainOutput], grid: &Grid) -> Result<CurveSummaries> {
    let n = outputs.first().map_or(0, |o| o.x.len());
    for o in outputs {
        if o.x.len() != n || o.gamma.width != grid.len || o.mu.width != grid.extended_len() {
            return Err(Error::Dimension(format!("chain {} does not match the grid or site count", o.chain)));
        }
    }
    let pick = |f: &dyn Fn(&ChainOutput) -> &CurveTrace| pooled_band(&outputs.iter().map(f).collect::<Vec<_>>());
    Ok(CurveSummaries {
        grid: *grid,
        draws: outputs.iter().map(ChainOutput::draws).sum(),
        gamma: pick(&|o| &o.gamma),
        mu: pick(&|o| &o.mu),
        x: (0..n).map(|i| pick(&|o| &o.x[i])).collect(),
        fitted_y: (0..n).map(|i| pick(&|o| &o.fitted_y[i])).collect(),
    })
}

/// Pooled posterior probabilities of each lag.
pub fn lag_posterior(outputs: &[ChainOutput]) -> Vec<f64> {
    let len = outputs.iter().map(|o| o.lag_counts.len()).max().unwrap_or(0);
    let mut counts = vec![0u64; len];
    for o in outputs {
        for (c, &v) in counts.iter_mut().zip(&o.lag_counts) {
            *c += v;
        }
    }
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 }).collect()
}

/// Smallest set of lags with total probability at least `level`, sorted.
/// Lags are added by decreasing mass; ties go to a lag adjacent to the set
/// already chosen, then to the lower lag.
pub fn hpd_discrete(probs: &[f64], level: f64) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::Argument("empty lag histogram".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("level {level} outside (0, 1)")));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Argument("lag probabilities must be finite and nonnegative".into()));
    }
    let total: f64 = probs.iter().sum();
    if total <= 0.0 {
        return Err(Error::Argument("lag histogram has no mass".into()));
    }
    let mut chosen = vec![false; probs.len()];
    let mut mass = 0.0;
    let mut set = Vec::new();
    while mass < level * total * (1.0 - 1e-12) {
        let adjacent = |j: usize| (j > 0 && chosen[j - 1]) || (j + 1 < probs.len() && chosen[j + 1]);
        let best = (0..probs.len())
            .filter(|&j| !chosen[j])
            .max_by(|&a, &b| {
                probs[a]
                    .total_cmp(&probs[b])
                    .then(adjacent(a).cmp(&adjacent(b)))
                    .then(b.cmp(&a))
            })
            .expect("mass below total leaves a candidate");
        chosen[best] = true;
        mass += probs[best];
        set.push(best);
    }
    set.sort_unstable();
    Ok(set)
}

/// Endpoints of a set of consecutive lags.
pub fn contiguous_interval(set: &[usize]) -> Option<(usize, usize)> {
    let (&lo, &hi) = (set.first()?, set.last()?);
    (hi - lo + 1 == set.len()).then_some((lo, hi))
}

/// Effective sample size; `degenerate` marks a constant trace, whose ESS is
/// reported as its length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    pub degenerate: bool,
}

/// Initial monotone positive sequence estimator.
pub fn ess(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::Argument(format!("trace of length {n} is shorter than 10")));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    if trace.iter().all(|&v| v == trace[0]) {
        return Ok(Ess { value: n as f64, degenerate: true });
    }
    let c0 = autocov(0);
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / (n as f64).log10());
    Ok(Ess { value: n as f64 / tau, degenerate: false })
}

/// Counts on a regular 2-D grid of bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[a][b]` for x bin `a`, y bin `b`.
    pub counts: Vec<Vec<u64>>,
}

impl Histogram2d {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn centers(edges: &[f64]) -> Vec<f64> {
        edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

fn edges(values: &[f64], bins: usize) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    (0..=bins).map(|b| lo + (hi - lo) * b as f64 / bins as f64).collect()
}

fn bin_of(edges: &[f64], v: f64) -> usize {
    let bins = edges.len() - 1;
    let w = edges[bins] - edges[0];
    (((v - edges[0]) / w * bins as f64).floor() as usize).min(bins - 1)
}

/// Joint histogram of the posterior-mean μ(τ_t) and γ(τ_t) over the
/// observation days.
pub fn mu_gamma_density(summary: &CurveSummaries, bins: usize) -> Result<Histogram2d> {
    if bins == 0 {
        return Err(Error::Argument("bins must be positive".into()));
    }
    if summary.draws == 0 {
        return Err(Error::Argument("no retained draws".into()));
    }
    let ext = summary.grid.extension;
    let mu = &summary.mu.mean[ext..];
    let gamma = &summary.gamma.mean;
    let (xe, ye) = (edges(mu, bins), edges(gamma, bins));
    let mut counts = vec![vec![0u64; bins]; bins];
    for (&m, &g) in mu.iter().zip(gamma) {
        counts[bin_of(&xe, m)][bin_of(&ye, g)] += 1;
    }
    Ok(Histogram2d { x_edges: xe, y_edges: ye, counts })
}

/// CSV with columns time, mean, q2.5, q50, q97.5; time is the day offset of
/// the first row plus the row index.
pub fn write_curve_csv<W: Write>(mut w: W, first_day: i64, band: &Band) -> Result<()> {
    writeln!(w, "time,mean,q2.5,q50,q97.5")?;
    for t in 0..band.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            first_day + t as i64,
            band.mean[t],
            band.q025[t],
            band.q50[t],
            band.q975[t]
        )?;
    }
    Ok(())
}

pub fn write_lag_csv<W: Write>(mut w: W, probs: &[f64]) -> Result<()> {
    writeln!(w, "lag,probability")?;
    for (lag, p) in probs.iter().enumerate() {
        writeln!(w, "{lag},{p}")?;
    }
    Ok(())
}

/// One row per bin: bin centers and count.
pub fn write_histogram_csv<W: Write>(mut w: W, h: &Histogram2d) -> Result<()> {
    writeln!(w, "mu,gamma,count")?;
    let (xc, yc) = (Histogram2d::centers(&h.x_edges), Histogram2d::centers(&h.y_edges));
    for (a, row) in h.counts.iter().enumerate() {
        for (b, c) in row.iter().enumerate() {
            writeln!(w, "{},{},{c}", xc[a], yc[b])?;
        }
    }
    Ok(())
}
