//! Observation CSVs and GeoJSON geometry to a [`Dataset`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use sfcr_core::basis::Grid;
use sfcr_core::model::{Dataset, SiteSeries};
use sfcr_core::spatial::{regions_from_geojson, Region};

use crate::config::IngestRules;
use crate::error::{CliError, CliResult};

/// Row counts from one ingestion.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub y_rows: usize,
    pub x_rows: usize,
    /// y rows set missing by the minimum-positives rule.
    pub y_below_min_positives: usize,
    /// Rows with no value.
    pub blank_rows: usize,
    /// Rows dropped because they fall outside the configured date window.
    pub outside_window: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Calendar date of grid day 0.
    pub origin: NaiveDate,
    pub report: IngestReport,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Series {
    Y,
    X,
}

struct Row {
    line: u64,
    site: String,
    date: NaiveDate,
    value: f64,
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn parse_number(s: &str, what: &str, label: &str, line: u64) -> CliResult<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(CliError::Input(format!("{label} row {line}: {what} '{s}' is not a finite number"))),
    }
}

fn read_rows(text: &str, label: &str, series: Series, rules: &IngestRules, report: &mut IngestReport) -> CliResult<Vec<Row>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::Input(format!("{label}: {e}")))?.clone();
    let need = |name: &str| {
        column(&headers, name).ok_or_else(|| CliError::Input(format!("{label}: missing column '{name}'")))
    };
    let (site_col, date_col) = (need("site_id")?, need("date")?);
    let value_col = column(&headers, "value");
    let counts = match (series, column(&headers, "positives"), column(&headers, "tests")) {
        (Series::Y, Some(p), Some(t)) => Some((p, t)),
        (Series::Y, None, None) => None,
        (Series::Y, _, _) => {
            return Err(CliError::Input(format!("{label}: 'positives' and 'tests' must appear together")))
        }
        (Series::X, ..) => None,
    };
    if value_col.is_none() && counts.is_none() {
        return Err(CliError::Input(format!("{label}: missing column 'value'")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{label}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |c: usize| record.get(c).unwrap_or("");
        let site = field(site_col).to_string();
        let date = parse_date(field(date_col))
            .ok_or_else(|| CliError::Input(format!("{label} row {line}: unparseable date '{}'", field(date_col))))?;
        let mut value = match value_col {
            Some(c) => parse_number(field(c), "value", label, line)?,
            None => None,
        };
        if let Some((pc, tc)) = counts {
            let positives = parse_number(field(pc), "positives", label, line)?;
            let tests = parse_number(field(tc), "tests", label, line)?;
            if let Some(p) = positives {
                if p < rules.min_positives {
                    report.y_below_min_positives += 1;
                    continue;
                }
                if value.is_none() {
                    match tests {
                        Some(t) if t > 0.0 => value = Some(p / t),
                        _ => {
                            return Err(CliError::Input(format!(
                                "{label} row {line}: positives given without a positive test count"
                            )))
                        }
                    }
                }
            }
        }
        let Some(value) = value else {
            report.blank_rows += 1;
            continue;
        };
        if series == Series::Y && !(0.0..=1.0).contains(&value) {
            return Err(CliError::Input(format!("{label} row {line}: positivity {value} outside [0, 1]")));
        }
        rows.push(Row { line, site, date, value });
    }
    Ok(rows)
}

/// Planar geometry check: coordinates that fit inside a small
/// longitude/latitude box are almost certainly unprojected degrees.
pub fn looks_geographic(regions: &[Region]) -> bool {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for r in regions {
        let (a, b) = r.bbox();
        for d in 0..2 {
            lo[d] = lo[d].min(a[d]);
            hi[d] = hi[d].max(b[d]);
        }
    }
    !regions.is_empty()
        && lo[0] >= -180.0
        && hi[0] <= 180.0
        && lo[1] >= -90.0
        && hi[1] <= 90.0
        && hi[0] - lo[0] < 10.0
        && hi[1] - lo[1] < 10.0
}

pub fn read_regions(text: &str, label: &str, rules: &IngestRules) -> CliResult<Vec<Region>> {
    let regions = regions_from_geojson(text, &rules.id_property).map_err(|e| CliError::Input(format!("{label}: {e}")))?;
    if regions.is_empty() {
        return Err(CliError::Input(format!("{label}: no features")));
    }
    let mut seen = BTreeSet::new();
    for r in &regions {
        if !seen.insert(r.id.as_str()) {
            return Err(CliError::Input(format!("{label}: duplicate site id '{}'", r.id)));
        }
    }
    if !rules.allow_geographic && looks_geographic(&regions) {
        return Err(CliError::Input(format!(
            "{label}: coordinates look like longitude/latitude degrees; project them to a planar CRS in meters \
             or pass --allow-geographic"
        )));
    }
    Ok(regions)
}

/// Builds a dataset from file contents; `labels` name the y, x and geometry
/// sources in error messages.
pub fn ingest_text(
    y_text: &str,
    x_text: &str,
    geo_text: &str,
    labels: [&str; 3],
    rules: &IngestRules,
    max_lag: usize,
) -> CliResult<Ingested> {
    let regions = read_regions(geo_text, labels[2], rules)?;
    let sites: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
    let index: HashMap<&str, usize> = sites.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut report = IngestReport::default();
    let y_rows = read_rows(y_text, labels[0], Series::Y, rules, &mut report)?;
    let x_rows = read_rows(x_text, labels[1], Series::X, rules, &mut report)?;

    let orphans: BTreeSet<&str> = y_rows
        .iter()
        .chain(&x_rows)
        .map(|r| r.site.as_str())
        .filter(|s| !index.contains_key(s))
        .collect();
    if !orphans.is_empty() {
        return Err(CliError::Input(format!(
            "observations reference sites absent from {}: {}",
            labels[2],
            orphans.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }

    let dates = || y_rows.iter().chain(&x_rows).map(|r| r.date);
    let origin = rules.start_date.or_else(|| dates().min());
    let end = rules.end_date.or_else(|| dates().max());
    let (Some(origin), Some(end)) = (origin, end) else {
        return Err(CliError::Input("no observations, and no start_date/end_date to define the grid".into()));
    };
    if end < origin {
        return Err(CliError::Input(format!("end date {end} precedes start date {origin}")));
    }
    let len = (end - origin).num_days() as usize + 1;
    let grid = Grid::new(len, max_lag);

    let mut assemble = |rows: Vec<Row>, label: &str| -> CliResult<Vec<SiteSeries>> {
        let mut per_site: Vec<BTreeMap<usize, (f64, u64)>> = vec![BTreeMap::new(); sites.len()];
        for r in rows {
            if r.date < origin || r.date > end {
                report.outside_window += 1;
                continue;
            }
            let t = (r.date - origin).num_days() as usize;
            if let Some((_, first)) = per_site[index[r.site.as_str()]].insert(t, (r.value, r.line)) {
                return Err(CliError::Input(format!(
                    "{label} row {}: duplicate observation for site '{}' on {} (first at row {first})",
                    r.line, r.site, r.date
                )));
            }
        }
        Ok(per_site
            .into_iter()
            .map(|m| SiteSeries::new(m.keys().copied().collect(), m.values().map(|v| v.0).collect()))
            .collect())
    };
    report.y_rows = y_rows.len();
    report.x_rows = x_rows.len();
    let y = assemble(y_rows, labels[0])?;
    let x = assemble(x_rows, labels[1])?;
    let dataset = Dataset { grid, sites, y, x, regions };
    dataset.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(Ingested { dataset, origin, report })
}

pub fn ingest(y: &Path, x: &Path, geo: &Path, rules: &IngestRules, max_lag: usize) -> CliResult<Ingested> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| CliError::input_at(p, e));
    let (yt, xt, gt) = (read(y)?, read(x)?, read(geo)?);
    let labels = [y, x, geo].map(|p| p.display().to_string());
    ingest_text(&yt, &xt, &gt, [&labels[0], &labels[1], &labels[2]], rules, max_lag)
}

/// One observation series as `site_id,date,value` rows; values are written
/// in shortest round-trip form.
pub fn series_csv(dataset: &Dataset, x_series: bool, origin: NaiveDate) -> String {
    let mut out = String::from("site_id,date,value\n");
    let series = if x_series { &dataset.x } else { &dataset.y };
    for (site, s) in dataset.sites.iter().zip(series) {
        for (&t, &v) in s.times.iter().zip(&s.values) {
            let date = origin + Days::new(t as u64);
            let _ = writeln!(out, "{site},{date},{v}");
        }
    }
    out
}
