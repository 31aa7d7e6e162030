//! Tidy per-panel tables cut from `aggregate.csv`.
//!
//! Every panel has columns `x` (N), `series`, `y` (metric mean), `ci_low`
//! and `ci_high`. Density panels compare redundancy modes at the smallest β
//! in the file; β panels compare β values in hard mode.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::str::FromStr;

use csesim_core::MetricName;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    CseByMode,
    ArrByMode,
    AttemptByMode,
    SuccessByMode,
    DropByMode,
    RebroadcastByMode,
    CseByBeta,
    ArrByBeta,
    SuccessByBeta,
    RedundancyShareByBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesAxis {
    Mode,
    Beta,
}

impl Panel {
    pub const ALL: [Panel; 10] = [
        Panel::CseByMode,
        Panel::ArrByMode,
        Panel::AttemptByMode,
        Panel::SuccessByMode,
        Panel::DropByMode,
        Panel::RebroadcastByMode,
        Panel::CseByBeta,
        Panel::ArrByBeta,
        Panel::SuccessByBeta,
        Panel::RedundancyShareByBeta,
    ];

    /// Short id used on the command line and in file names.
    pub fn id(self) -> &'static str {
        match self {
            Panel::CseByMode => "3a",
            Panel::ArrByMode => "3b",
            Panel::AttemptByMode => "4a",
            Panel::SuccessByMode => "4b",
            Panel::DropByMode => "5a",
            Panel::RebroadcastByMode => "5b",
            Panel::CseByBeta => "6a",
            Panel::ArrByBeta => "6b",
            Panel::SuccessByBeta => "7a",
            Panel::RedundancyShareByBeta => "7b",
        }
    }

    pub fn metric(self) -> MetricName {
        match self {
            Panel::CseByMode | Panel::CseByBeta => MetricName::PCse,
            Panel::ArrByMode | Panel::ArrByBeta => MetricName::Arr,
            Panel::AttemptByMode => MetricName::PAtt,
            Panel::SuccessByMode | Panel::SuccessByBeta => MetricName::PSucc,
            Panel::DropByMode => MetricName::PDrop,
            Panel::RebroadcastByMode => MetricName::PRebroadcast,
            Panel::RedundancyShareByBeta => MetricName::RedundancyCseRatio,
        }
    }

    pub fn series_axis(self) -> SeriesAxis {
        match self {
            Panel::CseByBeta | Panel::ArrByBeta | Panel::SuccessByBeta | Panel::RedundancyShareByBeta => SeriesAxis::Beta,
            _ => SeriesAxis::Mode,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("unknown panel {0:?}; expected one of 3a, 3b, 4a, 4b, 5a, 5b, 6a, 6b, 7a, 7b")]
pub struct UnknownPanel(pub String);

impl FromStr for Panel {
    type Err = UnknownPanel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Panel::ALL.into_iter().find(|p| p.id() == s).ok_or_else(|| UnknownPanel(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FigureError {
    #[error("aggregate CSV has no {0:?} column")]
    MissingColumn(String),
    #[error("aggregate CSV line {line}: {message}")]
    Value { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TidyRow {
    pub x: usize,
    pub series: String,
    pub y: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

struct AggRow {
    n: usize,
    beta: f64,
    mode: String,
    y: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
}

/// Cut one panel out of an aggregate CSV.
pub fn emit_figure_data(aggregate: impl Read, panel: Panel) -> Result<Vec<TidyRow>, FigureError> {
    let mut reader = csv::Reader::from_reader(aggregate);
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| FigureError::MissingColumn(name.to_string()));
    let m = panel.metric().as_str();
    let (cn, cb, cm) = (col("n_vehicles")?, col("beta")?, col("mode")?);
    let (cy, clo, chi) = (col(m)?, col(&format!("{m}_ci_low"))?, col(&format!("{m}_ci_high"))?);

    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| FigureError::Value { line, message };
        let num = |i: usize| -> Result<Option<f64>, FigureError> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("{s:?} is not a number")))
            }
        };
        rows.push(AggRow {
            n: rec[cn].parse().map_err(|_| bad(format!("bad n_vehicles {:?}", &rec[cn])))?,
            beta: num(cb)?.ok_or_else(|| bad("missing beta".into()))?,
            mode: rec[cm].to_string(),
            y: num(cy)?,
            lo: num(clo)?,
            hi: num(chi)?,
        });
    }

    let keep: Box<dyn Fn(&AggRow) -> Option<String>> = match panel.series_axis() {
        SeriesAxis::Mode => {
            let base = rows.iter().map(|r| r.beta).fold(f64::INFINITY, f64::min);
            Box::new(move |r| (r.beta == base).then(|| r.mode.clone()))
        }
        SeriesAxis::Beta => Box::new(|r| (r.mode == "hard").then(|| format!("beta={}", r.beta))),
    };
    let mut out: Vec<TidyRow> = rows
        .iter()
        .filter_map(|r| keep(r).map(|series| TidyRow { x: r.n, series, y: r.y, ci_low: r.lo, ci_high: r.hi }))
        .collect();
    // Group by series in first-seen order, then by N.
    let mut seen = BTreeSet::new();
    let first: Vec<String> = out.iter().map(|r| r.series.clone()).filter(|s| seen.insert(s.clone())).collect();
    out.sort_by_key(|r| (first.iter().position(|s| *s == r.series), r.x));
    Ok(out)
}

pub fn write_tidy(rows: &[TidyRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["x", "series", "y", "ci_low", "ci_high"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
