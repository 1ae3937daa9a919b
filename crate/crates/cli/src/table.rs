//! CSV ingestion.
//!
//! Training tables have the columns `area_id`, `x_coord`, `y_coord`, any
//! number of covariates named `x_<name>` (in header order), `y`, and an
//! optional `month` (`yyyy-mm`). Prediction tables need only `x_coord`,
//! `y_coord` and the covariates the model was trained with. Other columns
//! are ignored with a warning.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use spatial_transfer::bench::MonthlyArea;
use spatial_transfer::{AreaDataset, CoordinateSet, ResponseKind};

use crate::error::{CliError, Result};

const AREA: &str = "area_id";
const X_COORD: &str = "x_coord";
const Y_COORD: &str = "y_coord";
const RESPONSE: &str = "y";
const MONTH: &str = "month";

fn is_covariate(name: &str) -> bool {
    name.starts_with("x_") && name != X_COORD && name.len() > 2
}

struct Columns {
    area: Option<usize>,
    x: usize,
    y: usize,
    response: Option<usize>,
    month: Option<usize>,
    covariates: Vec<(String, usize)>,
}

fn locate(headers: &csv::StringRecord, training: bool) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| CliError::schema(format!("missing required column `{name}`")))
    };
    for (i, h) in headers.iter().enumerate() {
        if headers.iter().take(i).any(|p| p == h) {
            return Err(CliError::schema(format!("duplicate column `{h}`")));
        }
    }
    let cols = Columns {
        area: if training {
            Some(need(AREA)?)
        } else {
            find(AREA)
        },
        x: need(X_COORD)?,
        y: need(Y_COORD)?,
        response: if training {
            Some(need(RESPONSE)?)
        } else {
            None
        },
        month: find(MONTH),
        covariates: headers
            .iter()
            .enumerate()
            .filter(|(_, h)| is_covariate(h))
            .map(|(i, h)| (h.to_string(), i))
            .collect(),
    };
    for h in headers.iter() {
        let known = [AREA, X_COORD, Y_COORD, RESPONSE, MONTH].contains(&h) || is_covariate(h);
        if !known {
            log::warn!("ignoring column `{h}`");
        }
    }
    Ok(cols)
}

fn cell<'r>(rec: &'r csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'r str> {
    match rec.get(idx).map(str::trim) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::schema(format!(
            "line {line}, column `{name}`: missing value"
        ))),
    }
}

fn number(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let v = cell(rec, idx, name, line)?;
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::schema(format!(
            "line {line}, column `{name}`: `{v}` is not a finite number"
        ))),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::Headers)
        .from_reader(r)
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::schema(format!("malformed CSV: {e}"))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path)
        .map_err(|e| CliError::io(format!("cannot open {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputRow {
    pub area_id: String,
    pub coord: [f64; 2],
    pub x: Vec<f64>,
    pub y: f64,
    pub month: Option<String>,
    /// 1-based line in the source file.
    pub line: u64,
}

/// Parsed training table.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    pub covariates: Vec<String>,
    pub has_month: bool,
    pub rows: Vec<InputRow>,
}

impl InputTable {
    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(open(path)?)
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = reader(r);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let cols = locate(&headers, true)?;
        let area = cols.area.expect("training table has area_id");
        let response = cols.response.expect("training table has y");
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map_or(0, |p| p.line());
            let month = match cols.month {
                Some(i) => {
                    let m = cell(&rec, i, MONTH, line)?;
                    spatial_transfer::bench::temporal::parse_month(m).map_err(|e| {
                        CliError::schema(format!("line {line}, column `month`: {e}"))
                    })?;
                    Some(m.to_string())
                }
                None => None,
            };
            rows.push(InputRow {
                area_id: cell(&rec, area, AREA, line)?.to_string(),
                coord: [
                    number(&rec, cols.x, X_COORD, line)?,
                    number(&rec, cols.y, Y_COORD, line)?,
                ],
                x: cols
                    .covariates
                    .iter()
                    .map(|(name, i)| number(&rec, *i, name, line))
                    .collect::<Result<_>>()?,
                y: number(&rec, response, RESPONSE, line)?,
                month,
                line,
            });
        }
        Ok(Self {
            covariates: cols.covariates.into_iter().map(|(n, _)| n).collect(),
            has_month: cols.month.is_some(),
            rows,
        })
    }

    /// Area ids in order of first appearance.
    pub fn area_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.area_id) {
                ids.push(r.area_id.clone());
            }
        }
        ids
    }

    fn rows_of<'a>(&'a self, area: &'a str) -> impl Iterator<Item = &'a InputRow> + 'a {
        self.rows.iter().filter(move |r| r.area_id == area)
    }

    pub fn dataset(&self, area: &str, kind: ResponseKind) -> Result<AreaDataset> {
        let rows: Vec<&InputRow> = self.rows_of(area).collect();
        if rows.is_empty() {
            return Err(CliError::config(format!(
                "area `{area}` not found in the input"
            )));
        }
        if kind == ResponseKind::Count {
            if let Some(r) = rows.iter().find(|r| r.y < 0.0 || r.y.fract() != 0.0) {
                return Err(CliError::schema(format!(
                    "line {}, column `y`: count response must be a nonnegative integer, got {}",
                    r.line, r.y
                )));
            }
        }
        let k = self.covariates.len();
        let coords = CoordinateSet::new(rows.iter().map(|r| r.coord).collect())?;
        let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i].x[j]);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
        Ok(AreaDataset::new(area, coords, x, y, kind)?)
    }

    pub fn monthly(&self, area: &str, kind: ResponseKind) -> Result<MonthlyArea> {
        if !self.has_month {
            return Err(CliError::schema("temporal split needs a `month` column"));
        }
        let months = self
            .rows_of(area)
            .map(|r| r.month.clone().expect("month column present"))
            .collect();
        Ok(MonthlyArea::new(self.dataset(area, kind)?, months)?)
    }
}

/// Parsed prediction table.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub covariates: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub x: DMatrix<f64>,
}

impl PredictionTable {
    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(open(path)?)
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = reader(r);
        let headers = rdr.headers().map_err(csv_error)?.clone();
        let cols = locate(&headers, false)?;
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_error)?;
            let line = rec.position().map_or(0, |p| p.line());
            coords.push([
                number(&rec, cols.x, X_COORD, line)?,
                number(&rec, cols.y, Y_COORD, line)?,
            ]);
            for (name, i) in &cols.covariates {
                values.push(number(&rec, *i, name, line)?);
            }
        }
        let k = cols.covariates.len();
        Ok(Self {
            covariates: cols.covariates.into_iter().map(|(n, _)| n).collect(),
            x: DMatrix::from_row_slice(coords.len(), k, &values),
            coords,
        })
    }
}
