//! Survival data containers, Kaplan-Meier jump weights, and the
//! environment x gene interaction design.
//!
//! Observed times are `y_i = min(t_i, c_i)` with event indicator
//! `delta_i = 1{t_i <= c_i}`. All estimation routines expect the data sorted
//! by observed time; [`SurvivalDataset::sort_by_time`] produces that order and
//! [`km_weights`] assigns each observation the mass the Kaplan-Meier estimator
//! places on its observed time. Censored observations get weight zero, and
//! events occurring after heavy censoring absorb the mass released by the
//! censored subjects ahead of them.

use ndarray::{Array1, Array2, Axis};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("row count mismatch: times {times}, status {status}, env rows {env}, gene rows {genes}")]
    LengthMismatch { times: usize, status: usize, env: usize, genes: usize },
    #[error("observation {row}: time {value} is not positive and finite")]
    BadTime { row: usize, value: f64 },
    #[error("observation {row}: status {value} is not 0 or 1")]
    BadStatus { row: usize, value: f64 },
    #[error("csv header: expected `{expected}` at column {column}, found `{found}`")]
    BadHeader { column: usize, expected: String, found: String },
    #[error("csv row {row}, column `{column}`: {message}")]
    BadCell { row: usize, column: String, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("coefficient vector has {got} entries, design needs {expected} (q={q}, p={p})")]
    BadCoefficientLength { got: usize, expected: usize, q: usize, p: usize },
}

/// One subject per row: observed time, event indicator, `q` environment
/// measurements and `p` gene measurements.
#[derive(Debug, Clone)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    status: Vec<u8>,
    env: Array2<f64>,
    genes: Array2<f64>,
}

impl SurvivalDataset {
    pub fn new(
        times: Vec<f64>,
        status: Vec<u8>,
        env: Array2<f64>,
        genes: Array2<f64>,
    ) -> Result<Self, DataError> {
        if times.is_empty() {
            return Err(DataError::Empty);
        }
        if times.len() != status.len()
            || env.nrows() != times.len()
            || genes.nrows() != times.len()
        {
            return Err(DataError::LengthMismatch {
                times: times.len(),
                status: status.len(),
                env: env.nrows(),
                genes: genes.nrows(),
            });
        }
        for (i, &t) in times.iter().enumerate() {
            if !(t.is_finite() && t > 0.0) {
                return Err(DataError::BadTime { row: i + 1, value: t });
            }
        }
        for (i, &d) in status.iter().enumerate() {
            if d > 1 {
                return Err(DataError::BadStatus { row: i + 1, value: d as f64 });
            }
        }
        Ok(SurvivalDataset { times, status, env, genes })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn q(&self) -> usize {
        self.env.ncols()
    }

    pub fn p(&self) -> usize {
        self.genes.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn status(&self) -> &[u8] {
        &self.status
    }

    pub fn env(&self) -> &Array2<f64> {
        &self.env
    }

    pub fn genes(&self) -> &Array2<f64> {
        &self.genes
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&d| d == 1).count()
    }

    pub fn is_sorted_by_time(&self) -> bool {
        self.times.windows(2).all(|w| w[0] <= w[1])
    }

    /// Returns a copy sorted by observed time, ascending. Ties are broken
    /// with events ahead of censored observations, so a subject who fails at
    /// the same instant another is censored is still counted as at risk of
    /// being observed.
    pub fn sort_by_time(&self) -> Self {
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| {
            self.times[a]
                .partial_cmp(&self.times[b])
                .expect("times validated finite")
                .then(self.status[b].cmp(&self.status[a]))
        });
        self.subset(&order)
    }

    /// Extracts the listed rows, in the listed order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let times = rows.iter().map(|&i| self.times[i]).collect();
        let status = rows.iter().map(|&i| self.status[i]).collect();
        let env = self.env.select(Axis(0), rows);
        let genes = self.genes.select(Axis(0), rows);
        SurvivalDataset { times, status, env, genes }
    }
}

/// Kaplan-Meier jump weights for a time-sorted sample.
///
/// With the data sorted ascending, observation `i` (1-based) receives
///
/// ```text
/// w_1 = delta_1 / n
/// w_i = delta_i / (n - i + 1) * prod_{j<i} ((n - j) / (n - j + 1))^delta_j
/// ```
///
/// which is exactly the mass the product-limit estimator drops at the i-th
/// observed time. The weights are nonnegative and sum to at most one, with
/// equality when the largest observation is an event.
pub fn km_weights(status: &[u8]) -> Result<Vec<f64>, DataError> {
    let n = status.len();
    if n == 0 {
        return Err(DataError::Empty);
    }
    let mut weights = Vec::with_capacity(n);
    // Running product over j < i of ((n-j)/(n-j+1))^delta_j.
    let mut survival = 1.0;
    for (i, &d) in status.iter().enumerate() {
        let at_risk = (n - i) as f64;
        weights.push(if d == 1 { survival / at_risk } else { 0.0 });
        if d == 1 {
            survival *= (at_risk - 1.0) / at_risk;
        }
    }
    Ok(weights)
}

/// Identifies one coordinate of the regression parameter: an environment
/// main effect, a gene main effect, or an interaction between the two.
/// Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coordinate {
    Env(usize),
    Gene(usize),
    Interaction { env: usize, gene: usize },
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Env(j) => write!(f, "env {}", j + 1),
            Coordinate::Gene(k) => write!(f, "gene {}", k + 1),
            Coordinate::Interaction { env, gene } => {
                write!(f, "interaction ({}, {})", env + 1, gene + 1)
            }
        }
    }
}

/// The model matrix `U = (X, Z, X (x) Z)` with `d = q + p + pq` columns.
///
/// Columns are ordered environment effects first, then gene effects, then
/// interactions grouped by environment variable: column `q + p + j*p + k`
/// holds `x_j * z_k`.
#[derive(Debug, Clone)]
pub struct InteractionDesign {
    rows: Array2<f64>,
    q: usize,
    p: usize,
}

impl InteractionDesign {
    /// Builds the design from environment and gene matrices with matching
    /// row counts.
    pub fn build(env: &Array2<f64>, genes: &Array2<f64>) -> Result<Self, DataError> {
        if env.nrows() != genes.nrows() {
            return Err(DataError::LengthMismatch {
                times: env.nrows(),
                status: env.nrows(),
                env: env.nrows(),
                genes: genes.nrows(),
            });
        }
        let n = env.nrows();
        let q = env.ncols();
        let p = genes.ncols();
        let d = q + p + p * q;
        let mut rows = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..q {
                rows[[i, j]] = env[[i, j]];
            }
            for k in 0..p {
                rows[[i, q + k]] = genes[[i, k]];
            }
            for j in 0..q {
                for k in 0..p {
                    rows[[i, q + p + j * p + k]] = env[[i, j]] * genes[[i, k]];
                }
            }
        }
        Ok(InteractionDesign { rows, q, p })
    }

    pub fn from_dataset(data: &SurvivalDataset) -> Result<Self, DataError> {
        Self::build(data.env(), data.genes())
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Maps a column index to its coordinate identity.
    pub fn coordinate(&self, idx: usize) -> Coordinate {
        assert!(idx < self.d(), "column {idx} out of range for d={}", self.d());
        if idx < self.q {
            Coordinate::Env(idx)
        } else if idx < self.q + self.p {
            Coordinate::Gene(idx - self.q)
        } else {
            let off = idx - self.q - self.p;
            Coordinate::Interaction { env: off / self.p, gene: off % self.p }
        }
    }

    /// Maps a coordinate identity back to its column index.
    pub fn index_of(&self, coord: Coordinate) -> Option<usize> {
        match coord {
            Coordinate::Env(j) if j < self.q => Some(j),
            Coordinate::Gene(k) if k < self.p => Some(self.q + k),
            Coordinate::Interaction { env, gene } if env < self.q && gene < self.p => {
                Some(self.q + self.p + env * self.p + gene)
            }
            _ => None,
        }
    }

    /// Extracts the listed rows, in the listed order.
    pub fn subset_rows(&self, rows: &[usize]) -> Self {
        InteractionDesign { rows: self.rows.select(Axis(0), rows), q: self.q, p: self.p }
    }
}

/// A coefficient vector laid out to match [`InteractionDesign`] columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    values: Array1<f64>,
    q: usize,
    p: usize,
}

impl CoefficientVector {
    pub fn zeros(q: usize, p: usize) -> Self {
        CoefficientVector { values: Array1::zeros(q + p + p * q), q, p }
    }

    pub fn from_values(values: Array1<f64>, q: usize, p: usize) -> Result<Self, DataError> {
        let expected = q + p + p * q;
        if values.len() != expected {
            return Err(DataError::BadCoefficientLength { got: values.len(), expected, q, p });
        }
        Ok(CoefficientVector { values, q, p })
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array1<f64> {
        &mut self.values
    }

    pub fn get(&self, coord: Coordinate) -> Option<f64> {
        self.index_of(coord).map(|i| self.values[i])
    }

    pub fn set(&mut self, coord: Coordinate, value: f64) -> Result<(), DataError> {
        match self.index_of(coord) {
            Some(i) => {
                self.values[i] = value;
                Ok(())
            }
            None => Err(DataError::BadCoefficientLength {
                got: 0,
                expected: self.d(),
                q: self.q,
                p: self.p,
            }),
        }
    }

    fn index_of(&self, coord: Coordinate) -> Option<usize> {
        match coord {
            Coordinate::Env(j) if j < self.q => Some(j),
            Coordinate::Gene(k) if k < self.p => Some(self.q + k),
            Coordinate::Interaction { env, gene } if env < self.q && gene < self.p => {
                Some(self.q + self.p + env * self.p + gene)
            }
            _ => None,
        }
    }

    pub fn coordinate(&self, idx: usize) -> Coordinate {
        if idx < self.q {
            Coordinate::Env(idx)
        } else if idx < self.q + self.p {
            Coordinate::Gene(idx - self.q)
        } else {
            let off = idx - self.q - self.p;
            Coordinate::Interaction { env: off / self.p, gene: off % self.p }
        }
    }

    /// Indices of nonzero entries.
    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0.0).then_some(i))
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }
}

/// Reads a dataset from CSV with header `time,status,x1..xq,z1..zp`.
///
/// The header determines `q` and `p`; `x` columns must precede `z` columns.
/// Cell errors are reported with the 1-based data row.
pub fn read_dataset_csv(path: &Path) -> Result<SurvivalDataset, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 2 || cols[0] != "time" || cols[1] != "status" {
        return Err(DataError::BadHeader {
            column: 1,
            expected: "time,status".into(),
            found: cols.first().unwrap_or(&"").to_string(),
        });
    }
    let mut q = 0;
    let mut idx = 2;
    while idx < cols.len() && cols[idx] == format!("x{}", q + 1) {
        q += 1;
        idx += 1;
    }
    let mut p = 0;
    while idx < cols.len() && cols[idx] == format!("z{}", p + 1) {
        p += 1;
        idx += 1;
    }
    if idx != cols.len() {
        return Err(DataError::BadHeader {
            column: idx + 1,
            expected: format!("x{} or z{}", q + 1, p + 1),
            found: cols[idx].to_string(),
        });
    }

    let mut times = Vec::new();
    let mut status = Vec::new();
    let mut env_flat = Vec::new();
    let mut gene_flat = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        if record.len() != cols.len() {
            return Err(DataError::BadCell {
                row,
                column: "(row)".into(),
                message: format!("expected {} fields, found {}", cols.len(), record.len()),
            });
        }
        let parse = |field: &str, name: &str| -> Result<f64, DataError> {
            field.trim().parse::<f64>().map_err(|_| DataError::BadCell {
                row,
                column: name.into(),
                message: format!("`{field}` is not a number"),
            })
        };
        let t = parse(&record[0], "time")?;
        if !(t.is_finite() && t > 0.0) {
            return Err(DataError::BadCell {
                row,
                column: "time".into(),
                message: format!("{t} is not a positive time"),
            });
        }
        let s = parse(&record[1], "status")?;
        if s != 0.0 && s != 1.0 {
            return Err(DataError::BadCell {
                row,
                column: "status".into(),
                message: format!("{s} is not 0 or 1"),
            });
        }
        times.push(t);
        status.push(s as u8);
        for j in 0..q {
            env_flat.push(parse(&record[2 + j], &format!("x{}", j + 1))?);
        }
        for k in 0..p {
            gene_flat.push(parse(&record[2 + q + k], &format!("z{}", k + 1))?);
        }
    }
    let n = times.len();
    if n == 0 {
        return Err(DataError::Empty);
    }
    let env = Array2::from_shape_vec((n, q), env_flat).expect("row-major env block");
    let genes = Array2::from_shape_vec((n, p), gene_flat).expect("row-major gene block");
    SurvivalDataset::new(times, status, env, genes)
}

/// Writes a dataset as CSV in the same layout [`read_dataset_csv`] accepts.
pub fn write_dataset_csv(data: &SurvivalDataset) -> String {
    let mut out = String::from("time,status");
    for j in 0..data.q() {
        out.push_str(&format!(",x{}", j + 1));
    }
    for k in 0..data.p() {
        out.push_str(&format!(",z{}", k + 1));
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&format!("{},{}", fmt_f64(data.times()[i]), data.status()[i]));
        for j in 0..data.q() {
            out.push_str(&format!(",{}", fmt_f64(data.env()[[i, j]])));
        }
        for k in 0..data.p() {
            out.push_str(&format!(",{}", fmt_f64(data.genes()[[i, k]])));
        }
        out.push('\n');
    }
    out
}

/// Writes nonzero coefficients as `coordinate_kind,j,k,value` rows.
/// Indices are 1-based; `k` is 0 except for interactions.
pub fn write_coefficients_csv(theta: &CoefficientVector, value_header: &str) -> String {
    let mut out = format!("coordinate_kind,j,k,{value_header}\n");
    for idx in 0..theta.d() {
        let v = theta.values()[idx];
        if v == 0.0 {
            continue;
        }
        let (kind, j, k) = match theta.coordinate(idx) {
            Coordinate::Env(j) => ("env", j + 1, 0),
            Coordinate::Gene(k) => ("gene", k + 1, 0),
            Coordinate::Interaction { env, gene } => ("interaction", env + 1, gene + 1),
        };
        out.push_str(&format!("{kind},{j},{k},{}\n", fmt_f64(v)));
    }
    out
}

/// Reads coefficients written by [`write_coefficients_csv`] back into a
/// vector for a design of the given shape. Unlisted coordinates are zero.
pub fn read_coefficients_csv(path: &Path, q: usize, p: usize) -> Result<CoefficientVector, DataError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut theta = CoefficientVector::zeros(q, p);
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let bad = |column: &str, message: String| DataError::BadCell {
            row,
            column: column.into(),
            message,
        };
        let j: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| bad("j", format!("`{}` is not an index", &record[1])))?;
        let k: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| bad("k", format!("`{}` is not an index", &record[2])))?;
        let value: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| bad("value", format!("`{}` is not a number", &record[3])))?;
        let coord = match record[0].trim() {
            "env" => Coordinate::Env(j.wrapping_sub(1)),
            "gene" => Coordinate::Gene(j.wrapping_sub(1)),
            "interaction" => {
                Coordinate::Interaction { env: j.wrapping_sub(1), gene: k.wrapping_sub(1) }
            }
            other => return Err(bad("coordinate_kind", format!("unknown kind `{other}`"))),
        };
        theta
            .set(coord, value)
            .map_err(|_| bad("j", format!("coordinate out of range for q={q}, p={p}")))?;
    }
    Ok(theta)
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation; Rust's float Display guarantees
    // parse(format(v)) == v.
    format!("{v}")
}
