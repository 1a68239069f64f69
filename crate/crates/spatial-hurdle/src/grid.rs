//! Masked rectangular grids, their neighbor graph, and raster plumbing.
//!
//! Cells live on an `n_rows x n_cols` raster; a mask marks which cells
//! participate in the model. Unmasked cells get compact indices `0..n` in
//! row-major order, and the 4-neighborhood (rook adjacency) among unmasked
//! cells defines the graph Laplacian used by the GMRF prior.
//!
//! This module also owns the file-facing plumbing: loading a modeling dataset
//! from CSV (masking cells with missing covariates), reading/writing simple
//! `row,col,value` rasters, and the daily-raster aggregation that turns fine
//! fire observations into monthly coarse counts.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hurdle_model::{Dataset, DesignMatrix};
use crate::sparse::SparseSymmetric;

/// A rectangular grid with an activity mask and a compact row-major index for
/// active cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    n_rows: usize,
    n_cols: usize,
    mask: Vec<bool>,
    /// Row-major (row * n_cols + col) -> compact index for active cells.
    cell_index: Vec<Option<usize>>,
    /// Compact index -> (row, col).
    cells: Vec<(usize, usize)>,
}

impl GridSpec {
    /// Grid with every cell active.
    pub fn full(n_rows: usize, n_cols: usize) -> Result<Self> {
        Self::with_mask(n_rows, n_cols, vec![true; n_rows * n_cols])
    }

    /// Grid with an explicit mask (`true` = cell participates), given in
    /// row-major order. At least one cell must be active.
    pub fn with_mask(n_rows: usize, n_cols: usize, mask: Vec<bool>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Invalid("grid dimensions must be positive".into()));
        }
        if mask.len() != n_rows * n_cols {
            return Err(Error::Dimension {
                context: "grid mask",
                expected: n_rows * n_cols,
                got: mask.len(),
            });
        }
        let mut cell_index = vec![None; n_rows * n_cols];
        let mut cells = Vec::new();
        for row in 0..n_rows {
            for col in 0..n_cols {
                let flat = row * n_cols + col;
                if mask[flat] {
                    cell_index[flat] = Some(cells.len());
                    cells.push((row, col));
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Invalid("grid has no active cells".into()));
        }
        Ok(Self {
            n_rows,
            n_cols,
            mask,
            cell_index,
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of active cells n.
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn is_active(&self, row: usize, col: usize) -> bool {
        row < self.n_rows && col < self.n_cols && self.mask[row * self.n_cols + col]
    }

    /// Compact index of an active cell, if any.
    pub fn index_of(&self, row: usize, col: usize) -> Option<usize> {
        if row < self.n_rows && col < self.n_cols {
            self.cell_index[row * self.n_cols + col]
        } else {
            None
        }
    }

    /// (row, col) of the i-th active cell.
    pub fn coords(&self, i: usize) -> (usize, usize) {
        self.cells[i]
    }

    /// Active 4-neighbors (up/down/left/right) of the i-th active cell, as
    /// compact indices in ascending order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let (row, col) = self.cells[i];
        let mut out = Vec::with_capacity(4);
        if row > 0 {
            if let Some(j) = self.index_of(row - 1, col) {
                out.push(j);
            }
        }
        if col > 0 {
            if let Some(j) = self.index_of(row, col - 1) {
                out.push(j);
            }
        }
        if let Some(j) = self.index_of(row, col + 1) {
            out.push(j);
        }
        if let Some(j) = self.index_of(row + 1, col) {
            out.push(j);
        }
        out.sort_unstable();
        out
    }

    /// Degree d_i = |N(i)| of the i-th active cell.
    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }
}

/// Graph Laplacian G of the active-cell neighbor graph: G[i][i] = d_i,
/// G[i][j] = -1 for neighbors, 0 otherwise. Rows sum to zero and G is
/// positive semidefinite.
pub fn build_laplacian(grid: &GridSpec) -> SparseSymmetric {
    let n = grid.n_cells();
    let mut trips = Vec::with_capacity(3 * n);
    for i in 0..n {
        let nb = grid.neighbors(i);
        trips.push((i, i, nb.len() as f64));
        for j in nb {
            if j > i {
                trips.push((i, j, -1.0));
            }
        }
    }
    SparseSymmetric::from_triplets(n, &trips).expect("laplacian triplets are in range")
}

/// A stack of daily rasters at fine resolution. `None` marks a missing
/// observation; present values must be finite and nonnegative (checked when
/// aggregating).
#[derive(Debug, Clone)]
pub struct RasterStack {
    fine_rows: usize,
    fine_cols: usize,
    days: Vec<Vec<Option<f64>>>,
}

impl RasterStack {
    pub fn new(fine_rows: usize, fine_cols: usize) -> Result<Self> {
        if fine_rows == 0 || fine_cols == 0 {
            return Err(Error::Invalid("raster dimensions must be positive".into()));
        }
        Ok(Self {
            fine_rows,
            fine_cols,
            days: Vec::new(),
        })
    }

    pub fn push_day(&mut self, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.fine_rows * self.fine_cols {
            return Err(Error::Dimension {
                context: "raster day",
                expected: self.fine_rows * self.fine_cols,
                got: values.len(),
            });
        }
        self.days.push(values);
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn fine_rows(&self) -> usize {
        self.fine_rows
    }

    pub fn fine_cols(&self) -> usize {
        self.fine_cols
    }
}

/// Coarse monthly counts produced by [`aggregate_monthly`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarseCounts {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major counts, each in 0..=n_days.
    pub counts: Vec<u32>,
}

/// Down-sample by `factor`, binarize per day, and sum over days.
///
/// Each coarse cell covers a `factor x factor` block of fine cells (trailing
/// partial blocks are dropped). For every day, the block's present values are
/// summed; a positive sum marks the coarse cell as burning that day, and the
/// monthly count is the number of burning days. Missing fine cells simply
/// contribute nothing to the daily sum.
pub fn aggregate_monthly(stack: &RasterStack, factor: usize) -> Result<CoarseCounts> {
    if factor < 1 {
        return Err(Error::Invalid("aggregation factor must be >= 1".into()));
    }
    let n_rows = stack.fine_rows / factor;
    let n_cols = stack.fine_cols / factor;
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::Invalid(format!(
            "aggregation factor {factor} leaves no complete coarse cell for a {}x{} raster",
            stack.fine_rows, stack.fine_cols
        )));
    }
    let mut counts = vec![0u32; n_rows * n_cols];
    for (day, values) in stack.days.iter().enumerate() {
        for (flat, value) in values.iter().enumerate() {
            if let Some(v) = value {
                if !(*v >= 0.0) || !v.is_finite() {
                    return Err(Error::Invalid(format!(
                        "day {day}: raster value {v} at flat index {flat} is negative or non-finite"
                    )));
                }
            }
        }
        for cr in 0..n_rows {
            for cc in 0..n_cols {
                let mut sum = 0.0;
                for fr in cr * factor..(cr + 1) * factor {
                    for fc in cc * factor..(cc + 1) * factor {
                        if let Some(v) = values[fr * stack.fine_cols + fc] {
                            sum += v;
                        }
                    }
                }
                if sum > 0.0 {
                    counts[cr * n_cols + cc] += 1;
                }
            }
        }
    }
    Ok(CoarseCounts {
        n_rows,
        n_cols,
        counts,
    })
}

/// A single raster grid read from or written to `row,col,value` CSV. Cells
/// absent from the file are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<Option<f64>>,
}

impl Raster {
    pub fn constant(n_rows: usize, n_cols: usize, value: f64) -> Self {
        Self {
            n_rows,
            n_cols,
            values: vec![Some(value); n_rows * n_cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row < self.n_rows && col < self.n_cols {
            self.values[row * self.n_cols + col]
        } else {
            None
        }
    }
}

/// Read a `row,col,value` CSV raster. Dimensions are the smallest rectangle
/// containing every listed cell; an empty value field marks the cell missing.
pub fn read_raster_csv(path: &Path) -> Result<Raster> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::from_csv(e, path))?;
    check_headers(&mut reader, path, &["row", "col", "value"])?;

    let mut cells: Vec<(usize, usize, Option<f64>)> = Vec::new();
    let mut max_row = 0usize;
    let mut max_col = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::from_csv(e, path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = parse_index(record.get(0), path, line, "row")?;
        let col = parse_index(record.get(1), path, line, "col")?;
        let raw = record.get(2).unwrap_or("").trim();
        let value = if is_missing(raw) {
            None
        } else {
            Some(parse_float(raw, path, line, "value")?)
        };
        max_row = max_row.max(row);
        max_col = max_col.max(col);
        cells.push((row, col, value));
    }
    if cells.is_empty() {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: "raster has no cells".into(),
        });
    }
    let (n_rows, n_cols) = (max_row + 1, max_col + 1);
    let mut values = vec![None; n_rows * n_cols];
    for (row, col, value) in cells {
        values[row * n_cols + col] = value;
    }
    Ok(Raster {
        n_rows,
        n_cols,
        values,
    })
}

/// Write a raster as `row,col,value` CSV. Missing cells are skipped; values
/// are printed with full precision.
pub fn write_raster_csv(path: &Path, raster: &Raster) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::from_csv(e, path))?;
    writer
        .write_record(["row", "col", "value"])
        .map_err(|e| Error::from_csv(e, path))?;
    for row in 0..raster.n_rows {
        for col in 0..raster.n_cols {
            if let Some(v) = raster.values[row * raster.n_cols + col] {
                writer
                    .write_record([row.to_string(), col.to_string(), format!("{v:.16e}")])
                    .map_err(|e| Error::from_csv(e, path))?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a daily raster stack from long-format CSV with header
/// `day,row,col,value`. Day indices must cover `0..n_days` (no day may be
/// entirely absent); dimensions are the smallest rectangle containing every
/// listed cell. Cells absent from a day, or listed with an empty/`NA` value,
/// are missing for that day.
pub fn read_stack_csv(path: &Path) -> Result<RasterStack> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::from_csv(e, path))?;
    check_headers(&mut reader, path, &["day", "row", "col", "value"])?;

    let mut cells: Vec<(usize, usize, usize, Option<f64>)> = Vec::new();
    let (mut max_day, mut max_row, mut max_col) = (0usize, 0usize, 0usize);
    for record in reader.records() {
        let record = record.map_err(|e| Error::from_csv(e, path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let day = parse_index(record.get(0), path, line, "day")?;
        let row = parse_index(record.get(1), path, line, "row")?;
        let col = parse_index(record.get(2), path, line, "col")?;
        let raw = record.get(3).unwrap_or("").trim();
        let value = if is_missing(raw) {
            None
        } else {
            Some(parse_float(raw, path, line, "value")?)
        };
        max_day = max_day.max(day);
        max_row = max_row.max(row);
        max_col = max_col.max(col);
        cells.push((day, row, col, value));
    }
    if cells.is_empty() {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: "raster stack has no cells".into(),
        });
    }
    let (n_days, n_rows, n_cols) = (max_day + 1, max_row + 1, max_col + 1);
    let mut days = vec![vec![None; n_rows * n_cols]; n_days];
    let mut seen = vec![false; n_days];
    for (day, row, col, value) in cells {
        days[day][row * n_cols + col] = value;
        seen[day] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: format!("day {missing} has no records but day {max_day} exists"),
        });
    }
    let mut stack = RasterStack::new(n_rows, n_cols)?;
    for day in days {
        stack.push_day(day)?;
    }
    Ok(stack)
}

/// Write aggregated counts as `row,col,count` CSV over the full coarse grid.
pub fn write_counts_csv(path: &Path, counts: &CoarseCounts) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::from_csv(e, path))?;
    writer
        .write_record(["row", "col", "count"])
        .map_err(|e| Error::from_csv(e, path))?;
    for row in 0..counts.n_rows {
        for col in 0..counts.n_cols {
            let c = counts.counts[row * counts.n_cols + col];
            writer
                .write_record([row.to_string(), col.to_string(), c.to_string()])
                .map_err(|e| Error::from_csv(e, path))?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Load a modeling dataset from CSV with header `row,col,count,<covariates...>`.
///
/// Cells whose record has any missing covariate value are masked (their count
/// is discarded), mirroring how cells with incomplete climate covariates are
/// excluded. Cells absent from the file are masked as well. Duplicate
/// coordinates, negative counts, and unparseable numbers are reported with
/// their line number.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::from_csv(e, path))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::from_csv(e, path))?
        .clone();
    let cols: Vec<&str> = headers.iter().map(str::trim).collect();
    if cols.len() < 3
        || !cols[0].eq_ignore_ascii_case("row")
        || !cols[1].eq_ignore_ascii_case("col")
        || !cols[2].eq_ignore_ascii_case("count")
    {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: format!(
                "expected header row,col,count,<covariates...>; got {:?}",
                cols.join(",")
            ),
        });
    }
    let covariate_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    let k = covariate_names.len();

    struct Row {
        count: u64,
        covariates: Option<Vec<f64>>, // None: at least one missing -> masked
    }
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: Vec<((usize, usize), Row)> = Vec::new();
    let mut max_row = 0usize;
    let mut max_col = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::from_csv(e, path))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 + k {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, got {}", 3 + k, record.len()),
            });
        }
        let row = parse_index(record.get(0), path, line, "row")?;
        let col = parse_index(record.get(1), path, line, "col")?;
        if let Some(&first) = seen.get(&(row, col)) {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate cell ({row}, {col}); first seen at line {first}"),
            });
        }
        seen.insert((row, col), line);

        let count_raw = record.get(2).unwrap_or("").trim();
        let count: i64 = count_raw.parse().map_err(|_| Error::Record {
            path: path.to_path_buf(),
            line,
            message: format!("count {count_raw:?} is not an integer"),
        })?;
        if count < 0 {
            return Err(Error::Record {
                path: path.to_path_buf(),
                line,
                message: format!("count {count} is negative"),
            });
        }

        let mut covariates = Vec::with_capacity(k);
        let mut missing = false;
        for (idx, name) in covariate_names.iter().enumerate() {
            let raw = record.get(3 + idx).unwrap_or("").trim();
            if is_missing(raw) {
                missing = true;
                break;
            }
            let v = parse_float(raw, path, line, name)?;
            covariates.push(v);
        }
        max_row = max_row.max(row);
        max_col = max_col.max(col);
        rows.push((
            (row, col),
            Row {
                count: count as u64,
                covariates: if missing { None } else { Some(covariates) },
            },
        ));
    }
    if rows.is_empty() {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: "dataset has no records".into(),
        });
    }

    let (n_rows, n_cols) = (max_row + 1, max_col + 1);
    let mut mask = vec![false; n_rows * n_cols];
    let mut by_cell: HashMap<(usize, usize), Row> = HashMap::new();
    for ((row, col), data) in rows {
        if data.covariates.is_some() {
            mask[row * n_cols + col] = true;
        }
        by_cell.insert((row, col), data);
    }
    let grid = GridSpec::with_mask(n_rows, n_cols, mask)?;

    let n = grid.n_cells();
    let mut counts = Vec::with_capacity(n);
    let mut design_rows = Vec::with_capacity(n);
    for i in 0..n {
        let (row, col) = grid.coords(i);
        let data = &by_cell[&(row, col)];
        counts.push(data.count);
        let covs = data.covariates.as_ref().expect("active cell has covariates");
        let mut design_row = Vec::with_capacity(k + 1);
        design_row.push(1.0);
        design_row.extend_from_slice(covs);
        design_rows.push(design_row);
    }
    let design = DesignMatrix::from_rows(design_rows)?;
    Dataset::new(grid, counts, design, covariate_names)
}

/// Write a dataset in the same CSV format that [`load_dataset`] reads.
/// Active cells carry their covariates; masked cells are omitted entirely.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::from_csv(e, path))?;
    let mut header = vec!["row".to_string(), "col".to_string(), "count".to_string()];
    header.extend(data.covariate_names().iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::from_csv(e, path))?;
    let grid = data.grid();
    for i in 0..grid.n_cells() {
        let (row, col) = grid.coords(i);
        let mut record = vec![row.to_string(), col.to_string(), data.counts()[i].to_string()];
        for j in 1..data.design().n_cols() {
            record.push(format!("{:.16e}", data.design().row(i)[j]));
        }
        writer
            .write_record(&record)
            .map_err(|e| Error::from_csv(e, path))?;
    }
    writer.flush()?;
    Ok(())
}

fn is_missing(raw: &str) -> bool {
    raw.is_empty() || raw.eq_ignore_ascii_case("na") || raw.eq_ignore_ascii_case("nan")
}

fn parse_index(field: Option<&str>, path: &Path, line: u64, name: &str) -> Result<usize> {
    let raw = field.unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Record {
        path: path.to_path_buf(),
        line,
        message: format!("{name} {raw:?} is not a nonnegative integer"),
    })
}

fn parse_float(raw: &str, path: &Path, line: u64, name: &str) -> Result<f64> {
    let v: f64 = raw.parse().map_err(|_| Error::Record {
        path: path.to_path_buf(),
        line,
        message: format!("{name} {raw:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Record {
            path: path.to_path_buf(),
            line,
            message: format!("{name} {raw:?} is not finite"),
        });
    }
    Ok(v)
}

fn check_headers(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
    expected: &[&str],
) -> Result<()> {
    let headers = reader.headers().map_err(|e| Error::from_csv(e, path))?;
    let got: Vec<String> = headers.iter().map(|s| s.trim().to_lowercase()).collect();
    if got.len() < expected.len() || !expected.iter().zip(&got).all(|(e, g)| e == g) {
        return Err(Error::FileFormat {
            path: path.to_path_buf(),
            message: format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}
