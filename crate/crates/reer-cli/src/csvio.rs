//! CSV stream replay: turns a flat file into a sequence of [`Batch`]es
//! without ever holding more than one batch (plus a one-row lookahead) in
//! memory.

use std::collections::HashSet;
use std::fs::File;
use std::path::PathBuf;

use reer_core::Batch;

use crate::CliError;

/// How rows of the source file are grouped into batches.
#[derive(Debug, Clone)]
pub enum Batching {
    /// Fixed-size chunks in file order; the final chunk may be short.
    BySize(usize),
    /// Contiguous runs of equal values in the named column, one batch per
    /// run. A value reappearing after its run has ended is an error: the
    /// earlier batch has already been consumed and cannot be reopened.
    ByColumn(String),
}

/// Replay schema for one CSV source.
#[derive(Debug, Clone)]
pub struct StreamSpec {
    pub source: PathBuf,
    pub batching: Batching,
    pub response_column: String,
    pub feature_columns: Vec<String>,
    /// Prepend a constant 1.0 column (on by default in the CLI).
    pub add_intercept: bool,
    /// Skip unparseable rows instead of aborting.
    pub drop_bad_rows: bool,
}

/// One parsed data row: design row, response, optional batch label.
struct Row {
    x: Vec<f64>,
    y: f64,
    label: Option<String>,
    line: u64,
}

/// Accumulates rows for the batch currently being assembled.
struct RowBuffer {
    xs: Vec<f64>,
    ys: Vec<f64>,
    p: usize,
}

impl RowBuffer {
    fn new(p: usize) -> RowBuffer {
        RowBuffer { xs: Vec::new(), ys: Vec::new(), p }
    }

    fn push(&mut self, row: Row) {
        self.xs.extend_from_slice(&row.x);
        self.ys.push(row.y);
    }

    fn len(&self) -> usize {
        self.ys.len()
    }

    fn into_batch(self) -> Result<Option<Batch>, CliError> {
        if self.ys.is_empty() {
            return Ok(None);
        }
        Ok(Some(Batch::new(self.xs, self.ys, self.p)?))
    }
}

/// Incremental reader yielding one [`Batch`] at a time.
///
/// Tracks the peak number of rows simultaneously resident so tests can
/// assert the bounded-memory contract: for size-based batching the peak
/// equals the batch size; column grouping needs one extra row of lookahead
/// to detect where a run ends.
pub struct BatchReader {
    reader: csv::Reader<File>,
    batching: Batching,
    y_index: usize,
    feature_indices: Vec<usize>,
    label_index: Option<usize>,
    add_intercept: bool,
    drop_bad_rows: bool,
    p: usize,
    pending: Option<Row>,
    finished_labels: HashSet<String>,
    rows_dropped: u64,
    rows_read: u64,
    peak_rows: usize,
    last_line: u64,
}

impl BatchReader {
    pub fn open(spec: &StreamSpec) -> Result<BatchReader, CliError> {
        if spec.feature_columns.is_empty() {
            return Err(CliError::Schema("at least one feature column is required".into()));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_path(&spec.source)?;
        let headers = reader.headers()?.clone();
        let find = |name: &str| -> Result<usize, CliError> {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                CliError::Schema(format!(
                    "column '{}' not found in header of {}",
                    name,
                    spec.source.display()
                ))
            })
        };
        let y_index = find(&spec.response_column)?;
        let feature_indices = spec
            .feature_columns
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>, _>>()?;
        let label_index = match &spec.batching {
            Batching::ByColumn(col) => Some(find(col)?),
            Batching::BySize(_) => None,
        };
        Ok(BatchReader {
            reader,
            batching: spec.batching.clone(),
            y_index,
            feature_indices,
            label_index,
            add_intercept: spec.add_intercept,
            drop_bad_rows: spec.drop_bad_rows,
            p: spec.feature_columns.len() + usize::from(spec.add_intercept),
            pending: None,
            finished_labels: HashSet::new(),
            rows_dropped: 0,
            rows_read: 0,
            peak_rows: 0,
            last_line: 1,
        })
    }

    /// Design columns per row, including the intercept if enabled.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Rows skipped so far under `drop_bad_rows`.
    pub fn rows_dropped(&self) -> u64 {
        self.rows_dropped
    }

    /// Most rows ever simultaneously buffered (lookahead included).
    pub fn peak_rows(&self) -> usize {
        self.peak_rows
    }

    /// Next parsed row, skipping dropped ones; `None` at end of file.
    fn next_row(&mut self) -> Result<Option<Row>, CliError> {
        let mut record = csv::StringRecord::new();
        loop {
            if !self.reader.read_record(&mut record)? {
                return Ok(None);
            }
            let line = record.position().map_or(self.last_line + 1, |p| p.line());
            self.last_line = line;
            match self.parse_record(&record, line) {
                Ok(row) => {
                    self.rows_read += 1;
                    return Ok(Some(row));
                }
                Err(e) => {
                    if self.drop_bad_rows {
                        self.rows_dropped += 1;
                        continue;
                    }
                    return Err(e);
                }
            }
        }
    }

    fn parse_record(&self, record: &csv::StringRecord, line: u64) -> Result<Row, CliError> {
        let field = |idx: usize| -> Result<&str, CliError> {
            record.get(idx).ok_or_else(|| CliError::MalformedRow {
                line,
                detail: format!("row has {} fields, column {} is missing", record.len(), idx + 1),
            })
        };
        let numeric = |idx: usize| -> Result<f64, CliError> {
            let raw = field(idx)?;
            let v: f64 = raw.trim().parse().map_err(|_| CliError::MalformedRow {
                line,
                detail: format!("'{raw}' is not numeric"),
            })?;
            if !v.is_finite() {
                return Err(CliError::MalformedRow {
                    line,
                    detail: format!("'{raw}' is not finite"),
                });
            }
            Ok(v)
        };
        let mut x = Vec::with_capacity(self.p);
        if self.add_intercept {
            x.push(1.0);
        }
        for &idx in &self.feature_indices {
            x.push(numeric(idx)?);
        }
        let y = numeric(self.y_index)?;
        let label = match self.label_index {
            Some(idx) => Some(field(idx)?.to_string()),
            None => None,
        };
        Ok(Row { x, y, label, line })
    }

    fn note_resident(&mut self, buffered: usize) {
        let resident = buffered + usize::from(self.pending.is_some());
        self.peak_rows = self.peak_rows.max(resident);
    }

    fn reject_reappearance(&self, col: &str, label: &str, line: u64) -> Result<(), CliError> {
        if self.finished_labels.contains(label) {
            return Err(CliError::MalformedRow {
                line,
                detail: format!(
                    "batch column '{col}' value '{label}' reappears after its batch ended; \
                     batches must be contiguous"
                ),
            });
        }
        Ok(())
    }

    /// Reads the next batch; `None` once the file is exhausted.
    pub fn next_batch(&mut self) -> Result<Option<Batch>, CliError> {
        let mut buf = RowBuffer::new(self.p);

        match self.batching.clone() {
            Batching::BySize(size) => {
                while buf.len() < size {
                    match self.next_row()? {
                        Some(row) => {
                            buf.push(row);
                            self.note_resident(buf.len());
                        }
                        None => break,
                    }
                }
            }
            Batching::ByColumn(col) => {
                let mut current: Option<String> = None;
                if let Some(row) = self.pending.take() {
                    current = row.label.clone();
                    buf.push(row);
                    self.note_resident(buf.len());
                }
                while let Some(row) = self.next_row()? {
                    let label = row.label.clone().unwrap_or_default();
                    match &current {
                        Some(cur) if *cur == label => {
                            buf.push(row);
                            self.note_resident(buf.len());
                        }
                        Some(_) => {
                            self.reject_reappearance(&col, &label, row.line)?;
                            self.pending = Some(row);
                            self.note_resident(buf.len());
                            break;
                        }
                        None => {
                            self.reject_reappearance(&col, &label, row.line)?;
                            current = Some(label);
                            buf.push(row);
                            self.note_resident(buf.len());
                        }
                    }
                }
                if let Some(label) = current {
                    self.finished_labels.insert(label);
                }
            }
        }

        buf.into_batch()
    }
}
