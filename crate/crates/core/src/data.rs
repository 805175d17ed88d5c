//! Traffic-count ingestion, 15-minute bin aggregation, rolling-window
//! dataset construction, chronological splitting, and normalization.

use crate::error::{Error, Result};
use chrono::{Duration, NaiveDateTime};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";
pub const DEFAULT_WINDOW_LEN: usize = 12;
pub const DEFAULT_BIN_MINUTES: i64 = 15;

/// One row of the raw export: per-intersection, per-direction,
/// per-vehicle-class count in one time bin.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub intersection_id: String,
    pub timestamp: NaiveDateTime,
    pub direction: String,
    pub vehicle_class: String,
    pub volume: f64,
    /// 1-based data row number in the source file, for error reporting.
    pub row: usize,
}

/// Column-name remapping for real-world exports whose headers differ from
/// the defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub intersection_id: String,
    pub timestamp: String,
    pub direction: String,
    pub vehicle_class: String,
    pub volume: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            intersection_id: "intersection_id".into(),
            timestamp: "timestamp".into(),
            direction: "direction".into(),
            vehicle_class: "vehicle_class".into(),
            volume: "volume".into(),
        }
    }
}

/// Parses the raw CSV export. The header row is required; rows are validated
/// one by one and failures carry their row number.
pub fn parse_raw(reader: impl Read, columns: &ColumnMap) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::Usage("empty input file".into()));
    }
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing required column '{name}'")))
    };
    let idx_intersection = find(&columns.intersection_id)?;
    let idx_timestamp = find(&columns.timestamp)?;
    let idx_direction = find(&columns.direction)?;
    let idx_class = find(&columns.vehicle_class)?;
    let idx_volume = find(&columns.volume)?;

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let rec = row.map_err(|e| Error::Row {
            row: row_no,
            msg: format!("malformed csv: {e}"),
        })?;
        let field = |idx: usize, name: &str| -> Result<&str> {
            rec.get(idx).ok_or_else(|| Error::Row {
                row: row_no,
                msg: format!("missing value for column '{name}'"),
            })
        };
        let ts_raw = field(idx_timestamp, &columns.timestamp)?.trim();
        let timestamp = NaiveDateTime::parse_from_str(ts_raw, TIMESTAMP_FORMAT).map_err(|_| {
            Error::Row {
                row: row_no,
                msg: format!("unparseable timestamp '{ts_raw}' (expected YYYY-MM-DD HH:MM)"),
            }
        })?;
        let vol_raw = field(idx_volume, &columns.volume)?.trim();
        let volume: f64 = vol_raw.parse().map_err(|_| Error::Row {
            row: row_no,
            msg: format!("unparseable volume '{vol_raw}'"),
        })?;
        if !volume.is_finite() || volume < 0.0 {
            return Err(Error::Row {
                row: row_no,
                msg: format!("volume must be a non-negative number, got '{vol_raw}'"),
            });
        }
        records.push(RawRecord {
            intersection_id: field(idx_intersection, &columns.intersection_id)?.trim().to_string(),
            timestamp,
            direction: field(idx_direction, &columns.direction)?.trim().to_string(),
            vehicle_class: field(idx_class, &columns.vehicle_class)?.trim().to_string(),
            volume,
            row: row_no,
        });
    }
    Ok(records)
}

pub fn parse_raw_file(path: &Path, columns: &ColumnMap) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path)?;
    let meta = file.metadata()?;
    if meta.len() == 0 {
        return Err(Error::Usage(format!("empty input file {}", path.display())));
    }
    parse_raw(file, columns)
}

/// Total volume per uniform time bin. Bin i starts at `start + i·bin_minutes`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSeries {
    pub intersection_id: String,
    pub start: NaiveDateTime,
    pub bin_minutes: i64,
    pub values: Vec<f64>,
}

impl VolumeSeries {
    pub fn bin_start(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.bin_minutes * i as i64)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Interior bins that had no records and were zero-filled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GapReport {
    pub missing_bins: Vec<NaiveDateTime>,
}

fn floor_to_bin(ts: NaiveDateTime, bin_minutes: i64) -> NaiveDateTime {
    let secs = ts.and_utc().timestamp();
    let bin_secs = bin_minutes * 60;
    let floored = secs.div_euclid(bin_secs) * bin_secs;
    chrono::DateTime::from_timestamp(floored, 0)
        .expect("in-range timestamp")
        .naive_utc()
}

/// Sums volumes across directions and vehicle classes per time bin. Interior
/// missing bins are zero-filled and reported as gaps.
///
/// Records must belong to one intersection; pass `intersection` to select
/// one from a mixed file.
pub fn aggregate(
    records: &[RawRecord],
    bin_minutes: i64,
    intersection: Option<&str>,
) -> Result<(VolumeSeries, GapReport)> {
    if bin_minutes <= 0 {
        return Err(Error::Usage("bin length must be positive".into()));
    }
    let mut selected: Vec<&RawRecord> = match intersection {
        Some(id) => records.iter().filter(|r| r.intersection_id == id).collect(),
        None => records.iter().collect(),
    };
    // Canonical accumulation order so the float sums (and therefore every
    // downstream artifact) are byte-identical regardless of input order.
    selected.sort_by(|a, b| {
        (a.timestamp, &a.direction, &a.vehicle_class, a.volume.to_bits()).cmp(&(
            b.timestamp,
            &b.direction,
            &b.vehicle_class,
            b.volume.to_bits(),
        ))
    });
    if selected.is_empty() {
        return Err(match intersection {
            Some(id) => Error::Data(format!("no records matched intersection '{id}'")),
            None => Error::Usage("no records to aggregate".into()),
        });
    }
    let first_id = &selected[0].intersection_id;
    if intersection.is_none() && selected.iter().any(|r| &r.intersection_id != first_id) {
        return Err(Error::Usage(
            "records span multiple intersections; pass an intersection filter".into(),
        ));
    }

    let mut bins: BTreeMap<NaiveDateTime, f64> = BTreeMap::new();
    for r in &selected {
        *bins.entry(floor_to_bin(r.timestamp, bin_minutes)).or_insert(0.0) += r.volume;
    }
    let start = *bins.keys().next().expect("non-empty");
    let end = *bins.keys().last().expect("non-empty");
    let step = Duration::minutes(bin_minutes);
    let mut values = Vec::new();
    let mut gaps = GapReport::default();
    let mut t = start;
    while t <= end {
        match bins.get(&t) {
            Some(&v) => values.push(v),
            None => {
                values.push(0.0);
                gaps.missing_bins.push(t);
            }
        }
        t += step;
    }
    Ok((
        VolumeSeries {
            intersection_id: first_id.clone(),
            start,
            bin_minutes,
            values,
        },
        gaps,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScheme {
    Zscore,
    Minmax,
}

impl NormScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormScheme::Zscore => "zscore",
            NormScheme::Minmax => "minmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zscore" => Ok(NormScheme::Zscore),
            "minmax" => Ok(NormScheme::Minmax),
            other => Err(Error::Usage(format!(
                "unknown normalization scheme '{other}' (expected zscore or minmax)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitScope {
    TrainOnly,
    WholeDataset,
}

impl FitScope {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitScope::TrainOnly => "train_only",
            FitScope::WholeDataset => "whole_dataset",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train_only" => Ok(FitScope::TrainOnly),
            "whole_dataset" => Ok(FitScope::WholeDataset),
            other => Err(Error::Usage(format!(
                "unknown fit scope '{other}' (expected train_only or whole_dataset)"
            ))),
        }
    }
}

/// Center/scale pair: transform is (v − center)/scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub center: f64,
    pub scale: f64,
    pub scheme: NormScheme,
    pub fit_scope: FitScope,
}

impl NormStats {
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.center) / self.scale
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.scale + self.center
    }
}

pub fn denormalize(values: &[f64], stats: &NormStats) -> Vec<f64> {
    values.iter().map(|&v| stats.denormalize(v)).collect()
}

/// Contiguous, ordered sample index ranges: train, then validation, then test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitIndices {
    pub train_end: usize,
    pub val_end: usize,
    pub total: usize,
}

impl SplitIndices {
    pub fn train(&self) -> std::ops::Range<usize> {
        0..self.train_end
    }

    pub fn validation(&self) -> std::ops::Range<usize> {
        self.train_end..self.val_end
    }

    pub fn test(&self) -> std::ops::Range<usize> {
        self.val_end..self.total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Usage(format!(
                "unknown split '{other}' (expected train, validation, or test)"
            ))),
        }
    }
}

/// Rolling-window samples: window i covers series indices [i, i+window_len)
/// and its label is the value at i+window_len.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub window_len: usize,
    pub windows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub split: Option<SplitIndices>,
    pub norm: Option<NormStats>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn split_range(&self, split: Split) -> Result<std::ops::Range<usize>> {
        let idx = self
            .split
            .ok_or_else(|| Error::State("dataset has not been split".into()))?;
        Ok(match split {
            Split::Train => idx.train(),
            Split::Validation => idx.validation(),
            Split::Test => idx.test(),
        })
    }
}

/// Slides a stride-1 window of length `window_len` over the series; the
/// next value after each window is its label.
pub fn build_windows(series: &VolumeSeries, window_len: usize) -> Result<WindowedDataset> {
    if window_len == 0 {
        return Err(Error::Usage("window length must be >= 1".into()));
    }
    let n = series.len();
    if n < window_len + 1 {
        return Err(Error::Usage(format!(
            "series of length {n} is too short: need at least {} bins for window length {window_len}",
            window_len + 1
        )));
    }
    let count = n - window_len;
    let mut windows = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for k in 0..count {
        windows.push(series.values[k..k + window_len].to_vec());
        labels.push(series.values[k + window_len]);
    }
    Ok(WindowedDataset {
        window_len,
        windows,
        labels,
        split: None,
        norm: None,
    })
}

/// Chronological contiguous split; no shuffling across the time axis. Every
/// split must be non-empty.
pub fn split(ds: &mut WindowedDataset, train: f64, val: f64, test: f64) -> Result<()> {
    if train <= 0.0 || val <= 0.0 || test <= 0.0 {
        return Err(Error::Usage(format!(
            "split fractions must all be positive (got {train}/{val}/{test}); every split must be non-empty"
        )));
    }
    if ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Usage(format!(
            "split fractions must sum to 1, got {}",
            train + val + test
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * train).round() as usize;
    let n_val = (n as f64 * val).round() as usize;
    let train_end = n_train.min(n);
    let val_end = (n_train + n_val).min(n);
    if train_end == 0 || val_end <= train_end || val_end >= n {
        return Err(Error::Usage(format!(
            "split {train}/{val}/{test} of {n} samples leaves an empty split"
        )));
    }
    ds.split = Some(SplitIndices {
        train_end,
        val_end,
        total: n,
    });
    Ok(())
}

fn fit_stats(values: impl Iterator<Item = f64>, scheme: NormScheme) -> Result<(f64, f64)> {
    let vals: Vec<f64> = values.collect();
    if vals.is_empty() {
        return Err(Error::Usage("cannot fit normalization on empty data".into()));
    }
    match scheme {
        NormScheme::Zscore => {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 {
                return Err(Error::Numeric(
                    "normalization scale is zero (constant fit data)".into(),
                ));
            }
            Ok((mean, std))
        }
        NormScheme::Minmax => {
            let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                return Err(Error::Numeric(
                    "normalization scale is zero (constant fit data)".into(),
                ));
            }
            Ok((min, max - min))
        }
    }
}

/// Fits center/scale on the requested scope and transforms every window and
/// label in place. `TrainOnly` never reads validation or test values.
pub fn normalize(
    ds: &mut WindowedDataset,
    scheme: NormScheme,
    fit_scope: FitScope,
) -> Result<NormStats> {
    if ds.norm.is_some() {
        return Err(Error::State("dataset is already normalized".into()));
    }
    let fit_range = match fit_scope {
        FitScope::TrainOnly => ds.split_range(Split::Train)?,
        FitScope::WholeDataset => 0..ds.len(),
    };
    let values = ds.windows[fit_range.clone()]
        .iter()
        .flat_map(|w| w.iter().copied())
        .chain(ds.labels[fit_range].iter().copied());
    let (center, scale) = fit_stats(values, scheme)?;
    let stats = NormStats {
        center,
        scale,
        scheme,
        fit_scope,
    };
    apply_normalization(ds, &stats);
    ds.norm = Some(stats);
    Ok(stats)
}

/// Applies previously fitted statistics (used when evaluating a checkpoint
/// against a freshly rebuilt dataset).
pub fn apply_normalization(ds: &mut WindowedDataset, stats: &NormStats) {
    for w in &mut ds.windows {
        for v in w.iter_mut() {
            *v = stats.normalize(*v);
        }
    }
    for l in &mut ds.labels {
        *l = stats.normalize(*l);
    }
    ds.norm = Some(*stats);
}

/// Writes the processed series as `bin_start,total_volume` rows.
pub fn write_series_csv(series: &VolumeSeries, path: &Path) -> Result<()> {
    let mut out = String::from("bin_start,total_volume\n");
    for (i, v) in series.values.iter().enumerate() {
        writeln!(out, "{},{v}", series.bin_start(i).format(TIMESTAMP_FORMAT))
            .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a processed series, validating uniform bin spacing.
pub fn read_series_csv(path: &Path) -> Result<VolumeSeries> {
    let file = std::fs::File::open(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header row: {e}")))?;
    if headers.iter().map(str::trim).collect::<Vec<_>>() != vec!["bin_start", "total_volume"] {
        return Err(Error::Schema(
            "series file must have header 'bin_start,total_volume'".into(),
        ));
    }
    let mut starts: Vec<NaiveDateTime> = Vec::new();
    let mut values = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let rec = row.map_err(|e| Error::Row {
            row: row_no,
            msg: format!("malformed csv: {e}"),
        })?;
        let ts = NaiveDateTime::parse_from_str(rec.get(0).unwrap_or("").trim(), TIMESTAMP_FORMAT)
            .map_err(|_| Error::Row {
                row: row_no,
                msg: "unparseable bin_start".into(),
            })?;
        let v: f64 = rec.get(1).unwrap_or("").trim().parse().map_err(|_| Error::Row {
            row: row_no,
            msg: "unparseable total_volume".into(),
        })?;
        starts.push(ts);
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Usage(format!("series file {} has no rows", path.display())));
    }
    let bin_minutes = if starts.len() >= 2 {
        (starts[1] - starts[0]).num_minutes()
    } else {
        DEFAULT_BIN_MINUTES
    };
    if bin_minutes <= 0 {
        return Err(Error::Data("bin_start values must be strictly increasing".into()));
    }
    for (i, w) in starts.windows(2).enumerate() {
        if (w[1] - w[0]).num_minutes() != bin_minutes {
            return Err(Error::Row {
                row: i + 2,
                msg: format!("non-uniform bin spacing (expected {bin_minutes} minutes)"),
            });
        }
    }
    Ok(VolumeSeries {
        intersection_id: String::new(),
        start: starts[0],
        bin_minutes,
        values,
    })
}

/// Writes the gap report as `missing_bin_start` rows.
pub fn write_gap_report(gaps: &GapReport, path: &Path) -> Result<()> {
    let mut out = String::from("missing_bin_start\n");
    for t in &gaps.missing_bins {
        writeln!(out, "{}", t.format(TIMESTAMP_FORMAT)).expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Plain-text key-value manifest describing a windowed dataset.
pub fn write_dataset_manifest(ds: &WindowedDataset, path: &Path) -> Result<()> {
    let split = ds
        .split
        .ok_or_else(|| Error::State("cannot write manifest before splitting".into()))?;
    let norm = ds
        .norm
        .ok_or_else(|| Error::State("cannot write manifest before normalization".into()))?;
    let mut out = String::new();
    writeln!(out, "window_len = {}", ds.window_len).unwrap();
    writeln!(out, "samples = {}", ds.len()).unwrap();
    writeln!(out, "train_end = {}", split.train_end).unwrap();
    writeln!(out, "val_end = {}", split.val_end).unwrap();
    writeln!(out, "norm_scheme = {}", norm.scheme.as_str()).unwrap();
    writeln!(out, "norm_fit_scope = {}", norm.fit_scope.as_str()).unwrap();
    writeln!(out, "norm_center = {:.17e}", norm.center).unwrap();
    writeln!(out, "norm_scale = {:.17e}", norm.scale).unwrap();
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_dataset_manifest(path: &Path) -> Result<(usize, SplitIndices, NormStats, usize)> {
    let text = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Data(format!("bad manifest line '{line}'")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        map.get(k)
            .ok_or_else(|| Error::Data(format!("manifest missing key '{k}'")))
    };
    let window_len: usize = get("window_len")?.parse().map_err(|_| Error::Data("bad window_len".into()))?;
    let samples: usize = get("samples")?.parse().map_err(|_| Error::Data("bad samples".into()))?;
    let train_end: usize = get("train_end")?.parse().map_err(|_| Error::Data("bad train_end".into()))?;
    let val_end: usize = get("val_end")?.parse().map_err(|_| Error::Data("bad val_end".into()))?;
    let stats = NormStats {
        center: get("norm_center")?.parse().map_err(|_| Error::Data("bad norm_center".into()))?,
        scale: get("norm_scale")?.parse().map_err(|_| Error::Data("bad norm_scale".into()))?,
        scheme: NormScheme::parse(get("norm_scheme")?)?,
        fit_scope: FitScope::parse(get("norm_fit_scope")?)?,
    };
    Ok((
        window_len,
        SplitIndices {
            train_end,
            val_end,
            total: samples,
        },
        stats,
        samples,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "intersection_id,timestamp,direction,vehicle_class,volume\n";

    fn parse(body: &str) -> Result<Vec<RawRecord>> {
        parse_raw(
            format!("{HEADER}{body}").as_bytes(),
            &ColumnMap::default(),
        )
    }

    fn series(values: &[f64]) -> VolumeSeries {
        VolumeSeries {
            intersection_id: "X".into(),
            start: NaiveDateTime::parse_from_str("2024-01-01 00:00", TIMESTAMP_FORMAT).unwrap(),
            bin_minutes: 15,
            values: values.to_vec(),
        }
    }

    #[test]
    fn header_only_file_gives_empty_list() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn empty_file_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            parse_raw_file(&path, &ColumnMap::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn well_formed_row_round_trips() {
        let recs = parse("A1,2024-01-01 09:05,NB,car,12\n").unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.intersection_id, "A1");
        assert_eq!(r.direction, "NB");
        assert_eq!(r.vehicle_class, "car");
        assert_eq!(r.volume, 12.0);
        assert_eq!(r.row, 1);
    }

    #[test]
    fn negative_volume_names_the_row() {
        let err = parse("A1,2024-01-01 09:05,NB,car,5\nA1,2024-01-01 09:10,NB,car,-3\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 2, .. }), "{err}");
    }

    #[test]
    fn bad_timestamp_names_the_row() {
        let err = parse("A1,01/01/2024 09:05,NB,car,5\n").unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = parse_raw(
            "intersection_id,timestamp,direction,volume\nA1,2024-01-01 09:05,NB,5\n".as_bytes(),
            &ColumnMap::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("vehicle_class"), "{err}");
    }

    #[test]
    fn column_remapping() {
        let map = ColumnMap {
            intersection_id: "site".into(),
            timestamp: "when".into(),
            direction: "dir".into(),
            vehicle_class: "kind".into(),
            volume: "count".into(),
        };
        let recs = parse_raw(
            "site,when,dir,kind,count\nA1,2024-01-01 09:05,NB,car,7\n".as_bytes(),
            &map,
        )
        .unwrap();
        assert_eq!(recs[0].volume, 7.0);
    }

    #[test]
    fn aggregate_sums_within_a_bin() {
        let recs = parse(
            "A1,2024-01-01 09:01,NB,car,10\nA1,2024-01-01 09:14,SB,truck,5\n",
        )
        .unwrap();
        let (s, gaps) = aggregate(&recs, 15, None).unwrap();
        assert_eq!(s.values, vec![15.0]);
        assert!(gaps.missing_bins.is_empty());
    }

    #[test]
    fn aggregate_single_record() {
        let recs = parse("A1,2024-01-01 09:05,NB,car,8\n").unwrap();
        let (s, _) = aggregate(&recs, 15, None).unwrap();
        assert_eq!(s.values, vec![8.0]);
        assert_eq!(
            s.start,
            NaiveDateTime::parse_from_str("2024-01-01 09:00", TIMESTAMP_FORMAT).unwrap()
        );
    }

    #[test]
    fn aggregate_fills_interior_gap() {
        let recs = parse("A1,2024-01-01 09:00,NB,car,4\nA1,2024-01-01 09:30,NB,car,6\n").unwrap();
        let (s, gaps) = aggregate(&recs, 15, None).unwrap();
        assert_eq!(s.values, vec![4.0, 0.0, 6.0]);
        assert_eq!(gaps.missing_bins.len(), 1);
        assert_eq!(
            gaps.missing_bins[0],
            NaiveDateTime::parse_from_str("2024-01-01 09:15", TIMESTAMP_FORMAT).unwrap()
        );
    }

    #[test]
    fn aggregate_is_order_invariant() {
        let recs = parse(
            "A1,2024-01-01 09:20,NB,car,1\nA1,2024-01-01 09:00,NB,car,2\nA1,2024-01-01 09:05,SB,bus,3\n",
        )
        .unwrap();
        let mut shuffled = recs.clone();
        shuffled.reverse();
        let (a, _) = aggregate(&recs, 15, None).unwrap();
        let (b, _) = aggregate(&shuffled, 15, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_mixed_intersections_needs_filter() {
        let recs = parse("A1,2024-01-01 09:00,NB,car,1\nB2,2024-01-01 09:00,NB,car,2\n").unwrap();
        assert!(matches!(aggregate(&recs, 15, None), Err(Error::Usage(_))));
        let (s, _) = aggregate(&recs, 15, Some("B2")).unwrap();
        assert_eq!(s.values, vec![2.0]);
        assert!(matches!(
            aggregate(&recs, 15, Some("nope")),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn windows_minimum_series() {
        let ds = build_windows(&series(&[0.0; 13]), 12).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn windows_length_15_gives_3_samples() {
        let vals: Vec<f64> = (0..15).map(|v| v as f64).collect();
        let ds = build_windows(&series(&vals), 12).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels, vec![12.0, 13.0, 14.0]);
    }

    #[test]
    fn windows_ramp_alignment() {
        let vals: Vec<f64> = (0..=12).map(|v| v as f64).collect();
        let ds = build_windows(&series(&vals), 12).unwrap();
        assert_eq!(ds.windows[0], (0..12).map(|v| v as f64).collect::<Vec<_>>());
        assert_eq!(ds.labels[0], 12.0);
    }

    #[test]
    fn windows_too_short_states_minimum() {
        let err = build_windows(&series(&[0.0; 12]), 12).unwrap_err();
        assert!(err.to_string().contains("13"), "{err}");
    }

    #[test]
    fn window_label_alignment_holds_for_all_lengths() {
        for n in 13..40 {
            let vals: Vec<f64> = (0..n).map(|v| v as f64 * 1.5).collect();
            let ds = build_windows(&series(&vals), 12).unwrap();
            assert_eq!(ds.len(), n - 12);
            for k in 0..ds.len() {
                assert_eq!(ds.labels[k], vals[k + 12]);
                assert_eq!(ds.windows[k][11], vals[k + 11]);
            }
        }
    }

    #[test]
    fn split_sizes_80_10_10() {
        let vals: Vec<f64> = (0..112).map(|v| v as f64).collect();
        let mut ds = build_windows(&series(&vals), 12).unwrap();
        assert_eq!(ds.len(), 100);
        split(&mut ds, 0.8, 0.1, 0.1).unwrap();
        let idx = ds.split.unwrap();
        assert_eq!(idx.train().len(), 80);
        assert_eq!(idx.validation().len(), 10);
        assert_eq!(idx.test().len(), 10);
    }

    #[test]
    fn split_partitions_without_gap_or_overlap() {
        for n in [20usize, 33, 101] {
            let vals: Vec<f64> = (0..n + 12).map(|v| v as f64).collect();
            let mut ds = build_windows(&series(&vals), 12).unwrap();
            split(&mut ds, 0.6, 0.2, 0.2).unwrap();
            let idx = ds.split.unwrap();
            assert_eq!(idx.train().end, idx.validation().start);
            assert_eq!(idx.validation().end, idx.test().start);
            assert_eq!(idx.test().end, n);
            assert!(!idx.train().is_empty());
            assert!(!idx.validation().is_empty());
            assert!(!idx.test().is_empty());
        }
    }

    #[test]
    fn degenerate_fractions_rejected() {
        let vals: Vec<f64> = (0..112).map(|v| v as f64).collect();
        let mut ds = build_windows(&series(&vals), 12).unwrap();
        assert!(matches!(split(&mut ds, 1.0, 0.0, 0.0), Err(Error::Usage(_))));
        assert!(matches!(split(&mut ds, 0.5, 0.4, 0.2), Err(Error::Usage(_))));
    }

    #[test]
    fn zscore_oracle() {
        // Data with mean 100 and population std 20: the value 120 maps to 1.
        let vals = vec![80.0, 120.0, 80.0, 120.0, 80.0, 120.0, 80.0, 120.0];
        let (center, scale) = fit_stats(vals.into_iter(), NormScheme::Zscore).unwrap();
        assert!((center - 100.0).abs() < 1e-12);
        assert!((scale - 20.0).abs() < 1e-12);
        let stats = NormStats {
            center,
            scale,
            scheme: NormScheme::Zscore,
            fit_scope: FitScope::WholeDataset,
        };
        assert!((stats.normalize(120.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn minmax_oracle() {
        let (center, scale) =
            fit_stats(vec![0.0, 50.0, 10.0].into_iter(), NormScheme::Minmax).unwrap();
        let stats = NormStats {
            center,
            scale,
            scheme: NormScheme::Minmax,
            fit_scope: FitScope::WholeDataset,
        };
        assert!((stats.normalize(25.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalize_round_trip() {
        let vals: Vec<f64> = (0..30).map(|v| 50.0 + (v as f64) * 3.0).collect();
        let mut ds = build_windows(&series(&vals), 12).unwrap();
        split(&mut ds, 0.6, 0.2, 0.2).unwrap();
        let original = ds.clone();
        let stats = normalize(&mut ds, NormScheme::Zscore, FitScope::TrainOnly).unwrap();
        for (w, ow) in ds.windows.iter().zip(&original.windows) {
            for (v, ov) in w.iter().zip(ow) {
                assert!((stats.denormalize(*v) - ov).abs() < 1e-12);
            }
        }
        for (l, ol) in ds.labels.iter().zip(&original.labels) {
            assert!((stats.denormalize(*l) - ol).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_fit_data_is_numeric_error() {
        let mut ds = build_windows(&series(&[5.0; 20]), 12).unwrap();
        split(&mut ds, 0.5, 0.25, 0.25).unwrap();
        assert!(matches!(
            normalize(&mut ds, NormScheme::Zscore, FitScope::TrainOnly),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn train_only_fit_ignores_later_values() {
        // Two datasets identical on the train range but with wildly different
        // tails must produce identical statistics.
        let mut tame: Vec<f64> = (0..40).map(|v| v as f64).collect();
        let mut wild = tame.clone();
        for v in wild.iter_mut().skip(30) {
            *v += 1e6;
        }
        tame.truncate(40);
        let mut ds_a = build_windows(&series(&tame), 12).unwrap();
        let mut ds_b = build_windows(&series(&wild), 12).unwrap();
        // 28 samples; train ends at 14, well before the wild tail's windows.
        split(&mut ds_a, 0.5, 0.25, 0.25).unwrap();
        split(&mut ds_b, 0.5, 0.25, 0.25).unwrap();
        let sa = normalize(&mut ds_a, NormScheme::Zscore, FitScope::TrainOnly).unwrap();
        let sb = normalize(&mut ds_b, NormScheme::Zscore, FitScope::TrainOnly).unwrap();
        assert_eq!(sa.center, sb.center);
        assert_eq!(sa.scale, sb.scale);

        // Whole-dataset scope (the leaky variant) must differ.
        let mut ds_c = build_windows(&series(&wild), 12).unwrap();
        split(&mut ds_c, 0.5, 0.25, 0.25).unwrap();
        let sc = normalize(&mut ds_c, NormScheme::Zscore, FitScope::WholeDataset).unwrap();
        assert!(sc.center != sa.center);
    }

    #[test]
    fn series_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let s = series(&[1.0, 2.5, 3.0]);
        write_series_csv(&s, &path).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back.values, s.values);
        assert_eq!(back.start, s.start);
        assert_eq!(back.bin_minutes, 15);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let vals: Vec<f64> = (0..40).map(|v| v as f64).collect();
        let mut ds = build_windows(&series(&vals), 12).unwrap();
        split(&mut ds, 0.6, 0.2, 0.2).unwrap();
        let stats = normalize(&mut ds, NormScheme::Zscore, FitScope::TrainOnly).unwrap();
        write_dataset_manifest(&ds, &path).unwrap();
        let (wl, idx, back, samples) = read_dataset_manifest(&path).unwrap();
        assert_eq!(wl, 12);
        assert_eq!(samples, ds.len());
        assert_eq!(idx, ds.split.unwrap());
        assert_eq!(back.center, stats.center);
        assert_eq!(back.scale, stats.scale);
        assert_eq!(back.scheme, stats.scheme);
    }
}
