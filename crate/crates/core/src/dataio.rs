//! Hourly SCADA tables: CSV loading, z-score normalisation, rolling windows.

use std::ops::Range;
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;
pub const DEFAULT_TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Attack,
    Unlabeled,
}

impl Label {
    pub fn is_attack(self) -> bool {
        self == Label::Attack
    }

    /// Window label from its hours: attack dominates, then unlabeled.
    pub fn combine(hours: &[Label]) -> Label {
        if hours.contains(&Label::Attack) {
            Label::Attack
        } else if hours.contains(&Label::Unlabeled) {
            Label::Unlabeled
        } else {
            Label::Normal
        }
    }
}

/// Hourly samples × named channels, with optional per-hour labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScadaDataset {
    timestamps: Vec<NaiveDateTime>,
    channel_names: Vec<String>,
    values: Vec<f64>,
    labels: Option<Vec<Label>>,
}

impl ScadaDataset {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        channel_names: Vec<String>,
        values: Vec<f64>,
        labels: Option<Vec<Label>>,
    ) -> Result<Self> {
        let t = timestamps.len();
        if channel_names.is_empty() {
            return Err(Error::Data("dataset has no channels".into()));
        }
        if values.len() != t * channel_names.len() {
            return Err(Error::Data(format!(
                "{} values for {t} rows × {} channels",
                values.len(),
                channel_names.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != t {
                return Err(Error::Data(format!("{} labels for {t} rows", l.len())));
            }
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            check_step(w[0], w[1]).map_err(|d| Error::Data(format!("row {}: {d}", i + 1)))?;
        }
        Ok(ScadaDataset {
            timestamps,
            channel_names,
            values,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    /// Row-major `[T, channels]` values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Option<Vec<Label>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::Data(format!("{} labels for {} rows", l.len(), self.len())));
            }
        }
        self.labels = labels;
        Ok(())
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let c = self.num_channels();
        &self.values[t * c..(t + 1) * c]
    }

    pub fn value(&self, t: usize, channel: usize) -> f64 {
        self.values[t * self.num_channels() + channel]
    }

    pub fn set_value(&mut self, t: usize, channel: usize, v: f64) {
        let c = self.num_channels();
        self.values[t * c + channel] = v;
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|n| n == name)
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t, channel)).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        self.channel_index(name)
            .map(|i| self.column(i))
            .ok_or_else(|| Error::Data(format!("missing channel {name}")))
    }

    pub fn slice(&self, range: Range<usize>) -> Result<ScadaDataset> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Data(format!(
                "range {range:?} outside dataset of {} rows",
                self.len()
            )));
        }
        let c = self.num_channels();
        Ok(ScadaDataset {
            timestamps: self.timestamps[range.clone()].to_vec(),
            channel_names: self.channel_names.clone(),
            values: self.values[range.start * c..range.end * c].to_vec(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        })
    }
}

fn check_step(prev: NaiveDateTime, next: NaiveDateTime) -> std::result::Result<(), String> {
    let step = next - prev;
    if step == TimeDelta::hours(1) {
        Ok(())
    } else if step == TimeDelta::zero() {
        Err(format!("duplicate timestamp {next}"))
    } else if step < TimeDelta::zero() {
        Err(format!("timestamp {next} precedes {prev}"))
    } else {
        Err(format!("non-hourly gap between {prev} and {next}"))
    }
}

/// Which CSV columns hold what. Channel order follows `channels`; an empty
/// list means every column other than the timestamp and label, in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub timestamp: String,
    pub timestamp_format: String,
    pub channels: Vec<String>,
    pub label: Option<String>,
    pub attack_values: Vec<String>,
    pub normal_values: Vec<String>,
    pub unlabeled_values: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            timestamp: "DATETIME".into(),
            timestamp_format: DEFAULT_TIMESTAMP_FORMAT.into(),
            channels: Vec::new(),
            label: None,
            attack_values: vec!["1".into()],
            normal_values: vec!["0".into()],
            unlabeled_values: vec!["-999".into()],
        }
    }
}

impl ColumnMap {
    /// The layout written by [`crate::synthgen::emit`].
    pub fn labelled() -> Self {
        ColumnMap {
            label: Some("ATT_FLAG".into()),
            ..Default::default()
        }
    }

    fn parse_label(&self, raw: &str) -> Option<Label> {
        let raw = raw.trim();
        if self.attack_values.iter().any(|v| v == raw) {
            Some(Label::Attack)
        } else if self.normal_values.iter().any(|v| v == raw) {
            Some(Label::Normal)
        } else if self.unlabeled_values.iter().any(|v| v == raw) {
            Some(Label::Unlabeled)
        } else {
            None
        }
    }
}

/// Parses a timestamp, tolerating formats that stop at the hour (`%H`).
pub fn parse_timestamp(raw: &str, format: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if format.contains("%M") {
        NaiveDateTime::parse_from_str(raw, format).ok()
    } else {
        NaiveDateTime::parse_from_str(&format!("{raw}:00"), &format!("{format}:%M")).ok()
    }
}

pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap) -> Result<ScadaDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, &path.display().to_string(), map)
}

/// Reads a CSV stream; `source` names it in error messages. Lines starting
/// with `#` are treated as comments.
pub fn read_csv<R: std::io::Read>(reader: R, source: &str, map: &ColumnMap) -> Result<ScadaDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!("{source}: missing column '{name}' (header has {headers:?})"))
        })
    };
    let ts_col = find(&map.timestamp)?;
    let label_col = map.label.as_deref().map(find).transpose()?;
    let channel_names: Vec<String> = if map.channels.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ts_col && Some(*i) != label_col)
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        map.channels.clone()
    };
    let channel_cols = channel_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let row_err = |row: usize, detail: String| Error::Row {
        path: source.to_string(),
        row,
        detail,
    };
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let ts = parse_timestamp(field(ts_col), &map.timestamp_format).ok_or_else(|| {
            row_err(row, format!("unparseable timestamp '{}'", field(ts_col)))
        })?;
        if let Some(&prev) = timestamps.last() {
            check_step(prev, ts).map_err(|d| row_err(row, d))?;
        }
        timestamps.push(ts);
        for (&col, name) in channel_cols.iter().zip(&channel_names) {
            let raw = field(col);
            if raw.is_empty() {
                return Err(row_err(row, format!("missing value for {name}")));
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| row_err(row, format!("unparseable number '{raw}' in {name}")))?;
            if !v.is_finite() {
                return Err(row_err(row, format!("non-finite value in {name}")));
            }
            values.push(v);
        }
        if let (Some(col), Some(labels)) = (label_col, labels.as_mut()) {
            let raw = field(col);
            let label = map
                .parse_label(raw)
                .ok_or_else(|| row_err(row, format!("unknown label value '{raw}'")))?;
            labels.push(label);
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Data(format!("{source}: no data rows")));
    }
    ScadaDataset::new(timestamps, channel_names, values, labels)
}

/// Per-channel mean and standard deviation (population form, floored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

pub fn fit_stats(ds: &ScadaDataset, range: Range<usize>) -> Result<ChannelStats> {
    if range.is_empty() || range.end > ds.len() {
        return Err(Error::Data(format!(
            "cannot fit statistics on rows {range:?} of {}",
            ds.len()
        )));
    }
    let n = range.len() as f64;
    let c = ds.num_channels();
    let mut mean = vec![0.0; c];
    for t in range.clone() {
        for (m, v) in mean.iter_mut().zip(ds.row(t)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for t in range {
        for ((s, v), m) in var.iter_mut().zip(ds.row(t)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(ChannelStats { mean, std })
}

/// Z-scores every channel with `stats`; labels and timestamps are kept.
pub fn normalize(ds: &ScadaDataset, stats: &ChannelStats) -> Result<ScadaDataset> {
    let c = ds.num_channels();
    if stats.len() != c {
        return Err(Error::Data(format!(
            "statistics for {} channels, dataset has {c}",
            stats.len()
        )));
    }
    let values = ds
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (v - stats.mean[i % c]) / stats.std[i % c])
        .collect();
    Ok(ScadaDataset {
        values,
        ..ds.clone()
    })
}

/// Rolling windows `[N, channels, window_hours]` with their end timestamps.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub windows: Tensor,
    pub starts: Vec<usize>,
    pub end_timestamps: Vec<NaiveDateTime>,
    pub labels: Option<Vec<Label>>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.windows.shape()[1]
    }

    pub fn window_hours(&self) -> usize {
        self.windows.shape()[2]
    }

    pub fn select(&self, rows: &[usize]) -> WindowBatch {
        WindowBatch {
            windows: self.windows.select_batch(rows),
            starts: rows.iter().map(|&r| self.starts[r]).collect(),
            end_timestamps: rows.iter().map(|&r| self.end_timestamps[r]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
        }
    }
}

pub fn window_count(len: usize, window_hours: usize, stride: usize) -> usize {
    if len < window_hours || window_hours == 0 || stride == 0 {
        0
    } else {
        (len - window_hours) / stride + 1
    }
}

pub fn make_windows(ds: &ScadaDataset, window_hours: usize, stride: usize) -> Result<WindowBatch> {
    if window_hours == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    if ds.len() < window_hours {
        return Err(Error::Data(format!(
            "{} rows is shorter than one {window_hours}-hour window",
            ds.len()
        )));
    }
    let c = ds.num_channels();
    let n = window_count(ds.len(), window_hours, stride);
    let starts: Vec<usize> = (0..n).map(|i| i * stride).collect();
    let mut data = Vec::with_capacity(n * c * window_hours);
    for &s in &starts {
        for ch in 0..c {
            data.extend((s..s + window_hours).map(|t| ds.value(t, ch)));
        }
    }
    let end_timestamps = starts
        .iter()
        .map(|&s| ds.timestamps[s + window_hours - 1])
        .collect();
    let labels = ds.labels.as_ref().map(|l| {
        starts
            .iter()
            .map(|&s| Label::combine(&l[s..s + window_hours]))
            .collect()
    });
    Ok(WindowBatch {
        windows: Tensor::new(vec![n, c, window_hours], data)?,
        starts,
        end_timestamps,
        labels,
    })
}

/// Chronological split into `(train, holdout)` row ranges.
pub fn split(ds: &ScadaDataset, fraction: f64, window_hours: usize) -> Result<(Range<usize>, Range<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let cut = (ds.len() as f64 * fraction).floor() as usize;
    if cut < window_hours || ds.len() - cut < window_hours {
        return Err(Error::Data(format!(
            "split of {} rows at {cut} leaves fewer than {window_hours} rows on one side",
            ds.len()
        )));
    }
    Ok((0..cut, cut..ds.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(h: i64) -> NaiveDateTime {
        NaiveDateTime::parse_from_str("2014-01-06 00:00:00", DEFAULT_TIMESTAMP_FORMAT).unwrap()
            + TimeDelta::hours(h)
    }

    fn toy(values: Vec<f64>, channels: usize, labels: Option<Vec<Label>>) -> ScadaDataset {
        let t = values.len() / channels;
        ScadaDataset::new(
            (0..t as i64).map(ts).collect(),
            (0..channels).map(|c| format!("C{c}")).collect(),
            values,
            labels,
        )
        .unwrap()
    }

    #[test]
    fn loads_small_file() {
        let csv = "DATETIME,A,B\n2014-01-06 00:00:00,1,2\n2014-01-06 01:00:00,3,4\n2014-01-06 02:00:00,5,6\n";
        let ds = read_csv(csv.as_bytes(), "toy", &ColumnMap::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.num_channels(), 2);
        assert_eq!(ds.row(2), &[5.0, 6.0]);
        assert!(ds.labels().is_none());
    }

    #[test]
    fn batadal_style_header_and_timestamps() {
        let csv = "DATETIME, L_T1, L_T2, ATT_FLAG\n06/01/14 00,0.5,1.5,0\n06/01/14 01,0.6,1.4,1\n";
        let map = ColumnMap {
            timestamp_format: "%d/%m/%y %H".into(),
            label: Some("ATT_FLAG".into()),
            ..Default::default()
        };
        let ds = read_csv(csv.as_bytes(), "b", &map).unwrap();
        assert_eq!(ds.channel_names(), &["L_T1".to_string(), "L_T2".to_string()]);
        assert_eq!(ds.labels().unwrap(), &[Label::Normal, Label::Attack]);
    }

    #[test]
    fn gap_error_names_both_timestamps() {
        let csv = "DATETIME,A\n2014-01-06 00:00:00,1\n2014-01-06 02:00:00,3\n";
        let err = read_csv(csv.as_bytes(), "g", &ColumnMap::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2014-01-06 00:00:00") && msg.contains("2014-01-06 02:00:00"), "{msg}");
        assert!(matches!(err, Error::Row { row: 3, .. }), "{err:?}");
    }

    #[test]
    fn distinct_row_errors() {
        let dup = "DATETIME,A\n2014-01-06 00:00:00,1\n2014-01-06 00:00:00,3\n";
        assert!(read_csv(dup.as_bytes(), "d", &ColumnMap::default())
            .unwrap_err()
            .to_string()
            .contains("duplicate"));
        let bad = "DATETIME,A\n2014-01-06 00:00:00,abc\n";
        assert!(read_csv(bad.as_bytes(), "n", &ColumnMap::default())
            .unwrap_err()
            .to_string()
            .contains("unparseable number"));
        let missing = ColumnMap {
            channels: vec!["Z".into()],
            ..Default::default()
        };
        let e = read_csv("DATETIME,A\n2014-01-06 00:00:00,1\n".as_bytes(), "m", &missing).unwrap_err();
        assert!(matches!(e, Error::Config(_)) && e.to_string().contains("'Z'"));
        let empty = "DATETIME,A\n2014-01-06 00:00:00,\n";
        assert!(read_csv(empty.as_bytes(), "e", &ColumnMap::default())
            .unwrap_err()
            .to_string()
            .contains("missing value"));
    }

    #[test]
    fn stats_and_normalisation() {
        let ds = toy(vec![2.0, 7.0, 4.0, 7.0], 2, None);
        let st = fit_stats(&ds, 0..2).unwrap();
        assert_eq!(st.mean, vec![3.0, 7.0]);
        assert_eq!(st.std, vec![1.0, STD_FLOOR]);
        let n = normalize(&ds, &st).unwrap();
        assert_eq!(n.column(0), vec![-1.0, 1.0]);
        assert_eq!(n.column(1), vec![0.0, 0.0]);
        assert!(fit_stats(&ds, 1..1).is_err());
    }

    #[test]
    fn window_counts_and_labels() {
        let ds = toy((0..4).map(f64::from).collect(), 1, Some(vec![
            Label::Normal,
            Label::Normal,
            Label::Attack,
            Label::Normal,
        ]));
        let wb = make_windows(&ds, 2, 1).unwrap();
        assert_eq!(wb.labels.unwrap(), vec![Label::Normal, Label::Attack, Label::Attack]);
        assert_eq!(window_count(8760, 24, 1), 8737);
        let one = toy((0..24).map(f64::from).collect(), 1, None);
        let wb = make_windows(&one, 24, 1).unwrap();
        assert_eq!(wb.len(), 1);
        assert_eq!(wb.windows.data(), one.values());
        assert!(make_windows(&one, 25, 1).is_err());
    }

    #[test]
    fn unlabeled_propagation() {
        use Label::*;
        assert_eq!(Label::combine(&[Normal, Unlabeled]), Unlabeled);
        assert_eq!(Label::combine(&[Unlabeled, Attack]), Attack);
        assert_eq!(Label::combine(&[Normal, Normal]), Normal);
    }

    #[test]
    fn chronological_split() {
        let ds = toy(vec![0.0; 100], 1, None);
        let (a, b) = split(&ds, 0.9, 5).unwrap();
        assert_eq!((a.clone(), b.clone()), (0..90, 90..100));
        assert!(a.end <= b.start);
        assert!(split(&ds, 0.9, 24).is_err());
        assert!(split(&ds, 1.0, 5).is_err());
    }
}
