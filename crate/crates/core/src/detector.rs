//! LRP scoring of window batches and threshold alarms.

use std::fmt::Write as _;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::dataio::{make_windows, normalize, Label, ScadaDataset, WindowBatch, DEFAULT_TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::par;
use crate::vae::{Sampling, VaeModel};

const SCORE_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct LrpSeries {
    pub timestamps: Vec<NaiveDateTime>,
    pub lrp: Vec<f64>,
    pub model_id: String,
    pub sampling: Sampling,
}

impl LrpSeries {
    pub fn len(&self) -> usize {
        self.lrp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lrp.is_empty()
    }
}

/// Normalises `ds` with the model's statistics and cuts stride-1 windows.
/// Channels must match the model's, by name and order.
pub fn model_windows(model: &VaeModel, ds: &ScadaDataset) -> Result<WindowBatch> {
    if ds.channel_names() != model.channel_names() {
        let missing: Vec<&String> = model
            .channel_names()
            .iter()
            .filter(|n| !ds.channel_names().contains(n))
            .collect();
        return Err(Error::Data(if missing.is_empty() {
            "data channels differ from the model's in order or number".into()
        } else {
            format!("data lacks model channels {missing:?}")
        }));
    }
    let norm = normalize(ds, model.norm_stats())?;
    make_windows(&norm, model.config().window_hours, 1)
}

/// Scores every window of a batch normalised with the model's own statistics.
///
/// Chunks are scored in parallel; each window's value depends only on that
/// window, so the output is independent of chunking. Monte-Carlo draws are
/// seeded per chunk from the sampling seed.
pub fn score_series(model: &VaeModel, batch: &WindowBatch, sampling: Sampling) -> Result<LrpSeries> {
    let cfg = model.config();
    if batch.channels() != cfg.channels || batch.window_hours() != cfg.window_hours {
        return Err(Error::shape(
            "score_series",
            format!(
                "windows have {} channels × {} hours, model expects {} × {}",
                batch.channels(),
                batch.window_hours(),
                cfg.channels,
                cfg.window_hours
            ),
        ));
    }
    let n = batch.len();
    let chunks = n.div_ceil(SCORE_CHUNK);
    let parts = par::map_range(chunks, |i| {
        let start = i * SCORE_CHUNK;
        let end = (start + SCORE_CHUNK).min(n);
        let x = batch.windows.slice_batch(start, end)?;
        let s = match sampling {
            Sampling::Mode => Sampling::Mode,
            Sampling::Mc { samples, seed } => Sampling::Mc {
                samples,
                seed: seed.wrapping_add(i as u64),
            },
        };
        model.lrp_batch(&x, s)
    });
    let mut lrp = Vec::with_capacity(n);
    for p in parts {
        lrp.extend(p?);
    }
    if let Some(i) = lrp.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            block: "lrp".into(),
            detail: format!("window {i}"),
        });
    }
    Ok(LrpSeries {
        timestamps: batch.end_timestamps.clone(),
        lrp,
        model_id: model.fingerprint(),
        sampling,
    })
}

/// Named LRP cut-offs, strictly decreasing (increasingly confident alarms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    entries: Vec<(String, f64)>,
}

impl ThresholdSet {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        if entries.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Config("thresholds must be finite".into()));
        }
        if entries.windows(2).any(|w| w[1].1 >= w[0].1) {
            return Err(Error::Config("thresholds must be strictly decreasing".into()));
        }
        Ok(ThresholdSet { entries })
    }

    /// Thresholds named `lrp<value>`, sorted into decreasing order.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let mut v = values.to_vec();
        v.sort_by(|a, b| b.total_cmp(a));
        Self::new(v.into_iter().map(|t| (format!("lrp{t}"), t)).collect())
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `flags[k][i]`: window `i` flagged at threshold `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmSeries {
    pub names: Vec<String>,
    pub thresholds: Vec<f64>,
    pub flags: Vec<Vec<bool>>,
}

impl AlarmSeries {
    pub fn count(&self, k: usize) -> usize {
        self.flags[k].iter().filter(|&&f| f).count()
    }

    /// Every window flagged at a stricter threshold is flagged at all looser ones.
    pub fn is_nested(&self) -> bool {
        self.flags
            .windows(2)
            .all(|w| w[1].iter().zip(&w[0]).all(|(&strict, &loose)| !strict || loose))
    }
}

/// A window is an attack iff `lrp < threshold`.
pub fn flag(lrp: &[f64], threshold: f64) -> Vec<bool> {
    lrp.iter().map(|&v| v < threshold).collect()
}

pub fn apply_thresholds(series: &LrpSeries, thresholds: &ThresholdSet) -> AlarmSeries {
    AlarmSeries {
        names: thresholds.entries.iter().map(|(n, _)| n.clone()).collect(),
        thresholds: thresholds.entries.iter().map(|&(_, t)| t).collect(),
        flags: thresholds
            .entries
            .iter()
            .map(|&(_, t)| flag(&series.lrp, t))
            .collect(),
    }
}

/// Lower-tail `q`-quantile of the LRP values, interpolating linearly between
/// order statistics.
pub fn quantile_threshold(lrp: &[f64], q: f64) -> Result<f64> {
    if lrp.is_empty() {
        return Err(Error::Data("cannot take a quantile of an empty series".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile {q} outside (0, 1)")));
    }
    let mut v = lrp.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// CSV with `timestamp,lrp` and one 0/1 column per threshold. `preamble`
/// lines are written as `#` comments.
pub fn series_csv(series: &LrpSeries, alarms: Option<&AlarmSeries>, preamble: &[String]) -> String {
    let mut s = String::new();
    for line in preamble {
        let _ = writeln!(s, "# {line}");
    }
    let _ = writeln!(s, "# model={} sampling={}", series.model_id, series.sampling);
    s.push_str("timestamp,lrp");
    if let Some(a) = alarms {
        for n in &a.names {
            let _ = write!(s, ",{n}");
        }
    }
    s.push('\n');
    for (i, (ts, v)) in series.timestamps.iter().zip(&series.lrp).enumerate() {
        let _ = write!(s, "{},{v}", ts.format(DEFAULT_TIMESTAMP_FORMAT));
        if let Some(a) = alarms {
            for f in &a.flags {
                s.push_str(if f[i] { ",1" } else { ",0" });
            }
        }
        s.push('\n');
    }
    s
}

/// Reads back the `timestamp` and `lrp` columns of [`series_csv`] output.
pub fn read_series_csv<R: std::io::Read>(reader: R) -> Result<(Vec<NaiveDateTime>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("LRP file lacks a '{name}' column")))
    };
    let (tc, lc) = (col("timestamp")?, col("lrp")?);
    let mut ts = Vec::new();
    let mut lrp = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let t = crate::dataio::parse_timestamp(&rec[tc], DEFAULT_TIMESTAMP_FORMAT)
            .ok_or_else(|| Error::Data(format!("LRP row {}: bad timestamp", i + 1)))?;
        let v: f64 = rec[lc]
            .parse()
            .map_err(|_| Error::Data(format!("LRP row {}: bad value", i + 1)))?;
        ts.push(t);
        lrp.push(v);
    }
    Ok((ts, lrp))
}

/// Line plot of the LRP trace with one horizontal polyline per threshold and
/// shaded attack windows.
pub fn series_svg(series: &LrpSeries, thresholds: &ThresholdSet, labels: Option<&[Label]>) -> String {
    let (w, h, pad) = (1000.0, 400.0, 40.0);
    let n = series.len().max(2);
    let mut lo = series.lrp.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = series.lrp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for &(_, t) in thresholds.entries() {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if hi.is_nan() || hi <= lo {
        hi = lo + 1.0;
    }
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| pad + (h - 2.0 * pad) * (hi - v) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    if let Some(labels) = labels {
        let step = x(1) - x(0);
        for (i, l) in labels.iter().enumerate() {
            if l.is_attack() {
                let _ = writeln!(
                    s,
                    "<rect class=\"attack\" x=\"{:.2}\" y=\"{pad}\" width=\"{:.2}\" height=\"{}\" fill=\"#f4c7c3\"/>",
                    x(i) - step / 2.0,
                    step,
                    h - 2.0 * pad
                );
            }
        }
    }
    let palette = ["#e69f00", "#d55e00", "#7b3294", "#009e73"];
    for (k, (name, t)) in thresholds.entries().iter().enumerate() {
        let _ = writeln!(
            s,
            "<polyline class=\"threshold\" data-name=\"{name}\" fill=\"none\" stroke=\"{}\" stroke-dasharray=\"6 4\" points=\"{:.2},{:.2} {:.2},{:.2}\"/>",
            palette[k % palette.len()],
            x(0),
            y(*t),
            x(n - 1),
            y(*t)
        );
    }
    let pts: Vec<String> = series
        .lrp
        .iter()
        .enumerate()
        .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline class=\"lrp\" fill=\"none\" stroke=\"#0072b2\" stroke-width=\"1\" points=\"{}\"/>",
        pts.join(" ")
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(lrp: Vec<f64>) -> LrpSeries {
        let t0 = crate::dataio::parse_timestamp("2016-01-01 00:00:00", DEFAULT_TIMESTAMP_FORMAT).unwrap();
        LrpSeries {
            timestamps: (0..lrp.len() as i64).map(|h| t0 + chrono::TimeDelta::hours(h)).collect(),
            lrp,
            model_id: "test".into(),
            sampling: Sampling::Mode,
        }
    }

    #[test]
    fn strict_flagging() {
        let s = series(vec![-50.0, -2000.0, -100.0]);
        let a = apply_thresholds(&s, &ThresholdSet::from_values(&[-100.0]).unwrap());
        assert_eq!(a.flags[0], vec![false, true, false]);
        let a = apply_thresholds(&s, &ThresholdSet::from_values(&[-5000.0]).unwrap());
        assert_eq!(a.count(0), 0);
    }

    #[test]
    fn threshold_set_validation() {
        assert!(ThresholdSet::new(vec![]).is_err());
        assert!(ThresholdSet::new(vec![("a".into(), -1.0), ("b".into(), -1.0)]).is_err());
        assert!(ThresholdSet::new(vec![("a".into(), -5.0), ("b".into(), -1.0)]).is_err());
        let t = ThresholdSet::from_values(&[-5000.0, -100.0, -1042.0]).unwrap();
        assert_eq!(t.entries()[0].1, -100.0);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile_threshold(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        assert!((quantile_threshold(&[4.0, 1.0, 3.0, 2.0], 1e-15).unwrap() - 1.0).abs() < 1e-12);
        assert!(quantile_threshold(&[], 0.5).is_err());
        assert!(quantile_threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn empirical_flag_rate_matches_quantile() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..1000).map(|_| rng.random_range(-500.0..0.0)).collect();
        for q in [0.01, 0.05, 0.5] {
            let t = quantile_threshold(&v, q).unwrap();
            let rate = flag(&v, t).iter().filter(|&&f| f).count() as f64 / v.len() as f64;
            assert!((rate - q).abs() <= 1.0 / v.len() as f64 + 1e-12, "q={q} rate={rate}");
        }
    }

    #[test]
    fn csv_round_trip_and_svg() {
        let s = series(vec![-1.5, -2000.25]);
        let t = ThresholdSet::from_values(&[-100.0, -1042.0, -5000.0]).unwrap();
        let a = apply_thresholds(&s, &t);
        let text = series_csv(&s, Some(&a), &["seed=1".into()]);
        assert!(text.contains("timestamp,lrp,lrp-100,lrp-1042,lrp-5000"));
        let (ts, lrp) = read_series_csv(text.as_bytes()).unwrap();
        assert_eq!(ts, s.timestamps);
        assert_eq!(lrp, s.lrp);
        let svg = series_svg(&s, &t, Some(&[Label::Normal, Label::Attack]));
        assert_eq!(svg.matches("class=\"threshold\"").count(), 3);
        assert_eq!(svg.matches("class=\"lrp\"").count(), 1);
        assert_eq!(svg.matches("class=\"attack\"").count(), 1);
    }

    proptest! {
        #[test]
        fn nesting_and_counts(lrp in prop::collection::vec(-8000.0f64..100.0, 1..200)) {
            let s = series(lrp.clone());
            let t = ThresholdSet::from_values(&[-100.0, -1042.0, -5000.0]).unwrap();
            let a = apply_thresholds(&s, &t);
            prop_assert!(a.is_nested());
            for (k, &(_, th)) in t.entries().iter().enumerate() {
                prop_assert_eq!(a.count(k), lrp.iter().filter(|&&v| v < th).count());
            }
            prop_assert!(a.count(0) >= a.count(1) && a.count(1) >= a.count(2));
        }
    }
}
