//! Physical and operational impossibility checks over SCADA data, with
//! backward smoothing of violations.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{ScadaDataset, DEFAULT_TIMESTAMP_FORMAT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TankMeta {
    pub name: String,
    pub level_channel: String,
    /// Metres.
    pub diameter: f64,
    pub min_level: f64,
    pub max_level: f64,
    #[serde(default)]
    pub elevation: f64,
}

impl TankMeta {
    pub fn area(&self) -> f64 {
        PI * (self.diameter / 2.0).powi(2)
    }
}

/// `head gain = a − b·flow^c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PumpCurve {
    pub fn head_gain(&self, flow: f64) -> f64 {
        self.a - self.b * flow.powf(self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpStationMeta {
    pub name: String,
    pub inlet_pressure: String,
    pub outlet_pressure: String,
    pub flow: String,
    pub status: String,
    #[serde(default)]
    pub elevation: f64,
    pub curve: Option<PumpCurve>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    Above,
    Below,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpStatus {
    Open,
    Closed,
}

/// "`actuator` is `expected` if tank `tank` level is `comparison` `threshold`".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRule {
    /// Status channel of the actuator (values > 0.5 mean open).
    pub actuator: String,
    pub comparison: Comparison,
    /// Tank name.
    pub tank: String,
    pub threshold: f64,
    pub expected: PumpStatus,
}

/// Two pressure sensors with no pumping between them; the downstream head
/// may not exceed the upstream head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadPair {
    pub upstream: String,
    #[serde(default)]
    pub upstream_elevation: f64,
    pub downstream: String,
    #[serde(default)]
    pub downstream_elevation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationFeed {
    pub station: String,
    pub tank: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleTolerances {
    pub mass_balance_rel: f64,
    pub mass_balance_horizon: usize,
    pub head_m: f64,
    pub pump_rel: f64,
    pub pump_abs_m: f64,
}

impl Default for RuleTolerances {
    fn default() -> Self {
        RuleTolerances {
            mass_balance_rel: 0.05,
            mass_balance_horizon: 24,
            head_m: 0.5,
            pump_rel: 0.10,
            pump_abs_m: 2.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    #[serde(default)]
    pub tanks: Vec<TankMeta>,
    #[serde(default)]
    pub pump_stations: Vec<PumpStationMeta>,
    #[serde(default)]
    pub control_rules: Vec<ControlRule>,
    #[serde(default)]
    pub head_pairs: Vec<HeadPair>,
    #[serde(default)]
    pub station_pump_map: Vec<StationFeed>,
    /// Multiplier from the pressure channels' unit to metres of head.
    #[serde(default = "one")]
    pub pressure_to_head: f64,
    /// Multiplier from the flow channels' unit to m³/h.
    #[serde(default = "one")]
    pub flow_to_m3_per_hour: f64,
    #[serde(default)]
    pub tolerances: RuleTolerances,
}

impl NetworkMeta {
    pub fn from_json(text: &str) -> Result<Self> {
        let meta: NetworkMeta = serde_json::from_str(text)?;
        meta.check_values()?;
        Ok(meta)
    }

    fn check_values(&self) -> Result<()> {
        for t in &self.tanks {
            let vals = [t.diameter, t.min_level, t.max_level, t.elevation];
            if vals.iter().any(|v| !v.is_finite()) || t.diameter <= 0.0 {
                return Err(Error::Config(format!("tank {}: invalid geometry", t.name)));
            }
            if t.max_level <= t.min_level {
                return Err(Error::Config(format!("tank {}: max level must exceed min level", t.name)));
            }
        }
        for s in &self.pump_stations {
            if let Some(c) = s.curve {
                if ![c.a, c.b, c.c].iter().all(|v| v.is_finite()) {
                    return Err(Error::Config(format!("station {}: non-finite pump curve", s.name)));
                }
            }
        }
        if !(self.pressure_to_head.is_finite() && self.flow_to_m3_per_hour.is_finite()) {
            return Err(Error::Config("unit factors must be finite".into()));
        }
        Ok(())
    }

    /// Checks that every referenced channel exists in `ds`.
    pub fn validate_against(&self, ds: &ScadaDataset) -> Result<()> {
        self.check_values()?;
        let mut names: Vec<&str> = Vec::new();
        names.extend(self.tanks.iter().map(|t| t.level_channel.as_str()));
        for s in &self.pump_stations {
            names.extend([&s.inlet_pressure, &s.outlet_pressure, &s.flow, &s.status].map(String::as_str));
        }
        names.extend(self.control_rules.iter().map(|r| r.actuator.as_str()));
        for p in &self.head_pairs {
            names.extend([p.upstream.as_str(), p.downstream.as_str()]);
        }
        if let Some(missing) = names.iter().find(|n| ds.channel_index(n).is_none()) {
            return Err(Error::Data(format!("network metadata references missing channel {missing}")));
        }
        for r in &self.control_rules {
            self.tank(&r.tank)?;
        }
        for f in &self.station_pump_map {
            self.tank(&f.tank)?;
            self.station(&f.station)?;
        }
        Ok(())
    }

    fn tank(&self, name: &str) -> Result<&TankMeta> {
        self.tanks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("unknown tank {name}")))
    }

    fn station(&self, name: &str) -> Result<&PumpStationMeta> {
        self.pump_stations
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("unknown pump station {name}")))
    }

    fn head(&self, ds: &ScadaDataset, channel: &str, elevation: f64) -> Result<Vec<f64>> {
        Ok(ds
            .column_by_name(channel)?
            .into_iter()
            .map(|p| elevation + p * self.pressure_to_head)
            .collect())
    }
}

fn is_open(status: f64) -> bool {
    status > 0.5
}

/// Any tank level strictly outside `[min, max]`.
pub fn check_tank_limits(ds: &ScadaDataset, meta: &NetworkMeta) -> Result<Vec<bool>> {
    let mut flags = vec![false; ds.len()];
    for t in &meta.tanks {
        for (f, l) in flags.iter_mut().zip(ds.column_by_name(&t.level_channel)?) {
            *f |= l < t.min_level || l > t.max_level;
        }
    }
    Ok(flags)
}

/// Hour `h` violates a rule when its level condition held at `h − 1` and the
/// actuator status at `h` contradicts it (one hour to actuate).
pub fn check_control_rules(ds: &ScadaDataset, meta: &NetworkMeta) -> Result<Vec<bool>> {
    let mut flags = vec![false; ds.len()];
    for r in &meta.control_rules {
        let level = ds.column_by_name(&meta.tank(&r.tank)?.level_channel)?;
        let status = ds.column_by_name(&r.actuator)?;
        for h in 1..ds.len() {
            let active = match r.comparison {
                Comparison::Above => level[h - 1] > r.threshold,
                Comparison::Below => level[h - 1] < r.threshold,
            };
            let ok = match r.expected {
                PumpStatus::Open => is_open(status[h]),
                PumpStatus::Closed => !is_open(status[h]),
            };
            flags[h] |= active && !ok;
        }
    }
    Ok(flags)
}

/// Flags hour `h` when stored volume gained over the preceding horizon
/// exceeds the pumped volume by more than the relative tolerance.
pub fn check_mass_balance(ds: &ScadaDataset, meta: &NetworkMeta) -> Result<Vec<bool>> {
    let horizon = meta.tolerances.mass_balance_horizon;
    if horizon == 0 {
        return Err(Error::Config("mass-balance horizon must be positive".into()));
    }
    let mut flags = vec![false; ds.len()];
    if meta.station_pump_map.is_empty() {
        return Ok(flags);
    }
    let mut tanks: Vec<&TankMeta> = Vec::new();
    let mut stations: Vec<&PumpStationMeta> = Vec::new();
    for f in &meta.station_pump_map {
        let t = meta.tank(&f.tank)?;
        if !tanks.iter().any(|x| x.name == t.name) {
            tanks.push(t);
        }
        let s = meta.station(&f.station)?;
        if !stations.iter().any(|x| x.name == s.name) {
            stations.push(s);
        }
    }
    let levels = tanks
        .iter()
        .map(|t| Ok((t.area(), ds.column_by_name(&t.level_channel)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut pumped = vec![0.0; ds.len()];
    for s in &stations {
        for (p, q) in pumped.iter_mut().zip(ds.column_by_name(&s.flow)?) {
            *p += q.max(0.0) * meta.flow_to_m3_per_hour;
        }
    }
    for h in horizon..ds.len() {
        let stored: f64 = levels
            .iter()
            .map(|(area, l)| area * (l[h] - l[h - horizon]))
            .sum();
        let supplied: f64 = pumped[h - horizon..h].iter().sum();
        flags[h] = stored > supplied * (1.0 + meta.tolerances.mass_balance_rel);
    }
    Ok(flags)
}

/// Downstream head above upstream head plus tolerance.
pub fn check_head_feasibility(ds: &ScadaDataset, meta: &NetworkMeta) -> Result<Vec<bool>> {
    let mut flags = vec![false; ds.len()];
    for p in &meta.head_pairs {
        let up = meta.head(ds, &p.upstream, p.upstream_elevation)?;
        let down = meta.head(ds, &p.downstream, p.downstream_elevation)?;
        for ((f, u), d) in flags.iter_mut().zip(up).zip(down) {
            *f |= d > u + meta.tolerances.head_m;
        }
    }
    Ok(flags)
}

/// Measured head gain of a running station against its pump curve.
pub fn check_pump_curve(ds: &ScadaDataset, meta: &NetworkMeta) -> Result<Vec<bool>> {
    let mut flags = vec![false; ds.len()];
    let tol = &meta.tolerances;
    for s in &meta.pump_stations {
        let curve = s
            .curve
            .ok_or_else(|| Error::Config(format!("station {}: pump curve missing", s.name)))?;
        let inlet = meta.head(ds, &s.inlet_pressure, s.elevation)?;
        let outlet = meta.head(ds, &s.outlet_pressure, s.elevation)?;
        let flow = ds.column_by_name(&s.flow)?;
        let status = ds.column_by_name(&s.status)?;
        for h in 0..ds.len() {
            let q = flow[h] * meta.flow_to_m3_per_hour;
            if !is_open(status[h]) || q <= 0.0 {
                continue;
            }
            let expected = curve.head_gain(q);
            let measured = outlet[h] - inlet[h];
            flags[h] |= (measured - expected).abs() > (tol.pump_rel * expected).max(tol.pump_abs_m);
        }
    }
    Ok(flags)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleFamily {
    TankLimit,
    ControlRule,
    MassBalance,
    HeadFeasibility,
    PumpCurve,
}

impl RuleFamily {
    pub const ALL: [RuleFamily; 5] = [
        RuleFamily::TankLimit,
        RuleFamily::ControlRule,
        RuleFamily::MassBalance,
        RuleFamily::HeadFeasibility,
        RuleFamily::PumpCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleFamily::TankLimit => "tank_limit",
            RuleFamily::ControlRule => "control_rule",
            RuleFamily::MassBalance => "mass_balance",
            RuleFamily::HeadFeasibility => "head_feasibility",
            RuleFamily::PumpCurve => "pump_curve",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleFlags {
    /// Per family, in [`RuleFamily::ALL`] order.
    pub families: Vec<Vec<bool>>,
    pub combined: Vec<bool>,
    pub smoothed: Vec<bool>,
}

impl RuleFlags {
    pub fn family(&self, f: RuleFamily) -> &[bool] {
        let i = RuleFamily::ALL.iter().position(|&x| x == f).expect("known family");
        &self.families[i]
    }

    pub fn to_csv(&self, ds: &ScadaDataset, preamble: &[String]) -> String {
        let mut s = String::new();
        for line in preamble {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("timestamp");
        for f in RuleFamily::ALL {
            let _ = write!(s, ",{}", f.name());
        }
        s.push_str(",combined,smoothed\n");
        let b = |v: bool| if v { 1 } else { 0 };
        for (h, ts) in ds.timestamps().iter().enumerate() {
            let _ = write!(s, "{}", ts.format(DEFAULT_TIMESTAMP_FORMAT));
            for fam in &self.families {
                let _ = write!(s, ",{}", b(fam[h]));
            }
            let _ = writeln!(s, ",{},{}", b(self.combined[h]), b(self.smoothed[h]));
        }
        s
    }
}

/// Runs every family, combines them, and smooths back `back_hours`.
pub fn run_rules(ds: &ScadaDataset, meta: &NetworkMeta, back_hours: usize) -> Result<RuleFlags> {
    meta.validate_against(ds)?;
    let mut families = vec![
        check_tank_limits(ds, meta)?,
        check_control_rules(ds, meta)?,
        check_mass_balance(ds, meta)?,
        check_head_feasibility(ds, meta)?,
    ];
    families.push(if meta.pump_stations.iter().all(|s| s.curve.is_some()) {
        check_pump_curve(ds, meta)?
    } else {
        log::warn!("pump curves missing; skipping pump-curve checks");
        vec![false; ds.len()]
    });
    let combined = (0..ds.len())
        .map(|h| families.iter().any(|f| f[h]))
        .collect();
    let raw = RuleFlags {
        families,
        combined,
        smoothed: Vec::new(),
    };
    Ok(smooth_flags(&raw, back_hours))
}

/// Hour `h` is suspicious iff a combined violation occurs in `[h, h + back_hours]`.
/// Recomputed from the combined flags, so repeated smoothing is a no-op.
pub fn smooth_flags(raw: &RuleFlags, back_hours: usize) -> RuleFlags {
    let n = raw.combined.len();
    let mut smoothed = vec![false; n];
    let mut next: Option<usize> = None;
    for h in (0..n).rev() {
        if raw.combined[h] {
            next = Some(h);
        }
        smoothed[h] = next.is_some_and(|j| j - h <= back_hours);
    }
    RuleFlags {
        smoothed,
        ..raw.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeDelta;

    fn dataset(cols: &[(&str, Vec<f64>)]) -> ScadaDataset {
        let t = cols[0].1.len();
        let t0 = crate::dataio::parse_timestamp("2016-01-01 00:00:00", DEFAULT_TIMESTAMP_FORMAT).unwrap();
        let mut values = Vec::new();
        for h in 0..t {
            values.extend(cols.iter().map(|c| c.1[h]));
        }
        ScadaDataset::new(
            (0..t as i64).map(|h| t0 + TimeDelta::hours(h)).collect(),
            cols.iter().map(|c| c.0.to_string()).collect(),
            values,
            None,
        )
        .unwrap()
    }

    fn tank(diameter: f64) -> TankMeta {
        TankMeta {
            name: "T5".into(),
            level_channel: "L_T5".into(),
            diameter,
            min_level: 0.5,
            max_level: 4.5,
            elevation: 0.0,
        }
    }

    fn meta() -> NetworkMeta {
        NetworkMeta::from_json(r#"{"tanks": []}"#).unwrap()
    }

    fn flags_from(combined: Vec<bool>) -> RuleFlags {
        RuleFlags {
            families: vec![combined.clone()],
            combined,
            smoothed: vec![],
        }
    }

    #[test]
    fn tank_limits() {
        let ds = dataset(&[("L_T5", vec![4.6, 4.0, 4.5, 0.4])]);
        let m = NetworkMeta {
            tanks: vec![tank(2.0)],
            ..meta()
        };
        assert_eq!(check_tank_limits(&ds, &m).unwrap(), vec![true, false, false, true]);
    }

    #[test]
    fn control_rule_with_latitude() {
        let rule = ControlRule {
            actuator: "S_PU8".into(),
            comparison: Comparison::Above,
            tank: "T5".into(),
            threshold: 4.0,
            expected: PumpStatus::Closed,
        };
        let m = NetworkMeta {
            tanks: vec![tank(2.0)],
            control_rules: vec![rule],
            ..meta()
        };
        let ds = dataset(&[("L_T5", vec![4.2, 4.1, 3.9, 3.9]), ("S_PU8", vec![1.0, 1.0, 0.0, 1.0])]);
        assert_eq!(check_control_rules(&ds, &m).unwrap(), vec![false, true, false, false]);
    }

    #[test]
    fn mass_balance() {
        let m = NetworkMeta {
            tanks: vec![tank(2.0)],
            pump_stations: vec![PumpStationMeta {
                name: "P".into(),
                inlet_pressure: "in".into(),
                outlet_pressure: "out".into(),
                flow: "F".into(),
                status: "S".into(),
                elevation: 0.0,
                curve: None,
            }],
            station_pump_map: vec![StationFeed {
                station: "P".into(),
                tank: "T5".into(),
            }],
            tolerances: RuleTolerances {
                mass_balance_horizon: 1,
                ..Default::default()
            },
            ..meta()
        };
        let mk = |flow: f64, dl: f64| {
            dataset(&[
                ("L_T5", vec![1.0, 1.0 + dl]),
                ("F", vec![flow, 0.0]),
                ("S", vec![1.0, 0.0]),
                ("in", vec![0.0, 0.0]),
                ("out", vec![0.0, 0.0]),
            ])
        };
        assert_eq!(check_mass_balance(&mk(1.0, 0.5), &m).unwrap(), vec![false, true]);
        assert_eq!(check_mass_balance(&mk(2.0, 0.5), &m).unwrap(), vec![false, false]);
        assert_eq!(check_mass_balance(&mk(0.0, 0.0), &m).unwrap(), vec![false, false]);
    }

    #[test]
    fn head_feasibility() {
        let m = NetworkMeta {
            head_pairs: vec![HeadPair {
                upstream: "U".into(),
                upstream_elevation: 0.0,
                downstream: "D".into(),
                downstream_elevation: 0.0,
            }],
            ..meta()
        };
        let ds = dataset(&[("U", vec![50.0, 50.0, 50.0]), ("D", vec![55.0, 50.0, 50.4])]);
        assert_eq!(check_head_feasibility(&ds, &m).unwrap(), vec![true, false, false]);
    }

    #[test]
    fn pump_curve() {
        let station = PumpStationMeta {
            name: "P".into(),
            inlet_pressure: "in".into(),
            outlet_pressure: "out".into(),
            flow: "F".into(),
            status: "S".into(),
            elevation: 0.0,
            curve: Some(PumpCurve { a: 60.0, b: 0.5, c: 2.0 }),
        };
        let m = NetworkMeta {
            pump_stations: vec![station.clone()],
            ..meta()
        };
        let ds = dataset(&[
            ("in", vec![10.0, 10.0, 10.0]),
            ("out", vec![40.0, 62.0, 10.0]),
            ("F", vec![4.0, 4.0, 0.0]),
            ("S", vec![1.0, 1.0, 0.0]),
        ]);
        assert_eq!(check_pump_curve(&ds, &m).unwrap(), vec![true, false, false]);
        let no_curve = NetworkMeta {
            pump_stations: vec![PumpStationMeta { curve: None, ..station }],
            ..meta()
        };
        assert!(check_pump_curve(&ds, &no_curve).is_err());
    }

    #[test]
    fn smoothing() {
        let mut c = vec![false; 130];
        c[100] = true;
        let s = smooth_flags(&flags_from(c.clone()), 48);
        let hours: Vec<usize> = (0..130).filter(|&h| s.smoothed[h]).collect();
        assert_eq!(hours, (52..=100).collect::<Vec<_>>());
        c[120] = true;
        let s = smooth_flags(&flags_from(c), 48);
        let hours: Vec<usize> = (0..130).filter(|&h| s.smoothed[h]).collect();
        assert_eq!(hours, (52..=120).collect::<Vec<_>>());
        assert_eq!(smooth_flags(&s, 48), s);
        let none = smooth_flags(&flags_from(vec![false; 10]), 48);
        assert!(none.smoothed.iter().all(|&f| !f));
    }

    #[test]
    fn missing_channel_is_reported() {
        let ds = dataset(&[("L_T1", vec![1.0])]);
        let m = NetworkMeta {
            tanks: vec![tank(2.0)],
            ..meta()
        };
        assert!(run_rules(&ds, &m, 48).unwrap_err().to_string().contains("L_T5"));
    }
}
