//! Small tank/pump simulator with hysteresis control, noisy demand and
//! tampered-threshold attacks. Produces labelled hourly datasets.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::{parse_timestamp, Label, ScadaDataset, DEFAULT_TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::rulecheck::{
    Comparison, ControlRule, HeadPair, NetworkMeta, PumpCurve, PumpStationMeta, PumpStatus, RuleTolerances,
    StationFeed, TankMeta,
};

/// Warn when consecutive attacks are closer than this.
pub const MIN_ATTACK_GAP: usize = 72;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TankSpec {
    pub name: String,
    /// m².
    pub area: f64,
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    /// Physical capacity; the level is clamped here. Defaults to `max + 1`.
    #[serde(default)]
    pub overflow_level: Option<f64>,
    #[serde(default)]
    pub elevation: f64,
    /// Mean outflow for each hour of the day, m³/h.
    pub demand: Vec<f64>,
}

impl TankSpec {
    pub fn capacity(&self) -> f64 {
        self.overflow_level.unwrap_or(self.max + 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    pub name: String,
    /// Tank this pump fills.
    pub tank: String,
    /// m³/h while running.
    pub rated_flow: f64,
    /// Switch on when the tank level drops below this.
    pub on_below: f64,
    /// Switch off when the tank level rises above this.
    pub off_above: f64,
}

/// Pumps sharing one pair of suction/discharge pressure sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationSpec {
    pub name: String,
    /// Suction head, m.
    pub inlet_head: f64,
    /// Head added while any pump runs, m.
    pub head_gain: f64,
    pub pumps: Vec<PumpSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub level: f64,
    pub head: f64,
    /// Relative to the reading.
    pub flow: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        SensorNoise {
            level: 0.01,
            head: 0.05,
            flow: 0.01,
        }
    }
}

fn default_demand_noise() -> f64 {
    0.02
}

fn default_start() -> NaiveDateTime {
    parse_timestamp("2016-01-01 00:00:00", DEFAULT_TIMESTAMP_FORMAT).expect("valid literal")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNetworkSpec {
    pub tanks: Vec<TankSpec>,
    pub stations: Vec<StationSpec>,
    #[serde(default = "default_demand_noise")]
    pub demand_noise: f64,
    #[serde(default)]
    pub sensor_noise: SensorNoise,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
    #[serde(default)]
    pub seed: u64,
}

fn curve(x: &[f64]) -> Vec<f64> {
    x.to_vec()
}

impl Default for SynthNetworkSpec {
    /// Two tanks. T1 is fed by PU1; T2 by PU2 with PU3 as a backup that
    /// only starts if T2 drops a further 0.5 m.
    fn default() -> Self {
        let pump = |name: &str, tank: &str, rated_flow, on_below, off_above| PumpSpec {
            name: name.into(),
            tank: tank.into(),
            rated_flow,
            on_below,
            off_above,
        };
        SynthNetworkSpec {
            tanks: vec![
                TankSpec {
                    name: "T1".into(),
                    area: 30.0,
                    initial: 3.0,
                    min: 0.5,
                    max: 4.5,
                    overflow_level: None,
                    elevation: 60.0,
                    demand: curve(&[
                        4.2, 4.0, 4.0, 4.1, 4.4, 5.0, 5.8, 6.5, 6.9, 7.0, 6.8, 6.5, 6.3, 6.2, 6.0, 5.9, 6.1,
                        6.6, 6.9, 6.7, 6.0, 5.3, 4.8, 4.4,
                    ]),
                },
                TankSpec {
                    name: "T2".into(),
                    area: 25.0,
                    initial: 2.0,
                    min: 0.3,
                    max: 4.0,
                    overflow_level: None,
                    elevation: 55.0,
                    demand: curve(&[
                        3.3, 3.1, 3.0, 3.0, 3.2, 3.7, 4.4, 5.2, 5.7, 5.9, 5.6, 5.2, 5.0, 4.8, 4.7, 4.7, 4.9,
                        5.4, 5.8, 5.6, 5.0, 4.3, 3.8, 3.5,
                    ]),
                },
            ],
            stations: vec![
                StationSpec {
                    name: "S1".into(),
                    inlet_head: 20.0,
                    head_gain: 40.0,
                    pumps: vec![pump("PU1", "T1", 11.0, 2.0, 4.0)],
                },
                StationSpec {
                    name: "S2".into(),
                    inlet_head: 19.0,
                    head_gain: 35.0,
                    pumps: vec![pump("PU2", "T2", 10.0, 1.5, 3.0), pump("PU3", "T2", 10.0, 1.0, 3.0)],
                },
            ],
            demand_noise: default_demand_noise(),
            sensor_noise: SensorNoise::default(),
            start: default_start(),
            seed: 0,
        }
    }
}

impl SynthNetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.tanks.is_empty() {
            return bad("network has no tanks".into());
        }
        for t in &self.tanks {
            if !(t.area > 0.0 && t.area.is_finite()) {
                return bad(format!("tank {}: area must be positive", t.name));
            }
            if !(t.min < t.initial && t.initial < t.max) {
                return bad(format!("tank {}: need min < initial < max", t.name));
            }
            if t.capacity() < t.max {
                return bad(format!("tank {}: overflow level below max", t.name));
            }
            if t.demand.len() != 24 || t.demand.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
                return bad(format!("tank {}: demand needs 24 non-negative values", t.name));
            }
        }
        let mut names: Vec<&str> = self.tanks.iter().map(|t| t.name.as_str()).collect();
        for s in &self.stations {
            if s.pumps.is_empty() {
                return bad(format!("station {} has no pumps", s.name));
            }
            if !(s.inlet_head.is_finite() && s.head_gain.is_finite()) {
                return bad(format!("station {}: non-finite head", s.name));
            }
            names.push(&s.name);
            for p in &s.pumps {
                if !(p.rated_flow > 0.0 && p.rated_flow.is_finite()) {
                    return bad(format!("pump {}: rated flow must be positive", p.name));
                }
                if p.on_below >= p.off_above {
                    return bad(format!("pump {}: on threshold must be below off threshold", p.name));
                }
                if self.tank_index(&p.tank).is_none() {
                    return bad(format!("pump {}: unknown tank {}", p.name, p.tank));
                }
                names.push(&p.name);
            }
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate name {}", w[0]));
        }
        let noise = &self.sensor_noise;
        if [self.demand_noise, noise.level, noise.head, noise.flow]
            .iter()
            .any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }

    fn tank_index(&self, name: &str) -> Option<usize> {
        self.tanks.iter().position(|t| t.name == name)
    }

    fn pumps(&self) -> impl Iterator<Item = &PumpSpec> {
        self.stations.iter().flat_map(|s| s.pumps.iter())
    }

    /// Emitted channel names: tank levels, then per station each pump's
    /// status and flow followed by suction and discharge heads.
    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.tanks.iter().map(|t| format!("L_{}", t.name)).collect();
        for s in &self.stations {
            for p in &s.pumps {
                names.push(format!("S_{}", p.name));
                names.push(format!("F_{}", p.name));
            }
            names.push(format!("P_{}_IN", s.name));
            names.push(format!("P_{}_OUT", s.name));
        }
        names
    }

    /// Rule-check metadata consistent with this network.
    pub fn network_meta(&self) -> NetworkMeta {
        let tanks = self
            .tanks
            .iter()
            .map(|t| TankMeta {
                name: t.name.clone(),
                level_channel: format!("L_{}", t.name),
                diameter: 2.0 * (t.area / std::f64::consts::PI).sqrt(),
                min_level: t.min,
                max_level: t.max,
                elevation: t.elevation,
            })
            .collect();
        let mut pump_stations = Vec::new();
        let mut control_rules = Vec::new();
        let mut station_pump_map = Vec::new();
        for s in &self.stations {
            for p in &s.pumps {
                let b = 0.01;
                pump_stations.push(PumpStationMeta {
                    name: p.name.clone(),
                    inlet_pressure: format!("P_{}_IN", s.name),
                    outlet_pressure: format!("P_{}_OUT", s.name),
                    flow: format!("F_{}", p.name),
                    status: format!("S_{}", p.name),
                    elevation: 0.0,
                    curve: Some(PumpCurve {
                        a: s.head_gain + b * p.rated_flow.powi(2),
                        b,
                        c: 2.0,
                    }),
                });
                let rule = |comparison, threshold, expected| ControlRule {
                    actuator: format!("S_{}", p.name),
                    comparison,
                    tank: p.tank.clone(),
                    threshold,
                    expected,
                };
                control_rules.push(rule(Comparison::Below, p.on_below, PumpStatus::Open));
                control_rules.push(rule(Comparison::Above, p.off_above, PumpStatus::Closed));
                station_pump_map.push(StationFeed {
                    station: p.name.clone(),
                    tank: p.tank.clone(),
                });
            }
        }
        let head_pairs = self
            .stations
            .windows(2)
            .filter(|w| w[0].inlet_head >= w[1].inlet_head)
            .map(|w| HeadPair {
                upstream: format!("P_{}_IN", w[0].name),
                upstream_elevation: 0.0,
                downstream: format!("P_{}_IN", w[1].name),
                downstream_elevation: 0.0,
            })
            .collect();
        NetworkMeta {
            tanks,
            pump_stations,
            control_rules,
            head_pairs,
            station_pump_map,
            pressure_to_head: 1.0,
            flow_to_m3_per_hour: 1.0,
            tolerances: RuleTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    OnBelow,
    OffAbove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Concealment {
    None,
    /// Overwrite `channels` during the attack with the values recorded from
    /// `source_start` onwards.
    Replay { source_start: usize, channels: Vec<String> },
    /// Add `value` to `channels` during the attack.
    Offset { channels: Vec<String>, value: f64 },
}

fn no_concealment() -> Concealment {
    Concealment::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub start: usize,
    pub duration: usize,
    pub pump: String,
    pub rule: RuleKind,
    /// Tampered threshold that replaces the configured one.
    pub value: f64,
    #[serde(default = "no_concealment")]
    pub concealment: Concealment,
}

impl AttackSpec {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }

    pub fn hours(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }
}

/// Internal physical state, one entry per hour (levels also carry the
/// final state, so they are one longer).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub tanks: usize,
    /// `[hours + 1, tanks]`, true levels.
    pub levels: Vec<f64>,
    /// `[hours, tanks]`, m³ pumped into each tank during the hour.
    pub inflow: Vec<f64>,
    /// `[hours, tanks]`, m³ drawn from each tank during the hour.
    pub demand: Vec<f64>,
    /// `[hours, tanks]`, whether the level update hit 0 or the capacity.
    pub clamped: Vec<bool>,
}

impl Trace {
    pub fn level(&self, hour: usize, tank: usize) -> f64 {
        self.levels[hour * self.tanks + tank]
    }
}

fn threshold_table(spec: &SynthNetworkSpec, attacks: &[AttackSpec], hours: usize) -> Result<BTreeMap<(usize, RuleKind), Vec<usize>>> {
    let pumps: Vec<&PumpSpec> = spec.pumps().collect();
    let mut by_rule: BTreeMap<(usize, RuleKind), Vec<usize>> = BTreeMap::new();
    for (i, a) in attacks.iter().enumerate() {
        let p = pumps
            .iter()
            .position(|p| p.name == a.pump)
            .ok_or_else(|| Error::Config(format!("attack {}: unknown pump {}", i + 1, a.pump)))?;
        if a.duration == 0 || a.end() > hours {
            return Err(Error::Config(format!("attack {}: interval outside [0, {hours})", i + 1)));
        }
        let original = match a.rule {
            RuleKind::OnBelow => pumps[p].on_below,
            RuleKind::OffAbove => pumps[p].off_above,
        };
        if !a.value.is_finite() || a.value == original {
            return Err(Error::Config(format!("attack {}: tampered value must differ from {original}", i + 1)));
        }
        match &a.concealment {
            Concealment::Replay { source_start, channels } => {
                if source_start + a.duration > hours {
                    return Err(Error::Config(format!("attack {}: replay source outside data", i + 1)));
                }
                check_channels(spec, channels)?;
            }
            Concealment::Offset { channels, value } => {
                if !value.is_finite() {
                    return Err(Error::Config(format!("attack {}: non-finite offset", i + 1)));
                }
                check_channels(spec, channels)?;
            }
            Concealment::None => {}
        }
        by_rule.entry((p, a.rule)).or_default().push(i);
    }
    for idx in by_rule.values_mut() {
        idx.sort_by_key(|&i| attacks[i].start);
        for w in idx.windows(2) {
            if attacks[w[1]].start < attacks[w[0]].end() {
                return Err(Error::Config(format!(
                    "attacks {} and {} overlap on the same rule",
                    w[0] + 1,
                    w[1] + 1
                )));
            }
        }
    }
    let mut order: Vec<&AttackSpec> = attacks.iter().collect();
    order.sort_by_key(|a| a.start);
    for w in order.windows(2) {
        if w[1].start < w[0].end() + MIN_ATTACK_GAP {
            log::warn!(
                "attacks starting at hours {} and {} are less than {MIN_ATTACK_GAP} h apart",
                w[0].start,
                w[1].start
            );
        }
    }
    Ok(by_rule)
}

fn check_channels(spec: &SynthNetworkSpec, channels: &[String]) -> Result<()> {
    let names = spec.channel_names();
    match channels.iter().find(|c| !names.contains(c)) {
        Some(c) => Err(Error::Config(format!("concealment names unknown channel {c}"))),
        None => Ok(()),
    }
}

struct Run {
    trace: Trace,
    /// `[hours, channels]` emitted readings.
    values: Vec<f64>,
}

fn run(spec: &SynthNetworkSpec, attacks: &[AttackSpec], hours: usize, seed: u64) -> Result<Run> {
    spec.validate()?;
    if hours < 24 {
        return Err(Error::Config(format!("need at least 24 hours, got {hours}")));
    }
    let by_rule = threshold_table(spec, attacks, hours)?;
    let pumps: Vec<&PumpSpec> = spec.pumps().collect();
    let pump_tank: Vec<usize> = pumps.iter().map(|p| spec.tank_index(&p.tank).expect("validated")).collect();
    let n_tanks = spec.tanks.len();
    let n_ch = spec.channel_names().len();
    let noise = &spec.sensor_noise;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };

    let mut level: Vec<f64> = spec.tanks.iter().map(|t| t.initial).collect();
    let mut status: Vec<bool> = pumps.iter().zip(&pump_tank).map(|(p, &k)| level[k] < p.on_below).collect();
    let mut trace = Trace {
        tanks: n_tanks,
        levels: Vec::with_capacity((hours + 1) * n_tanks),
        inflow: Vec::with_capacity(hours * n_tanks),
        demand: Vec::with_capacity(hours * n_tanks),
        clamped: Vec::with_capacity(hours * n_tanks),
    };
    let mut values = Vec::with_capacity(hours * n_ch);

    for t in 0..hours {
        trace.levels.extend_from_slice(&level);
        for (j, p) in pumps.iter().enumerate() {
            let threshold = |kind: RuleKind, original: f64| {
                by_rule
                    .get(&(j, kind))
                    .and_then(|idx| idx.iter().map(|&i| &attacks[i]).find(|a| a.hours().contains(&t)))
                    .map_or(original, |a| a.value)
            };
            let l = level[pump_tank[j]];
            if l < threshold(RuleKind::OnBelow, p.on_below) {
                status[j] = true;
            } else if l > threshold(RuleKind::OffAbove, p.off_above) {
                status[j] = false;
            }
        }
        let mut inflow = vec![0.0; n_tanks];
        for (j, p) in pumps.iter().enumerate() {
            if status[j] {
                inflow[pump_tank[j]] += p.rated_flow;
            }
        }
        let demand: Vec<f64> = spec
            .tanks
            .iter()
            .map(|tk| (tk.demand[t % 24] * (1.0 + spec.demand_noise * normal())).max(0.0))
            .collect();

        for (k, tk) in spec.tanks.iter().enumerate() {
            values.push(level[k] + noise.level * normal());
            let _ = tk;
        }
        let mut j = 0;
        for s in &spec.stations {
            let mut running = false;
            for p in &s.pumps {
                running |= status[j];
                let on = if status[j] { 1.0 } else { 0.0 };
                values.push(on);
                values.push(p.rated_flow * on * (1.0 + noise.flow * normal()));
                j += 1;
            }
            let inlet = s.inlet_head + noise.head * normal();
            let gain = if running { s.head_gain } else { 0.0 };
            values.push(inlet);
            values.push(inlet + gain + noise.head * normal());
        }

        for (k, tk) in spec.tanks.iter().enumerate() {
            let next = level[k] + (inflow[k] - demand[k]) / tk.area;
            let clamped = next.clamp(0.0, tk.capacity());
            trace.clamped.push(clamped != next);
            level[k] = clamped;
        }
        trace.inflow.extend_from_slice(&inflow);
        trace.demand.extend_from_slice(&demand);
    }
    trace.levels.extend_from_slice(&level);

    let channels = spec.channel_names();
    for a in attacks {
        match &a.concealment {
            Concealment::None => {}
            Concealment::Replay { source_start, channels: names } => {
                for name in names {
                    let c = channels.iter().position(|n| n == name).expect("checked");
                    for (h, src) in a.hours().zip(*source_start..) {
                        values[h * n_ch + c] = values[src * n_ch + c];
                    }
                }
            }
            Concealment::Offset { channels: names, value } => {
                for name in names {
                    let c = channels.iter().position(|n| n == name).expect("checked");
                    for h in a.hours() {
                        values[h * n_ch + c] += value;
                    }
                }
            }
        }
    }
    Ok(Run { trace, values })
}

fn dataset(spec: &SynthNetworkSpec, hours: usize, values: Vec<f64>, labels: Vec<Label>) -> Result<ScadaDataset> {
    let timestamps = (0..hours as i64).map(|h| spec.start + TimeDelta::hours(h)).collect();
    ScadaDataset::new(timestamps, spec.channel_names(), values, Some(labels))
}

/// Attack-free run seeded by `spec.seed`; every hour is labelled normal.
pub fn simulate(spec: &SynthNetworkSpec, hours: usize) -> Result<ScadaDataset> {
    let r = run(spec, &[], hours, spec.seed)?;
    dataset(spec, hours, r.values, vec![Label::Normal; hours])
}

/// Internal levels, flows and demand of a run, for physics checks.
pub fn simulate_trace(spec: &SynthNetworkSpec, attacks: &[AttackSpec], hours: usize, seed: u64) -> Result<Trace> {
    Ok(run(spec, attacks, hours, seed)?.trace)
}

/// Run with tampered thresholds during each attack; hours inside an attack
/// interval are labelled attack, all others normal.
pub fn inject_attacks(spec: &SynthNetworkSpec, attacks: &[AttackSpec], hours: usize, seed: u64) -> Result<ScadaDataset> {
    let r = run(spec, attacks, hours, seed)?;
    let mut labels = vec![Label::Normal; hours];
    for a in attacks {
        labels[a.hours()].fill(Label::Attack);
    }
    dataset(spec, hours, r.values, labels)
}

/// CSV text readable with [`crate::dataio::ColumnMap::labelled`]. A dataset
/// without labels is written without the label column.
pub fn to_csv(ds: &ScadaDataset, preamble: &[String]) -> Result<String> {
    let mut out = Vec::new();
    for line in preamble {
        out.extend_from_slice(format!("# {line}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["DATETIME".to_string()];
        header.extend(ds.channel_names().iter().cloned());
        if ds.labels().is_some() {
            header.push("ATT_FLAG".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for t in 0..ds.len() {
            record.clear();
            record.push(ds.timestamps()[t].format(DEFAULT_TIMESTAMP_FORMAT).to_string());
            record.extend(ds.row(t).iter().map(|v| v.to_string()));
            if let Some(labels) = ds.labels() {
                record.push(
                    match labels[t] {
                        Label::Attack => "1",
                        Label::Normal => "0",
                        Label::Unlabeled => "-999",
                    }
                    .into(),
                );
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("csv buffer", e))?;
    }
    String::from_utf8(out).map_err(|e| Error::Data(e.to_string()))
}

pub fn emit(ds: &ScadaDataset, path: impl AsRef<Path>, preamble: &[String]) -> Result<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(Error::EmptyPath);
    }
    std::fs::write(path, to_csv(ds, preamble)?).map_err(|e| Error::io(path, e))
}

/// A training run and an attack run over the same network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub network: SynthNetworkSpec,
    pub train_hours: usize,
    pub attack_hours: usize,
    pub train_seed: u64,
    pub attack_seed: u64,
    pub attacks: Vec<AttackSpec>,
}

impl Default for Scenario {
    /// 90 days normal, then 60 days with three threshold attacks at hours
    /// 240, 600 and 960.
    fn default() -> Self {
        let attack = |start, duration, pump: &str, rule, value| AttackSpec {
            start,
            duration,
            pump: pump.into(),
            rule,
            value,
            concealment: Concealment::None,
        };
        Scenario {
            network: SynthNetworkSpec::default(),
            train_hours: 90 * 24,
            attack_hours: 60 * 24,
            train_seed: 1,
            attack_seed: 2,
            attacks: vec![
                attack(240, 72, "PU1", RuleKind::OffAbove, 4.3),
                attack(600, 72, "PU1", RuleKind::OffAbove, 5.0),
                attack(960, 96, "PU3", RuleKind::OnBelow, 1.5),
            ],
        }
    }
}

impl Scenario {
    /// `(train, attack)` datasets; the attack run starts where training ends.
    pub fn generate(&self) -> Result<(ScadaDataset, ScadaDataset)> {
        let train_spec = SynthNetworkSpec {
            seed: self.train_seed,
            ..self.network.clone()
        };
        let train = simulate(&train_spec, self.train_hours)?;
        let attack_spec = SynthNetworkSpec {
            start: self.network.start + TimeDelta::hours(self.train_hours as i64),
            ..self.network.clone()
        };
        let attack = inject_attacks(&attack_spec, &self.attacks, self.attack_hours, self.attack_seed)?;
        Ok((train, attack))
    }

    /// Same as the attack run but with no attacks: the paired baseline.
    pub fn baseline(&self) -> Result<ScadaDataset> {
        let spec = SynthNetworkSpec {
            start: self.network.start + TimeDelta::hours(self.train_hours as i64),
            ..self.network.clone()
        };
        inject_attacks(&spec, &[], self.attack_hours, self.attack_seed)
    }
}
