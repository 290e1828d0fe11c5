//! Subcommand implementations. Each reads its inputs, writes its outputs
//! under `out`, and stamps them with the tool version, seed and input digests.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use scadavae::dataio::{read_csv, ColumnMap, Label, ScadaDataset};
use scadavae::detector::{
    apply_thresholds, model_windows, quantile_threshold, read_series_csv, score_series, series_csv, series_svg,
    ThresholdSet,
};
use scadavae::evaluation::{confusion, evaluate, optimal_threshold_f1, precision_recall_f1};
use scadavae::rulecheck::{run_rules, NetworkMeta, RuleFamily};
use scadavae::synthgen::{self, Scenario};
use scadavae::training::{online_update, train_from_dataset, AdamState};
use scadavae::vae::{load_model, save_model, Sampling, VaeConfig};
use scadavae::{sha256_hex, Error, Result};

use crate::config::RunConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Preamble key recording the window length behind an LRP file.
const WINDOW_KEY: &str = "window_hours";

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

/// A configured path that must exist when the command starts.
fn require<'a>(path: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    let p = path
        .as_deref()
        .ok_or_else(|| Error::Config(format!("no {what} given (use {flag})")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} {} does not exist", p.display())));
    }
    Ok(p)
}

/// An input file read once, with its digest for provenance.
struct Input {
    path: PathBuf,
    bytes: Vec<u8>,
    digest: String,
}

impl Input {
    fn open(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        Ok(Input {
            path: path.to_path_buf(),
            digest: sha256_hex(&bytes),
            bytes,
        })
    }

    fn header(&self) -> Vec<String> {
        String::from_utf8_lossy(&self.bytes)
            .lines()
            .find(|l| !l.starts_with('#'))
            .map(|l| l.split(',').map(|h| h.trim().to_string()).collect())
            .unwrap_or_default()
    }

    /// Loads a dataset; a label column absent from the file means unlabelled data.
    fn dataset(&self, columns: &ColumnMap) -> Result<ScadaDataset> {
        let mut map = columns.clone();
        if let Some(label) = &map.label {
            if !self.header().contains(label) {
                log::info!("{}: no '{label}' column, treating as unlabelled", self.path.display());
                map.label = None;
            }
        }
        read_csv(self.bytes.as_slice(), &self.path.display().to_string(), &map)
    }

    fn preamble_value(&self, key: &str) -> Option<String> {
        String::from_utf8_lossy(&self.bytes)
            .lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(key).map(|v| v.trim().to_string()))
    }

    fn provenance(&self, role: &str) -> String {
        format!("input {role} {} sha256 {}", self.path.display(), self.digest)
    }

    fn json(&self) -> serde_json::Value {
        json!({ "path": self.path, "sha256": self.digest })
    }
}

fn preamble(seed: Option<u64>, inputs: &[(&str, &Input)]) -> Vec<String> {
    let mut lines = vec![format!("scadavae {VERSION}")];
    lines.extend(seed.map(|s| format!("seed {s}")));
    lines.extend(inputs.iter().map(|(role, i)| i.provenance(role)));
    lines
}

/// Window labels for LRP rows stamped with their window's last hour.
fn window_labels(ds: &ScadaDataset, ends: &[chrono::NaiveDateTime], window_hours: usize) -> Result<Vec<Label>> {
    let hourly = ds
        .labels()
        .ok_or_else(|| Error::Data("labels required but the data has no label column".into()))?;
    let index: HashMap<_, _> = ds.timestamps().iter().enumerate().map(|(i, t)| (*t, i)).collect();
    ends.iter()
        .map(|t| {
            let &i = index
                .get(t)
                .ok_or_else(|| Error::Data(format!("LRP timestamp {t} not found in the labelled data")))?;
            if i + 1 < window_hours {
                return Err(Error::Data(format!("LRP timestamp {t} precedes a full {window_hours}-hour window")));
            }
            Ok(Label::combine(&hourly[i + 1 - window_hours..=i]))
        })
        .collect()
}

/// LRP file plus the window length it was scored with.
fn read_lrp(cfg: &RunConfig) -> Result<(Input, Vec<chrono::NaiveDateTime>, Vec<f64>, usize)> {
    let input = Input::open(require(&cfg.lrp, "LRP file", "--lrp")?)?;
    let (ts, lrp) = read_series_csv(input.bytes.as_slice())?;
    let window = match input.preamble_value(WINDOW_KEY) {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad {WINDOW_KEY} '{v}'", input.path.display())))?,
        None => cfg.vae.window_hours,
    };
    Ok((input, ts, lrp, window))
}

fn labelled_data(cfg: &RunConfig) -> Result<(Input, ScadaDataset)> {
    let input = Input::open(require(&cfg.data, "labelled data", "--data")?)?;
    let columns = ColumnMap {
        channels: Vec::new(),
        ..cfg.columns.clone()
    };
    let ds = input.dataset(&columns)?;
    Ok((input, ds))
}

pub fn gen(cfg: &RunConfig) -> Result<()> {
    let (mut scenario, source) = match &cfg.scenario {
        Some(_) => {
            let input = Input::open(require(&cfg.scenario, "scenario file", "--scenario")?)?;
            let s: Scenario = serde_json::from_slice(&input.bytes)
                .map_err(|e| Error::Config(format!("{}: {e}", input.path.display())))?;
            (s, Some(input))
        }
        None => (Scenario::default(), None),
    };
    if let Some(s) = cfg.seed {
        scenario.train_seed = s;
        scenario.attack_seed = s.wrapping_add(1);
    }
    let (train, attack) = scenario.generate()?;
    let baseline = scenario.baseline()?;
    let resolved = serde_json::to_value(&scenario)?;
    let digest = sha256_hex(serde_json::to_string(&resolved)?.as_bytes());
    let pre = vec![
        format!("scadavae {VERSION}"),
        format!("seed train {} attack {}", scenario.train_seed, scenario.attack_seed),
        format!("scenario sha256 {digest}"),
    ];
    let out = &cfg.out;
    write(&out.join("train.csv"), synthgen::to_csv(&train, &pre)?)?;
    write(&out.join("attack.csv"), synthgen::to_csv(&attack, &pre)?)?;
    write(&out.join("baseline.csv"), synthgen::to_csv(&baseline, &pre)?)?;
    write_json(&out.join("network_meta.json"), &serde_json::to_value(scenario.network.network_meta())?)?;
    write_json(
        &out.join("run.json"),
        &json!({
            "tool": format!("scadavae {VERSION}"),
            "command": "gen",
            "train_seed": scenario.train_seed,
            "attack_seed": scenario.attack_seed,
            "scenario_source": source.as_ref().map(Input::json),
            "scenario_sha256": digest,
            "scenario": resolved,
        }),
    )?;
    println!(
        "wrote {} training hours and {} attack-run hours ({} attacks, {} channels) to {}",
        train.len(),
        attack.len(),
        scenario.attacks.len(),
        train.num_channels(),
        out.display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, online: bool) -> Result<()> {
    if online {
        return train_online(cfg);
    }
    let data = Input::open(require(&cfg.data, "training data", "--data")?)?;
    let ds = data.dataset(&cfg.columns)?;
    let vae = VaeConfig {
        channels: ds.num_channels(),
        ..cfg.vae.clone()
    };
    let (model, report, _) = train_from_dataset(&ds, vae, &cfg.train, cfg.valid_fraction)?;
    let model_path = cfg.model.clone().unwrap_or_else(|| cfg.out.join("model.bin"));
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    save_model(&model, &model_path)?;
    let pre = preamble(Some(cfg.train.seed), &[("data", &data)]);
    let mut csv: String = pre.iter().map(|l| format!("# {l}\n")).collect();
    csv.push_str(&report.to_csv());
    write(&cfg.out.join("train_report.csv"), csv)?;
    write_json(
        &cfg.out.join("train.json"),
        &json!({
            "tool": format!("scadavae {VERSION}"),
            "command": "train",
            "seed": cfg.train.seed,
            "vae_seed": model.config().seed,
            "data": data.json(),
            "model": { "path": model_path, "fingerprint": model.fingerprint() },
            "vae": model.config(),
            "train": cfg.train,
        }),
    )?;
    print!("{}", report.to_table());
    println!("model {} written to {}", model.fingerprint(), model_path.display());
    Ok(())
}

fn train_online(cfg: &RunConfig) -> Result<()> {
    let model_path = require(&cfg.model, "model file", "--model")?;
    let data = Input::open(require(&cfg.data, "new data", "--data")?)?;
    let mut model = load_model(model_path)?;
    let before = model.fingerprint();
    let mut columns = cfg.columns.clone();
    if columns.channels.is_empty() {
        columns.channels = model.channel_names().to_vec();
    }
    let ds = data.dataset(&columns)?;
    let windows = model_windows(&model, &ds)?;
    let steps = cfg
        .online_steps
        .unwrap_or_else(|| windows.len().div_ceil(cfg.train.batch_size));
    let mut state = AdamState::new(model.params(), cfg.train.learning_rate);
    online_update(&mut model, &windows, &mut state, steps, &cfg.train)?;
    save_model(&model, model_path)?;
    write_json(
        &cfg.out.join("online.json"),
        &json!({
            "tool": format!("scadavae {VERSION}"),
            "command": "train --online",
            "seed": cfg.train.seed,
            "data": data.json(),
            "steps": steps,
            "model": { "path": model_path, "before": before, "after": model.fingerprint() },
        }),
    )?;
    println!(
        "updated {} with {steps} steps on {} windows ({} -> {})",
        model_path.display(),
        windows.len(),
        before,
        model.fingerprint()
    );
    Ok(())
}

pub fn score(cfg: &RunConfig) -> Result<()> {
    let model_input = Input::open(require(&cfg.model, "model file", "--model")?)?;
    let data = Input::open(require(&cfg.data, "data", "--data")?)?;
    let model = load_model(&model_input.path)?;
    let mut columns = cfg.columns.clone();
    if columns.channels.is_empty() {
        columns.channels = model.channel_names().to_vec();
    }
    let ds = data.dataset(&columns)?;
    let windows = model_windows(&model, &ds)?;
    let series = score_series(&model, &windows, cfg.sampling)?;
    let thresholds = if cfg.thresholds.is_empty() {
        None
    } else {
        Some(ThresholdSet::from_values(&cfg.thresholds)?)
    };
    let alarms = thresholds.as_ref().map(|t| apply_thresholds(&series, t));
    let seed = match cfg.sampling {
        Sampling::Mode => model.config().seed,
        Sampling::Mc { seed, .. } => seed,
    };
    let mut pre = preamble(Some(seed), &[("model", &model_input), ("data", &data)]);
    pre.push(format!("{WINDOW_KEY} {}", model.config().window_hours));
    write(&cfg.out.join("lrp.csv"), series_csv(&series, alarms.as_ref(), &pre))?;
    if cfg.svg {
        let t = thresholds
            .as_ref()
            .ok_or_else(|| Error::Config("--svg needs at least one threshold (--thresholds)".into()))?;
        write(&cfg.out.join("lrp.svg"), series_svg(&series, t, windows.labels.as_deref()))?;
    }
    let finite: Vec<f64> = series.lrp.iter().copied().filter(|v| v.is_finite()).collect();
    let mean = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    println!("scored {} windows: mean LRP {mean:.4}, min {min:.4}", series.len());
    if let Some(a) = &alarms {
        for (k, name) in a.names.iter().enumerate() {
            println!("  {name}: {} flagged", a.count(k));
        }
    }
    Ok(())
}

pub fn threshold(cfg: &RunConfig) -> Result<()> {
    let (lrp_input, ts, lrp, window) = read_lrp(cfg)?;
    let (record, line) = if let Some(q) = cfg.quantile {
        let t = quantile_threshold(&lrp, q)?;
        (
            json!({ "strategy": "quantile", "quantile": q, "threshold": t }),
            format!("threshold {t} (quantile {q})"),
        )
    } else {
        let (data, ds) = labelled_data(cfg)?;
        let labels = window_labels(&ds, &ts, window)?;
        let (t, f1) = optimal_threshold_f1(&lrp, &labels)?;
        (
            json!({ "strategy": "f1-enum", "threshold": t, "f1": f1, "labels": data.json() }),
            format!("threshold {t} (F1 {f1:.4})"),
        )
    };
    let mut record = record;
    record["tool"] = json!(format!("scadavae {VERSION}"));
    record["lrp"] = lrp_input.json();
    write_json(&cfg.out.join("threshold.json"), &record)?;
    println!("{line}");
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let (lrp_input, ts, lrp, window) = read_lrp(cfg)?;
    let (data, ds) = labelled_data(cfg)?;
    let labels = window_labels(&ds, &ts, window)?;
    let cuts: Vec<Option<f64>> = if cfg.thresholds.is_empty() {
        vec![None]
    } else {
        cfg.thresholds.iter().copied().map(Some).collect()
    };
    let mut text = String::new();
    let mut reports = Vec::new();
    let mut curve = None;
    for cut in cuts {
        let (report, roc) = evaluate(&lrp, &labels, cut)?;
        text.push_str(&report.to_text());
        text.push('\n');
        reports.push(report);
        curve = Some(roc);
    }
    let curve = curve.expect("at least one evaluation");
    let pre: String = preamble(None, &[("lrp", &lrp_input), ("labels", &data)])
        .iter()
        .map(|l| format!("# {l}\n"))
        .collect();
    write(&cfg.out.join("eval.txt"), &text)?;
    write(&cfg.out.join("roc.csv"), pre + &curve.to_csv())?;
    write_json(
        &cfg.out.join("eval.json"),
        &json!({
            "tool": format!("scadavae {VERSION}"),
            "lrp": lrp_input.json(),
            "labels": data.json(),
            "window_hours": window,
            "reports": reports,
        }),
    )?;
    print!("{text}");
    Ok(())
}

pub fn rules(cfg: &RunConfig) -> Result<()> {
    let meta_input = Input::open(require(&cfg.network_meta, "network meta file", "--meta")?)?;
    let meta = NetworkMeta::from_json(&String::from_utf8_lossy(&meta_input.bytes))
        .map_err(|e| Error::Config(format!("{}: {e}", meta_input.path.display())))?;
    let data = Input::open(require(&cfg.data, "data", "--data")?)?;
    let ds = data.dataset(&cfg.columns)?;
    let flags = run_rules(&ds, &meta, cfg.smoothing_hours)?;
    let pre = preamble(None, &[("data", &data), ("meta", &meta_input)]);
    write(&cfg.out.join("rules.csv"), flags.to_csv(&ds, &pre))?;
    let count = |v: &[bool]| v.iter().filter(|&&x| x).count();
    let mut summary = json!({
        "tool": format!("scadavae {VERSION}"),
        "data": data.json(),
        "meta": meta_input.json(),
        "smoothing_hours": cfg.smoothing_hours,
        "raw": RuleFamily::ALL.iter().map(|&f| (f.name().to_string(), json!(count(flags.family(f))))).collect::<serde_json::Map<_, _>>(),
        "combined": count(&flags.combined),
        "smoothed": count(&flags.smoothed),
    });
    for f in RuleFamily::ALL {
        println!("{:<18} {} flagged hours", f.name(), count(flags.family(f)));
    }
    println!("{:<18} {}", "combined", count(&flags.combined));
    println!("{:<18} {}", "smoothed", count(&flags.smoothed));
    if let Some(labels) = ds.labels() {
        let cm = confusion(&flags.smoothed, labels)?;
        let scores = precision_recall_f1(&cm);
        println!(
            "against labels: tp={} fp={} fn={} tn={} precision {:.4} recall {:.4} F1 {:.4}",
            cm.tp, cm.fp, cm.fn_, cm.tn, scores.precision, scores.recall, scores.f1
        );
        summary["confusion"] = serde_json::to_value(cm)?;
        summary["scores"] = serde_json::to_value(scores)?;
    }
    write_json(&cfg.out.join("rules.json"), &summary)
}
