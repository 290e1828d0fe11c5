//! Adam training of the autoencoder by maximising the lower bound.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{fit_stats, make_windows, normalize, split, ScadaDataset, WindowBatch};
use crate::diffcore::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::vae::{standard_normal, Mode, VaeConfig, VaeModel};

/// First and second moment estimates for every parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore, alpha: f64) -> Self {
        AdamState {
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            t: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update that descends along the gradients stored in `store`.
///
/// Coordinates whose gradient is exactly zero are left untouched, moments
/// included.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::shape("adam_step", "optimizer state does not match parameters"));
    }
    if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
        return Err(Error::NonFinite {
            block: p.name.clone(),
            detail: "gradient".into(),
        });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    for ((p, m), v) in store.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grads = p.grad.data();
        let values = p.value.data_mut();
        for (((w, &g), m), v) in values
            .iter_mut()
            .zip(grads)
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            if g == 0.0 {
                continue;
            }
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 200,
            learning_rate: 1e-3,
            seed: 0,
            clip_norm: Some(5.0),
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2 (batch norm)".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_elbo: f64,
    pub valid_elbo: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_elbo,valid_elbo,seconds\n");
        for e in &self.epochs {
            let valid = e.valid_elbo.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{:.3}", e.epoch, e.mean_elbo, valid, e.seconds);
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:>6}  {:>14}  {:>14}  {:>8}\n", "epoch", "mean ELBO", "valid ELBO", "seconds");
        for e in &self.epochs {
            let valid = e.valid_elbo.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "{:>6}  {:>14.4}  {:>14}  {:>8.2}", e.epoch, e.mean_elbo, valid, e.seconds);
        }
        s
    }
}

/// Splits a shuffled index list into batches of `size`, folding a trailing
/// singleton into the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Forward, backward and one Adam step on the given rows. Returns the batch ELBO.
fn train_step(
    model: &mut VaeModel,
    windows: &Tensor,
    rows: &[usize],
    rng: &mut ChaCha8Rng,
    state: &mut AdamState,
    clip: Option<f64>,
) -> Result<f64> {
    let x = windows.select_batch(rows);
    let noise = standard_normal(rng, &[rows.len(), model.config().latent_dim]);
    let mut tape = Tape::new();
    let elbo = model.elbo(&mut tape, &x, &noise, Mode::Train)?;
    let value = tape.value(elbo).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite {
            block: "elbo".into(),
            detail: format!("batch ELBO is {value}"),
        });
    }
    let loss = tape.scale(elbo, -1.0);
    let store = model.params_mut();
    store.zero_grad();
    tape.backprop(loss, store)?;
    if let Some(max) = clip {
        let norm = store.grad_norm();
        if norm > max {
            let f = max / norm;
            for p in store.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= f);
            }
        }
    }
    adam_step(store, state)?;
    Ok(value)
}

/// Batch-mean ELBO in inference mode with noise from `seed`.
pub fn evaluate_elbo(model: &mut VaeModel, batch: &WindowBatch, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch.len();
    let mut total = 0.0;
    for start in (0..n).step_by(256) {
        let end = (start + 256).min(n);
        let x = batch.windows.slice_batch(start, end)?;
        let noise = standard_normal(&mut rng, &[end - start, model.config().latent_dim]);
        let mut tape = Tape::new();
        let e = model.elbo(&mut tape, &x, &noise, Mode::Infer)?;
        total += tape.value(e).data()[0] * (end - start) as f64;
    }
    Ok(total / n as f64)
}

fn check_batch(model: &VaeModel, batch: &WindowBatch) -> Result<()> {
    let cfg = model.config();
    if batch.channels() != cfg.channels || batch.window_hours() != cfg.window_hours {
        return Err(Error::shape(
            "fit",
            format!(
                "windows [{}, {}] vs model [{}, {}]",
                batch.channels(),
                batch.window_hours(),
                cfg.channels,
                cfg.window_hours
            ),
        ));
    }
    if batch.len() < 2 {
        return Err(Error::Data("training needs at least two windows".into()));
    }
    Ok(())
}

/// Trains `model` on normalised windows. Shuffling and noise come from
/// `config.seed`, so identical inputs give identical parameters.
///
/// On a non-finite ELBO the parameters of the last completed epoch are
/// restored and the error returned.
pub fn fit(
    model: &mut VaeModel,
    train: &WindowBatch,
    valid: Option<&WindowBatch>,
    config: &TrainConfig,
) -> Result<(TrainReport, AdamState)> {
    config.validate()?;
    check_batch(model, train)?;
    let mut state = AdamState::new(model.params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let clock = Instant::now();
        let checkpoint = (model.params().clone(), model.running_stats().to_vec(), state.clone());
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for rows in batches(&order, config.batch_size) {
            match train_step(model, &train.windows, rows, &mut rng, &mut state, config.clip_norm) {
                Ok(e) => sum += e * rows.len() as f64,
                Err(err) => {
                    let (p, bn, _) = checkpoint;
                    model.set_state(p, bn);
                    log::error!("epoch {epoch}: {err}; restored last good parameters");
                    return Err(err);
                }
            }
        }
        let valid_elbo = valid
            .map(|v| evaluate_elbo(model, v, config.seed ^ 0x5eed))
            .transpose()?;
        let rec = EpochRecord {
            epoch,
            mean_elbo: sum / train.len() as f64,
            valid_elbo,
            seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: mean ELBO {:.4}", rec.mean_elbo);
        report.epochs.push(rec);
        if let (Some(patience), Some(v)) = (config.patience, valid_elbo) {
            if v > best {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    Ok((report, state))
}

/// Fits normalisation on the training rows of `ds`, builds a fresh model and
/// trains it. With `valid_fraction`, the trailing share of rows is held out
/// for per-epoch validation ELBO (and early stopping, if configured).
pub fn train_from_dataset(
    ds: &ScadaDataset,
    vae: VaeConfig,
    config: &TrainConfig,
    valid_fraction: Option<f64>,
) -> Result<(VaeModel, TrainReport, AdamState)> {
    if vae.channels != ds.num_channels() {
        return Err(Error::Config(format!(
            "model configured for {} channels, data has {}",
            vae.channels,
            ds.num_channels()
        )));
    }
    let w = vae.window_hours;
    let (train_rows, valid_rows) = match valid_fraction {
        Some(f) => {
            let (a, b) = split(ds, 1.0 - f, w)?;
            (a, Some(b))
        }
        None => (0..ds.len(), None),
    };
    let stats = fit_stats(ds, train_rows.clone())?;
    let norm = normalize(ds, &stats)?;
    let train = make_windows(&norm.slice(train_rows)?, w, 1)?;
    let valid = valid_rows
        .map(|r| make_windows(&norm.slice(r)?, w, 1))
        .transpose()?;
    let mut model = VaeModel::new(vae, ds.channel_names().to_vec(), stats)?;
    let (report, state) = fit(&mut model, &train, valid.as_ref(), config)?;
    Ok((model, report, state))
}

/// Continues training on new windows only, for `steps` Adam updates.
/// Normalisation statistics stay as fitted.
pub fn online_update(
    model: &mut VaeModel,
    batch: &WindowBatch,
    state: &mut AdamState,
    steps: usize,
    config: &TrainConfig,
) -> Result<()> {
    if steps == 0 {
        return Ok(());
    }
    config.validate()?;
    check_batch(model, batch)?;
    if state.m.len() != model.params().len() {
        *state = AdamState::new(model.params(), config.learning_rate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ state.t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut queue: Vec<Vec<usize>> = Vec::new();
    let snapshot = (model.params().clone(), model.running_stats().to_vec());
    for _ in 0..steps {
        if queue.is_empty() {
            order.shuffle(&mut rng);
            queue = batches(&order, config.batch_size)
                .into_iter()
                .rev()
                .map(<[usize]>::to_vec)
                .collect();
        }
        let rows = queue.pop().expect("refilled");
        if let Err(e) = train_step(model, &batch.windows, &rows, &mut rng, state, config.clip_norm) {
            model.set_state(snapshot.0, snapshot.1);
            return Err(e);
        }
    }
    Ok(())
}
