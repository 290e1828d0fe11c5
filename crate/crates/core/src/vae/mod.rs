//! Convolutional variational autoencoder over `[channels, window_hours]`
//! windows, its variational lower bound, and the log reconstruction
//! probability (LRP) score.
//!
//! Encoder: `conv → batch-norm → ReLU → max-pool` per stage, flatten, dense
//! layers (each followed by batch-norm and ReLU), then two linear heads for
//! the posterior mean and log-variance. The decoder mirrors it: dense layers,
//! reshape, then `upscale → conv` per stage, the last conv emitting the
//! reconstruction mean. The likelihood variance is a learned per-channel
//! log-variance shared by all windows.

mod io;


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataio::ChannelStats;
use crate::diffcore::{BnMode, ParamId, ParamStore, RunningStats, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub use io::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION};

/// `ln(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filter_size: usize,
    pub num_filters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub channels: usize,
    pub window_hours: usize,
    pub conv_specs: Vec<ConvSpec>,
    pub pool_size: usize,
    pub dense_units: Vec<usize>,
    pub latent_dim: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            channels: 43,
            window_hours: 24,
            conv_specs: [32, 64, 128]
                .map(|n| ConvSpec {
                    filter_size: 3,
                    num_filters: n,
                })
                .to_vec(),
            pool_size: 2,
            dense_units: vec![256, 128],
            latent_dim: 16,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.window_hours == 0 || self.latent_dim == 0 {
            return bad("channels, window_hours and latent_dim must be positive".into());
        }
        if self.pool_size == 0 {
            return bad("pool_size must be positive".into());
        }
        if self.conv_specs.is_empty() {
            return bad("at least one convolution stage is required".into());
        }
        let div = self.pool_size.pow(self.conv_specs.len() as u32);
        if !self.window_hours.is_multiple_of(div) {
            return bad(format!(
                "window_hours {} not divisible by pool_size^stages = {div}",
                self.window_hours
            ));
        }
        let mut len = self.window_hours;
        for (i, s) in self.conv_specs.iter().enumerate() {
            if s.filter_size % 2 == 0 || s.num_filters == 0 {
                return bad(format!("stage {i}: filter size must be odd and filters positive"));
            }
            if s.filter_size > len {
                return bad(format!("stage {i}: filter {} longer than input {len}", s.filter_size));
            }
            len /= self.pool_size;
        }
        if self.dense_units.contains(&0) {
            return bad("dense units must be positive".into());
        }
        Ok(())
    }

    /// Length of the time axis after all pooling stages.
    pub fn reduced_len(&self) -> usize {
        self.window_hours / self.pool_size.pow(self.conv_specs.len() as u32)
    }

    pub fn flat_features(&self) -> usize {
        self.conv_specs.last().map_or(self.channels, |s| s.num_filters) * self.reduced_len()
    }

    pub fn input_dims(&self) -> usize {
        self.channels * self.window_hours
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// How the latent code is chosen when computing LRP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// `z = mu`.
    Mode,
    /// Average over `samples` reparameterised draws.
    Mc { samples: usize, seed: u64 },
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Sampling::Mode => write!(f, "mode"),
            Sampling::Mc { samples, seed } => write!(f, "mc({samples},{seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Tensor,
    pub logvar: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mean: Tensor,
    /// Per-channel log-variance broadcast to `mean`'s shape.
    pub logvar: Tensor,
}

/// Tape handles of a latent distribution.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ReconVars {
    pub mean: Var,
    pub logvar: Var,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    kernel: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct DenseBlock {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct Head {
    weight: ParamId,
    bias: ParamId,
}

/// Parameter ids in creation order. Batch-norm layers are numbered in the
/// order they run: encoder convs, encoder dense, decoder dense, decoder convs.
#[derive(Debug, Clone)]
struct Layout {
    enc_conv: Vec<ConvBlock>,
    enc_dense: Vec<DenseBlock>,
    mu: Head,
    logvar: Head,
    dec_dense: Vec<DenseBlock>,
    dec_conv: Vec<ConvBlock>,
    out_kernel: ParamId,
    out_bias: ParamId,
    out_logvar: ParamId,
    bn_names: Vec<String>,
    bn_sizes: Vec<usize>,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

impl Layout {
    fn build(cfg: &VaeConfig, params: &mut ParamStore, rng: &mut ChaCha8Rng) -> Layout {
        let mut bn_names = Vec::new();
        let mut bn_sizes = Vec::new();
        let mut bn = |params: &mut ParamStore, name: String, n: usize| {
            let gamma = params.add(format!("{name}.gamma"), Tensor::full(&[n], 1.0));
            let beta = params.add(format!("{name}.beta"), Tensor::zeros(&[n]));
            bn_names.push(name);
            bn_sizes.push(n);
            (gamma, beta)
        };

        let mut enc_conv = Vec::new();
        let mut c_in = cfg.channels;
        for (i, s) in cfg.conv_specs.iter().enumerate() {
            let (k, n) = (s.filter_size, s.num_filters);
            let kernel = params.add(
                format!("enc.conv{i}.kernel"),
                glorot(rng, &[n, c_in, k], c_in * k, n * k),
            );
            let (gamma, beta) = bn(params, format!("enc.conv{i}.bn"), n);
            enc_conv.push(ConvBlock { kernel, gamma, beta });
            c_in = n;
        }

        let mut enc_dense = Vec::new();
        let mut n_in = cfg.flat_features();
        for (i, &u) in cfg.dense_units.iter().enumerate() {
            let weight = params.add(format!("enc.dense{i}.weight"), glorot(rng, &[n_in, u], n_in, u));
            let (gamma, beta) = bn(params, format!("enc.dense{i}.bn"), u);
            enc_dense.push(DenseBlock { weight, gamma, beta });
            n_in = u;
        }
        let l = cfg.latent_dim;
        let mut head = |params: &mut ParamStore, name: &str| Head {
            weight: params.add(format!("enc.{name}.weight"), glorot(rng, &[n_in, l], n_in, l)),
            bias: params.add(format!("enc.{name}.bias"), Tensor::zeros(&[l])),
        };
        let mu = head(params, "mu");
        let logvar = head(params, "logvar");

        let mut dec_dense = Vec::new();
        let mut n_in = l;
        let widths: Vec<usize> = cfg
            .dense_units
            .iter()
            .rev()
            .copied()
            .chain(std::iter::once(cfg.flat_features()))
            .collect();
        for (i, &u) in widths.iter().enumerate() {
            let weight = params.add(format!("dec.dense{i}.weight"), glorot(rng, &[n_in, u], n_in, u));
            let (gamma, beta) = bn(params, format!("dec.dense{i}.bn"), u);
            dec_dense.push(DenseBlock { weight, gamma, beta });
            n_in = u;
        }

        let stages = cfg.conv_specs.len();
        let mut dec_conv = Vec::new();
        let mut c_in = cfg.conv_specs[stages - 1].num_filters;
        for j in 0..stages - 1 {
            let k = cfg.conv_specs[stages - 1 - j].filter_size;
            let n = cfg.conv_specs[stages - 2 - j].num_filters;
            let kernel = params.add(
                format!("dec.conv{j}.kernel"),
                glorot(rng, &[n, c_in, k], c_in * k, n * k),
            );
            let (gamma, beta) = bn(params, format!("dec.conv{j}.bn"), n);
            dec_conv.push(ConvBlock { kernel, gamma, beta });
            c_in = n;
        }
        let k = cfg.conv_specs[0].filter_size;
        let c = cfg.channels;
        let out_kernel = params.add("dec.out.kernel", glorot(rng, &[c, c_in, k], c_in * k, c * k));
        let out_bias = params.add("dec.out.bias", Tensor::zeros(&[c]));
        let out_logvar = params.add("dec.output_logvar", Tensor::zeros(&[c]));

        Layout {
            enc_conv,
            enc_dense,
            mu,
            logvar,
            dec_dense,
            dec_conv,
            out_kernel,
            out_bias,
            out_logvar,
            bn_names,
            bn_sizes,
        }
    }
}

enum BnStates<'a> {
    Train(&'a mut [RunningStats]),
    Infer(&'a [RunningStats]),
}

impl BnStates<'_> {
    fn mode(&mut self, i: usize) -> BnMode<'_> {
        match self {
            BnStates::Train(s) => BnMode::Train(&mut s[i]),
            BnStates::Infer(s) => BnMode::Infer(&s[i]),
        }
    }
}

struct Graph<'a> {
    cfg: &'a VaeConfig,
    layout: &'a Layout,
    params: &'a ParamStore,
    bn: BnStates<'a>,
}

impl Graph<'_> {
    fn p(&self, tape: &mut Tape, id: ParamId) -> Var {
        tape.param(self.params, id)
    }

    fn norm_relu(&mut self, tape: &mut Tape, x: Var, gamma: ParamId, beta: ParamId, bn: usize) -> Result<Var> {
        let (g, b) = (self.p(tape, gamma), self.p(tape, beta));
        let y = tape.batchnorm(x, g, b, self.bn.mode(bn))?;
        Ok(tape.relu(y))
    }

    fn encode(&mut self, tape: &mut Tape, x: Var) -> Result<LatentVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.channels || shape[2] != self.cfg.window_hours {
            return Err(Error::shape(
                "encode",
                format!(
                    "window {shape:?}, model expects [batch, {}, {}]",
                    self.cfg.channels, self.cfg.window_hours
                ),
            ));
        }
        let batch = shape[0];
        let layout = self.layout;
        let mut bn = 0;
        let mut h = x;
        for blk in &layout.enc_conv {
            let k = self.p(tape, blk.kernel);
            h = tape.conv1d(h, k, None)?;
            h = self.norm_relu(tape, h, blk.gamma, blk.beta, bn)?;
            bn += 1;
            h = tape.maxpool1d(h, self.cfg.pool_size)?;
        }
        h = tape.reshape(h, &[batch, self.cfg.flat_features()])?;
        for blk in &layout.enc_dense {
            let w = self.p(tape, blk.weight);
            h = tape.dense(h, w, None)?;
            h = self.norm_relu(tape, h, blk.gamma, blk.beta, bn)?;
            bn += 1;
        }
        let (w, b) = (self.p(tape, layout.mu.weight), self.p(tape, layout.mu.bias));
        let mu = tape.dense(h, w, Some(b))?;
        let (w, b) = (self.p(tape, layout.logvar.weight), self.p(tape, layout.logvar.bias));
        let logvar = tape.dense(h, w, Some(b))?;
        Ok(LatentVars { mu, logvar })
    }

    fn decode(&mut self, tape: &mut Tape, z: Var) -> Result<ReconVars> {
        let shape = tape.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.cfg.latent_dim {
            return Err(Error::shape(
                "decode",
                format!("latent {shape:?}, model expects [batch, {}]", self.cfg.latent_dim),
            ));
        }
        let batch = shape[0];
        let layout = self.layout;
        let mut bn = layout.enc_conv.len() + layout.enc_dense.len();
        let mut h = z;
        for blk in &layout.dec_dense {
            let w = self.p(tape, blk.weight);
            h = tape.dense(h, w, None)?;
            h = self.norm_relu(tape, h, blk.gamma, blk.beta, bn)?;
            bn += 1;
        }
        let top = self.cfg.conv_specs.last().expect("validated").num_filters;
        h = tape.reshape(h, &[batch, top, self.cfg.reduced_len()])?;
        for blk in &layout.dec_conv {
            h = tape.upscale1d(h, self.cfg.pool_size)?;
            let k = self.p(tape, blk.kernel);
            h = tape.conv1d(h, k, None)?;
            h = self.norm_relu(tape, h, blk.gamma, blk.beta, bn)?;
            bn += 1;
        }
        h = tape.upscale1d(h, self.cfg.pool_size)?;
        let (k, b) = (self.p(tape, layout.out_kernel), self.p(tape, layout.out_bias));
        let mean = tape.conv1d(h, k, Some(b))?;
        let lv = self.p(tape, layout.out_logvar);
        let logvar = tape.broadcast_channels(lv, batch, self.cfg.window_hours)?;
        Ok(ReconVars { mean, logvar })
    }
}

/// `z = mu + exp(logvar / 2) ⊙ noise`, with `noise` a constant on the tape.
pub fn reparameterize_graph(tape: &mut Tape, latent: LatentVars, noise: &Tensor) -> Result<Var> {
    if tape.value(latent.mu).shape() != noise.shape() {
        return Err(Error::shape(
            "reparameterize",
            format!("noise {:?} vs mu {:?}", noise.shape(), tape.value(latent.mu).shape()),
        ));
    }
    let eps = tape.input(noise.clone());
    let half = tape.scale(latent.logvar, 0.5);
    let sigma = tape.exp(half);
    let spread = tape.mul(sigma, eps)?;
    tape.add(latent.mu, spread)
}

/// Per-row `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_graph(tape: &mut Tape, latent: LatentVars) -> Result<Var> {
    let mu2 = tape.mul(latent.mu, latent.mu)?;
    let var = tape.exp(latent.logvar);
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, latent.logvar)?;
    let s = tape.add_scalar(s, -1.0);
    let rows = tape.row_sum(s);
    Ok(tape.scale(rows, 0.5))
}

/// Per-row diagonal-Gaussian log density of `x` (a constant) under `(mean, logvar)`.
pub fn log_density_graph(tape: &mut Tape, x: Var, mean: Var, logvar: Var) -> Result<Var> {
    let diff = tape.sub(x, mean)?;
    let sq = tape.mul(diff, diff)?;
    let neg = tape.scale(logvar, -1.0);
    let prec = tape.exp(neg);
    let t = tape.mul(sq, prec)?;
    let t = tape.add(t, logvar)?;
    let t = tape.add_scalar(t, LN_2PI);
    let rows = tape.row_sum(t);
    Ok(tape.scale(rows, -0.5))
}

/// Tensor-level reparameterisation.
pub fn reparameterize(latent: &GaussianLatent, noise: &Tensor) -> Result<Tensor> {
    if latent.mu.shape() != noise.shape() || latent.logvar.shape() != noise.shape() {
        return Err(Error::shape("reparameterize", "noise shape must match the latent"));
    }
    let sigma = latent.logvar.map(|lv| (0.5 * lv).exp());
    let spread = sigma.zip_map(noise, |s, n| s * n)?;
    latent.mu.zip_map(&spread, |m, s| m + s)
}

/// `0.5 Σ_d (mu² + exp(logvar) − 1 − logvar)` per batch row.
pub fn kl_diag_gaussian(latent: &GaussianLatent) -> Result<Vec<f64>> {
    if latent.mu.shape() != latent.logvar.shape() {
        return Err(Error::shape("kl_diag_gaussian", "mu and logvar differ in shape"));
    }
    if !latent.mu.all_finite() || !latent.logvar.all_finite() {
        return Err(Error::NonFinite {
            block: "latent".into(),
            detail: "KL of non-finite parameters".into(),
        });
    }
    let b = latent.mu.batch();
    let d = latent.mu.len() / b;
    Ok(latent
        .mu
        .data()
        .chunks(d)
        .zip(latent.logvar.data().chunks(d))
        .map(|(m, lv)| {
            0.5 * m
                .iter()
                .zip(lv)
                .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
                .sum::<f64>()
        })
        .collect())
}

/// `Σ −0.5 (ln 2π + logvar + (x − mean)² / exp(logvar))` per batch row.
pub fn gaussian_log_density(x: &Tensor, mean: &Tensor, logvar: &Tensor) -> Result<Vec<f64>> {
    if x.shape() != mean.shape() || x.shape() != logvar.shape() {
        return Err(Error::shape(
            "gaussian_log_density",
            format!("{:?}, {:?}, {:?}", x.shape(), mean.shape(), logvar.shape()),
        ));
    }
    let b = x.batch();
    let d = x.len() / b;
    Ok((0..b)
        .map(|r| {
            let s = r * d..(r + 1) * d;
            x.data()[s.clone()]
                .iter()
                .zip(&mean.data()[s.clone()])
                .zip(&logvar.data()[s])
                .map(|((&x, &m), &lv)| {
                    // exp(lv) may underflow to 0 for extreme inputs; at zero distance the term is 0
                    let d = x - m;
                    let q = if d == 0.0 { 0.0 } else { d * d / lv.exp() };
                    -0.5 * (LN_2PI + lv + q)
                })
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    config: VaeConfig,
    channel_names: Vec<String>,
    norm: ChannelStats,
    params: ParamStore,
    bn: Vec<RunningStats>,
    layout: Layout,
    /// Free-form key/value metadata stored in the model file (seed, inputs).
    pub provenance: std::collections::BTreeMap<String, String>,
}

impl VaeModel {
    /// Fresh model with seeded initialisation.
    pub fn new(config: VaeConfig, channel_names: Vec<String>, norm: ChannelStats) -> Result<Self> {
        config.validate()?;
        if channel_names.len() != config.channels || norm.len() != config.channels {
            return Err(Error::Config(format!(
                "model has {} channels but {} names and {} normalisation entries",
                config.channels,
                channel_names.len(),
                norm.len()
            )));
        }
        if norm.std.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Config("normalisation std must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, &mut rng);
        let bn = layout.bn_sizes.iter().map(|&n| RunningStats::new(n)).collect();
        Ok(VaeModel {
            config,
            channel_names,
            norm,
            params,
            bn,
            layout,
            provenance: Default::default(),
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn norm_stats(&self) -> &ChannelStats {
        &self.norm
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.bn
    }

    pub fn batchnorm_names(&self) -> &[String] {
        &self.layout.bn_names
    }

    pub(crate) fn set_state(&mut self, params: ParamStore, bn: Vec<RunningStats>) {
        self.params = params;
        self.bn = bn;
    }

    /// Short digest of configuration and parameter values.
    pub fn fingerprint(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.config).expect("config serialises");
        for p in self.params.iter() {
            bytes.extend(p.name.as_bytes());
            bytes.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
        }
        for s in &self.bn {
            bytes.extend(s.mean.iter().chain(&s.var).flat_map(|v| v.to_le_bytes()));
        }
        crate::sha256_hex(&bytes)[..16].to_string()
    }

    fn graph(&self) -> Graph<'_> {
        Graph {
            cfg: &self.config,
            layout: &self.layout,
            params: &self.params,
            bn: BnStates::Infer(&self.bn),
        }
    }

    fn graph_mode(&mut self, mode: Mode) -> Graph<'_> {
        Graph {
            cfg: &self.config,
            layout: &self.layout,
            params: &self.params,
            bn: match mode {
                Mode::Train => BnStates::Train(&mut self.bn),
                Mode::Infer => BnStates::Infer(&self.bn),
            },
        }
    }

    pub fn encode_on(&mut self, tape: &mut Tape, x: Var, mode: Mode) -> Result<LatentVars> {
        self.graph_mode(mode).encode(tape, x)
    }

    pub fn decode_on(&mut self, tape: &mut Tape, z: Var, mode: Mode) -> Result<ReconVars> {
        self.graph_mode(mode).decode(tape, z)
    }

    /// Inference-mode posterior for normalised windows `[batch, channels, hours]`.
    pub fn encode(&self, window: &Tensor) -> Result<GaussianLatent> {
        let mut tape = Tape::new();
        let x = tape.input(window.clone());
        let lat = self.graph().encode(&mut tape, x)?;
        Ok(GaussianLatent {
            mu: tape.value(lat.mu).clone(),
            logvar: tape.value(lat.logvar).clone(),
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Reconstruction> {
        let mut tape = Tape::new();
        let zv = tape.input(z.clone());
        let rec = self.graph().decode(&mut tape, zv)?;
        Ok(Reconstruction {
            mean: tape.value(rec.mean).clone(),
            logvar: tape.value(rec.logvar).clone(),
        })
    }

    /// Records the batch-mean lower bound on `tape`, with `noise` the frozen
    /// standard-normal draws `[batch, latent_dim]`.
    pub fn elbo(&mut self, tape: &mut Tape, windows: &Tensor, noise: &Tensor, mode: Mode) -> Result<Var> {
        if mode == Mode::Train && windows.batch() < 2 {
            return Err(Error::shape("elbo", "train mode needs a batch of at least 2"));
        }
        let x = tape.input(windows.clone());
        let mut g = self.graph_mode(mode);
        let lat = g.encode(tape, x)?;
        let z = reparameterize_graph(tape, lat, noise)?;
        let rec = g.decode(tape, z)?;
        let kl = kl_graph(tape, lat)?;
        let ll = log_density_graph(tape, x, rec.mean, rec.logvar)?;
        let rows = tape.sub(ll, kl)?;
        Ok(tape.mean(rows))
    }

    /// Log reconstruction probability `log p(x | z) + log q(z | x)` for each
    /// normalised window in `[batch, channels, hours]`.
    pub fn lrp_batch(&self, windows: &Tensor, sampling: Sampling) -> Result<Vec<f64>> {
        if windows.data().iter().any(|v| v.abs() > 50.0) {
            log::warn!("window values exceed 50 in normalised units; is the input normalised?");
        }
        let lat = self.encode(windows)?;
        match sampling {
            Sampling::Mode => self.lrp_at(windows, &lat, &lat.mu),
            Sampling::Mc { samples, seed } => {
                if samples == 0 {
                    return Err(Error::Config("Monte-Carlo LRP needs at least one sample".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut acc = vec![0.0; windows.batch()];
                for _ in 0..samples {
                    let noise = standard_normal(&mut rng, lat.mu.shape());
                    let z = reparameterize(&lat, &noise)?;
                    for (a, v) in acc.iter_mut().zip(self.lrp_at(windows, &lat, &z)?) {
                        *a += v;
                    }
                }
                Ok(acc.into_iter().map(|a| a / samples as f64).collect())
            }
        }
    }

    fn lrp_at(&self, windows: &Tensor, lat: &GaussianLatent, z: &Tensor) -> Result<Vec<f64>> {
        let rec = self.decode(z)?;
        let recon = gaussian_log_density(windows, &rec.mean, &rec.logvar)?;
        let latent = gaussian_log_density(z, &lat.mu, &lat.logvar)?;
        Ok(recon.into_iter().zip(latent).map(|(a, b)| a + b).collect())
    }

    /// LRP of one normalised window `[1, channels, hours]`.
    pub fn lrp(&self, window: &Tensor, sampling: Sampling) -> Result<f64> {
        if window.shape().first() != Some(&1) {
            return Err(Error::shape("lrp", format!("expected one window, got {:?}", window.shape())));
        }
        Ok(self.lrp_batch(window, sampling)?[0])
    }
}

pub fn standard_normal(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("noise shape")
}
