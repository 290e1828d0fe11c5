#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scadavae::dataio::ChannelStats;
use scadavae::diffcore::{finite_diff_check, Activation, FiniteDiffReport, BnMode, ParamStore, RunningStats, Tape, Tensor, Var};
use scadavae::vae::{standard_normal, ConvSpec, Mode, VaeConfig, VaeModel};
use scadavae::Result;

use scadavae::diffcore::kernels::ConvDims;

pub const FD_STEP: f64 = 1e-5;

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// `sum(y ⊙ r)` with a fixed random `r`, so every output contributes differently.
fn weighted_sum(tape: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.input(r.clone());
    let p = tape.mul(y, rv)?;
    Ok(tape.sum(p))
}

fn check(store: &mut ParamStore, build: impl FnMut(&mut Tape, &ParamStore) -> Result<Var>) -> f64 {
    finite_diff_check(store, FD_STEP, build).unwrap().max_rel_error
}

/// Worst finite-difference relative error of each layer type at one random point.
pub fn layer_fd_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&mut rng, &[3, 4], -1.0, 1.0));
    let w = s.add("w", uniform(&mut rng, &[4, 5], -1.0, 1.0));
    let b = s.add("b", uniform(&mut rng, &[5], -1.0, 1.0));
    let r = uniform(&mut rng, &[3, 5], -1.0, 1.0);
    out.push((
        "dense",
        check(&mut s, |t, p| {
            let (xv, wv, bv) = (t.param(p, x), t.param(p, w), t.param(p, b));
            let y = t.dense(xv, wv, Some(bv))?;
            weighted_sum(t, y, &r)
        }),
    ));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&mut rng, &[2, 3, 6], -1.0, 1.0));
    let k = s.add("k", uniform(&mut rng, &[4, 3, 3], -1.0, 1.0));
    let b = s.add("b", uniform(&mut rng, &[4], -1.0, 1.0));
    let r = uniform(&mut rng, &[2, 4, 6], -1.0, 1.0);
    out.push((
        "conv1d",
        check(&mut s, |t, p| {
            let (xv, kv, bv) = (t.param(p, x), t.param(p, k), t.param(p, b));
            let y = t.conv1d(xv, kv, Some(bv))?;
            weighted_sum(t, y, &r)
        }),
    ));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&mut rng, &[2, 3, 8], -1.0, 1.0));
    let r = uniform(&mut rng, &[2, 3, 4], -1.0, 1.0);
    out.push((
        "maxpool1d",
        check(&mut s, |t, p| {
            let xv = t.param(p, x);
            let y = t.maxpool1d(xv, 2)?;
            weighted_sum(t, y, &r)
        }),
    ));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&mut rng, &[2, 3, 4], -1.0, 1.0));
    let r = uniform(&mut rng, &[2, 3, 12], -1.0, 1.0);
    out.push((
        "upscale1d",
        check(&mut s, |t, p| {
            let xv = t.param(p, x);
            let y = t.upscale1d(xv, 3)?;
            weighted_sum(t, y, &r)
        }),
    ));

    for (name, shape) in [("batchnorm[B,F]", vec![5, 4]), ("batchnorm[B,C,L]", vec![3, 2, 4])] {
        let c = shape[1];
        let mut s = ParamStore::new();
        let x = s.add("x", uniform(&mut rng, &shape, -2.0, 2.0));
        let g = s.add("gamma", uniform(&mut rng, &[c], 0.5, 1.5));
        let be = s.add("beta", uniform(&mut rng, &[c], -0.5, 0.5));
        let r = uniform(&mut rng, &shape, -1.0, 1.0);
        out.push((
            name,
            check(&mut s, |t, p| {
                let mut running = RunningStats::new(c);
                let (xv, gv, bv) = (t.param(p, x), t.param(p, g), t.param(p, be));
                let y = t.batchnorm(xv, gv, bv, BnMode::Train(&mut running))?;
                weighted_sum(t, y, &r)
            }),
        ));
        let running = RunningStats {
            mean: (0..c).map(|i| 0.1 * i as f64).collect(),
            var: (0..c).map(|i| 0.5 + i as f64).collect(),
        };
        out.push((
            "batchnorm(infer)",
            check(&mut s, |t, p| {
                let (xv, gv, bv) = (t.param(p, x), t.param(p, g), t.param(p, be));
                let y = t.batchnorm(xv, gv, bv, BnMode::Infer(&running))?;
                weighted_sum(t, y, &r)
            }),
        ));
    }

    for (name, kind) in [
        ("relu", Activation::Relu),
        ("tanh", Activation::Tanh),
        ("identity", Activation::Identity),
    ] {
        let mut s = ParamStore::new();
        let x = s.add("x", uniform(&mut rng, &[3, 5], -1.0, 1.0));
        let r = uniform(&mut rng, &[3, 5], -1.0, 1.0);
        out.push((
            name,
            check(&mut s, |t, p| {
                let xv = t.param(p, x);
                let y = t.activation(xv, kind);
                weighted_sum(t, y, &r)
            }),
        ));
    }

    let mut s = ParamStore::new();
    let a = s.add("a", uniform(&mut rng, &[2, 3], -1.0, 1.0));
    let c = s.add("c", uniform(&mut rng, &[2, 3], -1.0, 1.0));
    let lv = s.add("lv", uniform(&mut rng, &[3], -1.0, 1.0));
    out.push((
        "elementwise",
        check(&mut s, |t, p| {
            let (av, cv, lvv) = (t.param(p, a), t.param(p, c), t.param(p, lv));
            let m = t.mul(av, cv)?;
            let e = t.exp(m);
            let d = t.sub(e, av)?;
            let sh = t.add_scalar(d, 0.3);
            let sc = t.scale(sh, -1.7);
            let sum = t.add(sc, cv)?;
            let rows = t.row_sum(sum);
            let flat = t.reshape(av, &[1, 6])?;
            let flat = t.sum(flat);
            let bc = t.broadcast_channels(lvv, 2, 2)?;
            let bc = t.exp(bc);
            let bc = t.sum(bc);
            let total = t.sum(rows);
            let total = t.add(total, flat)?;
            let total = t.add(total, bc)?;
            Ok(t.mean(total))
        }),
    ));
    out
}

pub fn small_vae_config(seed: u64) -> VaeConfig {
    VaeConfig {
        channels: 3,
        window_hours: 8,
        conv_specs: vec![
            ConvSpec {
                filter_size: 3,
                num_filters: 4,
            },
            ConvSpec {
                filter_size: 3,
                num_filters: 4,
            },
        ],
        pool_size: 2,
        dense_units: vec![5],
        latent_dim: 2,
        seed,
    }
}

/// Finite-difference error of the negative batch ELBO of a small model with
/// frozen noise, in train mode.
pub fn elbo_fd_report(seed: u64) -> FiniteDiffReport {
    let cfg = small_vae_config(seed);
    let names = (0..cfg.channels).map(|i| format!("c{i}")).collect();
    let base = VaeModel::new(cfg.clone(), names, ChannelStats::identity(cfg.channels)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe1b0);
    let x = standard_normal(&mut rng, &[4, cfg.channels, cfg.window_hours]);
    let noise = standard_normal(&mut rng, &[4, cfg.latent_dim]);
    let mut store = base.params().clone();
    finite_diff_check(&mut store, FD_STEP, |tape, params| {
        let mut m = base.clone();
        *m.params_mut() = params.clone();
        let e = m.elbo(tape, &x, &noise, Mode::Train)?;
        Ok(tape.scale(e, -1.0))
    })
    .unwrap()
}

pub fn naive_dense(x: &[f64], w: &[f64], b: &[f64], batch: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..batch {
        for o in 0..n_out {
            let mut acc = 0.0;
            for i in 0..n_in {
                acc += x[r * n_in + i] * w[i * n_out + o];
            }
            out.push(acc + b[o]);
        }
    }
    out
}

pub fn naive_conv(x: &[f64], k: &[f64], b: &[f64], d: ConvDims) -> Vec<f64> {
    let pad = (d.filter / 2) as isize;
    let mut out = Vec::new();
    for r in 0..d.batch {
        for o in 0..d.c_out {
            for pos in 0..d.len as isize {
                let mut acc = 0.0;
                for c in 0..d.c_in {
                    for tap in 0..d.filter {
                        let src = pos + tap as isize - pad;
                        if src < 0 || src >= d.len as isize {
                            continue;
                        }
                        acc += k[(o * d.c_in + c) * d.filter + tap] * x[(r * d.c_in + c) * d.len + src as usize];
                    }
                }
                out.push(acc + b[o]);
            }
        }
    }
    out
}

pub fn naive_pool(x: &[f64], len: usize, pool: usize) -> Vec<f64> {
    x.chunks(len)
        .flat_map(|row| row.chunks(pool).map(|b| b.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
        .collect()
}
