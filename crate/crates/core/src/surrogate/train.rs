use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use super::encoding::Encoding;
use super::mlp::{Gradients, Mlp};
use super::model::{SurrogateModel, TrainingMeta};
use super::SurrogateError;
use crate::scenario::{Dataset, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Wall-clock cap; reaching it makes the result timing-dependent.
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![300, 300, 300],
            lr: 1e-3,
            lr_decay: 0.93,
            batch: 64,
            epochs: 60,
            patience: 10,
            seed: 0,
            max_seconds: None,
        }
    }
}

struct Adam {
    lr: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Adam {
        Adam {
            lr,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, net: &mut Mlp, g: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let step = self.lr * c2.sqrt() / c1;
        for (((p, g), m), v) in net.params_mut().zip(g.iter()).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= step * *m / (v.sqrt() + Self::EPS * c2.sqrt());
        }
    }
}

fn mse(net: &Mlp, x: &[f64], y: &[f64], n_in: usize, n_out: usize) -> f64 {
    let rows = x.len() / n_in;
    let mut total = 0.0;
    for start in (0..rows).step_by(4096) {
        let end = (start + 4096).min(rows);
        let out = net.forward(&x[start * n_in..end * n_in], end - start);
        total += out
            .iter()
            .zip(&y[start * n_out..end * n_out])
            .map(|(o, t)| (o - t) * (o - t))
            .sum::<f64>();
    }
    total / (rows * n_out) as f64
}

/// Mini-batch Adam on the mean squared error of normalized targets, with
/// early stopping on the validation split. Returns the parameters with
/// the lowest validation loss.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<SurrogateModel, SurrogateError> {
    for split in [Split::Train, Split::Valid, Split::Test] {
        if dataset.count(split) == 0 {
            return Err(SurrogateError::EmptySplit(split));
        }
    }
    if config.batch == 0 || !(config.lr > 0.0) || !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
        return Err(SurrogateError::Format("batch and lr must be positive, lr_decay in (0, 1]".into()));
    }
    let started = Instant::now();
    let encoding = Encoding::fit(dataset)?;
    let (n_in, n_out) = (encoding.n_inputs(), encoding.n_outputs());
    let (xt, yt) = encoding.matrices(dataset.split(Split::Train));
    let (xv, yv) = encoding.matrices(dataset.split(Split::Valid));
    let n_train = xt.len() / n_in;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sizes = vec![n_in];
    sizes.extend(&config.hidden);
    sizes.push(n_out);
    let mut net = Mlp::new(&sizes, &mut rng);
    let mut adam = Adam::new(net.n_params(), config.lr);
    let mut best = (mse(&net, &xv, &yv, n_in, n_out), net.clone(), 0);
    let mut curve = Vec::new();
    let mut lowered = false;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut xb = Vec::with_capacity(config.batch * n_in);
    let mut yb = Vec::with_capacity(config.batch * n_out);

    let mut epoch = 0;
    while epoch < config.epochs {
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        let mut finite = true;
        for batch in order.chunks(config.batch) {
            xb.clear();
            yb.clear();
            for &i in batch {
                xb.extend_from_slice(&xt[i * n_in..(i + 1) * n_in]);
                yb.extend_from_slice(&yt[i * n_out..(i + 1) * n_out]);
            }
            let (loss, grads) = net.mse_loss(&xb, &yb, batch.len());
            if !loss.is_finite() {
                finite = false;
                break;
            }
            train_loss += loss * batch.len() as f64;
            adam.step(&mut net, &grads);
        }
        let valid_loss = if finite { mse(&net, &xv, &yv, n_in, n_out) } else { f64::NAN };
        if !valid_loss.is_finite() {
            if lowered {
                return Err(SurrogateError::NonFiniteLoss { epoch });
            }
            lowered = true;
            warn!(epoch, "non-finite loss, restarting from the best parameters with lr / 10");
            net = best.1.clone();
            adam = Adam::new(net.n_params(), adam.lr * 0.1);
            continue;
        }
        train_loss /= n_train as f64;
        curve.push((train_loss, valid_loss));
        debug!(epoch, train_loss, valid_loss, "epoch");
        epoch += 1;
        adam.lr *= config.lr_decay;
        if valid_loss < best.0 {
            best = (valid_loss, net.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
        if config
            .max_seconds
            .is_some_and(|s| started.elapsed().as_secs_f64() > s)
        {
            warn!(epoch, "training time budget reached");
            break;
        }
    }
    info!(epochs = epoch, best_epoch = best.2, valid_loss = best.0, "training done");
    let meta = TrainingMeta {
        seed: config.seed,
        epochs: epoch,
        best_epoch: best.2,
        lr: adam.lr,
        batch: config.batch,
        loss_curve: curve,
        seconds: started.elapsed().as_secs_f64(),
    };
    SurrogateModel::new(best.1, encoding, meta)
}
