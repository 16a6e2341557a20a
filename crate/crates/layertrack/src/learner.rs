//! From-scratch multilayer perceptron for the tracking penalty. The network
//! phi maps a flattened (initial state, reference) vector to a scalar; the
//! penalty is exp(phi), trained by regressing phi onto log tracking costs
//! with mini-batch SGD and classical momentum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::TrainingSample;
use crate::dynamics::SystemTag;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Labels are clamped to this floor before taking logarithms; perfect
/// tracking produces zero-cost samples.
pub const LABEL_FLOOR: f64 = 1e-8;

/// Training aborts when the epoch loss exceeds this or becomes non-finite.
const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub system: SystemTag,
    /// Tracking weight the labels were computed with.
    pub rho: f64,
    /// Layer widths: input, hidden..., 1.
    pub dims: Vec<usize>,
    /// One matrix per layer, shaped (out x in).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    /// Per-feature z-score normalization, estimated on the training split.
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    /// Fingerprint of the controller gains the training rollouts used.
    pub gains_hash: String,
}

/// Per-parameter gradients, mirroring the model's weight/bias shapes.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dims: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of samples held out for validation (split by record, seeded).
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![128, 64],
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            epochs: 500,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.learning_rate <= 0.0
            || !(0.0..1.0).contains(&self.momentum)
            || self.epochs == 0
            || !(0.0..1.0).contains(&self.val_fraction)
        {
            return Err(Error::InvalidConfig {
                message: "training config needs batch >= 1, lr > 0, momentum in [0,1), \
                          epochs >= 1, val fraction in [0,1)"
                    .into(),
            });
        }
        Ok(())
    }
}

/// Result of a training run: the model plus the loss history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Held-out loss per epoch (mirrors the training loss when the split is
    /// empty).
    pub val_losses: Vec<f64>,
    /// Final held-out loss.
    pub val_loss: f64,
}

/// Soft progress check: whether the moving average of the loss over the
/// given window decreased from the first window to the last. Reported, not
/// asserted — noisy mini-batch descent may plateau legitimately.
pub fn moving_average_decreased(losses: &[f64], window: usize) -> bool {
    if losses.len() < 2 * window || window == 0 {
        return losses.last() <= losses.first();
    }
    let head: f64 = losses[..window].iter().sum::<f64>() / window as f64;
    let tail: f64 = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
    tail < head
}

fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

fn elu_prime(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

/// Classical momentum update: v <- m v - lr g; theta <- theta + v.
pub fn momentum_update(theta: &mut f64, velocity: &mut f64, grad: f64, lr: f64, m: f64) {
    *velocity = m * *velocity - lr * grad;
    *theta += *velocity;
}

impl MlpModel {
    /// Layer widths [input, hidden..., 1] from an input size and hidden dims.
    fn layer_dims(input_dim: usize, hidden: &[usize]) -> Vec<usize> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(1);
        dims
    }

    /// Uniform initialization in +-sqrt(6 / (fan_in + fan_out)) per layer,
    /// zero biases, identity normalization.
    pub fn init(
        system: SystemTag,
        rho: f64,
        input_dim: usize,
        hidden: &[usize],
        gains_hash: &str,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let dims = Self::layer_dims(input_dim, hidden);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut w = DMatrix::zeros(fan_out, fan_in);
            for i in 0..fan_out {
                for j in 0..fan_in {
                    w[(i, j)] = rng.random_range(-limit..limit);
                }
            }
            weights.push(w);
            biases.push(DVector::zeros(fan_out));
        }
        Self {
            system,
            rho,
            dims,
            weights,
            biases,
            mean: DVector::zeros(input_dim),
            std: DVector::from_element(input_dim, 1.0),
            gains_hash: gains_hash.to_string(),
        }
    }

    /// All-zero parameters (useful as a neutral penalty: phi = 0, penalty 1).
    pub fn zeroed(
        system: SystemTag,
        rho: f64,
        input_dim: usize,
        hidden: &[usize],
        gains_hash: &str,
    ) -> Self {
        let dims = Self::layer_dims(input_dim, hidden);
        let weights = (0..dims.len() - 1)
            .map(|l| DMatrix::zeros(dims[l + 1], dims[l]))
            .collect();
        let biases = (0..dims.len() - 1).map(|l| DVector::zeros(dims[l + 1])).collect();
        Self {
            system,
            rho,
            dims,
            weights,
            biases,
            mean: DVector::zeros(input_dim),
            std: DVector::from_element(input_dim, 1.0),
            gains_hash: gains_hash.to_string(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    fn check_input(&self, mu: &DVector<f64>) -> Result<()> {
        if mu.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: mu.len(),
            });
        }
        Ok(())
    }

    fn normalize(&self, mu: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(mu.len(), |i, _| (mu[i] - self.mean[i]) / self.std[i])
    }

    /// Batched forward pass on normalized inputs (columns = samples).
    /// Returns the pre-activations per layer; the last has 1 row of phi
    /// values.
    fn forward_batch(&self, a0: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let n_layers = self.weights.len();
        let mut zs = Vec::with_capacity(n_layers);
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(a0.clone());
        for l in 0..n_layers {
            let mut z = &self.weights[l] * &activations[l];
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            if l + 1 < n_layers {
                let a = z.map(elu);
                zs.push(z);
                activations.push(a);
            } else {
                activations.push(z.clone());
                zs.push(z);
            }
        }
        (zs, activations)
    }

    /// phi(mu): normalization, ELU hidden layers, linear scalar output.
    pub fn forward(&self, mu: &DVector<f64>) -> Result<f64> {
        self.check_input(mu)?;
        let a0 = DMatrix::from_columns(&[self.normalize(mu)]);
        let (zs, _) = self.forward_batch(&a0);
        Ok(zs[zs.len() - 1][(0, 0)])
    }

    /// The tracking penalty exp(phi); strictly positive by construction.
    pub fn penalty(&self, mu: &DVector<f64>) -> Result<f64> {
        Ok(self.forward(mu)?.exp())
    }

    /// Mean squared error between phi and log(clamped labels) over the batch
    /// plus parameter gradients by reverse-mode accumulation.
    pub fn loss_and_grads(&self, batch: &[TrainingSample]) -> Result<(f64, ParamGrads)> {
        if batch.is_empty() {
            return Err(Error::InvalidConfig {
                message: "empty training batch".into(),
            });
        }
        for s in batch {
            self.check_input(&s.mu)?;
        }
        let cols: Vec<DVector<f64>> = batch.iter().map(|s| self.normalize(&s.mu)).collect();
        let a0 = DMatrix::from_columns(&cols);
        let targets =
            DVector::from_iterator(batch.len(), batch.iter().map(|s| s.y.max(LABEL_FLOOR).ln()));
        Ok(self.loss_grads_normalized(&a0, &targets))
    }

    /// Forward-only loss on pre-normalized inputs.
    fn loss_normalized(&self, a0: &DMatrix<f64>, targets: &DVector<f64>) -> f64 {
        let (zs, _) = self.forward_batch(a0);
        let phi = &zs[zs.len() - 1];
        let mut loss = 0.0;
        for i in 0..a0.ncols() {
            let r = phi[(0, i)] - targets[i];
            loss += r * r;
        }
        loss / a0.ncols() as f64
    }

    /// Core backward pass on pre-normalized inputs.
    fn loss_grads_normalized(
        &self,
        a0: &DMatrix<f64>,
        targets: &DVector<f64>,
    ) -> (f64, ParamGrads) {
        let n = a0.ncols() as f64;
        let n_layers = self.weights.len();
        let (zs, activations) = self.forward_batch(a0);

        let phi = &zs[n_layers - 1];
        let mut residual = DMatrix::zeros(1, a0.ncols());
        let mut loss = 0.0;
        for i in 0..a0.ncols() {
            let r = phi[(0, i)] - targets[i];
            loss += r * r;
            residual[(0, i)] = 2.0 * r / n;
        }
        loss /= n;

        let mut grad_w = Vec::with_capacity(n_layers);
        let mut grad_b = Vec::with_capacity(n_layers);
        let mut delta = residual;
        for l in (0..n_layers).rev() {
            grad_w.push(&delta * activations[l].transpose());
            let mut gb = DVector::zeros(delta.nrows());
            for i in 0..delta.nrows() {
                gb[i] = delta.row(i).sum();
            }
            grad_b.push(gb);
            if l > 0 {
                let back = self.weights[l].transpose() * &delta;
                delta = back.zip_map(&zs[l - 1], |g, z| g * elu_prime(z));
            }
        }
        grad_w.reverse();
        grad_b.reverse();
        (
            loss,
            ParamGrads {
                weights: grad_w,
                biases: grad_b,
            },
        )
    }

    /// Gradient of the penalty exp(phi) with respect to the raw
    /// (un-normalized) input, chained through the z-score normalization.
    pub fn input_gradient(&self, mu: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(mu)?;
        let a0 = DMatrix::from_columns(&[self.normalize(mu)]);
        let n_layers = self.weights.len();
        let (zs, _activations) = self.forward_batch(&a0);
        let phi = zs[n_layers - 1][(0, 0)];

        // d phi / d z_normalized by backward propagation of a unit seed.
        let mut delta = DMatrix::from_element(1, 1, 1.0);
        for l in (1..n_layers).rev() {
            let back = self.weights[l].transpose() * &delta;
            delta = back.zip_map(&zs[l - 1], |g, z| g * elu_prime(z));
        }
        let d_norm = self.weights[0].transpose() * delta;
        let scale = phi.exp();
        Ok(DVector::from_fn(mu.len(), |i, _| {
            scale * d_norm[(i, 0)] / self.std[i]
        }))
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            system: self.system,
            rho: self.rho,
            dims: self.dims.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| {
                    let mut flat = Vec::with_capacity(w.nrows() * w.ncols());
                    for i in 0..w.nrows() {
                        for j in 0..w.ncols() {
                            flat.push(w[(i, j)]);
                        }
                    }
                    flat
                })
                .collect(),
            biases: self.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
            mean: self.mean.as_slice().to_vec(),
            std: self.std.as_slice().to_vec(),
            gains_hash: self.gains_hash.clone(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                message: format!(
                    "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                    ckpt.version
                ),
            });
        }
        if ckpt.dims.len() < 2 || *ckpt.dims.last().unwrap() != 1 {
            return Err(Error::Format {
                message: "checkpoint dims must end in a scalar output layer".into(),
            });
        }
        let n_layers = ckpt.dims.len() - 1;
        if ckpt.weights.len() != n_layers || ckpt.biases.len() != n_layers {
            return Err(Error::Format {
                message: "checkpoint layer count mismatch".into(),
            });
        }
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (out, inp) = (ckpt.dims[l + 1], ckpt.dims[l]);
            if ckpt.weights[l].len() != out * inp || ckpt.biases[l].len() != out {
                return Err(Error::Format {
                    message: format!("checkpoint layer {l} has wrong parameter counts"),
                });
            }
            weights.push(DMatrix::from_row_slice(out, inp, &ckpt.weights[l]));
            biases.push(DVector::from_row_slice(&ckpt.biases[l]));
        }
        let input_dim = ckpt.dims[0];
        if ckpt.mean.len() != input_dim
            || ckpt.std.len() != input_dim
            || ckpt.std.iter().any(|s| *s <= 0.0)
        {
            return Err(Error::Format {
                message: "checkpoint normalization vectors invalid".into(),
            });
        }
        Ok(Self {
            system: ckpt.system,
            rho: ckpt.rho,
            dims: ckpt.dims,
            weights,
            biases,
            mean: DVector::from_row_slice(&ckpt.mean),
            std: DVector::from_row_slice(&ckpt.std),
            gains_hash: ckpt.gains_hash,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    system: SystemTag,
    rho: f64,
    dims: Vec<usize>,
    /// Row-major (output x input) per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
    gains_hash: String,
}

/// Per-feature mean and standard deviation; near-constant features get unit
/// scale so that centering alone handles them.
fn normalization_stats(samples: &[&TrainingSample]) -> (DVector<f64>, DVector<f64>) {
    let dim = samples[0].mu.len();
    let n = samples.len() as f64;
    let mut mean = DVector::zeros(dim);
    for s in samples {
        mean += &s.mu;
    }
    mean /= n;
    let mut var = DVector::zeros(dim);
    for s in samples {
        let d = &s.mu - &mean;
        var += d.component_mul(&d);
    }
    var /= n;
    let std = DVector::from_fn(dim, |i, _| {
        let s = var[i].sqrt();
        if s < 1e-6 {
            1.0
        } else {
            s.max(1e-8)
        }
    });
    (mean, std)
}

/// Train a penalty network on labeled samples. Deterministic given the seed:
/// the split, initialization, and batch order all derive from one stream.
pub fn train(
    samples: &[TrainingSample],
    system: SystemTag,
    rho: f64,
    gains_hash: &str,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig {
            message: "training requires at least one sample".into(),
        });
    }
    let input_dim = samples[0].mu.len();
    for s in samples {
        if s.mu.len() != input_dim {
            return Err(Error::DimensionMismatch {
                context: "training sample input",
                expected: input_dim,
                got: s.mu.len(),
            });
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    // Seeded validation split by sample index.
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((samples.len() as f64) * config.val_fraction).round() as usize;
    let n_val = n_val.min(samples.len().saturating_sub(1));
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<&TrainingSample> = train_idx.iter().map(|&i| &samples[i]).collect();
    let val_set: Vec<&TrainingSample> = val_idx.iter().map(|&i| &samples[i]).collect();

    let (mean, std) = normalization_stats(&train_set);
    let mut model = MlpModel::init(system, rho, input_dim, &config.hidden_dims, gains_hash, &mut rng);
    model.mean = mean;
    model.std = std;

    // Pre-normalize once; normalization is frozen for the whole run.
    let cols: Vec<DVector<f64>> = train_set.iter().map(|s| model.normalize(&s.mu)).collect();
    let x_train = DMatrix::from_columns(&cols);
    let t_train = DVector::from_iterator(
        train_set.len(),
        train_set.iter().map(|s| s.y.max(LABEL_FLOOR).ln()),
    );

    let mut vel_w: Vec<DMatrix<f64>> = model
        .weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();
    let mut vel_b: Vec<DVector<f64>> = model.biases.iter().map(|b| DVector::zeros(b.len())).collect();

    let val_data = if val_set.is_empty() {
        None
    } else {
        let cols: Vec<DVector<f64>> = val_set.iter().map(|s| model.normalize(&s.mu)).collect();
        let targets = DVector::from_iterator(
            val_set.len(),
            val_set.iter().map(|s| s.y.max(LABEL_FLOOR).ln()),
        );
        Some((DMatrix::from_columns(&cols), targets))
    };

    let n_train = train_set.len();
    let mut perm: Vec<usize> = (0..n_train).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut val_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let mut sq_sum = 0.0;
        for chunk in perm.chunks(config.batch_size) {
            let batch_cols: Vec<_> = chunk.iter().map(|&i| x_train.column(i).into_owned()).collect();
            let a0 = DMatrix::from_columns(&batch_cols);
            let targets = DVector::from_iterator(chunk.len(), chunk.iter().map(|&i| t_train[i]));
            let (batch_loss, grads) = model.loss_grads_normalized(&a0, &targets);
            sq_sum += batch_loss * chunk.len() as f64;

            for l in 0..model.weights.len() {
                for (theta, (v, g)) in model.weights[l]
                    .iter_mut()
                    .zip(vel_w[l].iter_mut().zip(grads.weights[l].iter()))
                {
                    momentum_update(theta, v, *g, config.learning_rate, config.momentum);
                }
                for (theta, (v, g)) in model.biases[l]
                    .iter_mut()
                    .zip(vel_b[l].iter_mut().zip(grads.biases[l].iter()))
                {
                    momentum_update(theta, v, *g, config.learning_rate, config.momentum);
                }
            }
        }
        let epoch_loss = sq_sum / n_train as f64;
        if !epoch_loss.is_finite() || epoch_loss > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                epoch,
                loss: epoch_loss,
            });
        }
        epoch_losses.push(epoch_loss);
        val_losses.push(match &val_data {
            Some((a0, targets)) => model.loss_normalized(a0, targets),
            None => epoch_loss,
        });
    }

    let val_loss = *val_losses.last().unwrap();
    Ok(TrainOutcome {
        model,
        epoch_losses,
        val_losses,
        val_loss,
    })
}
