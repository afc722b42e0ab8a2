//! Autoencoder reduction of high-dimensional states.
//!
//! States are encoded once by a frozen encoder `E`, and derivatives are
//! carried over with the encoder Jacobian, `ż = J_E(x)·ẋ`. Models are then
//! trained and rolled out in latent space and decoded back with `D`.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    adam_step, init_params, input_jacobian, mlp_eval, mlp_eval_batch, mlp_forward_batch,
    AdamState, Checkpoint, MlpParams, MlpSpec,
};
use crate::exec::Exec;
use crate::linalg::Matrix;
use crate::rng::{derive_rng, derive_seed};
use crate::systems::{Dataset, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: MlpParams,
    decoder: MlpParams,
}

impl Autoencoder {
    pub fn new(encoder: MlpParams, decoder: MlpParams) -> Result<Self> {
        let (e, d) = (encoder.spec(), decoder.spec());
        if e.output_dim() != d.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "decoder input (latent dimension)",
                expected: e.output_dim(),
                got: d.input_dim(),
            });
        }
        if d.output_dim() != e.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "decoder output",
                expected: e.input_dim(),
                got: d.output_dim(),
            });
        }
        Ok(Autoencoder { encoder, decoder })
    }

    /// Mirror-image encoder and decoder, freshly initialised.
    pub fn init(state_dim: usize, hidden: &[usize], latent_dim: usize, seed: u64) -> Result<Self> {
        let enc = MlpSpec::with_hidden(state_dim, hidden, latent_dim)?;
        let rev: Vec<usize> = hidden.iter().rev().copied().collect();
        let dec = MlpSpec::with_hidden(latent_dim, &rev, state_dim)?;
        Autoencoder::new(
            init_params(&enc, derive_seed(seed, "encoder-init", 0)),
            init_params(&dec, derive_seed(seed, "decoder-init", 0)),
        )
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub fn state_dim(&self) -> usize {
        self.encoder.spec().input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.spec().output_dim()
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_eval(&self.encoder, x)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        mlp_eval(&self.decoder, z)
    }

    /// `(E(x), J_E(x)·ẋ)`.
    pub fn lift(&self, x: &[f64], xdot: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if xdot.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "lifted derivative",
                expected: self.state_dim(),
                got: xdot.len(),
            });
        }
        let z = self.encode(x)?;
        let zdot = input_jacobian(&self.encoder, x)?.mul_vec(xdot)?;
        Ok((z, zdot))
    }

    /// Mean over states and coordinates of `(D(E(x)) − x)²`.
    pub fn reconstruction_mse(&self, states: &Matrix) -> Result<f64> {
        let z = mlp_eval_batch(&self.encoder, states.clone())?;
        let xr = mlp_eval_batch(&self.decoder, z)?;
        let sum: f64 = xr
            .as_slice()
            .iter()
            .zip(states.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        Ok(sum / states.as_slice().len() as f64)
    }

    /// Writes `encoder.json` and `decoder.json` into `dir`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<()> {
        Checkpoint::new(&self.encoder, seed)
            .with_meta("role", "encoder")
            .save(&dir.join("encoder.json"))?;
        Checkpoint::new(&self.decoder, seed)
            .with_meta("role", "decoder")
            .save(&dir.join("decoder.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<MlpParams> {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingArtifact {
                    path,
                    what: "autoencoder checkpoint".into(),
                });
            }
            Checkpoint::load(&path)?.to_params()
        };
        Autoencoder::new(load("encoder.json")?, load("decoder.json")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderTraining {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for AutoencoderTraining {
    fn default() -> Self {
        AutoencoderTraining {
            hidden: vec![32, 16],
            latent_dim: 9,
            epochs: 1000,
            batch_size: 100,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAutoencoder {
    pub ae: Autoencoder,
    /// Mean minibatch reconstruction MSE per epoch.
    pub history: Vec<f64>,
}

/// Minimises the reconstruction MSE over every state in the dataset.
pub fn train_autoencoder(
    dataset: &Dataset,
    cfg: &AutoencoderTraining,
    seed: u64,
) -> Result<TrainedAutoencoder> {
    if dataset.n_pairs() == 0 {
        return Err(Error::InvalidInput("autoencoder dataset has no states".into()));
    }
    if cfg.batch_size == 0 || cfg.latent_dim == 0 {
        return Err(Error::InvalidConfig(
            "autoencoder batch_size and latent_dim must be positive".into(),
        ));
    }
    let init = Autoencoder::init(dataset.dim, &cfg.hidden, cfg.latent_dim, seed)?;
    let (mut enc, mut dec) = (init.encoder, init.decoder);
    let states: Vec<&[f64]> = dataset.pairs().map(|(x, _)| x).collect();
    let all = Matrix::from_rows(&states)?;
    let n = dataset.dim;

    let mut adam_e = AdamState::new(enc.len());
    let mut adam_d = AdamState::new(dec.len());
    let mut rng = derive_rng(seed, "autoencoder-shuffle", 0);
    let mut order: Vec<usize> = (0..states.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(idx.len() * n);
            for &i in idx {
                data.extend_from_slice(all.row(i));
            }
            let bx = Matrix::from_vec(idx.len(), n, data)?;
            let ge = mlp_forward_batch(&enc, bx.clone())?;
            let gd = mlp_forward_batch(&dec, ge.output().clone())?;
            let scale = 1.0 / (idx.len() * n) as f64;
            let mut seed_m = Matrix::zeros(idx.len(), n);
            let mut loss = 0.0;
            for ((s, p), t) in seed_m
                .as_mut_slice()
                .iter_mut()
                .zip(gd.output().as_slice())
                .zip(bx.as_slice())
            {
                let r = p - t;
                loss += r * r;
                *s = 2.0 * r * scale;
            }
            let dgrad = gd.backward(&seed_m)?;
            let egrad = ge.backward(&dgrad.inputs)?;
            adam_step(&mut dec, &dgrad.params, &mut adam_d, cfg.lr)?;
            adam_step(&mut enc, &egrad.params, &mut adam_e, cfg.lr)?;
            epoch_loss += loss * scale;
            batches += 1;
        }
        history.push(epoch_loss / batches as f64);
    }
    Ok(TrainedAutoencoder {
        ae: Autoencoder::new(enc, dec)?,
        history,
    })
}

/// Lifts every `(x, ẋ)` pair of a dataset into latent coordinates.
pub fn lift_dataset(ae: &Autoencoder, dataset: &Dataset, exec: Exec) -> Result<Dataset> {
    if dataset.dim != ae.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "dataset state dimension for lifting",
            expected: ae.state_dim(),
            got: dataset.dim,
        });
    }
    let trajectories = exec.try_map_range(dataset.trajectories.len(), |i| {
        let t = &dataset.trajectories[i];
        let (states, derivs) = lift_batch(ae, &t.states, &t.derivs)?;
        Ok::<_, Error>(Trajectory {
            traj_id: t.traj_id,
            times: t.times.clone(),
            states,
            derivs,
        })
    })?;
    Dataset::new(&dataset.system, dataset.seed, dataset.noise_std, trajectories)
}

/// Batched [`Autoencoder::lift`] sharing one tape across the states.
pub fn lift_batch(
    ae: &Autoencoder,
    xs: &[Vec<f64>],
    xdots: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if xs.len() != xdots.len() {
        return Err(Error::DimensionMismatch {
            context: "lifted derivative count",
            expected: xs.len(),
            got: xdots.len(),
        });
    }
    if xs.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let graph = mlp_forward_batch(&ae.encoder, Matrix::from_rows(xs)?)?;
    let jacs = crate::autodiff::jacobian_from_graph(&graph)?;
    let z: Vec<Vec<f64>> = graph.output().iter_rows().map(<[f64]>::to_vec).collect();
    let zdot = jacs
        .iter()
        .zip(xdots)
        .map(|(j, xd)| j.mul_vec(xd))
        .collect::<Result<Vec<_>>>()?;
    Ok((z, zdot))
}
