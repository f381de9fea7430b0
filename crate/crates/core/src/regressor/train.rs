use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::NetworkConfig;
use super::network::{Network, ParameterSet};
use super::Scalar;
use crate::beam_quality::{prediction_error, M2Method, M2Result};
use crate::case::ModeCase;
use crate::dataset::{training_target, unscale_label, Generator, SampleRecord};
use crate::error::{Error, Result};
use crate::fiber_modes::{FiberSpec, Grid};
use crate::field::{add_noise, normalize_for_input, IntensityImage};
use crate::seed::{sample_rng, NOISE_STREAM};

/// PE thresholds of the cumulative distribution, 1% to 10%.
pub const PE_THRESHOLDS: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10];

/// Step schedule: `initial` for epochs `0..decay_epoch`, `decayed` after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_epoch: u64,
    pub decayed: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 0.01,
            decay_epoch: 20,
            decayed: 0.001,
        }
    }
}

impl LrSchedule {
    pub fn rate(&self, epoch: u64) -> f64 {
        if epoch < self.decay_epoch {
            self.initial
        } else {
            self.decayed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub schedule: LrSchedule,
    /// Heavy-ball coefficient; 0 gives plain SGD.
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            schedule: LrSchedule::default(),
            momentum: 0.0,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u64,
    pub learning_rate: f64,
    pub mean_loss: f64,
    /// Mean PE on the evaluation set after the epoch.
    pub mean_pe: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub network: Network<T>,
    pub case: ModeCase,
    pub scaling_constant: f64,
    pub fiber: FiberSpec,
    pub master_seed: u64,
    /// Completed epochs.
    pub epoch: u64,
    pub sgd: SgdConfig,
    pub velocity: Option<ParameterSet<T>>,
    pub history: Vec<EpochStats>,
    /// Loss of the first training batch.
    pub initial_loss: Option<f64>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: NetworkConfig, case: ModeCase, fiber: FiberSpec, master_seed: u64, sgd: SgdConfig) -> Result<Self> {
        if sgd.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&sgd.momentum) {
            return Err(Error::InvalidInput(format!("momentum must lie in [0, 1) (got {})", sgd.momentum)));
        }
        Ok(TrainState {
            network: Network::initialized(config, master_seed)?,
            case,
            scaling_constant: case.scaling_constant(),
            fiber,
            master_seed,
            epoch: 0,
            sgd,
            velocity: None,
            history: Vec::new(),
            initial_loss: None,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.sgd.schedule.rate(self.epoch)
    }
}

/// `params ← params − lr·v` with `v ← momentum·v + grad`, the rate taken
/// from the schedule at the current epoch.
pub fn sgd_step<T: Scalar>(state: &mut TrainState<T>, grads: &ParameterSet<T>) -> Result<()> {
    if !state.network.params.same_shape(grads) {
        return Err(Error::ShapeMismatch("gradient does not match the parameters".into()));
    }
    let lr = T::from_f64(state.learning_rate());
    let params = &mut state.network.params;
    if state.sgd.momentum == 0.0 {
        params.iter_mut().zip(grads.iter()).for_each(|(p, &g)| *p -= lr * g);
    } else {
        let mu = T::from_f64(state.sgd.momentum);
        let v = state.velocity.get_or_insert_with(|| grads.zeros_like());
        v.iter_mut().zip(grads.iter()).for_each(|(v, &g)| *v = mu * *v + g);
        params.iter_mut().zip(v.iter()).for_each(|(p, &v)| *p -= lr * v);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub case: ModeCase,
    pub epochs: u64,
    pub master_seed: u64,
    pub samples_per_epoch: usize,
    pub sgd: SgdConfig,
    pub fiber: FiberSpec,
    /// Epoch loss above this multiple of the initial loss counts as a
    /// divergence strike.
    pub divergence_factor: f64,
    /// Consecutive strikes that abort training.
    pub divergence_patience: usize,
}

impl TrainOptions {
    pub fn new(case: ModeCase, epochs: u64, master_seed: u64) -> Self {
        TrainOptions {
            case,
            epochs,
            master_seed,
            samples_per_epoch: crate::dataset::SAMPLES_PER_EPOCH,
            sgd: SgdConfig::default(),
            fiber: FiberSpec::reference(),
            divergence_factor: 10.0,
            divergence_patience: 3,
        }
    }
}

fn to_input<T: Scalar>(image: &[f32]) -> Vec<T> {
    image.iter().map(|&v| T::from_f64(f64::from(v))).collect()
}

/// Trains from scratch on freshly generated samples, one seed stream per
/// epoch, and records the mean PE on `eval_set` after every epoch.
pub fn train<T: Scalar>(
    config: NetworkConfig,
    options: &TrainOptions,
    eval_set: &[SampleRecord],
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainState<T>> {
    if options.samples_per_epoch == 0 {
        return Err(Error::InvalidInput("samples per epoch must be positive".into()));
    }
    let mut state = TrainState::<T>::new(config, options.case, options.fiber, options.master_seed, options.sgd)?;
    let generator = Generator::new(&options.fiber, options.case, state.network.config().input_resolution)?;
    let c = state.scaling_constant;
    let mut strikes = 0;
    for _ in 0..options.epochs {
        let started = Instant::now();
        let epoch = state.epoch;
        let lr = state.learning_rate();
        let mut loss_sum = 0.0;
        let n = options.samples_per_epoch as u64;
        let batch = state.sgd.batch_size as u64;
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let records: Vec<SampleRecord> = (start..end)
                .into_par_iter()
                .map(|i| generator.sample(state.master_seed, epoch, i, 0.0))
                .collect::<Result<_>>()?;
            let images: Vec<Vec<T>> = records.iter().map(|r| to_input(&r.image)).collect();
            let targets: Vec<[T; 2]> = records
                .iter()
                .map(|r| training_target(r.label, c).map(|s| [T::from_f64(s[0]), T::from_f64(s[1])]))
                .collect::<Result<_>>()?;
            let (loss, grads) = state.network.backward(&images, &targets)?;
            let loss = loss.as_f64();
            state.initial_loss.get_or_insert(loss);
            sgd_step(&mut state, &grads)?;
            loss_sum += loss * (end - start) as f64;
            start = end;
        }
        let mean_loss = loss_sum / n as f64;
        let mean_pe = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate_clean(&state, eval_set)?.mean_pe)
        };
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss,
            mean_pe,
            seconds: started.elapsed().as_secs_f64(),
        };
        state.history.push(stats);
        state.epoch += 1;
        on_epoch(&stats);

        let initial = state.initial_loss.unwrap_or(f64::INFINITY);
        if !mean_loss.is_finite() || mean_loss > options.divergence_factor * initial {
            strikes += 1;
        } else {
            strikes = 0;
        }
        if strikes >= options.divergence_patience {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: mean loss {mean_loss:e} exceeded {}× the initial loss {initial:e} for {strikes} consecutive epochs",
                options.divergence_factor
            )));
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub m2: M2Result,
    /// Raw network outputs.
    pub scaled: [f64; 2],
    /// A component fell below the physical floor of 1.
    pub below_floor: bool,
    pub seconds: f64,
}

/// Predicted `(M_x², M_y²)` of one peak-normalized image.
pub fn predict_m2<T: Scalar>(state: &TrainState<T>, image: &[f32]) -> Result<Prediction> {
    let started = Instant::now();
    let out = state.network.trace(&to_input::<T>(image))?.output();
    let scaled = [out[0].as_f64(), out[1].as_f64()];
    let unscaled = unscale_label(scaled, state.scaling_constant)?;
    let m2 = M2Result::new(unscaled.m2[0], unscaled.m2[1], M2Method::Predicted)?;
    Ok(Prediction {
        m2,
        scaled,
        below_floor: unscaled.below_floor,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseEvaluation {
    pub sigma: f64,
    pub mean_pe: f64,
    /// `(threshold, percentage of samples with PE ≤ threshold)`.
    pub cdf: Vec<(f64, f64)>,
    /// Per-sample PE in test-set order.
    pub pe: Vec<f64>,
    /// Per-sample predicted effective M².
    pub predicted: Vec<f64>,
}

fn evaluate_clean<T: Scalar>(state: &TrainState<T>, test: &[SampleRecord]) -> Result<NoiseEvaluation> {
    evaluate_one(state, test, 0.0, 0)
}

fn evaluate_one<T: Scalar>(state: &TrainState<T>, test: &[SampleRecord], sigma: f64, noise_seed: u64) -> Result<NoiseEvaluation> {
    let n = state.network.config().input_resolution;
    let grid = Grid::new(n.max(32), 1.0)?;
    let rows: Vec<(f64, f64)> = test
        .par_iter()
        .map(|r| {
            let image = if sigma == 0.0 {
                r.image.clone()
            } else {
                if r.image.len() != grid.len() {
                    return Err(Error::ShapeMismatch(format!("test image has {} pixels", r.image.len())));
                }
                let clean = IntensityImage::new(grid, r.image.iter().map(|&v| f64::from(v)).collect())?;
                let mut rng = sample_rng(noise_seed, NOISE_STREAM ^ sigma.to_bits(), r.seed_index);
                let noisy = normalize_for_input(&add_noise(&clean, sigma, &mut rng)?)?;
                noisy.values.iter().map(|&v| v as f32).collect()
            };
            let p = predict_m2(state, &image)?;
            Ok((prediction_error(p.m2.m2_eff, r.m2_eff())?, p.m2.m2_eff))
        })
        .collect::<Result<_>>()?;
    let pe: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let predicted = rows.iter().map(|r| r.1).collect();
    let count = pe.len() as f64;
    let cdf = PE_THRESHOLDS
        .iter()
        .map(|&t| (t, 100.0 * pe.iter().filter(|&&v| v <= t).count() as f64 / count))
        .collect();
    Ok(NoiseEvaluation {
        sigma,
        mean_pe: pe.iter().sum::<f64>() / count,
        cdf,
        pe,
        predicted,
    })
}

/// PE statistics of the test set at each noise level. Every (σ, sample)
/// pair draws its noise from its own seed stream, so a level gives the
/// same noise whichever other levels are evaluated with it.
pub fn evaluate<T: Scalar>(
    state: &TrainState<T>,
    test: &[SampleRecord],
    sigmas: &[f64],
    noise_seed: u64,
) -> Result<Vec<NoiseEvaluation>> {
    if test.is_empty() {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    sigmas.iter().map(|&s| evaluate_one(state, test, s, noise_seed)).collect()
}

/// Noise levels written `start:stop:step` (inclusive) or as one number.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRange {
    pub values: Vec<f64>,
}

const MAX_SIGMA_LEVELS: usize = 10_000;

impl SigmaRange {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidInput(format!("noise range {s:?}: {reason}"));
        let nums: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<_>>()?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad("values must be finite"));
        }
        let values = match nums[..] {
            [v] => vec![v],
            [start, stop, step] => {
                if !(step > 0.0) {
                    return Err(bad("step must be positive"));
                }
                if stop < start {
                    return Err(bad("stop precedes start"));
                }
                let span = (stop - start) / step;
                if span >= MAX_SIGMA_LEVELS as f64 {
                    return Err(bad("too many levels"));
                }
                let count = (span + 1e-9).floor() as usize + 1;
                (0..count)
                    .map(|k| ((start + k as f64 * step) * 1e12).round() / 1e12)
                    .collect()
            }
            _ => return Err(bad("expected start:stop:step or a single value")),
        };
        if values.iter().any(|&v| v < 0.0) {
            return Err(bad("noise levels must be non-negative"));
        }
        Ok(SigmaRange { values })
    }
}

impl FromStr for SigmaRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SigmaRange::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::super::config::{Init, Layer, Precision};
    use super::*;
    use crate::dataset::held_out_set;

    fn small_config(res: usize) -> NetworkConfig {
        use Layer::*;
        NetworkConfig {
            input_resolution: res,
            layers: vec![Conv { out_channels: 4 }, Relu, MaxPool, Conv { out_channels: 4 }, Relu, MaxPool, Dense { width: 16 }, Relu, Dense { width: 2 }, Sigmoid],
            init: Init::HeUniform,
            precision: Precision::F32,
        }
    }

    fn scalar_state(p: f64, g: f64, momentum: f64) -> (TrainState<f64>, ParameterSet<f64>) {
        use Layer::*;
        let config = NetworkConfig {
            input_resolution: 1,
            layers: vec![Dense { width: 2 }, Sigmoid],
            init: Init::HeUniform,
            precision: Precision::F64,
        };
        let sgd = SgdConfig { momentum, ..SgdConfig::default() };
        let mut s = TrainState::<f64>::new(config, ModeCase::Three, FiberSpec::reference(), 0, sgd).unwrap();
        s.network.params.layers[0].weight = vec![p, 0.0];
        let mut grads = s.network.params.clone();
        grads.iter_mut().for_each(|v| *v = 0.0);
        grads.layers[0].weight[0] = g;
        (s, grads)
    }

    #[test]
    fn schedule_boundary() {
        let s = LrSchedule::default();
        assert_eq!(s.rate(0), 0.01);
        assert_eq!(s.rate(19), 0.01);
        assert_eq!(s.rate(20), 0.001);
        assert_eq!(s.rate(49), 0.001);
    }

    #[test]
    fn sgd_examples() {
        let (mut s, g) = scalar_state(1.0, 0.5, 0.0);
        sgd_step(&mut s, &g).unwrap();
        assert!((s.network.params.layers[0].weight[0] - 0.995).abs() < 1e-15);

        let (mut s, mut g) = scalar_state(1.0, 0.0, 0.0);
        let before = s.network.params.clone();
        sgd_step(&mut s, &g).unwrap();
        assert_eq!(s.network.params, before);

        g.layers[0].weight[0] = 0.5;
        let (mut s, _) = scalar_state(1.0, 0.0, 0.9);
        sgd_step(&mut s, &g).unwrap();
        sgd_step(&mut s, &g).unwrap();
        // v1 = 0.5, v2 = 0.95
        assert!((s.network.params.layers[0].weight[0] - (1.0 - 0.01 * 1.45)).abs() < 1e-15);
    }

    #[test]
    fn sigma_range_parsing() {
        let r = SigmaRange::parse("0:0.24:0.04").unwrap();
        assert_eq!(r.values, vec![0.0, 0.04, 0.08, 0.12, 0.16, 0.2, 0.24]);
        assert_eq!(SigmaRange::parse("0:0.24:0.02").unwrap().values.len(), 13);
        assert_eq!(SigmaRange::parse("0.08").unwrap().values, vec![0.08]);
        for bad in ["", "a:b:c", "0:1", "0:1:0", "1:0:0.1", "-0.1", "0:1e9:1e-9", "nan"] {
            assert!(SigmaRange::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn short_training_is_deterministic_and_learns() {
        let mut opts = TrainOptions::new(ModeCase::Three, 3, 17);
        opts.samples_per_epoch = 96;
        opts.sgd.batch_size = 16;
        opts.sgd.momentum = 0.9;
        let gen = Generator::new(&opts.fiber, opts.case, 32).unwrap();
        let eval = held_out_set(&gen, 17, 16).unwrap();
        let mut seen = Vec::new();
        let a = train::<f32>(small_config(32), &opts, &eval, |s| seen.push(s.epoch)).unwrap();
        let b = train::<f32>(small_config(32), &opts, &eval, |_| {}).unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
        assert_eq!(a.network, b.network);
        assert_eq!(a.history.len(), 3);
        assert_eq!(
            a.history.iter().map(|h| h.mean_loss).collect::<Vec<_>>(),
            b.history.iter().map(|h| h.mean_loss).collect::<Vec<_>>()
        );
        assert!(a.history.iter().all(|h| h.mean_pe.unwrap().is_finite()));

        let p = predict_m2(&a, &eval[0].image).unwrap();
        assert!(p.m2.m2_x > 0.0 && p.m2.m2_x < 3.0 && p.m2.m2_y < 3.0);
        assert!(p.seconds >= 0.0);
        assert!(predict_m2(&a, &eval[0].image[..100]).is_err());
    }

    #[test]
    fn evaluation_properties() {
        let opts = TrainOptions::new(ModeCase::Five, 0, 3);
        let state = TrainState::<f32>::new(small_config(32), opts.case, opts.fiber, 3, opts.sgd).unwrap();
        let gen = Generator::new(&opts.fiber, opts.case, 32).unwrap();
        let test = held_out_set(&gen, 3, 12).unwrap();
        let rows = evaluate(&state, &test, &[0.0, 0.08, 0.0], 5).unwrap();
        assert_eq!(rows[0], rows[2]);
        assert_eq!(rows[0], evaluate_clean(&state, &test).unwrap());
        assert_ne!(rows[0].pe, rows[1].pe);
        for r in &rows {
            assert!(r.cdf.windows(2).all(|w| w[0].1 <= w[1].1));
            assert!(r.mean_pe.is_finite());
        }
        let again = evaluate(&state, &test, &[0.08], 5).unwrap();
        assert_eq!(again[0], rows[1]);
        assert!(evaluate(&state, &[], &[0.0], 5).is_err());
    }

    #[test]
    fn divergence_is_detected() {
        let mut opts = TrainOptions::new(ModeCase::Three, 6, 1);
        opts.samples_per_epoch = 16;
        opts.sgd.batch_size = 16;
        opts.divergence_factor = 0.0;
        let err = train::<f32>(small_config(32), &opts, &[], |_| {}).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }
}
