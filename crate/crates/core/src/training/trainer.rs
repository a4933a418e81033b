use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, ScoreMode};
use crate::featstore::Split;
use crate::model::{
    save_checkpoint, Dropout, FeatureSet, HadaParams, ItemFeatures, Phase, Variant, ALPHA,
};
use crate::numerics::{AdamW, AdamWConfig, CosineSchedule, Tape};
use crate::training::loss::batch_loss;
use crate::{Error, Scalar};

pub const LOG_FILE: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.hadc";
pub const NONFINITE_DUMP: &str = "nonfinite_batch.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub tau_init: f64,
    pub tau_range: [f64; 2],
    pub alpha_init: f64,
    pub alpha_range: [f64; 2],
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            epochs: 50,
            lr_max: 1e-4,
            lr_min: 5e-6,
            weight_decay: 0.02,
            dropout: 0.7,
            tau_init: 0.07,
            tau_range: [0.001, 0.5],
            alpha_init: 0.5,
            alpha_range: [0.1, 0.9],
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr_max > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return bad(format!(
                "need 0 <= lr_min <= lr_max and lr_max > 0, got {} / {}",
                self.lr_min, self.lr_max
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        let [tlo, thi] = self.tau_range;
        if !(tlo > 0.0 && tlo <= thi && (tlo..=thi).contains(&self.tau_init)) {
            return bad(format!(
                "tau_init {} must lie in a positive range {:?}",
                self.tau_init, self.tau_range
            ));
        }
        let [alo, ahi] = self.alpha_range;
        if !(0.0 <= alo && alo <= ahi && ahi <= 1.0 && (alo..=ahi).contains(&self.alpha_init)) {
            return bad(format!(
                "alpha_init {} must lie in a range {:?} within [0,1]",
                self.alpha_init, self.alpha_range
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u32,
    pub train_loss: f64,
    pub val_rsum: f64,
    pub lr: f64,
    pub tau: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopState {
    pub best_val_rsum: f64,
    pub epochs_since_improvement: usize,
    pub best_checkpoint: Option<PathBuf>,
}

impl EarlyStopState {
    /// Records one validation score; returns whether it improved.
    pub fn observe(&mut self, val_rsum: f64) -> bool {
        if val_rsum > self.best_val_rsum {
            self.best_val_rsum = val_rsum;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self, patience: usize) -> bool {
        self.epochs_since_improvement > patience
    }
}

/// Where the loop writes its artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
    /// Leave wall-clock time out of the log.
    pub deterministic_log: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub best: HadaParams<S>,
    pub early_stop: EarlyStopState,
    pub log: Vec<EpochRecord>,
}

fn clamp_scalars<S: Scalar>(params: &mut HadaParams<S>, cfg: &TrainConfig, phase: Phase) {
    let tau = params
        .tau()
        .max(S::lit(cfg.tau_range[0]))
        .min(S::lit(cfg.tau_range[1]));
    params.set_tau(tau);
    if phase == Phase::Two {
        let a = params
            .alpha()
            .max(S::lit(cfg.alpha_range[0]))
            .min(S::lit(cfg.alpha_range[1]));
        params.set_alpha(a);
    }
}

fn validation_mode(phase: Phase) -> ScoreMode {
    match phase {
        Phase::One => ScoreMode::Fused,
        Phase::Two => ScoreMode::Weighted,
    }
}

/// Validation RSum under the phase's similarity.
pub fn validation_rsum<S: Scalar>(
    params: &HadaParams<S>,
    data: &FeatureSet<S>,
    phase: Phase,
) -> Result<f64, Error> {
    let mode = match params.config().variant {
        Variant::B2 => ScoreMode::B2,
        Variant::Hada => validation_mode(phase),
    };
    Ok(evaluate(Some(params), data, Split::Val, &mode)?
        .report
        .total_rsum)
}

#[derive(Serialize)]
struct BatchDump<'a> {
    epoch: usize,
    batch: usize,
    images: Vec<&'a str>,
    texts: Vec<&'a str>,
}

/// Runs one training phase from `init`.
///
/// Phase 1 freezes α at 0 and resets τ to `tau_init`; phase 2 sets
/// α = `alpha_init`, trains it and keeps it clamped. The starting
/// parameters are scored first and count as the initial best.
pub fn train<S: Scalar>(
    data: &FeatureSet<S>,
    cfg: &TrainConfig,
    phase: Phase,
    init: HadaParams<S>,
    output: &TrainOutput,
) -> Result<TrainOutcome<S>, Error> {
    cfg.validate()?;
    let mut params = init;
    params.set_phase(phase);
    match phase {
        Phase::One => {
            params.set_alpha(S::zero());
            params.set_tau(S::lit(cfg.tau_init));
        }
        Phase::Two => params.set_alpha(S::lit(cfg.alpha_init)),
    }
    params
        .params_mut()
        .set_trainable(ALPHA, phase == Phase::Two);
    clamp_scalars(&mut params, cfg, phase);

    let pairs: Vec<(&ItemFeatures<S>, Vec<&ItemFeatures<S>>)> = data
        .pairs_in(Split::Train)
        .into_iter()
        .map(|(img, texts)| {
            Ok((
                data.get(img)?,
                texts
                    .iter()
                    .map(|t| data.get(t))
                    .collect::<Result<Vec<_>, _>>()?,
            ))
        })
        .collect::<Result<_, Error>>()?;
    if pairs.len() < 2 {
        return Err(Error::Config(
            "training needs at least 2 train pairs".into(),
        ));
    }
    if data.pairs_in(Split::Val).is_empty() {
        return Err(Error::Config("training needs a non-empty val split".into()));
    }

    let batches_per_epoch =
        pairs.len() / cfg.batch_size + usize::from(pairs.len() % cfg.batch_size >= 2);
    let schedule = CosineSchedule::new(
        cfg.lr_max,
        cfg.lr_min,
        (cfg.epochs * batches_per_epoch) as u64,
    );
    let mut optim = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..Default::default()
    });
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    drop_rng.set_stream(1);

    let mut log_file = match &output.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(File::create(dir.join(LOG_FILE))?)
        }
        None => None,
    };
    let best_path = output.dir.as_ref().map(|d| d.join(BEST_CHECKPOINT));

    let mut early = EarlyStopState {
        best_val_rsum: validation_rsum(&params, data, phase)?,
        epochs_since_improvement: 0,
        best_checkpoint: best_path.clone(),
    };
    let mut best = params.clone();
    if let Some(p) = &best_path {
        save_checkpoint(&best, p)?;
    }
    let mut log = Vec::new();
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut data_rng);
        let picks: Vec<usize> = order
            .iter()
            .map(|&k| data_rng.random_range(0..pairs[k].1.len()))
            .collect();

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut lr = S::lit(cfg.lr_max);
        for (b, (chunk, pick)) in order
            .chunks(cfg.batch_size)
            .zip(picks.chunks(cfg.batch_size))
            .enumerate()
        {
            if chunk.len() < 2 {
                continue;
            }
            let images: Vec<&ItemFeatures<S>> = chunk.iter().map(|&k| pairs[k].0).collect();
            let texts: Vec<&ItemFeatures<S>> = chunk
                .iter()
                .zip(pick)
                .map(|(&k, &t)| pairs[k].1[t])
                .collect();

            let mut tape = Tape::new();
            let bound = params.params().bind(&mut tape);
            let mut dropout = Dropout::new(cfg.dropout, &mut drop_rng)?;
            let loss = batch_loss(
                &mut tape,
                &bound,
                &params,
                &images,
                &texts,
                phase == Phase::Two,
                Some(&mut dropout),
            )?;
            let value = tape.value(loss.total).item();
            if !value.is_finite() {
                let dump = match &output.dir {
                    Some(dir) => {
                        let path = dir.join(NONFINITE_DUMP);
                        let body = BatchDump {
                            epoch,
                            batch: b,
                            images: images.iter().map(|i| i.id.as_str()).collect(),
                            texts: texts.iter().map(|t| t.id.as_str()).collect(),
                        };
                        fs::write(&path, serde_json::to_vec_pretty(&body)?)?;
                        Some(path)
                    }
                    None => None,
                };
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    dump,
                });
            }
            let grads = tape.backward(loss.total)?;
            let grads: Vec<_> = bound.vars().iter().map(|&v| grads.get(v)).collect();
            lr = S::lit(schedule.lr(step));
            optim.step(params.params_mut(), &grads, lr)?;
            clamp_scalars(&mut params, cfg, phase);
            debug_assert!(
                params.tau() >= S::lit(cfg.tau_range[0])
                    && params.tau() <= S::lit(cfg.tau_range[1])
            );
            step += 1;
            loss_sum += value.to_f64_lossy();
            batches += 1;
        }

        let val_rsum = validation_rsum(&params, data, phase)?;
        let improved = early.observe(val_rsum);
        if improved {
            best = params.clone();
            if let Some(p) = &best_path {
                save_checkpoint(&best, p)?;
            }
        }
        let record = EpochRecord {
            epoch,
            phase: phase.number(),
            train_loss: loss_sum / batches.max(1) as f64,
            val_rsum,
            lr: lr.to_f64_lossy(),
            tau: params.tau().to_f64_lossy(),
            alpha: params.alpha().to_f64_lossy(),
            seconds: (!output.deterministic_log).then(|| started.elapsed().as_secs_f64()),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val rsum {:.2}{}",
            record.train_loss,
            val_rsum,
            if improved { " (best)" } else { "" }
        );
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &record)?;
            f.write_all(b"\n")?;
            f.flush()?;
        }
        log.push(record);
        if early.should_stop(cfg.patience) {
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        early_stop: early,
        log,
    })
}

/// Reads a training log back.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>, Error> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
