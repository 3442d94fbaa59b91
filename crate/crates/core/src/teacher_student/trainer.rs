use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{adamw_step, clip_global_norm, AdamW, OptimizerState};
use super::pseudo::{confidence_mask, ema_update, fuse};
use crate::autograd::{ops, Tape, Tensor};
use crate::backbone::{argmax_channels, forward, forward_on_tape, ModelParams};
use crate::data::{augment, normalize, LabelMask, Sample, UNLABELED};
use crate::error::{Error, Result};
use crate::losses::{consistency_on_tape, one_hot, supervised_on_tape, PixelSelection, SupervisedWeights};
use crate::metrics::ConfusionTally;
use crate::schedules::{ScheduleConfig, ScheduleState};

pub const AUGMENT_NOISE_SIGMA: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: ScheduleConfig,
    pub num_classes: usize,
    pub batch_size: usize,
    pub optimizer: AdamW,
    pub clip_norm: f64,
    pub patience: usize,
    pub seed: u64,
    /// `false` keeps every epoch supervised-only with the teacher disabled.
    pub co_training: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: ScheduleConfig::default(),
            num_classes: 4,
            batch_size: 8,
            optimizer: AdamW::default(),
            clip_norm: 1.0,
            patience: 15,
            seed: 42,
            co_training: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 || self.num_classes > UNLABELED as usize {
            return bad(format!("num_classes must lie in [2, 255), got {}", self.num_classes));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.patience == 0 {
            return bad("patience must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        let o = &self.optimizer;
        if !(o.weight_decay >= 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return bad(format!("invalid optimizer constants {o:?}"));
        }
        Ok(())
    }
}

/// Everything needed to continue training from an epoch boundary.
///
/// Randomness is derived from `(seed, epoch)` at the start of every epoch, so
/// no generator state needs to be carried.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub optimizer: OptimizerState,
    /// Next epoch to run.
    pub epoch: usize,
    pub best_val_mdice: f64,
    pub epochs_since_improvement: usize,
    pub teacher_active: bool,
}

impl TrainerState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let student = ModelParams::init(config.seed, config.num_classes)?;
        Ok(TrainerState {
            teacher: student.clone(),
            optimizer: OptimizerState::new(&student),
            student,
            epoch: 0,
            best_val_mdice: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            teacher_active: false,
        })
    }
}

/// A normalized image with its sparse ground truth.
#[derive(Clone, Debug)]
pub struct Example {
    pub image: Tensor,
    pub sparse: LabelMask,
}

impl Example {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        Ok(Example {
            image: normalize(&sample.image)?,
            sparse: sample.sparse_mask.clone(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub sup: f64,
    pub cons: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOutcome {
    /// `None` when the batch had nothing to learn from.
    pub losses: Option<StepLosses>,
    pub unlabeled: usize,
    pub confident_unlabeled: usize,
}

/// One optimization step on `batch`.
///
/// The batch loss is the mean of per-example totals. The teacher is only
/// consulted, and only updated, outside warm-up.
pub fn train_step(
    state: &mut TrainerState,
    batch: &[Example],
    sched: &ScheduleState,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let c = config.num_classes;
    let mut tape = Tape::new();
    let params = state.student.on_tape(&mut tape);
    let mut outcome = StepOutcome::default();
    let (mut sups, mut conss, mut totals) = (Vec::new(), Vec::new(), Vec::new());
    for ex in batch {
        let (_, h, w) = ex.image.chw("train_step")?;
        ex.sparse.validate(c)?;
        let labels = ex.sparse.data();
        let labeled = PixelSelection::new(labels.iter().map(|&l| l != UNLABELED).collect());
        let image = tape.constant(ex.image.clone());
        let logits = forward_on_tape(&mut tape, &params, image)?;
        let probs = tape.softmax_channels(logits)?;
        let sup = if labeled.count() > 0 {
            let target = one_hot(labels, c, h, w);
            Some(supervised_on_tape(&mut tape, probs, &target, &labeled, SupervisedWeights::default())?)
        } else {
            None
        };
        if sched.in_warmup {
            if let Some(s) = sup {
                sups.push(s);
                totals.push(s);
            }
            continue;
        }
        let teacher_probs = ops::softmax_channels(&forward(&state.teacher, &ex.image)?)?;
        let conf = confidence_mask(&teacher_probs, sched.tau)?;
        for (px, &l) in labels.iter().enumerate() {
            if l == UNLABELED {
                outcome.unlabeled += 1;
                outcome.confident_unlabeled += conf[px] as usize;
            }
        }
        let fused = fuse(&ex.sparse, &teacher_probs, &conf)?;
        if fused.selection.count() == 0 {
            continue;
        }
        let cons = consistency_on_tape(&mut tape, probs, &fused)?;
        conss.push(cons);
        let total = match sup {
            Some(s) => {
                sups.push(s);
                tape.weighted_sum(&[(s, sched.alpha), (cons, 1.0 - sched.alpha)])?
            }
            None => tape.weighted_sum(&[(cons, 1.0 - sched.alpha)])?,
        };
        totals.push(total);
    }
    if totals.is_empty() {
        warn!("epoch {}: batch has no labeled or confident pixels, step skipped", sched.epoch);
        return Ok(outcome);
    }
    let mean_of = |tape: &Tape, vs: &[crate::autograd::Var]| {
        if vs.is_empty() {
            0.0
        } else {
            vs.iter().map(|&v| tape.value(v).item()).sum::<f64>() / vs.len() as f64
        }
    };
    let losses = StepLosses {
        sup: mean_of(&tape, &sups),
        cons: mean_of(&tape, &conss),
        total: 0.0,
    };
    let root = tape.mean(&totals)?;
    let total = tape.value(root).item();
    let mut grads = tape.backward(root)?;
    let mut g: Vec<Tensor> = params
        .iter()
        .zip(state.student.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    clip_global_norm(&mut g, config.clip_norm);
    adamw_step(&mut state.student, &g, &mut state.optimizer, sched.lr, config.optimizer)?;
    if !sched.in_warmup {
        ema_update(&mut state.teacher, &state.student, config.schedule.ema_beta)?;
    }
    outcome.losses = Some(StepLosses { total, ..losses });
    Ok(outcome)
}

/// Argmax segmentation of a raw `[0, 1]` image.
pub fn predict(params: &ModelParams, image: &Tensor) -> Result<LabelMask> {
    let (_, h, w) = image.chw("predict")?;
    let labels = argmax_channels(&forward(params, &normalize(image)?)?)?;
    LabelMask::new(w, h, labels)
}

/// Confusion counts of `params` over `(raw image, reference mask)` pairs.
pub fn evaluate<'a>(
    params: &ModelParams,
    pairs: impl IntoIterator<Item = (&'a Tensor, &'a LabelMask)>,
) -> Result<ConfusionTally> {
    let mut tally = ConfusionTally::new(params.num_classes());
    for (image, reference) in pairs {
        tally.accumulate(&predict(params, image)?, reference)?;
    }
    Ok(tally)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    CoTrain,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::CoTrain => "cotrain",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub alpha: f64,
    pub tau: f64,
    pub lr: f64,
    pub loss_sup: f64,
    pub loss_cons: f64,
    pub loss_total: f64,
    pub val_miou: f64,
    pub val_mdice: f64,
    /// Confident share of unlabeled training pixels seen this epoch.
    pub pseudo_coverage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub records: Vec<EpochRecord>,
    /// State right after the best validation epoch of this invocation.
    pub best: Option<TrainerState>,
    pub final_state: TrainerState,
    pub stopped_early: bool,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

fn run_epoch(
    state: &mut TrainerState,
    config: &TrainConfig,
    sched: &ScheduleState,
    train: &[Sample],
    val: &[Sample],
) -> Result<EpochRecord> {
    let mut rng = epoch_rng(config.seed, sched.epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let (mut sup, mut cons, mut total, mut steps) = (0.0, 0.0, 0.0, 0usize);
    let (mut unlabeled, mut confident) = (0usize, 0usize);
    for chunk in order.chunks(config.batch_size) {
        let batch = chunk
            .iter()
            .map(|&i| Example::from_sample(&augment(&train[i], &mut rng, AUGMENT_NOISE_SIGMA)?))
            .collect::<Result<Vec<_>>>()?;
        let out = train_step(state, &batch, sched, config)?;
        unlabeled += out.unlabeled;
        confident += out.confident_unlabeled;
        if let Some(l) = out.losses {
            sup += l.sup;
            cons += l.cons;
            total += l.total;
            steps += 1;
        }
    }
    let denom = steps.max(1) as f64;
    let tally = evaluate(&state.student, val.iter().map(|s| (&s.image, &s.sparse_mask)))?;
    Ok(EpochRecord {
        epoch: sched.epoch,
        phase: if sched.in_warmup { Phase::Warmup } else { Phase::CoTrain },
        alpha: sched.alpha,
        tau: sched.tau,
        lr: sched.lr,
        loss_sup: sup / denom,
        loss_cons: cons / denom,
        loss_total: total / denom,
        val_miou: tally.miou()?,
        val_mdice: tally.mdice()?,
        pseudo_coverage: if unlabeled == 0 { 0.0 } else { confident as f64 / unlabeled as f64 },
    })
}

/// Runs epochs `state.epoch..T`, validating on the sparse masks of `val`
/// after each one.
///
/// `observer` sees every record together with the post-epoch state and
/// whether it set a new best validation mDice; returning [`Control::Halt`]
/// stops after that epoch.
pub fn run_training<F>(
    config: &TrainConfig,
    train: &[Sample],
    val: &[Sample],
    mut state: TrainerState,
    mut observer: F,
) -> Result<TrainingOutcome>
where
    F: FnMut(&EpochRecord, &TrainerState, bool) -> Result<Control>,
{
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data("training and validation sets must be non-empty".into()));
    }
    let total_epochs = config.schedule.total_epochs;
    let mut records = Vec::new();
    let mut best = None;
    while state.epoch < total_epochs && state.epochs_since_improvement < config.patience {
        let epoch = state.epoch;
        let sched = config.schedule.state_with(epoch, config.co_training)?;
        if !sched.in_warmup && !state.teacher_active {
            state.teacher = state.student.clone();
            state.teacher_active = true;
        }
        let record = run_epoch(&mut state, config, &sched, train, val).map_err(|e| match e {
            Error::NonFinite { op } => {
                log::error!("epoch {epoch}: {op} produced a non-finite value");
                Error::NumericalAbort { epoch }
            }
            other => other,
        })?;
        if !record.loss_total.is_finite() {
            return Err(Error::NumericalAbort { epoch });
        }
        let improved = record.val_mdice > state.best_val_mdice;
        if improved {
            state.best_val_mdice = record.val_mdice;
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
        }
        state.epoch = epoch + 1;
        info!(
            "epoch {epoch} {} loss {:.4} val mIoU {:.4} mDice {:.4} coverage {:.3}",
            record.phase.name(),
            record.loss_total,
            record.val_miou,
            record.val_mdice,
            record.pseudo_coverage
        );
        if improved {
            best = Some(state.clone());
        }
        let control = observer(&record, &state, improved)?;
        records.push(record);
        if control == Control::Halt {
            break;
        }
    }
    let stopped_early = state.epoch < total_epochs && state.epochs_since_improvement >= config.patience;
    Ok(TrainingOutcome {
        records,
        best,
        final_state: state,
        stopped_early,
    })
}
