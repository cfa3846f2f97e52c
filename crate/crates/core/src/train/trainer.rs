use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, augment, inject_outliers, lr_at, AdamState, BestParams, Checkpoint, TrainConfig,
    TrainError, ValidationRecord,
};
use crate::diff::Tape;
use crate::gnn::{bind_params, forward, forward_tape, init_params, measurement_tensor, GnnError, ModelParams, SceneGraph};
use crate::objective::{evaluate_loss, loss_tape, normalize_gradients};
use crate::scene::{subsample_views, Scene};

/// Stream id of the per-epoch scene shuffle; iteration streams use the
/// iteration index itself.
const SHUFFLE_STREAM: u64 = 1 << 63;

#[derive(Debug, Clone, PartialEq)]
pub struct StepEval {
    pub loss: f64,
    /// One buffer per parameter tensor, in canonical order.
    pub grads: Vec<Vec<f64>>,
    pub hinge_count: usize,
}

/// Loss of the network run on `input`, measured against the observations of
/// `targets` (same pattern), with its gradient.
pub fn loss_and_grad(params: &ModelParams, input: &Scene, targets: &Scene) -> Result<StepEval, TrainError> {
    if input.pattern() != targets.pattern() {
        return Err(TrainError::Config("input and target scenes differ in pattern".into()));
    }
    let mode = params.hyper().mode;
    if input.mode() != mode {
        return Err(GnnError::ModeMismatch {
            expected: mode,
            found: input.mode(),
        }
        .into());
    }
    let graph = SceneGraph::new(input.pattern(), input.num_views(), input.num_points())?;
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, params, true);
    let x = tape.constant(measurement_tensor(input));
    let out = forward_tape(&mut tape, params, &vars, &graph, x)?;
    let loss = loss_tape(&mut tape, mode, out.cameras, out.points, targets)?;
    let value = tape.value(loss.loss).data()[0];
    if !value.is_finite() {
        return Err(TrainError::Objective(crate::objective::ObjectiveError::NonFinite("loss")));
    }
    tape.backward(loss.loss).map_err(GnnError::from)?;
    Ok(StepEval {
        loss: value,
        grads: vars.iter().map(|&v| tape.grad_or_zeros(v)).collect(),
        hinge_count: loss.hinge.iter().filter(|&&h| h).count(),
    })
}

/// Mean loss of the network over whole scenes.
pub fn validation_loss(params: &ModelParams, scenes: &[Scene]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for s in scenes {
        let recon = forward(s, params)?;
        total += evaluate_loss(s, &recon)?.mean_reprojection;
    }
    Ok(total / scenes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IterationLog {
    pub iteration: u64,
    /// Zero-based epoch the iteration belongs to.
    pub epoch: u64,
    /// Index of the training scene the sample came from.
    pub scene: usize,
    pub num_views: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    pub hinge_count: usize,
    pub outliers: usize,
    /// Outlier injection was requested but infeasible for this sample.
    pub outliers_skipped: bool,
}

/// Epoch loop over a fixed list of training scenes.
///
/// Every iteration draws from its own generator, seeded from the config
/// seed with the iteration index as stream, so a run resumed from a
/// checkpoint reproduces an uninterrupted one bit for bit.
pub struct Trainer {
    state: Checkpoint,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let params = init_params(&config.model, config.seed)?;
        let adam = AdamState::new(params.tensors());
        Ok(Self {
            state: Checkpoint {
                config,
                params,
                adam,
                iteration: 0,
                epoch: 0,
                step_in_epoch: 0,
                history: Vec::new(),
                best: None,
                skipped_outliers: 0,
            },
        })
    }

    pub fn from_checkpoint(state: Checkpoint) -> Result<Self, TrainError> {
        state.config.validate()?;
        Ok(Self { state })
    }

    /// Starts from given weights (fine-tuning) with fresh optimizer state.
    pub fn with_params(config: TrainConfig, params: ModelParams) -> Result<Self, TrainError> {
        config.validate()?;
        if *params.hyper() != config.model {
            return Err(TrainError::Config("weights do not match the configured model".into()));
        }
        let mut t = Self::new(config)?;
        t.state.adam = AdamState::new(params.tensors());
        t.state.params = params;
        Ok(t)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.state
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        self.state
    }

    pub fn params(&self) -> &ModelParams {
        &self.state.params
    }

    fn check_scenes(&self, train: &[Scene], val: &[Scene]) -> Result<(), TrainError> {
        let cfg = &self.state.config;
        if train.is_empty() {
            return Err(TrainError::Config("no training scenes".into()));
        }
        for s in train.iter().chain(val) {
            if s.mode() != cfg.model.mode {
                return Err(TrainError::Config(format!(
                    "scene is {}, model is {}",
                    s.mode(),
                    cfg.model.mode
                )));
            }
            if cfg.aug.enabled && s.gt_poses().is_none() {
                return Err(TrainError::Config("augmentation needs ground-truth poses".into()));
            }
        }
        Ok(())
    }

    fn epoch_order(&self, num_scenes: usize, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.state.config.seed);
        rng.set_stream(SHUFFLE_STREAM | epoch);
        let mut order: Vec<usize> = (0..num_scenes).collect();
        order.shuffle(&mut rng);
        order
    }

    /// A contiguous window of views, or the whole scene when it is shorter
    /// than the minimum window.
    fn window(&self, scene: &Scene, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let m = scene.num_views();
        let [lo, hi] = self.state.config.subseq_range;
        if m < lo {
            return (0..m).collect();
        }
        let len = rng.gen_range(lo..=hi.min(m));
        let start = rng.gen_range(0..=m - len);
        (start..start + len).collect()
    }

    fn diverged(&self, reason: String) -> TrainError {
        TrainError::Diverged {
            iteration: self.state.iteration,
            reason,
            checkpoint: Box::new(self.state.clone()),
        }
    }

    fn step(&mut self, scene_index: usize, scene: &Scene) -> Result<IterationLog, TrainError> {
        let cfg = self.state.config.clone();
        let it = self.state.iteration;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(it);

        let views = self.window(scene, &mut rng);
        let mut sample = subsample_views(scene, &views)?.scene;
        if cfg.aug.enabled {
            sample = augment(&sample, &cfg.aug, &mut rng)?.0;
        }
        let (input, outliers, skipped) = if cfg.outliers.enabled {
            match inject_outliers(&sample, cfg.outliers.rate, &mut rng) {
                Ok(inj) => {
                    let count = inj.count();
                    (inj.corrupted, count, false)
                }
                Err(TrainError::OutlierInfeasible { .. }) => (sample.clone(), 0, true),
                Err(e) => return Err(e),
            }
        } else {
            (sample.clone(), 0, false)
        };

        let mut eval = match loss_and_grad(&self.state.params, &input, &sample) {
            Ok(e) => e,
            Err(TrainError::Gnn(GnnError::NonFinite { layer, stage })) => {
                return Err(self.diverged(format!("non-finite {stage} features at layer {layer}")))
            }
            Err(TrainError::Objective(e)) => return Err(self.diverged(e.to_string())),
            Err(e) => return Err(e),
        };
        let grad_norm = match normalize_gradients(&mut eval.grads) {
            Ok(n) => n,
            Err(e) => return Err(self.diverged(e.to_string())),
        };
        let lr = lr_at(&cfg, it);
        let state = &mut self.state;
        adam_step(state.params.tensors_mut(), &eval.grads, &mut state.adam, lr)?;
        state.iteration += 1;
        state.step_in_epoch += 1;
        if skipped {
            state.skipped_outliers += 1;
        }
        Ok(IterationLog {
            iteration: it,
            epoch: state.epoch,
            scene: scene_index,
            num_views: sample.num_views(),
            lr,
            loss: eval.loss,
            grad_norm,
            hinge_count: eval.hinge_count,
            outliers,
            outliers_skipped: skipped,
        })
    }

    fn validate(&mut self, val: &[Scene]) -> Result<(), TrainError> {
        let loss = match validation_loss(&self.state.params, val) {
            Ok(l) => l,
            Err(TrainError::Gnn(GnnError::NonFinite { .. }) | TrainError::Objective(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let st = &mut self.state;
        st.history.push(ValidationRecord {
            epoch: st.epoch,
            iteration: st.iteration,
            loss,
        });
        if loss.is_finite() && st.best.as_ref().is_none_or(|b| loss < b.loss) {
            st.best = Some(BestParams {
                params: st.params.clone(),
                loss,
                epoch: st.epoch,
            });
        }
        Ok(())
    }

    /// Trains until `config.epochs` epochs are complete or, if given, until
    /// `max_iterations` iterations have run in total. Validation runs on
    /// `val` after every `validate_every` epochs and keeps the best weights.
    pub fn run(
        &mut self,
        train: &[Scene],
        val: &[Scene],
        max_iterations: Option<u64>,
        mut observer: impl FnMut(&IterationLog),
    ) -> Result<(), TrainError> {
        self.check_scenes(train, val)?;
        let epochs = self.state.config.epochs;
        let every = self.state.config.validate_every;
        while self.state.epoch < epochs {
            let order = self.epoch_order(train.len(), self.state.epoch);
            while (self.state.step_in_epoch as usize) < order.len() {
                if max_iterations.is_some_and(|m| self.state.iteration >= m) {
                    return Ok(());
                }
                let idx = order[self.state.step_in_epoch as usize];
                let log = self.step(idx, &train[idx])?;
                observer(&log);
            }
            self.state.epoch += 1;
            self.state.step_in_epoch = 0;
            if !val.is_empty() && self.state.epoch.is_multiple_of(every) {
                self.validate(val)?;
            }
        }
        Ok(())
    }
}
