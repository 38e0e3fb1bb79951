//! Two-stage training: predictor likelihood maximization, then joint training of
//! everything else with the predictors frozen.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::encoders::{Modality, RawSample};
use crate::error::{Error, Result};
use crate::fusion::LossWeights;
use crate::gmm::{EntropyModel, HistoryMemory};
use crate::graph::{Gradients, Graph};
use crate::metrics::{compute_metrics, mae, MetricReport};
use crate::mi_ba::ModalityPair;
use crate::model::{LossOptions, Model, ModelConfig};
use crate::nn::Weights;
use crate::numeric::{Matrix, Rng};
use crate::par::Execution;
use crate::params::{Adam, AdamConfig, ParamId, ParamStore};

pub const TRACE_INTERVAL: usize = 20;

/// A loss term or mechanism removed for an ablation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DropTerm {
    /// One inter-modality bound.
    Pair(ModalityPair),
    /// All inter-modality bounds.
    Lba,
    /// One fusion-to-modality contrastive term.
    Nce(Modality),
    /// All contrastive terms.
    Lcpc,
    /// History memory (current batch only).
    History,
    /// Class-conditional mixture (single pooled Gaussian instead).
    Gmm,
}

impl DropTerm {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        match s {
            "lba" => return Some(DropTerm::Lba),
            "lcpc" => return Some(DropTerm::Lcpc),
            "history" => return Some(DropTerm::History),
            "gmm" => return Some(DropTerm::Gmm),
            _ => {}
        }
        if let Some(p) = s.strip_prefix("ba_") {
            return ModalityPair::parse(p).map(DropTerm::Pair);
        }
        if let Some(m) = s.strip_prefix("n_z") {
            let mut c = m.chars();
            let tag = c.next()?;
            return if c.next().is_none() {
                Modality::from_tag(tag).map(DropTerm::Nce)
            } else {
                None
            };
        }
        None
    }

    /// Comma-separated list; empty items are ignored.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| DropTerm::parse(t).ok_or_else(|| Error::Config(format!("unknown ablation term `{}`", t.trim()))))
            .collect()
    }

    pub fn tag(self) -> String {
        match self {
            DropTerm::Pair(p) => format!("ba_{}", p.tag()),
            DropTerm::Lba => "lba".into(),
            DropTerm::Nce(m) => format!("n_z{}", m.tag()),
            DropTerm::Lcpc => "lcpc".into(),
            DropTerm::History => "history".into(),
            DropTerm::Gmm => "gmm".into(),
        }
    }
}

impl TryFrom<String> for DropTerm {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        DropTerm::parse(&s).ok_or_else(|| format!("unknown ablation term `{s}`"))
    }
}

impl From<DropTerm> for String {
    fn from(d: DropTerm) -> String {
        d.tag()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_lld: f64,
    pub lr_main: f64,
    pub alpha: f64,
    pub beta: f64,
    pub memory_size_batches: usize,
    pub grad_clip: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub stage1_fraction: f64,
    /// Skip the entropy term while memory is cold instead of failing.
    pub warmup: bool,
    pub drop: Vec<DropTerm>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_lld: 5e-3,
            lr_main: 1e-3,
            alpha: 0.3,
            beta: 0.1,
            memory_size_batches: 1,
            grad_clip: 5.0,
            epochs: 20,
            patience: 5,
            seed: 0,
            stage1_fraction: 1.0,
            warmup: true,
            drop: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_lld", self.lr_lld), ("lr_main", self.lr_main), ("grad_clip", self.grad_clip)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative and finite, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.stage1_fraction > 0.0 && self.stage1_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "stage1_fraction must lie in (0, 1], got {}",
                self.stage1_fraction
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn memory_capacity(&self) -> usize {
        if self.drop.contains(&DropTerm::History) {
            0
        } else {
            self.memory_size_batches * self.batch_size
        }
    }

    /// Loss options for joint training once the model layout is known.
    pub fn loss_options(&self, model: &Model) -> LossOptions {
        let d = &self.drop;
        let ba_on = self.beta > 0.0 && !d.contains(&DropTerm::Lba);
        let cpc_on = self.alpha > 0.0 && !d.contains(&DropTerm::Lcpc);
        LossOptions {
            weights: self.weights(),
            predictor_weights: Weights::Frozen,
            entropy_model: if d.contains(&DropTerm::Gmm) {
                EntropyModel::Pooled
            } else {
                EntropyModel::PolarityMixture
            },
            warmup: self.warmup,
            active_pairs: model
                .predictors
                .iter()
                .map(|p| ba_on && !d.contains(&DropTerm::Pair(p.pair)))
                .collect(),
            active_nce: Modality::ALL.map(|m| cpc_on && !d.contains(&DropTerm::Nce(m))),
        }
    }
}

/// Rescales `grads` in place to global L2 norm at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_gradients(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    norm
}

pub fn global_norm(grads: &[Matrix]) -> f64 {
    grads.iter().map(Matrix::squared_norm).sum::<f64>().sqrt()
}

fn gather(grads: &Gradients, store: &ParamStore, ids: &[ParamId]) -> Vec<Matrix> {
    ids.iter()
        .map(|&id| {
            grads.param(id).cloned().unwrap_or_else(|| {
                let (r, c) = store.value(id).shape();
                Matrix::zeros(r, c)
            })
        })
        .collect()
}

/// Losses of one joint-training step. Inactive terms are recorded as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub task: f64,
    pub ba: f64,
    pub cpc: f64,
    pub lld: f64,
    pub nce: [f64; 3],
    pub warmup: bool,
    pub grad_norm: f64,
    pub batch_size: usize,
}

pub const STEPS_HEADER: &str = "step,epoch,task,ba,cpc,lld,n_zt,n_zv,n_za,warmup,grad_norm,batch_size";

pub fn steps_to_csv(steps: &[StepRecord]) -> String {
    let mut s = String::from(STEPS_HEADER);
    s.push('\n');
    for r in steps {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.task,
            r.ba,
            r.cpc,
            r.lld,
            r.nce[0],
            r.nce[1],
            r.nce[2],
            u8::from(r.warmup),
            r.grad_norm,
            r.batch_size
        );
    }
    s
}

pub fn steps_from_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == STEPS_HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: "missing step log header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(bad(format!("expected 12 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| bad(format!("field {}: {e}", k + 1)));
        let int = |k: usize| f[k].parse::<usize>().map_err(|e| bad(format!("field {}: {e}", k + 1)));
        out.push(StepRecord {
            step: int(0)?,
            epoch: int(1)?,
            task: num(2)?,
            ba: num(3)?,
            cpc: num(4)?,
            lld: num(5)?,
            nce: [num(6)?, num(7)?, num(8)?],
            warmup: int(9)? != 0,
            grad_norm: num(10)?,
            batch_size: int(11)?,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub interval: usize,
    pub task: f64,
    pub ba: f64,
    pub cpc: f64,
    pub lld: f64,
}

/// Loss means over consecutive `TRACE_INTERVAL`-step windows of joint training.
/// A trailing incomplete window is not reported.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn from_steps(steps: &[StepRecord]) -> Self {
        let rows = steps
            .chunks_exact(TRACE_INTERVAL)
            .enumerate()
            .map(|(interval, w)| {
                let n = TRACE_INTERVAL as f64;
                let mean = |f: fn(&StepRecord) -> f64| w.iter().map(f).sum::<f64>() / n;
                TraceRow {
                    interval,
                    task: mean(|r| r.task),
                    ba: mean(|r| r.ba),
                    cpc: mean(|r| r.cpc),
                    lld: mean(|r| r.lld),
                }
            })
            .collect();
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("interval,task,ba,cpc,lld\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.interval, r.task, r.ba, r.cpc, r.lld);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Report {
    pub mean_lld: f64,
    pub samples_visited: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage1_lld: Option<f64>,
    pub train_task: Option<f64>,
    pub val_mae: f64,
    /// Absent when the validation predictions are degenerate (e.g. constant).
    pub val_metrics: Option<MetricReport>,
}

pub fn evaluate(model: &Model, data: &[RawSample], exec: Execution) -> Result<(f64, Option<MetricReport>)> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let preds = model.predict(data, exec)?;
    let truths: Vec<f64> = data.iter().map(|s| s.label).collect();
    Ok((mae(&preds, &truths), compute_metrics(&preds, &truths).ok()))
}

/// Training state over one training split.
pub struct Trainer<'a> {
    pub model: Model,
    pub config: TrainConfig,
    data: &'a [RawSample],
    memories: [HistoryMemory; 3],
    opts: LossOptions,
    predictor_ids: Vec<ParamId>,
    main_ids: Vec<ParamId>,
    predictor_opt: Adam,
    main_opt: Adam,
    stage1_rng: Rng,
    stage2_rng: Rng,
    steps: Vec<StepRecord>,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(model_config: ModelConfig, config: TrainConfig, data: &'a [RawSample]) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyBatch);
        }
        for s in data {
            s.validate()?;
        }
        let root = Rng::new(config.seed);
        let model = Model::new(model_config, root.derive(0).next_u64())?;
        Ok(Self::from_model(model, config, data, &root))
    }

    fn from_model(model: Model, config: TrainConfig, data: &'a [RawSample], root: &Rng) -> Self {
        let predictor_ids = model.store.ids_where(|g| g.is_predictor());
        let main_ids = model.store.ids_where(|g| !g.is_predictor());
        let predictor_opt = Adam::new(&model.store, predictor_ids.clone(), AdamConfig::default());
        let main_opt = Adam::new(&model.store, main_ids.clone(), AdamConfig::default());
        let cap = config.memory_capacity();
        let opts = config.loss_options(&model);
        Self {
            memories: [HistoryMemory::new(cap), HistoryMemory::new(cap), HistoryMemory::new(cap)],
            opts,
            predictor_ids,
            main_ids,
            predictor_opt,
            main_opt,
            stage1_rng: root.derive(1),
            stage2_rng: root.derive(2),
            steps: Vec::new(),
            epoch: 0,
            model,
            config,
            data,
        }
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn memory(&self, m: Modality) -> &HistoryMemory {
        &self.memories[m.index()]
    }

    pub fn loss_options(&self) -> &LossOptions {
        &self.opts
    }

    fn batches(&self, order: &[usize]) -> Vec<Vec<usize>> {
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Likelihood maximization of the predictors on a reshuffled subset of
    /// `⌈fraction · N⌉` samples. Embeddings enter as constants.
    pub fn stage1_epoch(&mut self) -> Result<Stage1Report> {
        let n = self.data.len();
        let take = ((self.config.stage1_fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        self.stage1_rng.shuffle(&mut order);
        order.truncate(take);
        let mut total = 0.0;
        let batches = self.batches(&order);
        for idx in &batches {
            let samples: Vec<&RawSample> = idx.iter().map(|&i| &self.data[i]).collect();
            let mut g = Graph::new();
            let h = self.model.encode(&mut g, &samples, Weights::Frozen)?;
            let h = h.map(|id| g.detach(id));
            let loss = self.model.lld(&mut g, h, Weights::Live)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "likelihood loss {value} in stage 1 of epoch {}",
                    self.epoch + 1
                )));
            }
            let grads = g.backward(loss)?;
            let mut gs = gather(&grads, &self.model.store, &self.predictor_ids);
            clip_gradients(&mut gs, self.config.grad_clip);
            self.predictor_opt.step(&mut self.model.store, &gs, self.config.lr_lld);
            total += value;
        }
        Ok(Stage1Report {
            mean_lld: total / batches.len() as f64,
            samples_visited: take,
            steps: batches.len(),
        })
    }

    /// One pass of joint training over the shuffled data; predictors stay fixed.
    pub fn stage2_epoch(&mut self) -> Result<Vec<StepRecord>> {
        let mut order: Vec<usize> = (0..self.data.len()).collect();
        self.stage2_rng.shuffle(&mut order);
        let first = self.steps.len();
        for idx in self.batches(&order) {
            let record = self.stage2_step(&idx)?;
            self.steps.push(record);
        }
        Ok(self.steps[first..].to_vec())
    }

    fn stage2_step(&mut self, idx: &[usize]) -> Result<StepRecord> {
        let samples: Vec<&RawSample> = idx.iter().map(|&i| &self.data[i]).collect();
        let mut g = Graph::new();
        let nodes = self.model.losses(&mut g, &samples, &self.memories, &self.opts)?;
        let main = g.value(nodes.main).item();
        let step = self.steps.len();
        if !main.is_finite() {
            return Err(Error::NonFiniteLoss(format!(
                "main loss {main} at joint step {step} (epoch {})",
                self.epoch + 1
            )));
        }
        // memory is updated after estimation, for each modality an active bound targets
        let mut targets: Vec<Modality> = Vec::new();
        for (p, &on) in self.model.predictors.iter().zip(&self.opts.active_pairs) {
            if on && !targets.contains(&p.pair.y) {
                targets.push(p.pair.y);
            }
        }
        for m in targets {
            let h = g.value(nodes.embeddings[m.index()]).clone();
            self.memories[m.index()].update(&h, &nodes.classes);
        }
        let grads = g.backward(nodes.main)?;
        let mut gs = gather(&grads, &self.model.store, &self.main_ids);
        let grad_norm = clip_gradients(&mut gs, self.config.grad_clip);
        self.main_opt.step(&mut self.model.store, &gs, self.config.lr_main);

        let value = |n: Option<_>| n.map_or(0.0, |id| g.value(id).item());
        Ok(StepRecord {
            step,
            epoch: self.epoch + 1,
            task: g.value(nodes.task).item(),
            ba: value(nodes.ba),
            cpc: value(nodes.cpc),
            lld: g.value(nodes.lld).item(),
            nce: nodes.nce.map(value),
            warmup: nodes.warmup,
            grad_norm,
            batch_size: idx.len(),
        })
    }

    /// Stage 1 then stage 2.
    pub fn epoch(&mut self) -> Result<(Stage1Report, Vec<StepRecord>)> {
        let s1 = self.stage1_epoch()?;
        let s2 = self.stage2_epoch()?;
        self.epoch += 1;
        Ok((s1, s2))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with minimum validation MAE (epoch 0 is the initialization).
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub trace: LossTrace,
}

/// Full training run with early stopping on validation MAE: stops once more than
/// `patience` consecutive epochs fail to improve, or at the epoch limit.
pub fn train(
    model_config: ModelConfig,
    config: TrainConfig,
    train_data: &[RawSample],
    val_data: &[RawSample],
    exec: Execution,
) -> Result<TrainOutcome> {
    if val_data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut trainer = Trainer::new(model_config, config, train_data)?;
    let (val0, m0) = evaluate(&trainer.model, val_data, exec)?;
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        stage1_lld: None,
        train_task: None,
        val_mae: val0,
        val_metrics: m0,
    }];
    let mut best = trainer.model.clone();
    let mut best_epoch = 0;
    let mut best_val = val0;
    let mut stale = 0;
    for epoch in 1..=trainer.config.epochs {
        let (s1, s2) = trainer.epoch()?;
        let (val, metrics) = evaluate(&trainer.model, val_data, exec)?;
        let task = s2.iter().map(|r| r.task).sum::<f64>() / s2.len() as f64;
        epochs.push(EpochRecord {
            epoch,
            stage1_lld: Some(s1.mean_lld),
            train_task: Some(task),
            val_mae: val,
            val_metrics: metrics,
        });
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = trainer.model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale > trainer.config.patience {
                break;
            }
        }
    }
    let trace = LossTrace::from_steps(trainer.steps());
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_mae: best_val,
        epochs,
        steps: trainer.steps,
        trace,
    })
}
