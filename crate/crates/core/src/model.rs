//! The assembled network: encoders, variational predictors, fusion, head and reverse
//! predictors over one parameter store, plus the per-batch loss graph.

use serde::{Deserialize, Serialize};

use crate::cpc::{self, ReversePredictor};
use crate::encoders::{LstmCell, Modality, RawSample, TextEncoder, TextInput, TextMode};
use crate::error::{Error, Result};
use crate::fusion::{self, FusionNetwork, LossWeights, RegressionHead};
use crate::gmm::{component_counts, entropy_term, EntropyModel, HistoryMemory, Polarity};
use crate::graph::{Graph, NodeId};
use crate::mi_ba::{ModalityPair, VariationalPredictor};
use crate::nn::Weights;
use crate::numeric::{Matrix, Rng};
use crate::par::{self, Execution};
use crate::params::{ParamGroup, ParamStore};

/// Rows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub text: TextMode,
    pub visual_dim: usize,
    pub acoustic_dim: usize,
    pub text_hidden: usize,
    pub visual_hidden: usize,
    pub acoustic_hidden: usize,
    pub fusion_dim: usize,
    pub fusion_hidden: usize,
    pub head_hidden: usize,
    pub predictor_hidden: usize,
    pub reverse_hidden: usize,
    pub ba_pairs: Vec<ModalityPair>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text: TextMode::Vectors { input_dim: 8 },
            visual_dim: 6,
            acoustic_dim: 4,
            text_hidden: 64,
            visual_hidden: 32,
            acoustic_hidden: 32,
            fusion_dim: 128,
            fusion_hidden: 128,
            head_hidden: 64,
            predictor_hidden: 64,
            reverse_hidden: 64,
            ba_pairs: vec![ModalityPair::TV, ModalityPair::TA],
        }
    }
}

impl ModelConfig {
    pub fn embedding_dims(&self) -> [usize; 3] {
        [self.text_hidden, self.visual_hidden, self.acoustic_hidden]
    }

    pub fn validate(&self) -> Result<()> {
        let text_in = match self.text {
            TextMode::Tokens { vocab_size, embed_dim } => vocab_size.min(embed_dim),
            TextMode::Vectors { input_dim } => input_dim,
        };
        let dims = [
            ("text input", text_in),
            ("visual_dim", self.visual_dim),
            ("acoustic_dim", self.acoustic_dim),
            ("text_hidden", self.text_hidden),
            ("visual_hidden", self.visual_hidden),
            ("acoustic_hidden", self.acoustic_hidden),
            ("fusion_dim", self.fusion_dim),
            ("fusion_hidden", self.fusion_hidden),
            ("head_hidden", self.head_hidden),
            ("predictor_hidden", self.predictor_hidden),
            ("reverse_hidden", self.reverse_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.ba_pairs.is_empty() {
            return Err(Error::Config("at least one modality pair is required".into()));
        }
        for (i, p) in self.ba_pairs.iter().enumerate() {
            if self.ba_pairs[..i].contains(p) {
                return Err(Error::Config(format!("modality pair {} listed twice", p.tag())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub text: TextEncoder,
    pub visual: LstmCell,
    pub acoustic: LstmCell,
    /// One per entry of `config.ba_pairs`, same order.
    pub predictors: Vec<VariationalPredictor>,
    pub fusion: FusionNetwork,
    pub head: RegressionHead,
    pub reverse: ReversePredictor,
}

/// Which optional loss terms a step builds. Terms left out contribute nothing to the
/// graph, so a zero weight and a dropped term give identical updates.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOptions {
    pub weights: LossWeights,
    /// `Frozen` during joint training so the predictors receive no gradient.
    pub predictor_weights: Weights,
    pub entropy_model: EntropyModel,
    /// Skip the entropy term while a class has fewer than two samples instead of failing.
    pub warmup: bool,
    /// Per configured pair.
    pub active_pairs: Vec<bool>,
    /// Per modality, `Modality::ALL` order.
    pub active_nce: [bool; 3],
}

impl LossOptions {
    pub fn all_active(model: &Model, weights: LossWeights) -> Self {
        Self {
            weights,
            predictor_weights: Weights::Frozen,
            entropy_model: EntropyModel::PolarityMixture,
            warmup: true,
            active_pairs: vec![true; model.predictors.len()],
            active_nce: [true; 3],
        }
    }
}

/// Nodes of one joint-training step.
#[derive(Clone, Debug)]
pub struct LossNodes {
    pub embeddings: [NodeId; 3],
    pub fusion: NodeId,
    pub prediction: NodeId,
    pub task: NodeId,
    /// Per configured pair, `n × 1` log-likelihoods.
    pub log_q: Vec<NodeId>,
    /// `−Σ mean log q` over all configured pairs.
    pub lld: NodeId,
    /// Per configured pair, `None` when the pair is inactive.
    pub i_ba: Vec<Option<NodeId>>,
    pub ba: Option<NodeId>,
    pub nce: [Option<NodeId>; 3],
    pub cpc: Option<NodeId>,
    pub main: NodeId,
    /// The entropy term was skipped for at least one pair.
    pub warmup: bool,
    pub classes: Vec<Polarity>,
}

/// Per-sample fusion-to-modality agreement and prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScores {
    pub id: String,
    pub cosine: [f64; 3],
    pub score: [f64; 3],
    pub prediction: f64,
    pub truth: f64,
}

fn text_input(s: &RawSample) -> &TextInput {
    &s.text
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut store = ParamStore::new();
        let [dt, dv, da] = config.embedding_dims();
        let text = TextEncoder::new(&mut store, &mut rng, config.text, dt);
        let visual = LstmCell::new(&mut store, &mut rng, "visual.lstm", ParamGroup::VisualEncoder, config.visual_dim, dv);
        let acoustic = LstmCell::new(
            &mut store,
            &mut rng,
            "acoustic.lstm",
            ParamGroup::AcousticEncoder,
            config.acoustic_dim,
            da,
        );
        let dims = config.embedding_dims();
        let predictors = config
            .ba_pairs
            .iter()
            .map(|&p| {
                VariationalPredictor::new(
                    &mut store,
                    &mut rng,
                    p,
                    dims[p.x.index()],
                    dims[p.y.index()],
                    config.predictor_hidden,
                )
            })
            .collect();
        let fusion = FusionNetwork::new(&mut store, &mut rng, dims, config.fusion_hidden, config.fusion_dim);
        let head = RegressionHead::new(&mut store, &mut rng, config.fusion_dim, config.head_hidden);
        let reverse = ReversePredictor::new(&mut store, &mut rng, config.fusion_dim, dims, config.reverse_hidden);
        Ok(Self {
            config,
            store,
            text,
            visual,
            acoustic,
            predictors,
            fusion,
            head,
            reverse,
        })
    }

    /// Rebuilds the layout from `config` and installs saved values, checking names,
    /// groups and shapes one by one.
    pub fn with_params(config: ModelConfig, params: Vec<(String, ParamGroup, Matrix)>) -> Result<Self> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.store.len() {
            return Err(Error::CorruptFile(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                params.len()
            )));
        }
        let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
        for (id, (name, group, value)) in ids.into_iter().zip(params) {
            let p = model.store.get(id);
            if p.name != name || p.group != group || p.value.shape() != value.shape() {
                return Err(Error::CorruptFile(format!(
                    "parameter `{name}` {:?} does not match `{}` {:?}",
                    value.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !value.is_finite() {
                return Err(Error::CorruptFile(format!("parameter `{name}` is not finite")));
            }
            *model.store.value_mut(id) = value;
        }
        Ok(model)
    }

    /// Unimodal embeddings `(h_t, h_v, h_a)`, each `n × d_m`.
    pub fn encode(&self, g: &mut Graph, samples: &[&RawSample], mode: Weights) -> Result<[NodeId; 3]> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let texts: Vec<&TextInput> = samples.iter().map(|s| text_input(s)).collect();
        let ht = self.text.encode_batch(g, &self.store, &texts, mode)?;
        let vis: Vec<&Matrix> = samples.iter().map(|s| &s.visual).collect();
        let hv = self.visual.encode_batch(g, &self.store, &vis, mode)?;
        let ac: Vec<&Matrix> = samples.iter().map(|s| &s.acoustic).collect();
        let ha = self.acoustic.encode_batch(g, &self.store, &ac, mode)?;
        Ok([ht, hv, ha])
    }

    /// `L_lld` over all configured pairs for embeddings already on the tape.
    pub fn lld(&self, g: &mut Graph, h: [NodeId; 3], mode: Weights) -> Result<NodeId> {
        let pairs: Vec<(&VariationalPredictor, NodeId, NodeId)> = self
            .predictors
            .iter()
            .map(|p| (p, h[p.pair.x.index()], h[p.pair.y.index()]))
            .collect();
        crate::mi_ba::lld_loss_node(g, &self.store, &pairs, mode)
    }

    /// Builds the joint-training loss for one batch. `memories` is indexed by modality;
    /// only the targets of active pairs are read.
    pub fn losses(
        &self,
        g: &mut Graph,
        samples: &[&RawSample],
        memories: &[HistoryMemory; 3],
        opts: &LossOptions,
    ) -> Result<LossNodes> {
        if opts.active_pairs.len() != self.predictors.len() {
            return Err(Error::Config(format!(
                "{} pair flags for {} configured pairs",
                opts.active_pairs.len(),
                self.predictors.len()
            )));
        }
        let h = self.encode(g, samples, Weights::Live)?;
        let classes: Vec<Polarity> = samples.iter().map(|s| Polarity::of_label(s.label)).collect();

        let mut log_q = Vec::with_capacity(self.predictors.len());
        let mut i_ba = Vec::with_capacity(self.predictors.len());
        let mut lld: Option<NodeId> = None;
        let mut ba: Option<NodeId> = None;
        let mut warmup = false;
        for (pred, &active) in self.predictors.iter().zip(&opts.active_pairs) {
            let (xi, yi) = (pred.pair.x.index(), pred.pair.y.index());
            let lq = pred.log_likelihood(g, &self.store, h[xi], h[yi], opts.predictor_weights)?;
            let mean = g.mean(lq);
            let neg = g.scale(mean, -1.0);
            lld = Some(match lld {
                None => neg,
                Some(t) => g.add(t, neg)?,
            });
            log_q.push(lq);
            if !active {
                i_ba.push(None);
                continue;
            }
            let memory = &memories[yi];
            let counts = component_counts(&classes, memory, opts.entropy_model);
            let bound = if opts.warmup && counts.iter().any(|&c| c < 2) {
                warmup = true;
                mean
            } else {
                let entropy = entropy_term(g, h[yi], &classes, memory, opts.entropy_model)?;
                g.add(mean, entropy.node)?
            };
            i_ba.push(Some(bound));
            let neg = g.scale(bound, -1.0);
            ba = Some(match ba {
                None => neg,
                Some(t) => g.add(t, neg)?,
            });
        }

        let z = self.fusion.fuse(g, &self.store, h, Weights::Live)?;
        let prediction = self.head.predict(g, &self.store, z, Weights::Live)?;
        let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
        let truth = g.constant(Matrix::column_vector(&labels));
        let task = fusion::task_loss_node(g, prediction, truth)?;

        let mut nce = [None; 3];
        let mut cpc: Option<NodeId> = None;
        for m in Modality::ALL {
            if !opts.active_nce[m.index()] {
                continue;
            }
            let p = self.reverse.forward(g, &self.store, z, m, Weights::Live)?;
            let l = cpc::nce_loss_node(g, p, h[m.index()])?;
            nce[m.index()] = Some(l);
            cpc = Some(match cpc {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }

        let mut main = task;
        if let Some(c) = cpc {
            let w = g.scale(c, opts.weights.alpha);
            main = g.add(main, w)?;
        }
        if let Some(b) = ba {
            let w = g.scale(b, opts.weights.beta);
            main = g.add(main, w)?;
        }
        Ok(LossNodes {
            embeddings: h,
            fusion: z,
            prediction,
            task,
            log_q,
            lld: lld.expect("validated nonempty pairs"),
            i_ba,
            ba,
            nce,
            cpc,
            main,
            warmup,
            classes,
        })
    }

    fn chunked<R: Send>(
        &self,
        samples: &[RawSample],
        exec: Execution,
        f: impl Fn(&[&RawSample]) -> Result<Vec<R>> + Sync + Send,
    ) -> Result<Vec<R>> {
        let bounds = par::chunks(samples.len(), EVAL_CHUNK);
        let parts = par::map(exec, &bounds, |&(s, e)| {
            let refs: Vec<&RawSample> = samples[s..e].iter().collect();
            f(&refs)
        });
        let mut out = Vec::with_capacity(samples.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    /// Predictions for every sample, in order.
    pub fn predict(&self, samples: &[RawSample], exec: Execution) -> Result<Vec<f64>> {
        self.chunked(samples, exec, |batch| {
            let mut g = Graph::new();
            let h = self.encode(&mut g, batch, Weights::Frozen)?;
            let z = self.fusion.fuse(&mut g, &self.store, h, Weights::Frozen)?;
            let y = self.head.predict(&mut g, &self.store, z, Weights::Frozen)?;
            Ok(g.value(y).as_slice().to_vec())
        })
    }

    /// Reverse-prediction cosines and scores against each sample's own embeddings.
    pub fn sample_scores(&self, samples: &[RawSample], exec: Execution) -> Result<Vec<SampleScores>> {
        self.chunked(samples, exec, |batch| {
            let mut g = Graph::new();
            let h = self.encode(&mut g, batch, Weights::Frozen)?;
            let z = self.fusion.fuse(&mut g, &self.store, h, Weights::Frozen)?;
            let y = self.head.predict(&mut g, &self.store, z, Weights::Frozen)?;
            let mut cos = Vec::with_capacity(3);
            for m in Modality::ALL {
                let p = self.reverse.forward(&mut g, &self.store, z, m, Weights::Frozen)?;
                cos.push(cpc::paired_cosines(g.value(p), g.value(h[m.index()]))?);
            }
            Ok(batch
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let cosine = [cos[0][i], cos[1][i], cos[2][i]];
                    SampleScores {
                        id: s.id.clone(),
                        cosine,
                        score: cosine.map(f64::exp),
                        prediction: g.value(y).as_slice()[i],
                        truth: s.label,
                    }
                })
                .collect())
        })
    }
}
