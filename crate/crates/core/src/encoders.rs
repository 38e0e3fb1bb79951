//! Per-modality sequence encoders: raw feature sequences to fixed-length embeddings.
//!
//! Each modality runs a single-layer unidirectional LSTM and keeps the final
//! hidden state. Text is either a token-id sequence looked up in a trainable
//! embedding table, or a sequence of precomputed vectors fed straight to the cell.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::{weight_node, Weights};
use crate::numeric::{Matrix, Rng};
use crate::params::{glorot, ParamGroup, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "t")]
    Text,
    #[serde(rename = "v")]
    Visual,
    #[serde(rename = "a")]
    Acoustic,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Visual, Modality::Acoustic];

    pub fn tag(self) -> char {
        match self {
            Modality::Text => 't',
            Modality::Visual => 'v',
            Modality::Acoustic => 'a',
        }
    }

    pub fn from_tag(c: char) -> Option<Self> {
        match c {
            't' => Some(Modality::Text),
            'v' => Some(Modality::Visual),
            'a' => Some(Modality::Acoustic),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Modality::Text => 0,
            Modality::Visual => 1,
            Modality::Acoustic => 2,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TextInput {
    Tokens(Vec<usize>),
    Vectors(Matrix),
}

impl TextInput {
    pub fn len(&self) -> usize {
        match self {
            TextInput::Tokens(t) => t.len(),
            TextInput::Vectors(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One clip: three feature sequences and a sentiment label in `[-3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub id: String,
    pub label: f64,
    pub text: TextInput,
    pub visual: Matrix,
    pub acoustic: Matrix,
}

impl RawSample {
    pub fn validate(&self) -> Result<()> {
        if !self.label.is_finite() {
            return Err(Error::InvalidArgument(format!("sample {}: label not finite", self.id)));
        }
        if self.text.is_empty() || self.visual.rows() == 0 || self.acoustic.rows() == 0 {
            return Err(Error::InvalidArgument(format!("sample {}: empty sequence", self.id)));
        }
        let text_ok = match &self.text {
            TextInput::Tokens(_) => true,
            TextInput::Vectors(m) => m.is_finite(),
        };
        if !text_ok || !self.visual.is_finite() || !self.acoustic.is_finite() {
            return Err(Error::InvalidArgument(format!("sample {}: non-finite feature", self.id)));
        }
        Ok(())
    }

    pub fn sequence(&self, m: Modality) -> Option<&Matrix> {
        match m {
            Modality::Text => match &self.text {
                TextInput::Vectors(v) => Some(v),
                TextInput::Tokens(_) => None,
            },
            Modality::Visual => Some(&self.visual),
            Modality::Acoustic => Some(&self.acoustic),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnimodalEmbedding {
    pub modality: Modality,
    pub vector: Vec<f64>,
}

/// LSTM cell with fused gate weights: `[x; h] · W + b`, gate columns ordered `i, f, o, g`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        group: ParamGroup,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            glorot(rng, input_dim + hidden_dim, 4 * hidden_dim),
        );
        let bias = store.add(format!("{name}.bias"), group, Matrix::zeros(1, 4 * hidden_dim));
        Self {
            weight,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    /// Runs the recurrence over padded time steps. `steps[t]` is `n × input_dim`;
    /// row `i` stops updating once `t ≥ lengths[i]`. Returns the `n × hidden_dim`
    /// final hidden states.
    pub fn run(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        steps: &[NodeId],
        lengths: &[usize],
        mode: Weights,
    ) -> Result<NodeId> {
        let n = lengths.len();
        let d = self.hidden_dim;
        if steps.is_empty() || lengths.contains(&0) {
            return Err(Error::InvalidArgument("sequences must have length ≥ 1".into()));
        }
        let w = weight_node(g, store, self.weight, mode);
        let b = weight_node(g, store, self.bias, mode);
        let mut h = g.constant(Matrix::zeros(n, d));
        let mut c = g.constant(Matrix::zeros(n, d));
        for (t, &x) in steps.iter().enumerate() {
            if g.value(x).shape() != (n, self.input_dim) {
                return Err(Error::DimensionMismatch(format!(
                    "LSTM step {t}: expected {n}x{}, got {:?}",
                    self.input_dim,
                    g.value(x).shape()
                )));
            }
            let xh = g.concat_cols(&[x, h])?;
            let pre = g.matmul(xh, w)?;
            let pre = g.add_row(pre, b)?;
            let i_pre = g.slice_cols(pre, 0, d)?;
            let f_pre = g.slice_cols(pre, d, d)?;
            let o_pre = g.slice_cols(pre, 2 * d, d)?;
            let g_pre = g.slice_cols(pre, 3 * d, d)?;
            let ig = g.sigmoid(i_pre);
            let fg = g.sigmoid(f_pre);
            let og = g.sigmoid(o_pre);
            let cand = g.tanh(g_pre);
            let keep = g.mul(fg, c)?;
            let write = g.mul(ig, cand)?;
            let c_new = g.add(keep, write)?;
            let c_act = g.tanh(c_new);
            let h_new = g.mul(og, c_act)?;
            let mask: Vec<bool> = lengths.iter().map(|&l| t < l).collect();
            if mask.iter().all(|&m| m) {
                h = h_new;
                c = c_new;
            } else {
                h = g.select_rows(h_new, h, &mask)?;
                c = g.select_rows(c_new, c, &mask)?;
            }
        }
        Ok(h)
    }

    /// Final hidden state over padded real-valued sequences.
    pub fn encode_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        seqs: &[&Matrix],
        mode: Weights,
    ) -> Result<NodeId> {
        let (steps, lengths) = pack_sequences(seqs, self.input_dim)?;
        let nodes: Vec<NodeId> = steps.into_iter().map(|m| g.constant(m)).collect();
        self.run(g, store, &nodes, &lengths, mode)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

/// Right-pads sequences with zero rows into per-step `n × width` matrices.
pub fn pack_sequences(seqs: &[&Matrix], width: usize) -> Result<(Vec<Matrix>, Vec<usize>)> {
    let lengths: Vec<usize> = seqs.iter().map(|s| s.rows()).collect();
    if let Some(s) = seqs.iter().find(|s| s.cols() != width) {
        return Err(Error::DimensionMismatch(format!(
            "sequence width {} but encoder expects {width}",
            s.cols()
        )));
    }
    let max_len = lengths.iter().copied().max().unwrap_or(0);
    let steps = (0..max_len)
        .map(|t| {
            let mut m = Matrix::zeros(seqs.len(), width);
            for (i, s) in seqs.iter().enumerate() {
                if t < s.rows() {
                    m.row_mut(i).copy_from_slice(s.row(t));
                }
            }
            m
        })
        .collect();
    Ok((steps, lengths))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextMode {
    Tokens { vocab_size: usize, embed_dim: usize },
    Vectors { input_dim: usize },
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub mode: TextMode,
    pub embedding: Option<ParamId>,
    pub lstm: LstmCell,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, mode: TextMode, hidden_dim: usize) -> Self {
        let group = ParamGroup::TextEncoder;
        match mode {
            TextMode::Tokens {
                vocab_size,
                embed_dim,
            } => {
                let table = Matrix::from_vec(
                    vocab_size,
                    embed_dim,
                    (0..vocab_size * embed_dim).map(|_| 0.1 * rng.normal()).collect(),
                )
                .expect("shape");
                let embedding = Some(store.add("text.embedding", group, table));
                let lstm = LstmCell::new(store, rng, "text.lstm", group, embed_dim, hidden_dim);
                Self {
                    mode,
                    embedding,
                    lstm,
                }
            }
            TextMode::Vectors { input_dim } => {
                let lstm = LstmCell::new(store, rng, "text.lstm", group, input_dim, hidden_dim);
                Self {
                    mode,
                    embedding: None,
                    lstm,
                }
            }
        }
    }

    pub fn encode_batch(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        texts: &[&TextInput],
        mode: Weights,
    ) -> Result<NodeId> {
        match self.mode {
            TextMode::Vectors { .. } => {
                let seqs = texts
                    .iter()
                    .map(|t| match t {
                        TextInput::Vectors(m) => Ok(m),
                        TextInput::Tokens(_) => Err(Error::InvalidArgument(
                            "token text given to a vector-input text encoder".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.lstm.encode_batch(g, store, &seqs, mode)
            }
            TextMode::Tokens { vocab_size, .. } => {
                let ids = texts
                    .iter()
                    .map(|t| match t {
                        TextInput::Tokens(ids) => {
                            if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
                                Err(Error::UnknownToken {
                                    id: bad,
                                    vocab: vocab_size,
                                })
                            } else {
                                Ok(ids.as_slice())
                            }
                        }
                        TextInput::Vectors(_) => Err(Error::InvalidArgument(
                            "vector text given to a token-input text encoder".into(),
                        )),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let table = weight_node(g, store, self.embedding.expect("token mode"), mode);
                let lengths: Vec<usize> = ids.iter().map(|s| s.len()).collect();
                let max_len = lengths.iter().copied().max().unwrap_or(0);
                let mut steps = Vec::with_capacity(max_len);
                for t in 0..max_len {
                    let rows: Vec<usize> =
                        ids.iter().map(|s| s.get(t).copied().unwrap_or(0)).collect();
                    steps.push(g.gather_rows(table, &rows)?);
                }
                self.lstm.run(g, store, &steps, &lengths, mode)
            }
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.embedding.into_iter().chain(self.lstm.params()).collect()
    }
}

/// Final hidden state of `cell` over one sequence.
pub fn lstm_forward(cell: &LstmCell, store: &ParamStore, seq: &Matrix) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let h = cell.encode_batch(&mut g, store, &[seq], Weights::Frozen)?;
    Ok(g.value(h).as_slice().to_vec())
}

pub fn encode_text(enc: &TextEncoder, store: &ParamStore, text: &TextInput) -> Result<UnimodalEmbedding> {
    let mut g = Graph::new();
    let h = enc.encode_batch(&mut g, store, &[text], Weights::Frozen)?;
    Ok(UnimodalEmbedding {
        modality: Modality::Text,
        vector: g.value(h).as_slice().to_vec(),
    })
}

pub fn encode_sequence(
    cell: &LstmCell,
    store: &ParamStore,
    seq: &Matrix,
    modality: Modality,
) -> Result<UnimodalEmbedding> {
    Ok(UnimodalEmbedding {
        modality,
        vector: lstm_forward(cell, store, seq)?,
    })
}
