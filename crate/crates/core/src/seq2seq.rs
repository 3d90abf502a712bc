//! Encoder-decoder model with optional global additive attention.
//!
//! The encoder reads `<s> w </s>`; the decoder starts from the encoder's final
//! state and the start symbol. With attention, the decoder input at each step
//! is `[embedding; context]`, where the context is computed from the previous
//! decoder hidden state. The output layer only sees the decoder hidden state.

use serde::{Deserialize, Serialize};

use crate::cells::{CellParams, CellState, Variant};
use crate::error::{Error, Result};
use crate::graph::{expect_len, Eval, Graph, ParamId, ParamStore};
use crate::optim::init_params;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};
use crate::vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub attention: bool,
    pub hidden: usize,
    pub embedding: usize,
    /// Vocabulary size; the last two indices are the start and end symbols.
    pub vocab: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, attention: bool, hidden: usize, embedding: usize) -> Self {
        ModelConfig {
            variant,
            attention,
            hidden,
            embedding,
            vocab: vocab::SIZE,
        }
    }

    pub fn start(&self) -> usize {
        self.vocab - 2
    }

    pub fn end(&self) -> usize {
        self.vocab - 1
    }

    fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embedding == 0 || self.vocab < 2 {
            return Err(Error::Config(format!("invalid model sizes {self:?}")));
        }
        Ok(())
    }

    /// Closed-form parameter count for this configuration.
    pub fn parameter_count(&self) -> usize {
        let (d, e, v) = (self.hidden, self.embedding, self.vocab);
        let gates = self.variant.gate_blocks();
        let dec_in = if self.attention { e + d } else { e };
        let embeddings = 2 * v * e;
        let encoder = gates * (d * (d + e) + d);
        let decoder = gates * (d * (d + dec_in) + d);
        let output = v * d + v;
        let attention = if self.attention { 2 * d * d + d } else { 0 };
        embeddings + encoder + decoder + output + attention
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionParams {
    /// `hidden x 2*hidden`, applied to `[h_dec; h_enc]`.
    pub w: ParamId,
    /// `1 x hidden`.
    pub v: ParamId,
}

#[derive(Clone, Debug)]
pub struct Seq2SeqModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    enc_embed: ParamId,
    dec_embed: ParamId,
    encoder: CellParams,
    decoder: CellParams,
    out_w: ParamId,
    out_b: ParamId,
    attention: Option<AttentionParams>,
}

/// Encoder results for a batch of equal-length inputs.
pub struct Encoded<N> {
    /// Hidden states stacked position-major: `(T * batch) x hidden`.
    pub stacked: N,
    /// `stacked * W_enc^T`, the encoder half of the attention projection.
    pub keys: Option<N>,
    pub positions: usize,
    pub batch: usize,
    pub last: CellState<N>,
}

impl<T: Scalar> Seq2SeqModel<T> {
    /// Zero-initialized model.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, e, v) = (config.hidden, config.embedding, config.vocab);
        let mut params = ParamStore::new();
        let enc_embed = params.add("encoder.embedding", Tensor::zeros(&[v, e]));
        let dec_embed = params.add("decoder.embedding", Tensor::zeros(&[v, e]));
        let encoder = CellParams::register(&mut params, config.variant, "encoder", d, e);
        let dec_in = if config.attention { e + d } else { e };
        let decoder = CellParams::register(&mut params, config.variant, "decoder", d, dec_in);
        let out_w = params.add("output.w", Tensor::zeros(&[v, d]));
        let out_b = params.add("output.b", Tensor::zeros(&[v]));
        let attention = config.attention.then(|| AttentionParams {
            w: params.add("attention.w", Tensor::zeros(&[d, 2 * d])),
            v: params.add("attention.v", Tensor::zeros(&[1, d])),
        });
        Ok(Seq2SeqModel {
            config,
            params,
            enc_embed,
            dec_embed,
            encoder,
            decoder,
            out_w,
            out_b,
            attention,
        })
    }

    /// Xavier-initialized weights, zero biases.
    pub fn initialized(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::new(config)?;
        init_params(&mut m.params, rng)?;
        Ok(m)
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config)?;
        if params.len() != m.params.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                m.params.len(),
                params.len()
            )));
        }
        for ((n1, t1), (n2, t2)) in m.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Format(format!(
                    "tensor {n2} {:?} does not match expected {n1} {:?}",
                    t2.shape(),
                    t1.shape()
                )));
            }
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn output_layer(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    pub fn attention_params(&self) -> Option<AttentionParams> {
        self.attention
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    fn check_indices(&self, seqs: &[Vec<usize>]) -> Result<()> {
        for &i in seqs.iter().flatten() {
            if i >= self.config.vocab {
                return Err(Error::Vocabulary(format!(
                    "index {i} outside vocabulary of {}",
                    self.config.vocab
                )));
            }
        }
        Ok(())
    }

    /// Runs the encoder over a batch of equal-length index sequences (markers included).
    pub fn encode_batch<G: Graph<T>>(&self, g: &mut G, inputs: &[Vec<usize>]) -> Result<Encoded<G::Node>> {
        let positions = uniform_len(inputs, "encoder input")?;
        self.check_indices(inputs)?;
        let batch = inputs.len();
        let table = g.param(self.enc_embed);
        let mut state = self.encoder.zero_state(g, batch, self.config.hidden);
        let mut hs = Vec::with_capacity(positions);
        for t in 0..positions {
            let column: Vec<usize> = inputs.iter().map(|s| s[t]).collect();
            let x = g.gather(&table, &column)?;
            state = self.encoder.step(g, &state, &x)?;
            hs.push(state.h.clone());
        }
        let stacked = g.concat(&hs, 0)?;
        let keys = match self.attention {
            Some(a) => {
                let w = g.param(a.w);
                let w_enc = g.slice_cols(&w, self.config.hidden, 2 * self.config.hidden)?;
                Some(g.matmul_bt(&stacked, &w_enc)?)
            }
            None => None,
        };
        Ok(Encoded {
            stacked,
            keys,
            positions,
            batch,
            last: state,
        })
    }

    /// Attention weights (`batch x T`) for decoder states `h_dec` (`batch x hidden`).
    pub fn attend<G: Graph<T>>(&self, g: &mut G, enc: &Encoded<G::Node>, h_dec: &G::Node) -> Result<G::Node> {
        let (a, keys) = match (self.attention, &enc.keys) {
            (Some(a), Some(k)) => (a, k.clone()),
            _ => return Err(Error::Contract("model has no attention".into())),
        };
        let w = g.param(a.w);
        let w_dec = g.slice_cols(&w, 0, self.config.hidden)?;
        let q = g.matmul_bt(h_dec, &w_dec)?;
        let pre = g.add_tiled(&keys, &q)?;
        let u = g.tanh(&pre);
        let v = g.param(a.v);
        let s = g.matmul_bt(&u, &v)?;
        let scores = g.blocks_to_rows(&s, enc.positions)?;
        g.softmax_rows(&scores)
    }

    fn decoder_step<G: Graph<T>>(
        &self,
        g: &mut G,
        enc: &Encoded<G::Node>,
        state: &CellState<G::Node>,
        tokens: &[usize],
    ) -> Result<(CellState<G::Node>, G::Node)> {
        let table = g.param(self.dec_embed);
        let emb = g.gather(&table, tokens)?;
        let x = if self.attention.is_some() {
            let a = self.attend(g, enc, &state.h)?;
            let ctx = g.weighted_block_sum(&a, &enc.stacked)?;
            g.concat(&[emb, ctx], 1)?
        } else {
            emb
        };
        let next = self.decoder.step(g, state, &x)?;
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let logits = g.linear(&next.h, &w, &b)?;
        Ok((next, logits))
    }

    /// Teacher-forced logits: the decoder reads `<s>, y_1, ..., y_{n-1}` and
    /// produces one `batch x vocab` logit matrix per target position.
    pub fn decode_teacher_forced<G: Graph<T>>(
        &self,
        g: &mut G,
        enc: &Encoded<G::Node>,
        targets: &[Vec<usize>],
    ) -> Result<Vec<G::Node>> {
        let steps = uniform_len(targets, "target")?;
        if steps == 0 {
            return Err(Error::Contract("empty target".into()));
        }
        if targets.len() != enc.batch {
            return Err(Error::Dimension(format!(
                "{} targets for a batch of {}",
                targets.len(),
                enc.batch
            )));
        }
        self.check_indices(targets)?;
        let mut state = enc.last.clone();
        let mut tokens = vec![self.config.start(); enc.batch];
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let (next, logits) = self.decoder_step(g, enc, &state, &tokens)?;
            out.push(logits);
            state = next;
            tokens = targets.iter().map(|y| y[t]).collect();
        }
        Ok(out)
    }

    /// Greedy argmax decoding for exactly `steps` symbols.
    pub fn decode_fixed_length<G: Graph<T>>(
        &self,
        g: &mut G,
        enc: &Encoded<G::Node>,
        steps: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let mut state = enc.last.clone();
        let mut tokens = vec![self.config.start(); enc.batch];
        let mut out = vec![Vec::with_capacity(steps); enc.batch];
        for _ in 0..steps {
            let (next, logits) = self.decoder_step(g, enc, &state, &tokens)?;
            tokens = g.value(&logits).argmax_rows();
            for (o, &t) in out.iter_mut().zip(&tokens) {
                o.push(t);
            }
            state = next;
        }
        Ok(out)
    }

    /// Mean per-token cross-entropy of a teacher-forced batch.
    pub fn loss<G: Graph<T>>(&self, g: &mut G, inputs: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<G::Node> {
        let total = self.summed_loss(g, inputs, targets)?;
        let tokens = targets.iter().map(Vec::len).sum::<usize>();
        Ok(g.scale(&total, T::one() / T::lit(tokens as f64)))
    }

    /// Summed per-token cross-entropy of a teacher-forced batch.
    pub fn summed_loss<G: Graph<T>>(&self, g: &mut G, inputs: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<G::Node> {
        let enc = self.encode_batch(g, inputs)?;
        let logits = self.decode_teacher_forced(g, &enc, targets)?;
        let mut terms = Vec::with_capacity(logits.len());
        for (t, l) in logits.iter().enumerate() {
            let column: Vec<usize> = targets.iter().map(|y| y[t]).collect();
            terms.push(g.softmax_xent(l, &column)?);
        }
        let all = g.concat(&terms, 0)?;
        Ok(g.sum(&all))
    }

    /// Greedy outputs for marker-wrapped inputs, no recording.
    pub fn greedy(&self, inputs: &[Vec<usize>], steps: usize) -> Result<Vec<Vec<usize>>> {
        let mut g = Eval::new(&self.params);
        let enc = self.encode_batch(&mut g, inputs)?;
        self.decode_fixed_length(&mut g, &enc, steps)
    }

    /// Single-example encoder pass: hidden states as `T x hidden` and the final state.
    pub fn encode(&self, input: &[usize]) -> Result<(Tensor<T>, CellState<Tensor<T>>)> {
        let mut g = Eval::new(&self.params);
        let enc = self.encode_batch(&mut g, &[input.to_vec()])?;
        let last = CellState {
            h: enc.last.h.as_ref().clone().reshape(&[self.config.hidden])?,
            c: match &enc.last.c {
                Some(c) => Some(c.as_ref().clone().reshape(&[self.config.hidden])?),
                None => None,
            },
        };
        Ok((enc.stacked.as_ref().clone(), last))
    }

    /// `v_a . tanh(W_a [h_dec; h_enc])`.
    pub fn score(&self, h_dec: &Tensor<T>, h_enc: &Tensor<T>) -> Result<T> {
        let a = self
            .attention
            .ok_or_else(|| Error::Contract("model has no attention".into()))?;
        let d = self.config.hidden;
        expect_len(h_dec, d, "decoder state")?;
        expect_len(h_enc, d, "encoder state")?;
        let joint = tensor::concat(&[h_dec, h_enc], 0)?.reshape(&[1, 2 * d])?;
        let u = tensor::tanh(&tensor::matmul_bt(&joint, self.params.get(a.w))?);
        tensor::matmul_bt(&u, self.params.get(a.v))?.item()
    }

    /// Attention weights for one decoder state against encoder states `T x hidden`.
    pub fn attention_weights(&self, h_dec: &Tensor<T>, h_enc: &Tensor<T>) -> Result<Tensor<T>> {
        if self.attention.is_none() {
            return Err(Error::Contract("model has no attention".into()));
        }
        let d = self.config.hidden;
        expect_len(h_dec, d, "decoder state")?;
        let (t, d2) = h_enc.dims2()?;
        if d2 != d {
            return Err(Error::Dimension(format!("encoder states {:?}", h_enc.shape())));
        }
        let mut g = Eval::new(&self.params);
        let stacked = g.constant(h_enc.clone());
        let w = g.param(self.attention.unwrap().w);
        let w_enc = g.slice_cols(&w, d, 2 * d)?;
        let keys = g.matmul_bt(&stacked, &w_enc)?;
        let enc = Encoded {
            stacked,
            keys: Some(keys),
            positions: t,
            batch: 1,
            last: CellState { h: g.constant(Tensor::zeros(&[1, d])), c: None },
        };
        let q = g.constant(h_dec.clone().reshape(&[1, d])?);
        let a = self.attend(&mut g, &enc, &q)?;
        a.as_ref().clone().reshape(&[t])
    }

    pub fn params_into(self) -> ParamStore<T> {
        self.params
    }
}

/// Convex combination `sum_i a_i * H[i]` of encoder states `T x hidden`.
pub fn context_vector<T: Scalar>(weights: &Tensor<T>, h_enc: &Tensor<T>) -> Result<Tensor<T>> {
    let (t, d) = h_enc.dims2()?;
    if weights.len() != t {
        return Err(Error::Dimension(format!(
            "{} weights for {t} encoder states",
            weights.len()
        )));
    }
    let a = weights.clone().reshape(&[1, t])?;
    tensor::weighted_block_sum(&a, h_enc)?.reshape(&[d])
}

pub(crate) fn uniform_len(seqs: &[Vec<usize>], what: &str) -> Result<usize> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::Contract(format!("empty {what} batch")))?
        .len();
    if seqs.iter().any(|s| s.len() != first) {
        return Err(Error::Contract(format!("{what} batch mixes lengths")));
    }
    Ok(first)
}
