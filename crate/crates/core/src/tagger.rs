//! Plain recurrent tagger: one output symbol right after each input symbol.

use crate::cells::{CellParams, Variant};
use crate::error::{Error, Result};
use crate::graph::{Eval, Graph, ParamId, ParamStore};
use crate::optim::init_params;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::seq2seq::{uniform_len, ModelConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct TaggerModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    embed: ParamId,
    cell: CellParams,
    out_w: ParamId,
    out_b: ParamId,
}

impl<T: Scalar> TaggerModel<T> {
    /// Zero-initialized tagger. The `attention` flag of `config` must be off.
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.attention {
            return Err(Error::Config("a tagger has no attention".into()));
        }
        if config.hidden == 0 || config.embedding == 0 || config.vocab == 0 {
            return Err(Error::Config(format!("invalid tagger sizes {config:?}")));
        }
        let (d, e, v) = (config.hidden, config.embedding, config.vocab);
        let mut params = ParamStore::new();
        let embed = params.add("tagger.embedding", Tensor::zeros(&[v, e]));
        let cell = CellParams::register(&mut params, config.variant, "tagger", d, e);
        let out_w = params.add("output.w", Tensor::zeros(&[v, d]));
        let out_b = params.add("output.b", Tensor::zeros(&[v]));
        Ok(TaggerModel {
            config,
            params,
            embed,
            cell,
            out_w,
            out_b,
        })
    }

    pub fn initialized(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let mut m = Self::new(config)?;
        init_params(&mut m.params, rng)?;
        Ok(m)
    }

    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut m = Self::new(config)?;
        if params.len() != m.params.len()
            || m.params
                .iter()
                .zip(params.iter())
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape())
        {
            return Err(Error::Format("tagger tensors do not match the configuration".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
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

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    /// Per-position logits (`batch x vocab`) for equal-length inputs.
    pub fn logits<G: Graph<T>>(&self, g: &mut G, inputs: &[Vec<usize>]) -> Result<Vec<G::Node>> {
        let n = uniform_len(inputs, "tagger input")?;
        if let Some(&bad) = inputs.iter().flatten().find(|&&i| i >= self.config.vocab) {
            return Err(Error::Vocabulary(format!("index {bad} outside vocabulary")));
        }
        let table = g.param(self.embed);
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let mut state = self.cell.zero_state(g, inputs.len(), self.config.hidden);
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let column: Vec<usize> = inputs.iter().map(|s| s[t]).collect();
            let x = g.gather(&table, &column)?;
            state = self.cell.step(g, &state, &x)?;
            out.push(g.linear(&state.h, &w, &b)?);
        }
        Ok(out)
    }

    /// Mean per-position cross-entropy.
    pub fn loss<G: Graph<T>>(&self, g: &mut G, inputs: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<G::Node> {
        let logits = self.logits(g, inputs)?;
        if uniform_len(targets, "tagger target")? != logits.len() || targets.len() != inputs.len() {
            return Err(Error::Contract("tagger targets must align with inputs".into()));
        }
        let mut terms = Vec::with_capacity(logits.len());
        for (t, l) in logits.iter().enumerate() {
            let column: Vec<usize> = targets.iter().map(|y| y[t]).collect();
            terms.push(g.softmax_xent(l, &column)?);
        }
        let all = g.concat(&terms, 0)?;
        let total = g.sum(&all);
        let tokens = targets.iter().map(Vec::len).sum::<usize>();
        Ok(g.scale(&total, T::one() / T::lit(tokens as f64)))
    }

    /// Argmax symbol after each input symbol. Runs without recording, so very
    /// long inputs only keep the current state alive.
    pub fn tag(&self, inputs: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
        let n = uniform_len(inputs, "tagger input")?;
        let mut g = Eval::new(&self.params);
        let table = g.param(self.embed);
        let w = g.param(self.out_w);
        let b = g.param(self.out_b);
        let mut state = self.cell.zero_state(&mut g, inputs.len(), self.config.hidden);
        let mut out = vec![Vec::with_capacity(n); inputs.len()];
        for t in 0..n {
            let column: Vec<usize> = inputs.iter().map(|s| s[t]).collect();
            if let Some(&bad) = column.iter().find(|&&i| i >= self.config.vocab) {
                return Err(Error::Vocabulary(format!("index {bad} outside vocabulary")));
            }
            let x = g.gather(&table, &column)?;
            state = self.cell.step(&mut g, &state, &x)?;
            let logits = g.linear(&state.h, &w, &b)?;
            for (o, s) in out.iter_mut().zip(logits.argmax_rows()) {
                o.push(s);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab;

    #[test]
    fn output_length_matches_input() {
        let m = TaggerModel::<f64>::initialized(ModelConfig::new(Variant::Gru, false, 4, 3), &mut Rng::new(1)).unwrap();
        let out = m.tag(&[vocab::encode("hello").unwrap()]).unwrap();
        assert_eq!(out[0].len(), 5);
    }

    #[test]
    fn zero_params_emit_bias_argmax() {
        let mut m = TaggerModel::<f64>::new(ModelConfig::new(Variant::Srnn, false, 4, 3)).unwrap();
        let (_, b) = m.output_layer();
        let mut bias = vec![0.0; 28];
        bias[7] = 1.0;
        *m.params_mut().get_mut(b) = Tensor::vector(&bias);
        let out = m.tag(&[vocab::encode("abcxyz").unwrap()]).unwrap();
        assert_eq!(out[0], vec![7; 6]);
    }

    #[test]
    fn tiny_parameter_counts() {
        let counts: Vec<usize> = Variant::ALL
            .iter()
            .map(|&v| TaggerModel::<f64>::new(ModelConfig::new(v, false, 4, 3)).unwrap().count_parameters())
            .collect();
        // embedding 28*3, output 28*4+28, cell blocks of 4*7+4
        assert_eq!(counts, vec![256, 320, 352]);
        assert!(TaggerModel::<f64>::new(ModelConfig::new(Variant::Srnn, true, 4, 3)).is_err());
    }
}
