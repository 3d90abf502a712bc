//! Recurrent state transitions (simple RNN, LSTM, GRU).
//!
//! Every weight matrix is stored `hidden x (hidden + input)` and applied to
//! the row-vector concatenation `[h; x]`, hidden block first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Srnn,
    Gru,
    Lstm,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Srnn, Variant::Gru, Variant::Lstm];

    /// Number of `(W, b)` blocks in one cell.
    pub fn gate_blocks(self) -> usize {
        match self {
            Variant::Srnn => 1,
            Variant::Gru => 3,
            Variant::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Srnn => "srnn",
            Variant::Gru => "gru",
            Variant::Lstm => "lstm",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Variant::Srnn => 0,
            Variant::Gru => 1,
            Variant::Lstm => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Variant> {
        match c {
            0 => Ok(Variant::Srnn),
            1 => Ok(Variant::Gru),
            2 => Ok(Variant::Lstm),
            _ => Err(Error::Format(format!("unknown variant code {c}"))),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s.to_ascii_lowercase().as_str() {
            "srnn" => Ok(Variant::Srnn),
            "gru" => Ok(Variant::Gru),
            "lstm" => Ok(Variant::Lstm),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrnnParams {
    pub hidden: Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub cell: Affine,
    pub output: Affine,
    pub forget: Affine,
    pub input: Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruParams {
    pub candidate: Affine,
    pub update: Affine,
    pub reset: Affine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellParams {
    Srnn(SrnnParams),
    Gru(GruParams),
    Lstm(LstmParams),
}

/// Hidden state, plus the memory cell for LSTM.
#[derive(Clone, Debug)]
pub struct CellState<N> {
    pub h: N,
    pub c: Option<N>,
}

fn register<T: Scalar>(store: &mut ParamStore<T>, name: &str, hidden: usize, input: usize) -> Affine {
    let w = store.add(format!("{name}.w"), Tensor::zeros(&[hidden, hidden + input]));
    let b = store.add(format!("{name}.b"), Tensor::zeros(&[hidden]));
    Affine { w, b }
}

impl CellParams {
    /// Registers zero-valued cell parameters under `prefix`.
    pub fn register<T: Scalar>(
        store: &mut ParamStore<T>,
        variant: Variant,
        prefix: &str,
        hidden: usize,
        input: usize,
    ) -> CellParams {
        match variant {
            Variant::Srnn => CellParams::Srnn(SrnnParams {
                hidden: register(store, &format!("{prefix}.hidden"), hidden, input),
            }),
            Variant::Lstm => CellParams::Lstm(LstmParams {
                cell: register(store, &format!("{prefix}.cell"), hidden, input),
                output: register(store, &format!("{prefix}.output_gate"), hidden, input),
                forget: register(store, &format!("{prefix}.forget_gate"), hidden, input),
                input: register(store, &format!("{prefix}.input_gate"), hidden, input),
            }),
            Variant::Gru => CellParams::Gru(GruParams {
                candidate: register(store, &format!("{prefix}.candidate"), hidden, input),
                update: register(store, &format!("{prefix}.update_gate"), hidden, input),
                reset: register(store, &format!("{prefix}.reset_gate"), hidden, input),
            }),
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            CellParams::Srnn(_) => Variant::Srnn,
            CellParams::Gru(_) => Variant::Gru,
            CellParams::Lstm(_) => Variant::Lstm,
        }
    }

    pub fn affines(&self) -> Vec<Affine> {
        match self {
            CellParams::Srnn(p) => vec![p.hidden],
            CellParams::Lstm(p) => vec![p.cell, p.output, p.forget, p.input],
            CellParams::Gru(p) => vec![p.candidate, p.update, p.reset],
        }
    }

    /// Zero state for a batch of `batch` rows.
    pub fn zero_state<T: Scalar, G: Graph<T>>(&self, g: &mut G, batch: usize, hidden: usize) -> CellState<G::Node> {
        let h = g.constant(Tensor::zeros(&[batch, hidden]));
        let c = matches!(self, CellParams::Lstm(_)).then(|| g.constant(Tensor::zeros(&[batch, hidden])));
        CellState { h, c }
    }

    pub fn step<T: Scalar, G: Graph<T>>(
        &self,
        g: &mut G,
        state: &CellState<G::Node>,
        x: &G::Node,
    ) -> Result<CellState<G::Node>> {
        match self {
            CellParams::Srnn(p) => srnn_step(g, p, state, x),
            CellParams::Lstm(p) => lstm_step(g, p, state, x),
            CellParams::Gru(p) => gru_step(g, p, state, x),
        }
    }
}

fn affine<T: Scalar, G: Graph<T>>(g: &mut G, a: Affine, hx: &G::Node) -> Result<G::Node> {
    let w = g.param(a.w);
    let b = g.param(a.b);
    g.linear(hx, &w, &b)
}

/// `h' = tanh(W [h; x] + b)`
pub fn srnn_step<T: Scalar, G: Graph<T>>(
    g: &mut G,
    p: &SrnnParams,
    state: &CellState<G::Node>,
    x: &G::Node,
) -> Result<CellState<G::Node>> {
    let hx = g.concat(&[state.h.clone(), x.clone()], 1)?;
    let pre = affine(g, p.hidden, &hx)?;
    Ok(CellState { h: g.tanh(&pre), c: None })
}

/// Gates `o, f, i = sigmoid(.)`, candidate `tanh(.)`, `c' = f*c + i*cand`, `h' = o*tanh(c')`.
pub fn lstm_step<T: Scalar, G: Graph<T>>(
    g: &mut G,
    p: &LstmParams,
    state: &CellState<G::Node>,
    x: &G::Node,
) -> Result<CellState<G::Node>> {
    let c_prev = state
        .c
        .clone()
        .ok_or_else(|| Error::Contract("LSTM step needs a memory cell".into()))?;
    let hx = g.concat(&[state.h.clone(), x.clone()], 1)?;
    let cand_pre = affine(g, p.cell, &hx)?;
    let cand = g.tanh(&cand_pre);
    let o_pre = affine(g, p.output, &hx)?;
    let o = g.sigmoid(&o_pre);
    let f_pre = affine(g, p.forget, &hx)?;
    let f = g.sigmoid(&f_pre);
    let i_pre = affine(g, p.input, &hx)?;
    let i = g.sigmoid(&i_pre);
    let kept = g.mul(&f, &c_prev)?;
    let written = g.mul(&i, &cand)?;
    let c = g.add(&kept, &written)?;
    let tc = g.tanh(&c);
    let h = g.mul(&o, &tc)?;
    Ok(CellState { h, c: Some(c) })
}

/// Gates `z, r = sigmoid(.)`, candidate `tanh(W_h [r*h; x] + b_h)`, `h' = z*h + (1-z)*cand`.
pub fn gru_step<T: Scalar, G: Graph<T>>(
    g: &mut G,
    p: &GruParams,
    state: &CellState<G::Node>,
    x: &G::Node,
) -> Result<CellState<G::Node>> {
    let h = &state.h;
    let hx = g.concat(&[h.clone(), x.clone()], 1)?;
    let z_pre = affine(g, p.update, &hx)?;
    let z = g.sigmoid(&z_pre);
    let r_pre = affine(g, p.reset, &hx)?;
    let r = g.sigmoid(&r_pre);
    let rh = g.mul(&r, h)?;
    let rhx = g.concat(&[rh, x.clone()], 1)?;
    let cand_pre = affine(g, p.candidate, &rhx)?;
    let cand = g.tanh(&cand_pre);
    // z*h + (1-z)*cand == cand + z*(h - cand)
    let diff = g.sub(h, &cand)?;
    let zd = g.mul(&z, &diff)?;
    let h_new = g.add(&cand, &zd)?;
    Ok(CellState { h: h_new, c: None })
}

/// Unrolls a cell over `inputs` from the zero state; one state per input.
pub fn run_sequence<T: Scalar, G: Graph<T>>(
    g: &mut G,
    params: &CellParams,
    hidden: usize,
    inputs: &[G::Node],
) -> Result<Vec<CellState<G::Node>>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Contract("run_sequence needs a nonempty input".into()))?;
    let batch = g.value(first).dims2()?.0;
    let mut state = params.zero_state(g, batch, hidden);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        state = params.step(g, &state, x)?;
        out.push(state.clone());
    }
    Ok(out)
}
