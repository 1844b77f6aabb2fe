//! Recurrent and feed-forward building blocks on top of the tape.

use rand::Rng;

use super::params::{glorot_uniform, ParamId, ParamStore};
use super::tape::{AutodiffError, Tape, Var};
use super::tensor::{Shape, Tensor};

/// Gated recurrent unit weights.
///
/// `r = σ(W_r x + V_r h + b_r)`, `z = σ(W_z x + V_z h + b_z)`,
/// `c = tanh(W x + V (r ⊙ h) + b)`, `h' = (1 - z) ⊙ h + z ⊙ c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w_r: ParamId,
    pub v_r: ParamId,
    pub w_z: ParamId,
    pub v_z: ParamId,
    pub w: ParamId,
    pub v: ParamId,
    pub biases: Option<[ParamId; 3]>,
}

impl GruParams {
    /// Registers a freshly initialised GRU under `prefix` in the store.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        biases: bool,
        rng: &mut R,
    ) -> Self {
        let mut mat = |store: &mut ParamStore, name: &str, cols: usize| {
            store.add(format!("{prefix}.{name}"), glorot_uniform(hidden, cols, rng))
        };
        let w_r = mat(store, "w_r", input);
        let v_r = mat(store, "v_r", hidden);
        let w_z = mat(store, "w_z", input);
        let v_z = mat(store, "v_z", hidden);
        let w = mat(store, "w", input);
        let v = mat(store, "v", hidden);
        let biases = biases.then(|| {
            ["b_r", "b_z", "b"].map(|n| {
                store.add(format!("{prefix}.{n}"), Tensor::zeros(Shape::Vector(hidden)))
            })
        });
        GruParams {
            input,
            hidden,
            w_r,
            v_r,
            w_z,
            v_z,
            w,
            v,
            biases,
        }
    }
}

/// Two-layer perceptron `A2 · tanh(A1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub a1: ParamId,
    pub b1: ParamId,
    pub a2: ParamId,
    pub b2: ParamId,
}

impl MlpParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let a1 = store.add(format!("{prefix}.a1"), glorot_uniform(hidden, input, rng));
        let b1 = store.add(format!("{prefix}.b1"), Tensor::zeros(Shape::Vector(hidden)));
        let a2 = store.add(format!("{prefix}.a2"), glorot_uniform(output, hidden, rng));
        let b2 = store.add(format!("{prefix}.b2"), Tensor::zeros(Shape::Vector(output)));
        MlpParams {
            input,
            hidden,
            output,
            a1,
            b1,
            a2,
            b2,
        }
    }
}

fn check_len(tape: &Tape<'_>, v: Var, expected: usize, op: &'static str) -> Result<(), AutodiffError> {
    let actual = tape.shape(v);
    if actual.vector_len() == Some(expected) {
        Ok(())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            expected: Shape::Vector(expected),
            actual,
        })
    }
}

fn affine(tape: &mut Tape<'_>, w: ParamId, x: Var, v: ParamId, h: Var, b: Option<ParamId>) -> Var {
    let (w, v) = (tape.param(w), tape.param(v));
    let wx = tape.matvec(w, x);
    let vh = tape.matvec(v, h);
    let s = tape.add(wx, vh);
    match b {
        Some(b) => {
            let b = tape.param(b);
            tape.add(s, b)
        }
        None => s,
    }
}

/// One GRU transition.
pub fn gru_step(tape: &mut Tape<'_>, p: &GruParams, x: Var, h_prev: Var) -> Result<Var, AutodiffError> {
    check_len(tape, x, p.input, "gru_step input")?;
    check_len(tape, h_prev, p.hidden, "gru_step state")?;
    let [b_r, b_z, b_c] = match p.biases {
        Some(b) => b.map(Some),
        None => [None; 3],
    };
    let r_pre = affine(tape, p.w_r, x, p.v_r, h_prev, b_r);
    let r = tape.sigmoid(r_pre);
    let z_pre = affine(tape, p.w_z, x, p.v_z, h_prev, b_z);
    let z = tape.sigmoid(z_pre);
    let rh = tape.mul(r, h_prev);
    let c_pre = affine(tape, p.w, x, p.v, rh, b_c);
    let c = tape.tanh(c_pre);
    let keep = tape.one_minus(z);
    let old = tape.mul(keep, h_prev);
    let new = tape.mul(z, c);
    Ok(tape.add(old, new))
}

/// Runs the GRU over `inputs` from a zero state and returns every state.
pub fn gru_sequence(tape: &mut Tape<'_>, p: &GruParams, inputs: &[Var]) -> Result<Vec<Var>, AutodiffError> {
    let mut h = tape.zeros(p.hidden);
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        h = gru_step(tape, p, x, h)?;
        states.push(h);
    }
    Ok(states)
}

pub fn mlp_forward(tape: &mut Tape<'_>, p: &MlpParams, x: Var) -> Result<Var, AutodiffError> {
    check_len(tape, x, p.input, "mlp_forward")?;
    let (a1, b1, a2, b2) = (tape.param(p.a1), tape.param(p.b1), tape.param(p.a2), tape.param(p.b2));
    let h = tape.matvec(a1, x);
    let h = tape.add(h, b1);
    let h = tape.tanh(h);
    let y = tape.matvec(a2, h);
    Ok(tape.add(y, b2))
}
