use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::init;
use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => kernels::relu(x),
        }
    }

    pub fn apply_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Fully connected layer `act(W x + b)`; parameters `<name>.w` `[out, in]`
/// and `<name>.b` `[out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Dense {
    /// Registers fresh parameters: fan-in uniform weights scaled by `gain`,
    /// zero bias.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add(
            &format!("{name}.w"),
            &[out_dim, in_dim],
            init::fan_in_uniform(rng, out_dim, in_dim, gain),
        )?;
        let b = store.add_zeros(&format!("{name}.b"), &[out_dim])?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
            activation,
        })
    }

    /// Binds to parameters already present in `store`.
    pub fn lookup(store: &ParamStore, name: &str, activation: Activation) -> Result<Self> {
        let w = store.id(&format!("{name}.w"))?;
        let b = store.id(&format!("{name}.b"))?;
        let (out_dim, in_dim) = match store.get(w).shape() {
            [o, i] => (*o, *i),
            s => return Err(NnError::Format(format!("`{name}.w` has shape {s:?}"))),
        };
        if store.get(b).len() != out_dim {
            return Err(NnError::shape(format!("`{name}.b`"), out_dim, store.get(b).len()));
        }
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(NnError::shape(
                format!("dense `{}`", store.get(self.w).name()),
                self.in_dim,
                x.len(),
            ));
        }
        let mut out = vec![0.0; self.out_dim];
        kernels::affine(store.value(self.w), Some(store.value(self.b)), x, &mut out);
        if self.activation != Activation::Identity {
            out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        }
        Ok(out)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let y = tape.affine(self.w, Some(self.b), x)?;
        Ok(self.activation.apply_tape(tape, y))
    }

    /// Same map applied independently to each row of a row-major matrix.
    pub fn forward_rows(&self, store: &ParamStore, x: &[f64], rows: usize) -> Result<Vec<f64>> {
        if x.len() != rows * self.in_dim {
            return Err(NnError::shape("dense rows", rows * self.in_dim, x.len()));
        }
        let mut out = vec![0.0; rows * self.out_dim];
        for r in 0..rows {
            let o = &mut out[r * self.out_dim..(r + 1) * self.out_dim];
            kernels::affine(
                store.value(self.w),
                Some(store.value(self.b)),
                &x[r * self.in_dim..(r + 1) * self.in_dim],
                o,
            );
            if self.activation != Activation::Identity {
                o.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        Ok(out)
    }

    pub fn forward_rows_tape(&self, tape: &mut Tape, x: Var, rows: usize) -> Result<Var> {
        let y = tape.affine_rows(self.w, Some(self.b), x, rows)?;
        Ok(self.activation.apply_tape(tape, y))
    }
}

/// Stack of [`Dense`] layers named `<name>.l0`, `<name>.l1`, ...
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last layer
    /// uses `last`.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden: Activation,
        last: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { last } else { hidden };
                Dense::register(store, &format!("{name}.l{i}"), dims[i], dims[i + 1], act, 1.0, rng)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn lookup(
        store: &ParamStore,
        name: &str,
        depth: usize,
        hidden: Activation,
        last: Activation,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| {
                let act = if i + 1 == depth { last } else { hidden };
                Dense::lookup(store, &format!("{name}.l{i}"), act)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.forward(store, &h)?;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            h = l.forward_tape(tape, h)?;
        }
        Ok(h)
    }
}

/// Gated recurrent unit with gate order (reset, update, candidate):
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// u  = σ(W_iu x + b_iu + W_hu h + b_hu)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − u) ⊙ n + u ⊙ h
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gru {
    pub w_ih: ParamId,
    pub b_ih: ParamId,
    pub w_hh: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    /// Orthogonal weight blocks per gate, zero biases.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut w_ih = Vec::with_capacity(3 * hidden * input);
        let mut w_hh = Vec::with_capacity(3 * hidden * hidden);
        for _ in 0..3 {
            w_ih.extend(init::orthogonal(rng, hidden, input, 1.0));
        }
        for _ in 0..3 {
            w_hh.extend(init::orthogonal(rng, hidden, hidden, 1.0));
        }
        let w_ih = store.add(&format!("{name}.w_ih"), &[3 * hidden, input], w_ih)?;
        let b_ih = store.add_zeros(&format!("{name}.b_ih"), &[3 * hidden])?;
        let w_hh = store.add(&format!("{name}.w_hh"), &[3 * hidden, hidden], w_hh)?;
        let b_hh = store.add_zeros(&format!("{name}.b_hh"), &[3 * hidden])?;
        Ok(Self {
            w_ih,
            b_ih,
            w_hh,
            b_hh,
            input,
            hidden,
        })
    }

    pub fn lookup(store: &ParamStore, name: &str) -> Result<Self> {
        let w_ih = store.id(&format!("{name}.w_ih"))?;
        let w_hh = store.id(&format!("{name}.w_hh"))?;
        let (input, hidden) = match (store.get(w_ih).shape(), store.get(w_hh).shape()) {
            ([g, i], [g2, h]) if *g == 3 * h && *g2 == 3 * h => (*i, *h),
            (a, b) => {
                return Err(NnError::Format(format!(
                    "GRU `{name}` has inconsistent shapes {a:?} / {b:?}"
                )))
            }
        };
        Ok(Self {
            w_ih,
            b_ih: store.id(&format!("{name}.b_ih"))?,
            w_hh,
            b_hh: store.id(&format!("{name}.b_hh"))?,
            input,
            hidden,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input {
            return Err(NnError::shape("GRU input", self.input, x.len()));
        }
        if h.len() != self.hidden {
            return Err(NnError::shape("GRU hidden", self.hidden, h.len()));
        }
        let hd = self.hidden;
        let mut gi = vec![0.0; 3 * hd];
        let mut gh = vec![0.0; 3 * hd];
        kernels::affine(store.value(self.w_ih), Some(store.value(self.b_ih)), x, &mut gi);
        kernels::affine(store.value(self.w_hh), Some(store.value(self.b_hh)), h, &mut gh);
        let out = (0..hd)
            .map(|k| {
                let r = kernels::sigmoid(gi[k] + gh[k]);
                let u = kernels::sigmoid(gi[hd + k] + gh[hd + k]);
                let n = (gi[2 * hd + k] + r * gh[2 * hd + k]).tanh();
                (1.0 - u) * n + u * h[k]
            })
            .collect();
        Ok(out)
    }

    pub fn forward_tape(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let hd = self.hidden;
        if tape.value(h).len() != hd {
            return Err(NnError::shape("GRU hidden", hd, tape.value(h).len()));
        }
        let gi = tape.affine(self.w_ih, Some(self.b_ih), x)?;
        let gh = tape.affine(self.w_hh, Some(self.b_hh), h)?;
        let gi_r = tape.slice(gi, 0, hd)?;
        let gi_u = tape.slice(gi, hd, hd)?;
        let gi_n = tape.slice(gi, 2 * hd, hd)?;
        let gh_r = tape.slice(gh, 0, hd)?;
        let gh_u = tape.slice(gh, hd, hd)?;
        let gh_n = tape.slice(gh, 2 * hd, hd)?;
        let pre_r = tape.add(gi_r, gh_r);
        let r = tape.sigmoid(pre_r);
        let pre_u = tape.add(gi_u, gh_u);
        let u = tape.sigmoid(pre_u);
        let rn = tape.mul(r, gh_n);
        let pre_n = tape.add(gi_n, rn);
        let n = tape.tanh(pre_n);
        let keep = tape.one_minus(u);
        let a = tape.mul(keep, n);
        let b = tape.mul(u, h);
        Ok(tape.add(a, b))
    }
}
