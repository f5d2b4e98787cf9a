//! Two-level gated-attention MIL predictor.
//!
//! Both levels read the same bag through their own attention pooling:
//!
//! ```text
//! e_k   = w · (tanh(V^T z_k) ⊙ sigmoid(U^T z_k))
//! a     = softmax(e)
//! pool  = sum_k a_k z_k
//! ```
//!
//! The coarse head maps its pooled vector to three classes. The fine head
//! sees its pooled vector concatenated with a three-slot subsite block,
//! which holds the bag's subsite one-hot when the coarse argmax is
//! Serrated and zeros otherwise. The gate is a constant within a forward
//! pass, so no gradient flows through it.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Bag;
use crate::error::{Error, Result};
use crate::numkernel::{argmax, Tape, Tensor2, Var};
use crate::rng::{domain, stream};
use crate::taxonomy::{CoarseClass, N_COARSE, N_FINE};

pub const DEFAULT_ATTENTION_WIDTH: usize = 16;
pub const SUBSITE_SLOTS: usize = 3;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HMP1";

/// Softmax outputs of both heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbPair {
    pub coarse: [f64; N_COARSE],
    pub fine: [f64; N_FINE],
}

impl ProbPair {
    pub fn coarse_argmax(&self) -> CoarseClass {
        CoarseClass::ALL[argmax(&self.coarse)]
    }

    pub fn fine_argmax(&self) -> crate::taxonomy::FineClass {
        crate::taxonomy::FineClass::ALL[argmax(&self.fine)]
    }
}

/// Attention weights and pooled representation for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeResult {
    pub pooled: Vec<f64>,
    pub attention: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    /// `d x a`
    pub attn_v: Tensor2,
    /// `d x a`
    pub attn_u: Tensor2,
    /// `a x 1`
    pub attn_w: Tensor2,
    /// `in x classes`
    pub head_w: Tensor2,
    /// `1 x classes`
    pub head_b: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub attn_width: usize,
    pub coarse: LevelParams,
    pub fine: LevelParams,
}

pub const PARAM_NAMES: [&str; 10] = [
    "coarse.attn_v",
    "coarse.attn_u",
    "coarse.attn_w",
    "coarse.head_w",
    "coarse.head_b",
    "fine.attn_v",
    "fine.attn_u",
    "fine.attn_w",
    "fine.head_w",
    "fine.head_b",
];

fn uniform(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Tensor2 {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor2::from_vec(rows, cols, data).expect("shape")
}

impl LevelParams {
    fn init(d: usize, a: usize, head_in: usize, classes: usize, rng: &mut impl Rng) -> Self {
        LevelParams {
            attn_v: uniform(d, a, d, rng),
            attn_u: uniform(d, a, d, rng),
            attn_w: uniform(a, 1, a, rng),
            head_w: uniform(head_in, classes, head_in, rng),
            head_b: Tensor2::zeros(1, classes),
        }
    }

    fn tensors(&self) -> [&Tensor2; 5] {
        [&self.attn_v, &self.attn_u, &self.attn_w, &self.head_w, &self.head_b]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor2; 5] {
        [
            &mut self.attn_v,
            &mut self.attn_u,
            &mut self.attn_w,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }
}

impl ModelParams {
    /// Uniform `±1/sqrt(fan_in)` weights and zero biases.
    pub fn init(d: usize, a: usize, seed: u64) -> Result<Self> {
        if d < 2 || a < 1 {
            return Err(Error::Config(format!(
                "model needs d >= 2 and a >= 1, got d={d}, a={a}"
            )));
        }
        let mut rng = stream(seed, domain::INIT, 0);
        let coarse = LevelParams::init(d, a, d, N_COARSE, &mut rng);
        let fine = LevelParams::init(d, a, d + SUBSITE_SLOTS, N_FINE, &mut rng);
        Ok(ModelParams {
            dim: d,
            attn_width: a,
            coarse,
            fine,
        })
    }

    /// Parameter tensors in [`PARAM_NAMES`] order.
    pub fn tensors(&self) -> Vec<&Tensor2> {
        let mut v = self.coarse.tensors().to_vec();
        v.extend(self.fine.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut v: Vec<&mut Tensor2> = self.coarse.tensors_mut().into_iter().collect();
        v.extend(self.fine.tensors_mut());
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn expected_shapes(d: usize, a: usize) -> [(usize, usize); 10] {
        [
            (d, a),
            (d, a),
            (a, 1),
            (d, N_COARSE),
            (1, N_COARSE),
            (d, a),
            (d, a),
            (a, 1),
            (d + SUBSITE_SLOTS, N_FINE),
            (1, N_FINE),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let expected = Self::expected_shapes(self.dim, self.attn_width);
        for ((name, t), shape) in PARAM_NAMES.iter().zip(self.tensors()).zip(expected) {
            if t.shape() != shape {
                return Err(Error::Shape(format!(
                    "{name} is {}x{}, expected {}x{}",
                    t.rows(),
                    t.cols(),
                    shape.0,
                    shape.1
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// Checkpoint bytes: magic `HMP1`, `d` and `a` as u32, then per tensor
    /// a u32 name length, the name, u32 rows, u32 cols and the f64 payload,
    /// all little-endian.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.num_scalars() + 200);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.attn_width as u32).to_le_bytes());
        for (name, t) in PARAM_NAMES.iter().zip(self.tensors()) {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            buf.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for &x in t.data() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "bad magic, expected \"HMP1\""));
        }
        let d = r.u32()? as usize;
        let a = r.u32()? as usize;
        let mut params = ModelParams::init(d.max(2), a.max(1), 0)?;
        if d < 2 || a < 1 {
            return Err(Error::format(4, format!("invalid model dims d={d}, a={a}")));
        }
        let expected = Self::expected_shapes(d, a);
        {
            let mut slots = params.tensors_mut();
            for (i, name) in PARAM_NAMES.iter().enumerate() {
                let at = r.pos as u64;
                let len = r.u32()? as usize;
                let got = r.take(len)?;
                if got != name.as_bytes() {
                    return Err(Error::format(
                        at,
                        format!("expected tensor {name}, found {:?}", String::from_utf8_lossy(got)),
                    ));
                }
                let at = r.pos as u64;
                let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
                if (rows, cols) != expected[i] {
                    return Err(Error::format(
                        at,
                        format!("{name} is {rows}x{cols}, expected {}x{}", expected[i].0, expected[i].1),
                    ));
                }
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    let x = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    data.push(x);
                }
                *slots[i] = Tensor2::from_vec(rows, cols, data)?;
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after last tensor"));
        }
        params.dim = d;
        params.attn_width = a;
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated: needed {n} bytes at offset {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// How the subsite gate is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// Open iff the current coarse argmax is Serrated.
    Auto,
    /// Always closed (subsite disabled).
    Closed,
    /// Held at a given state, e.g. while finite-differencing.
    Fixed(bool),
}

impl Gate {
    pub fn from_subsite_flag(use_subsite: bool) -> Gate {
        if use_subsite {
            Gate::Auto
        } else {
            Gate::Closed
        }
    }
}

/// Parameter leaves registered on a tape, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub vars: Vec<Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        ParamVars {
            vars: params.tensors().into_iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Same values as constants, for inference-only passes.
    pub fn constants(tape: &mut Tape, params: &ModelParams) -> Self {
        ParamVars {
            vars: params.tensors().into_iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    fn level(&self, fine: bool) -> &[Var] {
        if fine {
            &self.vars[5..10]
        } else {
            &self.vars[0..5]
        }
    }
}

/// Handles to the interesting values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub coarse: Var,
    pub fine: Var,
    pub coarse_attention: Var,
    pub fine_attention: Var,
    pub coarse_pooled: Var,
    pub fine_pooled: Var,
    pub gate_open: bool,
    pub subsite_block: [f64; SUBSITE_SLOTS],
}

/// Attention pooling of `z` (`n x d`); returns `(attention n x 1, pooled 1 x d)`.
fn tape_encode(tape: &mut Tape, level: &[Var], z: Var) -> Result<(Var, Var)> {
    let (v, u, w) = (level[0], level[1], level[2]);
    let zv = tape.matmul(z, v)?;
    let tanh = tape.tanh(zv);
    let zu = tape.matmul(z, u)?;
    let gate = tape.sigmoid(zu);
    let h = tape.mul(tanh, gate)?;
    let scores = tape.matmul(h, w)?;
    let attention = tape.softmax(scores)?;
    let pooled = tape.weighted_pool(attention, z)?;
    Ok((attention, pooled))
}

/// Records a full forward pass for `bag`.
pub fn tape_forward(tape: &mut Tape, vars: &ParamVars, bag: &Bag, gate: Gate) -> Result<ForwardVars> {
    let d = tape.value(vars.vars[0]).rows();
    if bag.dim() != d {
        return Err(Error::Shape(format!(
            "bag {} has width {}, model expects {d}",
            bag.id,
            bag.dim()
        )));
    }
    let z = tape.constant(bag.features.clone());

    let coarse_level = vars.level(false);
    let (coarse_attention, coarse_pooled) = tape_encode(tape, coarse_level, z)?;
    let logits = tape.linear(coarse_pooled, coarse_level[3], coarse_level[4])?;
    let coarse = tape.softmax(logits)?;

    let gate_open = match gate {
        Gate::Auto => argmax(tape.value(coarse).data()) == CoarseClass::Serrated.index(),
        Gate::Closed => false,
        Gate::Fixed(open) => open,
    };
    let subsite_block = if gate_open {
        bag.subsite.one_hot()
    } else {
        [0.0; SUBSITE_SLOTS]
    };

    let fine_level = vars.level(true);
    let (fine_attention, fine_pooled) = tape_encode(tape, fine_level, z)?;
    let block = tape.constant(Tensor2::row_vector(&subsite_block));
    let head_in = tape.concat_cols(fine_pooled, block)?;
    let logits = tape.linear(head_in, fine_level[3], fine_level[4])?;
    let fine = tape.softmax(logits)?;

    Ok(ForwardVars {
        coarse,
        fine,
        coarse_attention,
        fine_attention,
        coarse_pooled,
        fine_pooled,
        gate_open,
        subsite_block,
    })
}

/// Everything [`predict`] computes for a bag.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: ProbPair,
    pub coarse_encoding: EncodeResult,
    pub fine_encoding: EncodeResult,
    pub gate_open: bool,
    /// What the fine head actually received in its subsite slots.
    pub subsite_block: [f64; SUBSITE_SLOTS],
}

pub(crate) fn probs_of(tape: &Tape, fwd: &ForwardVars) -> ProbPair {
    ProbPair {
        coarse: tape.value(fwd.coarse).data().try_into().expect("3 coarse"),
        fine: tape.value(fwd.fine).data().try_into().expect("7 fine"),
    }
}

pub fn predict(params: &ModelParams, bag: &Bag, gate: Gate) -> Result<Prediction> {
    let mut tape = Tape::new();
    let vars = ParamVars::constants(&mut tape, params);
    let fwd = tape_forward(&mut tape, &vars, bag, gate)?;
    let enc = |att: Var, pooled: Var| EncodeResult {
        attention: tape.value(att).data().to_vec(),
        pooled: tape.value(pooled).data().to_vec(),
    };
    Ok(Prediction {
        probs: probs_of(&tape, &fwd),
        coarse_encoding: enc(fwd.coarse_attention, fwd.coarse_pooled),
        fine_encoding: enc(fwd.fine_attention, fwd.fine_pooled),
        gate_open: fwd.gate_open,
        subsite_block: fwd.subsite_block,
    })
}

/// Attention pooling of `bag` with one level's parameters.
pub fn encode(level: &LevelParams, bag: &Bag) -> Result<EncodeResult> {
    if bag.dim() != level.attn_v.rows() {
        return Err(Error::Shape(format!(
            "bag {} has width {}, encoder expects {}",
            bag.id,
            bag.dim(),
            level.attn_v.rows()
        )));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = level.tensors().iter().map(|t| tape.constant((*t).clone())).collect();
    let z = tape.constant(bag.features.clone());
    let (att, pooled) = tape_encode(&mut tape, &vars, z)?;
    Ok(EncodeResult {
        attention: tape.value(att).data().to_vec(),
        pooled: tape.value(pooled).data().to_vec(),
    })
}
