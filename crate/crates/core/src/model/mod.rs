//! A toy decoder-only character transformer. Layer 1 uses standard causal
//! attention; when `elliptical` is set, layers 2..L score keys through a
//! per-head metric estimated from how that head's values moved since the
//! previous layer. The metric is rebuilt on every forward pass from plain
//! matrices and never receives gradient.

mod checkpoint;
mod corpus;
mod diagnostics;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use corpus::{alternating_text, corrupt_tokens, markov_text, Corpus, Vocab, GENERIC_CHAR};
pub use diagnostics::{
    diagnose, mean_pairwise_cosine, mean_pairwise_head_distance, perplexity, DiagnoseConfig, DiagnosticsReport,
};
pub use train::{train, AdamState, TrainConfig};

use crate::attention::elliptical_metric;
use crate::error::{Error, Result};
use crate::metric::{EllipticalWeights, ScalingMode, DEFAULT_FLOOR};
use crate::numerics::{Matrix, Rng, Tape, Var};

const TAG_INIT: u64 = 0x1417;
const TAG_METRIC: u64 = 0x3e7;
const PARAMS_PER_LAYER: usize = 13;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub context: usize,
    pub elliptical: bool,
    pub scaling: ScalingMode,
    pub delta: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 4,
            heads: 2,
            head_dim: 16,
            embed_dim: 32,
            ff_dim: 64,
            vocab_size: 0,
            context: 64,
            elliptical: true,
            scaling: ScalingMode::Maxscale,
            delta: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn default_with_vocab(vocab_size: usize) -> Self {
        Self { vocab_size, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.embed_dim != self.heads * self.head_dim {
            return bad(format!(
                "embed_dim {} must equal heads {} x head_dim {}",
                self.embed_dim, self.heads, self.head_dim
            ));
        }
        if self.layers == 0 || self.heads == 0 || self.head_dim == 0 || self.ff_dim == 0 || self.context == 0 {
            return bad("layers, heads, head_dim, ff_dim and context must be positive".into());
        }
        if self.elliptical && self.layers < 2 {
            return bad("an elliptical model needs at least 2 layers".into());
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        Ok(())
    }

    /// Flat `key = value` echo, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("head_dim", self.head_dim.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("context", self.context.to_string()),
            ("elliptical", self.elliptical.to_string()),
            ("scaling", self.scaling.to_string()),
            ("delta", self.delta.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            let num = |v: &str| v.parse::<usize>().map_err(|_| Error::Parameter(format!("`{k}` expects an integer, got `{v}`")));
            match k {
                "layers" => cfg.layers = num(v)?,
                "heads" => cfg.heads = num(v)?,
                "head_dim" => cfg.head_dim = num(v)?,
                "embed_dim" => cfg.embed_dim = num(v)?,
                "ff_dim" => cfg.ff_dim = num(v)?,
                "vocab_size" => cfg.vocab_size = num(v)?,
                "context" => cfg.context = num(v)?,
                "elliptical" => {
                    cfg.elliptical = v.parse().map_err(|_| Error::Parameter(format!("`elliptical` expects true/false, got `{v}`")))?
                }
                "scaling" => cfg.scaling = v.parse()?,
                "delta" => cfg.delta = v.parse().map_err(|_| Error::Parameter(format!("`delta` expects a number, got `{v}`")))?,
                "seed" => cfg.seed = v.parse().map_err(|_| Error::Parameter(format!("`seed` expects an integer, got `{v}`")))?,
                _ => return Err(Error::Parameter(format!("unknown model key `{k}`"))),
            }
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
}

/// Values each head produced at one layer, with the previous layer's values
/// that fed its metric.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayerState {
    pub layer: usize,
    pub values: Vec<Matrix>,
    pub prev_values: Option<Vec<Matrix>>,
    /// Per head, the metric for each query row; empty for standard layers.
    pub metric: Vec<Vec<EllipticalWeights>>,
}

/// Plain-matrix results of a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `T x vocab`
    pub logits: Matrix,
    pub states: Vec<AttentionLayerState>,
    /// `attn[layer][head]`, each `T x T`.
    pub attn: Vec<Vec<Matrix>>,
    /// Residual stream after each layer, `T x embed_dim`.
    pub hidden: Vec<Matrix>,
    /// Output of each layer's attention block before the residual add.
    pub attn_out: Vec<Matrix>,
}

/// Tape handles of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub logits: Var,
    pub states: Vec<AttentionLayerState>,
    pub attn: Vec<Vec<Var>>,
    pub hidden: Vec<Var>,
    pub attn_out: Vec<Var>,
    /// Leaves holding the copy of the previous layer's values read by the
    /// metric estimator, per elliptical layer and head. Nothing downstream
    /// of the loss depends on them.
    pub metric_inputs: Vec<Vec<Var>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Adds a constant to the residual stream entering `layer`.
    pub perturb: Option<(usize, &'a Matrix)>,
    /// Replaces the estimated metric (`[layer][head][row]`) for elliptical layers.
    pub metric_override: Option<&'a [Vec<Vec<EllipticalWeights>>]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: Vec<Param>,
}

struct LayerIdx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

fn layer_idx(l: usize) -> LayerIdx {
    let o = 2 + l * PARAMS_PER_LAYER;
    LayerIdx {
        ln1_g: o,
        ln1_b: o + 1,
        wq: o + 2,
        wk: o + 3,
        wv: o + 4,
        wo: o + 5,
        bo: o + 6,
        ln2_g: o + 7,
        ln2_b: o + 8,
        w1: o + 9,
        b1: o + 10,
        w2: o + 11,
        b2: o + 12,
    }
}

impl Model {
    /// Fresh parameters drawn from a stream derived from `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::derive(cfg.seed, &[TAG_INIT]);
        let (e, f, v) = (cfg.embed_dim, cfg.ff_dim, cfg.vocab_size);
        let mut params = Vec::new();
        let mut gauss = |name: String, r: usize, c: usize, std: f64| {
            let value = Matrix::from_fn(r, c, |_, _| std * rng.normal());
            Param { name, value }
        };
        let resid = 1.0 / (2.0 * cfg.layers as f64).sqrt();
        params.push(gauss("tok_emb".into(), v, e, 1.0));
        params.push(gauss("pos_emb".into(), cfg.context, e, 0.1));
        for l in 0..cfg.layers {
            let lin = 1.0 / (e as f64).sqrt();
            params.push(Param { name: format!("l{l}.ln1_g"), value: Matrix::filled(1, e, 1.0) });
            params.push(Param { name: format!("l{l}.ln1_b"), value: Matrix::zeros(1, e) });
            params.push(gauss(format!("l{l}.wq"), e, e, lin));
            params.push(gauss(format!("l{l}.wk"), e, e, lin));
            params.push(gauss(format!("l{l}.wv"), e, e, lin));
            params.push(gauss(format!("l{l}.wo"), e, e, lin * resid));
            params.push(Param { name: format!("l{l}.bo"), value: Matrix::zeros(1, e) });
            params.push(Param { name: format!("l{l}.ln2_g"), value: Matrix::filled(1, e, 1.0) });
            params.push(Param { name: format!("l{l}.ln2_b"), value: Matrix::zeros(1, e) });
            params.push(gauss(format!("l{l}.w1"), e, f, lin));
            params.push(Param { name: format!("l{l}.b1"), value: Matrix::zeros(1, f) });
            params.push(gauss(format!("l{l}.w2"), f, e, resid / (f as f64).sqrt()));
            params.push(Param { name: format!("l{l}.b2"), value: Matrix::zeros(1, e) });
        }
        params.push(Param { name: "lnf_g".into(), value: Matrix::filled(1, e, 1.0) });
        params.push(Param { name: "lnf_b".into(), value: Matrix::zeros(1, e) });
        params.push(gauss("head_w".into(), e, v, 1.0 / (e as f64).sqrt()));
        params.push(Param { name: "head_b".into(), value: Matrix::zeros(1, v) });
        Ok(Self { cfg, params })
    }

    /// Expected `(name, rows, cols)` of every parameter, in storage order.
    pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
        let (e, f, v) = (cfg.embed_dim, cfg.ff_dim, cfg.vocab_size);
        let mut out = vec![("tok_emb".to_string(), v, e), ("pos_emb".to_string(), cfg.context, e)];
        for l in 0..cfg.layers {
            for (n, r, c) in [
                ("ln1_g", 1, e),
                ("ln1_b", 1, e),
                ("wq", e, e),
                ("wk", e, e),
                ("wv", e, e),
                ("wo", e, e),
                ("bo", 1, e),
                ("ln2_g", 1, e),
                ("ln2_b", 1, e),
                ("w1", e, f),
                ("b1", 1, f),
                ("w2", f, e),
                ("b2", 1, e),
            ] {
                out.push((format!("l{l}.{n}"), r, c));
            }
        }
        out.extend([
            ("lnf_g".to_string(), 1, e),
            ("lnf_b".to_string(), 1, e),
            ("head_w".to_string(), e, v),
            ("head_b".to_string(), 1, v),
        ]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Registers every parameter as a tape leaf.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("forward pass on an empty sequence".into()));
        }
        if tokens.len() > self.cfg.context {
            return Err(Error::Input(format!("{} tokens exceed context {}", tokens.len(), self.cfg.context)));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.cfg.vocab_size) {
            return Err(Error::Input(format!("token {bad} out of range for vocabulary {}", self.cfg.vocab_size)));
        }
        Ok(())
    }

    /// Records the forward pass of one sequence on `tape` using parameter leaves `p`.
    pub fn forward_on_tape(&self, tape: &mut Tape, p: &[Var], tokens: &[usize], opts: ForwardOptions<'_>) -> Result<ForwardTrace> {
        self.check_tokens(tokens)?;
        let cfg = &self.cfg;
        let t = tokens.len();
        let d = cfg.head_dim;
        let positions: Vec<usize> = (0..t).collect();
        let tok = tape.gather_rows(p[0], tokens)?;
        let pos = tape.gather_rows(p[1], &positions)?;
        let mut x = tape.add(tok, pos)?;

        let mut trace = ForwardTrace {
            logits: x,
            states: Vec::with_capacity(cfg.layers),
            attn: Vec::with_capacity(cfg.layers),
            hidden: Vec::with_capacity(cfg.layers),
            attn_out: Vec::with_capacity(cfg.layers),
            metric_inputs: Vec::new(),
        };
        let inv_temp = 1.0 / (d as f64).sqrt();
        let mut prev_values: Option<Vec<Matrix>> = None;

        for l in 0..cfg.layers {
            let ix = layer_idx(l);
            if let Some((pl, eps)) = opts.perturb {
                if pl == l {
                    let e = tape.leaf(eps.clone());
                    x = tape.add(x, e)?;
                }
            }
            let a = tape.layer_norm(x, p[ix.ln1_g], p[ix.ln1_b])?;
            let q = tape.matmul(a, p[ix.wq])?;
            let k = tape.matmul(a, p[ix.wk])?;
            let v = tape.matmul(a, p[ix.wv])?;
            let elliptical = cfg.elliptical && l > 0;

            let mut heads = Vec::with_capacity(cfg.heads);
            let mut attn = Vec::with_capacity(cfg.heads);
            let mut values = Vec::with_capacity(cfg.heads);
            let mut metric = Vec::new();
            let mut metric_inputs = Vec::new();
            for h in 0..cfg.heads {
                let qh = tape.slice_cols(q, h * d, d)?;
                let kh = tape.slice_cols(k, h * d, d)?;
                let vh = tape.slice_cols(v, h * d, d)?;
                let v_now = tape.value(vh).clone();
                let scores = if elliptical {
                    let v_prev = &prev_values.as_ref().expect("layer > 0 has previous values")[h];
                    // Detached copy: registering it as a leaf lets callers confirm
                    // that no gradient reaches it.
                    metric_inputs.push(tape.leaf(v_prev.clone()));
                    let rows = match opts.metric_override {
                        Some(over) => over[l][h].clone(),
                        None => {
                            let mut rng = Rng::derive(cfg.seed, &[TAG_METRIC, l as u64, h as u64]);
                            elliptical_metric(&v_now, v_prev, cfg.scaling, DEFAULT_FLOOR, true, cfg.delta, &mut rng)?
                        }
                    };
                    let m = Matrix::from_fn(t, d, |i, j| rows[if rows.len() == 1 { 0 } else { i }].as_slice()[j]);
                    metric.push(rows);
                    let qm = tape.mul_const(qh, m)?;
                    tape.matmul_t(qm, kh)?
                } else {
                    tape.matmul_t(qh, kh)?
                };
                let scaled = tape.scale(scores, inv_temp)?;
                let masked = tape.causal_mask(scaled)?;
                let probs = tape.softmax_rows(masked)?;
                heads.push(tape.matmul(probs, vh)?);
                attn.push(probs);
                values.push(v_now);
            }
            let cat = tape.concat_cols(&heads)?;
            let proj = tape.matmul(cat, p[ix.wo])?;
            let out = tape.add_row(proj, p[ix.bo])?;
            x = tape.add(x, out)?;

            let a2 = tape.layer_norm(x, p[ix.ln2_g], p[ix.ln2_b])?;
            let f1 = tape.matmul(a2, p[ix.w1])?;
            let f1 = tape.add_row(f1, p[ix.b1])?;
            let g = tape.gelu(f1)?;
            let f2 = tape.matmul(g, p[ix.w2])?;
            let f2 = tape.add_row(f2, p[ix.b2])?;
            x = tape.add(x, f2)?;

            trace.states.push(AttentionLayerState {
                layer: l,
                values: values.clone(),
                prev_values: if elliptical { prev_values.clone() } else { None },
                metric,
            });
            if elliptical {
                trace.metric_inputs.push(metric_inputs);
            }
            trace.attn.push(attn);
            trace.hidden.push(x);
            trace.attn_out.push(out);
            prev_values = Some(values);
        }
        let n = self.params.len();
        let xf = tape.layer_norm(x, p[n - 4], p[n - 3])?;
        let logits = tape.matmul(xf, p[n - 2])?;
        trace.logits = tape.add_row(logits, p[n - 1])?;
        Ok(trace)
    }

    pub fn forward_with(&self, tokens: &[usize], opts: ForwardOptions<'_>) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let tr = self.forward_on_tape(&mut tape, &p, tokens, opts)?;
        let grab = |vs: &[Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
        Ok(ForwardOutput {
            logits: tape.value(tr.logits).clone(),
            attn: tr.attn.iter().map(|hs| grab(hs)).collect(),
            hidden: grab(&tr.hidden),
            attn_out: grab(&tr.attn_out),
            states: tr.states,
        })
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardOutput> {
        self.forward_with(tokens, ForwardOptions::default())
    }

    /// Mean next-token cross-entropy of `inputs` predicting `targets`.
    pub fn loss(&self, inputs: &[usize], targets: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.leaves(&mut tape);
        let tr = self.forward_on_tape(&mut tape, &p, inputs, ForwardOptions::default())?;
        let ce = tape.cross_entropy(tr.logits, targets)?;
        Ok(tape.value(ce)[(0, 0)])
    }
}
