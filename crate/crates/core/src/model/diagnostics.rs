//! Collapse, head-redundancy and robustness diagnostics, and perplexity.

use super::{corrupt_tokens, ForwardOptions, Model};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm2, Matrix, Rng};

const TAG_CORRUPT: u64 = 0xc0;
const TAG_PERTURB: u64 = 0xe5;

/// `exp` of the mean next-token cross-entropy over consecutive windows of
/// `tokens`. `inputs` may differ from `tokens` (e.g. corrupted); targets
/// always come from `tokens`.
pub fn perplexity(model: &Model, inputs: &[usize], tokens: &[usize], max_windows: usize) -> Result<f64> {
    if inputs.len() != tokens.len() {
        return Err(Error::Input("inputs and targets differ in length".into()));
    }
    if tokens.len() < 2 {
        return Err(Error::Input("perplexity needs at least 2 tokens".into()));
    }
    let ctx = model.cfg.context;
    let mut total = 0.0;
    let mut count = 0usize;
    let mut start = 0;
    let mut windows = 0;
    while start + 1 < tokens.len() && windows < max_windows {
        let len = ctx.min(tokens.len() - 1 - start);
        let loss = model.loss(&inputs[start..start + len], &tokens[start + 1..start + len + 1])?;
        total += loss * len as f64;
        count += len;
        start += len;
        windows += 1;
    }
    Ok((total / count as f64).exp())
}

/// Mean cosine similarity over all pairs of rows. Zero rows count as similarity 0
/// with anything except another zero row, which counts as 1.
pub fn mean_pairwise_cosine(rows: &Matrix) -> f64 {
    let n = rows.rows();
    if n < 2 {
        return 1.0;
    }
    let norms: Vec<f64> = (0..n).map(|i| norm2(rows.row(i))).collect();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += match (norms[i] > 0.0, norms[j] > 0.0) {
                (true, true) => (dot(rows.row(i), rows.row(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0),
                (false, false) => 1.0,
                _ => 0.0,
            };
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Mean Euclidean distance over pairs of flattened attention matrices.
pub fn mean_pairwise_head_distance(heads: &[Matrix]) -> f64 {
    let h = heads.len();
    if h < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..h {
        for b in a + 1..h {
            total += heads[a].sub(&heads[b]).map(|d| d.frobenius_norm()).unwrap_or(f64::NAN);
        }
    }
    total / (h * (h - 1) / 2) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnoseConfig {
    pub epsilons: Vec<f64>,
    pub corruption_rate: f64,
    /// Gaussian draws per layer and scale for the robustness ratio.
    pub robust_samples: usize,
    /// Windows used for representation and attention statistics.
    pub windows: usize,
    /// Windows used for perplexity.
    pub eval_windows: usize,
    pub seed: u64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.01, 0.1, 1.0],
            corruption_rate: 0.025,
            robust_samples: 4,
            windows: 4,
            eval_windows: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsReport {
    /// Per layer, mean pairwise cosine similarity of token representations.
    pub cosine_similarity: Vec<f64>,
    /// Per layer, mean pairwise distance between flattened head attention matrices.
    pub head_distance: Vec<f64>,
    /// `(ε, per-layer mean ‖Δh‖/‖ε‖)` for each perturbation scale.
    pub robustness: Vec<(f64, Vec<f64>)>,
    pub clean_perplexity: f64,
    pub corrupted_perplexity: f64,
    /// `heatmaps[layer][head]` on the first evaluation window.
    pub heatmaps: Vec<Vec<Matrix>>,
}

impl DiagnosticsReport {
    pub fn perplexity_gap(&self) -> f64 {
        self.corrupted_perplexity - self.clean_perplexity
    }
}

/// Diagnostics of `model` on `eval` tokens.
///
/// Robustness perturbs the residual stream entering each layer by `ε` of
/// Frobenius norm `eps` and measures the change of that layer's attention
/// block output, with the previous layer's values held at their clean state.
pub fn diagnose(model: &Model, eval: &[usize], cfg: &DiagnoseConfig) -> Result<DiagnosticsReport> {
    if eval.len() < 2 {
        return Err(Error::Input("diagnostics need at least 2 evaluation tokens".into()));
    }
    if cfg.windows == 0 || cfg.eval_windows == 0 {
        return Err(Error::Parameter("window counts must be positive".into()));
    }
    let layers = model.cfg.layers;
    let ctx = model.cfg.context.min(eval.len());
    let starts: Vec<usize> = (0..cfg.windows).map(|w| w * ctx).filter(|&s| s + ctx <= eval.len()).collect();

    let mut cosine = vec![0.0; layers];
    let mut head_distance = vec![0.0; layers];
    let mut robustness: Vec<(f64, Vec<f64>)> = cfg.epsilons.iter().map(|&e| (e, vec![0.0; layers])).collect();
    let mut heatmaps = Vec::new();
    for (w, &s) in starts.iter().enumerate() {
        let window = &eval[s..s + ctx];
        let clean = model.forward(window)?;
        if w == 0 {
            heatmaps = clean.attn.clone();
        }
        for l in 0..layers {
            cosine[l] += mean_pairwise_cosine(&clean.hidden[l]);
            head_distance[l] += mean_pairwise_head_distance(&clean.attn[l]);
        }
        for (e_idx, &eps) in cfg.epsilons.iter().enumerate() {
            for l in 0..layers {
                let mut rng = Rng::derive(cfg.seed, &[TAG_PERTURB, w as u64, e_idx as u64, l as u64]);
                let mut acc = 0.0;
                for _ in 0..cfg.robust_samples {
                    let g = Matrix::from_fn(ctx, model.cfg.embed_dim, |_, _| rng.normal());
                    let noise = g.scale(eps / g.frobenius_norm());
                    let out = model.forward_with(window, ForwardOptions { perturb: Some((l, &noise)), ..Default::default() })?;
                    acc += out.attn_out[l].sub(&clean.attn_out[l])?.frobenius_norm() / eps;
                }
                robustness[e_idx].1[l] += acc / cfg.robust_samples as f64;
            }
        }
    }
    let k = starts.len().max(1) as f64;
    cosine.iter_mut().for_each(|c| *c /= k);
    head_distance.iter_mut().for_each(|c| *c /= k);
    robustness.iter_mut().for_each(|(_, r)| r.iter_mut().for_each(|c| *c /= k));

    let span = (cfg.eval_windows * model.cfg.context + 1).min(eval.len());
    let tokens = &eval[..span];
    let mut rng = Rng::derive(cfg.seed, &[TAG_CORRUPT]);
    let generic = model.cfg.vocab_size - 1;
    let corrupted = corrupt_tokens(tokens, cfg.corruption_rate, generic, &mut rng)?;
    Ok(DiagnosticsReport {
        cosine_similarity: cosine,
        head_distance,
        robustness,
        clean_perplexity: perplexity(model, tokens, tokens, cfg.eval_windows)?,
        corrupted_perplexity: perplexity(model, &corrupted, tokens, cfg.eval_windows)?,
        heatmaps,
    })
}
