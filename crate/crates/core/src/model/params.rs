use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::heads::HeadVars;
use crate::model::ModelConfig;

/// Parameters of one E-GAT layer.
///
/// For the first layer the score vectors read clause embeddings (`d x 1`);
/// deeper layers score the bridge features (rank embeddings, raw ranks or
/// tanh of the predictions).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub score_row: Tensor,
    pub score_col: Tensor,
    /// `W_0, W_1, W_2`, one `d x d` matrix per mask relation.
    pub mask_weights: [Tensor; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub emotion_w: Tensor,
    pub emotion_b: Tensor,
    pub cause_w: Tensor,
    pub cause_b: Tensor,
    pub pair_w: Tensor,
    pub pair_b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Row 0 is the UNK vector.
    pub token_embedding: Tensor,
    pub layers: Vec<LayerParams>,
    pub rank_embedding: Option<Tensor>,
    pub heads: HeadParams,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, limit)
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-limit..=limit))
}

impl ModelParams {
    /// Seeded initialisation. Token embeddings are uniform in `[-1, 1]`, weight
    /// matrices Xavier-uniform, biases zero, the rank table uniform in `[-0.1, 0.1]`.
    pub fn init(cfg: &ModelConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.hidden_size;
        let token_embedding = uniform(rng, vocab_size.max(1), d, 1.0);
        let layers = (1..=cfg.num_layers)
            .map(|l| {
                let input = if l == 1 { d } else { cfg.bridge_dim() };
                LayerParams {
                    score_row: xavier(rng, input, 1),
                    score_col: xavier(rng, input, 1),
                    mask_weights: [xavier(rng, d, d), xavier(rng, d, d), xavier(rng, d, d)],
                }
            })
            .collect();
        let rank_embedding = cfg
            .uses_rank_embedding()
            .then(|| uniform(rng, cfg.max_doc_len, cfg.rank_dim(), 0.1));
        let heads = HeadParams {
            emotion_w: xavier(rng, d, 1),
            emotion_b: Tensor::scalar(0.0),
            cause_w: xavier(rng, d, 1),
            cause_b: Tensor::scalar(0.0),
            pair_w: xavier(rng, 2 * d, 1),
            pair_b: Tensor::scalar(0.0),
        };
        ModelParams {
            token_embedding,
            layers,
            rank_embedding,
            heads,
        }
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding.tokens".to_string(), &self.token_embedding)];
        for (k, layer) in self.layers.iter().enumerate() {
            let l = k + 1;
            out.push((format!("layer{l}.score_row"), &layer.score_row));
            out.push((format!("layer{l}.score_col"), &layer.score_col));
            for (m, w) in layer.mask_weights.iter().enumerate() {
                out.push((format!("layer{l}.mask{m}"), w));
            }
        }
        if let Some(t) = &self.rank_embedding {
            out.push(("rank_embedding".to_string(), t));
        }
        let h = &self.heads;
        for (name, t) in [
            ("head.emotion_w", &h.emotion_w),
            ("head.emotion_b", &h.emotion_b),
            ("head.cause_w", &h.cause_w),
            ("head.cause_b", &h.cause_b),
            ("head.pair_w", &h.pair_w),
            ("head.pair_b", &h.pair_b),
        ] {
            out.push((name.to_string(), t));
        }
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.score_row);
            out.push(&mut layer.score_col);
            out.extend(layer.mask_weights.iter_mut());
        }
        if let Some(t) = &mut self.rank_embedding {
            out.push(t);
        }
        let h = &mut self.heads;
        out.extend([
            &mut h.emotion_w,
            &mut h.emotion_b,
            &mut h.cause_w,
            &mut h.cause_b,
            &mut h.pair_w,
            &mut h.pair_b,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rebuild from tensors in [`ModelParams::named`] order, using `template`
    /// for the layout.
    pub fn with_tensors(template: &ModelParams, tensors: Vec<Tensor>) -> Option<Self> {
        let mut out = template.clone();
        let slots = out.tensors_mut();
        if slots.len() != tensors.len() {
            return None;
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return None;
            }
            *slot = t;
        }
        Some(out)
    }

    /// Record every parameter as a trainable leaf.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let token_embedding = tape.param(self.token_embedding.clone());
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                score_row: tape.param(l.score_row.clone()),
                score_col: tape.param(l.score_col.clone()),
                mask_weights: [
                    tape.param(l.mask_weights[0].clone()),
                    tape.param(l.mask_weights[1].clone()),
                    tape.param(l.mask_weights[2].clone()),
                ],
            })
            .collect();
        let rank_embedding = self.rank_embedding.as_ref().map(|t| tape.param(t.clone()));
        let h = &self.heads;
        let heads = HeadVars {
            emotion_w: tape.param(h.emotion_w.clone()),
            emotion_b: tape.param(h.emotion_b.clone()),
            cause_w: tape.param(h.cause_w.clone()),
            cause_b: tape.param(h.cause_b.clone()),
            pair_w: tape.param(h.pair_w.clone()),
            pair_b: tape.param(h.pair_b.clone()),
        };
        ParamVars {
            token_embedding,
            layers,
            rank_embedding,
            heads,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub score_row: Var,
    pub score_col: Var,
    pub mask_weights: [Var; 3],
}

/// Tape handles mirroring [`ModelParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub token_embedding: Var,
    pub layers: Vec<LayerVars>,
    pub rank_embedding: Option<Var>,
    pub heads: HeadVars,
}

impl ParamVars {
    /// Handles in [`ModelParams::named`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.token_embedding];
        for l in &self.layers {
            out.push(l.score_row);
            out.push(l.score_col);
            out.extend(l.mask_weights);
        }
        out.extend(self.rank_embedding);
        let h = &self.heads;
        out.extend([
            h.emotion_w,
            h.emotion_b,
            h.cause_w,
            h.cause_b,
            h.pair_w,
            h.pair_b,
        ]);
        out
    }

    /// Handles of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> Vec<Var> {
        let lv = &self.layers[l - 1];
        let mut out = vec![lv.score_row, lv.score_col];
        out.extend(lv.mask_weights);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_and_handles_line_up() {
        let cfg = ModelConfig {
            hidden_size: 4,
            num_layers: 3,
            max_doc_len: 8,
            ..Default::default()
        };
        let p = ModelParams::init(&cfg, 5, &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let named = p.named();
        let handles = vars.all();
        assert_eq!(named.len(), handles.len());
        for ((name, t), v) in named.iter().zip(handles) {
            assert_eq!(tape.value(v), *t, "{name}");
        }
        assert_eq!(named.len(), 1 + 3 * 5 + 1 + 6);
        assert_eq!(p.layers[1].score_row.shape(), (4, 1));
        assert_eq!(p.rank_embedding.as_ref().unwrap().shape(), (8, 4));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig {
            hidden_size: 4,
            ..Default::default()
        };
        let a = ModelParams::init(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let b = ModelParams::init(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(7));
        let c = ModelParams::init(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(8));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn single_layer_has_no_rank_table() {
        let cfg = ModelConfig {
            hidden_size: 4,
            num_layers: 1,
            ..Default::default()
        };
        let p = ModelParams::init(&cfg, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(p.rank_embedding.is_none());
    }
}
