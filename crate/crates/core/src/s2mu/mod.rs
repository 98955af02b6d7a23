//! Speech-to-masked-unit translation model: convolutional speech encoder,
//! transformer encoder, length adaptor, transformer unit decoder whose loss
//! and decoding are restricted to the target language's unit subset.

mod decode;
mod loss;
mod train;

pub use decode::{
    greedy_decode_reference, leakage_rate, masked_decode, unmasked_decode, DecodeOptions,
    DecodeOutput,
};
pub use loss::{masked_loss, BatchExample, LogitsBundle, LossReport, MaskSet};
pub use train::{evaluate_model, S2MUTrainer, TrainerConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    add_positions, Conv1d, DecoderLayer, EncoderLayer, Init, LayerNorm, Linear, TrainCtx,
};
use crate::numerics::{Attached, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::synthlang::LangId;
use crate::vocab::ExtendedVocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum S2MUMode {
    Multilingual,
    /// Single-direction model over a restricted vocabulary.
    Bilingual(LangId),
}

/// How the masked loss normalizes probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossNormalizer {
    /// Softmax over the allowed set only (the default reading).
    RestrictedSoftmax,
    /// Full-vocabulary softmax, loss summed over the allowed set only.
    FullSoftmaxRestrictedSum,
}

#[derive(Debug, Clone)]
pub struct S2MUConfig {
    pub feature_dim: usize,
    /// (kernel, stride) per subsampling conv layer.
    pub conv_layers: Vec<(usize, usize)>,
    pub encoder_layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub adaptor_kernel: usize,
    pub adaptor_stride: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub mode: S2MUMode,
    pub loss_normalizer: LossNormalizer,
    pub seed: u64,
}

impl S2MUConfig {
    /// Desk-scale default: ~0.5M parameters.
    pub fn desk_default(feature_dim: usize, seed: u64) -> Self {
        S2MUConfig {
            feature_dim,
            conv_layers: vec![(5, 2), (5, 2)],
            encoder_layers: 4,
            model_dim: 64,
            ffn_dim: 128,
            heads: 4,
            adaptor_kernel: 3,
            adaptor_stride: 2,
            decoder_layers: 2,
            dropout: 0.1,
            label_smoothing: 0.2,
            mode: S2MUMode::Multilingual,
            loss_normalizer: LossNormalizer::RestrictedSoftmax,
            seed,
        }
    }

    /// Small-architecture preset: halved depth and width.
    pub fn small_preset(feature_dim: usize, seed: u64) -> Self {
        S2MUConfig {
            conv_layers: vec![(5, 2), (5, 2)],
            encoder_layers: 2,
            model_dim: 32,
            ffn_dim: 64,
            heads: 2,
            decoder_layers: 1,
            ..Self::desk_default(feature_dim, seed)
        }
    }

    pub fn bilingual(mut self, lang: LangId) -> Self {
        self.mode = S2MUMode::Bilingual(lang);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.conv_layers.is_empty() {
            return Err(Error::Config("need at least one conv layer".into()));
        }
        for &(k, s) in &self.conv_layers {
            if k % 2 == 0 || s == 0 {
                return Err(Error::Config(format!(
                    "conv kernel {k} must be odd and stride {s} positive"
                )));
            }
        }
        if self.adaptor_kernel % 2 == 0 || self.adaptor_stride == 0 {
            return Err(Error::Config("bad adaptor kernel/stride".into()));
        }
        Ok(())
    }

    /// Product of conv strides (encoder downsampling factor).
    pub fn conv_downsampling(&self) -> usize {
        self.conv_layers.iter().map(|&(_, s)| s).product()
    }
}

pub struct S2MUModel {
    pub cfg: S2MUConfig,
    pub vocab: ExtendedVocabulary,
    pub store: ParamStore,
    input_norm: LayerNorm,
    conv: Vec<Conv1d>,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    adaptor: Conv1d,
    token_embedding: ParamId,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    output: Linear,
}

impl S2MUModel {
    pub fn new(cfg: S2MUConfig, vocab: ExtendedVocabulary) -> Result<Self> {
        cfg.validate()?;
        if let S2MUMode::Bilingual(lang) = cfg.mode {
            vocab.language_tag(lang)?;
            vocab.family_of_lang(lang)?;
        }
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init::new(&mut store, &mut rng);

        let input_norm = LayerNorm::new(&mut init, "enc.input_norm", cfg.feature_dim)?;
        let mut conv = Vec::new();
        let mut in_ch = cfg.feature_dim;
        for (i, &(k, s)) in cfg.conv_layers.iter().enumerate() {
            conv.push(Conv1d::new(
                &mut init,
                &format!("enc.conv{i}"),
                in_ch,
                cfg.model_dim,
                k,
                s,
                (k - 1) / 2,
                1,
            )?);
            in_ch = cfg.model_dim;
        }
        let encoder = (0..cfg.encoder_layers)
            .map(|i| {
                EncoderLayer::new(
                    &mut init,
                    &format!("enc.layer{i}"),
                    cfg.model_dim,
                    cfg.heads,
                    cfg.ffn_dim,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = LayerNorm::new(&mut init, "enc.norm", cfg.model_dim)?;
        let adaptor = Conv1d::new(
            &mut init,
            "adaptor",
            cfg.model_dim,
            cfg.model_dim,
            cfg.adaptor_kernel,
            cfg.adaptor_stride,
            (cfg.adaptor_kernel - 1) / 2,
            1,
        )?;
        let token_embedding = init.randn(
            "dec.embed",
            &[vocab.size() as usize, cfg.model_dim],
            0.02,
        )?;
        let decoder = (0..cfg.decoder_layers)
            .map(|i| {
                DecoderLayer::new(
                    &mut init,
                    &format!("dec.layer{i}"),
                    cfg.model_dim,
                    cfg.heads,
                    cfg.ffn_dim,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = LayerNorm::new(&mut init, "dec.norm", cfg.model_dim)?;
        let output = Linear::new(&mut init, "dec.out", cfg.model_dim, vocab.size() as usize)?;

        Ok(S2MUModel {
            cfg,
            vocab,
            store,
            input_norm,
            conv,
            encoder,
            encoder_norm,
            adaptor,
            token_embedding,
            decoder,
            decoder_norm,
            output,
        })
    }

    /// Encoder + length adaptor: features [T, D_f] -> adapted states
    /// [ceil(ceil(T / conv_down) / adaptor_stride), dim].
    pub fn encode(
        &self,
        g: &mut Graph,
        ps: &Attached,
        features: &Tensor,
        mut tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        if features.rows() == 0 {
            return Err(Error::InvalidArgument(
                "encode: empty features (shorter than the conv receptive field)".into(),
            ));
        }
        let x = g.constant(features.clone());
        // raw log-energy features span tens of nats; normalize per frame
        let x = self.input_norm.forward(g, ps, x)?;
        let mut h = g.transpose(x); // [D_f, T]
        for c in &self.conv {
            h = c.forward(g, ps, h)?;
            h = g.relu(h);
        }
        let mut h = g.transpose(h); // [T', dim]
        h = add_positions(g, h)?;
        h = apply_dropout_opt(g, h, tc.as_deref_mut())?;
        for layer in &self.encoder {
            h = layer.forward(g, ps, h, tc.as_deref_mut())?;
        }
        h = self.encoder_norm.forward(g, ps, h)?;
        let h = g.transpose(h); // [dim, T']
        let h = self.adaptor.forward(g, ps, h)?;
        Ok(g.transpose(h)) // [T'', dim]
    }

    /// Decoder states for teacher-forced input ids over encoder states.
    pub fn decode_states(
        &self,
        g: &mut Graph,
        ps: &Attached,
        enc: NodeId,
        input_ids: &[u32],
        mut tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        let ids = std::rc::Rc::new(input_ids.to_vec());
        let mut h = g.embedding(ps.node(self.token_embedding), ids)?;
        h = add_positions(g, h)?;
        h = apply_dropout_opt(g, h, tc.as_deref_mut())?;
        for layer in &self.decoder {
            h = layer.forward(g, ps, h, enc, tc.as_deref_mut())?;
        }
        self.decoder_norm.forward(g, ps, h)
    }

    /// Full-vocabulary logits [len(input_ids), |V|].
    pub fn logits(
        &self,
        g: &mut Graph,
        ps: &Attached,
        enc: NodeId,
        input_ids: &[u32],
        tc: Option<&mut TrainCtx>,
    ) -> Result<NodeId> {
        let states = self.decode_states(g, ps, enc, input_ids, tc)?;
        self.output.forward(g, ps, states)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.total_elements()
    }
}

fn apply_dropout_opt(
    g: &mut Graph,
    x: NodeId,
    tc: Option<&mut TrainCtx>,
) -> Result<NodeId> {
    crate::nn::apply_dropout(g, x, tc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthlang::FamilyId;

    fn tiny_vocab() -> ExtendedVocabulary {
        ExtendedVocabulary::build_extended(
            &[
                (LangId(0), "src".into(), None),
                (LangId(1), "a".into(), Some(FamilyId(0))),
                (LangId(2), "b".into(), Some(FamilyId(0))),
            ],
            &[(FamilyId(0), "fam0".into(), 6)],
        )
        .unwrap()
    }

    #[test]
    fn encoder_output_length_follows_stride_arithmetic() {
        let vocab = tiny_vocab();
        let mut cfg = S2MUConfig::desk_default(12, 1);
        cfg.encoder_layers = 1;
        cfg.decoder_layers = 1;
        let model = S2MUModel::new(cfg, vocab).unwrap();
        for t in [4usize, 5, 9, 16, 33] {
            let feats = Tensor::zeros(&[t, 12]);
            let mut g = Graph::new();
            let ps = model.store.attach_frozen(&mut g);
            let enc = model.encode(&mut g, &ps, &feats, None).unwrap();
            let after_conv = t.div_ceil(2).div_ceil(2);
            let expect = after_conv.div_ceil(2); // adaptor stride 2
            assert_eq!(g.value(enc).rows(), expect, "t = {t}");
        }
    }

    #[test]
    fn empty_features_rejected() {
        let model = S2MUModel::new(S2MUConfig::small_preset(8, 2), tiny_vocab()).unwrap();
        let feats = Tensor::zeros(&[0, 8]);
        let mut g = Graph::new();
        let ps = model.store.attach_frozen(&mut g);
        assert!(model.encode(&mut g, &ps, &feats, None).is_err());
    }

    #[test]
    fn bad_head_split_rejected() {
        let mut cfg = S2MUConfig::desk_default(8, 3);
        cfg.model_dim = 30;
        cfg.heads = 4;
        assert!(S2MUModel::new(cfg, tiny_vocab()).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        let a = S2MUModel::new(S2MUConfig::small_preset(8, 7), tiny_vocab()).unwrap();
        let b = S2MUModel::new(S2MUConfig::small_preset(8, 7), tiny_vocab()).unwrap();
        for ((na, ta), (nb, tb)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn adaptor_identity_when_stride_one_and_identity_kernel() {
        let vocab = tiny_vocab();
        let mut cfg = S2MUConfig::small_preset(8, 5);
        cfg.adaptor_stride = 1;
        let mut model = S2MUModel::new(cfg, vocab).unwrap();
        // surgically set the adaptor kernel to a centered identity
        let wid = model.store.id_of("adaptor.w").unwrap();
        let dim = model.cfg.model_dim;
        let k = model.cfg.adaptor_kernel;
        let w = model.store.value_mut(wid);
        for v in w.data_mut().iter_mut() {
            *v = 0.0;
        }
        for c in 0..dim {
            // w[c, c, center] = 1
            let idx = (c * dim + c) * k + k / 2;
            w.data_mut()[idx] = 1.0;
        }

        let mut g = Graph::new();
        let ps = model.store.attach_frozen(&mut g);
        let input = Tensor::randn(&[6, dim], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let x = g.constant(input.clone());
        let xt = g.transpose(x);
        let y = model.adaptor.forward(&mut g, &ps, xt).unwrap();
        let yt = g.transpose(y);
        for (a, b) in g.value(yt).data().iter().zip(input.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
