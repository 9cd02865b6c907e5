use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyper-parameters. The parameter layout (and hence
/// [`ModelConfig::param_count`]) is a pure function of these values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_layers: usize,
    /// Units per direction; encoder states are `2 · encoder_hidden` wide.
    pub encoder_hidden: usize,
    /// Consecutive frames stacked into one encoder input step.
    pub downsample_factor: usize,
    pub decoder_hidden: usize,
    /// Width of the output token embeddings (rows of the output projection)
    /// and of the input token embeddings.
    pub embed_dim: usize,
    pub attention_heads: usize,
    pub attention_dim: usize,
    /// Filters of the location-aware convolution over the previous
    /// attention weights.
    pub location_channels: usize,
    /// Odd filter width of that convolution.
    pub location_width: usize,
    /// Number of vocabulary ids, blank and special tokens included. Both the
    /// decoder output and the CTC head cover every id; the CTC blank is id 0.
    pub vocab_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            feature_dim: 8,
            encoder_layers: 1,
            encoder_hidden: 24,
            downsample_factor: 2,
            decoder_hidden: 32,
            embed_dim: 16,
            attention_heads: 1,
            attention_dim: 24,
            location_channels: 4,
            location_width: 5,
            vocab_size: 43,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [
            ("feature_dim", self.feature_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_hidden", self.encoder_hidden),
            ("downsample_factor", self.downsample_factor),
            ("decoder_hidden", self.decoder_hidden),
            ("embed_dim", self.embed_dim),
            ("attention_heads", self.attention_heads),
            ("attention_dim", self.attention_dim),
            ("location_channels", self.location_channels),
            ("location_width", self.location_width),
        ] {
            if v == 0 {
                return Err(ModelError::Config { field, msg: "must be at least 1".into() });
            }
        }
        if self.location_width % 2 == 0 {
            return Err(ModelError::Config { field: "location_width", msg: "must be odd".into() });
        }
        if self.vocab_size < 4 {
            return Err(ModelError::Config {
                field: "vocab_size",
                msg: format!("need blank, start, end and at least one token, got {}", self.vocab_size),
            });
        }
        Ok(())
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    /// `L = ceil(T / downsample_factor)`.
    pub fn encoder_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.downsample_factor)
    }

    pub fn has_bottleneck(&self) -> bool {
        self.decoder_hidden != self.embed_dim
    }

    /// `(name, shape)` of every parameter, sorted by name.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.encoder_hidden;
        let enc = self.encoder_dim();
        let (d, e, a, v) = (self.decoder_hidden, self.embed_dim, self.attention_dim, self.vocab_size);
        let mut out = Vec::new();
        for layer in 0..self.encoder_layers {
            let input = if layer == 0 { self.feature_dim * self.downsample_factor } else { enc };
            for dir in ["fwd", "bwd"] {
                out.push((format!("enc.{layer}.{dir}.w_in"), vec![input, 4 * h]));
                out.push((format!("enc.{layer}.{dir}.w_rec"), vec![h, 4 * h]));
                out.push((format!("enc.{layer}.{dir}.bias"), vec![4 * h]));
            }
        }
        out.push(("ctc.weight".into(), vec![enc, v]));
        out.push(("ctc.bias".into(), vec![v]));
        for head in 0..self.attention_heads {
            out.push((format!("att.{head}.w_enc"), vec![enc, a]));
            out.push((format!("att.{head}.w_dec"), vec![d, a]));
            out.push((format!("att.{head}.bias"), vec![a]));
            out.push((format!("att.{head}.loc_conv"), vec![self.location_channels, self.location_width]));
            out.push((format!("att.{head}.w_loc"), vec![self.location_channels, a]));
            out.push((format!("att.{head}.v"), vec![a]));
        }
        if self.attention_heads > 1 {
            out.push(("att.out".into(), vec![self.attention_heads * enc, enc]));
        }
        out.push(("dec.embed".into(), vec![v, e]));
        out.push(("dec.w_in".into(), vec![e + enc, 4 * d]));
        out.push(("dec.w_rec".into(), vec![d, 4 * d]));
        out.push(("dec.bias".into(), vec![4 * d]));
        if self.has_bottleneck() {
            out.push(("dec.bottleneck".into(), vec![d, e]));
        }
        out.push((super::EMBEDDING_PARAM.into(), vec![v, e]));
        out.push((super::OUTPUT_BIAS_PARAM.into(), vec![v]));
        out.sort();
        out
    }

    /// Closed form of the total parameter count:
    ///
    /// ```text
    /// encoder  Σ_layers 2·(in_l·4H + H·4H + 4H),  in_0 = k·F, in_l = 2H
    /// ctc      2H·V + V
    /// attention heads·(2H·A + D·A + A + C·W + C·A + A) + [heads > 1]·heads·2H·2H
    /// decoder  V·E + (E + 2H)·4D + D·4D + 4D + [D ≠ E]·D·E
    /// output   V·E + V
    /// ```
    pub fn param_count(&self) -> usize {
        let (f, k, h) = (self.feature_dim, self.downsample_factor, self.encoder_hidden);
        let (d, e, a, v) = (self.decoder_hidden, self.embed_dim, self.attention_dim, self.vocab_size);
        let (c, w, heads) = (self.location_channels, self.location_width, self.attention_heads);
        let enc = 2 * h;
        let encoder: usize = (0..self.encoder_layers)
            .map(|l| {
                let input = if l == 0 { k * f } else { enc };
                2 * (input * 4 * h + h * 4 * h + 4 * h)
            })
            .sum();
        let ctc = enc * v + v;
        let attention = heads * (enc * a + d * a + a + c * w + c * a + a) + if heads > 1 { heads * enc * enc } else { 0 };
        let decoder = v * e + (e + enc) * 4 * d + d * 4 * d + 4 * d + if d != e { d * e } else { 0 };
        let output = v * e + v;
        encoder + ctc + attention + decoder + output
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_matches_layout() {
        let configs = [
            ModelConfig::default(),
            ModelConfig { encoder_layers: 3, attention_heads: 2, decoder_hidden: 16, ..ModelConfig::default() },
            ModelConfig { downsample_factor: 4, embed_dim: 5, location_width: 3, ..ModelConfig::default() },
        ];
        for cfg in configs {
            let total: usize = cfg.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum();
            assert_eq!(total, cfg.param_count(), "{cfg:?}");
        }
    }

    #[test]
    fn encoder_length_is_ceiling() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.encoder_len(8), 4);
        assert_eq!(cfg.encoder_len(7), 4);
        assert_eq!(ModelConfig { downsample_factor: 1, ..cfg }.encoder_len(7), 7);
    }

    #[test]
    fn rejects_even_location_width() {
        let cfg = ModelConfig { location_width: 4, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(ModelError::Config { field: "location_width", .. })));
    }
}
