use std::collections::BTreeMap;

use super::{ModelConfig, ModelError, EMBEDDING_PARAM, OUTPUT_BIAS_PARAM};
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{TokenId, SOS};
use crate::rng::Prng;

/// Half-width of the uniform initialisation range.
pub const INIT_RANGE: f64 = 0.1;

/// Named parameter tensors, ordered by name.
pub type Params = BTreeMap<String, Tensor>;

/// Hybrid CTC/attention encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

#[derive(Debug, Clone, Copy)]
struct LstmVars {
    w_in: Var,
    w_rec: Var,
    bias: Var,
}

#[derive(Debug, Clone, Copy)]
struct HeadVars {
    w_enc: Var,
    w_dec: Var,
    bias: Var,
    loc_conv: Var,
    w_loc: Var,
    v: Var,
}

/// Model parameters registered as leaves of one graph.
#[derive(Debug, Clone)]
pub struct Bound {
    encoder: Vec<[LstmVars; 2]>,
    ctc_weight: Var,
    ctc_bias: Var,
    heads: Vec<HeadVars>,
    att_out: Option<Var>,
    dec_embed: Var,
    dec_lstm: LstmVars,
    bottleneck: Option<Var>,
    /// Output token embeddings, `vocab_size × embed_dim`.
    pub embedding: Var,
    pub output_bias: Var,
    hidden: usize,
    dec_hidden: usize,
    vocab: usize,
}

/// High-level encoder states `h`, `L × 2·encoder_hidden`.
#[derive(Debug, Clone, Copy)]
pub struct EncoderStates {
    pub h: Var,
    pub len: usize,
}

/// Per-utterance attention inputs that do not change across decoder steps.
#[derive(Debug, Clone)]
pub struct AttentionMemory {
    pub enc: EncoderStates,
    projected: Vec<Var>,
}

/// Decoder recurrence state between steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    /// Hidden output `s`.
    pub s: Var,
    pub cell: Var,
    /// Previous attention weights, one simplex vector per head.
    pub prev_attention: Vec<Var>,
}

impl Model {
    /// Uniform(−0.1, 0.1) initialisation drawn from `config.seed`, parameters
    /// filled in name order.
    pub fn new(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let mut rng = Prng::derive(config.seed, "init");
        let params = config
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.uniform_range(-INIT_RANGE, INIT_RANGE)).collect();
                (name, Tensor::new(shape, data).expect("shape from config"))
            })
            .collect();
        Ok(Model { config, params })
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Model, ModelError> {
        config.validate()?;
        let params = config.param_shapes().into_iter().map(|(name, shape)| (name, Tensor::zeros(&shape))).collect();
        Ok(Model { config, params })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: Params) -> Result<Model, ModelError> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != params.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} parameters, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in &shapes {
            match params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(ModelError::ParamMismatch(format!(
                        "{name}: expected shape {shape:?}, found {:?}",
                        t.shape()
                    )))
                }
                None => return Err(ModelError::ParamMismatch(format!("missing parameter {name}"))),
            }
        }
        Ok(Model { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Copy of the output token embedding matrix.
    pub fn embeddings(&self) -> &Tensor {
        &self.params[EMBEDDING_PARAM]
    }

    /// FNV-1a over the bit patterns of all parameters, in name order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (name, t) in &self.params {
            for b in name.bytes().chain(t.data().iter().flat_map(|v| v.to_bits().to_le_bytes())) {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Registers every parameter in `g`. With `trainable == false` they are
    /// constants and no gradients are tracked.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let mut vars = BTreeMap::new();
        for (name, t) in &self.params {
            let v = if trainable { g.param(name, t.clone()) } else { g.constant(t.clone()) };
            vars.insert(name.as_str(), v);
        }
        let get = |n: &str| vars[n];
        let cfg = &self.config;
        let lstm = |prefix: &str| LstmVars {
            w_in: get(&format!("{prefix}.w_in")),
            w_rec: get(&format!("{prefix}.w_rec")),
            bias: get(&format!("{prefix}.bias")),
        };
        Bound {
            encoder: (0..cfg.encoder_layers)
                .map(|l| [lstm(&format!("enc.{l}.fwd")), lstm(&format!("enc.{l}.bwd"))])
                .collect(),
            ctc_weight: get("ctc.weight"),
            ctc_bias: get("ctc.bias"),
            heads: (0..cfg.attention_heads)
                .map(|h| HeadVars {
                    w_enc: get(&format!("att.{h}.w_enc")),
                    w_dec: get(&format!("att.{h}.w_dec")),
                    bias: get(&format!("att.{h}.bias")),
                    loc_conv: get(&format!("att.{h}.loc_conv")),
                    w_loc: get(&format!("att.{h}.w_loc")),
                    v: get(&format!("att.{h}.v")),
                })
                .collect(),
            att_out: (cfg.attention_heads > 1).then(|| get("att.out")),
            dec_embed: get("dec.embed"),
            dec_lstm: lstm("dec"),
            bottleneck: cfg.has_bottleneck().then(|| get("dec.bottleneck")),
            embedding: get(EMBEDDING_PARAM),
            output_bias: get(OUTPUT_BIAS_PARAM),
            hidden: cfg.encoder_hidden,
            dec_hidden: cfg.decoder_hidden,
            vocab: cfg.vocab_size,
        }
    }
}

/// Groups `factor` consecutive frames into one row, zero-padding the tail.
pub fn stack_frames(x: &Tensor, factor: usize) -> Tensor {
    let (t, d) = (x.rows(), x.cols());
    let l = t.div_ceil(factor);
    let mut data = vec![0.0; l * factor * d];
    data[..t * d].copy_from_slice(x.data());
    Tensor::new(vec![l, factor * d], data).expect("consistent stacking")
}

/// One LSTM step; `pre` already holds `x·W_in + bias`.
fn lstm_cell(g: &mut Graph, pre: Var, h: Var, c: Var, w_rec: Var, units: usize) -> Result<(Var, Var), ModelError> {
    let rec = g.matmul(h, w_rec)?;
    let gates = g.add(pre, rec)?;
    let i = g.slice(gates, 0, units)?;
    let f = g.slice(gates, units, units)?;
    let cand = g.slice(gates, 2 * units, units)?;
    let o = g.slice(gates, 3 * units, units)?;
    let i = g.sigmoid(i);
    let f = g.sigmoid(f);
    let cand = g.tanh(cand);
    let o = g.sigmoid(o);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

fn run_direction(g: &mut Graph, input: Var, lstm: &LstmVars, units: usize, reverse: bool) -> Result<Vec<Var>, ModelError> {
    let proj = g.matmul(input, lstm.w_in)?;
    let proj = g.add_row_broadcast(proj, lstm.bias)?;
    let len = g.value(input).rows();
    let mut h = g.constant(Tensor::zeros(&[units]));
    let mut c = g.constant(Tensor::zeros(&[units]));
    let mut out = vec![h; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for j in order {
        let pre = g.row(proj, j)?;
        (h, c) = lstm_cell(g, pre, h, c, lstm.w_rec, units)?;
        out[j] = h;
    }
    Ok(out)
}

/// `h = BLSTMᴺ(stack(x))`.
pub fn encode(g: &mut Graph, m: &Bound, cfg: &ModelConfig, x: &Tensor) -> Result<EncoderStates, ModelError> {
    if x.ndim() != 2 || x.rows() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if x.cols() != cfg.feature_dim {
        return Err(ModelError::FeatureDim { expected: cfg.feature_dim, got: x.cols() });
    }
    let mut input = g.constant(stack_frames(x, cfg.downsample_factor));
    for layer in &m.encoder {
        let fwd = run_direction(g, input, &layer[0], m.hidden, false)?;
        let bwd = run_direction(g, input, &layer[1], m.hidden, true)?;
        let rows = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect::<Result<Vec<_>, _>>()?;
        input = g.stack_rows(&rows)?;
    }
    let len = g.value(input).rows();
    Ok(EncoderStates { h: input, len })
}

/// Per-frame log-distributions over all vocabulary ids (id 0 is the blank),
/// `L × vocab_size`.
pub fn ctc_log_probs(g: &mut Graph, m: &Bound, enc: &EncoderStates) -> Result<Var, ModelError> {
    let logits = g.matmul(enc.h, m.ctc_weight)?;
    let logits = g.add_row_broadcast(logits, m.ctc_bias)?;
    Ok(g.log_softmax(logits))
}

pub fn prepare_attention(g: &mut Graph, m: &Bound, enc: EncoderStates) -> Result<AttentionMemory, ModelError> {
    let projected = m
        .heads
        .iter()
        .map(|head| {
            let p = g.matmul(enc.h, head.w_enc)?;
            Ok(g.add_row_broadcast(p, head.bias)?)
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(AttentionMemory { enc, projected })
}

/// Zero hidden state with uniform previous attention.
pub fn initial_state(g: &mut Graph, m: &Bound, mem: &AttentionMemory) -> DecoderState {
    let s = g.constant(Tensor::zeros(&[m.dec_hidden]));
    let cell = g.constant(Tensor::zeros(&[m.dec_hidden]));
    let uniform = Tensor::filled(&[mem.enc.len], 1.0 / mem.enc.len as f64);
    let prev_attention = m.heads.iter().map(|_| g.constant(uniform.clone())).collect();
    DecoderState { s, cell, prev_attention }
}

/// Location-aware additive attention:
/// `e_j = vᵀ tanh(W_enc h_j + W_dec s + W_loc (F * α_prev)_j + b)`,
/// `α = softmax(e)`, `c = Σ_j α_j h_j`. With several heads the per-head
/// contexts are concatenated and projected back to the encoder width.
pub fn attend(
    g: &mut Graph,
    m: &Bound,
    state: &DecoderState,
    mem: &AttentionMemory,
) -> Result<(Vec<Var>, Var), ModelError> {
    let mut weights = Vec::with_capacity(m.heads.len());
    let mut contexts = Vec::with_capacity(m.heads.len());
    for ((head, &proj), &prev) in m.heads.iter().zip(&mem.projected).zip(&state.prev_attention) {
        let dec = g.matmul(state.s, head.w_dec)?;
        let loc = g.conv1d(prev, head.loc_conv)?;
        let loc = g.matmul(loc, head.w_loc)?;
        let pre = g.add(proj, loc)?;
        let pre = g.add_row_broadcast(pre, dec)?;
        let act = g.tanh(pre);
        let scores = g.matmul(act, head.v)?;
        let alpha = g.softmax(scores);
        let ctx = g.matmul(alpha, mem.enc.h)?;
        weights.push(alpha);
        contexts.push(ctx);
    }
    let context = match m.att_out {
        None => contexts[0],
        Some(out) => {
            let joined = g.concat(&contexts)?;
            g.matmul(joined, out)?
        }
    };
    Ok((weights, context))
}

/// `s_n = LSTM(s_{n−1}, [InputProj(y_{n−1}); c_n])`, logits
/// `= E·q_n + b` with `q_n = s_n` (or its bottleneck projection when the
/// embedding width differs from the decoder width).
pub fn decoder_step(
    g: &mut Graph,
    m: &Bound,
    state: &DecoderState,
    attention: Vec<Var>,
    prev_token: TokenId,
    context: Var,
) -> Result<(DecoderState, Var), ModelError> {
    if prev_token >= m.vocab {
        return Err(ModelError::UnknownToken { token: prev_token, vocab_size: m.vocab });
    }
    let emb = g.row(m.dec_embed, prev_token)?;
    let input = g.concat(&[emb, context])?;
    let pre = g.matmul(input, m.dec_lstm.w_in)?;
    let pre = g.add(pre, m.dec_lstm.bias)?;
    let (s, cell) = lstm_cell(g, pre, state.s, state.cell, m.dec_lstm.w_rec, m.dec_hidden)?;
    let q = match m.bottleneck {
        Some(b) => g.matmul(s, b)?,
        None => s,
    };
    let logits = g.matmul(m.embedding, q)?;
    let logits = g.add(logits, m.output_bias)?;
    Ok((DecoderState { s, cell, prev_attention: attention }, logits))
}

/// Attention followed by one decoder step.
pub fn decode_step(
    g: &mut Graph,
    m: &Bound,
    state: &DecoderState,
    mem: &AttentionMemory,
    prev_token: TokenId,
) -> Result<(DecoderState, Var), ModelError> {
    let (weights, context) = attend(g, m, state, mem)?;
    decoder_step(g, m, state, weights, prev_token, context)
}

/// Teacher-forced decoder logits for `transcript` followed by the end token:
/// step `n` consumes `[SOS, y_1, …, y_N][n]`.
pub fn teacher_forced_logits(
    g: &mut Graph,
    m: &Bound,
    mem: &AttentionMemory,
    transcript: &[TokenId],
) -> Result<Vec<Var>, ModelError> {
    let mut state = initial_state(g, m, mem);
    let mut out = Vec::with_capacity(transcript.len() + 1);
    let mut prev = SOS;
    for &tok in transcript.iter().chain(std::iter::once(&crate::corpus::EOS)) {
        let (next, logits) = decode_step(g, m, &state, mem, prev)?;
        out.push(logits);
        state = next;
        prev = tok;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            feature_dim: 3,
            encoder_hidden: 4,
            decoder_hidden: 5,
            embed_dim: 5,
            attention_dim: 4,
            vocab_size: 7,
            ..ModelConfig::default()
        }
    }

    fn features(t: usize, d: usize) -> Tensor {
        let data = (0..t * d).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        Tensor::new(vec![t, d], data).unwrap()
    }

    #[test]
    fn encoder_lengths() {
        let model = Model::new(cfg()).unwrap();
        for (t, want) in [(8, 4), (7, 4), (2, 1)] {
            let mut g = Graph::new();
            let b = model.bind(&mut g, false);
            let enc = encode(&mut g, &b, &model.config, &features(t, 3)).unwrap();
            assert_eq!(enc.len, want);
            assert_eq!(g.value(enc.h).shape(), &[want, 8]);
        }
    }

    #[test]
    fn zero_model_zero_input_gives_zero_states() {
        let model = Model::zeros(cfg()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &Tensor::zeros(&[6, 3])).unwrap();
        assert!(g.value(enc.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_and_misshapen_input_rejected() {
        let model = Model::new(cfg()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        assert!(matches!(
            encode(&mut g, &b, &model.config, &Tensor::zeros(&[4, 2])),
            Err(ModelError::FeatureDim { expected: 3, got: 2 })
        ));
        assert!(matches!(
            encode(&mut g, &b, &model.config, &Tensor::vector(&[1.0])),
            Err(ModelError::EmptyInput)
        ));
    }

    #[test]
    fn single_state_attention_is_trivial() {
        let model = Model::new(cfg()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(2, 3)).unwrap();
        let mem = prepare_attention(&mut g, &b, enc).unwrap();
        let st = initial_state(&mut g, &b, &mem);
        let (w, ctx) = attend(&mut g, &b, &st, &mem).unwrap();
        assert_eq!(g.value(w[0]).data(), &[1.0]);
        assert_eq!(g.value(ctx).data(), g.value(enc.h).row(0));
    }

    #[test]
    fn zero_scorer_gives_uniform_weights() {
        let mut model = Model::new(cfg()).unwrap();
        model.params.insert("att.0.v".into(), Tensor::zeros(&[4]));
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(10, 3)).unwrap();
        let mem = prepare_attention(&mut g, &b, enc).unwrap();
        let st = initial_state(&mut g, &b, &mem);
        let (w, _) = attend(&mut g, &b, &st, &mem).unwrap();
        for &v in g.value(w[0]).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_output_projection_is_uniform() {
        let mut model = Model::new(cfg()).unwrap();
        model.params.insert(EMBEDDING_PARAM.into(), Tensor::zeros(&[7, 5]));
        model.params.insert(OUTPUT_BIAS_PARAM.into(), Tensor::zeros(&[7]));
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(6, 3)).unwrap();
        let mem = prepare_attention(&mut g, &b, enc).unwrap();
        let st = initial_state(&mut g, &b, &mem);
        let (_, logits) = decode_step(&mut g, &b, &st, &mem, SOS).unwrap();
        let p = g.softmax(logits);
        for &v in g.value(p).data() {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_token_rejected() {
        let model = Model::new(cfg()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(6, 3)).unwrap();
        let mem = prepare_attention(&mut g, &b, enc).unwrap();
        let st = initial_state(&mut g, &b, &mem);
        assert!(matches!(
            decode_step(&mut g, &b, &st, &mem, 7),
            Err(ModelError::UnknownToken { token: 7, vocab_size: 7 })
        ));
    }

    #[test]
    fn ctc_rows_are_normalised() {
        let model = Model::new(cfg()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(9, 3)).unwrap();
        let lp = ctc_log_probs(&mut g, &b, &enc).unwrap();
        let t = g.value(lp);
        assert_eq!(t.shape(), &[5, 7]);
        for r in 0..t.rows() {
            let s: f64 = t.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_ctc_projection_is_uniform() {
        let mut model = Model::new(cfg()).unwrap();
        model.params.insert("ctc.weight".into(), Tensor::zeros(&[8, 7]));
        model.params.insert("ctc.bias".into(), Tensor::zeros(&[7]));
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(4, 3)).unwrap();
        let lp = ctc_log_probs(&mut g, &b, &enc).unwrap();
        for &v in g.value(lp).data() {
            assert!((v + 7f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_heads_attend_identically() {
        let c = ModelConfig { attention_heads: 2, ..cfg() };
        let mut model = Model::new(c).unwrap();
        for name in ["w_enc", "w_dec", "bias", "loc_conv", "w_loc", "v"] {
            let t = model.params[&format!("att.0.{name}")].clone();
            model.params.insert(format!("att.1.{name}"), t);
        }
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(9, 3)).unwrap();
        let mem = prepare_attention(&mut g, &b, enc).unwrap();
        let mut st = initial_state(&mut g, &b, &mem);
        for tok in [SOS, 4, 5] {
            let (w, _) = attend(&mut g, &b, &st, &mem).unwrap();
            assert_eq!(g.value(w[0]), g.value(w[1]));
            st = decode_step(&mut g, &b, &st, &mem, tok).unwrap().0;
        }
    }

    #[test]
    fn decoder_steps_are_deterministic() {
        let model = Model::new(cfg()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g, false);
        let enc = encode(&mut g, &b, &model.config, &features(6, 3)).unwrap();
        let mem = prepare_attention(&mut g, &b, enc).unwrap();
        let st = initial_state(&mut g, &b, &mem);
        let (s1, l1) = decode_step(&mut g, &b, &st, &mem, 4).unwrap();
        let (s2, l2) = decode_step(&mut g, &b, &st, &mem, 4).unwrap();
        assert_eq!(g.value(l1), g.value(l2));
        assert_eq!(g.value(s1.s), g.value(s2.s));
        let p = g.softmax(l1);
        assert!((g.value(p).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = Model::new(cfg()).unwrap();
        assert_eq!(a, Model::new(cfg()).unwrap());
        assert_ne!(a, Model::new(ModelConfig { seed: 9, ..cfg() }).unwrap());
        assert!(a.params.values().all(|t| t.max_abs() < INIT_RANGE));
        assert_eq!(a.param_count(), a.config.param_count());
    }
}
