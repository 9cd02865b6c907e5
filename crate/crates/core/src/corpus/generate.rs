use serde::{Deserialize, Serialize};

use super::vocab::{Language, TokenId, Vocabulary};
use super::CorpusError;
use crate::autodiff::Tensor;
use crate::losses::ctc_required_frames;
use crate::rng::Prng;

/// Parameters of the synthetic two-language corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub l1_tokens: usize,
    pub l2_tokens: usize,
    pub train_l1: usize,
    pub train_l2: usize,
    pub test_mono_l1: usize,
    pub test_mono_l2: usize,
    pub test_cs: usize,
    /// Text-only transcripts (monolingual and code-switched) for LM training.
    pub lm_text: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_frames_per_token: usize,
    pub max_frames_per_token: usize,
    pub feature_dim: usize,
    /// Offset added to L2 prototypes on the first `separation_dims` features.
    pub separation: f64,
    pub separation_dims: usize,
    /// Standard deviation of the per-frame Gaussian noise.
    pub noise: f64,
    /// Encoder frame-stacking factor the corpus must stay CTC-feasible for.
    pub downsample_factor: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            l1_tokens: 20,
            l2_tokens: 20,
            train_l1: 1000,
            train_l2: 1000,
            test_mono_l1: 100,
            test_mono_l2: 100,
            test_cs: 200,
            lm_text: 2000,
            min_tokens: 3,
            max_tokens: 8,
            min_frames_per_token: 2,
            max_frames_per_token: 4,
            feature_dim: 8,
            separation: 1.5,
            separation_dims: 2,
            noise: 0.6,
            downsample_factor: 2,
            seed: 1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |field: &'static str, msg: String| Err(CorpusError::InvalidSpec { field, msg });
        for (field, v) in [("l1_tokens", self.l1_tokens), ("l2_tokens", self.l2_tokens)] {
            if v < 2 {
                return bad(field, format!("each language needs at least 2 tokens, got {v}"));
            }
        }
        for (field, v) in [
            ("train_l1", self.train_l1),
            ("train_l2", self.train_l2),
            ("test_mono_l1", self.test_mono_l1),
            ("test_mono_l2", self.test_mono_l2),
            ("test_cs", self.test_cs),
            ("feature_dim", self.feature_dim),
            ("min_tokens", self.min_tokens),
            ("min_frames_per_token", self.min_frames_per_token),
            ("downsample_factor", self.downsample_factor),
        ] {
            if v < 1 {
                return bad(field, format!("must be at least 1, got {v}"));
            }
        }
        if self.max_tokens < self.min_tokens {
            return bad("max_tokens", format!("{} is below min_tokens {}", self.max_tokens, self.min_tokens));
        }
        if self.max_tokens < 2 {
            return bad("max_tokens", "code-switched utterances need at least 2 tokens".into());
        }
        if self.max_frames_per_token < self.min_frames_per_token {
            return bad(
                "max_frames_per_token",
                format!("{} is below min_frames_per_token {}", self.max_frames_per_token, self.min_frames_per_token),
            );
        }
        if self.min_frames_per_token < self.downsample_factor {
            return bad(
                "min_frames_per_token",
                format!(
                    "{} frames per token cannot be CTC-aligned after downsampling by {}",
                    self.min_frames_per_token, self.downsample_factor
                ),
            );
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", format!("must be a finite value >= 0, got {}", self.noise));
        }
        if !self.separation.is_finite() {
            return bad("separation", "must be finite".into());
        }
        if self.separation_dims > self.feature_dim {
            return bad(
                "separation_dims",
                format!("{} exceeds feature_dim {}", self.separation_dims, self.feature_dim),
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UttClass {
    MonoL1,
    MonoL2,
    CodeSwitched,
}

impl UttClass {
    pub fn is_mono(self) -> bool {
        !matches!(self, UttClass::CodeSwitched)
    }

    /// Class implied by a transcript's language tags.
    pub fn of(vocab: &Vocabulary, transcript: &[TokenId]) -> Option<UttClass> {
        let has = |l| transcript.iter().any(|&t| vocab.language(t) == Some(l));
        match (has(Language::L1), has(Language::L2)) {
            (true, true) => Some(UttClass::CodeSwitched),
            (true, false) => Some(UttClass::MonoL1),
            (false, true) => Some(UttClass::MonoL2),
            (false, false) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub class: UttClass,
    pub transcript: Vec<TokenId>,
    /// `T × feature_dim`.
    pub features: Tensor,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.rows()
    }
}

/// Acoustic prototype per vocabulary id; special tokens have none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prototypes(pub Vec<Option<Vec<f64>>>);

impl Prototypes {
    pub fn draw(spec: &CorpusSpec, vocab: &Vocabulary) -> Prototypes {
        let mut rng = Prng::derive(spec.seed, "prototypes");
        let protos = (0..vocab.len())
            .map(|id| {
                let lang = vocab.language(id)?;
                let mut p: Vec<f64> = (0..spec.feature_dim).map(|_| rng.normal()).collect();
                if lang == Language::L2 {
                    for v in p.iter_mut().take(spec.separation_dims) {
                        *v += spec.separation;
                    }
                }
                Some(p)
            })
            .collect();
        Prototypes(protos)
    }

    pub fn get(&self, id: TokenId) -> Option<&[f64]> {
        self.0.get(id).and_then(|p| p.as_deref())
    }

    /// Gives token `b` the same prototype as token `a`, making the pair
    /// acoustically indistinguishable.
    pub fn tie(&mut self, a: TokenId, b: TokenId) {
        self.0[b] = self.0[a].clone();
    }
}

/// Renders `transcript` as frames: each token's prototype repeated for a
/// random number of frames in the spec's range, plus isotropic noise.
pub fn synthesize(
    spec: &CorpusSpec,
    prototypes: &Prototypes,
    transcript: &[TokenId],
    rng: &mut Prng,
) -> Result<Tensor, CorpusError> {
    let d = spec.feature_dim;
    let mut data = Vec::new();
    for &tok in transcript {
        let proto = prototypes.get(tok).ok_or(CorpusError::NoPrototype(tok))?;
        let frames = rng.range_inclusive(spec.min_frames_per_token, spec.max_frames_per_token);
        for _ in 0..frames {
            for &p in proto.iter().take(d) {
                data.push(p + spec.noise * rng.normal());
            }
        }
    }
    let t = data.len() / d;
    let frames_after = t.div_ceil(spec.downsample_factor);
    let required = ctc_required_frames(transcript);
    if t == 0 || required > frames_after {
        return Err(CorpusError::Infeasible { frames: frames_after, required });
    }
    Ok(Tensor::new(vec![t, d], data)?)
}

fn draw_token(rng: &mut Prng, pool: &[TokenId], prev: Option<TokenId>) -> TokenId {
    loop {
        let t = pool[rng.below(pool.len())];
        if Some(t) != prev {
            return t;
        }
    }
}

/// Monolingual transcript without immediate repeats.
pub fn mono_transcript(spec: &CorpusSpec, pool: &[TokenId], rng: &mut Prng) -> Vec<TokenId> {
    let n = rng.range_inclusive(spec.min_tokens, spec.max_tokens);
    let mut out: Vec<TokenId> = Vec::with_capacity(n);
    for _ in 0..n {
        let t = draw_token(rng, pool, out.last().copied());
        out.push(t);
    }
    out
}

/// Code-switched transcript: alternating language segments of 1-4 tokens
/// with at least one switch point.
pub fn cs_transcript(spec: &CorpusSpec, vocab: &Vocabulary, rng: &mut Prng) -> Vec<TokenId> {
    let n = rng.range_inclusive(spec.min_tokens.max(2), spec.max_tokens);
    let pools = [vocab.language_ids(Language::L1), vocab.language_ids(Language::L2)];
    let mut lang = rng.below(2);
    let mut out: Vec<TokenId> = Vec::with_capacity(n);
    let mut first = true;
    while out.len() < n {
        let remaining = n - out.len();
        let cap = if first { remaining - 1 } else { remaining };
        let seg = rng.range_inclusive(1, 4).min(cap);
        for _ in 0..seg {
            let t = draw_token(rng, &pools[lang], out.last().copied());
            out.push(t);
        }
        lang = 1 - lang;
        first = false;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub vocab: Vocabulary,
    pub prototypes: Prototypes,
    pub train: Vec<Utterance>,
    pub test_mono: Vec<Utterance>,
    pub test_cs: Vec<Utterance>,
    pub lm_text: Vec<Vec<TokenId>>,
}

fn make_split(
    spec: &CorpusSpec,
    vocab: &Vocabulary,
    protos: &Prototypes,
    name: &str,
    plan: &[(UttClass, usize)],
) -> Result<Vec<Utterance>, CorpusError> {
    let mut rng = Prng::derive(spec.seed, name);
    let l1 = vocab.language_ids(Language::L1);
    let l2 = vocab.language_ids(Language::L2);
    let mut out = Vec::new();
    for &(class, count) in plan {
        for _ in 0..count {
            let transcript = match class {
                UttClass::MonoL1 => mono_transcript(spec, &l1, &mut rng),
                UttClass::MonoL2 => mono_transcript(spec, &l2, &mut rng),
                UttClass::CodeSwitched => cs_transcript(spec, vocab, &mut rng),
            };
            let features = synthesize(spec, protos, &transcript, &mut rng)?;
            let id = format!("{name}-{:05}", out.len());
            out.push(Utterance { id, class, transcript, features });
        }
    }
    Ok(out)
}

/// Generates the full corpus. Training utterances are monolingual only.
pub fn generate(spec: &CorpusSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let vocab = Vocabulary::build(spec);
    let prototypes = Prototypes::draw(spec, &vocab);
    let train = make_split(
        spec,
        &vocab,
        &prototypes,
        "train",
        &[(UttClass::MonoL1, spec.train_l1), (UttClass::MonoL2, spec.train_l2)],
    )?;
    let test_mono = make_split(
        spec,
        &vocab,
        &prototypes,
        "test_mono",
        &[(UttClass::MonoL1, spec.test_mono_l1), (UttClass::MonoL2, spec.test_mono_l2)],
    )?;
    let test_cs = make_split(spec, &vocab, &prototypes, "test_cs", &[(UttClass::CodeSwitched, spec.test_cs)])?;

    let mut rng = Prng::derive(spec.seed, "lm_text");
    let l1 = vocab.language_ids(Language::L1);
    let l2 = vocab.language_ids(Language::L2);
    let lm_text = (0..spec.lm_text)
        .map(|i| match i % 3 {
            0 => mono_transcript(spec, &l1, &mut rng),
            1 => mono_transcript(spec, &l2, &mut rng),
            _ => cs_transcript(spec, &vocab, &mut rng),
        })
        .collect();
    Ok(Corpus { spec: spec.clone(), vocab, prototypes, train, test_mono, test_cs, lm_text })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec {
            train_l1: 30,
            train_l2: 30,
            test_mono_l1: 5,
            test_mono_l2: 5,
            test_cs: 20,
            lm_text: 10,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn train_split_is_monolingual() {
        let c = generate(&small()).unwrap();
        assert_eq!(c.train.iter().filter(|u| u.class == UttClass::CodeSwitched).count(), 0);
        for u in &c.train {
            assert_eq!(UttClass::of(&c.vocab, &u.transcript), Some(u.class));
        }
    }

    #[test]
    fn code_switched_test_has_switch_points() {
        let c = generate(&small()).unwrap();
        for u in &c.test_cs {
            assert_eq!(UttClass::of(&c.vocab, &u.transcript), Some(UttClass::CodeSwitched));
            let langs: Vec<_> = u.transcript.iter().map(|&t| c.vocab.language(t).unwrap()).collect();
            let switches = langs.windows(2).filter(|w| w[0] != w[1]).count();
            assert!(switches >= 1);
            let mut run = 1;
            for w in langs.windows(2) {
                run = if w[0] == w[1] { run + 1 } else { 1 };
                assert!(run <= 4, "segment longer than 4 tokens");
            }
        }
    }

    #[test]
    fn noiseless_features_repeat_prototypes() {
        let spec = CorpusSpec { noise: 0.0, min_frames_per_token: 3, max_frames_per_token: 3, ..small() };
        let c = generate(&spec).unwrap();
        for u in c.train.iter().take(10) {
            assert_eq!(u.frames(), 3 * u.transcript.len());
            for (f, &tok) in u.transcript.iter().enumerate() {
                let proto = c.prototypes.get(tok).unwrap();
                for k in 0..3 {
                    assert_eq!(u.features.row(3 * f + k), proto);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = CorpusSpec { seed: 2, ..small() };
        assert_ne!(generate(&small()).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let cases = [
            (CorpusSpec { noise: -1.0, ..small() }, "noise"),
            (CorpusSpec { train_l1: 0, ..small() }, "train_l1"),
            (CorpusSpec { l2_tokens: 1, ..small() }, "l2_tokens"),
            (CorpusSpec { min_frames_per_token: 1, downsample_factor: 2, ..small() }, "min_frames_per_token"),
            (CorpusSpec { min_tokens: 5, max_tokens: 4, ..small() }, "max_tokens"),
        ];
        for (spec, field) in cases {
            match generate(&spec) {
                Err(CorpusError::InvalidSpec { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn noise_residuals_match_level() {
        let spec = CorpusSpec { noise: 0.37, min_frames_per_token: 3, max_frames_per_token: 3, ..small() };
        let c = generate(&spec).unwrap();
        let mut residuals = Vec::new();
        for u in &c.train {
            for (f, &tok) in u.transcript.iter().enumerate() {
                let proto = c.prototypes.get(tok).unwrap();
                for k in 0..3 {
                    residuals.extend(u.features.row(3 * f + k).iter().zip(proto).map(|(a, b)| a - b));
                }
            }
        }
        let frames = residuals.len() / spec.feature_dim;
        assert!(frames >= 1000, "{frames}");
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - spec.noise).abs() < 0.1 * spec.noise, "{sd}");
    }
}
