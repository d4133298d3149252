use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::vocab::{Vocabulary, EOS};
use crate::error::{Error, Result};
use crate::promptgraph::ParamRef;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d: usize,
    pub seed: u64,
    pub hidden_dim: usize,
    pub context_limit: usize,
    /// Standard deviation of frozen token embeddings.
    pub token_scale: f64,
    /// Amplitude of the sinusoidal positional vectors.
    pub position_scale: f64,
}

impl EncoderConfig {
    pub fn new(d: usize, seed: u64) -> Self {
        Self {
            d,
            seed,
            hidden_dim: 2 * d,
            ..Self::default()
        }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 64,
            seed: 0,
            hidden_dim: 128,
            context_limit: 77,
            token_scale: 0.02,
            position_scale: 0.002,
        }
    }
}

/// One position of an encoder input.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptElement {
    Token(u32),
    Continuous { vector: Vec<f64>, param: ParamRef },
}

/// Mixed sequence of token ids and learnable continuous vectors, ending in EOS.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PromptSequence {
    pub elements: Vec<PromptElement>,
}

impl PromptSequence {
    pub fn from_tokens(ids: &[u32]) -> Self {
        Self {
            elements: ids.iter().map(|&i| PromptElement::Token(i)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Global (EOS-position) feature plus one feature row per input position.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedText {
    pub global: Vec<f64>,
    pub tokens: Vec<f64>,
    pub n_r: usize,
    pub d: usize,
}

impl EncodedText {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.tokens[t * self.d..(t + 1) * self.d]
    }
}

/// Intermediates kept by a traced forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    n: usize,
    /// `tanh(W1 u_t)`.
    hidden: Vec<f64>,
}

/// Frozen text encoder.
///
/// For inputs `x_t` (token embedding or continuous vector, plus a
/// positional vector) each position is mixed with the causal mean of the
/// positions up to it, `u_t = x_t + mean(x_0..=x_t)`, and passed through a
/// residual tanh layer, `row_t = W2 tanh(W1 u_t) + u_t`. The global
/// feature is the row at the final (EOS) position.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    cfg: EncoderConfig,
    vocab: Vocabulary,
    embeddings: Vec<f64>,
    positions: Vec<f64>,
    w1: Vec<f64>,
    w2: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn token_rng(seed: u64, token: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

impl TextEncoder {
    /// Builds the frozen weights. Token embeddings depend only on the seed
    /// and the token string, so two vocabularies agree on shared tokens.
    pub fn new(cfg: EncoderConfig, vocab: Vocabulary) -> Result<Self> {
        if cfg.d == 0 || cfg.hidden_dim == 0 || cfg.context_limit < 2 {
            return Err(Error::InvalidArgument(format!("invalid encoder config {cfg:?}")));
        }
        let (d, h) = (cfg.d, cfg.hidden_dim);
        let mut embeddings = Vec::with_capacity(vocab.len() * d);
        for (id, token) in vocab.tokens().iter().enumerate() {
            if id == EOS as usize {
                // EOS only pools: its row is the causal mean plus position.
                embeddings.extend(std::iter::repeat_n(0.0, d));
            } else {
                embeddings.extend(gaussian(&mut token_rng(cfg.seed, token), d, cfg.token_scale));
            }
        }
        let mut positions = vec![0.0; cfg.context_limit * d];
        for t in 0..cfg.context_limit {
            for k in 0..d {
                let freq = 10000f64.powf((2 * (k / 2)) as f64 / d as f64);
                let angle = t as f64 / freq;
                positions[t * d + k] = cfg.position_scale * if k % 2 == 0 { angle.sin() } else { angle.cos() };
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w1 = gaussian(&mut rng, h * d, 1.0 / (d as f64).sqrt());
        let w2 = gaussian(&mut rng, d * h, 1.0 / (h as f64).sqrt());
        Ok(Self {
            cfg,
            vocab,
            embeddings,
            positions,
            w1,
            w2,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn d(&self) -> usize {
        self.cfg.d
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        self.vocab.tokenize(text, self.cfg.context_limit)
    }

    fn inputs(&self, seq: &PromptSequence) -> Result<Vec<f64>> {
        let d = self.cfg.d;
        let n = seq.len();
        if n > self.cfg.context_limit {
            return Err(Error::SequenceTooLong {
                len: n,
                limit: self.cfg.context_limit,
            });
        }
        if !matches!(seq.elements.last(), Some(PromptElement::Token(EOS))) {
            return Err(Error::InvalidArgument("sequence must end with EOS".into()));
        }
        let mut x = Vec::with_capacity(n * d);
        for (t, el) in seq.elements.iter().enumerate() {
            let base: &[f64] = match el {
                PromptElement::Token(id) => {
                    let id = *id as usize;
                    if id >= self.vocab.len() {
                        return Err(Error::InvalidArgument(format!("token id {id} outside vocabulary")));
                    }
                    &self.embeddings[id * d..(id + 1) * d]
                }
                PromptElement::Continuous { vector, .. } => {
                    if vector.len() != d {
                        return Err(Error::InvalidArgument(format!(
                            "continuous token has dim {}, expected {d}",
                            vector.len()
                        )));
                    }
                    vector
                }
            };
            let pos = &self.positions[t * d..(t + 1) * d];
            x.extend(base.iter().zip(pos).map(|(a, b)| a + b));
        }
        Ok(x)
    }

    /// Forward pass keeping the intermediates needed by [`Self::backward`].
    pub fn encode_traced(&self, seq: &PromptSequence) -> Result<(EncodedText, EncoderTrace)> {
        let (d, h) = (self.cfg.d, self.cfg.hidden_dim);
        let x = self.inputs(seq)?;
        let n = seq.len();
        let mut mixed = vec![0.0; n * d];
        let mut prefix = vec![0.0; d];
        for t in 0..n {
            let inv = 1.0 / (t + 1) as f64;
            for k in 0..d {
                prefix[k] += x[t * d + k];
                mixed[t * d + k] = x[t * d + k] + prefix[k] * inv;
            }
        }
        let mut hidden = vec![0.0; n * h];
        let mut rows = vec![0.0; n * d];
        for t in 0..n {
            let u = &mixed[t * d..(t + 1) * d];
            let ht = &mut hidden[t * h..(t + 1) * h];
            for (j, hj) in ht.iter_mut().enumerate() {
                let w = &self.w1[j * d..(j + 1) * d];
                let a: f64 = w.iter().zip(u).map(|(p, q)| p * q).sum::<f64>();
                *hj = a.tanh();
            }
            let row = &mut rows[t * d..(t + 1) * d];
            for (i, r) in row.iter_mut().enumerate() {
                let w = &self.w2[i * h..(i + 1) * h];
                *r = u[i] + w.iter().zip(ht.iter()).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue("encoder output".into()));
        }
        let global = rows[(n - 1) * d..].to_vec();
        Ok((
            EncodedText {
                global,
                tokens: rows,
                n_r: n,
                d,
            },
            EncoderTrace { n, hidden },
        ))
    }

    pub fn encode(&self, seq: &PromptSequence) -> Result<EncodedText> {
        self.encode_traced(seq).map(|(out, _)| out)
    }

    pub fn encode_tokens(&self, ids: &[u32]) -> Result<EncodedText> {
        self.encode(&PromptSequence::from_tokens(ids))
    }

    pub fn encode_text(&self, text: &str) -> Result<EncodedText> {
        self.encode_tokens(&self.tokenize(text)?)
    }

    /// Parallel encoding; results equal sequential [`Self::encode`] calls.
    pub fn encode_batch(&self, seqs: &[PromptSequence]) -> Result<Vec<EncodedText>> {
        seqs.par_iter().map(|s| self.encode(s)).collect()
    }

    /// Vector-Jacobian product: given `d loss / d row_t` for every output row
    /// (`n × d`, row-major), returns `d loss / d x_t` for every input position.
    pub fn backward(&self, trace: &EncoderTrace, d_rows: &[f64]) -> Vec<f64> {
        let (d, h, n) = (self.cfg.d, self.cfg.hidden_dim, trace.n);
        assert_eq!(d_rows.len(), n * d, "gradient shape");
        let mut d_mixed = vec![0.0; n * d];
        let mut g = vec![0.0; h];
        for t in 0..n {
            let dr = &d_rows[t * d..(t + 1) * d];
            if dr.iter().all(|&v| v == 0.0) {
                continue;
            }
            let ht = &trace.hidden[t * h..(t + 1) * h];
            for (j, gj) in g.iter_mut().enumerate() {
                let back: f64 = (0..d).map(|i| self.w2[i * h + j] * dr[i]).sum();
                *gj = back * (1.0 - ht[j] * ht[j]);
            }
            let du = &mut d_mixed[t * d..(t + 1) * d];
            for (k, duk) in du.iter_mut().enumerate() {
                *duk = dr[k] + (0..h).map(|j| self.w1[j * d + k] * g[j]).sum::<f64>();
            }
        }
        let mut d_x = vec![0.0; n * d];
        let mut suffix = vec![0.0; d];
        for t in (0..n).rev() {
            let inv = 1.0 / (t + 1) as f64;
            for k in 0..d {
                suffix[k] += d_mixed[t * d + k] * inv;
                d_x[t * d + k] = d_mixed[t * d + k] + suffix[k];
            }
        }
        d_x
    }

    /// [`Self::backward`] when only the global feature carries gradient.
    pub fn backward_global(&self, trace: &EncoderTrace, d_global: &[f64]) -> Vec<f64> {
        let d = self.cfg.d;
        let mut d_rows = vec![0.0; trace.n * d];
        d_rows[(trace.n - 1) * d..].copy_from_slice(d_global);
        self.backward(trace, &d_rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgraph::Branch;

    fn encoder(d: usize, seed: u64) -> TextEncoder {
        let vocab = Vocabulary::build(["a photo of a dog", "the cat sat on the mat"]);
        let cfg = EncoderConfig {
            token_scale: 0.3,
            position_scale: 0.1,
            ..EncoderConfig::new(d, seed)
        };
        TextEncoder::new(cfg, vocab).unwrap()
    }

    fn mixed_sequence(enc: &TextEncoder, rng: &mut ChaCha8Rng) -> PromptSequence {
        let d = enc.d();
        let mut elements: Vec<PromptElement> = (0..3)
            .map(|i| PromptElement::Continuous {
                vector: gaussian(rng, d, 0.5),
                param: ParamRef { branch: Branch::Global, index: i },
            })
            .collect();
        elements.push(PromptElement::Token(enc.vocab().id("dog")));
        elements.push(PromptElement::Token(EOS));
        PromptSequence { elements }
    }

    #[test]
    fn deterministic_and_shape() {
        let enc = encoder(8, 3);
        let ids = enc.tokenize("a photo of a dog").unwrap();
        assert_eq!(ids.len(), 6);
        let a = enc.encode_tokens(&ids).unwrap();
        let b = encoder(8, 3).encode_tokens(&ids).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_r, 6);
        assert_eq!(a.tokens.len(), 6 * 8);
        assert_eq!(a.global, a.row(5));
        let five = enc.encode_tokens(&ids[1..]).unwrap();
        assert_eq!(five.n_r, 5);
    }

    #[test]
    fn perturbation_is_causal() {
        let enc = encoder(8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let seq = mixed_sequence(&enc, &mut rng);
        let base = enc.encode(&seq).unwrap();
        let mut bumped = seq.clone();
        if let PromptElement::Continuous { vector, .. } = &mut bumped.elements[1] {
            vector[0] += 1e-3;
        }
        let out = enc.encode(&bumped).unwrap();
        assert_eq!(base.row(0), out.row(0));
        for t in 1..seq.len() {
            assert_ne!(base.row(t), out.row(t), "row {t} should change");
        }
        assert_ne!(base.global, out.global);
    }

    #[test]
    fn jvp_matches_central_differences() {
        let enc = encoder(6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seq = mixed_sequence(&enc, &mut rng);
        let n = seq.len();
        let d = enc.d();
        let (_, trace) = enc.encode_traced(&seq).unwrap();
        let upstream = gaussian(&mut rng, n * d, 1.0);
        let grad = enc.backward(&trace, &upstream);
        let objective = |s: &PromptSequence| -> f64 {
            let out = enc.encode(s).unwrap();
            out.tokens.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for pos in 0..3 {
            for k in 0..d {
                let mut plus = seq.clone();
                let mut minus = seq.clone();
                for (s, sign) in [(&mut plus, 1.0), (&mut minus, -1.0)] {
                    if let PromptElement::Continuous { vector, .. } = &mut s.elements[pos] {
                        vector[k] += sign * h;
                    }
                }
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                worst = worst.max((fd - grad[pos * d + k]).abs());
                scale = scale.max(fd.abs());
            }
        }
        assert!(worst / scale < 1e-6, "relative error {}", worst / scale);
    }

    #[test]
    fn errors() {
        let enc = encoder(4, 0);
        let long = PromptSequence::from_tokens(&vec![EOS; 78]);
        assert!(matches!(enc.encode(&long), Err(Error::SequenceTooLong { len: 78, limit: 77 })));
        assert!(enc.encode(&PromptSequence::from_tokens(&[3])).is_err());
    }

    #[test]
    fn batch_matches_sequential() {
        let enc = encoder(8, 2);
        let seqs: Vec<PromptSequence> = ["a dog", "the cat sat", "a photo of a mat"]
            .iter()
            .map(|t| PromptSequence::from_tokens(&enc.tokenize(t).unwrap()))
            .collect();
        let batch = enc.encode_batch(&seqs).unwrap();
        for (s, b) in seqs.iter().zip(&batch) {
            assert_eq!(&enc.encode(s).unwrap(), b);
        }
    }
}
