//! Student models.
//!
//! [`StudentModel`] is the interface the losses and the evaluator see: a
//! tokenizer plus teacher-forced target log-probabilities and greedy decoding.
//! [`TrainableStudent`] adds flat parameter/gradient access so the trainer and
//! optimizer stay model-agnostic.
//!
//! [`TinyStudent`] is the built-in reference implementation: a mean-pooled
//! encoder and a small recurrent decoder that share one embedding table, which
//! is also the output projection. The weight tying is the point — verdict
//! prediction, rationale generation, and label generation all push on the same
//! embedding geometry, which is what lets the self-evaluation phase inform
//! label generation. Gradients are hand-derived backpropagation through time;
//! [`FixedLogitStudent`] is a closed-form model used to pin the loss oracles.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::digest::derive_seed;

pub type TokenId = u32;

/// Whitespace/lowercase vocabulary with three reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;

impl Vocab {
    /// Build a vocabulary from an iterator of texts. Word order in the result
    /// is sorted, so the same text multiset always yields the same ids.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words: alloc::collections::BTreeSet<String> = Default::default();
        for text in texts {
            for word in text.to_lowercase().split_whitespace() {
                words.insert(word.to_string());
            }
        }
        let mut tokens: Vec<String> =
            vec!["<unk>".to_string(), "<bos>".to_string(), "<eos>".to_string()];
        tokens.extend(words);
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { tokens, index }
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    #[must_use]
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.to_lowercase()
            .split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    /// The token list in id order; `from_tokens` round-trips it, so callers
    /// can persist a vocabulary alongside saved parameters.
    #[must_use]
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuild a vocabulary from a saved token list. The list must begin with
    /// the three reserved markers and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, StudentError> {
        if tokens.len() < 3
            || tokens[0] != "<unk>"
            || tokens[1] != "<bos>"
            || tokens[2] != "<eos>"
        {
            return Err(StudentError::BadVocab("reserved tokens missing or out of order"));
        }
        let index: BTreeMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        if index.len() != tokens.len() {
            return Err(StudentError::BadVocab("duplicate token"));
        }
        Ok(Vocab { tokens, index })
    }

    #[must_use]
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for (i, id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match self.tokens.get(*id as usize) {
                Some(tok) => out.push_str(tok),
                None => out.push_str("<unk>"),
            }
        }
        out
    }
}

/// Read-only student interface used by losses and evaluation.
pub trait StudentModel {
    fn vocab_size(&self) -> usize;

    /// Tokenize an input text.
    fn tokenize(&self, text: &str) -> Vec<TokenId>;

    /// Tokenize a target text, appending the model's end-of-sequence marker if
    /// it uses one.
    fn tokenize_target(&self, text: &str) -> Vec<TokenId> {
        self.tokenize(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> String;

    /// Teacher-forced per-position log-probability of each target token given
    /// the input. The returned vector has exactly `target.len()` entries.
    fn target_log_probs(&self, input: &[TokenId], target: &[TokenId]) -> Vec<f64>;

    /// Deterministic greedy decode, end marker stripped.
    fn generate(&self, input: &[TokenId], max_len: usize) -> Vec<TokenId>;

    fn param_count(&self) -> usize;
}

/// Mutable access for the trainer: flat parameters, flat accumulated
/// gradients, and one fused loss-plus-backward entry point.
pub trait TrainableStudent: StudentModel {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn grads(&self) -> &[f64];
    fn zero_grads(&mut self);

    /// Add `coeff * d(mean-token-cross-entropy)/d(params)` into the gradient
    /// buffer and return the (unscaled) mean token cross-entropy.
    fn accumulate_loss_grad(&mut self, input: &[TokenId], target: &[TokenId], coeff: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StudentError {
    ParamLengthMismatch { expected: usize, got: usize },
    DimTooSmall,
    BadVocab(&'static str),
}

impl fmt::Display for StudentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StudentError::ParamLengthMismatch { expected, got } => {
                write!(f, "parameter vector has {got} entries, model needs {expected}")
            }
            StudentError::DimTooSmall => f.write_str("model dimension must be at least 2"),
            StudentError::BadVocab(reason) => write!(f, "invalid vocabulary: {reason}"),
        }
    }
}

impl core::error::Error for StudentError {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TinyStudentConfig {
    pub dim: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TinyStudentConfig {
    fn default() -> Self {
        TinyStudentConfig { dim: 32, init_scale: 0.15, seed: 0 }
    }
}

/// Parameter block offsets inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    dim: usize,
    emb: usize,
    w_enc: usize,
    b_enc: usize,
    w_state: usize,
    w_embed: usize,
    w_ctx: usize,
    b_dec: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, dim: usize) -> Self {
        let emb = 0;
        let w_enc = emb + vocab * dim;
        let b_enc = w_enc + dim * dim;
        let w_state = b_enc + dim;
        let w_embed = w_state + dim * dim;
        let w_ctx = w_embed + dim * dim;
        let b_dec = w_ctx + dim * dim;
        let b_out = b_dec + dim;
        let total = b_out + vocab;
        Layout { vocab, dim, emb, w_enc, b_enc, w_state, w_embed, w_ctx, b_dec, b_out, total }
    }
}

/// The reference student. See the module docs for the architecture.
#[derive(Debug, Clone)]
pub struct TinyStudent {
    vocab: Vocab,
    layout: Layout,
    params: Vec<f64>,
    grads: Vec<f64>,
}

struct ForwardTrace {
    e_avg: Vec<f64>,
    h: Vec<f64>,
    /// Post-activation decoder states, one per target position.
    states: Vec<Vec<f64>>,
    /// Softmax distributions, one per target position.
    probs: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
}

fn softmax_in_place(logits: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in logits.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

impl TinyStudent {
    pub fn new(vocab: Vocab, config: &TinyStudentConfig) -> Result<Self, StudentError> {
        if config.dim < 2 {
            return Err(StudentError::DimTooSmall);
        }
        let layout = Layout::new(vocab.len(), config.dim);
        let mut rng = ChaCha8Rng::from_seed(derive_seed("student-init", &[], config.seed));
        let scale = config.init_scale;
        let params: Vec<f64> =
            (0..layout.total).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
        let grads = vec![0.0; layout.total];
        Ok(TinyStudent { vocab, layout, params, grads })
    }

    /// Rebuild a student from a saved flat parameter vector.
    pub fn from_params(
        vocab: Vocab,
        dim: usize,
        params: Vec<f64>,
    ) -> Result<Self, StudentError> {
        if dim < 2 {
            return Err(StudentError::DimTooSmall);
        }
        let layout = Layout::new(vocab.len(), dim);
        if params.len() != layout.total {
            return Err(StudentError::ParamLengthMismatch {
                expected: layout.total,
                got: params.len(),
            });
        }
        let grads = vec![0.0; layout.total];
        Ok(TinyStudent { vocab, layout, params, grads })
    }

    #[must_use]
    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    #[must_use]
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    fn emb_row(&self, token: TokenId) -> &[f64] {
        let d = self.layout.dim;
        let start = self.layout.emb + token as usize * d;
        &self.params[start..start + d]
    }

    /// `out[i] = tanh(b[i] + sum over (x, w) pairs of w[i][:] . x)`.
    fn affine_tanh(&self, b: usize, inputs: &[(&[f64], usize)], out: &mut [f64]) {
        let d = self.layout.dim;
        for i in 0..d {
            let mut acc = self.params[b + i];
            for (x, w_off) in inputs {
                let row = &self.params[w_off + i * d..w_off + i * d + d];
                debug_assert_eq!(x.len(), d);
                for j in 0..d {
                    acc += row[j] * x[j];
                }
            }
            out[i] = libm::tanh(acc);
        }
    }

    fn encode_input(&self, input: &[TokenId]) -> (Vec<f64>, Vec<f64>) {
        let d = self.layout.dim;
        let mut e_avg = vec![0.0; d];
        if !input.is_empty() {
            for &tok in input {
                let row = self.emb_row(tok.min(self.layout.vocab as u32 - 1));
                for j in 0..d {
                    e_avg[j] += row[j];
                }
            }
            let inv = 1.0 / input.len() as f64;
            for v in e_avg.iter_mut() {
                *v *= inv;
            }
        }
        let mut h = vec![0.0; d];
        self.affine_tanh(self.layout.b_enc, &[(&e_avg, self.layout.w_enc)], &mut h);
        (e_avg, h)
    }

    fn step_logits(&self, state: &[f64]) -> Vec<f64> {
        let v = self.layout.vocab;
        let d = self.layout.dim;
        let mut logits = vec![0.0; v];
        for tok in 0..v {
            let row = &self.params[self.layout.emb + tok * d..self.layout.emb + tok * d + d];
            let mut acc = self.params[self.layout.b_out + tok];
            for j in 0..d {
                acc += row[j] * state[j];
            }
            logits[tok] = acc;
        }
        logits
    }

    fn decoder_step(&self, prev_state: &[f64], prev_tok: TokenId, h: &[f64]) -> Vec<f64> {
        let d = self.layout.dim;
        let emb = self.emb_row(prev_tok.min(self.layout.vocab as u32 - 1)).to_vec();
        let mut state = vec![0.0; d];
        self.affine_tanh(
            self.layout.b_dec,
            &[
                (prev_state, self.layout.w_state),
                (&emb, self.layout.w_embed),
                (h, self.layout.w_ctx),
            ],
            &mut state,
        );
        state
    }

    fn forward(&self, input: &[TokenId], target: &[TokenId]) -> ForwardTrace {
        let (e_avg, h) = self.encode_input(input);
        let mut states = Vec::with_capacity(target.len());
        let mut probs = Vec::with_capacity(target.len());
        let mut log_probs = Vec::with_capacity(target.len());
        let mut prev_state = h.clone();
        for (t, &tok) in target.iter().enumerate() {
            let prev_tok = if t == 0 { BOS } else { target[t - 1] };
            let state = self.decoder_step(&prev_state, prev_tok, &h);
            let mut dist = self.step_logits(&state);
            softmax_in_place(&mut dist);
            let p = dist[(tok as usize).min(self.layout.vocab - 1)];
            log_probs.push(libm::log(p.max(1e-300)));
            prev_state = state.clone();
            states.push(state);
            probs.push(dist);
        }
        ForwardTrace { e_avg, h, states, probs, log_probs }
    }
}

impl StudentModel for TinyStudent {
    fn vocab_size(&self) -> usize {
        self.layout.vocab
    }

    fn tokenize(&self, text: &str) -> Vec<TokenId> {
        self.vocab.encode(text)
    }

    fn tokenize_target(&self, text: &str) -> Vec<TokenId> {
        let mut ids = self.vocab.encode(text);
        ids.push(EOS);
        ids
    }

    fn detokenize(&self, ids: &[TokenId]) -> String {
        self.vocab.decode(ids)
    }

    fn target_log_probs(&self, input: &[TokenId], target: &[TokenId]) -> Vec<f64> {
        self.forward(input, target).log_probs
    }

    fn generate(&self, input: &[TokenId], max_len: usize) -> Vec<TokenId> {
        let (_, h) = self.encode_input(input);
        let mut out: Vec<TokenId> = Vec::new();
        let mut prev_state = h.clone();
        for t in 0..max_len {
            let prev_tok = if t == 0 { BOS } else { out[t - 1] };
            let state = self.decoder_step(&prev_state, prev_tok, &h);
            let logits = self.step_logits(&state);
            // Lowest index wins ties, so decoding is fully deterministic.
            let mut best = 0usize;
            for (i, &l) in logits.iter().enumerate() {
                if l > logits[best] {
                    best = i;
                }
            }
            if best as TokenId == EOS {
                break;
            }
            out.push(best as TokenId);
            prev_state = state;
        }
        out
    }

    fn param_count(&self) -> usize {
        self.layout.total
    }
}

impl TrainableStudent for TinyStudent {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn grads(&self) -> &[f64] {
        &self.grads
    }

    fn zero_grads(&mut self) {
        for g in self.grads.iter_mut() {
            *g = 0.0;
        }
    }

    fn accumulate_loss_grad(&mut self, input: &[TokenId], target: &[TokenId], coeff: f64) -> f64 {
        if target.is_empty() {
            return 0.0;
        }
        let trace = self.forward(input, target);
        let m = target.len();
        let d = self.layout.dim;
        let vsize = self.layout.vocab;
        let loss = -trace.log_probs.iter().sum::<f64>() / m as f64;
        let scale = coeff / m as f64;

        let l = self.layout;
        let mut dh = vec![0.0; d];
        let mut dstate_next = vec![0.0; d];
        for t in (0..m).rev() {
            let state = &trace.states[t];
            let target_tok = (target[t] as usize).min(vsize - 1);
            // d loss / d logits, then fan out through the tied output layer.
            // `dstate_next` carries the recurrent gradient written by step t+1.
            let mut dstate = dstate_next.clone();
            for tok in 0..vsize {
                let mut dl = scale * trace.probs[t][tok];
                if tok == target_tok {
                    dl -= scale;
                }
                if dl == 0.0 {
                    continue;
                }
                self.grads[l.b_out + tok] += dl;
                let row = l.emb + tok * d;
                for j in 0..d {
                    self.grads[row + j] += dl * state[j];
                    dstate[j] += dl * self.params[row + j];
                }
            }
            // Through the step's tanh.
            let mut dpre = vec![0.0; d];
            for i in 0..d {
                dpre[i] = dstate[i] * (1.0 - state[i] * state[i]);
            }
            let prev_tok = if t == 0 { BOS } else { target[t - 1] };
            let prev_tok = (prev_tok as usize).min(vsize - 1);
            let prev_state: &[f64] = if t == 0 { &trace.h } else { &trace.states[t - 1] };
            let prev_emb_row = l.emb + prev_tok * d;
            for i in 0..d {
                let g = dpre[i];
                if g == 0.0 {
                    continue;
                }
                self.grads[l.b_dec + i] += g;
                let ws_row = l.w_state + i * d;
                let we_row = l.w_embed + i * d;
                let wc_row = l.w_ctx + i * d;
                for j in 0..d {
                    self.grads[ws_row + j] += g * prev_state[j];
                    self.grads[we_row + j] += g * self.params[prev_emb_row + j];
                    self.grads[wc_row + j] += g * trace.h[j];
                }
            }
            // The three input paths of the step, as matrix-transpose products.
            for j in 0..d {
                let mut g_prev = 0.0;
                let mut g_emb = 0.0;
                let mut g_h = 0.0;
                for i in 0..d {
                    let g = dpre[i];
                    g_prev += g * self.params[l.w_state + i * d + j];
                    g_emb += g * self.params[l.w_embed + i * d + j];
                    g_h += g * self.params[l.w_ctx + i * d + j];
                }
                self.grads[prev_emb_row + j] += g_emb;
                dh[j] += g_h;
                if t == 0 {
                    dh[j] += g_prev;
                } else {
                    dstate_next[j] = g_prev;
                }
            }
        }
        // Encoder: h = tanh(W_enc e_avg + b_enc).
        let mut dpre_enc = vec![0.0; d];
        for i in 0..d {
            dpre_enc[i] = dh[i] * (1.0 - trace.h[i] * trace.h[i]);
        }
        for i in 0..d {
            let g = dpre_enc[i];
            if g == 0.0 {
                continue;
            }
            self.grads[l.b_enc + i] += g;
            let row = l.w_enc + i * d;
            for j in 0..d {
                self.grads[row + j] += g * trace.e_avg[j];
            }
        }
        if !input.is_empty() {
            let inv = 1.0 / input.len() as f64;
            let mut de_avg = vec![0.0; d];
            for j in 0..d {
                let mut acc = 0.0;
                for i in 0..d {
                    acc += dpre_enc[i] * self.params[l.w_enc + i * d + j];
                }
                de_avg[j] = acc;
            }
            for &tok in input {
                let row = l.emb + (tok as usize).min(vsize - 1) * d;
                for j in 0..d {
                    self.grads[row + j] += de_avg[j] * inv;
                }
            }
        }
        loss
    }
}

/// A deterministic, training-free model with closed-form logits, used to pin
/// loss values against an externally computed oracle. Position `t` of the
/// target gets logits `BASE[v] * (1 + t/2 + input_len/4)` over a five-token
/// vocabulary; there are no reserved tokens and no end-of-sequence marker.
#[derive(Debug, Clone, Default)]
pub struct FixedLogitStudent;

pub const FIXED_LOGIT_BASE: [f64; 5] = [0.2, -0.1, 0.4, 0.0, -0.3];

impl FixedLogitStudent {
    fn logits(&self, input_len: usize, t: usize) -> [f64; 5] {
        let gain = 1.0 + t as f64 * 0.5 + input_len as f64 * 0.25;
        let mut out = [0.0; 5];
        for (i, b) in FIXED_LOGIT_BASE.iter().enumerate() {
            out[i] = b * gain;
        }
        out
    }
}

impl StudentModel for FixedLogitStudent {
    fn vocab_size(&self) -> usize {
        FIXED_LOGIT_BASE.len()
    }

    fn tokenize(&self, text: &str) -> Vec<TokenId> {
        // Tokens are "t0".."t4"; anything else maps to 0.
        text.split_whitespace()
            .map(|w| match w {
                "t0" => 0,
                "t1" => 1,
                "t2" => 2,
                "t3" => 3,
                "t4" => 4,
                _ => 0,
            })
            .collect()
    }

    fn detokenize(&self, ids: &[TokenId]) -> String {
        let words: Vec<String> = ids.iter().map(|i| alloc::format!("t{i}")).collect();
        words.join(" ")
    }

    fn target_log_probs(&self, input: &[TokenId], target: &[TokenId]) -> Vec<f64> {
        target
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                let mut dist = self.logits(input.len(), t).to_vec();
                softmax_in_place(&mut dist);
                libm::log(dist[(tok as usize).min(4)])
            })
            .collect()
    }

    fn generate(&self, input: &[TokenId], max_len: usize) -> Vec<TokenId> {
        // Argmax of BASE is index 2 at every position.
        let _ = input;
        vec![2; max_len.min(1)]
    }

    fn param_count(&self) -> usize {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_student(dim: usize) -> TinyStudent {
        let vocab = Vocab::build(["predict: alpha beta gamma", "explain: the device runs"]);
        TinyStudent::new(vocab, &TinyStudentConfig { dim, init_scale: 0.2, seed: 9 }).unwrap()
    }

    #[test]
    fn vocab_is_deterministic_and_reserved() {
        let v = Vocab::build(["b a", "a c"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.encode("a b c zzz"), vec![3, 4, 5, UNK]);
        assert_eq!(v.decode(&[3, 4]), "a b");
        let v2 = Vocab::build(["a c", "b a"]);
        assert_eq!(v, v2);
    }

    #[test]
    fn param_count_matches_layout() {
        let s = toy_student(8);
        let v = s.vocab_size();
        assert_eq!(s.param_count(), v * 8 + 4 * 64 + 2 * 8 + v);
        assert_eq!(s.params().len(), s.param_count());
    }

    #[test]
    fn log_probs_are_normalized() {
        let s = toy_student(8);
        let input = s.tokenize("predict: the device");
        // Sum of probabilities over the whole vocab at each position must be 1.
        let first_pos_sum: f64 = (0..s.vocab_size() as TokenId)
            .map(|tok| libm::exp(s.target_log_probs(&input, &[tok])[0]))
            .sum();
        assert!((first_pos_sum - 1.0).abs() < 1e-9, "sum {first_pos_sum}");
        let target = s.tokenize_target("alpha");
        let lp = s.target_log_probs(&input, &target);
        assert_eq!(lp.len(), target.len());
        assert!(lp.iter().all(|p| *p < 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let s = toy_student(8);
        let input = s.tokenize("predict: gamma");
        let target = s.tokenize_target("beta");
        assert_eq!(s.target_log_probs(&input, &target), s.target_log_probs(&input, &target));
        assert_eq!(s.generate(&input, 8), s.generate(&input, 8));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut s = toy_student(6);
        let input = s.tokenize("predict: the device runs");
        let target = s.tokenize_target("alpha beta");
        s.zero_grads();
        let loss = s.accumulate_loss_grad(&input, &target, 1.0);
        assert!(loss.is_finite() && loss > 0.0);
        let analytic = s.grads().to_vec();
        let eps = 1e-5;
        let n = s.param_count();
        // Probe a spread of coordinates across every parameter block.
        let probes: Vec<usize> = (0..n).step_by((n / 60).max(1)).collect();
        for &k in &probes {
            let orig = s.params()[k];
            s.params_mut()[k] = orig + eps;
            let up = -s
                .target_log_probs(&input, &target)
                .iter()
                .sum::<f64>()
                / target.len() as f64;
            s.params_mut()[k] = orig - eps;
            let down = -s
                .target_log_probs(&input, &target)
                .iter()
                .sum::<f64>()
                / target.len() as f64;
            s.params_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic[k] - numeric).abs() / denom;
            assert!(rel < 1e-3, "coord {k}: analytic {} vs numeric {numeric}", analytic[k]);
        }
    }

    #[test]
    fn grad_accumulation_scales_with_coeff() {
        let mut s = toy_student(6);
        let input = s.tokenize("predict: device");
        let target = s.tokenize_target("gamma");
        s.zero_grads();
        s.accumulate_loss_grad(&input, &target, 1.0);
        let unit = s.grads().to_vec();
        s.zero_grads();
        s.accumulate_loss_grad(&input, &target, 0.5);
        for (a, b) in unit.iter().zip(s.grads()) {
            assert!((a * 0.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_params_round_trips() {
        let s = toy_student(6);
        let rebuilt =
            TinyStudent::from_params(s.vocab().clone(), 6, s.params().to_vec()).unwrap();
        let input = s.tokenize("predict: device");
        let target = s.tokenize_target("alpha");
        assert_eq!(s.target_log_probs(&input, &target), rebuilt.target_log_probs(&input, &target));
        assert!(matches!(
            TinyStudent::from_params(s.vocab().clone(), 6, vec![0.0; 3]),
            Err(StudentError::ParamLengthMismatch { .. })
        ));
    }

    #[test]
    fn generation_stops_at_eos_or_cap() {
        let s = toy_student(6);
        let out = s.generate(&s.tokenize("predict: device"), 5);
        assert!(out.len() <= 5);
        assert!(!out.contains(&EOS));
    }

    #[test]
    fn fixed_logit_student_is_stable() {
        let m = FixedLogitStudent;
        let input = m.tokenize("t0 t1");
        let target = m.tokenize("t2 t3");
        let lp = m.target_log_probs(&input, &target);
        assert_eq!(lp.len(), 2);
        assert_eq!(lp, m.target_log_probs(&input, &target));
        let probs: f64 = (0..5u32)
            .map(|tok| libm::exp(m.target_log_probs(&input, &[tok])[0]))
            .sum();
        assert!((probs - 1.0).abs() < 1e-12);
    }
}
