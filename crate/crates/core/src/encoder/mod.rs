//! Prototypical CNN encoder.
//!
//! Each token is the concatenation of a word embedding and an embedding of its
//! offset to the trigger (clipped to `±max_len`). A bank of `filters`
//! convolution filters of width `window` slides over the sentence with zero
//! padding, followed by ReLU; max-pooling over positions gives the instance
//! representation.
//!
//! Everything is plain `f64` with hand-written backward passes, see [`loss`].

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Instance};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};

pub use loss::{
    adversarial_loss, combined_loss, episode_loss_ce, fgm_delta, perturbed_ce_loss, predict,
    reconstruction_loss, AdvScope, EpisodeLoss, LossGrad, LossWeights,
};

pub const OOV_TOKEN: &str = "<unk>";
pub const MASK_TOKEN: &str = "<mask>";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub pos_dim: usize,
    pub filters: usize,
    pub window: usize,
    /// Longest sentence encoded; longer ones are cut to a window around the trigger.
    pub max_len: usize,
    /// Corpus tokens kept in the vocabulary (most frequent first).
    pub max_vocab: usize,
    /// Half-width of the uniform init for rows not covered by the embedding table.
    pub init_range: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            pos_dim: 50,
            filters: 300,
            window: 3,
            max_len: 128,
            max_vocab: 20_000,
            init_range: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.filters == 0 || self.window == 0 || self.max_len == 0 {
            return Err(Error::Config(
                "word_dim, filters, window and max_len must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.pos_dim
    }
}

/// Token ids. Id 0 is the OOV token, ids `1..n_classes()` are corpus tokens,
/// and the mask token takes the extra row `n_classes()` of the embedding
/// matrix. The mask is never a reconstruction target, so the reconstruction
/// head predicts over `n_classes()` ids only.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub const OOV: usize = 0;

    /// Vocabulary over the given (already lowercased or not) tokens, OOV first.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![OOV_TOKEN.to_string()];
        let mut index = HashMap::new();
        index.insert(OOV_TOKEN.to_string(), Self::OOV);
        for token in tokens {
            let token = token.into().to_lowercase();
            if !index.contains_key(&token) {
                index.insert(token.clone(), all.len());
                all.push(token);
            }
        }
        Self { tokens: all, index }
    }

    /// The `max_size` most frequent lowercased tokens (ties lexicographic).
    pub fn build<'a, I>(corpora: I, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a Corpus>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for corpus in corpora {
            for instance in corpus.instances() {
                for token in &instance.tokens {
                    *counts.entry(token.to_lowercase()).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ranked.into_iter().take(max_size).map(|(t, _)| t))
    }

    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) => id,
            None => self
                .index
                .get(&token.to_lowercase())
                .copied()
                .unwrap_or(Self::OOV),
        }
    }

    /// Reconstruction classes: OOV plus corpus tokens.
    pub fn n_classes(&self) -> usize {
        self.tokens.len()
    }

    pub fn mask_id(&self) -> usize {
        self.tokens.len()
    }

    /// Rows of the token embedding matrix (classes plus the mask row).
    pub fn n_rows(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Corpus tokens, excluding the OOV entry.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[1..]
    }

    pub fn token(&self, id: usize) -> &str {
        if id == self.mask_id() {
            MASK_TOKEN
        } else {
            &self.tokens[id]
        }
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    fn random<R: Rng>(rows: usize, cols: usize, range: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| {
                if range > 0.0 {
                    rng.gen_range(-range..=range)
                } else {
                    0.0
                }
            })
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }
}

/// All trainable tensors. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensors {
    /// `n_rows × word_dim`
    pub word: Matrix,
    /// `(2·max_len + 1) × pos_dim`
    pub position: Matrix,
    /// `filters × (window · input_dim)`; column `j·input_dim + c` is tap `j`, channel `c`.
    pub conv_weight: Matrix,
    /// `1 × filters`
    pub conv_bias: Matrix,
    /// `filters × n_classes`
    pub rec_weight: Matrix,
    /// `1 × n_classes`
    pub rec_bias: Matrix,
}

pub const TENSOR_NAMES: [&str; 6] = [
    "token_embeddings",
    "position_embeddings",
    "conv_filters",
    "conv_bias",
    "reconstruction_weight",
    "reconstruction_bias",
];

impl Tensors {
    pub fn zeros_like(other: &Tensors) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            word: z(&other.word),
            position: z(&other.position),
            conv_weight: z(&other.conv_weight),
            conv_bias: z(&other.conv_bias),
            rec_weight: z(&other.rec_weight),
            rec_bias: z(&other.rec_bias),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Matrix)> {
        TENSOR_NAMES.into_iter().zip([
            &self.word,
            &self.position,
            &self.conv_weight,
            &self.conv_bias,
            &self.rec_weight,
            &self.rec_bias,
        ])
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&'static str, &mut Matrix)> {
        TENSOR_NAMES.into_iter().zip([
            &mut self.word,
            &mut self.position,
            &mut self.conv_weight,
            &mut self.conv_bias,
            &mut self.rec_weight,
            &mut self.rec_bias,
        ])
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &Tensors, scale: f64) {
        for ((_, dst), (_, src)) in self.iter_mut().zip(other.iter()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter()
            .all(|(_, m)| m.data.iter().all(|x| x.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub tensors: Tensors,
}

/// An instance mapped to ids, cut to at most `max_len` tokens.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    pub ids: Vec<usize>,
    pub positions: Vec<usize>,
    pub trigger: usize,
    /// Reconstruction target: id of the original trigger token.
    pub target: usize,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct Forward {
    pub inputs: Matrix,
    pub pre: Matrix,
    pub act: Matrix,
    pub repr: Vec<f64>,
    pub argmax: Vec<usize>,
}

/// Output of [`encode`].
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    pub repr: Vec<f64>,
    /// `T × filters` activation map.
    pub per_position: Matrix,
    /// Trigger position within the (possibly truncated) encoded window.
    pub trigger_index: usize,
}

impl EncoderParams {
    /// Fresh parameters. Token rows found in `table` copy their vectors; all
    /// other rows (OOV, mask, unknown tokens) are uniform in `±init_range`.
    pub fn init(
        config: EncoderConfig,
        vocab: Vocab,
        table: Option<&EmbeddingTable>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if let Some(t) = table {
            if t.dim() != config.word_dim {
                return Err(Error::Config(format!(
                    "embedding table has dim {}, encoder word_dim is {}",
                    t.dim(),
                    config.word_dim
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let range = config.init_range;
        let mut word = Matrix::random(vocab.n_rows(), config.word_dim, range, &mut rng);
        if let Some(t) = table {
            for (offset, token) in vocab.corpus_tokens().iter().enumerate() {
                if t.contains(token) {
                    word.row_mut(offset + 1).copy_from_slice(t.lookup(token));
                }
            }
        }
        let position = Matrix::random(2 * config.max_len + 1, config.pos_dim, range, &mut rng);
        let fan_in = config.window * config.input_dim();
        let conv_weight = Matrix::random(
            config.filters,
            fan_in,
            1.0 / (fan_in as f64).sqrt(),
            &mut rng,
        );
        let conv_bias = Matrix::zeros(1, config.filters);
        let rec_weight = Matrix::random(
            config.filters,
            vocab.n_classes(),
            1.0 / (config.filters as f64).sqrt(),
            &mut rng,
        );
        let rec_bias = Matrix::zeros(1, vocab.n_classes());
        Ok(Self {
            config,
            vocab,
            tensors: Tensors {
                word,
                position,
                conv_weight,
                conv_bias,
                rec_weight,
                rec_bias,
            },
        })
    }

    /// Checks tensor shapes against the config and vocabulary.
    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let expected = [
            (self.vocab.n_rows(), c.word_dim),
            (2 * c.max_len + 1, c.pos_dim),
            (c.filters, c.window * c.input_dim()),
            (1, c.filters),
            (c.filters, self.vocab.n_classes()),
            (1, self.vocab.n_classes()),
        ];
        for ((name, m), (rows, cols)) in self.tensors.iter().zip(expected) {
            if m.rows != rows || m.cols != cols {
                return Err(Error::Config(format!(
                    "tensor {name} is {}x{}, expected {rows}x{cols}",
                    m.rows, m.cols
                )));
            }
        }
        if !self.tensors.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        Ok(())
    }

    pub(crate) fn prepare(&self, instance: &Instance, masked: bool) -> Prepared {
        let max_len = self.config.max_len;
        let len = instance.tokens.len();
        let (start, end) = if len > max_len {
            let start = instance
                .trigger_index
                .saturating_sub(max_len / 2)
                .min(len - max_len);
            (start, start + max_len)
        } else {
            (0, len)
        };
        let trigger = instance.trigger_index - start;
        let mut ids: Vec<usize> = instance.tokens[start..end]
            .iter()
            .map(|t| self.vocab.id(t))
            .collect();
        let target = ids[trigger];
        if masked {
            ids[trigger] = self.vocab.mask_id();
        }
        let positions = (0..ids.len())
            .map(|t| {
                let offset = (t as i64 - trigger as i64).clamp(-(max_len as i64), max_len as i64);
                (offset + max_len as i64) as usize
            })
            .collect();
        Prepared {
            ids,
            positions,
            trigger,
            target,
        }
    }

    /// Forward pass; `delta` is added to the trigger's word embedding.
    pub(crate) fn forward(&self, prep: &Prepared, delta: Option<&[f64]>) -> Forward {
        let cfg = &self.config;
        let (dw, dim, f_count, window) = (cfg.word_dim, cfg.input_dim(), cfg.filters, cfg.window);
        let t_len = prep.ids.len();
        let t = &self.tensors;

        let mut inputs = Matrix::zeros(t_len, dim);
        for s in 0..t_len {
            let row = inputs.row_mut(s);
            row[..dw].copy_from_slice(t.word.row(prep.ids[s]));
            row[dw..].copy_from_slice(t.position.row(prep.positions[s]));
            if s == prep.trigger {
                if let Some(d) = delta {
                    for (x, dx) in row[..dw].iter_mut().zip(d) {
                        *x += dx;
                    }
                }
            }
        }

        let left = (window - 1) / 2;
        let mut pre = Matrix::zeros(t_len, f_count);
        for pos in 0..t_len {
            for f in 0..f_count {
                let weights = t.conv_weight.row(f);
                let mut acc = t.conv_bias.data[f];
                for j in 0..window {
                    let Some(s) = (pos + j).checked_sub(left).filter(|&s| s < t_len) else {
                        continue;
                    };
                    let w = &weights[j * dim..(j + 1) * dim];
                    acc += w.iter().zip(inputs.row(s)).map(|(a, b)| a * b).sum::<f64>();
                }
                pre.data[pos * f_count + f] = acc;
            }
        }

        let mut act = pre.clone();
        act.data.iter_mut().for_each(|x| *x = x.max(0.0));
        let mut repr = vec![f64::NEG_INFINITY; f_count];
        let mut argmax = vec![0; f_count];
        for pos in 0..t_len {
            for f in 0..f_count {
                let v = act.data[pos * f_count + f];
                if v > repr[f] {
                    repr[f] = v;
                    argmax[f] = pos;
                }
            }
        }
        Forward {
            inputs,
            pre,
            act,
            repr,
            argmax,
        }
    }

    /// Backpropagates `d_act` (gradient w.r.t. the post-ReLU activation map)
    /// into `grads`. Returns the gradient w.r.t. the trigger's word-embedding
    /// input vector.
    pub(crate) fn backward(
        &self,
        prep: &Prepared,
        fwd: &Forward,
        d_act: &Matrix,
        grads: &mut Tensors,
    ) -> Vec<f64> {
        let cfg = &self.config;
        let (dw, dim, f_count, window) = (cfg.word_dim, cfg.input_dim(), cfg.filters, cfg.window);
        let t_len = prep.ids.len();
        let left = (window - 1) / 2;

        let mut d_inputs = Matrix::zeros(t_len, dim);
        for pos in 0..t_len {
            for f in 0..f_count {
                let idx = pos * f_count + f;
                if fwd.pre.data[idx] <= 0.0 {
                    continue;
                }
                let g = d_act.data[idx];
                if g == 0.0 {
                    continue;
                }
                grads.conv_bias.data[f] += g;
                for j in 0..window {
                    let Some(s) = (pos + j).checked_sub(left).filter(|&s| s < t_len) else {
                        continue;
                    };
                    let offset = f * window * dim + j * dim;
                    let w = &self.tensors.conv_weight.data[offset..offset + dim];
                    let dw_row = &mut grads.conv_weight.data[offset..offset + dim];
                    let u = fwd.inputs.row(s);
                    let du = &mut d_inputs.data[s * dim..(s + 1) * dim];
                    for c in 0..dim {
                        dw_row[c] += g * u[c];
                        du[c] += g * w[c];
                    }
                }
            }
        }

        for s in 0..t_len {
            let du = d_inputs.row(s);
            for (a, b) in grads.word.row_mut(prep.ids[s]).iter_mut().zip(&du[..dw]) {
                *a += b;
            }
            for (a, b) in grads
                .position
                .row_mut(prep.positions[s])
                .iter_mut()
                .zip(&du[dw..])
            {
                *a += b;
            }
        }
        d_inputs.row(prep.trigger)[..dw].to_vec()
    }
}

/// Encodes one instance. With `masked`, the trigger token is replaced by the
/// mask token before the embedding lookup.
pub fn encode(params: &EncoderParams, instance: &Instance, masked: bool) -> Result<Encoding> {
    instance.validate()?;
    let prep = params.prepare(instance, masked);
    let fwd = params.forward(&prep, None);
    Ok(Encoding {
        repr: fwd.repr,
        per_position: fwd.act,
        trigger_index: prep.trigger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            word_dim: 3,
            pos_dim: 2,
            filters: 2,
            window: 3,
            max_len: 8,
            max_vocab: 100,
            init_range: 0.5,
        }
    }

    fn instance(tokens: &[&str], trigger: usize) -> Instance {
        Instance::new(tokens.iter().map(|s| s.to_string()).collect(), trigger, "E").unwrap()
    }

    fn params(seed: u64) -> EncoderParams {
        let vocab = Vocab::from_tokens(["a", "b", "c", "d"]);
        let mut p = EncoderParams::init(small_config(), vocab, None, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for (_, m) in p.tensors.iter_mut() {
            for x in m.data_mut() {
                *x = rng.gen_range(-1.0..1.0);
            }
        }
        p
    }

    #[test]
    fn zero_parameters_give_zero_representation() {
        let mut p = params(1);
        for (_, m) in p.tensors.iter_mut() {
            m.fill(0.0);
        }
        let enc = encode(&p, &instance(&["a", "b", "c"], 1), false).unwrap();
        assert_eq!(enc.repr, vec![0.0, 0.0]);
    }

    #[test]
    fn single_token_sentence() {
        let p = params(2);
        let enc = encode(&p, &instance(&["b"], 0), false).unwrap();
        assert_eq!(enc.per_position.rows(), 1);
        assert_eq!(enc.repr, enc.per_position.row(0));
    }

    #[test]
    fn matches_direct_convolution_oracle() {
        let p = params(3);
        let inst = instance(&["a", "zz", "c", "d"], 2);
        let enc = encode(&p, &inst, false).unwrap();
        let t = &p.tensors;
        let (dw, dp, w) = (3usize, 2usize, 3usize);
        let dim = dw + dp;
        // input vectors by hand: token rows then position rows offset + max_len
        let ids = [1usize, Vocab::OOV, 3, 4];
        let input = |s: usize| -> Vec<f64> {
            let mut v = t.word.row(ids[s]).to_vec();
            let pos = (s as i64 - 2 + 8) as usize;
            v.extend_from_slice(t.position.row(pos));
            v
        };
        for pos in 0..4i64 {
            for f in 0..2 {
                let mut acc = t.conv_bias.get(0, f);
                for j in 0..w as i64 {
                    let s = pos + j - 1;
                    if !(0..4).contains(&s) {
                        continue;
                    }
                    let u = input(s as usize);
                    for (c, x) in u.iter().enumerate().take(dim) {
                        acc += t.conv_weight.get(f, j as usize * dim + c) * x;
                    }
                }
                let expected = acc.max(0.0);
                let got = enc.per_position.get(pos as usize, f);
                assert!((expected - got).abs() < 1e-10, "{expected} vs {got}");
            }
        }
        for f in 0..2 {
            let m = (0..4)
                .map(|r| enc.per_position.get(r, f))
                .fold(f64::MIN, f64::max);
            assert_eq!(enc.repr[f], m);
        }
    }

    #[test]
    fn masking_hides_the_trigger_identity() {
        let p = params(4);
        let a = encode(&p, &instance(&["a", "b", "c"], 1), true).unwrap();
        let b = encode(&p, &instance(&["a", "d", "c"], 1), true).unwrap();
        assert_eq!(a.per_position.row(1), b.per_position.row(1));
        let unmasked_a = encode(&p, &instance(&["a", "b", "c"], 1), false).unwrap();
        let unmasked_b = encode(&p, &instance(&["a", "d", "c"], 1), false).unwrap();
        assert_ne!(unmasked_a.per_position, unmasked_b.per_position);
    }

    #[test]
    fn long_sentences_keep_the_trigger() {
        let p = params(5);
        let tokens: Vec<&str> = std::iter::repeat_n("a", 20).collect();
        let enc = encode(&p, &instance(&tokens, 17), false).unwrap();
        assert_eq!(enc.per_position.rows(), 8);
        assert!(enc.trigger_index < 8);
        let prep = p.prepare(&instance(&tokens, 17), false);
        assert_eq!(prep.positions[prep.trigger], 8);
    }

    #[test]
    fn vocab_build_ranks_by_frequency() {
        let corpus = Corpus::new(vec![
            instance(&["x", "y", "y"], 0),
            instance(&["Y", "z"], 1),
        ])
        .unwrap();
        let vocab = Vocab::build([&corpus], 2);
        assert_eq!(vocab.corpus_tokens(), &["y".to_string(), "x".to_string()]);
        assert_eq!(vocab.id("z"), Vocab::OOV);
        assert_eq!(vocab.mask_id(), 3);
        assert_eq!(vocab.n_rows(), 4);
    }

    #[test]
    fn init_copies_table_rows() {
        let table = EmbeddingTable::from_entries(3, [("b", vec![1.0, 2.0, 3.0])]).unwrap();
        let vocab = Vocab::from_tokens(["a", "b"]);
        let p = EncoderParams::init(small_config(), vocab, Some(&table), 0).unwrap();
        assert_eq!(p.tensors.word.row(p.vocab.id("b")), &[1.0, 2.0, 3.0]);
        assert!(p
            .tensors
            .word
            .row(Vocab::OOV)
            .iter()
            .all(|x| x.abs() <= 0.5));
        assert_ne!(
            p.tensors.word.row(p.vocab.mask_id()),
            p.tensors.word.row(Vocab::OOV)
        );
        p.validate().unwrap();
    }
}
