//! Parameter containers, canonical flattening and checkpoints.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::lstm::LstmParams;
use super::tensor::Matrix;
use super::NnError;
use crate::scdg::SysCallName;

/// Uniform init range for every coordinate.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    /// Feature size `d`; also the embedding width.
    pub hidden: usize,
    pub families: usize,
    pub max_paths: usize,
    pub max_len: usize,
}

impl ModelDims {
    pub fn new(vocab: usize, hidden: usize, families: usize) -> Self {
        ModelDims {
            vocab,
            hidden,
            families,
            max_paths: 16,
            max_len: 32,
        }
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.vocab == 0 || self.hidden == 0 || self.families == 0 || self.max_paths == 0 || self.max_len == 0 {
            return Err(NnError::DimensionMismatch(format!("all dims must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn encoder_len(&self) -> usize {
        self.vocab * self.hidden + lstm_len(self.hidden, self.hidden)
    }

    pub fn decoder_len(&self) -> usize {
        lstm_len(self.hidden, self.hidden) + self.vocab * self.hidden
    }

    pub fn classifier_len(&self) -> usize {
        self.families * (self.hidden + 1)
    }

    pub fn param_count(&self) -> usize {
        self.encoder_len() + self.decoder_len() + self.classifier_len()
    }
}

fn lstm_len(hidden: usize, input: usize) -> usize {
    4 * hidden * (hidden + input) + 4 * hidden
}

/// Maps syscall names to token indices, in sorted name order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    names: Vec<SysCallName>,
    index: BTreeMap<SysCallName, usize>,
}

impl Vocabulary {
    pub fn new(names: impl IntoIterator<Item = SysCallName>) -> Self {
        let mut names: Vec<SysCallName> = names.into_iter().collect();
        names.sort();
        names.dedup();
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Vocabulary { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &SysCallName) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn names(&self) -> &[SysCallName] {
        &self.names
    }

    /// One name per line.
    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, NnError> {
        let names = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| SysCallName::new(l).map_err(|e| NnError::Checkpoint(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Vocabulary::new(names))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// `vocab × d`; row `t` is the embedding of token `t`.
    pub embed: Matrix,
    pub lstm: LstmParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    pub lstm: LstmParams,
    /// `vocab × d`; maps a hidden state to per-token logits.
    pub project: Matrix,
}

/// One linear scorer `F_i(x) = W_i·x + b_i` per family.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn families(&self) -> usize {
        self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self, NnError> {
        dims.validate()?;
        let d = dims.hidden;
        Ok(ModelParams {
            dims,
            encoder: EncoderParams {
                embed: Matrix::zeros(dims.vocab, d),
                lstm: LstmParams::zeros(d, d),
            },
            decoder: DecoderParams {
                lstm: LstmParams::zeros(d, d),
                project: Matrix::zeros(dims.vocab, d),
            },
            classifier: ClassifierParams {
                weights: Matrix::zeros(dims.families, d),
                bias: vec![0.0; dims.families],
            },
        })
    }

    /// Every coordinate uniform in `[-scale, scale]` from a seeded stream.
    pub fn random(dims: ModelDims, seed: u64, scale: f64) -> Result<Self, NnError> {
        use rand::Rng;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(dims)?;
        let values: Vec<f64> = (0..dims.param_count())
            .map(|_| rng.gen_range(-scale..=scale))
            .collect();
        p.set_flat(&values)?;
        Ok(p)
    }

    pub fn init(dims: ModelDims, seed: u64) -> Result<Self, NnError> {
        ModelParams::random(dims, seed, INIT_SCALE)
    }

    fn segments(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.encoder.embed.data()];
        out.extend(self.encoder.lstm.slices());
        out.extend(self.decoder.lstm.slices());
        out.push(self.decoder.project.data());
        for i in 0..self.classifier.families() {
            out.push(self.classifier.weights.row(i));
            out.push(std::slice::from_ref(&self.classifier.bias[i]));
        }
        out
    }

    fn segments_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.encoder.embed.data_mut()];
        out.extend(self.encoder.lstm.slices_mut());
        out.extend(self.decoder.lstm.slices_mut());
        out.push(self.decoder.project.data_mut());
        let d = self.dims.hidden;
        let rows = self.classifier.weights.data_mut().chunks_mut(d);
        for (row, b) in rows.zip(self.classifier.bias.iter_mut()) {
            out.push(row);
            out.push(std::slice::from_mut(b));
        }
        out
    }

    /// Canonical coordinate vector: encoder (embed, LSTM), decoder (LSTM,
    /// projection), then classifier rows each followed by its bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dims.param_count());
        for s in self.segments() {
            v.extend_from_slice(s);
        }
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<(), NnError> {
        let expected = self.dims.param_count();
        if values.len() != expected {
            return Err(NnError::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        let mut rest = values;
        for s in self.segments_mut() {
            let (head, tail) = rest.split_at(s.len());
            s.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    pub fn unflatten(dims: ModelDims, values: &[f64]) -> Result<Self, NnError> {
        let mut p = ModelParams::zeros(dims)?;
        p.set_flat(values)?;
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    /// Binary checkpoint: `mdl v1\n`, five little-endian `u32` dims
    /// `(vocab, d, n, K, L_max)`, then every coordinate as little-endian `f64`
    /// in canonical order.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let d = self.dims;
        let mut out = Vec::with_capacity(7 + 20 + 8 * d.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for v in [d.vocab, d.hidden, d.families, d.max_paths, d.max_len] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for x in self.flatten() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, NnError> {
        let err = |m: &str| NnError::Checkpoint(m.to_string());
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| err("bad magic"))?;
        if rest.len() < 20 {
            return Err(err("truncated header"));
        }
        let dim = |k: usize| u32::from_le_bytes(rest[4 * k..4 * k + 4].try_into().unwrap()) as usize;
        let dims = ModelDims {
            vocab: dim(0),
            hidden: dim(1),
            families: dim(2),
            max_paths: dim(3),
            max_len: dim(4),
        };
        dims.validate()?;
        let body = &rest[20..];
        if body.len() != 8 * dims.param_count() {
            return Err(err("parameter block length does not match dims"));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ModelParams::unflatten(dims, &values)
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"mdl v1\n";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims() -> ModelDims {
        ModelDims::new(6, 4, 3)
    }

    #[test]
    fn test_counts() {
        let d = dims();
        let p = ModelParams::zeros(d).unwrap();
        assert_eq!(p.flatten().len(), d.param_count());
        assert_eq!(d.encoder_len(), 6 * 4 + 4 * 4 * 8 + 16);
        assert_eq!(d.classifier_len(), 15);
    }

    #[test]
    fn test_encoder_is_prefix_and_classifier_is_suffix() {
        let d = dims();
        let mut p = ModelParams::zeros(d).unwrap();
        p.encoder.embed.data_mut()[0] = 1.0;
        p.encoder.lstm.b_c[3] = 2.0;
        p.classifier.weights.row_mut(1)[0] = 3.0;
        p.classifier.bias[2] = 4.0;
        let flat = p.flatten();
        assert_eq!(flat[0], 1.0);
        assert_eq!(flat[d.encoder_len() - 1], 2.0);
        let cls = &flat[d.encoder_len() + d.decoder_len()..];
        assert_eq!(cls[5], 3.0);
        assert_eq!(cls[14], 4.0);
    }

    #[test]
    fn test_checkpoint_round_trip_and_errors() {
        let p = ModelParams::init(dims(), 3).unwrap();
        let bytes = p.to_checkpoint();
        assert!(bytes.starts_with(b"mdl v1\n"));
        assert_eq!(ModelParams::from_checkpoint(&bytes).unwrap(), p);
        assert!(ModelParams::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(ModelParams::from_checkpoint(b"mdl v2\n").is_err());
    }

    #[test]
    fn test_init_range_and_determinism() {
        let a = ModelParams::init(dims(), 9).unwrap();
        let b = ModelParams::init(dims(), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.flatten().iter().all(|v| v.abs() <= INIT_SCALE));
        assert_ne!(a, ModelParams::init(dims(), 10).unwrap());
    }

    #[test]
    fn test_vocabulary_sorted() {
        let v = Vocabulary::new(["b", "a", "b"].map(|s| SysCallName::new(s).unwrap()));
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of(&SysCallName::new("b").unwrap()), Some(1));
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }

    proptest! {
        #[test]
        fn prop_flatten_unflatten_bijection(seed in any::<u64>(), vocab in 1usize..5, hidden in 1usize..5, fams in 1usize..4) {
            let d = ModelDims::new(vocab, hidden, fams);
            let p = ModelParams::random(d, seed, 3.0).unwrap();
            let q = ModelParams::unflatten(d, &p.flatten()).unwrap();
            prop_assert_eq!(&q, &p);
            prop_assert_eq!(q.flatten(), p.flatten());
        }
    }
}
