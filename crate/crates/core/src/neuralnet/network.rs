//! Forward pass, losses and reverse-mode gradients of the full model.
//!
//! The encoder runs an LSTM over every selected path and mean-pools the
//! final hidden states into the feature vector `x`. The decoder is teacher
//! forced: step 0 reads `x`, step `t` reads the embedding of the true token
//! `t-1`, and each step predicts a distribution over the vocabulary. The
//! classifier scores `x` once per family and normalises with softmax.

use super::lstm::{step_backward, step_cached, LstmParams, StepCache};
use super::model::{ClassifierParams, DecoderParams, EncoderParams, ModelParams};
use super::paths::PathBatch;
use super::tensor::{argmax, softmax, softmax_backward};
use super::NnError;

/// Probability clamp applied before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

/// Per path, per step probability vectors.
pub type Reconstruction = Vec<Vec<Vec<f64>>>;

fn check_tokens(batch: &PathBatch, vocab: usize) -> Result<(), NnError> {
    match batch.paths().iter().flatten().find(|&&t| t >= vocab) {
        Some(t) => Err(NnError::DimensionMismatch(format!(
            "token {t} outside vocabulary of size {vocab}"
        ))),
        None => Ok(()),
    }
}

struct EncoderTrace {
    steps: Vec<Vec<StepCache>>,
    x: Vec<f64>,
}

fn encode_traced(batch: &PathBatch, p: &EncoderParams) -> EncoderTrace {
    let d = p.lstm.hidden();
    let mut x = vec![0.0; d];
    let mut steps = Vec::with_capacity(batch.len());
    for path in batch.paths() {
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut caches = Vec::with_capacity(path.len());
        for &tok in path {
            let (hn, cn, cache) = step_cached(p.embed.row(tok), &h, &c, &p.lstm);
            h = hn;
            c = cn;
            caches.push(cache);
        }
        for (xi, hi) in x.iter_mut().zip(&h) {
            *xi += hi;
        }
        steps.push(caches);
    }
    let k = batch.len() as f64;
    x.iter_mut().for_each(|v| *v /= k);
    EncoderTrace { steps, x }
}

/// `x = E(G)` for an already extracted path batch.
pub fn encode(batch: &PathBatch, p: &EncoderParams) -> Result<FeatureVector, NnError> {
    check_tokens(batch, p.embed.rows())?;
    Ok(FeatureVector(encode_traced(batch, p).x))
}

struct DecoderTrace {
    steps: Vec<Vec<(StepCache, Vec<f64>, Vec<f64>)>>,
}

fn decode_traced(x: &[f64], batch: &PathBatch, embed: &super::tensor::Matrix, p: &DecoderParams) -> DecoderTrace {
    let d = p.lstm.hidden();
    let mut steps = Vec::with_capacity(batch.len());
    for path in batch.paths() {
        let mut h = vec![0.0; d];
        let mut c = vec![0.0; d];
        let mut out = Vec::with_capacity(path.len());
        for t in 0..path.len() {
            let input = if t == 0 { x } else { embed.row(path[t - 1]) };
            let (hn, cn, cache) = step_cached(input, &h, &c, &p.lstm);
            let mut logits = vec![0.0; p.project.rows()];
            p.project.matvec_acc(&hn, &mut logits);
            let probs = softmax(&logits);
            out.push((cache, hn.clone(), probs));
            h = hn;
            c = cn;
        }
        steps.push(out);
    }
    DecoderTrace { steps }
}

/// `Ḡ = D(x)`: teacher-forced reconstruction of `target`.
///
/// `embed` is the encoder's token embedding, shared with the decoder.
pub fn decode(
    x: &FeatureVector,
    target: &PathBatch,
    embed: &super::tensor::Matrix,
    p: &DecoderParams,
) -> Result<Reconstruction, NnError> {
    let d = p.lstm.hidden();
    if x.0.len() != d || p.lstm.input() != d || embed.cols() != d || p.project.cols() != d {
        return Err(NnError::DimensionMismatch(format!(
            "decoder expects width {d}, feature has {}",
            x.0.len()
        )));
    }
    check_tokens(target, embed.rows())?;
    let trace = decode_traced(&x.0, target, embed, p);
    Ok(trace
        .steps
        .into_iter()
        .map(|path| path.into_iter().map(|(_, _, probs)| probs).collect())
        .collect())
}

/// One-hot tensors shaped like a reconstruction of `batch`.
pub fn one_hot_targets(batch: &PathBatch, vocab: usize) -> Reconstruction {
    batch
        .paths()
        .iter()
        .map(|path| {
            path.iter()
                .map(|&t| {
                    let mut v = vec![0.0; vocab];
                    v[t] = 1.0;
                    v
                })
                .collect()
        })
        .collect()
}

/// `½ Σ ‖c_i − ĉ_i‖²` over all non-padding steps.
pub fn loss1(c: &Reconstruction, c_hat: &Reconstruction) -> Result<f64, NnError> {
    let shape_err = || NnError::ShapeMismatch("reconstruction and target differ in shape".into());
    if c.len() != c_hat.len() {
        return Err(shape_err());
    }
    let mut total = 0.0;
    for (pc, ph) in c.iter().zip(c_hat) {
        if pc.len() != ph.len() {
            return Err(shape_err());
        }
        for (sc, sh) in pc.iter().zip(ph) {
            if sc.len() != sh.len() {
                return Err(shape_err());
            }
            total += sc.iter().zip(sh).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    Ok(0.5 * total)
}

/// Family probabilities and the predicted family (lowest index on ties).
pub fn classify(x: &FeatureVector, p: &ClassifierParams) -> Result<(Vec<f64>, usize), NnError> {
    if x.0.len() != p.weights.cols() {
        return Err(NnError::DimensionMismatch(format!(
            "classifier expects width {}, feature has {}",
            p.weights.cols(),
            x.0.len()
        )));
    }
    let mut logits = p.bias.clone();
    p.weights.matvec_acc(&x.0, &mut logits);
    let probs = softmax(&logits);
    let label = argmax(&probs);
    Ok((probs, label))
}

/// Binary cross-entropy averaged over the `n` family outputs, evaluated on
/// probabilities clamped into `[1e-12, 1 − 1e-12]`.
pub fn loss2(y_hat: &[f64], y: &[f64]) -> Result<f64, NnError> {
    if y_hat.len() != y.len() || y.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "prediction has {} entries, truth has {}",
            y_hat.len(),
            y.len()
        )));
    }
    let n = y.len() as f64;
    let sum: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / n)
}

fn one_hot(label: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    y[label] = 1.0;
    y
}

fn check_label(label: usize, p: &ModelParams) -> Result<(), NnError> {
    if label >= p.dims.families {
        return Err(NnError::DimensionMismatch(format!(
            "label {label} outside {} families",
            p.dims.families
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub reconstruction: f64,
    pub classification: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.classification
    }
}

/// `Loss = Loss₁ + Loss₂` for one labelled graph.
pub fn loss_parts(batch: &PathBatch, label: usize, p: &ModelParams) -> Result<LossParts, NnError> {
    check_label(label, p)?;
    let x = encode(batch, &p.encoder)?;
    let recon = decode(&x, batch, &p.encoder.embed, &p.decoder)?;
    let l1 = loss1(&one_hot_targets(batch, p.dims.vocab), &recon)?;
    let (probs, _) = classify(&x, &p.classifier)?;
    let l2 = loss2(&probs, &one_hot(label, p.dims.families))?;
    Ok(LossParts {
        reconstruction: l1,
        classification: l2,
    })
}

pub fn total_loss(batch: &PathBatch, label: usize, p: &ModelParams) -> Result<f64, NnError> {
    loss_parts(batch, label, p).map(|l| l.total())
}

/// Predicted family for a path batch.
pub fn predict(batch: &PathBatch, p: &ModelParams) -> Result<usize, NnError> {
    let x = encode(batch, &p.encoder)?;
    classify(&x, &p.classifier).map(|(_, label)| label)
}

fn bptt(
    caches: &[StepCache],
    mut dh_per_step: impl FnMut(usize) -> Vec<f64>,
    mut dh: Vec<f64>,
    p: &LstmParams,
    grads: &mut LstmParams,
    mut on_input: impl FnMut(usize, Vec<f64>),
) {
    let d = p.hidden();
    let mut dc = vec![0.0; d];
    for t in (0..caches.len()).rev() {
        for (a, b) in dh.iter_mut().zip(dh_per_step(t)) {
            *a += b;
        }
        let (dh_prev, dc_prev, dx) = step_backward(&caches[t], &dh, &dc, p, grads);
        on_input(t, dx);
        dh = dh_prev;
        dc = dc_prev;
    }
}

/// Exact gradient of [`total_loss`] w.r.t. every parameter, in canonical
/// flattened order. Also returns the loss.
pub fn backward(batch: &PathBatch, label: usize, p: &ModelParams) -> Result<(f64, Vec<f64>), NnError> {
    check_label(label, p)?;
    check_tokens(batch, p.dims.vocab)?;
    let dims = p.dims;
    let d = dims.hidden;
    let mut g = ModelParams::zeros(dims)?;

    let enc = encode_traced(batch, &p.encoder);
    let x = &enc.x;
    let mut dx = vec![0.0; d];

    // classifier
    let mut logits = p.classifier.bias.clone();
    p.classifier.weights.matvec_acc(x, &mut logits);
    let probs = softmax(&logits);
    let y = one_hot(label, dims.families);
    let l2 = loss2(&probs, &y)?;
    let n = dims.families as f64;
    let dprobs: Vec<f64> = probs
        .iter()
        .zip(&y)
        .map(|(&q, &t)| {
            if q <= PROB_CLAMP || q >= 1.0 - PROB_CLAMP {
                0.0
            } else {
                -(t / q - (1.0 - t) / (1.0 - q)) / n
            }
        })
        .collect();
    let dlogits = softmax_backward(&probs, &dprobs);
    g.classifier.weights.outer_acc(&dlogits, x);
    for (b, dl) in g.classifier.bias.iter_mut().zip(&dlogits) {
        *b += dl;
    }
    p.classifier.weights.matvec_t_acc(&dlogits, &mut dx);

    // decoder
    let dec = decode_traced(x, batch, &p.encoder.embed, &p.decoder);
    let mut l1 = 0.0;
    for (path, steps) in batch.paths().iter().zip(&dec.steps) {
        let mut step_dh: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
        for (t, (_, h, probs)) in steps.iter().enumerate() {
            let mut diff = probs.clone();
            diff[path[t]] -= 1.0;
            l1 += 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
            let dl = softmax_backward(probs, &diff);
            g.decoder.project.outer_acc(&dl, h);
            let mut dh = vec![0.0; d];
            p.decoder.project.matvec_t_acc(&dl, &mut dh);
            step_dh.push(dh);
        }
        let caches: Vec<StepCache> = steps.iter().map(|(c, _, _)| c.clone()).collect();
        let embed_grad = &mut g.encoder.embed;
        bptt(
            &caches,
            |t| std::mem::take(&mut step_dh[t]),
            vec![0.0; d],
            &p.decoder.lstm,
            &mut g.decoder.lstm,
            |t, din| {
                if t == 0 {
                    for (a, b) in dx.iter_mut().zip(&din) {
                        *a += b;
                    }
                } else {
                    for (a, b) in embed_grad.row_mut(path[t - 1]).iter_mut().zip(&din) {
                        *a += b;
                    }
                }
            },
        );
    }

    // encoder: x is the mean of the final hidden states
    let k = batch.len() as f64;
    let dh_final: Vec<f64> = dx.iter().map(|v| v / k).collect();
    for (path, caches) in batch.paths().iter().zip(&enc.steps) {
        if caches.is_empty() {
            continue;
        }
        let embed_grad = &mut g.encoder.embed;
        bptt(
            caches,
            |_| vec![0.0; d],
            dh_final.clone(),
            &p.encoder.lstm,
            &mut g.encoder.lstm,
            |t, din| {
                for (a, b) in embed_grad.row_mut(path[t]).iter_mut().zip(&din) {
                    *a += b;
                }
            },
        );
    }

    Ok((l1 + l2, g.flatten()))
}
