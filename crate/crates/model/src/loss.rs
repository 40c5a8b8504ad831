//! Teacher-forcing targets and the weighted autoregressive objective.

use vstp_core::codec::StructuredSequence;
use vstp_core::vocab::SPACE;
use vstp_core::{TokenId, Vocabulary};

use crate::error::{ModelError, Result};
use crate::graph::Graph;
use crate::tensor::Mat;

pub const STRUCTURAL_WEIGHT: f64 = 4.0;

/// Decoder input `input = [BOS] + ids[..N-1]` against `target = ids`, with
/// per-position weights. Positions before `k` hold the prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTarget {
    pub input: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub weights: Vec<f64>,
    pub k: usize,
    pub pad: TokenId,
}

impl TrainingTarget {
    pub fn from_ids(ids: &[TokenId], k: usize, vocab: &Vocabulary) -> Self {
        let mut input = Vec::with_capacity(ids.len());
        input.push(vocab.bos());
        input.extend_from_slice(&ids[..ids.len().saturating_sub(1)]);
        let space = vocab.named(SPACE);
        let weights = ids.iter().map(|&t| if vocab.is_structural(t) && Some(t) != space { STRUCTURAL_WEIGHT } else { 1.0 }).collect();
        Self { input, target: ids.to_vec(), weights, k, pad: vocab.pad() }
    }

    pub fn from_sequence(seq: &StructuredSequence, vocab: &Vocabulary) -> Self {
        Self::from_ids(&seq.ids, seq.k, vocab)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Weights the loss actually applies: zero before `k` and on PAD targets.
    pub fn effective_weights(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.target).enumerate().map(|(j, (&w, &t))| if j < self.k || t == self.pad { 0.0 } else { w }).collect()
    }

    /// Positions the loss looks at.
    pub fn scored_positions(&self) -> impl Iterator<Item = usize> + '_ {
        (self.k..self.len()).filter(|&j| self.target[j] != self.pad)
    }
}

/// `sum_{j >= k} w_j · -ln softmax(logits_j)[target_j]`, PAD positions masked.
pub fn weighted_nll_loss(logits: &Mat, target: &TrainingTarget) -> Result<f64> {
    if logits.rows != target.len() {
        return Err(ModelError::Config(format!("{} logit rows for {} targets", logits.rows, target.len())));
    }
    let store = Default::default();
    let mut g = Graph::new(&store);
    let l = g.input(logits.clone());
    let targets: Vec<usize> = target.target.iter().map(|&t| t as usize).collect();
    let node = g.weighted_nll(l, &targets, &target.effective_weights())?;
    Ok(g.value(node).data[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use vstp_core::{build_vocab, Task, VocabSpec};

    fn vocab() -> Vocabulary {
        build_vocab(&VocabSpec::new(Task::Table)).unwrap()
    }

    #[test]
    fn target_layout() {
        let v = vocab();
        let td = v.named("<td></td>").unwrap();
        let ids = vec![v.bos(), td, 5, 7, v.eos()];
        let t = TrainingTarget::from_ids(&ids, 1, &v);
        assert_eq!(t.input, vec![v.bos(), v.bos(), td, 5, 7]);
        assert_eq!(t.weights, vec![1.0, 4.0, 1.0, 1.0, 1.0]);
        assert_eq!(t.effective_weights()[0], 0.0);
    }

    #[test]
    fn loss_examples() {
        let v = vocab();
        let td = v.named("<td></td>").unwrap();
        let ids = vec![3, td, 9];
        let t = TrainingTarget::from_ids(&ids, 1, &v);
        let n = v.len();
        let mut logits = Mat::zeros(3, n);
        for (r, &id) in ids.iter().enumerate() {
            logits.row_mut(r)[id as usize] = 1e4;
        }
        assert_eq!(weighted_nll_loss(&logits, &t).unwrap(), 0.0);

        let single = TrainingTarget::from_ids(&[td], 0, &v);
        let mut l = Mat::zeros(1, n);
        l.row_mut(0)[td as usize] = 2.0;
        let p = 2f64.exp() / (2f64.exp() + (n - 1) as f64);
        assert!((weighted_nll_loss(&l, &single).unwrap() - (-4.0 * p.ln())).abs() < 1e-9);

        let mut shifted = logits.clone();
        shifted.row_mut(0).iter_mut().for_each(|x| *x = -3.0);
        assert_eq!(weighted_nll_loss(&shifted, &t).unwrap(), weighted_nll_loss(&logits, &t).unwrap());
        assert!(weighted_nll_loss(&Mat::zeros(2, n), &t).is_err());
    }
}
