use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::ndnum::{Real, Tensor};

use super::TrainError;

/// Splits `0..lengths.len()` into mini-batches of indices.
///
/// The order is shuffled with `rng`; with `bucketing` the shuffled order is
/// stably sorted by length before chunking and the batches are shuffled
/// afterwards. With `merge_singleton` a trailing batch of one item is folded
/// into its predecessor.
pub fn make_batches(
    lengths: &[usize],
    batch_size: usize,
    bucketing: bool,
    merge_singleton: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    if bucketing {
        order.sort_by_key(|&i| lengths[i]);
    }
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if merge_singleton && batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    if bucketing {
        batches.shuffle(rng);
    }
    batches
}

/// Zero-padded B×T_max×F block plus each item's true length.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch<T: Real> {
    pub indices: Vec<usize>,
    pub data: Tensor<T>,
    pub lengths: Vec<usize>,
}

impl<T: Real> PaddedBatch<T> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.data.shape()[1]
    }

    /// Item `i` cut back to its true length.
    pub fn item(&self, i: usize) -> Tensor<T> {
        let (t, f) = (self.data.shape()[1], self.data.shape()[2]);
        let start = i * t * f;
        let data = self.data.data()[start..start + self.lengths[i] * f].to_vec();
        Tensor::from_vec(&[self.lengths[i], f], data).expect("slice of a valid batch")
    }

    pub fn items(&self) -> Vec<Tensor<T>> {
        (0..self.len()).map(|i| self.item(i)).collect()
    }
}

/// Groups feature matrices into padded batches in input order (or sorted by
/// length with `bucketing`).
pub fn pad_and_batch<T: Real>(
    items: &[&Tensor<T>],
    batch_size: usize,
    bucketing: bool,
) -> Result<Vec<PaddedBatch<T>>, TrainError> {
    let Some(first) = items.first() else {
        return Ok(Vec::new());
    };
    let f = first.cols();
    if let Some((i, bad)) = items.iter().enumerate().find(|(_, x)| x.cols() != f) {
        return Err(TrainError::Shape(format!(
            "item {i} has feature dimension {}, item 0 has {f}",
            bad.cols()
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    if bucketing {
        order.sort_by_key(|&i| items[i].rows());
    }
    let mut out = Vec::new();
    for chunk in order.chunks(batch_size.max(1)) {
        let t_max = chunk.iter().map(|&i| items[i].rows()).max().unwrap();
        let mut data = vec![T::zero(); chunk.len() * t_max * f];
        for (b, &i) in chunk.iter().enumerate() {
            let src = items[i].data();
            data[b * t_max * f..b * t_max * f + src.len()].copy_from_slice(src);
        }
        out.push(PaddedBatch {
            indices: chunk.to_vec(),
            data: Tensor::from_vec(&[chunk.len(), t_max, f], data)?,
            lengths: chunk.iter().map(|&i| items[i].rows()).collect(),
        });
    }
    Ok(out)
}
