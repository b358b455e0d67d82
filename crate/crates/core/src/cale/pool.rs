use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::segmenter::Segmentation;

/// Group aggregation without the cross-attention layers.
#[derive(Debug, Clone, Copy)]
pub enum Pooling<'a, T> {
    Max,
    Average,
    /// Softmax over `query . e_i` within each group.
    Attention {
        query: &'a [T],
    },
}

pub fn pool_aggregate<T: Scalar>(emb: &Matrix<T>, segm: &Segmentation, mode: Pooling<'_, T>) -> Result<Matrix<T>> {
    segm.check_len(emb.rows())?;
    let d = emb.cols();
    let mut out = Matrix::zeros(segm.num_groups(), d);
    if let Pooling::Attention { query } = mode {
        if query.len() != d {
            return Err(Error::invalid(format!(
                "attention query has length {}, expected {d}",
                query.len()
            )));
        }
    }
    for (j, g) in segm.groups().enumerate() {
        let row = out.row_mut(j);
        match mode {
            Pooling::Max => {
                row.copy_from_slice(emb.row(g.start));
                for i in g.start + 1..g.end {
                    for (r, &x) in row.iter_mut().zip(emb.row(i)) {
                        *r = r.max(x);
                    }
                }
            }
            Pooling::Average => {
                let w = T::one() / T::of(g.len() as f64);
                for i in g {
                    axpy(w, emb.row(i), row);
                }
            }
            Pooling::Attention { query } => {
                let mut scores: Vec<T> = g.clone().map(|i| dot(query, emb.row(i))).collect();
                let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
                let mut sum = T::zero();
                for s in &mut scores {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                for (s, i) in scores.iter().zip(g) {
                    axpy(*s / sum, emb.row(i), row);
                }
            }
        }
    }
    Ok(out)
}
