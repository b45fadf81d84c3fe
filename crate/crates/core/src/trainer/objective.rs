//! Batch loss and its gradient with respect to every feature and MLP weight.

use rayon::prelude::*;

use crate::decoder::MlpGradients;
use crate::error::Result;
use crate::feature_grid::InterpRecord;
use crate::model::SdfModel;
use crate::scalar::Scalar;

use super::loss::bce_loss;
use super::sampling::TrainingSample;

/// Samples per parallel work unit. Fixed so the reduction order does not
/// depend on the thread count.
const CHUNK: usize = 256;

/// Mean BCE loss over `samples`.
pub fn batch_loss<T: Scalar>(model: &SdfModel<T>, samples: &[TrainingSample<T>], sigmoid_scale: T) -> Result<T> {
    let n = T::of(samples.len().max(1) as f64);
    let per_chunk = samples
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<T> {
            let mut eval = model.evaluator();
            let mut acc = T::zero();
            for s in chunk {
                let pred = eval.eval(s.point)?;
                acc += bce_loss(pred, s.sdf_label, sigmoid_scale).0;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(per_chunk.into_iter().fold(T::zero(), |a, b| a + b) / n)
}

struct ChunkResult<T> {
    loss: T,
    mlp: MlpGradients<T>,
    records: Vec<InterpRecord<T>>,
    feature_grads: Vec<T>,
}

/// Computes the mean batch loss, adds `d loss / d θ` into `mlp_grads`, and
/// accumulates feature gradients into the grid's per-vertex buffers.
///
/// Every corner referenced by `samples` must already be allocated.
pub fn accumulate_batch_gradients<T: Scalar>(
    model: &mut SdfModel<T>,
    samples: &[TrainingSample<T>],
    sigmoid_scale: T,
    mlp_grads: &mut MlpGradients<T>,
) -> Result<T> {
    let n = T::of(samples.len().max(1) as f64);
    let inv_n = T::one() / n;
    let vdim = model.grid.output_dim();
    let frozen: &SdfModel<T> = model;
    let chunks = samples
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<ChunkResult<T>> {
            let mut cache = frozen.decoder.new_cache();
            let mut mlp = MlpGradients::zeros_like(&frozen.decoder);
            let mut dl_dphi = vec![T::zero(); frozen.input_dim()];
            let mut records = Vec::with_capacity(chunk.len());
            let mut feature_grads = Vec::with_capacity(chunk.len() * vdim);
            let mut loss = T::zero();
            for s in chunk {
                let mut rec = InterpRecord::default();
                let pred = frozen.forward_with(s.point, &mut cache, Some(&mut rec))?;
                let (l, dl) = bce_loss(pred, s.sdf_label, sigmoid_scale);
                loss += l;
                frozen.decoder.backward_accumulate(&mut cache, dl * inv_n, &mut mlp, &mut dl_dphi);
                // the encoding slice has no parameters; only V(p) is routed back
                feature_grads.extend_from_slice(&dl_dphi[..vdim]);
                records.push(rec);
            }
            Ok(ChunkResult {
                loss,
                mlp,
                records,
                feature_grads,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = T::zero();
    for chunk in chunks {
        total += chunk.loss;
        mlp_grads.add_assign(&chunk.mlp);
        for (rec, g) in chunk.records.iter().zip(chunk.feature_grads.chunks_exact(vdim)) {
            model.grid.accumulate_gradient(rec, g)?;
        }
    }
    Ok(total * inv_n)
}
