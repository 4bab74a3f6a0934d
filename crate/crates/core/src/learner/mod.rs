//! Few-shot learner: conv backbone, ridge head, training loop and reports.

pub mod backbone;
pub mod checkpoint;
pub mod loss;
pub mod metrics;
pub mod ridge;
pub mod train;

pub use backbone::{batch_images, parse_widths, BackboneParams, BlockSpec, ConvBlock, ParamGrads};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use metrics::{confidence_interval, EpisodeRecord, RunMetrics, Summary};
pub use ridge::{ridge_head_fit, ridge_primal, RidgeHead};
pub use train::{
    apply_task_ops, episode_loss, episode_loss_and_grad, episode_objective, evaluate, init_params,
    layer_cases, stream_rng, train, train_from, LossConfig, LossParts, TrainConfig,
};

use crate::error::Result;
use crate::ortho::{full_overlap_geometry, ortho_residual};

/// Redundancy diagnostics for one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerReport {
    /// `‖self_conv(K) − I_r0‖_F` with full overlap at the layer stride.
    pub row_residual: f64,
    /// Mean `|cos|` over distinct pairs of flattened filters (0 with one filter).
    pub mean_abs_cosine: f64,
}

pub fn filter_correlation_report(p: &BackboneParams) -> Result<Vec<LayerReport>> {
    p.blocks()
        .iter()
        .map(|b| {
            let [n, _, k, _] = b.kernel.dims();
            let g = full_overlap_geometry(k, b.geometry.stride)?;
            let row_residual = ortho_residual(&b.kernel, g)?;
            let size = b.kernel.len() / n.max(1);
            let filters: Vec<&[f64]> = b.kernel.data().chunks(size).collect();
            let norms: Vec<f64> = filters.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..n {
                for j in i + 1..n {
                    let dot: f64 = filters[i].iter().zip(filters[j]).map(|(a, b)| a * b).sum();
                    let denom = norms[i] * norms[j];
                    sum += if denom > 0.0 { (dot / denom).abs() } else { 0.0 };
                    pairs += 1;
                }
            }
            Ok(LayerReport {
                row_residual,
                mean_abs_cosine: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
            })
        })
        .collect()
}
