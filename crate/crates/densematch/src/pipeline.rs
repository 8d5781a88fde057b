//! End-to-end disparity estimation for one stereo pair.

use crate::error::Result;
use crate::gray::GrayImage;
use crate::matcher::{match_pair, CostVolume, DisparityMap, MatchConfig};
use crate::network::NetworkWeights;
use crate::refine::{refine_disparity, RegionMask, DEFAULT_LR_THRESHOLD};

/// Settings for a full pipeline run.
#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub matching: MatchConfig,
    /// Largest left/right disagreement treated as consistent.
    pub lr_threshold: f32,
}

impl PipelineConfig {
    pub fn new(max_disparity: usize) -> PipelineConfig {
        PipelineConfig {
            matching: MatchConfig::new(max_disparity),
            lr_threshold: DEFAULT_LR_THRESHOLD,
        }
    }
}

/// Final map plus every intermediate worth dumping.
pub struct PipelineOutput {
    /// Refined left-reference disparities; every pixel is valid.
    pub refined: DisparityMap,
    pub wta_left: DisparityMap,
    pub wta_right: DisparityMap,
    pub consistency_checked: DisparityMap,
    pub mask: RegionMask,
    pub left_volume: CostVolume,
    pub right_volume: CostVolume,
}

/// Runs matching and refinement: features, both filtered cost volumes,
/// disparity selection per view, consistency check, and hole filling.
pub fn run_pipeline(
    left: &GrayImage,
    right: &GrayImage,
    weights: &NetworkWeights,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let matched = match_pair(left, right, weights, &config.matching)?;
    let refined = refine_disparity(
        &matched.left_disparity,
        &matched.right_disparity,
        config.lr_threshold,
    )?;
    Ok(PipelineOutput {
        refined: refined.refined,
        wta_left: matched.left_disparity,
        wta_right: matched.right_disparity,
        consistency_checked: refined.consistency_checked,
        mask: refined.mask,
        left_volume: matched.left_volume,
        right_volume: matched.right_volume,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::winner_takes_all;
    use crate::network::{NetworkConfig, NetworkWeights};
    use crate::synthetic::shifted_texture_pair;

    #[test]
    fn pipeline_produces_fully_valid_map_with_consistent_intermediates() {
        let pair = shifted_texture_pair(24, 14, 2, 31).unwrap();
        let weights = NetworkWeights::init(
            NetworkConfig {
                num_layers: 2,
                feature_maps: 8,
            },
            7,
        )
        .unwrap();
        let config = PipelineConfig::new(6);
        let out = run_pipeline(&pair.left, &pair.right, &weights, &config).unwrap();

        let (w, h) = (24, 14);
        assert_eq!(out.refined.width(), w);
        assert_eq!(out.refined.height(), h);
        assert_eq!(out.refined.valid_count(), w * h);
        assert_eq!(out.left_volume.max_disparity(), 6);

        // The stored maps are exactly the volumes' winners.
        assert_eq!(winner_takes_all(&out.left_volume).data(), out.wta_left.data());
        assert_eq!(
            winner_takes_all(&out.right_volume).data(),
            out.wta_right.data()
        );

        // Valid checked pixels pass through to the final map untouched.
        for y in 0..h {
            for x in 0..w {
                if out.consistency_checked.is_valid(x, y) {
                    assert_eq!(out.refined.get(x, y), out.consistency_checked.get(x, y));
                }
            }
        }
    }
}
