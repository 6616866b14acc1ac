use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-voxel loss weighting scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    #[default]
    Uniform,
    /// Occupied voxels weight 1; a seeded random subset of empty voxels,
    /// `empty_ratio` times the occupied count, weight 1; the rest 0.
    OccupancyBalanced,
}

/// Builds `w_ijk` for one label grid. `class_count` is the empty label.
pub fn make_class_weights(
    labels: &[u8],
    class_count: usize,
    mode: WeightMode,
    empty_ratio: f64,
    seed: u64,
) -> Vec<f32> {
    match mode {
        WeightMode::Uniform => vec![1.0; labels.len()],
        WeightMode::OccupancyBalanced => {
            let empty = class_count as u8;
            let mut weights: Vec<f32> = labels
                .iter()
                .map(|&l| if l == empty { 0.0 } else { 1.0 })
                .collect();
            let empty_idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == empty).collect();
            let occupied = labels.len() - empty_idx.len();
            let keep = ((occupied as f64 * empty_ratio).round() as usize).min(empty_idx.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for j in sample(&mut rng, empty_idx.len(), keep) {
                weights[empty_idx[j]] = 1.0;
            }
            weights
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_sums_to_voxel_count() {
        let w = make_class_weights(&[1, 12, 12, 3], 12, WeightMode::Uniform, 2.0, 0);
        assert_eq!(w.iter().sum::<f32>(), 4.0);
    }

    #[test]
    fn all_occupied_keeps_everything() {
        let w = make_class_weights(&[1, 2, 3, 4], 12, WeightMode::OccupancyBalanced, 2.0, 9);
        assert!(w.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn balanced_picks_twice_the_occupied_count() {
        let mut labels = vec![12u8; 100];
        labels.extend([1u8; 8]);
        for seed in 0..5 {
            let w = make_class_weights(&labels, 12, WeightMode::OccupancyBalanced, 2.0, seed);
            let empty_kept = w[..100].iter().filter(|&&v| v == 1.0).count();
            assert_eq!(empty_kept, 16);
            assert!(w[100..].iter().all(|&v| v == 1.0));
        }
        let a = make_class_weights(&labels, 12, WeightMode::OccupancyBalanced, 2.0, 3);
        let b = make_class_weights(&labels, 12, WeightMode::OccupancyBalanced, 2.0, 3);
        assert_eq!(a, b);
    }
}
