//! Spatial-temporal attention viewpoint predictor on a small autodiff tape.

mod model;
mod tape;

pub use model::{AttentionConfig, AttentionModel, FeatureGrid, Sample};
pub use tape::{softmax_rows, Mat, Tape, Var};

use crate::error::{Error, Result};

/// `softmax(q k^T / sqrt(d_k))` for query rows `q` and key rows `k`.
pub fn attention_weights(q: &Mat, k: &Mat) -> Result<Mat> {
    if q.cols != k.cols || q.cols == 0 {
        return Err(Error::Shape(format!(
            "query width {} vs key width {}",
            q.cols, k.cols
        )));
    }
    let mut scores = Mat::zeros(q.rows, k.rows);
    let scale = 1.0 / (q.cols as f64).sqrt();
    for i in 0..q.rows {
        for j in 0..k.rows {
            let dot: f64 = q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
            scores.data[i * k.rows + j] = dot * scale;
        }
    }
    Ok(softmax_rows(&scores, false))
}

/// Patch-to-patch attention weights within one frame (Z x Z).
pub fn spatial_attention(q: &Mat, k: &Mat) -> Result<Mat> {
    attention_weights(q, k)
}

/// Frame-to-frame attention weights across a window (F x F).
pub fn temporal_attention(q: &Mat, k: &Mat) -> Result<Mat> {
    attention_weights(q, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> AttentionConfig {
        AttentionConfig {
            frame_height: 4,
            frame_width: 4,
            channels: 2,
            patch_height: 2,
            patch_width: 2,
            frames: 2,
            history: 2,
            horizon: 3,
            classes: 5,
            embed_dim: 4,
            heads: 2,
            ff_dim: 6,
            spatial_layers: 1,
            temporal_layers: 1,
            viewpoint_layers: 1,
            decoder_layers: 1,
            zero_head: false,
        }
    }

    fn random_sample(cfg: &AttentionConfig, rng: &mut ChaCha8Rng) -> Sample {
        let frames = (0..cfg.frames)
            .map(|_| {
                let n = cfg.frame_height * cfg.frame_width * cfg.channels;
                let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                FeatureGrid::new(cfg.frame_height, cfg.frame_width, cfg.channels, data).unwrap()
            })
            .collect();
        Sample {
            frames,
            history: (0..cfg.history).map(|_| rng.random_range(0..cfg.classes)).collect(),
            targets: (0..cfg.horizon).map(|_| rng.random_range(0..cfg.classes)).collect(),
        }
    }

    #[test]
    fn weights_rows_sum_to_one_and_are_scale_invariant() {
        let q = Mat::from_rows(&[vec![1.0, 0.5, -0.2], vec![0.0, 2.0, 1.0]]);
        let k = Mat::from_rows(&[vec![0.3, 0.1, 0.0], vec![-1.0, 1.0, 2.0], vec![0.5, 0.5, 0.5]]);
        let w = attention_weights(&q, &k).unwrap();
        for r in w.to_rows() {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // scaling q by c and k by 1/c leaves the scores unchanged
        let q2 = Mat::from_vec(2, 3, q.data.iter().map(|x| x * 3.0).collect());
        let k2 = Mat::from_vec(3, 3, k.data.iter().map(|x| x / 3.0).collect());
        let w2 = attention_weights(&q2, &k2).unwrap();
        for (a, b) in w.data.iter().zip(&w2.data) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(spatial_attention(&q, &Mat::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_head_gives_uniform_loss() {
        let cfg = AttentionConfig {
            zero_head: true,
            ..tiny_config()
        };
        let model = AttentionModel::new(cfg.clone(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<Sample> = (0..4).map(|_| random_sample(&cfg, &mut rng)).collect();
        let loss = model.loss(&batch).unwrap();
        assert!((loss - (cfg.classes as f64).ln()).abs() < 1e-12);
        let probs = model.forward(&batch[0].frames, &batch[0].history).unwrap();
        assert_eq!(probs.len(), cfg.horizon);
        for p in probs {
            assert!(p.iter().all(|x| (x - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut model = AttentionModel::new(cfg.clone(), 3).unwrap();
        assert!(model.num_parameters() < 2000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch: Vec<Sample> = (0..2).map(|_| random_sample(&cfg, &mut rng)).collect();
        let (_, grads) = model.loss_and_grads(&batch).unwrap();
        let flat: Vec<f64> = grads.into_iter().flatten().collect();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..model.num_parameters() {
            let x = model.params().scalar(i);
            model.params_mut().set_scalar(i, x + h);
            let up = model.loss(&batch).unwrap();
            model.params_mut().set_scalar(i, x - h);
            let down = model.loss(&batch).unwrap();
            model.params_mut().set_scalar(i, x);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - flat[i]).abs() / fd.abs().max(flat[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn memorises_a_small_set() {
        let cfg = AttentionConfig {
            frame_height: 4,
            frame_width: 8,
            channels: 2,
            patch_height: 2,
            patch_width: 4,
            frames: 2,
            history: 3,
            horizon: 3,
            classes: 8,
            embed_dim: 16,
            heads: 2,
            ff_dim: 32,
            spatial_layers: 1,
            temporal_layers: 1,
            viewpoint_layers: 1,
            decoder_layers: 1,
            zero_head: false,
        };
        let mut model = AttentionModel::new(cfg.clone(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch: Vec<Sample> = (0..16).map(|_| random_sample(&cfg, &mut rng)).collect();
        let first = model.loss(&batch).unwrap();
        for _ in 0..200 {
            model.train_step(&batch, 1e-2).unwrap();
        }
        let last = model.loss(&batch).unwrap();
        assert!(last < 0.1, "loss {first} -> {last}");
    }

    #[test]
    fn checkpoint_round_trip_and_shape_errors() {
        let cfg = tiny_config();
        let model = AttentionModel::new(cfg.clone(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        model.save(&stem).unwrap();
        let mut other = AttentionModel::new(cfg.clone(), 8).unwrap();
        other.load_params(&stem).unwrap();
        assert_eq!(other.params(), model.params());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_sample(&cfg, &mut rng);
        assert!(model.forward(&s.frames[..1], &s.history).is_err());
        assert!(model.forward(&s.frames, &[0, 99]).is_err());
        let bad = FeatureGrid::zeros(3, 4, 2);
        assert!(model.forward(&[bad.clone(), bad], &s.history).is_err());
    }
}
