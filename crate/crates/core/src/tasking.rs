//! Fixed-size prediction tasks, difficulty-derived gradient weights and
//! difficulty terciles.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market_data::Sample;
use crate::wavelet::task_difficulty;

/// A fixed-size bag of samples treated as one meta-learning unit.
#[derive(Clone, Debug)]
pub struct Task {
    pub id: usize,
    pub samples: Vec<Sample>,
    /// Root sum of squares of the samples' difficulty scores.
    pub difficulty: f64,
    /// Normalized gradient weight, 1.0 until `compute_weights` runs.
    pub weight: f64,
}

/// Per-task weights, index-aligned with the task list. Mean is 1 and
/// ordering matches difficulty ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

/// Whether softmax weights are computed once over all tasks or separately
/// inside each meta-batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScope {
    Global,
    PerMetaBatch,
}

/// Shuffle the pool deterministically and cut it into `floor(n / task_size)`
/// disjoint tasks; the remainder is discarded. Sample difficulties must be
/// attached beforehand.
pub fn build_tasks(mut pool: Vec<Sample>, task_size: usize, seed: u64) -> Result<Vec<Task>> {
    if task_size == 0 {
        return Err(Error::InvalidArgument("task size must be positive".into()));
    }
    if pool.len() < task_size {
        return Err(Error::PoolTooSmall {
            pool: pool.len(),
            task_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);

    let n_tasks = pool.len() / task_size;
    pool.truncate(n_tasks * task_size);
    let mut tasks = Vec::with_capacity(n_tasks);
    for (id, chunk) in pool.chunks(task_size).enumerate() {
        let difficulties: Vec<f64> = chunk.iter().map(|s| s.difficulty).collect();
        tasks.push(Task {
            id,
            samples: chunk.to_vec(),
            difficulty: task_difficulty(&difficulties)?,
            weight: 1.0,
        });
    }
    Ok(tasks)
}

/// Softmax weights over a difficulty vector: z-standardize (population
/// deviation; zero variance maps to all zeros), softmax, then rescale by N
/// so the mean weight is exactly 1.
pub fn softmax_weights(difficulties: &[f64]) -> Vec<f64> {
    let n = difficulties.len();
    if n == 0 {
        return Vec::new();
    }
    let nf = n as f64;
    let mean = difficulties.iter().sum::<f64>() / nf;
    let var = difficulties.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / nf;
    let std = var.sqrt();
    let z: Vec<f64> = if std == 0.0 {
        vec![0.0; n]
    } else {
        difficulties.iter().map(|s| (s - mean) / std).collect()
    };
    let max_z = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max_z).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e * nf / sum).collect()
}

/// Convert task difficulties into gradient weights and write them back onto
/// the tasks.
pub fn compute_weights(tasks: &mut [Task]) -> Result<WeightVector> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput("weights of an empty task list"));
    }
    for task in tasks.iter() {
        if !task.difficulty.is_finite() {
            return Err(Error::NonFiniteDifficulty { task_id: task.id });
        }
    }
    let difficulties: Vec<f64> = tasks.iter().map(|t| t.difficulty).collect();
    let weights = softmax_weights(&difficulties);
    for (task, &w) in tasks.iter_mut().zip(&weights) {
        task.weight = w;
    }
    Ok(WeightVector { weights })
}

/// Indices of the easy / medium / hard thirds, sorted ascending by
/// difficulty with ties broken by task id. Group sizes differ by at most
/// one; the remainder goes to the earlier groups.
#[derive(Clone, Debug)]
pub struct TercilePartition {
    pub easy: Vec<usize>,
    pub medium: Vec<usize>,
    pub hard: Vec<usize>,
}

pub fn tercile_partition(tasks: &[Task]) -> Result<TercilePartition> {
    let n = tasks.len();
    if n < 3 {
        return Err(Error::TooFewTasks { n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        tasks[a]
            .difficulty
            .partial_cmp(&tasks[b].difficulty)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(tasks[a].id.cmp(&tasks[b].id))
    });
    let base = n / 3;
    let remainder = n % 3;
    let easy_len = base + usize::from(remainder >= 1);
    let medium_len = base + usize::from(remainder >= 2);
    let easy = order[..easy_len].to_vec();
    let medium = order[easy_len..easy_len + medium_len].to_vec();
    let hard = order[easy_len + medium_len..].to_vec();
    Ok(TercilePartition { easy, medium, hard })
}

#[derive(Serialize)]
struct ManifestRecord {
    id: usize,
    size: usize,
    difficulty: f64,
    weight: f64,
}

/// Line-delimited JSON audit manifest: one record per task.
pub fn write_task_manifest<W: Write>(mut writer: W, tasks: &[Task]) -> Result<()> {
    for task in tasks {
        let record = ManifestRecord {
            id: task.id,
            size: task.samples.len(),
            difficulty: task.difficulty,
            weight: task.weight,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
        writeln!(writer, "{line}").map_err(|e| Error::Io {
            path: "<manifest>".into(),
            source: e,
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::FeatureMatrix;
    use proptest::prelude::*;

    fn dummy_samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                symbol: format!("S{i}"),
                anchor_date: "2021-01-04".parse().unwrap(),
                features: FeatureMatrix::zeros(5, 2),
                label: (i % 2) as u8,
                movement_pct: 1.0,
                difficulty: (i % 7) as f64 * 0.5,
            })
            .collect()
    }

    fn tasks_with_difficulties(difficulties: &[f64]) -> Vec<Task> {
        difficulties
            .iter()
            .enumerate()
            .map(|(id, &d)| Task {
                id,
                samples: Vec::new(),
                difficulty: d,
                weight: 1.0,
            })
            .collect()
    }

    #[test]
    fn pool_of_100_with_task_size_30_gives_3_tasks() {
        let tasks = build_tasks(dummy_samples(100), 30, 3).unwrap();
        assert_eq!(tasks.len(), 3);
        assert!(tasks.iter().all(|t| t.samples.len() == 30));
    }

    #[test]
    fn same_pool_and_seed_give_identical_membership() {
        let a = build_tasks(dummy_samples(100), 30, 3).unwrap();
        let b = build_tasks(dummy_samples(100), 30, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let xs: Vec<_> = x.samples.iter().map(|s| s.symbol.clone()).collect();
            let ys: Vec<_> = y.samples.iter().map(|s| s.symbol.clone()).collect();
            assert_eq!(xs, ys);
            assert_eq!(x.difficulty, y.difficulty);
        }
        let c = build_tasks(dummy_samples(100), 30, 4).unwrap();
        let xs: Vec<_> = a[0].samples.iter().map(|s| s.symbol.clone()).collect();
        let cs: Vec<_> = c[0].samples.iter().map(|s| s.symbol.clone()).collect();
        assert_ne!(xs, cs);
    }

    #[test]
    fn pool_smaller_than_task_size_is_an_error() {
        let err = build_tasks(dummy_samples(10), 30, 3).unwrap_err();
        assert!(err.to_string().contains("smaller task size"), "{err}");
    }

    #[test]
    fn task_difficulty_matches_sample_scores() {
        let tasks = build_tasks(dummy_samples(60), 20, 9).unwrap();
        for task in &tasks {
            let expected: f64 = task
                .samples
                .iter()
                .map(|s| s.difficulty * s.difficulty)
                .sum::<f64>()
                .sqrt();
            assert_eq!(task.difficulty, expected);
        }
    }

    #[test]
    fn equal_difficulties_give_unit_weights() {
        let mut tasks = tasks_with_difficulties(&[2.5, 2.5, 2.5, 2.5]);
        let wv = compute_weights(&mut tasks).unwrap();
        assert_eq!(wv.weights, vec![1.0; 4]);
        assert!(tasks.iter().all(|t| t.weight == 1.0));
    }

    #[test]
    fn two_task_weights_match_scaled_softmax() {
        // Standardized scores are (-1, +1); 2 * softmax(-1, 1).
        let mut tasks = tasks_with_difficulties(&[1.0, 3.0]);
        let wv = compute_weights(&mut tasks).unwrap();
        assert!((wv.weights[0] - 0.2384).abs() < 1e-4, "{:?}", wv.weights);
        assert!((wv.weights[1] - 1.7616).abs() < 1e-4, "{:?}", wv.weights);
    }

    #[test]
    fn non_finite_difficulty_names_the_task() {
        let mut tasks = tasks_with_difficulties(&[1.0, f64::NAN]);
        let err = compute_weights(&mut tasks).unwrap_err();
        assert!(err.to_string().contains("task 1"), "{err}");
    }

    #[test]
    fn nine_tasks_split_three_ways() {
        let tasks = tasks_with_difficulties(&[5.0, 1.0, 7.0, 3.0, 9.0, 2.0, 8.0, 4.0, 6.0]);
        let p = tercile_partition(&tasks).unwrap();
        assert_eq!(p.easy.len(), 3);
        assert_eq!(p.medium.len(), 3);
        assert_eq!(p.hard.len(), 3);
        let max_easy = p
            .easy
            .iter()
            .map(|&i| tasks[i].difficulty)
            .fold(f64::MIN, f64::max);
        let min_medium = p
            .medium
            .iter()
            .map(|&i| tasks[i].difficulty)
            .fold(f64::MAX, f64::min);
        let max_medium = p
            .medium
            .iter()
            .map(|&i| tasks[i].difficulty)
            .fold(f64::MIN, f64::max);
        let min_hard = p
            .hard
            .iter()
            .map(|&i| tasks[i].difficulty)
            .fold(f64::MAX, f64::min);
        assert!(max_easy <= min_medium);
        assert!(max_medium <= min_hard);
    }

    #[test]
    fn ten_tasks_split_four_three_three() {
        let difficulties: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let tasks = tasks_with_difficulties(&difficulties);
        let p = tercile_partition(&tasks).unwrap();
        assert_eq!((p.easy.len(), p.medium.len(), p.hard.len()), (4, 3, 3));
    }

    #[test]
    fn equal_scores_tie_break_by_id() {
        let tasks = tasks_with_difficulties(&[1.0; 6]);
        let p = tercile_partition(&tasks).unwrap();
        assert_eq!(p.easy, vec![0, 1]);
        assert_eq!(p.medium, vec![2, 3]);
        assert_eq!(p.hard, vec![4, 5]);
    }

    #[test]
    fn fewer_than_three_tasks_is_an_error() {
        let tasks = tasks_with_difficulties(&[1.0, 2.0]);
        assert!(tercile_partition(&tasks).is_err());
    }

    #[test]
    fn manifest_has_one_line_per_task() {
        let mut tasks = tasks_with_difficulties(&[1.0, 2.0, 3.0]);
        compute_weights(&mut tasks).unwrap();
        let mut buf = Vec::new();
        write_task_manifest(&mut buf, &tasks).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["id"], 0);
        assert!(first["weight"].as_f64().unwrap() > 0.0);
    }

    proptest! {
        /// Mean weight 1, all weights positive, strict monotonicity in
        /// difficulty, and the softmax sum identity.
        #[test]
        fn weight_contract_holds(difficulties in proptest::collection::vec(0.0f64..1e4, 1..64)) {
            let mut tasks = tasks_with_difficulties(&difficulties);
            let wv = compute_weights(&mut tasks).unwrap();
            let n = difficulties.len() as f64;
            let sum: f64 = wv.weights.iter().sum();
            prop_assert!((sum - n).abs() < 1e-9 * n.max(1.0));
            let mean = sum / n;
            prop_assert!((mean - 1.0).abs() < 1e-9);
            prop_assert!(wv.weights.iter().all(|w| *w > 0.0));
            for i in 0..difficulties.len() {
                for j in 0..difficulties.len() {
                    if difficulties[i] > difficulties[j] {
                        prop_assert!(wv.weights[i] > wv.weights[j],
                            "difficulty {} > {} but weight {} <= {}",
                            difficulties[i], difficulties[j], wv.weights[i], wv.weights[j]);
                    }
                }
            }
        }
    }
}
