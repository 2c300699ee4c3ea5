use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{fit_gbdt, GbdtConfig, GbdtModel, GbdtParams};
use super::logistic::{train_logistic, LogisticConfig};
use super::Dataset;
use crate::error::{Error, Result};
use crate::eval::auroc;

/// The searched grid: depth {2,3,4} x trees {100,300} x rate {0.1,0.3}
/// x min child weight {1,5} x subsample {0.8,1.0}, 48 points.
pub fn default_grid() -> Vec<GbdtParams> {
    let mut grid = Vec::new();
    for max_depth in [2, 3, 4] {
        for num_trees in [100, 300] {
            for learning_rate in [0.1, 0.3] {
                for min_child_weight in [1.0, 5.0] {
                    for subsample in [0.8, 1.0] {
                        grid.push(GbdtParams {
                            max_depth,
                            num_trees,
                            learning_rate,
                            min_child_weight,
                            subsample,
                        });
                    }
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub params: GbdtParams,
    pub mean_auroc: f64,
    pub std_auroc: f64,
    pub fold_auroc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub cv_grid: Vec<GridResult>,
    pub chosen: GbdtParams,
    pub chosen_index: usize,
    pub folds: usize,
    pub seed: u64,
    pub num_samples: usize,
    pub num_low_quality: usize,
}

/// Stratified fold index per row: each class is shuffled with a seeded RNG
/// and dealt round-robin, so fold class ratios differ by at most one row.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut offset = 0;
    for class in [true, false] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        rows.shuffle(&mut rng);
        for (k, &i) in rows.iter().enumerate() {
            assignment[i] = (k + offset) % folds;
        }
        // continue dealing where the previous class stopped
        offset = (offset + rows.len()) % folds;
    }
    assignment
}

fn fold_seed(seed: u64, grid_index: usize, fold: usize) -> u64 {
    seed ^ ((grid_index as u64) << 32 | fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Grid search by k-fold cross-validated AUROC, then a final fit of the best
/// point on all rows. Grid points are evaluated in parallel on the current
/// rayon pool; results do not depend on the pool size.
pub fn train_gbdt(
    data: &Dataset,
    grid: &[GbdtParams],
    folds: usize,
    config: &GbdtConfig,
    seed: u64,
) -> Result<(GbdtModel, TrainReport)> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    for p in grid {
        p.validate()?;
    }
    data.require_both_classes(folds)?;

    let assignment = stratified_folds(&data.labels, folds, seed);
    let splits: Vec<(Dataset, Dataset)> = (0..folds)
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let valid: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            (data.subset(&train), data.subset(&valid))
        })
        .collect();

    let results: Vec<GridResult> = grid
        .par_iter()
        .enumerate()
        .map(|(gi, params)| {
            let fold_auroc = splits
                .iter()
                .enumerate()
                .map(|(f, (train, valid))| {
                    let (model, _) = fit_gbdt(train, params, config, fold_seed(seed, gi, f))?;
                    let scores: Vec<f64> = (0..valid.len()).map(|i| model.margin(valid.row(i))).collect();
                    auroc(&scores, &valid.labels)
                })
                .collect::<Result<Vec<f64>>>()?;
            let s = CvSummary::from_folds(fold_auroc);
            Ok(GridResult {
                params: *params,
                mean_auroc: s.mean_auroc,
                std_auroc: s.std_auroc,
                fold_auroc: s.fold_auroc,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut chosen_index = 0;
    for (i, r) in results.iter().enumerate() {
        if r.mean_auroc > results[chosen_index].mean_auroc {
            chosen_index = i;
        }
    }
    let chosen = grid[chosen_index];
    let (model, _) = fit_gbdt(data, &chosen, config, seed)?;
    let (pos, _) = data.class_counts();
    Ok((
        model,
        TrainReport {
            cv_grid: results,
            chosen,
            chosen_index,
            folds,
            seed,
            num_samples: data.len(),
            num_low_quality: pos,
        },
    ))
}

/// Mean and population std of per-fold AUROC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub mean_auroc: f64,
    pub std_auroc: f64,
    pub fold_auroc: Vec<f64>,
}

impl CvSummary {
    fn from_folds(fold_auroc: Vec<f64>) -> Self {
        let k = fold_auroc.len() as f64;
        let mean = fold_auroc.iter().sum::<f64>() / k;
        let var = fold_auroc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k;
        CvSummary {
            mean_auroc: mean,
            std_auroc: var.sqrt(),
            fold_auroc,
        }
    }
}

/// k-fold cross-validated AUROC of logistic regression, on the same
/// stratified folds the boosted-tree search uses.
pub fn cross_validate_logistic(data: &Dataset, folds: usize, config: &LogisticConfig, seed: u64) -> Result<CvSummary> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    data.require_both_classes(folds)?;
    let assignment = stratified_folds(&data.labels, folds, seed);
    let fold_auroc = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let valid: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            let (train, valid) = (data.subset(&train), data.subset(&valid));
            let (model, _) = train_logistic(&train, config)?;
            let scores: Vec<f64> = (0..valid.len()).map(|i| model.margin(valid.row(i))).collect();
            auroc(&scores, &valid.labels)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvSummary::from_folds(fold_auroc))
}
