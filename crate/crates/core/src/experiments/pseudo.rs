//! True labels versus pseudo-labels on a tabular dataset.
//!
//! Pseudo-labels `<w_ls, x> + c_ls + sigma_hat z` come from a least-squares
//! fit, so they follow a well-specified linear-Gaussian model on the real
//! features. Comparing quantile-regression coverage on both label sets
//! separates the high-dimensional bias from misspecification.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{mean_std, pool, sample_size, table, write_atomic, ConfigMap};
use crate::coverage::empirical_coverage;
use crate::erm::{fit_least_squares, fit_subgradient, Dataset, FitConfig};
use crate::pinball::QuantileLevel;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoConfig {
    pub alphas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub seeds: usize,
    pub master_seed: u64,
    /// Fraction of rows held out as the test split.
    pub test_fraction: f64,
    /// Fraction of the training split used only to estimate `sigma_hat`.
    pub holdout_fraction: f64,
    pub fit: FitConfig,
    pub parallelism: usize,
    pub output: PathBuf,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            alphas: vec![0.9],
            kappas: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            seeds: 8,
            master_seed: 0,
            test_fraction: 0.2,
            holdout_fraction: 0.2,
            fit: FitConfig::tabular(),
            parallelism: 1,
            output: PathBuf::from("pseudo.csv"),
        }
    }
}

impl PseudoConfig {
    pub fn from_map(mut map: ConfigMap) -> Result<Self> {
        let base = PseudoConfig::default();
        let cfg = PseudoConfig {
            alphas: map.take_list("alphas")?.unwrap_or(base.alphas),
            kappas: map.take_list("kappas")?.unwrap_or(base.kappas),
            seeds: map.take_or("seeds", base.seeds)?,
            master_seed: map.take_or("seed", base.master_seed)?,
            test_fraction: map.take_or("test_fraction", base.test_fraction)?,
            holdout_fraction: map.take_or("holdout_fraction", base.holdout_fraction)?,
            fit: map.take_fit(base.fit)?,
            parallelism: map.take_or("parallelism", base.parallelism)?,
            output: map.take_path("output")?.unwrap_or(base.output),
        };
        map.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.alphas.is_empty() || self.kappas.is_empty() || self.seeds == 0 || self.parallelism == 0 {
            return bad("alphas, kappas, seeds and parallelism must be non-empty / positive".into());
        }
        if let Some(a) = self.alphas.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return bad(format!("alpha {a} is outside (0, 1)"));
        }
        if let Some(k) = self.kappas.iter().find(|&&k| !(k > 0.0)) {
            return bad(format!("kappa {k} must be > 0"));
        }
        for (name, f) in [("test_fraction", self.test_fraction), ("holdout_fraction", self.holdout_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    True,
    Pseudo,
}

impl Arm {
    fn name(self) -> &'static str {
        match self {
            Arm::True => "true",
            Arm::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoRow {
    pub kappa: f64,
    pub seed: usize,
    pub arm: Arm,
    pub n: usize,
    pub d: usize,
    pub alpha: f64,
    /// Test-split coverage, on pseudo test labels for the pseudo arm.
    pub coverage: f64,
}

pub const PSEUDO_HEADER: &str = "kappa,seed,arm,n,d,alpha,coverage";

impl PseudoRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kappa,
            self.seed,
            self.arm.name(),
            self.n,
            self.d,
            self.alpha,
            self.coverage
        )
    }
}

/// Per-seed split: standardized train and test sets plus the pseudo-label
/// generator fitted on the training split.
struct Split {
    train: Dataset,
    test: Dataset,
    predict_train: nalgebra::DVector<f64>,
    predict_test: nalgebra::DVector<f64>,
    sigma_hat: f64,
}

fn split_rows(total: usize, fraction: f64) -> usize {
    ((total as f64 * fraction).round() as usize).clamp(1, total.saturating_sub(1).max(1))
}

fn prepare(data: &Dataset, cfg: &PseudoConfig, seed_idx: usize) -> Result<Split> {
    let (raw_train, raw_test) = data.train_test_split(cfg.test_fraction, cfg.master_seed, seed_idx as u64)?;
    let (mean, sd) = raw_train.feature_stats();
    let train = raw_train.standardize_with(&mean, &sd)?;
    let test = raw_test.standardize_with(&mean, &sd)?;

    let n_hold = split_rows(train.n(), cfg.holdout_fraction);
    let fit_idx: Vec<usize> = (0..train.n() - n_hold).collect();
    let hold_idx: Vec<usize> = (train.n() - n_hold..train.n()).collect();
    let ls = fit_least_squares(&train.select(&fit_idx)?, &train.select(&hold_idx)?)?;
    let predict = |x: &nalgebra::DMatrix<f64>| {
        let mut p = x * &ls.w;
        p.add_scalar_mut(ls.intercept);
        p
    };
    Ok(Split {
        predict_train: predict(train.x()),
        predict_test: predict(test.x()),
        train,
        test,
        sigma_hat: ls.sigma_hat,
    })
}

fn run_job(data: &Dataset, cfg: &PseudoConfig, si: usize, ki: usize) -> Result<Vec<PseudoRow>> {
    let split = prepare(data, cfg, si)?;
    let kappa = cfg.kappas[ki];
    let d = data.d();
    let n = sample_size(d, kappa);
    if n > split.train.n() {
        return Err(Error::InsufficientRows { needed: n, available: split.train.n() });
    }
    let job = [si as u64, ki as u64];
    let mut order: Vec<usize> = (0..split.train.n()).collect();
    order.shuffle(&mut rng::stream(cfg.master_seed, Purpose::Subsample, &job));
    let sub_idx = &order[..n];
    let sub = split.train.select(sub_idx)?;

    let mut noise = rng::stream(cfg.master_seed, Purpose::PseudoLabels, &job);
    let mut draw = |mean: f64| mean + split.sigma_hat * Distribution::<f64>::sample(&StandardNormal, &mut noise);
    let pseudo_sub_y = sub_idx.iter().map(|&i| draw(split.predict_train[i])).collect::<Vec<f64>>();
    let pseudo_test_y = split.predict_test.iter().map(|&m| draw(m)).collect::<Vec<f64>>();
    let pseudo_sub = sub.relabel(pseudo_sub_y.into())?;
    let pseudo_test = split.test.relabel(pseudo_test_y.into())?;

    let mut rows = Vec::with_capacity(2 * cfg.alphas.len());
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let level = QuantileLevel::new(alpha)?;
        for (arm, train, test) in [(Arm::True, &sub, &split.test), (Arm::Pseudo, &pseudo_sub, &pseudo_test)] {
            let seed = rng::derive_seed(cfg.master_seed, &[si as u64, ki as u64, ai as u64, arm as u64]);
            let fit = fit_subgradient(train, level, &FitConfig { seed, ..cfg.fit.clone() })?;
            rows.push(PseudoRow { kappa, seed: si, arm, n, d, alpha, coverage: empirical_coverage(&fit, test)? });
        }
    }
    Ok(rows)
}

/// Rows ordered by kappa, then seed, then alpha, then arm.
pub fn run_pseudo_label_data(data: &Dataset, cfg: &PseudoConfig) -> Result<Vec<PseudoRow>> {
    cfg.validate()?;
    let kappa_min = cfg.kappas.iter().copied().fold(f64::INFINITY, f64::min);
    let needed = sample_size(data.d(), kappa_min);
    let n_train = data.n() - split_rows(data.n(), cfg.test_fraction).min(data.n());
    if needed > n_train {
        return Err(Error::InsufficientRows { needed, available: n_train });
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.kappas.len())
        .flat_map(|k| (0..cfg.seeds).map(move |s| (s, k)))
        .collect();
    let chunks: Vec<Vec<PseudoRow>> = pool(cfg.parallelism)?.install(|| {
        jobs.par_iter()
            .map(|&(s, k)| run_job(data, cfg, s, k))
            .collect::<Result<_>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

pub fn run_pseudo_label(csv_path: &Path, cfg: &PseudoConfig) -> Result<Vec<PseudoRow>> {
    run_pseudo_label_data(&Dataset::from_csv(csv_path)?, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoAggregate {
    pub kappa: f64,
    pub alpha: f64,
    pub arm: Arm,
    pub seeds: usize,
    pub coverage_mean: f64,
    pub coverage_std: f64,
}

pub fn aggregate_pseudo(rows: &[PseudoRow]) -> Vec<PseudoAggregate> {
    let mut keys: Vec<(f64, f64, Arm)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|k| *k == (r.kappa, r.alpha, r.arm)) {
            keys.push((r.kappa, r.alpha, r.arm));
        }
    }
    keys.into_iter()
        .map(|(kappa, alpha, arm)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.kappa == kappa && r.alpha == alpha && r.arm == arm)
                .map(|r| r.coverage)
                .collect();
            let (m, s) = mean_std(&vals);
            PseudoAggregate { kappa, alpha, arm, seeds: vals.len(), coverage_mean: m, coverage_std: s }
        })
        .collect()
}

/// Writes per-row results to `path` and per-`(kappa, alpha, arm)` summaries
/// next to it.
pub fn write_pseudo(path: &Path, rows: &[PseudoRow]) -> Result<PathBuf> {
    write_atomic(path, &table(PSEUDO_HEADER, rows.iter().map(PseudoRow::csv_row)))?;
    let agg_rows = aggregate_pseudo(rows).into_iter().map(|a| {
        let mut s = String::new();
        write!(s, "{},{},{},{},{},{}", a.kappa, a.alpha, a.arm.name(), a.seeds, a.coverage_mean, a.coverage_std).unwrap();
        s
    });
    let agg = super::aggregate_path(path);
    write_atomic(&agg, &table("kappa,alpha,arm,seeds,coverage_mean,coverage_std", agg_rows))?;
    Ok(agg)
}
