//! Simulation studies: coverage sweeps against the fixed-point prediction,
//! the bias of the learned intercept, the interpolating regime and the
//! pseudo-label protocol on tabular data.
//!
//! Every cell draws its randomness from streams keyed by the master seed and
//! the cell's grid indices, and rows are emitted in grid order, so outputs do
//! not depend on the number of worker threads.

mod config;
mod pseudo;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub use config::{parse_noise_spec, resolve_parallelism, ConfigMap};
pub use pseudo::{
    aggregate_pseudo, run_pseudo_label, run_pseudo_label_data, write_pseudo, Arm, PseudoAggregate, PseudoConfig, PseudoRow,
    PSEUDO_HEADER,
};

use crate::coverage::exact_coverage;
use crate::erm::{fit_subgradient, generate_linear_data, min_norm_interpolator, FitConfig};
use crate::noise::NoiseModel;
use crate::pinball::QuantileLevel;
use crate::quadrature::QuadratureSpec;
use crate::rng::{self, Purpose};
use crate::theory::{coverage_linear_approx, expansion_constants, solve_system, SolveOpts};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WStarDirection {
    /// Uniform on the sphere, drawn per cell.
    Sphere,
    /// Along the first coordinate axis.
    Axis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub d: usize,
    pub seeds: usize,
    pub master_seed: u64,
    pub noise: NoiseModel,
    pub w_star_norm: f64,
    pub w_star: WStarDirection,
    pub fit: FitConfig,
    pub quad: QuadratureSpec,
    pub output: PathBuf,
    pub parallelism: usize,
}

/// Inclusive arithmetic progression `start, start + step, ..., stop`.
pub fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| round12(start + i as f64 * step)).collect()
}

fn round12(v: f64) -> f64 {
    (v * 1e12).round() / 1e12
}

impl Default for SweepConfig {
    /// d = 100, N(0, 0.25) noise, ||w*|| = 1, 8 seeds, alpha in
    /// {0.5, 0.52, ..., 0.98}, kappa in {0.02, 0.04, ..., 0.5}, fitted with
    /// [`FitConfig::three_stage`].
    fn default() -> Self {
        SweepConfig {
            alphas: grid(0.5, 0.98, 0.02),
            kappas: grid(0.02, 0.5, 0.02),
            d: 100,
            seeds: 8,
            master_seed: 0,
            noise: NoiseModel::Gaussian(crate::Component::new(1.0, 0.0, 0.25)),
            w_star_norm: 1.0,
            w_star: WStarDirection::Sphere,
            fit: FitConfig::three_stage(),
            quad: QuadratureSpec::default(),
            output: PathBuf::from("sweep.csv"),
            parallelism: 1,
        }
    }
}

impl SweepConfig {
    pub fn from_map(mut map: ConfigMap) -> Result<Self> {
        let base = SweepConfig::default();
        let cfg = SweepConfig {
            alphas: map.take_list("alphas")?.unwrap_or(base.alphas),
            kappas: map.take_list("kappas")?.unwrap_or(base.kappas),
            d: map.take_or("d", base.d)?,
            seeds: map.take_or("seeds", base.seeds)?,
            master_seed: map.take_or("seed", base.master_seed)?,
            noise: map.take_noise(base.noise)?,
            w_star_norm: map.take_or("w_star_norm", base.w_star_norm)?,
            w_star: match map.take::<String>("w_star")?.as_deref() {
                None | Some("sphere") => WStarDirection::Sphere,
                Some("axis") => WStarDirection::Axis,
                Some(other) => return Err(Error::Config(format!("unknown w_star direction `{other}`"))),
            },
            fit: map.take_fit(base.fit)?,
            quad: map.take_quad()?,
            output: map.take_path("output")?.unwrap_or(base.output),
            parallelism: map.take_or("parallelism", base.parallelism)?,
        };
        map.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_map(ConfigMap::from_file(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.alphas.is_empty() || self.kappas.is_empty() {
            return bad("alphas and kappas must be non-empty".into());
        }
        if let Some(a) = self.alphas.iter().find(|&&a| !(a > 0.0 && a < 1.0)) {
            return bad(format!("alpha {a} is outside (0, 1)"));
        }
        if self.d == 0 || self.seeds == 0 || self.parallelism == 0 {
            return bad("d, seeds and parallelism must be at least 1".into());
        }
        if !(self.w_star_norm >= 0.0 && self.w_star_norm.is_finite()) {
            return bad(format!("w_star_norm must be finite and >= 0, got {}", self.w_star_norm));
        }
        for &k in &self.kappas {
            if !(k > 0.0) {
                return bad(format!("kappa {k} must be > 0"));
            }
            let n = sample_size(self.d, k);
            if n < self.d + 1 {
                return bad(format!("kappa {k} gives n = {n} < d + 1 = {}", self.d + 1));
            }
        }
        Ok(())
    }
}

/// `round(d / kappa)`.
pub fn sample_size(d: usize, kappa: f64) -> usize {
    (d as f64 / kappa).round() as usize
}

fn draw_w_star(direction: WStarDirection, d: usize, norm: f64, seed: u64, cell: &[u64]) -> DVector<f64> {
    match direction {
        WStarDirection::Axis => DVector::from_fn(d, |i, _| if i == 0 { norm } else { 0.0 }),
        WStarDirection::Sphere => {
            let mut rng = rng::stream(seed, Purpose::TrueParams, cell);
            let g: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            let scale = norm / g.norm();
            g * scale
        }
    }
}

/// One `(alpha, kappa, seed)` simulation outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentCell {
    pub alpha: f64,
    pub kappa: f64,
    pub seed: usize,
    pub n: usize,
    pub d: usize,
    pub coverage_exact: f64,
    /// Fixed-point prediction; NaN when the solver did not converge.
    pub coverage_analytical: f64,
    pub coverage_linear: f64,
    pub w_err_sq: f64,
    pub b_gap: f64,
    pub final_risk: f64,
    pub converged: bool,
}

pub const CELL_HEADER: &str =
    "alpha,kappa,seed,n,d,coverage_exact,coverage_analytical,coverage_linear,w_err_sq,b_gap,final_risk,converged";

impl ExperimentCell {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.alpha,
            self.kappa,
            self.seed,
            self.n,
            self.d,
            self.coverage_exact,
            self.coverage_analytical,
            self.coverage_linear,
            self.w_err_sq,
            self.b_gap,
            self.final_risk,
            self.converged
        )
    }
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {parallelism} worker threads: {e}")))
}

/// Fixed-point `(coverage, b* - z_alpha)` per `(alpha, kappa)`, row-major in
/// alpha; NaN where the solver fails.
fn theory_grid(cfg: &SweepConfig) -> Vec<(f64, f64)> {
    let opts = SolveOpts { quad: cfg.quad, ..SolveOpts::default() };
    let pairs: Vec<(f64, f64)> = cfg.alphas.iter().flat_map(|&a| cfg.kappas.iter().map(move |&k| (a, k))).collect();
    pairs
        .par_iter()
        .map(|&(a, k)| match (solve_system(a, k, &cfg.noise, &opts), cfg.noise.quantile(a)) {
            (Ok(sol), Ok(z)) => (sol.coverage, sol.b - z),
            _ => (f64::NAN, f64::NAN),
        })
        .collect()
}

fn run_cell(cfg: &SweepConfig, ai: usize, ki: usize, si: usize, analytical: f64) -> Result<ExperimentCell> {
    let (alpha, kappa) = (cfg.alphas[ai], cfg.kappas[ki]);
    let level = QuantileLevel::new(alpha)?;
    let n = sample_size(cfg.d, kappa);
    let cell = [ai as u64, ki as u64, si as u64];
    let w_star = draw_w_star(cfg.w_star, cfg.d, cfg.w_star_norm, cfg.master_seed, &cell);
    let data_seed = rng::derive_seed(cfg.master_seed, &cell);
    let data = generate_linear_data(n, cfg.d, &w_star, &cfg.noise, data_seed)?;
    let fit_cfg = FitConfig { seed: data_seed, ..cfg.fit.clone() };
    let fit = fit_subgradient(&data, level, &fit_cfg)?;
    let z = cfg.noise.quantile(alpha)?;
    Ok(ExperimentCell {
        alpha,
        kappa,
        seed: si,
        n,
        d: cfg.d,
        coverage_exact: exact_coverage(&fit, &w_star, &cfg.noise, &cfg.quad)?,
        coverage_analytical: analytical,
        coverage_linear: coverage_linear_approx(alpha, kappa),
        w_err_sq: (&fit.w - &w_star).norm_squared(),
        b_gap: fit.b - z,
        final_risk: fit.final_risk,
        converged: fit.converged,
    })
}

/// Fits every `(alpha, kappa, seed)` cell; rows come back in that order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<ExperimentCell>> {
    cfg.validate()?;
    pool(cfg.parallelism)?.install(|| {
        let theory = theory_grid(cfg);
        let nk = cfg.kappas.len();
        let jobs: Vec<(usize, usize, usize)> = (0..cfg.alphas.len())
            .flat_map(|a| (0..nk).flat_map(move |k| (0..cfg.seeds).map(move |s| (a, k, s))))
            .collect();
        jobs.par_iter()
            .map(|&(a, k, s)| run_cell(cfg, a, k, s, theory[a * nk + k].0))
            .collect()
    })
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups consecutive cells sharing `(alpha, kappa)`.
fn groups(cells: &[ExperimentCell]) -> Vec<&[ExperimentCell]> {
    cells
        .chunk_by(|a, b| a.alpha == b.alpha && a.kappa == b.kappa)
        .collect()
}

const AGG_FIELDS: [&str; 6] = ["coverage_exact", "coverage_analytical", "coverage_linear", "w_err_sq", "b_gap", "final_risk"];

fn agg_values(c: &ExperimentCell) -> [f64; 6] {
    [c.coverage_exact, c.coverage_analytical, c.coverage_linear, c.w_err_sq, c.b_gap, c.final_risk]
}

pub fn aggregate_header() -> String {
    let mut h = String::from("alpha,kappa,seeds");
    for f in AGG_FIELDS {
        write!(h, ",{f}_mean,{f}_std").unwrap();
    }
    h.push_str(",converged_frac");
    h
}

/// Per-`(alpha, kappa)` means and standard deviations over seeds.
pub fn aggregate_rows(cells: &[ExperimentCell]) -> Vec<String> {
    groups(cells)
        .into_iter()
        .map(|g| {
            let mut row = format!("{},{},{}", g[0].alpha, g[0].kappa, g.len());
            for i in 0..AGG_FIELDS.len() {
                let vals: Vec<f64> = g.iter().map(|c| agg_values(c)[i]).collect();
                let (m, s) = mean_std(&vals);
                write!(row, ",{m},{s}").unwrap();
            }
            let conv = g.iter().filter(|c| c.converged).count() as f64 / g.len() as f64;
            write!(row, ",{conv}").unwrap();
            row
        })
        .collect()
}

/// `dir/stem_agg.ext` next to `path`.
pub fn aggregate_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_agg.{ext}"),
        None => format!("{stem}_agg"),
    };
    path.with_file_name(name)
}

fn table(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Writes the per-cell table to `path` and the aggregate next to it.
pub fn write_sweep(path: &Path, cells: &[ExperimentCell]) -> Result<PathBuf> {
    write_atomic(path, &table(CELL_HEADER, cells.iter().map(ExperimentCell::csv_row)))?;
    let agg = aggregate_path(path);
    write_atomic(&agg, &table(&aggregate_header(), aggregate_rows(cells)))?;
    Ok(agg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasRow {
    pub alpha: f64,
    pub kappa: f64,
    pub seeds: usize,
    pub b_gap_mean: f64,
    pub b_gap_std: f64,
    /// First-order prediction `b0 kappa`.
    pub b0_kappa: f64,
    /// `b* - z_alpha` from the fixed-point solver; NaN if it failed.
    pub b_star_gap: f64,
}

pub const BIAS_HEADER: &str = "alpha,kappa,seeds,b_gap_mean,b_gap_std,b0_kappa,b_star_gap";

impl BiasRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.alpha, self.kappa, self.seeds, self.b_gap_mean, self.b_gap_std, self.b0_kappa, self.b_star_gap
        )
    }
}

/// Learned-intercept bias `b_hat - z_alpha` per `(alpha, kappa)`, next to its
/// first-order and fixed-point predictions.
pub fn run_bias_study(cfg: &SweepConfig) -> Result<Vec<BiasRow>> {
    let cells = run_sweep(cfg)?;
    let theory = pool(cfg.parallelism)?.install(|| theory_grid(cfg));
    groups(&cells)
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let (a, k) = (g[0].alpha, g[0].kappa);
            let ec = expansion_constants(QuantileLevel::new(a)?, &cfg.noise)?;
            let gaps: Vec<f64> = g.iter().map(|c| c.b_gap).collect();
            let (m, s) = mean_std(&gaps);
            Ok(BiasRow {
                alpha: a,
                kappa: k,
                seeds: g.len(),
                b_gap_mean: m,
                b_gap_std: s,
                b0_kappa: ec.b0 * k,
                b_star_gap: theory[i].1,
            })
        })
        .collect()
}

pub fn write_bias(path: &Path, rows: &[BiasRow]) -> Result<()> {
    write_atomic(path, &table(BIAS_HEADER, rows.iter().map(BiasRow::csv_row)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverparamConfig {
    pub d: usize,
    pub n: usize,
    pub seeds: usize,
    pub master_seed: u64,
    pub noise: NoiseModel,
    pub w_star_norm: f64,
    pub quad: QuadratureSpec,
    pub parallelism: usize,
}

impl Default for OverparamConfig {
    fn default() -> Self {
        OverparamConfig {
            d: 400,
            n: 50,
            seeds: 8,
            master_seed: 0,
            noise: NoiseModel::standard(),
            w_star_norm: 1.0,
            quad: QuadratureSpec::default(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverparamRow {
    pub seed: usize,
    pub n: usize,
    pub d: usize,
    /// NaN when the Gram matrix was singular.
    pub coverage_exact: f64,
    pub abs_dev_from_half: f64,
    pub w_err_norm: f64,
    pub b_hat: f64,
    pub singular: bool,
}

pub const OVERPARAM_HEADER: &str = "seed,n,d,coverage_exact,abs_dev_from_half,w_err_norm,b_hat,status";

impl OverparamRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.n,
            self.d,
            self.coverage_exact,
            self.abs_dev_from_half,
            self.w_err_norm,
            self.b_hat,
            if self.singular { "singular_gram" } else { "ok" }
        )
    }
}

/// Coverage of the minimum-norm interpolator, one row per seed. No quantile
/// level enters: the interpolator ignores the loss.
pub fn run_overparam(cfg: &OverparamConfig) -> Result<Vec<OverparamRow>> {
    if cfg.n == 0 || cfg.seeds == 0 {
        return Err(Error::Config("n and seeds must be at least 1".into()));
    }
    if cfg.d < 4 * cfg.n {
        return Err(Error::Config(format!("need d >= 4 n, got d = {}, n = {}", cfg.d, cfg.n)));
    }
    pool(cfg.parallelism)?.install(|| {
        (0..cfg.seeds)
            .into_par_iter()
            .map(|s| {
                let cell = [s as u64];
                let w_star = draw_w_star(WStarDirection::Sphere, cfg.d, cfg.w_star_norm, cfg.master_seed, &cell);
                let data = generate_linear_data(cfg.n, cfg.d, &w_star, &cfg.noise, rng::derive_seed(cfg.master_seed, &cell))?;
                let row = match min_norm_interpolator(&data) {
                    Ok(fit) => {
                        let c = exact_coverage(&fit, &w_star, &cfg.noise, &cfg.quad)?;
                        OverparamRow {
                            seed: s,
                            n: cfg.n,
                            d: cfg.d,
                            coverage_exact: c,
                            abs_dev_from_half: (c - 0.5).abs(),
                            w_err_norm: (&fit.w - &w_star).norm(),
                            b_hat: fit.b,
                            singular: false,
                        }
                    }
                    Err(Error::SingularGram { .. }) => OverparamRow {
                        seed: s,
                        n: cfg.n,
                        d: cfg.d,
                        coverage_exact: f64::NAN,
                        abs_dev_from_half: f64::NAN,
                        w_err_norm: f64::NAN,
                        b_hat: f64::NAN,
                        singular: true,
                    },
                    Err(e) => return Err(e),
                };
                Ok(row)
            })
            .collect()
    })
}

pub fn write_overparam(path: &Path, rows: &[OverparamRow]) -> Result<()> {
    write_atomic(path, &table(OVERPARAM_HEADER, rows.iter().map(OverparamRow::csv_row)))
}
