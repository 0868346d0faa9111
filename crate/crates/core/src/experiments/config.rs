//! Flat `key = value` experiment configs.
//!
//! One entry per line, `#` starts a comment, lists are comma separated and
//! surrounding quotes on a value are dropped. Every key must be consumed by
//! the reader; leftovers are reported as unknown.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::erm::{FitConfig, Optimizer, Schedule};
use crate::noise::{Component, NoiseModel};
use crate::quadrature::QuadratureSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, (String, usize)>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(config_err(format!("line {}: empty key", i + 1)));
            }
            let value = strip_quotes(value.trim()).to_string();
            if entries.insert(key.clone(), (value, i + 1)).is_some() {
                return Err(config_err(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn parse_as<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
        value
            .trim()
            .parse()
            .map_err(|_| config_err(format!("line {line}: cannot parse `{key} = {value}`")))
    }

    pub fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take_raw(key) {
            Some((v, line)) => Self::parse_as(key, &v, line).map(Some),
            None => Ok(None),
        }
    }

    pub fn take_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn take_required<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| config_err(format!("missing required key `{key}`")))
    }

    pub fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take_raw(key) {
            Some((v, line)) => v
                .split(',')
                .map(|item| Self::parse_as(key, item, line))
                .collect::<Result<Vec<T>>>()
                .map(Some),
            None => Ok(None),
        }
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().next() {
            None => Ok(()),
            Some((key, (_, line))) => Err(config_err(format!("line {line}: unknown key `{key}`"))),
        }
    }

    /// `noise = gaussian` (with `noise_mean`, `noise_var`), `noise = mixture`
    /// (with `noise_components = w:mean:var, ...`) or `noise = steep_shoulder`.
    pub fn take_noise(&mut self, default: NoiseModel) -> Result<NoiseModel> {
        let kind: Option<String> = self.take("noise")?;
        let mean: Option<f64> = self.take("noise_mean")?;
        let var: Option<f64> = self.take("noise_var")?;
        let comps: Option<Vec<String>> = self.take_list("noise_components")?;
        let model = match kind.as_deref() {
            None if mean.is_none() && var.is_none() && comps.is_none() => return Ok(default),
            None | Some("gaussian") => {
                if comps.is_some() {
                    return Err(config_err("`noise_components` needs `noise = mixture`"));
                }
                NoiseModel::gaussian(mean.unwrap_or(0.0), var.unwrap_or(1.0))
            }
            Some("mixture") => {
                let comps = comps.ok_or_else(|| config_err("`noise = mixture` needs `noise_components`"))?;
                let parsed = comps
                    .iter()
                    .map(|c| parse_component(c))
                    .collect::<Result<Vec<_>>>()?;
                NoiseModel::mixture(parsed)
            }
            Some("steep_shoulder") => Ok(NoiseModel::steep_shoulder_mixture()),
            Some(other) => return Err(config_err(format!("unknown noise kind `{other}`"))),
        };
        model.map_err(|e| config_err(e.to_string()))
    }

    /// Fitting options on top of `base`: `optimizer`, `schedule`, `lr`,
    /// `lr_decay`, `decay_at`, `beta`, `max_steps`, `early_stop_after`,
    /// `batch_size`, `momentum`.
    pub fn take_fit(&mut self, base: FitConfig) -> Result<FitConfig> {
        let mut fit = base;
        match self.take::<String>("optimizer")?.as_deref() {
            None => {}
            Some("full_batch") => fit.optimizer = Optimizer::FullBatch,
            Some("momentum_sgd") => fit.optimizer = Optimizer::MomentumSgd { batch_size: 64, momentum: 0.9 },
            Some(other) => return Err(config_err(format!("unknown optimizer `{other}`"))),
        }
        let batch: Option<usize> = self.take("batch_size")?;
        let momentum: Option<f64> = self.take("momentum")?;
        match &mut fit.optimizer {
            Optimizer::MomentumSgd { batch_size, momentum: m } => {
                if let Some(b) = batch {
                    *batch_size = b;
                }
                if let Some(v) = momentum {
                    *m = v;
                }
            }
            Optimizer::FullBatch if batch.is_some() || momentum.is_some() => {
                return Err(config_err("`batch_size`/`momentum` need `optimizer = momentum_sgd`"));
            }
            Optimizer::FullBatch => {}
        }
        let kind: Option<String> = self.take("schedule")?;
        let lr: Option<f64> = self.take("lr")?;
        let decay: Option<f64> = self.take("lr_decay")?;
        let decay_at: Option<Vec<usize>> = self.take_list("decay_at")?;
        let beta: Option<f64> = self.take("beta")?;
        match kind.as_deref() {
            Some("inverse_sqrt") => {
                if lr.is_some() || decay.is_some() || decay_at.is_some() {
                    return Err(config_err("`lr`, `lr_decay`, `decay_at` do not apply to `schedule = inverse_sqrt`"));
                }
                fit.schedule = Schedule::InverseSqrt {
                    beta: beta.ok_or_else(|| config_err("`schedule = inverse_sqrt` needs `beta`"))?,
                };
            }
            None | Some("step") => {
                if beta.is_some() {
                    return Err(config_err("`beta` needs `schedule = inverse_sqrt`"));
                }
                if let Schedule::StepDecay { initial_lr, decay_factor, decay_at: at } = &mut fit.schedule {
                    if let Some(v) = lr {
                        *initial_lr = v;
                    }
                    if let Some(v) = decay {
                        *decay_factor = v;
                    }
                    if let Some(v) = decay_at {
                        *at = v;
                    }
                } else if lr.is_some() || decay.is_some() || decay_at.is_some() {
                    return Err(config_err("step-decay keys given but base schedule is not step decay"));
                }
            }
            Some(other) => return Err(config_err(format!("unknown schedule `{other}`"))),
        }
        if let Some(v) = self.take("max_steps")? {
            fit.max_steps = v;
        }
        if let Some(v) = self.take("early_stop_after")? {
            fit.early_stop_after = Some(v);
        }
        Ok(fit)
    }

    pub fn take_quad(&mut self) -> Result<QuadratureSpec> {
        let nodes = self.take_or("quad_nodes", QuadratureSpec::default().nodes)?;
        QuadratureSpec::new(nodes).map_err(|e| config_err(e.to_string()))
    }

    pub fn take_path(&mut self, key: &str) -> Result<Option<PathBuf>> {
        Ok(self.take::<String>(key)?.map(PathBuf::from))
    }
}

fn strip_quotes(v: &str) -> &str {
    for q in ['"', '\''] {
        if v.len() >= 2 && v.starts_with(q) && v.ends_with(q) {
            return &v[1..v.len() - 1];
        }
    }
    v
}

/// Noise model from a one-line spec: `standard`, `steep_shoulder`,
/// `gaussian:MEAN:VAR` or `mixture:W:MEAN:VAR,W:MEAN:VAR,...`.
pub fn parse_noise_spec(text: &str) -> Result<NoiseModel> {
    let text = text.trim();
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    let model = match kind {
        "standard" if rest.is_empty() => Ok(NoiseModel::standard()),
        "steep_shoulder" if rest.is_empty() => Ok(NoiseModel::steep_shoulder_mixture()),
        "gaussian" => {
            let parts: Vec<f64> = rest
                .split(':')
                .map(|p| p.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| config_err(format!("noise `{text}` must be gaussian:MEAN:VAR")))?;
            match parts[..] {
                [mean, var] => NoiseModel::gaussian(mean, var),
                _ => return Err(config_err(format!("noise `{text}` must be gaussian:MEAN:VAR"))),
            }
        }
        "mixture" => NoiseModel::mixture(rest.split(',').map(parse_component).collect::<Result<_>>()?),
        _ => return Err(config_err(format!("unknown noise spec `{text}`"))),
    };
    model.map_err(|e| config_err(e.to_string()))
}

fn parse_component(text: &str) -> Result<Component> {
    let parts: Vec<&str> = text.trim().split(':').map(str::trim).collect();
    let bad = || config_err(format!("mixture component `{text}` must be weight:mean:var"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts.iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    Ok(Component::new(nums[0], nums[1], nums[2]))
}

/// Worker count: `QRLAB_THREADS` when set, else the configured value.
pub fn resolve_parallelism(configured: usize) -> Result<usize> {
    let n = match std::env::var("QRLAB_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| config_err(format!("QRLAB_THREADS must be a positive integer, got `{v}`")))?,
        Err(_) => configured,
    };
    if n == 0 {
        return Err(config_err("parallelism must be at least 1"));
    }
    Ok(n)
}
