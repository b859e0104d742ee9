//! One training run per value of `k` or `delta_rel`, evaluated on the test split.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::datagen::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, metric};
use crate::train::{check_classes, fit, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    DeltaRel,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::K => "k",
            SweepParam::DeltaRel => "delta_rel",
        }
    }

    /// `config` with this parameter set to `value`, validated.
    pub fn apply(self, config: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = config.clone();
        match self {
            SweepParam::K => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::Config(format!("k must be a positive integer, got {value}")));
                }
                c.k = value as usize;
            }
            SweepParam::DeltaRel => c.delta_rel = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepParam::K),
            "delta-rel" | "delta_rel" => Ok(SweepParam::DeltaRel),
            _ => Err(Error::Config(format!("sweep parameter must be k or delta-rel, got {s:?}"))),
        }
    }
}

pub const HEADER: &str = "param,value,auc,p_at_r90,p_at_r95,top1,macro_f1,config_hash";

/// Trains and evaluates one run per value with the shared seed of `config`;
/// returns the CSV. Each run's checkpoint goes to `<out>/<param>_<value>/`
/// when `out` is given.
pub fn sweep(config: &RunConfig, param: SweepParam, values: &[f64], data_root: &Path, out: Option<&Path>) -> Result<String> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<RunConfig> = values.iter().map(|&v| param.apply(config, v)).collect::<Result<_>>()?;
    let size = config.backbone.image_size;
    let train = Dataset::load(data_root, Split::Train, size)?;
    let test = Dataset::load(data_root, Split::Test, size)?;
    check_classes(config, &train)?;
    let mut csv = format!("{HEADER}\n");
    for (value, cfg) in values.iter().zip(&configs) {
        let run_dir = out.map(|o| o.join(format!("{}_{value}", param.name())));
        let mut trainer = Trainer::new(cfg)?;
        fit(&mut trainer, &train, run_dir.as_deref())?;
        let rows = evaluate(&trainer.model, &test)?;
        let get = |n: &str| metric(&rows, n).unwrap();
        csv.push_str(&format!(
            "{},{value},{},{},{},{},{},{}\n",
            param.name(),
            get("auc"),
            get("p_at_r90"),
            get("p_at_r95"),
            get("top1"),
            get("macro_f1"),
            cfg.hash()
        ));
    }
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        let path = o.join("sweep.csv");
        fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    }
    Ok(csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_validates_values() {
        let c = RunConfig::default();
        assert_eq!(SweepParam::K.apply(&c, 4.0).unwrap().k, 4);
        assert!(SweepParam::K.apply(&c, 1.5).is_err());
        assert!(SweepParam::K.apply(&c, 17.0).is_err());
        assert_eq!(SweepParam::DeltaRel.apply(&c, 0.9).unwrap().delta_rel, 0.9);
        assert!(matches!(SweepParam::DeltaRel.apply(&c, 0.0), Err(Error::Config(_))));
        assert_eq!("delta-rel".parse::<SweepParam>().unwrap(), SweepParam::DeltaRel);
    }
}
