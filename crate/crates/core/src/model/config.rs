//! `key = value` training configuration.

use crate::error::{Result, VrdError};
use crate::model::{parse_arch, LayerKind};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub arch: Vec<LayerKind>,
    pub train_examples: usize,
    pub test_examples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 0.05,
            seed: 7,
            noise_sigma: 1.5,
            height: 64,
            width: 64,
            classes: 2,
            arch: parse_arch("mix:8,vrd:8,relu,mix:2").expect("default arch parses"),
            train_examples: 40,
            test_examples: 10,
        }
    }
}

fn parse_grid(v: &str) -> Option<(usize, usize)> {
    let parse = |s: &str| s.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match v.split_once(['x', 'X']) {
        Some((h, w)) => Some((parse(h)?, parse(w)?)),
        None => parse(v).map(|n| (n, n)),
    }
}

impl TrainConfig {
    /// Parses the config text over the defaults. Blank lines and `#` comments
    /// are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| VrdError::Config { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || err(format!("bad value `{value}` for `{key}`"));
            match key {
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad())?,
                "lr" => {
                    cfg.lr = value.parse().map_err(|_| bad())?;
                    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
                        return Err(bad());
                    }
                }
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "noise_sigma" => {
                    cfg.noise_sigma = value.parse().map_err(|_| bad())?;
                    if !(cfg.noise_sigma >= 0.0) || !cfg.noise_sigma.is_finite() {
                        return Err(bad());
                    }
                }
                "grid" => (cfg.height, cfg.width) = parse_grid(value).ok_or_else(bad)?,
                "classes" => {
                    cfg.classes = value.parse().map_err(|_| bad())?;
                    if cfg.classes < 2 {
                        return Err(bad());
                    }
                }
                "arch" => cfg.arch = parse_arch(value).map_err(|e| err(e.to_string()))?,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_keys() {
        let cfg = TrainConfig::parse(
            "epochs = 3\nlr = 0.2\n# comment\nseed = 11\nnoise_sigma = 0.5\ngrid = 32x16\nclasses = 3\narch = mix:4,relu,mix:3\n",
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 0.2);
        assert_eq!(cfg.seed, 11);
        assert_eq!((cfg.height, cfg.width), (32, 16));
        assert_eq!(cfg.classes, 3);
        assert_eq!(cfg.arch.len(), 3);
        assert_eq!(TrainConfig::parse("grid = 20").unwrap().width, 20);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(matches!(
            TrainConfig::parse("epochs = 2\nbatch = 4"),
            Err(VrdError::Config { line: 2, .. })
        ));
        assert!(TrainConfig::parse("epochs 2").is_err());
        assert!(TrainConfig::parse("lr = fast").is_err());
        assert!(TrainConfig::parse("grid = 0x4").is_err());
        assert!(TrainConfig::parse("arch = mix:2,pool").is_err());
    }
}
