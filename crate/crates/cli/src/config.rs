//! Flat `key = value` configuration files for `localize`.
//!
//! ```text
//! # comments and blank lines are ignored
//! n_t = 50
//! n_r = 32
//! selection = two_stage
//! ```
//!
//! Keys mirror the fields of [`LocalizerConfig`]. When gravity is known and
//! the file does not set `n_r`, the gravity-known rotation count is used.

use omniloc::initializer::Selection;
use omniloc::LocalizerConfig;

use crate::CliError;

/// Parsed overrides; `None` keeps the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub n_t: Option<usize>,
    pub n_r: Option<usize>,
    pub n_iter: Option<usize>,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub alpha0: Option<f64>,
    pub gravity_known: Option<bool>,
    pub seed: Option<u64>,
    pub decay_factor: Option<f64>,
    pub patience: Option<usize>,
    pub selection: Option<Selection>,
}

fn value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Input(format!("config line {line}: bad value '{raw}' for '{key}'")))
}

pub fn parse_config(text: &str) -> Result<ConfigOverrides, CliError> {
    let mut out = ConfigOverrides::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, val)) = line.split_once('=') else {
            return Err(CliError::Input(format!("config line {line_no}: expected 'key = value'")));
        };
        let (key, val) = (key.trim(), val.trim());
        match key {
            "n_t" => out.n_t = Some(value(line_no, key, val)?),
            "n_r" => out.n_r = Some(value(line_no, key, val)?),
            "n_iter" => out.n_iter = Some(value(line_no, key, val)?),
            "k1" => out.k1 = Some(value(line_no, key, val)?),
            "k2" => out.k2 = Some(value(line_no, key, val)?),
            "alpha0" => out.alpha0 = Some(value(line_no, key, val)?),
            "gravity_known" => out.gravity_known = Some(value(line_no, key, val)?),
            "seed" => out.seed = Some(value(line_no, key, val)?),
            "decay_factor" => out.decay_factor = Some(value(line_no, key, val)?),
            "patience" => out.patience = Some(value(line_no, key, val)?),
            "selection" => {
                out.selection = Some(match val {
                    "two_stage" => Selection::TwoStage,
                    "loss_only" => Selection::LossOnly,
                    _ => return Err(CliError::Input(format!("config line {line_no}: unknown selection '{val}'"))),
                })
            }
            _ => return Err(CliError::Input(format!("config line {line_no}: unknown key '{key}'"))),
        }
    }
    Ok(out)
}

/// Layers defaults, the file, and command-line flags (in that order).
pub fn resolve_config(file: &ConfigOverrides, gravity_flag: bool, seed_flag: Option<u64>) -> Result<LocalizerConfig, CliError> {
    let gravity = gravity_flag || file.gravity_known.unwrap_or(false);
    let base = if gravity {
        LocalizerConfig::gravity_known()
    } else {
        LocalizerConfig::default()
    };
    let config = LocalizerConfig {
        n_t: file.n_t.unwrap_or(base.n_t),
        n_r: file.n_r.unwrap_or(base.n_r),
        n_iter: file.n_iter.unwrap_or(base.n_iter),
        k1: file.k1.unwrap_or(base.k1),
        k2: file.k2.unwrap_or(base.k2),
        alpha0: file.alpha0.unwrap_or(base.alpha0),
        gravity_known: gravity,
        seed: seed_flag.or(file.seed).unwrap_or(base.seed),
        decay_factor: file.decay_factor.unwrap_or(base.decay_factor),
        patience: file.patience.unwrap_or(base.patience),
        selection: file.selection.unwrap_or(base.selection),
    };
    config
        .validate()
        .map_err(|e| CliError::Input(format!("config: {e}")))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_without_file() {
        let c = resolve_config(&ConfigOverrides::default(), false, None).unwrap();
        assert_eq!(c, LocalizerConfig::default());
    }

    #[test]
    fn gravity_flag_sets_eight_rotations() {
        let c = resolve_config(&ConfigOverrides::default(), true, None).unwrap();
        assert_eq!((c.n_r, c.n_t, c.gravity_known), (8, 50, true));
    }

    #[test]
    fn file_values_and_flag_precedence() {
        let file = parse_config("# tuned\nn_t = 12\nn_r=4 # inline\nk1 = 20\n\nseed = 3\nselection = loss_only\n").unwrap();
        let c = resolve_config(&file, true, Some(9)).unwrap();
        assert_eq!((c.n_t, c.n_r, c.seed, c.selection), (12, 4, 9, Selection::LossOnly));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_config("n_t = 3\nbogus = 1\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("bogus"), "{e}");
        let e = parse_config("k1 = many\n").unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("many"), "{e}");
        let e = parse_config("just words\n").unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn invalid_combination_is_rejected() {
        let file = parse_config("k1 = 2\nk2 = 5\n").unwrap();
        assert!(resolve_config(&file, false, None).is_err());
    }
}
