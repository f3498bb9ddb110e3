//! Run-config files.
//!
//! A config is TOML with optional `[world]`, `[policy]` and `[train]` tables.
//! Every key has a default, so an empty file describes the reference
//! navigation task. Unknown keys are rejected with their line and column.

use std::fs;
use std::path::Path;

use safepg::RunConfig;

use crate::error::{CliError, CliResult};

pub fn parse_config(text: &str, origin: &str) -> CliResult<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    config.validate().map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> CliResult<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, &path.display().to_string())
}

/// Serializes a config so that [`parse_config`] returns it unchanged.
pub fn render_config(config: &RunConfig) -> CliResult<String> {
    toml::to_string(config).map_err(|e| CliError::Config(format!("cannot render config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(parse_config("", "t").unwrap(), RunConfig::default());
        assert_eq!(parse_config("[world]\n[policy]\n[train]\n", "t").unwrap(), RunConfig::default());
    }

    #[test]
    fn render_reparses_identically() {
        let mut c = RunConfig::default();
        c.train.lambda = 0.5;
        c.train.delta = Some(0.1);
        c.world.obstacles.truncate(2);
        let text = render_config(&c).unwrap();
        let back = parse_config(&text, "echo").unwrap();
        assert_eq!(back, c);
        assert_eq!(render_config(&back).unwrap(), text);
    }

    #[test]
    fn unknown_key_names_line_and_field() {
        let err = parse_config("[train]\nlambda = 6.0\nlamda = 2.0\n", "run.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("run.toml"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("lamda"), "{msg}");
    }

    #[test]
    fn type_error_names_line() {
        let msg = parse_config("[train]\n\nstep_size = \"big\"\n", "x").unwrap_err().to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("step_size") || msg.contains("f64"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = parse_config("[train]\nstep_size = -1.0\n", "x").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("step_size"));
        let err = parse_config("[world]\nstart = [7.0, 7.0]\n", "x").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = parse_config("[train]\nlambda = 14.0\n[policy.lattice]\nnx = 5\n", "x");
        let c = c.unwrap();
        assert_eq!(c.train.lambda, 14.0);
        assert_eq!(c.train.step_size, 0.002);
        assert_eq!(c.policy.lattice.nx, 5);
        assert_eq!(c.policy.lattice.ny, 41);
    }
}
