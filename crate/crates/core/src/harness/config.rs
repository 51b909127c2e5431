//! Experiment configuration: a flat `key = value` file plus overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{MofoError, Result};
use crate::optimizers::{HyperParams, LrSchedule, OptimizerKind};
use crate::problems::{Example1Problem, Example1Spec, MlpSpec, Problem, TwoTaskConfig, TwoTaskProblem};
use crate::regularizers::RegKind;

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemConfig {
    Example1 { a: Vec<f64>, b: Vec<f64> },
    TwoTask(TwoTaskConfig),
}

impl ProblemConfig {
    pub fn build(&self, seed: u64) -> Result<Box<dyn Problem>> {
        Ok(match self {
            ProblemConfig::Example1 { a, b } => {
                Box::new(Example1Problem::new(Example1Spec::new(a.clone(), b.clone())?)?)
            }
            ProblemConfig::TwoTask(cfg) => Box::new(TwoTaskProblem::new(cfg.clone(), seed)?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProblemConfig::Example1 { .. } => "example1",
            ProblemConfig::TwoTask(_) => "two-task-mlp",
        }
    }
}

/// Hyperparameter swept by a grid run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridParam {
    Alpha,
    Lambda,
}

impl GridParam {
    pub fn name(&self) -> &'static str {
        match self {
            GridParam::Alpha => "alpha",
            GridParam::Lambda => "lambda",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub optimizer: OptimizerKind,
    pub hyper: HyperParams,
    pub reg_kind: RegKind,
    pub reg_lambda: f64,
    pub steps: u64,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub grid: Option<(GridParam, Vec<f64>)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemConfig::Example1 {
                a: vec![1.0, 1.0],
                b: vec![1.0, 1.0],
            },
            optimizer: OptimizerKind::Mofo,
            hyper: HyperParams::default(),
            reg_kind: RegKind::None,
            reg_lambda: 0.0,
            steps: 1000,
            seed: 0,
            out_dir: None,
            grid: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(MofoError::Config("steps must be >= 1".into()));
        }
        self.hyper
            .validate()
            .map_err(|e| MofoError::Config(e.to_string()))?;
        if !(self.reg_lambda.is_finite() && self.reg_lambda >= 0.0) {
            return Err(MofoError::Config(format!(
                "reg_lambda {} must be >= 0",
                self.reg_lambda
            )));
        }
        if let Some((_, values)) = &self.grid {
            validate_grid(values)?;
        }
        Ok(())
    }

    /// Applies `key = value` settings on top of `self`.
    pub fn apply(&mut self, settings: &BTreeMap<String, String>) -> Result<()> {
        let mut a: Option<Vec<f64>> = None;
        let mut b: Option<Vec<f64>> = None;
        let mut dim: Option<usize> = None;
        let mut lr_value: Option<f64> = None;
        let mut lr_kind: Option<String> = None;
        // The problem key resets problem-specific settings, so it goes first.
        let ordered = settings
            .iter()
            .filter(|(k, _)| k.as_str() == "problem")
            .chain(settings.iter().filter(|(k, _)| k.as_str() != "problem"));
        for (key, raw) in ordered {
            let value = raw.trim();
            match key.as_str() {
                "problem" => {
                    self.problem = match value {
                        "example1" => ProblemConfig::Example1 {
                            a: vec![1.0, 1.0],
                            b: vec![1.0, 1.0],
                        },
                        "two-task-mlp" | "mlp" => ProblemConfig::TwoTask(TwoTaskConfig::default()),
                        other => return Err(MofoError::Config(format!("unknown problem `{other}`"))),
                    }
                }
                "optimizer" => self.optimizer = value.parse()?,
                "steps" => self.steps = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                "out" | "out_dir" => self.out_dir = Some(PathBuf::from(value)),
                "alpha" => self.hyper.alpha_pct = parse(key, value)?,
                "beta1" => self.hyper.beta1 = parse(key, value)?,
                "beta2" => self.hyper.beta2 = parse(key, value)?,
                "epsilon" => self.hyper.epsilon = parse(key, value)?,
                "ratio_epsilon" => self.hyper.ratio_epsilon = parse(key, value)?,
                "lion_beta1" => self.hyper.lion_beta1 = parse(key, value)?,
                "lion_beta2" => self.hyper.lion_beta2 = parse(key, value)?,
                "lion_weight_decay" => self.hyper.lion_weight_decay = parse(key, value)?,
                "lr" => lr_value = Some(parse(key, value)?),
                "lr_schedule" => lr_kind = Some(value.to_ascii_lowercase()),
                "theory_mode" => self.hyper.theory_mode = parse_bool(key, value)?,
                "reg" => self.reg_kind = value.parse()?,
                "reg_lambda" => self.reg_lambda = parse(key, value)?,
                "alpha_grid" => self.grid = Some((GridParam::Alpha, parse_list(key, value)?)),
                "lambda_grid" => self.grid = Some((GridParam::Lambda, parse_list(key, value)?)),
                "a" => a = Some(parse_list(key, value)?),
                "b" => b = Some(parse_list(key, value)?),
                "dim" => dim = Some(parse(key, value)?),
                "task_shift" | "n_per_task" | "batch_size" | "hidden" | "pretrain_lr"
                | "pretrain_threshold" | "pretrain_max_steps" | "init_scale" | "task_shift_fraction"
                | "task_b_low" | "task_b_high" | "task_b_noise" => {
                    let ProblemConfig::TwoTask(cfg) = &mut self.problem else {
                        return Err(MofoError::Config(format!("`{key}` requires problem = two-task-mlp")));
                    };
                    match key.as_str() {
                        "task_shift" => cfg.task_shift = parse(key, value)?,
                        "n_per_task" => cfg.n_per_task = parse(key, value)?,
                        "batch_size" => {
                            cfg.batch_size = match value {
                                "full" | "none" | "0" => None,
                                v => Some(parse(key, v)?),
                            }
                        }
                        "hidden" => cfg.student = MlpSpec::new(cfg.student.input, parse(key, value)?, cfg.student.output)?,
                        "pretrain_lr" => cfg.pretrain_lr = parse(key, value)?,
                        "pretrain_threshold" => cfg.pretrain_threshold = parse(key, value)?,
                        "pretrain_max_steps" => cfg.pretrain_max_steps = parse(key, value)?,
                        "task_shift_fraction" => cfg.task_shift_fraction = parse(key, value)?,
                        "task_b_low" => cfg.task_b_inputs.0 = parse(key, value)?,
                        "task_b_high" => cfg.task_b_inputs.1 = parse(key, value)?,
                        "task_b_noise" => cfg.task_b_noise = parse(key, value)?,
                        _ => cfg.init_scale = parse(key, value)?,
                    }
                }
                other => return Err(MofoError::Config(format!("unknown key `{other}`"))),
            }
        }
        if a.is_some() || b.is_some() || dim.is_some() {
            let ProblemConfig::Example1 { a: cur_a, b: cur_b } = &mut self.problem else {
                return Err(MofoError::Config("`a`, `b`, `dim` require problem = example1".into()));
            };
            if let Some(d) = dim {
                *cur_a = vec![1.0; d];
                *cur_b = vec![1.0; d];
            }
            if let Some(a) = a {
                *cur_a = a;
            }
            if let Some(b) = b {
                *cur_b = b;
            }
        }
        if lr_value.is_some() || lr_kind.is_some() {
            let eta = lr_value.unwrap_or(self.hyper.lr.base());
            let inverse = match lr_kind.as_deref() {
                None => self.hyper.lr.is_inverse_sqrt(),
                Some("constant") => false,
                Some("inverse_sqrt") | Some("inverse-sqrt") => true,
                Some(other) => return Err(MofoError::Config(format!("unknown lr_schedule `{other}`"))),
            };
            self.hyper.lr = if inverse {
                LrSchedule::InverseSqrt(eta)
            } else {
                LrSchedule::Constant(eta)
            };
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MofoError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        cfg.apply(&parse_kv(&text)?)?;
        Ok(cfg)
    }
}

/// Grid values must be non-empty, finite and distinct.
pub fn validate_grid(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(MofoError::Config("grid is empty".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(MofoError::Config("grid values must be finite".into()));
    }
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(MofoError::Config(format!("duplicate grid value {}", w[0])));
    }
    Ok(())
}

/// Parses `key = value` lines. `#` and `;` start comments; `[section]`
/// headers are accepted and ignored. Later keys override earlier ones.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(MofoError::Config(format!(
                "line {}: expected `key = value`",
                lineno + 1
            )));
        };
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        if key.is_empty() {
            return Err(MofoError::Config(format!("line {}: empty key", lineno + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| MofoError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(MofoError::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flat_file() {
        let text = "\
# comment
[run]
problem = example1
optimizer = adam   ; trailing comment
a = 1, 2, 1
b = 2,1,3
steps = 50
lr = 0.01
lr_schedule = inverse_sqrt
theory_mode = true
epsilon = 0
";
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&parse_kv(text).unwrap()).unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.steps, 50);
        assert_eq!(cfg.hyper.lr, LrSchedule::InverseSqrt(0.01));
        assert_eq!(
            cfg.problem,
            ProblemConfig::Example1 { a: vec![1.0, 2.0, 1.0], b: vec![2.0, 1.0, 3.0] }
        );
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_kv("no equals sign").is_err());
        let mut cfg = ExperimentConfig::default();
        let bad = parse_kv("steps = many").unwrap();
        assert!(matches!(cfg.apply(&bad), Err(MofoError::Config(_))));
        let unknown = parse_kv("colour = blue").unwrap();
        assert!(cfg.apply(&unknown).is_err());
        let mlp_key_on_example = parse_kv("task_shift = 1").unwrap();
        assert!(cfg.apply(&mlp_key_on_example).is_err());
    }

    #[test]
    fn problem_key_applies_before_its_settings() {
        let mut cfg = ExperimentConfig::default();
        let text = "n_per_task = 12\ntask_b_low = 0.5\nproblem = two-task-mlp\n";
        cfg.apply(&parse_kv(text).unwrap()).unwrap();
        let ProblemConfig::TwoTask(tc) = &cfg.problem else { panic!("expected two-task") };
        assert_eq!(tc.n_per_task, 12);
        assert_eq!(tc.task_b_inputs.0, 0.5);
    }

    #[test]
    fn zero_steps_is_a_config_error() {
        let cfg = ExperimentConfig { steps: 0, ..ExperimentConfig::default() };
        assert!(matches!(cfg.validate(), Err(MofoError::Config(_))));
    }

    #[test]
    fn theory_mode_is_validated() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&parse_kv("theory_mode = true").unwrap()).unwrap();
        // Default epsilon is nonzero.
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[5.0, 10.0]).is_ok());
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[5.0, 10.0, 5.0]).is_err());
    }
}
