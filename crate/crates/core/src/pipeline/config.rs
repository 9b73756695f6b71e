use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::coefficients::TaskPreset;
use crate::error::{Error, Result};
use crate::graph::{SplitSpec, Stage};
use crate::trainer::{ScoreFn, TrainConfig};

/// Which stages make up the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Pre-train on user-mediated blocks, then fine-tune on group-item blocks.
    #[default]
    Extre,
    /// Pre-training only; ranking uses the pre-trained table.
    ExtreP,
    /// Fine-tuning only, from a random start and without concatenation.
    ExtreF,
    /// Group-item blocks first, user-mediated blocks second.
    ExtreR,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Extre => "EXTRE",
            Variant::ExtreP => "EXTRE_P",
            Variant::ExtreF => "EXTRE_F",
            Variant::ExtreR => "EXTRE_R",
        }
    }

    /// Block stage trained by the `pretrain` command, if any.
    pub fn first_stage(self) -> Option<Stage> {
        match self {
            Variant::Extre | Variant::ExtreP => Some(Stage::Pretrain),
            Variant::ExtreR => Some(Stage::Finetune),
            Variant::ExtreF => None,
        }
    }

    /// Block stage trained by the `finetune` command, if any.
    pub fn second_stage(self) -> Option<Stage> {
        match self {
            Variant::Extre | Variant::ExtreF => Some(Stage::Finetune),
            Variant::ExtreR => Some(Stage::Pretrain),
            Variant::ExtreP => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "EXTRE" => Ok(Variant::Extre),
            "EXTRE_P" | "P" => Ok(Variant::ExtreP),
            "EXTRE_F" | "F" => Ok(Variant::ExtreF),
            "EXTRE_R" | "R" => Ok(Variant::ExtreR),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected EXTRE, EXTRE_P, EXTRE_F or EXTRE_R)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSettings {
    pub train: TrainConfig<f64>,
    /// Early-stop on validation Recall when validation edges exist.
    pub validate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub z: PathBuf,
    pub x: PathBuf,
    pub y: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub preset: TaskPreset,
    pub split: SplitSpec,
    split_seed: Option<u64>,
    pub pretrain: StageSettings,
    pub finetune: StageSettings,
    pub ks: Vec<usize>,
    pub valid_k: usize,
    pub mask: bool,
    pub score: ScoreFn,
    pub entropy_base: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.to_owned())
            } else {
                Error::io(path, e)
            }
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    /// Parses `key = value` lines grouped under `[run]`, `[data]`, `[split]`,
    /// `[pretrain]`, `[finetune]` and `[eval]`. Relative paths resolve
    /// against `base`.
    pub fn parse(text: &str, source_name: &str, base: &Path) -> Result<Self> {
        let mut b = Builder::default();
        let mut section = String::from("run");
        for (lineno, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                source_name: source_name.to_owned(),
                line: lineno + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_ascii_lowercase();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(err(format!("unknown section [{section}]")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            b.set(&section, key.trim(), value.trim(), base).map_err(|e| match e {
                Error::Config(msg) => err(msg),
                other => other,
            })?;
        }
        b.finish()
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, variant: Option<Variant>, no_mask: bool) -> Result<Self> {
        if let Some(seed) = seed {
            self.seed = seed;
            if self.split_seed.is_none() {
                self.split.seed = seed;
            }
        }
        if let Some(v) = variant {
            self.variant = v;
        }
        if no_mask {
            self.mask = false;
        }
        Ok(self)
    }

    pub fn stage(&self, stage: Stage) -> &StageSettings {
        match stage {
            Stage::Pretrain => &self.pretrain,
            Stage::Finetune => &self.finetune,
        }
    }
}

const SECTIONS: [&str; 6] = ["run", "data", "split", "pretrain", "finetune", "eval"];

struct Builder {
    z: Option<PathBuf>,
    x: Option<PathBuf>,
    y: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    preset: TaskPreset,
    ratios: (f64, f64, f64),
    split_seed: Option<u64>,
    pretrain: StageSettings,
    finetune: StageSettings,
    ks: Vec<usize>,
    valid_k: usize,
    mask: bool,
    score: ScoreFn,
    entropy_base: f64,
    seed: u64,
    variant: Variant,
}

impl Default for Builder {
    fn default() -> Self {
        let d = SplitSpec::default();
        Builder {
            z: None,
            x: None,
            y: None,
            out_dir: None,
            preset: TaskPreset::Group,
            ratios: (d.train(), d.valid(), d.test()),
            split_seed: None,
            pretrain: StageSettings {
                train: TrainConfig::default(),
                validate: false,
            },
            finetune: StageSettings {
                train: TrainConfig::default(),
                validate: true,
            },
            ks: vec![10, 20, 30],
            valid_k: 20,
            mask: true,
            score: ScoreFn::Cosine,
            entropy_base: 2.0,
            seed: 0,
            variant: Variant::Extre,
        }
    }
}

fn num<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = Path::new(value);
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}

impl Builder {
    fn set(&mut self, section: &str, key: &str, value: &str, base: &Path) -> Result<()> {
        let unknown = || Err(Error::Config(format!("unknown key {key:?} in [{section}]")));
        match section {
            "run" => match key {
                "seed" => self.seed = num(key, value)?,
                "variant" => self.variant = value.parse()?,
                _ => return unknown(),
            },
            "data" => match key {
                "z" | "group_user" => self.z = Some(resolve(base, value)),
                "x" | "user_item" => self.x = Some(resolve(base, value)),
                "y" | "group_item" => self.y = Some(resolve(base, value)),
                "out" | "out_dir" => self.out_dir = Some(resolve(base, value)),
                "preset" | "task" => self.preset = TaskPreset::parse(value)?,
                _ => return unknown(),
            },
            "split" => match key {
                "train" => self.ratios.0 = num(key, value)?,
                "valid" => self.ratios.1 = num(key, value)?,
                "test" => self.ratios.2 = num(key, value)?,
                "seed" => self.split_seed = Some(num(key, value)?),
                _ => return unknown(),
            },
            "pretrain" | "finetune" => {
                let s = if section == "pretrain" {
                    &mut self.pretrain
                } else {
                    &mut self.finetune
                };
                let t = &mut s.train;
                match key {
                    "dim" => t.dim = num(key, value)?,
                    "lr" => t.lr = num(key, value)?,
                    "tau" => t.tau = num(key, value)?,
                    "loss" => t.loss_variant = value.parse()?,
                    "alpha_mode" => t.alpha_mode = value.parse()?,
                    "batch_size" => t.batch_size = num(key, value)?,
                    "negatives" => t.negative_pool = value.parse()?,
                    "patience" => t.patience = num(key, value)?,
                    "max_epochs" => t.max_epochs = num(key, value)?,
                    "validate" => s.validate = boolean(key, value)?,
                    _ => return unknown(),
                }
            }
            "eval" => match key {
                "k" | "ks" => {
                    self.ks = value
                        .split(',')
                        .map(|k| num::<usize>(key, k.trim()))
                        .collect::<Result<_>>()?;
                }
                "valid_k" => self.valid_k = num(key, value)?,
                "mask" => self.mask = boolean(key, value)?,
                "score" => {
                    self.score = match value.to_ascii_lowercase().as_str() {
                        "cosine" => ScoreFn::Cosine,
                        "dot" => ScoreFn::Dot,
                        _ => return Err(Error::Config(format!("score: expected cosine or dot, got {value:?}"))),
                    }
                }
                "entropy_base" => self.entropy_base = num(key, value)?,
                _ => return unknown(),
            },
            _ => return unknown(),
        }
        Ok(())
    }

    fn finish(self) -> Result<PipelineConfig> {
        let z = self.z.ok_or_else(|| Error::Config("[data] z is required".into()))?;
        let x = self.x.ok_or_else(|| Error::Config("[data] x is required".into()))?;
        let (tr, va, te) = self.ratios;
        let split = SplitSpec::new(tr, va, te, self.split_seed.unwrap_or(self.seed))?;
        if self.ks.is_empty() || self.ks.contains(&0) || self.valid_k == 0 {
            return Err(Error::Config("K values must be positive".into()));
        }
        if self.entropy_base.is_nan() || self.entropy_base <= 1.0 {
            return Err(Error::Config("entropy_base must exceed 1".into()));
        }
        self.pretrain.train.validate()?;
        self.finetune.train.validate()?;
        Ok(PipelineConfig {
            out_dir: self.out_dir.unwrap_or_else(|| z.parent().unwrap_or(Path::new(".")).join("out")),
            z,
            x,
            y: self.y,
            preset: self.preset,
            split,
            split_seed: self.split_seed,
            pretrain: self.pretrain,
            finetune: self.finetune,
            ks: self.ks,
            valid_k: self.valid_k,
            mask: self.mask,
            score: self.score,
            entropy_base: self.entropy_base,
            seed: self.seed,
            variant: self.variant,
        })
    }
}
