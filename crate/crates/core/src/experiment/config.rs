//! Flat `key = value` experiment files.
//!
//! One setting per line. Blank lines and lines starting with `#` are
//! ignored, keys left out take their defaults, and an empty value means
//! "none" for optional settings or an empty list for list settings.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `dataset` | `toy` | `toy` or a dataset path |
//! | `dataset_format` | `idx-like` | `idx-like` or `image-dir` |
//! | `test_dataset` | none | held-out dataset in the same format |
//! | `val_fraction` | `0.2` | share of the training data held out for validation |
//! | `toy_classes`, `toy_per_class`, `toy_channels`, `toy_size`, `toy_noise` | `10`, `50`, `3`, `32`, `24` | toy corpus shape |
//! | `version` | `v1` | `v1` .. `v4` |
//! | `structure` | `alpha` | `plain`, `residual` or `alpha` |
//! | `desk_scale` | `16` | divides the weighted-layer budget |
//! | `width` | `8` | channels of the first stage |
//! | `p_extra` | `0.5` | probability of each optional edge |
//! | `downsample_stride` | `2` | stride at stage transitions |
//! | `kernel_pair` | `5,10` | kernels of the combined convolution |
//! | `downsampling` | `pool` | `pool` or `stride` |
//! | `aux_heads` | `true` | auxiliary classifiers |
//! | `normalization` | `zscore` | `log`, `zscore` or `alpha` |
//! | `augment` | `none` | `none`, `desk` or `desk_pca` |
//! | `loss` | `am_softmax_linear` | `softmax`, `am_softmax` or `am_softmax_linear` |
//! | `loss_s`, `loss_m`, `loss_a`, `loss_c` | `30`, `0.35`, `-30`, `0` | loss constants |
//! | `loss_linear_mode` | `calibrated` | `calibrated` or `fixed` |
//! | `seed` | `0` | root of every random stream |
//! | `lr0`, `momentum`, `weight_decay` | `0.01`, `0.9`, `0.0001` | optimiser |
//! | `batch_size`, `accumulation`, `max_epochs` | `128`, `1`, `30` | loop |
//! | `plateau_epsilon`, `plateau_patience`, `plateau_max_reductions` | `0.001`, `5`, `3` | schedule |
//! | `lambda_aux` | `0.3` | auxiliary loss weight |
//! | `target_train_top1` | none | stop early at this train Top-1 (fraction) |
//! | `precision` | `f32` | `f32` or `f64` |
//! | `eval_mode` | `single` | `single`, `ten_crop:<n>` or `multi_scale:<a>/<b>/...` |
//! | `reference_table` | `table1` | `none`, `table1` .. `table4` |
//! | `sweep` | none | `layer_structure`, `loss`, `normalization` or `architecture` |
//! | `sweep_versions` | `v1,v2,v3,v4` | grid rows |
//! | `sweep_variants` | all | grid columns |
//! | `out` | `runs` | output directory |

use std::fmt::{self, Display};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DataFormat, ToySpec};
use crate::encode::Normalization;
use crate::error::{Error, Result};
use crate::layers::HeadKind;
use crate::losses::{LinearMode, LossKind};
use crate::net::{Downsampling, NetOptions, Structure, Version};
use crate::train::{EvalMode, TrainConfig};

/// Where training images come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// The generated corpus described by the `toy_*` keys.
    Toy,
    Path(PathBuf),
}

/// Training-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    None,
    /// Scale jitter, crop, flip and per-channel colour noise.
    Desk,
    /// As `Desk`, with colour noise along the training data's principal
    /// colour axes.
    DeskPca,
}

/// Reference numbers attached to result rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceTable {
    None,
    /// Version by layer structure.
    Table1,
    /// Version by loss.
    Table2,
    /// Version by normalization.
    Table3,
    /// Alpha-Net versions against published architectures.
    Table4,
}

/// Axis varied by a sweep; every sweep also varies the version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    LayerStructure,
    Loss,
    Normalization,
    Architecture,
}

macro_rules! text_enum {
    ($ty:ident, $what:literal, { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " `{}` (expected one of: {})"),
                        other,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

text_enum!(AugmentMode, "augment mode", { None => "none", Desk => "desk", DeskPca => "desk_pca" });
text_enum!(ReferenceTable, "reference table", {
    None => "none", Table1 => "table1", Table2 => "table2", Table3 => "table3", Table4 => "table4",
});
text_enum!(SweepKind, "sweep kind", {
    LayerStructure => "layer_structure",
    Loss => "loss",
    Normalization => "normalization",
    Architecture => "architecture",
});

impl SweepKind {
    /// Column values of the grid, in table order.
    pub fn all_variants(self) -> Vec<String> {
        match self {
            SweepKind::LayerStructure | SweepKind::Architecture => {
                Structure::ALL.iter().map(|s| s.to_string()).collect()
            }
            SweepKind::Loss => LossKind::ALL.iter().map(|l| l.to_string()).collect(),
            SweepKind::Normalization => Normalization::ALL.iter().map(|n| n.to_string()).collect(),
        }
    }

    /// Variants a sweep runs when none are listed.
    pub fn default_variants(self) -> Vec<String> {
        match self {
            SweepKind::Architecture => vec![Structure::Alpha.to_string()],
            k => k.all_variants(),
        }
    }

    pub fn reference_table(self) -> ReferenceTable {
        match self {
            SweepKind::LayerStructure => ReferenceTable::Table1,
            SweepKind::Loss => ReferenceTable::Table2,
            SweepKind::Normalization => ReferenceTable::Table3,
            SweepKind::Architecture => ReferenceTable::Table4,
        }
    }
}

/// Grid settings, used by `sweep` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub kind: Option<SweepKind>,
    pub versions: Vec<Version>,
    /// Empty means the kind's default columns.
    pub variants: Vec<String>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            kind: None,
            versions: Version::ALL.to_vec(),
            variants: Vec::new(),
        }
    }
}

/// Everything one run needs. See the module docs for the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub dataset_format: DataFormat,
    pub test_dataset: Option<PathBuf>,
    pub val_fraction: f64,
    pub toy: ToySpec,
    pub version: Version,
    pub structure: Structure,
    pub desk_scale: usize,
    pub width: usize,
    pub p_extra: f64,
    pub downsample_stride: usize,
    pub kernel_pair: (usize, usize),
    pub downsampling: Downsampling,
    pub aux_heads: bool,
    pub normalization: Normalization,
    pub augment: AugmentMode,
    /// Optimiser, loop and loss settings. `train.seed` seeds everything.
    pub train: TrainConfig,
    pub eval_mode: EvalMode,
    pub reference_table: ReferenceTable,
    pub sweep: SweepGrid,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let net = NetOptions::default();
        ExperimentConfig {
            dataset: DatasetSource::Toy,
            dataset_format: DataFormat::IdxLike,
            test_dataset: None,
            val_fraction: 0.2,
            toy: ToySpec::default(),
            version: Version::V1,
            structure: Structure::Alpha,
            desk_scale: 16,
            width: net.width,
            p_extra: net.p_extra,
            downsample_stride: net.downsample_stride,
            kernel_pair: net.kernel_pair,
            downsampling: net.downsampling,
            aux_heads: net.aux_heads,
            normalization: Normalization::Zscore,
            augment: AugmentMode::None,
            train: TrainConfig::default(),
            eval_mode: EvalMode::Single,
            reference_table: ReferenceTable::Table1,
            sweep: SweepGrid::default(),
            out: PathBuf::from("runs"),
        }
    }
}

fn list<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Shortest text that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map(|v| v.to_string()).unwrap_or_default()
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// Enum fields keep their own error message, which lists the valid values.
fn parse_enum<T: FromStr<Err = Error>>(value: &str) -> Result<T> {
    value.parse()
}

impl ExperimentConfig {
    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        vec![
            ("dataset", match &self.dataset {
                DatasetSource::Toy => "toy".to_string(),
                DatasetSource::Path(p) => p.display().to_string(),
            }),
            ("dataset_format", self.dataset_format.to_string()),
            ("test_dataset", opt(&self.test_dataset.as_ref().map(|p| p.display()))),
            ("val_fraction", num(self.val_fraction)),
            ("toy_classes", self.toy.classes.to_string()),
            ("toy_per_class", self.toy.per_class.to_string()),
            ("toy_channels", self.toy.channels.to_string()),
            ("toy_size", self.toy.size.to_string()),
            ("toy_noise", num(self.toy.noise)),
            ("version", self.version.to_string()),
            ("structure", self.structure.to_string()),
            ("desk_scale", self.desk_scale.to_string()),
            ("width", self.width.to_string()),
            ("p_extra", num(self.p_extra)),
            ("downsample_stride", self.downsample_stride.to_string()),
            ("kernel_pair", format!("{},{}", self.kernel_pair.0, self.kernel_pair.1)),
            ("downsampling", self.downsampling.to_string()),
            ("aux_heads", self.aux_heads.to_string()),
            ("normalization", self.normalization.to_string()),
            ("augment", self.augment.to_string()),
            ("loss", t.loss.kind.to_string()),
            ("loss_s", num(t.loss.s)),
            ("loss_m", num(t.loss.m)),
            ("loss_a", num(t.loss.a)),
            ("loss_c", num(t.loss.c)),
            ("loss_linear_mode", t.loss.linear_mode.to_string()),
            ("seed", t.seed.to_string()),
            ("lr0", num(t.lr0)),
            ("momentum", num(t.momentum)),
            ("weight_decay", num(t.weight_decay)),
            ("batch_size", t.batch_size.to_string()),
            ("accumulation", t.accumulation.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("plateau_epsilon", num(t.plateau.epsilon)),
            ("plateau_patience", t.plateau.patience.to_string()),
            ("plateau_max_reductions", t.plateau.max_reductions.to_string()),
            ("lambda_aux", num(t.lambda_aux)),
            ("target_train_top1", t.target_train_top1.map(num).unwrap_or_default()),
            ("precision", t.precision.to_string()),
            ("eval_mode", self.eval_mode.to_string()),
            ("reference_table", self.reference_table.to_string()),
            ("sweep", opt(&self.sweep.kind)),
            ("sweep_versions", list(&self.sweep.versions)),
            ("sweep_variants", list(&self.sweep.variants)),
            ("out", self.out.display().to_string()),
        ]
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "dataset" => {
                self.dataset = match value {
                    "toy" => DatasetSource::Toy,
                    "" => return Err(Error::Config("`dataset` needs `toy` or a path".into())),
                    p => DatasetSource::Path(PathBuf::from(p)),
                }
            }
            "dataset_format" => self.dataset_format = parse_enum(value)?,
            "test_dataset" => self.test_dataset = parse_opt(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "toy_classes" => self.toy.classes = parse(key, value)?,
            "toy_per_class" => self.toy.per_class = parse(key, value)?,
            "toy_channels" => self.toy.channels = parse(key, value)?,
            "toy_size" => self.toy.size = parse(key, value)?,
            "toy_noise" => self.toy.noise = parse(key, value)?,
            "version" => self.version = parse_enum(value)?,
            "structure" => self.structure = parse_enum(value)?,
            "desk_scale" => self.desk_scale = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "p_extra" => self.p_extra = parse(key, value)?,
            "downsample_stride" => self.downsample_stride = parse(key, value)?,
            "kernel_pair" => match parse_list::<usize>(key, value)?.as_slice() {
                &[a, b] => self.kernel_pair = (a, b),
                _ => return Err(Error::Config(format!("`kernel_pair` needs two sizes, got `{value}`"))),
            },
            "downsampling" => self.downsampling = parse_enum(value)?,
            "aux_heads" => self.aux_heads = parse(key, value)?,
            "normalization" => self.normalization = parse_enum(value)?,
            "augment" => self.augment = parse_enum(value)?,
            "loss" => t.loss.kind = parse_enum(value)?,
            "loss_s" => t.loss.s = parse(key, value)?,
            "loss_m" => t.loss.m = parse(key, value)?,
            "loss_a" => t.loss.a = parse(key, value)?,
            "loss_c" => t.loss.c = parse(key, value)?,
            "loss_linear_mode" => t.loss.linear_mode = parse_enum::<LinearMode>(value)?,
            "seed" => t.seed = parse(key, value)?,
            "lr0" => t.lr0 = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "accumulation" => t.accumulation = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "plateau_epsilon" => t.plateau.epsilon = parse(key, value)?,
            "plateau_patience" => t.plateau.patience = parse(key, value)?,
            "plateau_max_reductions" => t.plateau.max_reductions = parse(key, value)?,
            "lambda_aux" => t.lambda_aux = parse(key, value)?,
            "target_train_top1" => t.target_train_top1 = parse_opt(key, value)?,
            "precision" => t.precision = parse_enum(value)?,
            "eval_mode" => self.eval_mode = parse_enum(value)?,
            "reference_table" => self.reference_table = parse_enum(value)?,
            "sweep" => {
                self.sweep.kind = if value.is_empty() { None } else { Some(parse_enum(value)?) };
            }
            "sweep_versions" => {
                self.sweep.versions = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|v| parse_enum(v.trim())).collect::<Result<_>>()?
                }
            }
            "sweep_variants" => self.sweep.variants = parse_list(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// The file form: one `key = value` line per setting.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses the file form on top of the defaults, then validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` is set twice", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Network options for inputs with `in_channels` channels. The head
    /// follows the loss: cosine logits for the margin losses.
    pub fn net_options(&self, in_channels: usize) -> NetOptions {
        NetOptions {
            in_channels,
            width: self.width,
            p_extra: self.p_extra,
            downsample_stride: self.downsample_stride,
            kernel_pair: self.kernel_pair,
            downsampling: self.downsampling,
            aux_heads: self.aux_heads,
            head: if self.train.loss.kind.uses_cosine() { HeadKind::Cosine } else { HeadKind::Affine },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.train.validate()?;
        self.version.desk_layers(self.desk_scale)?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        let toy = &self.toy;
        if toy.classes == 0 || toy.per_class == 0 || toy.size == 0 || !matches!(toy.channels, 1 | 3) {
            return bad("toy corpus needs classes, per_class and size > 0 and 1 or 3 channels".into());
        }
        if !(toy.noise.is_finite() && toy.noise >= 0.0) {
            return bad(format!("toy_noise must be non-negative, got {}", toy.noise));
        }
        if self.width == 0 || self.downsample_stride == 0 || self.kernel_pair.0 == 0 || self.kernel_pair.1 == 0 {
            return bad("width, downsample_stride and kernel sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.p_extra) {
            return bad(format!("p_extra must lie in [0, 1], got {}", self.p_extra));
        }
        if let Some(kind) = self.sweep.kind {
            let allowed = kind.all_variants();
            if let Some(v) = self.sweep.variants.iter().find(|v| !allowed.contains(v)) {
                return bad(format!("sweep `{kind}` has no variant `{v}` (expected one of: {})", allowed.join(", ")));
            }
        } else if !self.sweep.variants.is_empty() {
            return bad("`sweep_variants` needs `sweep`".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = ExperimentConfig::parse("# a comment\n\nstructure = plain\nloss=softmax\n").unwrap();
        assert_eq!(cfg.structure, Structure::Plain);
        assert_eq!(cfg.train.loss.kind, LossKind::Softmax);
        for text in ["structure = wide", "colour = red", "seed = -1", "seed 3", "seed = 1\nseed = 2", "desk_scale = 7"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
        let msg = ExperimentConfig::parse("a = 1\nstructure = wide").unwrap_err().to_string();
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn sweep_variants_follow_the_kind() {
        assert!(ExperimentConfig::parse("sweep = loss\nsweep_variants = softmax,am_softmax").is_ok());
        assert!(ExperimentConfig::parse("sweep = loss\nsweep_variants = plain").is_err());
        let empty = ExperimentConfig::parse("sweep = loss\nsweep_versions =").unwrap();
        assert!(empty.sweep.versions.is_empty());
    }
}
