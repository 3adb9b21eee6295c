//! Training configuration and its flat `key = value` file format.
//!
//! ```text
//! # comment lines start with '#'
//! mode = single_image
//! tau = 0.5
//! content_layers = conv4_2, conv5_2
//! templates = a photo of {} | an image of {}
//! ```
//!
//! Keys absent from a file keep the defaults of the file's mode. List values
//! use `,` (layers) and `|` (templates) as separators.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    SingleImage,
    FastTransfer,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SingleImage => "single_image",
            Mode::FastTransfer => "fast_transfer",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "single_image" => Ok(Mode::SingleImage),
            "fast_transfer" => Ok(Mode::FastTransfer),
            other => Err(format!(
                "unknown mode `{other}` (expected single_image or fast_transfer)"
            )),
        }
    }
}

/// Generic paraphrase templates averaged into one text embedding.
pub const DEFAULT_TEMPLATES: [&str; 8] = [
    "a photo of {}",
    "an image of {}",
    "artwork in the style of {}",
    "a painting of {}",
    "a rendering of {}",
    "a picture of {}",
    "a close-up photo of {}",
    "{}",
];

pub const DEFAULT_CONTENT_LAYERS: [&str; 2] = ["conv4_2", "conv5_2"];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda_dir: f64,
    pub lambda_patch: f64,
    pub lambda_content: f64,
    pub lambda_tv: f64,
    /// Weight of the whole-image text-matching term. Zero outside the
    /// `global_only` ablation.
    pub lambda_global: f64,
    pub tau: f64,
    /// Side of the square patches cropped from the output. In fast-transfer
    /// mode this is the crop size of the texture training patches.
    pub patch_size: usize,
    pub num_patches: usize,
    pub iterations: usize,
    pub lr: f64,
    pub lr_decay_step: usize,
    pub lr_decay_factor: f64,
    pub seed: u64,
    pub distortion_scale: f64,
    pub content_layers: Vec<String>,
    /// Texture patches per step (fast-transfer only; 1 in single-image mode).
    pub batch_size: usize,
    /// Augmented views per batch patch (fast-transfer only).
    pub augmentations: usize,
    pub templates: Vec<String>,
}

/// Loss-ablation presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    NoDir,
    NoPatch,
    NoThresh,
    NoAug,
    GlobalOnly,
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "no_dir" => Ok(Ablation::NoDir),
            "no_patch" => Ok(Ablation::NoPatch),
            "no_thresh" => Ok(Ablation::NoThresh),
            "no_aug" => Ok(Ablation::NoAug),
            "global_only" => Ok(Ablation::GlobalOnly),
            other => Err(format!("unknown ablation `{other}`")),
        }
    }
}

impl Ablation {
    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::NoDir => "no_dir",
            Ablation::NoPatch => "no_patch",
            Ablation::NoThresh => "no_thresh",
            Ablation::NoAug => "no_aug",
            Ablation::GlobalOnly => "global_only",
        }
    }

    pub fn apply(self, config: &mut TrainConfig) {
        match self {
            Ablation::NoDir => config.lambda_dir = 0.0,
            Ablation::NoPatch => config.lambda_patch = 0.0,
            // tau = 0 only rejects patches whose loss is exactly zero, which
            // contribute nothing anyway.
            Ablation::NoThresh => config.tau = 0.0,
            Ablation::NoAug => config.distortion_scale = 0.0,
            Ablation::GlobalOnly => {
                config.lambda_global = config.lambda_dir.max(config.lambda_patch);
                config.lambda_dir = 0.0;
                config.lambda_patch = 0.0;
            }
        }
    }
}

pub fn default_config(mode: Mode) -> TrainConfig {
    let common = TrainConfig {
        mode,
        lambda_dir: 500.0,
        lambda_patch: 9000.0,
        lambda_content: 150.0,
        lambda_tv: 2e-3,
        lambda_global: 0.0,
        tau: 0.7,
        patch_size: 128,
        num_patches: 64,
        iterations: 200,
        lr: 5e-4,
        lr_decay_step: 100,
        lr_decay_factor: 0.5,
        seed: 0,
        distortion_scale: 0.5,
        content_layers: DEFAULT_CONTENT_LAYERS.iter().map(|s| s.to_string()).collect(),
        batch_size: 1,
        augmentations: 1,
        templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
    };
    match mode {
        Mode::SingleImage => common,
        Mode::FastTransfer => TrainConfig {
            lambda_dir: 1.0,
            lambda_patch: 10.0,
            lambda_content: 1.0,
            lambda_tv: 1e-4,
            patch_size: 224,
            num_patches: 64,
            lr: 1e-4,
            batch_size: 4,
            augmentations: 16,
            ..common
        },
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (key, value) in [
            ("lambda_dir", self.lambda_dir),
            ("lambda_patch", self.lambda_patch),
            ("lambda_content", self.lambda_content),
            ("lambda_tv", self.lambda_tv),
            ("lambda_global", self.lambda_global),
            ("tau", self.tau),
            ("lr", self.lr),
            ("lr_decay_factor", self.lr_decay_factor),
            ("distortion_scale", self.distortion_scale),
        ] {
            check_value(key, &value.to_string()).map_err(|message| range(None, key, message))?;
        }
        for (key, value) in [
            ("patch_size", self.patch_size),
            ("num_patches", self.num_patches),
            ("iterations", self.iterations),
            ("lr_decay_step", self.lr_decay_step),
            ("batch_size", self.batch_size),
            ("augmentations", self.augmentations),
        ] {
            check_value(key, &value.to_string()).map_err(|message| range(None, key, message))?;
        }
        check_value("content_layers", &self.content_layers.join(","))
            .map_err(|message| range(None, "content_layers", message))?;
        check_value("templates", &self.templates.join("|")).map_err(|message| range(None, "templates", message))?;
        if self.mode == Mode::FastTransfer && self.num_patches != self.batch_size * self.augmentations {
            return Err(range(
                None,
                "num_patches",
                format!(
                    "fast-transfer mode needs num_patches == batch_size * augmentations ({} * {})",
                    self.batch_size, self.augmentations
                ),
            ));
        }
        Ok(())
    }

    /// Checks the run-time constraint that patches fit inside the content.
    pub fn check_content_size(&self, height: usize, width: usize) -> Result<()> {
        if self.patch_size > height.min(width) {
            return Err(range(
                None,
                "patch_size",
                format!(
                    "patch size {} exceeds content size {}x{}",
                    self.patch_size, width, height
                ),
            ));
        }
        Ok(())
    }

    /// Parses config text, filling unspecified keys from the defaults of the
    /// file's `mode` (or `fallback_mode` if the file names none).
    pub fn parse(text: &str, fallback_mode: Mode) -> Result<Self> {
        let entries = split_lines(text)?;
        let mut mode = fallback_mode;
        for (line, key, value) in &entries {
            if *key == "mode" {
                mode = value.parse().map_err(|m| range(Some(*line), "mode", m))?;
            }
        }
        let mut config = default_config(mode);
        for (line, key, value) in entries {
            config.set(line, key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(Error::ConfigUnknownKey {
                line,
                key: key.to_string(),
            });
        }
        check_value(key, value).map_err(|m| range(Some(line), key, m))?;
        // check_value has already proven these parse.
        let float = || value.parse::<f64>().unwrap();
        let int = || value.parse::<usize>().unwrap();
        match key {
            "mode" => self.mode = value.parse().unwrap(),
            "lambda_dir" => self.lambda_dir = float(),
            "lambda_patch" => self.lambda_patch = float(),
            "lambda_content" => self.lambda_content = float(),
            "lambda_tv" => self.lambda_tv = float(),
            "lambda_global" => self.lambda_global = float(),
            "tau" => self.tau = float(),
            "patch_size" => self.patch_size = int(),
            "num_patches" => self.num_patches = int(),
            "iterations" => self.iterations = int(),
            "lr" => self.lr = float(),
            "lr_decay_step" => self.lr_decay_step = int(),
            "lr_decay_factor" => self.lr_decay_factor = float(),
            "seed" => self.seed = value.parse().unwrap(),
            "distortion_scale" => self.distortion_scale = float(),
            "content_layers" => self.content_layers = split_list(value, ','),
            "batch_size" => self.batch_size = int(),
            "augmentations" => self.augmentations = int(),
            "templates" => self.templates = split_list(value, '|'),
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Serializes every field. `parse(to_config_string())` reproduces `self`
    /// exactly, and re-serializing yields identical bytes.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("mode", self.mode.to_string());
        kv("lambda_dir", self.lambda_dir.to_string());
        kv("lambda_patch", self.lambda_patch.to_string());
        kv("lambda_content", self.lambda_content.to_string());
        kv("lambda_tv", self.lambda_tv.to_string());
        kv("lambda_global", self.lambda_global.to_string());
        kv("tau", self.tau.to_string());
        kv("patch_size", self.patch_size.to_string());
        kv("num_patches", self.num_patches.to_string());
        kv("iterations", self.iterations.to_string());
        kv("lr", self.lr.to_string());
        kv("lr_decay_step", self.lr_decay_step.to_string());
        kv("lr_decay_factor", self.lr_decay_factor.to_string());
        kv("seed", self.seed.to_string());
        kv("distortion_scale", self.distortion_scale.to_string());
        kv("content_layers", self.content_layers.join(", "));
        kv("batch_size", self.batch_size.to_string());
        kv("augmentations", self.augmentations.to_string());
        kv("templates", self.templates.join(" | "));
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    load_config_for(path, Mode::SingleImage)
}

pub fn load_config_for(path: impl AsRef<Path>, fallback_mode: Mode) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigIo {
        path: path.to_path_buf(),
        source,
    })?;
    TrainConfig::parse(&text, fallback_mode)
}

const KEYS: [&str; 19] = [
    "mode",
    "lambda_dir",
    "lambda_patch",
    "lambda_content",
    "lambda_tv",
    "lambda_global",
    "tau",
    "patch_size",
    "num_patches",
    "iterations",
    "lr",
    "lr_decay_step",
    "lr_decay_factor",
    "seed",
    "distortion_scale",
    "content_layers",
    "batch_size",
    "augmentations",
    "templates",
];

fn range(line: Option<usize>, key: &str, message: impl Into<String>) -> Error {
    Error::ConfigRange {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn split_lines(text: &str) -> Result<Vec<(usize, &str, &str)>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(Error::ConfigSyntax {
                line,
                message: format!("expected `key = value`, found `{trimmed}`"),
            });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::ConfigSyntax {
                line,
                message: "empty key".into(),
            });
        }
        entries.push((line, key, value.trim()));
    }
    Ok(entries)
}

fn split_list(value: &str, sep: char) -> Vec<String> {
    value
        .split(sep)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Per-key syntax and range rules, shared by the parser and `validate`.
fn check_value(key: &str, value: &str) -> std::result::Result<(), String> {
    let float = || -> std::result::Result<f64, String> {
        let v: f64 = value.parse().map_err(|_| format!("`{value}` is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("`{value}` is not finite"))
        }
    };
    let int = || -> std::result::Result<usize, String> {
        value
            .parse::<usize>()
            .map_err(|_| format!("`{value}` is not a non-negative integer"))
    };
    let at_least = |min: usize| -> std::result::Result<(), String> {
        let v = int()?;
        if v < min {
            Err(format!("must be >= {min}, got {v}"))
        } else {
            Ok(())
        }
    };
    match key {
        "mode" => value.parse::<Mode>().map(|_| ()),
        "lambda_dir" | "lambda_patch" | "lambda_content" | "lambda_tv" | "lambda_global" => {
            let v = float()?;
            if v < 0.0 {
                Err(format!("weights must be >= 0, got {v}"))
            } else {
                Ok(())
            }
        }
        "tau" => {
            let v = float()?;
            if !(0.0..=2.0).contains(&v) {
                Err(format!("must lie in [0, 2], got {v}"))
            } else {
                Ok(())
            }
        }
        "lr" => {
            let v = float()?;
            if v <= 0.0 {
                Err(format!("must be > 0, got {v}"))
            } else {
                Ok(())
            }
        }
        "lr_decay_factor" => {
            let v = float()?;
            if v <= 0.0 || v > 1.0 {
                Err(format!("must lie in (0, 1], got {v}"))
            } else {
                Ok(())
            }
        }
        "distortion_scale" => {
            let v = float()?;
            if !(0.0..=1.0).contains(&v) {
                Err(format!("must lie in [0, 1], got {v}"))
            } else {
                Ok(())
            }
        }
        "patch_size" => at_least(8),
        "num_patches" | "iterations" | "lr_decay_step" | "batch_size" | "augmentations" => at_least(1),
        "seed" => value
            .parse::<u64>()
            .map(|_| ())
            .map_err(|_| format!("`{value}` is not an unsigned integer")),
        "content_layers" => {
            if split_list(value, ',').is_empty() {
                Err("at least one layer is required".into())
            } else {
                Ok(())
            }
        }
        "templates" => {
            let templates = split_list(value, '|');
            if templates.is_empty() {
                return Err("at least one template is required".into());
            }
            match templates.iter().find(|t| t.matches("{}").count() != 1) {
                Some(bad) => Err(format!("template `{bad}` must contain exactly one `{{}}`")),
                None => Ok(()),
            }
        }
        _ => Err(format!("unknown key `{key}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_image_defaults() {
        let c = default_config(Mode::SingleImage);
        assert_eq!(
            (c.lambda_dir, c.lambda_patch, c.lambda_content, c.lambda_tv),
            (500.0, 9000.0, 150.0, 0.002)
        );
        assert_eq!(c.tau, 0.7);
        assert_eq!((c.patch_size, c.num_patches, c.iterations), (128, 64, 200));
        assert_eq!((c.lr, c.lr_decay_step, c.lr_decay_factor), (5e-4, 100, 0.5));
        assert_eq!(c.distortion_scale, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn fast_transfer_defaults() {
        let c = default_config(Mode::FastTransfer);
        assert_eq!(
            (c.lambda_dir, c.lambda_patch, c.lambda_content, c.lambda_tv),
            (1.0, 10.0, 1.0, 1e-4)
        );
        assert_eq!((c.tau, c.lr, c.iterations), (0.7, 1e-4, 200));
        assert_eq!((c.batch_size, c.augmentations, c.num_patches), (4, 16, 64));
        assert_eq!(c.patch_size, 224);
        c.validate().unwrap();
    }

    #[test]
    fn override_single_key() {
        let c = TrainConfig::parse("tau = 0.5\n", Mode::SingleImage).unwrap();
        let mut expected = default_config(Mode::SingleImage);
        expected.tau = 0.5;
        assert_eq!(c, expected);
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(
            TrainConfig::parse("", Mode::SingleImage).unwrap(),
            default_config(Mode::SingleImage)
        );
        assert_eq!(
            TrainConfig::parse("# nothing\n\n", Mode::FastTransfer).unwrap(),
            default_config(Mode::FastTransfer)
        );
    }

    #[test]
    fn mode_key_selects_defaults() {
        let c = TrainConfig::parse("seed = 3\nmode = fast_transfer\n", Mode::SingleImage).unwrap();
        assert_eq!(c.lambda_patch, 10.0);
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn tau_out_of_range_reports_line() {
        let err = TrainConfig::parse("# header\ntau = 3.0\n", Mode::SingleImage).unwrap_err();
        match err {
            Error::ConfigRange { line, key, .. } => {
                assert_eq!(line, Some(2));
                assert_eq!(key, "tau");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_syntax_errors() {
        assert!(matches!(
            TrainConfig::parse("\n\nbogus = 1", Mode::SingleImage),
            Err(Error::ConfigUnknownKey { line: 3, .. })
        ));
        assert!(matches!(
            TrainConfig::parse("tau 0.5", Mode::SingleImage),
            Err(Error::ConfigSyntax { line: 1, .. })
        ));
        assert!(matches!(
            TrainConfig::parse("lambda_dir = -1", Mode::SingleImage),
            Err(Error::ConfigRange { line: Some(1), .. })
        ));
        assert!(matches!(
            TrainConfig::parse("patch_size = 4", Mode::SingleImage),
            Err(Error::ConfigRange { line: Some(1), .. })
        ));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_config("/definitely/not/here.cfg"),
            Err(Error::ConfigIo { .. })
        ));
    }

    #[test]
    fn lists_parse() {
        let c = TrainConfig::parse(
            "content_layers = conv3_1,conv4_2\ntemplates = {} | a sketch of {}",
            Mode::SingleImage,
        )
        .unwrap();
        assert_eq!(c.content_layers, vec!["conv3_1", "conv4_2"]);
        assert_eq!(c.templates, vec!["{}", "a sketch of {}"]);
        assert!(TrainConfig::parse("templates = no placeholder", Mode::SingleImage).is_err());
    }

    #[test]
    fn ablations() {
        let mut c = default_config(Mode::SingleImage);
        Ablation::NoPatch.apply(&mut c);
        assert_eq!(c.lambda_patch, 0.0);
        let mut c = default_config(Mode::SingleImage);
        Ablation::GlobalOnly.apply(&mut c);
        assert_eq!((c.lambda_dir, c.lambda_patch), (0.0, 0.0));
        assert!(c.lambda_global > 0.0);
        let mut c = default_config(Mode::SingleImage);
        Ablation::NoAug.apply(&mut c);
        assert_eq!(c.distortion_scale, 0.0);
    }

    #[test]
    fn content_size_check() {
        let c = default_config(Mode::SingleImage);
        assert!(c.check_content_size(512, 512).is_ok());
        assert!(c.check_content_size(127, 512).is_err());
    }
}
