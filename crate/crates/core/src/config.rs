//! Flat key-value run configuration.
//!
//! The on-disk form is `key = value`, one per line, `#` comments allowed.
//! Parsing starts from the defaults, so a config file only needs the keys
//! it overrides; serialization always writes every key, and the result
//! parses back to an identical config.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::hash_bytes;

/// Which classifier a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelChoice {
    M1,
    M2One,
    M2Dual,
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m1" => Ok(ModelChoice::M1),
            "m2-one" => Ok(ModelChoice::M2One),
            "m2-dual" => Ok(ModelChoice::M2Dual),
            other => Err(Error::Config(format!(
                "unknown model {other:?}; expected m1, m2-one, or m2-dual"
            ))),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelChoice::M1 => "m1",
            ModelChoice::M2One => "m2-one",
            ModelChoice::M2Dual => "m2-dual",
        })
    }
}

macro_rules! run_config {
    ($($(#[doc = $doc:expr])* $field:ident: $ty:ty = $default:expr,)+) => {
        /// All tunables of a pipeline run. Every field has a default, listed
        /// in the generated `Default`.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[doc = $doc])* pub $field: $ty,)+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)+ }
            }
        }

        impl RunConfig {
            /// Canonical text form: every key, fixed order.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(
                    s.push_str(stringify!($field));
                    s.push_str(" = ");
                    s.push_str(&self.$field.to_string());
                    s.push('\n');
                )+
                s
            }

            /// Sets one field from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = value.parse::<$ty>().map_err(|_| {
                            Error::Config(format!("key {key:?}: cannot parse {value:?}"))
                        })?;
                    })+
                    _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }
        }
    };
}

run_config! {
    /// Root seed for every stage.
    seed: u64 = 0,
    model: ModelChoice = ModelChoice::M2Dual,
    folds: usize = 10,
    epochs: usize = 10,
    batch_size: usize = 75,
    lr: f64 = 1e-3,
    beta1: f64 = 0.9,
    beta2: f64 = 0.999,
    adam_eps: f64 = 1e-8,
    /// Held-out share for single-split training.
    val_fraction: f64 = 0.1,
    /// Square input edge for the grayscale model.
    m1_size: usize = 512,
    /// Square input edge for the color models.
    m2_size: usize = 256,
    /// Feed the grayscale model mask-multiplied images.
    use_mask: bool = false,
    /// Border-crop luma threshold.
    crop_threshold: u8 = 10,
    piecewise_r1: u8 = 70,
    piecewise_s1: u8 = 0,
    piecewise_r2: u8 = 140,
    piecewise_s2: u8 = 255,
    /// Binarization threshold of the deterministic segmenter.
    seg_threshold: u8 = 128,
    /// Minkowski norm order for color constancy.
    minkowski_p: f64 = 6.0,
    /// Per-class row count after balancing.
    balance_target: usize = 2000,
    rotate_min: f32 = -45.0,
    rotate_max: f32 = 45.0,
    scale_min: f32 = 0.8,
    scale_max: f32 = 1.2,
    shear_min: f32 = -0.2,
    shear_max: f32 = 0.2,
    contrast_min: f32 = 0.7,
    contrast_max: f32 = 1.3,
    brightness_min: i16 = -30,
    brightness_max: i16 = 30,
    cutout_frac_min: f32 = 0.05,
    cutout_frac_max: f32 = 0.25,
    crop_frac_min: f32 = 0.7,
    crop_frac_max: f32 = 1.0,
    unet_depth: usize = 3,
    unet_base_channels: usize = 8,
    unet_size: usize = 64,
    unet_epochs: usize = 30,
    unet_batch_size: usize = 5,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// FNV-1a hash of the canonical text; stable across runs and platforms.
    pub fn hash(&self) -> u64 {
        hash_bytes(self.to_text().as_bytes())
    }

    /// Directory name tying outputs to the exact configuration.
    pub fn run_dir_name(&self) -> String {
        format!("run-{:016x}-seed{}", self.hash(), self.seed)
    }

    pub fn ranges(&self) -> crate::augment::AugmentRanges {
        crate::augment::AugmentRanges {
            rotate_degrees: (self.rotate_min, self.rotate_max),
            scale: (self.scale_min, self.scale_max),
            shear: (self.shear_min, self.shear_max),
            contrast: (self.contrast_min, self.contrast_max),
            brightness: (self.brightness_min, self.brightness_max),
            cutout_frac: (self.cutout_frac_min, self.cutout_frac_max),
            crop_frac: (self.crop_frac_min, self.crop_frac_max),
        }
    }

    pub fn piecewise(&self) -> Result<crate::imaging::PiecewiseParams> {
        crate::imaging::PiecewiseParams::new(
            self.piecewise_r1,
            self.piecewise_s1,
            self.piecewise_r2,
            self.piecewise_s2,
        )
    }

    pub fn adam(&self) -> crate::training::AdamParams {
        crate::training::AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.model, ModelChoice::M2Dual);
        assert_eq!(cfg.folds, 10);
        assert_eq!(cfg.batch_size, 75);
        assert_eq!(cfg.m1_size, 512);
        assert_eq!(cfg.m2_size, 256);
        assert_eq!(cfg.crop_threshold, 10);
        assert_eq!((cfg.piecewise_r1, cfg.piecewise_s1), (70, 0));
        assert_eq!((cfg.piecewise_r2, cfg.piecewise_s2), (140, 255));
        assert_eq!(cfg.balance_target, 2000);
        assert_eq!(cfg.minkowski_p, 6.0);
        assert_eq!(cfg.unet_depth, 3);
        assert_eq!(cfg.unet_base_channels, 8);
        assert_eq!(cfg.unet_size, 64);
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mut cfg = RunConfig::default();
        cfg.seed = 1234567890123;
        cfg.model = ModelChoice::M1;
        cfg.lr = 0.00037;
        cfg.beta2 = 0.9991234;
        cfg.rotate_max = 44.75;
        cfg.brightness_min = -17;
        cfg.use_mask = true;
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_files_inherit_defaults() {
        let cfg = RunConfig::parse("# trial run\n\nfolds = 3\nmodel = m2-one\n").unwrap();
        assert_eq!(cfg.folds, 3);
        assert_eq!(cfg.model, ModelChoice::M2One);
        assert_eq!(cfg.batch_size, 75, "untouched key keeps its default");
    }

    #[test]
    fn bad_input_is_named() {
        let err = RunConfig::parse("voodoo = 3\n").unwrap_err().to_string();
        assert!(err.contains("voodoo"), "{err}");
        let err = RunConfig::parse("folds = many\n").unwrap_err().to_string();
        assert!(err.contains("folds"), "{err}");
        let err = RunConfig::parse("folds\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = RunConfig::parse("model = resnet\n").unwrap_err().to_string();
        assert!(err.contains("resnet"), "{err}");
    }

    #[test]
    fn hash_tracks_content_and_names_run_dirs() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.epochs += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.run_dir_name(), format!("run-{:016x}-seed0", a.hash()));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        let mut cfg = RunConfig::default();
        cfg.seed = 42;
        cfg.save(&p).unwrap();
        assert_eq!(RunConfig::load(&p).unwrap(), cfg);
    }

    #[test]
    fn model_names_round_trip() {
        for m in [ModelChoice::M1, ModelChoice::M2One, ModelChoice::M2Dual] {
            assert_eq!(m.to_string().parse::<ModelChoice>().unwrap(), m);
        }
        assert!("m3".parse::<ModelChoice>().is_err());
    }
}
