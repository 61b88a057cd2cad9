//! Line-oriented `key = value` configuration with `#` comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::numcore::AdamConfig;
use crate::simulator::{CameraKind, ExtraAbsorber, Illuminant, SimulationConfig};
use crate::waic::{TrainConfig, DEFAULT_MEMBERS};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub camera: CameraKind,
    pub illuminant: Illuminant,
    /// Rows simulated before the train/test split.
    pub rows: usize,
    pub train_ratio: f64,
    pub noise_sigma: f64,
    pub members: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_blocks: usize,
    pub hidden_width: usize,
    pub clamp_alpha: f64,
    pub dataset: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub scene_train_rows: usize,
    pub scene_noise_sigma: f64,
    pub frames: usize,
    pub switch_frame: usize,
    pub frame_size: usize,
    pub roi_size: usize,
    pub sweep_members: usize,
    pub sweep_train_rows: usize,
    pub sweep_eval_rows: usize,
    pub absorber_strength: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            camera: CameraKind::SpectroCam8,
            illuminant: Illuminant::Xenon,
            rows: 55_000,
            train_ratio: crate::datasets::DEFAULT_TRAIN_RATIO,
            noise_sigma: 0.0,
            members: DEFAULT_MEMBERS,
            epochs: 30,
            batch_size: 256,
            learning_rate: 1e-3,
            n_blocks: 10,
            hidden_width: 64,
            clamp_alpha: 2.0,
            dataset: None,
            manifest: None,
            scene_train_rows: 20_000,
            scene_noise_sigma: 0.01,
            frames: 200,
            switch_frame: 80,
            frame_size: 32,
            roi_size: 16,
            sweep_members: 20,
            sweep_train_rows: 10_000,
            sweep_eval_rows: 2_000,
            absorber_strength: ExtraAbsorber::default().strength,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("invalid value '{value}' for '{key}'")))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("config line {}: expected 'key = value'", i + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// `KEY=VALUE` override as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("override '{assignment}' is not KEY=VALUE")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "camera" => self.camera = value.parse()?,
            "illuminant" => self.illuminant = value.parse()?,
            "rows" => self.rows = parse(key, value)?,
            "train_ratio" => self.train_ratio = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "members" => self.members = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "n_blocks" => self.n_blocks = parse(key, value)?,
            "hidden_width" => self.hidden_width = parse(key, value)?,
            "clamp_alpha" => self.clamp_alpha = parse(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "scene_train_rows" => self.scene_train_rows = parse(key, value)?,
            "scene_noise_sigma" => self.scene_noise_sigma = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "switch_frame" => self.switch_frame = parse(key, value)?,
            "frame_size" => self.frame_size = parse(key, value)?,
            "roi_size" => self.roi_size = parse(key, value)?,
            "sweep_members" => self.sweep_members = parse(key, value)?,
            "sweep_train_rows" => self.sweep_train_rows = parse(key, value)?,
            "sweep_eval_rows" => self.sweep_eval_rows = parse(key, value)?,
            "absorber_strength" => self.absorber_strength = parse(key, value)?,
            other => return Err(Error::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        if self.n_blocks == 0 || self.hidden_width == 0 || !(self.clamp_alpha > 0.0) {
            return Err(Error::Usage("n_blocks, hidden_width and clamp_alpha must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Usage("epochs, batch_size and learning_rate must be positive".into()));
        }
        Ok(TrainConfig {
            flow: FlowConfig {
                n_blocks: self.n_blocks,
                hidden_width: self.hidden_width,
                clamp_alpha: self.clamp_alpha,
            },
            batch_size: self.batch_size,
            epochs: self.epochs,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        })
    }

    pub fn simulation(&self, rows: usize, seed: u64) -> SimulationConfig {
        SimulationConfig {
            noise_sigma: self.noise_sigma,
            ..SimulationConfig::new(rows, self.camera, self.illuminant, seed)
        }
    }

    pub fn extra_absorber(&self) -> ExtraAbsorber {
        ExtraAbsorber {
            strength: self.absorber_strength,
            ..ExtraAbsorber::default()
        }
    }

    /// Canonical `key = value` listing; loading it reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("seed", self.seed.to_string());
        line("camera", self.camera.name().into());
        line("illuminant", self.illuminant.name().into());
        line("rows", self.rows.to_string());
        line("train_ratio", format!("{:?}", self.train_ratio));
        line("noise_sigma", format!("{:?}", self.noise_sigma));
        line("members", self.members.to_string());
        line("epochs", self.epochs.to_string());
        line("batch_size", self.batch_size.to_string());
        line("learning_rate", format!("{:?}", self.learning_rate));
        line("n_blocks", self.n_blocks.to_string());
        line("hidden_width", self.hidden_width.to_string());
        line("clamp_alpha", format!("{:?}", self.clamp_alpha));
        if let Some(d) = &self.dataset {
            line("dataset", d.display().to_string());
        }
        if let Some(m) = &self.manifest {
            line("manifest", m.display().to_string());
        }
        line("scene_train_rows", self.scene_train_rows.to_string());
        line("scene_noise_sigma", format!("{:?}", self.scene_noise_sigma));
        line("frames", self.frames.to_string());
        line("switch_frame", self.switch_frame.to_string());
        line("frame_size", self.frame_size.to_string());
        line("roi_size", self.roi_size.to_string());
        line("sweep_members", self.sweep_members.to_string());
        line("sweep_train_rows", self.sweep_train_rows.to_string());
        line("sweep_eval_rows", self.sweep_eval_rows.to_string());
        line("absorber_strength", format!("{:?}", self.absorber_strength));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let mut c = Config::default();
        c.apply_text("# comment\nseed = 7\n\ncamera = ximea16  # trailing\nnoise_sigma=0.02\n")
            .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.camera, CameraKind::Ximea16);
        assert_eq!(c.noise_sigma, 0.02);
    }

    #[test]
    fn unknown_key_and_bad_value_are_usage_errors() {
        let mut c = Config::default();
        assert!(matches!(c.apply_text("colour = red"), Err(Error::Usage(_))));
        assert!(matches!(c.apply_text("rows = many"), Err(Error::Usage(_))));
        assert!(matches!(c.apply_text("rows"), Err(Error::Usage(_))));
        assert!(matches!(c.apply_override("illuminant=sodium"), Err(Error::Usage(_))));
    }

    #[test]
    fn text_roundtrip() {
        let mut c = Config::default();
        c.apply_override("learning_rate=3e-4").unwrap();
        c.apply_override("dataset=/tmp/x.csv").unwrap();
        let mut back = Config::default();
        back.apply_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn train_config_follows_keys() {
        let mut c = Config::default();
        c.apply_text("epochs = 3\nn_blocks = 4").unwrap();
        let t = c.train_config().unwrap();
        assert_eq!(t.epochs, 3);
        assert_eq!(t.flow.n_blocks, 4);
        c.batch_size = 0;
        assert!(c.train_config().is_err());
    }
}
