//! Default artifact layout under the home directory (`LATENT_CE_HOME`).

use std::path::{Path, PathBuf};

use latentgrade::corpus::{Split, MANIFEST_FILE};

pub const HOME_ENV: &str = "LATENT_CE_HOME";
pub const DEFAULT_HOME: &str = "artifacts";

#[derive(Debug, Clone)]
pub struct Layout {
    pub home: PathBuf,
}

impl Layout {
    pub fn new(home: impl Into<PathBuf>) -> Self {
        Layout { home: home.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.home.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data_dir().join(MANIFEST_FILE)
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.home.join("model.daec")
    }

    pub fn latents(&self, split: Split) -> PathBuf {
        self.home.join("latents").join(format!("{split}.zsem"))
    }

    pub fn probe(&self) -> PathBuf {
        self.home.join("probe.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.home.join("eval")
    }

    pub fn ce_dir(&self) -> PathBuf {
        self.home.join("ce")
    }
}

/// Manifest path for a corpus directory or manifest file argument.
pub fn manifest_in(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}
