//! Named experiment scales: the main setup, its follow-ups and a desk-sized run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DataConfig, SplitCounts};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Main,
    /// Attentional models with a quarter of the train/dev data and hidden size.
    FollowupAttnSmall,
    /// Attention-less models with three times the data and epochs.
    FollowupAttnless3x,
    Hidden16,
    Hidden32,
    Hidden64,
    /// Small enough to train every configuration on one CPU core.
    DeskScale,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Main,
        Preset::FollowupAttnSmall,
        Preset::FollowupAttnless3x,
        Preset::Hidden16,
        Preset::Hidden32,
        Preset::Hidden64,
        Preset::DeskScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Main => "main",
            Preset::FollowupAttnSmall => "followup_attn_small",
            Preset::FollowupAttnless3x => "followup_attnless_3x",
            Preset::Hidden16 => "hidden16",
            Preset::Hidden32 => "hidden32",
            Preset::Hidden64 => "hidden64",
            Preset::DeskScale => "desk_scale",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// Data sizes plus model and optimizer hyperparameters for one preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub data: DataConfig,
    pub hidden: usize,
    pub embedding: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub clip: f64,
    pub max_epochs: usize,
    pub eval_interval: usize,
    pub batch_size: usize,
    pub runs: usize,
}

pub fn scaled_config(preset: Preset) -> PresetConfig {
    let main = PresetConfig {
        data: DataConfig::default(),
        hidden: 512,
        embedding: 128,
        learning_rate: 5e-4,
        l2: 1e-5,
        clip: 1.0,
        max_epochs: 500,
        eval_interval: 10,
        batch_size: 1000,
        runs: 3,
    };
    match preset {
        Preset::Main => main,
        Preset::FollowupAttnSmall => {
            let mut c = main;
            c.hidden = 128;
            c.data.counts.train = 250;
            c.data.counts.dev = 250;
            c
        }
        Preset::FollowupAttnless3x => {
            let mut c = main;
            c.data.counts.train = 3000;
            c.data.counts.dev = 3000;
            c.max_epochs = 1500;
            c
        }
        Preset::Hidden16 | Preset::Hidden32 | Preset::Hidden64 => PresetConfig {
            hidden: match preset {
                Preset::Hidden16 => 16,
                Preset::Hidden32 => 32,
                _ => 64,
            },
            ..main
        },
        Preset::DeskScale => PresetConfig {
            data: DataConfig {
                train_lengths: (2..=8).collect(),
                gen_lengths: (9..=12).collect(),
                counts: SplitCounts {
                    train: 200,
                    dev: 200,
                    test: 1000,
                    gen: 1000,
                },
            },
            hidden: 64,
            embedding: 32,
            learning_rate: 2e-3,
            l2: 1e-5,
            clip: 1.0,
            max_epochs: 150,
            eval_interval: 5,
            batch_size: 50,
            runs: 1,
        },
    }
}
