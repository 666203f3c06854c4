use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;

/// Built-in synthetic benchmarks of increasing size and cardinality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 2k rows, K = 50.
    Small,
    /// 20k rows, K = 500, Zipf-skewed values and five numeric columns.
    Medium,
    /// 50k rows, K = 5000, weaker per-value signal.
    Highcard,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Small => "small",
            Preset::Medium => "medium",
            Preset::Highcard => "highcard",
        }
    }

    pub fn spec(self) -> SyntheticSpec {
        match self {
            Preset::Small => SyntheticSpec {
                n_rows: 2_000,
                n_cat_cols: 4,
                cardinality: 50,
                n_num_cols: 2,
                n_classes: 3,
                signal_strength: 1.0,
                value_skew: 0.0,
                seed: 0,
            },
            Preset::Medium => SyntheticSpec {
                n_rows: 20_000,
                n_cat_cols: 4,
                cardinality: 500,
                n_num_cols: 5,
                n_classes: 3,
                signal_strength: 1.0,
                value_skew: 1.0,
                seed: 0,
            },
            Preset::Highcard => SyntheticSpec {
                n_rows: 50_000,
                n_cat_cols: 3,
                cardinality: 5_000,
                n_num_cols: 2,
                n_classes: 4,
                signal_strength: 0.5,
                value_skew: 0.0,
                seed: 0,
            },
        }
    }
}
