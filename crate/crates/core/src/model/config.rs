use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScaleSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Segmentation,
}

/// How the `T x D` area-feature sequence of a region becomes one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// LSTM encoder, one-step LSTM decoder, attention over encoder states.
    AttentionEd,
    /// Encoder and decoder; the decoder output `W_b h̄₁` is the region feature.
    NoAttention,
    /// Encoder only; the last hidden state is the region feature.
    NoDecoder,
    /// Concatenate the `T` area features and project to `D`.
    Concatenation,
    /// Elementwise maximum over the `T` area features.
    MaxPooling,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [
        Aggregation::AttentionEd,
        Aggregation::NoAttention,
        Aggregation::NoDecoder,
        Aggregation::Concatenation,
        Aggregation::MaxPooling,
    ];

    /// Short column label.
    pub fn label(self) -> &'static str {
        match self {
            Aggregation::AttentionEd => "Att+ED",
            Aggregation::NoAttention => "No Att",
            Aggregation::NoDecoder => "No Dec",
            Aggregation::Concatenation => "Con",
            Aggregation::MaxPooling => "MP",
        }
    }

    pub fn uses_encoder(self) -> bool {
        matches!(
            self,
            Aggregation::AttentionEd | Aggregation::NoAttention | Aggregation::NoDecoder
        )
    }

    pub fn uses_decoder(self) -> bool {
        matches!(self, Aggregation::AttentionEd | Aggregation::NoAttention)
    }
}

/// Network hyperparameters. Defaults are the full-size configuration:
/// 384 centroids, areas of 16/32/64/128 points, `D = h = 128`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    /// Number of centroids `M`.
    pub centroids: usize,
    pub scales: ScaleSpec,
    /// Hidden widths of the shared area MLP; its last layer has width `feature_dim`.
    pub area_mlp: Vec<usize>,
    /// Area feature width `D`.
    pub feature_dim: usize,
    /// LSTM hidden width `h`.
    pub hidden_dim: usize,
    /// Hidden widths of the region-to-global MLP; its last layer has width `global_dim`.
    pub global_mlp: Vec<usize>,
    pub global_dim: usize,
    /// Hidden widths of the classification head.
    pub classifier: Vec<usize>,
    pub classes: usize,
    pub parts: usize,
    /// Widths of the MLP after concatenating the global feature to each region.
    pub seg_region_mlp: Vec<usize>,
    /// Widths of the MLP after interpolating to points and adding skip features.
    pub seg_point_mlp: Vec<usize>,
    /// Hidden widths of the per-point classifier.
    pub seg_head: Vec<usize>,
    pub interp_k: usize,
    pub dropout: f64,
    pub aggregation: Aggregation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Classification,
            centroids: 384,
            scales: ScaleSpec::new(vec![16, 32, 64, 128]).expect("valid"),
            area_mlp: vec![64, 128],
            feature_dim: 128,
            hidden_dim: 128,
            global_mlp: vec![256, 512],
            global_dim: 1024,
            classifier: vec![512, 256],
            classes: 40,
            parts: 50,
            seg_region_mlp: vec![256, 128],
            seg_point_mlp: vec![128, 128],
            seg_head: vec![128],
            interp_k: 3,
            dropout: 0.4,
            aggregation: Aggregation::AttentionEd,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checking.
    pub fn tiny(task: Task) -> Self {
        ModelConfig {
            task,
            centroids: 4,
            scales: ScaleSpec::new(vec![2, 4]).expect("valid"),
            area_mlp: vec![8, 8],
            feature_dim: 8,
            hidden_dim: 8,
            global_mlp: vec![16],
            global_dim: 16,
            classifier: vec![8],
            classes: 3,
            parts: 3,
            seg_region_mlp: vec![8],
            seg_point_mlp: vec![8],
            seg_head: vec![8],
            interp_k: 3,
            dropout: 0.4,
            aggregation: Aggregation::AttentionEd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("centroids", self.centroids),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("global_dim", self.global_dim),
            ("interp_k", self.interp_k),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be positive")));
            }
        }
        match self.task {
            Task::Classification if self.classes < 2 => {
                return Err(Error::Config("model.classes must be at least 2".into()))
            }
            Task::Segmentation if self.parts < 2 => {
                return Err(Error::Config("model.parts must be at least 2".into()))
            }
            _ => {}
        }
        if self.area_mlp.is_empty() {
            return Err(Error::Config(
                "model.area_mlp needs at least one hidden layer".into(),
            ));
        }
        for (name, widths) in [
            ("area_mlp", &self.area_mlp),
            ("global_mlp", &self.global_mlp),
            ("classifier", &self.classifier),
            ("seg_region_mlp", &self.seg_region_mlp),
            ("seg_point_mlp", &self.seg_point_mlp),
            ("seg_head", &self.seg_head),
        ] {
            if widths.contains(&0) {
                return Err(Error::Config(format!("model.{name} has a zero width")));
            }
        }
        if self.task == Task::Segmentation
            && (self.seg_region_mlp.is_empty() || self.seg_point_mlp.is_empty())
        {
            return Err(Error::Config(
                "segmentation propagation MLPs need at least one layer".into(),
            ));
        }
        if self.task == Task::Segmentation && self.interp_k > self.centroids {
            return Err(Error::Config(format!(
                "model.interp_k ({}) exceeds model.centroids ({})",
                self.interp_k, self.centroids
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "model.dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Number of scales `T`.
    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// Width of the per-region feature fed to global aggregation.
    pub fn region_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::NoDecoder => self.hidden_dim,
            _ => self.feature_dim,
        }
    }

    /// Output width: classes or parts.
    pub fn outputs(&self) -> usize {
        match self.task {
            Task::Classification => self.classes,
            Task::Segmentation => self.parts,
        }
    }

    /// Width of the level-0 skip features (first area-MLP layer).
    pub fn point_feature_dim(&self) -> usize {
        self.area_mlp[0]
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
