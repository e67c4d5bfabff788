use dicforge_tensor::Checkpoint;
use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    /// Channels at scales 1/2, 1/4, 1/8 and 1/16.
    pub channels: [usize; 4],
    /// Bottleneck width is `channels / bottleneck_divisor`.
    pub bottleneck_divisor: usize,
    pub dropout_p: f64,
    pub mc_samples: usize,
    pub head_mid: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            channels: [32, 64, 128, 256],
            bottleneck_divisor: 4,
            dropout_p: 0.1,
            mc_samples: 8,
            head_mid: 16,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Config(m));
        if self.in_channels == 0 || self.head_mid == 0 {
            return bad("in_channels and head_mid must be positive".into());
        }
        if self.bottleneck_divisor == 0 {
            return bad("bottleneck divisor must be positive".into());
        }
        for &c in &self.channels {
            if c == 0 || c % self.bottleneck_divisor != 0 {
                return bad(format!("stage width {c} not divisible by {}", self.bottleneck_divisor));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout probability {} not in [0, 1)", self.dropout_p));
        }
        if self.mc_samples == 0 {
            return bad("mc_samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn bottleneck(&self, c: usize) -> usize {
        c / self.bottleneck_divisor
    }

    /// Recover the layer widths from parameter shapes. Dropout probability and
    /// sample count are not stored and come back as defaults.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, NetError> {
        let dims = |name: &str| {
            ckpt.params
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.dims.clone())
                .ok_or_else(|| NetError::Config(format!("checkpoint lacks `{name}`")))
        };
        let d1 = dims("d1.down.reduce.weight")?;
        let mut channels = [0; 4];
        for (k, stage) in ["d1", "d2", "g1", "g2"].iter().enumerate() {
            channels[k] = dims(&format!("{stage}.down.expand.weight"))?[0];
        }
        let mid = dims("d2.small.reduce.weight")?[0];
        let cfg = Self {
            in_channels: d1[1],
            channels,
            bottleneck_divisor: channels[1] / mid.max(1),
            head_mid: dims("head.deconv.weight")?[1],
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
