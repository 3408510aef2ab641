use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sizes of the toy stack. Every width and depth here is a free choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub latent_channels: usize,
    /// Image-to-latent downsampling factor; a power of two.
    pub downsample: usize,
    /// Channel width per U-Net level, finest first.
    pub channels: Vec<usize>,
    pub temb_dim: usize,
    pub freq_dim: usize,
    /// Channel width of each motion-encoder stage; one stride-2 stage per factor of two in `downsample`.
    pub motion_channels: Vec<usize>,
    /// Point embedding width `D_p`.
    pub point_dim: usize,
    pub point_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            image_height: 64,
            image_width: 64,
            latent_channels: 4,
            downsample: 8,
            channels: vec![8, 16, 16],
            temb_dim: 16,
            freq_dim: 16,
            motion_channels: vec![8, 16, 16],
            point_dim: 8,
            point_hidden: 16,
        }
    }
}

impl NetConfig {
    /// A very small configuration for fast tests.
    pub fn tiny() -> Self {
        NetConfig {
            image_height: 32,
            image_width: 32,
            latent_channels: 2,
            downsample: 4,
            channels: vec![3, 4],
            temb_dim: 4,
            freq_dim: 4,
            motion_channels: vec![3, 4],
            point_dim: 3,
            point_hidden: 4,
        }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn latent_height(&self) -> usize {
        self.image_height / self.downsample
    }

    pub fn latent_width(&self) -> usize {
        self.image_width / self.downsample
    }

    /// Spatial size `(h, w)` of U-Net level `l`.
    pub fn level_dims(&self, l: usize) -> (usize, usize) {
        (self.latent_height() >> l, self.latent_width() >> l)
    }

    pub fn latent_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.latent_channels, self.latent_height(), self.latent_width()]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels.is_empty() || self.channels.contains(&0) {
            return bad("channels must be non-empty and positive".into());
        }
        if !self.downsample.is_power_of_two() || self.downsample < 2 {
            return bad(format!("downsample must be a power of two >= 2, got {}", self.downsample));
        }
        let stages = self.downsample.trailing_zeros() as usize;
        if self.motion_channels.len() != stages || self.motion_channels.contains(&0) {
            return bad(format!(
                "motion_channels needs {stages} positive entries for downsample {}",
                self.downsample
            ));
        }
        let coarsest = self.downsample << (self.levels() - 1);
        if !self.image_height.is_multiple_of(coarsest) || !self.image_width.is_multiple_of(coarsest) {
            return bad(format!(
                "image {}x{} must be divisible by {coarsest}",
                self.image_width, self.image_height
            ));
        }
        if self.freq_dim < 2 || !self.freq_dim.is_multiple_of(2) {
            return bad("freq_dim must be even and >= 2".into());
        }
        if self.latent_channels == 0 || self.temb_dim == 0 || self.point_dim == 0 || self.point_hidden == 0 {
            return bad("widths must be positive".into());
        }
        Ok(())
    }
}

/// How motion and point guidance reach the frozen denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Motion added to the ControlNet input, point features inside the ControlNet encoder, residuals to the decoder.
    #[default]
    Full,
    /// Motion added to the denoiser's own input latent; ControlNet sees the bare noisy latent plus point features.
    Exp1,
    /// No ControlNet: motion added to the denoiser input, point features added inside the denoiser's encoder.
    Exp2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Exp1, Variant::Exp2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Exp1 => "exp1",
            Variant::Exp2 => "exp2",
        }
    }

    pub fn has_controlnet(self) -> bool {
        self != Variant::Exp2
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "exp1" => Ok(Variant::Exp1),
            "exp2" => Ok(Variant::Exp2),
            other => Err(Error::Config(format!("unknown variant {other:?} (expected full, exp1 or exp2)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        NetConfig::default().validate().unwrap();
        NetConfig::tiny().validate().unwrap();
        assert_eq!(NetConfig::default().level_dims(2), (2, 2));
    }

    #[test]
    fn rejects_indivisible_image() {
        let cfg = NetConfig {
            image_width: 60,
            ..NetConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn motion_stages_follow_downsample() {
        let cfg = NetConfig {
            motion_channels: vec![8, 8],
            ..NetConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("exp3".parse::<Variant>(), Err(Error::Config(_))));
    }
}
