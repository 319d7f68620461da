use crate::error::{Error, Result};

/// All architecture hyperparameters.
///
/// The defaults build the full x2 network: 12 recurrences of 128 middle
/// channels, feature matching with N=32 features of R=4 channels on K=3
/// patches, 48-wide SRNL division, 64 transformed non-local channels and an
/// 8-channel attention bottleneck.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfmanConfig {
    /// Scale factor s, one of 2, 3, 4, 8.
    pub scale: usize,
    /// Recurrence count n of the FMF backbone.
    pub recurrences: usize,
    /// Middle feature channels C.
    pub channels: usize,
    /// TFM feature count N.
    pub tfm_features: usize,
    /// TFM feature channels R.
    pub tfm_channels: usize,
    /// TFM matched patch size K (odd).
    pub tfm_patch: usize,
    /// SRNL division size P.
    pub srnl_division: usize,
    /// Non-local transformed channels C1.
    pub nonlocal_channels: usize,
    /// CA reduced channels C2.
    pub ca_reduced: usize,
    /// Module toggles; all true is the published model, all false the Base
    /// ablation variant.
    pub use_tfm: bool,
    pub use_srnl: bool,
    pub use_ca: bool,
    /// Add the block input back onto the non-local output.
    pub nonlocal_residual: bool,
    /// PReLU between CA's reduce and expand convolutions.
    pub ca_mid_activation: bool,
    /// Bias terms on TFM's three 1x1 convolutions.
    pub tfm_bias: bool,
    /// Per-channel PReLU slopes; false shares one slope per activation.
    pub prelu_per_channel: bool,
}

impl Default for TfmanConfig {
    fn default() -> Self {
        TfmanConfig {
            scale: 2,
            recurrences: 12,
            channels: 128,
            tfm_features: 32,
            tfm_channels: 4,
            tfm_patch: 3,
            srnl_division: 48,
            nonlocal_channels: 64,
            ca_reduced: 8,
            use_tfm: true,
            use_srnl: true,
            use_ca: true,
            nonlocal_residual: true,
            ca_mid_activation: true,
            tfm_bias: true,
            prelu_per_channel: true,
        }
    }
}

impl TfmanConfig {
    /// Small configuration for desk-scale training and gradient checks.
    pub fn toy() -> Self {
        TfmanConfig {
            recurrences: 2,
            channels: 16,
            nonlocal_channels: 16,
            ca_reduced: 4,
            ..TfmanConfig::default()
        }
    }

    /// The Base ablation variant: TFM, SRNL and CA replaced by a
    /// deconvolution, a convolution and an identity connection.
    pub fn base_variant() -> Self {
        TfmanConfig {
            use_tfm: false,
            use_srnl: false,
            use_ca: false,
            ..TfmanConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 3, 4, 8].contains(&self.scale) {
            return Err(Error::config(format!(
                "unsupported scale {} (expected 2, 3, 4 or 8)",
                self.scale
            )));
        }
        if self.recurrences == 0 {
            return Err(Error::config("recurrences must be >= 1"));
        }
        if self.channels == 0 || self.nonlocal_channels == 0 {
            return Err(Error::config("channel extents must be >= 1"));
        }
        if self.use_ca && self.ca_reduced >= self.channels {
            return Err(Error::config(format!(
                "ca_reduced ({}) must be smaller than channels ({})",
                self.ca_reduced, self.channels
            )));
        }
        if self.use_tfm {
            if self.tfm_features == 0 || self.tfm_channels == 0 {
                return Err(Error::config("TFM extents must be >= 1"));
            }
            if self.tfm_patch % 2 == 0 {
                return Err(Error::config("tfm_patch must be odd"));
            }
        }
        if self.srnl_division == 0 {
            return Err(Error::config("srnl_division must be >= 1"));
        }
        Ok(())
    }

    /// Deconvolution geometry: kernel 3s, stride s, padding s keeps the
    /// output at exactly s times the input extent.
    pub fn deconv_kernel(&self) -> (usize, usize, usize) {
        (3 * self.scale, self.scale, self.scale)
    }

    /// Down-sampling is divided into steps: one 6x6 stride-2 convolution
    /// per factor-2 step when s is a power of two, a single 9x9 stride-3
    /// convolution for s = 3. Returns (kernel, stride, padding) per step.
    pub fn downsample_steps(&self) -> Vec<(usize, usize, usize)> {
        match self.scale {
            2 => vec![(6, 2, 2)],
            3 => vec![(9, 3, 3)],
            4 => vec![(6, 2, 2); 2],
            8 => vec![(6, 2, 2); 3],
            _ => unreachable!("validated scale"),
        }
    }

    /// Serialize as `key=value` lines (the checkpoint config blob and the
    /// CLI config file format).
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("scale", self.scale.to_string());
        kv("recurrences", self.recurrences.to_string());
        kv("channels", self.channels.to_string());
        kv("tfm_features", self.tfm_features.to_string());
        kv("tfm_channels", self.tfm_channels.to_string());
        kv("tfm_patch", self.tfm_patch.to_string());
        kv("srnl_division", self.srnl_division.to_string());
        kv("nonlocal_channels", self.nonlocal_channels.to_string());
        kv("ca_reduced", self.ca_reduced.to_string());
        kv("use_tfm", self.use_tfm.to_string());
        kv("use_srnl", self.use_srnl.to_string());
        kv("use_ca", self.use_ca.to_string());
        kv("nonlocal_residual", self.nonlocal_residual.to_string());
        kv("ca_mid_activation", self.ca_mid_activation.to_string());
        kv("tfm_bias", self.tfm_bias.to_string());
        kv("prelu_per_channel", self.prelu_per_channel.to_string());
        s
    }

    /// Apply one `key=value` pair. `Ok(false)` means the key is not a model
    /// key (the caller may route it elsewhere, e.g. to trainer settings).
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::config(format!("invalid value '{value}' for key '{key}'")))
        }
        match key {
            "scale" => self.scale = parse(key, value)?,
            "recurrences" => self.recurrences = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "tfm_features" => self.tfm_features = parse(key, value)?,
            "tfm_channels" => self.tfm_channels = parse(key, value)?,
            "tfm_patch" => self.tfm_patch = parse(key, value)?,
            "srnl_division" => self.srnl_division = parse(key, value)?,
            "nonlocal_channels" => self.nonlocal_channels = parse(key, value)?,
            "ca_reduced" => self.ca_reduced = parse(key, value)?,
            "use_tfm" => self.use_tfm = parse(key, value)?,
            "use_srnl" => self.use_srnl = parse(key, value)?,
            "use_ca" => self.use_ca = parse(key, value)?,
            "nonlocal_residual" => self.nonlocal_residual = parse(key, value)?,
            "ca_mid_activation" => self.ca_mid_activation = parse(key, value)?,
            "tfm_bias" => self.tfm_bias = parse(key, value)?,
            "prelu_per_channel" => self.prelu_per_channel = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parse a full `key=value` document, rejecting unknown keys.
    pub fn from_kv_str(text: &str) -> Result<TfmanConfig> {
        let mut cfg = TfmanConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected key=value, got '{raw}'",
                    lineno + 1
                )));
            };
            if !cfg.apply_kv(key.trim(), value.trim())? {
                return Err(Error::config(format!(
                    "line {}: unknown key '{}'",
                    lineno + 1,
                    key.trim()
                )));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
