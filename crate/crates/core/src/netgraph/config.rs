use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Back-end architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Two cascaded F-ASPP blocks with sub-pixel upsampling (the full method).
    CfAsppSr,
    /// Two cascaded F-ASPP blocks, bilinear upsampling.
    CfAspp,
    /// One F-ASPP block plus a 3x3 decoder conv, bilinear upsampling.
    FAspp,
    /// Two unfactorized ASPP blocks, bilinear upsampling.
    AsppFull,
    /// The `CfAsppSr` graph with both sub-pixel stages swapped for
    /// shape-identical pointwise + bilinear stages.
    BilinearBaseline,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::CfAsppSr, Variant::CfAspp, Variant::FAspp, Variant::AsppFull, Variant::BilinearBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CfAsppSr => "cf_aspp_sr",
            Variant::CfAspp => "cf_aspp",
            Variant::FAspp => "f_aspp",
            Variant::AsppFull => "aspp_full",
            Variant::BilinearBaseline => "bilinear_baseline",
        }
    }

    pub fn code(self) -> u32 {
        Variant::ALL.iter().position(|v| *v == self).expect("listed") as u32
    }

    pub fn from_code(code: u32) -> Option<Variant> {
        Variant::ALL.get(code as usize).copied()
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

/// Widths, rates and upsampling factors of the back-end.
///
/// Strides are measured on the label grid: a high-level feature of extent
/// `(h, w)` maps onto labels of extent `(h * high_stride, w * high_stride)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub variant: Variant,
    pub num_classes: usize,
    pub aspp_rates: Vec<usize>,
    pub high_channels: usize,
    pub low_channels: usize,
    pub faspp1_channels: usize,
    pub faspp2_channels: usize,
    pub lowlevel_proj_channels: usize,
    pub shuffle1_t: usize,
    pub shuffle2_t: usize,
    pub final_bilinear_t: usize,
    pub high_stride: usize,
    pub low_stride: usize,
}

impl Default for BackendConfig {
    /// ResNet-18-shaped features (512 / 128 channels at strides 32 / 8) and
    /// 19 classes.
    fn default() -> Self {
        BackendConfig {
            variant: Variant::CfAsppSr,
            num_classes: 19,
            aspp_rates: vec![6, 12, 18],
            high_channels: 512,
            low_channels: 128,
            faspp1_channels: 256,
            faspp2_channels: 128,
            lowlevel_proj_channels: 48,
            shuffle1_t: 4,
            shuffle2_t: 4,
            final_bilinear_t: 2,
            high_stride: 32,
            low_stride: 8,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.aspp_rates.is_empty() {
            return Err(Error::Config("aspp_rates must not be empty".into()));
        }
        if self.aspp_rates[0] < 1 || self.aspp_rates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "aspp_rates must be >= 1 and strictly increasing, got {:?}",
                self.aspp_rates
            )));
        }
        if !(1..255).contains(&self.num_classes) {
            return Err(Error::Config(format!("num_classes must be in [1, 254], got {}", self.num_classes)));
        }
        for (name, v) in [
            ("high_channels", self.high_channels),
            ("low_channels", self.low_channels),
            ("faspp1_channels", self.faspp1_channels),
            ("faspp2_channels", self.faspp2_channels),
            ("lowlevel_proj_channels", self.lowlevel_proj_channels),
            ("shuffle1_t", self.shuffle1_t),
            ("shuffle2_t", self.shuffle2_t),
            ("final_bilinear_t", self.final_bilinear_t),
            ("high_stride", self.high_stride),
            ("low_stride", self.low_stride),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.high_stride != self.shuffle1_t * self.low_stride {
            return Err(Error::Config(format!(
                "high-level stride {} must equal shuffle1_t * low-level stride = {} * {} = {}",
                self.high_stride,
                self.shuffle1_t,
                self.low_stride,
                self.shuffle1_t * self.low_stride
            )));
        }
        if self.low_stride != self.shuffle2_t * self.final_bilinear_t {
            return Err(Error::Config(format!(
                "low-level stride {} must equal shuffle2_t * final_bilinear_t = {} * {} = {}",
                self.low_stride,
                self.shuffle2_t,
                self.final_bilinear_t,
                self.shuffle2_t * self.final_bilinear_t
            )));
        }
        Ok(())
    }

    /// Feature extents that produce labels of extent `(h, w)`.
    pub fn feature_dims_for_labels(&self, h: usize, w: usize) -> Result<((usize, usize), (usize, usize))> {
        if h % self.high_stride != 0 || w % self.high_stride != 0 {
            return Err(Error::Config(format!(
                "label extent {h}x{w} is not a multiple of the high-level stride {}",
                self.high_stride
            )));
        }
        Ok((
            (h / self.high_stride, w / self.high_stride),
            (h / self.low_stride, w / self.low_stride),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        BackendConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_rates_and_strides() {
        let mut c = BackendConfig { aspp_rates: vec![], ..Default::default() };
        assert!(c.validate().is_err());
        c.aspp_rates = vec![6, 6, 18];
        assert!(c.validate().is_err());
        c.aspp_rates = vec![12, 6];
        assert!(c.validate().is_err());
        let c = BackendConfig { final_bilinear_t: 1, ..Default::default() };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("4 * 1 = 4"), "{msg}");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_code(v.code()), Some(v));
        }
    }
}
