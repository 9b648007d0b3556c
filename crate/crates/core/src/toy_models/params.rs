// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// Input channels at the four adapter insertion points (one per stage).
pub const ADAPTER_INSERTION_CHANNELS: [u64; 4] = [64, 256, 512, 1024];

/// Units per stage, bottleneck widths and output widths of ResNet50.
const STAGE_UNITS: [u64; 4] = [3, 4, 6, 3];
const STAGE_WIDTHS: [u64; 4] = [64, 128, 256, 512];
const STAGE_OUTPUTS: [u64; 4] = [256, 512, 1024, 2048];
const ROOT_CHANNELS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BottleneckRule {
    /// `k = c / 2`
    Half,
    Fixed(u64),
}

impl BottleneckRule {
    pub fn width(self, channels: u64) -> u64 {
        match self {
            BottleneckRule::Half => channels / 2,
            BottleneckRule::Fixed(k) => k,
        }
    }
}

impl FromStr for BottleneckRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "half" {
            return Ok(BottleneckRule::Half);
        }
        s.strip_prefix("fixed:")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k > 0)
            .map(BottleneckRule::Fixed)
            .ok_or_else(|| Error::InvalidArgument(format!("bottleneck must be `half` or `fixed:<k>`, got `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamReport {
    pub backbone_params: u64,
    /// One expert's adapters, summed over all insertion points.
    pub per_adapter_params: u64,
    pub ratio: f64,
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backbone {}", self.backbone_params)?;
        writeln!(f, "adapter {}", self.per_adapter_params)?;
        writeln!(f, "ratio {:.4}", self.ratio)
    }
}

/// Pre-activation ResNet50 (v2) without the classification head.
///
/// Convolutions carry no bias; every norm has a scale and a shift. Each
/// bottleneck unit is norm → 1×1 → norm → 3×3 → norm → 1×1 with a
/// projection shortcut on the first unit of a stage, and a final norm
/// follows the last stage.
pub fn resnet50_v2_backbone_params() -> u64 {
    let mut total = 7 * 7 * 3 * ROOT_CHANNELS;
    let mut in_ch = ROOT_CHANNELS;
    for stage in 0..4 {
        let (w, out) = (STAGE_WIDTHS[stage], STAGE_OUTPUTS[stage]);
        for unit in 0..STAGE_UNITS[stage] {
            let unit_in = if unit == 0 { in_ch } else { out };
            total += 2 * unit_in + unit_in * w;
            total += 2 * w + 9 * w * w;
            total += 2 * w + w * out;
            if unit == 0 {
                total += unit_in * out;
            }
        }
        in_ch = out;
    }
    total + 2 * in_ch
}

/// Parameters of one adapter at an insertion point with `c` input channels.
fn adapter_params(c: u64, k: u64) -> u64 {
    let norm1 = 2 * c;
    let conv1 = c * k + k;
    let norm2 = 2 * k;
    let conv2 = k * c + c;
    norm1 + conv1 + norm2 + conv2
}

pub fn count_params(adapter_channels: &[u64], rule: BottleneckRule) -> ParamReport {
    let backbone_params = resnet50_v2_backbone_params();
    let per_adapter_params = adapter_channels
        .iter()
        .map(|&c| adapter_params(c, rule.width(c)))
        .sum::<u64>();
    ParamReport {
        backbone_params,
        per_adapter_params,
        ratio: per_adapter_params as f64 / backbone_params as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_bottleneck_convs_match_a_linear_adapter() {
        for c in [8u64, 64, 256, 1024] {
            let k = BottleneckRule::Half.width(c);
            assert_eq!(c * k + k * c, c * c);
        }
    }

    #[test]
    fn single_adapter_breakdown() {
        // 2c + (ck + k) + 2k + (kc + c) with c = 64, k = 32.
        assert_eq!(adapter_params(64, 32), 128 + 2080 + 64 + 2112);
    }

    #[test]
    fn report_lines() {
        let r = count_params(&ADAPTER_INSERTION_CHANNELS, BottleneckRule::Half);
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("backbone "));
        assert!(lines[1].starts_with("adapter "));
        assert!(lines[2].starts_with("ratio 0.0"));
    }

    #[test]
    fn parses_rules() {
        assert_eq!("half".parse::<BottleneckRule>().unwrap(), BottleneckRule::Half);
        assert_eq!("fixed:16".parse::<BottleneckRule>().unwrap(), BottleneckRule::Fixed(16));
        assert!("fixed:0".parse::<BottleneckRule>().is_err());
        assert!("quarter".parse::<BottleneckRule>().is_err());
    }
}
