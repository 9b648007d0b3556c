// SPDX-License-Identifier: Apache-2.0

//! Residual bottleneck adapter executed on a channels × sites feature map.
//!
//! The adapter is two norm → ReLU → 1×1 conv components (`c -> k -> c`) plus
//! a skip connection around both. A block adapted by expert `e` computes
//! `F(x + a_e(x))`, i.e. the adapter rewrites the block's input.

use super::Matrix;
use crate::{Error, Result};

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// `channels × sites` activations, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    sites: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, sites: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || sites == 0 {
            return Err(Error::Validation(format!("empty feature map {channels}x{sites}")));
        }
        if data.len() != channels * sites {
            return Err(Error::Dimension(format!(
                "{} values for a {channels}x{sites} feature map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature map contains non-finite values".into()));
        }
        Ok(FeatureMap { channels, sites, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.sites..(c + 1) * self.sites]
    }

    pub fn get(&self, c: usize, s: usize) -> f64 {
        self.data[c * self.sites + s]
    }
}

/// Group normalization: statistics per group of `channels / groups`
/// channels over all sites, then a per-channel affine map.
pub fn group_norm(x: &FeatureMap, groups: usize, gamma: &[f64], beta: &[f64], eps: f64) -> Result<FeatureMap> {
    let c = x.channels;
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "{c} channels cannot be split into {groups} groups"
        )));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::Dimension(format!(
            "affine parameters of length {}/{} for {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    let per_group = c / groups;
    let span = per_group * x.sites;
    let mut out = vec![0.0; x.data.len()];
    for (g, (src, dst)) in x.data.chunks_exact(span).zip(out.chunks_exact_mut(span)).enumerate() {
        let mean = src.iter().sum::<f64>() / span as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / span as f64;
        let inv_std = 1.0 / (var + eps).sqrt();
        for (local, (s_row, d_row)) in src.chunks_exact(x.sites).zip(dst.chunks_exact_mut(x.sites)).enumerate() {
            let ch = g * per_group + local;
            for (v, o) in s_row.iter().zip(d_row.iter_mut()) {
                *o = (v - mean) * inv_std * gamma[ch] + beta[ch];
            }
        }
    }
    Ok(FeatureMap {
        channels: c,
        sites: x.sites,
        data: out,
    })
}

/// Largest group count not above 32 that divides both widths.
pub fn default_groups(channels: usize, bottleneck: usize) -> usize {
    (1..=32.min(channels.min(bottleneck)).max(1))
        .rev()
        .find(|g| channels % g == 0 && bottleneck % g == 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub in_channels: usize,
    pub bottleneck: usize,
    pub groups: usize,
    pub norm1_gamma: Vec<f64>,
    pub norm1_beta: Vec<f64>,
    /// `bottleneck × in_channels`
    pub conv1: Matrix,
    pub conv1_bias: Vec<f64>,
    pub norm2_gamma: Vec<f64>,
    pub norm2_beta: Vec<f64>,
    /// `in_channels × bottleneck`
    pub conv2: Matrix,
    pub conv2_bias: Vec<f64>,
}

impl AdapterParams {
    /// Unit norms and all-zero convolutions: the identity adapter.
    pub fn zeros(in_channels: usize, bottleneck: usize, groups: usize) -> Result<Self> {
        let p = AdapterParams {
            in_channels,
            bottleneck,
            groups,
            norm1_gamma: vec![1.0; in_channels],
            norm1_beta: vec![0.0; in_channels],
            conv1: Matrix::zeros(bottleneck, in_channels),
            conv1_bias: vec![0.0; bottleneck],
            norm2_gamma: vec![1.0; bottleneck],
            norm2_beta: vec![0.0; bottleneck],
            conv2: Matrix::zeros(in_channels, bottleneck),
            conv2_bias: vec![0.0; in_channels],
        };
        p.validate()?;
        Ok(p)
    }

    /// Zero adapter with `k = c / 2` and the default group count.
    pub fn half_bottleneck(in_channels: usize) -> Result<Self> {
        let k = (in_channels / 2).max(1);
        AdapterParams::zeros(in_channels, k, default_groups(in_channels, k))
    }

    pub fn validate(&self) -> Result<()> {
        let (c, k, g) = (self.in_channels, self.bottleneck, self.groups);
        if c == 0 || k == 0 {
            return Err(Error::Validation(format!("adapter widths must be positive, got c={c}, k={k}")));
        }
        if g == 0 || c % g != 0 || k % g != 0 {
            return Err(Error::Validation(format!("group count {g} must divide c={c} and k={k}")));
        }
        let shapes = [
            (self.norm1_gamma.len(), c),
            (self.norm1_beta.len(), c),
            (self.conv1.rows(), k),
            (self.conv1.cols(), c),
            (self.conv1_bias.len(), k),
            (self.norm2_gamma.len(), k),
            (self.norm2_beta.len(), k),
            (self.conv2.rows(), c),
            (self.conv2.cols(), k),
            (self.conv2_bias.len(), c),
        ];
        if shapes.iter().any(|(have, want)| have != want) {
            return Err(Error::Dimension(format!("adapter parameter shapes do not match c={c}, k={k}")));
        }
        Ok(())
    }
}

/// Per-site channel mix: `out[o, s] = sum_i w[o, i] x[i, s] + b[o]`.
fn conv1x1(x: &FeatureMap, w: &Matrix, b: &[f64]) -> FeatureMap {
    let sites = x.sites;
    let mut data = vec![0.0; w.rows() * sites];
    for (o, out_row) in data.chunks_exact_mut(sites).enumerate() {
        out_row.fill(b[o]);
        for (i, &wi) in w.row(o).iter().enumerate() {
            for (acc, v) in out_row.iter_mut().zip(x.channel(i)) {
                *acc += wi * v;
            }
        }
    }
    FeatureMap {
        channels: w.rows(),
        sites,
        data,
    }
}

fn relu(mut x: FeatureMap) -> FeatureMap {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
    x
}

/// `x + C2(ReLU(N2(C1(ReLU(N1(x))))))`.
pub fn adapter_forward(x: &FeatureMap, a: &AdapterParams) -> Result<FeatureMap> {
    a.validate()?;
    if x.channels != a.in_channels {
        return Err(Error::Dimension(format!(
            "feature map has {} channels, adapter expects {}",
            x.channels, a.in_channels
        )));
    }
    let h = relu(group_norm(x, a.groups, &a.norm1_gamma, &a.norm1_beta, GROUP_NORM_EPS)?);
    let h = conv1x1(&h, &a.conv1, &a.conv1_bias);
    let h = relu(group_norm(&h, a.groups, &a.norm2_gamma, &a.norm2_beta, GROUP_NORM_EPS)?);
    let residual = conv1x1(&h, &a.conv2, &a.conv2_bias);
    let data = x
        .data
        .iter()
        .zip(&residual.data)
        // Skipping exact zeros keeps the sign of -0.0 inputs.
        .map(|(&v, &r)| if r == 0.0 { v } else { v + r })
        .collect();
    Ok(FeatureMap {
        channels: x.channels,
        sites: x.sites,
        data,
    })
}

/// Runs `block` on the adapted input: `block(x + a(x))`.
pub fn adapted_block_forward<F>(x: &FeatureMap, block: F, a: &AdapterParams) -> Result<FeatureMap>
where
    F: FnOnce(&FeatureMap) -> Result<FeatureMap>,
{
    block(&adapter_forward(x, a)?)
}
