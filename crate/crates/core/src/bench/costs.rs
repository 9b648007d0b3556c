// SPDX-License-Identifier: Apache-2.0

//! Asymptotic cost of per-task expert selection versus domain-adaptive
//! transfer (DAT), which re-trains the generic model on re-weighted
//! upstream data for every new task.

use std::fmt;

use crate::{Error, Result};

/// Sizes entering the cost model. `b` is the batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModelInput {
    /// Parameters of the network.
    pub p: u64,
    pub b: u64,
    /// Steps training the generic upstream model.
    pub s_u: u64,
    /// Steps adapting the generic model (per expert, or per task for DAT).
    pub s_a: u64,
    /// Steps fine-tuning on the downstream task.
    pub s_f: u64,
    /// Number of experts.
    pub e: u64,
    /// Downstream examples.
    pub n_t: u64,
}

impl CostModelInput {
    /// Selecting among 500 experts with 1000 downstream examples, against
    /// four JFT epochs of adaptation (about 1.2e9 examples at batch 4096).
    pub const SELECTION_AT_SCALE: CostModelInput = CostModelInput {
        p: 25_000_000,
        b: 4096,
        s_u: 1_000_000,
        s_a: 292_969,
        s_f: 10_000,
        e: 500,
        n_t: 1000,
    };

    fn validate(&self) -> Result<()> {
        for (name, v) in [("P", self.p), ("B", self.b), ("E", self.e), ("N_T", self.n_t)] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseCosts {
    pub upstream: u128,
    pub preparation: u128,
    pub fine_tune: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostTable {
    pub dat: PhaseCosts,
    pub ours: PhaseCosts,
}

impl CostTable {
    /// How many times cheaper expert preparation is than DAT's adaptation.
    pub fn preparation_ratio(&self) -> f64 {
        self.dat.preparation as f64 / self.ours.preparation as f64
    }

    /// Exact check `lo <= dat/ours <= hi` in integer arithmetic.
    pub fn ratio_within(&self, lo: u128, hi: u128) -> bool {
        let (num, den) = (self.dat.preparation, self.ours.preparation);
        match (den.checked_mul(lo), den.checked_mul(hi)) {
            (Some(a), Some(b)) => a <= num && num <= b,
            (Some(a), None) => a <= num,
            _ => false,
        }
    }
}

impl fmt::Display for CostTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "phase dat ours")?;
        writeln!(f, "upstream {} {}", self.dat.upstream, self.ours.upstream)?;
        writeln!(f, "preparation {} {}", self.dat.preparation, self.ours.preparation)?;
        writeln!(f, "fine_tune {} {}", self.dat.fine_tune, self.ours.fine_tune)?;
        writeln!(f, "ratio {:.6e}", self.preparation_ratio())
    }
}

fn mul(values: &[u64], what: &'static str) -> Result<u128> {
    values
        .iter()
        .try_fold(1u128, |acc, &v| acc.checked_mul(v as u128))
        .ok_or(Error::Overflow(what))
}

fn add(a: u128, b: u128, what: &'static str) -> Result<u128> {
    a.checked_add(b).ok_or(Error::Overflow(what))
}

/// Dominant term of every cell of the cost table.
///
/// | phase       | DAT                | ours                      |
/// |-------------|--------------------|---------------------------|
/// | upstream    | S_U·B·P            | (S_U + S_A·E)·B·P         |
/// | preparation | (N_T + S_A·B)·P    | (N_T·P + N_T²)·E          |
/// | fine-tune   | S_F·B·P            | S_F·B·P                   |
pub fn asymptotic_costs(x: &CostModelInput) -> Result<CostTable> {
    x.validate()?;
    let fine_tune = mul(&[x.s_f, x.b, x.p], "fine-tuning cost")?;
    let dat = PhaseCosts {
        upstream: mul(&[x.s_u, x.b, x.p], "DAT upstream cost")?,
        preparation: add(x.n_t as u128, mul(&[x.s_a, x.b], "DAT preparation cost")?, "DAT preparation cost")?
            .checked_mul(x.p as u128)
            .ok_or(Error::Overflow("DAT preparation cost"))?,
        fine_tune,
    };
    let steps = add(x.s_u as u128, mul(&[x.s_a, x.e], "expert training steps")?, "expert training steps")?;
    let ours = PhaseCosts {
        upstream: steps
            .checked_mul(mul(&[x.b, x.p], "upstream cost")?)
            .ok_or(Error::Overflow("upstream cost"))?,
        preparation: add(mul(&[x.n_t, x.p], "preparation cost")?, mul(&[x.n_t, x.n_t], "preparation cost")?, "preparation cost")?
            .checked_mul(x.e as u128)
            .ok_or(Error::Overflow("preparation cost"))?,
        fine_tune,
    };
    Ok(CostTable { dat, ours })
}
