//! Interleaving of hammer and PUF rows.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dram::Geometry;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RhType {
    /// Single-sided: each PUF row has one hammer neighbour.
    #[serde(rename = "SSRH")]
    Ssrh,
    /// Double-sided: each PUF row sits between two hammer rows.
    #[serde(rename = "DSRH")]
    Dsrh,
}

impl fmt::Display for RhType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RhType::Ssrh => "SSRH",
            RhType::Dsrh => "DSRH",
        })
    }
}

impl std::str::FromStr for RhType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SSRH" => Ok(RhType::Ssrh),
            "DSRH" => Ok(RhType::Dsrh),
            other => Err(Error::config(format!("unknown rowhammer type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowRole {
    Hammer,
    Puf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowPattern {
    pub rh_type: RhType,
    pub bank: u32,
    pub start_row: u32,
    pub roles: Vec<RowRole>,
    pub hammer_rows: Vec<u32>,
    pub puf_rows: Vec<u32>,
}

impl RowPattern {
    /// Compact form such as `HVVHVVH`.
    pub fn render(&self) -> String {
        self.roles
            .iter()
            .map(|r| match r {
                RowRole::Hammer => 'H',
                RowRole::Puf => 'V',
            })
            .collect()
    }

    pub fn total_rows(&self) -> usize {
        self.roles.len()
    }

    /// Hammer rows directly adjacent to `row`.
    pub fn aggressors_of(&self, row: u32) -> Vec<u32> {
        let rel = match row.checked_sub(self.start_row) {
            Some(r) if (r as usize) < self.roles.len() => r as usize,
            _ => return Vec::new(),
        };
        let mut out = Vec::with_capacity(2);
        if rel > 0 && self.roles[rel - 1] == RowRole::Hammer {
            out.push(row - 1);
        }
        if rel + 1 < self.roles.len() && self.roles[rel + 1] == RowRole::Hammer {
            out.push(row + 1);
        }
        out
    }
}

impl fmt::Display for RowPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Builds the hammer/PUF interleaving starting at `puf_address` in bank 0.
///
/// DSRH is `(H V)* H`. SSRH is `(H V V)* H`; an odd PUF row count closes with
/// `H V H`, so a single 4 KB row is hammered from both sides by two rows.
pub fn build_row_pattern(
    rh_type: RhType,
    puf_size: u64,
    geometry: &Geometry,
    puf_address: u32,
) -> Result<RowPattern> {
    geometry.validate()?;
    let row_bytes = u64::from(geometry.row_size_bytes);
    if puf_size == 0 || !puf_size.is_multiple_of(row_bytes) {
        return Err(Error::config(format!(
            "PUF size {puf_size} is not a positive multiple of the {row_bytes}-byte row size"
        )));
    }
    let victims = puf_size / row_bytes;

    let mut roles = Vec::new();
    match rh_type {
        RhType::Dsrh => {
            for _ in 0..victims {
                roles.extend([RowRole::Hammer, RowRole::Puf]);
            }
        }
        RhType::Ssrh => {
            for _ in 0..victims / 2 {
                roles.extend([RowRole::Hammer, RowRole::Puf, RowRole::Puf]);
            }
            if victims % 2 == 1 {
                roles.extend([RowRole::Hammer, RowRole::Puf]);
            }
        }
    }
    roles.push(RowRole::Hammer);

    let end = u64::from(puf_address) + roles.len() as u64;
    if end > u64::from(geometry.rows_per_bank) {
        return Err(Error::config(format!(
            "{rh_type} pattern of {} rows at row {puf_address} exceeds the {}-row bank",
            roles.len(),
            geometry.rows_per_bank
        )));
    }

    let mut hammer_rows = Vec::new();
    let mut puf_rows = Vec::new();
    for (i, role) in roles.iter().enumerate() {
        let row = puf_address + i as u32;
        match role {
            RowRole::Hammer => hammer_rows.push(row),
            RowRole::Puf => puf_rows.push(row),
        }
    }
    Ok(RowPattern {
        rh_type,
        bank: 0,
        start_row: puf_address,
        roles,
        hammer_rows,
        puf_rows,
    })
}

/// Hammer-row counts between which [`hammer_interval`] interpolates.
pub const MEASURED_HAMMER_ROWS: (usize, usize) = (2, 17);

/// Time between consecutive accesses to one hammer row, in seconds, when
/// `num_hammer_rows` rows are hammered round-robin.
///
/// Linear through 6 µs at 2 rows and 8 µs at 17 rows.
pub fn hammer_interval(num_hammer_rows: usize) -> f64 {
    let n = num_hammer_rows.max(1) as f64;
    (86.0 / 15.0 + 2.0 / 15.0 * n) * 1e-6
}

pub fn is_extrapolated(num_hammer_rows: usize) -> bool {
    let (lo, hi) = MEASURED_HAMMER_ROWS;
    !(lo..=hi).contains(&num_hammer_rows)
}
