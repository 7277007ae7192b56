use std::fmt;

use serde::{Deserialize, Serialize};

/// Cloud categories of the profiling radar classification product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum CloudType {
    NoCloud = 0,
    Cirrus = 1,
    Altostratus = 2,
    Altocumulus = 3,
    Stratus = 4,
    Stratocumulus = 5,
    Cumulus = 6,
    Nimbostratus = 7,
    DeepConvection = 8,
}

impl CloudType {
    pub const ALL: [CloudType; 9] = [
        CloudType::NoCloud,
        CloudType::Cirrus,
        CloudType::Altostratus,
        CloudType::Altocumulus,
        CloudType::Stratus,
        CloudType::Stratocumulus,
        CloudType::Cumulus,
        CloudType::Nimbostratus,
        CloudType::DeepConvection,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CloudType::NoCloud => "No Cloud",
            CloudType::Cirrus => "Cirrus",
            CloudType::Altostratus => "Altostratus",
            CloudType::Altocumulus => "Altocumulus",
            CloudType::Stratus => "Stratus",
            CloudType::Stratocumulus => "Stratocumulus",
            CloudType::Cumulus => "Cumulus",
            CloudType::Nimbostratus => "Nimbostratus",
            CloudType::DeepConvection => "Deep Convection",
        }
    }
}

impl fmt::Display for CloudType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Column label from per-level labels: the most frequent cloudy class.
///
/// Equal counts go to the lower class code; an all-clear column is `NoCloud`.
pub fn column_cloud_type(levels: &[CloudType]) -> CloudType {
    let mut counts = [0usize; 9];
    for &l in levels {
        counts[l as usize] += 1;
    }
    let mut best = CloudType::NoCloud;
    let mut best_n = 0;
    for t in &CloudType::ALL[1..] {
        if counts[*t as usize] > best_n {
            best = *t;
            best_n = counts[*t as usize];
        }
    }
    best
}
