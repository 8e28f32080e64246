//! The ten body parts, in the canonical column order used by every rule
//! file, attention vector and heatmap.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_PARTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BodyPart {
    RFoot,
    RThigh,
    LThigh,
    LFoot,
    Hip,
    Head,
    RHand,
    RArm,
    LArm,
    LHand,
}

impl BodyPart {
    pub const ALL: [BodyPart; NUM_PARTS] = [
        BodyPart::RFoot,
        BodyPart::RThigh,
        BodyPart::LThigh,
        BodyPart::LFoot,
        BodyPart::Hip,
        BodyPart::Head,
        BodyPart::RHand,
        BodyPart::RArm,
        BodyPart::LArm,
        BodyPart::LHand,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        Self::ALL.get(ordinal).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            BodyPart::RFoot => "RFoot",
            BodyPart::RThigh => "RThigh",
            BodyPart::LThigh => "LThigh",
            BodyPart::LFoot => "LFoot",
            BodyPart::Hip => "Hip",
            BodyPart::Head => "Head",
            BodyPart::RHand => "RHand",
            BodyPart::RArm => "RArm",
            BodyPart::LArm => "LArm",
            BodyPart::LHand => "LHand",
        }
    }

    pub fn names() -> [&'static str; NUM_PARTS] {
        Self::ALL.map(BodyPart::name)
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BodyPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::NotFound(format!("unknown body part {s:?}")))
    }
}
