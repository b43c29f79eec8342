//! Body-25 joint model and on-body sensor placements.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const NUM_JOINTS: usize = 25;

/// Joints of the 25-point body model, in keypoint-file order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Joint {
    Nose = 0,
    Neck,
    RShoulder,
    RElbow,
    RWrist,
    LShoulder,
    LElbow,
    LWrist,
    MidHip,
    RHip,
    RKnee,
    RAnkle,
    LHip,
    LKnee,
    LAnkle,
    REye,
    LEye,
    REar,
    LEar,
    LBigToe,
    LSmallToe,
    LHeel,
    RBigToe,
    RSmallToe,
    RHeel,
}

impl Joint {
    pub const ALL: [Joint; NUM_JOINTS] = [
        Joint::Nose,
        Joint::Neck,
        Joint::RShoulder,
        Joint::RElbow,
        Joint::RWrist,
        Joint::LShoulder,
        Joint::LElbow,
        Joint::LWrist,
        Joint::MidHip,
        Joint::RHip,
        Joint::RKnee,
        Joint::RAnkle,
        Joint::LHip,
        Joint::LKnee,
        Joint::LAnkle,
        Joint::REye,
        Joint::LEye,
        Joint::REar,
        Joint::LEar,
        Joint::LBigToe,
        Joint::LSmallToe,
        Joint::LHeel,
        Joint::RBigToe,
        Joint::RSmallToe,
        Joint::RHeel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Joint> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Joint::Nose => "Nose",
            Joint::Neck => "Neck",
            Joint::RShoulder => "RShoulder",
            Joint::RElbow => "RElbow",
            Joint::RWrist => "RWrist",
            Joint::LShoulder => "LShoulder",
            Joint::LElbow => "LElbow",
            Joint::LWrist => "LWrist",
            Joint::MidHip => "MidHip",
            Joint::RHip => "RHip",
            Joint::RKnee => "RKnee",
            Joint::RAnkle => "RAnkle",
            Joint::LHip => "LHip",
            Joint::LKnee => "LKnee",
            Joint::LAnkle => "LAnkle",
            Joint::REye => "REye",
            Joint::LEye => "LEye",
            Joint::REar => "REar",
            Joint::LEar => "LEar",
            Joint::LBigToe => "LBigToe",
            Joint::LSmallToe => "LSmallToe",
            Joint::LHeel => "LHeel",
            Joint::RBigToe => "RBigToe",
            Joint::RSmallToe => "RSmallToe",
            Joint::RHeel => "RHeel",
        }
    }
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a wearable sensor sits on the body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    LeftWrist,
    RightWrist,
    LeftCalf,
    RightCalf,
}

impl Placement {
    pub const ALL: [Placement; 4] = [
        Placement::LeftWrist,
        Placement::RightWrist,
        Placement::LeftCalf,
        Placement::RightCalf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placement::LeftWrist => "left_wrist",
            Placement::RightWrist => "right_wrist",
            Placement::LeftCalf => "left_calf",
            Placement::RightCalf => "right_calf",
        }
    }

    /// Joints fed to this placement's regression model, MidHip included.
    pub fn default_joints(self) -> Vec<Joint> {
        use Joint::*;
        match self {
            Placement::LeftWrist => vec![Neck, LShoulder, LElbow, LWrist, MidHip],
            Placement::RightWrist => vec![Neck, RShoulder, RElbow, RWrist, MidHip],
            Placement::LeftCalf => vec![MidHip, LHip, LKnee, LAnkle, Neck],
            Placement::RightCalf => vec![MidHip, RHip, RKnee, RAnkle, Neck],
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Placement::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown placement `{s}`")))
    }
}
