use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Robot platform; fixes the state, action and environment-factor layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    /// Mass-spring-damper: state `[x1, x2]`, action `[F]`, env `[mass]`.
    Msd,
    /// Differential drive: state `[x, y, theta, vx, vy, omega]`,
    /// action `[u_forward, u_turn]`, env = friction triple per wheel side.
    DiffDrive,
    /// Quadrotor: state `[p(3), v(3), q(4)]`, action `[thrust, omega_des(3)]`,
    /// env = wind force `d(3)`.
    Quad,
}

impl Platform {
    pub fn state_dim(self) -> usize {
        match self {
            Platform::Msd => 2,
            Platform::DiffDrive => 6,
            Platform::Quad => 10,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Platform::Msd => 1,
            Platform::DiffDrive => 2,
            Platform::Quad => 4,
        }
    }

    pub fn env_dim(self) -> usize {
        match self {
            Platform::Msd => 1,
            Platform::DiffDrive => 6,
            Platform::Quad => 3,
        }
    }

    /// Start of the unit-quaternion block in the state vector, if any.
    pub fn quat_offset(self) -> Option<usize> {
        match self {
            Platform::Quad => Some(6),
            _ => None,
        }
    }

    /// Index of a planar heading angle in the state vector, if any.
    pub fn heading_index(self) -> Option<usize> {
        match self {
            Platform::DiffDrive => Some(2),
            _ => None,
        }
    }

    /// Control period used by the simulators, seconds.
    pub fn default_dt(self) -> f64 {
        match self {
            Platform::Msd => 0.05,
            Platform::DiffDrive => 0.04,
            Platform::Quad => 0.02,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Platform::Msd => "msd",
            Platform::DiffDrive => "diff_drive",
            Platform::Quad => "quad",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Platform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "msd" => Ok(Platform::Msd),
            "diff_drive" | "diffdrive" => Ok(Platform::DiffDrive),
            "quad" => Ok(Platform::Quad),
            other => Err(format!("unknown platform '{other}'")),
        }
    }
}
