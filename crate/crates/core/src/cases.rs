//! The two bundled aerial-robotics case studies: a fixed-wing UAV whose
//! upgraded airframe adds servo dynamics, and a quadrotor abstraction of a
//! hexacopter with gimbal states. Both are stored as continuous-time
//! matrices with a 0.02 s forward-Euler step.

use crate::config::parse_config;
use crate::error::{Error, Result};
use crate::model::ArchitectureSpec;

pub const UAV_JSON: &str = include_str!("../configs/uav.json");
pub const HEXACOPTER_JSON: &str = include_str!("../configs/hexacopter.json");

/// Names accepted by [`load_case`].
pub const CASE_NAMES: [&str; 2] = ["uav", "hexacopter"];

pub fn case_json(name: &str) -> Option<&'static str> {
    match name {
        "uav" => Some(UAV_JSON),
        "hexacopter" => Some(HEXACOPTER_JSON),
        _ => None,
    }
}

pub fn load_case(name: &str) -> Result<ArchitectureSpec> {
    let text = case_json(name).ok_or_else(|| {
        Error::Config(format!("unknown case '{name}' (expected one of {})", CASE_NAMES.join(", ")))
    })?;
    parse_config(text)
}
