//! Bundled example problems.

use crate::model::{parse_problem, Problem};

/// Two-disease diagnosis and treatment problem.
pub const MEDICAL_JSON: &str = include_str!("../examples/medical.json");

/// Four-model interest/gender advertising problem with privacy caps.
pub const ADVERTISING_JSON: &str = include_str!("../examples/advertising.json");

pub fn medical() -> Problem {
    parse_problem(MEDICAL_JSON).expect("bundled medical problem is valid")
}

pub fn advertising() -> Problem {
    parse_problem(ADVERTISING_JSON).expect("bundled advertising problem is valid")
}
