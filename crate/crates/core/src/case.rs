use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Degenerate mode groups of the reference fiber: the first 3, 5, 6, 8 or
/// 10 modes of the canonical ordering are excited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub enum ModeCase {
    Three,
    Five,
    Six,
    Eight,
    Ten,
}

impl ModeCase {
    pub const ALL: [ModeCase; 5] = [
        ModeCase::Three,
        ModeCase::Five,
        ModeCase::Six,
        ModeCase::Eight,
        ModeCase::Ten,
    ];

    pub fn from_count(n: usize) -> Result<Self> {
        match n {
            3 => Ok(ModeCase::Three),
            5 => Ok(ModeCase::Five),
            6 => Ok(ModeCase::Six),
            8 => Ok(ModeCase::Eight),
            10 => Ok(ModeCase::Ten),
            other => Err(Error::InvalidInput(format!(
                "mode count must be one of 3, 5, 6, 8, 10 (got {other})"
            ))),
        }
    }

    pub fn count(self) -> usize {
        match self {
            ModeCase::Three => 3,
            ModeCase::Five => 5,
            ModeCase::Six => 6,
            ModeCase::Eight => 8,
            ModeCase::Ten => 10,
        }
    }

    /// Label scaling constant of the case.
    pub fn scaling_constant(self) -> f64 {
        match self {
            ModeCase::Three | ModeCase::Five => 3.0,
            ModeCase::Six | ModeCase::Eight | ModeCase::Ten => 4.5,
        }
    }
}

impl TryFrom<usize> for ModeCase {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        ModeCase::from_count(n)
    }
}

impl From<ModeCase> for usize {
    fn from(case: ModeCase) -> usize {
        case.count()
    }
}

impl fmt::Display for ModeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

impl FromStr for ModeCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("not a mode count: {s:?}")))?;
        ModeCase::from_count(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_constants() {
        let got: Vec<(usize, f64)> = ModeCase::ALL
            .iter()
            .map(|c| (c.count(), c.scaling_constant()))
            .collect();
        assert_eq!(got, [(3, 3.0), (5, 3.0), (6, 4.5), (8, 4.5), (10, 4.5)]);
    }

    #[test]
    fn parse_and_reject() {
        assert_eq!("6".parse::<ModeCase>().unwrap(), ModeCase::Six);
        assert!("4".parse::<ModeCase>().is_err());
        assert!("x".parse::<ModeCase>().is_err());
        assert!(serde_json::from_str::<ModeCase>("7").is_err());
        assert_eq!(serde_json::to_string(&ModeCase::Ten).unwrap(), "10");
    }
}
