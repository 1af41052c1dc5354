use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the two options of a game.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub fn other(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Choice::A => "A",
            Choice::B => "B",
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid selection label {0:?}, expected \"A\" or \"B\"")]
pub struct ParseChoiceError(pub String);

impl FromStr for Choice {
    type Err = ParseChoiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" => Ok(Choice::A),
            "B" => Ok(Choice::B),
            other => Err(ParseChoiceError(other.to_string())),
        }
    }
}

/// Whether the aid's suggestion matched the operator's initial selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agreement {
    Agree,
    Disagree,
}

impl Agreement {
    pub fn between(initial: Choice, suggestion: Choice) -> Agreement {
        if initial == suggestion {
            Agreement::Agree
        } else {
            Agreement::Disagree
        }
    }

    /// `+1` for agreement, `-1` otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Agreement::Agree => 1.0,
            Agreement::Disagree => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Agreement::Agree => 1,
            Agreement::Disagree => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Agreement> {
        match v {
            1 => Some(Agreement::Agree),
            -1 => Some(Agreement::Disagree),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_labels() {
        assert_eq!("A".parse::<Choice>().unwrap(), Choice::A);
        assert_eq!(" B ".parse::<Choice>().unwrap(), Choice::B);
        assert!("C".parse::<Choice>().is_err());
    }

    #[test]
    fn agreement_sign() {
        assert_eq!(Agreement::between(Choice::A, Choice::A).sign(), 1.0);
        assert_eq!(Agreement::between(Choice::A, Choice::B).sign(), -1.0);
        assert_eq!(Agreement::from_i8(-1), Some(Agreement::Disagree));
        assert_eq!(Agreement::from_i8(0), None);
    }
}
