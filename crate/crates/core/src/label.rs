use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// AAMI beat class. The discriminant is the output-neuron index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Class {
    /// Normal and bundle branch block beats.
    N = 0,
    /// Supraventricular ectopic beats.
    S = 1,
    /// Ventricular ectopic beats.
    V = 2,
    /// Fusion of ventricular and normal beats.
    F = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::N, Class::S, Class::V, Class::F];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Class> {
        Class::ALL.get(index).copied()
    }

    /// Maps an MIT-BIH beat annotation symbol onto its AAMI class.
    ///
    /// Paced, unclassifiable and non-beat symbols return `None`.
    pub fn from_mitbih_symbol(symbol: &str) -> Option<Class> {
        match symbol {
            "N" | "L" | "R" | "e" | "j" => Some(Class::N),
            "A" | "a" | "J" | "S" => Some(Class::S),
            "V" | "E" => Some(Class::V),
            "F" => Some(Class::F),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Class::N => 'N',
            Class::S => 'S',
            Class::V => 'V',
            Class::F => 'F',
        }
    }

    /// One-hot target vector.
    pub fn one_hot(self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Class {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "N" => Ok(Class::N),
            "S" => Ok(Class::S),
            "V" => Ok(Class::V),
            "F" => Ok(Class::F),
            other => Err(format!("unknown class `{other}` (expected N, S, V or F)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aami_grouping() {
        assert_eq!(Class::from_mitbih_symbol("L"), Some(Class::N));
        assert_eq!(Class::from_mitbih_symbol("R"), Some(Class::N));
        assert_eq!(Class::from_mitbih_symbol("A"), Some(Class::S));
        assert_eq!(Class::from_mitbih_symbol("E"), Some(Class::V));
        assert_eq!(Class::from_mitbih_symbol("F"), Some(Class::F));
        assert_eq!(Class::from_mitbih_symbol("Q"), None);
        assert_eq!(Class::from_mitbih_symbol("/"), None);
        assert_eq!(Class::from_mitbih_symbol("+"), None);
    }

    #[test]
    fn index_roundtrip() {
        for c in Class::ALL {
            assert_eq!(Class::from_index(c.index()), Some(c));
            assert_eq!(c.to_string().parse::<Class>().unwrap(), c);
        }
        assert_eq!(Class::from_index(4), None);
    }
}
