use serde::{Deserialize, Serialize};

use crate::numerics::Matrix;

/// Error rates binary workers are drawn from, uniformly.
pub const BINARY_RATES: [f64; 3] = [0.1, 0.2, 0.3];

/// The three response-probability matrices used for each arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KaryFixture {
    Arity2,
    Arity3,
    Arity4,
}

impl KaryFixture {
    pub fn for_arity(k: usize) -> Option<Self> {
        match k {
            2 => Some(Self::Arity2),
            3 => Some(Self::Arity3),
            4 => Some(Self::Arity4),
            _ => None,
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Self::Arity2 => 2,
            Self::Arity3 => 3,
            Self::Arity4 => 4,
        }
    }

    pub fn matrices(self) -> [Matrix; 3] {
        match self {
            Self::Arity2 => [
                Matrix::from_rows(&[[0.9, 0.1], [0.2, 0.8]]),
                Matrix::from_rows(&[[0.8, 0.2], [0.1, 0.9]]),
                Matrix::from_rows(&[[0.9, 0.1], [0.1, 0.9]]),
            ],
            Self::Arity3 => [
                Matrix::from_rows(&[[0.6, 0.3, 0.1], [0.1, 0.6, 0.3], [0.3, 0.1, 0.6]]),
                Matrix::from_rows(&[[0.8, 0.1, 0.1], [0.2, 0.8, 0.0], [0.0, 0.2, 0.8]]),
                Matrix::from_rows(&[[0.9, 0.0, 0.1], [0.1, 0.9, 0.0], [0.0, 0.2, 0.8]]),
            ],
            // Row 4 of the first matrix and row 2 of the second are chosen
            // so every row sums to one with the diagonal as the row maximum.
            Self::Arity4 => [
                Matrix::from_rows(&[
                    [0.7, 0.1, 0.1, 0.1],
                    [0.1, 0.6, 0.2, 0.1],
                    [0.0, 0.1, 0.8, 0.1],
                    [0.1, 0.2, 0.0, 0.7],
                ]),
                Matrix::from_rows(&[
                    [0.8, 0.1, 0.0, 0.1],
                    [0.1, 0.7, 0.0, 0.2],
                    [0.1, 0.1, 0.7, 0.1],
                    [0.0, 0.1, 0.2, 0.7],
                ]),
                Matrix::from_rows(&[
                    [0.6, 0.1, 0.2, 0.1],
                    [0.0, 0.7, 0.1, 0.2],
                    [0.1, 0.0, 0.9, 0.0],
                    [0.2, 0.0, 0.0, 0.8],
                ]),
            ],
        }
    }
}

impl std::str::FromStr for KaryFixture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "arity2" | "2" => Ok(Self::Arity2),
            "arity3" | "3" => Ok(Self::Arity3),
            "arity4" | "4" => Ok(Self::Arity4),
            other => Err(format!("unknown fixture {other:?} (expected arity2, arity3 or arity4)")),
        }
    }
}
