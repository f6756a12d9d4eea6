use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const T1_NAMES: [&str; 4] = ["normal", "bold", "italic", "bold_italic"];
pub const T2_NAMES: [&str; 4] = ["normal", "underline", "strikeout", "underline_strikeout"];

/// Word attributes as two 4-way classes.
///
/// `t1`: 0 normal, 1 bold, 2 italic, 3 bold & italic.
/// `t2`: 0 normal, 1 underline, 2 strikeout, 3 underline & strikeout.
/// Both are bit sets: bit 0 is bold/underline, bit 1 italic/strikeout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AttributeLabel {
    pub t1: u8,
    pub t2: u8,
}

impl AttributeLabel {
    pub const NORMAL: Self = Self { t1: 0, t2: 0 };

    pub fn new(t1: u8, t2: u8) -> Result<Self> {
        if t1 > 3 || t2 > 3 {
            return Err(Error::invalid(format!("label ({t1}, {t2}) outside [0, 3]")));
        }
        Ok(Self { t1, t2 })
    }

    pub fn bold(self) -> bool {
        self.t1 & 1 != 0
    }

    pub fn italic(self) -> bool {
        self.t1 & 2 != 0
    }

    pub fn underline(self) -> bool {
        self.t2 & 1 != 0
    }

    pub fn strikeout(self) -> bool {
        self.t2 & 2 != 0
    }

    pub fn with_italic(self) -> Self {
        Self { t1: self.t1 | 2, ..self }
    }

    pub fn with_underline(self) -> Self {
        Self { t2: self.t2 | 1, ..self }
    }

    pub fn with_strikeout(self) -> Self {
        Self { t2: self.t2 | 2, ..self }
    }

    /// Index into the 16-way joint space, `4·t1 + t2`.
    pub fn combined(self) -> usize {
        4 * self.t1 as usize + self.t2 as usize
    }

    pub fn from_combined(index: usize) -> Result<Self> {
        if index >= 16 {
            return Err(Error::invalid(format!("joint class {index} outside [0, 16)")));
        }
        Ok(Self { t1: (index / 4) as u8, t2: (index % 4) as u8 })
    }
}
