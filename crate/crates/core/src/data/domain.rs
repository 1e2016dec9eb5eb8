use std::fmt;

use crate::error::{Error, Result};

/// Dataset-of-origin label supervising the domain head.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainTag {
    symbol: String,
    index: usize,
}

impl DomainTag {
    pub fn new(symbol: impl Into<String>, index: usize) -> Self {
        Self {
            symbol: symbol.into(),
            index,
        }
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Default single-letter tags: `A` is 0, `B` is 1, and so on.
    pub fn from_letter(symbol: &str, num_domains: usize) -> Result<Self> {
        let mut chars = symbol.chars();
        match (chars.next(), chars.next()) {
            (Some(c @ 'A'..='Z'), None) if ((c as u8 - b'A') as usize) < num_domains => {
                Ok(Self::new(symbol, (c as u8 - b'A') as usize))
            }
            _ => Err(Error::Label(format!(
                "domain tag {symbol:?} is not one of the first {num_domains} letters"
            ))),
        }
    }

    pub fn a() -> Self {
        Self::new("A", 0)
    }

    pub fn b() -> Self {
        Self::new("B", 1)
    }

    pub fn c() -> Self {
        Self::new("C", 2)
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.symbol)
    }
}
