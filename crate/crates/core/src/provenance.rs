//! Config-hash/seed stamp written as the first line of every output file.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

const PREFIX: &str = "# config_hash=";

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{PREFIX}{},seed={}", self.config_hash, self.seed)
    }
}

impl Provenance {
    /// Parses a `# config_hash=<hex>,seed=<n>` line.
    pub fn parse(line: &str) -> Option<Provenance> {
        let rest = line.trim_end().strip_prefix(PREFIX)?;
        let (hash, seed) = rest.split_once(",seed=")?;
        Some(Provenance {
            config_hash: hash.to_string(),
            seed: seed.parse().ok()?,
        })
    }

    /// Reads the stamp from the first line of a reader, if present, and
    /// returns the remaining text.
    pub fn split_header<R: BufRead>(mut reader: R) -> std::io::Result<(Option<Provenance>, String)> {
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let mut rest = String::new();
        reader.read_to_string(&mut rest)?;
        match Provenance::parse(&first) {
            Some(p) => Ok((Some(p), rest)),
            None => Ok((None, first + &rest)),
        }
    }
}
