//! Exact radius-bounded retrieval over packed binary codes.
//!
//! The index is a hash table from code to the positions holding that
//! code. A radius-r query enumerates every code in the Hamming ball
//! around the query (exactly `ball_size(b, r)` bucket probes, hits or
//! not) and collects the contents of the buckets that exist. This is
//! the table-lookup strategy that makes small radii cheap: the probe
//! count depends on b and r, never on the collection size.

use crate::codes::{ball_size, enumerate_ball, hamming_distance, BinaryCode};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

pub struct CodeIndex {
    bits: Option<usize>,
    codes: Vec<BinaryCode>,
    ids: Vec<u64>,
    table: HashMap<BinaryCode, Vec<usize>>,
}

impl CodeIndex {
    /// Builds over a collection, assigning ids 0..n in input order.
    pub fn build(codes: Vec<BinaryCode>) -> Result<Self> {
        let ids = (0..codes.len() as u64).collect();
        CodeIndex::build_with_ids(codes, ids)
    }

    /// Builds with caller-supplied ids (parallel to `codes`). Duplicate
    /// codes are fine; duplicate ids are rejected since query results
    /// are keyed by id.
    pub fn build_with_ids(codes: Vec<BinaryCode>, ids: Vec<u64>) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(Error::InvalidArgument(format!(
                "{} codes but {} ids",
                codes.len(),
                ids.len()
            )));
        }
        let bits = codes.first().map(|c| c.len());
        if let Some(b) = bits {
            for c in &codes {
                if c.len() != b {
                    return Err(Error::LengthMismatch {
                        left: b,
                        right: c.len(),
                    });
                }
            }
        }
        {
            let mut seen: Vec<u64> = ids.clone();
            seen.sort_unstable();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidArgument("duplicate ids".into()));
            }
        }
        let mut table: HashMap<BinaryCode, Vec<usize>> = HashMap::new();
        for (pos, code) in codes.iter().enumerate() {
            table.entry(code.clone()).or_default().push(pos);
        }
        Ok(CodeIndex {
            bits,
            codes,
            ids,
            table,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Code length, `None` for an empty index.
    pub fn bits(&self) -> Option<usize> {
        self.bits
    }

    pub fn codes(&self) -> &[BinaryCode] {
        &self.codes
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Bucket probes a radius-r query performs: `ball_size(b, r)`.
    pub fn probes_per_query(&self, radius: usize) -> Result<u64> {
        match self.bits {
            Some(b) => ball_size(b, radius),
            None => Ok(0),
        }
    }

    /// All items within Hamming distance `radius` of `query`, as
    /// `(id, distance)` sorted by distance then id. An empty result is
    /// an empty vector, not an error. Querying an empty index returns
    /// empty for any query length.
    pub fn query_radius(&self, query: &BinaryCode, radius: usize) -> Result<Vec<(u64, u32)>> {
        let Some(bits) = self.bits else {
            return Ok(Vec::new());
        };
        if query.len() != bits {
            return Err(Error::LengthMismatch {
                left: query.len(),
                right: bits,
            });
        }
        let mut hits: Vec<(u64, u32)> = Vec::new();
        for probe in enumerate_ball(query, radius)? {
            if let Some(positions) = self.table.get(&probe) {
                let d = hamming_distance(query, &probe).expect("equal lengths");
                hits.extend(positions.iter().map(|&p| (self.ids[p], d)));
            }
        }
        hits.sort_unstable_by_key(|&(id, d)| (d, id));
        Ok(hits)
    }

    /// Persists as an HBC1 code file plus a text sidecar of ids, one
    /// decimal per line. The bucket table is rebuilt on load.
    pub fn save<P: AsRef<Path>>(&self, codes_path: P, ids_path: P) -> Result<()> {
        crate::codes::save_codes(codes_path, &self.codes)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(ids_path)?);
        for id in &self.ids {
            writeln!(w, "{id}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(codes_path: P, ids_path: P) -> Result<Self> {
        let codes = crate::codes::load_codes(codes_path)?;
        let r = std::io::BufReader::new(std::fs::File::open(ids_path)?);
        let mut ids = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let id: u64 = line.trim().parse().map_err(|_| Error::Parse {
                offset: lineno as u64,
                what: format!("id line {:?} is not a u64", line),
            })?;
            ids.push(id);
        }
        CodeIndex::build_with_ids(codes, ids)
    }
}

/// Reference implementation: scan the whole collection, keep items
/// within `radius`, sort by (distance, id). `query_radius` must agree
/// with this on every input.
pub fn linear_scan(
    codes: &[BinaryCode],
    ids: &[u64],
    query: &BinaryCode,
    radius: usize,
) -> Result<Vec<(u64, u32)>> {
    if codes.len() != ids.len() {
        return Err(Error::InvalidArgument(format!(
            "{} codes but {} ids",
            codes.len(),
            ids.len()
        )));
    }
    let mut hits = Vec::new();
    for (code, &id) in codes.iter().zip(ids) {
        let d = hamming_distance(query, code)?;
        if d as usize <= radius {
            hits.push((id, d));
        }
    }
    hits.sort_unstable_by_key(|&(id, d)| (d, id));
    Ok(hits)
}
