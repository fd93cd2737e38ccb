//! Innovation extraction: from an observed path, build independent point
//! processes `U_n` under which the coupling recursion reproduces the path.
//!
//! `U_n` is a fresh process `W_n` whose first point under `f_{n-1}` is
//! replaced by `(X_n, V_n f_{n-1}(X_n), t)`, with `V_n` uniform. Both `W_n` and
//! `V_n` come from their own substreams keyed by the time index.

use serde::{Deserialize, Serialize};

use crate::chain::{simulate_path, ChainModel};
use crate::coupler::couple;
use crate::error::{Error, Result};
use crate::measure::{Region, State};
use crate::ppp::{splice, PointProcessSource, SplicedSource};
use crate::rng::{derive_seed, index_key, tag, Substream};

/// Spliced sources for consecutive time indices, with the per-index check
/// that the recursion returns the observed value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoverningSequence {
    /// Time index of `sources[0]`.
    pub start: i64,
    pub sources: Vec<SplicedSource>,
    pub recursion_check: Vec<bool>,
}

impl GoverningSequence {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    /// Sources for the time indices `from..from + len`.
    pub fn window(&self, from: i64, len: usize) -> Result<&[SplicedSource]> {
        let i = from - self.start;
        if i < 0 || i as usize + len > self.sources.len() {
            return Err(Error::domain(format!(
                "window [{from}, {}) outside the extracted range",
                from + len as i64
            )));
        }
        Ok(&self.sources[i as usize..i as usize + len])
    }

    pub fn all_checks_hold(&self) -> bool {
        self.recursion_check.iter().all(|&b| b)
    }
}

/// The fresh process `W_n`.
pub fn fresh_source(model: &ChainModel, seed: u64, index: i64) -> PointProcessSource {
    PointProcessSource::new(
        derive_seed(seed, &[tag::GOVERN_W, index_key(index)]),
        model.space().clone(),
    )
}

/// The uniform `V_n`.
pub fn splice_height(seed: u64, index: i64) -> f64 {
    Substream::new(seed, &[tag::GOVERN_V, index_key(index)]).uniform()
}

/// Extracts `U_start, …, U_{start+len-1}` for `path`, observed after
/// `context` (oldest first).
pub fn extract_innovations(
    model: &ChainModel,
    context: &[State],
    path: &[State],
    start: i64,
    seed: u64,
) -> Result<GoverningSequence> {
    let mut history = context.to_vec();
    let mut sources = Vec::with_capacity(path.len());
    let mut recursion_check = Vec::with_capacity(path.len());
    for (i, &x) in path.iter().enumerate() {
        let n = start + i as i64;
        let f = model.kernel(&history).map_err(|e| e.at(n))?;
        if !(f.value(x) > 0.0) {
            return Err(Error::InadmissiblePath { index: n });
        }
        let region = Region::subgraph(&f).map_err(|e| e.at(n))?;
        let u = splice(&fresh_source(model, seed, n), &region, x, splice_height(seed, n))
            .map_err(|e| e.at(n))?;
        recursion_check.push(couple(&u, &f).map_err(|e| e.at(n))?.x == x);
        sources.push(u);
        history.push(x);
    }
    Ok(GoverningSequence {
        start,
        sources,
        recursion_check,
    })
}

/// Re-runs the chain recursion on extracted innovations.
pub fn replay(model: &ChainModel, context: &[State], seq: &GoverningSequence) -> Result<Vec<State>> {
    simulate_path(model, context, &seq.sources)
}
