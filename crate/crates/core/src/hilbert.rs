//! Truncated product basis: transmon (x) cavity photons (x) one collective
//! excitation number per spin ensemble.
//!
//! Only the fully symmetric Dicke sector of each ensemble is kept, so an
//! ensemble of 1e8 spins still contributes just k_max + 1 levels; the spin
//! number N_s enters matrix elements, never the basis size.

use crate::error::{Error, Result};
use crate::params::{EnsembleParams, SpinModel};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Default hard cap on enumerated states.
pub const DEFAULT_STATE_CAP: usize = 20_000;

/// Inclusive truncation bounds of the product space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceTruncation {
    /// Max photon number kept.
    pub n_max: u32,
    /// Max collective excitation per ensemble.
    pub k_max: u32,
    /// Optional cap on transmon + photons + sum(k).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_excitation_max: Option<u32>,
}

impl Default for SpaceTruncation {
    /// Two manifolds above the qubit pair, enough to bound truncation
    /// leakage in embedded-ladder studies.
    fn default() -> Self {
        SpaceTruncation { n_max: 4, k_max: 3, total_excitation_max: Some(4) }
    }
}

impl SpaceTruncation {
    pub fn validate(&self) -> Result<()> {
        // n_max = 0 is allowed: cavity-eliminated effective spaces carry no
        // photons at all.
        if self.k_max < 1 {
            return Err(Error::validation("k_max must be >= 1"));
        }
        if let Some(t) = self.total_excitation_max {
            if t < 1 {
                return Err(Error::validation("total_excitation_max must be >= 1 when set"));
            }
        }
        Ok(())
    }
}

/// One product state: transmon level (0 = |a>, 1 = |b>), photon number, and
/// the collective excitation of each ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisState {
    pub transmon: u8,
    pub photons: u32,
    pub k: Vec<u32>,
}

impl BasisState {
    pub fn total_excitation(&self) -> u32 {
        self.transmon as u32 + self.photons + self.k.iter().sum::<u32>()
    }

    /// Human-readable label like `|b,1;k=0,2>`.
    pub fn label(&self) -> String {
        let t = if self.transmon == 0 { 'a' } else { 'b' };
        let ks: Vec<String> = self.k.iter().map(|k| k.to_string()).collect();
        format!("|{t},{};k={}>", self.photons, ks.join(","))
    }
}

/// Indices of one total-excitation block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExcitationBlock {
    pub excitation: u32,
    pub indices: Vec<usize>,
}

/// Deterministically ordered basis with bidirectional index maps and the
/// total-excitation block partition.
#[derive(Debug, Clone)]
pub struct EnumeratedBasis {
    states: Vec<BasisState>,
    index: HashMap<BasisState, usize>,
    blocks: Vec<ExcitationBlock>,
    truncation: SpaceTruncation,
    ensemble_count: usize,
}

impl EnumeratedBasis {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[BasisState] {
        &self.states
    }

    pub fn state_at(&self, i: usize) -> &BasisState {
        &self.states[i]
    }

    pub fn index_of(&self, state: &BasisState) -> Option<usize> {
        self.index.get(state).copied()
    }

    pub fn blocks(&self) -> &[ExcitationBlock] {
        &self.blocks
    }

    pub fn truncation(&self) -> SpaceTruncation {
        self.truncation
    }

    pub fn ensemble_count(&self) -> usize {
        self.ensemble_count
    }

    /// Block id of every index, aligned with state order.
    pub fn block_of(&self) -> Vec<usize> {
        let mut out = vec![0usize; self.states.len()];
        for (b, block) in self.blocks.iter().enumerate() {
            for &i in &block.indices {
                out[i] = b;
            }
        }
        out
    }

    /// The block holding states of the given total excitation.
    pub fn block_with_excitation(&self, excitation: u32) -> Option<&ExcitationBlock> {
        self.blocks.iter().find(|b| b.excitation == excitation)
    }
}

/// Enumerates every admissible state under the default size cap.
pub fn enumerate_basis(trunc: &SpaceTruncation, ensembles: &[EnsembleParams]) -> Result<EnumeratedBasis> {
    enumerate_basis_with_cap(trunc, ensembles, DEFAULT_STATE_CAP)
}

/// Enumeration with an explicit hard cap on the state count.
pub fn enumerate_basis_with_cap(
    trunc: &SpaceTruncation,
    ensembles: &[EnsembleParams],
    cap: usize,
) -> Result<EnumeratedBasis> {
    trunc.validate()?;
    if ensembles.is_empty() {
        return Err(Error::validation("at least one spin ensemble is required"));
    }
    let k_caps: Vec<u32> = ensembles
        .iter()
        .map(|e| trunc.k_max.min(u32::try_from(e.n_s).unwrap_or(u32::MAX)))
        .collect();
    let budget = trunc.total_excitation_max.unwrap_or(u32::MAX);

    let mut states = Vec::new();
    for transmon in 0u8..=1 {
        let after_t = match budget.checked_sub(transmon as u32) {
            Some(b) => b,
            None => continue,
        };
        for photons in 0..=trunc.n_max.min(after_t) {
            let after_p = after_t - photons;
            let mut k = vec![0u32; ensembles.len()];
            loop {
                let k_sum: u32 = k.iter().sum();
                if k_sum <= after_p {
                    states.push(BasisState { transmon, photons, k: k.clone() });
                    if states.len() > cap {
                        return Err(Error::size_cap(format!(
                            "basis exceeds the {cap}-state cap; reduce n_max/k_max or set total_excitation_max"
                        )));
                    }
                }
                // Odometer over the k vector: rightmost digit first, carry
                // by resetting saturated digits.
                let mut advanced = false;
                for pos in (0..k.len()).rev() {
                    if k[pos] < k_caps[pos] {
                        k[pos] += 1;
                        advanced = true;
                        break;
                    }
                    k[pos] = 0;
                }
                if !advanced {
                    break;
                }
            }
        }
    }

    states.sort_by(|a, b| {
        (a.total_excitation(), a.transmon, a.photons, &a.k)
            .cmp(&(b.total_excitation(), b.transmon, b.photons, &b.k))
    });

    let mut index = HashMap::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        index.insert(s.clone(), i);
    }
    let mut blocks: Vec<ExcitationBlock> = Vec::new();
    for (i, s) in states.iter().enumerate() {
        let exc = s.total_excitation();
        match blocks.last_mut() {
            Some(b) if b.excitation == exc => b.indices.push(i),
            _ => blocks.push(ExcitationBlock { excitation: exc, indices: vec![i] }),
        }
    }

    Ok(EnumeratedBasis {
        states,
        index,
        blocks,
        truncation: *trunc,
        ensemble_count: ensembles.len(),
    })
}

/// Collective raising amplitude <k+1| S_+ |k> for an ensemble of n_s spins.
///
/// The exact Dicke form sqrt((k+1)(N_s - k)) vanishes at full inversion;
/// the bosonic form sqrt((k+1) N_s) is its N_s >> k limit.
pub fn collective_raising_element(n_s: u64, k: u32, model: SpinModel) -> f64 {
    let kf = k as f64;
    let ns = n_s as f64;
    match model {
        SpinModel::ExactDicke => {
            if k as u64 >= n_s {
                0.0
            } else {
                ((kf + 1.0) * (ns - kf)).sqrt()
            }
        }
        SpinModel::Bosonic => ((kf + 1.0) * ns).sqrt(),
    }
}

/// The total-excitation partition of a basis.
pub fn excitation_blocks(basis: &EnumeratedBasis) -> &[ExcitationBlock] {
    basis.blocks()
}
