//! Patient-grouped k-fold assignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotations::NoduleRecord;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_patient: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.fold_of_patient.get(patient_id).copied()
    }

    /// Writes each record's fold; errors on a patient missing from the
    /// assignment.
    pub fn apply(&self, records: &mut [NoduleRecord]) -> Result<()> {
        for r in records {
            r.fold = Some(self.fold_of(&r.patient_id).ok_or_else(|| {
                Error::InvalidConfig(format!("patient {} has no fold", r.patient_id))
            })?);
        }
        Ok(())
    }

    /// Nodule count per fold.
    pub fn fold_sizes(&self, records: &[NoduleRecord]) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for r in records {
            if let Some(f) = self.fold_of(&r.patient_id) {
                sizes[f] += 1;
            }
        }
        sizes
    }

    /// `(train, validation)` record indices for one fold.
    pub fn split_indices(&self, records: &[NoduleRecord], fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..records.len()).partition(|&i| self.fold_of(&records[i].patient_id) != Some(fold))
    }
}

/// Shuffles the distinct patients with `seed`, then gives each in turn to
/// the fold currently holding the fewest nodules (lowest index on ties).
pub fn grouped_kfold(records: &[NoduleRecord], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records {
        *counts.entry(r.patient_id.as_str()).or_default() += 1;
    }
    if counts.len() < k {
        return Err(Error::TooFewPatients {
            patients: counts.len(),
            folds: k,
        });
    }
    let mut patients: Vec<(&str, usize)> = counts.into_iter().collect();
    RngStream::new(seed).shuffle(&mut patients);
    let mut sizes = vec![0usize; k];
    let mut fold_of_patient = BTreeMap::new();
    for (p, n) in patients {
        let f = (0..k).min_by_key(|&f| (sizes[f], f)).expect("k > 0");
        sizes[f] += n;
        fold_of_patient.insert(p.to_string(), f);
    }
    Ok(FoldAssignment { k, fold_of_patient })
}
