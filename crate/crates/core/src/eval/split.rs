use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureRow;
use crate::rng::stream_rng;

pub const N_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitMode {
    ByTrial,
    ByParticipant,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::ByTrial => "trial",
            SplitMode::ByParticipant => "participant",
        }
    }
}

impl std::str::FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trial" | "bytrial" | "trials" => Ok(SplitMode::ByTrial),
            "participant" | "byparticipant" | "participants" => Ok(SplitMode::ByParticipant),
            _ => Err(Error::invalid(format!(
                "unknown split mode {s:?}; expected trial or participant"
            ))),
        }
    }
}

/// Identity of one row: country plus the participant and trial IDs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowKey {
    pub country: String,
    pub trial_id: u32,
    pub participant_id: u32,
}

impl RowKey {
    pub fn of(row: &FeatureRow) -> Self {
        RowKey {
            country: row.country_tag.clone(),
            trial_id: row.trial_id,
            participant_id: row.participant_id,
        }
    }

    pub fn unit(&self, mode: SplitMode) -> (String, u32) {
        match mode {
            SplitMode::ByTrial => (self.country.clone(), self.trial_id),
            SplitMode::ByParticipant => (self.country.clone(), self.participant_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub seed: u64,
    /// Row indices per fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl SplitPlan {
    pub fn n_rows(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Every row index outside `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != fold)
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

/// Shuffles the distinct units under `seed` and deals them round-robin into five folds.
pub fn make_splits_by_key(keys: &[RowKey], mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    let mut units: BTreeMap<(String, u32), Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        units.entry(k.unit(mode)).or_default().push(i);
    }
    if units.len() < N_FOLDS {
        return Err(Error::InsufficientData(format!(
            "{} distinct {} units; five-fold splitting needs at least {N_FOLDS}",
            units.len(),
            mode.as_str()
        )));
    }
    let mut order: Vec<Vec<usize>> = units.into_values().collect();
    order.shuffle(&mut stream_rng(seed, 0x73_706c_6974));
    let mut folds = vec![Vec::new(); N_FOLDS];
    for (u, rows) in order.into_iter().enumerate() {
        folds[u % N_FOLDS].extend(rows);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(SplitPlan { mode, seed, folds })
}

pub fn make_splits(rows: &[FeatureRow], mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    let keys: Vec<RowKey> = rows.iter().map(RowKey::of).collect();
    make_splits_by_key(&keys, mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn keys(participants: u32, trials_each: u32) -> Vec<RowKey> {
        (0..participants)
            .flat_map(|p| {
                (0..trials_each).map(move |t| RowKey {
                    country: "DE".into(),
                    trial_id: p * trials_each + t,
                    participant_id: p,
                })
            })
            .collect()
    }

    #[test]
    fn ten_participants_two_per_fold() {
        let k = keys(10, 7);
        let plan = make_splits_by_key(&k, SplitMode::ByParticipant, 1).unwrap();
        for f in &plan.folds {
            let ps: HashSet<u32> = f.iter().map(|&i| k[i].participant_id).collect();
            assert_eq!(ps.len(), 2);
            assert_eq!(f.len(), 14);
        }
    }

    #[test]
    fn partition_and_determinism() {
        let k = keys(13, 5);
        for mode in [SplitMode::ByTrial, SplitMode::ByParticipant] {
            let plan = make_splits_by_key(&k, mode, 42).unwrap();
            let mut all: Vec<usize> = plan.folds.concat();
            all.sort_unstable();
            assert_eq!(all, (0..k.len()).collect::<Vec<_>>());
            assert_eq!(plan, make_splits_by_key(&k, mode, 42).unwrap());
            let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
            if mode == SplitMode::ByTrial {
                assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn too_few_units() {
        assert!(make_splits_by_key(&keys(4, 10), SplitMode::ByParticipant, 0).is_err());
        assert!(make_splits_by_key(&keys(4, 10), SplitMode::ByTrial, 0).is_ok());
    }

    #[test]
    fn same_id_in_two_countries_is_two_units() {
        let mut k = keys(3, 2);
        k.extend(keys(3, 2).into_iter().map(|mut r| {
            r.country = "JP".into();
            r
        }));
        let plan = make_splits_by_key(&k, SplitMode::ByParticipant, 0).unwrap();
        assert_eq!(plan.folds.iter().filter(|f| !f.is_empty()).count(), 5);
    }
}
