use std::collections::BTreeMap;

use super::Domain;
use crate::error::{Error, Result};

/// Shared action width over a set of domains, with the coordinates each
/// domain actually uses.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedActionSpace {
    pub a_max: usize,
    pub masks: BTreeMap<Domain, Vec<bool>>,
}

pub fn pad_action_space(domains: &[Domain]) -> Result<PaddedActionSpace> {
    let a_max = domains
        .iter()
        .map(|d| d.action_dim())
        .max()
        .ok_or_else(|| Error::config("no domains to pad over"))?;
    let masks = domains
        .iter()
        .map(|&d| (d, (0..a_max).map(|i| i < d.action_dim()).collect()))
        .collect();
    Ok(PaddedActionSpace { a_max, masks })
}

impl PaddedActionSpace {
    /// The coordinates `domain` uses, dropping the padding.
    pub fn unpad(&self, domain: Domain, padded: &[f64]) -> Result<Vec<f64>> {
        let mask = self
            .masks
            .get(&domain)
            .ok_or_else(|| Error::Key(domain.id().to_string()))?;
        if padded.len() != self.a_max {
            return Err(Error::dim(format!(
                "padded action has {} values, expected {}",
                padded.len(),
                self.a_max
            )));
        }
        Ok(padded
            .iter()
            .zip(mask)
            .filter(|(_, used)| **used)
            .map(|(a, _)| *a)
            .collect())
    }

    /// Extends a domain action with zeros to `a_max`.
    pub fn pad(&self, action: &[f64]) -> Vec<f64> {
        let mut out = action.to_vec();
        out.resize(self.a_max, 0.0);
        out
    }
}
