//! Communication-volume accounting and budget enforcement.
//!
//! A message carrying `cells` grid positions of `channels` values at `bits`
//! each costs `cells * channels * bits / 8` bytes; volume is reported as the
//! base-2 log of that byte count.

use crate::error::{Error, Result};

/// `log2(cells * channels * bits / 8)`.
pub fn comm_volume(cells: u64, channels: u64, bits: u64) -> Result<f64> {
    if cells == 0 || channels == 0 || bits == 0 {
        return Err(Error::UndefinedVolume(format!(
            "volume of cells={cells} channels={channels} bits={bits} is log2(0)"
        )));
    }
    Ok(((cells * channels * bits) as f64 / 8.0).log2())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommVolumeReport {
    /// Sending agent.
    pub sender: u16,
    /// Transmitted grid cells (every LL cell; no spatial selection).
    pub nonzero_cells: u64,
    pub channels: u64,
    pub bits: u64,
    pub bytes: u64,
    pub log2_volume: f64,
}

impl CommVolumeReport {
    pub fn new(sender: u16, cells: u64, channels: u64, bits: u64) -> Result<Self> {
        let log2_volume = comm_volume(cells, channels, bits)?;
        if (cells * channels * bits) % 8 != 0 {
            return Err(Error::UndefinedVolume("volume is not a whole number of bytes".into()));
        }
        Ok(Self { sender, nonzero_cells: cells, channels, bits, bytes: cells * channels * bits / 8, log2_volume })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BudgetPolicy {
    Reject,
    DropAgent,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetConfig {
    /// Total budget as `log2(bytes)`, summed over all links.
    pub total_budget_log2: f64,
    pub policy: BudgetPolicy,
}

impl BudgetConfig {
    pub fn new(total_budget_log2: f64, policy: BudgetPolicy) -> Result<Self> {
        if !(total_budget_log2 > 0.0) || !total_budget_log2.is_finite() {
            return Err(Error::config(format!("budget must be positive, got {total_budget_log2}")));
        }
        Ok(Self { total_budget_log2, policy })
    }

    /// Budget that admits exactly `links` messages of `per_link_bytes`.
    pub fn exact_fit(per_link_bytes: u64, links: u64, policy: BudgetPolicy) -> Result<Self> {
        Self::new(((per_link_bytes * links.max(1)) as f64).log2(), policy)
    }

    pub fn limit_bytes(&self) -> f64 {
        self.total_budget_log2.exp2()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BudgetOutcome {
    Accepted { total_bytes: u64 },
    Violation { total_bytes: u64, limit_bytes: f64 },
    /// Indices (into the input report list) kept and dropped, in drop order.
    Dropped { kept: Vec<usize>, dropped: Vec<usize>, total_bytes: u64 },
}

impl BudgetOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, BudgetOutcome::Accepted { .. })
    }

    pub fn kept(&self, n: usize) -> Vec<usize> {
        match self {
            BudgetOutcome::Accepted { .. } => (0..n).collect(),
            BudgetOutcome::Violation { .. } => vec![],
            BudgetOutcome::Dropped { kept, .. } => kept.clone(),
        }
    }
}

/// Sums raw bytes over all links and compares against `2^C` (inclusive).
pub fn check_budget(reports: &[CommVolumeReport], budget: &BudgetConfig) -> BudgetOutcome {
    let limit = budget.limit_bytes();
    let total: u64 = reports.iter().map(|r| r.bytes).sum();
    if total as f64 <= limit {
        return BudgetOutcome::Accepted { total_bytes: total };
    }
    match budget.policy {
        BudgetPolicy::Reject => BudgetOutcome::Violation { total_bytes: total, limit_bytes: limit },
        BudgetPolicy::DropAgent => {
            let mut kept: Vec<usize> = (0..reports.len()).collect();
            let mut dropped = Vec::new();
            let mut total = total;
            while total as f64 > limit {
                // Highest volume first; ties drop the higher sender id.
                let (pos, &idx) = kept
                    .iter()
                    .enumerate()
                    .max_by_key(|(_, &i)| (reports[i].bytes, reports[i].sender))
                    .expect("non-empty while over budget");
                kept.remove(pos);
                dropped.push(idx);
                total -= reports[idx].bytes;
            }
            BudgetOutcome::Dropped { kept, dropped, total_bytes: total }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_volumes() {
        assert_eq!(comm_volume(65536, 64, 32).unwrap(), 24.0);
        assert_eq!(comm_volume(16384, 64, 16).unwrap(), 21.0);
        assert_eq!(comm_volume(1, 1, 8).unwrap(), 0.0);
        assert!(matches!(comm_volume(0, 64, 16), Err(Error::UndefinedVolume(_))));
    }

    #[test]
    fn report_invariants() {
        let r = CommVolumeReport::new(3, 4096, 64, 16).unwrap();
        assert_eq!(r.bytes, 4096 * 64 * 2);
        assert_eq!(r.log2_volume, (r.bytes as f64).log2());
    }

    fn link(sender: u16, log2: u32) -> CommVolumeReport {
        // channels * bits / 8 == 1 byte per cell
        CommVolumeReport::new(sender, 1 << log2, 1, 8).unwrap()
    }

    #[test]
    fn boundary_inclusive_and_violation() {
        let b = BudgetConfig::new(21.0, BudgetPolicy::Reject).unwrap();
        assert!(check_budget(&[link(1, 21)], &b).is_accepted());
        assert_eq!(
            check_budget(&[link(1, 21), link(2, 21)], &b),
            BudgetOutcome::Violation { total_bytes: 1 << 22, limit_bytes: (1u64 << 21) as f64 }
        );
        assert!(BudgetConfig::new(0.0, BudgetPolicy::Reject).is_err());
    }

    #[test]
    fn drop_agent_removes_largest_first() {
        // 2^20 + 2^19 + 2^18 against 2^19.6 (~ 794k): drop the 2^20 link,
        // still 786432 <= 794k -> stop.
        let b = BudgetConfig::new(19.6, BudgetPolicy::DropAgent).unwrap();
        let links = [link(1, 19), link(2, 20), link(3, 18)];
        assert_eq!(
            check_budget(&links, &b),
            BudgetOutcome::Dropped { kept: vec![0, 2], dropped: vec![1], total_bytes: (1 << 19) + (1 << 18) }
        );
        // Tighter budget forces a second drop.
        let b = BudgetConfig::new(18.5, BudgetPolicy::DropAgent).unwrap();
        assert_eq!(
            check_budget(&links, &b),
            BudgetOutcome::Dropped { kept: vec![2], dropped: vec![1, 0], total_bytes: 1 << 18 }
        );
    }
}
