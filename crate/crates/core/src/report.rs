//! Check reports: one line per verified item, an overall verdict, and the
//! wall-clock cost. These are what the command-line front end serializes.

use std::time::Instant;

use serde::Serialize;

/// One verified item: an identifier (generator name, equation label, chain
/// step), the reduced residual or other witness in canonical text, and
/// whether it vanished.
#[derive(Clone, Debug, Serialize)]
pub struct ReportItem {
    pub id: String,
    pub detail: String,
    pub is_zero: bool,
}

impl ReportItem {
    pub fn new(id: impl Into<String>, detail: impl Into<String>, is_zero: bool) -> ReportItem {
        ReportItem { id: id.into(), detail: detail.into(), is_zero }
    }
}

/// Outcome of a check run: pass exactly when every item vanished.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub subject: String,
    pub status: String,
    pub items: Vec<ReportItem>,
    pub timing_ms: u128,
}

impl CheckReport {
    pub fn new(subject: impl Into<String>, items: Vec<ReportItem>, started: Instant) -> CheckReport {
        let status = if items.iter().all(|it| it.is_zero) { "pass" } else { "fail" };
        CheckReport {
            subject: subject.into(),
            status: status.to_string(),
            items,
            timing_ms: started.elapsed().as_millis(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == "pass"
    }

    /// Fold several reports into one, keeping per-item identities.
    pub fn merge(subject: impl Into<String>, parts: Vec<CheckReport>, started: Instant) -> CheckReport {
        let items = parts.into_iter().flat_map(|r| r.items).collect();
        CheckReport::new(subject, items, started)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_follows_the_items() {
        let t = Instant::now();
        let good = CheckReport::new("s", vec![ReportItem::new("a", "0", true)], t);
        assert!(good.passed());
        let bad = CheckReport::new(
            "s",
            vec![ReportItem::new("a", "0", true), ReportItem::new("b", "W_t", false)],
            t,
        );
        assert!(!bad.passed());
        assert_eq!(bad.status, "fail");
    }
}
