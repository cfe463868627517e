//! Closed-form model-state memory with and without compression.
//!
//! Dense mixed precision with Adam needs 20 bytes per parameter
//! (2 + 2 + 4 + 4 + 8). With compression at sparsity `p` and `f = 1 - p`:
//! `18·f·phi` for the compressed states, `4·f·phi` for indices, `2·phi` for
//! the dense half parameters and `2·f·phi` for the optimizer's transient
//! half copy, i.e. `24·f·phi + 2·phi`.

use num_rational::Ratio;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::sparsity::{format_ratio, Sparsity};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryReport {
    pub phi: u64,
    pub p: Sparsity,
    pub bytes_default: Ratio<i128>,
    pub bytes_samo: Ratio<i128>,
    pub bytes_saved: Ratio<i128>,
    pub savings_fraction: Ratio<i128>,
}

/// One CSV row: `phi,p,bytes_default,bytes_samo,bytes_saved,savings_fraction`.
#[derive(Clone, Debug, Serialize)]
pub struct MemoryRow {
    pub phi: String,
    pub p: String,
    pub bytes_default: String,
    pub bytes_samo: String,
    pub bytes_saved: String,
    pub savings_fraction: String,
}

pub fn memory_model(phi: u64, p: Sparsity) -> MemoryReport {
    let phi_r = Ratio::from_integer(phi as i128);
    let int = |v: i128| Ratio::from_integer(v);
    let p_r = p.ratio();
    let bytes_default = int(20) * phi_r;
    let bytes_samo = int(24) * p.kept() * phi_r + int(2) * phi_r;
    let bytes_saved = (int(24) * p_r - int(6)) * phi_r;
    let savings_fraction = (int(24) * p_r - int(6)) / int(20);
    MemoryReport {
        phi,
        p,
        bytes_default,
        bytes_samo,
        bytes_saved,
        savings_fraction,
    }
}

impl MemoryReport {
    pub fn bytes_samo_f64(&self) -> f64 {
        self.bytes_samo.to_f64().unwrap_or(f64::NAN)
    }

    pub fn savings_fraction_f64(&self) -> f64 {
        self.savings_fraction.to_f64().unwrap_or(f64::NAN)
    }

    pub fn row(&self) -> MemoryRow {
        MemoryRow {
            phi: self.phi.to_string(),
            p: self.p.to_string(),
            bytes_default: format_ratio(self.bytes_default),
            bytes_samo: format_ratio(self.bytes_samo),
            bytes_saved: format_ratio(self.bytes_saved),
            savings_fraction: format_ratio(self.savings_fraction),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(s: &str) -> Sparsity {
        s.parse().unwrap()
    }

    #[test]
    fn savings_at_reported_points() {
        assert_eq!(
            memory_model(1000, sp("0.9")).savings_fraction,
            Ratio::new(78, 100)
        );
        assert_eq!(
            memory_model(1000, sp("0.8")).savings_fraction,
            Ratio::new(66, 100)
        );
        assert_eq!(
            memory_model(1000, sp("0.25")).savings_fraction,
            Ratio::from_integer(0)
        );
        assert_eq!(
            memory_model(1000, sp("0.25")).bytes_saved,
            Ratio::from_integer(0)
        );
    }

    #[test]
    fn report_identities() {
        for pct in 0..=100 {
            let p = Sparsity::new(Ratio::new(pct, 100)).unwrap();
            let r = memory_model(12345, p);
            assert_eq!(r.bytes_default, Ratio::from_integer(20 * 12345));
            assert_eq!(r.bytes_default - r.bytes_samo, r.bytes_saved);
            if pct < 25 {
                assert!(r.bytes_saved < Ratio::from_integer(0));
            }
        }
        let saved: Vec<_> = (0..=100)
            .map(|pct| memory_model(7, Sparsity::new(Ratio::new(pct, 100)).unwrap()).bytes_saved)
            .collect();
        assert!(saved.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dense_case_is_twenty_two_plus_excess() {
        let r = memory_model(100, Sparsity::ZERO);
        assert_eq!(r.bytes_samo, Ratio::from_integer(2600));
        assert_eq!(r.row().savings_fraction, "-0.3");
    }
}
