//! Per-channel factorized latent distribution and its coding tables.
//!
//! Each latent channel is modelled as a logistic distribution with a
//! learned location and log-scale. Rounded latents are coded against the
//! probability mass the model puts on each integer bin, floored so no
//! symbol gets infinite cost, then quantized onto a power-of-two
//! cumulative table for the range coder. Quantization is deterministic:
//! the same parameters always produce byte-identical tables, which is
//! what lets encoder and decoder agree across machines.

use crate::autodiff::graph::bin_prob;
use crate::{Error, Result};

/// Cumulative-table resolution used by the codec.
pub const PRECISION_BITS: u32 = 12;

/// Smallest probability any bin may be assigned before quantization.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

/// Quantized coding distribution for one latent channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    /// Latent integer represented by bin 0.
    pub min_sym: i32,
    /// `n_symbols + 1` cumulative frequencies: `cum[0] = 0`, strictly
    /// increasing, ending at `1 << PRECISION_BITS`.
    pub cum: Vec<u32>,
}

impl SymbolTable {
    pub fn n_symbols(&self) -> usize {
        self.cum.len() - 1
    }

    /// Bin index for a latent integer, if representable.
    pub fn bin_of(&self, value: i64) -> Result<usize> {
        let idx = value - self.min_sym as i64;
        if idx < 0 || idx >= self.n_symbols() as i64 {
            return Err(Error::Numeric(format!(
                "latent {value} outside coded range [{}, {}]",
                self.min_sym,
                self.min_sym + self.n_symbols() as i32 - 1
            )));
        }
        Ok(idx as usize)
    }

    /// Latent integer a bin index stands for.
    pub fn value_of(&self, bin: usize) -> i64 {
        self.min_sym as i64 + bin as i64
    }

    /// Cumulative interval of one bin, for the range coder.
    pub fn interval(&self, bin: usize) -> (u32, u32) {
        (self.cum[bin], self.cum[bin + 1])
    }

    /// Bin whose interval contains cumulative position `f`.
    pub fn find(&self, f: u32) -> usize {
        // cum is strictly increasing: partition_point gives the first
        // entry > f, whose predecessor starts the containing interval.
        self.cum.partition_point(|&c| c <= f) - 1
    }

    /// Exact codelength of one bin under this table, in bits.
    pub fn bits_of(&self, bin: usize) -> f64 {
        let w = (self.cum[bin + 1] - self.cum[bin]) as f64;
        -(w / (1u64 << PRECISION_BITS) as f64).log2()
    }
}

/// Quantizes the channel's logistic bin masses over `[min_sym, max_sym]`
/// onto the cumulative grid. Every bin keeps at least one count; the
/// rounding residue is settled on the heaviest bins so the total is
/// exact.
pub fn build_table(mu: f64, log_s: f64, min_sym: i32, max_sym: i32) -> Result<SymbolTable> {
    if min_sym > max_sym {
        return Err(Error::Config(format!("empty symbol range [{min_sym}, {max_sym}]")));
    }
    if !mu.is_finite() || !log_s.is_finite() {
        return Err(Error::Numeric(format!("non-finite model parameters ({mu}, {log_s})")));
    }
    let n = (max_sym as i64 - min_sym as i64 + 1) as usize;
    let total = 1u32 << PRECISION_BITS;
    if n as u32 > total / 2 {
        return Err(Error::Config(format!(
            "{n} symbols cannot all keep a count at {PRECISION_BITS}-bit precision"
        )));
    }

    let mut raw = Vec::with_capacity(n);
    let mut sum = 0.0;
    for k in 0..n {
        let p = bin_prob((min_sym as i64 + k as i64) as f64, mu, log_s, PROB_FLOOR);
        raw.push(p);
        sum += p;
    }

    let mut freqs: Vec<u32> = raw
        .iter()
        .map(|p| (((p / sum) * total as f64).round() as u32).max(1))
        .collect();
    let assigned: i64 = freqs.iter().map(|&f| f as i64).sum();
    let mut residue = total as i64 - assigned;
    if residue > 0 {
        let heaviest = argmax(&freqs);
        freqs[heaviest] += residue as u32;
    } else {
        while residue < 0 {
            let heaviest = argmax(&freqs);
            if freqs[heaviest] <= 1 {
                return Err(Error::Numeric("cannot settle frequency residue".into()));
            }
            let take = ((freqs[heaviest] - 1) as i64).min(-residue) as u32;
            freqs[heaviest] -= take;
            residue += take as i64;
        }
    }

    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0);
    for &f in &freqs {
        cum.push(cum.last().unwrap() + f);
    }
    debug_assert_eq!(*cum.last().unwrap(), total);
    Ok(SymbolTable { min_sym, cum })
}

/// First index of the largest element.
fn argmax(freqs: &[u32]) -> usize {
    let mut best = 0;
    for (i, &f) in freqs.iter().enumerate() {
        if f > freqs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sums_exactly_and_keeps_every_bin() {
        for (mu, log_s, lo, hi) in [
            (0.0, 0.0, -8, 8),
            (3.2, -2.5, -1, 12),
            (-100.0, 1.5, -4, 4),   // far-off location: floor dominates
            (0.0, -20.0, -30, 30),  // near-deterministic channel
            (0.4, 4.0, -2, 2),      // very wide: nearly uniform
        ] {
            let t = build_table(mu, log_s, lo, hi).unwrap();
            assert_eq!(t.n_symbols(), (hi - lo + 1) as usize);
            assert_eq!(t.cum[0], 0);
            assert_eq!(*t.cum.last().unwrap(), 1 << PRECISION_BITS);
            for w in t.cum.windows(2) {
                assert!(w[1] > w[0], "empty bin in table for ({mu}, {log_s})");
            }
        }
    }

    #[test]
    fn table_construction_is_deterministic() {
        let a = build_table(0.73, -1.21, -12, 15).unwrap();
        let b = build_table(0.73, -1.21, -12, 15).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sharp_model_concentrates_mass() {
        let t = build_table(2.0, -4.0, -8, 8).unwrap();
        let center = t.bin_of(2).unwrap();
        let (lo, hi) = t.interval(center);
        assert!(hi - lo > 3500, "central bin only got {}", hi - lo);
        // and the tails still decode
        assert_eq!(t.find(0), 0);
        assert_eq!(t.find((1 << PRECISION_BITS) - 1), t.n_symbols() - 1);
    }

    #[test]
    fn find_inverts_intervals() {
        let t = build_table(0.0, 0.5, -6, 6).unwrap();
        for bin in 0..t.n_symbols() {
            let (lo, hi) = t.interval(bin);
            assert_eq!(t.find(lo), bin);
            assert_eq!(t.find(hi - 1), bin);
        }
    }

    #[test]
    fn bin_lookup_checks_range() {
        let t = build_table(0.0, 0.0, -2, 2).unwrap();
        assert_eq!(t.bin_of(-2).unwrap(), 0);
        assert_eq!(t.bin_of(2).unwrap(), 4);
        assert_eq!(t.value_of(4), 2);
        assert!(t.bin_of(3).is_err());
        assert!(t.bin_of(-3).is_err());
    }

    #[test]
    fn uniform_bins_cost_their_log() {
        // four equal bins at 12 bits: 1024 counts, 2 bits each
        let t = SymbolTable { min_sym: 0, cum: vec![0, 1024, 2048, 3072, 4096] };
        for bin in 0..4 {
            assert_eq!(t.bits_of(bin), 2.0);
        }
    }

    #[test]
    fn degenerate_requests_are_rejected() {
        assert!(build_table(0.0, 0.0, 5, 4).is_err());
        assert!(build_table(f64::NAN, 0.0, -2, 2).is_err());
        assert!(build_table(0.0, 0.0, -2000, 2000).is_err());
    }
}
