//! Error-free floating-point summation.
//!
//! A sum is held as a non-overlapping expansion: a list of f64 partials,
//! increasing in magnitude, whose exact real sum is the represented value.
//! Adding a term never loses bits, so the value is independent of the order
//! in which terms arrive and `+x` followed by `-x` restores the previous
//! value exactly. [`ExactSum::value`] rounds the exact sum once.

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

/// Magnitude below which an `i64` converts to f64 without rounding.
const EXACT_INT: i64 = 1 << 53;

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_zero(&self) -> bool {
        self.partials.is_empty()
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials
    }

    /// Adds `x` exactly. Non-finite input is rejected.
    pub fn add(&mut self, mut x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Numeric("exact sum term"));
        }
        let mut kept = 0;
        for idx in 0..self.partials.len() {
            let mut y = self.partials[idx];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            return Err(Error::Numeric("exact sum overflow"));
        }
        self.partials.truncate(kept);
        if x != 0.0 {
            self.partials.push(x);
        }
        Ok(())
    }

    /// Adds `d * x` exactly.
    pub fn add_product(&mut self, d: i64, x: f64) -> Result<()> {
        if d.unsigned_abs() <= EXACT_INT as u64 {
            return self.add_exact_product(d as f64, x);
        }
        // Split so that both halves are exactly representable.
        let high = (d >> 26) << 26;
        self.add_exact_product(high as f64, x)?;
        self.add_exact_product((d - high) as f64, x)
    }

    fn add_exact_product(&mut self, a: f64, b: f64) -> Result<()> {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p)?;
        if e != 0.0 {
            self.add(e)?;
        }
        Ok(())
    }

    /// The exact sum rounded to nearest, ties to even.
    pub fn value(&self) -> f64 {
        let parts = &self.partials;
        let Some(&top) = parts.last() else {
            return 0.0;
        };
        let mut hi = top;
        let mut lo = 0.0;
        let mut k = parts.len() - 1;
        while k > 0 {
            k -= 1;
            let x = hi;
            let y = parts[k];
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // A discarded tail with the same sign as `lo` means the halfway
        // case was rounded the wrong way.
        if k > 0 && ((lo < 0.0 && parts[k - 1] < 0.0) || (lo > 0.0 && parts[k - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }

    pub(crate) fn write(&self, w: &mut ByteWriter) {
        w.u64(self.partials.len() as u64);
        for v in &self.partials {
            w.f64(*v);
        }
    }

    pub(crate) fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let n = r.len_prefix(8)?;
        let partials = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if partials.iter().any(|v| !v.is_finite() || *v == 0.0) {
            return Err(Error::Decode("invalid expansion component".into()));
        }
        Ok(ExactSum { partials })
    }
}
