use crate::error::{Error, Result};

pub const DEFAULT_LIR_THRESHOLD: f64 = 0.95;

/// Solo and simultaneous backlogged throughputs of a link pair, packets/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LirMeasurement {
    pub c11: f64,
    pub c22: f64,
    pub c31: f64,
    pub c32: f64,
}

impl LirMeasurement {
    pub fn lir(&self) -> Result<f64> {
        let denom = self.c11 + self.c22;
        if !(denom > 0.0) {
            return Err(Error::ZeroLirDenominator);
        }
        Ok((self.c31 + self.c32) / denom)
    }
}

/// True when the pair interferes, i.e. `lir <= threshold`.
pub fn classify_lir(m: &LirMeasurement, threshold: f64) -> Result<bool> {
    Ok(m.lir()? <= threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(c11: f64, c22: f64, c31: f64, c32: f64) -> LirMeasurement {
        LirMeasurement { c11, c22, c31, c32 }
    }

    #[test]
    fn no_degradation_is_not_interfering() {
        let x = m(800.0, 700.0, 800.0, 700.0);
        assert_eq!(x.lir().unwrap(), 1.0);
        assert!(!classify_lir(&x, DEFAULT_LIR_THRESHOLD).unwrap());
    }

    #[test]
    fn even_sharing_is_interfering() {
        let x = m(800.0, 700.0, 400.0, 350.0);
        assert_eq!(x.lir().unwrap(), 0.5);
        assert!(classify_lir(&x, DEFAULT_LIR_THRESHOLD).unwrap());
    }

    #[test]
    fn zero_denominator() {
        assert!(matches!(
            classify_lir(&m(0.0, 0.0, 0.0, 0.0), 0.95),
            Err(Error::ZeroLirDenominator)
        ));
    }

    proptest! {
        #[test]
        fn lowering_c31_never_clears_interference(
            c11 in 1.0..1000.0f64, c22 in 1.0..1000.0f64,
            c31 in 0.0..1000.0f64, c32 in 0.0..1000.0f64, cut in 0.0..1.0f64,
        ) {
            let before = classify_lir(&m(c11, c22, c31, c32), 0.95).unwrap();
            let after = classify_lir(&m(c11, c22, c31 * cut, c32), 0.95).unwrap();
            prop_assert!(!before || after);
        }
    }
}
