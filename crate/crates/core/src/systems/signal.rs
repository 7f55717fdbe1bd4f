//! Named seeded input-signal generators and CSV sequence loading.
//!
//! Signals parse from compact specs: `"uniform(-2,2)"` draws i.i.d.
//! samples, `"sinusoid(amp,freq)"` evaluates `amp * sin(2*pi*freq*k)`
//! (an optional third argument adds a phase), `"constant(c)"` is
//! constant, and `+` sums components, e.g.
//! `"sinusoid(1,0.04)+sinusoid(1,0.1)"`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputSignal {
    Uniform { lo: f64, hi: f64 },
    Sinusoid { amp: f64, freq: f64, phase: f64 },
    Constant(f64),
    Sum(Vec<InputSignal>),
}

impl InputSignal {
    /// Parses a signal spec; see the module docs for the grammar.
    pub fn parse(spec: &str) -> Result<InputSignal> {
        let parts: Vec<&str> = split_top_level(spec.trim());
        if parts.is_empty() {
            return Err(Error::BadSignalSpec(spec.into()));
        }
        if parts.len() > 1 {
            let terms = parts
                .into_iter()
                .map(InputSignal::parse)
                .collect::<Result<Vec<_>>>()?;
            return Ok(InputSignal::Sum(terms));
        }
        parse_term(parts[0]).ok_or_else(|| Error::BadSignalSpec(spec.into()))
    }

    /// Samples `len` values at steps `k = k0, k0+1, ...`.
    pub fn generate(&self, len: usize, k0: i64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|i| self.value_at(k0 + i as i64, &mut rng)).collect()
    }

    fn value_at(&self, k: i64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InputSignal::Uniform { lo, hi } => rng.gen_range(*lo..*hi),
            InputSignal::Sinusoid { amp, freq, phase } => {
                amp * (2.0 * std::f64::consts::PI * freq * k as f64 + phase).sin()
            }
            InputSignal::Constant(c) => *c,
            InputSignal::Sum(terms) => terms.iter().map(|t| t.value_at(k, rng)).sum(),
        }
    }
}

fn split_top_level(spec: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    for (i, ch) in spec.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            '+' if depth == 0 => {
                parts.push(spec[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(spec[start..].trim());
    parts.retain(|p| !p.is_empty());
    parts
}

fn parse_term(term: &str) -> Option<InputSignal> {
    let open = term.find('(')?;
    if !term.ends_with(')') {
        return None;
    }
    let name = term[..open].trim();
    let args: Vec<f64> = term[open + 1..term.len() - 1]
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    match (name, args.as_slice()) {
        ("uniform", [lo, hi]) if hi > lo => Some(InputSignal::Uniform { lo: *lo, hi: *hi }),
        ("sinusoid", [amp, freq]) => Some(InputSignal::Sinusoid { amp: *amp, freq: *freq, phase: 0.0 }),
        ("sinusoid", [amp, freq, phase]) => {
            Some(InputSignal::Sinusoid { amp: *amp, freq: *freq, phase: *phase })
        }
        ("constant", [c]) => Some(InputSignal::Constant(*c)),
        _ => None,
    }
}

/// Loads a scalar sequence from CSV: one row per step, last field is
/// the value; a leading non-numeric header row is skipped.
pub fn load_sequence_csv<R: std::io::Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let Some(field) = record.iter().last() else { continue };
        match field.trim().parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::InvalidParameter(format!(
                    "row {}: cannot parse {field:?} as a number: {e}",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_generate_uniform() {
        let sig = InputSignal::parse("uniform(-2, 2)").unwrap();
        let xs = sig.generate(1000, 1, 42);
        assert!(xs.iter().all(|&x| (-2.0..2.0).contains(&x)));
        assert_eq!(xs, sig.generate(1000, 1, 42), "seeded generation is deterministic");
    }

    #[test]
    fn sinusoid_sum_periodicity() {
        // sin(2 pi k / 25) + sin(pi k / 5) vanishes at k = 25.
        let sig = InputSignal::parse("sinusoid(1,0.04)+sinusoid(1,0.1)").unwrap();
        let xs = sig.generate(30, 1, 0);
        assert!(xs[24].abs() < 1e-12, "k = 25 gave {}", xs[24]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(InputSignal::parse("wave(1)").is_err());
        assert!(InputSignal::parse("uniform(2,-2)").is_err());
        assert!(InputSignal::parse("").is_err());
    }

    #[test]
    fn csv_loading_skips_header() {
        let data = "k,w\n1,0.5\n2,-0.25\n";
        let seq = load_sequence_csv(data.as_bytes()).unwrap();
        assert_eq!(seq, vec![0.5, -0.25]);
    }
}
