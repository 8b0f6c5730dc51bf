//! Mixture config files and permutation dumps.
//!
//! Mixture configs are JSON objects with fixed keys:
//! `{ "n": 4, "components": [ {"phi": 0.5, "center": [1,2,3,4]} ], "weights": [1.0] }`.
//! Dumps hold one permutation per line; lines starting with `#` are comments,
//! except `# component=i`, which tags the next permutation.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MallowsMixture, MallowsModel};
use crate::perm::{Element, Permutation};

/// Weights must sum to one within this slack; they are renormalized after.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConfig {
    pub phi: f64,
    pub center: Vec<Element>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub n: usize,
    pub components: Vec<ComponentConfig>,
    pub weights: Vec<f64>,
}

fn field_err<T>(field: impl AsRef<str>, msg: impl AsRef<str>) -> Result<T> {
    Err(Error::InvalidArgument(format!(
        "{}: {}",
        field.as_ref(),
        msg.as_ref()
    )))
}

impl MixtureConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("mixture config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return field_err("n", "must be at least 1");
        }
        if self.n > usize::from(Element::MAX) {
            return field_err("n", "too large");
        }
        if self.components.is_empty() {
            return field_err("components", "must not be empty");
        }
        if self.weights.len() != self.components.len() {
            return field_err(
                "weights",
                format!(
                    "has {} entries but there are {} components",
                    self.weights.len(),
                    self.components.len()
                ),
            );
        }
        for (i, c) in self.components.iter().enumerate() {
            if !c.phi.is_finite() || !(0.0..=1.0).contains(&c.phi) {
                return field_err(
                    format!("components[{i}].phi"),
                    format!("{} not in [0, 1]", c.phi),
                );
            }
            if c.center.len() != self.n {
                return field_err(
                    format!("components[{i}].center"),
                    format!("length {} but n = {}", c.center.len(), self.n),
                );
            }
            if let Err(e) = Permutation::new(c.center.clone()) {
                return field_err(format!("components[{i}].center"), e.to_string());
            }
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if !w.is_finite() || w <= 0.0 {
                return field_err(format!("weights[{i}]"), format!("{w} is not positive"));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return field_err("weights", format!("sum to {sum}, expected 1"));
        }
        Ok(())
    }

    pub fn to_mixture(&self) -> Result<MallowsMixture> {
        self.validate()?;
        let comps = self
            .components
            .iter()
            .map(|c| MallowsModel::new(c.phi, Permutation::new(c.center.clone())?))
            .collect::<Result<Vec<_>>>()?;
        let sum: f64 = self.weights.iter().sum();
        let weights = self.weights.iter().map(|w| w / sum).collect();
        MallowsMixture::new(comps, weights)
    }

    pub fn from_mixture(mix: &MallowsMixture) -> Self {
        Self {
            n: mix.n(),
            components: mix
                .components()
                .iter()
                .map(|m| ComponentConfig {
                    phi: m.phi(),
                    center: m.center().as_slice().to_vec(),
                })
                .collect(),
            weights: mix.weights().to_vec(),
        }
    }
}

/// Writes one permutation per line, with a component tag before each when
/// `trace` is given.
pub fn write_permutations<W: Write>(
    out: &mut W,
    perms: &[Permutation],
    trace: Option<&[usize]>,
) -> std::io::Result<()> {
    for (i, p) in perms.iter().enumerate() {
        if let Some(t) = trace {
            writeln!(out, "# component={}", t[i])?;
        }
        writeln!(out, "{p}")?;
    }
    Ok(())
}

/// A parsed dump: permutations plus the component tag seen before each, if any.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PermutationDump {
    pub perms: Vec<Permutation>,
    pub trace: Vec<Option<usize>>,
}

pub fn read_permutations<R: BufRead>(input: R, n: Option<usize>) -> Result<PermutationDump> {
    let mut dump = PermutationDump::default();
    let mut pending = None;
    for (lineno, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("component=") {
                let c = v
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Parse(format!("line {}: bad component tag", lineno + 1)))?;
                pending = Some(c);
            }
            continue;
        }
        let p: Permutation = t
            .parse()
            .map_err(|e: Error| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let expect = n.or_else(|| dump.perms.first().map(Permutation::n));
        if let Some(n) = expect {
            if p.n() != n {
                return Err(Error::Parse(format!(
                    "line {}: length {} but n = {n}",
                    lineno + 1,
                    p.n()
                )));
            }
        }
        dump.perms.push(p);
        dump.trace.push(pending.take());
    }
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"n":3,"components":[{"phi":0.5,"center":[1,2,3]},{"phi":0.2,"center":[3,2,1]}],"weights":[0.4,0.6]}"#;

    #[test]
    fn roundtrip() {
        let cfg = MixtureConfig::from_json(GOOD).unwrap();
        let mix = cfg.to_mixture().unwrap();
        assert_eq!(mix.k(), 2);
        let back = MixtureConfig::from_mixture(&mix);
        assert_eq!(back, cfg);
        assert_eq!(MixtureConfig::from_json(&back.to_json()).unwrap(), cfg);
    }

    #[test]
    fn field_level_errors() {
        let bad = GOOD.replace("[3,2,1]", "[3,3,1]");
        let e = MixtureConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("components[1].center"), "{e}");

        let bad = GOOD.replace("0.2", "1.5");
        let e = MixtureConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("components[1].phi"), "{e}");

        let bad = GOOD.replace("0.6]", "0.7]");
        let e = MixtureConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("weights"), "{e}");

        let bad = GOOD.replace("\"n\":3", "\"n\":4");
        let e = MixtureConfig::from_json(&bad).unwrap_err().to_string();
        assert!(e.contains("components[0].center"), "{e}");

        assert!(MixtureConfig::from_json(r#"{"n":3}"#).is_err());
    }

    #[test]
    fn dump_roundtrip_with_trace() {
        let perms: Vec<Permutation> = ["3 1 4 2", "1 2 3 4"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        let mut buf = Vec::new();
        write_permutations(&mut buf, &perms, Some(&[1, 0])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# component=1\n3 1 4 2\n# component=0\n1 2 3 4\n");
        let dump = read_permutations(text.as_bytes(), Some(4)).unwrap();
        assert_eq!(dump.perms, perms);
        assert_eq!(dump.trace, vec![Some(1), Some(0)]);

        assert!(read_permutations("1 2 3\n1 2\n".as_bytes(), None).is_err());
        assert!(read_permutations("1 1 2\n".as_bytes(), None).is_err());
    }
}
