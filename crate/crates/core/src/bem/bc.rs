//! Per-element boundary conditions.

use crate::error::{Error, Result};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    /// Potential u given; flux q unknown.
    Dirichlet,
    /// Flux q given; potential u unknown.
    Neumann,
}

/// One condition per element.
#[derive(Debug, Clone)]
pub struct BoundaryCondition {
    pub kinds: Vec<BcKind>,
    pub values: Vec<f64>,
}

impl BoundaryCondition {
    pub fn new(kinds: Vec<BcKind>, values: Vec<f64>) -> Result<Self> {
        if kinds.len() != values.len() {
            return Err(Error::BoundaryCondition(format!(
                "{} kinds for {} values",
                kinds.len(),
                values.len()
            )));
        }
        Ok(Self { kinds, values })
    }

    pub fn all_dirichlet(values: Vec<f64>) -> Self {
        Self {
            kinds: vec![BcKind::Dirichlet; values.len()],
            values,
        }
    }

    pub fn constant_dirichlet(n: usize, value: f64) -> Self {
        Self::all_dirichlet(vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn is_all_dirichlet(&self) -> bool {
        self.kinds.iter().all(|&k| k == BcKind::Dirichlet)
    }

    pub fn dirichlet_elements(&self) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == BcKind::Dirichlet)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn neumann_elements(&self) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == BcKind::Neumann)
            .map(|(i, _)| i)
            .collect()
    }

    /// Parses the CSV format `element_id,kind,value` with kind `d` or `n`.
    ///
    /// Every element in `0..n_elements` must receive exactly one condition.
    /// A header line `element_id,kind,value` is allowed.
    pub fn load_csv(path: impl AsRef<Path>, n_elements: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse_csv(&text, n_elements)
    }

    pub fn parse_csv(text: &str, n_elements: usize) -> Result<Self> {
        let mut kinds = vec![None; n_elements];
        let mut values = vec![0.0; n_elements];
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if lineno == 0 && line.to_ascii_lowercase().starts_with("element_id") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::BoundaryCondition(format!(
                    "line {}: expected `element_id,kind,value`, got {line:?}",
                    lineno + 1
                )));
            }
            let id: usize = fields[0].parse().map_err(|_| {
                Error::BoundaryCondition(format!(
                    "line {}: bad element id {:?}",
                    lineno + 1,
                    fields[0]
                ))
            })?;
            if id >= n_elements {
                return Err(Error::BoundaryCondition(format!(
                    "line {}: element id {id} out of range (mesh has {n_elements})",
                    lineno + 1
                )));
            }
            let kind = match fields[1] {
                "d" | "D" => BcKind::Dirichlet,
                "n" | "N" => BcKind::Neumann,
                other => {
                    return Err(Error::BoundaryCondition(format!(
                        "line {}: unknown condition kind {other:?} (expected d or n)",
                        lineno + 1
                    )))
                }
            };
            let value: f64 = fields[2].parse().map_err(|_| {
                Error::BoundaryCondition(format!(
                    "line {}: bad value {:?}",
                    lineno + 1,
                    fields[2]
                ))
            })?;
            if kinds[id].is_some() {
                return Err(Error::BoundaryCondition(format!(
                    "line {}: element {id} already has a condition",
                    lineno + 1
                )));
            }
            kinds[id] = Some(kind);
            values[id] = value;
        }
        let kinds = kinds
            .into_iter()
            .enumerate()
            .map(|(i, k)| {
                k.ok_or_else(|| {
                    Error::BoundaryCondition(format!("element {i} has no condition"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kinds, values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_valid_csv() {
        let text = "element_id,kind,value\n0,d,1.5\n1,n,-2.0\n2,D,0.0\n";
        let bc = BoundaryCondition::parse_csv(text, 3).unwrap();
        assert_eq!(bc.kinds[0], BcKind::Dirichlet);
        assert_eq!(bc.kinds[1], BcKind::Neumann);
        assert_eq!(bc.values[1], -2.0);
        assert_eq!(bc.dirichlet_elements(), vec![0, 2]);
        assert_eq!(bc.neumann_elements(), vec![1]);
    }

    #[test]
    fn unknown_kind_names_line() {
        let text = "0,d,1.0\n1,x,2.0\n";
        match BoundaryCondition::parse_csv(text, 2) {
            Err(Error::BoundaryCondition(msg)) => {
                assert!(msg.contains("line 2"), "{msg}");
                assert!(msg.contains('x'), "{msg}");
            }
            other => panic!("expected bc error, got {other:?}"),
        }
    }

    #[test]
    fn missing_and_duplicate_elements_rejected() {
        assert!(BoundaryCondition::parse_csv("0,d,1.0\n", 2).is_err());
        assert!(BoundaryCondition::parse_csv("0,d,1.0\n0,n,2.0\n", 1).is_err());
        assert!(BoundaryCondition::parse_csv("5,d,1.0\n", 1).is_err());
    }
}
