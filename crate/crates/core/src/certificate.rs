//! Decision records produced by every sampled or eigenvalue check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::noise::ExpectationScheme;
use crate::storage::DomainBox;

/// Scope line attached to every sampled certificate.
pub const SAMPLED_SCOPE: &str =
    "sampled over the declared domain box only; not a proof over all of R^n";
/// Scope line for eigenvalue (matrix inequality) checks.
pub const EIGEN_SCOPE: &str = "symmetric eigenvalue check of the matrix inequality (global)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Certified,
    Falsified,
    Inconclusive,
}

impl Status {
    /// CLI exit code: 0 certified, 1 falsified, 2 inconclusive.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Certified => 0,
            Status::Falsified => 1,
            Status::Inconclusive => 2,
        }
    }

    /// Conjunction of two checks: falsified dominates, then inconclusive.
    pub fn and(self, other: Status) -> Status {
        use Status::*;
        match (self, other) {
            (Falsified, _) | (_, Falsified) => Falsified,
            (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
            _ => Certified,
        }
    }
}

/// Absolute plus relative tolerance: `absolute + relative · scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    pub absolute: f64,
    pub relative: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            absolute: 1e-9,
            relative: 1e-7,
        }
    }
}

impl Tolerance {
    pub fn bound(&self, scale: f64) -> f64 {
        self.absolute + self.relative * scale.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub values: BTreeMap<String, f64>,
    pub margin: f64,
    pub std_error: f64,
    pub tolerance: f64,
}

/// One sampled evaluation of an inequality `lhs ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub check: String,
    pub point: Vec<f64>,
    pub margin: f64,
    pub std_error: f64,
    pub tolerance: f64,
}

impl SampleRecord {
    pub fn falsifies(&self) -> bool {
        self.margin > self.tolerance + 3.0 * self.std_error
    }

    pub fn within_tolerance(&self) -> bool {
        self.margin <= self.tolerance
    }
}

/// Outcome of a single inequality over its samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckSummary {
    pub inequality: String,
    pub status: Status,
    pub worst_margin: f64,
    pub samples: usize,
    pub witness: Option<Witness>,
}

/// Collects samples for one inequality.
#[derive(Debug, Clone)]
pub struct CheckBuilder {
    name: String,
    records: Vec<SampleRecord>,
    values: Vec<BTreeMap<String, f64>>,
}

impl CheckBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            records: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        point: &[f64],
        margin: f64,
        std_error: f64,
        tolerance: f64,
        values: &[(&str, f64)],
    ) {
        self.records.push(SampleRecord {
            check: self.name.clone(),
            point: point.to_vec(),
            margin,
            std_error,
            tolerance,
        });
        self.values.push(
            values
                .iter()
                .map(|(k, v)| ((*k).to_string(), *v))
                .collect(),
        );
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn finish(self) -> (CheckSummary, Vec<SampleRecord>) {
        let falsifier = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.falsifies())
            .max_by(|a, b| a.1.margin.total_cmp(&b.1.margin))
            .map(|(i, _)| i);
        let worst = self
            .records
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.margin.total_cmp(&b.1.margin))
            .map(|(i, _)| i);
        let status = if falsifier.is_some() {
            Status::Falsified
        } else if self.records.iter().all(SampleRecord::within_tolerance) {
            Status::Certified
        } else {
            Status::Inconclusive
        };
        let witness = falsifier.or(worst).map(|i| {
            let r = &self.records[i];
            Witness {
                point: r.point.clone(),
                values: self.values[i].clone(),
                margin: r.margin,
                std_error: r.std_error,
                tolerance: r.tolerance,
            }
        });
        let worst_margin = worst.map_or(f64::NEG_INFINITY, |i| self.records[i].margin);
        (
            CheckSummary {
                inequality: self.name,
                status,
                worst_margin,
                samples: self.records.len(),
                witness,
            },
            self.records,
        )
    }
}

/// How the samples behind a certificate were produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub scheme: Option<ExpectationScheme>,
    pub pairs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub status: Status,
    pub inequality: String,
    pub domain: Option<DomainBox>,
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub checks: Vec<CheckSummary>,
    pub provenance: Provenance,
    pub tolerance: Tolerance,
    pub samples: usize,
    pub scope: String,
    /// Headline numbers of the check, e.g. the sup of `G_β`.
    pub summary: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub records: Vec<SampleRecord>,
}

impl Certificate {
    /// Combines per-inequality checks into one decision.
    pub fn from_checks(
        inequality: impl Into<String>,
        domain: Option<DomainBox>,
        checks: Vec<CheckBuilder>,
        provenance: Provenance,
        tolerance: Tolerance,
    ) -> Self {
        let mut summaries = Vec::with_capacity(checks.len());
        let mut records = Vec::new();
        for c in checks {
            let (s, r) = c.finish();
            summaries.push(s);
            records.extend(r);
        }
        let status = summaries
            .iter()
            .fold(Status::Certified, |acc, s| acc.and(s.status));
        let deciding = summaries
            .iter()
            .filter(|s| s.status == Status::Falsified)
            .chain(summaries.iter().filter(|s| s.status == Status::Inconclusive))
            .chain(summaries.iter())
            .next();
        let witness = if status == Status::Certified {
            summaries
                .iter()
                .max_by(|a, b| a.worst_margin.total_cmp(&b.worst_margin))
                .and_then(|s| s.witness.clone())
        } else {
            deciding.and_then(|s| s.witness.clone())
        };
        let worst_margin = summaries
            .iter()
            .map(|s| s.worst_margin)
            .fold(f64::NEG_INFINITY, f64::max);
        let scope = if domain.is_some() {
            SAMPLED_SCOPE
        } else {
            EIGEN_SCOPE
        };
        Self {
            status,
            inequality: inequality.into(),
            domain,
            worst_margin,
            witness,
            samples: records.len(),
            checks: summaries,
            provenance,
            tolerance,
            scope: scope.to_string(),
            summary: BTreeMap::new(),
            notes: Vec::new(),
            records,
        }
    }

    /// A decision reached without sampling, e.g. a failed precondition.
    pub fn inconclusive(inequality: impl Into<String>, note: impl Into<String>) -> Self {
        Self {
            status: Status::Inconclusive,
            inequality: inequality.into(),
            domain: None,
            worst_margin: f64::NAN,
            witness: None,
            checks: Vec::new(),
            provenance: Provenance::default(),
            tolerance: Tolerance::default(),
            samples: 0,
            scope: SAMPLED_SCOPE.to_string(),
            summary: BTreeMap::new(),
            notes: vec![note.into()],
            records: Vec::new(),
        }
    }

    /// A certified result can only be weakened to inconclusive.
    pub fn downgrade(&mut self, note: impl Into<String>) {
        if self.status == Status::Certified {
            self.status = Status::Inconclusive;
        }
        self.notes.push(note.into());
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn check(&self, name: &str) -> Option<&CheckSummary> {
        self.checks.iter().find(|c| c.inequality == name)
    }

    pub fn is_certified(&self) -> bool {
        self.status == Status::Certified
    }

    /// Per-sample margins as CSV: `check,point,margin,std_error,tolerance`.
    pub fn write_margins_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "check,point,margin,std_error,tolerance")?;
        for r in &self.records {
            let point: Vec<String> = r.point.iter().map(|c| format!("{c:?}")).collect();
            writeln!(
                w,
                "{},{},{:?},{:?},{:?}",
                r.check,
                point.join(";"),
                r.margin,
                r.std_error,
                r.tolerance
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(samples: &[(f64, f64)]) -> CheckBuilder {
        let mut b = CheckBuilder::new("lhs");
        for (i, (m, se)) in samples.iter().enumerate() {
            b.push(&[i as f64], *m, *se, 1e-9, &[("lhs", *m)]);
        }
        b
    }

    #[test]
    fn status_rules() {
        let (s, _) = check(&[(-1.0, 0.0), (-0.5, 0.0)]).finish();
        assert_eq!(s.status, Status::Certified);
        assert_eq!(s.worst_margin, -0.5);
        let (s, _) = check(&[(-1.0, 0.0), (0.1, 0.01)]).finish();
        assert_eq!(s.status, Status::Falsified);
        assert_eq!(s.witness.unwrap().point, vec![1.0]);
        let (s, _) = check(&[(-1.0, 0.0), (0.01, 0.01)]).finish();
        assert_eq!(s.status, Status::Inconclusive);
    }

    #[test]
    fn falsified_witness_exceeds_band() {
        let (s, _) = check(&[(0.5, 0.1), (0.2, 0.0), (0.9, 0.5)]).finish();
        let w = s.witness.unwrap();
        assert!(w.margin > w.tolerance + 3.0 * w.std_error);
        assert_eq!(w.margin, 0.5);
    }

    #[test]
    fn conjunction() {
        use Status::*;
        assert_eq!(Certified.and(Inconclusive), Inconclusive);
        assert_eq!(Inconclusive.and(Falsified), Falsified);
        assert_eq!(Certified.and(Certified), Certified);
    }

    #[test]
    fn combined_certificate() {
        let cert = Certificate::from_checks(
            "test",
            None,
            vec![check(&[(-1.0, 0.0)]), check(&[(2.0, 0.0)])],
            Provenance::default(),
            Tolerance::default(),
        );
        assert_eq!(cert.status, Status::Falsified);
        assert_eq!(cert.worst_margin, 2.0);
        assert_eq!(cert.samples, 2);
        assert_eq!(cert.scope, EIGEN_SCOPE);
    }
}
