//! JSON file formats for spaces, functions, fragments, derivations, currents, k-vectors and
//! representations.

use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::alberti::AlbertiRep;
use crate::currents::{Current, FragmentTerm};
use crate::derivations::{CarrierEntry, Derivation};
use crate::error::{Error, Result};
use crate::exterior::KVector;
use crate::fragments::Fragment;
use crate::space::{FnDict, Measure, MetricSpace};

/// Reads a JSON file; parse errors carry the line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse_json(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))
}

/// JSON number, with non-finite values written as the strings `"inf"`, `"-inf"`, `"nan"`.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceFile {
    pub points: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<Vec<Vec<f64>>>,
    pub mu: Vec<f64>,
}

impl SpaceFile {
    pub fn build(&self) -> Result<(MetricSpace, Measure)> {
        let space = match (&self.coords, &self.dist) {
            (Some(c), None) => MetricSpace::from_coords(self.points.clone(), c.clone())?,
            (None, Some(d)) => MetricSpace::from_dist(self.points.clone(), d.clone())?,
            _ => return Err(Error::Parse("space file needs exactly one of \"coords\" and \"dist\"".into())),
        };
        if self.mu.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), got: self.mu.len() });
        }
        Ok((space, Measure::new(self.mu.clone())?))
    }

    pub fn from_space(space: &MetricSpace, mu: &[f64]) -> Self {
        let (coords, dist) = match space.coords() {
            Some(c) => (Some(c.to_vec()), None),
            None => (None, Some(space.dist_matrix())),
        };
        SpaceFile { points: space.ids().to_vec(), coords, dist, mu: mu.to_vec() }
    }
}

/// `{"name": [values...]}` in file order.
pub fn functions_from_value(v: &Value, space: &MetricSpace) -> Result<Vec<(String, Vec<f64>)>> {
    let Value::Object(map) = v else {
        return Err(Error::Parse("functions file must be an object of name → values".into()));
    };
    let mut out = Vec::with_capacity(map.len());
    for (name, values) in map {
        let values: Vec<f64> = serde_json::from_value(values.clone())
            .map_err(|e| Error::Parse(format!("function {name}: {e}")))?;
        if values.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), got: values.len() });
        }
        out.push((name.clone(), values));
    }
    Ok(out)
}

pub fn functions_to_value(entries: &[(String, Vec<f64>)]) -> Value {
    let mut map = Map::new();
    for (name, values) in entries {
        map.insert(name.clone(), json!(values));
    }
    Value::Object(map)
}

/// Dictionary `1, f − f(b), …` from named functions, rescaled to be 1-Lipschitz; constant
/// entries are dropped.
pub fn dictionary_from_functions(space: &MetricSpace, entries: Vec<(String, Vec<f64>)>) -> Result<FnDict> {
    let kept = entries.into_iter().filter(|(_, v)| v.iter().any(|&x| x != v[0])).collect();
    FnDict::normalized(space, 0, kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentFile {
    pub domain: Vec<f64>,
    pub trace: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap: Option<f64>,
}

impl FragmentFile {
    pub fn build(&self, space: &MetricSpace) -> Result<Fragment> {
        let trace = self
            .trace
            .iter()
            .map(|id| space.index_of(id).ok_or_else(|| Error::Parse(format!("unknown point id {id:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let f = Fragment::new(self.domain.clone(), trace)?;
        Ok(match self.max_gap {
            Some(g) => f.with_max_gap(g),
            None => f,
        })
    }

    pub fn from_fragment(f: &Fragment, space: &MetricSpace) -> Self {
        FragmentFile {
            domain: f.domain.clone(),
            trace: f.trace.iter().map(|&p| space.ids()[p].clone()).collect(),
            max_gap: f.max_gap.is_finite().then_some(f.max_gap),
        }
    }
}

pub fn fragments_from_files(files: &[FragmentFile], space: &MetricSpace) -> Result<Vec<Fragment>> {
    files.iter().map(|f| f.build(space)).collect()
}

/// Index into a separate fragment list, or an inline fragment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FragRef {
    Index(usize),
    Inline(FragmentFile),
}

impl FragRef {
    pub fn resolve(&self, list: &[Fragment], space: &MetricSpace) -> Result<Fragment> {
        match self {
            FragRef::Index(i) => list
                .get(*i)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("fragment reference {i} outside the fragment list"))),
            FragRef::Inline(f) => f.build(space),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarrierFile {
    pub fragment: FragRef,
    #[serde(rename = "P")]
    pub p: f64,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivationFile {
    pub carrier: Vec<CarrierFile>,
    /// Defaults to the space measure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

impl DerivationFile {
    pub fn build(&self, mu: &[f64], list: &[Fragment], space: &MetricSpace) -> Result<Derivation> {
        let carrier = self
            .carrier
            .iter()
            .map(|c| CarrierEntry::new(c.fragment.resolve(list, space)?, c.p, c.nu.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mu = self.mu.clone().unwrap_or_else(|| mu.to_vec());
        if mu.len() != space.len() {
            return Err(Error::LengthMismatch { expected: space.len(), got: mu.len() });
        }
        Derivation::new(mu, carrier)
    }

    pub fn from_derivation(d: &Derivation, space: &MetricSpace) -> Self {
        let carrier = d
            .effective_carrier()
            .into_iter()
            .map(|e| CarrierFile {
                fragment: FragRef::Inline(FragmentFile::from_fragment(&e.fragment, space)),
                p: e.weight,
                nu: e.nu,
            })
            .collect();
        DerivationFile { carrier, mu: Some(d.mu().to_vec()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub fragment: FragRef,
    #[serde(default = "one")]
    pub weight: f64,
    /// Defaults to Lebesgue measure on the edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KVectorFile {
    #[serde(rename = "N")]
    pub n_basis: usize,
    pub k: usize,
    pub tuples: Vec<Vec<usize>>,
    pub coeffs: Vec<Vec<f64>>,
}

impl KVectorFile {
    pub fn build(&self, basis: Arc<[Derivation]>) -> Result<KVector> {
        if self.n_basis != basis.len() {
            return Err(Error::LengthMismatch { expected: self.n_basis, got: basis.len() });
        }
        KVector::new(basis, self.k, self.tuples.clone(), self.coeffs.clone())
    }

    pub fn from_kvector(xi: &KVector) -> Self {
        KVectorFile { n_basis: xi.basis.len(), k: xi.k, tuples: xi.tuples.clone(), coeffs: xi.coeffs.clone() }
    }
}

/// `{"k":1,"form":"fragments","terms":[…]}` or
/// `{"k":k,"form":"precurrent","basis":[derivations],"N":…,"tuples":…,"coeffs":…,"mu"?:…}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentFile {
    pub k: usize,
    pub form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<TermFile>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<Vec<DerivationFile>>,
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n_basis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuples: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

impl CurrentFile {
    pub fn build(&self, space: &MetricSpace, mu: &[f64], list: &[Fragment]) -> Result<Current> {
        let n = space.len();
        match self.form.as_str() {
            "fragments" => {
                if self.k != 1 {
                    return Err(Error::ArityMismatch { expected: 1, got: self.k });
                }
                let terms = self
                    .terms
                    .as_deref()
                    .unwrap_or_default()
                    .iter()
                    .map(|t| {
                        let fragment = t.fragment.resolve(list, space)?;
                        let nu = t.nu.clone().unwrap_or_else(|| fragment.default_nu());
                        Ok(FragmentTerm { fragment, nu, weight: t.weight })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Current::fragments(n, terms)
            }
            "precurrent" => {
                let missing = |f: &str| Error::Parse(format!("precurrent needs \"{f}\""));
                let mu = self.mu.clone().unwrap_or_else(|| mu.to_vec());
                let basis = self
                    .basis
                    .as_ref()
                    .ok_or_else(|| missing("basis"))?
                    .iter()
                    .map(|d| d.build(&mu, list, space))
                    .collect::<Result<Vec<_>>>()?;
                let kv = KVectorFile {
                    n_basis: self.n_basis.unwrap_or(basis.len()),
                    k: self.k,
                    tuples: self.tuples.clone().ok_or_else(|| missing("tuples"))?,
                    coeffs: self.coeffs.clone().ok_or_else(|| missing("coeffs"))?,
                };
                Current::precurrent(kv.build(basis.into())?, mu)
            }
            other => Err(Error::Parse(format!("unknown current form {other:?}"))),
        }
    }

    pub fn from_current(t: &Current, space: &MetricSpace) -> Result<Self> {
        let blank = CurrentFile {
            k: t.k(),
            form: String::new(),
            terms: None,
            basis: None,
            n_basis: None,
            tuples: None,
            coeffs: None,
            mu: None,
        };
        match t {
            Current::FragmentSum { terms, .. } => Ok(CurrentFile {
                form: "fragments".into(),
                terms: Some(
                    terms
                        .iter()
                        .map(|s| TermFile {
                            fragment: FragRef::Inline(FragmentFile::from_fragment(&s.fragment, space)),
                            weight: s.weight,
                            nu: Some(s.nu.clone()),
                        })
                        .collect(),
                ),
                ..blank
            }),
            Current::Zero { k: 1, .. } => Ok(CurrentFile { form: "fragments".into(), terms: Some(Vec::new()), ..blank }),
            Current::Precurrent { xi, mu } => Ok(CurrentFile {
                form: "precurrent".into(),
                basis: Some(xi.basis.iter().map(|d| DerivationFile::from_derivation(d, space)).collect()),
                n_basis: Some(xi.basis.len()),
                tuples: Some(xi.tuples.clone()),
                coeffs: Some(xi.coeffs.clone()),
                mu: Some(mu.clone()),
                ..blank
            }),
            _ => Err(Error::UnsupportedForm("a fragment sum or a precurrent")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepFile {
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
    pub fragments: Vec<FragRef>,
}

impl RepFile {
    pub fn build(&self, list: &[Fragment], space: &MetricSpace) -> Result<AlbertiRep> {
        let fragments = self.fragments.iter().map(|f| f.resolve(list, space)).collect::<Result<Vec<_>>>()?;
        AlbertiRep::new(fragments, self.p.clone(), self.nu.clone())
    }

    pub fn from_rep(rep: &AlbertiRep, space: &MetricSpace) -> Self {
        RepFile {
            p: rep.p.clone(),
            nu: rep.nu.clone(),
            fragments: rep
                .fragments
                .iter()
                .map(|f| FragRef::Inline(FragmentFile::from_fragment(f, space)))
                .collect(),
        }
    }
}
