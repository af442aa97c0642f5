use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Event types and their ordered argument roles.
///
/// Role order is the decoding order of the record tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventSchema {
    types: Vec<String>,
    roles: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    types: Vec<String>,
    roles: IndexMap<String, Vec<String>>,
}

impl EventSchema {
    pub fn new(types: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, roles) in &types {
            if !seen.insert(name.as_str()) {
                return Err(Error::EventSchema(format!("duplicate type {name}")));
            }
            if roles.is_empty() {
                return Err(Error::EventSchema(format!("type {name} has no roles")));
            }
            let mut rs = HashSet::new();
            for r in roles {
                if !rs.insert(r.as_str()) {
                    return Err(Error::EventSchema(format!("duplicate role {r} in {name}")));
                }
            }
        }
        let (types, roles) = types.into_iter().unzip();
        Ok(Self { types, roles })
    }

    /// The five equity event types of the Chinese financial announcement
    /// corpus with their conventional role order (35 roles in total).
    pub fn chfinann() -> Self {
        let layout: [(&str, &[&str]); 5] = [
            (
                "EquityFreeze",
                &[
                    "EquityHolder",
                    "FrozeShares",
                    "LegalInstitution",
                    "TotalHoldingShares",
                    "TotalHoldingRatio",
                    "StartDate",
                    "EndDate",
                    "UnfrozeDate",
                ],
            ),
            (
                "EquityRepurchase",
                &[
                    "CompanyName",
                    "HighestTradingPrice",
                    "LowestTradingPrice",
                    "RepurchasedShares",
                    "ClosingDate",
                    "RepurchaseAmount",
                ],
            ),
            (
                "EquityUnderweight",
                &[
                    "EquityHolder",
                    "TradedShares",
                    "StartDate",
                    "EndDate",
                    "LaterHoldingShares",
                    "AveragePrice",
                ],
            ),
            (
                "EquityOverweight",
                &[
                    "EquityHolder",
                    "TradedShares",
                    "StartDate",
                    "EndDate",
                    "LaterHoldingShares",
                    "AveragePrice",
                ],
            ),
            (
                "EquityPledge",
                &[
                    "Pledger",
                    "PledgedShares",
                    "Pledgee",
                    "TotalHoldingShares",
                    "TotalHoldingRatio",
                    "TotalPledgedShares",
                    "StartDate",
                    "EndDate",
                    "ReleasedDate",
                ],
            ),
        ];
        Self::new(
            layout
                .iter()
                .map(|(t, rs)| (t.to_string(), rs.iter().map(|r| r.to_string()).collect()))
                .collect(),
        )
        .expect("built-in schema is valid")
    }

    /// Synthetic schema with types `T0..` and roles `R{t}_{r}`.
    pub fn synthetic(num_types: usize, roles_per_type: usize) -> Result<Self> {
        Self::new(
            (0..num_types)
                .map(|t| {
                    (
                        format!("T{t}"),
                        (0..roles_per_type).map(|r| format!("R{t}_{r}")).collect(),
                    )
                })
                .collect(),
        )
    }

    pub fn num_types(&self) -> usize {
        self.types.len()
    }

    pub fn total_roles(&self) -> usize {
        self.roles.iter().map(Vec::len).sum()
    }

    pub fn type_name(&self, t: usize) -> &str {
        &self.types[t]
    }

    pub fn type_names(&self) -> &[String] {
        &self.types
    }

    pub fn type_id(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn roles(&self, t: usize) -> Option<&[String]> {
        self.roles.get(t).map(Vec::as_slice)
    }

    pub fn num_roles(&self, t: usize) -> usize {
        self.roles[t].len()
    }

    pub fn max_roles(&self) -> usize {
        self.roles.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn role_id(&self, t: usize, role: &str) -> Option<usize> {
        self.roles.get(t)?.iter().position(|r| r == role)
    }

    pub fn to_json(&self) -> String {
        let raw = RawSchema {
            types: self.types.clone(),
            roles: self.types.iter().cloned().zip(self.roles.iter().cloned()).collect(),
        };
        serde_json::to_string_pretty(&raw).expect("schema serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawSchema = serde_json::from_str(text).map_err(|e| Error::json("event schema", e))?;
        let mut types = Vec::with_capacity(raw.types.len());
        for t in &raw.types {
            let roles = raw
                .roles
                .get(t)
                .ok_or_else(|| Error::EventSchema(format!("no role list for type {t}")))?;
            types.push((t.clone(), roles.clone()));
        }
        if let Some(extra) = raw.roles.keys().find(|k| !raw.types.contains(k)) {
            return Err(Error::EventSchema(format!("roles given for unknown type {extra}")));
        }
        Self::new(types)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chfinann_schema_has_five_types_and_35_roles() {
        let s = EventSchema::chfinann();
        assert_eq!(s.num_types(), 5);
        assert_eq!(s.total_roles(), 35);
        assert_eq!(s.role_id(0, "FrozeShares"), Some(1));
    }

    #[test]
    fn json_round_trip_preserves_order() {
        let s = EventSchema::chfinann();
        assert_eq!(EventSchema::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn rejects_missing_roles_and_duplicates() {
        assert!(EventSchema::from_json(r#"{"types":["A"],"roles":{}}"#).is_err());
        assert!(EventSchema::from_json(r#"{"types":["A"],"roles":{"A":["x","x"]}}"#).is_err());
        assert!(EventSchema::from_json(r#"{"types":["A"],"roles":{"A":["x"],"B":["y"]}}"#).is_err());
    }
}
