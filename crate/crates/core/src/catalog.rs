//! Table configurations: the metadata injected into the SQL-generation
//! prompt and used by the query check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{ColumnDef, TabularStore};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("invalid configuration for `{table}`: {detail}")]
    Invalid { table: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableConfiguration {
    pub table_name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub relevant_fields: Vec<ColumnDef>,
    #[serde(default)]
    pub sample_field_values: BTreeMap<String, Vec<String>>,
    /// Lowercase query keyword (one or more words) → column name.
    #[serde(default)]
    pub filter_keyword_map: BTreeMap<String, String>,
}

impl TableConfiguration {
    pub fn validate(&self) -> Result<(), CatalogError> {
        let invalid = |detail: String| CatalogError::Invalid {
            table: self.table_name.clone(),
            detail,
        };
        if self.table_name.trim().is_empty() {
            return Err(invalid("empty table name".into()));
        }
        if self.relevant_fields.is_empty() {
            return Err(invalid("relevant_fields is empty".into()));
        }
        let declared: BTreeSet<String> = self.relevant_fields.iter().map(|c| c.name.to_lowercase()).collect();
        for col in self.sample_field_values.keys() {
            if !declared.contains(&col.to_lowercase()) {
                return Err(invalid(format!("sample values for undeclared column `{col}`")));
            }
        }
        for (kw, col) in &self.filter_keyword_map {
            if !declared.contains(&col.to_lowercase()) {
                return Err(invalid(format!("keyword `{kw}` maps to undeclared column `{col}`")));
            }
        }
        Ok(())
    }

    /// Checks that the physical table exists and has every declared field
    /// with the declared type.
    pub fn validate_against(&self, store: &TabularStore) -> Result<(), CatalogError> {
        let invalid = |detail: String| CatalogError::Invalid {
            table: self.table_name.clone(),
            detail,
        };
        let table = store
            .table(&self.table_name)
            .ok_or_else(|| invalid("no physical table with this name".into()))?;
        for field in &self.relevant_fields {
            match table.column_index(&field.name) {
                None => return Err(invalid(format!("column `{}` missing from the table", field.name))),
                Some(i) if table.schema()[i].ty != field.ty => {
                    return Err(invalid(format!(
                        "column `{}` is {} in the table but declared {}",
                        field.name,
                        table.schema()[i].ty,
                        field.ty
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub tables: Vec<TableConfiguration>,
}

impl Catalog {
    pub fn new(tables: Vec<TableConfiguration>) -> Result<Self, CatalogError> {
        let mut seen = BTreeSet::new();
        for t in &tables {
            t.validate()?;
            if !seen.insert(t.table_name.to_lowercase()) {
                return Err(CatalogError::Invalid {
                    table: t.table_name.clone(),
                    detail: "duplicate table configuration".into(),
                });
            }
        }
        Ok(Self { tables })
    }

    pub fn parse(text: &str) -> Result<Self, CatalogError> {
        let raw: Catalog = serde_json::from_str(text)?;
        Self::new(raw.tables)
    }

    pub fn load(path: &Path) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("catalog serializes")
    }

    pub fn get(&self, name: &str) -> Option<&TableConfiguration> {
        self.tables.iter().find(|t| t.table_name.eq_ignore_ascii_case(name))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.tables.iter().map(|t| t.table_name.to_lowercase()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn validate_against(&self, store: &TabularStore) -> Result<(), CatalogError> {
        self.tables.iter().try_for_each(|t| t.validate_against(store))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::ScalarType;

    fn config() -> TableConfiguration {
        TableConfiguration {
            table_name: "power".into(),
            description: String::new(),
            relevant_fields: vec![
                ColumnDef::new("region", ScalarType::Text),
                ColumnDef::new("kwh", ScalarType::Decimal),
            ],
            sample_field_values: BTreeMap::from([("region".into(), vec!["NA".into()])]),
            filter_keyword_map: BTreeMap::from([("north america".into(), "region".into())]),
        }
    }

    #[test]
    fn json_round_trip() {
        let cat = Catalog::new(vec![config()]).unwrap();
        assert_eq!(Catalog::parse(&cat.to_json()).unwrap(), cat);
    }

    #[test]
    fn undeclared_columns_are_rejected() {
        let mut c = config();
        c.filter_keyword_map.insert("x".into(), "nope".into());
        assert!(c.validate().is_err());
        let mut c = config();
        c.relevant_fields.clear();
        assert!(c.validate().is_err());
    }

    #[test]
    fn physical_table_must_match() {
        let store = TabularStore::new();
        assert!(config().validate_against(&store).is_err());
        store
            .ingest_reader(
                "region,kwh\nNA,1\n".as_bytes(),
                "power",
                &[
                    ColumnDef::new("region", ScalarType::Text),
                    ColumnDef::new("kwh", ScalarType::Decimal),
                ],
            )
            .unwrap();
        config().validate_against(&store).unwrap();
    }
}
