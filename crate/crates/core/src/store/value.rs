use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize, Serializer};

/// Declared column type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarType {
    Integer,
    Decimal,
    Text,
    Boolean,
}

impl ScalarType {
    pub fn as_str(self) -> &'static str {
        match self {
            ScalarType::Integer => "integer",
            ScalarType::Decimal => "decimal",
            ScalarType::Text => "text",
            ScalarType::Boolean => "boolean",
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ScalarType::Integer | ScalarType::Decimal)
    }

    /// Parses a raw CSV field under this type. Empty fields are NULL.
    pub fn parse_field(self, raw: &str) -> Result<Value, String> {
        if raw.is_empty() {
            return Ok(Value::Null);
        }
        match self {
            ScalarType::Text => Ok(Value::Text(raw.to_string())),
            ScalarType::Integer => {
                let d = Decimal::from_str_exact(raw.trim()).map_err(|_| format!("`{raw}` is not an integer"))?;
                if d.fract() != Decimal::ZERO || raw.contains('.') {
                    return Err(format!("`{raw}` is not an integer"));
                }
                Ok(Value::Number(d))
            }
            ScalarType::Decimal => Decimal::from_str_exact(raw.trim())
                .map(Value::Number)
                .map_err(|_| format!("`{raw}` is not a decimal number")),
            ScalarType::Boolean => match raw.trim().to_ascii_lowercase().as_str() {
                "true" | "t" | "1" | "yes" => Ok(Value::Bool(true)),
                "false" | "f" | "0" | "no" => Ok(Value::Bool(false)),
                _ => Err(format!("`{raw}` is not a boolean")),
            },
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScalarType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "integer" | "int" | "bigint" => Ok(ScalarType::Integer),
            "decimal" | "numeric" => Ok(ScalarType::Decimal),
            "text" | "string" | "varchar" => Ok(ScalarType::Text),
            "boolean" | "bool" => Ok(ScalarType::Boolean),
            other => Err(format!("unknown scalar type `{other}`")),
        }
    }
}

/// A single cell. Numbers are exact decimals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Null,
    Number(Decimal),
    Text(String),
    Bool(bool),
}

impl Value {
    pub fn int(n: i64) -> Self {
        Value::Number(Decimal::from(n))
    }

    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_number(&self) -> Option<Decimal> {
        match self {
            Value::Number(d) => Some(*d),
            Value::Text(s) => Decimal::from_str_exact(s.trim()).ok(),
            _ => None,
        }
    }

    /// SQL comparison: `None` when either side is NULL. Text that parses
    /// as a number compares numerically against numbers.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Number(a), Value::Number(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Number(a), Value::Text(_)) => match other.as_number() {
                Some(b) => Some(a.cmp(&b)),
                None => Some(self.to_string().cmp(&other.to_string())),
            },
            (Value::Text(_), Value::Number(b)) => match self.as_number() {
                Some(a) => Some(a.cmp(b)),
                None => Some(self.to_string().cmp(&other.to_string())),
            },
            _ => Some(self.to_string().cmp(&other.to_string())),
        }
    }

    /// Total order used by ORDER BY: NULL sorts after every value.
    pub fn sort_cmp(&self, other: &Value) -> Ordering {
        match (self.is_null(), other.is_null()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => self.sql_cmp(other).unwrap_or(Ordering::Equal),
        }
    }

    pub fn type_of(&self) -> Option<ScalarType> {
        match self {
            Value::Null => None,
            Value::Number(d) if d.scale() == 0 => Some(ScalarType::Integer),
            Value::Number(_) => Some(ScalarType::Decimal),
            Value::Text(_) => Some(ScalarType::Text),
            Value::Bool(_) => Some(ScalarType::Boolean),
        }
    }

    /// CSV field rendering; NULL is the empty field.
    pub fn to_field(&self) -> String {
        match self {
            Value::Null => String::new(),
            other => other.to_string(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Number(d) => write!(f, "{d}"),
            Value::Text(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Null => s.serialize_none(),
            Value::Number(d) => s.serialize_str(&d.to_string()),
            Value::Text(t) => s.serialize_str(t),
            Value::Bool(b) => s.serialize_bool(*b),
        }
    }
}

/// Infers a result column type from its values: integral numbers are
/// `Integer`, other numbers `Decimal`; all-NULL columns are `Text`.
pub fn infer_type<'a>(values: impl Iterator<Item = &'a Value>) -> ScalarType {
    let mut seen: Option<ScalarType> = None;
    for v in values {
        let Some(t) = v.type_of() else { continue };
        seen = Some(match (seen, t) {
            (None, t) => t,
            (Some(ScalarType::Integer), ScalarType::Decimal) | (Some(ScalarType::Decimal), ScalarType::Integer) => {
                ScalarType::Decimal
            }
            (Some(a), b) if a == b => a,
            (Some(_), _) => ScalarType::Text,
        });
    }
    seen.unwrap_or(ScalarType::Text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_fields_by_type() {
        assert_eq!(ScalarType::Integer.parse_field("42").unwrap(), Value::int(42));
        assert!(ScalarType::Integer.parse_field("4.2").is_err());
        assert!(ScalarType::Decimal.parse_field("abc").is_err());
        assert_eq!(ScalarType::Text.parse_field("").unwrap(), Value::Null);
        assert_eq!(
            ScalarType::Decimal.parse_field("12.50").unwrap(),
            Value::Number(Decimal::from_str_exact("12.5").unwrap())
        );
    }

    #[test]
    fn comparisons_follow_sql_rules() {
        assert_eq!(Value::Null.sql_cmp(&Value::int(1)), None);
        assert_eq!(Value::text("10").sql_cmp(&Value::int(9)), Some(Ordering::Greater));
        assert_eq!(Value::Null.sort_cmp(&Value::int(1)), Ordering::Greater);
    }

    #[test]
    fn numbers_serialize_as_strings() {
        let v = Value::Number(Decimal::from_str_exact("1.25").unwrap());
        assert_eq!(serde_json::to_string(&v).unwrap(), "\"1.25\"");
        assert_eq!(serde_json::to_string(&Value::Null).unwrap(), "null");
    }

    #[test]
    fn type_inference() {
        let vals = [Value::int(1), Value::Null, Value::Number(Decimal::new(15, 1))];
        assert_eq!(infer_type(vals.iter()), ScalarType::Decimal);
        assert_eq!(infer_type([Value::Null].iter()), ScalarType::Text);
    }
}
