use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::Ident;

/// Business-object schema attached to messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoSchema {
    pub id: Ident,
    pub fields: Vec<BoField>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoField {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
    pub required: bool,
    /// Members of a record, or the item shape of a list. Empty for scalars.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<BoField>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    String,
    Number,
    Boolean,
    Record,
    List,
}

impl FieldType {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldType::String => "string",
            FieldType::Number => "number",
            FieldType::Boolean => "boolean",
            FieldType::Record => "record",
            FieldType::List => "list",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "string" => FieldType::String,
            "number" => FieldType::Number,
            "boolean" => FieldType::Boolean,
            "record" => FieldType::Record,
            "list" => FieldType::List,
            _ => return None,
        })
    }

    pub fn is_composite(self) -> bool {
        matches!(self, FieldType::Record | FieldType::List)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("missing required field `{0}`")]
    Missing(String),
    #[error("field `{path}` should be {expected}")]
    WrongType { path: String, expected: &'static str },
    #[error("unknown field `{0}`")]
    Unknown(String),
    #[error("message carries no business object but payload is {0}")]
    Unexpected(String),
}

impl BoSchema {
    /// Nesting depth: 1 for a flat schema, 0 for an empty one.
    pub fn depth(&self) -> usize {
        fn level(fields: &[BoField]) -> usize {
            if fields.is_empty() {
                0
            } else {
                1 + fields.iter().map(|f| level(&f.children)).max().unwrap_or(0)
            }
        }
        level(&self.fields)
    }

    /// Checks a JSON payload: required fields present, types match, no
    /// undeclared fields. `null` is accepted when nothing is required.
    pub fn validate(&self, payload: &Value) -> Result<(), PayloadError> {
        match payload {
            Value::Null => validate_object(&self.fields, &serde_json::Map::new(), ""),
            Value::Object(map) => validate_object(&self.fields, map, ""),
            _ => Err(PayloadError::WrongType {
                path: String::new(),
                expected: "an object",
            }),
        }
    }
}

/// Payload rule for a message without a business object.
pub fn validate_empty(payload: &Value) -> Result<(), PayloadError> {
    match payload {
        Value::Null => Ok(()),
        Value::Object(m) if m.is_empty() => Ok(()),
        other => Err(PayloadError::Unexpected(other.to_string())),
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn validate_object(
    fields: &[BoField],
    map: &serde_json::Map<String, Value>,
    prefix: &str,
) -> Result<(), PayloadError> {
    for key in map.keys() {
        if !fields.iter().any(|f| &f.name == key) {
            return Err(PayloadError::Unknown(join(prefix, key)));
        }
    }
    for field in fields {
        let path = join(prefix, &field.name);
        match map.get(&field.name) {
            None | Some(Value::Null) => {
                if field.required {
                    return Err(PayloadError::Missing(path));
                }
            }
            Some(v) => validate_value(field, v, &path)?,
        }
    }
    Ok(())
}

fn validate_value(field: &BoField, v: &Value, path: &str) -> Result<(), PayloadError> {
    let wrong = |expected| PayloadError::WrongType {
        path: path.to_string(),
        expected,
    };
    match field.ty {
        FieldType::String if v.is_string() => Ok(()),
        FieldType::String => Err(wrong("a string")),
        FieldType::Number if v.is_number() => Ok(()),
        FieldType::Number => Err(wrong("a number")),
        FieldType::Boolean if v.is_boolean() => Ok(()),
        FieldType::Boolean => Err(wrong("a boolean")),
        FieldType::Record => match v {
            Value::Object(m) => validate_object(&field.children, m, path),
            _ => Err(wrong("a record")),
        },
        FieldType::List => match v {
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    let item_path = format!("{path}[{i}]");
                    match item {
                        Value::Object(m) => validate_object(&field.children, m, &item_path)?,
                        _ => {
                            return Err(PayloadError::WrongType {
                                path: item_path,
                                expected: "a record",
                            })
                        }
                    }
                }
                Ok(())
            }
            _ => Err(wrong("a list")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn field(name: &str, ty: FieldType, required: bool, children: Vec<BoField>) -> BoField {
        BoField {
            name: name.into(),
            ty,
            required,
            children,
        }
    }

    fn order_schema() -> BoSchema {
        BoSchema {
            id: Ident::new("orderBO").unwrap(),
            fields: vec![
                field("note", FieldType::String, true, vec![]),
                field(
                    "item",
                    FieldType::Record,
                    false,
                    vec![field("qty", FieldType::Number, true, vec![])],
                ),
                field(
                    "lines",
                    FieldType::List,
                    false,
                    vec![field("sku", FieldType::String, true, vec![])],
                ),
            ],
        }
    }

    #[test]
    fn accepts_valid_payloads() {
        let s = order_schema();
        s.validate(&json!({"note": "x"})).unwrap();
        s.validate(&json!({"note": "x", "item": {"qty": 2}, "lines": [{"sku": "a"}]}))
            .unwrap();
    }

    #[test]
    fn rejects_bad_payloads() {
        let s = order_schema();
        assert_eq!(s.validate(&json!({})), Err(PayloadError::Missing("note".into())));
        assert_eq!(s.validate(&Value::Null), Err(PayloadError::Missing("note".into())));
        assert_eq!(
            s.validate(&json!({"note": "x", "item": {}})),
            Err(PayloadError::Missing("item.qty".into()))
        );
        assert!(matches!(
            s.validate(&json!({"note": 3})),
            Err(PayloadError::WrongType { .. })
        ));
        assert!(matches!(
            s.validate(&json!({"note": "x", "lines": [{"sku": 1}]})),
            Err(PayloadError::WrongType { path, .. }) if path == "lines[0].sku"
        ));
        assert_eq!(
            s.validate(&json!({"note": "x", "extra": 1})),
            Err(PayloadError::Unknown("extra".into()))
        );
    }

    #[test]
    fn empty_rule() {
        validate_empty(&Value::Null).unwrap();
        validate_empty(&json!({})).unwrap();
        assert!(validate_empty(&json!({"a": 1})).is_err());
    }

    #[test]
    fn depth_counts_levels() {
        assert_eq!(order_schema().depth(), 2);
    }
}
