//! Query-string parsing for `GET /search`.

use mechkb_core::schema::{RelationClass, RelationQuery, DEFAULT_K, DEFAULT_MIN_CONFIDENCE};

use crate::ApiError;

/// Upper bound on `k`; larger requests are clamped rather than rejected.
pub const MAX_K: usize = 1000;
/// Upper bound on `offset`, keeping the retrieval window at most 10k.
pub const MAX_OFFSET: usize = 9000;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRequest {
    pub e1: Vec<String>,
    pub e2: Vec<String>,
    pub class: Option<RelationClass>,
    pub k: usize,
    pub offset: usize,
    pub symmetric: bool,
    pub min_confidence: f64,
}

impl Default for SearchRequest {
    fn default() -> Self {
        Self {
            e1: Vec::new(),
            e2: Vec::new(),
            class: None,
            k: DEFAULT_K,
            offset: 0,
            symmetric: false,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

fn parse_bool(field: &'static str, value: &str) -> Result<bool, ApiError> {
    match value.to_ascii_lowercase().as_str() {
        "" | "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ApiError::invalid(field, format!("expected a boolean, got `{value}`"))),
    }
}

fn parse_count(field: &'static str, value: &str) -> Result<usize, ApiError> {
    // saturate huge values instead of rejecting them; the caps apply below
    if !value.is_empty() && value.bytes().all(|b| b.is_ascii_digit()) {
        return Ok(value.parse().unwrap_or(usize::MAX));
    }
    Err(ApiError::invalid(field, format!("expected a non-negative integer, got `{value}`")))
}

impl SearchRequest {
    /// Parse decoded query pairs. `e1` and `e2` may repeat; unknown keys are
    /// ignored so clients can add cache-busting parameters.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, ApiError> {
        let mut req = SearchRequest::default();
        for (key, value) in pairs {
            match key.as_str() {
                "e1" => req.e1.push(value.clone()),
                "e2" => req.e2.push(value.clone()),
                "class" if value.is_empty() || value.eq_ignore_ascii_case("any") => req.class = None,
                "class" => {
                    req.class = Some(value.parse().map_err(|_| {
                        ApiError::invalid("class", format!("expected direct or indirect, got `{value}`"))
                    })?)
                }
                "k" => {
                    let k = parse_count("k", value)?;
                    if k == 0 {
                        return Err(ApiError::invalid("k", "k must be at least 1"));
                    }
                    req.k = k.min(MAX_K);
                }
                "offset" => {
                    let offset = parse_count("offset", value)?;
                    if offset > MAX_OFFSET {
                        return Err(ApiError::invalid("offset", format!("offset must be at most {MAX_OFFSET}")));
                    }
                    req.offset = offset;
                }
                "symmetric" => req.symmetric = parse_bool("symmetric", value)?,
                "min_confidence" => {
                    req.min_confidence = value
                        .parse::<f64>()
                        .ok()
                        .filter(|c| (0.0..=1.0).contains(c))
                        .ok_or_else(|| {
                            ApiError::invalid("min_confidence", format!("expected a number in [0,1], got `{value}`"))
                        })?;
                }
                _ => {}
            }
        }
        req.e1.retain(|s| !s.trim().is_empty());
        req.e2.retain(|s| !s.trim().is_empty());
        if req.e1.is_empty() {
            return Err(ApiError::missing("e1"));
        }
        Ok(req)
    }

    /// Query covering the first `offset + k` results; the handler drops the
    /// first `offset` of them.
    pub fn to_query(&self) -> RelationQuery {
        RelationQuery::new(self.e1.iter().cloned())
            .with_e2(self.e2.iter().cloned())
            .with_class(self.class)
            .with_k(self.offset + self.k)
            .symmetric(self.symmetric)
            .with_min_confidence(self.min_confidence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_table_query() {
        let req = SearchRequest::from_pairs(&pairs(&[
            ("e1", "warm climate"),
            ("e2", "coronavirus"),
            ("e2", "covid-19"),
            ("class", "indirect"),
            ("k", "20"),
        ]))
        .unwrap();
        assert_eq!(req.e1, ["warm climate"]);
        assert_eq!(req.e2, ["coronavirus", "covid-19"]);
        assert_eq!(req.class, Some(RelationClass::Indirect));
        assert_eq!(req.k, 20);
        assert!(!req.symmetric);
        assert_eq!(req.min_confidence, 0.9);
    }

    #[test]
    fn k_is_capped_and_validated() {
        let req = SearchRequest::from_pairs(&pairs(&[("e1", "x"), ("k", "1000000000000000000000")])).unwrap();
        assert_eq!(req.k, MAX_K);
        for bad in ["0", "-1", "ten", ""] {
            let err = SearchRequest::from_pairs(&pairs(&[("e1", "x"), ("k", bad)])).unwrap_err();
            assert_eq!(err.field(), Some("k"));
        }
    }

    #[test]
    fn field_errors() {
        let cases = [
            (vec![("e2", "x")], "e1"),
            (vec![("e1", " ")], "e1"),
            (vec![("e1", "x"), ("class", "causal")], "class"),
            (vec![("e1", "x"), ("symmetric", "maybe")], "symmetric"),
            (vec![("e1", "x"), ("min_confidence", "1.5")], "min_confidence"),
            (vec![("e1", "x"), ("offset", "9001")], "offset"),
        ];
        for (input, field) in cases {
            let err = SearchRequest::from_pairs(&pairs(&input)).unwrap_err();
            assert_eq!(err.field(), Some(field), "{input:?}");
        }
    }

    #[test]
    fn window_covers_offset() {
        let req = SearchRequest::from_pairs(&pairs(&[("e1", "x"), ("k", "5"), ("offset", "10"), ("symmetric", "")])).unwrap();
        let q = req.to_query();
        assert_eq!(q.k, 15);
        assert!(q.symmetric);
    }
}
