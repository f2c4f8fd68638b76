use super::{ApiModel, ModelError};

/// Canonical YAML serialization of a model.
pub fn to_yaml(model: &ApiModel) -> String {
    serde_yaml::to_string(model).expect("api model serializes")
}

/// Loads a model from its YAML form, resolving handle types and validating
/// every invariant. Errors carry the path of the offending node.
pub fn load_api_model_yaml(document: &str) -> Result<ApiModel, ModelError> {
    let de = serde_yaml::Deserializer::from_str(document);
    let mut model: ApiModel = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ModelError::schema(
            if path.is_empty() { ".".into() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    model.resolve_and_validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api_model::{parse_header_decls, Deref, Direction, MOCK_HEADER};

    const CU_MEM_GET_INFO: &str = r#"
api_name: cu
version: "12.0"
functions:
  - name: cuMemGetInfo
    return: int
    params:
      - { name: free, type: "size_t*", direction: out, deref: { kind: scalar } }
      - { name: total, type: "size_t*", direction: out, deref: { kind: scalar } }
"#;

    #[test]
    fn cu_mem_get_info() {
        let m = load_api_model_yaml(CU_MEM_GET_INFO).unwrap();
        let f = &m.functions[0];
        assert_eq!(f.params.len(), 2);
        for p in &f.params {
            assert_eq!(p.direction, Direction::Out);
            assert_eq!(p.deref, Some(Deref::Scalar));
        }
    }

    #[test]
    fn empty_function_list_is_valid() {
        let m = load_api_model_yaml("api_name: x\nversion: '1'\nfunctions: []\n").unwrap();
        assert!(m.functions.is_empty());
    }

    #[test]
    fn inout_on_scalar_is_a_schema_violation() {
        let doc = "api_name: x\nversion: '1'\nfunctions:\n  - name: f\n    return: int\n    params:\n      - { name: n, type: int, direction: inout }\n";
        match load_api_model_yaml(doc).unwrap_err() {
            ModelError::Schema { path, .. } => assert_eq!(path, "functions[0].params[0].direction"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_errors_carry_paths() {
        let doc = "api_name: x\nversion: '1'\nfunctions:\n  - name: f\n    return: int\n    params:\n      - { name: n, type: int, colour: red }\n";
        match load_api_model_yaml(doc).unwrap_err() {
            ModelError::Schema { path, .. } => assert!(path.starts_with("functions[0].params[0]"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn array_length_must_be_integral() {
        let doc = r#"
api_name: x
version: "1"
functions:
  - name: f
    return: int
    params:
      - { name: n, type: "float" }
      - { name: data, type: "uint8_t*", direction: in, deref: { kind: array, length: n } }
"#;
        assert!(matches!(load_api_model_yaml(doc), Err(ModelError::Schema { .. })));
    }

    #[test]
    fn header_round_trip() {
        let m = parse_header_decls(MOCK_HEADER).unwrap();
        assert_eq!(load_api_model_yaml(&to_yaml(&m)).unwrap(), m);
    }
}
