use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ApiModel, Deref, Direction, FnAttr, ModelError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverlay {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deref: Option<Deref>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionOverlay {
    pub function: String,
    #[serde(default)]
    pub params: BTreeMap<String, ParamOverlay>,
    #[serde(default)]
    pub attrs: BTreeSet<FnAttr>,
    /// Parameters copied into the device-profiling event; implies `profiled`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiling_detail: Option<Vec<String>>,
}

/// Expert annotations layered over a header-derived model.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaParams {
    #[serde(default)]
    pub functions: Vec<FunctionOverlay>,
}

impl MetaParams {
    pub fn from_yaml(document: &str) -> Result<MetaParams, ModelError> {
        let de = serde_yaml::Deserializer::from_str(document);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ModelError::schema(
                if path.is_empty() { ".".into() } else { path },
                e.into_inner().to_string(),
            )
        })
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("meta serializes")
    }
}

fn merge_slot<T: Clone + PartialEq>(
    slot: &mut Option<T>,
    value: &Option<T>,
    function: &str,
    target: &str,
) -> Result<(), ModelError> {
    match (slot.as_ref(), value) {
        (Some(a), Some(b)) if a != b => Err(ModelError::ConflictingOverlay {
            function: function.to_string(),
            target: target.to_string(),
        }),
        (None, Some(b)) => {
            *slot = Some(b.clone());
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Applies every overlay in `meta` to `model`.
///
/// Several overlays may target the same function; they must agree wherever
/// they overlap. Functions without an overlay are returned unchanged.
pub fn apply_meta_params(mut model: ApiModel, meta: &MetaParams) -> Result<ApiModel, ModelError> {
    // Coalesce duplicate overlays first so conflicts surface regardless of order.
    let mut merged: BTreeMap<&str, FunctionOverlay> = BTreeMap::new();
    for ov in &meta.functions {
        let entry = merged.entry(ov.function.as_str()).or_insert_with(|| FunctionOverlay {
            function: ov.function.clone(),
            ..Default::default()
        });
        for (pname, pov) in &ov.params {
            let slot = entry.params.entry(pname.clone()).or_default();
            merge_slot(&mut slot.direction, &pov.direction, &ov.function, pname)?;
            merge_slot(&mut slot.deref, &pov.deref, &ov.function, pname)?;
        }
        entry.attrs.extend(ov.attrs.iter().copied());
        merge_slot(
            &mut entry.profiling_detail,
            &ov.profiling_detail,
            &ov.function,
            "profiling_detail",
        )?;
    }

    let index = model.function_index();
    let mut targets = Vec::with_capacity(merged.len());
    for (name, ov) in &merged {
        let Some(&fi) = index.get(name) else {
            return Err(ModelError::UnknownFunction(name.to_string()));
        };
        for pname in ov.params.keys() {
            if model.functions[fi].param(pname).is_none() {
                return Err(ModelError::UnknownParam {
                    function: name.to_string(),
                    param: pname.clone(),
                });
            }
        }
        targets.push((fi, ov));
    }

    for (fi, ov) in targets {
        let f = &mut model.functions[fi];
        for p in &mut f.params {
            if let Some(pov) = ov.params.get(&p.name) {
                if let Some(d) = pov.direction {
                    p.direction = d;
                }
                if let Some(d) = &pov.deref {
                    p.deref = Some(d.clone());
                }
            }
        }
        f.attrs.extend(ov.attrs.iter().copied());
        if let Some(detail) = &ov.profiling_detail {
            f.profiling_detail = detail.clone();
            f.attrs.insert(FnAttr::Profiled);
        }
    }
    model.validate()?;
    Ok(model)
}
