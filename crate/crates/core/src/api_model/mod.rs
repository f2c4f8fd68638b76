//! Declarative API models.
//!
//! An [`ApiModel`] describes the functions of a traced API together with the
//! handle typedefs, enums and property structs their signatures mention. Models
//! come from a restricted C header grammar ([`parse_header_decls`]) or from the
//! YAML form ([`load_api_model_yaml`]), and are enriched with expert knowledge
//! through [`apply_meta_params`].

mod header;
mod meta;
mod types;
mod yaml;

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use header::parse_header_decls;
pub use meta::{apply_meta_params, FunctionOverlay, MetaParams, ParamOverlay};
pub use types::{CType, ResolvedType, ScalarKind};
pub use yaml::{load_api_model_yaml, to_yaml};

/// Errors raised while building, loading or enriching a model.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate function `{0}`")]
    DuplicateFunction(String),
    #[error("duplicate parameter `{param}` in `{function}`")]
    DuplicateParam { function: String, param: String },
    #[error("unresolvable type `{ty}` in {context}")]
    UnresolvedType { context: String, ty: String },
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("meta-parameters reference unknown function `{0}`")]
    UnknownFunction(String),
    #[error("meta-parameters reference unknown parameter `{param}` of `{function}`")]
    UnknownParam { function: String, param: String },
    #[error("conflicting overlays for `{function}.{target}`")]
    ConflictingOverlay { function: String, target: String },
}

impl ModelError {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    In,
    Out,
    Inout,
    #[default]
    Unknown,
}

impl Direction {
    pub fn is_unknown(&self) -> bool {
        matches!(self, Direction::Unknown)
    }

    pub fn captures_on_entry(&self) -> bool {
        matches!(self, Direction::In | Direction::Inout)
    }

    pub fn captures_on_exit(&self) -> bool {
        matches!(self, Direction::Out | Direction::Inout)
    }
}

/// Interpretation of an array length parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    #[default]
    Bytes,
    Elements,
}

/// What sits behind an address-valued parameter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Deref {
    /// One value of the pointee type. A struct pointee is captured field by field.
    Scalar,
    /// NUL-terminated character data.
    String,
    /// A run of memory whose length is held by another (integral) parameter.
    Array {
        length: String,
        #[serde(default)]
        unit: LengthUnit,
    },
    /// A fixed number of bytes.
    Blob { size: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub c_type: String,
    #[serde(default, skip_serializing_if = "Direction::is_unknown")]
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deref: Option<Deref>,
    /// Derived from the handle typedefs when the model is resolved.
    #[serde(skip)]
    pub is_handle: bool,
}

impl ParamDecl {
    pub fn new(name: impl Into<String>, c_type: impl Into<String>) -> Self {
        ParamDecl {
            name: name.into(),
            c_type: c_type.into(),
            direction: Direction::Unknown,
            deref: None,
            is_handle: false,
        }
    }

    pub fn ctype(&self) -> CType {
        CType::parse(&self.c_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FnAttr {
    MinimalIncluded,
    DefaultExcluded,
    Profiled,
    ReleasesHandle,
    CreatesHandle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDecl {
    pub name: String,
    #[serde(rename = "return")]
    pub return_type: String,
    #[serde(default)]
    pub params: Vec<ParamDecl>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub attrs: BTreeSet<FnAttr>,
    /// Parameters copied into the device-profiling event of a profiled function.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profiling_detail: Vec<String>,
}

impl FunctionDecl {
    pub fn has(&self, attr: FnAttr) -> bool {
        self.attrs.contains(&attr)
    }

    pub fn param(&self, name: &str) -> Option<&ParamDecl> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructField {
    pub name: String,
    pub kind: ScalarKind,
    pub width: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructDef {
    pub name: String,
    pub fields: Vec<StructField>,
}

impl StructDef {
    /// C layout: each field aligned to its own width, total rounded to the widest field.
    pub fn layout(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.fields.len());
        let mut off = 0usize;
        let mut align = 1usize;
        for f in &self.fields {
            let w = f.width as usize;
            off = off.div_ceil(w) * w;
            offsets.push(off);
            off += w;
            align = align.max(w);
        }
        (offsets, off.div_ceil(align) * align)
    }

    pub fn has_pnext(&self) -> bool {
        self.fields
            .first()
            .is_some_and(|f| f.name == "pNext" && f.kind == ScalarKind::Address)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumConst {
    pub name: String,
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnumDef {
    pub name: String,
    pub values: Vec<EnumConst>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiModel {
    pub api_name: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub handles: Vec<String>,
    #[serde(default)]
    pub enums: Vec<EnumDef>,
    #[serde(default)]
    pub structs: Vec<StructDef>,
    #[serde(default)]
    pub functions: Vec<FunctionDecl>,
}

impl ApiModel {
    pub fn new(api_name: impl Into<String>, version: impl Into<String>) -> Self {
        ApiModel {
            api_name: api_name.into(),
            version: version.into(),
            handles: Vec::new(),
            enums: Vec::new(),
            structs: Vec::new(),
            functions: Vec::new(),
        }
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn struct_def(&self, name: &str) -> Option<&StructDef> {
        self.structs.iter().find(|s| s.name == name)
    }

    /// Resolves the base of a C type against this model's declarations.
    pub fn resolve(&self, ty: &CType) -> Option<ResolvedType> {
        if ty.base == "void" {
            return Some(ResolvedType::Void);
        }
        if let Some((kind, width)) = types::scalar_kind(&ty.base) {
            return Some(ResolvedType::Scalar(kind, width));
        }
        if self.handles.iter().any(|h| *h == ty.base) {
            return Some(ResolvedType::Handle);
        }
        if self.enums.iter().any(|e| e.name == ty.base) {
            return Some(ResolvedType::Enum);
        }
        if self.structs.iter().any(|s| s.name == ty.base) {
            return Some(ResolvedType::Struct(ty.base.clone()));
        }
        None
    }

    /// Byte size of a value of the given resolved type (pointers count as 8).
    pub fn size_of(&self, resolved: &ResolvedType, pointer_depth: u8) -> usize {
        if pointer_depth > 0 {
            return 8;
        }
        match resolved {
            ResolvedType::Void => 1,
            ResolvedType::Scalar(_, w) => *w as usize,
            ResolvedType::Handle => 8,
            ResolvedType::Enum => 4,
            ResolvedType::Struct(name) => self.struct_def(name).map(|s| s.layout().1).unwrap_or(0),
        }
    }

    /// Recomputes derived fields (`is_handle`) and checks every model invariant.
    pub fn resolve_and_validate(&mut self) -> Result<(), ModelError> {
        let handles: HashSet<&str> = self.handles.iter().map(String::as_str).collect();
        for f in &mut self.functions {
            for p in &mut f.params {
                let t = CType::parse(&p.c_type);
                p.is_handle = t.pointer_depth == 0 && handles.contains(t.base.as_str());
            }
        }
        self.validate()
    }

    /// Checks name uniqueness, type resolution and parameter annotations.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen_types = HashSet::new();
        for (i, h) in self.handles.iter().enumerate() {
            if !seen_types.insert(h.as_str()) {
                return Err(ModelError::schema(
                    format!("handles[{i}]"),
                    format!("duplicate type `{h}`"),
                ));
            }
        }
        for (i, e) in self.enums.iter().enumerate() {
            if !seen_types.insert(e.name.as_str()) {
                return Err(ModelError::schema(
                    format!("enums[{i}].name"),
                    format!("duplicate type `{}`", e.name),
                ));
            }
        }
        for (i, s) in self.structs.iter().enumerate() {
            if !seen_types.insert(s.name.as_str()) {
                return Err(ModelError::schema(
                    format!("structs[{i}].name"),
                    format!("duplicate type `{}`", s.name),
                ));
            }
            let mut names = HashSet::new();
            for (j, field) in s.fields.iter().enumerate() {
                let path = format!("structs[{i}].fields[{j}]");
                if !names.insert(field.name.as_str()) {
                    return Err(ModelError::schema(path, format!("duplicate field `{}`", field.name)));
                }
                if !field.kind.valid_width(field.width) {
                    return Err(ModelError::schema(
                        format!("{path}.width"),
                        format!("width {} is not valid for kind {:?}", field.width, field.kind),
                    ));
                }
                if field.kind == ScalarKind::Address && !(j == 0 && field.name == "pNext") {
                    return Err(ModelError::schema(
                        path,
                        "only a leading `pNext` field may be address-valued",
                    ));
                }
            }
        }

        let mut fn_names = HashSet::new();
        for (i, f) in self.functions.iter().enumerate() {
            if !fn_names.insert(f.name.as_str()) {
                return Err(ModelError::DuplicateFunction(f.name.clone()));
            }
            let ret = CType::parse(&f.return_type);
            if self.resolve(&ret).is_none() {
                return Err(ModelError::UnresolvedType {
                    context: format!("return type of `{}`", f.name),
                    ty: f.return_type.clone(),
                });
            }
            if f.has(FnAttr::MinimalIncluded) && f.has(FnAttr::DefaultExcluded) {
                return Err(ModelError::schema(
                    format!("functions[{i}].attrs"),
                    "`minimal_included` and `default_excluded` are mutually exclusive",
                ));
            }
            let mut param_names = HashSet::new();
            for p in &f.params {
                if !param_names.insert(p.name.as_str()) {
                    return Err(ModelError::DuplicateParam {
                        function: f.name.clone(),
                        param: p.name.clone(),
                    });
                }
            }
            for (j, p) in f.params.iter().enumerate() {
                self.validate_param(f, p, &format!("functions[{i}].params[{j}]"))?;
            }
            for (j, d) in f.profiling_detail.iter().enumerate() {
                let Some(p) = f.param(d) else {
                    return Err(ModelError::schema(
                        format!("functions[{i}].profiling_detail[{j}]"),
                        format!("no parameter named `{d}`"),
                    ));
                };
                if p.ctype().pointer_depth == 0 && !self.is_integral(&p.ctype()) && !p.is_handle {
                    return Err(ModelError::schema(
                        format!("functions[{i}].profiling_detail[{j}]"),
                        format!("`{d}` is not an integral or address parameter"),
                    ));
                }
            }
        }
        Ok(())
    }

    fn is_integral(&self, ty: &CType) -> bool {
        ty.pointer_depth == 0
            && matches!(
                self.resolve(ty),
                Some(ResolvedType::Scalar(ScalarKind::Signed | ScalarKind::Unsigned, _)) | Some(ResolvedType::Enum)
            )
    }

    fn validate_param(&self, f: &FunctionDecl, p: &ParamDecl, path: &str) -> Result<(), ModelError> {
        let ty = p.ctype();
        let resolved = self.resolve(&ty).ok_or_else(|| ModelError::UnresolvedType {
            context: format!("parameter `{}` of `{}`", p.name, f.name),
            ty: p.c_type.clone(),
        })?;
        if resolved == ResolvedType::Void && ty.pointer_depth == 0 {
            return Err(ModelError::schema(format!("{path}.type"), "parameter of type void"));
        }
        if matches!(resolved, ResolvedType::Struct(_)) && ty.pointer_depth == 0 {
            return Err(ModelError::schema(
                format!("{path}.type"),
                "structs may only be passed by address",
            ));
        }
        let address_valued = ty.pointer_depth > 0;
        if matches!(p.direction, Direction::Out | Direction::Inout) && !address_valued {
            return Err(ModelError::schema(
                format!("{path}.direction"),
                format!(
                    "`{:?}` requires an address-valued parameter, `{}` is `{}`",
                    p.direction, p.name, p.c_type
                )
                .to_lowercase(),
            ));
        }
        let Some(deref) = &p.deref else { return Ok(()) };
        if !address_valued {
            return Err(ModelError::schema(
                format!("{path}.deref"),
                format!("`{}` is not address-valued", p.name),
            ));
        }
        let pointee = ty.pointee();
        match deref {
            Deref::Scalar => {
                if pointee.pointer_depth == 0 && resolved == ResolvedType::Void {
                    return Err(ModelError::schema(
                        format!("{path}.deref"),
                        "cannot dereference `void*` as a scalar",
                    ));
                }
            }
            Deref::String => {
                let is_char = pointee.pointer_depth == 0
                    && matches!(pointee.base.as_str(), "char" | "signed char" | "unsigned char");
                if !is_char {
                    return Err(ModelError::schema(
                        format!("{path}.deref"),
                        "string deref requires a `char*` parameter",
                    ));
                }
            }
            Deref::Array { length, .. } => {
                let Some(lp) = f.param(length) else {
                    return Err(ModelError::schema(
                        format!("{path}.deref.length"),
                        format!("no parameter named `{length}`"),
                    ));
                };
                if !self.is_integral(&lp.ctype()) {
                    return Err(ModelError::schema(
                        format!("{path}.deref.length"),
                        format!("length parameter `{length}` is not integral"),
                    ));
                }
            }
            Deref::Blob { .. } => {}
        }
        Ok(())
    }

    /// Index of function name to position, for overlay application.
    pub(crate) fn function_index(&self) -> HashMap<&str, usize> {
        self.functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i))
            .collect()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Fingerprint of a model: FNV-1a over its canonical YAML serialization.
pub fn fingerprint(model: &ApiModel) -> u64 {
    fnv1a64(to_yaml(model).as_bytes())
}

/// The bundled mock-runtime header.
pub const MOCK_HEADER: &str = include_str!("../../data/ze_mock.h");
/// Meta-parameters for the bundled mock runtime.
pub const MOCK_META_YAML: &str = include_str!("../../data/ze_mock.meta.yaml");

/// The mock runtime model straight from its header, without annotations.
pub fn mock_model_unannotated() -> ApiModel {
    parse_header_decls(MOCK_HEADER).expect("bundled header parses")
}

/// The mock runtime model with its bundled meta-parameters applied.
pub fn mock_model() -> ApiModel {
    let meta = MetaParams::from_yaml(MOCK_META_YAML).expect("bundled meta parses");
    apply_meta_params(mock_model_unannotated(), &meta).expect("bundled meta applies")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn struct_layout_matches_c() {
        let m = mock_model();
        let s = m.struct_def("ze_mock_device_properties").unwrap();
        let (offsets, size) = s.layout();
        assert_eq!(offsets, vec![0, 8, 12, 16, 24]);
        assert_eq!(size, 32);
        assert!(s.has_pnext());
    }

    #[test]
    fn bundled_model_is_consistent() {
        let m = mock_model();
        assert_eq!(m.api_name, "ze");
        let copy = m.function("zeMockCommandListAppendMemoryCopy").unwrap();
        assert!(copy.has(FnAttr::Profiled));
        assert!(copy.param("hCommandList").unwrap().is_handle);
        assert!(!copy.param("dstptr").unwrap().is_handle);
        assert!(m
            .function("zeMockEventHostSynchronize")
            .unwrap()
            .has(FnAttr::DefaultExcluded));
    }

    #[test]
    fn minimal_and_default_excluded_conflict() {
        let mut m = parse_header_decls("int f(int x);").unwrap();
        m.functions[0].attrs.insert(FnAttr::MinimalIncluded);
        m.functions[0].attrs.insert(FnAttr::DefaultExcluded);
        assert!(matches!(m.validate(), Err(ModelError::Schema { .. })));
    }
}
