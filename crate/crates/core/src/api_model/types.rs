use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    Signed,
    Unsigned,
    Float,
    Address,
}

impl ScalarKind {
    pub fn valid_width(&self, width: u8) -> bool {
        match self {
            ScalarKind::Signed | ScalarKind::Unsigned => matches!(width, 1 | 2 | 4 | 8),
            ScalarKind::Float => matches!(width, 4 | 8),
            ScalarKind::Address => width == 8,
        }
    }

    /// Fixed-width C spelling used when re-emitting declarations.
    pub fn c_spelling(&self, width: u8) -> &'static str {
        match (self, width) {
            (ScalarKind::Signed, 1) => "int8_t",
            (ScalarKind::Signed, 2) => "int16_t",
            (ScalarKind::Signed, 4) => "int32_t",
            (ScalarKind::Signed, _) => "int64_t",
            (ScalarKind::Unsigned, 1) => "uint8_t",
            (ScalarKind::Unsigned, 2) => "uint16_t",
            (ScalarKind::Unsigned, 4) => "uint32_t",
            (ScalarKind::Unsigned, _) => "uint64_t",
            (ScalarKind::Float, 4) => "float",
            (ScalarKind::Float, _) => "double",
            (ScalarKind::Address, _) => "void*",
        }
    }
}

/// Known C scalar spellings.
pub(crate) fn scalar_kind(base: &str) -> Option<(ScalarKind, u8)> {
    use ScalarKind::*;
    Some(match base {
        "char" | "signed char" | "int8_t" => (Signed, 1),
        "unsigned char" | "uint8_t" | "_Bool" | "bool" => (Unsigned, 1),
        "short" | "short int" | "int16_t" => (Signed, 2),
        "unsigned short" | "unsigned short int" | "uint16_t" => (Unsigned, 2),
        "int" | "signed" | "signed int" | "int32_t" => (Signed, 4),
        "unsigned" | "unsigned int" | "uint32_t" => (Unsigned, 4),
        "long" | "long int" | "long long" | "long long int" | "int64_t" | "intptr_t" | "ptrdiff_t" => (Signed, 8),
        "unsigned long"
        | "unsigned long int"
        | "unsigned long long"
        | "unsigned long long int"
        | "uint64_t"
        | "uintptr_t"
        | "size_t" => (Unsigned, 8),
        "float" => (Float, 4),
        "double" => (Float, 8),
        _ => return None,
    })
}

/// What a type's base name refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedType {
    Void,
    Scalar(ScalarKind, u8),
    Handle,
    Enum,
    Struct(String),
}

/// A parsed C type spelling such as `const struct foo**`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CType {
    pub is_const: bool,
    /// `struct` or `enum` keyword, if spelled out.
    pub tag: Option<&'static str>,
    pub base: String,
    pub pointer_depth: u8,
}

impl CType {
    pub fn parse(text: &str) -> CType {
        let pointer_depth = text.chars().filter(|c| *c == '*').count() as u8;
        let mut is_const = false;
        let mut tag = None;
        let mut words = Vec::new();
        for w in text
            .split(|c: char| c.is_whitespace() || c == '*')
            .filter(|w| !w.is_empty())
        {
            match w {
                "const" | "volatile" => is_const |= w == "const",
                "struct" => tag = Some("struct"),
                "enum" => tag = Some("enum"),
                _ => words.push(w),
            }
        }
        CType {
            is_const,
            tag,
            base: words.join(" "),
            pointer_depth,
        }
    }

    pub fn pointee(&self) -> CType {
        CType {
            pointer_depth: self.pointer_depth.saturating_sub(1),
            ..self.clone()
        }
    }

    /// Canonical spelling: `const`, tag, base, then stars without spaces.
    pub fn spelling(&self) -> String {
        let mut s = String::new();
        if self.is_const {
            s.push_str("const ");
        }
        if let Some(t) = self.tag {
            s.push_str(t);
            s.push(' ');
        }
        s.push_str(&self.base);
        for _ in 0..self.pointer_depth {
            s.push('*');
        }
        s
    }
}
