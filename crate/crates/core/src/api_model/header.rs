//! Parser for the restricted declaration grammar:
//!
//! ```text
//! item      := typedef | enum_def | struct_def | func_decl
//! typedef   := "typedef" ("void" | "struct" IDENT) "*" IDENT ";"
//! enum_def  := "enum" IDENT "{" IDENT ["=" INT] ("," IDENT ["=" INT])* [","] "}" ";"
//! struct_def:= "struct" IDENT "{" (type IDENT ";")* "}" ";"
//! func_decl := type IDENT "(" ("void" | param ("," param)*) ")" ";"
//! ```
//!
//! Preprocessor lines and comments are skipped, never interpreted.

use super::types::{scalar_kind, CType, ScalarKind};
use super::{ApiModel, EnumConst, EnumDef, FunctionDecl, ModelError, ParamDecl, StructDef, StructField};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn tokenize(src: &str) -> Result<(Vec<Token>, (usize, usize)), ModelError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let mut line_start = true;
    // (line, column) just past the last significant character
    let mut end = (1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            line_start = true;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' && line_start {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        line_start = false;
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i >= chars.len() {
                    return Err(ModelError::Syntax {
                        line: sl,
                        column: sc,
                        message: "unterminated comment".into(),
                    });
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    i += 2;
                    col += 2;
                    break;
                }
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        let (tl, tc) = (line, col);
        let start = i;
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            i += 1;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric()) {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let value = parse_int(&text).ok_or_else(|| ModelError::Syntax {
                line: tl,
                column: tc,
                message: format!("invalid integer literal `{text}`"),
            })?;
            Tok::Int(value)
        } else if "*(){};,=".contains(c) {
            i += 1;
            Tok::Punct(c)
        } else {
            return Err(ModelError::Syntax {
                line: tl,
                column: tc,
                message: format!("unexpected character `{c}`"),
            });
        };
        col += i - start;
        end = (line, col);
        out.push(Token {
            tok,
            line: tl,
            column: tc,
        });
    }
    Ok((out, end))
}

fn parse_int(text: &str) -> Option<i64> {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let body = body.trim_end_matches(['u', 'U', 'l', 'L']);
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|t| &t.tok)
    }

    fn error_here(&self, message: impl Into<String>) -> ModelError {
        let (line, column) = match self.toks.get(self.pos) {
            Some(t) => (t.line, t.column),
            None => self.eof,
        };
        ModelError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect_punct(&mut self, p: char) -> Result<(), ModelError> {
        match self.peek() {
            Some(Tok::Punct(c)) if *c == p => {
                self.pos += 1;
                Ok(())
            }
            Some(other) => Err(self.error_here(format!("expected `{p}`, found {}", describe(other)))),
            None => Err(self.error_here(format!("expected `{p}`, found end of input"))),
        }
    }

    fn expect_ident(&mut self) -> Result<String, ModelError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            Some(other) => Err(self.error_here(format!("expected identifier, found {}", describe(other)))),
            None => Err(self.error_here("expected identifier, found end of input")),
        }
    }

    fn at_ident(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == word)
    }

    /// Collects `type... name` up to (not including) one of `stops`.
    fn declarator(&mut self, stops: &[char]) -> Result<(CType, String), ModelError> {
        let mut words: Vec<String> = Vec::new();
        let mut stars = 0u8;
        loop {
            match self.peek() {
                Some(Tok::Punct(c)) if stops.contains(c) => break,
                Some(Tok::Punct('*')) => {
                    stars += 1;
                    self.pos += 1;
                }
                Some(Tok::Ident(s)) => {
                    words.push(s.clone());
                    self.pos += 1;
                }
                Some(other) => return Err(self.error_here(format!("unexpected {} in declaration", describe(other)))),
                None => {
                    let want: Vec<String> = stops.iter().map(|c| format!("`{c}`")).collect();
                    return Err(self.error_here(format!("expected {}, found end of input", want.join(" or "))));
                }
            }
        }
        let Some(name) = words.pop() else {
            return Err(self.error_here("expected a declarator name"));
        };
        if words.iter().all(|w| w == "const" || w == "volatile") {
            return Err(self.error_here(format!("missing type for `{name}`")));
        }
        let mut text = words.join(" ");
        for _ in 0..stars {
            text.push('*');
        }
        Ok((CType::parse(&text), name))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Punct(c) => format!("`{c}`"),
    }
}

/// Parses a header in the restricted grammar into an unannotated model.
///
/// The API name is inferred from the lowercase prefix of the first function
/// (`ze` for `zeMemFree`, `cu` for `cuMemGetInfo`).
pub fn parse_header_decls(source_text: &str) -> Result<ApiModel, ModelError> {
    let (toks, eof) = tokenize(source_text)?;
    let mut p = Parser { toks, pos: 0, eof };
    let mut model = ApiModel::new("", "0");

    while p.peek().is_some() {
        if p.at_ident("typedef") {
            p.pos += 1;
            match p.next() {
                Some(Tok::Ident(w)) if w == "void" => {}
                Some(Tok::Ident(w)) if w == "struct" => {
                    p.expect_ident()?;
                }
                _ => {
                    p.pos -= 1;
                    return Err(p.error_here("only handle typedefs (`void*` or `struct X*`) are supported"));
                }
            }
            p.expect_punct('*')?;
            let name = p.expect_ident()?;
            p.expect_punct(';')?;
            model.handles.push(name);
        } else if p.at_ident("enum") && matches!(p.peek_at(2), Some(Tok::Punct('{'))) {
            p.pos += 1;
            let name = p.expect_ident()?;
            p.expect_punct('{')?;
            let mut values = Vec::new();
            let mut next_value = 0i64;
            loop {
                if matches!(p.peek(), Some(Tok::Punct('}'))) {
                    p.pos += 1;
                    break;
                }
                let cname = p.expect_ident()?;
                if matches!(p.peek(), Some(Tok::Punct('='))) {
                    p.pos += 1;
                    match p.next() {
                        Some(Tok::Int(v)) => next_value = v,
                        _ => {
                            p.pos -= 1;
                            return Err(p.error_here("expected integer constant"));
                        }
                    }
                }
                values.push(EnumConst {
                    name: cname,
                    value: next_value,
                });
                next_value += 1;
                match p.peek() {
                    Some(Tok::Punct(',')) => p.pos += 1,
                    Some(Tok::Punct('}')) => {}
                    _ => return Err(p.error_here("expected `,` or `}` in enum")),
                }
            }
            p.expect_punct(';')?;
            model.enums.push(EnumDef { name, values });
        } else if p.at_ident("struct") && matches!(p.peek_at(2), Some(Tok::Punct('{'))) {
            p.pos += 1;
            let name = p.expect_ident()?;
            p.expect_punct('{')?;
            let mut fields = Vec::new();
            while !matches!(p.peek(), Some(Tok::Punct('}'))) {
                let field_pos = p.pos;
                let (ty, fname) = p.declarator(&[';'])?;
                p.expect_punct(';')?;
                let (kind, width) = if ty.pointer_depth > 0 {
                    (ScalarKind::Address, 8)
                } else if let Some(k) = scalar_kind(&ty.base) {
                    k
                } else if model.enums.iter().any(|e| e.name == ty.base) {
                    (ScalarKind::Signed, 4)
                } else {
                    return Err(ModelError::UnresolvedType {
                        context: format!("field `{fname}` of struct `{name}`"),
                        ty: ty.spelling(),
                    });
                };
                if kind == ScalarKind::Address && !(fields.is_empty() && fname == "pNext") {
                    p.pos = field_pos;
                    return Err(p.error_here("only a leading `pNext` field may be a pointer"));
                }
                fields.push(StructField {
                    name: fname,
                    kind,
                    width,
                });
            }
            p.expect_punct('}')?;
            p.expect_punct(';')?;
            model.structs.push(StructDef { name, fields });
        } else {
            let (ret, name) = p.declarator(&['('])?;
            p.expect_punct('(')?;
            let mut params = Vec::new();
            let void_only = p.at_ident("void") && matches!(p.peek_at(1), Some(Tok::Punct(')')));
            if void_only {
                p.pos += 1;
            } else if !matches!(p.peek(), Some(Tok::Punct(')'))) {
                loop {
                    let (ty, pname) = p.declarator(&[',', ')'])?;
                    params.push(ParamDecl::new(pname, ty.spelling()));
                    if matches!(p.peek(), Some(Tok::Punct(','))) {
                        p.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            p.expect_punct(')')?;
            p.expect_punct(';')?;
            if model.functions.iter().any(|f| f.name == name) {
                return Err(ModelError::DuplicateFunction(name));
            }
            model.functions.push(FunctionDecl {
                name,
                return_type: ret.spelling(),
                params,
                attrs: Default::default(),
                profiling_detail: Vec::new(),
            });
        }
    }

    model.api_name = model
        .functions
        .first()
        .map(|f| {
            f.name
                .chars()
                .take_while(|c| c.is_ascii_lowercase())
                .collect::<String>()
        })
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "api".to_string());
    model.resolve_and_validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::api_model::{Direction, MOCK_HEADER};

    #[test]
    fn minimal_handle_case() {
        let m = parse_header_decls("typedef void* ze_handle_t; int zeMemFree(ze_handle_t h);").unwrap();
        assert_eq!(m.functions.len(), 1);
        let p = &m.functions[0].params[0];
        assert!(p.is_handle);
        assert_eq!(p.direction, Direction::Unknown);
        assert_eq!(m.api_name, "ze");
        assert_eq!(m.handles, vec!["ze_handle_t"]);
    }

    #[test]
    fn unterminated_declaration_reports_truncation_point() {
        let err = parse_header_decls("int f(int x").unwrap_err();
        assert_eq!(
            err,
            ModelError::Syntax {
                line: 1,
                column: 12,
                message: "expected `,` or `)`, found end of input".into()
            }
        );
    }

    #[test]
    fn error_positions_are_line_and_column() {
        let err = parse_header_decls("int f(int x);\nint g(int y) int;\n").unwrap_err();
        match err {
            ModelError::Syntax { line, column, .. } => assert_eq!((line, column), (2, 14)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_unresolved() {
        assert_eq!(
            parse_header_decls("int f(int x); int f(int y);").unwrap_err(),
            ModelError::DuplicateFunction("f".into())
        );
        assert!(matches!(
            parse_header_decls("int f(widget_t w);").unwrap_err(),
            ModelError::UnresolvedType { .. }
        ));
        assert!(matches!(
            parse_header_decls("int f(int a, int a);").unwrap_err(),
            ModelError::DuplicateParam { .. }
        ));
    }

    #[test]
    fn enums_structs_and_comments() {
        let src = r#"
            #include <stdint.h>
            // a comment
            enum color { RED, GREEN = 5, BLUE, };
            /* block
               comment */
            struct props { const void* pNext; uint32_t id; double scale; };
            void reset(void);
            unsigned long long count(struct props* p, enum color c);
        "#;
        let m = parse_header_decls(src).unwrap();
        assert_eq!(
            m.enums[0].values.iter().map(|v| v.value).collect::<Vec<_>>(),
            vec![0, 5, 6]
        );
        assert_eq!(m.structs[0].fields.len(), 3);
        assert!(m.functions[0].params.is_empty());
        assert_eq!(m.functions[1].return_type, "unsigned long long");
        assert_eq!(m.functions[1].params[0].c_type, "struct props*");
        assert_eq!(m.functions[1].params[1].c_type, "enum color");
    }

    #[test]
    fn pointer_fields_other_than_leading_pnext_are_rejected() {
        assert!(parse_header_decls("struct s { uint32_t a; void* pNext; };").is_err());
        assert!(parse_header_decls("struct s { void* data; };").is_err());
    }

    #[test]
    fn mock_header_function_count_matches_independent_scan() {
        // Independent oracle: count lines that look like `int zeMock...(` declarations.
        let expected: Vec<String> = MOCK_HEADER
            .lines()
            .map(str::trim)
            .filter(|l| l.starts_with("int ") && l.ends_with(");"))
            .map(|l| l[4..l.find('(').unwrap()].to_string())
            .collect();
        let m = parse_header_decls(MOCK_HEADER).unwrap();
        let names: Vec<String> = m.functions.iter().map(|f| f.name.clone()).collect();
        assert_eq!(names, expected);
        assert_eq!(names.len(), 13);
    }
}
