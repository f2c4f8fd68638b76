//! C99 interposer source generation.

use std::fmt::Write as _;

use super::registry::{function_plan, Capture, DerefRead, FieldKind, FunctionPlan, MAX_CAPTURE_BYTES};
use super::{CodegenError, SchemaRegistry};
use crate::api_model::{fingerprint, ApiModel, CType, FunctionDecl, ResolvedType, ScalarKind};

/// The writer binding header the generated source includes.
pub const WRITER_HEADER: &str = include_str!("../../data/hapitrace_writer.h");

/// Name of the optional runtime hook that hands completed device commands
/// to the interposer.
pub const PROFILING_POLL_SYMBOL: &str = "hapiProfilingPoll";

const PRELUDE: &str = r#"#define _GNU_SOURCE
#include <dlfcn.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>
#include <string.h>

#include "hapitrace_writer.h"

/* Payload helpers. The trace encoding is little-endian, like the hosts we target. */
static size_t hapi_put_u64(unsigned char* b, size_t o, uint64_t v) {
    memcpy(b + o, &v, 8);
    return o + 8;
}

static size_t hapi_put_f64(unsigned char* b, size_t o, double v) {
    memcpy(b + o, &v, 8);
    return o + 8;
}

static size_t hapi_put_bytes(unsigned char* b, size_t o, const void* p, uint32_t n) {
    memcpy(b + o, &n, 4);
    if (n && p) {
        memcpy(b + o + 4, p, n);
    }
    return o + 4 + n;
}

static uint32_t hapi_strnlen(const char* s, uint32_t max) {
    uint32_t n = 0;
    if (!s) {
        return 0;
    }
    while (n < max && s[n]) {
        n++;
    }
    return n;
}

static int hapi_ready;

__attribute__((constructor)) static void hapi_init(void) {
    const char* dir = getenv("HAPITRACE_OUT");
    const char* mode = getenv("HAPITRACE_MODE");
    int m = HAPI_MODE_DEFAULT;
    if (!dir) {
        return;
    }
    if (mode && strcmp(mode, "minimal") == 0) {
        m = HAPI_MODE_MINIMAL;
    } else if (mode && strcmp(mode, "full") == 0) {
        m = HAPI_MODE_FULL;
    }
    hapi_ready = hapi_writer_open(dir, hapi_registry_json, m) == 0;
}

__attribute__((destructor)) static void hapi_fini(void) {
    if (hapi_ready) {
        hapi_ready = 0;
        hapi_writer_close();
    }
}
"#;

const PROFILING_PRELUDE: &str = r#"
/* A completed device command, filled in by the runtime's poll hook. */
struct hapi_command {
    const char* function;
    const char* kind;
    const char* name;
    uint64_t start_ns;
    uint64_t end_ns;
    uint64_t device;
    uint64_t tile;
    const char* engine;
    const uint64_t* args;
    uint32_t nargs;
};

/* Returns 1 and fills `out` while completed commands remain, 0 otherwise. */
typedef int (*hapi_profiling_poll_fn)(struct hapi_command* out);

static size_t hapi_put_str(unsigned char* b, size_t o, const char* s) {
    return hapi_put_bytes(b, o, s, hapi_strnlen(s, 4096));
}

static uint64_t hapi_cmd_arg(const struct hapi_command* c, uint32_t i) {
    return i < c->nargs ? c->args[i] : 0;
}
"#;

fn c_string_literal(text: &str) -> String {
    let mut out = String::new();
    let mut line = String::from("    \"");
    for ch in text.chars() {
        match ch {
            '"' => line.push_str("\\\""),
            '\\' => line.push_str("\\\\"),
            '\n' => line.push_str("\\n"),
            c if c.is_ascii() && !c.is_ascii_control() => line.push(c),
            c => {
                let mut buf = [0u8; 4];
                for b in c.encode_utf8(&mut buf).bytes() {
                    let _ = write!(line, "\\{b:03o}");
                }
            }
        }
        if line.len() >= 96 {
            line.push('"');
            out.push_str(&line);
            out.push('\n');
            line = String::from("    \"");
        }
    }
    line.push('"');
    out.push_str(&line);
    out
}

/// How a by-value argument is widened to its 8-byte field.
fn arg_expr(model: &ApiModel, ty: &CType, name: &str, kind: FieldKind) -> String {
    let is_pointer_like = ty.pointer_depth > 0 || matches!(model.resolve(ty), Some(ResolvedType::Handle));
    if is_pointer_like {
        return format!("(uint64_t)(uintptr_t){name}");
    }
    match kind {
        FieldKind::I64 => format!("(uint64_t)(int64_t){name}"),
        _ => format!("(uint64_t){name}"),
    }
}

fn put_arg(model: &ApiModel, f: &FunctionDecl, index: usize, kind: FieldKind) -> String {
    let p = &f.params[index];
    if kind == FieldKind::F64 {
        format!("o = hapi_put_f64(b, o, (double){});", p.name)
    } else {
        format!(
            "o = hapi_put_u64(b, o, {});",
            arg_expr(model, &p.ctype(), &p.name, kind)
        )
    }
}

fn c_scalar_type(kind: FieldKind, width: usize) -> &'static str {
    match kind {
        FieldKind::I64 => ScalarKind::Signed.c_spelling(width as u8),
        FieldKind::F64 => ScalarKind::Float.c_spelling(width as u8),
        FieldKind::Address => "void*",
        _ => ScalarKind::Unsigned.c_spelling(width as u8),
    }
}

fn put_capture(model: &ApiModel, f: &FunctionDecl, c: &Capture) -> String {
    match c {
        Capture::Arg { index, kind } => put_arg(model, f, *index, *kind),
        Capture::Result { kind } => match kind {
            FieldKind::F64 => "o = hapi_put_f64(b, o, (double)r);".into(),
            FieldKind::Address => "o = hapi_put_u64(b, o, (uint64_t)(uintptr_t)r);".into(),
            FieldKind::I64 => "o = hapi_put_u64(b, o, (uint64_t)(int64_t)r);".into(),
            _ => "o = hapi_put_u64(b, o, (uint64_t)r);".into(),
        },
        Capture::Deref { index, read } => {
            let p = &f.params[*index].name;
            match read {
                DerefRead::Value { offset, width, kind } => {
                    let ty = c_scalar_type(*kind, *width);
                    let widen = match kind {
                        FieldKind::F64 => "hapi_put_f64(b, o, (double)t)",
                        FieldKind::Address => "hapi_put_u64(b, o, (uint64_t)(uintptr_t)t)",
                        FieldKind::I64 => "hapi_put_u64(b, o, (uint64_t)(int64_t)t)",
                        _ => "hapi_put_u64(b, o, (uint64_t)t)",
                    };
                    format!(
                        "{{ {ty} t = 0; if ({p}) {{ memcpy(&t, (const unsigned char*){p} + {offset}, sizeof t); }} o = {widen}; }}"
                    )
                }
                DerefRead::String => {
                    format!("o = hapi_put_bytes(b, o, {p}, hapi_strnlen((const char*){p}, {MAX_CAPTURE_BYTES}));")
                }
                DerefRead::Array { length_arg, elem_size } => {
                    let len = &f.params[*length_arg].name;
                    format!(
                        "{{ uint64_t n = (uint64_t){len} * {elem_size}u; if (n > {MAX_CAPTURE_BYTES}u) n = {MAX_CAPTURE_BYTES}u; o = hapi_put_bytes(b, o, {p}, {p} ? (uint32_t)n : 0u); }}"
                    )
                }
                DerefRead::Blob { size } => {
                    format!("o = hapi_put_bytes(b, o, {p}, {p} ? {size}u : 0u);")
                }
            }
        }
    }
}

fn capacity(fields: &[(super::FieldSpec, Capture)]) -> usize {
    fields
        .iter()
        .map(|(fs, _)| match fs.kind {
            FieldKind::String | FieldKind::Blob => 4 + MAX_CAPTURE_BYTES,
            _ => 8,
        })
        .sum::<usize>()
        .max(8)
}

fn signature(f: &FunctionDecl, name_override: Option<&str>) -> String {
    let params = if f.params.is_empty() {
        "void".to_string()
    } else {
        f.params
            .iter()
            .map(|p| format!("{} {}", p.ctype().spelling(), p.name))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!(
        "{} {}({params})",
        CType::parse(&f.return_type).spelling(),
        name_override.unwrap_or(&f.name)
    )
}

fn fn_pointer_type(f: &FunctionDecl) -> String {
    let params = if f.params.is_empty() {
        "void".to_string()
    } else {
        f.params
            .iter()
            .map(|p| p.ctype().spelling())
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!("{} (*)({params})", CType::parse(&f.return_type).spelling())
}

fn emit_declarations(model: &ApiModel, out: &mut String) {
    out.push_str("/* Declarations re-emitted from the API model. */\n");
    for h in &model.handles {
        let _ = writeln!(out, "typedef struct hapi_opaque_{h}* {h};");
    }
    for e in &model.enums {
        let _ = writeln!(out, "enum {} {{", e.name);
        for (i, v) in e.values.iter().enumerate() {
            let comma = if i + 1 < e.values.len() { "," } else { "" };
            let _ = writeln!(out, "    {} = {}{comma}", v.name, v.value);
        }
        out.push_str("};\n");
    }
    for s in &model.structs {
        let _ = writeln!(out, "struct {} {{", s.name);
        for f in &s.fields {
            let _ = writeln!(out, "    {} {};", f.kind.c_spelling(f.width), f.name);
        }
        out.push_str("};\n");
    }
    out.push('\n');
}

fn emit_wrapper(
    model: &ApiModel,
    registry: &SchemaRegistry,
    f: &FunctionDecl,
    plan: &FunctionPlan,
    profiled_any: bool,
    out: &mut String,
) {
    let entry_id = registry.entry_of(&f.name).expect("entry schema").id;
    let exit_id = registry.exit_of(&f.name).expect("exit schema").id;
    let ret = CType::parse(&f.return_type);
    let returns = !(ret.base == "void" && ret.pointer_depth == 0);
    let fptr = fn_pointer_type(f);
    let args = f.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ");
    let cap = capacity(&plan.entry).max(capacity(&plan.exit));

    let _ = writeln!(out, "{} {{", signature(f, None));
    let _ = writeln!(out, "    typedef {};", fptr.replacen("(*)", "(*hapi_real_t)", 1));
    out.push_str("    static hapi_real_t real;\n");
    out.push_str("    hapi_stream* s = hapi_ready ? hapi_stream_acquire() : NULL;\n");
    let _ = writeln!(out, "    unsigned char b[{cap}];");
    out.push_str("    size_t o = 0;\n");
    if returns {
        let _ = writeln!(out, "    {} r;", ret.spelling());
    }
    out.push_str("    if (!real) {\n");
    let _ = writeln!(out, "        real = (hapi_real_t)dlsym(RTLD_NEXT, \"{}\");", f.name);
    out.push_str("    }\n");
    out.push_str("    if (s) {\n");
    for (_, c) in &plan.entry {
        let _ = writeln!(out, "        {}", put_capture(model, f, c));
    }
    let _ = writeln!(
        out,
        "        hapi_emit(s, {entry_id}u, hapi_clock_now(), b, (uint32_t)o);"
    );
    out.push_str("    }\n");
    if returns {
        let _ = writeln!(out, "    r = real({args});");
    } else {
        let _ = writeln!(out, "    real({args});");
    }
    out.push_str("    if (s) {\n        o = 0;\n");
    for (_, c) in &plan.exit {
        let _ = writeln!(out, "        {}", put_capture(model, f, c));
    }
    let _ = writeln!(
        out,
        "        hapi_emit(s, {exit_id}u, hapi_clock_now(), b, (uint32_t)o);"
    );
    if profiled_any {
        out.push_str("        hapi_flush_profiling(s);\n");
    }
    out.push_str("    }\n");
    if returns {
        out.push_str("    return r;\n");
    }
    out.push_str("}\n\n");
}

fn emit_profiling_flush(registry: &SchemaRegistry, plans: &[FunctionPlan], out: &mut String) {
    out.push_str(PROFILING_PRELUDE);
    out.push_str("\nstatic void hapi_flush_profiling(hapi_stream* s) {\n");
    out.push_str("    static hapi_profiling_poll_fn poll;\n");
    out.push_str("    static int resolved;\n");
    out.push_str("    struct hapi_command c;\n");
    out.push_str("    if (!resolved) {\n");
    let _ = writeln!(
        out,
        "        poll = (hapi_profiling_poll_fn)dlsym(RTLD_DEFAULT, \"{PROFILING_POLL_SYMBOL}\");"
    );
    out.push_str("        resolved = 1;\n    }\n");
    out.push_str("    if (!poll) {\n        return;\n    }\n");
    out.push_str("    while (poll(&c)) {\n");
    let detail_cap = plans.iter().map(|p| p.profiling_detail.len()).max().unwrap_or(0);
    let _ = writeln!(
        out,
        "        unsigned char b[{}];",
        4 * 8 + 3 * (4 + MAX_CAPTURE_BYTES) + 8 * detail_cap
    );
    out.push_str("        size_t o = 0;\n        uint32_t id;\n");
    let mut first = true;
    for p in plans.iter().filter(|p| p.profiled) {
        let id = registry.profiling_of(&p.function).expect("profiling schema").id;
        let kw = if first { "if" } else { "} else if" };
        first = false;
        let _ = writeln!(
            out,
            "        {kw} (c.function && strcmp(c.function, \"{}\") == 0) {{",
            p.function
        );
        let _ = writeln!(out, "            id = {id}u;");
    }
    out.push_str("        } else {\n            continue;\n        }\n");
    out.push_str("        o = hapi_put_u64(b, o, c.start_ns);\n");
    out.push_str("        o = hapi_put_u64(b, o, c.end_ns);\n");
    out.push_str("        o = hapi_put_str(b, o, c.kind);\n");
    out.push_str("        o = hapi_put_str(b, o, c.name);\n");
    out.push_str("        o = hapi_put_u64(b, o, c.device);\n");
    out.push_str("        o = hapi_put_u64(b, o, c.tile);\n");
    out.push_str("        o = hapi_put_str(b, o, c.engine);\n");
    // Detail fields differ per function; index by argument position.
    let mut first = true;
    for p in plans.iter().filter(|p| p.profiled && !p.profiling_detail.is_empty()) {
        let id = registry.profiling_of(&p.function).expect("profiling schema").id;
        let kw = if first { "if" } else { "} else if" };
        first = false;
        let _ = writeln!(out, "        {kw} (id == {id}u) {{");
        for (spec, idx) in &p.profiling_detail {
            if spec.kind == FieldKind::F64 {
                let _ = writeln!(out, "            {{ uint64_t raw = hapi_cmd_arg(&c, {idx}u); double d; memcpy(&d, &raw, 8); o = hapi_put_f64(b, o, d); }}");
            } else {
                let _ = writeln!(out, "            o = hapi_put_u64(b, o, hapi_cmd_arg(&c, {idx}u));");
            }
        }
    }
    if !first {
        out.push_str("        }\n");
    }
    out.push_str("        hapi_emit(s, id, hapi_clock_now(), b, (uint32_t)o);\n");
    out.push_str("    }\n}\n\n");
}

/// Generates a preload interposer for every function of `model`.
///
/// The output is deterministic: identical inputs give byte-identical text.
pub fn emit_interposer_source(model: &ApiModel, registry: &SchemaRegistry) -> Result<String, CodegenError> {
    let fp = fingerprint(model);
    if fp != registry.fingerprint {
        return Err(CodegenError::FingerprintMismatch {
            registry: registry.fingerprint,
            model: fp,
        });
    }
    let plans = model
        .functions
        .iter()
        .map(|f| function_plan(model, f, registry.scenario))
        .collect::<Result<Vec<_>, _>>()?;
    let profiled_any = plans.iter().any(|p| p.profiled);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "/* Interposer for API `{}` version {}, model fingerprint 0x{fp:016x}. Generated; do not edit. */",
        model.api_name, model.version
    );
    let json = serde_json::to_string(registry).expect("registry serializes");
    let (head, tail) = PRELUDE.split_at(PRELUDE.find("/* Payload helpers").unwrap());
    out.push_str(head);
    emit_declarations(model, &mut out);
    out.push_str("static const char hapi_registry_json[] =\n");
    out.push_str(&c_string_literal(&json));
    out.push_str(";\n\n");
    out.push_str(tail);
    out.push('\n');
    if profiled_any {
        emit_profiling_flush(registry, &plans, &mut out);
    }
    for (f, plan) in model.functions.iter().zip(&plans) {
        emit_wrapper(model, registry, f, plan, profiled_any, &mut out);
    }
    Ok(out)
}
