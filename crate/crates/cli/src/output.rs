use std::path::Path;

use multibump::io::{self, num};
use serde_json::{json, Map, Value};

use crate::{CliError, Context};

pub fn io_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(format!("i/o: {e}"))
}

/// Run metadata embedded in every report.
pub fn meta(ctx: &Context, command: &str) -> Value {
    json!({
        "command": command,
        "config_sha256": ctx.config_hash,
        "versions": {
            "multibump": multibump::VERSION,
            "multibump_cli": env!("CARGO_PKG_VERSION"),
        },
        "threads": ctx.jobs,
    })
}

/// Pretty JSON with `meta` first, then the report fields.
pub fn write_report(ctx: &Context, command: &str, name: &str, body: Value) -> Result<(), CliError> {
    let mut obj = Map::new();
    obj.insert("meta".into(), meta(ctx, command));
    if let Value::Object(m) = body {
        obj.extend(m);
    } else {
        obj.insert("report".into(), body);
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(obj)).map_err(io_err)?;
    text.push('\n');
    std::fs::write(ctx.out.join(name), text).map_err(io_err)
}

pub fn write_table(ctx: &Context, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    io::write_csv_file(&ctx.out.join(name), header, rows).map_err(io_err)
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn read_json(path: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}
