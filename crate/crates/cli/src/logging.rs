//! Line-delimited JSON records on stderr. A message that is itself a JSON
//! object is merged into the record; anything else lands under `msg`.
//! The level defaults to `info` and follows `RUST_LOG` when set.

use std::io::Write;

use serde_json::{Map, Value};

pub fn init() {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .parse_default_env()
        .format(|buf, record| {
            let msg = record.args().to_string();
            let mut obj = Map::new();
            obj.insert("level".into(), record.level().as_str().to_lowercase().into());
            match serde_json::from_str::<Value>(&msg) {
                Ok(Value::Object(m)) => obj.extend(m),
                _ => {
                    obj.insert("msg".into(), msg.into());
                }
            }
            writeln!(buf, "{}", Value::Object(obj))
        })
        .init();
}

/// Emits `{"event": name, ...fields}` at info level.
pub fn event(name: &str, fields: Value) {
    log::info!("{}", record(name, fields));
}

pub fn record(name: &str, fields: Value) -> Value {
    let mut obj = Map::new();
    obj.insert("event".into(), name.into());
    if let Value::Object(m) = fields {
        obj.extend(m);
    }
    Value::Object(obj)
}
