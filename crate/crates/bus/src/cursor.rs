//! Consumer group cursor files.
//!
//! One file per group at `groups/<group>.cursor`, one `topic=offset` line per
//! subscribed topic, where `offset` is the last committed offset or `-1`.
//! Lines starting with `#` are comments. Files are replaced atomically.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

pub(crate) fn render(cursors: &BTreeMap<String, i64>) -> String {
    let mut out = String::from("# minimon consumer group cursor\n");
    for (topic, committed) in cursors {
        out.push_str(topic);
        out.push('=');
        out.push_str(&committed.to_string());
        out.push('\n');
    }
    out
}

pub(crate) fn parse(text: &str) -> Result<BTreeMap<String, i64>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (topic, value) = line.split_once('=').ok_or_else(|| format!("line {}: expected topic=offset", n + 1))?;
        let committed: i64 = value.trim().parse().map_err(|_| format!("line {}: bad offset {value:?}", n + 1))?;
        if committed < -1 {
            return Err(format!("line {}: offset below -1", n + 1));
        }
        out.insert(topic.trim().to_string(), committed);
    }
    Ok(out)
}

pub(crate) fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let tmp = path.with_extension("cursor.tmp");
    let mut f = File::create(&tmp)?;
    f.write_all(contents.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        File::open(dir)?.sync_all()?;
    }
    Ok(())
}
