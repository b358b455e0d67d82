//! Merging of a key-value config file into the argument list.
//!
//! Each non-empty, non-comment line `name = value` becomes `--name=value`
//! inserted right after the subcommand, so any flag given on the command line
//! appears later and overrides it. `true` turns a switch on, `false` omits it.

use std::ffi::OsString;
use std::path::PathBuf;

use entroseg::{Error, Result};

const SUBCOMMANDS_WITH_CHILDREN: [&str; 1] = ["synth"];

/// Remove `--config` from `args` and splice the file's entries in.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let (mut rest, path) = take_config(args)?;
    let Some(path) = path else {
        return Ok(rest);
    };
    let text = entroseg::fsutil::read_to_string(&path)?;
    let entries = parse(&text).map_err(|e| e.in_file(&path))?;
    let at = insertion_point(&rest);
    let tail = rest.split_off(at);
    rest.extend(entries);
    rest.extend(tail);
    Ok(rest)
}

fn take_config(args: Vec<OsString>) -> Result<(Vec<OsString>, Option<PathBuf>)> {
    let mut out = Vec::with_capacity(args.len());
    let mut path = None;
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--" {
            out.push(arg);
            out.extend(iter);
            break;
        }
        if text == "--config" {
            let value = iter
                .next()
                .ok_or_else(|| Error::InvalidArgument("--config needs a file path".into()))?;
            path = Some(PathBuf::from(value));
        } else if let Some(v) = text.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
        } else {
            out.push(arg);
        }
    }
    Ok((out, path))
}

/// Index just past the (possibly nested) subcommand name.
fn insertion_point(args: &[OsString]) -> usize {
    let mut idx = 1;
    while idx < args.len() && args[idx].to_string_lossy().starts_with('-') {
        idx += 1;
    }
    if idx >= args.len() {
        return args.len();
    }
    let is_parent = SUBCOMMANDS_WITH_CHILDREN.contains(&args[idx].to_string_lossy().as_ref());
    idx += 1;
    if is_parent && idx < args.len() && !args[idx].to_string_lossy().starts_with('-') {
        idx += 1;
    }
    idx
}

fn parse(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: format!("expected name = value, got {line:?}"),
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key == "config" {
            return Err(Error::Parse {
                line: i + 1,
                reason: format!("invalid key {key:?}"),
            });
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => out.push(format!("--{key}={v}").into()),
        }
    }
    Ok(out)
}
