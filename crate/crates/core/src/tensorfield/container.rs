//! `CKT1` trajectory container.
//!
//! Layout: a UTF-8 key/value header, one `key = value` record per line, opened by
//! the magic line `CKT1` and closed by the line `end`. The `payload_offset` record
//! gives the byte offset of the binary payload, which holds every snapshot as
//! little-endian IEEE-754 `f64`, time-major, then channel-major, then row-major
//! over space.
//!
//! ```text
//! CKT1
//! version = 1
//! payload_offset = 000000000312
//! endianness = little
//! dim = 2
//! extents = 16,16
//! time_length = 10
//! dt_index = 1
//! channels = 3
//! fields = p:0,v:1
//! transforms = p:log10
//! boundary = periodic/periodic,open/closed
//! layout = time,field,component,row-major
//! end
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Boundary, BoundarySpec, FieldMeta, FieldSet, Grid, Trajectory};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &str = "CKT1";
const VERSION: u32 = 1;
const LAYOUT: &str = "time,field,component,row-major";
const OFFSET_WIDTH: usize = 12;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn check_name(name: &str) -> Result<()> {
    let bad = |c: char| c.is_whitespace() || matches!(c, ',' | ':' | '=' | '/');
    if name.is_empty() || name.chars().any(bad) {
        return Err(Error::Validation(format!(
            "field name `{name}` cannot be stored (empty or contains separators)"
        )));
    }
    Ok(())
}

fn header(traj: &Trajectory, offset: usize) -> Result<String> {
    let layout = traj.layout();
    let mut fields = Vec::new();
    let mut transforms = Vec::new();
    for f in layout.fields() {
        check_name(&f.name)?;
        fields.push(format!("{}:{}", f.name, f.order));
        if let Some(t) = &f.transform {
            check_name(t)?;
            transforms.push(format!("{}:{t}", f.name));
        }
    }
    let boundary: Vec<String> = traj
        .boundary()
        .sides()
        .iter()
        .map(|[lo, hi]| format!("{lo}/{hi}"))
        .collect();
    let extents: Vec<String> = layout.extents().iter().map(|e| e.to_string()).collect();
    let mut h = String::new();
    h.push_str(CONTAINER_MAGIC);
    h.push('\n');
    h.push_str(&format!("version = {VERSION}\n"));
    h.push_str(&format!("payload_offset = {offset:0OFFSET_WIDTH$}\n"));
    h.push_str("endianness = little\n");
    h.push_str(&format!("dim = {}\n", layout.dim()));
    h.push_str(&format!("extents = {}\n", extents.join(",")));
    h.push_str(&format!("time_length = {}\n", traj.len()));
    h.push_str(&format!("dt_index = {}\n", traj.dt_index()));
    h.push_str(&format!("channels = {}\n", layout.channels()));
    h.push_str(&format!("fields = {}\n", fields.join(",")));
    h.push_str(&format!("transforms = {}\n", transforms.join(",")));
    h.push_str(&format!("boundary = {}\n", boundary.join(",")));
    h.push_str(&format!("layout = {LAYOUT}\n"));
    h.push_str("end\n");
    Ok(h)
}

/// Serializes a trajectory to `path`.
pub fn write_container(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let probe = header(traj, 0)?;
    let text = header(traj, probe.len())?;
    debug_assert_eq!(text.len(), probe.len());
    let values_per_snapshot = traj.layout().values().len();
    let mut bytes = Vec::with_capacity(text.len() + 8 * values_per_snapshot * traj.len());
    bytes.extend_from_slice(text.as_bytes());
    for snap in traj.snapshots() {
        for v in snap.values() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&bytes).map_err(|e| io_err(path, e))?;
    file.sync_all().map_err(|e| io_err(path, e))?;
    Ok(())
}

fn parse_usize(record: &str, value: &str) -> Result<usize> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(record, format!("expected an unsigned integer, got `{value}`")))
}

fn parse_list<T>(record: &str, value: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|item| f(item.trim())).collect::<Result<_>>().map_err(|e| match e {
        Error::Parse { .. } => e,
        other => Error::parse(record, other.to_string()),
    })
}

/// Reads a trajectory written by [`write_container`].
pub fn read_container(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Trajectory> {
    let mut records: BTreeMap<String, String> = BTreeMap::new();
    let mut pos = 0usize;
    let mut first = true;
    let mut closed = false;
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i)
            .ok_or_else(|| Error::parse("header", "unterminated header line"))?;
        let line = std::str::from_utf8(&bytes[pos..end])
            .map_err(|_| Error::parse("header", "header is not valid UTF-8"))?;
        pos = end + 1;
        if first {
            if line != CONTAINER_MAGIC {
                return Err(Error::parse("magic", format!("expected `{CONTAINER_MAGIC}`, got `{line}`")));
            }
            first = false;
            continue;
        }
        if line == "end" {
            closed = true;
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(line, "expected `key = value`"))?;
        records.insert(k.trim().to_string(), v.trim().to_string());
    }
    if first {
        return Err(Error::parse("magic", "empty file"));
    }
    if !closed {
        return Err(Error::parse("header", "missing `end` record"));
    }
    let get = |k: &str| {
        records
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::parse(k, "record missing"))
    };

    let version = parse_usize("version", get("version")?)?;
    if version != VERSION as usize {
        return Err(Error::parse("version", format!("unknown version {version}")));
    }
    let endianness = get("endianness")?;
    if endianness != "little" {
        return Err(Error::parse("endianness", format!("unsupported endianness `{endianness}`")));
    }
    let layout = get("layout")?;
    if layout != LAYOUT {
        return Err(Error::parse("layout", format!("unsupported layout `{layout}`")));
    }
    let offset = parse_usize("payload_offset", get("payload_offset")?)?;
    if offset < pos || offset > bytes.len() {
        return Err(Error::parse("payload_offset", format!("offset {offset} outside file")));
    }
    let dim = parse_usize("dim", get("dim")?)?;
    if dim != 2 && dim != 3 {
        return Err(Error::Validation(format!("record `dim`: must be 2 or 3, got {dim}")));
    }
    let extents = parse_list("extents", get("extents")?, |s| parse_usize("extents", s))?;
    if extents.len() != dim {
        return Err(Error::parse(
            "extents",
            format!("{} extents for dim {dim}", extents.len()),
        ));
    }
    let time_length = parse_usize("time_length", get("time_length")?)?;
    let dt_index = parse_usize("dt_index", get("dt_index")?)?;
    let channels = parse_usize("channels", get("channels")?)?;
    let mut fields = parse_list("fields", get("fields")?, |item| {
        let (name, order) = item
            .split_once(':')
            .ok_or_else(|| Error::parse("fields", format!("expected name:order, got `{item}`")))?;
        let order = parse_usize("fields", order)?;
        if order > 2 {
            return Err(Error::parse("fields", format!("order {order} of `{name}` exceeds 2")));
        }
        Ok(FieldMeta::new(name, order as u8))
    })?;
    for item in parse_list("transforms", get("transforms")?, |item| {
        item.split_once(':')
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .ok_or_else(|| Error::parse("transforms", format!("expected name:transform, got `{item}`")))
    })? {
        let (name, t) = item;
        let f = fields
            .iter_mut()
            .find(|f| f.name == name)
            .ok_or_else(|| Error::parse("transforms", format!("unknown field `{name}`")))?;
        f.transform = Some(t);
    }
    let expected_channels: usize = fields.iter().map(|f| f.components(dim)).sum();
    if expected_channels != channels {
        return Err(Error::parse(
            "channels",
            format!("{channels} channels but fields imply {expected_channels}"),
        ));
    }
    let sides = parse_list("boundary", get("boundary")?, |item| {
        let (lo, hi) = item
            .split_once('/')
            .ok_or_else(|| Error::parse("boundary", format!("expected lo/hi, got `{item}`")))?;
        Ok([lo.parse::<Boundary>()?, hi.parse::<Boundary>()?])
    })?;
    if sides.len() != dim {
        return Err(Error::parse("boundary", format!("{} axes for dim {dim}", sides.len())));
    }
    let boundary = BoundarySpec::new(sides).map_err(|e| Error::parse("boundary", e.to_string()))?;

    let cells: usize = extents.iter().product();
    let per_snapshot = channels * cells;
    let payload = &bytes[offset..];
    if payload.len() != 8 * per_snapshot * time_length {
        return Err(Error::parse(
            "payload",
            format!(
                "payload length mismatch: {} bytes, expected {}",
                payload.len(),
                8 * per_snapshot * time_length
            ),
        ));
    }
    let mut snapshots = Vec::with_capacity(time_length);
    for chunk in payload.chunks_exact(8 * per_snapshot) {
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        let grid = Grid::from_vec(channels, &extents, data)?;
        snapshots.push(FieldSet::new(fields.clone(), grid)?);
    }
    Trajectory::new(snapshots, dt_index, boundary)
}
