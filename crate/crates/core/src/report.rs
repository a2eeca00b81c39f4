//! Byte-stable JSON output and run digests.
//!
//! Reports serialize struct fields in declaration order and write every
//! float in scientific notation with 17 significant digits, so two runs that
//! compute the same `f64` values emit the same bytes.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

#[derive(Clone, Copy, Debug, Default)]
pub struct StableFloatFormatter;

impl Formatter for StableFloatFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

/// Serialize `value` as a single line of stable JSON.
pub fn to_stable_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, StableFloatFormatter);
    value.serialize(&mut ser)?;
    // The formatter only emits ASCII and serde_json escapes input strings.
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Write stable JSON followed by a newline.
pub fn write_stable_json<T: Serialize + ?Sized>(
    path: &std::path::Path,
    value: &T,
) -> io::Result<()> {
    let mut text = to_stable_json(value).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(path, text)
}

/// Compact JSON with serde_json's default (shortest round-trip) floats.
pub fn to_compact_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CompactFormatter);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Order-sensitive 64-bit FNV-1a over an id sequence. Each id's UTF-8 bytes
/// are followed by a `\n` separator so `["ab","c"]` and `["a","bc"]` differ.
pub fn fnv1a_ids<S: AsRef<str>>(ids: &[S]) -> u64 {
    let mut h = FNV_OFFSET;
    for id in ids {
        for b in id.as_ref().bytes().chain(std::iter::once(b'\n')) {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}
