//! Shared helpers for the on-disk formats: an ASCII magic line, an ASCII
//! header line, then a little-endian float payload.

use crate::error::FormatError;

/// Splits `bytes` at the first `\n`, returning the line (without newline) and
/// the remainder.
pub(crate) fn take_line(bytes: &[u8]) -> Result<(&str, &[u8]), FormatError> {
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FormatError::MalformedHeader("missing newline".into()))?;
    let line = std::str::from_utf8(&bytes[..end])
        .map_err(|_| FormatError::MalformedHeader("header is not ASCII".into()))?;
    Ok((line, &bytes[end + 1..]))
}

/// Checks a magic line of the form `<TAG> v<N>`. A matching tag with another
/// version is reported as a version error, anything else as a magic mismatch.
pub(crate) fn check_magic(
    line: &str,
    tag: &'static str,
    expected: &'static str,
) -> Result<(), FormatError> {
    if line == expected {
        return Ok(());
    }
    let mut parts = line.split(' ');
    if parts.next() == Some(tag) {
        if let Some(v) = parts.next() {
            if v.starts_with('v') {
                return Err(FormatError::UnsupportedVersion {
                    kind: tag,
                    found: v.to_string(),
                });
            }
        }
    }
    Err(FormatError::MagicMismatch {
        expected,
        found: line.chars().take(32).collect(),
    })
}

/// Reads a magic line from the start of a buffer, tolerating binary garbage.
pub(crate) fn read_magic<'a>(
    bytes: &'a [u8],
    tag: &'static str,
    expected: &'static str,
) -> Result<&'a [u8], FormatError> {
    match take_line(bytes) {
        Ok((line, rest)) => {
            check_magic(line, tag, expected)?;
            Ok(rest)
        }
        Err(_) => Err(FormatError::MagicMismatch {
            expected,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(16)]).into_owned(),
        }),
    }
}

pub(crate) fn parse_field<T: std::str::FromStr>(
    token: Option<&str>,
    name: &str,
) -> Result<T, FormatError> {
    let token = token.ok_or_else(|| FormatError::MalformedHeader(format!("missing {name}")))?;
    token
        .parse()
        .map_err(|_| FormatError::MalformedHeader(format!("cannot parse {name} from {token:?}")))
}

pub(crate) fn parse_keyed<T: std::str::FromStr>(
    token: Option<&str>,
    key: &str,
) -> Result<T, FormatError> {
    let token = token.ok_or_else(|| FormatError::MalformedHeader(format!("missing {key}=")))?;
    let value = token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| FormatError::MalformedHeader(format!("expected {key}=..., got {token:?}")))?;
    parse_field(Some(value), key)
}

pub(crate) fn ensure_len(payload: &[u8], expected: usize) -> Result<(), FormatError> {
    if payload.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(FormatError::SizeMismatch(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    Ok(())
}

pub(crate) fn push_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn f32_at(bytes: &[u8], index: usize) -> f32 {
    let o = index * 4;
    f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
}

pub(crate) fn f64_at(bytes: &[u8], index: usize) -> f64 {
    let o = index * 8;
    let mut b = [0u8; 8];
    b.copy_from_slice(&bytes[o..o + 8]);
    f64::from_le_bytes(b)
}

/// Largest f32 that does not exceed `v`.
pub(crate) fn f32_floor(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) > v {
        f32::from_bits(if f > 0.0 { f.to_bits() - 1 } else { f.to_bits() + 1 })
    } else {
        f
    }
}
