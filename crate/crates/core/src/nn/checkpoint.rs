//! Network checkpoint format: one UTF-8 header line
//! `FLOQNET1 <sizes comma-separated>[ role=<tag>][ act=identity]\n`
//! followed by every parameter as a little-endian `f64`.

use std::fs;
use std::path::Path;

use super::{Activation, Mlp};
use crate::error::{Error, FormatErrorKind, Result};

pub const NETWORK_MAGIC: &str = "FLOQNET1";

pub fn save_network(net: &Mlp, path: &Path, role: Option<&str>) -> Result<()> {
    let sizes: Vec<String> = net.sizes().iter().map(|s| s.to_string()).collect();
    let mut header = format!("{NETWORK_MAGIC} {}", sizes.join(","));
    if let Some(role) = role {
        if role.is_empty() || role.contains(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!(
                "invalid role tag {role:?}"
            )));
        }
        header.push_str(&format!(" role={role}"));
    }
    if net.hidden_activation() == Activation::Identity {
        header.push_str(" act=identity");
    }
    header.push('\n');
    let mut bytes = header.into_bytes();
    bytes.reserve(net.num_params() * 8);
    for p in net.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Returns the network and its role tag, if one was written.
pub fn load_network(path: &Path) -> Result<(Mlp, Option<String>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |kind, msg: String| Error::format(path, 1, kind, msg);
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad(FormatErrorKind::BadMagic, "missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| bad(FormatErrorKind::BadMagic, "header is not UTF-8".into()))?;
    let mut tokens = header.split(' ');
    if tokens.next() != Some(NETWORK_MAGIC) {
        return Err(bad(
            FormatErrorKind::BadMagic,
            format!("expected {NETWORK_MAGIC} header, found {header:?}"),
        ));
    }
    let sizes: Vec<usize> = tokens
        .next()
        .ok_or_else(|| bad(FormatErrorKind::BadHeader, "missing layer sizes".into()))?
        .split(',')
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(FormatErrorKind::BadHeader, format!("bad layer sizes: {e}")))?;
    let mut role = None;
    let mut activation = Activation::Gelu;
    for token in tokens {
        match token.split_once('=') {
            Some(("role", r)) if !r.is_empty() => role = Some(r.to_string()),
            Some(("act", "identity")) => activation = Activation::Identity,
            Some(("act", "gelu")) => activation = Activation::Gelu,
            _ => {
                return Err(bad(
                    FormatErrorKind::BadHeader,
                    format!("unrecognized header token {token:?}"),
                ))
            }
        }
    }
    let zeros = Mlp::zeros(&sizes, activation)
        .map_err(|e| bad(FormatErrorKind::BadHeader, e.to_string()))?;
    let body = &bytes[newline + 1..];
    let expected = zeros.num_params() * 8;
    if body.len() < expected {
        return Err(Error::format(
            path,
            2,
            FormatErrorKind::Truncated,
            format!("expected {expected} parameter bytes, found {}", body.len()),
        ));
    }
    if body.len() > expected {
        return Err(Error::format(
            path,
            2,
            FormatErrorKind::DimensionMismatch,
            format!("expected {expected} parameter bytes, found {}", body.len()),
        ));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let net = Mlp::from_params(&sizes, activation, params)?;
    Ok((net, role))
}
