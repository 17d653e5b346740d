//! File formats.
//!
//! Tensor (`TDT1`): magic `TDT1`, four little-endian `u32` dims `l r b c`,
//! then `l*r*b*c` little-endian `f64` in storage order.
//!
//! Matrix (`TDM1`): magic `TDM1`, little-endian `u32` rows and cols, then
//! row-major little-endian `f64`.
//!
//! Traces are JSON lines, one object per iteration:
//! `{"v":1,"iter":..,"obj":..,"grad_norm":..,"delta_q":..,"step":..,"wall_ms":..}`
//! with `null` for fields that do not apply.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rank::ProbeRecord;
use crate::solvers::SolveTrace;
use crate::tensor::{Dims, Tensor4};
use crate::Matrix;

pub const TENSOR_MAGIC: &[u8; 4] = b"TDT1";
pub const MATRIX_MAGIC: &[u8; 4] = b"TDM1";
pub const TRACE_VERSION: u32 = 1;

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Validates magic and header length, returns the header dims and payload.
fn split_payload<'a>(
    bytes: &'a [u8],
    magic: &[u8; 4],
    ndims: usize,
) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 + 4 * ndims;
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(magic)
        )));
    }
    if bytes.len() < header {
        return Err(Error::Format(format!(
            "truncated header: {} of {header} bytes",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = (0..ndims).map(|i| read_u32(bytes, 4 + 4 * i) as usize).collect();
    if dims.contains(&0) {
        return Err(Error::Format(format!("zero dimension in {dims:?}")));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8).map(|b| (n, b)));
    let Some((_, payload_bytes)) = count else {
        return Err(Error::Format(format!("dimensions {dims:?} overflow")));
    };
    let payload = &bytes[header..];
    if payload.len() != payload_bytes {
        return Err(Error::Format(format!(
            "payload length {} does not match dimensions {dims:?} ({payload_bytes} bytes)",
            payload.len()
        )));
    }
    Ok((dims, payload))
}

fn decode_f64s(payload: &[u8]) -> Vec<f64> {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn dim_u32(d: usize) -> Result<u32> {
    u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))
}

pub fn encode_tensor(t: &Tensor4) -> Result<Vec<u8>> {
    let d = t.dims();
    let mut out = Vec::with_capacity(20 + 8 * d.len());
    out.extend_from_slice(TENSOR_MAGIC);
    for v in [d.l, d.r, d.b, d.c] {
        out.extend_from_slice(&dim_u32(v)?.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    let (d, payload) = split_payload(bytes, TENSOR_MAGIC, 4)?;
    let dims = Dims::new(d[0], d[1], d[2], d[3])?;
    Tensor4::new(dims, decode_f64s(payload)).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_matrix(m: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 8 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&dim_u32(m.nrows())?.to_le_bytes());
    out.extend_from_slice(&dim_u32(m.ncols())?.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let (d, payload) = split_payload(bytes, MATRIX_MAGIC, 2)?;
    Ok(Matrix::from_row_slice(d[0], d[1], &decode_f64s(payload)))
}

pub fn read_tensor(path: &Path) -> Result<Tensor4> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(path: &Path, t: &Tensor4) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    decode_matrix(&fs::read(path)?)
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_matrix(m)?)?;
    Ok(())
}

#[derive(Serialize)]
struct TraceLine {
    v: u32,
    iter: usize,
    obj: f64,
    grad_norm: Option<f64>,
    delta_q: Option<f64>,
    step: Option<f64>,
    wall_ms: Option<f64>,
}

/// Renders a trace as JSON lines. Wall times are written as `null` unless
/// `with_timing` is set, so repeated runs produce identical bytes.
pub fn trace_json_lines(trace: &SolveTrace, with_timing: bool) -> String {
    let mut out = String::new();
    for r in &trace.records {
        let line = TraceLine {
            v: TRACE_VERSION,
            iter: r.iter,
            obj: r.objective,
            grad_norm: r.grad_norm,
            delta_q: r.delta_q,
            step: r.step,
            wall_ms: with_timing.then_some(r.wall_ms),
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

/// `index,sigma` with 1-based indices.
pub fn spectrum_csv(sigma: &[f64]) -> String {
    let mut out = String::from("index,sigma\n");
    for (i, s) in sigma.iter().enumerate() {
        writeln!(out, "{},{:e}", i + 1, s).expect("writing to a String");
    }
    out
}

/// `iter,k,k_l,k_r,k_opt,c_k`, with the interval state before each probe.
pub fn rank_history_csv(history: &[ProbeRecord]) -> String {
    let mut out = String::from("iter,k,k_l,k_r,k_opt,c_k\n");
    for h in history {
        writeln!(
            out,
            "{},{},{},{},{},{:e}",
            h.iter, h.k, h.k_l, h.k_r, h.k_opt, h.c_k
        )
        .expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{gen_random, Rng};
    use crate::solvers::{Termination, TraceRecord};

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let t = gen_random(Dims::new(2, 3, 4, 5).unwrap(), 1);
        let bytes = encode_tensor(&t).unwrap();
        assert_eq!(bytes.len(), 20 + 8 * 120);
        assert_eq!(&bytes[..4], b"TDT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        let back = decode_tensor(&bytes).unwrap();
        let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.dims(), t.dims());
    }

    #[test]
    fn matrix_layout_is_row_major() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bytes = encode_matrix(&m).unwrap();
        assert_eq!(&bytes[..4], b"TDM1");
        assert_eq!(read_u32(&bytes, 4), 2);
        assert_eq!(read_u32(&bytes, 8), 3);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 2.0);
        assert_eq!(decode_matrix(&bytes).unwrap(), m);
    }

    #[test]
    fn matrix_round_trip_random() {
        let mut rng = Rng::new(4);
        let m = rng.gaussian_matrix(7, 5);
        assert_eq!(decode_matrix(&encode_matrix(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let t = gen_random(Dims::new(2, 2, 2, 2).unwrap(), 2);
        let good = encode_tensor(&t).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_tensor(&bad_magic), Err(Error::Format(_))));
        assert!(matches!(decode_matrix(&good), Err(Error::Format(_))));

        assert!(matches!(decode_tensor(&good[..good.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(decode_tensor(&good[..10]), Err(Error::Format(_))));
        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(decode_tensor(&extra), Err(Error::Format(_))));

        let mut huge = Vec::from(&b"TDT1"[..]);
        for _ in 0..4 {
            huge.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode_tensor(&huge), Err(Error::Format(_))));

        let mut zero = good.clone();
        zero[4..8].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_tensor(&zero), Err(Error::Format(_))));

        let mut nan = good;
        nan[20..28].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_tensor(&nan), Err(Error::Format(_))));
    }

    #[test]
    fn trace_lines() {
        let trace = SolveTrace {
            records: vec![
                TraceRecord {
                    iter: 0,
                    objective: 0.5,
                    grad_norm: Some(0.25),
                    delta_q: None,
                    step: None,
                    ratio: None,
                    wall_ms: 1.5,
                },
                TraceRecord {
                    iter: 1,
                    objective: 1e-12,
                    grad_norm: None,
                    delta_q: Some(2.0),
                    step: Some(0.125),
                    ratio: Some(0.9),
                    wall_ms: 3.0,
                },
            ],
            stages: Vec::new(),
            termination: Termination::MaxIter,
        };
        let text = trace_json_lines(&trace, false);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"v":1,"iter":0,"obj":0.5,"grad_norm":0.25,"delta_q":null,"step":null,"wall_ms":null}"#
        );
        let parsed: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(parsed["obj"].as_f64(), Some(1e-12));
        assert_eq!(parsed["step"].as_f64(), Some(0.125));
        let timed = trace_json_lines(&trace, true);
        assert!(timed.lines().next().unwrap().ends_with(r#""wall_ms":1.5}"#));
    }

    #[test]
    fn csv_outputs() {
        assert_eq!(spectrum_csv(&[2.0, 0.5]), "index,sigma\n1,2e0\n2,5e-1\n");
        let h = ProbeRecord {
            iter: 1,
            k: 45,
            k_l: 0,
            k_r: 89,
            k_opt: 89,
            c_k: 2.35e-11,
            success: true,
            k_l_after: 0,
            k_r_after: 44,
            k_opt_after: 45,
        };
        assert_eq!(rank_history_csv(&[h]), "iter,k,k_l,k_r,k_opt,c_k\n1,45,0,89,89,2.35e-11\n");
    }
}
