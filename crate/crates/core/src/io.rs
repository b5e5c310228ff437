//! Persistence: hexadecimal float strings, trajectory JSON/CSV and structure
//! files in TOML.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrError};
use crate::geodesics::Trajectory;
use crate::poly::PolyField;
use crate::srgeom::{BoxDomain, SrStructure};

/// Formats like C's `%a`: `0x1.8p+1`, `-0x0p+0`, `inf`, `nan`.
pub fn to_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    let sign = if x.is_sign_negative() { "-" } else { "" };
    if x.is_infinite() {
        return format!("{}inf", sign);
    }
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    if exp == 0 && mant == 0 {
        return format!("{}0x0p+0", sign);
    }
    let (lead, e) = if exp == 0 { (0, -1022) } else { (1, exp - 1023) };
    let mut digits = format!("{:013x}", mant);
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() {
        String::new()
    } else {
        format!(".{}", digits)
    };
    format!("{}0x{}{}p{:+}", sign, lead, frac, e)
}

/// Parses the output of [`to_hex`] (and hex floats with arbitrary mantissa
/// placement) as well as plain decimal literals.
pub fn from_hex(s: &str) -> Result<f64> {
    let t = s.trim();
    let bad = || SrError::Parse(format!("bad float literal '{}'", s));
    let (neg, body) = match t.as_bytes().first() {
        Some(b'-') => (true, &t[1..]),
        Some(b'+') => (false, &t[1..]),
        _ => (false, t),
    };
    let lower = body.to_ascii_lowercase();
    let v = if lower == "inf" || lower == "infinity" {
        f64::INFINITY
    } else if lower == "nan" {
        f64::NAN
    } else if let Some(hex) = lower.strip_prefix("0x") {
        let (m, e) = hex.split_once('p').ok_or_else(bad)?;
        let exp: i64 = e.parse().map_err(|_| bad())?;
        let (ip, fp) = m.split_once('.').unwrap_or((m, ""));
        if ip.is_empty() && fp.is_empty() {
            return Err(bad());
        }
        let digits = format!("{}{}", ip, fp);
        if digits.len() > 15 {
            return Err(SrError::Parse(format!("too many hex digits in '{}'", s)));
        }
        let mant = u64::from_str_radix(if digits.is_empty() { "0" } else { &digits }, 16)
            .map_err(|_| bad())?;
        let shift = exp - 4 * fp.len() as i64;
        // exact: mant < 2^60 and scaling by powers of two in two steps avoids
        // intermediate overflow/underflow for the normal range
        let half = shift / 2;
        (mant as f64) * 2f64.powi(half as i32) * 2f64.powi((shift - half) as i32)
    } else {
        body.parse::<f64>().map_err(|_| bad())?
    };
    Ok(if neg { -v } else { v })
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    intervals: usize,
    dim: usize,
    rank: usize,
    length: String,
    /// Row i is x(t_i).
    states: Vec<Vec<String>>,
    /// Row i is the control on [t_i, t_{i+1}).
    controls: Vec<Vec<String>>,
}

pub fn trajectory_to_json(t: &Trajectory) -> Result<String> {
    let rec = TrajectoryRecord {
        intervals: t.intervals(),
        dim: t.states.ncols(),
        rank: t.controls.nrows(),
        length: to_hex(t.length),
        states: t
            .states
            .row_iter()
            .map(|r| r.iter().map(|v| to_hex(*v)).collect())
            .collect(),
        controls: t
            .controls
            .column_iter()
            .map(|c| c.iter().map(|v| to_hex(*v)).collect())
            .collect(),
    };
    serde_json::to_string_pretty(&rec).map_err(|e| SrError::Parse(e.to_string()))
}

fn parse_rows(rows: &[Vec<String>], width: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for r in rows {
        if r.len() != width {
            return Err(SrError::Dimension(format!("{} row of width {} (expected {})", what, r.len(), width)));
        }
        for v in r {
            out.push(from_hex(v)?);
        }
    }
    Ok(out)
}

pub fn trajectory_from_json(src: &str) -> Result<Trajectory> {
    let rec: TrajectoryRecord = serde_json::from_str(src).map_err(|e| SrError::Parse(e.to_string()))?;
    if rec.states.len() != rec.intervals + 1 || rec.controls.len() != rec.intervals {
        return Err(SrError::Dimension("trajectory record sizes disagree".into()));
    }
    let states = parse_rows(&rec.states, rec.dim, "state")?;
    let controls = parse_rows(&rec.controls, rec.rank, "control")?;
    Ok(Trajectory {
        states: DMatrix::from_row_slice(rec.intervals + 1, rec.dim, &states),
        controls: DMatrix::from_column_slice(rec.rank, rec.intervals, &controls),
        length: from_hex(&rec.length)?,
    })
}

/// CSV with columns `t, x1..xn, u1..uk`; the control columns of the last row are empty.
pub fn write_trajectory_csv<W: Write>(t: &Trajectory, w: W) -> Result<()> {
    let (n, k, big_n) = (t.states.ncols(), t.controls.nrows(), t.intervals());
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x{}", i)));
    header.extend((1..=k).map(|j| format!("u{}", j)));
    wr.write_record(&header).map_err(csv_err)?;
    for i in 0..=big_n {
        let mut rec = vec![format!("{:?}", i as f64 / big_n as f64)];
        rec.extend(t.states.row(i).iter().map(|v| format!("{:?}", v)));
        if i < big_n {
            rec.extend(t.controls.column(i).iter().map(|v| format!("{:?}", v)));
        } else {
            rec.extend(std::iter::repeat_n(String::new(), k));
        }
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> SrError {
    SrError::Parse(format!("csv: {}", e))
}

pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Trajectory> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let k = header.iter().filter(|h| h.starts_with('u')).count();
    if header.len() != 1 + n + k || n == 0 || k == 0 {
        return Err(SrError::Parse("expected columns t, x1..xn, u1..uk".into()));
    }
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut rows = 0;
    let mut last_empty = false;
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        if last_empty {
            return Err(SrError::Parse("empty controls before the last row".into()));
        }
        for v in rec.iter().skip(1).take(n) {
            states.push(from_hex(v)?);
        }
        let u: Vec<&str> = rec.iter().skip(1 + n).collect();
        if u.iter().all(|v| v.is_empty()) {
            last_empty = true;
        } else {
            for v in u {
                controls.push(from_hex(v)?);
            }
        }
        rows += 1;
    }
    if rows < 2 || !last_empty {
        return Err(SrError::Parse("trajectory CSV needs N+1 rows with an empty final control".into()));
    }
    let big_n = rows - 1;
    let controls = DMatrix::from_column_slice(k, big_n, &controls);
    let length = controls.column_iter().map(|c| c.norm()).sum::<f64>() / big_n as f64;
    Ok(Trajectory {
        states: DMatrix::from_row_slice(rows, n, &states),
        controls,
        length,
    })
}

#[derive(Serialize, Deserialize)]
struct DomainRecord {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StructureRecord {
    name: String,
    step: usize,
    /// One list of polynomial strings per field, in `x1, x2, ...`.
    fields: Vec<Vec<String>>,
    domain: Option<DomainRecord>,
    metric: Option<Vec<Vec<f64>>>,
}

/// Reads a structure from TOML:
///
/// ```toml
/// name = "martinet"
/// step = 3
/// fields = [["1", "0", "x2^2/2"], ["0", "1", "0"]]
/// [domain]
/// lo = [-2.0, -2.0, -2.0]
/// hi = [2.0, 2.0, 2.0]
/// ```
pub fn structure_from_toml(src: &str) -> Result<SrStructure> {
    let rec: StructureRecord = toml::from_str(src).map_err(|e| SrError::Parse(e.to_string()))?;
    let frame = rec
        .fields
        .iter()
        .map(|f| PolyField::parse(f))
        .collect::<Result<Vec<_>>>()?;
    let n = frame.first().map(|f| f.dim()).unwrap_or(0);
    let domain = match rec.domain {
        Some(d) => BoxDomain::new(d.lo, d.hi)?,
        None => BoxDomain::cube(n, 2.0),
    };
    let metric = match rec.metric {
        Some(rows) => {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            if rows.len() != n || flat.len() != n * n {
                return Err(SrError::Dimension("metric must be n x n".into()));
            }
            Some(DMatrix::from_row_slice(n, n, &flat))
        }
        None => None,
    };
    SrStructure::new(rec.name, frame, rec.step, domain, metric)
}

pub fn structure_to_toml(s: &SrStructure) -> Result<String> {
    let rec = StructureRecord {
        name: s.name().to_string(),
        step: s.declared_step(),
        fields: s
            .frame()
            .iter()
            .map(|f| f.components().iter().map(|p| p.to_string()).collect())
            .collect(),
        domain: Some(DomainRecord {
            lo: s.domain().lo.clone(),
            hi: s.domain().hi.clone(),
        }),
        metric: s
            .metric()
            .map(|g| g.row_iter().map(|r| r.iter().copied().collect()).collect()),
    };
    toml::to_string(&rec).map_err(|e| SrError::Parse(e.to_string()))
}

/// A catalogue name or a path to a TOML structure file.
pub fn load_structure(spec: &str) -> Result<SrStructure> {
    if let Ok(s) = SrStructure::catalogue(spec) {
        return Ok(s);
    }
    let src = std::fs::read_to_string(spec)?;
    structure_from_toml(&src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesics::integrate;
    use proptest::prelude::*;

    #[test]
    fn hex_examples() {
        assert_eq!(to_hex(1.0), "0x1p+0");
        assert_eq!(to_hex(3.0), "0x1.8p+1");
        assert_eq!(to_hex(-0.0), "-0x0p+0");
        assert_eq!(to_hex(0.1), "0x1.999999999999ap-4");
        assert_eq!(to_hex(f64::MIN_POSITIVE / 4.0), "0x0.4p-1022");
        assert_eq!(from_hex("0x1.8p+1").unwrap(), 3.0);
        assert_eq!(from_hex("0x.8p1").unwrap(), 1.0);
        assert_eq!(from_hex("-inf").unwrap(), f64::NEG_INFINITY);
        assert!(from_hex("nan").unwrap().is_nan());
        assert_eq!(from_hex("2.5").unwrap(), 2.5);
        assert!(from_hex("0x1.8").is_err());
    }

    proptest! {
        #[test]
        fn hex_round_trip(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            let y = from_hex(&to_hex(x)).unwrap();
            if x.is_nan() {
                prop_assert!(y.is_nan());
            } else {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    fn sample() -> (SrStructure, Trajectory) {
        let s = SrStructure::heisenberg();
        let c = DMatrix::from_fn(2, 16, |j, i| if j == 0 { (i as f64 * 0.3).cos() } else { (i as f64 * 0.3).sin() / 3.0 });
        let t = integrate(&s, &[0.1, -0.2, 0.3], &c).unwrap();
        (s, t)
    }

    #[test]
    fn trajectory_round_trips() {
        let (_, t) = sample();
        let back = trajectory_from_json(&trajectory_to_json(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states, t.states);
        assert_eq!(back.controls, t.controls);
        assert!((back.length - t.length).abs() < 1e-15);
    }

    #[test]
    fn structure_round_trip() {
        for s in [SrStructure::heisenberg(), SrStructure::martinet(), SrStructure::engel()] {
            let src = structure_to_toml(&s).unwrap();
            let back = structure_from_toml(&src).unwrap();
            assert_eq!(back.name(), s.name());
            assert_eq!(back.declared_step(), s.declared_step());
            let x = [0.3, -0.7, 0.2, 1.1];
            let x = &x[..s.dim()];
            assert_eq!(back.eval_frame(x).unwrap(), s.eval_frame(x).unwrap());
            assert_eq!(back.field_bound(), s.field_bound());
        }
        assert!(structure_from_toml("name = 'x'\nstep = 2\nfields = [['1', '0', '0']]\n").is_ok());
        assert!(load_structure("martinet").is_ok());
        assert!(load_structure("/nonexistent/file.toml").is_err());
    }
}
