//! Text form of an [`ApprMatrix`]:
//!
//! ```text
//! M N K mechanism eps_pr delta_pr seed
//! source idx:value idx:value ...
//! ```
//!
//! A non-private matrix writes `-` for both budget fields. Values use the
//! shortest round-trip representation, so reading back is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ApprMatrix;
use crate::accountant::PrivacyBudget;
use crate::appr::ApprVector;
use crate::error::{DparError, Result};

pub fn write_appr_matrix(pi: &ApprMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    let (eps, delta) = match pi.spent {
        Some(b) => (format!("{:?}", b.epsilon), format!("{:?}", b.delta)),
        None => ("-".to_string(), "-".to_string()),
    };
    let _ = writeln!(
        out,
        "{} {} {} {} {} {} {}",
        pi.n_rows(),
        pi.n_cols,
        pi.k,
        pi.mechanism,
        eps,
        delta,
        pi.seed
    );
    for row in &pi.rows {
        let _ = write!(out, "{}", row.source);
        for &(i, x) in &row.entries {
            let _ = write!(out, " {i}:{x:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| DparError::io(path, e))
}

pub fn read_appr_matrix(path: &Path) -> Result<ApprMatrix> {
    let text = fs::read_to_string(path).map_err(|e| DparError::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DparError::parse(path, 1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 7 {
        return Err(DparError::parse(path, 1, "header needs 7 fields: M N K mechanism eps delta seed"));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|e| DparError::parse(path, 1, format!("bad {what} {s:?}: {e}")))
    };
    let float = |s: &str, what: &str| {
        s.parse::<f64>()
            .map_err(|e| DparError::parse(path, 1, format!("bad {what} {s:?}: {e}")))
    };
    let m = num(fields[0], "M")?;
    let n_cols = num(fields[1], "N")?;
    let k = num(fields[2], "K")?;
    let spent = match (fields[4], fields[5]) {
        ("-", "-") => None,
        (e, d) => Some(PrivacyBudget {
            epsilon: float(e, "eps")?,
            delta: float(d, "delta")?,
        }),
    };
    let seed = fields[6]
        .parse::<u64>()
        .map_err(|e| DparError::parse(path, 1, format!("bad seed: {e}")))?;

    let mut rows = Vec::with_capacity(m);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let source = parts
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| DparError::parse(path, lineno, "bad row source"))?;
        let mut entries = Vec::new();
        for pair in parts {
            let (idx, val) = pair
                .split_once(':')
                .ok_or_else(|| DparError::parse(path, lineno, format!("expected idx:value, got {pair:?}")))?;
            let idx = idx
                .parse::<usize>()
                .map_err(|e| DparError::parse(path, lineno, format!("bad index {idx:?}: {e}")))?;
            let val = val
                .parse::<f64>()
                .map_err(|e| DparError::parse(path, lineno, format!("bad value {val:?}: {e}")))?;
            if idx >= n_cols {
                return Err(DparError::parse(path, lineno, format!("index {idx} beyond N={n_cols}")));
            }
            entries.push((idx, val));
        }
        rows.push(ApprVector::from_entries(source, entries));
    }
    if rows.len() != m {
        return Err(DparError::Dimension(format!("header says {m} rows, file has {}", rows.len())));
    }
    Ok(ApprMatrix {
        rows,
        n_cols,
        k,
        mechanism: fields[3].to_string(),
        spent,
        seed,
    })
}
