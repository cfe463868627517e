use anyhow::{bail, Context, Result};
use clap::Args;
use num_rational::Ratio;
use serde::Deserialize;

use samo_core::sparsity::parse_decimal;
use samo_core::store::memory_model;
use samo_core::Sparsity;

use crate::output::{read_config, write_csv};
use crate::{status, Common};

#[derive(Args, Debug)]
pub struct MemoryArgs {
    /// Parameter count before pruning, e.g. `1e9`.
    #[arg(long)]
    phi: Option<String>,
    /// Sparsity `p` or range `start:end:step`, e.g. `0:1:0.05`.
    #[arg(long)]
    p: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MemoryConfig {
    phi: Option<serde_json::Number>,
    p: Option<String>,
}

/// Sparsities `start, start + step, ...` up to and including `end`.
pub fn parse_range(s: &str) -> Result<Vec<Sparsity>> {
    let parts: Vec<&str> = s.split(':').collect();
    let (start, end, step) = match parts.as_slice() {
        [one] => {
            let p = parse_decimal(one)?;
            (p, p, Ratio::from_integer(1))
        }
        [a, b, c] => (parse_decimal(a)?, parse_decimal(b)?, parse_decimal(c)?),
        _ => bail!("sparsity range must be `p` or `start:end:step`, got {s:?}"),
    };
    if step <= Ratio::from_integer(0) {
        bail!("range step must be positive");
    }
    if start > end {
        bail!("range start {start} exceeds end {end}");
    }
    let mut out = Vec::new();
    let mut p = start;
    while p <= end {
        out.push(Sparsity::new(p).with_context(|| format!("in range {s:?}"))?);
        p += step;
    }
    Ok(out)
}

fn parse_phi(s: &str) -> Result<u64> {
    let r = parse_decimal(s)?;
    if !r.is_integer() || r < Ratio::from_integer(0) || r.to_integer() > u64::MAX as i128 {
        bail!("phi must be a non-negative integer, got {s}");
    }
    Ok(r.to_integer() as u64)
}

pub fn run(args: MemoryArgs) -> Result<u8> {
    let cfg: MemoryConfig = match &args.common.config {
        Some(p) => read_config(p)?,
        None => MemoryConfig::default(),
    };
    let phi = match (&args.phi, &cfg.phi) {
        (Some(s), _) => parse_phi(s)?,
        (None, Some(n)) => parse_phi(&n.to_string())?,
        (None, None) => bail!("--phi is required"),
    };
    let range = args.p.or(cfg.p).unwrap_or_else(|| "0:1:0.05".to_string());
    let rows: Vec<_> = parse_range(&range)?
        .into_iter()
        .map(|p| memory_model(phi, p).row())
        .collect();
    write_csv(&rows, args.common.out.as_deref())?;
    Ok(status::OK)
}
