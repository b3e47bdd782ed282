//! λ grids: `logspace(lo,hi,n)` or a comma-separated list.

use anyhow::{bail, Context, Result};

use regmdp::analysis::logspace;

pub fn parse(text: &str) -> Result<Vec<f64>> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if let Some(inner) = s.strip_prefix("logspace(").and_then(|r| r.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').collect();
        let [lo, hi, n] = parts[..] else {
            bail!("logspace takes three arguments, got {text:?}");
        };
        let lo: f64 = lo.parse().with_context(|| format!("bad lower end {lo:?}"))?;
        let hi: f64 = hi.parse().with_context(|| format!("bad upper end {hi:?}"))?;
        let n: usize = n.parse().with_context(|| format!("bad point count {n:?}"))?;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || n == 0 {
            bail!("logspace needs 0 < lo <= hi and n >= 1, got {text:?}");
        }
        return Ok(logspace(lo, hi, n));
    }
    if s.is_empty() {
        bail!("empty lambda list");
    }
    s.split(',')
        .map(|x| x.parse::<f64>().with_context(|| format!("bad lambda {x:?}")))
        .collect()
}
