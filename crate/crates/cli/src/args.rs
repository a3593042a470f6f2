//! Parsers for the compact `--loss` and `--penalty` flag syntax.

use alocv_core::{LossSpec, PenaltyFamily};

/// `ridge:nu`, `enet:lambda,nu` or `group:size:lambda,nu`. Groups are
/// contiguous blocks of `size` columns with weights `lambda * sqrt(|G|)`;
/// the block count follows from the data dimension.
#[derive(Clone, Debug, PartialEq)]
pub enum PenaltyArg {
    Ridge { nu: f64 },
    ElasticNet { lambda: f64, nu: f64 },
    Group { size: usize, lambda: f64, nu: f64 },
}

impl PenaltyArg {
    pub fn family(&self, p: usize) -> PenaltyFamily {
        match *self {
            PenaltyArg::Ridge { nu } => PenaltyFamily::Ridge { nu },
            PenaltyArg::ElasticNet { lambda, nu } => PenaltyFamily::ElasticNet { lambda, nu },
            PenaltyArg::Group { size, lambda, nu } => PenaltyFamily::contiguous_groups(p, size, lambda, nu),
        }
    }
}

fn real(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: {s:?}"))
    }
}

pub fn parse_penalty(s: &str) -> Result<PenaltyArg, String> {
    let (family, rest) = s.split_once(':').ok_or("expected <family>:<parameters>")?;
    match family {
        "ridge" => Ok(PenaltyArg::Ridge { nu: real(rest)? }),
        "enet" => {
            let (l, n) = rest.split_once(',').ok_or("enet expects lambda,nu")?;
            Ok(PenaltyArg::ElasticNet { lambda: real(l)?, nu: real(n)? })
        }
        "group" => {
            let (size, params) = rest.split_once(':').ok_or("group expects size:lambda,nu")?;
            let size: usize = size.trim().parse().map_err(|_| format!("bad group size {size:?}"))?;
            if size == 0 {
                return Err("group size must be >= 1".into());
            }
            let (l, n) = params.split_once(',').ok_or("group expects size:lambda,nu")?;
            Ok(PenaltyArg::Group { size, lambda: real(l)?, nu: real(n)? })
        }
        other => Err(format!("unknown penalty family {other:?}")),
    }
}

pub fn parse_loss(s: &str) -> Result<LossSpec, String> {
    s.parse::<LossSpec>().map_err(|e| e.to_string())
}
