//! Config-file loading and small argument parsers shared by subcommands.

use std::fs;

use lifmixer::kv::KvMap;
use lifmixer::{Error, Shape};

use crate::{Failure, Global};

/// Config file entries overlaid with `--set` pairs and `--seed`.
pub fn load_kv(g: &Global) -> Result<KvMap, Failure> {
    let mut kv = match &g.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::from(Error::io(p, e)))?;
            KvMap::parse(&text).map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => KvMap::default(),
    };
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects key=value, got {s:?}")))?;
        kv.set(k.trim(), v.trim());
    }
    if let Some(seed) = g.seed {
        kv.set("seed", seed);
    }
    Ok(kv)
}

/// `2x3x8x8` → shape.
pub fn parse_shape(s: &str) -> Result<Shape, String> {
    let v: Vec<usize> = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bad shape {s:?} (expected NxCxHxW)"))?;
    let a: [usize; 4] = v
        .try_into()
        .map_err(|_| format!("shape {s:?} needs 4 extents"))?;
    Ok(Shape::from(a))
}
