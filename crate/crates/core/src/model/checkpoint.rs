//! Checkpoint files: a `key=value` header, a tensor manifest, then
//! concatenated LIFT dumps.
//!
//! ```text
//! lifmixer-checkpoint 1
//! [header]
//! embed_dim=32
//! ...
//! [manifest]
//! <name> <dtype> <n> <c> <h> <w> <offset>
//! ...
//! [data]
//! <LIFT dumps; offsets are relative to the first byte after this line>
//! ```

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::layers::Params;
use crate::tensor::{DType, Real, Shape, Tensor4};

use super::config::ModelConfig;
use super::net::SnnMlp;

const MAGIC_LINE: &str = "lifmixer-checkpoint 1";
const DATA_MARK: &str = "[data]\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub header: KvMap,
    pub tensors: Vec<(String, Tensor4<T>)>,
}

impl<T: Real> Checkpoint<T> {
    /// Header holds the model configuration; tensors are the parameters.
    pub fn from_model(model: &SnnMlp<T>) -> Self {
        let mut header = KvMap::default();
        model.cfg.write_kv(&mut header);
        let tensors = model
            .params()
            .into_iter()
            .map(|p| {
                (
                    p.name,
                    Tensor4::from_vec(p.shape, p.data.to_vec())
                        .expect("param length matches shape"),
                )
            })
            .collect();
        Checkpoint { header, tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor4<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        ModelConfig::default().apply_kv(&self.header)
    }

    /// Rebuilds the model recorded in the header.
    pub fn to_model(&self) -> Result<SnnMlp<T>> {
        let mut m = SnnMlp::init(&self.model_config()?, 0)?;
        self.load_params(&mut m)?;
        Ok(m)
    }

    /// Overwrites every parameter of `model` with the stored tensor of the same
    /// name; errors on missing names or differing shapes.
    pub fn load_params(&self, model: &mut SnnMlp<T>) -> Result<()> {
        for p in model.params_mut() {
            let t = self
                .get(&p.name)
                .ok_or_else(|| Error::invalid(format!("checkpoint has no tensor {:?}", p.name)))?;
            if t.shape() != p.shape {
                return Err(Error::invalid(format!(
                    "checkpoint tensor {:?} has shape {}, model expects {}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
            p.data.copy_from_slice(t.data());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = format!(
            "{MAGIC_LINE}\n[header]\n{}[manifest]\n",
            self.header.to_text()
        );
        let mut blobs = Vec::new();
        for (name, t) in &self.tensors {
            let s = t.shape();
            text.push_str(&format!(
                "{name} {} {} {} {} {} {}\n",
                T::DTYPE.name(),
                s.n,
                s.c,
                s.h,
                s.w,
                blobs.len()
            ));
            blobs.extend_from_slice(&t.to_lift_bytes());
        }
        text.push_str(DATA_MARK);
        let mut out = text.into_bytes();
        out.extend_from_slice(&blobs);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let perr = |offset: usize, msg: String| Error::Parse {
            offset: offset as u64,
            msg,
        };
        let mark = bytes
            .windows(DATA_MARK.len())
            .position(|w| w == DATA_MARK.as_bytes())
            .ok_or_else(|| perr(0, "no [data] section".into()))?;
        let text = std::str::from_utf8(&bytes[..mark])
            .map_err(|e| perr(e.valid_up_to(), "header is not UTF-8".into()))?;
        let data_start = mark + DATA_MARK.len();

        let mut lines = Vec::new();
        let mut pos = 0;
        for l in text.split_inclusive('\n') {
            lines.push((pos, l.trim_end_matches('\n')));
            pos += l.len();
        }
        let mut it = lines.into_iter();
        match (it.next(), it.next()) {
            (Some((_, MAGIC_LINE)), Some((_, "[header]"))) => {}
            _ => {
                return Err(perr(
                    0,
                    format!("not a checkpoint (expected {MAGIC_LINE:?})"),
                ))
            }
        }
        let mut header_text = String::new();
        let mut manifest_at = None;
        for (off, l) in it.by_ref() {
            if l == "[manifest]" {
                manifest_at = Some(off);
                break;
            }
            header_text.push_str(l);
            header_text.push('\n');
        }
        if manifest_at.is_none() {
            return Err(perr(pos, "no [manifest] section".into()));
        }
        let header = KvMap::parse(&header_text)?;

        let mut tensors = Vec::new();
        for (off, l) in it {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 7 {
                return Err(perr(
                    off,
                    format!("manifest line needs 7 fields, got {l:?}"),
                ));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| perr(off, format!("bad number {s:?} in {l:?}")))
            };
            DType::parse(f[1]).ok_or_else(|| perr(off, format!("unknown dtype {:?}", f[1])))?;
            let shape = Shape::new(num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?);
            let at = data_start + num(f[6])?;
            if at > bytes.len() {
                return Err(perr(
                    off,
                    format!("offset of {:?} beyond end of file", f[0]),
                ));
            }
            let t = Tensor4::read_lift(&mut Cursor::new(&bytes[at..]), at as u64)?;
            if t.shape() != shape {
                return Err(perr(
                    at,
                    format!(
                        "{:?}: manifest shape {shape} but dump holds {}",
                        f[0],
                        t.shape()
                    ),
                ));
            }
            tensors.push((f[0].to_string(), t));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
