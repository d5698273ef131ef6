//! Versioned plain-text checkpoints.
//!
//! ```text
//! CSLSTM-CKPT 1
//! [config]
//! model.seasonal_window = 48
//! ...
//! [norm]
//! mean = 1.25e0
//! std = 3.5e-1
//! [param seasonal.lstm.w_f]
//! shape = 256 352
//! <one line of space-separated values per row>
//! ...
//! [end]
//! ```
//!
//! Floats use the shortest representation that parses back to the same
//! bits, so a save/load cycle is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::CsModel;
use crate::series::NormStats;

pub const MAGIC: &str = "CSLSTM-CKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub norm: NormStats,
    pub model: CsModel,
}

fn corrupt(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n[config]\n");
        for (k, v) in self.config.to_pairs() {
            // the data location is not part of the model
            if k != "data.path" {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        let _ = writeln!(s, "[norm]\nmean = {:e}\nstd = {:e}", self.norm.mean, self.norm.std);
        for (name, t) in self.model.named_parameters() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(s, "[param {name}]\nshape = {}", dims.join(" "));
            let cols = *t.shape().last().unwrap_or(&1);
            for row in t.data().chunks(cols.max(1)) {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                s.push_str(&vals.join(" "));
                s.push('\n');
            }
        }
        s.push_str("[end]\n");
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (_, head) = lines.next().ok_or_else(|| corrupt(1, "empty checkpoint"))?;
        let version = match head.split_once(' ') {
            Some((MAGIC, v)) => v.trim().parse::<u32>().map_err(|_| corrupt(1, format!("bad version '{v}'")))?,
            _ => return Err(corrupt(1, format!("missing {MAGIC} header"))),
        };
        if version != VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint version {version} is not supported (expected {VERSION})"
            )));
        }

        let mut config = Config::default();
        let mut mean = None;
        let mut std = None;
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let mut section = String::new();
        let mut pending: Option<(String, Vec<usize>, Vec<f64>)> = None;
        let mut ended = false;

        let finish = |p: Option<(String, Vec<usize>, Vec<f64>)>, params: &mut Vec<(String, Tensor)>, line: usize| {
            if let Some((name, shape, data)) = p {
                let t = Tensor::new(shape, data).map_err(|e| corrupt(line, format!("parameter {name}: {e}")))?;
                params.push((name, t));
            }
            Ok::<_, Error>(())
        };

        for (no, line) in lines {
            if line.is_empty() {
                continue;
            }
            if let Some(tag) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                finish(pending.take(), &mut params, no)?;
                if tag == "end" {
                    ended = true;
                    break;
                }
                if let Some(name) = tag.strip_prefix("param ") {
                    pending = Some((name.to_string(), Vec::new(), Vec::new()));
                    section = "param".into();
                } else {
                    section = tag.to_string();
                }
                continue;
            }
            match section.as_str() {
                "config" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| corrupt(no, "expected key = value"))?;
                    config.set(k.trim(), v.trim()).map_err(|e| corrupt(no, e))?;
                }
                "norm" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| corrupt(no, "expected key = value"))?;
                    let v: f64 = v.trim().parse().map_err(|_| corrupt(no, format!("bad number '{}'", v.trim())))?;
                    match k.trim() {
                        "mean" => mean = Some(v),
                        "std" => std = Some(v),
                        other => return Err(corrupt(no, format!("unknown norm field '{other}'"))),
                    }
                }
                "param" => {
                    let p = pending.as_mut().expect("param section has a pending tensor");
                    if let Some(dims) = line.strip_prefix("shape =") {
                        p.1 = dims
                            .split_whitespace()
                            .map(|d| d.parse::<usize>().map_err(|_| corrupt(no, format!("bad dimension '{d}'"))))
                            .collect::<Result<_>>()?;
                    } else {
                        for tok in line.split_whitespace() {
                            p.2.push(tok.parse().map_err(|_| corrupt(no, format!("bad number '{tok}'")))?);
                        }
                    }
                }
                other => return Err(corrupt(no, format!("unexpected content in section '{other}'"))),
            }
        }
        if !ended {
            return Err(Error::Checkpoint("truncated checkpoint: missing [end]".into()));
        }
        let norm = NormStats {
            mean: mean.ok_or_else(|| Error::Checkpoint("missing norm mean".into()))?,
            std: std.ok_or_else(|| Error::Checkpoint("missing norm std".into()))?,
        };
        if !(norm.std > 0.0 && norm.mean.is_finite()) {
            return Err(Error::Checkpoint(format!("invalid norm stats {norm:?}")));
        }

        let mut model = CsModel::init(config.model_config()?, 0)?;
        let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
        if params.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                names.len(),
                params.len()
            )));
        }
        for ((name, slot), (got_name, t)) in names.iter().zip(model.parameters_mut()).zip(params) {
            if *name != got_name {
                return Err(Error::Checkpoint(format!("expected parameter {name}, found {got_name}")));
            }
            if slot.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, config implies {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("parameter {name} holds non-finite values")));
            }
            *slot = t;
        }
        Ok(Self { config, norm, model })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut config = Config::default();
        config
            .apply_overrides(&["model.seasonal_window=8", "model.total_window=24", "model.d_model=3", "seed=4"])
            .unwrap();
        let model = CsModel::init(config.model_config().unwrap(), 4).unwrap();
        Checkpoint {
            config,
            norm: NormStats { mean: 0.1, std: 2.5 },
            model,
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let c = sample();
        let text = c.to_text();
        assert!(text.starts_with("CSLSTM-CKPT 1\n"));
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }

    #[test]
    fn rejects_damage() {
        let text = sample().to_text();
        assert!(matches!(Checkpoint::parse("hello"), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::parse(&text.replacen("CSLSTM-CKPT 1", "CSLSTM-CKPT 9", 1)),
            Err(Error::Compatibility(_))
        ));
        let truncated = &text[..text.len() / 2];
        assert!(Checkpoint::parse(truncated).is_err());
        let reshaped = text.replacen("model.d_model = 3", "model.d_model = 4", 1);
        assert!(matches!(Checkpoint::parse(&reshaped), Err(Error::Checkpoint(_))));
        let bad_num = text.replacen("[norm]\nmean = ", "[norm]\nmean = x", 1);
        assert!(Checkpoint::parse(&bad_num).is_err());
    }

    #[test]
    fn ablated_model_round_trips() {
        let mut c = sample();
        c.config.use_contextual = false;
        c.model = CsModel::init(c.config.model_config().unwrap(), 1).unwrap();
        assert_eq!(Checkpoint::parse(&c.to_text()).unwrap(), c);
    }
}
