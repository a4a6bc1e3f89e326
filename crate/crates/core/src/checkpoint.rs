//! `ASTCKPT v1` text checkpoints.
//!
//! ```text
//! ASTCKPT v1
//! variant mf
//! n_users 500
//! n_items 300
//! k 16
//! critic_hidden 16
//! dropout_rate 0.2
//! seed 7
//! gaussian box-muller-cos
//! optimizer_state 0
//! tensor user_embeddings 500 16
//! <one row of 16 floats per line>
//! ...
//! end
//! ```
//!
//! Floats use the shortest representation that round-trips, so a saved
//! model reloads bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{Critic, Mlp, Model, ModelConfig, Params, Tensor, Variant};
use crate::numcore::GAUSSIAN_TRANSFORM;

pub const MAGIC: &str = "ASTCKPT v1";

pub fn to_string(model: &Model) -> String {
    let c = &model.config;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "variant {}", c.variant.as_str());
    let _ = writeln!(out, "n_users {}", c.n_users);
    let _ = writeln!(out, "n_items {}", c.n_items);
    let _ = writeln!(out, "k {}", c.k);
    let _ = writeln!(out, "critic_hidden {}", c.critic_hidden);
    let _ = writeln!(out, "dropout_rate {}", c.dropout_rate);
    let _ = writeln!(out, "seed {}", model.seed);
    let _ = writeln!(out, "gaussian {GAUSSIAN_TRANSFORM}");
    let _ = writeln!(out, "optimizer_state 0");
    for (name, _, t) in model.params.tensors() {
        let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(out, "tensor {name} {}", shape.join(" "));
        let width = t.shape.last().copied().unwrap_or(1).max(1);
        for row in t.data.chunks(width) {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    path: &'a Path,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        loop {
            match self.inner.next() {
                Some((n, l)) => {
                    self.line = n + 1;
                    let l = l.trim();
                    if !l.is_empty() {
                        return Ok(l);
                    }
                }
                None => return Err(self.err("unexpected end of checkpoint")),
            }
        }
    }

    fn field(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim()),
            _ => Err(self.err(format!("expected `{key} <value>`, found `{l}`"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key)?;
        v.parse().map_err(|_| self.err(format!("invalid {key} `{v}`")))
    }
}

/// Parse checkpoint text; `path` is only used in error messages.
pub fn parse(text: &str, path: &Path) -> Result<Model> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        path,
        line: 0,
    };
    let magic = lines.next()?;
    if magic != MAGIC {
        return Err(lines.err(format!("not an {MAGIC} checkpoint (header `{magic}`)")));
    }
    let variant_name = lines.field("variant")?;
    let variant = Variant::parse(variant_name).ok_or_else(|| lines.err(format!("unknown variant `{variant_name}`")))?;
    let n_users: usize = lines.number("n_users")?;
    let n_items: usize = lines.number("n_items")?;
    let k: usize = lines.number("k")?;
    let critic_hidden: usize = lines.number("critic_hidden")?;
    let dropout_rate: f64 = lines.number("dropout_rate")?;
    let seed: u64 = lines.number("seed")?;
    let gaussian = lines.field("gaussian")?;
    if gaussian != GAUSSIAN_TRANSFORM {
        return Err(lines.err(format!("unsupported gaussian transform `{gaussian}`")));
    }
    let optimizer_state: u8 = lines.number("optimizer_state")?;
    if optimizer_state != 0 {
        return Err(lines.err("checkpoints with optimizer state are not supported"));
    }
    let config = ModelConfig {
        variant,
        n_users,
        n_items,
        k,
        dropout_rate,
        critic_hidden,
    };

    let mut tensors: Vec<(String, Tensor)> = Vec::new();
    loop {
        let l = lines.next()?;
        if l == "end" {
            break;
        }
        let mut parts = l.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(lines.err(format!("expected `tensor` or `end`, found `{l}`")));
        }
        let name = parts
            .next()
            .ok_or_else(|| lines.err("tensor without a name"))?
            .to_string();
        let shape: Vec<usize> = parts
            .map(|d| d.parse().map_err(|_| lines.err(format!("invalid dimension `{d}`"))))
            .collect::<Result<_>>()?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        while data.len() < len {
            for cell in lines.next()?.split_whitespace() {
                let x: f64 = cell.parse().map_err(|_| lines.err(format!("invalid float `{cell}`")))?;
                if !x.is_finite() {
                    return Err(lines.err(format!("non-finite parameter in {name}")));
                }
                data.push(x);
            }
        }
        if data.len() != len {
            return Err(lines.err(format!("tensor {name} has {} values, expected {len}", data.len())));
        }
        tensors.push((name, Tensor { shape, data }));
    }

    let mut take = |name: &str| -> Result<Tensor> {
        let pos = tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint is missing tensor {name}")))?;
        Ok(tensors.swap_remove(pos).1)
    };
    let mlp = match variant {
        Variant::Mf => None,
        Variant::Ncf => Some(Mlp {
            w1: take("mlp.w1")?,
            b1: take("mlp.b1")?,
            w2: take("mlp.w2")?,
            b2: take("mlp.b2")?,
        }),
    };
    let params = Params {
        user_embeddings: take("user_embeddings")?,
        item_embeddings: take("item_embeddings")?,
        mlp,
        head_weight: take("head.weight")?,
        head_bias: take("head.bias")?,
        critic: Critic {
            w1: take("critic.w1")?,
            b1: take("critic.b1")?,
            w2: take("critic.w2")?,
            b2: take("critic.b2")?,
        },
    };
    if let Some((name, _)) = tensors.first() {
        return Err(Error::Validation(format!("unexpected tensor {name} in checkpoint")));
    }
    Model::from_params(config, params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn model(variant: Variant) -> Model {
        let cfg = ModelConfig {
            variant,
            n_users: 9,
            n_items: 4,
            k: 5,
            dropout_rate: 0.2,
            critic_hidden: 3,
        };
        let mut rng = Rng::new(2, 0);
        let mut m = Model::init(cfg, 2, &mut rng).unwrap();
        let mut flat = m.params.flatten(None);
        flat.iter_mut().for_each(|x| *x = rng.gaussian() * 1e-3 + rng.uniform());
        m.params.unflatten(None, &flat);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in [Variant::Mf, Variant::Ncf] {
            let m = model(v);
            let back = parse(&to_string(&m), Path::new("mem")).unwrap();
            assert_eq!(back.params, m.params);
            assert_eq!(back.config, m.config);
            for u in 0..9 {
                for i in 0..4 {
                    assert_eq!(back.score(u, i).to_bits(), m.score(u, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let good = to_string(&model(Variant::Mf));
        assert!(matches!(parse("HELLO\n", Path::new("x")), Err(Error::Parse { .. })));
        let truncated: String = good.lines().take(15).collect::<Vec<_>>().join("\n");
        assert!(parse(&truncated, Path::new("x")).is_err());
        let bad_float = good.replacen("tensor head.bias 1\n", "tensor head.bias 1\nabc\n", 1);
        assert!(parse(&bad_float, Path::new("x")).is_err());
    }
}
