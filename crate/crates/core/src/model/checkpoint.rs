//! Plain-text checkpoints: config echo, vocabulary, named parameter tensors
//! with shape headers, and optimizer state. Floats are written in shortest
//! round-trip form, so a save/load cycle is exact.

use std::io::{BufRead, Write};

use super::{AdamState, Model, ModelConfig, Param, TrainConfig, Vocab};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &str = "elliptical-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub vocab: Vocab,
    pub train: TrainConfig,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "checkpoint", detail: detail.into() }
}

fn write_tensor<W: Write>(w: &mut W, kind: &str, name: &str, m: &Matrix) -> Result<()> {
    writeln!(w, "{kind} {name} {} {}", m.rows(), m.cols())?;
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn save_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "step {}", ck.adam.step)?;
    for (k, v) in ck.model.cfg.to_pairs() {
        writeln!(w, "config {k} {v}")?;
    }
    let t = &ck.train;
    for (k, v) in [("lr", t.lr), ("beta1", t.beta1), ("beta2", t.beta2), ("eps", t.eps)] {
        writeln!(w, "train {k} {v}")?;
    }
    writeln!(w, "train batch_size {}", t.batch_size)?;
    let cps: Vec<String> = ck.vocab.chars().iter().map(|&c| (c as u32).to_string()).collect();
    writeln!(w, "vocab {}", cps.join(" "))?;
    for p in &ck.model.params {
        write_tensor(&mut w, "tensor", &p.name, &p.value)?;
    }
    for (p, m) in ck.model.params.iter().zip(&ck.adam.m) {
        write_tensor(&mut w, "adam_m", &p.name, m)?;
    }
    for (p, v) in ck.model.params.iter().zip(&ck.adam.v) {
        write_tensor(&mut w, "adam_v", &p.name, v)?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: BufRead>(r: R) -> Result<Checkpoint> {
    let mut lines = r.lines();
    let mut next = move || -> Result<String> { lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(Error::from) };
    if next()? != MAGIC {
        return Err(bad("missing header line"));
    }
    let step_line = next()?;
    let step = step_line
        .strip_prefix("step ")
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| bad(format!("bad step line `{step_line}`")))?;

    let mut cfg_pairs = Vec::new();
    let mut train = TrainConfig::default();
    let mut line = next()?;
    while let Some(rest) = line.strip_prefix("config ") {
        let (k, v) = rest.split_once(' ').ok_or_else(|| bad(format!("bad config line `{line}`")))?;
        cfg_pairs.push((k.to_string(), v.to_string()));
        line = next()?;
    }
    while let Some(rest) = line.strip_prefix("train ") {
        let (k, v) = rest.split_once(' ').ok_or_else(|| bad(format!("bad train line `{line}`")))?;
        let f = || v.parse::<f64>().map_err(|_| bad(format!("bad value in `{line}`")));
        match k {
            "lr" => train.lr = f()?,
            "beta1" => train.beta1 = f()?,
            "beta2" => train.beta2 = f()?,
            "eps" => train.eps = f()?,
            "batch_size" => train.batch_size = v.parse().map_err(|_| bad(format!("bad value in `{line}`")))?,
            _ => return Err(bad(format!("unknown train key `{k}`"))),
        }
        line = next()?;
    }
    let cfg = ModelConfig::from_pairs(cfg_pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    cfg.validate()?;

    let codes = line.strip_prefix("vocab ").ok_or_else(|| bad("missing vocab line"))?;
    let chars = codes
        .split(' ')
        .map(|c| c.parse::<u32>().ok().and_then(char::from_u32).ok_or_else(|| bad(format!("bad codepoint `{c}`"))))
        .collect::<Result<Vec<char>>>()?;
    let vocab = Vocab::from_chars(chars)?;
    if vocab.len() != cfg.vocab_size {
        return Err(bad(format!("vocabulary has {} entries, config says {}", vocab.len(), cfg.vocab_size)));
    }

    let shapes = Model::param_shapes(&cfg);
    let mut read_block = |kind: &str| -> Result<Vec<Matrix>> {
        let mut out = Vec::with_capacity(shapes.len());
        for (name, rows, cols) in &shapes {
            let header = next()?;
            let expect = format!("{kind} {name} {rows} {cols}");
            if header != expect {
                return Err(bad(format!("expected `{expect}`, found `{header}`")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..*rows {
                let row = next()?;
                let before = data.len();
                for tok in row.split(' ') {
                    data.push(tok.parse::<f64>().map_err(|_| bad(format!("bad number `{tok}` in {name}")))?);
                }
                if data.len() - before != *cols {
                    return Err(bad(format!("row of {name} has {} entries, expected {cols}", data.len() - before)));
                }
            }
            out.push(Matrix::new(*rows, *cols, data).map_err(|e| bad(e.to_string()))?);
        }
        Ok(out)
    };
    let tensors = read_block("tensor")?;
    let m = read_block("adam_m")?;
    let v = read_block("adam_v")?;
    drop(read_block);
    if next()? != "end" {
        return Err(bad("missing end marker"));
    }
    let params = shapes.iter().zip(tensors).map(|((name, _, _), value)| Param { name: name.clone(), value }).collect();
    Ok(Checkpoint { model: Model { cfg, params }, adam: AdamState { step, m, v }, vocab, train })
}
