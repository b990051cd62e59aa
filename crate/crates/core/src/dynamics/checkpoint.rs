//! Plain-text checkpoint of the two networks.
//!
//! ```text
//! latco-checkpoint 1
//! dynamics <state_dim> <action_dim>
//! tensor hidden1.weight <rows> <cols>
//! <rows*cols values, row-major, whitespace separated>
//! tensor hidden1.bias <rows> 1
//! ...
//! reward <state_dim>
//! tensor hidden1.weight <rows> <cols>
//! ...
//! end
//! ```
//!
//! Dynamics tensors appear in the order hidden1, hidden2, mean_head,
//! log_std_head; reward tensors in the order hidden1, hidden2, head. Values are
//! printed with Rust's shortest round-trip formatting, so a save/load cycle is
//! lossless.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::{Dense, MlpGaussianDynamics, MlpReward};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "latco-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const DYNAMICS_LAYERS: [&str; 4] = ["hidden1", "hidden2", "mean_head", "log_std_head"];
const REWARD_LAYERS: [&str; 3] = ["hidden1", "hidden2", "head"];

pub fn write_checkpoint<W: Write>(
    mut out: W,
    dynamics: &MlpGaussianDynamics,
    reward: &MlpReward,
) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(out, "dynamics {} {}", dynamics.state_dim, dynamics.action_dim)?;
    for (name, layer) in DYNAMICS_LAYERS.iter().zip(dynamics.layers()) {
        write_layer(&mut out, name, layer)?;
    }
    writeln!(out, "reward {}", reward.state_dim)?;
    for (name, layer) in REWARD_LAYERS.iter().zip(reward.layers()) {
        write_layer(&mut out, name, layer)?;
    }
    writeln!(out, "end")?;
    Ok(())
}

fn write_layer<W: Write>(out: &mut W, name: &str, layer: &Dense) -> Result<()> {
    let w = &layer.weight;
    writeln!(out, "tensor {name}.weight {} {}", w.nrows(), w.ncols())?;
    let mut line = String::new();
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&format!("{:?}", w[(i, j)]));
        }
    }
    writeln!(out, "{line}")?;
    writeln!(out, "tensor {name}.bias {} 1", layer.bias.len())?;
    let bias: Vec<String> = layer.bias.iter().map(|v| format!("{v:?}")).collect();
    writeln!(out, "{}", bias.join(" "))?;
    Ok(())
}

struct Lines<R> {
    inner: R,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        let mut s = String::new();
        loop {
            s.clear();
            self.line_no += 1;
            if self.inner.read_line(&mut s)? == 0 {
                return Err(Error::Checkpoint(format!("unexpected end of file at line {}", self.line_no)));
            }
            if !s.trim().is_empty() {
                return Ok(s.trim().to_string());
            }
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Checkpoint(format!("line {}: {msg}", self.line_no))
    }
}

fn parse_usize<R: BufRead>(lines: &Lines<R>, tok: Option<&str>) -> Result<usize> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.err("expected an unsigned integer"))
}

fn read_tensor<R: BufRead>(lines: &mut Lines<R>, expected_name: &str) -> Result<DMatrix<f64>> {
    let header = lines.next()?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("tensor") {
        return Err(lines.err("expected `tensor`"));
    }
    let name = toks.next().unwrap_or_default();
    if name != expected_name {
        return Err(lines.err(format!("expected tensor {expected_name}, found {name}")));
    }
    let rows = parse_usize(lines, toks.next())?;
    let cols = parse_usize(lines, toks.next())?;
    let data = lines.next()?;
    let values = data
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| lines.err(e))?;
    if values.len() != rows * cols {
        return Err(lines.err(format!("expected {} values, found {}", rows * cols, values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(lines.err("non-finite weight"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read_layer<R: BufRead>(lines: &mut Lines<R>, name: &str, inputs: usize, outputs: usize) -> Result<Dense> {
    let weight = read_tensor(lines, &format!("{name}.weight"))?;
    let bias = read_tensor(lines, &format!("{name}.bias"))?;
    if weight.shape() != (outputs, inputs) || bias.shape() != (outputs, 1) {
        return Err(lines.err(format!(
            "layer {name}: expected {outputs}x{inputs}, found {:?} / {:?}",
            weight.shape(),
            bias.shape()
        )));
    }
    Ok(Dense {
        weight,
        bias: DVector::from_column_slice(bias.as_slice()),
    })
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<(MlpGaussianDynamics, MlpReward)> {
    use super::HIDDEN_UNITS as H;
    let mut lines = Lines { inner: input, line_no: 0 };
    let header = lines.next()?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(CHECKPOINT_MAGIC) {
        return Err(lines.err("not a latco checkpoint"));
    }
    let version = parse_usize(&lines, toks.next())?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(lines.err(format!("unsupported checkpoint version {version}")));
    }

    let dyn_header = lines.next()?;
    let mut toks = dyn_header.split_whitespace();
    if toks.next() != Some("dynamics") {
        return Err(lines.err("expected `dynamics` section"));
    }
    let state_dim = parse_usize(&lines, toks.next())?;
    let action_dim = parse_usize(&lines, toks.next())?;
    let dynamics = MlpGaussianDynamics {
        state_dim,
        action_dim,
        hidden1: read_layer(&mut lines, "hidden1", state_dim + action_dim, H)?,
        hidden2: read_layer(&mut lines, "hidden2", H, H)?,
        mean_head: read_layer(&mut lines, "mean_head", H, state_dim)?,
        log_std_head: read_layer(&mut lines, "log_std_head", H, state_dim)?,
    };

    let rew_header = lines.next()?;
    let mut toks = rew_header.split_whitespace();
    if toks.next() != Some("reward") {
        return Err(lines.err("expected `reward` section"));
    }
    let reward_dim = parse_usize(&lines, toks.next())?;
    let reward = MlpReward {
        state_dim: reward_dim,
        hidden1: read_layer(&mut lines, "hidden1", reward_dim, H)?,
        hidden2: read_layer(&mut lines, "hidden2", H, H)?,
        head: read_layer(&mut lines, "head", H, 1)?,
    };
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }
    Ok((dynamics, reward))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = MlpGaussianDynamics::random(3, 2, &mut rng);
        let r = MlpReward::random(3, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &d, &r).unwrap();
        let (d2, r2) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(d, d2);
        assert_eq!(r, r2);
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = MlpGaussianDynamics::random(1, 1, &mut rng);
        let r = MlpReward::random(1, &mut rng);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &d, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let bumped = text.replacen("latco-checkpoint 1", "latco-checkpoint 9", 1);
        assert!(read_checkpoint(bumped.as_bytes()).is_err());
        let truncated = &text[..text.len() / 2];
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
    }
}
