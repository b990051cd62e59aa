//! Episode trace CSV.
//!
//! Columns: `episode,t,s0..s{n-1},a0..a{m-1},reward,done`. Row `t` holds the
//! state at `t`, the action taken from it and the reward of that transition.
//! Every episode ends with a row carrying only the final state; its `done`
//! field is 1 when the environment terminated the episode. The same format is
//! used for seed datasets holding many episodes.

use std::io::{Read, Write};

use nalgebra::DVector;

use crate::dynamics::Episode;
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("trace csv: {e}"))
}

pub fn write_trace_csv<W: Write>(out: W, episodes: &[Episode]) -> Result<()> {
    let Some(first) = episodes.first() else {
        return Ok(());
    };
    let n = first.states[0].len();
    let m = first.actions.first().map_or(0, |a| a.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["episode".to_string(), "t".to_string()];
    header.extend((0..n).map(|i| format!("s{i}")));
    header.extend((0..m).map(|i| format!("a{i}")));
    header.push("reward".into());
    header.push("done".into());
    w.write_record(&header).map_err(csv_err)?;

    for (e, ep) in episodes.iter().enumerate() {
        ep.validate()?;
        for t in 0..ep.states.len() {
            let mut row = vec![e.to_string(), t.to_string()];
            row.extend(ep.states[t].iter().map(|v| format!("{v:?}")));
            if t < ep.actions.len() {
                row.extend(ep.actions[t].iter().map(|v| format!("{v:?}")));
                row.push(format!("{:?}", ep.rewards[t]));
                row.push("0".into());
            } else {
                row.extend(std::iter::repeat_n(String::new(), m + 1));
                row.push(if ep.terminated { "1" } else { "0" }.into());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<Episode>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let n = header.iter().filter(|h| h.starts_with('s')).count();
    let m = header.iter().filter(|h| h.starts_with('a')).count();
    if header.len() != n + m + 4 || n == 0 {
        return Err(Error::InvalidArgument("trace csv: unexpected header".into()));
    }
    let parse = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::InvalidArgument(format!("trace csv: bad number `{s}`: {e}")))
    };

    let mut episodes = Vec::new();
    let mut current: Option<(String, Episode)> = None;
    let mut pending: Option<(DVector<f64>, f64)> = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let id = rec[0].to_string();
        let state = DVector::from_iterator(n, (0..n).map(|i| parse(&rec[2 + i])).collect::<Result<Vec<_>>>()?);
        let is_final = rec[2 + n].is_empty();
        match &mut current {
            Some((cid, ep)) if *cid == id => {
                let (a, reward) = pending
                    .take()
                    .ok_or_else(|| Error::InvalidArgument("trace csv: row after final state".into()))?;
                ep.push(a, reward, state);
            }
            _ => {
                if current.is_some() || pending.is_some() {
                    return Err(Error::InvalidArgument("trace csv: episode missing final row".into()));
                }
                current = Some((id, Episode::new(state)));
            }
        }
        if is_final {
            let (_, mut ep) = current.take().expect("episode in progress");
            ep.terminated = &rec[3 + n + m] == "1";
            ep.validate()?;
            episodes.push(ep);
        } else {
            let a = DVector::from_iterator(m, (0..m).map(|i| parse(&rec[2 + n + i])).collect::<Result<Vec<_>>>()?);
            pending = Some((a, parse(&rec[2 + n + m])?));
        }
    }
    if current.is_some() {
        return Err(Error::InvalidArgument("trace csv: truncated episode".into()));
    }
    Ok(episodes)
}
