use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One optimizer step of a training run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Writes a loss trace as CSV with columns `step,epoch,lr,loss`.
pub fn write_trace_csv(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(crate::Error::at(path))?);
    writeln!(out, "step,epoch,lr,loss")?;
    for p in trace {
        writeln!(out, "{},{},{:e},{:e}", p.step, p.epoch, p.lr, p.loss)?;
    }
    out.flush()?;
    Ok(())
}

/// Mean loss of each epoch, in epoch order. Epochs without steps are skipped.
pub fn epoch_means(trace: &[TracePoint]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for p in trace {
        match out.last_mut() {
            Some((e, sum, n)) if *e == p.epoch => {
                *sum += p.loss;
                *n += 1;
            }
            _ => out.push((p.epoch, p.loss, 1)),
        }
    }
    out.into_iter().map(|(e, s, n)| (e, s / n as f64)).collect()
}
