//! Metrics CSV.
//!
//! Header: `iteration,kind,codebook,attempts,accepts,live_sh,live_sr,recon,total,psnr`.
//! `kind` is `update`, `split`, `merge` or `eval`; `codebook` is `sh`, `sr` or
//! `-`. Missing numeric fields are empty and non-finite values are written as
//! `nan`.

use std::fs::File;
use std::path::Path;

use crate::error::Result;
use crate::sampler::TransitionRecord;

pub const METRICS_HEADER: [&str; 10] = [
    "iteration", "kind", "codebook", "attempts", "accepts", "live_sh", "live_sr", "recon", "total", "psnr",
];

/// Evaluation snapshot, averaged over the evaluated views.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub live_sh: usize,
    pub live_sr: usize,
    pub recon: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MetricsRow {
    Transition(TransitionRecord),
    Eval(EvalRecord),
}

fn num(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if !x.is_finite() => "nan".into(),
        Some(x) => format!("{x:?}"),
    }
}

impl MetricsRow {
    fn fields(&self) -> [String; 10] {
        match self {
            MetricsRow::Transition(r) => [
                r.iteration.to_string(),
                r.kind.as_str().into(),
                r.codebook.map_or("-", |c| c.as_str()).into(),
                r.attempts.to_string(),
                r.accepts.to_string(),
                r.live_sh.to_string(),
                r.live_sr.to_string(),
                num(r.recon),
                num(r.total),
                String::new(),
            ],
            MetricsRow::Eval(e) => [
                e.iteration.to_string(),
                "eval".into(),
                "-".into(),
                String::new(),
                String::new(),
                e.live_sh.to_string(),
                e.live_sr.to_string(),
                num(Some(e.recon)),
                String::new(),
                num(Some(e.psnr)),
            ],
        }
    }
}

/// Streaming writer; the header is written on creation.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(METRICS_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics_csv<'a>(rows: impl IntoIterator<Item = &'a MetricsRow>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for row in rows {
        w.write(row)?;
    }
    w.finish()
}
