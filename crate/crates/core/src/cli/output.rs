//! CSV and JSON-lines writers with a fixed number of significant digits.

use std::path::Path;

use serde::Serialize;

use crate::conditioning::Strategy;
use crate::error::Result;
use crate::model::ModelParams;
use crate::montecarlo::SweepRow;
use crate::simulator::{evolve_wealth, PathRecord};

/// Formats `v` with `digits` significant digits, trailing zeros removed.
/// Plain decimal notation is used unless the exponent is extreme.
pub fn fmt_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..=15).contains(&exp) {
        return format!("{:.*e}", digits.saturating_sub(1), v);
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes into memory, so record writes cannot fail.
fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

const MEM: &str = "in-memory csv write";

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect(MEM);
    String::from_utf8(bytes).expect("csv output is utf-8")
}

pub const PATH_HEADER: &str = "t,x,z,phase,i0,pi_star_raw,pi_star,pi_c,w_star,w_c";

/// One row per grid point. `phase` is the phase of the dynamics and `i0` the
/// completed downcrossings; strategies are evaluated on the observed state.
pub fn path_csv(
    path: &PathRecord,
    strategy: &Strategy,
    params: &ModelParams,
    w0: f64,
    digits: usize,
) -> Result<String> {
    let w_star = evolve_wealth(path, |s| strategy.raw(s, params), params, w0)?;
    let w_c = evolve_wealth(path, |s| Strategy::Classic.raw(s, params), params, w0)?;
    let z = path.prices(params);
    let mut out = csv_writer();
    out.write_record(PATH_HEADER.split(',')).expect(MEM);
    let f = |v: f64| fmt_sig(v, digits);
    for (k, st) in path.states.iter().enumerate() {
        let raw = strategy.raw(st, params)?;
        out.write_record([
            f(path.times[k]),
            f(path.x[k]),
            f(z[k]),
            path.regime[k].label().to_string(),
            st.i0.to_string(),
            f(raw),
            f(strategy.projected(st, params)?),
            f(Strategy::Classic.projected(st, params)?),
            f(w_star.w[k]),
            f(w_c.w[k]),
        ])
        .expect(MEM);
    }
    Ok(finish(out))
}

pub const RESULTS_HEADER: &str = "param_value,mean,std_err,std_dev,n,p,mu";

pub fn results_csv(rows: &[SweepRow], digits: usize) -> String {
    let mut out = csv_writer();
    out.write_record(RESULTS_HEADER.split(',')).expect(MEM);
    let f = |v: f64| fmt_sig(v, digits);
    for r in rows {
        let s = &r.summary;
        out.write_record([
            f(r.param_value),
            f(s.mean),
            f(s.std_err),
            f(s.std_dev),
            s.n.to_string(),
            f(r.p),
            f(r.mu),
        ])
        .expect(MEM);
    }
    finish(out)
}

/// One JSON object per line.
pub fn jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> std::io::Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}
