use std::io::Write;

use super::SimTrace;
use crate::error::Result;

pub fn csv_header(n_x: usize, n_m: usize, n_w: usize, with_w_hat: bool) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n_x).map(|i| format!("x{i}")));
    cols.extend((1..=n_m).map(|i| format!("xm{i}")));
    cols.extend((1..=n_x + n_m).map(|i| format!("xihat{i}")));
    cols.push("e_norm".into());
    cols.push("z_norm_sq_cum".into());
    cols.extend((1..=n_w).map(|i| format!("w{i}")));
    if with_w_hat {
        cols.extend((1..=n_w).map(|i| format!("what{i}")));
    }
    cols.join(",")
}

/// One row per recorded step, 12 significant digits after the point.
pub fn write_csv(trace: &SimTrace, out: &mut impl Write) -> Result<()> {
    let n_x = trace.x.first().map_or(0, |v| v.len());
    let n_m = trace.xm.first().map_or(0, |v| v.len());
    let n_w = trace.w.first().map_or(0, |v| v.len());
    writeln!(out, "{}", csv_header(n_x, n_m, n_w, trace.w_hat.is_some()))?;
    for k in 0..trace.len() {
        let mut row: Vec<f64> = vec![trace.t[k]];
        row.extend(trace.x[k].iter());
        row.extend(trace.xm[k].iter());
        row.extend(trace.xi_hat[k].iter());
        row.push(trace.e_norm[k]);
        row.push(trace.z_norm_sq_cum[k]);
        row.extend(trace.w[k].iter());
        if let Some(wh) = &trace.w_hat {
            row.extend(wh[k].iter());
        }
        let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}
