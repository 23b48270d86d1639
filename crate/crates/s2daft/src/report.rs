//! Text reports, training logs and classification-map rasters.

use std::fmt::Write as _;
use std::path::Path;

use s2daft_core::daft::FinetuneLog;
use s2daft_core::metrics::{EvalReport, Summary};
use s2daft_core::pretrain::StepLog;

use crate::container::write;
use crate::error::{CliError, Result};

pub const PRETRAIN_LOG_HEADER: &str = "epoch\tstep\tt\tL_spa\tL_freq\tL_dfs\tL_pretrain\tlr";
pub const FINETUNE_LOG_HEADER: &str = "epoch\tstep\tt\tL_cls\tL_dta\tL_DAFT\tlambda\tlr";

pub fn pretrain_log_line(l: &StepLog) -> String {
    let x = &l.losses;
    format!("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}", l.epoch, l.step, l.t_mean, x.spa, x.freq, x.dfs, x.total, l.lr)
}

pub fn finetune_log_line(l: &FinetuneLog) -> String {
    let x = &l.losses;
    format!("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}", l.epoch, l.step, l.t_mean, x.cls, x.dta, x.total, l.lambda, l.lr)
}

fn summary_line(out: &mut String, name: &str, s: Option<Summary>) {
    match s {
        Some(s) => writeln!(out, "{name}\t{:.6}\t{:.6}", s.mean, s.std).unwrap(),
        None => writeln!(out, "{name}\t-\t-").unwrap(),
    }
}

/// `metric<TAB>mean<TAB>std` for OA, AA and κ, then one line per class.
/// The std is the population standard deviation over runs.
pub fn format_report(report: &EvalReport, class_names: &[String]) -> String {
    let mut out = String::new();
    writeln!(out, "# runs={} std=population", report.runs.len()).unwrap();
    summary_line(&mut out, "oa", Some(report.oa));
    summary_line(&mut out, "aa", Some(report.aa));
    summary_line(&mut out, "kappa", Some(report.kappa));
    for (i, s) in report.per_class.iter().enumerate() {
        let name = class_names.get(i).cloned().unwrap_or_else(|| format!("class{}", i + 1));
        summary_line(&mut out, &format!("class:{name}"), *s);
    }
    out
}

/// Metric name to `(mean, std)` for the three headline rows.
pub fn parse_report(text: &str) -> Vec<(String, f64, f64)> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| {
            let mut parts = l.split('\t');
            let name = parts.next()?.to_string();
            let mean = parts.next()?.parse().ok()?;
            let std = parts.next()?.parse().ok()?;
            Some((name, mean, std))
        })
        .collect()
}

/// Label 0 is black; classes follow the legend order.
pub const PALETTE: [[u8; 3]; 17] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [0, 255, 255],
    [255, 0, 255],
    [191, 191, 191],
    [128, 128, 128],
    [128, 0, 0],
    [128, 128, 0],
    [0, 128, 0],
    [128, 0, 128],
    [0, 128, 128],
    [0, 0, 128],
    [255, 166, 0],
    [255, 217, 0],
];

fn palette_comment() -> String {
    let entries: Vec<String> = PALETTE.iter().enumerate().map(|(i, [r, g, b])| format!("{i}:{r},{g},{b}")).collect();
    format!("# palette {}", entries.join(" "))
}

/// Binary PPM of a row-major label map.
pub fn encode_map(height: usize, width: usize, labels: &[u16]) -> std::result::Result<Vec<u8>, String> {
    if labels.len() != height * width {
        return Err(format!("{} labels for a {height}x{width} map", labels.len()));
    }
    let mut out = format!("P6\n{}\n{width} {height}\n255\n", palette_comment()).into_bytes();
    for &l in labels {
        let rgb = PALETTE.get(l as usize).ok_or_else(|| format!("label {l} outside the {}-entry palette", PALETTE.len()))?;
        out.extend_from_slice(rgb);
    }
    Ok(out)
}

pub fn save_map(path: &Path, height: usize, width: usize, labels: &[u16]) -> Result<()> {
    let bytes = encode_map(height, width, labels).map_err(|e| CliError::format(path, 0, e))?;
    write(path, &bytes)
}

/// Inverse of [`encode_map`]: `(height, width, labels)`.
pub fn decode_map(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(CliError::format(path, pos as u64, "truncated header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P6" {
        return Err(CliError::format(path, 0, "not a binary PPM"));
    }
    let num = |i: usize| -> Result<usize> { fields[i].1.parse().map_err(|_| CliError::format(path, fields[i].0 as u64, "expected a number")) };
    let (width, height, max) = (num(1)?, num(2)?, num(3)?);
    if max != 255 {
        return Err(CliError::format(path, fields[3].0 as u64, "only maxval 255 is supported"));
    }
    pos += 1;
    let need = width * height * 3;
    let body = bytes.get(pos..pos + need).ok_or_else(|| CliError::format(path, pos as u64, "truncated pixel data"))?;
    let labels = body
        .chunks_exact(3)
        .enumerate()
        .map(|(i, px)| {
            PALETTE
                .iter()
                .position(|c| c == px)
                .map(|l| l as u16)
                .ok_or_else(|| CliError::format(path, (pos + 3 * i) as u64, format!("colour {px:?} is not in the palette")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((height, width, labels))
}
