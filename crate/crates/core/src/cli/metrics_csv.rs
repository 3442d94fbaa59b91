use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::teacher_student::{EpochRecord, Phase};

pub const HEADER: &str =
    "epoch,phase,alpha,tau,lr,loss_sup,loss_cons,loss_total,val_miou,val_mdice,pseudo_coverage";

pub fn format_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.phase.name(),
        r.alpha,
        r.tau,
        r.lr,
        r.loss_sup,
        r.loss_cons,
        r.loss_total,
        r.val_miou,
        r.val_mdice,
        r.pseudo_coverage
    )
}

pub fn format_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format_row(r));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        _ => {
            return Err(Error::Line {
                line: 1,
                detail: format!("expected header {HEADER}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Line {
                line: n,
                detail: format!("expected 11 fields, got {}", f.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            f[k].parse().map_err(|_| Error::Line {
                line: n,
                detail: format!("field {} is not a number: {:?}", k + 1, f[k]),
            })
        };
        let phase = match f[1] {
            "warmup" => Phase::Warmup,
            "cotrain" => Phase::CoTrain,
            other => {
                return Err(Error::Line {
                    line: n,
                    detail: format!("unknown phase {other:?}"),
                })
            }
        };
        out.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| Error::Line {
                line: n,
                detail: format!("epoch is not an integer: {:?}", f[0]),
            })?,
            phase,
            alpha: num(2)?,
            tau: num(3)?,
            lr: num(4)?,
            loss_sup: num(5)?,
            loss_cons: num(6)?,
            loss_total: num(7)?,
            val_miou: num(8)?,
            val_mdice: num(9)?,
            pseudo_coverage: num(10)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    parse_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    fs::write(path, format_csv(records)).map_err(|e| Error::io(path, e))
}
