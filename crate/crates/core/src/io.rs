//! Binary and text file formats for every pipeline artifact.
//!
//! All formats open with an ASCII magic line and are fixed little-endian, so
//! files are bit-exact across platforms. Validation is structural: declared
//! counts must match the payload length exactly, and any overrun reports the
//! byte offset where the data ran out.

use std::path::Path;

use crate::csp::{OvrSubfilter, SpatialFilter};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{Ablation, ModelConfig, ModelParams, RawTensor};
use crate::preprocess::{StandardizationStats, Trial};
use crate::train::metrics::{ClassMetrics, EvalReport};

pub const TRIALS_MAGIC: &str = "S3T-TRIALS v1";
pub const FILTER_MAGIC: &str = "S3T-FILTER v1";
pub const CHECKPOINT_MAGIC: &str = "S3T-CKPT v1";
pub const REPORT_MAGIC: &str = "S3T-REPORT v1";
pub const STATS_MAGIC: &str = "S3T-STATS v1";

/// A homogeneous set of trials plus the label-space size.
#[derive(Debug, Clone)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    pub n_classes: usize,
    pub fs: f64,
}

impl TrialSet {
    pub fn from_trials(trials: Vec<Trial>, n_classes: usize) -> Result<Self> {
        let fs = trials.first().map(|t| t.fs).unwrap_or(250.0);
        let set = TrialSet {
            trials,
            n_classes,
            fs,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(first) = self.trials.first() {
            for t in &self.trials {
                if t.channels() != first.channels() || t.samples() != first.samples() {
                    return Err(Error::Data(format!(
                        "inhomogeneous trial shapes: {}x{} vs {}x{}",
                        t.channels(),
                        t.samples(),
                        first.channels(),
                        first.samples()
                    )));
                }
                if t.label >= self.n_classes {
                    return Err(Error::Data(format!(
                        "label {} out of range for {} classes",
                        t.label, self.n_classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.trials.first().map(|t| t.channels()).unwrap_or(0)
    }

    pub fn samples(&self) -> usize {
        self.trials.first().map(|t| t.samples()).unwrap_or(0)
    }
}

// ── low-level byte plumbing ──────────────────────────────────────────

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn corrupt(&self, what: &str) -> Error {
        Error::Corrupt {
            offset: self.pos as u64,
            what: what.to_string(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt(&format!(
                "unexpected end of file while reading {what} ({n} bytes needed, {} left)",
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n * 8, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    fn expect_magic(&mut self, magic: &str) -> Result<()> {
        let want = format!("{magic}\n");
        let got = self.take(want.len(), "magic header").map_err(|_| Error::Format(
            format!("file too short to hold the `{magic}` header"),
        ))?;
        if got != want.as_bytes() {
            return Err(Error::Format(format!(
                "bad magic: expected `{magic}`, found `{}`",
                String::from_utf8_lossy(&got[..got.len().saturating_sub(1)])
            )));
        }
        Ok(())
    }

    fn expect_eof(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                what: format!("{} trailing bytes after payload", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new(magic: &str) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic.as_bytes());
        buf.push(b'\n');
        ByteWriter { buf }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

// ── TrialSetFile ─────────────────────────────────────────────────────

pub fn encode_trial_set(set: &TrialSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut w = ByteWriter::new(TRIALS_MAGIC);
    w.u32(set.channels() as u32);
    w.u32(set.samples() as u32);
    w.u32(set.n_classes as u32);
    w.u32(set.trials.len() as u32);
    w.f64(set.fs);
    for t in &set.trials {
        w.u8(t.label as u8);
        w.f64_slice(t.data.data());
    }
    Ok(w.buf)
}

pub fn decode_trial_set(bytes: &[u8]) -> Result<TrialSet> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(TRIALS_MAGIC)?;
    let c = r.u32("channel count")? as usize;
    let t = r.u32("sample count")? as usize;
    let n_classes = r.u32("class count")? as usize;
    let count = r.u32("trial count")? as usize;
    let fs = r.f64("sampling rate")?;
    let mut trials = Vec::with_capacity(count);
    for i in 0..count {
        let label = r.u8(&format!("label of trial {i}"))? as usize;
        if label >= n_classes {
            return Err(Error::Data(format!(
                "trial {i} label {label} out of range for {n_classes} classes"
            )));
        }
        let values = r.f64_vec(c * t, &format!("samples of trial {i}"))?;
        trials.push(Trial {
            data: Mat::from_vec(c, t, values),
            label,
            subject_id: String::new(),
            fs,
        });
    }
    r.expect_eof()?;
    // Keep the header fs verbatim so empty sets round-trip byte-identically.
    let set = TrialSet {
        trials,
        n_classes,
        fs,
    };
    set.validate()?;
    Ok(set)
}

pub fn write_trial_set(path: &Path, set: &TrialSet) -> Result<()> {
    std::fs::write(path, encode_trial_set(set)?)?;
    Ok(())
}

pub fn read_trial_set(path: &Path) -> Result<TrialSet> {
    decode_trial_set(&std::fs::read(path)?)
}

// ── FilterFile ───────────────────────────────────────────────────────

pub fn encode_filter(filter: &SpatialFilter) -> Vec<u8> {
    let mut w = ByteWriter::new(FILTER_MAGIC);
    let c = filter.n_channels();
    w.u32(filter.subfilters.len() as u32);
    let s = filter.subfilters.first().map(|f| f.projection.rows()).unwrap_or(0);
    w.u32(s as u32);
    w.u32(c as u32);
    w.u32(filter.w.rows() as u32);
    w.f64_slice(filter.w.data());
    for sub in &filter.subfilters {
        w.u32(sub.one_class as u32);
        w.f64_slice(&sub.eigvals_one);
        w.f64_slice(sub.projection.data());
    }
    w.buf
}

pub fn decode_filter(bytes: &[u8]) -> Result<SpatialFilter> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(FILTER_MAGIC)?;
    let n_sub = r.u32("sub-filter count")? as usize;
    let s = r.u32("rows per sub-filter")? as usize;
    let c = r.u32("channel count")? as usize;
    let w_rows = r.u32("stacked row count")? as usize;
    if w_rows != n_sub * s {
        return Err(Error::Format(format!(
            "stacked rows {w_rows} do not equal {n_sub} sub-filters × {s} rows"
        )));
    }
    let w_values = r.f64_vec(w_rows * c, "stacked projection W")?;
    let w = Mat::from_vec(w_rows, c, w_values);
    let mut subfilters = Vec::with_capacity(n_sub);
    let mut class_order = Vec::with_capacity(n_sub);
    for i in 0..n_sub {
        let one_class = r.u32(&format!("class of sub-filter {i}"))? as usize;
        let eigvals_one = r.f64_vec(s, &format!("eigenvalues of sub-filter {i}"))?;
        let proj = r.f64_vec(s * c, &format!("projection of sub-filter {i}"))?;
        class_order.push(one_class);
        subfilters.push(OvrSubfilter {
            projection: Mat::from_vec(s, c, proj),
            one_class,
            eigvals_one,
        });
    }
    r.expect_eof()?;
    Ok(SpatialFilter {
        w,
        subfilters,
        class_order,
    })
}

pub fn write_filter(path: &Path, filter: &SpatialFilter) -> Result<()> {
    std::fs::write(path, encode_filter(filter))?;
    Ok(())
}

pub fn read_filter(path: &Path) -> Result<SpatialFilter> {
    decode_filter(&std::fs::read(path)?)
}

// ── CheckpointFile ───────────────────────────────────────────────────

pub fn encode_checkpoint(cfg: &ModelConfig, params: &ModelParams<RawTensor>) -> Vec<u8> {
    let mut w = ByteWriter::new(CHECKPOINT_MAGIC);
    for v in [
        cfg.n_feature_channels,
        cfg.t_samples,
        cfg.slice_d,
        cfg.n_heads,
        cfg.k_c,
        cfg.n_f,
        cfg.n_a,
        cfg.n_classes,
        cfg.d_k,
        cfg.d_v,
    ] {
        w.u32(v as u32);
    }
    w.f64(cfg.dropout_spatial);
    w.f64(cfg.dropout_temporal);
    w.f64(cfg.ln_eps);
    for flag in [
        cfg.ablation.drop_spatial,
        cfg.ablation.drop_temporal,
        cfg.ablation.drop_posenc,
        cfg.ablation.drop_ff,
    ] {
        w.u8(flag as u8);
    }
    let tensors = params.tensors();
    w.u32(tensors.len() as u32);
    for (name, tensor) in tensors {
        w.u16(name.len() as u16);
        w.buf.extend_from_slice(name.as_bytes());
        w.u32(tensor.rows as u32);
        w.u32(tensor.cols as u32);
        w.f64_slice(&tensor.values);
    }
    w.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelConfig, ModelParams<RawTensor>)> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let mut ints = [0usize; 10];
    for (i, slot) in ints.iter_mut().enumerate() {
        *slot = r.u32(&format!("config field {i}"))? as usize;
    }
    let dropout_spatial = r.f64("spatial dropout")?;
    let dropout_temporal = r.f64("temporal dropout")?;
    let ln_eps = r.f64("layer-norm epsilon")?;
    let mut flags = [false; 4];
    for (i, f) in flags.iter_mut().enumerate() {
        *f = r.u8(&format!("ablation flag {i}"))? != 0;
    }
    let cfg = ModelConfig {
        n_feature_channels: ints[0],
        t_samples: ints[1],
        slice_d: ints[2],
        n_heads: ints[3],
        k_c: ints[4],
        n_f: ints[5],
        n_a: ints[6],
        n_classes: ints[7],
        d_k: ints[8],
        d_v: ints[9],
        dropout_spatial,
        dropout_temporal,
        ln_eps,
        ablation: Ablation {
            drop_spatial: flags[0],
            drop_temporal: flags[1],
            drop_posenc: flags[2],
            drop_ff: flags[3],
        },
    };
    cfg.validate()?;

    let tensor_count = r.u32("tensor count")? as usize;
    // Rebuild the parameter structure from the config, then fill each tensor
    // by canonical name so structural drift is caught immediately.
    let mut params = ModelParams::init(&cfg, 0);
    {
        let mut slots = params.tensors_mut();
        if slots.len() != tensor_count {
            return Err(Error::Format(format!(
                "checkpoint holds {tensor_count} tensors but the config implies {}",
                slots.len()
            )));
        }
        for (name, tensor) in slots.iter_mut() {
            let name_len = r.u16("tensor name length")? as usize;
            let raw_name = r.take(name_len, "tensor name")?;
            let got = std::str::from_utf8(raw_name)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            if got != name {
                return Err(Error::Format(format!(
                    "tensor order mismatch: expected `{name}`, found `{got}`"
                )));
            }
            let rows = r.u32("tensor rows")? as usize;
            let cols = r.u32("tensor cols")? as usize;
            if rows != tensor.rows || cols != tensor.cols {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {rows}x{cols}, config implies {}x{}",
                    tensor.rows, tensor.cols
                )));
            }
            tensor.values = r.f64_vec(rows * cols, &format!("values of `{name}`"))?;
        }
    }
    r.expect_eof()?;
    Ok((cfg, params))
}

pub fn write_checkpoint(path: &Path, cfg: &ModelConfig, params: &ModelParams<RawTensor>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cfg, params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams<RawTensor>)> {
    decode_checkpoint(&std::fs::read(path)?)
}

// ── ReportFile (UTF-8 text) ──────────────────────────────────────────

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "n/a".to_string(),
    }
}

pub fn encode_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(REPORT_MAGIC);
    out.push('\n');
    out.push_str(&format!("classes {}\n", report.n_classes()));
    out.push_str(&format!("trials {}\n", report.total_trials()));
    out.push_str(&format!("overall_accuracy {:.2}\n", report.overall_accuracy));
    out.push_str(&format!("folds {}\n", report.fold_accuracies.len()));
    let folds: Vec<String> = report
        .fold_accuracies
        .iter()
        .map(|a| format!("{a:.2}"))
        .collect();
    out.push_str(&format!("fold_accuracies {}\n", folds.join(" ")));
    out.push_str("confusion\n");
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    for (k, m) in report.per_class.iter().enumerate() {
        out.push_str(&format!(
            "class {k} accuracy {} precision {} recall {} specificity {} f_score {}\n",
            fmt_opt(m.accuracy),
            fmt_opt(m.precision),
            fmt_opt(m.recall),
            fmt_opt(m.specificity),
            fmt_opt(m.f_score),
        ));
    }
    out.push_str("end\n");
    out
}

fn parse_opt(tok: &str, what: &str) -> Result<Option<f64>> {
    if tok == "n/a" {
        return Ok(None);
    }
    tok.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Format(format!("bad number `{tok}` in {what}")))
}

pub fn decode_report(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != REPORT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic: expected `{REPORT_MAGIC}`, found `{magic}`"
        )));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing `{name}` line")))?;
        line.strip_prefix(name)
            .map(|rest| rest.trim().to_string())
            .ok_or_else(|| Error::Format(format!("expected `{name}` line, found `{line}`")))
    };
    let classes: usize = field("classes")?
        .parse()
        .map_err(|_| Error::Format("bad class count".into()))?;
    let trials: u64 = field("trials")?
        .parse()
        .map_err(|_| Error::Format("bad trial count".into()))?;
    let overall: f64 = field("overall_accuracy")?
        .parse()
        .map_err(|_| Error::Format("bad overall accuracy".into()))?;
    let fold_count: usize = field("folds")?
        .parse()
        .map_err(|_| Error::Format("bad fold count".into()))?;
    let folds_line = field("fold_accuracies")?;
    let fold_accuracies: Vec<f64> = if folds_line.is_empty() {
        Vec::new()
    } else {
        folds_line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad fold accuracy `{t}`")))
            })
            .collect::<Result<_>>()?
    };
    if fold_accuracies.len() != fold_count {
        return Err(Error::Format(format!(
            "declared {fold_count} folds but found {}",
            fold_accuracies.len()
        )));
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("missing confusion block".into()))?;
    if header != "confusion" {
        return Err(Error::Format(format!(
            "expected `confusion`, found `{header}`"
        )));
    }
    let mut confusion = Vec::with_capacity(classes);
    for i in 0..classes {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing confusion row {i}")))?;
        let row: Vec<u64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u64>()
                    .map_err(|_| Error::Format(format!("bad confusion count `{t}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() != classes {
            return Err(Error::Format(format!(
                "confusion row {i} has {} entries, expected {classes}",
                row.len()
            )));
        }
        confusion.push(row);
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total != trials {
        return Err(Error::Format(format!(
            "confusion entries sum to {total}, header declares {trials} trials"
        )));
    }
    let mut per_class = Vec::with_capacity(classes);
    for k in 0..classes {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("missing class {k} metrics line")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 12 || toks[0] != "class" || toks[1] != k.to_string() {
            return Err(Error::Format(format!("malformed class metrics line `{line}`")));
        }
        let grab = |key_idx: usize, key: &str| -> Result<Option<f64>> {
            if toks[key_idx] != key {
                return Err(Error::Format(format!(
                    "expected `{key}` in class metrics, found `{}`",
                    toks[key_idx]
                )));
            }
            parse_opt(toks[key_idx + 1], key)
        };
        per_class.push(ClassMetrics {
            accuracy: grab(2, "accuracy")?,
            precision: grab(4, "precision")?,
            recall: grab(6, "recall")?,
            specificity: grab(8, "specificity")?,
            f_score: grab(10, "f_score")?,
        });
    }
    match lines.next() {
        Some("end") => {}
        other => {
            return Err(Error::Format(format!(
                "expected `end`, found `{}`",
                other.unwrap_or("<eof>")
            )))
        }
    }
    if lines.next().is_some() {
        return Err(Error::Format("trailing content after `end`".into()));
    }
    Ok(EvalReport {
        confusion,
        per_class,
        overall_accuracy: overall,
        fold_accuracies,
    })
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    std::fs::write(path, encode_report(report))?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    decode_report(&text)
}

// ── StatsFile (per-channel standardization statistics) ───────────────

pub fn encode_stats(stats: &StandardizationStats) -> String {
    let mut out = String::new();
    out.push_str(STATS_MAGIC);
    out.push('\n');
    out.push_str(&format!("source {}\n", stats.source));
    out.push_str(&format!("channels {}\n", stats.mean.len()));
    let fmt = |vs: &[f64]| {
        vs.iter()
            .map(|v| format!("{v:.17e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    out.push_str(&format!("mean {}\n", fmt(&stats.mean)));
    out.push_str(&format!("variance {}\n", fmt(&stats.variance)));
    out
}

pub fn decode_stats(text: &str) -> Result<StandardizationStats> {
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != STATS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic: expected `{STATS_MAGIC}`, found `{magic}`"
        )));
    }
    let source = lines
        .next()
        .and_then(|l| l.strip_prefix("source "))
        .ok_or_else(|| Error::Format("missing `source` line".into()))?
        .to_string();
    let channels: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("channels "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format("missing `channels` line".into()))?;
    let parse_line = |line: Option<&str>, key: &str| -> Result<Vec<f64>> {
        let body = line
            .and_then(|l| l.strip_prefix(key))
            .ok_or_else(|| Error::Format(format!("missing `{}` line", key.trim())))?;
        let vs: Vec<f64> = body
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad value `{t}`")))
            })
            .collect::<Result<_>>()?;
        if vs.len() != channels {
            return Err(Error::Format(format!(
                "{} values on `{}` line, expected {channels}",
                vs.len(),
                key.trim()
            )));
        }
        Ok(vs)
    };
    let mean = parse_line(lines.next(), "mean ")?;
    let variance = parse_line(lines.next(), "variance ")?;
    Ok(StandardizationStats {
        mean,
        variance,
        source,
    })
}

pub fn write_stats(path: &Path, stats: &StandardizationStats) -> Result<()> {
    std::fs::write(path, encode_stats(stats))?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<StandardizationStats> {
    decode_stats(&std::fs::read_to_string(path)?)
}
