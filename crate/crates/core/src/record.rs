//! Versioned export records.
//!
//! Two encodings carry the same content:
//!
//! * **NDJSON**: one header object on the first line, then one sample object
//!   per line. Every line ends in `\n`.
//! * **Binary**: the 8-byte magic `TSCMREC\x01`, then frames of
//!   `u32 LE payload length | u32 LE CRC-32 of payload | payload`, where the
//!   payload is the bincode encoding of the header (first frame) or a sample.
//!
//! Hidden variables are dropped from the observed columns and kept, with the
//! spec digest and regime path, in the optional `oracle` section. Records
//! carry timestamps only; the schedule kind that produced them is not
//! exported.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::InterventionSpec;
use crate::pipeline::{NormStat, SamplePair};

pub const FORMAT_VERSION: u32 = 1;
pub const BINARY_MAGIC: &[u8; 8] = b"TSCMREC\x01";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Ndjson,
    Binary,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Ndjson => "ndjson",
            Format::Binary => "bin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flags {
    pub diverged: bool,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub spec_digest: String,
    pub hidden_vars: Vec<usize>,
    /// Row-major `T × hidden_vars.len()`.
    pub hidden_observational: Vec<f64>,
    pub hidden_interventional: Vec<f64>,
    pub regime_path: Option<Vec<usize>>,
}

/// One exported counterfactual pair. Value matrices are row-major
/// `n_timesteps × observed_vars.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub batch_index: u64,
    pub item_index: u32,
    pub n_vars: usize,
    pub n_timesteps: usize,
    pub timestamps: Vec<f64>,
    /// Indices (in the full variable set) of the exported columns.
    pub observed_vars: Vec<usize>,
    /// Role name of each exported column.
    pub roles: Vec<String>,
    pub treatment: usize,
    pub outcome: usize,
    pub observational: Vec<f64>,
    pub interventional: Vec<f64>,
    pub intervention: InterventionSpec,
    pub onset_index: usize,
    /// Pre-window `(mean, std)` of each exported column.
    pub norm_stats: Vec<NormStat>,
    pub norm_clip: f64,
    pub flags: Flags,
    pub oracle: Option<Oracle>,
}

fn select_columns(values: &[f64], n: usize, cols: &[usize]) -> Vec<f64> {
    values
        .chunks_exact(n)
        .flat_map(|row| cols.iter().map(move |&c| row[c]))
        .collect()
}

impl SampleRecord {
    pub fn from_pair(pair: &SamplePair, include_oracle: bool) -> Self {
        let dag = &pair.spec.dag;
        let n = dag.n();
        let observed = dag.observed();
        let hidden: Vec<usize> = (0..n).filter(|&v| dag.is_hidden(v)).collect();
        let oracle = include_oracle.then(|| Oracle {
            spec_digest: pair.spec_digest.clone(),
            hidden_observational: select_columns(&pair.observational.values, n, &hidden),
            hidden_interventional: select_columns(&pair.interventional.values, n, &hidden),
            hidden_vars: hidden.clone(),
            regime_path: pair.observational.regimes.clone(),
        });
        SampleRecord {
            batch_index: pair.batch_index,
            item_index: pair.item_index,
            n_vars: n,
            n_timesteps: pair.observational.len(),
            timestamps: pair.observational.schedule.times().to_vec(),
            roles: observed.iter().map(|&v| dag.roles()[v].as_str().to_owned()).collect(),
            treatment: dag.treatment(),
            outcome: dag.outcome(),
            observational: select_columns(&pair.observational.values, n, &observed),
            interventional: select_columns(&pair.interventional.values, n, &observed),
            intervention: pair.intervention,
            onset_index: pair.onset_index,
            norm_stats: observed.iter().map(|&v| pair.norm_stats[v]).collect(),
            norm_clip: pair.norm_clip,
            flags: Flags {
                diverged: pair.diverged,
                saturated: pair.saturated,
            },
            oracle,
            observed_vars: observed,
        }
    }

    pub fn n_observed(&self) -> usize {
        self.observed_vars.len()
    }
}

/// Streaming writer for either encoding.
pub struct RecordWriter<W: Write> {
    out: W,
    format: Format,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(mut out: W, format: Format, header: &Header) -> Result<Self> {
        match format {
            Format::Ndjson => {
                serde_json::to_writer(&mut out, header).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            Format::Binary => {
                out.write_all(BINARY_MAGIC)?;
                write_frame(&mut out, &bincode::serialize(header).expect("header encodes"))?;
            }
        }
        Ok(RecordWriter { out, format })
    }

    pub fn write(&mut self, rec: &SampleRecord) -> Result<()> {
        match self.format {
            Format::Ndjson => {
                serde_json::to_writer(&mut self.out, rec).map_err(std::io::Error::from)?;
                self.out.write_all(b"\n")?;
            }
            Format::Binary => {
                write_frame(&mut self.out, &bincode::serialize(rec).expect("record encodes"))?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

fn write_frame<W: Write>(out: &mut W, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| Error::contract("record exceeds 4 GiB"))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&crc32fast::hash(payload).to_le_bytes())?;
    out.write_all(payload)?;
    Ok(())
}

/// Encode a header and records into one buffer.
pub fn encode(format: Format, header: &Header, records: &[SampleRecord]) -> Result<Vec<u8>> {
    let mut w = RecordWriter::new(Vec::new(), format, header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub format: Format,
    pub header: Header,
    pub records: Vec<SampleRecord>,
}

/// Parse and validate a complete dataset, detecting the encoding from the
/// leading bytes. The first malformed byte range is reported by offset.
pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.starts_with(BINARY_MAGIC) {
        decode_binary(bytes)
    } else {
        decode_ndjson(bytes)
    }
}

fn corrupt(offset: usize, message: impl Into<String>) -> Error {
    Error::Corrupt {
        offset: offset as u64,
        message: message.into(),
    }
}

fn decode_binary(bytes: &[u8]) -> Result<Dataset> {
    let mut pos = BINARY_MAGIC.len();
    let mut frames = Vec::new();
    while pos < bytes.len() {
        let start = pos;
        if bytes.len() - pos < 8 {
            return Err(corrupt(start, "truncated frame header"));
        }
        let len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap());
        pos += 8;
        if bytes.len() - pos < len {
            return Err(corrupt(start, format!("frame declares {len} bytes, {} remain", bytes.len() - pos)));
        }
        let payload = &bytes[pos..pos + len];
        if crc32fast::hash(payload) != crc {
            return Err(corrupt(start, "checksum mismatch"));
        }
        frames.push((start, payload));
        pos += len;
    }
    let mut frames = frames.into_iter();
    let (hstart, hpayload) = frames.next().ok_or_else(|| corrupt(pos, "missing header frame"))?;
    let header: Header = bincode::deserialize(hpayload).map_err(|e| corrupt(hstart, e.to_string()))?;
    check_version(&header, hstart)?;
    let records = frames
        .map(|(start, payload)| bincode::deserialize(payload).map_err(|e| corrupt(start, e.to_string())))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        format: Format::Binary,
        header,
        records,
    })
}

fn decode_ndjson(bytes: &[u8]) -> Result<Dataset> {
    let mut pos = 0;
    let mut lines = Vec::new();
    while pos < bytes.len() {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt(pos, "unterminated line"))?;
        lines.push((pos, &bytes[pos..pos + end]));
        pos += end + 1;
    }
    let mut lines = lines.into_iter();
    let (hstart, hline) = lines.next().ok_or_else(|| corrupt(0, "empty dataset"))?;
    let header: Header = serde_json::from_slice(hline).map_err(|e| corrupt(hstart, e.to_string()))?;
    check_version(&header, hstart)?;
    let records = lines
        .map(|(start, line)| serde_json::from_slice(line).map_err(|e| corrupt(start, e.to_string())))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        format: Format::Ndjson,
        header,
        records,
    })
}

fn check_version(header: &Header, offset: usize) -> Result<()> {
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(
            offset,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    Ok(())
}

/// Validate internal consistency of one record's shapes.
pub fn check_record(rec: &SampleRecord) -> std::result::Result<(), String> {
    let t = rec.n_timesteps;
    let k = rec.observed_vars.len();
    if rec.timestamps.len() != t {
        return Err("timestamp count differs from n_timesteps".into());
    }
    if rec.timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err("timestamps are not strictly increasing".into());
    }
    if rec.observational.len() != t * k || rec.interventional.len() != t * k {
        return Err("value matrix shape differs from n_timesteps × observed".into());
    }
    if rec.roles.len() != k || rec.norm_stats.len() != k {
        return Err("per-column metadata length differs from observed count".into());
    }
    if rec.onset_index < 2 || rec.onset_index > t {
        return Err("onset index leaves fewer than two pre-window observations".into());
    }
    if !rec.flags.diverged
        && rec.observational.iter().chain(&rec.interventional).any(|x| !x.is_finite())
    {
        return Err("non-finite values without the diverged flag".into());
    }
    if let Some(o) = &rec.oracle {
        if o.hidden_vars.len() + k != rec.n_vars {
            return Err("hidden and observed columns do not partition the variables".into());
        }
        if o.hidden_observational.len() != t * o.hidden_vars.len() {
            return Err("hidden value matrix has the wrong shape".into());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{sample_batch, BatchConfig};

    fn sample_records(hidden_prob: f64) -> Vec<SampleRecord> {
        let mut cfg = BatchConfig {
            seed: 3,
            batch_size: 6,
            ..BatchConfig::default()
        };
        cfg.graph.hidden_prob = hidden_prob;
        sample_batch(&cfg, 0)
            .unwrap()
            .iter()
            .map(|p| SampleRecord::from_pair(p, true))
            .collect()
    }

    fn header() -> Header {
        Header {
            format_version: FORMAT_VERSION,
            config_digest: "abc".into(),
            seed: 3,
        }
    }

    #[test]
    fn round_trip_both_formats() {
        let recs = sample_records(0.3);
        for format in [Format::Ndjson, Format::Binary] {
            let bytes = encode(format, &header(), &recs).unwrap();
            let ds = decode(&bytes).unwrap();
            assert_eq!(ds.format, format);
            assert_eq!(ds.header, header());
            assert_eq!(ds.records, recs);
            for r in &ds.records {
                check_record(r).unwrap();
            }
        }
    }

    #[test]
    fn hidden_columns_move_to_oracle() {
        let recs = sample_records(0.6);
        let rec = recs
            .iter()
            .find(|r| r.oracle.as_ref().is_some_and(|o| !o.hidden_vars.is_empty()))
            .expect("some record has hidden variables");
        let oracle = rec.oracle.as_ref().unwrap();
        for h in &oracle.hidden_vars {
            assert!(!rec.observed_vars.contains(h));
        }
        assert_eq!(rec.observed_vars.len() + oracle.hidden_vars.len(), rec.n_vars);
    }

    #[test]
    fn records_do_not_name_the_schedule_kind() {
        let recs = sample_records(0.0);
        let line = serde_json::to_string(&recs[0]).unwrap();
        assert!(line.contains("\"timestamps\""));
        for word in ["regular", "jittered", "poisson", "schedule"] {
            assert!(!line.contains(word), "record mentions {word}");
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let recs = sample_records(0.0);
        let bytes = encode(Format::Binary, &header(), &recs).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        match decode(cut) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset as usize >= BINARY_MAGIC.len()),
            other => panic!("{other:?}"),
        }
        let bytes = encode(Format::Ndjson, &header(), &recs).unwrap();
        let cut = &bytes[..bytes.len() - 10];
        let last_line = cut[..cut.len()].iter().rposition(|&b| b == b'\n').unwrap() + 1;
        match decode(cut) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset as usize, last_line),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flipped_byte_fails_checksum() {
        let recs = sample_records(0.0);
        let mut bytes = encode(Format::Binary, &header(), &recs).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(Error::Corrupt { .. })));
    }
}
