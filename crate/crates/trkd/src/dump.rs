//! Bit-exact teacher logit dumps and offline partition analysis.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"TKLD"          4 bytes
//! version u32 = 1         4 bytes
//! num_examples N u32      4 bytes
//! num_classes  C u32      4 bytes
//! logits f32 * N*C        row-major
//! labels u32 * N
//! ```
//!
//! Logits are stored as 32-bit floats (bulk data); all loss math recomputes
//! in 64-bit after loading.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition;
use crate::prob::{self, LogitVector};

pub const DUMP_MAGIC: [u8; 4] = *b"TKLD";
pub const DUMP_VERSION: u32 = 1;

/// Teacher logits and labels for a batch of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDump {
    num_classes: u32,
    logits: Vec<f32>,
    labels: Vec<u32>,
}

impl LogitDump {
    pub fn new(num_classes: u32, logits: Vec<f32>, labels: Vec<u32>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Validation(format!(
                "dump needs at least 2 classes, got {num_classes}"
            )));
        }
        let n = labels.len();
        if logits.len() != n * num_classes as usize {
            return Err(Error::Shape(format!(
                "{} logits do not factor as {} examples x {} classes",
                logits.len(),
                n,
                num_classes
            )));
        }
        if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite logit {bad}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { num_classes, logits, labels })
    }

    pub fn num_examples(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.num_classes as usize;
        &self.logits[i * c..(i + 1) * c]
    }
}

fn expected_len(n: u64, c: u64) -> u64 {
    16 + n * c * 4 + n * 4
}

pub fn write_dump(dump: &LogitDump, path: &Path) -> Result<()> {
    let n = dump.num_examples() as u32;
    let mut buf =
        Vec::with_capacity(expected_len(n as u64, dump.num_classes as u64) as usize);
    buf.extend_from_slice(&DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&n.to_le_bytes());
    buf.extend_from_slice(&dump.num_classes.to_le_bytes());
    for &v in &dump.logits {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &dump.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<LogitDump> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Truncated { expected: 16, found: bytes.len() as u64 });
    }
    if bytes[0..4] != DUMP_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:02x?}, expected \"TKLD\"",
            &bytes[0..4]
        )));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != DUMP_VERSION {
        return Err(Error::Version { found: version, expected: DUMP_VERSION });
    }
    let n = u32_at(8) as u64;
    let c = u32_at(12) as u64;
    let expected = expected_len(n, c);
    if bytes.len() as u64 != expected {
        return Err(Error::Truncated { expected, found: bytes.len() as u64 });
    }
    let mut off = 16;
    let mut logits = Vec::with_capacity((n * c) as usize);
    for _ in 0..n * c {
        logits.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    let mut labels = Vec::with_capacity(n as usize);
    for _ in 0..n {
        labels.push(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
        off += 4;
    }
    LogitDump::new(c as u32, logits, labels)
}

/// Partition statistics for one cutoff value over a whole dump.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionSummary {
    pub tau: f64,
    pub mean_confusion_size: f64,
    pub median_confusion_size: f64,
    pub max_confusion_size: usize,
    pub mean_teacher_mass_target: f64,
    pub mean_teacher_mass_confusion: f64,
    pub mean_teacher_mass_background: f64,
}

/// Partition every example of the dump at each cutoff in `tau_list`
/// (after temperature scaling) and summarize confusion-set sizes and
/// aggregated masses.
pub fn analyze_partitions(
    dump: &LogitDump,
    tau_list: &[f64],
    temperature: f64,
) -> Result<Vec<PartitionSummary>> {
    if tau_list.is_empty() {
        return Err(Error::InvalidParameter {
            name: "tau_list",
            reason: "need at least one cutoff".into(),
        });
    }
    if dump.num_examples() == 0 {
        return Err(Error::Validation("empty dump".into()));
    }

    // Temperature-scaled posteriors are shared across cutoffs.
    let posteriors: Vec<_> = (0..dump.num_examples())
        .map(|i| {
            let row: Vec<f64> = dump.row(i).iter().map(|&v| v as f64).collect();
            let z = LogitVector::new(row)?;
            Ok(prob::softmax(&prob::temperature_scale(&z, temperature)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = dump.num_examples() as f64;
    let mut out = Vec::with_capacity(tau_list.len());
    for &tau in tau_list {
        let mut sizes = Vec::with_capacity(dump.num_examples());
        let mut sum_target = 0.0;
        let mut sum_confusion = 0.0;
        let mut sum_background = 0.0;
        for (i, posterior) in posteriors.iter().enumerate() {
            let part = partition::build_partition(posterior, dump.labels[i] as usize, tau)?;
            sizes.push(part.confusion_set().len());
            sum_target += part.teacher_mass_target();
            sum_confusion += part.teacher_mass_confusion();
            sum_background += part.teacher_mass_background();
        }
        sizes.sort_unstable();
        let median = if sizes.len() % 2 == 1 {
            sizes[sizes.len() / 2] as f64
        } else {
            (sizes[sizes.len() / 2 - 1] + sizes[sizes.len() / 2]) as f64 / 2.0
        };
        out.push(PartitionSummary {
            tau,
            mean_confusion_size: sizes.iter().sum::<usize>() as f64 / n,
            median_confusion_size: median,
            max_confusion_size: *sizes.last().expect("non-empty"),
            mean_teacher_mass_target: sum_target / n,
            mean_teacher_mass_confusion: sum_confusion / n,
            mean_teacher_mass_background: sum_background / n,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn file_size_is_forced_by_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tkld");
        let dump = LogitDump::new(2, vec![1.5, -2.0], vec![1]).unwrap();
        write_dump(&dump, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 8 + 4);
    }

    #[test]
    fn header_fixture_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tkld");
        let dump = LogitDump::new(2, vec![1.5, -2.0], vec![1]).unwrap();
        write_dump(&dump, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // magic | version | N | C, then 1.5f32, -2.0f32, label 1.
        let expected: [u8; 28] = [
            0x54, 0x4B, 0x4C, 0x44, // "TKLD"
            0x01, 0x00, 0x00, 0x00, // version 1
            0x01, 0x00, 0x00, 0x00, // N = 1
            0x02, 0x00, 0x00, 0x00, // C = 2
            0x00, 0x00, 0xC0, 0x3F, // 1.5f32
            0x00, 0x00, 0x00, 0xC0, // -2.0f32
            0x01, 0x00, 0x00, 0x00, // label 1
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_bitwise() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let n = 100usize;
        let c = 50u32;
        let logits: Vec<f32> = (0..n * c as usize).map(|_| rng.gen_range(-9.0..9.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let dump = LogitDump::new(c, logits, labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tkld");
        write_dump(&dump, &path).unwrap();
        let back = read_dump(&path).unwrap();
        assert_eq!(back, dump);
    }

    #[test]
    fn truncation_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tkld");
        let dump = LogitDump::new(2, vec![1.5, -2.0], vec![1]).unwrap();
        write_dump(&dump, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bad_magic_and_version_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tkld");
        let dump = LogitDump::new(2, vec![1.5, -2.0], vec![1]).unwrap();
        write_dump(&dump, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::Format(_))));

        write_dump(&dump, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dump(&path), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn label_out_of_range_detected() {
        assert!(matches!(
            LogitDump::new(2, vec![0.0, 0.0], vec![2]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn analyze_tau_one_covers_all_non_targets() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let c = 10u32;
        let n = 40usize;
        let logits: Vec<f32> = (0..n * c as usize).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let dump = LogitDump::new(c, logits, labels).unwrap();
        let summary = &analyze_partitions(&dump, &[1.0], 4.0).unwrap()[0];
        assert_eq!(summary.mean_confusion_size, (c - 1) as f64);
        assert_eq!(summary.mean_teacher_mass_background, 0.0);
    }

    #[test]
    fn analyze_near_one_hot_teacher() {
        // Target prob ~ 1: a single top non-target already covers any
        // cutoff at or below its own (raw) share of the residual mass.
        let logits = vec![8.0f32, 3.0, 0.0, 0.0];
        let dump = LogitDump::new(4, logits, vec![0]).unwrap();
        // Top non-target holds about 0.0067 of the total mass here.
        let summary = &analyze_partitions(&dump, &[0.005], 1.0).unwrap()[0];
        assert_eq!(summary.mean_confusion_size, 1.0);
    }

    #[test]
    fn analyze_uniform_posterior_prefix_count() {
        // Uniform posterior over 100 classes, tau = 0.5: 50 of the 99
        // non-targets are needed (closed-form ceil(tau / p_each)).
        let c = 100u32;
        let dump = LogitDump::new(c, vec![0.0f32; c as usize], vec![7]).unwrap();
        let summary = &analyze_partitions(&dump, &[0.5], 1.0).unwrap()[0];
        assert_eq!(summary.mean_confusion_size, 50.0);
    }

    #[test]
    fn analyze_mean_confusion_size_monotone_in_tau() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let c = 20u32;
        let n = 25usize;
        let logits: Vec<f32> = (0..n * c as usize).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let dump = LogitDump::new(c, logits, labels).unwrap();
        let taus = [0.05, 0.2, 0.5, 0.8, 1.0];
        let summaries = analyze_partitions(&dump, &taus, 4.0).unwrap();
        for pair in summaries.windows(2) {
            assert!(pair[0].mean_confusion_size <= pair[1].mean_confusion_size);
        }
    }
}
