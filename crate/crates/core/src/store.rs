//! Enrolled identities and the shared matching models, with a checksummed
//! little-endian file format.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::euler::{estimate_covariance, CovarianceModel, EulerCode, Matrix4};
use crate::fusion::{decide, Algorithm, Decision, FusionPolicy, NormalizedScore, ScoreRange};
use crate::gasel::{Chromosome, FeaturePool, GaSelection, RawFeatureVector, RAW_FEATURES};
use crate::imaging::GrayImage;
use crate::pipeline::{process, Matcher, PipelineConfig, ProcessedSample, RawScores, ScoreRanges, Templates};
use crate::zerocross::{BitPlane, ZeroCrossTemplate};

pub const MAGIC: [u8; 4] = *b"IRF1";
pub const FORMAT_VERSION: u8 = 1;
pub const MAX_ID_BYTES: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentRecord {
    id: String,
    templates: Templates,
}

impl EnrollmentRecord {
    /// Feature values are rounded to `f32`, the precision they are stored at.
    pub fn new(id: &str, templates: Templates) -> Result<Self> {
        check_id(id)?;
        if templates.features.len() != RAW_FEATURES {
            return Err(Error::DimensionMismatch(format!(
                "stored feature vectors have {RAW_FEATURES} entries, got {}",
                templates.features.len()
            )));
        }
        let values = templates.features.values().iter().map(|&v| v as f32 as f64).collect();
        let features = RawFeatureVector::new(values, templates.features.valid().to_vec())?;
        Ok(Self {
            id: id.to_owned(),
            templates: Templates { features, ..templates },
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.len() > MAX_ID_BYTES {
        return Err(Error::InvalidArgument(format!(
            "identity id must be 1..={MAX_ID_BYTES} bytes, got {}",
            id.len()
        )));
    }
    Ok(())
}

/// Outcome of one verification.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub decision: Decision,
    pub raw: RawScores,
    pub normalized: [NormalizedScore; 3],
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    records: BTreeMap<String, EnrollmentRecord>,
    covariance: CovarianceModel,
    selection: GaSelection,
    ranges: ScoreRanges,
}

impl Default for Gallery {
    fn default() -> Self {
        Self::new()
    }
}

impl Gallery {
    /// Empty gallery: identity covariance, every raw feature selected,
    /// default score ranges.
    pub fn new() -> Self {
        Self {
            records: BTreeMap::new(),
            covariance: CovarianceModel::identity(),
            selection: GaSelection::all(RAW_FEATURES),
            ranges: ScoreRanges::default_ranges(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in id order.
    pub fn records(&self) -> impl Iterator<Item = &EnrollmentRecord> {
        self.records.values()
    }

    pub fn get(&self, id: &str) -> Option<&EnrollmentRecord> {
        self.records.get(id)
    }

    pub fn covariance(&self) -> &CovarianceModel {
        &self.covariance
    }

    pub fn selection(&self) -> &GaSelection {
        &self.selection
    }

    pub fn ranges(&self) -> &ScoreRanges {
        &self.ranges
    }

    pub fn matcher(&self, max_shift: usize) -> Matcher {
        Matcher {
            covariance: self.covariance,
            selection: self.selection.clone(),
            max_shift,
        }
    }

    /// Replaces the feature selection and refreshes the score ranges.
    pub fn set_selection(&mut self, selection: GaSelection, max_shift: usize) -> Result<()> {
        check_selection(&selection)?;
        self.selection = selection;
        self.refresh(max_shift)
    }

    /// Runs the pipeline on every sample and enrolls the first one that
    /// processes, with the mean feature vector of all that do.
    pub fn enroll(&mut self, id: &str, samples: &[GrayImage], cfg: &PipelineConfig) -> Result<&EnrollmentRecord> {
        check_id(id)?;
        if self.records.contains_key(id) {
            return Err(Error::DuplicateIdentity(id.to_owned()));
        }
        let processed: Vec<ProcessedSample> = samples.iter().filter_map(|img| process(img, cfg).ok()).collect();
        let first = processed.first().ok_or(Error::SegmentationFailureRate {
            failed: samples.len(),
            total: samples.len(),
        })?;
        let features: Vec<RawFeatureVector> = processed.iter().map(|p| p.templates.features.clone()).collect();
        let templates = Templates {
            features: RawFeatureVector::mean(&features)?,
            ..first.templates.clone()
        };
        self.enroll_templates(id, templates, cfg.max_shift)
    }

    /// Enrolls precomputed templates.
    pub fn enroll_templates(&mut self, id: &str, templates: Templates, max_shift: usize) -> Result<&EnrollmentRecord> {
        if self.records.contains_key(id) {
            return Err(Error::DuplicateIdentity(id.to_owned()));
        }
        let record = EnrollmentRecord::new(id, templates)?;
        let before = self.clone();
        self.records.insert(id.to_owned(), record);
        if let Err(e) = self.refresh(max_shift) {
            *self = before;
            return Err(e);
        }
        Ok(&self.records[id])
    }

    /// Re-estimates the covariance over all enrolled codes and sets each
    /// score range to `[0, largest distance between enrolled records]`.
    fn refresh(&mut self, max_shift: usize) -> Result<()> {
        let codes: Vec<EulerCode> = self.records.values().map(|r| r.templates.euler).collect();
        self.covariance = if codes.len() >= 2 {
            estimate_covariance(&codes, None)?
        } else {
            CovarianceModel::identity()
        };
        let matcher = self.matcher(max_shift);
        let recs: Vec<&Templates> = self.records.values().map(|r| &r.templates).collect();
        let mut hi = [0.0f64; 3];
        for (i, a) in recs.iter().enumerate() {
            for b in &recs[i + 1..] {
                let d = matcher.compare_templates(a, b)?;
                for (h, v) in hi.iter_mut().zip(d.0) {
                    *h = h.max(v);
                }
            }
        }
        let defaults = ScoreRanges::default_ranges();
        self.ranges = ScoreRanges(Algorithm::ALL.map(|alg| {
            let k = alg.id() as usize;
            ScoreRange::new(alg, 0.0, hi[k]).unwrap_or(defaults.0[k])
        }));
        Ok(())
    }

    pub fn verify(
        &self,
        id: &str,
        probe: &GrayImage,
        policy: &FusionPolicy,
        cfg: &PipelineConfig,
    ) -> Result<Verification> {
        if !self.records.contains_key(id) {
            return Err(Error::UnknownIdentity(id.to_owned()));
        }
        let sample = process(probe, cfg)?;
        self.verify_sample(id, &sample, policy, cfg.max_shift)
    }

    /// Verification of an already processed probe.
    pub fn verify_sample(
        &self,
        id: &str,
        probe: &ProcessedSample,
        policy: &FusionPolicy,
        max_shift: usize,
    ) -> Result<Verification> {
        let record = self.records.get(id).ok_or_else(|| Error::UnknownIdentity(id.to_owned()))?;
        let raw = self.matcher(max_shift).compare(&record.templates, probe)?;
        let normalized = self.ranges.normalize(&raw)?;
        let fused = crate::fusion::fuse(&normalized, &policy.rule)?;
        Ok(Verification {
            decision: decide(fused, policy.threshold),
            raw,
            normalized,
            fused,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for row in self.covariance.matrix() {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.covariance.epsilon().to_le_bytes());

        let pool = self.selection.pool.indices();
        out.extend_from_slice(&(pool.len() as u16).to_le_bytes());
        for &f in pool {
            out.extend_from_slice(&(f as u16).to_le_bytes());
        }
        out.extend_from_slice(&self.selection.chromosome.to_bytes());

        for r in &self.ranges.0 {
            out.push(r.algorithm.id());
            out.extend_from_slice(&r.min.to_le_bytes());
            out.extend_from_slice(&r.max.to_le_bytes());
        }

        for rec in self.records.values() {
            out.push(rec.id.len() as u8);
            out.extend_from_slice(rec.id.as_bytes());
            let zc = &rec.templates.zerocross;
            out.push(zc.scale_count() as u8);
            for p in zc.planes() {
                out.extend_from_slice(&p.to_bytes());
            }
            out.extend_from_slice(&zc.mask().to_bytes());
            for e in rec.templates.euler.0 {
                out.extend_from_slice(&e.to_le_bytes());
            }
            let fv = &rec.templates.features;
            for &v in fv.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out.extend_from_slice(&Chromosome::new(fv.valid().to_vec()).to_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < 5 {
            return Err(Error::Truncated("missing version".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        if bytes.len() < 9 + 4 {
            return Err(Error::Truncated(format!("{} bytes", bytes.len())));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let mut r = Reader { buf: payload, pos: 5 };
        let count = r.u32()? as usize;
        let mut s: Matrix4 = [[0.0; 4]; 4];
        for row in s.iter_mut() {
            for v in row.iter_mut() {
                *v = r.f64()?;
            }
        }
        let covariance = CovarianceModel::new(s, r.f64()?)?;

        let pool_len = r.u16()? as usize;
        let indices = (0..pool_len).map(|_| r.u16().map(usize::from)).collect::<Result<Vec<_>>>()?;
        let pool = FeaturePool::from_indices(indices)?;
        let chromosome = Chromosome::from_bytes(r.take(pool_len.div_ceil(8))?, pool_len)?;
        let selection = GaSelection { pool, chromosome };
        check_selection(&selection)?;

        let mut ranges = ScoreRanges::default_ranges();
        for (slot, alg) in ranges.0.iter_mut().zip(Algorithm::ALL) {
            let id = r.u8()?;
            if id != alg.id() {
                return Err(Error::GalleryFormat(format!("score range for algorithm {id} out of order")));
            }
            *slot = ScoreRange::new(alg, r.f64()?, r.f64()?)?;
        }

        let mut records = BTreeMap::new();
        for _ in 0..count {
            let len = r.u8()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::GalleryFormat("identity id is not UTF-8".into()))?
                .to_owned();
            let scales = r.u8()? as usize;
            let planes = (0..scales)
                .map(|_| BitPlane::from_bytes(r.take(BitPlane::BYTE_LEN)?))
                .collect::<Result<Vec<_>>>()?;
            let zerocross = ZeroCrossTemplate::new(planes, BitPlane::from_bytes(r.take(BitPlane::BYTE_LEN)?)?)?;
            let mut euler = EulerCode::default();
            for e in euler.0.iter_mut() {
                *e = r.i32()?;
            }
            let values = (0..RAW_FEATURES).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            let valid = Chromosome::from_bytes(r.take(RAW_FEATURES.div_ceil(8))?, RAW_FEATURES)?;
            let features = RawFeatureVector::new(values, valid.genes().to_vec())?;
            let rec = EnrollmentRecord::new(&id, Templates { zerocross, euler, features })?;
            if records.insert(id.clone(), rec).is_some() {
                return Err(Error::DuplicateIdentity(id));
            }
        }
        if r.pos != payload.len() {
            return Err(Error::GalleryFormat(format!(
                "{} unexpected bytes after the last record",
                payload.len() - r.pos
            )));
        }
        Ok(Self { records, covariance, selection, ranges })
    }

    /// Writes to a temporary sibling and renames it over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes();
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let name = path
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
        let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
        let written = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        })();
        if written.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        Ok(written?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn check_selection(sel: &GaSelection) -> Result<()> {
    if sel.chromosome.len() != sel.pool.len() {
        return Err(Error::DimensionMismatch(format!(
            "chromosome has {} genes for a pool of {}",
            sel.chromosome.len(),
            sel.pool.len()
        )));
    }
    if sel.pool.is_empty() || sel.pool.indices().iter().any(|&f| f >= RAW_FEATURES) {
        return Err(Error::InvalidArgument(format!(
            "pool must be a non-empty subset of 0..{RAW_FEATURES}"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!("wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn i32(&mut self) -> Result<i32> {
        self.array().map(i32::from_le_bytes)
    }

    fn f32(&mut self) -> Result<f32> {
        self.array().map(f32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::build_corpus;
    use crate::pipeline::process_segmented;
    use crate::zerocross::DEFAULT_MAX_SHIFT;

    fn gallery(ids: usize) -> (Gallery, Vec<ProcessedSample>) {
        let corpus = build_corpus(ids, 2, 5).unwrap();
        let cfg = PipelineConfig::default();
        let samples: Vec<ProcessedSample> = corpus
            .entries
            .iter()
            .map(|e| {
                let (img, truth) = e.render().unwrap();
                process_segmented(&img, truth, &cfg).unwrap()
            })
            .collect();
        let mut g = Gallery::new();
        for (i, s) in samples.iter().step_by(2).enumerate() {
            g.enroll_templates(&format!("id{i}"), s.templates.clone(), DEFAULT_MAX_SHIFT).unwrap();
        }
        (g, samples)
    }

    #[test]
    fn round_trip_is_canonical() {
        let (g, _) = gallery(3);
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"IRF1");
        let back = Gallery::from_bytes(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(Gallery::from_bytes(&Gallery::new().to_bytes()).unwrap(), Gallery::new());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let (g, _) = gallery(2);
        let bytes = g.to_bytes();

        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Gallery::from_bytes(&bad), Err(Error::BadMagic(m)) if &m == b"XXXX"));

        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Gallery::from_bytes(&bad), Err(Error::UnsupportedVersion(2))));

        for pos in [9, 200, bytes.len() / 2, bytes.len() - 5] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x10;
            assert!(matches!(Gallery::from_bytes(&bad), Err(Error::ChecksumMismatch { .. })));
        }

        assert!(matches!(Gallery::from_bytes(&bytes[..3]), Err(Error::Truncated(_))));
        // a shorter payload with a valid checksum still fails to parse
        let mut short = bytes[..bytes.len() - 100].to_vec();
        let crc = crc32fast::hash(&short);
        short.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(Gallery::from_bytes(&short), Err(Error::Truncated(_))));
    }

    #[test]
    fn duplicate_enrollment_leaves_gallery_unchanged() {
        let (mut g, samples) = gallery(2);
        let before = g.clone();
        let err = g.enroll_templates("id0", samples[1].templates.clone(), DEFAULT_MAX_SHIFT);
        assert!(matches!(err, Err(Error::DuplicateIdentity(_))));
        assert_eq!(g, before);
        let long = "x".repeat(MAX_ID_BYTES + 1);
        assert!(g.enroll_templates(&long, samples[1].templates.clone(), DEFAULT_MAX_SHIFT).is_err());
        assert_eq!(g, before);
    }

    #[test]
    fn covariance_follows_enrollment() {
        let (_, samples) = gallery(2);
        let mut g = Gallery::new();
        g.enroll_templates("a", samples[0].templates.clone(), DEFAULT_MAX_SHIFT).unwrap();
        assert_eq!(g.covariance(), &CovarianceModel::identity());
        assert_eq!(g.ranges(), &ScoreRanges::default_ranges());
        g.enroll_templates("b", samples[2].templates.clone(), DEFAULT_MAX_SHIFT).unwrap();
        let codes = [samples[0].templates.euler, samples[2].templates.euler];
        assert_eq!(g.covariance(), &estimate_covariance(&codes, None).unwrap());
        for r in &g.ranges().0 {
            assert_eq!(r.min, 0.0);
        }
    }

    #[test]
    fn verify_reads_only() {
        let (g, samples) = gallery(3);
        let before = g.to_bytes();
        let policy = FusionPolicy::default();
        let v = g.verify_sample("id1", &samples[3], &policy, DEFAULT_MAX_SHIFT).unwrap();
        assert!((0.0..=1.0).contains(&v.fused));
        assert_eq!(v.decision, decide(v.fused, policy.threshold));
        assert!(matches!(
            g.verify_sample("nobody", &samples[3], &policy, DEFAULT_MAX_SHIFT),
            Err(Error::UnknownIdentity(_))
        ));
        assert_eq!(g.to_bytes(), before);
    }

    #[test]
    fn save_and_load_file() {
        let (g, _) = gallery(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gallery.irf");
        g.save(&path).unwrap();
        assert_eq!(Gallery::load(&path).unwrap(), g);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
