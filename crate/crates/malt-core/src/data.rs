//! Synthetic multi-scale streaming benchmark.
//!
//! Streams alternate background gaps with action instances. Every action is a
//! motif of `S >= 2` fine segments, each segment a run of frames around one
//! base vector. Classes are grouped: each group of up to `S` classes shares
//! one base-vector SET and the classes are its cyclic rotations, so within a
//! group the segment multiset is identical and only the segment ORDER
//! identifies the class. A frame-level (bag) model cannot separate a group's
//! classes deep into an instance; an order-aware model can.
//!
//! Generation is fully deterministic given the spec seed: base vectors are
//! drawn once per spec, then stream content consumes the same generator
//! sequentially.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MaltError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const STREAM_MAGIC: &[u8; 4] = b"MSTR";
const STREAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    /// Action classes (labels 1..=classes; 0 is background).
    pub classes: usize,
    pub d_in: usize,
    /// Segments per action instance (the coarse motif length).
    pub segments_per_action: usize,
    /// Frames per fine segment, inclusive range.
    pub segment_len: (usize, usize),
    /// Background frames between instances, inclusive range.
    pub gap_len: (usize, usize),
    /// Per-frame Gaussian noise sigma.
    pub sigma: f64,
    /// Frames per stream.
    pub stream_len: usize,
    pub seed: u64,
}

impl StreamSpec {
    pub fn desk_default() -> Self {
        StreamSpec {
            classes: 6,
            d_in: 32,
            segments_per_action: 3,
            segment_len: (6, 12),
            gap_len: (8, 24),
            sigma: 0.3,
            stream_len: 2048,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MaltError::Config(m));
        if self.classes < 1 {
            return fail("stream spec: classes must be >= 1".into());
        }
        if self.d_in < 1 {
            return fail("stream spec: d_in must be >= 1".into());
        }
        if self.segments_per_action < 2 {
            return fail(format!(
                "stream spec: actions need >= 2 segments, got {}",
                self.segments_per_action
            ));
        }
        if self.segment_len.0 < 1 || self.segment_len.0 > self.segment_len.1 {
            return fail(format!("stream spec: bad segment length range {:?}", self.segment_len));
        }
        if self.gap_len.0 > self.gap_len.1 {
            return fail(format!("stream spec: bad gap length range {:?}", self.gap_len));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return fail(format!("stream spec: bad sigma {}", self.sigma));
        }
        let min_instance = self.gap_len.0 + self.segments_per_action * self.segment_len.0;
        if self.stream_len < min_instance {
            return fail(format!(
                "stream spec: stream length {} cannot fit one instance (needs >= {min_instance})",
                self.stream_len
            ));
        }
        Ok(())
    }

    fn n_groups(&self) -> usize {
        self.classes.div_ceil(self.segments_per_action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    /// `T x d_in` features.
    pub features: Tensor,
    /// Per-frame labels in 0..=classes.
    pub labels: Vec<u16>,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The base-vector pool and per-class motifs; deterministic per spec.
#[derive(Debug, Clone)]
pub struct MotifBank {
    /// One unit vector per (group, segment slot) plus a dedicated background
    /// vector at the end.
    pub base_vectors: Vec<Vec<f64>>,
    /// Per class (index 0 = class label 1): the ordered base-vector ids.
    pub motifs: Vec<Vec<usize>>,
    pub background: usize,
}

impl MotifBank {
    /// Classes within one group use the same base-vector set as cyclic
    /// rotations of each other, so only segment order separates them.
    pub fn build(spec: &StreamSpec, rng: &mut Rng) -> Self {
        let s = spec.segments_per_action;
        let n_groups = spec.n_groups();
        let mut base_vectors = Vec::with_capacity(n_groups * s + 1);
        for _ in 0..n_groups * s + 1 {
            let mut v: Vec<f64> = (0..spec.d_in).map(|_| rng.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for x in &mut v {
                *x /= norm;
            }
            base_vectors.push(v);
        }
        let background = n_groups * s;
        let mut motifs = Vec::with_capacity(spec.classes);
        for c in 0..spec.classes {
            let group = c / s;
            let rotation = c % s;
            let motif: Vec<usize> = (0..s).map(|p| group * s + (p + rotation) % s).collect();
            motifs.push(motif);
        }
        MotifBank {
            base_vectors,
            motifs,
            background,
        }
    }
}

/// Generate `count` streams. Base vectors are drawn once from the spec seed;
/// each stream then forks its own generator so the set is order-stable.
pub fn generate_dataset(spec: &StreamSpec, count: usize) -> Result<Vec<LabeledStream>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let bank = MotifBank::build(spec, &mut rng);
    (0..count)
        .map(|_| {
            let mut stream_rng = rng.fork();
            generate_with_bank(spec, &bank, &mut stream_rng)
        })
        .collect()
}

/// Single-stream convenience over [`generate_dataset`].
pub fn generate_stream(spec: &StreamSpec) -> Result<LabeledStream> {
    Ok(generate_dataset(spec, 1)?.pop().expect("one stream"))
}

fn generate_with_bank(spec: &StreamSpec, bank: &MotifBank, rng: &mut Rng) -> Result<LabeledStream> {
    let t_total = spec.stream_len;
    let d = spec.d_in;
    let mut features = Vec::with_capacity(t_total * d);
    let mut labels = Vec::with_capacity(t_total);

    let emit = |base_id: usize, label: u16, frames: usize, rng: &mut Rng,
                    features: &mut Vec<f64>, labels: &mut Vec<u16>| {
        let base = &bank.base_vectors[base_id];
        for _ in 0..frames {
            for &b in base {
                features.push(b + spec.sigma * rng.normal());
            }
            labels.push(label);
        }
    };

    while labels.len() < t_total {
        let gap = rng.range_inclusive(spec.gap_len.0 as u64, spec.gap_len.1 as u64) as usize;
        let gap = gap.min(t_total - labels.len());
        emit(bank.background, 0, gap, rng, &mut features, &mut labels);
        if labels.len() >= t_total {
            break;
        }

        let class = rng.below(spec.classes as u64) as usize;
        let motif = &bank.motifs[class];
        for &segment in motif {
            let seg_len =
                rng.range_inclusive(spec.segment_len.0 as u64, spec.segment_len.1 as u64) as usize;
            let seg_len = seg_len.min(t_total - labels.len());
            emit(segment, (class + 1) as u16, seg_len, rng, &mut features, &mut labels);
            if labels.len() >= t_total {
                break;
            }
        }
    }

    Ok(LabeledStream {
        features: Tensor::new(vec![t_total, d], features)?,
        labels,
    })
}

/// Deterministic seeded split; no stream lands in both sets.
pub fn split_streams(
    streams: Vec<LabeledStream>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledStream>, Vec<LabeledStream>)> {
    if streams.len() < 2 {
        return Err(MaltError::Contract(format!(
            "split needs >= 2 streams, got {}",
            streams.len()
        )));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MaltError::Config(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = streams.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = Rng::new(seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    let mut indexed: Vec<(usize, LabeledStream)> = order.into_iter().zip(streams).collect();
    indexed.sort_by_key(|(i, _)| *i);
    let mut shuffled: Vec<LabeledStream> = indexed.into_iter().map(|(_, s)| s).collect();
    let eval = shuffled.split_off(n_train);
    Ok((shuffled, eval))
}

/// Binary stream layout, little-endian throughout:
/// magic "MSTR" | u32 version | u64 T | u32 d_in | u32 classes |
/// T*d_in f64 features row-major | T u16 labels.
pub fn write_stream(path: &Path, stream: &LabeledStream, classes: usize) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(STREAM_MAGIC);
    buf.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(stream.features.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&(classes as u32).to_le_bytes());
    for v in stream.features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &l in &stream.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_stream(path: &Path) -> Result<(LabeledStream, usize)> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(MaltError::Format(format!(
                "stream file truncated at byte {cursor}"
            )));
        }
        let slice = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };
    if take(4)? != STREAM_MAGIC {
        return Err(MaltError::Format("not a stream file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != STREAM_VERSION {
        return Err(MaltError::Format(format!(
            "unsupported stream version {version}"
        )));
    }
    let t = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let d_in = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let classes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut features = Vec::with_capacity(t * d_in);
    for _ in 0..t * d_in {
        features.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
    }
    let mut labels = Vec::with_capacity(t);
    for _ in 0..t {
        labels.push(u16::from_le_bytes(take(2)?.try_into().unwrap()));
    }
    if cursor != bytes.len() {
        return Err(MaltError::Format(format!(
            "stream file has {} trailing bytes",
            bytes.len() - cursor
        )));
    }
    Ok((
        LabeledStream {
            features: Tensor::new(vec![t, d_in], features)?,
            labels,
        },
        classes,
    ))
}

/// Dump `line`-writable metadata used by run manifests: a stable content hash
/// of a stream (FNV-1a over the raw bytes of features and labels).
pub fn stream_content_hash(stream: &LabeledStream) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |byte: u8| {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    };
    for v in stream.features.data() {
        for b in v.to_le_bytes() {
            mix(b);
        }
    }
    for l in &stream.labels {
        for b in l.to_le_bytes() {
            mix(b);
        }
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> StreamSpec {
        StreamSpec {
            classes: 6,
            d_in: 8,
            segments_per_action: 3,
            segment_len: (3, 5),
            gap_len: (2, 6),
            sigma: 0.0,
            stream_len: 256,
            seed: 11,
        }
    }

    #[test]
    fn noiseless_segments_repeat_one_vector() {
        let stream = generate_stream(&small_spec()).unwrap();
        // within a run of identical labels on an action, consecutive frames
        // either match exactly (same segment) or jump (segment boundary)
        let mut seen_repeat = false;
        for t in 1..stream.len() {
            if stream.labels[t] != 0 && stream.labels[t] == stream.labels[t - 1] {
                let same = stream.features.row(t) == stream.features.row(t - 1);
                seen_repeat |= same;
            }
        }
        assert!(seen_repeat, "expected identical frames inside fine segments");
    }

    #[test]
    fn same_seed_reproduces_streams_bitwise() {
        let a = generate_dataset(&small_spec(), 3).unwrap();
        let b = generate_dataset(&small_spec(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grouped_classes_share_segment_multisets_but_not_order() {
        let spec = small_spec();
        let mut rng = Rng::new(spec.seed);
        let bank = MotifBank::build(&spec, &mut rng);
        // classes 1..3 form group 0; their motifs are rotations of each other
        let mut set0 = bank.motifs[0].clone();
        let mut set1 = bank.motifs[1].clone();
        set0.sort_unstable();
        set1.sort_unstable();
        assert_eq!(set0, set1, "same segment multiset");
        assert_ne!(bank.motifs[0], bank.motifs[1], "different segment order");
        // distinct first segments inside the group, so an order-aware model
        // can commit from the first segment onward
        assert_ne!(bank.motifs[0][0], bank.motifs[1][0]);
        assert_ne!(bank.motifs[1][0], bank.motifs[2][0]);
    }

    #[test]
    fn label_runs_reconstruct_class_templates_at_zero_sigma() {
        let spec = small_spec();
        let mut rng = Rng::new(spec.seed);
        let bank = MotifBank::build(&spec, &mut rng);
        let stream = generate_stream(&spec).unwrap();

        let match_base = |frame: &[f64]| -> Option<usize> {
            bank.base_vectors.iter().position(|b| {
                frame.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
            })
        };

        // walk every completed action run and rebuild its segment order
        let mut t = 0;
        let mut checked = 0;
        while t < stream.len() {
            if stream.labels[t] == 0 {
                t += 1;
                continue;
            }
            let class = stream.labels[t] as usize - 1;
            let start = t;
            while t < stream.len() && stream.labels[t] == stream.labels[start] {
                t += 1;
            }
            if t == stream.len() {
                break; // possibly truncated final instance
            }
            let mut segments = Vec::new();
            for frame_idx in start..t {
                let base = match_base(stream.features.row(frame_idx)).expect("frame matches a base");
                if segments.last() != Some(&base) {
                    segments.push(base);
                }
            }
            if segments.len() == spec.segments_per_action {
                assert_eq!(segments, bank.motifs[class], "run at {start} (class {class})");
                checked += 1;
            }
        }
        assert!(checked > 3, "too few complete instances checked: {checked}");
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let streams = generate_dataset(&small_spec(), 10).unwrap();
        let (train_a, eval_a) = split_streams(streams.clone(), 0.5, 21).unwrap();
        let (train_b, eval_b) = split_streams(streams.clone(), 0.5, 21).unwrap();
        assert_eq!(train_a.len(), 5);
        assert_eq!(eval_a.len(), 5);
        assert_eq!(train_a, train_b);
        assert_eq!(eval_a, eval_b);
        for tr in &train_a {
            assert!(!eval_a.contains(tr), "stream in both splits");
        }
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let streams = generate_dataset(&small_spec(), 4).unwrap();
        assert!(split_streams(streams.clone(), 0.0, 1).is_err());
        assert!(split_streams(streams, 1.0, 1).is_err());
    }

    #[test]
    fn stream_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let spec = small_spec();
        let stream = generate_stream(&spec).unwrap();
        write_stream(&path, &stream, spec.classes).unwrap();
        let (loaded, classes) = read_stream(&path).unwrap();
        assert_eq!(loaded, stream);
        assert_eq!(classes, spec.classes);
    }

    #[test]
    fn stream_too_short_for_one_instance_is_rejected() {
        let mut spec = small_spec();
        spec.stream_len = 5;
        assert!(matches!(generate_stream(&spec), Err(MaltError::Config(_))));
    }
}
