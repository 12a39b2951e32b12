//! File formats: binary embeddings, the versioned checkpoint container, and
//! line-oriented text for scores, metric reports, and histograms.
//!
//! Binary layouts (all integers and floats little-endian; the full byte-level
//! description lives in `docs/FORMATS.md`):
//!
//! - Embedding file: magic `MMELEMB\0`, `u32` version, `u32` dim, `u64` row
//!   count, `u8` label flag, then per row `dim × f64` plus an optional `u32`
//!   label.
//! - Container: magic `MMELCNT\0`, `u32` version, `u32` section count, then
//!   tagged sections (`[u8; 4]` tag, `u64` payload length, payload). A
//!   checkpoint holds `NSPC` (network spec), `PARM` (parameter tensors),
//!   `PROT` (prototypes), `TCFG` (train config incl. seed), and optionally
//!   `NDX0` (reference index) and `ENRL` (enrollment). Readers skip unknown
//!   sections, so the format can grow without breaking old files.
//!
//! Every write is atomic: content goes to a temporary file in the target
//! directory and is renamed into place.

use crate::error::{Error, Result};
use crate::geometry::Curvature;
use crate::losses::PrototypeSet;
use crate::metrics::{Histogram, MetricReport};
use crate::network::{Activation, LrSchedule, NetworkSpec, NetworkState, TrainConfig};
use crate::scoring::{EnrollmentSet, ReferenceIndex};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const EMBEDDING_MAGIC: &[u8; 8] = b"MMELEMB\0";
const CONTAINER_MAGIC: &[u8; 8] = b"MMELCNT\0";
const FORMAT_VERSION: u32 = 1;

const SEC_NETWORK_SPEC: &[u8; 4] = b"NSPC";
const SEC_PARAMS: &[u8; 4] = b"PARM";
const SEC_PROTOTYPES: &[u8; 4] = b"PROT";
const SEC_TRAIN_CONFIG: &[u8; 4] = b"TCFG";
const SEC_INDEX: &[u8; 4] = b"NDX0";
const SEC_ENROLLMENT: &[u8; 4] = b"ENRL";

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Writes bytes atomically: temp file in the same directory, then rename.
fn atomic_write(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    {
        let mut buf = BufWriter::new(tmp.as_file_mut());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))
        .map(|_| ())
}

// ---------------------------------------------------------------------------
// Embedding files
// ---------------------------------------------------------------------------

/// Writes a feature matrix (optionally labeled) as a binary embedding file.
pub fn write_embeddings(
    path: &Path,
    features: ArrayView2<f64>,
    labels: Option<&[usize]>,
) -> Result<()> {
    if let Some(labels) = labels {
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows vs {} labels",
                features.nrows(),
                labels.len()
            )));
        }
    }
    atomic_write(path, |w| {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(features.ncols() as u32)?;
        w.write_u64::<LittleEndian>(features.nrows() as u64)?;
        w.write_u8(labels.is_some() as u8)?;
        for (i, row) in features.rows().into_iter().enumerate() {
            for &x in row.iter() {
                w.write_f64::<LittleEndian>(x)?;
            }
            if let Some(labels) = labels {
                w.write_u32::<LittleEndian>(labels[i] as u32)?;
            }
        }
        Ok(())
    })
}

/// Reads an embedding file back into a matrix and optional labels.
pub fn read_embeddings(path: &Path) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != EMBEDDING_MAGIC {
        return Err(format_err(path, "not an embedding file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let has_labels = r.read_u8()? != 0;
    if dim == 0 {
        return Err(format_err(path, "zero dimension"));
    }
    let mut features = Array2::zeros((rows, dim));
    let mut labels = has_labels.then(|| Vec::with_capacity(rows));
    for i in 0..rows {
        for j in 0..dim {
            features[[i, j]] = r.read_f64::<LittleEndian>()?;
        }
        if let Some(labels) = labels.as_mut() {
            labels.push(r.read_u32::<LittleEndian>()? as usize);
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(format_err(path, "trailing bytes after declared rows"));
    }
    Ok((features, labels))
}

// ---------------------------------------------------------------------------
// Container primitives
// ---------------------------------------------------------------------------

fn write_string(w: &mut Vec<u8>, s: &str) {
    w.write_u32::<LittleEndian>(s.len() as u32).expect("vec");
    w.extend_from_slice(s.as_bytes());
}

fn read_string(r: &mut impl Read, path: &Path) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 1 << 20 {
        return Err(format_err(path, "unreasonable string length"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| format_err(path, "invalid utf-8 string"))
}

fn write_matrix(w: &mut Vec<u8>, m: ArrayView2<f64>) {
    w.write_u32::<LittleEndian>(m.nrows() as u32).expect("vec");
    w.write_u32::<LittleEndian>(m.ncols() as u32).expect("vec");
    for row in m.rows() {
        for &x in row.iter() {
            w.write_f64::<LittleEndian>(x).expect("vec");
        }
    }
}

fn read_matrix(r: &mut impl Read, path: &Path) -> Result<Array2<f64>> {
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    if rows.saturating_mul(cols) > 1 << 28 {
        return Err(format_err(path, "unreasonable matrix size"));
    }
    let mut m = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = r.read_f64::<LittleEndian>()?;
        }
    }
    Ok(m)
}

struct Section {
    tag: [u8; 4],
    payload: Vec<u8>,
}

fn write_container(path: &Path, sections: &[Section]) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(CONTAINER_MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(sections.len() as u32)?;
        for s in sections {
            w.write_all(&s.tag)?;
            w.write_u64::<LittleEndian>(s.payload.len() as u64)?;
            w.write_all(&s.payload)?;
        }
        Ok(())
    })
}

fn read_container(path: &Path) -> Result<Vec<Section>> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CONTAINER_MAGIC {
        return Err(format_err(path, "not a container file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut sections = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tag = [0u8; 4];
        r.read_exact(&mut tag)?;
        let len = r.read_u64::<LittleEndian>()? as usize;
        if len > 1 << 32 {
            return Err(format_err(path, "unreasonable section length"));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        sections.push(Section { tag, payload });
    }
    Ok(sections)
}

fn find_section<'a>(sections: &'a [Section], tag: &[u8; 4]) -> Option<&'a Section> {
    sections.iter().find(|s| &s.tag == tag)
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Everything a trained model needs at inference time: the architecture,
/// parameters, prototypes, the training configuration (including its seed),
/// and optionally the scoring index and an enrollment set.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub tensors: Vec<(String, Array2<f64>)>,
    pub prototypes: PrototypeSet,
    pub train_config: TrainConfig,
    pub index: Option<ReferenceIndex>,
    pub enrollment: Option<EnrollmentSet>,
}

impl Checkpoint {
    pub fn from_state(
        state: &NetworkState,
        prototypes: PrototypeSet,
        train_config: TrainConfig,
        index: Option<ReferenceIndex>,
    ) -> Self {
        Checkpoint {
            spec: state.spec().clone(),
            tensors: state
                .tensors()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
            prototypes,
            train_config,
            index,
            enrollment: None,
        }
    }

    /// Rebuilds an inference-ready network state.
    pub fn state(&self) -> Result<NetworkState> {
        NetworkState::from_tensors(
            self.spec.clone(),
            self.tensors.clone(),
            self.train_config.seed,
        )
    }
}

fn encode_network_spec(spec: &NetworkSpec) -> Vec<u8> {
    let mut w = Vec::new();
    w.write_u32::<LittleEndian>(spec.input_dim as u32).unwrap();
    w.write_u32::<LittleEndian>(spec.hidden_dims.len() as u32)
        .unwrap();
    for &d in &spec.hidden_dims {
        w.write_u32::<LittleEndian>(d as u32).unwrap();
    }
    w.write_u32::<LittleEndian>(spec.latent_dim as u32).unwrap();
    w.write_u32::<LittleEndian>(spec.num_classes as u32).unwrap();
    w.write_f64::<LittleEndian>(spec.curvature.value()).unwrap();
    w.write_f64::<LittleEndian>(spec.clip_radius).unwrap();
    write_string(&mut w, spec.activation.name());
    w.write_u8(spec.use_biases as u8).unwrap();
    w.write_u32::<LittleEndian>(spec.frozen_dim as u32).unwrap();
    w
}

fn decode_network_spec(payload: &[u8], path: &Path) -> Result<NetworkSpec> {
    let mut r = payload;
    let input_dim = r.read_u32::<LittleEndian>()? as usize;
    let hidden_count = r.read_u32::<LittleEndian>()? as usize;
    if hidden_count > 1 << 10 {
        return Err(format_err(path, "unreasonable hidden layer count"));
    }
    let mut hidden_dims = Vec::with_capacity(hidden_count);
    for _ in 0..hidden_count {
        hidden_dims.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let latent_dim = r.read_u32::<LittleEndian>()? as usize;
    let num_classes = r.read_u32::<LittleEndian>()? as usize;
    let curvature = Curvature::new(r.read_f64::<LittleEndian>()?)?;
    let clip_radius = r.read_f64::<LittleEndian>()?;
    let activation = Activation::parse(&read_string(&mut r, path)?)?;
    let use_biases = r.read_u8()? != 0;
    let frozen_dim = r.read_u32::<LittleEndian>()? as usize;
    Ok(NetworkSpec {
        input_dim,
        hidden_dims,
        latent_dim,
        num_classes,
        curvature,
        clip_radius,
        activation,
        use_biases,
        frozen_dim,
    })
}

fn encode_train_config(config: &TrainConfig) -> Vec<u8> {
    let mut w = Vec::new();
    w.write_f64::<LittleEndian>(config.learning_rate).unwrap();
    w.write_f64::<LittleEndian>(config.momentum).unwrap();
    w.write_f64::<LittleEndian>(config.weight_decay).unwrap();
    w.write_u32::<LittleEndian>(config.batch_size as u32).unwrap();
    w.write_u32::<LittleEndian>(config.epochs as u32).unwrap();
    w.write_f64::<LittleEndian>(config.prototype_decay).unwrap();
    w.write_f64::<LittleEndian>(config.tau).unwrap();
    w.write_f64::<LittleEndian>(config.augment_noise).unwrap();
    write_string(&mut w, config.schedule.name());
    w.write_u64::<LittleEndian>(config.seed).unwrap();
    w
}

fn decode_train_config(payload: &[u8], path: &Path) -> Result<TrainConfig> {
    let mut r = payload;
    Ok(TrainConfig {
        learning_rate: r.read_f64::<LittleEndian>()?,
        momentum: r.read_f64::<LittleEndian>()?,
        weight_decay: r.read_f64::<LittleEndian>()?,
        batch_size: r.read_u32::<LittleEndian>()? as usize,
        epochs: r.read_u32::<LittleEndian>()? as usize,
        prototype_decay: r.read_f64::<LittleEndian>()?,
        tau: r.read_f64::<LittleEndian>()?,
        augment_noise: r.read_f64::<LittleEndian>()?,
        schedule: LrSchedule::parse(&read_string(&mut r, path)?)?,
        seed: r.read_u64::<LittleEndian>()?,
    })
}

fn encode_enrollment(enrollment: &EnrollmentSet) -> Vec<u8> {
    let mut w = Vec::new();
    match enrollment.ood_prototype() {
        Some(z_e) => {
            w.write_u8(1).unwrap();
            write_matrix(&mut w, z_e.insert_axis(ndarray::Axis(0)));
        }
        None => w.write_u8(0).unwrap(),
    }
    match enrollment.novel_prototypes() {
        Some(protos) => {
            w.write_u8(1).unwrap();
            write_matrix(&mut w, protos);
        }
        None => w.write_u8(0).unwrap(),
    }
    w
}

fn decode_enrollment(payload: &[u8], path: &Path) -> Result<EnrollmentSet> {
    let mut r = payload;
    let mut enrollment = EnrollmentSet::empty();
    if r.read_u8()? != 0 {
        let m = read_matrix(&mut r, path)?;
        if m.nrows() != 1 {
            return Err(format_err(path, "OOD prototype must be a single row"));
        }
        enrollment = enrollment.with_ood_prototype(m.row(0).to_owned())?;
    }
    if r.read_u8()? != 0 {
        enrollment = enrollment.with_novel_prototypes(read_matrix(&mut r, path)?)?;
    }
    Ok(enrollment)
}

/// Writes a checkpoint container.
pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut sections = vec![
        Section {
            tag: *SEC_NETWORK_SPEC,
            payload: encode_network_spec(&checkpoint.spec),
        },
        Section {
            tag: *SEC_PARAMS,
            payload: {
                let mut w = Vec::new();
                w.write_u32::<LittleEndian>(checkpoint.tensors.len() as u32)
                    .unwrap();
                for (name, tensor) in &checkpoint.tensors {
                    write_string(&mut w, name);
                    write_matrix(&mut w, tensor.view());
                }
                w
            },
        },
        Section {
            tag: *SEC_PROTOTYPES,
            payload: {
                let mut w = Vec::new();
                w.write_f64::<LittleEndian>(checkpoint.prototypes.tau())
                    .unwrap();
                write_matrix(&mut w, checkpoint.prototypes.prototypes());
                w
            },
        },
        Section {
            tag: *SEC_TRAIN_CONFIG,
            payload: encode_train_config(&checkpoint.train_config),
        },
    ];
    if let Some(index) = &checkpoint.index {
        let mut w = Vec::new();
        write_matrix(&mut w, index.embeddings());
        w.write_u32::<LittleEndian>(index.labels().len() as u32)
            .unwrap();
        for &l in index.labels() {
            w.write_u32::<LittleEndian>(l as u32).unwrap();
        }
        sections.push(Section {
            tag: *SEC_INDEX,
            payload: w,
        });
    }
    if let Some(enrollment) = &checkpoint.enrollment {
        sections.push(Section {
            tag: *SEC_ENROLLMENT,
            payload: encode_enrollment(enrollment),
        });
    }
    write_container(path, &sections)
}

/// Reads a checkpoint container; unknown sections are ignored.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let sections = read_container(path)?;
    let spec_section = find_section(&sections, SEC_NETWORK_SPEC)
        .ok_or_else(|| format_err(path, "missing network spec section"))?;
    let spec = decode_network_spec(&spec_section.payload, path)?;

    let params_section = find_section(&sections, SEC_PARAMS)
        .ok_or_else(|| format_err(path, "missing parameter section"))?;
    let mut r: &[u8] = &params_section.payload;
    let count = r.read_u32::<LittleEndian>()? as usize;
    if count > 1 << 16 {
        return Err(format_err(path, "unreasonable tensor count"));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_string(&mut r, path)?;
        let tensor = read_matrix(&mut r, path)?;
        tensors.push((name, tensor));
    }

    let proto_section = find_section(&sections, SEC_PROTOTYPES)
        .ok_or_else(|| format_err(path, "missing prototype section"))?;
    let mut r: &[u8] = &proto_section.payload;
    let tau = r.read_f64::<LittleEndian>()?;
    let prototypes = PrototypeSet::new(read_matrix(&mut r, path)?, tau)?;

    let config_section = find_section(&sections, SEC_TRAIN_CONFIG)
        .ok_or_else(|| format_err(path, "missing train config section"))?;
    let train_config = decode_train_config(&config_section.payload, path)?;

    let index = match find_section(&sections, SEC_INDEX) {
        Some(section) => {
            let mut r: &[u8] = &section.payload;
            let embeddings = read_matrix(&mut r, path)?;
            let label_count = r.read_u32::<LittleEndian>()? as usize;
            let mut labels = Vec::with_capacity(label_count);
            for _ in 0..label_count {
                labels.push(r.read_u32::<LittleEndian>()? as usize);
            }
            Some(ReferenceIndex::build(embeddings, labels)?)
        }
        None => None,
    };

    let enrollment = match find_section(&sections, SEC_ENROLLMENT) {
        Some(section) => Some(decode_enrollment(&section.payload, path)?),
        None => None,
    };

    Ok(Checkpoint {
        spec,
        tensors,
        prototypes,
        train_config,
        index,
        enrollment,
    })
}

/// Writes a standalone enrollment container.
pub fn write_enrollment(path: &Path, enrollment: &EnrollmentSet) -> Result<()> {
    write_container(
        path,
        &[Section {
            tag: *SEC_ENROLLMENT,
            payload: encode_enrollment(enrollment),
        }],
    )
}

/// Reads a standalone enrollment container.
pub fn read_enrollment(path: &Path) -> Result<EnrollmentSet> {
    let sections = read_container(path)?;
    let section = find_section(&sections, SEC_ENROLLMENT)
        .ok_or_else(|| format_err(path, "missing enrollment section"))?;
    decode_enrollment(&section.payload, path)
}

// ---------------------------------------------------------------------------
// Text formats: scores, metric reports, histograms
// ---------------------------------------------------------------------------

/// Provenance recorded in a score file header. Never contains paths, so
/// identical runs in different directories produce identical bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreHeader {
    pub scorer: String,
    pub k: usize,
    pub p: usize,
    pub enrolled_ood: bool,
    pub enrolled_novel_classes: usize,
}

/// Writes one score per line after a `#`-prefixed key=value header.
pub fn write_scores(path: &Path, header: &ScoreHeader, scores: &[f64]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "# mmel-scores v{FORMAT_VERSION}")?;
        writeln!(w, "# scorer={}", header.scorer)?;
        writeln!(w, "# k={}", header.k)?;
        writeln!(w, "# p={}", header.p)?;
        writeln!(w, "# enroll_ood={}", header.enrolled_ood as u8)?;
        writeln!(w, "# enroll_novel={}", header.enrolled_novel_classes)?;
        writeln!(w, "# count={}", scores.len())?;
        for s in scores {
            writeln!(w, "{s}")?;
        }
        Ok(())
    })
}

/// Reads a score file, validating the header and the row count.
pub fn read_scores(path: &Path) -> Result<(ScoreHeader, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut header = ScoreHeader {
        scorer: String::new(),
        k: 0,
        p: 0,
        enrolled_ood: false,
        enrolled_novel_classes: 0,
    };
    let mut declared: Option<usize> = None;
    let mut scores = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some((key, value)) = rest.split_once('=') {
                match key.trim() {
                    "scorer" => header.scorer = value.trim().to_string(),
                    "k" => header.k = parse_field(path, lineno, value)?,
                    "p" => header.p = parse_field(path, lineno, value)?,
                    "enroll_ood" => {
                        header.enrolled_ood = value.trim() == "1";
                    }
                    "enroll_novel" => {
                        header.enrolled_novel_classes = parse_field(path, lineno, value)?;
                    }
                    "count" => declared = Some(parse_field(path, lineno, value)?),
                    _ => {}
                }
            }
            continue;
        }
        let score: f64 = line.parse().map_err(|_| {
            format_err(path, format!("line {}: invalid score '{line}'", lineno + 1))
        })?;
        scores.push(score);
    }
    if let Some(declared) = declared {
        if declared != scores.len() {
            return Err(format_err(
                path,
                format!("header declares {declared} scores, found {}", scores.len()),
            ));
        }
    }
    if scores.is_empty() {
        return Err(format_err(path, "no scores"));
    }
    Ok((header, scores))
}

fn parse_field<T: std::str::FromStr>(path: &Path, lineno: usize, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        format_err(
            path,
            format!("line {}: invalid value '{value}'", lineno + 1),
        )
    })
}

/// Mean/std statistics over resampled enrollment trials.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleStats {
    pub trials: usize,
    pub enroll_size: usize,
    pub fpr95_mean: f64,
    pub fpr95_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
}

/// Writes a metric report as key=value lines (diffable regression format).
pub fn write_metric_report(
    path: &Path,
    report: &MetricReport,
    resample: Option<&ResampleStats>,
) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "# mmel-metrics v{FORMAT_VERSION}")?;
        writeln!(w, "fpr95={}", report.fpr95)?;
        writeln!(w, "auc={}", report.auc)?;
        writeln!(w, "lambda={}", report.lambda)?;
        writeln!(w, "id_count={}", report.id_count)?;
        writeln!(w, "ood_count={}", report.ood_count)?;
        if let Some(stats) = resample {
            writeln!(w, "trials={}", stats.trials)?;
            writeln!(w, "enroll_size={}", stats.enroll_size)?;
            writeln!(w, "fpr95_mean={}", stats.fpr95_mean)?;
            writeln!(w, "fpr95_std={}", stats.fpr95_std)?;
            writeln!(w, "auc_mean={}", stats.auc_mean)?;
            writeln!(w, "auc_std={}", stats.auc_std)?;
        }
        Ok(())
    })
}

/// Writes a histogram as a columnar text table:
/// `bin_lo bin_hi id_count ood_count`.
pub fn write_histogram(path: &Path, histogram: &Histogram) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "# mmel-histogram v{FORMAT_VERSION}")?;
        writeln!(w, "# columns: bin_lo bin_hi id_count ood_count")?;
        for i in 0..histogram.id_counts.len() {
            writeln!(
                w,
                "{} {} {} {}",
                histogram.edges[i],
                histogram.edges[i + 1],
                histogram.id_counts[i],
                histogram.ood_counts[i]
            )?;
        }
        Ok(())
    })
}
