//! Parsing and validation of patient bundles.
//!
//! Two input formats are accepted: a single JSON document, or a metrics CSV
//! (`attribute,value,unit[,context]`) paired with a JSON manifest carrying
//! the remaining sections. Tracings are kept by reference and resolved to a
//! `sha256:` content hash at load time.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{
    DomainError, MetricRow, MetricValue, MetricVocabulary, MetricsTable, PatientBundle, Tracing,
};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub enum BundleFormat<'a> {
    Json,
    /// `raw` is the metrics CSV; the manifest holds every other section.
    CsvWithManifest { manifest: &'a [u8] },
}

/// How tracing references were resolved for a bundle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageResolution {
    /// The reference is itself a content hash.
    ContentAddressed,
    /// The image was read from disk and hashed.
    File(PathBuf),
    /// No file is available; the supplied hash is trusted.
    DeclaredHash,
}

/// Parses and validates bundles against a vocabulary, resolving relative
/// image paths against `base_dir` when given.
#[derive(Debug, Clone)]
pub struct BundleLoader {
    pub vocabulary: MetricVocabulary,
    pub base_dir: Option<PathBuf>,
}

impl Default for BundleLoader {
    fn default() -> Self {
        Self {
            vocabulary: MetricVocabulary::builtin(),
            base_dir: None,
        }
    }
}

impl BundleLoader {
    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    /// Loads a bundle from a `.json` file, or from a directory holding either
    /// `bundle.json` or `metrics.csv` + `manifest.json`.
    pub fn load_path(&self, path: &Path) -> Result<PatientBundle, DomainError> {
        let io_err = |p: &Path, e: std::io::Error| {
            DomainError::schema(p.display().to_string(), format!("cannot read: {e}"))
        };
        if path.is_dir() {
            let loader = self.clone().with_base_dir(path);
            let json = path.join("bundle.json");
            if json.is_file() {
                let raw = fs::read(&json).map_err(|e| io_err(&json, e))?;
                return parse_bundle(&raw, BundleFormat::Json, &loader);
            }
            let csv = path.join("metrics.csv");
            let manifest = path.join("manifest.json");
            let raw = fs::read(&csv).map_err(|e| io_err(&csv, e))?;
            let man = fs::read(&manifest).map_err(|e| io_err(&manifest, e))?;
            return parse_bundle(&raw, BundleFormat::CsvWithManifest { manifest: &man }, &loader);
        }
        let raw = fs::read(path).map_err(|e| io_err(path, e))?;
        let loader = match path.parent() {
            Some(dir) if self.base_dir.is_none() => self.clone().with_base_dir(dir),
            _ => self.clone(),
        };
        parse_bundle(&raw, BundleFormat::Json, &loader)
    }

    fn resolve_image(&self, tracing: &mut Tracing, index: usize) -> Result<ImageResolution, DomainError> {
        if let Some(h) = &tracing.image_hash {
            if !is_content_hash(h) {
                return Err(DomainError::value(
                    format!("tracings[{index}].image_hash"),
                    "expected `sha256:` followed by 64 hex digits",
                ));
            }
        }
        if is_content_hash(&tracing.image_ref) {
            match &tracing.image_hash {
                Some(h) if h != &tracing.image_ref => {
                    return Err(DomainError::value(
                        format!("tracings[{index}].image_hash"),
                        "differs from the content-addressed image_ref",
                    ))
                }
                _ => tracing.image_hash = Some(tracing.image_ref.clone()),
            }
            return Ok(ImageResolution::ContentAddressed);
        }
        if let Some(base) = &self.base_dir {
            let path = base.join(&tracing.image_ref);
            let bytes = fs::read(&path)
                .map_err(|_| DomainError::UnresolvedImage(tracing.image_ref.clone()))?;
            let hash = content_hash(&bytes);
            if let Some(declared) = &tracing.image_hash {
                if declared != &hash {
                    return Err(DomainError::value(
                        format!("tracings[{index}].image_hash"),
                        format!("declared {declared} but file hashes to {hash}"),
                    ));
                }
            }
            tracing.image_hash = Some(hash);
            return Ok(ImageResolution::File(path));
        }
        if tracing.image_hash.is_some() {
            Ok(ImageResolution::DeclaredHash)
        } else {
            Err(DomainError::UnresolvedImage(tracing.image_ref.clone()))
        }
    }
}

/// `sha256:<hex>` over the given bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    format!("sha256:{}", hex::encode(Sha256::digest(bytes)))
}

fn is_content_hash(s: &str) -> bool {
    s.strip_prefix("sha256:")
        .is_some_and(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()))
}

pub fn parse_bundle(
    raw: &[u8],
    format: BundleFormat<'_>,
    loader: &BundleLoader,
) -> Result<PatientBundle, DomainError> {
    match format {
        BundleFormat::Json => parse_bundle_json(raw, loader),
        BundleFormat::CsvWithManifest { manifest } => parse_bundle_csv(raw, manifest, loader),
    }
}

pub fn parse_bundle_json(raw: &[u8], loader: &BundleLoader) -> Result<PatientBundle, DomainError> {
    let doc: Value = serde_json::from_slice(raw)
        .map_err(|e| DomainError::schema("/", format!("not valid JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| DomainError::schema("/", "expected a JSON object"))?;
    check_sections(obj, &["schema_version", "biostatistics", "metrics"])?;
    finish(doc, loader)
}

pub fn parse_bundle_csv(
    csv_raw: &[u8],
    manifest: &[u8],
    loader: &BundleLoader,
) -> Result<PatientBundle, DomainError> {
    let mut doc: Value = serde_json::from_slice(manifest)
        .map_err(|e| DomainError::schema("/manifest", format!("not valid JSON: {e}")))?;
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| DomainError::schema("/manifest", "expected a JSON object"))?;
    check_sections(obj, &["schema_version", "biostatistics"])?;
    if obj.contains_key("metrics") {
        return Err(DomainError::schema(
            "/manifest/metrics",
            "metrics come from the CSV file, not the manifest",
        ));
    }
    let rows = parse_metrics_csv(csv_raw)?;
    obj.insert(
        "metrics".into(),
        serde_json::to_value(rows).expect("metric rows serialize"),
    );
    finish(doc, loader)
}

fn check_sections(obj: &serde_json::Map<String, Value>, required: &[&str]) -> Result<(), DomainError> {
    for section in required {
        if !obj.contains_key(*section) {
            return Err(DomainError::schema(
                format!("/{section}"),
                format!("missing required section `{section}`"),
            ));
        }
    }
    match obj.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == BUNDLE_SCHEMA_VERSION as u64 => Ok(()),
        _ => Err(DomainError::schema(
            "/schema_version",
            format!("unsupported schema_version (expected {BUNDLE_SCHEMA_VERSION})"),
        )),
    }
}

/// Reads `attribute,value,unit[,context]` rows. A leading header row whose
/// first cell is `attribute` is skipped.
pub fn parse_metrics_csv(raw: &[u8]) -> Result<Vec<MetricRow>, DomainError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(raw);
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| DomainError::schema(format!("/metrics/{i}"), format!("bad CSV: {e}")))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if i == 0 && record.get(0).is_some_and(|c| c.eq_ignore_ascii_case("attribute")) {
            continue;
        }
        if record.len() < 3 {
            return Err(DomainError::schema(
                format!("/metrics/{i}"),
                "expected attribute,value,unit[,context]",
            ));
        }
        let value = match record[1].parse::<f64>() {
            Ok(v) => MetricValue::Number(v),
            Err(_) => MetricValue::Label(record[1].to_string()),
        };
        let mut row = MetricRow::new(&record[0], value, &record[2]);
        row.context = record.get(3).filter(|c| !c.is_empty()).map(str::to_string);
        rows.push(row);
    }
    Ok(rows)
}

/// `/a/0/b` for the path `a[0].b`; `/` for the root.
fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { .. } | Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn finish(doc: Value, loader: &BundleLoader) -> Result<PatientBundle, DomainError> {
    let mut bundle: PatientBundle = serde_path_to_error::deserialize(doc).map_err(|e| {
        let pointer = json_pointer(e.path());
        DomainError::schema(pointer, e.into_inner().to_string())
    })?;
    validate(&mut bundle, loader)?;
    Ok(bundle)
}

fn validate(bundle: &mut PatientBundle, loader: &BundleLoader) -> Result<(), DomainError> {
    bundle.biostatistics.validate()?;
    validate_metrics(&mut bundle.metrics, &loader.vocabulary)?;
    for (i, tracing) in bundle.tracings.iter_mut().enumerate() {
        if !(tracing.duration_seconds.is_finite() && tracing.duration_seconds > 0.0) {
            return Err(DomainError::value(
                format!("tracings[{i}].duration_seconds"),
                "must be positive",
            ));
        }
        loader.resolve_image(tracing, i)?;
    }
    if bundle.adjudicated_interpretation.is_some() && bundle.adjudicated_findings.is_none() {
        return Err(DomainError::schema(
            "/adjudicated_findings",
            "adjudicated interpretation requires adjudicated findings",
        ));
    }
    let mut finding_ids = BTreeSet::new();
    if let Some(findings) = &bundle.adjudicated_findings {
        for (i, f) in findings.iter().enumerate() {
            if f.statement.trim().is_empty() {
                return Err(DomainError::value(
                    format!("adjudicated_findings[{i}].statement"),
                    "must be non-empty",
                ));
            }
            for name in f.parameters.keys() {
                if loader.vocabulary.parameter(name).is_none() {
                    return Err(DomainError::value(
                        format!("adjudicated_findings[{i}].parameters"),
                        format!("`{name}` is not a canonical parameter"),
                    ));
                }
            }
            if !finding_ids.insert(f.id.as_str()) {
                return Err(DomainError::value(
                    format!("adjudicated_findings[{i}].id"),
                    format!("duplicate id {}", f.id),
                ));
            }
        }
    }
    if let Some(interp) = &bundle.adjudicated_interpretation {
        let mut ids = BTreeSet::new();
        for (i, item) in interp.iter().enumerate() {
            if item.statement.trim().is_empty() {
                return Err(DomainError::value(
                    format!("adjudicated_interpretation[{i}].statement"),
                    "must be non-empty",
                ));
            }
            if let Some(missing) = item.supports.iter().find(|s| !finding_ids.contains(s.as_str())) {
                return Err(DomainError::value(
                    format!("adjudicated_interpretation[{i}].supports"),
                    format!("unknown finding {missing}"),
                ));
            }
            if !ids.insert(item.id.as_str()) {
                return Err(DomainError::value(
                    format!("adjudicated_interpretation[{i}].id"),
                    format!("duplicate id {}", item.id),
                ));
            }
        }
    }
    Ok(())
}

fn validate_metrics(table: &mut MetricsTable, vocab: &MetricVocabulary) -> Result<(), DomainError> {
    let mut seen = BTreeSet::new();
    for (i, row) in table.rows.iter_mut().enumerate() {
        let pointer = format!("/metrics/{i}");
        if !seen.insert(row.attribute.trim().to_ascii_lowercase()) {
            return Err(DomainError::schema(
                pointer,
                format!("duplicate attribute `{}`", row.attribute),
            ));
        }
        row.non_canonical = !vocab.check_row(row, &pointer)?;
    }
    Ok(())
}

/// Canonical JSON form of a bundle; `parse_bundle_json` inverts it.
pub fn serialize_bundle(bundle: &PatientBundle) -> Vec<u8> {
    serde_json::to_vec_pretty(bundle).expect("bundle serializes")
}
