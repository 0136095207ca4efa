//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.toml        time range, features, units, bounding box, nodes, image layout
//! <dir>/stations/<id>.csv    header `timestamp,<feature>...`, one row per step
//! <dir>/images/frames.bin    little-endian f64, [frame][row][col][channel]
//! <dir>/images/index.csv     header `frame,timestamp,offset`
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, ImageSequence, StationSeries};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, GeoPoint, TimeStamp, STEP_MINUTES};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";
const FRAMES_FILE: &str = "images/frames.bin";
const INDEX_FILE: &str = "images/index.csv";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NodeEntry {
    id: String,
    latitude: f64,
    longitude: f64,
    #[serde(default)]
    altitude: f64,
    file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ImagesEntry {
    height: usize,
    width: usize,
    channels: usize,
    frames: usize,
    data_file: String,
    index_file: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    start: TimeStamp,
    steps: usize,
    step_minutes: i64,
    features: Vec<String>,
    units: Vec<String>,
    bbox: BoundingBox,
    #[serde(default)]
    images: Option<ImagesEntry>,
    nodes: Vec<NodeEntry>,
}

fn unit_of(feature: &str) -> &'static str {
    match feature {
        "ghi" => "kW/m2",
        "temperature" => "degC",
        "humidity" => "percent",
        _ => "",
    }
}

fn ds_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    ds_err(path, e.to_string())
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir.join("stations")).map_err(|e| Error::io(dir, e))?;
    let nodes = ds
        .stations
        .iter()
        .map(|s| NodeEntry {
            id: s.node_id.clone(),
            latitude: s.position.latitude,
            longitude: s.position.longitude,
            altitude: s.position.altitude,
            file: format!("stations/{}.csv", s.node_id),
        })
        .collect::<Vec<_>>();
    for (s, entry) in ds.stations.iter().zip(&nodes) {
        let path = dir.join(&entry.file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut header = vec!["timestamp".to_string()];
        header.extend(ds.feature_names.iter().cloned());
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        let f = s.feature_count();
        for i in 0..s.steps() {
            let mut rec = vec![s.timestamp(i).to_string()];
            rec.extend(s.features.data()[i * f..(i + 1) * f].iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let images = match &ds.images {
        None => None,
        Some(img) => {
            fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir, e))?;
            let (h, w, c) = img.dims();
            let mut bytes = Vec::with_capacity(img.frames.len() * 8);
            for v in img.frames.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let path = dir.join(FRAMES_FILE);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            let ipath = dir.join(INDEX_FILE);
            let mut iw = csv::Writer::from_path(&ipath).map_err(|e| csv_err(&ipath, e))?;
            iw.write_record(["frame", "timestamp", "offset"])
                .map_err(|e| csv_err(&ipath, e))?;
            for k in 0..img.len() {
                let ts = img.start.plus_steps(k as i64).to_string();
                let off = (k * h * w * c * 8).to_string();
                iw.write_record([k.to_string(), ts, off])
                    .map_err(|e| csv_err(&ipath, e))?;
            }
            iw.flush().map_err(|e| Error::io(&ipath, e))?;
            Some(ImagesEntry {
                height: h,
                width: w,
                channels: c,
                frames: img.len(),
                data_file: FRAMES_FILE.into(),
                index_file: INDEX_FILE.into(),
            })
        }
    };
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        start: ds.start,
        steps: ds.steps,
        step_minutes: STEP_MINUTES,
        features: ds.feature_names.clone(),
        units: ds.feature_names.iter().map(|f| unit_of(f).to_string()).collect(),
        bbox: ds.bbox,
        images,
        nodes,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| ds_err(&path, format!("cannot read manifest: {e}")))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| ds_err(&path, format!("malformed manifest: {e}")))?;
    if m.format_version != FORMAT_VERSION {
        return Err(ds_err(
            &path,
            format!(
                "format_version {} unsupported, expected {FORMAT_VERSION}",
                m.format_version
            ),
        ));
    }
    if m.step_minutes != STEP_MINUTES {
        return Err(ds_err(
            &path,
            format!("step_minutes must be {STEP_MINUTES}, got {}", m.step_minutes),
        ));
    }
    if m.features.len() != m.units.len() {
        return Err(ds_err(&path, "features and units lists differ in length"));
    }
    if m.features.first().map(String::as_str) != Some("ghi") {
        return Err(ds_err(&path, "first feature must be ghi"));
    }
    if m.steps == 0 {
        return Err(ds_err(&path, "steps must be positive"));
    }
    Ok(m)
}

fn read_station(dir: &Path, m: &Manifest, entry: &NodeEntry) -> Result<StationSeries> {
    let path: PathBuf = dir.join(&entry.file);
    let position = GeoPoint::with_altitude(entry.latitude, entry.longitude, entry.altitude)
        .map_err(|e| ds_err(&dir.join(MANIFEST), format!("node {}: {e}", entry.id)))?;
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_err(&path, e))?;
    let header = r.headers().map_err(|e| csv_err(&path, e))?.clone();
    let mut want = vec!["timestamp"];
    want.extend(m.features.iter().map(String::as_str));
    if header.iter().collect::<Vec<_>>() != want {
        return Err(ds_err(
            &path,
            format!("header {:?}, expected {:?}", header.iter().collect::<Vec<_>>(), want),
        ));
    }
    let f = m.features.len();
    let mut data = Vec::with_capacity(m.steps * f);
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let ts: TimeStamp = rec[0].parse().map_err(|e| ds_err(&path, format!("line {line}: {e}")))?;
        let expected = m.start.plus_steps(i as i64);
        if ts != expected {
            return Err(ds_err(
                &path,
                format!("line {line}: timestamp {ts}, expected {expected}"),
            ));
        }
        for j in 0..f {
            let v: f64 = rec[j + 1].trim().parse().map_err(|_| {
                ds_err(
                    &path,
                    format!("line {line}: {} value {:?} is not a number", m.features[j], &rec[j + 1]),
                )
            })?;
            if !v.is_finite() {
                return Err(ds_err(&path, format!("line {line}: non-finite {}", m.features[j])));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows != m.steps {
        return Err(ds_err(
            &path,
            format!("{rows} rows, manifest declares {} steps", m.steps),
        ));
    }
    Ok(StationSeries {
        node_id: entry.id.clone(),
        position,
        start: m.start,
        features: Tensor::new(&[m.steps, f], data)?,
    })
}

fn read_images(dir: &Path, m: &Manifest, e: &ImagesEntry) -> Result<ImageSequence> {
    let ipath = dir.join(&e.index_file);
    let mut r = csv::Reader::from_path(&ipath).map_err(|err| csv_err(&ipath, err))?;
    let frame_bytes = e.height * e.width * e.channels * 8;
    let mut count = 0;
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|err| csv_err(&ipath, err))?;
        let line = k + 2;
        let frame: usize = rec[0]
            .parse()
            .map_err(|_| ds_err(&ipath, format!("line {line}: bad frame number")))?;
        let ts: TimeStamp = rec[1]
            .parse()
            .map_err(|err| ds_err(&ipath, format!("line {line}: {err}")))?;
        let off: usize = rec[2]
            .parse()
            .map_err(|_| ds_err(&ipath, format!("line {line}: bad offset")))?;
        if frame != k || ts != m.start.plus_steps(k as i64) || off != k * frame_bytes {
            return Err(ds_err(
                &ipath,
                format!(
                    "line {line}: expected frame {k} at {} offset {}",
                    m.start.plus_steps(k as i64),
                    k * frame_bytes
                ),
            ));
        }
        count += 1;
    }
    if count != e.frames || e.frames != m.steps {
        return Err(ds_err(
            &ipath,
            format!("{count} index rows, {} frames declared, {} steps", e.frames, m.steps),
        ));
    }
    let dpath = dir.join(&e.data_file);
    let bytes = fs::read(&dpath).map_err(|err| ds_err(&dpath, format!("cannot read frames: {err}")))?;
    if bytes.len() != e.frames * frame_bytes {
        return Err(ds_err(
            &dpath,
            format!("{} bytes, expected {} frames of {frame_bytes}", bytes.len(), e.frames),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(ds_err(
            &dpath,
            format!("value {} at element {pos} outside [0, 1]", data[pos]),
        ));
    }
    Ok(ImageSequence {
        bbox: m.bbox,
        start: m.start,
        frames: Tensor::new(&[e.frames, e.height, e.width, e.channels], data)?,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let m = read_manifest(dir)?;
    m.bbox
        .validate()
        .map_err(|e| ds_err(&dir.join(MANIFEST), e.to_string()))?;
    let stations = m
        .nodes
        .iter()
        .map(|n| read_station(dir, &m, n))
        .collect::<Result<Vec<_>>>()?;
    let images = m.images.as_ref().map(|e| read_images(dir, &m, e)).transpose()?;
    Ok(Dataset {
        bbox: m.bbox,
        start: m.start,
        steps: m.steps,
        feature_names: m.features.clone(),
        stations,
        images,
    })
}

/// Summary of a dataset directory check.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub nodes: usize,
    pub steps: usize,
    pub start: TimeStamp,
    pub image_dims: Option<(usize, usize, usize)>,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Loads a dataset and runs every consistency check. Format errors are
/// returned as `Err`; physical inconsistencies are listed in the report.
pub fn validate_dataset_dir(dir: &Path) -> Result<ValidationReport> {
    let ds = load_dataset(dir)?;
    Ok(ValidationReport {
        nodes: ds.stations.len(),
        steps: ds.steps,
        start: ds.start,
        image_dims: ds.images.as_ref().map(|i| i.dims()),
        problems: ds.check(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SceneConfig};

    fn scene() -> Dataset {
        synth_generate(&SceneConfig {
            node_count: 2,
            days: 1,
            image_height: 4,
            image_width: 4,
            seed: 1,
            ..SceneConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = scene();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert!(validate_dataset_dir(dir.path()).unwrap().is_valid());
    }

    #[test]
    fn diagnostics_name_file_and_line() {
        let ds = scene();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("stations/S01.csv");
        let text = fs::read_to_string(&path).unwrap();
        let broken = text.replacen("2024-06-01T00:15", "2024-06-01T00:20", 1);
        fs::write(&path, broken).unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("S01.csv") && msg.contains("line 3"), "{msg}");
    }
}
