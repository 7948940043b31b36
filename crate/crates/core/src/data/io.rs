//! On-disk dataset layout.
//!
//! ```text
//! <dir>/attributes.csv      class_id,a_0,...,a_{D-1}   (one row per class)
//! <dir>/splits.txt          class_id,{seen|unseen}     (one line per class)
//! <dir>/data/index.csv      sample_id,class_id,split,file
//! <dir>/data/samples/*.bin  per-sample tensor records
//! ```
//!
//! Tensor record, all integers and floats little-endian:
//!
//! ```text
//! [0..4)    magic "DCTB"
//! [4..8)    u32 format version (1)
//! [8..16)   u64 sample_id
//! [16..20)  u32 class_id
//! [20..24)  u32 ndim (3 = image H,W,C; 1 = feature vector)
//! then      ndim × u32 dims
//! then      prod(dims) × f32 values, row-major
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, Array3};

use super::{AttributeMatrix, ClassId, GzslDataset, Sample, SampleData, Split};
use crate::error::{DcenError, Result};
use crate::image::Image;

pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const SPLITS_FILE: &str = "splits.txt";
pub const DATA_DIR: &str = "data";
const INDEX_FILE: &str = "index.csv";
const SAMPLES_DIR: &str = "samples";

const RECORD_MAGIC: &[u8; 4] = b"DCTB";
const RECORD_VERSION: u32 = 1;

/// Load `<dir>/attributes.csv`, `<dir>/splits.txt` and `<dir>/data/`.
pub fn load_dataset_dir(dir: &Path) -> Result<GzslDataset> {
    load_dataset(&dir.join(ATTRIBUTES_FILE), &dir.join(SPLITS_FILE), &dir.join(DATA_DIR))
}

pub fn load_dataset(attr_path: &Path, split_path: &Path, data_path: &Path) -> Result<GzslDataset> {
    let attributes = read_attributes(attr_path)?;
    let (seen_classes, unseen_classes) = read_splits(split_path, &attributes)?;
    let samples = read_samples(data_path, &attributes)?;
    let ds = GzslDataset { samples, attributes, seen_classes, unseen_classes };
    ds.ensure_valid()?;
    Ok(ds)
}

fn parse_class_id(field: &str, location: &str) -> Result<ClassId> {
    field
        .trim()
        .parse::<u32>()
        .map(ClassId)
        .map_err(|_| DcenError::parse(location, format!("invalid class id {field:?}")))
}

fn read_attributes(path: &Path) -> Result<AttributeMatrix> {
    let file = File::open(path).map_err(|e| DcenError::io(path, e))?;
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file);
    let name = path.display().to_string();

    let header = reader.headers().map_err(|e| DcenError::parse(format!("{name}:1"), e.to_string()))?.clone();
    if header.get(0) != Some("class_id") {
        return Err(DcenError::parse(format!("{name}:1"), "header must start with class_id"));
    }
    let dim = header.len() - 1;
    for (j, col) in header.iter().skip(1).enumerate() {
        if col != format!("a_{j}") {
            return Err(DcenError::parse(
                format!("{name}:1"),
                format!("expected column a_{j}, found {col:?}"),
            ));
        }
    }
    if dim == 0 {
        return Err(DcenError::parse(format!("{name}:1"), "no attribute columns"));
    }

    let mut ids = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DcenError::parse(format!("{name}:{line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let location = format!("{name}:{line}");
        if record.len() != dim + 1 {
            return Err(DcenError::DimensionMismatch(format!(
                "{location}: row has {} attribute values, header declares {dim}",
                record.len().saturating_sub(1)
            )));
        }
        ids.push(parse_class_id(&record[0], &location)?);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| DcenError::parse(&location, format!("invalid number {field:?}")))?;
            values.push(v);
        }
    }
    let values = Array2::from_shape_vec((ids.len(), dim), values)
        .map_err(|e| DcenError::DimensionMismatch(e.to_string()))?;
    AttributeMatrix::new(values, ids).map_err(|e| DcenError::parse(name, e.to_string()))
}

fn read_splits(path: &Path, attributes: &AttributeMatrix) -> Result<(BTreeSet<ClassId>, BTreeSet<ClassId>)> {
    let file = File::open(path).map_err(|e| DcenError::io(path, e))?;
    let name = path.display().to_string();
    let mut seen = BTreeSet::new();
    let mut unseen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DcenError::io(path, e))?;
        let location = format!("{name}:{}", i + 1);
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, tag) = line
            .split_once(',')
            .ok_or_else(|| DcenError::parse(&location, "expected class_id,{seen|unseen}"))?;
        let class = parse_class_id(id, &location)?;
        if attributes.index_of(class).is_none() {
            return Err(DcenError::parse(&location, format!("unknown class id {class} (no attribute row)")));
        }
        match tag.trim() {
            "seen" => seen.insert(class),
            "unseen" => unseen.insert(class),
            other => {
                return Err(DcenError::parse(
                    &location,
                    format!("split tag must be seen or unseen, found {other:?}"),
                ))
            }
        };
    }
    Ok((seen, unseen))
}

fn read_samples(data_dir: &Path, attributes: &AttributeMatrix) -> Result<Vec<Sample>> {
    let index_path = data_dir.join(INDEX_FILE);
    let file = File::open(&index_path).map_err(|e| DcenError::io(&index_path, e))?;
    let name = index_path.display().to_string();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| DcenError::parse(format!("{name}:1"), e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["sample_id", "class_id", "split", "file"] {
        return Err(DcenError::parse(format!("{name}:1"), "header must be sample_id,class_id,split,file"));
    }

    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            DcenError::parse(format!("{name}:{line}"), e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let location = format!("{name}:{line}");
        let id: u64 = record[0]
            .parse()
            .map_err(|_| DcenError::parse(&location, format!("invalid sample id {:?}", &record[0])))?;
        let label = parse_class_id(&record[1], &location)?;
        if attributes.index_of(label).is_none() {
            return Err(DcenError::parse(&location, format!("unknown class id {label}")));
        }
        let split = Split::parse(&record[2])
            .ok_or_else(|| DcenError::parse(&location, format!("invalid split {:?}", &record[2])))?;
        let record_path = data_dir.join(&record[3]);
        let (blob_id, blob_class, data) = read_record(&record_path)?;
        if blob_id != id || blob_class != label {
            return Err(DcenError::parse(
                &location,
                format!(
                    "record {} header (sample {blob_id}, class {blob_class}) disagrees with index",
                    record_path.display()
                ),
            ));
        }
        samples.push(Sample { id, label, split, data });
    }
    Ok(samples)
}

fn read_record(path: &Path) -> Result<(u64, ClassId, SampleData)> {
    let bytes = fs::read(path).map_err(|e| DcenError::io(path, e))?;
    let name = path.display().to_string();
    let bad = |msg: &str| DcenError::parse(&name, msg.to_string());
    let mut cur = std::io::Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != RECORD_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != RECORD_VERSION {
        return Err(bad(&format!("unsupported record version {version}")));
    }
    let id = cur.read_u64::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    let class = ClassId(cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?);
    let ndim = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    if ndim != 1 && ndim != 3 {
        return Err(bad(&format!("ndim must be 1 or 3, found {ndim}")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated shape"))? as usize);
    }
    let len: usize = dims.iter().product();
    let remaining = bytes.len() - cur.position() as usize;
    if remaining != len * 4 {
        return Err(bad(&format!("payload is {remaining} bytes, shape {dims:?} requires {}", len * 4)));
    }
    let mut values = vec![0f32; len];
    cur.read_f32_into::<LittleEndian>(&mut values).map_err(|_| bad("truncated payload"))?;
    let values: Vec<f64> = values.into_iter().map(f64::from).collect();
    let data = if ndim == 3 {
        let arr =
            Array3::from_shape_vec((dims[0], dims[1], dims[2]), values).map_err(|e| bad(&e.to_string()))?;
        SampleData::Image(Image::from_array(arr))
    } else {
        SampleData::Features(Array1::from_vec(values))
    };
    Ok((id, class, data))
}

fn write_record(path: &Path, sample: &Sample) -> Result<()> {
    let file = File::create(path).map_err(|e| DcenError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let shape = sample.data.shape();
    let io = |e| DcenError::io(path, e);
    w.write_all(RECORD_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(RECORD_VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(sample.id).map_err(io)?;
    w.write_u32::<LittleEndian>(sample.label.0).map_err(io)?;
    w.write_u32::<LittleEndian>(shape.len() as u32).map_err(io)?;
    for d in &shape {
        w.write_u32::<LittleEndian>(*d as u32).map_err(io)?;
    }
    let values: Box<dyn Iterator<Item = &f64>> = match &sample.data {
        SampleData::Image(img) => Box::new(img.data().iter()),
        SampleData::Features(v) => Box::new(v.iter()),
    };
    for v in values {
        w.write_f32::<LittleEndian>(*v as f32).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Write `ds` under `dir` in the layout read by [`load_dataset_dir`].
/// Output bytes depend only on the dataset contents.
pub fn write_dataset(ds: &GzslDataset, dir: &Path) -> Result<()> {
    let samples_dir = dir.join(DATA_DIR).join(SAMPLES_DIR);
    fs::create_dir_all(&samples_dir).map_err(|e| DcenError::io(&samples_dir, e))?;

    let attr_path = dir.join(ATTRIBUTES_FILE);
    let mut w = BufWriter::new(File::create(&attr_path).map_err(|e| DcenError::io(&attr_path, e))?);
    let io = |e| DcenError::io(&attr_path, e);
    let mut header = String::from("class_id");
    for j in 0..ds.attr_dim() {
        header.push_str(&format!(",a_{j}"));
    }
    writeln!(w, "{header}").map_err(io)?;
    for (i, id) in ds.attributes.class_ids().iter().enumerate() {
        let row: Vec<String> = ds.attributes.values().row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{id},{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let split_path = dir.join(SPLITS_FILE);
    let mut w = BufWriter::new(File::create(&split_path).map_err(|e| DcenError::io(&split_path, e))?);
    let io = |e| DcenError::io(&split_path, e);
    let mut tags: HashMap<ClassId, &str> = HashMap::new();
    for c in &ds.seen_classes {
        tags.insert(*c, "seen");
    }
    for c in &ds.unseen_classes {
        tags.insert(*c, "unseen");
    }
    for id in ds.attributes.class_ids() {
        if let Some(tag) = tags.get(id) {
            writeln!(w, "{id},{tag}").map_err(io)?;
        }
    }
    w.flush().map_err(io)?;

    let index_path = dir.join(DATA_DIR).join(INDEX_FILE);
    let mut index = csv::Writer::from_path(&index_path)
        .map_err(|e| DcenError::parse(index_path.display().to_string(), e.to_string()))?;
    let csv_err = |e: csv::Error| DcenError::parse(index_path.display().to_string(), e.to_string());
    index.write_record(["sample_id", "class_id", "split", "file"]).map_err(csv_err)?;
    for sample in &ds.samples {
        let rel = format!("{SAMPLES_DIR}/{:06}.bin", sample.id);
        write_record(&dir.join(DATA_DIR).join(&rel), sample)?;
        index
            .write_record([sample.id.to_string(), sample.label.to_string(), sample.split.to_string(), rel])
            .map_err(csv_err)?;
    }
    index.flush().map_err(|e| DcenError::io(&index_path, e))?;
    Ok(())
}
