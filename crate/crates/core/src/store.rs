//! Bit-exact persistence: flat little-endian dataset and model files, field
//! exports to CSV and binary PGM, and JSON configuration documents.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{CauchyPair, Sample, SampleConfig};
use crate::error::{Error, Result};
use crate::geometry::{Grid, SamplingOptions, ScalarField, Scenario};
use crate::model::{Network, NetworkConfig};
use crate::pde::BoundaryTrace;

pub const DATASET_MAGIC: &[u8; 4] = b"DDSM";
pub const MODEL_MAGIC: &[u8; 4] = b"DDSW";
pub const VERSION: u32 = 1;

/// Fixed header size of a dataset file in bytes.
const DATASET_HEADER: usize = 4 + 4 * 6 + 8 + 4 + 8 + 8 + 4 + 8 + 8 + 4 * 3;

/// Samples generated from one configuration. Sample `i` was drawn with seed
/// `base_seed + i` unless recorded otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SampleConfig,
    pub base_seed: u64,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn grid(&self) -> Result<Grid> {
        self.config.make_grid()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn values(&mut self, v: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * v.len());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        Ok(self.0.write_all(&buf)?)
    }
}

/// Cursor over an in-memory payload whose length was validated up front.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 4], what: &str) -> Result<()> {
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(Error::Format(format!("not a {what} file (bad magic)")));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported {what} version {version}")));
    }
    Ok(())
}

fn as_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::param(format!("{what} {v} does not fit the file format")))
}

/// Writes `ds` in the dataset format.
pub fn write_dataset(w: impl Write, ds: &Dataset) -> Result<()> {
    let cfg = &ds.config;
    let grid = cfg.make_grid()?;
    let n = cfg.n_pairs;
    let mut w = Writer(w);
    w.0.write_all(DATASET_MAGIC)?;
    w.u32(VERSION)?;
    w.u32(as_u32(grid.dim(), "dimension")?)?;
    for c in grid.counts3() {
        w.u32(as_u32(c, "grid size")?)?;
    }
    w.u32(as_u32(n, "pair count")?)?;
    w.u64(ds.samples.len() as u64)?;
    w.u32(cfg.scenario.id())?;
    w.f64(cfg.mu0)?;
    w.f64(cfg.mu1)?;
    w.u32(cfg.s as u32)?;
    w.u64(ds.base_seed)?;
    w.f64(cfg.noise)?;
    w.u32(as_u32(cfg.limited.unwrap_or(0), "limited count")?)?;
    w.u32(as_u32(cfg.sampling.count.unwrap_or(0), "primitive count")?)?;
    w.u32(cfg.sampling.vary_count as u32)?;
    for s in &ds.samples {
        if s.pairs.len() != n || s.phi.len() != n {
            return Err(Error::Dataset(format!(
                "sample {} has {} pairs, the dataset {n}",
                s.seed,
                s.pairs.len()
            )));
        }
        s.mask.check(&grid)?;
        w.u64(s.seed)?;
        w.values(s.mask.values())?;
        for p in &s.pairs {
            p.g.check(&grid)?;
            w.values(p.g.values())?;
        }
        for p in &s.pairs {
            p.f.check(&grid)?;
            w.values(p.f.values())?;
        }
        for phi in &s.phi {
            phi.check(&grid)?;
            w.values(phi.values())?;
        }
    }
    w.0.flush()?;
    Ok(())
}

/// Reads a dataset, validating the header arithmetic against the payload
/// length before decoding any sample.
pub fn read_dataset(mut r: impl Read) -> Result<Dataset> {
    let mut head = vec![0u8; DATASET_HEADER];
    let got = read_up_to(&mut r, &mut head)?;
    check_magic(&head[..got], DATASET_MAGIC, "dataset")?;
    if got < DATASET_HEADER {
        return Err(Error::Corrupt("dataset header is truncated".into()));
    }
    let mut c = Cursor { bytes: &head, pos: 8 };
    let dim = c.u32()? as usize;
    let counts = [c.u32()? as usize, c.u32()? as usize, c.u32()? as usize];
    let n_pairs = c.u32()? as usize;
    let count = c.u64()?;
    let scenario = Scenario::from_id(c.u32()?).map_err(|e| Error::Format(e.to_string()))?;
    let mu0 = c.f64()?;
    let mu1 = c.f64()?;
    let s = u8::try_from(c.u32()?).map_err(|_| Error::Format("bad operator order".into()))?;
    let base_seed = c.u64()?;
    let noise = c.f64()?;
    let limited = c.u32()? as usize;
    let prim = c.u32()? as usize;
    let vary_count = match c.u32()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("bad flag value {v}"))),
    };
    if scenario.dim() != dim || counts[..dim].iter().any(|&k| k != counts[0]) {
        return Err(Error::Format("header grid does not match the scenario".into()));
    }
    if dim == 2 && counts[2] != 1 {
        return Err(Error::Format("2D header with a third axis".into()));
    }
    let config = SampleConfig {
        scenario,
        grid: counts[0],
        n_pairs,
        mu0,
        mu1,
        s,
        noise,
        limited: (limited > 0).then_some(limited),
        sampling: SamplingOptions {
            count: (prim > 0).then_some(prim),
            vary_count,
        },
    };
    config.validate().map_err(|e| Error::Format(format!("invalid header: {e}")))?;
    let grid = config.make_grid()?;
    let nodes = grid.node_count();
    let bdry = grid.boundary_len();
    let record = 8 + 8 * (nodes + n_pairs * (2 * bdry + nodes));
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(record))
        .ok_or_else(|| Error::Corrupt("header sample count is absurd".into()))?;
    let mut payload = Vec::new();
    r.take(expected as u64 + 1).read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload holds {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let mut c = Cursor { bytes: &payload, pos: 0 };
    let mut samples = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let seed = c.u64()?;
        let mask = ScalarField::from_values(&grid, c.values(nodes)?).map_err(corrupt)?;
        let g = (0..n_pairs)
            .map(|_| BoundaryTrace::from_values(&grid, c.values(bdry)?).map_err(corrupt))
            .collect::<Result<Vec<_>>>()?;
        let f = (0..n_pairs)
            .map(|_| BoundaryTrace::from_values(&grid, c.values(bdry)?).map_err(corrupt))
            .collect::<Result<Vec<_>>>()?;
        let phi = (0..n_pairs)
            .map(|_| ScalarField::from_values(&grid, c.values(nodes)?).map_err(corrupt))
            .collect::<Result<Vec<_>>>()?;
        let pairs = g
            .into_iter()
            .zip(f)
            .enumerate()
            .map(|(k, (g, f))| CauchyPair { omega: k + 1, g, f })
            .collect();
        samples.push(Sample {
            inclusions: None,
            mask,
            pairs,
            phi,
            scenario,
            seed,
        });
    }
    Ok(Dataset {
        config,
        base_seed,
        samples,
    })
}

fn corrupt(e: Error) -> Error {
    Error::Corrupt(e.to_string())
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..])? {
            0 => break,
            n => got += n,
        }
    }
    Ok(got)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), ds)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Writes the configuration as JSON followed by every buffer of
/// [`Network::state`], each prefixed with its length.
pub fn write_model(w: impl Write, net: &Network) -> Result<()> {
    let mut w = Writer(w);
    w.0.write_all(MODEL_MAGIC)?;
    w.u32(VERSION)?;
    let json = serde_json::to_vec(net.config())?;
    w.u64(json.len() as u64)?;
    w.0.write_all(&json)?;
    let state = net.state();
    w.u64(state.len() as u64)?;
    for buf in state {
        w.u64(buf.len() as u64)?;
        w.values(buf)?;
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_model(mut r: impl Read) -> Result<Network> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    check_magic(&bytes, MODEL_MAGIC, "model")?;
    let mut c = Cursor { bytes: &bytes, pos: 8 };
    let len = usize::try_from(c.u64()?).map_err(|_| Error::Corrupt("bad config length".into()))?;
    let config: NetworkConfig =
        serde_json::from_slice(c.take(len)?).map_err(|e| Error::Format(format!("model configuration: {e}")))?;
    let mut net = Network::new(config).map_err(|e| Error::Format(format!("model configuration: {e}")))?;
    let count = c.u64()?;
    let mut state = net.state_mut();
    if count != state.len() as u64 {
        return Err(Error::Corrupt(format!(
            "file holds {count} buffers, the architecture has {}",
            state.len()
        )));
    }
    for (k, buf) in state.iter_mut().enumerate() {
        let n = c.u64()?;
        if n != buf.len() as u64 {
            return Err(Error::Corrupt(format!(
                "buffer {k} holds {n} values, the architecture expects {}",
                buf.len()
            )));
        }
        let values = c.values(buf.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Corrupt(format!("buffer {k} holds non-finite values")));
        }
        buf.copy_from_slice(&values);
    }
    if c.pos != bytes.len() {
        return Err(Error::Corrupt("trailing bytes after the last buffer".into()));
    }
    Ok(net)
}

pub fn save_model(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    write_model(BufWriter::new(File::create(path)?), net)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    read_model(BufReader::new(File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "pgm" => Ok(Self::Pgm),
            _ => Err(Error::param(format!("unknown export format `{s}` (csv, pgm)"))),
        }
    }
}

/// CSV with one line per row of the last axis, values in shortest
/// round-trip form. 3D fields are written as axis-0 slices separated by
/// blank lines.
pub fn write_csv(w: impl Write, field: &ScalarField) -> Result<()> {
    write_csv_raw(w, field.counts(), field.values())
}

fn write_csv_raw(mut w: impl Write, counts: &[usize], values: &[f64]) -> Result<()> {
    let width = counts[counts.len() - 1];
    let per_slice = counts[counts.len() - 2];
    for (i, row) in values.chunks(width).enumerate() {
        if i > 0 && i % per_slice == 0 {
            writeln!(w)?;
        }
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Binary PGM with bytes `⌊255·(v − min)/(max − min)⌋`; constant fields map to
/// 0. 3D fields are stacked vertically slice by slice.
pub fn write_pgm(w: impl Write, field: &ScalarField) -> Result<()> {
    write_pgm_raw(w, field.counts(), field.values())
}

fn write_pgm_raw(mut w: impl Write, counts: &[usize], values: &[f64]) -> Result<()> {
    let width = counts[counts.len() - 1];
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = hi - lo;
    write!(w, "P5\n{width} {}\n255\n", values.len() / width)?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| {
            if span > 0.0 {
                (255.0 * (v - lo) / span).floor().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect();
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn export_field(field: &ScalarField, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        ExportFormat::Csv => write_csv(w, field),
        ExportFormat::Pgm => write_pgm(w, field),
    }
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleGenerator;

    fn dataset(count: u64) -> Dataset {
        let config = SampleConfig {
            grid: 12,
            n_pairs: 4,
            mu0: 0.5,
            limited: Some(2),
            ..SampleConfig::default()
        };
        let gen = SampleGenerator::new(config.clone()).unwrap();
        let samples = (0..count)
            .map(|i| {
                let mut s = gen.generate(40 + i).unwrap();
                s.inclusions = None;
                s
            })
            .collect();
        Dataset {
            config,
            base_seed: 40,
            samples,
        }
    }

    fn bytes(ds: &Dataset) -> Vec<u8> {
        let mut out = Vec::new();
        write_dataset(&mut out, ds).unwrap();
        out
    }

    #[test]
    fn dataset_round_trip_is_bitwise() {
        let ds = dataset(3);
        let b = bytes(&ds);
        let back = read_dataset(&b[..]).unwrap();
        assert_eq!(back, ds);
        assert_eq!(bytes(&back), b);
        let empty = Dataset { samples: vec![], ..ds };
        assert_eq!(read_dataset(&bytes(&empty)[..]).unwrap(), empty);
    }

    #[test]
    fn dataset_errors() {
        let ds = dataset(2);
        let mut b = bytes(&ds);
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(read_dataset(&bad[..]), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(read_dataset(&bad[..]), Err(Error::Format(_))));
        // header claims one more sample than the payload holds
        let count_at = 4 + 4 * 6;
        b[count_at] = 3;
        assert!(matches!(read_dataset(&b[..]), Err(Error::Corrupt(_))));
        b[count_at] = 2;
        b.push(0);
        assert!(matches!(read_dataset(&b[..]), Err(Error::Corrupt(_))));
        assert!(matches!(read_dataset(&b[..20]), Err(Error::Corrupt(_))));
        assert!(matches!(read_dataset(&b"DD"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn model_round_trip_is_bitwise() {
        let mut cfg = NetworkConfig::desk(&[12, 12], 4);
        cfg.widths = vec![2, 4];
        cfg.epochs = 2;
        cfg.batch = 2;
        let ds = dataset(3);
        let mut net = Network::new(cfg).unwrap();
        net.train(&ds.samples).unwrap();
        let mut b = Vec::new();
        write_model(&mut b, &net).unwrap();
        let back = read_model(&b[..]).unwrap();
        assert_eq!(back.state(), net.state());
        let mut again = Vec::new();
        write_model(&mut again, &back).unwrap();
        assert_eq!(again, b);
        let a = net.reconstruct_sample(&ds.samples[0]).unwrap();
        let c = back.reconstruct_sample(&ds.samples[0]).unwrap();
        assert!(a.values().iter().zip(c.values()).all(|(x, y)| x.to_bits() == y.to_bits()));

        assert!(matches!(read_model(&b[..b.len() - 1]), Err(Error::Corrupt(_))));
        let mut bad = b.clone();
        bad[3] = b'M';
        assert!(matches!(read_model(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_and_pgm_examples() {
        let mut out = Vec::new();
        write_csv_raw(&mut out, &[2, 2], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0,1\n2,3\n");

        let mut out = Vec::new();
        write_pgm_raw(&mut out, &[2, 2], &[4.2; 4]).unwrap();
        assert_eq!(&out[..11], b"P5\n2 2\n255\n");
        assert_eq!(&out[11..], &[0, 0, 0, 0]);

        let mut out = Vec::new();
        write_pgm_raw(&mut out, &[2, 2], &[-1.0, 0.0, 0.5, 1.0]).unwrap();
        assert_eq!(&out[11..], &[0, 127, 191, 255]);

        let grid = Grid::square(3).unwrap();
        let x = 0.1 + 0.2;
        let h = ScalarField::from_fn(&grid, |p| x * p[0] + 1e-300 * p[1] + 7.0);
        let mut out = Vec::new();
        write_csv(&mut out, &h).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 3);
        let parsed: Vec<f64> = text
            .split(['\n', ','])
            .filter(|t| !t.is_empty())
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(parsed, h.values());
    }

    #[test]
    fn three_dimensional_exports() {
        let values: Vec<f64> = (0..8).map(f64::from).collect();
        let mut out = Vec::new();
        write_csv_raw(&mut out, &[2, 2, 2], &values).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "0,1\n2,3\n\n4,5\n6,7\n");
        let mut out = Vec::new();
        write_pgm_raw(&mut out, &[2, 2, 2], &values).unwrap();
        assert!(out.starts_with(b"P5\n2 4\n255\n"));
        let f = ScalarField::zeros(&Grid::cube(3).unwrap());
        let mut out = Vec::new();
        write_pgm(&mut out, &f).unwrap();
        assert!(out.starts_with(b"P5\n3 9\n255\n"));
    }

    #[test]
    fn files_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(1);
        save_dataset(dir.path().join("d.ddsm"), &ds).unwrap();
        assert_eq!(load_dataset(dir.path().join("d.ddsm")).unwrap(), ds);
        let cfg = NetworkConfig::desk(&[64, 64], 10);
        save_json(dir.path().join("c.json"), &cfg).unwrap();
        assert_eq!(load_json::<NetworkConfig>(dir.path().join("c.json")).unwrap(), cfg);
        assert!(matches!(load_dataset(dir.path().join("missing")), Err(Error::Io(_))));
        let grid = Grid::square(3).unwrap();
        export_field(&ScalarField::zeros(&grid), dir.path().join("z.pgm"), "pgm".parse().unwrap()).unwrap();
        assert!("png".parse::<ExportFormat>().is_err());
    }
}
