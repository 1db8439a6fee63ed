//! CSV ingestion and artifact output.
//!
//! Input schemas:
//!   pixels.csv      id,x,y,su_id[,exposure][,count] + wide covariate columns
//!   landslides.csv  pixel_id, area_m2 | size_sqrt_m (exactly one size column)
//!   adjacency.csv   su_a,su_b (0-based unit ids, one undirected edge per row)
//!   landslide covariates (optional): wide numeric columns, row-aligned with
//!   landslides.csv.
//!
//! Numeric output uses the shortest representation that parses back exactly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use slidemark::error::{Error, Result};
use slidemark::graph::{PixelGrid, SlopeUnitGraph};
use slidemark::model::{aggregate_to_areal, Dataset, Landslide};
use slidemark::sampler::ChainOutput;

use crate::config::RunConfig;

const PIXEL_SCHEMA: [&str; 6] = ["id", "x", "y", "su_id", "exposure", "count"];

/// Column-wise standardization transform (mean 0, sample sd 1), persisted so
/// prediction inputs receive the identical mapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub enabled: bool,
}

impl Standardizer {
    pub fn fit(matrix: &DMatrix<f64>, enabled: bool) -> Standardizer {
        let n = matrix.nrows() as f64;
        let mut means = Vec::with_capacity(matrix.ncols());
        let mut sds = Vec::with_capacity(matrix.ncols());
        for c in 0..matrix.ncols() {
            let col = matrix.column(c);
            let mean = col.sum() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
            means.push(mean);
            sds.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Standardizer { means, sds, enabled }
    }

    pub fn apply(&self, matrix: &mut DMatrix<f64>) {
        if !self.enabled {
            return;
        }
        for c in 0..matrix.ncols() {
            for r in 0..matrix.nrows() {
                matrix[(r, c)] = (matrix[(r, c)] - self.means[c]) / self.sds[c];
            }
        }
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))
}

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, row: usize) -> Result<T> {
    raw.parse::<T>()
        .map_err(|_| Error::Data(format!("row {}: cannot parse {what} from {raw:?}", row + 1)))
}

/// Raw pixel table, before covariate selection and standardization.
#[derive(Debug, Clone)]
pub struct PixelTable {
    pub ids: Vec<i64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub su: Vec<usize>,
    pub exposure: Option<Vec<f64>>,
    pub count: Option<Vec<u32>>,
    pub covariate_names: Vec<String>,
    pub covariates: DMatrix<f64>,
}

pub fn read_pixels(path: &Path) -> Result<PixelTable> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(String::from).collect();
    for required in ["id", "x", "y", "su_id"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Data(format!(
                "{}: required column `{required}` is missing",
                path.display()
            )));
        }
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_c = col("id").unwrap();
    let x_c = col("x").unwrap();
    let y_c = col("y").unwrap();
    let su_c = col("su_id").unwrap();
    let exp_c = col("exposure");
    let count_c = col("count");
    let cov_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| !PIXEL_SCHEMA.contains(&headers[c].as_str()))
        .collect();
    let covariate_names: Vec<String> = cov_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut ids = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut su = Vec::new();
    let mut exposure = exp_c.map(|_| Vec::new());
    let mut count = count_c.map(|_| Vec::new());
    let mut cov_rows: Vec<f64> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        ids.push(parse_field::<i64>(&record[id_c], "pixel id", row)?);
        xs.push(parse_field::<f64>(&record[x_c], "x", row)?);
        ys.push(parse_field::<f64>(&record[y_c], "y", row)?);
        su.push(parse_field::<usize>(&record[su_c], "su_id", row)?);
        if let (Some(c), Some(v)) = (exp_c, exposure.as_mut()) {
            v.push(parse_field::<f64>(&record[c], "exposure", row)?);
        }
        if let (Some(c), Some(v)) = (count_c, count.as_mut()) {
            v.push(parse_field::<u32>(&record[c], "count", row)?);
        }
        for &c in &cov_cols {
            cov_rows.push(parse_field::<f64>(&record[c], &headers[c], row)?);
        }
    }
    let n = ids.len();
    let covariates = DMatrix::from_row_slice(n, cov_cols.len(), &cov_rows);
    Ok(PixelTable { ids, x: xs, y: ys, su, exposure, count, covariate_names, covariates })
}

pub fn read_landslides(path: &Path) -> Result<(Vec<i64>, Vec<f64>)> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(String::from).collect();
    let pixel_c = headers
        .iter()
        .position(|h| h == "pixel_id")
        .ok_or_else(|| Error::Data(format!("{}: column `pixel_id` is missing", path.display())))?;
    let area_c = headers.iter().position(|h| h == "area_m2");
    let size_c = headers.iter().position(|h| h == "size_sqrt_m");
    let (value_c, is_area) = match (area_c, size_c) {
        (Some(_), Some(_)) => {
            return Err(Error::Data(format!(
                "{}: both area_m2 and size_sqrt_m present; provide exactly one",
                path.display()
            )))
        }
        (Some(c), None) => (c, true),
        (None, Some(c)) => (c, false),
        (None, None) => {
            return Err(Error::Data(format!(
                "{}: one of area_m2 or size_sqrt_m is required",
                path.display()
            )))
        }
    };
    for (i, h) in headers.iter().enumerate() {
        if i != pixel_c && i != value_c {
            log::warn!("{}: ignoring unknown column `{h}`", path.display());
        }
    }
    let mut pixels = Vec::new();
    let mut sizes = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        pixels.push(parse_field::<i64>(&record[pixel_c], "pixel_id", row)?);
        let v = parse_field::<f64>(&record[value_c], &headers[value_c], row)?;
        // Sizes are modeled on the sqrt-area (meter) scale.
        sizes.push(if is_area { v.sqrt() } else { v });
    }
    Ok((pixels, sizes))
}

pub fn read_adjacency(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(String::from).collect();
    let a_c = headers
        .iter()
        .position(|h| h == "su_a")
        .ok_or_else(|| Error::Data(format!("{}: column `su_a` is missing", path.display())))?;
    let b_c = headers
        .iter()
        .position(|h| h == "su_b")
        .ok_or_else(|| Error::Data(format!("{}: column `su_b` is missing", path.display())))?;
    let mut pairs = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        pairs.push((
            parse_field::<usize>(&record[a_c], "su_a", row)?,
            parse_field::<usize>(&record[b_c], "su_b", row)?,
        ));
    }
    Ok(pairs)
}

pub fn read_landslide_covariates(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = open_reader(path)?;
    let names: Vec<String> =
        reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(String::from).collect();
    let mut rows: Vec<f64> = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for c in 0..names.len() {
            rows.push(parse_field::<f64>(&record[c], &names[c], row)?);
        }
        n += 1;
    }
    let matrix = DMatrix::from_row_slice(n, names.len(), &rows);
    Ok((names, matrix))
}

/// Everything the subcommands need after ingestion.
pub struct Ingested {
    pub dataset: Dataset,
    pub grid: PixelGrid,
    pub graph: SlopeUnitGraph,
    pub pixel_ids: Vec<i64>,
    pub covariate_names_counts: Vec<String>,
    pub covariate_names_sizes: Vec<String>,
    pub transform_counts: Standardizer,
    pub transform_sizes: Standardizer,
}

fn select_columns(
    table: &PixelTable,
    wanted: &Option<Vec<String>>,
    side: &str,
) -> Result<(Vec<String>, DMatrix<f64>)> {
    let names: Vec<String> = match wanted {
        None => table.covariate_names.clone(),
        Some(list) => {
            for name in list {
                if !table.covariate_names.contains(name) {
                    return Err(Error::Config(format!(
                        "{side} covariate `{name}` not found among pixel columns {:?}",
                        table.covariate_names
                    )));
                }
            }
            list.clone()
        }
    };
    let n = table.ids.len();
    let mut matrix = DMatrix::zeros(n, names.len());
    for (j, name) in names.iter().enumerate() {
        let c = table.covariate_names.iter().position(|x| x == name).unwrap();
        for r in 0..n {
            matrix[(r, j)] = table.covariates[(r, c)];
        }
    }
    Ok((names, matrix))
}

/// Reads and validates the dataset, graph, and projections; standardizes
/// covariates (storing the transforms); normalizes exposures to mean 1.
pub fn ingest(config: &RunConfig) -> Result<Ingested> {
    let pixels_path = config
        .paths
        .pixels
        .as_ref()
        .ok_or_else(|| Error::Config("[paths] pixels is required".into()))?;
    let landslides_path = config
        .paths
        .landslides
        .as_ref()
        .ok_or_else(|| Error::Config("[paths] landslides is required".into()))?;
    let adjacency_path = config
        .paths
        .adjacency
        .as_ref()
        .ok_or_else(|| Error::Config("[paths] adjacency is required".into()))?;

    let table = read_pixels(pixels_path)?;
    let (ls_pixels, ls_sizes) = read_landslides(landslides_path)?;
    let adjacency = read_adjacency(adjacency_path)?;

    let n1 = table.ids.len();
    let mut id_to_row: BTreeMap<i64, usize> = BTreeMap::new();
    for (row, &id) in table.ids.iter().enumerate() {
        if id_to_row.insert(id, row).is_some() {
            return Err(Error::Data(format!("duplicate pixel id {id}")));
        }
    }

    let n_units_pixels = table.su.iter().copied().max().map_or(0, |m| m + 1);
    let n_units_adj =
        adjacency.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    let n_units = n_units_pixels.max(n_units_adj);
    let graph = SlopeUnitGraph::from_edges(n_units, &adjacency)?;

    // Relative exposure: provided areas are normalized by their mean so a
    // regular grid gets e_i = 1 and the count intercept stays interpretable.
    let exposure = match &table.exposure {
        None => vec![1.0; n1],
        Some(raw) => {
            let mean = raw.iter().sum::<f64>() / n1 as f64;
            if !(mean > 0.0) {
                return Err(Error::Data("exposures must be positive".into()));
            }
            raw.iter().map(|e| e / mean).collect()
        }
    };
    let grid = PixelGrid::new(table.x.clone(), table.y.clone(), table.su.clone(), exposure, n_units)?;

    // Counts derive from the landslide records; an explicit count column,
    // when present, must agree.
    let mut counts = vec![0u32; n1];
    let mut landslides = Vec::with_capacity(ls_pixels.len());
    for (j, (&pid, &size)) in ls_pixels.iter().zip(ls_sizes.iter()).enumerate() {
        let row = *id_to_row.get(&pid).ok_or_else(|| {
            Error::Data(format!("landslide {j} references unknown pixel id {pid}"))
        })?;
        counts[row] += 1;
        landslides.push(Landslide { pixel: row, size });
    }
    if let Some(declared) = &table.count {
        for i in 0..n1 {
            if declared[i] != counts[i] {
                return Err(Error::Data(format!(
                    "pixel id {} declares count {} but has {} landslide record(s)",
                    table.ids[i], declared[i], counts[i]
                )));
            }
        }
    }

    let (names1, mut z1) = select_columns(&table, &config.model.count_covariates, "count")?;
    let (names2, mut z2_pixel) = select_columns(&table, &config.model.size_covariates, "size")?;
    // Warn about covariate columns no side uses.
    for name in &table.covariate_names {
        if !names1.contains(name) && !names2.contains(name) {
            log::warn!("pixel column `{name}` is not used by either model side");
        }
    }

    let transform_counts = Standardizer::fit(&z1, config.model.standardize);
    transform_counts.apply(&mut z1);
    let transform_sizes = Standardizer::fit(&z2_pixel, config.model.standardize);
    transform_sizes.apply(&mut z2_pixel);

    // Size-side design: pixel-level columns at each landslide's pixel, plus
    // optional landslide-level extra covariates.
    let (extra_names, extra) = match &config.paths.landslide_covariates {
        None => (Vec::new(), None),
        Some(path) => {
            let (names, mut m) = read_landslide_covariates(path)?;
            if m.nrows() != landslides.len() {
                return Err(Error::Data(format!(
                    "landslide covariates have {} rows for {} landslides",
                    m.nrows(),
                    landslides.len()
                )));
            }
            Standardizer::fit(&m, config.model.standardize).apply(&mut m);
            (names, Some(m))
        }
    };
    let p2 = z2_pixel.ncols() + extra_names.len();
    let mut z2 = DMatrix::zeros(landslides.len(), p2);
    for (j, rec) in landslides.iter().enumerate() {
        for c in 0..z2_pixel.ncols() {
            z2[(j, c)] = z2_pixel[(rec.pixel, c)];
        }
        if let Some(extra) = &extra {
            for c in 0..extra_names.len() {
                z2[(j, z2_pixel.ncols() + c)] = extra[(j, c)];
            }
        }
    }

    let mut covariate_names_sizes = names2.clone();
    covariate_names_sizes.extend(extra_names);

    let dataset = Dataset::point_process(counts, landslides, z1, z2, z2_pixel, &grid)?;
    let (dataset, grid, pixel_ids) = if config.model.areal {
        let (areal, areal_grid) = aggregate_to_areal(&dataset, &grid, &graph)?;
        let ids: Vec<i64> = (0..graph.n_units() as i64).collect();
        (areal, areal_grid, ids)
    } else {
        (dataset, grid, table.ids.clone())
    };

    Ok(Ingested {
        dataset,
        grid,
        graph,
        pixel_ids,
        covariate_names_counts: names1,
        covariate_names_sizes,
        transform_counts,
        transform_sizes,
    })
}

/// Reads only the spatial structure and covariates (no landslides): used by
/// `simulate` when a real pixel/adjacency layout is provided.
pub fn ingest_structure(
    config: &RunConfig,
) -> Result<(SlopeUnitGraph, PixelGrid, DMatrix<f64>, DMatrix<f64>, Vec<String>, Vec<String>)> {
    let pixels_path = config
        .paths
        .pixels
        .as_ref()
        .ok_or_else(|| Error::Config("[paths] pixels is required".into()))?;
    let adjacency_path = config
        .paths
        .adjacency
        .as_ref()
        .ok_or_else(|| Error::Config("[paths] adjacency is required".into()))?;
    let table = read_pixels(pixels_path)?;
    let adjacency = read_adjacency(adjacency_path)?;
    let n1 = table.ids.len();
    let n_units = table
        .su
        .iter()
        .copied()
        .max()
        .map_or(0, |m| m + 1)
        .max(adjacency.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0));
    let graph = SlopeUnitGraph::from_edges(n_units, &adjacency)?;
    let exposure = match &table.exposure {
        None => vec![1.0; n1],
        Some(raw) => {
            let mean = raw.iter().sum::<f64>() / n1 as f64;
            raw.iter().map(|e| e / mean).collect()
        }
    };
    let grid = PixelGrid::new(table.x.clone(), table.y.clone(), table.su.clone(), exposure, n_units)?;
    let (names1, mut z1) = select_columns(&table, &config.model.count_covariates, "count")?;
    let (names2, mut z2) = select_columns(&table, &config.model.size_covariates, "size")?;
    Standardizer::fit(&z1, config.model.standardize).apply(&mut z1);
    Standardizer::fit(&z2, config.model.standardize).apply(&mut z2);
    Ok((graph, grid, z1, z2, names1, names2))
}

/// The persisted fit: resolved configuration, transforms, and the chain.
/// predict/hazard reload this file.
#[derive(Serialize, Deserialize)]
pub struct FitArtifact {
    pub version: u32,
    pub config_echo: String,
    pub seed: u64,
    pub n_units: usize,
    pub covariate_names_counts: Vec<String>,
    pub covariate_names_sizes: Vec<String>,
    pub transform_counts: Standardizer,
    pub transform_sizes: Standardizer,
    pub chain: ChainOutput,
}

pub const FIT_ARTIFACT_VERSION: u32 = 1;

impl FitArtifact {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<FitArtifact> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        let artifact: FitArtifact = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Data(format!("cannot parse {}: {e}", path.display())))?;
        if artifact.version != FIT_ARTIFACT_VERSION {
            return Err(Error::Data(format!(
                "chain archive version {} unsupported (expected {FIT_ARTIFACT_VERSION})",
                artifact.version
            )));
        }
        Ok(artifact)
    }
}

pub fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

/// Writes a CSV with `# key = value` comment lines carrying the resolved
/// configuration, then a header row, then the data rows.
pub fn write_csv_with_echo(
    path: &Path,
    echo: &str,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    let emit = |w: &mut std::io::BufWriter<std::fs::File>, s: &str| {
        w.write_all(s.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::Data(format!("write {}: {e}", path.display())))
    };
    for line in echo.lines() {
        emit(&mut w, &format!("# {line}"))?;
    }
    emit(&mut w, header)?;
    for row in rows {
        emit(&mut w, &row)?;
    }
    w.flush().map_err(|e| Error::Data(format!("flush {}: {e}", path.display())))
}

/// Exports a dataset in the ingestible schema (used by `simulate`, and by
/// round-trip tests).
pub fn export_dataset(
    dir: &Path,
    grid: &PixelGrid,
    graph: &SlopeUnitGraph,
    dataset: &Dataset,
    covariate_names_counts: &[String],
    covariate_names_sizes: &[String],
) -> Result<()> {
    create_out_dir(dir)?;
    // Size-side columns that duplicate count-side columns are written once.
    let mut header = String::from("id,x,y,su_id,exposure");
    let mut size_only: Vec<usize> = Vec::new();
    for name in covariate_names_counts {
        header.push(',');
        header.push_str(name);
    }
    for (c, name) in covariate_names_sizes.iter().enumerate() {
        if !covariate_names_counts.contains(name) && c < dataset.z2_pixel.ncols() {
            header.push(',');
            header.push_str(name);
            size_only.push(c);
        }
    }
    let pixels_path = dir.join("pixels.csv");
    let file = std::fs::File::create(&pixels_path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", pixels_path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{header}").map_err(|e| Error::Data(e.to_string()))?;
    for i in 0..grid.n_pixels() {
        let mut row = format!(
            "{},{},{},{},{}",
            i, grid.x[i], grid.y[i], grid.su_index[i], grid.exposure[i]
        );
        for c in 0..dataset.z1.ncols() {
            row.push(',');
            row.push_str(&dataset.z1[(i, c)].to_string());
        }
        for &c in &size_only {
            row.push(',');
            row.push_str(&dataset.z2_pixel[(i, c)].to_string());
        }
        writeln!(w, "{row}").map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;

    let ls_path = dir.join("landslides.csv");
    let file = std::fs::File::create(&ls_path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", ls_path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "pixel_id,size_sqrt_m").map_err(|e| Error::Data(e.to_string()))?;
    for rec in &dataset.landslides {
        writeln!(w, "{},{}", rec.pixel, rec.size).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;

    let adj_path = dir.join("adjacency.csv");
    let file = std::fs::File::create(&adj_path)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", adj_path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "su_a,su_b").map_err(|e| Error::Data(e.to_string()))?;
    for &(a, b) in graph.edges() {
        writeln!(w, "{a},{b}").map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

pub fn read_subset_pixel_ids(path: &Path) -> Result<Vec<i64>> {
    let mut reader = open_reader(path)?;
    let headers: Vec<String> =
        reader.headers().map_err(|e| Error::Data(e.to_string()))?.iter().map(String::from).collect();
    let c = headers
        .iter()
        .position(|h| h == "pixel_id" || h == "id")
        .ok_or_else(|| Error::Data(format!("{}: need a pixel_id column", path.display())))?;
    let mut ids = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        ids.push(parse_field::<i64>(&record[c], "pixel_id", row)?);
    }
    Ok(ids)
}
