//! Single runs and parameter sweeps producing CSV rows.

use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::hec::keep_count;
use crate::hyperprior::QuantMode;
use crate::ingest::ingest;
use crate::metrics::{cbr_for, QualityReport};
use crate::model::SystemModel;
use crate::pipeline::{forward, PipelineSettings, RelayLinks};
use crate::rng::derive_seed;
use crate::synthetic::synthetic_groups;
use crate::tensor::ImageBatch;

/// Nine significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        x.to_string()
    }
}

/// Rounds through [`fmt_sig`], i.e. the value a CSV reader sees.
pub fn round_sig(x: f64) -> f64 {
    fmt_sig(x).parse().unwrap_or(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Transmit power per hop in dBm.
    Power,
    /// Target average SNR of the source→relay hop in dB.
    Snr,
    V1,
    V2,
    /// Target channel bandwidth ratio; sets `v1`.
    Cbr,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Power => "P",
            Axis::Snr => "SNR",
            Axis::V1 => "v1",
            Axis::V2 => "v2",
            Axis::Cbr => "CBR",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p" | "power" => Ok(Axis::Power),
            "snr" => Ok(Axis::Snr),
            "v1" => Ok(Axis::V1),
            "v2" => Ok(Axis::V2),
            "cbr" => Ok(Axis::Cbr),
            _ => Err(Error::Argument(format!("unknown sweep axis {s:?}; expected P, SNR, v1, v2 or CBR"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Trial,
    Summary,
}

/// One CSV row. Trial rows leave the `*_std` columns empty; summary rows
/// leave `trial` and `seed` empty and hold trial means elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub kind: RowKind,
    pub axis: String,
    pub axis_value: f64,
    pub trial: Option<usize>,
    pub seed: Option<u64>,
    pub n_images: usize,
    pub height: usize,
    pub width: usize,
    pub power_dbm: f64,
    pub v1: f64,
    pub v2: f64,
    pub cbr: f64,
    pub snr_sr_db: f64,
    pub snr_rd_db: f64,
    pub psnr_db: f64,
    pub psnr_std_db: Option<f64>,
    pub ms_ssim: f64,
    pub ms_ssim_std: Option<f64>,
    /// A hop fell below the deep-fade floor (any trial, for summaries).
    pub deep_fade: bool,
}

pub const CSV_COLUMNS: &[&str] = &[
    "kind",
    "axis",
    "axis_value",
    "trial",
    "seed",
    "n_images",
    "height",
    "width",
    "power_dbm",
    "v1",
    "v2",
    "cbr",
    "snr_sr_db",
    "snr_rd_db",
    "psnr_db",
    "psnr_std_db",
    "ms_ssim",
    "ms_ssim_std",
    "deep_fade",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl ExperimentRow {
    fn record(&self) -> Vec<String> {
        vec![
            match self.kind {
                RowKind::Trial => "trial".into(),
                RowKind::Summary => "summary".into(),
            },
            self.axis.clone(),
            fmt_sig(self.axis_value),
            opt(self.trial),
            opt(self.seed),
            self.n_images.to_string(),
            self.height.to_string(),
            self.width.to_string(),
            fmt_sig(self.power_dbm),
            fmt_sig(self.v1),
            fmt_sig(self.v2),
            fmt_sig(self.cbr),
            fmt_sig(self.snr_sr_db),
            fmt_sig(self.snr_rd_db),
            fmt_sig(self.psnr_db),
            self.psnr_std_db.map_or(String::new(), fmt_sig),
            fmt_sig(self.ms_ssim),
            self.ms_ssim_std.map_or(String::new(), fmt_sig),
            u8::from(self.deep_fade).to_string(),
        ]
    }

    fn parse(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != CSV_COLUMNS.len() {
            return Err(Error::Data(format!("row has {} fields, expected {}", rec.len(), CSV_COLUMNS.len())));
        }
        let bad = |i: usize| Error::Data(format!("bad value {:?} in column {}", &rec[i], CSV_COLUMNS[i]));
        let num = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(i));
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(i));
        let opt_num = |i: usize| if rec[i].is_empty() { Ok(None) } else { num(i).map(Some) };
        let opt_int = |i: usize| if rec[i].is_empty() { Ok(None) } else { int(i).map(Some) };
        Ok(Self {
            kind: match &rec[0] {
                "trial" => RowKind::Trial,
                "summary" => RowKind::Summary,
                _ => return Err(bad(0)),
            },
            axis: rec[1].to_string(),
            axis_value: num(2)?,
            trial: opt_int(3)?.map(|t| t as usize),
            seed: opt_int(4)?,
            n_images: int(5)? as usize,
            height: int(6)? as usize,
            width: int(7)? as usize,
            power_dbm: num(8)?,
            v1: num(9)?,
            v2: num(10)?,
            cbr: num(11)?,
            snr_sr_db: num(12)?,
            snr_rd_db: num(13)?,
            psnr_db: num(14)?,
            psnr_std_db: opt_num(15)?,
            ms_ssim: num(16)?,
            ms_ssim_std: opt_num(17)?,
            deep_fade: match &rec[18] {
                "0" => false,
                "1" => true,
                _ => return Err(bad(18)),
            },
        })
    }

    /// Every float rounded to what the CSV stores.
    pub fn rounded(&self) -> Self {
        Self {
            axis_value: round_sig(self.axis_value),
            power_dbm: round_sig(self.power_dbm),
            v1: round_sig(self.v1),
            v2: round_sig(self.v2),
            cbr: round_sig(self.cbr),
            snr_sr_db: round_sig(self.snr_sr_db),
            snr_rd_db: round_sig(self.snr_rd_db),
            psnr_db: round_sig(self.psnr_db),
            psnr_std_db: self.psnr_std_db.map(round_sig),
            ms_ssim: round_sig(self.ms_ssim),
            ms_ssim_std: self.ms_ssim_std.map(round_sig),
            ..self.clone()
        }
    }
}

pub fn write_csv<W: Write>(rows: &[ExperimentRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in rows {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<ExperimentRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS.iter().copied()) {
        return Err(Error::Data("unexpected CSV header".into()));
    }
    rdr.records().map(|rec| ExperimentRow::parse(&rec?)).collect()
}

/// Operating point of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunPoint {
    pub power_dbm: f64,
    pub v1: f64,
    pub v2: f64,
}

impl RunPoint {
    pub fn from_config(config: &SystemConfig) -> Self {
        Self { power_dbm: config.power_dbm, v1: config.v1, v2: config.v2 }
    }
}

/// Groups from `paths.data_dir`, or synthetic groups when none is set.
pub fn load_groups(config: &SystemConfig) -> Result<Vec<ImageBatch<f64>>> {
    let a = config.arch();
    match &config.data_dir {
        Some(dir) => ingest(dir, a.image_height, a.image_width, a.n_images),
        None => synthetic_groups(config.synthetic_groups, a.n_images, a.image_height, a.image_width, config.seed),
    }
}

fn check_model(model: &SystemModel<f64>, config: &SystemConfig) -> Result<()> {
    if model.arch != config.arch() {
        return Err(Error::Config("checkpoint architecture does not match the configuration".into()));
    }
    Ok(())
}

/// One transmission of `batch` through both hops at `point` with test-time
/// quantization. A deep fade flags the row; metrics use whatever arrived.
pub fn run_pipeline(
    model: &SystemModel<f64>,
    batch: &ImageBatch<f64>,
    config: &SystemConfig,
    point: RunPoint,
    seed: u64,
) -> Result<ExperimentRow> {
    check_model(model, config)?;
    let links = config.links_at(point.power_dbm)?;
    run_with_links(model, batch, Some(links), point, seed)
}

/// [`run_pipeline`] with explicit links; `None` bypasses both channels.
pub fn run_with_links(
    model: &SystemModel<f64>,
    batch: &ImageBatch<f64>,
    links: Option<RelayLinks>,
    point: RunPoint,
    seed: u64,
) -> Result<ExperimentRow> {
    let settings = PipelineSettings { v1: point.v1, v2: point.v2, quant: QuantMode::Test, links };
    let trace = forward(model, batch, &settings, seed)?;
    let (k1, k2) = trace.payload_sizes();
    let report = QualityReport::evaluate(batch, &trace.recon_batch()?, k1)?;
    let snr = |link: Option<&crate::channel::LinkParams>, k: usize| match link {
        Some(l) if k > 0 => l.average_snr_db(k),
        Some(_) => f64::NAN,
        None => f64::INFINITY,
    };
    Ok(ExperimentRow {
        kind: RowKind::Trial,
        axis: "none".into(),
        axis_value: 0.0,
        trial: None,
        seed: Some(seed),
        n_images: batch.len(),
        height: batch.height(),
        width: batch.width(),
        power_dbm: point.power_dbm,
        v1: point.v1,
        v2: point.v2,
        cbr: report.cbr,
        snr_sr_db: snr(links.as_ref().map(|l| &l.source_relay), k1),
        snr_rd_db: snr(links.as_ref().map(|l| &l.relay_destination), k2),
        psnr_db: report.psnr,
        psnr_std_db: None,
        ms_ssim: report.ms_ssim,
        ms_ssim_std: None,
        deep_fade: trace.deep_fade(),
    })
}

/// Maps an axis value to an operating point around the configured one.
pub fn point_for(config: &SystemConfig, axis: Axis, value: f64) -> Result<RunPoint> {
    let mut p = RunPoint::from_config(config);
    let a = config.arch();
    let (c, h, w) = a.merged_shape();
    let l = c * h * w;
    match axis {
        Axis::Power => p.power_dbm = value,
        Axis::V1 => p.v1 = value,
        Axis::V2 => p.v2 = value,
        Axis::Snr => {
            // average SNR = P/K · d^-a / noise, solved for P
            let k = keep_count(p.v1, l).max(1) as f64;
            let path = config.path_loss * 10.0 * config.sr.distance_m.log10();
            p.power_dbm = value + config.sr.noise_dbm + 10.0 * k.log10() + path;
        }
        Axis::Cbr => {
            let full = cbr_for(l, a.n_images, a.image_height, a.image_width);
            if !(value > 0.0 && value <= full) {
                return Err(Error::Argument(format!("CBR {value} outside (0, {full}] for this geometry")));
            }
            p.v1 = 1.0 - value / full;
        }
    }
    if !(0.0..1.0).contains(&p.v1) || !(0.0..1.0).contains(&p.v2) {
        return Err(Error::Argument(format!("rates v1 = {}, v2 = {} must lie in [0, 1)", p.v1, p.v2)));
    }
    Ok(p)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `trials` runs per axis value, then one summary row per value. Trial `t`
/// transmits group `t mod groups.len()`; its seed derives from
/// `(config.seed, point index, t)`.
pub fn sweep(
    model: &SystemModel<f64>,
    groups: &[ImageBatch<f64>],
    config: &SystemConfig,
    axis: Axis,
    values: &[f64],
    trials: usize,
) -> Result<Vec<ExperimentRow>> {
    check_model(model, config)?;
    if groups.is_empty() || values.is_empty() || trials == 0 {
        return Err(Error::Argument("sweep needs data, at least one axis value and one trial".into()));
    }
    let points = values.iter().map(|&v| point_for(config, axis, v)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|i| (0..trials).map(move |t| (i, t))).collect();
    let mut rows = jobs
        .par_iter()
        .map(|&(i, t)| {
            let seed = derive_seed(config.seed, &[i as u64, t as u64]);
            let mut row = run_pipeline(model, &groups[t % groups.len()], config, points[i], seed)?;
            row.axis = axis.name().to_string();
            row.axis_value = values[i];
            row.trial = Some(t);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<ExperimentRow> = rows
        .chunks(trials)
        .map(|chunk| {
            let col = |f: fn(&ExperimentRow) -> f64| chunk.iter().map(f).collect::<Vec<_>>();
            let (psnr, psnr_std) = mean_std(&col(|r| r.psnr_db));
            let (ssim, ssim_std) = mean_std(&col(|r| r.ms_ssim));
            ExperimentRow {
                kind: RowKind::Summary,
                trial: None,
                seed: None,
                cbr: mean_std(&col(|r| r.cbr)).0,
                snr_sr_db: mean_std(&col(|r| r.snr_sr_db)).0,
                snr_rd_db: mean_std(&col(|r| r.snr_rd_db)).0,
                psnr_db: psnr,
                psnr_std_db: Some(psnr_std),
                ms_ssim: ssim,
                ms_ssim_std: Some(ssim_std),
                deep_fade: chunk.iter().any(|r| r.deep_fade),
                ..chunk[0].clone()
            }
        })
        .collect();
    rows.extend(summaries);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchScale;
    use crate::training::{init_model, train, TrainConfig};

    fn tiny_config() -> SystemConfig {
        let mut c = SystemConfig { scale: ArchScale::Tiny, synthetic_groups: 2, ..SystemConfig::default() };
        c.seed = 5;
        c
    }

    fn trained_tiny(c: &SystemConfig) -> SystemModel<f64> {
        let mut model = init_model(&c.arch(), 1).unwrap();
        let data = load_groups(c).unwrap();
        let tc = TrainConfig { lambda: 1e-5, learning_rate: 2e-2, epochs: 30, seed: 2, ..TrainConfig::default() };
        train(&mut model, &data, &tc).unwrap();
        model
    }

    #[test]
    fn fmt_sig_keeps_nine_digits() {
        assert_eq!(fmt_sig(0.125), "1.25000000e-1");
        assert_eq!(fmt_sig(123456789.4), "1.23456789e8");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333);
        assert!(round_sig(f64::NAN).is_nan());
    }

    #[test]
    fn axis_names_parse() {
        for a in [Axis::Power, Axis::Snr, Axis::V1, Axis::V2, Axis::Cbr] {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        assert!("rho".parse::<Axis>().is_err());
    }

    #[test]
    fn points_follow_axis() {
        let c = tiny_config();
        assert_eq!(point_for(&c, Axis::Power, 10.0).unwrap().power_dbm, 10.0);
        assert!(point_for(&c, Axis::V2, 1.0).is_err());
        // solving for power and evaluating the SNR again round-trips
        let p = point_for(&c, Axis::Snr, 12.0).unwrap();
        let (ch, h, w) = c.arch().merged_shape();
        let link = c.links_at(p.power_dbm).unwrap().source_relay;
        assert!((link.average_snr_db(ch * h * w) - 12.0).abs() < 1e-9);
        let a = c.arch();
        let full = cbr_for(ch * h * w, a.n_images, a.image_height, a.image_width);
        let q = point_for(&c, Axis::Cbr, full * 0.4).unwrap();
        assert!((q.v1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn sweep_counts_rows_and_roundtrips() {
        let c = tiny_config();
        let model = init_model(&c.arch(), 3).unwrap();
        let groups = load_groups(&c).unwrap();
        let rows = sweep(&model, &groups, &c, Axis::Power, &[10.0, 20.0, 30.0, 40.0], 5).unwrap();
        assert_eq!(rows.len(), 24);
        assert!(rows[..20].iter().all(|r| r.kind == RowKind::Trial));
        assert!(rows[20..].iter().all(|r| r.kind == RowKind::Summary && r.psnr_std_db.is_some()));
        assert_eq!(rows[7].axis_value, 20.0);
        assert_eq!(rows[7].trial, Some(2));

        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rows.iter().map(ExperimentRow::rounded).collect::<Vec<_>>());
        let mut again = Vec::new();
        write_csv(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn runs_are_deterministic_and_flag_mismatch() {
        let c = tiny_config();
        let model = init_model(&c.arch(), 3).unwrap();
        let groups = load_groups(&c).unwrap();
        let p = RunPoint::from_config(&c);
        let a = run_pipeline(&model, &groups[0], &c, p, 9).unwrap();
        let b = run_pipeline(&model, &groups[0], &c, p, 9).unwrap();
        assert_eq!(a.rounded(), b.rounded());
        let other = SystemConfig { n_images: 3, ..c.clone() };
        assert!(matches!(run_pipeline(&model, &groups[0], &other, p, 9), Err(Error::Config(_))));
    }

    #[test]
    fn transparent_channel_matches_bypass() {
        let mut c = tiny_config();
        c.sr.distance_m = 1.0;
        c.rd.distance_m = 1.0;
        let model = trained_tiny(&c);
        let groups = load_groups(&c).unwrap();
        let p = RunPoint { power_dbm: 90.0, v1: 0.0, v2: 0.0 };
        let bypass = run_with_links(&model, &groups[0], None, p, 4).unwrap();
        let noisy = run_pipeline(&model, &groups[0], &c, p, 4).unwrap();
        assert!(bypass.psnr_db.is_finite());
        assert!(!noisy.deep_fade);
        assert!((bypass.psnr_db - noisy.psnr_db).abs() < 0.01, "{} vs {}", bypass.psnr_db, noisy.psnr_db);
    }

    #[test]
    fn psnr_does_not_rise_with_v2_on_transparent_channel() {
        let mut c = tiny_config();
        c.sr.distance_m = 1.0;
        c.rd.distance_m = 1.0;
        c.power_dbm = 90.0;
        let model = trained_tiny(&c);
        let groups = load_groups(&c).unwrap();
        let rows = sweep(&model, &groups, &c, Axis::V2, &[0.0, 0.3, 0.6, 0.9], 2).unwrap();
        let means: Vec<f64> = rows.iter().filter(|r| r.kind == RowKind::Summary).map(|r| r.psnr_db).collect();
        for w in means.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "{means:?}");
        }
    }
}
