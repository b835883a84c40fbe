//! Rate-distortion sweeps, Bjøntegaard deltas and corpus tables.
//!
//! CSV schema for curves: `image,variant,qp,bpp,psnr_db,sse,nrm_score,nrm_gap,lnrm`.
//! Infinite PSNR is written as `inf`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, EncoderConfig, RdoMode};
use crate::error::{Error, Result};
use crate::imageio::Frame;
use crate::metrics::{ExternalMetric, Metric};

pub const CURVE_HEADER: [&str; 9] = [
    "image",
    "variant",
    "qp",
    "bpp",
    "psnr_db",
    "sse",
    "nrm_score",
    "nrm_gap",
    "lnrm",
];
pub const REPORT_HEADER: [&str; 7] = [
    "image",
    "anchor",
    "variant",
    "column",
    "bd_rate_pct",
    "points_used",
    "restricted",
];
pub const DEFAULT_QPS: [i32; 5] = [25, 28, 31, 34, 37];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub qp: i32,
    /// Bits per pixel position (stream bits / (width * height)).
    pub bpp: f64,
    /// `f64::INFINITY` for a lossless reconstruction.
    pub psnr: f64,
    pub sse: f64,
    /// Metric value of the decoded frame.
    pub nrm_score: f64,
    /// `nrm_score` minus the metric value of the input.
    pub nrm_gap: f64,
    /// First-order prediction of `nrm_gap` from the input gradient.
    pub lnrm: f64,
}

/// Points sorted by rate, ascending.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub image: String,
    pub variant: String,
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(
        image: impl Into<String>,
        variant: impl Into<String>,
        mut points: Vec<RdPoint>,
    ) -> Self {
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp).then(b.qp.cmp(&a.qp)));
        RdCurve {
            image: image.into(),
            variant: variant.into(),
            points,
        }
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    pub fn id(&self) -> String {
        format!("{}/{}", self.image, self.variant)
    }
}

/// Distortion axis used by [`bd_rate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Psnr,
    Sse,
    NrmScore,
    NrmGap,
    Lnrm,
}

impl Column {
    pub const ALL: [Column; 5] = [
        Column::Psnr,
        Column::Sse,
        Column::NrmScore,
        Column::NrmGap,
        Column::Lnrm,
    ];

    pub fn get(self, p: &RdPoint) -> f64 {
        match self {
            Column::Psnr => p.psnr,
            Column::Sse => p.sse,
            Column::NrmScore => p.nrm_score,
            Column::NrmGap => p.nrm_gap,
            Column::Lnrm => p.lnrm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Column::Psnr => "psnr_db",
            Column::Sse => "sse",
            Column::NrmScore => "nrm_score",
            Column::NrmGap => "nrm_gap",
            Column::Lnrm => "lnrm",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" | "psnr_db" => Ok(Column::Psnr),
            "sse" => Ok(Column::Sse),
            "nrm_score" => Ok(Column::NrmScore),
            "nrm_gap" => Ok(Column::NrmGap),
            "lnrm" => Ok(Column::Lnrm),
            _ => Err(Error::Config(format!("unknown column {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BdRateReport {
    pub anchor: String,
    pub test: String,
    pub column: Column,
    /// Percent; negative means the test curve needs fewer bits.
    pub bd_rate: f64,
    /// Distortion interval the integral was taken over.
    pub interval: (f64, f64),
    /// Points that entered the anchor and test fits.
    pub points_used: (usize, usize),
    /// True when a fit had to drop points to get a monotone segment.
    pub restricted: bool,
    pub warnings: Vec<String>,
}

/// Encodes and decodes `frame` at every qp in `qps`.
///
/// `rdo_metric` drives the LNRM modes; its gradient is taken once and reused
/// across the sweep. `eval_metric` fills the `nrm_*` and `lnrm` columns and
/// has to be able to score arbitrary frames.
pub fn rd_sweep(
    frame: &Frame,
    rdo_metric: Option<&dyn Metric>,
    eval_metric: &dyn Metric,
    template: &EncoderConfig,
    qps: &[i32],
) -> Result<RdCurve> {
    let input = frame.to_float();
    let cached = match rdo_metric {
        Some(m) => Some(ExternalMetric::new(m.gradient(&input)?).bind(input.clone())?),
        None => None,
    };
    let eval_grad = eval_metric.gradient(&input)?;
    let base = eval_grad.base_score();
    let pixels = (frame.width() * frame.height()) as f64;

    let points = qps
        .iter()
        .map(|&qp| {
            let cfg = template.with_qp(qp);
            let enc = encode(frame, cached.as_ref().map(|m| m as &dyn Metric), &cfg)?;
            let decoded = decode(&enc.bitstream)?;
            if decoded != enc.reconstruction {
                return Err(Error::contract(
                    "decoder disagrees with encoder reconstruction",
                ));
            }
            let recon = decoded.to_float();
            let score = eval_metric.evaluate(&recon)?;
            Ok(RdPoint {
                qp,
                bpp: enc.report.total_bits as f64 / pixels,
                psnr: frame.psnr(&decoded)?,
                sse: enc.report.sse,
                nrm_score: score,
                nrm_gap: score - base,
                lnrm: eval_grad.directional_change(&input, &recon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RdCurve::new("", "", points))
}

/// A named encoder setting for corpus runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: EncoderConfig,
}

impl Variant {
    pub fn new(name: impl Into<String>, config: EncoderConfig) -> Self {
        Variant {
            name: name.into(),
            config,
        }
    }

    /// `sse`, `lnrm_a2`, `lnrm_a1`, `lnrm_a0.5`.
    pub fn standard_set() -> Vec<Variant> {
        let mut out = vec![Variant::new("sse", EncoderConfig::new(0, RdoMode::Sse))];
        for alpha in [2.0, 1.0, 0.5] {
            out.push(Variant::new(
                format!("lnrm_a{alpha}"),
                EncoderConfig::new(0, RdoMode::Lnrm { alpha }),
            ));
        }
        out
    }
}

/// Sweeps every image under every variant. The same metric steers the LNRM
/// variants and scores all of them. Output order is image-major, then
/// variant, regardless of scheduling.
pub fn sweep_corpus(
    images: &[(String, Frame)],
    variants: &[Variant],
    metric: &dyn Metric,
    qps: &[i32],
) -> Result<Vec<RdCurve>> {
    let jobs: Vec<(usize, usize)> = (0..images.len())
        .flat_map(|i| (0..variants.len()).map(move |v| (i, v)))
        .collect();
    jobs.par_iter()
        .map(|&(i, v)| {
            let (name, frame) = &images[i];
            let variant = &variants[v];
            let rdo_metric = match variant.config.mode {
                RdoMode::Sse => None,
                _ => Some(metric),
            };
            let mut curve = rd_sweep(frame, rdo_metric, metric, &variant.config, qps)?;
            curve.image.clone_from(name);
            curve.variant.clone_from(&variant.name);
            Ok(curve)
        })
        .collect()
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_owned()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str, line: u64) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Value(format!("line {line}: bad number {s:?}")))
}

pub fn write_curves_csv<W: Write>(curves: &[RdCurve], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CURVE_HEADER)?;
    for c in curves {
        for p in &c.points {
            w.write_record([
                c.image.clone(),
                c.variant.clone(),
                p.qp.to_string(),
                fmt_f64(p.bpp),
                fmt_f64(p.psnr),
                fmt_f64(p.sse),
                fmt_f64(p.nrm_score),
                fmt_f64(p.nrm_gap),
                fmt_f64(p.lnrm),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads curves back, grouped by `(image, variant)` in order of first
/// appearance.
pub fn read_curves_csv<R: Read>(input: R) -> Result<Vec<RdCurve>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CURVE_HEADER) {
        return Err(Error::Value(format!(
            "unexpected CSV header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<RdPoint>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let key = (rec[0].to_owned(), rec[1].to_owned());
        let qp = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::Value(format!("line {line}: bad qp {:?}", &rec[2])))?;
        let point = RdPoint {
            qp,
            bpp: parse_f64(&rec[3], line)?,
            psnr: parse_f64(&rec[4], line)?,
            sse: parse_f64(&rec[5], line)?,
            nrm_score: parse_f64(&rec[6], line)?,
            nrm_gap: parse_f64(&rec[7], line)?,
            lnrm: parse_f64(&rec[8], line)?,
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(point);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let points = groups.remove(&key).unwrap_or_default();
            RdCurve::new(key.0, key.1, points)
        })
        .collect())
}

/// Least-squares polynomial in a centred, scaled variable.
struct Fit {
    coeffs: Vec<f64>,
    shift: f64,
    scale: f64,
}

impl Fit {
    fn new(xs: &[f64], ys: &[f64], degree: usize) -> Result<Fit> {
        let n = xs.len();
        let shift = xs.iter().sum::<f64>() / n as f64;
        let scale = xs.iter().map(|x| (x - shift).abs()).fold(0.0, f64::max);
        if scale <= 0.0 {
            return Err(Error::Range("degenerate distortion range".into()));
        }
        let k = degree + 1;
        // Normal equations; the design matrix is tiny and well scaled.
        let mut a = vec![vec![0.0; k + 1]; k];
        for (&x, &y) in xs.iter().zip(ys) {
            let s = (x - shift) / scale;
            let pows: Vec<f64> = (0..k).map(|j| s.powi(j as i32)).collect();
            for r in 0..k {
                for c in 0..k {
                    a[r][c] += pows[r] * pows[c];
                }
                a[r][k] += pows[r] * y;
            }
        }
        for col in 0..k {
            let piv = (col..k)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap_or(col);
            a.swap(col, piv);
            if a[col][col].abs() < 1e-300 {
                return Err(Error::Range("singular fit".into()));
            }
            let pivot = a[col].clone();
            for (r, row) in a.iter_mut().enumerate() {
                if r != col {
                    let f = row[col] / pivot[col];
                    for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
        let coeffs = (0..k).map(|i| a[i][k] / a[i][i]).collect();
        Ok(Fit {
            coeffs,
            shift,
            scale,
        })
    }

    /// Integral over `[lo, hi]` in the original variable.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |x: f64| {
            let s = (x - self.shift) / self.scale;
            self.coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c * s.powi(j as i32 + 1) / (j + 1) as f64)
                .sum::<f64>()
        };
        self.scale * (anti(hi) - anti(lo))
    }
}

/// Longest run of consecutive points (in rate order) whose distortion is
/// strictly monotone in either direction.
fn monotone_run(ds: &[f64]) -> (usize, usize) {
    let n = ds.len();
    let mut best = (0, n.min(1));
    for dir in [1.0, -1.0] {
        let mut start = 0;
        for i in 1..=n {
            if i == n || (ds[i] - ds[i - 1]) * dir <= 0.0 {
                if i - start > best.1 - best.0 {
                    best = (start, i);
                }
                start = i;
            }
        }
    }
    best
}

struct Prepared {
    fit: Fit,
    lo: f64,
    hi: f64,
    used: usize,
}

fn prepare(
    curve: &RdCurve,
    column: Column,
    warnings: &mut Vec<String>,
) -> Result<(Prepared, bool)> {
    let finite: Vec<(f64, f64)> = curve
        .points
        .iter()
        .map(|p| (column.get(p), p.bpp))
        .filter(|(d, r)| d.is_finite() && r.is_finite() && *r > 0.0)
        .collect();
    if finite.len() < curve.points.len() {
        warnings.push(format!(
            "{}: {} non-finite point(s) excluded",
            curve.id(),
            curve.points.len() - finite.len()
        ));
    }
    if finite.len() < 4 {
        return Err(Error::Range(format!(
            "{}: {} usable points, need at least 4",
            curve.id(),
            finite.len()
        )));
    }
    let ds: Vec<f64> = finite.iter().map(|p| p.0).collect();
    let (a, b) = monotone_run(&ds);
    let restricted = b - a < finite.len();
    if restricted {
        warnings.push(format!(
            "{}: {} not monotone in rate; fit restricted to {} of {} points",
            curve.id(),
            column,
            b - a,
            finite.len()
        ));
    }
    let seg = &finite[a..b];
    if seg.len() < 2 {
        return Err(Error::Range(format!("{}: no monotone segment", curve.id())));
    }
    let xs: Vec<f64> = seg.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = seg.iter().map(|p| p.1.log10()).collect();
    let fit = Fit::new(&xs, &ys, (seg.len() - 1).min(3))?;
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((
        Prepared {
            fit,
            lo,
            hi,
            used: seg.len(),
        },
        restricted,
    ))
}

/// Bjøntegaard delta rate of `test` against `anchor` along `column`.
///
/// Each curve's `log10(bpp)` is fitted by a cubic in the distortion value and
/// the fits are averaged over the shared distortion interval. Points with a
/// non-finite distortion are dropped, and a curve whose distortion is not
/// monotone in rate is cut down to its longest monotone run; both are noted
/// in `warnings`.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve, column: Column) -> Result<BdRateReport> {
    let mut warnings = Vec::new();
    let (pa, ra) = prepare(anchor, column, &mut warnings)?;
    let (pt, rt) = prepare(test, column, &mut warnings)?;
    let lo = pa.lo.max(pt.lo);
    let hi = pa.hi.min(pt.hi);
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::Range(format!(
            "{} and {} do not overlap on {column}",
            anchor.id(),
            test.id()
        )));
    }
    let avg = (pt.fit.integral(lo, hi) - pa.fit.integral(lo, hi)) / (hi - lo);
    Ok(BdRateReport {
        anchor: anchor.id(),
        test: test.id(),
        column,
        bd_rate: 100.0 * (10f64.powf(avg) - 1.0),
        interval: (lo, hi),
        points_used: (pa.used, pt.used),
        restricted: ra || rt,
        warnings,
    })
}

/// Companion to [`bd_rate`] with the axes swapped: the mean difference in
/// `column` (test minus anchor) at equal rate, from cubic fits of the column
/// against `log10(bpp)` over the shared rate interval.
pub fn bd_quality(anchor: &RdCurve, test: &RdCurve, column: Column) -> Result<f64> {
    let fit = |c: &RdCurve| -> Result<(Fit, f64, f64)> {
        let pts: Vec<(f64, f64)> = c
            .points
            .iter()
            .map(|p| (p.bpp.log10(), column.get(p)))
            .filter(|(r, d)| r.is_finite() && d.is_finite())
            .collect();
        if pts.len() < 4 {
            return Err(Error::Range(format!(
                "{}: need at least 4 finite points",
                c.id()
            )));
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok((Fit::new(&xs, &ys, 3)?, lo, hi))
    };
    let (fa, la, ha) = fit(anchor)?;
    let (ft, lt, ht) = fit(test)?;
    let (lo, hi) = (la.max(lt), ha.min(ht));
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::Range(format!(
            "{} and {} share no rate range",
            anchor.id(),
            test.id()
        )));
    }
    Ok((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub image: String,
    pub anchor: String,
    pub variant: String,
    pub column: Column,
    pub bd_rate: f64,
    pub points_used: (usize, usize),
    pub restricted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation over images divided by `sqrt(n)`; 0 for one image.
    pub std_error: f64,
    pub images: usize,
    /// Images without a usable BD-rate (no distortion overlap).
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    /// Sorted by image, variant, column.
    pub rows: Vec<ReportRow>,
    pub aggregates: BTreeMap<(String, Column), Aggregate>,
}

impl CorpusReport {
    pub fn aggregate(&self, variant: &str, column: Column) -> Option<Aggregate> {
        self.aggregates.get(&(variant.to_owned(), column)).copied()
    }

    /// Per-image rows followed by `mean` and `stderr` rows per variant and column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.image.clone(),
                r.anchor.clone(),
                r.variant.clone(),
                r.column.to_string(),
                fmt_f64(r.bd_rate),
                format!("{}/{}", r.points_used.0, r.points_used.1),
                r.restricted.to_string(),
            ])?;
        }
        let anchor = self
            .rows
            .first()
            .map(|r| r.anchor.clone())
            .unwrap_or_default();
        for ((variant, column), agg) in &self.aggregates {
            for (label, v) in [("mean", agg.mean), ("stderr", agg.std_error)] {
                w.write_record([
                    label.to_owned(),
                    anchor.clone(),
                    variant.clone(),
                    column.to_string(),
                    fmt_f64(v),
                    format!("{}+{}", agg.images, agg.skipped),
                    String::new(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// BD-rates of every non-anchor variant against `anchor`, per image, plus
/// corpus mean and standard error. Input order does not affect the result.
pub fn report(curves: &[RdCurve], anchor: &str, columns: &[Column]) -> Result<CorpusReport> {
    let mut by_image: BTreeMap<&str, BTreeMap<&str, &RdCurve>> = BTreeMap::new();
    for c in curves {
        if by_image
            .entry(c.image.as_str())
            .or_default()
            .insert(c.variant.as_str(), c)
            .is_some()
        {
            return Err(Error::Value(format!("duplicate curve {}", c.id())));
        }
    }
    let mut rows = Vec::new();
    for (image, variants) in &by_image {
        let base = variants
            .get(anchor)
            .ok_or_else(|| Error::Value(format!("image {image} has no {anchor} curve")))?;
        for (variant, curve) in variants {
            if *variant == anchor {
                continue;
            }
            for &column in columns {
                // Curves that share no distortion range get a NaN row and
                // are left out of the aggregate.
                let row = match bd_rate(base, curve, column) {
                    Ok(r) => (r.bd_rate, r.points_used, r.restricted),
                    Err(Error::Range(_)) => (f64::NAN, (0, 0), true),
                    Err(e) => return Err(e),
                };
                rows.push(ReportRow {
                    image: (*image).to_owned(),
                    anchor: anchor.to_owned(),
                    variant: (*variant).to_owned(),
                    column,
                    bd_rate: row.0,
                    points_used: row.1,
                    restricted: row.2,
                });
            }
        }
    }
    let mut samples: BTreeMap<(String, Column), Vec<f64>> = BTreeMap::new();
    for r in &rows {
        samples
            .entry((r.variant.clone(), r.column))
            .or_default()
            .push(r.bd_rate);
    }
    let aggregates = samples
        .into_iter()
        .map(|(k, v)| {
            let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
            let mut agg = mean_stderr(&finite);
            agg.skipped = v.len() - finite.len();
            (k, agg)
        })
        .collect();
    Ok(CorpusReport { rows, aggregates })
}

pub fn mean_stderr(values: &[f64]) -> Aggregate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_error = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Aggregate {
        mean,
        std_error,
        images: n,
        skipped: 0,
    }
}
