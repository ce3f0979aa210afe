use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use stealthy_core::gaussian::{empirical_mode_power, sample_field as sample_fields, sample_one, GaussianSpec};
use stealthy_core::lattice::TorusGeometry;
use stealthy_core::points::{PointConfiguration, StealthCertificate, StealthyGenerator};
use stealthy_core::report::{Constants, Predicate, Report, Table};
use stealthy_core::rigidity::{
    ecf_from_outside, invert_ecf_to_points, planted_trials, reconstruct_field_inside, recover_inside_moments,
    BallSplit, EcfOptions, PlantedSetup, WindowSplit,
};
use stealthy_core::stats::{
    anticoncentration_audit, check_zero_variance, find_largest_hole, hole_bound, variance_decay_fit,
    variance_of_linear_statistic,
};
use stealthy_core::structure::{Family, GapRegion, StructureFunction};
use stealthy_core::testfn::{anticonc_phi, monomial_window, rigidity_phi, BumpPair, TestFunction};
use stealthy_core::Error;

use crate::Format;

pub struct Context {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
}

pub enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) => Failure::Usage(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

pub struct Outcome {
    pub report: Report,
    pub tables: Vec<(String, Table)>,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn config_value<T: Serialize>(ctx: &Context, params: &T) -> Value {
    let mut v = serde_json::to_value(params).unwrap_or(Value::Null);
    if let Value::Object(map) = &mut v {
        map.insert("seed".into(), json!(ctx.seed));
    }
    v
}

fn constants(d: usize) -> Option<Constants> {
    if (1..=3).contains(&d) {
        Constants::for_dimension(d).ok()
    } else {
        None
    }
}

fn out_path(ctx: &Context, name: &str) -> Result<Option<PathBuf>, Failure> {
    let Some(dir) = &ctx.out else { return Ok(None) };
    std::fs::create_dir_all(dir).map_err(|e| Failure::Run(format!("{}: {e}", dir.display())))?;
    Ok(Some(dir.join(name)))
}

fn config_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

/// Structure-function parameters shared by the field commands.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Sites per axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_length: Option<f64>,
    /// stealthy_flat, gs_shifted_cube, fast_decay, power_law, bragg_lattice or constant.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
}

impl StructureArgs {
    fn geometry(&self) -> Result<TorusGeometry, Failure> {
        let n = self.n.unwrap_or(64);
        Ok(TorusGeometry::new(self.d.unwrap_or(1), n, self.box_length.unwrap_or(n as f64))?)
    }

    fn family(&self, default: &str) -> Result<Family, Failure> {
        let need = |v: Option<f64>, k: &str| v.ok_or_else(|| usage(format!("family needs {k}")));
        Ok(match self.family.as_deref().unwrap_or(default) {
            "stealthy_flat" => Family::StealthyFlat { b: self.b.unwrap_or(0.5) },
            "gs_shifted_cube" => Family::GsShiftedCube {
                center: self.center.clone().ok_or_else(|| usage("gs_shifted_cube needs center"))?,
                half_width: need(self.half_width, "half_width")?,
            },
            "fast_decay" => Family::FastDecay {
                exponent: self.exponent.unwrap_or(1.0),
                cutoff: self.cutoff.unwrap_or(1.0),
            },
            "power_law" => Family::PowerLaw {
                exponent: self.exponent.unwrap_or(2.0),
                cutoff: self.cutoff.unwrap_or(1.0),
            },
            "bragg_lattice" => Family::BraggLattice {
                period: self.period.ok_or_else(|| usage("bragg_lattice needs period"))?,
            },
            "constant" => Family::Constant { value: self.value.unwrap_or(1.0) },
            other => return Err(usage(format!("unknown family {other}"))),
        })
    }

    fn build(&self, default: &str) -> Result<StructureFunction, Failure> {
        Ok(StructureFunction::from_family(self.geometry()?, &self.family(default)?, None)?)
    }
}

/// Point-set source: files, or freshly generated stealthy configurations.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointArgs {
    /// Point CSV files; when absent configurations are generated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    /// Points per configuration.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_length: Option<f64>,
    /// Gap radius.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub configs: Option<usize>,
}

impl PointArgs {
    fn load(&self, seed: u64) -> Result<Vec<PointConfiguration>, Failure> {
        if let Some(paths) = &self.points {
            return paths
                .iter()
                .map(|p| PointConfiguration::load_csv(p).map_err(Failure::from))
                .collect();
        }
        let d = self.d.unwrap_or(1);
        let count = self.count.unwrap_or(64);
        let l = self.box_length.unwrap_or(count as f64);
        let gap = GapRegion::ball_for_points(d, l, self.b.unwrap_or(0.5))?;
        (0..self.configs.unwrap_or(1))
            .into_par_iter()
            .map(|i| StealthyGenerator::new(count, gap.clone()).generate(config_seed(seed, i)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(Failure::from)
    }
}

macro_rules! params {
    ($(#[$meta:meta])* $name:ident { $($(#[$fm:meta])* $field:ident : $ty:ty),* $(,)? } $(flatten $fl:ident : $ft:ty)?) => {
        $(#[$meta])*
        #[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
        #[command(allow_negative_numbers = true)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                $(#[$fm])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
            $(
                #[command(flatten)]
                #[serde(flatten)]
                pub $fl: $ft,
            )?
        }
    };
}

params!(SampleField {
    /// Number of realizations.
    count: usize,
    /// Compare the empirical mode power with S.
    check_spectrum: bool,
} flatten structure: StructureArgs);

pub fn sample_field(ctx: &Context, p: SampleField) -> Result<Outcome, Failure> {
    let s = p.structure.build("stealthy_flat")?;
    let g = *s.geometry();
    let count = p.count.unwrap_or(1);
    let fields = sample_fields(&GaussianSpec::new(s.clone(), ctx.seed), count)?;
    let max_gap_residual = fields.iter().map(|f| f.gap_residual(s.gap())).collect::<Result<Vec<_>, _>>()?;
    let max_gap_residual = max_gap_residual.into_iter().fold(0.0, f64::max);
    let mut predicates = vec![Predicate::at_most("masked_amplitude", max_gap_residual, 1e-10)];
    let mut tables = Vec::new();
    let mut results = json!({ "count": count, "max_masked_amplitude": max_gap_residual });
    if p.check_spectrum.unwrap_or(false) && count > 1 {
        let power = empirical_mode_power(&fields)?;
        let mut table = Table::new(&["mode", "wavenumber", "s", "empirical"]);
        let mut worst: f64 = 0.0;
        let mut masked: f64 = 0.0;
        for (i, (&e, &sv)) in power.iter().zip(s.values()).enumerate() {
            table.push(vec![i as f64, g.wavenumber(i), sv, e]);
            if s.gap().contains(i) {
                masked = masked.max(e);
            } else if sv > 0.0 {
                worst = worst.max((e - sv).abs() / sv);
            }
        }
        let tol = 5.0 / (count as f64).sqrt();
        predicates.push(Predicate::at_most("unmasked_relative_power_error", worst, tol));
        predicates.push(Predicate::at_most("masked_power", masked, 1e-10));
        results["max_relative_power_error"] = json!(worst);
        results["max_masked_power"] = json!(masked);
        tables.push(("spectrum".into(), table));
    }
    if ctx.out.is_some() {
        for f in &fields {
            if matches!(ctx.format, Format::Json | Format::Both) {
                if let Some(path) = out_path(ctx, &format!("field_{:05}.bin", f.index))? {
                    f.save_binary(&path)?;
                }
            }
            if matches!(ctx.format, Format::Csv | Format::Both) {
                if let Some(path) = out_path(ctx, &format!("field_{:05}.csv", f.index))? {
                    f.write_csv(std::fs::File::create(&path).map_err(|e| Failure::Run(e.to_string()))?)?;
                }
            }
        }
    }
    let report = Report::new("sample-field", config_value(ctx, &p), None, predicates, results);
    Ok(Outcome { report, tables })
}

params!(GenPoints {} flatten source: PointArgs);

pub fn gen_points(ctx: &Context, p: GenPoints) -> Result<Outcome, Failure> {
    if p.source.points.is_some() {
        return Err(usage("gen-points does not read point files"));
    }
    let configs = p.source.load(ctx.seed)?;
    let mut table = Table::new(&["config", "energy", "tolerance", "iterations", "restarts"]);
    let mut worst: f64 = 0.0;
    for (i, cfg) in configs.iter().enumerate() {
        let cert = cfg.certificate().ok_or(Error::CertificateMissing)?;
        worst = worst.max(cert.energy / cert.tolerance);
        table.push(vec![i as f64, cert.energy, cert.tolerance, cert.iterations as f64, cert.restarts as f64]);
        if let Some(path) = out_path(ctx, &format!("points_{i:05}.csv"))? {
            cfg.save_csv(&path)?;
        }
    }
    let d = configs.first().map(|c| c.d()).unwrap_or(1);
    let report = Report::new(
        "gen-points",
        config_value(ctx, &p),
        constants(d),
        vec![Predicate::at_most("energy_over_tolerance", worst, 1.0)],
        json!({ "configs": configs.len(), "energies": table.rows.iter().map(|r| r[1]).collect::<Vec<_>>() }),
    );
    Ok(Outcome { report, tables: vec![("energies".into(), table)] })
}

params!(VerifyLinstat {
    /// field or points.
    target: String,
    /// anticonc or rigidity.
    test: String,
    /// Scale of the anti-concentration test function.
    b_test: f64,
    #[arg(value_delimiter = ',')]
    theta: Vec<f64>,
    #[arg(value_delimiter = ',')]
    mu: Vec<f64>,
    beta: f64,
    /// Largest admissible variance for field targets.
    variance_tolerance: f64,
    /// Point files; when absent configurations are generated.
    #[arg(value_delimiter = ',')]
    points: Vec<PathBuf>,
    count: usize,
    /// Gap radius for generated configurations.
    gap: f64,
    configs: usize,
} flatten structure: StructureArgs);

fn linstat_test(p: &VerifyLinstat, d: usize, gap: Option<&GapRegion>) -> Result<TestFunction, Failure> {
    match p.test.as_deref().unwrap_or("anticonc") {
        "anticonc" => Ok(anticonc_phi(Arc::new(BumpPair::build(d)?), p.b_test.unwrap_or(0.5))?),
        "rigidity" => Ok(rigidity_phi(
            p.mu.clone().unwrap_or_else(|| vec![0.0; d]),
            p.theta.clone().unwrap_or_else(|| vec![0.0; d]),
            p.beta.unwrap_or(0.05),
            gap,
        )?),
        other => Err(usage(format!("unknown test {other}"))),
    }
}

pub fn verify_linstat(ctx: &Context, p: VerifyLinstat) -> Result<Outcome, Failure> {
    match p.target.as_deref().unwrap_or("points") {
        "field" => {
            let s = p.structure.build("stealthy_flat")?;
            let d = s.geometry().d();
            let phi = linstat_test(&p, d, None)?;
            let variance = variance_of_linear_statistic(&phi, &s)?;
            let tol = p.variance_tolerance.unwrap_or(0.0);
            let report = Report::new(
                "verify-linstat",
                config_value(ctx, &p),
                constants(d),
                vec![Predicate::at_most("variance", variance, tol)],
                json!({ "variance": variance }),
            );
            Ok(Outcome { report, tables: Vec::new() })
        }
        "points" => {
            let source = PointArgs {
                points: p.points.clone(),
                d: p.structure.d,
                count: p.count,
                box_length: p.structure.box_length,
                b: p.gap,
                configs: p.configs,
            };
            let configs = source.load(ctx.seed)?;
            let d = configs.first().map(|c| c.d()).ok_or(Error::EmptyConfiguration)?;
            let mut table = Table::new(&["config", "re", "im", "expected", "deviation", "tolerance"]);
            let mut worst: f64 = 0.0;
            for (i, cfg) in configs.iter().enumerate() {
                let gap = cfg.certificate().map(|c| c.gap.clone());
                let phi = linstat_test(&p, d, gap.as_ref())?;
                let check = check_zero_variance(&phi, cfg)?;
                worst = worst.max(check.deviation / check.tolerance.max(f64::MIN_POSITIVE));
                table.push(vec![i as f64, check.value.re, check.value.im, check.expected, check.deviation, check.tolerance]);
            }
            let report = Report::new(
                "verify-linstat",
                config_value(ctx, &p),
                constants(d),
                vec![Predicate::at_most("deviation_over_tolerance", worst, 1.0)],
                json!({ "configs": configs.len(), "worst_ratio": worst }),
            );
            Ok(Outcome { report, tables: vec![("linstat".into(), table)] })
        }
        other => Err(usage(format!("unknown target {other}"))),
    }
}

params!(AuditAnticonc {
    /// Scale of the audit; defaults to the certified gap radius.
    b_audit: f64,
} flatten source: PointArgs);

pub fn audit_anticonc(ctx: &Context, p: AuditAnticonc) -> Result<Outcome, Failure> {
    let configs = p.source.load(ctx.seed)?;
    let d = configs.first().map(|c| c.d()).ok_or(Error::EmptyConfiguration)?;
    let pair = BumpPair::build(d)?;
    let mut table = Table::new(&["config", "max_count", "bound", "cube_side", "pitch"]);
    let mut worst: f64 = 0.0;
    for (i, cfg) in configs.iter().enumerate() {
        let b = match p.b_audit {
            Some(b) => b,
            None => cfg
                .certificate()
                .and_then(|c| c.gap_radius)
                .ok_or(Error::CertificateMissing)?,
        };
        let audit = anticoncentration_audit(cfg, b, &pair)?;
        worst = worst.max(audit.max_count as f64 / audit.bound);
        table.push(vec![i as f64, audit.max_count as f64, audit.bound, audit.cube_side, audit.pitch]);
    }
    let report = Report::new(
        "audit-anticonc",
        config_value(ctx, &p),
        constants(d),
        vec![Predicate::at_most("count_over_bound", worst, 1.0)],
        json!({ "configs": configs.len(), "worst_ratio": worst }),
    );
    Ok(Outcome { report, tables: vec![("audit".into(), table)] })
}

params!(FindHoles {
    /// Grid refinement for d >= 2.
    resolution: usize,
} flatten source: PointArgs);

pub fn find_holes(ctx: &Context, p: FindHoles) -> Result<Outcome, Failure> {
    let configs = p.source.load(ctx.seed)?;
    let d = configs.first().map(|c| c.d()).ok_or(Error::EmptyConfiguration)?;
    let pair = BumpPair::build(d)?;
    let mut table = Table::new(&["config", "radius", "r0", "approximate"]);
    let mut verified = 0usize;
    let mut worst: f64 = 0.0;
    let mut holes = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let hole = find_largest_hole(cfg, p.resolution.unwrap_or(8))?;
        if hole.verify(cfg) {
            verified += 1;
        }
        let r0 = match cfg.certificate().and_then(|c| c.gap_radius) {
            Some(b) => hole_bound(b, &pair)?.r0,
            None => f64::NAN,
        };
        if r0.is_finite() {
            worst = worst.max(hole.radius / r0);
        }
        table.push(vec![i as f64, hole.radius, r0, f64::from(u8::from(hole.approximate))]);
        holes.push(hole);
    }
    let report = Report::new(
        "find-holes",
        config_value(ctx, &p),
        constants(d),
        vec![
            Predicate::at_least("verified_holes", verified as f64, configs.len() as f64),
            Predicate::at_most("radius_over_r0", worst, 1.0),
        ],
        json!({ "holes": holes }),
    );
    Ok(Outcome { report, tables: vec![("holes".into(), table)] })
}

params!(HoleBoundArgs {
    d: usize,
    b: f64,
});

pub fn hole_bound_cmd(ctx: &Context, p: HoleBoundArgs) -> Result<Outcome, Failure> {
    let d = p.d.unwrap_or(1);
    let pair = BumpPair::build(d)?;
    let bound = hole_bound(p.b.unwrap_or(1.0), &pair)?;
    let report = Report::new(
        "hole-bound",
        config_value(ctx, &p),
        constants(d),
        Vec::new(),
        serde_json::to_value(&bound).map_err(|e| Failure::Run(e.to_string()))?,
    );
    Ok(Outcome { report, tables: Vec::new() })
}

params!(ReconstructField {
    /// Erased site indices.
    #[arg(value_delimiter = ',')]
    inside: Vec<usize>,
    /// Number of realizations to erase and rebuild.
    trials: usize,
    tolerance: f64,
} flatten structure: StructureArgs);

pub fn reconstruct_field(ctx: &Context, p: ReconstructField) -> Result<Outcome, Failure> {
    let s = p.structure.build("stealthy_flat")?;
    let inside = p.inside.clone().ok_or_else(|| usage("reconstruct-field needs inside"))?;
    let split = WindowSplit::new(inside);
    let spec = GaussianSpec::new(s.clone(), ctx.seed);
    let mut table = Table::new(&["trial", "max_error", "residual", "sigma_min"]);
    let mut worst: f64 = 0.0;
    let mut last = None;
    for t in 0..p.trials.unwrap_or(1) {
        let field = sample_one(&spec, t as u64)?;
        let rec = reconstruct_field_inside(&field, s.gap(), &split)?;
        let err = rec
            .inside
            .iter()
            .zip(&rec.values)
            .map(|(&i, v)| (v - field.values[i]).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
        table.push(vec![t as f64, err, rec.residual, rec.sigma_min]);
        last = Some(rec);
    }
    let report = Report::new(
        "reconstruct-field",
        config_value(ctx, &p),
        None,
        vec![Predicate::at_most("max_error", worst, p.tolerance.unwrap_or(1e-8))],
        json!({ "max_error": worst, "last": last }),
    );
    Ok(Outcome { report, tables: vec![("reconstruction".into(), table)] })
}

params!(ReconstructPoints {
    /// A point file with a stealth certificate; when absent planted trials are run.
    points: PathBuf,
    /// Ball center for a point file.
    #[arg(value_delimiter = ',')]
    center: Vec<f64>,
    radius: f64,
    box_length: f64,
    density: f64,
    gap: f64,
    balls: usize,
    max_inside: usize,
    theta_max: f64,
    theta_count: usize,
    beta0: f64,
    configs: usize,
    position_tolerance: f64,
    honest_fraction: f64,
});

pub fn reconstruct_points(ctx: &Context, p: ReconstructPoints) -> Result<Outcome, Failure> {
    let tol = p.position_tolerance.unwrap_or(1e-4);
    if let Some(path) = &p.points {
        let cfg = PointConfiguration::load_csv(path)?;
        let cert: StealthCertificate = cfg.certificate().cloned().ok_or(Error::CertificateMissing)?;
        let center = p.center.clone().ok_or_else(|| usage("reconstruct-points needs center"))?;
        let radius = p.radius.ok_or_else(|| usage("reconstruct-points needs radius"))?;
        let (_, out) = cfg.split_ball(&center, radius);
        let outside = PointConfiguration::new(cfg.d(), cfg.box_length(), &out)?;
        let count = p.theta_count.unwrap_or(15);
        let step = p.theta_max.unwrap_or(0.7) / (count.max(2) - 1) as f64;
        let thetas: Vec<Vec<f64>> = (0..count).map(|m| vec![m as f64 * step]).collect();
        let ecf = ecf_from_outside(
            &outside,
            cfg.density(),
            &BallSplit { center: center.clone(), radius },
            &cert,
            &vec![0.0; cfg.d()],
            &thetas,
            &EcfOptions { beta0: p.beta0.unwrap_or(0.05), ..Default::default() },
        )?;
        let n = ecf.count_estimate().unwrap_or(0);
        let rec = invert_ecf_to_points(&ecf, n, None)?;
        let worst_bar = rec.error_bars.iter().cloned().fold(0.0, f64::max);
        if let Some(path) = out_path(ctx, "recovered.csv")? {
            PointConfiguration::new(cfg.d(), cfg.box_length(), &rec.positions)?.save_csv(&path)?;
        }
        let report = Report::new(
            "reconstruct-points",
            config_value(ctx, &p),
            constants(cfg.d()),
            vec![Predicate::at_most("max_error_bar", worst_bar, tol)],
            json!({ "count": n, "recovery": rec, "ecf_error_bars": ecf.error_bars }),
        );
        return Ok(Outcome { report, tables: Vec::new() });
    }
    let base = PlantedSetup::default();
    let setup = PlantedSetup {
        box_length: p.box_length.unwrap_or(base.box_length),
        density: p.density.unwrap_or(base.density),
        gap: p.gap.unwrap_or(base.gap),
        balls: p.balls.unwrap_or(base.balls),
        max_inside: p.max_inside.unwrap_or(base.max_inside),
        theta_max: p.theta_max.unwrap_or(base.theta_max),
        theta_count: p.theta_count.unwrap_or(base.theta_count),
        beta0: p.beta0.unwrap_or(base.beta0),
    };
    let batches: Vec<_> = (0..p.configs.unwrap_or(1))
        .into_par_iter()
        .map(|i| planted_trials(&setup, config_seed(ctx.seed, i)))
        .collect::<Result<_, _>>()?;
    let trials: Vec<_> = batches.into_iter().flatten().collect();
    let mut table = Table::new(&["trial", "inside", "max_error", "max_bar", "honest"]);
    let mut worst: f64 = 0.0;
    let mut honest = 0usize;
    for (i, t) in trials.iter().enumerate() {
        worst = worst.max(t.max_error);
        if t.honest && t.ecf_honest && t.failure.is_none() {
            honest += 1;
        }
        let bar = t.error_bars.iter().cloned().fold(0.0, f64::max);
        table.push(vec![i as f64, t.truth.len() as f64, t.max_error, bar, f64::from(u8::from(t.honest))]);
    }
    let fraction = honest as f64 / trials.len().max(1) as f64;
    let report = Report::new(
        "reconstruct-points",
        config_value(ctx, &p),
        constants(1),
        vec![
            Predicate::at_most("max_position_error", worst, tol),
            Predicate::at_least("honest_fraction", fraction, p.honest_fraction.unwrap_or(0.99)),
        ],
        json!({ "trials": trials.len(), "max_position_error": worst, "honest_fraction": fraction }),
    );
    Ok(Outcome { report, tables: vec![("trials".into(), table)] })
}

params!(VarianceDecay {
    /// anticonc or monomial.
    window: String,
    /// Scale of the anti-concentration window.
    b_window: f64,
    #[arg(value_delimiter = ',')]
    scales: Vec<f64>,
    /// Pass when the fitted slope is at most this value.
    max_slope: f64,
} flatten structure: StructureArgs);

pub fn variance_decay(ctx: &Context, p: VarianceDecay) -> Result<Outcome, Failure> {
    let s = p.structure.build("fast_decay")?;
    let d = s.geometry().d();
    let window = match p.window.as_deref().unwrap_or("anticonc") {
        "anticonc" => anticonc_phi(Arc::new(BumpPair::build(d)?), p.b_window.unwrap_or(4.0))?,
        "monomial" => monomial_window(vec![0; d], 1.0, 1.0)?,
        other => return Err(usage(format!("unknown window {other}"))),
    };
    let scales = p.scales.clone().unwrap_or_else(|| vec![8.0, 16.0, 32.0, 64.0]);
    let fit = variance_decay_fit(&s, &window, &scales)?;
    let mut table = Table::new(&["scale", "variance"]);
    for (l, v) in fit.scales.iter().zip(&fit.variances) {
        table.push(vec![*l, *v]);
    }
    let mut predicates = Vec::new();
    if let Some(max) = p.max_slope {
        predicates.push(Predicate::at_most("slope", fit.slope.unwrap_or(f64::NEG_INFINITY), max));
    }
    let report = Report::new(
        "variance-decay",
        config_value(ctx, &p),
        constants(d),
        predicates,
        serde_json::to_value(&fit).map_err(|e| Failure::Run(e.to_string()))?,
    );
    Ok(Outcome { report, tables: vec![("variance".into(), table)] })
}

params!(RecoverMoments {
    /// Ensemble size.
    count: usize,
    /// Half-width of the inside cube.
    inside_half_width: f64,
    /// Largest total order of the moments.
    max_order: u32,
    #[arg(value_delimiter = ',')]
    scales: Vec<f64>,
    /// Require the median error to fall strictly with the scale.
    expect_decreasing: bool,
} flatten structure: StructureArgs);

fn multi_indices(d: usize, max_order: u32) -> Vec<Vec<u32>> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<u32>| {
                let used: u32 = prefix.iter().sum();
                (0..=max_order - used).map(move |k| {
                    let mut v = prefix.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    out
}

pub fn recover_moments(ctx: &Context, p: RecoverMoments) -> Result<Outcome, Failure> {
    let s = p.structure.build("fast_decay")?;
    let d = s.geometry().d();
    let fields = sample_fields(&GaussianSpec::new(s, ctx.seed), p.count.unwrap_or(32))?;
    let orders = multi_indices(d, p.max_order.unwrap_or(2));
    let scales = p.scales.clone().unwrap_or_else(|| vec![8.0, 16.0, 32.0]);
    let estimates = recover_inside_moments(&fields, p.inside_half_width.unwrap_or(8.0), &orders, &scales)?;
    let mut table = Table::new(&["order", "scale", "median_error"]);
    let mut decreasing = 0usize;
    for (oi, k) in orders.iter().enumerate() {
        let row: Vec<f64> = estimates
            .iter()
            .filter(|e| &e.exponents == k)
            .map(|e| {
                table.push(vec![oi as f64, e.scale, e.median_error]);
                e.median_error
            })
            .collect();
        if row.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    let mut predicates = Vec::new();
    if p.expect_decreasing.unwrap_or(false) {
        predicates.push(Predicate::at_least("decreasing_orders", decreasing as f64, orders.len() as f64));
    }
    let summary: Vec<Value> = estimates
        .iter()
        .map(|e| json!({ "exponents": e.exponents, "scale": e.scale, "median_error": e.median_error }))
        .collect();
    let report = Report::new(
        "recover-moments",
        config_value(ctx, &p),
        constants(d),
        predicates,
        json!({ "orders": orders, "estimates": summary }),
    );
    Ok(Outcome { report, tables: vec![("moments".into(), table)] })
}
