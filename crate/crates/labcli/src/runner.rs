//! Runs the solve, analyze and verify pipeline described by a config and
//! collects one record per check.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use srlab::convex::{Exponent, PdhgOptions};
use srlab::geodesics::{ballbox_probe, solve_shortest, variational_flow, SolverOptions, Trajectory};
use srlab::interpdual::{duality_gap_cells, exponents, resample_cells, verify_interpolation_bound};
use srlab::regularity::{regularity_report, ExponentFit, SampledControl, DEFAULT_DELTA};
use srlab::spectral::{fourier_coeffs, partial_sum_error, weighted_sums, SeriesVerdict};
use srlab::variation::{endpoint_order, first_order_check, project_to_h, TestFunction};
use srlab::SrStructure;

use crate::config::ExperimentConfig;
use crate::report::Artifact;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Record {
    pub name: String,
    /// The acceptance criterion or module invariant this check implements.
    pub anchor: &'static str,
    pub measured: Option<f64>,
    pub expected: String,
    pub tolerance: Option<f64>,
    pub status: Status,
    pub note: Option<String>,
}

impl Record {
    fn check(name: String, anchor: &'static str, measured: f64, expected: &str, tol: Option<f64>, pass: bool) -> Self {
        Record {
            name,
            anchor,
            measured: Some(measured),
            expected: expected.to_string(),
            tolerance: tol,
            status: if pass { Status::Pass } else { Status::Fail },
            note: None,
        }
    }

    fn error(name: String, anchor: &'static str, err: impl std::fmt::Display) -> Self {
        Record {
            name,
            anchor,
            measured: None,
            expected: "-".into(),
            tolerance: None,
            status: Status::Error,
            note: Some(err.to_string()),
        }
    }

    fn skipped(name: String, anchor: &'static str, why: impl std::fmt::Display) -> Self {
        Record {
            status: Status::Skipped,
            ..Record::error(name, anchor, why)
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

pub mod anchors {
    pub const ENDPOINT: &str = "geodesics: endpoint constraint within tolerance";
    pub const MODULUS_EXPONENT: &str = "acceptance 7: smooth geodesic controls have L2 exponent near 1";
    pub const POINCARE_IDENTITY: &str = "acceptance 10: Poincare identity at constant speed";
    pub const POINCARE_RATIO: &str = "acceptance 10: Poincare ratio finite and positive";
    pub const FIRST_ORDER: &str = "acceptance 5: first-variation bound";
    pub const SECOND_ORDER: &str = "acceptance 4: projected variation is second order";
    pub const DUALITY: &str = "acceptance 2: zero duality gap";
    pub const INTERPOLATION: &str = "acceptance 11: interpolation surrogate bounded";
    pub const PARTIAL_SUMS: &str = "spectral: partial-sum error non-increasing";
    pub const PARTIAL_SLOPE: &str = "acceptance 8: partial-sum error decays";
    pub const WEIGHT_MONOTONE: &str = "spectral: weighted-sum verdicts monotone in alpha";
    pub const BALLBOX: &str = "acceptance 6: ball-box exponent within [1/s, 1]";
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    /// SHA-256 of the canonical TOML form of the config, output directory excluded.
    pub config_hash: String,
    pub version: &'static str,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictBundle {
    pub provenance: Provenance,
    pub structure: String,
    pub stages: Vec<Stage>,
    pub records: Vec<Record>,
    /// Artifact file names relative to the output directory.
    pub artifacts: Vec<String>,
}

impl VerdictBundle {
    pub fn passed(&self) -> bool {
        self.records
            .iter()
            .all(|r| matches!(r.status, Status::Pass | Status::Skipped))
    }

    pub fn counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.records {
            c[r.status as usize] += 1;
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Solve,
    Regularity,
    Variation,
    Kfunc,
    Fourier,
    Ballbox,
}

impl Stage {
    pub const PIPELINE: [Stage; 6] = [
        Stage::Solve,
        Stage::Regularity,
        Stage::Variation,
        Stage::Kfunc,
        Stage::Fourier,
        Stage::Ballbox,
    ];
}

/// Hash of everything that can change results (the output directory is left out).
pub fn config_hash(c: &ExperimentConfig) -> String {
    let mut c = c.clone();
    c.output = Default::default();
    let digest = Sha256::digest(c.to_toml().as_bytes());
    digest.iter().map(|b| format!("{:02x}", b)).collect()
}

struct PairOutput {
    records: Vec<Record>,
    artifacts: Vec<Artifact>,
}

/// Runs the selected stages; returns the bundle and the artifact contents
/// (not yet written).
pub fn run_stages(c: &ExperimentConfig, stages: &[Stage]) -> srlab::Result<(VerdictBundle, Vec<Artifact>)> {
    c.validate()?;
    let s = c.structure()?;
    let outputs: Vec<PairOutput> = c
        .endpoints
        .par_iter()
        .enumerate()
        .map(|(i, [x0, x1])| run_pair(c, &s, stages, i, x0, x1))
        .collect();
    let mut records = Vec::new();
    let mut artifacts = Vec::new();
    for o in outputs {
        records.extend(o.records);
        artifacts.extend(o.artifacts);
    }
    if stages.contains(&Stage::Ballbox) {
        records.extend(ballbox_records(c, &s));
    }
    let bundle = VerdictBundle {
        provenance: Provenance {
            config_hash: config_hash(c),
            version: env!("CARGO_PKG_VERSION"),
            seed: c.seed,
        },
        structure: s.name().to_string(),
        stages: stages.to_vec(),
        records,
        artifacts: artifacts.iter().map(|a| a.name.clone()).collect(),
    };
    Ok((bundle, artifacts))
}

fn solver_options(c: &ExperimentConfig) -> SolverOptions {
    SolverOptions {
        seed: c.seed,
        restarts: c.restarts.max(1),
        ..SolverOptions::default()
    }
}

fn run_pair(
    c: &ExperimentConfig,
    s: &SrStructure,
    stages: &[Stage],
    i: usize,
    x0: &[f64],
    x1: &[f64],
) -> PairOutput {
    let mut out = PairOutput {
        records: Vec::new(),
        artifacts: Vec::new(),
    };
    let tag = |what: &str| format!("pair{}/{}", i, what);
    let opts = solver_options(c);
    let sp = match solve_shortest(s, x0, x1, c.grid, &opts) {
        Ok(sp) => sp,
        Err(e) => {
            out.records.push(Record::error(tag("solve"), anchors::ENDPOINT, e));
            return out;
        }
    };
    let t = &sp.trajectory;
    if stages.contains(&Stage::Solve) {
        out.records.push(
            Record::check(
                tag("solve/endpoint_defect"),
                anchors::ENDPOINT,
                sp.endpoint_defect,
                &format!("<= {:e}", opts.endpoint_tol),
                Some(opts.endpoint_tol),
                sp.certified,
            )
            .with_note(format!("{}, length {:.12}", sp.label, t.length)),
        );
        out.artifacts.push(Artifact::trajectory_csv(&format!("trajectory_{}.csv", i), t));
        if let Some(a) = Artifact::trajectory_json(&format!("trajectory_{}.json", i), t) {
            out.artifacts.push(a);
        }
    }
    let u = match SampledControl::from_trajectory(t, DEFAULT_DELTA) {
        Ok(u) => u,
        Err(e) => {
            out.records.push(Record::error(tag("control"), anchors::MODULUS_EXPONENT, e));
            return out;
        }
    };
    if stages.contains(&Stage::Regularity) {
        regularity(c, &u, &tag, i, &mut out);
    }
    if stages.contains(&Stage::Variation) {
        variation(c, s, t, &tag, &mut out);
    }
    if stages.contains(&Stage::Kfunc) {
        kfunc(c, s, &u, t.length, &tag, i, &mut out);
    }
    if stages.contains(&Stage::Fourier) {
        fourier(c, &u, &tag, i, &mut out);
    }
    out
}

fn regularity(c: &ExperimentConfig, u: &SampledControl, tag: &dyn Fn(&str) -> String, i: usize, out: &mut PairOutput) {
    let r = &c.regularity;
    let unorm = u.lp_norm(2.0);
    let eps: Vec<f64> = r.eps.iter().map(|e| e * unorm).collect();
    let rep = match regularity_report(u, &r.p, &r.alpha, &r.gamma, &eps) {
        Ok(rep) => rep,
        Err(e) => {
            out.records.push(Record::error(tag("regularity"), anchors::MODULUS_EXPONENT, e));
            return;
        }
    };
    for m in rep.moduli.iter().filter(|m| m.p == 2.0) {
        let name = tag("regularity/l2_exponent");
        out.records.push(match &m.fit {
            Some(ExponentFit::Fitted { alpha, .. }) => Record::check(
                name,
                anchors::MODULUS_EXPONENT,
                *alpha,
                &format!(">= {}", r.min_exponent),
                None,
                *alpha >= r.min_exponent,
            ),
            Some(ExponentFit::ExactInvariance) => {
                Record::check(name, anchors::MODULUS_EXPONENT, f64::INFINITY, "exact invariance", None, true)
            }
            None => Record::error(name, anchors::MODULUS_EXPONENT, m.fit_error.clone().unwrap_or_default()),
        });
    }
    if let Some(p) = &rep.poincare {
        match p.identity_residual {
            Some(res) => out.records.push(Record::check(
                tag("regularity/poincare_identity"),
                anchors::POINCARE_IDENTITY,
                res,
                "<= 1e-8",
                Some(1e-8),
                res <= 1e-8,
            )),
            None => out.records.push(Record::skipped(
                tag("regularity/poincare_identity"),
                anchors::POINCARE_IDENTITY,
                "speed not constant to 1e-8",
            )),
        }
        if p.deviation_norm > 0.0 {
            out.records.push(Record::check(
                tag("regularity/poincare_ratio"),
                anchors::POINCARE_RATIO,
                p.ratio,
                "finite, > 0",
                None,
                p.ratio.is_finite() && p.ratio > 0.0,
            ));
        }
    }
    out.artifacts.push(Artifact::csv(
        &format!("moduli_{}.csv", i),
        &["p", "h", "omega"],
        rep.moduli
            .iter()
            .flat_map(|m| m.rows.iter().map(move |(h, w)| vec![m.p, *h, *w]))
            .collect(),
    ));
    out.artifacts.push(Artifact::json(&format!("regularity_{}.json", i), &rep));
}

fn variation(c: &ExperimentConfig, s: &SrStructure, t: &Trajectory, tag: &dyn Fn(&str) -> String, out: &mut PairOutput) {
    let v = &c.variation;
    let fields: Vec<usize> = if v.fields.is_empty() {
        (0..s.rank()).collect()
    } else {
        v.fields.clone()
    };
    let flow = match variational_flow(s, t) {
        Ok(f) => f,
        Err(e) => {
            out.records.push(Record::error(tag("variation"), anchors::FIRST_ORDER, e));
            return;
        }
    };
    for spec in &v.phi {
        let phi = match TestFunction::family(spec, t.intervals()) {
            Ok(p) => p,
            Err(e) => {
                out.records.push(Record::error(tag(&format!("variation/{}", spec)), anchors::FIRST_ORDER, e));
                continue;
            }
        };
        for &field in &fields {
            let name = tag(&format!("variation/{}/f{}/first_order", spec, field + 1));
            out.records.push(match first_order_check(s, t, &phi, &v.lambda, field) {
                Ok(r) => Record::check(name, anchors::FIRST_ORDER, r.max_violation, "<= 1e-8", Some(1e-8), r.max_violation <= 1e-8)
                    .with_note(format!("lemma constant {:.6e}", r.c)),
                Err(e) => Record::error(name, anchors::FIRST_ORDER, e),
            });
            if !s.is_field_constant(field) {
                continue;
            }
            let name = tag(&format!("variation/{}/f{}/projected_order", spec, field + 1));
            let proj = match project_to_h(&phi, t, &flow, s, field) {
                Ok(p) => p,
                Err(e) => {
                    out.records.push(Record::error(name, anchors::SECOND_ORDER, e));
                    continue;
                }
            };
            out.records.push(match endpoint_order(s, t, &proj.phi, &v.lambda, field) {
                Ok(o) => Record::check(name, anchors::SECOND_ORDER, o.slope, "2.0", Some(0.15), (o.slope - 2.0).abs() <= 0.15)
                    .with_note(format!("projection degenerate: {}", proj.degenerate)),
                Err(e) => Record::skipped(name, anchors::SECOND_ORDER, e),
            });
        }
    }
}

fn kfunc(
    c: &ExperimentConfig,
    s: &SrStructure,
    u: &SampledControl,
    l: f64,
    tag: &dyn Fn(&str) -> String,
    i: usize,
    out: &mut PairOutput,
) {
    let k = &c.kfunc;
    let case = c.case().expect("validated");
    let u1: Vec<f64> = u.values().row(0).iter().copied().collect();
    let cells = resample_cells(&u1, k.cells);
    let opts = PdhgOptions::default();
    let q = match Exponent::from_f64(c.exponents.q) {
        Ok(q) => q,
        Err(e) => {
            out.records.push(Record::error(tag("kfunc"), anchors::DUALITY, e));
            return;
        }
    };
    let pairs: Vec<_> = k
        .m
        .par_iter()
        .map(|&m| (m, duality_gap_cells(&cells, m, q, case.r(), &opts)))
        .collect();
    let mut rows = Vec::new();
    for (m, p) in pairs {
        let name = tag(&format!("kfunc/gap_m{}", m));
        match p {
            Ok(p) => {
                rows.push(vec![m, p.s_value, p.k_value, p.relative_gap]);
                out.records.push(
                    Record::check(name, anchors::DUALITY, p.relative_gap, &format!("<= {:e}", k.max_gap), Some(k.max_gap), p.relative_gap <= k.max_gap)
                        .with_note(format!("converged: {}", p.converged)),
                );
            }
            Err(e) => out.records.push(Record::error(name, anchors::DUALITY, e)),
        }
    }
    out.artifacts.push(Artifact::csv(&format!("kfunc_{}.csv", i), &["M", "S", "K", "relative_gap"], rows));

    let name = tag("kfunc/interpolation");
    let step = s.declared_step() as u32;
    let ex = match exponents(c.exponents.q, case.zeta(step), case) {
        Ok(ex) => ex,
        Err(e) => {
            out.records.push(Record::skipped(name, anchors::INTERPOLATION, e));
            return;
        }
    };
    let batch: Vec<TestFunction> = c
        .variation
        .phi
        .iter()
        .filter_map(|spec| TestFunction::family(spec, u.n()).ok())
        .collect();
    out.records.push(match verify_interpolation_bound(u, l, &ex, &batch, &k.m, &opts) {
        Ok(r) => Record::check(name, anchors::INTERPOLATION, r.max_surrogate, "finite", None, r.max_surrogate.is_finite())
            .with_note(format!("max ratio {:.6e} over {} test functions", r.max_ratio, r.evaluated)),
        Err(e) => Record::skipped(name, anchors::INTERPOLATION, e),
    });
}

fn fourier(c: &ExperimentConfig, u: &SampledControl, tag: &dyn Fn(&str) -> String, i: usize, out: &mut PairOutput) {
    let f = &c.fourier;
    match partial_sum_error(u, &f.partial) {
        Ok(tab) => {
            let increases = tab.rows.windows(2).filter(|w| w[1].1 > w[0].1 * (1.0 + 1e-12)).count();
            out.records.push(Record::check(
                tag("fourier/partial_monotone"),
                anchors::PARTIAL_SUMS,
                increases as f64,
                "0 increases",
                None,
                increases == 0,
            ));
            match tab.slope {
                Some(sl) => out.records.push(Record::check(
                    tag("fourier/partial_slope"),
                    anchors::PARTIAL_SLOPE,
                    sl,
                    "< 0",
                    None,
                    sl < 0.0,
                )),
                None => out.records.push(Record::skipped(
                    tag("fourier/partial_slope"),
                    anchors::PARTIAL_SLOPE,
                    "error at the machine floor",
                )),
            }
            out.artifacts.push(Artifact::csv(
                &format!("partial_sums_{}.csv", i),
                &["n", "error"],
                tab.rows.iter().map(|(n, e)| vec![*n as f64, *e]).collect(),
            ));
        }
        Err(e) => out.records.push(Record::error(tag("fourier/partial"), anchors::PARTIAL_SUMS, e)),
    }
    let table = match fourier_coeffs(u, f.m_max) {
        Ok(t) => t,
        Err(e) => {
            out.records.push(Record::error(tag("fourier"), anchors::WEIGHT_MONOTONE, e));
            return;
        }
    };
    match weighted_sums(&table, &f.alpha) {
        Ok(d) => {
            let mut sorted: Vec<_> = d.iter().collect();
            sorted.sort_by(|a, b| a.parameter.total_cmp(&b.parameter));
            let breaks = sorted
                .windows(2)
                .filter(|w| w[0].verdict == SeriesVerdict::Diverging && w[1].verdict == SeriesVerdict::Converging)
                .count();
            out.records.push(Record::check(
                tag("fourier/weight_monotone"),
                anchors::WEIGHT_MONOTONE,
                breaks as f64,
                "0 inversions",
                None,
                breaks == 0,
            ));
        }
        Err(e) => out.records.push(Record::error(tag("fourier/weighted"), anchors::WEIGHT_MONOTONE, e)),
    }
    let rows = (0..=f.m_max as i64)
        .map(|m| vec![m as f64, table.magnitude(m)])
        .collect();
    out.artifacts.push(Artifact::csv(&format!("fourier_{}.csv", i), &["m", "magnitude"], rows));
}

fn ballbox_records(c: &ExperimentConfig, s: &SrStructure) -> Vec<Record> {
    let bb = &c.ballbox;
    let x = if bb.point.is_empty() {
        vec![0.0; s.dim()]
    } else {
        bb.point.clone()
    };
    let opts = solver_options(c);
    bb.directions
        .par_iter()
        .enumerate()
        .map(|(j, d)| {
            let name = format!("ballbox/direction{}", j);
            match ballbox_probe(s, &x, d, &bb.radii, bb.grid, &opts, bb.fit_tol) {
                Ok(r) => match r.exponent {
                    Some(e) => Record::check(name, anchors::BALLBOX, e, "[1/s, 1]", Some(bb.fit_tol), r.within_bounds),
                    None => Record::error(name, anchors::BALLBOX, r.failures.join("; ")),
                },
                Err(e) => Record::error(name, anchors::BALLBOX, e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_endpoints_give_empty_passing_bundle() {
        let c = ExperimentConfig::default();
        let (b, a) = run_stages(&c, &Stage::PIPELINE).unwrap();
        assert!(b.records.is_empty() && a.is_empty());
        assert!(b.passed());
        assert_eq!(b.provenance.config_hash.len(), 64);
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 7;
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        b = a.clone();
        b.output = "elsewhere".into();
        assert_eq!(config_hash(&a), config_hash(&b));
    }
}
