//! Experiment runner behind the CLI subcommands: instance generation, the
//! EMR-vs-entropy frontier, the payoff sweep, the scalability sweep, and
//! single-cell evaluation. Results merge in deterministic grid order; every
//! value is reproducible from (config, master seed) alone.

use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, GeneratorKind, GeneratorSpec, InstanceSource};
use crate::harness::seeding::derive_seed;
use crate::instance::{GraphInstance, PolyUtility, UtilitySpec};
use crate::oracle::{
    best_response_on_traces, normalize, with_alignment_bound, EmpiricalConfig, PayoffReport,
};
use crate::schedule::{
    emr_estimate, entropy_rate_estimate, sample_trace, CyclicSequence, DeterministicFactory,
    EntropyUnit, GeneratorFactory, ScheduleTrace, TravelTimes,
};
use crate::schedulers::bwalk::BwalkFactory;
use crate::schedulers::sg::{sg_build, sg_default_cap, sg_optimal_deterministic, SgWalkFactory};
use crate::schedulers::tspb::TspbFactory;
use crate::tours::{bgt_plan, tsp_tour, BgtSequence, GroupOrder, TourSequence};
use crate::Visibility;
use rayon::prelude::*;
use std::path::Path;
use std::time::Instant;

/// Summary of a sweep: any cell that failed for resource reasons maps the
/// whole run to exit code 3.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOutcome {
    pub cells: usize,
    pub failed_cells: usize,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.failed_cells > 0 {
            3
        } else {
            0
        }
    }
}

/// Installs the global worker pool from the PATROLSIM_WORKERS environment
/// variable; without it rayon picks the hardware default.
pub fn init_workers() -> Result<()> {
    if let Ok(raw) = std::env::var("PATROLSIM_WORKERS") {
        let workers: usize = raw
            .parse()
            .map_err(|_| Error::Config(format!("PATROLSIM_WORKERS must be an integer, got {raw:?}")))?;
        if workers == 0 {
            return Err(Error::Config("PATROLSIM_WORKERS must be positive".into()));
        }
        // a pool may already exist (tests); the setting still applied once
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    Ok(())
}

fn write_text(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// True when every site shares the same utility shape, in which case the
/// keep-coin generator rides the plain TSP tour instead of the grouped order.
fn uniform_utilities(utilities: &[PolyUtility]) -> bool {
    let d0 = utilities[0].effective_degree();
    let tops: Vec<f64> = utilities
        .iter()
        .map(|u| u.coefficient(u.effective_degree()))
        .collect();
    utilities.iter().all(|u| u.effective_degree() == d0)
        && tops.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12)
}

fn instance_travel(instance: &GraphInstance) -> TravelTimes {
    TravelTimes::new(instance.travel_matrix().to_vec())
}

fn bgt_factory(instance: &GraphInstance) -> Result<Box<dyn GeneratorFactory>> {
    let plan = bgt_plan(instance, GroupOrder::Tree)?;
    let travel = instance_travel(instance);
    Ok(Box::new(DeterministicFactory::new(
        BgtSequence::new(plan, travel.clone()),
        travel,
        "bgt",
    )))
}

/// Builds the factory for one grid cell. Resource-cap and infeasibility
/// errors surface to the caller, which records them per cell.
pub fn make_factory(
    kind: GeneratorKind,
    alpha: f64,
    instance: &GraphInstance,
) -> Result<Box<dyn GeneratorFactory>> {
    let travel = instance_travel(instance);
    match kind {
        GeneratorKind::Tspb => {
            if uniform_utilities(instance.utilities()) {
                let base = TourSequence::new(&tsp_tour(instance));
                Ok(Box::new(TspbFactory::new(base, travel, alpha)?))
            } else {
                let plan = bgt_plan(instance, GroupOrder::Tree)?;
                let base = BgtSequence::new(plan, travel.clone());
                Ok(Box::new(TspbFactory::new(base, travel, alpha)?))
            }
        }
        GeneratorKind::Bwalk => Ok(Box::new(BwalkFactory::new(instance.clone(), alpha)?)),
        GeneratorKind::SgRand => Ok(Box::new(SgWalkFactory::new(instance.clone(), alpha)?)),
        GeneratorKind::SgDet => {
            let cap = sg_default_cap(instance)?;
            let sg = sg_build(instance, cap)?;
            let cycle = sg_optimal_deterministic(&sg)?;
            Ok(Box::new(DeterministicFactory::new(
                CyclicSequence::new(cycle.sites)?,
                travel,
                "sg_det",
            )))
        }
        GeneratorKind::Bgt => bgt_factory(instance),
    }
}

/// Grid cells in deterministic order: (generator index, kind, alpha index,
/// alpha). Deterministic kinds occupy a single placeholder cell.
fn grid_cells(generators: &[GeneratorSpec]) -> Vec<(usize, GeneratorKind, usize, f64)> {
    let mut cells = Vec::new();
    for (g, spec) in generators.iter().enumerate() {
        if spec.kind.is_deterministic() {
            cells.push((g, spec.kind, 0, 1.0));
        } else {
            for (a, &alpha) in spec.alphas.iter().enumerate() {
                cells.push((g, spec.kind, a, alpha));
            }
        }
    }
    cells
}

fn cell_seed(master: u64, gen_idx: usize, alpha_idx: usize) -> u64 {
    derive_seed(derive_seed(master, gen_idx as u64), alpha_idx as u64)
}

fn sample_cell_traces(
    factory: &dyn GeneratorFactory,
    samples: usize,
    horizon: u64,
    seed: u64,
) -> Result<Vec<ScheduleTrace>> {
    (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut gen = factory.build(derive_seed(seed, k as u64));
            sample_trace(gen.as_mut(), horizon)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

/// Generates a random instance, writes it as JSON, and prints a summary.
pub fn cmd_gen(
    n: usize,
    side: f64,
    seed: u64,
    utility_degree: usize,
    out: &Path,
) -> Result<()> {
    let spec = UtilitySpec::new(utility_degree, 0.5, 1.5)?;
    let instance = GraphInstance::generate_random(n, side, seed, &spec)?;
    write_text(out, &instance.to_json()?)?;
    let degrees: Vec<usize> = instance
        .utilities()
        .iter()
        .map(|u| u.effective_degree())
        .collect();
    println!(
        "wrote {}: n = {}, diameter = {}, utility degrees = {:?}",
        out.display(),
        instance.len(),
        instance.diameter(),
        degrees
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// frontier
// ---------------------------------------------------------------------------

struct FrontierRow {
    generator: &'static str,
    alpha: f64,
    body: std::result::Result<(f64, f64, f64, f64), String>,
}

fn frontier_cell(
    kind: GeneratorKind,
    alpha: f64,
    instance: &GraphInstance,
    cfg: &ExperimentConfig,
    seed: u64,
    bgt_emr: f64,
) -> Result<(f64, f64, f64, f64)> {
    let factory = make_factory(kind, alpha, instance)?;
    let horizon = cfg.resolve_horizon(cfg.resolve_t_max(instance));
    let traces = sample_cell_traces(factory.as_ref(), cfg.samples, horizon, seed)?;
    let emr = emr_estimate(&traces, instance.utilities())?;

    // entropy: one rate per replication, averaged with a standard error
    let rates: Vec<f64> = (0..cfg.samples)
        .into_par_iter()
        .map(|k| {
            let mut gen = factory.build(derive_seed(seed, (cfg.samples + k) as u64));
            entropy_rate_estimate(gen.as_mut(), cfg.entropy_steps, EntropyUnit::Nats)
                .map(|r| r.rate)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let ent_stderr = if rates.len() > 1 {
        let var = rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>()
            / (rates.len() as f64 - 1.0);
        (var / rates.len() as f64).sqrt()
    } else {
        0.0
    };
    let best = &emr.per_site[emr.argmax_site];
    Ok((emr.emr / bgt_emr, best.stderr / bgt_emr, mean, ent_stderr))
}

/// EMR-vs-entropy frontier: one row per generator x alpha, EMR scaled so the
/// deterministic grouped schedule sits exactly at 1 with entropy 0.
pub fn cmd_frontier(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let instance = cfg.build_instance()?;
    let horizon = cfg.resolve_horizon(cfg.resolve_t_max(&instance));

    // reference EMR from the same estimator over the same replication count,
    // so the grouped schedule normalizes to exactly 1
    let reference = bgt_factory(&instance)?;
    let ref_traces = sample_cell_traces(reference.as_ref(), cfg.samples, horizon, cfg.seed)?;
    let bgt_emr = emr_estimate(&ref_traces, instance.utilities())?.emr;
    if !(bgt_emr > 0.0) {
        return Err(Error::Domain(
            "reference schedule has nonpositive exposure; raise the horizon".into(),
        ));
    }

    let rows: Vec<FrontierRow> = grid_cells(&cfg.generators)
        .into_iter()
        .map(|(g, kind, a, alpha)| {
            let seed = cell_seed(cfg.seed, g, a);
            let body = frontier_cell(kind, alpha, &instance, cfg, seed, bgt_emr)
                .map_err(|e| e.to_string());
            FrontierRow {
                generator: kind.label(),
                alpha,
                body,
            }
        })
        .collect();

    let mut csv = String::from(
        "generator,alpha,emr_normalized,emr_stderr,entropy_rate,entropy_stderr,error\n",
    );
    let mut outcome = RunOutcome::default();
    for row in &rows {
        outcome.cells += 1;
        match &row.body {
            Ok((emr, emr_se, ent, ent_se)) => {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},\n",
                    row.generator, row.alpha, emr, emr_se, ent, ent_se
                ));
            }
            Err(msg) => {
                outcome.failed_cells += 1;
                csv.push_str(&format!(
                    "{},{},,,,,{}\n",
                    row.generator,
                    row.alpha,
                    msg.replace(',', ";")
                ));
            }
        }
    }
    write_text(out, &csv)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// payoff
// ---------------------------------------------------------------------------

struct PayoffRow {
    generator: &'static str,
    alpha: f64,
    model: Visibility,
    penalty: f64,
    body: std::result::Result<PayoffReport, String>,
}

fn payoff_csv_line(row: &PayoffRow) -> String {
    match &row.body {
        Ok(r) => format!(
            "{},{},{},{},{},{},{},{},{},\n",
            row.generator,
            row.alpha,
            row.model,
            row.penalty,
            r.value,
            r.normalized_value.unwrap_or(f64::NAN),
            r.stderr,
            r.site_attacked,
            r.duration
        ),
        Err(msg) => format!(
            "{},{},{},{},,,,,,{}\n",
            row.generator,
            row.alpha,
            row.model,
            row.penalty,
            msg.replace(',', ";")
        ),
    }
}

/// Reference payoff per (model, penalty): the attacker's best response to the
/// deterministic grouped schedule under identical sampling, so the grouped
/// schedule self-normalizes to exactly 1.
fn bgt_reference(instance: &GraphInstance, cfg: &EmpiricalConfig) -> Result<f64> {
    let factory = bgt_factory(instance)?;
    let traces = sample_cell_traces(factory.as_ref(), cfg.samples, cfg.horizon, cfg.seed)?;
    Ok(best_response_on_traces(&traces, instance.utilities(), cfg)?.value)
}

fn effective_penalties(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.penalties.is_empty() {
        vec![0.0]
    } else {
        cfg.penalties.clone()
    }
}

/// Full payoff sweep: per (generator, alpha) the traces are sampled once and
/// reused across every model and penalty, making the monotonicity claims
/// exact on the sampled set. Also writes `<out>.best.csv` with the best alpha
/// per (generator, model, penalty).
pub fn cmd_payoff(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let instance = cfg.build_instance()?;
    let t_max = cfg.resolve_t_max(&instance);
    let horizon = cfg.resolve_horizon(t_max);
    let penalties = effective_penalties(cfg);

    // normalization constants, one per (model, penalty)
    let mut zetas: Vec<Vec<Result<f64>>> = Vec::new();
    for model in &cfg.models {
        let per_penalty = penalties
            .iter()
            .map(|&penalty| {
                bgt_reference(
                    &instance,
                    &EmpiricalConfig {
                        model: *model,
                        penalty,
                        horizon,
                        samples: cfg.samples,
                        t_max,
                        seed: cfg.seed,
                    },
                )
            })
            .collect();
        zetas.push(per_penalty);
    }

    let mut rows: Vec<PayoffRow> = Vec::new();
    let mut outcome = RunOutcome::default();
    for (g, kind, a, alpha) in grid_cells(&cfg.generators) {
        let seed = cell_seed(cfg.seed, g, a);
        let traces = make_factory(kind, alpha, &instance).and_then(|factory| {
            sample_cell_traces(factory.as_ref(), cfg.samples, horizon, seed)
        });
        for (m, model) in cfg.models.iter().enumerate() {
            for (p, &penalty) in penalties.iter().enumerate() {
                let body = match (&traces, &zetas[m][p]) {
                    (Ok(traces), Ok(zeta)) => best_response_on_traces(
                        traces,
                        instance.utilities(),
                        &EmpiricalConfig {
                            model: *model,
                            penalty,
                            horizon,
                            samples: cfg.samples,
                            t_max,
                            seed,
                        },
                    )
                    .and_then(|r| normalize(with_alignment_bound(r, &instance), *zeta))
                    .map_err(|e| e.to_string()),
                    (Err(e), _) => Err(e.to_string()),
                    (_, Err(e)) => Err(e.to_string()),
                };
                rows.push(PayoffRow {
                    generator: kind.label(),
                    alpha,
                    model: *model,
                    penalty,
                    body,
                });
            }
        }
    }

    let mut csv = String::from(
        "generator,alpha,model,penalty,value,normalized,stderr,site,duration,error\n",
    );
    for row in &rows {
        outcome.cells += 1;
        if row.body.is_err() {
            outcome.failed_cells += 1;
        }
        csv.push_str(&payoff_csv_line(row));
    }
    write_text(out, &csv)?;

    // best alpha per (generator, model, penalty): lowest attacker payoff
    let mut best_csv = String::from(
        "generator,alpha,model,penalty,value,normalized,stderr,site,duration,error\n",
    );
    for (_, kind, _, _) in grid_cells(&cfg.generators)
        .iter()
        .filter(|(_, _, a, _)| *a == 0)
    {
        for model in &cfg.models {
            for &penalty in &penalties {
                let winner = rows
                    .iter()
                    .filter(|r| {
                        r.generator == kind.label() && r.model == *model && r.penalty == penalty
                    })
                    .filter(|r| r.body.is_ok())
                    .min_by(|x, y| {
                        let vx = x.body.as_ref().expect("filtered").value;
                        let vy = y.body.as_ref().expect("filtered").value;
                        vx.partial_cmp(&vy).expect("finite payoffs")
                    });
                if let Some(row) = winner {
                    best_csv.push_str(&payoff_csv_line(row));
                }
            }
        }
    }
    let best_path = out.with_extension(match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("best.{ext}"),
        None => "best.csv".to_string(),
    });
    write_text(&best_path, &best_csv)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// scale
// ---------------------------------------------------------------------------

/// Scalability sweep: for each size, builds a fresh constant-utility random
/// instance and evaluates every generator under full visibility at M = 0,
/// payoffs normalized by the grouped schedule at the same size. Wall times
/// are only recorded behind `timings` so default output stays reproducible.
pub fn cmd_scale(cfg: &ExperimentConfig, timings: bool, out: &Path) -> Result<RunOutcome> {
    if cfg.sizes.is_empty() {
        return Err(Error::Config("scale needs a non-empty `sizes` grid".into()));
    }
    if cfg.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("`sizes` must be strictly ascending".into()));
    }
    let side = match &cfg.instance {
        InstanceSource::Random { side, .. } => *side,
        _ => 1000.0,
    };
    let spec = UtilitySpec::new(0, 1.0, 1.0)?;

    let mut csv = String::from("n,generator,alpha,value,normalized,stderr,error");
    if timings {
        csv.push_str(",wall_ms");
    }
    csv.push('\n');
    let mut outcome = RunOutcome::default();

    for (s, &n) in cfg.sizes.iter().enumerate() {
        let instance = GraphInstance::generate_random(
            n,
            side,
            derive_seed(cfg.seed, s as u64),
            &spec,
        )?;
        let t_max = cfg.resolve_t_max(&instance);
        let horizon = cfg.resolve_horizon(t_max);
        let ecfg = EmpiricalConfig {
            model: Visibility::Full,
            penalty: 0.0,
            horizon,
            samples: cfg.samples,
            t_max,
            seed: cfg.seed,
        };
        let zeta = bgt_reference(&instance, &ecfg);
        for (g, kind, a, alpha) in grid_cells(&cfg.generators) {
            outcome.cells += 1;
            let seed = cell_seed(derive_seed(cfg.seed, s as u64), g, a);
            let started = Instant::now();
            let body = zeta.as_ref().map_err(|e| e.to_string()).and_then(|&zeta| {
                let factory = make_factory(kind, alpha, &instance).map_err(|e| e.to_string())?;
                let traces =
                    sample_cell_traces(factory.as_ref(), cfg.samples, horizon, seed)
                        .map_err(|e| e.to_string())?;
                best_response_on_traces(
                    &traces,
                    instance.utilities(),
                    &EmpiricalConfig { seed, ..ecfg.clone() },
                )
                .and_then(|r| normalize(r, zeta))
                .map_err(|e| e.to_string())
            });
            let wall_ms = started.elapsed().as_millis();
            match body {
                Ok(r) => {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},",
                        n,
                        kind.label(),
                        alpha,
                        r.value,
                        r.normalized_value.unwrap_or(f64::NAN),
                        r.stderr
                    ));
                }
                Err(msg) => {
                    outcome.failed_cells += 1;
                    csv.push_str(&format!(
                        "{},{},{},,,,{}",
                        n,
                        kind.label(),
                        alpha,
                        msg.replace(',', ";")
                    ));
                }
            }
            if timings {
                csv.push_str(&format!(",{wall_ms}"));
            }
            csv.push('\n');
        }
    }
    write_text(out, &csv)?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Evaluates one cell and returns the full report as pretty JSON.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    kind: GeneratorKind,
    alpha: f64,
    model: Visibility,
    penalty: f64,
) -> Result<String> {
    let (lo, hi, domain) = kind.alpha_domain();
    if !kind.is_deterministic() && !(alpha >= lo && alpha <= hi && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha {alpha} outside the {} domain {domain}",
            kind.label()
        )));
    }
    let instance = cfg.build_instance()?;
    let t_max = cfg.resolve_t_max(&instance);
    let horizon = cfg.resolve_horizon(t_max);
    let ecfg = EmpiricalConfig {
        model,
        penalty,
        horizon,
        samples: cfg.samples,
        t_max,
        seed: cfg.seed,
    };
    let factory = make_factory(kind, alpha, &instance)?;
    let traces = sample_cell_traces(factory.as_ref(), cfg.samples, horizon, cfg.seed)?;
    let report = best_response_on_traces(&traces, instance.utilities(), &ecfg)?;
    let zeta = bgt_reference(&instance, &ecfg)?;
    let report = normalize(with_alignment_bound(report, &instance), zeta)?;
    serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Serialization(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        toml::from_str(
            r#"
seed = 11
penalties = [0.0, 1.0]
horizon = 400
samples = 3
t_max = 10
entropy_steps = 200

[instance]
source = "random"
n = 5
side = 10.0
seed = 2

[[generators]]
kind = "tspb"
alphas = [0.5, 1.0]

[[generators]]
kind = "bgt"
"#,
        )
        .unwrap()
    }

    #[test]
    fn frontier_anchors_grouped_schedule_at_one() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("frontier.csv");
        let outcome = cmd_frontier(&cfg, &out).unwrap();
        assert_eq!(outcome.failed_cells, 0);
        let body = std::fs::read_to_string(&out).unwrap();
        let bgt_line = body
            .lines()
            .find(|l| l.starts_with("bgt,"))
            .expect("bgt row");
        let fields: Vec<&str> = bgt_line.split(',').collect();
        assert_eq!(fields[2], "1"); // normalized EMR exactly 1
        assert_eq!(fields[4], "0"); // deterministic: zero entropy
    }

    #[test]
    fn payoff_sweep_writes_grid_and_best_file() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("payoff.csv");
        let outcome = cmd_payoff(&cfg, &out).unwrap();
        assert_eq!(outcome.failed_cells, 0);
        // 3 cells x 3 models x 2 penalties
        let body = std::fs::read_to_string(&out).unwrap();
        assert_eq!(body.lines().count(), 1 + 3 * 3 * 2);
        // grouped schedule self-normalizes to exactly 1 at M = 0
        for line in body.lines().filter(|l| l.starts_with("bgt,")) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields[3] == "0" {
                assert_eq!(fields[5], "1", "line: {line}");
            }
        }
        let best = std::fs::read_to_string(out.with_extension("best.csv")).unwrap();
        assert_eq!(best.lines().count(), 1 + 2 * 3 * 2);
    }

    #[test]
    fn payoff_rerun_is_byte_identical() {
        let cfg = small_config();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        cmd_payoff(&cfg, &a).unwrap();
        cmd_payoff(&cfg, &b).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap()
        );
    }

    #[test]
    fn scale_reports_grouped_anchor() {
        let mut cfg = small_config();
        cfg.sizes = vec![4, 6];
        cfg.horizon = 300;
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("scale.csv");
        let outcome = cmd_scale(&cfg, false, &out).unwrap();
        assert_eq!(outcome.failed_cells, 0);
        let body = std::fs::read_to_string(&out).unwrap();
        assert!(!body.contains("wall_ms"));
        for line in body.lines().skip(1).filter(|l| l.contains(",bgt,")) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[4], "1", "line: {line}");
        }
    }

    #[test]
    fn eval_emits_json_report() {
        let cfg = small_config();
        let raw = cmd_eval(&cfg, GeneratorKind::Tspb, 0.7, Visibility::Full, 0.5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
        assert_eq!(v["model"], "full");
        assert!(v["normalized_value"].as_f64().unwrap() > 0.0);
    }
}
