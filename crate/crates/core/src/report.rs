//! CSV output of experiment runs.
//!
//! Layout under the output directory:
//!
//! ```text
//! summary.csv
//! <scenario>/seed-<s>/{config.txt, rounds.csv, usefulness.csv, gtrace.csv,
//!                      probes.csv, constants.csv, bound.csv, correlations.csv,
//!                      cdf_probe.csv, cdf_training.csv, selection.csv}
//! <scenario>/seed-<s>/selection/<policy>/...   same files, subset run
//! ```
//!
//! Numbers are written with 9 significant digits; missing values as `nan`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::analysis::{self, CdfSeries, CorrelationReport, Quantity, UsefulnessRecord};
use crate::config::{echo_scenario, ExperimentConfig};
use crate::error::{Error, Result};
use crate::experiment::{RunAnalysis, SeedResult};
use crate::flsim::FLRun;
use crate::probe::ConstantsEstimate;

pub const SUMMARY_HEADER: &str = "scenario,seed,final_train_loss,final_test_loss,final_bound,\
pearson_mu,spearman_mu,pearson_L,spearman_L,pearson_G,spearman_G";

/// Decimal rendering with 9 significant digits.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // rounding may carry into a new digit, so take the exponent after rounding
    let sci = format!("{x:.8e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    let decimals = (8 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), fmt_num)
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<()> {
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn cdf_csv(c: &CdfSeries) -> String {
    csv(
        "value,fraction",
        c.points
            .iter()
            .map(|(v, f)| format!("{},{}", fmt_num(*v), fmt_num(*f))),
    )
}

fn correlations_csv(c: Option<&[CorrelationReport]>, n: usize) -> String {
    let rows =
        Quantity::ALL.iter().map(
            |&q| match c.and_then(|c| c.iter().find(|r| r.quantity == q)) {
                Some(r) => format!("{q},{},{},{}", fmt_num(r.pearson), fmt_num(r.spearman), r.n),
                None => format!("{q},nan,nan,{n}"),
            },
        );
    csv("quantity,pearson,spearman,n", rows)
}

fn constants_csv(nodes: &[(usize, ConstantsEstimate)], global: &ConstantsEstimate) -> String {
    let row = |id: String, c: &ConstantsEstimate| {
        format!(
            "{id},{},{},{},{}",
            fmt_num(c.mu),
            fmt_num(c.l_smooth),
            fmt_num(c.g_max),
            c.n_probes
        )
    };
    let rows = nodes
        .iter()
        .map(|(i, c)| row(i.to_string(), c))
        .chain([row("global".into(), global)]);
    csv("node_id,mu,L,G,n_probes", rows)
}

/// Writes every per-run file of `run` into `dir`, which must exist.
pub fn write_run(dir: &Path, run: &FLRun, a: &RunAnalysis) -> Result<()> {
    let mut config = echo_scenario(&run.config);
    let _ = writeln!(
        config,
        "bound.distance_used = {}",
        fmt_num(run.bound_distance)
    );
    for w in &run.warnings {
        let _ = writeln!(config, "# warning: {w}");
    }
    write_file(dir, "config.txt", &config)?;

    write_file(
        dir,
        "rounds.csv",
        &csv(
            "t,train_loss,test_loss,bound_value",
            run.rounds.iter().map(|r| {
                format!(
                    "{},{},{},{}",
                    r.t,
                    fmt_num(r.train_loss),
                    fmt_num(r.test_loss),
                    opt(r.bound_value)
                )
            }),
        ),
    )?;
    write_file(
        dir,
        "bound.csv",
        &csv(
            "t,bound_value",
            run.rounds
                .iter()
                .map(|r| format!("{},{}", r.t, opt(r.bound_value))),
        ),
    )?;
    write_file(
        dir,
        "usefulness.csv",
        &csv(
            "t,node_id,delta",
            run.rounds.iter().flat_map(|r| {
                r.usefulness
                    .iter()
                    .map(move |(i, d)| format!("{},{i},{}", r.t, fmt_num(*d)))
            }),
        ),
    )?;
    let probe_rows = run.probe_samples.iter().flat_map(|(i, s)| {
        s.iter()
            .map(move |p| format!("probe,{i},{}", fmt_num(p.g_value)))
    });
    let train_rows = run.rounds.iter().flat_map(|r| {
        r.training_g.iter().flat_map(|(i, g)| {
            g.iter()
                .map(move |v| format!("training,{i},{}", fmt_num(*v)))
        })
    });
    write_file(
        dir,
        "gtrace.csv",
        &csv("source,node_id,value", probe_rows.chain(train_rows)),
    )?;
    write_file(
        dir,
        "probes.csv",
        &csv(
            "node_id,probe_index,m_value,g_value",
            run.probe_samples.iter().flat_map(|(i, s)| {
                s.iter().enumerate().map(move |(j, p)| {
                    format!("{i},{j},{},{}", fmt_num(p.m_value), fmt_num(p.g_value))
                })
            }),
        ),
    )?;
    write_file(
        dir,
        "constants.csv",
        &constants_csv(&run.node_constants, &run.global_constants),
    )?;
    write_derived(dir, a)
}

fn write_derived(dir: &Path, a: &RunAnalysis) -> Result<()> {
    write_file(
        dir,
        "correlations.csv",
        &correlations_csv(a.correlations.as_deref(), a.usefulness.len()),
    )?;
    write_file(dir, "cdf_probe.csv", &cdf_csv(&a.cdf_probe))?;
    write_file(dir, "cdf_training.csv", &cdf_csv(&a.cdf_training))
}

fn summary_row(label: &str, seed: u64, run: &FLRun, a: &RunAnalysis) -> String {
    let last = run.rounds.last();
    let mut row = format!(
        "{label},{seed},{},{},{}",
        opt(last.map(|r| r.train_loss)),
        opt(last.map(|r| r.test_loss)),
        opt(last.and_then(|r| r.bound_value)),
    );
    for q in Quantity::ALL {
        let c = a
            .correlations
            .as_ref()
            .and_then(|c| c.iter().find(|r| r.quantity == q));
        let _ = write!(
            row,
            ",{},{}",
            opt(c.map(|r| r.pearson)),
            opt(c.map(|r| r.spearman))
        );
    }
    row
}

pub fn seed_dir(root: &Path, scenario: &str, seed: u64) -> PathBuf {
    root.join(scenario).join(format!("seed-{seed}"))
}

fn write_tree(root: &Path, cfg: &ExperimentConfig, results: &[SeedResult]) -> Result<()> {
    let mut summary = Vec::new();
    for r in results {
        let dir = seed_dir(root, &r.scenario, r.seed);
        fs::create_dir_all(&dir)?;
        write_run(&dir, &r.run, &r.analysis)?;
        summary.push(summary_row(&r.scenario, r.seed, &r.run, &r.analysis));
        if cfg.selection.is_some() {
            let rows = r.selections.iter().map(|s| {
                let ids: Vec<String> = s.chosen.iter().map(|i| i.to_string()).collect();
                format!("{},{},{}", s.policy, s.k, ids.join(" "))
            });
            write_file(&dir, "selection.csv", &csv("policy,k,chosen_ids", rows))?;
        }
        for s in &r.selections {
            let sub = dir.join("selection").join(s.policy.to_string());
            fs::create_dir_all(&sub)?;
            write_run(&sub, &s.run, &s.analysis)?;
            summary.push(summary_row(
                &format!("{}+{}", r.scenario, s.policy),
                r.seed,
                &s.run,
                &s.analysis,
            ));
        }
    }
    write_file(root, "summary.csv", &csv(SUMMARY_HEADER, summary))
}

/// Writes all results under `out`. Output goes to a sibling temporary
/// directory first and replaces `out` only once complete.
pub fn write_experiment(out: &Path, cfg: &ExperimentConfig, results: &[SeedResult]) -> Result<()> {
    let name = out
        .file_name()
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "output path {} has no final component",
                out.display()
            ))
        })?
        .to_string_lossy()
        .into_owned();
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent)?;
    let pid = std::process::id();
    let tmp = parent.join(format!(".{name}.tmp-{pid}"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp)?;
    if let Err(e) = write_tree(&tmp, cfg, results) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if out.exists() {
        let old = parent.join(format!(".{name}.old-{pid}"));
        fs::rename(out, &old)?;
        fs::rename(&tmp, out)?;
        fs::remove_dir_all(&old)?;
    } else {
        fs::rename(&tmp, out)?;
    }
    Ok(())
}

fn read_csv(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let first = lines.next().unwrap_or("");
    if first != header {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "{}: expected header {header:?}, got {first:?}",
                path.display()
            ),
        });
    }
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Format {
        offset: row as u64,
        message: format!("{}: row {row}: cannot parse {v:?}", path.display()),
    })
}

/// Rebuilds correlations and CDFs of a run directory from its raw files.
/// The directory is left untouched; inputs carry 9 significant digits, so
/// results can differ from the stored ones in the last places.
pub fn reanalyze(dir: &Path) -> Result<RunAnalysis> {
    let path = dir.join("constants.csv");
    let mut constants = Vec::new();
    for (i, row) in read_csv(&path, "node_id,mu,L,G,n_probes")?
        .iter()
        .enumerate()
    {
        if row.len() != 5 {
            return Err(Error::Format {
                offset: i as u64 + 1,
                message: format!("{}: expected 5 fields", path.display()),
            });
        }
        if row[0] == "global" {
            continue;
        }
        constants.push((
            field(&path, i + 1, &row[0])?,
            ConstantsEstimate {
                mu: field(&path, i + 1, &row[1])?,
                l_smooth: field(&path, i + 1, &row[2])?,
                g_max: field(&path, i + 1, &row[3])?,
                n_probes: field(&path, i + 1, &row[4])?,
            },
        ));
    }

    let path = dir.join("usefulness.csv");
    let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (i, row) in read_csv(&path, "t,node_id,delta")?.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::Format {
                offset: i as u64 + 1,
                message: format!("{}: expected 3 fields", path.display()),
            });
        }
        let e = sums.entry(field(&path, i + 1, &row[1])?).or_default();
        e.0 += field::<f64>(&path, i + 1, &row[2])?;
        e.1 += 1;
    }
    let usefulness: Vec<UsefulnessRecord> = sums
        .into_iter()
        .map(|(node_id, (s, n))| UsefulnessRecord {
            node_id,
            usefulness: s / n as f64,
        })
        .collect();

    let path = dir.join("gtrace.csv");
    let (mut probe_g, mut training_g) = (Vec::new(), Vec::new());
    for (i, row) in read_csv(&path, "source,node_id,value")?.iter().enumerate() {
        if row.len() != 3 {
            return Err(Error::Format {
                offset: i as u64 + 1,
                message: format!("{}: expected 3 fields", path.display()),
            });
        }
        let v: f64 = field(&path, i + 1, &row[2])?;
        match row[0].as_str() {
            "probe" => probe_g.push(v),
            "training" => training_g.push(v),
            other => {
                return Err(Error::Format {
                    offset: i as u64 + 1,
                    message: format!("unknown source {other:?}"),
                })
            }
        }
    }

    let correlations = match analysis::correlate_constants(&constants, &usefulness) {
        Ok(c) => Some(c),
        Err(Error::InsufficientData(_) | Error::ZeroVariance(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(RunAnalysis {
        usefulness,
        correlations,
        cdf_probe: analysis::empirical_cdf(&probe_g)?,
        cdf_training: analysis::empirical_cdf(&training_g)?,
    })
}
