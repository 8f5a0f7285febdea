//! Figure-analog tables computed from finished runs.
//!
//! Every analysis takes a set of runs (config plus record) and returns CSV
//! tables. Runs are grouped by the settings that sweeps vary: model family,
//! latent size, behaviour epsilon and transition stochasticity.

use std::collections::BTreeMap;
use std::path::Path;

use crate::analysis::{
    corner_separation, field_peak_shift, mean, median, paired_t_test_greater,
    pairwise_cosine_trajectory, pca3, peak_reward_distance, rate_map, sample_state_pairs,
    selectivity_index, silent_fraction, spatial_information, spearman, split_similarity_profile,
    std_error, welch_t_test, ActivationDump, SILENT_THRESHOLD,
};
use crate::config::{FamilyName, RunConfig};
use crate::env::{APPROACH_LEN, CORRIDOR_LEN};
use crate::error::{Error, Result};
use crate::protocols::{build_grid, latent_table, restore_bundle, RunRecord};
use crate::seed;

/// Number of random state pairs behind each cosine-similarity value.
pub const COSINE_PAIRS: usize = 100;

/// Figure tags understood by [`analyze`].
pub const FIGURES: [&str; 16] = [
    "fig2b", "fig2c", "fig2e", "fig2f", "fig2g", "fig3b", "fig3e", "fig3h", "fig4b", "fig4f",
    "fig4g", "fig4i", "fig5d", "fig5f", "figa3d", "figa5d",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: AsRef<str>>(name: &str, header: &[S]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("{}.csv", self.name));
        std::fs::write(&path, self.csv()).map_err(|e| Error::io(&path, e))
    }
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

/// A finished run as the analyses see it.
#[derive(Clone, Copy, Debug)]
pub struct Run<'a> {
    pub config: &'a RunConfig,
    pub record: &'a RunRecord,
}

impl<'a> Run<'a> {
    pub fn new(config: &'a RunConfig, record: &'a RunRecord) -> Self {
        Run { config, record }
    }

    fn dump(&self, name: &str) -> Result<&'a ActivationDump> {
        self.record
            .dump(name)
            .ok_or_else(|| missing_dump(self.config, name))
    }

    fn value(&self, key: &str) -> Result<f64> {
        self.record.value(key).ok_or_else(|| {
            Error::Config(format!(
                "run (seed {}) has no summary value '{key}'",
                self.config.seed
            ))
        })
    }
}

fn missing_dump(cfg: &RunConfig, name: &str) -> Error {
    let (tag, label) = name.rsplit_once('-').unwrap_or((name, ""));
    Error::Config(format!(
        "run (seed {}) has no '{name}' dump; produce it with `pxrl dump --run <DIR> --probe {tag} --step <K> --label {label}` \
         or rerun the experiment",
        cfg.seed
    ))
}

/// Short label of the model family, e.g. `predictive-g0.8`.
pub fn family_label(cfg: &RunConfig) -> String {
    match cfg.model.family {
        FamilyName::MfOnly => "mf-only".into(),
        FamilyName::NegOnly => "neg-only".into(),
        FamilyName::Predictive => format!("predictive-g{}", cfg.model.gamma),
    }
}

const GROUP_COLUMNS: [&str; 5] = ["family", "gamma", "latent", "epsilon", "p"];

fn group_key(cfg: &RunConfig) -> Vec<String> {
    vec![
        family_label(cfg),
        num(cfg.model.gamma_pred()),
        cfg.model.latent.to_string(),
        num(cfg.train.epsilon),
        num(cfg.env.stochasticity),
    ]
}

fn header_with(extra: &[&str]) -> Vec<String> {
    GROUP_COLUMNS
        .iter()
        .chain(extra)
        .map(|s| s.to_string())
        .collect()
}

/// Groups per-run values by sweep settings, in a stable order.
fn grouped(
    runs: &[Run],
    value: impl Fn(&Run) -> Result<f64>,
) -> Result<BTreeMap<Vec<String>, Vec<f64>>> {
    let mut out: BTreeMap<Vec<String>, Vec<f64>> = BTreeMap::new();
    for r in runs {
        out.entry(group_key(r.config)).or_default().push(value(r)?);
    }
    Ok(out)
}

fn per_run_and_summary(
    name: &str,
    column: &str,
    runs: &[Run],
    value: impl Fn(&Run) -> Result<f64>,
) -> Result<Vec<Table>> {
    let mut per = Table::new(name, &header_with(&["seed", column]));
    for r in runs {
        let mut row = group_key(r.config);
        row.push(r.config.seed.to_string());
        row.push(num(value(r)?));
        per.push(row);
    }
    let mut sum = Table::new(
        &format!("{name}-summary"),
        &header_with(&["n", "mean", "se", "median"]),
    );
    for (key, vals) in grouped(runs, &value)? {
        let mut row = key;
        row.extend([
            vals.len().to_string(),
            num(mean(&vals)),
            num(std_error(&vals)),
            opt(median(&vals)),
        ]);
        sum.push(row);
    }
    Ok(vec![per, sum])
}

// ---------------------------------------------------------------------------
// measurements shared with the acceptance suite

/// First evaluation step with score >= 0.9, infinite if never reached.
pub fn first_step_reaching(record: &RunRecord, threshold: f64) -> f64 {
    record
        .metrics
        .iter()
        .find(|m| m.score >= threshold)
        .map_or(f64::INFINITY, |m| m.step as f64)
}

pub fn final_score(record: &RunRecord) -> f64 {
    record.final_score().unwrap_or(0.0)
}

/// Silent fraction of the final latent dump.
pub fn latent_silent_fraction(run: &Run, threshold: f64) -> Result<f64> {
    Ok(silent_fraction(run.dump("z-final")?, threshold))
}

/// Fixed random state pairs of a run.
pub fn cosine_pairs(cfg: &RunConfig, n_states: usize) -> Vec<(usize, usize)> {
    sample_state_pairs(n_states, COSINE_PAIRS, &mut seed::stream(cfg.seed, "pairs"))
}

/// Mean random-pair cosine similarity of the final latent dump.
pub fn final_pair_cosine(run: &Run) -> Result<f64> {
    let d = run.dump("z-final")?;
    let states: Vec<Vec<f64>> = (0..d.n_states).map(|s| d.population(s, 0)).collect();
    Ok(pairwise_cosine_trajectory(&[states], &cosine_pairs(run.config, d.n_states))[0].0)
}

/// Spatial information of every unit of a single-condition dump, highest first.
pub fn ranked_information(dump: &ActivationDump) -> Result<Vec<(usize, f64)>> {
    let mut si = Vec::with_capacity(dump.n_units);
    for u in 0..dump.n_units {
        si.push((u, spatial_information(&rate_map(dump, u, 0)?)?));
    }
    si.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(si)
}

/// Mean spatial information of the four most informative transition units.
pub fn top4_information(run: &Run) -> Result<f64> {
    let si = ranked_information(run.dump("t-output-final")?)?;
    Ok(mean(&si.iter().take(4).map(|x| x.1).collect::<Vec<_>>()))
}

/// Rate map of every unit of a single-condition dump.
pub fn unit_rate_maps(dump: &ActivationDump) -> Result<Vec<Vec<f64>>> {
    (0..dump.n_units)
        .map(|u| Ok(rate_map(dump, u, 0)?.rates))
        .collect()
}

/// Median peak shift of transition units between the two track phases.
pub fn track_peak_shift(run: &Run) -> Result<Option<f64>> {
    Ok(field_peak_shift(
        &unit_rate_maps(run.dump("t-output-pre")?)?,
        &unit_rate_maps(run.dump("t-output-post")?)?,
    )
    .median)
}

/// Median peak-to-reward distance of the trained and the weight-shuffled model.
pub fn track_reward_distance(run: &Run) -> Result<(Option<f64>, Option<f64>)> {
    let reward = run.value("reward_state")? as usize;
    let model = peak_reward_distance(&unit_rate_maps(run.dump("t-output-post")?)?, reward).median;
    let control =
        peak_reward_distance(&unit_rate_maps(run.dump("t-output-shuffled")?)?, reward).median;
    Ok((model, control))
}

/// Left/right population similarity along the stem.
pub fn stem_similarity(run: &Run) -> Result<Vec<Option<f64>>> {
    let d = run.dump("t-output-final")?;
    let side =
        |c: usize| -> Vec<Vec<f64>> { (0..d.n_states).map(|s| d.population(s, c)).collect() };
    Ok(split_similarity_profile(&side(0), &side(1)))
}

/// Per-unit selectivity over the corridor proper (vertical minus angled).
pub fn corridor_selectivity(dump: &ActivationDump) -> Vec<f64> {
    let states: Vec<usize> = (APPROACH_LEN..APPROACH_LEN + CORRIDOR_LEN).collect();
    (0..dump.n_units)
        .filter_map(|u| {
            let r = |c: usize| {
                states.iter().map(|s| dump.get(u, *s, c)).sum::<f64>() / states.len() as f64
            };
            selectivity_index(r(0), r(1))
        })
        .collect()
}

/// Mean selectivity before and after training.
pub fn selectivity_shift(run: &Run) -> Result<(f64, f64)> {
    let pre = corridor_selectivity(run.dump("encoder-early-pre")?);
    let post = corridor_selectivity(run.dump("encoder-early-post")?);
    Ok((mean(&pre), mean(&post)))
}

pub fn swap_deltas(run: &Run) -> Result<[f64; 3]> {
    Ok([
        run.value("delta_1")?,
        run.value("delta_2")?,
        run.value("delta_3")?,
    ])
}

/// Latents of every cell at each stored checkpoint, oldest first.
pub fn checkpoint_latents(run: &Run) -> Result<Vec<(usize, Vec<Vec<f64>>)>> {
    let env = build_grid(run.config)?;
    let mut out = Vec::with_capacity(run.record.checkpoints.len());
    let mut cks: Vec<_> = run.record.checkpoints.iter().collect();
    cks.sort_by_key(|(s, _)| *s);
    for (step, params) in cks {
        let bundle = restore_bundle(run.config, &env, params)?;
        out.push((*step, latent_table(&bundle, &env)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// figure tables

pub fn analyze(name: &str, runs: &[Run]) -> Result<Vec<Table>> {
    if runs.is_empty() {
        return Err(Error::Config("analysis needs at least one run".into()));
    }
    match name {
        "fig2b" => fig2b(runs),
        "fig2c" => fig2c(runs),
        "fig2e" => per_run_and_summary("fig2e", "final_score", runs, |r| Ok(final_score(r.record))),
        "fig2f" => fig2f(runs),
        "fig2g" => fig2g(runs),
        "fig3b" => fig3b(runs),
        "fig3e" => fig3e(runs),
        "fig3h" => per_run_and_summary("fig3h", "task_b_score", runs, |r| r.value("task_b_score")),
        "fig4b" => fig4b(runs),
        "fig4f" => fig4f(runs),
        "fig4g" => fig4g(runs),
        "fig4i" => fig4i(runs),
        "fig5d" => fig5d(runs),
        "fig5f" => fig5f(runs),
        "figa3d" => {
            per_run_and_summary("figa3d", "final_score", runs, |r| Ok(final_score(r.record)))
        }
        "figa5d" => {
            per_run_and_summary("figa5d", "final_score", runs, |r| Ok(final_score(r.record)))
        }
        other => Err(Error::Config(format!(
            "unknown analysis '{other}'; expected one of {}",
            FIGURES.join(", ")
        ))),
    }
}

fn fig2b(runs: &[Run]) -> Result<Vec<Table>> {
    let mut curves = Table::new(
        "fig2b-curves",
        &header_with(&["step", "n", "mean_score", "se"]),
    );
    let mut by_group: BTreeMap<Vec<String>, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in runs {
        let g = by_group.entry(group_key(r.config)).or_default();
        for m in &r.record.metrics {
            g.entry(m.step).or_default().push(m.score);
        }
    }
    for (key, steps) in by_group {
        for (step, vals) in steps {
            let mut row = key.clone();
            row.extend([
                step.to_string(),
                vals.len().to_string(),
                num(mean(&vals)),
                num(std_error(&vals)),
            ]);
            curves.push(row);
        }
    }
    let mut tables = per_run_and_summary("fig2b", "first_step_0.9", runs, |r| {
        Ok(first_step_reaching(r.record, 0.9))
    })?;
    tables.insert(0, curves);
    Ok(tables)
}

fn quadrant(x: usize, y: usize, side: usize) -> &'static str {
    match (x < side / 2, y < side / 2) {
        (true, true) => "top-left",
        (false, true) => "top-right",
        (true, false) => "bottom-left",
        (false, false) => "bottom-right",
    }
}

fn fig2c(runs: &[Run]) -> Result<Vec<Table>> {
    let mut coords = Table::new(
        "fig2c",
        &["seed", "state", "x", "y", "quadrant", "pc1", "pc2", "pc3"],
    );
    let mut explained = Table::new(
        "fig2c-explained",
        &["seed", "ev1", "ev2", "ev3", "rank_deficient"],
    );
    let mut edges = Table::new("fig2c-edges", &["seed", "a", "b"]);
    for r in runs {
        let d = r.dump("z-final")?;
        let side = r.config.env.side;
        let pts: Vec<Vec<f64>> = (0..d.n_states).map(|s| d.population(s, 0)).collect();
        let p = pca3(&pts)?;
        let seed = r.config.seed.to_string();
        for (s, c) in p.coords.iter().enumerate() {
            let (x, y) = d.coords[s];
            coords.push(vec![
                seed.clone(),
                s.to_string(),
                x.to_string(),
                y.to_string(),
                quadrant(x, y, side).into(),
                num(c[0]),
                num(c[1]),
                num(c[2]),
            ]);
        }
        explained.push(vec![
            seed.clone(),
            num(p.explained[0]),
            num(p.explained[1]),
            num(p.explained[2]),
            p.rank_deficient.to_string(),
        ]);
        for (a, &(x, y)) in d.coords.iter().enumerate() {
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if let Some(b) = d.state_of((nx, ny)) {
                    edges.push(vec![seed.clone(), a.to_string(), b.to_string()]);
                }
            }
        }
    }
    Ok(vec![coords, explained, edges])
}

fn fig2f(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new(
        "fig2f",
        &header_with(&["seed", "silent_fraction", "silent_fraction_2x"]),
    );
    for r in runs {
        let mut row = group_key(r.config);
        row.extend([
            r.config.seed.to_string(),
            num(latent_silent_fraction(r, SILENT_THRESHOLD)?),
            num(latent_silent_fraction(r, 2.0 * SILENT_THRESHOLD)?),
        ]);
        t.push(row);
    }
    let mut tables = vec![t];
    tables.extend(per_run_and_summary(
        "fig2f-final-cosine",
        "pair_cosine",
        runs,
        final_pair_cosine,
    )?);
    Ok(tables)
}

fn fig2g(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new(
        "fig2g",
        &header_with(&["seed", "step", "mean_cosine", "collapsed_pairs"]),
    );
    for r in runs {
        let lat = checkpoint_latents(r)?;
        let n = lat.first().map_or(0, |(_, z)| z.len());
        let pairs = cosine_pairs(r.config, n);
        let zs: Vec<Vec<Vec<f64>>> = lat.iter().map(|(_, z)| z.clone()).collect();
        for ((step, _), (c, flagged)) in lat.iter().zip(pairwise_cosine_trajectory(&zs, &pairs)) {
            let mut row = group_key(r.config);
            row.extend([
                r.config.seed.to_string(),
                step.to_string(),
                num(c),
                flagged.to_string(),
            ]);
            t.push(row);
        }
    }
    Ok(vec![t])
}

/// Per-seed Spearman correlation of task-B score with the horizon, over the
/// runs sharing that seed.
pub fn horizon_correlations(runs: &[Run]) -> Result<Vec<(u64, f64)>> {
    let mut by_seed: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in runs {
        by_seed
            .entry(r.config.seed)
            .or_default()
            .push((r.config.model.gamma_pred(), r.value("task_b_score")?));
    }
    Ok(by_seed
        .into_iter()
        .filter(|(_, v)| v.len() >= 2)
        .map(|(s, v)| {
            let (g, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            (s, spearman(&g, &b))
        })
        .collect())
}

fn fig3b(runs: &[Run]) -> Result<Vec<Table>> {
    let mut tables =
        per_run_and_summary("fig3b", "task_b_score", runs, |r| r.value("task_b_score"))?;
    let mut corr = Table::new("fig3b-spearman", &["seed", "spearman"]);
    let rho = horizon_correlations(runs)?;
    for (s, c) in &rho {
        corr.push(vec![s.to_string(), num(*c)]);
    }
    let vals: Vec<f64> = rho.iter().map(|x| x.1).collect();
    corr.push(vec!["mean".into(), num(mean(&vals))]);
    tables.push(corr);
    Ok(tables)
}

fn fig3e(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new(
        "fig3e",
        &header_with(&["seed", "step", "corner_a", "corner_b", "cosine"]),
    );
    for r in runs {
        let lat = checkpoint_latents(r)?;
        let zs: Vec<Vec<Vec<f64>>> = lat.iter().map(|(_, z)| z.clone()).collect();
        let side = r.config.env.side;
        for ((a, b), series) in corner_separation(&zs, side, side) {
            for ((step, _), c) in lat.iter().zip(series) {
                let mut row = group_key(r.config);
                row.extend([
                    r.config.seed.to_string(),
                    step.to_string(),
                    format!("{}:{}", a.0, a.1),
                    format!("{}:{}", b.0, b.1),
                    num(c),
                ]);
                t.push(row);
            }
        }
    }
    Ok(vec![t])
}

fn fig4b(runs: &[Run]) -> Result<Vec<Table>> {
    let mut maps_t = Table::new(
        "fig4b",
        &header_with(&["seed", "rank", "unit", "information", "x", "y", "rate"]),
    );
    for r in runs {
        let d = r.dump("t-output-final")?;
        for (rank, (u, si)) in ranked_information(d)?.into_iter().take(4).enumerate() {
            for s in 0..d.n_states {
                let (x, y) = d.coords[s];
                let mut row = group_key(r.config);
                row.extend([
                    r.config.seed.to_string(),
                    rank.to_string(),
                    u.to_string(),
                    num(si),
                    x.to_string(),
                    y.to_string(),
                    num(d.get(u, s, 0)),
                ]);
                maps_t.push(row);
            }
        }
    }
    let mut tables = vec![maps_t];
    tables.extend(per_run_and_summary(
        "fig4b-top4",
        "top4_information",
        runs,
        top4_information,
    )?);
    Ok(tables)
}

fn fig4f(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new("fig4f", &["seed", "unit", "shift", "tied"]);
    let mut all = Vec::new();
    for r in runs {
        let ps = field_peak_shift(
            &unit_rate_maps(r.dump("t-output-pre")?)?,
            &unit_rate_maps(r.dump("t-output-post")?)?,
        );
        for (u, s) in ps.shifts.iter().enumerate() {
            if let Some(s) = s {
                all.push(*s);
            }
            t.push(vec![
                r.config.seed.to_string(),
                u.to_string(),
                opt(*s),
                ps.tied.contains(&u).to_string(),
            ]);
        }
    }
    t.push(vec![
        "median".into(),
        String::new(),
        opt(median(&all)),
        String::new(),
    ]);
    Ok(vec![t])
}

fn fig4g(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new("fig4g", &["seed", "source", "unit", "distance"]);
    let (mut model, mut control) = (Vec::new(), Vec::new());
    for r in runs {
        let reward = r.value("reward_state")? as usize;
        for (source, dump, acc) in [
            ("model", "t-output-post", &mut model),
            ("shuffled", "t-output-shuffled", &mut control),
        ] {
            let rd = peak_reward_distance(&unit_rate_maps(r.dump(dump)?)?, reward);
            for (u, d) in rd.distances.iter().enumerate() {
                if let Some(d) = d {
                    acc.push(*d);
                }
                t.push(vec![
                    r.config.seed.to_string(),
                    source.into(),
                    u.to_string(),
                    opt(*d),
                ]);
            }
        }
    }
    t.push(vec![
        "median".into(),
        "model".into(),
        String::new(),
        opt(median(&model)),
    ]);
    t.push(vec![
        "median".into(),
        "shuffled".into(),
        String::new(),
        opt(median(&control)),
    ]);
    Ok(vec![t])
}

fn fig4i(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new("fig4i", &header_with(&["seed", "position", "similarity"]));
    let mut by_group: BTreeMap<Vec<String>, Vec<Vec<Option<f64>>>> = BTreeMap::new();
    for r in runs {
        let prof = stem_similarity(r)?;
        for (pos, s) in prof.iter().enumerate() {
            let mut row = group_key(r.config);
            row.extend([r.config.seed.to_string(), pos.to_string(), opt(*s)]);
            t.push(row);
        }
        by_group.entry(group_key(r.config)).or_default().push(prof);
    }
    let mut sum = Table::new(
        "fig4i-summary",
        &header_with(&["position", "n", "mean_similarity"]),
    );
    for (key, profs) in by_group {
        for (pos, vals) in mean_profile(&profs).into_iter().enumerate() {
            let mut row = key.clone();
            row.extend([pos.to_string(), vals.0.to_string(), num(vals.1)]);
            sum.push(row);
        }
    }
    Ok(vec![t, sum])
}

/// Mean over runs of each position's similarity, skipping undefined entries.
/// Returns `(count, mean)` per position.
pub fn mean_profile(profiles: &[Vec<Option<f64>>]) -> Vec<(usize, f64)> {
    let n = profiles.first().map_or(0, Vec::len);
    (0..n)
        .map(|pos| {
            let vals: Vec<f64> = profiles.iter().filter_map(|p| p[pos]).collect();
            (vals.len(), mean(&vals))
        })
        .collect()
}

fn fig5d(runs: &[Run]) -> Result<Vec<Table>> {
    let mut t = Table::new(
        "fig5d",
        &header_with(&["seed", "unit", "delta_1", "delta_2", "delta_3"]),
    );
    let mut by_family: BTreeMap<Vec<String>, Vec<[f64; 3]>> = BTreeMap::new();
    for r in runs {
        let d = swap_deltas(r)?;
        let mut row = group_key(r.config);
        row.extend([
            r.config.seed.to_string(),
            num(r.value("unit")?),
            num(d[0]),
            num(d[1]),
            num(d[2]),
        ]);
        t.push(row);
        by_family.entry(group_key(r.config)).or_default().push(d);
    }
    let mut sum = Table::new(
        "fig5d-summary",
        &header_with(&["n", "mean_1", "mean_2", "mean_3", "se_3"]),
    );
    for (key, ds) in &by_family {
        let col = |k: usize| ds.iter().map(|d| d[k]).collect::<Vec<_>>();
        let mut row = key.clone();
        row.extend([
            ds.len().to_string(),
            num(mean(&col(0))),
            num(mean(&col(1))),
            num(mean(&col(2))),
            num(std_error(&col(2))),
        ]);
        sum.push(row);
    }
    let mut tables = vec![t, sum];
    if by_family.len() == 2 {
        let groups: Vec<Vec<f64>> = by_family
            .values()
            .map(|ds| ds.iter().map(|d| d[2]).collect())
            .collect();
        let w = welch_t_test(&groups[0], &groups[1]);
        let mut test = Table::new("fig5d-welch", &["t", "df", "p"]);
        test.push(vec![num(w.t), num(w.df), num(w.p)]);
        tables.push(test);
    }
    Ok(tables)
}

fn fig5f(runs: &[Run]) -> Result<Vec<Table>> {
    let mut units = Table::new("fig5f", &header_with(&["seed", "phase", "selectivity"]));
    let mut pre_means = Vec::new();
    let mut post_means = Vec::new();
    let mut per = Table::new(
        "fig5f-runs",
        &header_with(&["seed", "mean_pre", "mean_post"]),
    );
    for r in runs {
        for (phase, name) in [("pre", "encoder-early-pre"), ("post", "encoder-early-post")] {
            for si in corridor_selectivity(r.dump(name)?) {
                let mut row = group_key(r.config);
                row.extend([r.config.seed.to_string(), phase.into(), num(si)]);
                units.push(row);
            }
        }
        let (pre, post) = selectivity_shift(r)?;
        pre_means.push(pre);
        post_means.push(post);
        let mut row = group_key(r.config);
        row.extend([r.config.seed.to_string(), num(pre), num(post)]);
        per.push(row);
    }
    let test = paired_t_test_greater(&post_means, &pre_means);
    let mut t = Table::new(
        "fig5f-test",
        &["n", "mean_pre", "mean_post", "t", "df", "p_one_tailed"],
    );
    t.push(vec![
        runs.len().to_string(),
        num(mean(&pre_means)),
        num(mean(&post_means)),
        num(test.t),
        num(test.df),
        num(test.p),
    ]);
    Ok(vec![units, per, t])
}
