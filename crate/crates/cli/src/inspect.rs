use std::fmt::Write as _;
use std::fs;

use anyhow::{Context, Result};
use nbv_core::features::{rrf, RrfVector};
use nbv_core::planner::EpisodeResult;
use nbv_core::Pdv;

use crate::usage;

/// Top `k` entries of a vector as `index:value` pairs, largest first.
fn top(values: &[f64], k: usize) -> String {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.iter()
        .take(k)
        .map(|&i| format!("{i}:{:.3}", values[i]))
        .collect::<Vec<_>>()
        .join(" ")
}

fn load(spec: &str) -> Result<EpisodeResult> {
    let (path, index) = spec
        .rsplit_once(':')
        .ok_or_else(|| usage(format!("expected `raw.jsonl:N`, got `{spec}`")))?;
    let index: usize = index
        .parse()
        .map_err(|_| usage(format!("episode index `{index}` is not a non-negative integer")))?;
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {path}: {e}")))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let line = lines
        .get(index)
        .ok_or_else(|| usage(format!("{path} holds {} episodes; index {index} is out of range", lines.len())))?;
    serde_json::from_str(line).with_context(|| format!("{path}: record {index}"))
}

pub fn run(spec: &str, csv: bool) -> Result<()> {
    let ep = load(spec)?;
    let out = if csv { render_csv(&ep)? } else { render_text(&ep)? };
    print!("{out}");
    Ok(())
}

fn render_text(ep: &EpisodeResult) -> Result<String> {
    let mut s = String::new();
    writeln!(
        s,
        "episode {} | planner {} | domain {} | start {} | true place {} | final rank {}",
        ep.episode, ep.planner, ep.domain, ep.start, ep.true_place, ep.rank
    )?;
    writeln!(s, "actions (m): {:?}", ep.actions)?;
    if ep.steps.is_empty() {
        writeln!(s, "no per-step trace stored; final place belief:")?;
        writeln!(s, "  top places {}", top(ep.final_place_pdv.as_slice(), 5))?;
        return Ok(s);
    }
    for st in &ep.steps {
        let RrfVector(olc_rrf) = rrf(&st.place_pdv)?;
        let moved = st.action_m.map_or("start".to_string(), |m| format!("+{m} m"));
        writeln!(s, "t={} viewpoint {} ({moved})", st.t, st.viewpoint)?;
        writeln!(s, "  place belief  {}", top(st.place_pdv.as_slice(), 5))?;
        writeln!(s, "  place rrf     {}", top(&olc_rrf, 5))?;
        if let Some(ilc) = &st.ilc {
            let RrfVector(ilc_rrf) = rrf(ilc)?;
            writeln!(s, "  action pdv    {}", top(ilc.as_slice(), 5))?;
            writeln!(s, "  action rrf    {}", top(&ilc_rrf, 5))?;
        }
    }
    Ok(s)
}

/// One row per (step, place) so the output plots without reshaping.
fn render_csv(ep: &EpisodeResult) -> Result<String> {
    let mut s = String::from("episode,t,viewpoint,action_m,place,prob,rrf,final_true_place\n");
    let steps: Vec<(usize, usize, Option<usize>, &Pdv)> = if ep.steps.is_empty() {
        vec![(ep.actions.len(), ep.final_viewpoint, ep.actions.last().copied(), &ep.final_place_pdv)]
    } else {
        ep.steps.iter().map(|st| (st.t, st.viewpoint, st.action_m, &st.place_pdv)).collect()
    };
    for (t, v, action, pdv) in steps {
        let RrfVector(r) = rrf(pdv)?;
        let action = action.map(|m| m.to_string()).unwrap_or_default();
        for (place, (&p, &rr)) in pdv.as_slice().iter().zip(&r).enumerate() {
            writeln!(
                s,
                "{},{t},{v},{action},{place},{p},{rr},{}",
                ep.episode, ep.true_place
            )?;
        }
    }
    Ok(s)
}
