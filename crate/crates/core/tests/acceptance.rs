//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use styleforge::adapters::{
    backend_config, make_classifier, make_seq2seq, Hyperparams, IdentityTranslator, SentimentClassifier,
};
use styleforge::attribution::{select_style_tokens, token_attributions, MaskingConfig};
use styleforge::config::Config;
use styleforge::corpus::{polarity_subset, split_corpus};
use styleforge::llm::{build_prompt, PromptExample, PromptTemplate};
use styleforge::metrics::{avg_score, bleu};
use styleforge::orchestrate::{read_outputs, run, CellFilter, Stage};
use styleforge::pipelines::{
    batch_size_search, build_ae_pairs, build_bt_pairs, build_joint_dataset, build_msf_pairs, register_joint_tokens,
    train_classifier, MethodologyKind, PipelineError,
};
use styleforge::report::fixtures::published_results;
use styleforge::report::{
    aggregate_human_eval, human_eval_sheets, render_table, HumanEvalSource, KeyEntry, Metric, RatedRow,
};
use styleforge::{Direction, LanguageTag, Polarity, SplitSpec};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    if ok { Ok(detail.into()) } else { Err(detail.into()) }
}

fn within(t: Instant, limit: Duration) -> Outcome {
    let e = t.elapsed();
    check(e < limit, format!("{:.3}s (limit {}s)", e.as_secs_f64(), limit.as_secs()))
}

fn avg_replay() -> Outcome {
    let t = Instant::now();
    let cells = published_results();
    let worst = cells
        .iter()
        .map(|c| (avg_score(c.acc, c.bleu, c.cs) - c.avg).abs())
        .fold(0.0f64, f64::max);
    check(worst <= 0.05 + 1e-9, format!("{} cells, worst deviation {worst:.3}", cells.len()))?;
    let get = |l, m: &str| cells.iter().find(|c| c.language == l && c.methodology == m).map(|c| avg_score(c.acc, c.bleu, c.cs));
    check(
        get(LanguageTag::En, "Parallel") == Some(69.2)
            && get(LanguageTag::Hi, "Parallel") == Some(71.2)
            && get(LanguageTag::Mag, "Parallel") == Some(64.8),
        "anchor rows",
    )?;
    within(t, Duration::from_secs(1)).map(|d| format!("{} cells within 0.05, {d}", cells.len()))
}

fn bleu_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let vocab = ["a", "b", "c", "d"];
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=5);
        let mut sent = || {
            let len = rng.random_range(0..=10);
            (0..len).map(|_| vocab[rng.random_range(0..4)]).collect::<Vec<_>>().join(" ")
        };
        let (c, r): (Vec<String>, Vec<String>) = (0..n).map(|_| (sent(), sent())).unzip();
        worst = worst.max((bleu(&c, &r).map_err(|e| e.to_string())? - common::bleu_oracle(&c, &r)).abs());
        check(bleu(&c, &c).map_err(|e| e.to_string())? == 100.0, "bleu(x, x) != 100")?;
    }
    check(worst <= 1e-9, format!("200 corpora, max |diff| {worst:.1e}, bleu(x,x)=100"))
}

fn msf_correctness() -> Outcome {
    let clf = common::toy_lexicon();
    let mut rng = StdRng::seed_from_u64(21);
    let cfg = MaskingConfig::default();
    let mut total = 0.0;
    let mut monotone = true;
    for _ in 0..50 {
        let s = common::random_sentence(&mut rng, 7);
        let label = clf.predict(&s).map_err(|e| e.to_string())?;
        let a = token_attributions(&clf, &s, label, &cfg).map_err(|e| e.to_string())?;
        total += common::spearman(&a.raw_scores, &common::leave_one_out(&clf, &s, label));
        let sets: Vec<BTreeSet<usize>> =
            MaskingConfig::THRESHOLD_GRID.iter().map(|&t| select_style_tokens(&a, t)).collect();
        monotone &= sets.windows(2).all(|w| w[1].is_subset(&w[0]));
    }
    let rho = total / 50.0;
    check(rho >= 0.9, format!("mean spearman {rho:.3}"))?;
    check(monotone, "threshold grid not monotone")?;

    let corpus = common::synthetic_corpus(LanguageTag::Hi, 40, 3);
    let above = MaskingConfig::with_threshold(1.5);
    for p in [Polarity::Positive, Polarity::Negative] {
        let s = polarity_subset(&corpus, p);
        let ae = build_ae_pairs(&s);
        let bt = build_bt_pairs(&s, LanguageTag::Hi, &IdentityTranslator, LanguageTag::En).map_err(|e| e.to_string())?;
        for base in [ae, bt] {
            let msf = build_msf_pairs(&base, &clf, p, &above).map_err(|e| e.to_string())?;
            check(serde_json::to_vec(&msf).unwrap() == serde_json::to_vec(&base).unwrap(), "MSF differs from base")?;
        }
    }
    Ok(format!("spearman {rho:.3}, grid monotone, threshold>1 byte-identical"))
}

fn split_contract() -> Outcome {
    let t = Instant::now();
    let hi = common::synthetic_corpus(LanguageTag::Hi, 1000, 1);
    let mr = hi.relabel(LanguageTag::Mr);
    let spec = SplitSpec::default();
    let a = split_corpus(&hi, &spec).map_err(|e| e.to_string())?;
    let b = split_corpus(&hi, &spec).map_err(|e| e.to_string())?;
    let m = split_corpus(&mr, &spec).map_err(|e| e.to_string())?;
    let sizes = (a.train.len(), a.dev.len(), a.test.len());
    check(sizes == (400, 100, 500), format!("sizes {sizes:?}"))?;
    let ids: Vec<BTreeSet<u64>> = [&a.train, &a.dev, &a.test].iter().map(|c| c.ids().into_iter().collect()).collect();
    check(ids.iter().map(BTreeSet::len).sum::<usize>() == ids.iter().flatten().collect::<BTreeSet<_>>().len(), "overlap")?;
    check(a.assignment() == b.assignment(), "not deterministic")?;
    check(a.assignment() == m.assignment(), "not aligned across languages")?;
    within(t, Duration::from_secs(1)).map(|d| format!("(400, 100, 500), disjoint, deterministic, aligned, {d}"))
}

fn joint_shape() -> Outcome {
    let splits: BTreeMap<LanguageTag, _> =
        LanguageTag::ALL.iter().map(|&l| (l, common::synthetic_corpus(l, 400, 2))).collect();
    let j = build_joint_dataset(&splits);
    check(j.len() == 7200, format!("{} examples", j.len()))?;
    check(
        j.iter().all(|e| e.input.starts_with(&format!("{} ", e.language.prefix_token()))),
        "missing prefix",
    )?;
    let mut m = make_seq2seq(&backend_config([("backend", "tiny-random")])).map_err(|e| e.to_string())?;
    check(register_joint_tokens(m.as_mut()), "registration refused")?;
    let special = m.special_tokens();
    check(LanguageTag::ALL.iter().all(|l| special.contains(&l.prefix_token())), "prefix not registered")?;
    Ok("7200 prefixed examples, 9 prefixes registered".into())
}

fn smoke_config(dir: &Path) -> Result<Config, String> {
    common::write_corpora(&dir.join("data"), &[LanguageTag::En, LanguageTag::Hi], 20);
    let text = r#"
[data]
dir = "data"
languages = ["hi"]
seeds = [13]
train = 8
dev = 2
test = 10

[backends.translator]
id = "identity"

[experiments]
methodologies = ["Parallel", "AE", "BT", "MSF-AE", "Joint", "EnIpTrTrain", "EnOpTr"]
learning_rate = 0.05
epochs = 2
classifier_learning_rate = 0.5
classifier_epochs = 3
workers = 4
"#;
    let path = dir.join("smoke.toml");
    std::fs::write(&path, text).map_err(|e| e.to_string())?;
    Config::load(&path).map_err(|e| e.to_string())
}

fn end_to_end_smoke() -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = smoke_config(tmp.path())?;
    let summary = run(&cfg, Stage::Report, &CellFilter::default()).map_err(|e| e.to_string())?;
    check(summary.cells.len() == 7, format!("{} cells", summary.cells.len()))?;
    for c in &summary.cells {
        if let Some(e) = &c.error {
            return Err(format!("{}: {e}", c.methodology));
        }
        let r = c.report.as_ref().ok_or_else(|| format!("{}: no report", c.methodology))?;
        let outs = read_outputs(&c.dir).map_err(|e| e.to_string())?;
        for d in Direction::BOTH {
            let n = outs.get(&d).map(Vec::len).unwrap_or(0);
            check(n == 10 && r.per_direction[&d].n == 10, format!("{} {d}: {n} outputs", c.methodology))?;
        }
        let finite = [r.acc, r.bleu, r.cs, r.ppl, r.avg].iter().all(|v| v.is_finite());
        check(finite && r.ppl > 0.0 && (r.avg - avg_score(r.acc, r.bleu, r.cs)).abs() < 1e-9, "malformed report")?;
    }
    let kinds: BTreeSet<MethodologyKind> = summary.cells.iter().map(|c| c.methodology).collect();
    check(kinds.len() == 7, "missing methodology")?;
    within(t, Duration::from_secs(120)).map(|d| format!("7 methodologies, 10 outputs per direction, {d}"))
}

fn prompt_fidelity() -> Outcome {
    let v: serde_json::Value =
        serde_json::from_str(include_str!("../fixtures/prompt_hi.json")).map_err(|e| e.to_string())?;
    let published = v["published_prompt"].as_str().ok_or("fixture lacks published_prompt")?;
    let body = published.trim().trim_start_matches("<p>").trim_end_matches("</p>");
    let paras: Vec<&str> = body.split("</p> <p>").collect();
    let task = |s: &str| match s {
        "positive to negative" => Direction::Pos2Neg,
        _ => Direction::Neg2Pos,
    };
    let mut examples = Vec::new();
    for p in &paras[2..paras.len() - 1] {
        let rest = p.strip_prefix("Task: ").ok_or("bad example")?;
        let (t, rest) = rest.split_once(" Input: ").ok_or("bad example")?;
        let (i, o) = rest.split_once(" Output: ").ok_or("bad example")?;
        examples.push(PromptExample { direction: task(t), input: i.into(), output: o.into() });
    }
    let (_, last) = paras[paras.len() - 1].split_once(" Task: ").ok_or("bad instruction")?;
    let (t, input) = last.split_once(" Input: ").ok_or("bad instruction")?;
    let prompt = build_prompt(&PromptTemplate::new(LanguageTag::Hi, task(t), examples), input)
        .map_err(|e| e.to_string())?;

    let n = paras.len();
    let expected = paras
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let p = p.replace(" Input: ", "\nInput: ").replace(" Output: ", "\nOutput: ");
            if k == n - 1 { p.replacen(" Task: ", "\nTask: ", 1) } else { p }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
        + "\nOutput:";
    check(prompt.replace("\r\n", "\n") == expected, "prompt differs from published layout")?;
    check(prompt.ends_with("\nOutput:"), "last line is not Output:")?;
    Ok(format!("{} bytes identical, ends with Output:", prompt.len()))
}

fn classifier_sanity() -> Outcome {
    let corpus = common::synthetic_corpus(LanguageTag::En, 500, 17);
    let split = split_corpus(&corpus, &SplitSpec { train_n: 400, dev_n: 100, test_n: 0, seed: 13 })
        .map_err(|e| e.to_string())?;
    let mut clf = make_classifier(&backend_config([("backend", "tiny-random")])).map_err(|e| e.to_string())?;
    let hyper = Hyperparams { learning_rate: 0.5, epochs: 5, batch_size: 4, l2_strength: 0.0, ..Hyperparams::default() };
    let rep = train_classifier(clf.as_mut(), &split.train, &split.dev, &hyper, 13).map_err(|e| e.to_string())?;
    let acc = rep.dev_accuracy.unwrap_or(0.0);
    check(acc >= 95.0, format!("dev accuracy {acc:.1}"))?;

    let scores = HashMap::from([(1usize, 88.0), (2, 93.0), (4, 93.0)]);
    let r = batch_size_search::<PipelineError>(&[1, 2, 4], |b| Ok(scores[&b])).map_err(|e| e.to_string())?;
    check(r.best == 2, format!("search picked {}", r.best))?;
    let r = batch_size_search::<PipelineError>(&[1, 2, 4], |_| Ok(1.0)).map_err(|e| e.to_string())?;
    check(r.best == 1, "tie not broken to smallest")?;
    Ok(format!("dev accuracy {acc:.1} after 5 epochs, batch search arg-best with smallest tie-break"))
}

fn report_rendering() -> Outcome {
    let reports: Vec<_> = published_results().iter().map(|c| c.to_report()).collect();
    let t = render_table(&reports).map_err(|e| e.to_string())?;
    check(t.is_best(LanguageTag::En, "GPT-3.5", Metric::Avg), "GPT-3.5 not best English AVG")?;
    let gpt = reports.iter().find(|r| r.language == LanguageTag::En && r.methodology == "GPT-3.5").ok_or("no GPT-3.5")?;
    check(gpt.avg == 73.3, format!("GPT-3.5 AVG {}", gpt.avg))?;
    for lang in LanguageTag::ALL {
        let group: Vec<_> = reports.iter().filter(|r| r.language == lang).collect();
        let min = group.iter().map(|r| (r.ppl * 10.0).round()).fold(f64::INFINITY, f64::min);
        let marked: Vec<_> = group.iter().filter(|r| t.is_best(lang, &r.methodology, Metric::Ppl)).collect();
        check(marked.len() == 1 && (marked[0].ppl * 10.0).round() == min, format!("{lang} PPL minimum"))?;
    }

    let test = common::synthetic_corpus(LanguageTag::En, 60, 5);
    let src = |m: &str| HumanEvalSource {
        model: m.into(),
        language: LanguageTag::En,
        test: test.clone(),
        outputs: Direction::BOTH
            .into_iter()
            .map(|d| (d, styleforge::corpus::direction_view(&test, d).into_iter().map(|e| e.target).collect()))
            .collect(),
    };
    let items = human_eval_sheets(&[src("Parallel"), src("Joint"), src("GPT-3.5")], 50, 13).map_err(|e| e.to_string())?;
    for m in ["Parallel", "Joint", "GPT-3.5"] {
        let pos = items.iter().filter(|i| i.model == m && i.direction == Direction::Pos2Neg).count();
        let neg = items.iter().filter(|i| i.model == m && i.direction == Direction::Neg2Pos).count();
        check((pos, neg) == (25, 25), format!("{m}: {pos}/{neg}"))?;
    }
    check(items.iter().all(|i| !i.item_code.contains(&i.model)), "item codes reveal the model")?;

    let parallel: Vec<_> = items.iter().filter(|i| i.model == "Parallel").collect();
    let key: HashMap<String, KeyEntry> = parallel
        .iter()
        .map(|i| (i.item_code.clone(), KeyEntry { model: i.model.clone(), language: i.language }))
        .collect();
    let rows: Vec<RatedRow> = parallel
        .iter()
        .enumerate()
        .map(|(k, i)| RatedRow {
            item_code: i.item_code.clone(),
            style: Some(if k < 49 { 4 } else { 5 }),
            content: Some(if k < 47 { 5 } else { 4 }),
            fluency: Some(if k < 46 { 5 } else { 4 }),
        })
        .collect();
    let s = aggregate_human_eval(&rows, &key).map_err(|e| e.to_string())?;
    let m = &s.means[0];
    check((m.style, m.content, m.fluency) == (4.02, 4.94, 4.92), format!("{m:?}"))?;
    Ok("GPT-3.5 EN AVG 73.3 best, PPL minima marked, 25/25 blinded sheets, 4.02/4.94/4.92".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 AVG fixture replay", avg_replay),
        ("2 BLEU oracle", bleu_oracle),
        ("3 MSF correctness", msf_correctness),
        ("4 split contract", split_contract),
        ("5 joint dataset shape", joint_shape),
        ("6 end-to-end smoke", end_to_end_smoke),
        ("7 prompt fidelity", prompt_fidelity),
        ("8 classifier sanity", classifier_sanity),
        ("9 report rendering", report_rendering),
    ];
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for (name, f) in criteria {
        let line = match f() {
            Ok(detail) => format!("PASS {name}: {detail}"),
            Err(detail) => {
                failed.push(name);
                format!("FAIL {name}: {detail}")
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
