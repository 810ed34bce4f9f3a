use finer_core::config::ExperimentConfig;
use finer_core::ensemble::Scenario;
use finer_core::explain::ExplainerId;
use finer_core::pipeline::*;

fn mean(v: &[f64]) -> f64 { v.iter().sum::<f64>() / v.len().max(1) as f64 }

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let train_epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(20);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let ft_epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(12);
    let lemna_pen: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let neighbors: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(300);
    let dir = std::env::temp_dir().join(format!("finer-c7-{train_epochs}-{lr}-{ft_epochs}-{lemna_pen}-{neighbors}-{}", std::env::var("MASTER").unwrap_or_default()));
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = ExperimentConfig::default();
    if let Ok(v) = std::env::var("MASTER") {
        cfg.master_seed = v.parse().unwrap();
    }
    cfg.out_dir = dir.clone();
    cfg.train.epochs = train_epochs;
    cfg.train.learning_rate = lr;
    cfg.finetune.epochs = ft_epochs;
    if let Ok(v) = std::env::var("TARGET") {
        cfg.train.target_train_accuracy = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("FTLR") {
        cfg.finetune.learning_rate = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("ICS") {
        let parts: Vec<usize> = v.split(',').map(|x| x.parse().unwrap()).collect();
        cfg.task.ics_per_sample = (parts[0], parts[1]);
    }
    cfg.explain.lemna_penalty = lemna_pen;
    cfg.explain.lime_neighbors = neighbors;
    cfg.explain.lemna_neighbors = neighbors;
    let t0 = std::time::Instant::now();
    run_gen_data(&cfg).unwrap();
    run_train(&cfg).unwrap();
    let ws = Workspace::load(&cfg).unwrap();
    let base = ws.load_model(ModelTag::Baseline).unwrap();
    let (mut pr, mut pb) = (vec![], vec![]);
    for it in &ws.test {
        let p = base.prob(&it.x_v.matrix).unwrap();
        if it.sample.label == 1 { pr.push(p) } else { pb.push(p) }
    }
    println!("baseline trained in {:?}: mean p_risk={:.3} p_benign={:.3}", t0.elapsed(), mean(&pr), mean(&pb));
    let t1 = std::time::Instant::now();
    run_finetune(&cfg).unwrap();
    println!("finetune took {:?}", t1.elapsed());
    let tuned = ws.load_model(ModelTag::Finetuned).unwrap();
    let (mut pr2, mut pb2) = (vec![], vec![]);
    for it in &ws.test {
        let p = tuned.prob(&it.x_v.matrix).unwrap();
        if it.sample.label == 1 { pr2.push(p) } else { pb2.push(p) }
    }
    println!("finetuned: mean p_risk={:.3} p_benign={:.3}", mean(&pr2), mean(&pb2));

    {
        use finer_core::net::{accuracy, LabeledSet};
        let test = LabeledSet {
            inputs: ws.test.iter().map(|i| i.x_v.matrix.clone()).collect(),
            labels: ws.test.iter().map(|i| i.sample.label).collect(),
        };
        let train = LabeledSet {
            inputs: ws.train.iter().map(|i| i.x_v.matrix.clone()).collect(),
            labels: ws.train.iter().map(|i| i.sample.label).collect(),
        };
        println!("acc: baseline train={:.3} test={:.3}; finetuned train={:.3} test={:.3}",
            accuracy(&base, &train).unwrap(), accuracy(&base, &test).unwrap(),
            accuracy(&tuned, &train).unwrap(), accuracy(&tuned, &test).unwrap());
    }
    let t2 = std::time::Instant::now();
    let k = cfg.explain.k;
    run_explain(&cfg, ModelTag::Baseline, Scenario::Unlimited, k).unwrap();
    run_explain(&cfg, ModelTag::Finetuned, Scenario::Unlimited, k).unwrap();
    run_explain(&cfg, ModelTag::Finetuned, Scenario::BlackBox, k).unwrap();
    run_explain(&cfg, ModelTag::Finetuned, Scenario::LowCost, k).unwrap();
    println!("explain x4 took {:?}", t2.elapsed());
    let paths = Paths::new(&cfg.out_dir);
    let pre = read_records(&paths.records(ModelTag::Baseline, Scenario::Unlimited, k)).unwrap();
    let post = read_records(&paths.records(ModelTag::Finetuned, Scenario::Unlimited, k)).unwrap();
    let per = |records: &[ExplanationRecord], id: ExplainerId| -> f64 {
        let v: Vec<f64> = records.iter()
            .filter(|r| r.weighted.reason.is_none() && r.ic_count > k)
            .filter_map(|r| r.weighted.per_explainer.iter().find(|e| e.id == id).map(|e| e.mpd))
            .collect();
        mean(&v)
    };
    println!("{:<10} {:>8} {:>8} {:>8}", "explainer", "pre", "post", "gain%");
    for id in ExplainerId::ALL {
        let (a, b) = (per(&pre, id), per(&post, id));
        println!("{:<10} {:>8.4} {:>8.4} {:>+8.1}", id.to_string(), a, b, (b - a) / a * 100.0);
    }
    let ens = |records: &[ExplanationRecord]| -> (f64, f64) {
        let w: Vec<f64> = records.iter().filter(|r| r.weighted.reason.is_none() && r.ic_count > k).map(|r| r.weighted.mpd).collect();
        let n: Vec<f64> = records.iter().filter(|r| r.weighted.reason.is_none() && r.ic_count > k).map(|r| r.naive.mpd).collect();
        (mean(&w), mean(&n))
    };
    let (w_pre, n_pre) = ens(&pre);
    let (w_post, n_post) = ens(&post);
    println!("ensemble weighted pre={w_pre:.4} post={w_post:.4}; naive pre={n_pre:.4} post={n_post:.4}");
    for sc in [Scenario::BlackBox, Scenario::LowCost, Scenario::Unlimited] {
        let recs = read_records(&paths.records(ModelTag::Finetuned, sc, k)).unwrap();
        let (w, n) = ens(&recs);
        println!("scenario {:<10} (post) naive={n:.4} weighted={w:.4} gain={:+.2}%", sc.to_string(), (w - n) / n * 100.0);
    }
    run_explain(&cfg, ModelTag::Baseline, Scenario::BlackBox, k).unwrap();
    run_explain(&cfg, ModelTag::Baseline, Scenario::LowCost, k).unwrap();
    for sc in [Scenario::BlackBox, Scenario::LowCost, Scenario::Unlimited] {
        let recs = read_records(&paths.records(ModelTag::Baseline, sc, k)).unwrap();
        let (w, n) = ens(&recs);
        println!("scenario {:<10} (pre)  naive={n:.4} weighted={w:.4} gain={:+.2}%", sc.to_string(), (w - n) / n * 100.0);
    }
    // AUC check (criterion 11 style) on post-finetune records
    let series: Vec<(String, Vec<f64>, Vec<bool>)> = post.iter()
        .filter(|r| r.weighted.reason.is_none())
        .map(|r| (r.sample_id.clone(), r.weighted.final_scores.clone(), r.truth.clone()))
        .collect();
    let rep = finer_core::metrics::localization_auc(&series);
    println!("ensemble mean per-sample AUC (post): {:.4} over {} samples, {} excluded", rep.mean, rep.per_sample.len(), rep.excluded);
    for id in ExplainerId::ALL {
        let s: Vec<(String, Vec<f64>, Vec<bool>)> = post.iter()
            .filter(|r| r.weighted.reason.is_none())
            .map(|r| (r.sample_id.clone(), r.weighted.per_explainer.iter().find(|e| e.id == id).unwrap().raw_scores.clone(), r.truth.clone()))
            .collect();
        let rp = finer_core::metrics::localization_auc(&s);
        println!("  post {:<10} auc={:.4}", id.to_string(), rp.mean);
    }
    for id in ExplainerId::ALL {
        let s: Vec<(String, Vec<f64>, Vec<bool>)> = pre.iter()
            .filter(|r| r.weighted.reason.is_none())
            .map(|r| (r.sample_id.clone(), r.weighted.per_explainer.iter().find(|e| e.id == id).unwrap().raw_scores.clone(), r.truth.clone()))
            .collect();
        let rp = finer_core::metrics::localization_auc(&s);
        println!("  pre  {:<10} auc={:.4} (n={})", id.to_string(), rp.mean, rp.per_sample.len());
    }
}
