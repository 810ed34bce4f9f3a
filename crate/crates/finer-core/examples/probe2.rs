use finer_core::config::ExperimentConfig;
use finer_core::net::{accuracy, fit, LabeledSet, Model};
use finer_core::pipeline::*;

fn mean(v: &[f64]) -> f64 { v.iter().sum::<f64>() / v.len().max(1) as f64 }

fn main() {
    let dir = std::env::temp_dir().join("finer-sweep");
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg = ExperimentConfig::default();
    cfg.out_dir = dir.clone();
    cfg.task.test_benign = 40;
    cfg.task.test_risk = 40;
    if let Ok(v) = std::env::var("ICS") {
        let parts: Vec<usize> = v.split(',').map(|x| x.parse().unwrap()).collect();
        cfg.task.ics_per_sample = (parts[0], parts[1]);
    }
    run_gen_data(&cfg).unwrap();
    let ws = Workspace::load(&cfg).unwrap();
    let train = LabeledSet {
        inputs: ws.train.iter().map(|i| i.x_v.matrix.clone()).collect(),
        labels: ws.train.iter().map(|i| i.sample.label).collect(),
    };
    let test = LabeledSet {
        inputs: ws.test.iter().map(|i| i.x_v.matrix.clone()).collect(),
        labels: ws.test.iter().map(|i| i.sample.label).collect(),
    };
    for lr in [0.02] {
        for epochs in [18usize, 20, 22, 26] {
            let model = Model::seeded(cfg.task.max_rows, cfg.task.embedding_dim, cfg.model_layers(), ws.seeds.model).unwrap();
            let mut tc = cfg.train_config();
            tc.learning_rate = lr;
            tc.max_epochs = epochs;
            let m = fit(&model, &train, &tc, &[]).unwrap();
            let (ta, va) = (accuracy(&m, &train).unwrap(), accuracy(&m, &test).unwrap());
            let (mut pr, mut pb) = (vec![], vec![]);
            for it in &ws.test {
                let p = m.prob(&it.x_v.matrix).unwrap();
                if it.sample.label == 1 { pr.push(p) } else { pb.push(p) }
            }
            println!("lr={lr:<5} ep={epochs:<3} train={ta:.3} test={va:.3} p_risk={:.3} p_ben={:.3}", mean(&pr), mean(&pb));
        }
    }
}
