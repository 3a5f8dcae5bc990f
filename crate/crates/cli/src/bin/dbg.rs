//! Scratch debug probe (not part of the shipped CLI).
use relest_cli::artifact::{read_artifact, Layout};
use relest_cli::config::ExperimentConfig;
use relest_core::imputation::{imp_predict, SyntheticEncoder};
use relest_core::mlp::MlpModel;
use relest_core::neural_dr::{ApproxAffineModel, TradeoffModel};
use relest_core::sim::{QueryCatalog, RandRecord};
use relest_core::tracking::{ClickFeatureVector, FEATURE_DIM, FEATURE_SCHEMA_ID};

fn main() {
    let cfg_path = std::env::args().nth(1).unwrap_or_else(|| "/tmp/exp2.toml".into());
    let cfg = ExperimentConfig::load(std::path::Path::new(&cfg_path), &[]).unwrap();
    let layout = Layout::new(&cfg.output_dir);
    let hash = cfg.hash();
    let affine: ApproxAffineModel =
        read_artifact(&layout.affine_model(), &hash, "train-affine").unwrap().payload;
    let tradeoff: TradeoffModel =
        read_artifact(&layout.tradeoff_model(), &hash, "train-tradeoff").unwrap().payload;
    let imp: MlpModel = read_artifact(&layout.imp_model(), &hash, "train-imp").unwrap().payload;
    let catalog: QueryCatalog = read_artifact(&layout.catalog(), &hash, "simulate").unwrap().payload;
    let joined: Vec<(RandRecord, ClickFeatureVector)> =
        read_artifact(&layout.joined_rand(), &hash, "train-affine").unwrap().payload;
    let encoder = SyntheticEncoder::with_noise(&catalog, cfg.encoder_noise);

    let zero = ClickFeatureVector { x: vec![0.0; FEATURE_DIM], schema_id: FEATURE_SCHEMA_ID.to_string() };
    println!("zeta(0) = {:.4}  gamma_aff(0) = {:.4}", tradeoff.predict(&zero).unwrap(), affine.predict(&zero).unwrap());

    let stats = |sel: Vec<&(RandRecord, ClickFeatureVector)>, name: &str| {
        let n = sel.len() as f64;
        let cr = sel.iter().filter(|(r, _)| r.clicked).count() as f64 / n;
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let gi_c: Vec<f64> = sel.iter().filter(|(r, _)| r.clicked)
            .map(|(r, _)| imp_predict(&imp, &encoder, r.query_id, r.doc_id)).collect();
        let gi_u: Vec<f64> = sel.iter().filter(|(r, _)| !r.clicked)
            .map(|(r, _)| imp_predict(&imp, &encoder, r.query_id, r.doc_id)).collect();
        let ga: Vec<f64> = sel.iter().map(|(_, x)| affine.predict(x).unwrap()).collect();
        let zs: Vec<f64> = sel.iter().map(|(_, x)| tradeoff.predict(x).unwrap()).collect();
        println!("{name}: n={} click_rate={:.3} gimp|c={:.3} gimp|u={:.3} gaff [{:.3},{:.3}] mean {:.3} zeta [{:.3},{:.3}] mean {:.3}",
            sel.len(), cr, m(&gi_c), m(&gi_u),
            ga.iter().cloned().fold(f64::MAX, f64::min), ga.iter().cloned().fold(f64::MIN, f64::max), m(&ga),
            zs.iter().cloned().fold(f64::MAX, f64::min), zs.iter().cloned().fold(f64::MIN, f64::max), m(&zs));
    };
    stats(joined.iter().filter(|(_, x)| x.is_zero()).collect(), "zero ");
    stats(joined.iter().filter(|(_, x)| !x.is_zero()).collect(), "rich ");

    let corr = |xs: &[f64], ys: &[f64]| {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
        let sx = (xs.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n).sqrt();
        let sy = (ys.iter().map(|b| (b - my) * (b - my)).sum::<f64>() / n).sqrt();
        cov / (sx * sy)
    };
    let mut ga = Vec::new();
    let mut gi = Vec::new();
    let mut gt = Vec::new();
    for (r, x) in joined.iter().filter(|(_, x)| !x.is_zero()) {
        if let Some(g) = catalog.relevance(r.query_id, r.doc_id) {
            ga.push(affine.predict(x).unwrap());
            gi.push(imp_predict(&imp, &encoder, r.query_id, r.doc_id));
            gt.push(g);
        }
    }
    println!("rich: corr(gaff, gamma)={:.4} corr(gimp, gamma)={:.4} n={}", corr(&ga, &gt), corr(&gi, &gt), ga.len());

    let dicts: relest_core::tracking::TrackingDicts =
        read_artifact(&layout.tracking(), &hash, "train-affine").unwrap().payload;

    // stats grouped by monthly impression count
    let dicts2 = &dicts;
    let mut groups: std::collections::BTreeMap<&str, Vec<(f64, f64, f64, f64)>> = Default::default();
    for q in &catalog.queries {
        for d in &q.documents {
            let x = relest_core::tracking::build_click_features(dicts2, q.query_id, d.doc_id);
            let n = x.x[0].exp_m1().round() as u64;
            let bin = match n { 0 => "0", 1 => "1", 2..=4 => "2-4", 5..=9 => "5-9", 10..=99 => "10-99", _ => "100+" };
            let a = affine.predict(&x).unwrap();
            let z = tradeoff.predict(&x).unwrap();
            let g = imp_predict(&imp, &encoder, q.query_id, d.doc_id);
            groups.entry(bin).or_default().push((a, z, d.relevance, g));
        }
    }
    for (bin, v) in groups {
        let n = v.len() as f64;
        let ma = v.iter().map(|t| t.0).sum::<f64>() / n;
        let sa = (v.iter().map(|t| (t.0 - ma) * (t.0 - ma)).sum::<f64>() / n).sqrt();
        let mz = v.iter().map(|t| t.1).sum::<f64>() / n;
        let minz = v.iter().map(|t| t.1).fold(f64::MAX, f64::min);
        let ca = corr(&v.iter().map(|t| t.0).collect::<Vec<_>>(), &v.iter().map(|t| t.2).collect::<Vec<_>>());
        let cg = corr(&v.iter().map(|t| t.3).collect::<Vec<_>>(), &v.iter().map(|t| t.2).collect::<Vec<_>>());
        println!("imp_bin {:>5}: n={:6} gaff mean {:.3} std {:.3} corr {:.3} | zeta mean {:+.3} min {:+.3} | corr(gimp,g) {:.3}", bin, v.len(), ma, sa, ca, mz, minz, cg);
    }
    for q in &catalog.queries[..3] {
        println!("query {} (weight {:.1}):", q.query_id, q.monthly_frequency);
        for d in &q.documents {
            let x = relest_core::tracking::build_click_features(&dicts, q.query_id, d.doc_id);
            let z = tradeoff.predict(&x).unwrap();
            let a = affine.predict(&x).unwrap();
            let g = imp_predict(&imp, &encoder, q.query_id, d.doc_id);
            println!("  doc {:2} gamma={:.3} gimp={:.3} gaff={:.3} zeta={:+.3} dr={:+.3}",
                d.doc_id, d.relevance, g, a, z, z * g + a);
        }
    }
}
// (appended) per-doc dump for a few head queries
