use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use feat_core::estimators::{
    estimate_ledger, histogram, symmetry_metric, umbrella_reweight, EstimateReport, Umbrella, DEFAULT_BOOTSTRAP,
};
use feat_core::interpolant::{train_transport, write_loss_csv};
use feat_core::io::write_atomic;
use feat_core::numcore::{read_model, write_model, Activation, Mlp, MlpInit, ModelKind};
use feat_core::sampling::{mala_chains, read_samples, write_samples, SampleSet};
use feat_core::seeds;
use feat_core::systems::{Energy, EnergySystem};
use feat_core::transport::{
    read_works_csv, simulate_ensemble, write_works_csv, AnalyticGaussianTransport, Direction, EnsembleConfig,
    TimeGrid, TransportField, TransportModel, WorkLedger, ZeroField,
};
use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha1::{Digest, Sha1};

use crate::config::Config;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

const SAMPLES_A: &str = "samples_a.txt";
const SAMPLES_B: &str = "samples_b.txt";
const VELOCITY: &str = "velocity.model";
const SCORE: &str = "score.model";
const LOSSES: &str = "losses.csv";
const WORKS: &str = "works.csv";
const REPORT: &str = "report.csv";
const HISTOGRAM: &str = "histogram.csv";
const GRADCHECK: &str = "gradcheck.csv";

/// Seed label for the random points of `gradcheck`.
const GRADCHECK_LABEL: &str = "gradcheck";

fn need(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::MissingArtifact(format!(
            "{} not found; run the earlier stage first",
            path.display()
        )))
    }
}

/// Git blob hash: SHA-1 of `blob <len>\0<bytes>`.
pub fn git_hash(bytes: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(feat_core::Error::from)?;
    Ok(git_hash(&bytes))
}

fn lattice_start(particles: usize, spacing: f64) -> Vec<f64> {
    let side = (particles as f64).cbrt().ceil() as usize;
    let mut x = Vec::with_capacity(3 * particles);
    'outer: for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                if x.len() == 3 * particles {
                    break 'outer;
                }
                x.extend([i as f64 * spacing, j as f64 * spacing, k as f64 * spacing]);
            }
        }
    }
    let c = (side - 1) as f64 * spacing / 2.0;
    x.iter_mut().for_each(|v| *v -= c);
    x
}

/// Chain starting points. `auto` picks the mean of a Gaussian, every
/// component mean of a mixture (in equal numbers), a lattice for clusters
/// and the restraint center for umbrellas.
fn chain_starts(cfg: &Config, sys: &EnergySystem) -> Result<Vec<Vec<f64>>> {
    let chains: usize = cfg.get_or("sampler", "chains", 8)?;
    if chains == 0 {
        return Err(CliError::Config("[sampler] chains must be >= 1".into()));
    }
    let d = sys.dim();
    let start: String = cfg.get_or("sampler", "start", "auto".to_string())?;
    let one = match start.as_str() {
        "zero" => vec![0.0; d],
        "auto" => match sys {
            EnergySystem::Gaussian(p) => p.mean.clone(),
            EnergySystem::Gmm(p) => {
                let k = p.components();
                let per = chains.div_ceil(k);
                return Ok((0..k * per).map(|c| p.mean(c % k).to_vec()).collect());
            }
            EnergySystem::LjCluster(p) => lattice_start(p.particles, 1.12 * p.sigma),
            EnergySystem::Umbrella { inner, center, .. } => match inner.as_ref() {
                EnergySystem::LjCluster(p) => lattice_start(p.particles, 1.12 * p.sigma),
                _ => vec![*center; d],
            },
            _ => vec![0.0; d],
        },
        list => {
            let v: std::result::Result<Vec<f64>, _> = list.split(',').map(|s| s.trim().parse()).collect();
            match v {
                Ok(v) if v.len() == d => v,
                Ok(v) if v.len() == 1 => vec![v[0]; d],
                _ => {
                    return Err(CliError::Config(format!(
                        "[sampler] start `{list}` is not auto, zero or a list of {d} numbers"
                    )))
                }
            }
        }
    };
    Ok(vec![one; chains])
}

fn draw(cfg: &Config, sys: &EnergySystem, seed: u64) -> Result<SampleSet> {
    let n: usize = cfg.get_or("sampler", "samples", 2000)?;
    let starts = chain_starts(cfg, sys)?;
    let mut mala = cfg.mala(seed)?;
    mala.steps = match cfg.get("sampler", "steps")? {
        Some(steps) => steps,
        None => {
            let per = n.div_ceil(starts.len());
            ((per * mala.thin) as f64 / (1.0 - mala.burn_in)).ceil() as usize + mala.thin
        }
    };
    let (set, stats) = mala_chains(sys, &mala, &starts)?;
    let acc: f64 = stats.iter().map(|s| s.acceptance).sum::<f64>() / stats.len() as f64;
    log::info!("{}: {} chains, mean acceptance {acc:.3}", sys.kind(), starts.len());
    if set.len() <= n {
        return Ok(set);
    }
    let mut kept = SampleSet::new(
        set.samples.slice(s![..n, ..]).to_owned(),
        set.grads.as_ref().map(|g| g.slice(s![..n, ..]).to_owned()),
    )?;
    kept.meta = set.meta;
    Ok(kept)
}

pub fn sample(cfg: &Config, out: &Path) -> Result<()> {
    let seed = cfg.seed()?;
    for (which, label, file) in [("a", seeds::SAMPLING_A, SAMPLES_A), ("b", seeds::SAMPLING_B, SAMPLES_B)] {
        let sys = cfg.system(which)?;
        let mut set = draw(cfg, &sys, seeds::derive(seed, label))?;
        set.meta.insert("system".into(), sys.kind().into());
        write_samples(&out.join(file), &set)?;
        log::info!("wrote {} samples of {} to {}", set.len(), sys.kind(), out.join(file).display());
    }
    Ok(())
}

fn check_dims(a: &EnergySystem, b: &EnergySystem) -> Result<usize> {
    if a.dim() != b.dim() {
        return Err(CliError::Config(format!(
            "systems have different dimensions ({} and {})",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.dim())
}

pub fn train(cfg: &Config, out: &Path) -> Result<()> {
    let seed = cfg.seed()?;
    let tc = cfg.train(seeds::derive(seed, seeds::TRAINING))?;
    let sa = read_samples(&need(out.join(SAMPLES_A))?)?;
    let sb = read_samples(&need(out.join(SAMPLES_B))?)?;
    let out_model = train_transport(&tc, &sa, &sb)?;
    write_model(&out.join(VELOCITY), ModelKind::Velocity, &out_model.model.velocity)?;
    write_model(&out.join(SCORE), ModelKind::Score, &out_model.model.score)?;
    write_loss_csv(&out.join(LOSSES), &out_model.losses)?;
    if let Some(last) = out_model.losses.last() {
        log::info!(
            "trained {} iterations; final losses v {:.4e} dsm {:.4e}",
            tc.iterations,
            last.loss_v,
            last.loss_dsm
        );
    }
    Ok(())
}

/// `n` rows spread evenly over the file, so every chain contributes.
fn spread_rows(set: &SampleSet, n: usize) -> Array2<f64> {
    let len = set.len();
    let n = n.min(len);
    let idx: Vec<usize> = (0..n).map(|i| i * len / n.max(1)).collect();
    set.samples.select(Axis(0), &idx)
}

fn simulate(cfg: &Config, out: &Path, field_kind: &str) -> Result<WorkLedger> {
    let seed = cfg.seed()?;
    let a = cfg.system("a")?;
    let b = cfg.system("b")?;
    let d = check_dims(&a, &b)?;
    let sigma: f64 = cfg.get_or("transport", "sigma", 0.2)?;
    let steps: usize = cfg.get_or("transport", "steps", 100)?;
    let paths: usize = cfg.get_or("transport", "paths", 2000)?;
    let mut meta = BTreeMap::new();
    meta.insert("field".to_string(), field_kind.to_string());
    let field: Box<dyn TransportField> = match field_kind {
        "analytic" => Box::new(AnalyticGaussianTransport::new(&a, &b, cfg.schedule()?)?),
        "zero" => Box::new(ZeroField { dim: d }),
        "learned" => {
            let vp = need(out.join(VELOCITY))?;
            let sp = need(out.join(SCORE))?;
            let (_, velocity) = read_model(&vp)?;
            let (_, score) = read_model(&sp)?;
            meta.insert("model.velocity".into(), file_hash(&vp)?);
            meta.insert("model.score".into(), file_hash(&sp)?);
            Box::new(TransportModel::new(velocity, score, cfg.schedule()?, sigma)?)
        }
        other => {
            return Err(CliError::Config(format!(
                "[transport] field `{other}` is not learned, analytic or zero"
            )))
        }
    };
    if field.dim() != d {
        return Err(CliError::Config(format!("model dimension {} does not match systems ({d})", field.dim())));
    }
    let sa = read_samples(&need(out.join(SAMPLES_A))?)?;
    let sb = read_samples(&need(out.join(SAMPLES_B))?)?;
    let mut ecfg = EnsembleConfig::new(TimeGrid::uniform(steps)?, sigma, seeds::derive(seed, seeds::PATHING_FORWARD));
    ecfg.divergence = cfg.divergence()?;
    ecfg.chunk = cfg.get_or("transport", "chunk", ecfg.chunk)?;
    let fwd = simulate_ensemble(field.as_ref(), &a, &b, &ecfg, Direction::Forward, spread_rows(&sa, paths).view())?;
    ecfg.seed = seeds::derive(seed, seeds::PATHING_BACKWARD);
    let bwd = simulate_ensemble(field.as_ref(), &a, &b, &ecfg, Direction::Backward, spread_rows(&sb, paths).view())?;
    let mut ledger = WorkLedger::from_outcomes(&fwd, &bwd);
    meta.insert("sigma".into(), sigma.to_string());
    meta.insert("grid".into(), ecfg.grid.describe());
    meta.insert("seed".into(), seed.to_string());
    ledger.meta = meta;
    write_works_csv(&out.join(WORKS), &ledger)?;
    log::info!(
        "wrote {} forward and {} backward works ({} dropped)",
        ledger.forward.len(),
        ledger.backward.len(),
        ledger.invalid_forward + ledger.invalid_backward
    );
    Ok(ledger)
}

pub fn work(cfg: &Config, out: &Path) -> Result<()> {
    let kind: String = cfg.get_or("transport", "field", "learned".to_string())?;
    simulate(cfg, out, &kind).map(|_| ())
}

pub fn estimate(cfg: &Config, out: &Path) -> Result<EstimateReport> {
    let seed = cfg.seed()?;
    let ledger = read_works_csv(&need(out.join(WORKS))?)?;
    let resamples = cfg.get_or("estimator", "bootstrap", DEFAULT_BOOTSTRAP)?;
    let report = estimate_ledger(&ledger, resamples, seeds::derive(seed, seeds::BOOTSTRAP))?;
    report.write(&out.join(REPORT))?;
    let meta: String = ledger.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_atomic(&out.join(REPORT).with_extension("meta"), meta.as_bytes())?;
    print!("{}", report.summary());
    for (k, v) in &ledger.meta {
        if k.starts_with("model.") {
            println!("  {k} {v}");
        }
    }
    Ok(report)
}

fn umbrella_of(sys: &EnergySystem, which: &str) -> Result<Umbrella> {
    match sys {
        EnergySystem::Umbrella { k, center, .. } => Ok(Umbrella { k: *k, center: *center }),
        _ => Err(CliError::Config(format!(
            "reweight needs umbrella_k and umbrella_center in [system.{which}]"
        ))),
    }
}

/// Reads the `value` column of one estimator row from `report.csv`.
fn report_value(path: &Path, estimator: &str) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(feat_core::Error::from)?;
    for line in text.lines().skip(1) {
        let mut fields = line.split(',');
        if fields.next() == Some(estimator) {
            let v = fields.next().unwrap_or("");
            return v.parse().map_err(|_| {
                CliError::Core(feat_core::Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("`{v}` is not a number"),
                })
            });
        }
    }
    Err(CliError::MissingArtifact(format!("{} has no `{estimator}` row", path.display())))
}

pub fn reweight(cfg: &Config, out: &Path) -> Result<()> {
    let a = cfg.system("a")?;
    let b = cfg.system("b")?;
    let (ua, ub) = (umbrella_of(&a, "a")?, umbrella_of(&b, "b")?);
    let estimator: String = cfg.get_or("reweight", "estimator", "min_variance".to_string())?;
    let delta_f = report_value(&need(out.join(REPORT))?, &estimator)?;
    let lo = cfg.get_or("reweight", "lo", -2.0)?;
    let hi = cfg.get_or("reweight", "hi", 2.0)?;
    let bins = cfg.get_or("reweight", "bins", 40)?;
    let xi = |set: &SampleSet| -> Vec<f64> {
        set.samples.rows().into_iter().map(|r| EnergySystem::collective_variable(&r.to_vec())).collect()
    };
    let sa = read_samples(&need(out.join(SAMPLES_A))?)?;
    let sb = read_samples(&need(out.join(SAMPLES_B))?)?;
    let (ha, centers) = histogram(&xi(&sa), lo, hi, bins)?;
    let (hb, _) = histogram(&xi(&sb), lo, hi, bins)?;
    let p = umbrella_reweight(&ha, &hb, 0.0, delta_f, ua, ub, &centers)?;
    let mut csv = String::from("xi,count_a,count_b,p\n");
    for i in 0..bins {
        csv.push_str(&format!("{:.10e},{},{},{:.10e}\n", centers[i], ha[i], hb[i], p[i]));
    }
    write_atomic(&out.join(HISTOGRAM), csv.as_bytes())?;
    println!("reweighted with {estimator} ΔF = {delta_f:.6}");
    if (lo + hi).abs() < 1e-12 {
        println!("symmetry metric {:.6}", symmetry_metric(&p, &centers)?);
    }
    Ok(())
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic.iter().chain(numeric).fold(1e-8_f64, |m, v| m.max(v.abs()));
    analytic.iter().zip(numeric).map(|(g, f)| (g - f).abs()).fold(0.0, f64::max) / scale
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let dn = f(&y);
            y[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

/// Energy gradients of both systems at 100 points near the chain starts,
/// and network parameter gradients of 100 random losses, against central
/// differences.
pub fn gradcheck(cfg: &Config, out: &Path) -> Result<bool> {
    let seed = cfg.seed()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, GRADCHECK_LABEL));
    let mut rows = Vec::new();
    for which in ["a", "b"] {
        let sys = cfg.system(which)?;
        let starts = chain_starts(cfg, &sys)?;
        let jitter = if matches!(sys, EnergySystem::LjCluster(_)) { 0.05 } else { 0.3 };
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let x: Vec<f64> = starts[k % starts.len()]
                .iter()
                .map(|v| v + jitter * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut g = vec![0.0; x.len()];
            sys.value_grad(&x, &mut g);
            let fd = central_difference(&|y| sys.value(y), &x, 1e-5);
            worst = worst.max(relative_error(&g, &fd));
        }
        rows.push((format!("system.{which}:{}", sys.kind()), worst, 1e-6));
    }
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let d = 1 + trial % 3;
        let act = if trial % 2 == 0 { Activation::Gelu } else { Activation::Softplus };
        let mut net = Mlp::new(d, &[6, 5], d, act, MlpInit { zero_output: false }, &mut rng)?;
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let t: f64 = rng.random_range(0.0..1.0);
        let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // Loss ½‖f(x,t) − w‖², whose parameter gradient comes from the tape.
        let loss = |net: &Mlp| -> f64 {
            let y = net.forward(&x, t).expect("finite forward pass");
            y.iter().zip(&w).map(|(a, b)| 0.5 * (a - b).powi(2)).sum()
        };
        let feats = net.features(Array2::from_shape_vec((1, d), x.clone()).unwrap().view(), &[t])?;
        let target = Array2::from_shape_vec((1, d), w.clone()).unwrap();
        let (_, grad) = feat_core::interpolant::train::velocity_loss_grad(&net, &feats, &target)?;
        // velocity_loss_grad averages ‖·‖² over the batch; rescale to ½‖·‖².
        let grad: Vec<f64> = grad.iter().map(|g| 0.5 * g).collect();
        let k = rng.random_range(0..net.n_params());
        let h = 1e-5;
        let orig = net.params()[k];
        net.params_mut()[k] = orig + h;
        let up = loss(&net);
        net.params_mut()[k] = orig - h;
        let dn = loss(&net);
        net.params_mut()[k] = orig;
        worst = worst.max(relative_error(&[grad[k]], &[(up - dn) / (2.0 * h)]));
    }
    rows.push(("network:autodiff".to_string(), worst, 1e-5));
    let mut csv = String::from("check,max_rel_err,tolerance,status\n");
    let mut all = true;
    for (name, err, tol) in &rows {
        let ok = *err <= *tol;
        all &= ok;
        let status = if ok { "pass" } else { "fail" };
        csv.push_str(&format!("{name},{err:.3e},{tol:.0e},{status}\n"));
        println!("{name:<28} {err:>10.3e}  (tol {tol:.0e})  {status}");
    }
    write_atomic(&out.join(GRADCHECK), csv.as_bytes())?;
    Ok(all)
}

/// Sampling, analytic Gaussian transport and estimation in one go.
pub fn oracle(cfg: &Config, out: &Path) -> Result<EstimateReport> {
    let a = cfg.system("a")?;
    let b = cfg.system("b")?;
    if !matches!((&a, &b), (EnergySystem::Gaussian(_), EnergySystem::Gaussian(_))) {
        return Err(CliError::Config("oracle needs gaussian systems a and b".into()));
    }
    sample(cfg, out)?;
    simulate(cfg, out, "analytic")?;
    estimate(cfg, out)
}
