use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use geoqa_core::agent::{ChatBackend, HttpBackend, Injection, OracleBackend};
use geoqa_core::domain::{read_dataset, write_dataset, QAInstance};
use geoqa_core::eval::{aggregate, render_table, run_ablation, run_suite, save_run, EvalReport, RunConfig, SuiteEnv};
use geoqa_core::fixture::{generate_fixture, write_fixture, FixtureConfig};
use geoqa_core::generator::{generate, stratified_split, validate_dataset, GeneratorConfig, SplitSpec, TemplateSet};
use geoqa_core::slu::{FewShotSlu, Gazetteer, LexiconSlu, SluStrategy};
use geoqa_core::store::GeoStore;
use geoqa_core::tools::{SyntheticProvider, ToolCache, ToolRequest};

use crate::config::CliConfig;
use crate::{CliError, Command, InjectStage, RunArgs, SluChoice};

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} not found at {}", path.display())))
    }
}

fn pick(flag: Option<PathBuf>, default: &Path) -> PathBuf {
    flag.unwrap_or_else(|| default.to_path_buf())
}

fn open_store(path: &Path) -> Result<GeoStore, CliError> {
    require(path, "store")?;
    GeoStore::open(path).map_err(config_err)
}

fn templates(cfg: &CliConfig, flag: Option<PathBuf>) -> Result<TemplateSet, CliError> {
    match flag.or_else(|| cfg.paths.templates.clone()) {
        Some(dir) => {
            require(&dir, "template directory")?;
            TemplateSet::load_dir(&dir).map_err(config_err)
        }
        None => Ok(TemplateSet::default_set()),
    }
}

fn load_instances(path: &Path) -> Result<Vec<QAInstance>, CliError> {
    require(path, "dataset")?;
    read_dataset(path).map_err(config_err)
}

fn provider(cfg: &CliConfig, store: &GeoStore) -> SyntheticProvider {
    SyntheticProvider::new(cfg.seeds.provider, store.pois().to_vec(), store.taxonomy().clone())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(config_err)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn dispatch(cfg: &CliConfig, command: Command) -> Result<(), CliError> {
    match command {
        Command::Fixture { out, communities, pois, seed } => {
            let out = pick(out, &cfg.paths.fixtures);
            let fc = FixtureConfig {
                cities: cfg.store.cities.clone(),
                communities_per_city: communities.unwrap_or(cfg.fixture.communities_per_city),
                pois_per_city: pois.unwrap_or(cfg.fixture.pois_per_city),
                seed: seed.unwrap_or(cfg.seeds.fixture),
            };
            let fixture = generate_fixture(&fc);
            write_fixture(&fixture, &fc.cities, &out).map_err(config_err)?;
            println!(
                "wrote {} communities and {} POIs to {}",
                fixture.communities.len(),
                fixture.pois.len(),
                out.display()
            );
            Ok(())
        }
        Command::Templates { out } => {
            TemplateSet::write_default_files(&out).map_err(config_err)?;
            println!("wrote built-in templates to {}", out.display());
            Ok(())
        }
        Command::Ingest { fixtures, store } => {
            let fixtures = pick(fixtures, &cfg.paths.fixtures);
            let store_path = pick(store, &cfg.paths.store);
            require(&fixtures, "fixture directory")?;
            let store = GeoStore::ingest_fixture(cfg.store.clone(), &fixtures).map_err(|e| CliError::Validation(e.to_string()))?;
            if let Some(parent) = store_path.parent() {
                std::fs::create_dir_all(parent).map_err(config_err)?;
            }
            store.save(&store_path).map_err(config_err)?;
            println!(
                "ingested {} communities and {} POIs into {}",
                store.communities().len(),
                store.pois().len(),
                store_path.display()
            );
            Ok(())
        }
        Command::Pairs { store } => {
            let path = pick(store, &cfg.paths.store);
            let mut s = open_store(&path)?;
            let counts = s.build_proximity_pairs().map_err(config_err)?;
            s.save(&path).map_err(config_err)?;
            println!(
                "{} poi-community pairs, {} community-community pairs",
                counts.poi_community, counts.community_community
            );
            Ok(())
        }
        Command::CachePopulate { store, cache, dataset } => {
            let store = open_store(&pick(store, &cfg.paths.store))?;
            let cache_path = pick(cache, &cfg.paths.cache);
            let instances = load_instances(&pick(dataset, &cfg.paths.dataset))?;
            let cache = if cache_path.exists() {
                ToolCache::load(&cache_path).map_err(config_err)?
            } else {
                ToolCache::new()
            };
            let corpus: Vec<ToolRequest> = instances
                .iter()
                .flat_map(|i| i.tool_trace.iter().map(|s| s.request.clone()))
                .collect();
            let report = cache.populate(&provider(cfg, &store), &corpus);
            cache.save(&cache_path).map_err(config_err)?;
            println!(
                "{} unique requests: {} inserted, {} already present, {} failed",
                report.unique_requests,
                report.inserted,
                report.already_present,
                report.failures.len()
            );
            if let Some((key, why)) = report.failures.first() {
                return Err(CliError::Validation(format!("{} requests failed, first {key}: {why}", report.failures.len())));
            }
            Ok(())
        }
        Command::Generate { store, cache, templates: tdir, out, attempts, seed } => {
            let store = open_store(&pick(store, &cfg.paths.store))?;
            let templates = templates(cfg, tdir)?;
            let cache_path = pick(cache, &cfg.paths.cache);
            let out = pick(out, &cfg.paths.dataset);
            let mut cache = if cache_path.exists() {
                ToolCache::load(&cache_path).map_err(config_err)?
            } else {
                ToolCache::new()
            };
            cache.set_provider(Some(Arc::new(provider(cfg, &store))));
            let gc = GeneratorConfig {
                seed: seed.unwrap_or(cfg.seeds.generator),
                attempts_per_template: attempts.unwrap_or(cfg.run.attempts_per_template),
            };
            let output = generate(&templates, &store, &cache, &gc);
            write_dataset(&out, &output.instances).map_err(config_err)?;
            cache.save(&cache_path).map_err(config_err)?;
            let report_path = out.with_extension("report.json");
            write_json(&report_path, &output.report)?;
            let t = &output.report.total;
            println!(
                "{} attempts: {} accepted, {} rejected; dataset {} ({} cache entries)",
                t.attempted,
                t.accepted,
                t.rejected_total(),
                out.display(),
                cache.len()
            );
            Ok(())
        }
        Command::Validate { store, cache, templates: tdir, dataset } => {
            let store = open_store(&pick(store, &cfg.paths.store))?;
            let templates = templates(cfg, tdir)?;
            let cache_path = pick(cache, &cfg.paths.cache);
            require(&cache_path, "tool cache")?;
            let cache = ToolCache::load(&cache_path).map_err(config_err)?;
            let instances = load_instances(&pick(dataset, &cfg.paths.dataset))?;
            let report = validate_dataset(&instances, &templates, &store, &cache);
            for m in &report.mismatches {
                eprintln!("{}", serde_json::json!({ "id": m.id, "detail": m.detail }));
            }
            println!("checked {} instances, {} mismatches", report.checked, report.mismatches.len());
            if report.is_clean() {
                Ok(())
            } else {
                Err(CliError::Validation(format!("{} mismatches", report.mismatches.len())))
            }
        }
        Command::Split { dataset, out_dir, seed } => {
            let instances = load_instances(&pick(dataset, &cfg.paths.dataset))?;
            let out_dir = pick(out_dir, &cfg.paths.splits);
            let spec = SplitSpec {
                seed: seed.unwrap_or(cfg.seeds.split),
                ..Default::default()
            };
            let split = stratified_split(&instances, &spec);
            for w in &split.warnings {
                log::warn!("{w}");
            }
            for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
                write_dataset(&out_dir.join(format!("{name}.jsonl")), part).map_err(config_err)?;
            }
            println!(
                "train {}, val {}, test {} in {}",
                split.train.len(),
                split.val.len(),
                split.test.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Run { run, inject } => {
            let inject = Injection {
                slu: inject.contains(&InjectStage::Slu),
                sql: inject.contains(&InjectStage::Sql),
                api: inject.contains(&InjectStage::Api),
            };
            let session = Session::prepare(cfg, &run)?;
            let dir = session.runs.join(&run.name);
            refuse_existing(&dir, run.overwrite)?;
            let config = RunConfig { inject, ..session.config.clone() };
            let result = session.execute(|env| run_suite(&inject.label(), &session.instances, env, &config))?;
            save_run(&dir, &result, run.overwrite).map_err(config_err)?;
            print!("{}", render_table(std::slice::from_ref(&result.report)));
            println!("run written to {}", dir.display());
            backend_verdict(&[&result.report])
        }
        Command::Ablate { run } => {
            let session = Session::prepare(cfg, &run)?;
            let dir = session.runs.join(&run.name);
            refuse_existing(&dir, run.overwrite)?;
            let runs = session.execute(|env| run_ablation(&session.instances, env, &session.config))?;
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(config_err)?;
            }
            for r in &runs {
                save_run(&dir.join(&r.report.label), r, false).map_err(config_err)?;
            }
            let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
            let table = render_table(&reports);
            std::fs::write(dir.join("ablation.txt"), &table).map_err(config_err)?;
            write_json(&dir.join("ablation.json"), &reports)?;
            print!("{table}");
            println!("ablation written to {}", dir.display());
            backend_verdict(&reports.iter().collect::<Vec<_>>())
        }
        Command::Eval { run_dir, dataset } => {
            let transcripts_path = run_dir.join("transcripts.jsonl");
            require(&transcripts_path, "transcripts")?;
            let report_path = run_dir.join("report.json");
            require(&report_path, "run report")?;
            let stored: EvalReport =
                serde_json::from_str(&std::fs::read_to_string(&report_path).map_err(config_err)?).map_err(config_err)?;
            let text = std::fs::read_to_string(&transcripts_path).map_err(config_err)?;
            let transcripts = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<Result<Vec<geoqa_core::agent::EpisodeTranscript>, _>>()
                .map_err(config_err)?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.splits.join(format!("{}.jsonl", stored.config.split)));
            let all = load_instances(&dataset)?;
            let by_id: std::collections::HashMap<&str, &QAInstance> = all.iter().map(|i| (i.id.as_str(), i)).collect();
            let golds = transcripts
                .iter()
                .map(|t| {
                    by_id
                        .get(t.instance_id.as_str())
                        .map(|g| (*g).clone())
                        .ok_or_else(|| CliError::Validation(format!("{} is not in {}", t.instance_id, dataset.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = aggregate(&stored.label, &stored.config, &transcripts, &golds).map_err(config_err)?;
            print!("{}", render_table(std::slice::from_ref(&report)));
            println!("{}", serde_json::to_string_pretty(&report).map_err(config_err)?);
            Ok(())
        }
    }
}

fn refuse_existing(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    let occupied = dir.exists() && std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(true);
    if occupied && !overwrite {
        return Err(CliError::Config(format!(
            "run directory {} exists; pass --overwrite to replace it",
            dir.display()
        )));
    }
    Ok(())
}

/// Every episode unanswerable while the backend reported errors means
/// the backend, not the agents, failed.
fn backend_verdict(reports: &[&EvalReport]) -> Result<(), CliError> {
    for r in reports {
        if r.episodes > 0 && r.backend_errors > 0 && r.unanswerable == r.episodes {
            return Err(CliError::Backend(format!(
                "{}: all {} episodes unanswerable with {} backend errors",
                r.label, r.episodes, r.backend_errors
            )));
        }
    }
    Ok(())
}

enum BackendChoice {
    Oracle,
    Http { endpoint: String, model: String },
}

struct Session<'c> {
    cfg: &'c CliConfig,
    backend: BackendChoice,
    slu: SluChoice,
    pool: PathBuf,
    store: GeoStore,
    cache: ToolCache,
    templates: TemplateSet,
    instances: Vec<QAInstance>,
    runs: PathBuf,
    config: RunConfig,
}

impl<'c> Session<'c> {
    fn prepare(cfg: &'c CliConfig, a: &RunArgs) -> Result<Self, CliError> {
        // Backend first so a missing one fails before any loading.
        let backend = if a.oracle {
            BackendChoice::Oracle
        } else {
            match (&cfg.backend.endpoint, &cfg.backend.model) {
                (Some(e), Some(m)) => BackendChoice::Http {
                    endpoint: e.clone(),
                    model: m.clone(),
                },
                _ => {
                    return Err(CliError::Config(
                        "no backend configured: set [backend] endpoint and model in the config file, or pass --oracle".into(),
                    ))
                }
            }
        };
        let dataset = pick(a.dataset.clone(), &cfg.paths.splits.join("test.jsonl"));
        let pool = pick(a.pool.clone(), &cfg.paths.splits.join("train.jsonl"));
        if a.slu == SluChoice::Fewshot {
            require(&pool, "few-shot example pool")?;
        }
        let store = open_store(&pick(a.store.clone(), &cfg.paths.store))?;
        let cache_path = pick(a.cache.clone(), &cfg.paths.cache);
        require(&cache_path, "tool cache")?;
        let cache = ToolCache::load(&cache_path).map_err(config_err)?;
        let templates = templates(cfg, a.templates.clone())?;
        let instances = load_instances(&dataset)?;
        let backend_name = match &backend {
            BackendChoice::Oracle => "oracle".to_string(),
            BackendChoice::Http { model, .. } => format!("http:{model}"),
        };
        let config = RunConfig {
            split: dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            backend: backend_name,
            slu_strategy: match a.slu {
                SluChoice::Lexicon => "lexicon".into(),
                SluChoice::Fewshot => "fewshot".into(),
            },
            inject: Injection::NONE,
            step_cap: a.step_cap.unwrap_or(cfg.run.step_cap),
            attempt_cap: cfg.run.attempt_cap,
            top_k: cfg.run.top_k,
            seed: cfg.seeds.fewshot,
            parallelism: a.parallelism.unwrap_or(cfg.run.parallelism),
            ..Default::default()
        };
        config.validate().map_err(config_err)?;
        Ok(Session {
            cfg,
            backend,
            slu: a.slu,
            pool,
            store,
            cache,
            templates,
            instances,
            runs: pick(a.runs.clone(), &cfg.paths.runs),
            config,
        })
    }

    fn execute<T>(
        &self,
        f: impl FnOnce(&SuiteEnv<'_>) -> Result<T, geoqa_core::eval::EvalError>,
    ) -> Result<T, CliError> {
        let backend: Arc<dyn ChatBackend> = match &self.backend {
            BackendChoice::Oracle => Arc::new(OracleBackend::new(
                &self.instances,
                &self.templates,
                self.store.list_captions().to_vec(),
            )),
            BackendChoice::Http { endpoint, model } => Arc::new(
                HttpBackend::new(
                    endpoint,
                    model,
                    self.cfg.backend.api_key_env.as_deref(),
                    Duration::from_secs(self.cfg.backend.timeout_secs),
                )
                .map_err(|e| CliError::Backend(e.to_string()))?,
            ),
        };
        let slu: Box<dyn SluStrategy> = match self.slu {
            SluChoice::Lexicon => Box::new(LexiconSlu::new(Gazetteer::from_store(&self.store), &self.templates)),
            SluChoice::Fewshot => {
                let pool = load_instances(&self.pool)?;
                Box::new(FewShotSlu::from_pool(backend.clone(), &pool, self.cfg.run.fewshot_shots, self.cfg.seeds.fewshot))
            }
        };
        let env = SuiteEnv {
            store: &self.store,
            cache: &self.cache,
            backend: backend.as_ref(),
            slu: Some(slu.as_ref()),
        };
        f(&env).map_err(config_err)
    }
}
