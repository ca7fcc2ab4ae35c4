//! Configuration: flags override the config file, the file overrides
//! defaults, and secrets come from the environment only.
//!
//! The config file is TOML mirroring the evaluation settings, plus a
//! `[providers.*]` section choosing a backend per role. Relative paths in the
//! file resolve against the file's directory; relative flag paths resolve
//! against the working directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{DragError, Result};
use crate::harness::{DatasetTag, EvalConfig};
use crate::providers::http::{HttpChatProvider, HttpEmbeddingProvider};
use crate::providers::mock::{
    HashedEmbedder, ProceduralProvider, ScriptedChatProvider, ScriptedFixture,
};
use crate::providers::{ChatHandle, ChatProvider, EmbeddingProvider};
use crate::student::ContextMode;

pub const TEACHER_KEY_ENV: &str = "DRAG_TEACHER_API_KEY";
pub const STUDENT_KEY_ENV: &str = "DRAG_STUDENT_API_KEY";
pub const EMBED_KEY_ENV: &str = "DRAG_EMBED_API_KEY";
pub const CACHE_DIR_ENV: &str = "DRAG_CACHE_DIR";

const DEFAULT_RPM: u32 = 60;
const DEFAULT_EMBED_DIM: usize = 64;

/// Backend selection for a chat role.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderSpec {
    /// Hosted chat-completion endpoint; the API key is read from the
    /// environment variable named here (never from flags or the file).
    Http {
        endpoint: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        requests_per_minute: Option<u32>,
    },
    /// Replay a scripted fixture file.
    Scripted { fixture: PathBuf },
    /// Deterministic synthetic backend.
    Procedural,
}

impl ProviderSpec {
    fn is_network(&self) -> bool {
        matches!(self, ProviderSpec::Http { .. })
    }
}

/// Backend selection for the embedder role.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Http {
        endpoint: String,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        requests_per_minute: Option<u32>,
    },
    Hashed {
        #[serde(default)]
        dim: Option<usize>,
    },
}

impl EmbedderSpec {
    fn is_network(&self) -> bool {
        matches!(self, EmbedderSpec::Http { .. })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
struct ProvidersSection {
    teacher: Option<ProviderSpec>,
    student: Option<ProviderSpec>,
    embedder: Option<EmbedderSpec>,
}

/// The raw config file shape.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    teacher: Option<String>,
    student: Option<String>,
    embedder: Option<String>,
    n: Option<u32>,
    k: Option<Vec<u32>>,
    modes: Option<Vec<String>>,
    seed: Option<u64>,
    dataset: Option<PathBuf>,
    dataset_tag: Option<String>,
    out: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    offline: Option<bool>,
    workers: Option<usize>,
    k_graph: Option<u32>,
    #[serde(default)]
    providers: ProvidersSection,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            DragError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| DragError::Config(format!("bad config {}: {e}", path.display())))
    }
}

/// Flag-level overrides; `None` means the flag was not given.
#[derive(Debug, Clone, Default)]
pub struct CliOverrides {
    pub teacher: Option<String>,
    pub student: Option<String>,
    pub embedder: Option<String>,
    pub n: Option<u32>,
    pub k: Option<Vec<u32>>,
    pub modes: Option<Vec<ContextMode>>,
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub dataset_tag: Option<DatasetTag>,
    pub out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    /// Flags can only switch offline on, never off.
    pub offline: bool,
    pub workers: Option<usize>,
    pub k_graph: Option<u32>,
}

/// Fully resolved configuration, validated before any network call.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub teacher: String,
    pub student: String,
    pub embedder: String,
    pub n: u32,
    pub k: Vec<u32>,
    pub modes: Vec<ContextMode>,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub dataset_tag: DatasetTag,
    pub out: PathBuf,
    pub cache_dir: PathBuf,
    pub offline: bool,
    pub workers: usize,
    pub k_graph: Option<u32>,
    pub teacher_spec: ProviderSpec,
    pub student_spec: ProviderSpec,
    pub embedder_spec: EmbedderSpec,
}

fn resolve_relative(base: Option<&Path>, path: PathBuf) -> PathBuf {
    match base {
        Some(base) if path.is_relative() => base.join(path),
        _ => path,
    }
}

impl CliConfig {
    /// Merge defaults, an optional config file, and flag overrides.
    pub fn resolve(
        file: Option<(&Path, FileConfig)>,
        overrides: CliOverrides,
    ) -> Result<CliConfig> {
        let file_dir = file
            .as_ref()
            .and_then(|(path, _)| path.parent())
            .map(Path::to_path_buf);
        let file = file.map(|(_, config)| config).unwrap_or_default();
        let base = file_dir.as_deref();

        let modes = match overrides.modes {
            Some(modes) => modes,
            None => match file.modes {
                Some(names) => names
                    .iter()
                    .map(|name| name.parse())
                    .collect::<Result<Vec<_>>>()?,
                None => vec![ContextMode::EvidenceOnly],
            },
        };
        let dataset_tag = match overrides.dataset_tag {
            Some(tag) => tag,
            None => match file.dataset_tag {
                Some(name) => name.parse()?,
                None => DatasetTag::Custom,
            },
        };
        let dataset = overrides
            .dataset
            .or_else(|| file.dataset.clone().map(|p| resolve_relative(base, p)));
        let cache_dir = overrides
            .cache_dir
            .or_else(|| std::env::var(CACHE_DIR_ENV).ok().map(PathBuf::from))
            .or_else(|| file.cache_dir.clone().map(|p| resolve_relative(base, p)))
            .unwrap_or_else(|| PathBuf::from(".drag-cache"));
        let out = overrides
            .out
            .or_else(|| file.out.clone().map(|p| resolve_relative(base, p)))
            .unwrap_or_else(|| PathBuf::from("out"));

        let resolve_spec = |spec: Option<ProviderSpec>| -> ProviderSpec {
            match spec {
                Some(ProviderSpec::Scripted { fixture }) => ProviderSpec::Scripted {
                    fixture: resolve_relative(base, fixture),
                },
                Some(other) => other,
                None => ProviderSpec::Procedural,
            }
        };

        let config = CliConfig {
            teacher: overrides
                .teacher
                .or(file.teacher)
                .unwrap_or_else(|| "teacher-sim".into()),
            student: overrides
                .student
                .or(file.student)
                .unwrap_or_else(|| "student-sim".into()),
            embedder: overrides
                .embedder
                .or(file.embedder)
                .unwrap_or_else(|| "hashed".into()),
            n: overrides.n.or(file.n).unwrap_or(5),
            k: overrides.k.or(file.k).unwrap_or_else(|| vec![3]),
            modes,
            seed: overrides.seed.or(file.seed).unwrap_or(42),
            dataset,
            dataset_tag,
            out,
            cache_dir,
            offline: overrides.offline || file.offline.unwrap_or(false),
            workers: overrides.workers.or(file.workers).unwrap_or(1),
            k_graph: overrides.k_graph.or(file.k_graph),
            teacher_spec: resolve_spec(file.providers.teacher),
            student_spec: resolve_spec(file.providers.student),
            embedder_spec: file
                .providers
                .embedder
                .unwrap_or(EmbedderSpec::Hashed { dim: None }),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(DragError::Config("modes must be non-empty".into()));
        }
        if self.k.is_empty() {
            return Err(DragError::Config("k must be non-empty".into()));
        }
        for &k in &self.k {
            if k == 0 || k > self.n {
                return Err(DragError::Config(format!(
                    "require 1 <= K <= N for every K; got K={k}, N={}",
                    self.n
                )));
            }
        }
        if self.offline {
            if self.teacher_spec.is_network() || self.student_spec.is_network() {
                return Err(DragError::Config(
                    "offline mode forbids network chat providers".into(),
                ));
            }
            if self.embedder_spec.is_network() {
                return Err(DragError::Config(
                    "offline mode forbids network embedding providers".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        self.dataset.as_deref().ok_or_else(|| {
            DragError::Config("a dataset is required (--dataset or config file)".into())
        })
    }

    pub fn eval_config(&self) -> Result<EvalConfig> {
        Ok(EvalConfig {
            teacher_id: self.teacher.clone(),
            student_id: self.student.clone(),
            embedder_id: self.embedder.clone(),
            n: self.n,
            k_values: self.k.clone(),
            modes: self.modes.clone(),
            seed: self.seed,
            dataset_path: self.require_dataset()?.to_path_buf(),
            dataset_tag: self.dataset_tag,
            offline: self.offline,
            workers: self.workers,
            k_graph: self.k_graph,
        })
    }
}

fn api_key(env_name: &str) -> Result<String> {
    std::env::var(env_name).map_err(|_| {
        DragError::Config(format!(
            "missing API key: set the {env_name} environment variable"
        ))
    })
}

fn build_chat_provider(
    spec: &ProviderSpec,
    role: &str,
    default_key_env: &str,
) -> Result<Arc<dyn ChatProvider>> {
    match spec {
        ProviderSpec::Http {
            endpoint,
            api_key_env,
            requests_per_minute,
        } => {
            let key = api_key(api_key_env.as_deref().unwrap_or(default_key_env))?;
            Ok(Arc::new(HttpChatProvider::new(
                format!("http-{role}"),
                endpoint.clone(),
                key,
                requests_per_minute.unwrap_or(DEFAULT_RPM),
            )))
        }
        ProviderSpec::Scripted { fixture } => Ok(Arc::new(ScriptedChatProvider::new(
            ScriptedFixture::load(fixture)?,
        ))),
        ProviderSpec::Procedural => Ok(Arc::new(ProceduralProvider::new())),
    }
}

/// Ready-to-use handles for one run.
pub struct ProviderSet {
    pub teacher: ChatHandle,
    pub student: ChatHandle,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

/// Build the providers a run needs. Validation (offline constraints, API-key
/// presence) happens here, before any network call is possible.
pub fn build_providers(config: &CliConfig) -> Result<ProviderSet> {
    config.validate()?;
    let teacher_provider = build_chat_provider(&config.teacher_spec, "teacher", TEACHER_KEY_ENV)?;
    let student_provider = build_chat_provider(&config.student_spec, "student", STUDENT_KEY_ENV)?;
    let embedder: Arc<dyn EmbeddingProvider> = match &config.embedder_spec {
        EmbedderSpec::Http {
            endpoint,
            api_key_env,
            requests_per_minute,
        } => {
            let key = api_key(api_key_env.as_deref().unwrap_or(EMBED_KEY_ENV))?;
            Arc::new(HttpEmbeddingProvider::new(
                "http-embedder",
                endpoint.clone(),
                key,
                config.embedder.clone(),
                requests_per_minute.unwrap_or(DEFAULT_RPM),
            ))
        }
        EmbedderSpec::Hashed { dim } => {
            Arc::new(HashedEmbedder::new(dim.unwrap_or(DEFAULT_EMBED_DIM)))
        }
    };
    Ok(ProviderSet {
        teacher: ChatHandle::new(teacher_provider, &config.teacher).with_seed(Some(config.seed)),
        student: ChatHandle::new(student_provider, &config.student).with_seed(Some(config.seed)),
        embedder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_config(toml_text: &str) -> FileConfig {
        toml::from_str(toml_text).unwrap()
    }

    #[test]
    fn defaults_apply_without_file_or_flags() {
        let config = CliConfig::resolve(None, CliOverrides::default()).unwrap();
        assert_eq!(config.n, 5);
        assert_eq!(config.k, vec![3]);
        assert_eq!(config.modes, vec![ContextMode::EvidenceOnly]);
        assert_eq!(config.seed, 42);
        assert!(!config.offline);
        assert_eq!(config.teacher_spec, ProviderSpec::Procedural);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let file = file_config(
            r#"
            teacher = "file-teacher"
            n = 10
            k = [5]
            seed = 1
            modes = ["graph"]
            "#,
        );
        let overrides = CliOverrides {
            teacher: Some("flag-teacher".into()),
            k: Some(vec![2, 4]),
            ..Default::default()
        };
        let config =
            CliConfig::resolve(Some((Path::new("/tmp/drag.toml"), file)), overrides).unwrap();
        // flag > file
        assert_eq!(config.teacher, "flag-teacher");
        assert_eq!(config.k, vec![2, 4]);
        // file > default
        assert_eq!(config.n, 10);
        assert_eq!(config.seed, 1);
        assert_eq!(config.modes, vec![ContextMode::GraphOnly]);
        // default where neither sets it
        assert_eq!(config.student, "student-sim");
    }

    #[test]
    fn relative_paths_resolve_against_the_config_file() {
        let file = file_config(
            r#"
            dataset = "data/questions.jsonl"

            [providers.teacher]
            kind = "scripted"
            fixture = "teacher.json"
            "#,
        );
        let config = CliConfig::resolve(
            Some((Path::new("/etc/drag/drag.toml"), file)),
            CliOverrides::default(),
        )
        .unwrap();
        assert_eq!(
            config.dataset.as_deref(),
            Some(Path::new("/etc/drag/data/questions.jsonl"))
        );
        assert_eq!(
            config.teacher_spec,
            ProviderSpec::Scripted {
                fixture: PathBuf::from("/etc/drag/teacher.json")
            }
        );
    }

    #[test]
    fn offline_forbids_network_providers() {
        let file = file_config(
            r#"
            offline = true

            [providers.teacher]
            kind = "http"
            endpoint = "https://example.com/v1/chat"
            "#,
        );
        let err = CliConfig::resolve(
            Some((Path::new("/tmp/drag.toml"), file)),
            CliOverrides::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("offline"));
    }

    #[test]
    fn offline_flag_overrides_file_to_on() {
        let file = file_config("offline = false");
        let overrides = CliOverrides {
            offline: true,
            ..Default::default()
        };
        let config =
            CliConfig::resolve(Some((Path::new("/tmp/drag.toml"), file)), overrides).unwrap();
        assert!(config.offline);
    }

    #[test]
    fn k_must_fit_in_n() {
        let file = file_config("n = 3\nk = [4]");
        let err = CliConfig::resolve(
            Some((Path::new("/tmp/drag.toml"), file)),
            CliOverrides::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("K <= N"));
    }

    #[test]
    fn missing_api_key_fails_before_any_call() {
        std::env::remove_var("DRAG_TEST_MISSING_KEY");
        let file = file_config(
            r#"
            [providers.teacher]
            kind = "http"
            endpoint = "https://example.com/v1/chat"
            api_key_env = "DRAG_TEST_MISSING_KEY"
            "#,
        );
        let config = CliConfig::resolve(
            Some((Path::new("/tmp/drag.toml"), file)),
            CliOverrides::default(),
        )
        .unwrap();
        match build_providers(&config) {
            Err(err) => assert!(err.to_string().contains("DRAG_TEST_MISSING_KEY")),
            Ok(_) => panic!("must fail before any call without the key"),
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("unknown_key = 1").is_err());
    }
}
