//! Config-file parsing: one `key = value` text format per command, explicit
//! keys mirroring the library config types. Unknown keys are errors.

use std::path::Path;

use varfield::datagen::GenConfig;
use varfield::error::{Error, Result};
use varfield::grid::Mesh;
use varfield::solver::{GuessStrategy, SolverConfig};
use varfield::textkv::{self, Document};
use varfield::train::TrainConfig;
use varfield::twave::TwSearchConfig;

fn load(path: &Path) -> Result<Document> {
    let text = textkv::read_to_string(path)?;
    Document::parse(&path.display().to_string(), &text)
}

fn mesh_from(doc: &Document, base: Mesh) -> Result<Mesh> {
    Mesh::new(
        doc.get_opt("T")
            .map(|s| textkv::parse_f64(doc.path(), s))
            .transpose()?
            .unwrap_or(base.t_final()),
        doc.get_opt("l")
            .map(|s| textkv::parse_f64(doc.path(), s))
            .transpose()?
            .unwrap_or(base.period()),
        doc.get_opt("N")
            .map(|s| textkv::parse_usize(doc.path(), s))
            .transpose()?
            .unwrap_or(base.n()),
        doc.get_opt("M")
            .map(|s| textkv::parse_usize(doc.path(), s))
            .transpose()?
            .unwrap_or(base.m()),
    )
}

macro_rules! override_key {
    ($doc:expr, $cfg:expr, f64: $($key:ident),+) => {
        $(if let Some(s) = $doc.get_opt(stringify!($key)) {
            $cfg.$key = textkv::parse_f64($doc.path(), s)?;
        })+
    };
    ($doc:expr, $cfg:expr, usize: $($key:ident),+) => {
        $(if let Some(s) = $doc.get_opt(stringify!($key)) {
            $cfg.$key = textkv::parse_usize($doc.path(), s)?;
        })+
    };
}

pub fn gen_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<GenConfig> {
    let mut cfg = GenConfig::default();
    if let Some(path) = path {
        let doc = load(path)?;
        doc.reject_unknown(&["K", "T", "l", "N", "M", "seed", "weight_coeff", "weight_power"])?;
        cfg.mesh = mesh_from(&doc, cfg.mesh)?;
        if let Some(s) = doc.get_opt("K") {
            cfg.k = textkv::parse_usize(doc.path(), s)?;
        }
        if let Some(s) = doc.get_opt("seed") {
            cfg.seed = s
                .parse()
                .map_err(|_| Error::parse(doc.path(), "invalid seed"))?;
        }
        override_key!(doc, cfg, f64: weight_coeff);
        if let Some(s) = doc.get_opt("weight_power") {
            cfg.weight_power = s
                .parse()
                .map_err(|_| Error::parse(doc.path(), "invalid weight_power"))?;
        }
    }
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config(path: Option<&Path>, seed_override: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = path {
        let doc = load(path)?;
        doc.reject_unknown(&[
            "epochs",
            "batch_size",
            "learning_rate",
            "beta1",
            "beta2",
            "epsilon",
            "reg_weight",
            "lambda_floor",
            "seed",
        ])?;
        override_key!(doc, cfg, usize: epochs, batch_size);
        override_key!(doc, cfg, f64: learning_rate, beta1, beta2, epsilon, reg_weight, lambda_floor);
        if let Some(s) = doc.get_opt("seed") {
            cfg.seed = s
                .parse()
                .map_err(|_| Error::parse(doc.path(), "invalid seed"))?;
        }
    }
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn solver_config(path: Option<&Path>) -> Result<SolverConfig> {
    let mut cfg = SolverConfig::default();
    if let Some(path) = path {
        let doc = load(path)?;
        doc.reject_unknown(&[
            "residual_tolerance",
            "max_iterations",
            "guess",
            "max_row_sweeps",
        ])?;
        override_key!(doc, cfg, f64: residual_tolerance);
        override_key!(doc, cfg, usize: max_iterations, max_row_sweeps);
        if let Some(s) = doc.get_opt("guess") {
            cfg.initial_guess_strategy = match s {
                "previous_value" => GuessStrategy::PreviousValue,
                "linear_extrapolation" => GuessStrategy::LinearExtrapolation,
                other => {
                    return Err(Error::parse(
                        doc.path(),
                        format!("unknown guess strategy `{other}`"),
                    ))
                }
            };
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Travelling-wave search setup: mesh, optimiser settings and the initial
/// state specification.
pub struct TwSetup {
    pub mesh: Mesh,
    pub search: TwSearchConfig,
    pub init: TwInit,
    pub seed: u64,
}

pub enum TwInit {
    /// Exact wave-equation TW of the given mode and amplitudes, optionally
    /// perturbed with Gaussian noise.
    Exact {
        mode_n: i64,
        alpha: f64,
        beta: f64,
        noise_sigma: f64,
    },
    /// Read the initial state from a TW file.
    File,
}

pub fn tw_setup(path: Option<&Path>, seed_override: Option<u64>) -> Result<TwSetup> {
    let mut mesh = Mesh::new(0.5, 1.0, 20, 20).unwrap();
    let mut search = TwSearchConfig::default();
    let mut mode_n = 1i64;
    let mut alpha = 0.0;
    let mut beta = 1.0;
    let mut noise_sigma = 0.0;
    let mut seed = 0u64;
    let mut from_file = false;
    if let Some(path) = path {
        let doc = load(path)?;
        doc.reject_unknown(&[
            "T",
            "l",
            "N",
            "M",
            "steps",
            "learning_rate",
            "beta1",
            "beta2",
            "epsilon",
            "use_regulariser",
            "init",
            "mode_n",
            "alpha",
            "beta",
            "noise_sigma",
            "seed",
        ])?;
        mesh = mesh_from(&doc, mesh)?;
        override_key!(doc, search, usize: steps);
        override_key!(doc, search, f64: learning_rate, beta1, beta2, epsilon);
        if let Some(s) = doc.get_opt("use_regulariser") {
            search.use_regulariser = match s {
                "1" | "true" => true,
                "0" | "false" => false,
                other => {
                    return Err(Error::parse(
                        doc.path(),
                        format!("invalid use_regulariser `{other}`"),
                    ))
                }
            };
        }
        if let Some(s) = doc.get_opt("init") {
            from_file = match s {
                "exact" => false,
                "file" => true,
                other => {
                    return Err(Error::parse(doc.path(), format!("unknown init `{other}`")))
                }
            };
        }
        if let Some(s) = doc.get_opt("mode_n") {
            mode_n = s
                .parse()
                .map_err(|_| Error::parse(doc.path(), "invalid mode_n"))?;
        }
        if let Some(s) = doc.get_opt("alpha") {
            alpha = textkv::parse_f64(doc.path(), s)?;
        }
        if let Some(s) = doc.get_opt("beta") {
            beta = textkv::parse_f64(doc.path(), s)?;
        }
        if let Some(s) = doc.get_opt("noise_sigma") {
            noise_sigma = textkv::parse_f64(doc.path(), s)?;
        }
        if let Some(s) = doc.get_opt("seed") {
            seed = s
                .parse()
                .map_err(|_| Error::parse(doc.path(), "invalid seed"))?;
        }
    }
    if let Some(s) = seed_override {
        seed = s;
    }
    Ok(TwSetup {
        mesh,
        search,
        init: if from_file {
            TwInit::File
        } else {
            TwInit::Exact {
                mode_n,
                alpha,
                beta,
                noise_sigma,
            }
        },
        seed,
    })
}

/// Verification thresholds, overridable per run.
pub struct VerifyConfig {
    pub tol_l_del: f64,
    pub tol_l_reg: f64,
    pub tol_tw_residual: f64,
    pub lambda_floor: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            tol_l_del: 1e-6,
            tol_l_reg: 1e-5,
            tol_tw_residual: 4e-3,
            lambda_floor: 1e-8,
        }
    }
}

pub fn verify_config(path: Option<&Path>) -> Result<VerifyConfig> {
    let mut cfg = VerifyConfig::default();
    if let Some(path) = path {
        let doc = load(path)?;
        doc.reject_unknown(&["tol_l_del", "tol_l_reg", "tol_tw_residual", "lambda_floor"])?;
        override_key!(doc, cfg, f64: tol_l_del, tol_l_reg, tol_tw_residual, lambda_floor);
    }
    Ok(cfg)
}
