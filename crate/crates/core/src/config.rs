//! Experiment configuration: a sectioned `key = value` file.
//!
//! ```text
//! seed = 0
//!
//! [problem]
//! p = 1.5
//! ...
//! ```
//!
//! Comments start with `#` or `;`. Keys without a default are required.
//! [`reference`] renders every key with its default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Params;
use crate::grid::Grid;
use crate::solver::{Contracts, SolverConfig};
use crate::weights::{AinfProbes, BallFamily, Refinement, Weight};

struct Key {
    section: &'static str,
    name: &'static str,
    default: Option<&'static str>,
    doc: &'static str,
}

const fn key(section: &'static str, name: &'static str, default: Option<&'static str>, doc: &'static str) -> Key {
    Key { section, name, default, doc }
}

const KEYS: &[Key] = &[
    key("", "seed", Some("0"), "master seed for every random draw"),
    key("problem", "p", None, "exponent of the weighted p-Laplacian, 1 < p < n + m"),
    key("problem", "q", None, "exponent of the superlinear term, q > p"),
    key("problem", "gamma", None, "exponent of the sublinear term, 1 < gamma < p"),
    key("problem", "mu", None, "coefficient of the sublinear term, mu >= 0"),
    key("problem", "n", None, "dimension of the weighted variables x"),
    key("problem", "m", None, "dimension of the unweighted variables y"),
    key("problem", "proportional", Some("false"), "use v = a * omega instead of weights.v"),
    key("problem", "a", Some("1"), "factor a of the proportional case"),
    key("domain", "lo", None, "lower box corner, n + m values"),
    key("domain", "hi", None, "upper box corner, n + m values"),
    key("domain", "counts", None, "nodes per axis (one value or n + m values), each >= 3"),
    key("weights", "omega", Some("unit"), "unit | constant C | power ALPHA [COEF] | product A1 .. An | json PATH"),
    key("weights", "v", Some("unit"), "same forms as omega"),
    key("weights", "centers", Some("32"), "ball centers per axis"),
    key("weights", "steps", Some("16"), "radii in the ball ladder"),
    key("weights", "ratio", Some("1.4142135623730951"), "ratio between consecutive radii"),
    key("weights", "profile_steps", Some("16"), "radii in the compactness ladder"),
    key("weights", "profile_ratio", Some("2"), "ratio of the compactness ladder"),
    key("weights", "profile_fraction", Some("0.1"), "vanishing threshold of the compactness profile"),
    key("weights", "resolution", Some("32"), "quadrature cells per axis at the coarsest level"),
    key("weights", "levels", Some("3"), "quadrature refinement levels"),
    key("weights", "growth_factor", Some("2"), "growth across the three finest levels that flags divergence"),
    key("weights", "stability", Some("0.1"), "allowed relative change of the balance constant under ladder refinement"),
    key("weights", "ainf_count", Some("8"), "sub-box positions per axis and scale"),
    key("weights", "ainf_scales", Some("5"), "dyadic sub-box scales"),
    key("geometry", "radius", Some("auto"), "R of the enclosing ball; auto = box circumradius"),
    key("geometry", "x0", Some("auto"), "center of the enclosing ball in R^n; auto = box center"),
    key("geometry", "c0", Some("1"), "embedding constant C0"),
    key("geometry", "resolution", Some("64"), "quadrature cells per axis for weight masses"),
    key("solver", "max_iterations", Some("5000"), "descent iteration cap"),
    key("solver", "tolerance", Some("1e-10"), "gradient target of the Newton polish"),
    key("solver", "descent_tolerance", Some("1e-6"), "gradient target of the descent"),
    key("solver", "armijo", Some("1e-4"), "sufficient decrease constant"),
    key("solver", "backtrack", Some("0.5"), "step reduction factor"),
    key("solver", "path_nodes", Some("16"), "interior nodes of the mountain-pass path"),
    key("solver", "path_step", Some("1"), "initial path step"),
    key("solver", "mp_tolerance", Some("5e-2"), "gradient at the path maximum that ends the deformation"),
    key("solver", "mp_max_iterations", Some("3000"), "path deformation cap"),
    key("solver", "max_restarts", Some("3"), "path restarts with doubled nodes"),
    key("solver", "polish_iterations", Some("50"), "Newton steps after descent and path deformation"),
    key("solver", "sphere_slack", Some("0.9"), "fraction of rho kept by the local minimizer start"),
    key("solver", "residual", Some("1e-6"), "allowed weak-form residual of both solutions"),
    key("solver", "positivity", Some("1e-10"), "allowed negative part of both solutions"),
    key("solver", "distinct_fraction", Some("1e-3"), "required |u0 - u1|_E relative to the larger norm"),
    key("verify", "poincare_samples", Some("100"), "random test functions"),
    key("verify", "poincare_resolution", Some("17"), "nodes per axis of the coarsest grid"),
    key("verify", "poincare_levels", Some("2"), "grid doublings"),
    key("verify", "lattice", Some("6"), "coarse lattice of the random test functions"),
    key("verify", "stability", Some("0.2"), "allowed relative change of the empirical C0 under grid doubling"),
    key("verify", "sphere_samples", Some("100"), "random fields placed on the sphere of radius rho"),
    key("verify", "scan_points", Some("200"), "points of the fibering scan"),
    key("verify", "scan_lo", Some("1e-3"), "smallest t of the fibering scan"),
    key("verify", "scan_hi", Some("1e3"), "largest t of the fibering scan"),
    key("verify", "identity_tolerance", Some("1e-12"), "allowed gap between the scan and the t-polynomial"),
    key("verify", "gradient_pairs", Some("20"), "random pairs of the gradient check"),
    key("verify", "gradient_steps", Some("1e-2 1e-3 1e-4"), "central-difference steps of the gradient check"),
    key("verify", "qm_samples", Some("10000"), "triples of the quasi-triangle estimate"),
    key("output", "dir", Some("out"), "directory receiving all outputs"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemBlock {
    pub params: Params,
    pub proportional: bool,
    pub a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainBlock {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsBlock {
    pub omega: Weight,
    pub v: Weight,
    pub centers: usize,
    pub steps: usize,
    pub ratio: f64,
    pub profile_steps: usize,
    pub profile_ratio: f64,
    pub profile_fraction: f64,
    pub refine: Refinement,
    pub stability: f64,
    pub probes: AinfProbes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryBlock {
    pub radius: Option<f64>,
    pub x0: Option<Vec<f64>>,
    pub c0: f64,
    pub resolution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyBlock {
    pub poincare_samples: usize,
    pub poincare_resolution: usize,
    pub poincare_levels: usize,
    pub lattice: usize,
    pub stability: f64,
    pub sphere_samples: usize,
    pub scan_points: usize,
    pub scan_lo: f64,
    pub scan_hi: f64,
    pub identity_tolerance: f64,
    pub gradient_pairs: usize,
    pub gradient_steps: Vec<f64>,
    pub qm_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    pub domain: DomainBlock,
    pub weights: WeightsBlock,
    pub geometry: GeometryBlock,
    pub solver: SolverConfig,
    pub contracts: Contracts,
    pub verify: VerifyBlock,
    pub output: PathBuf,
    pub seed: u64,
}

struct Entry {
    value: String,
    line: usize,
}

struct Reader {
    entries: BTreeMap<(String, String), Entry>,
    end: usize,
    base: PathBuf,
}

fn config_err(key: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Config { key: key.into(), line, msg: msg.into() }
}

fn full_name(section: &str, name: &str) -> String {
    if section.is_empty() {
        name.into()
    } else {
        format!("{section}.{name}")
    }
}

impl Reader {
    fn parse(text: &str, base: PathBuf) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        let mut end = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            end = line;
            let s = raw.split(['#', ';']).next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(rest) = s.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(s, line, "unterminated section header"))?
                    .trim();
                if !KEYS.iter().any(|k| k.section == name) {
                    return Err(config_err(name, line, "unknown section"));
                }
                section = name.into();
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| config_err(s, line, "expected `key = value`"))?;
            let k = k.trim();
            let full = full_name(&section, k);
            if !KEYS.iter().any(|x| x.section == section && x.name == k) {
                return Err(config_err(&full, line, "unknown key"));
            }
            let prev = entries.insert((section.clone(), k.to_string()), Entry { value: v.trim().into(), line });
            if prev.is_some() {
                return Err(config_err(&full, line, "duplicate key"));
            }
        }
        Ok(Reader { entries, end: end + 1, base })
    }

    fn raw(&self, section: &str, name: &str) -> Result<(String, usize)> {
        if let Some(e) = self.entries.get(&(section.to_string(), name.to_string())) {
            return Ok((e.value.clone(), e.line));
        }
        let k = KEYS
            .iter()
            .find(|k| k.section == section && k.name == name)
            .expect("key listed in KEYS");
        match k.default {
            Some(d) => Ok((d.into(), 0)),
            None => Err(config_err(&full_name(section, name), self.end, "missing required key")),
        }
    }

    fn get<T: FromStr>(&self, section: &str, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let (v, line) = self.raw(section, name)?;
        v.parse().map_err(|e: T::Err| config_err(&full_name(section, name), line, format!("`{v}`: {e}")))
    }

    fn list<T: FromStr>(&self, section: &str, name: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let (v, line) = self.raw(section, name)?;
        split_list(&v)
            .map(|t| t.parse().map_err(|e: T::Err| config_err(&full_name(section, name), line, format!("`{t}`: {e}"))))
            .collect()
    }

    fn auto<T: FromStr>(&self, section: &str, name: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let (v, _) = self.raw(section, name)?;
        if v == "auto" {
            Ok(None)
        } else {
            self.list(section, name).map(Some)
        }
    }

    fn weight(&self, name: &str) -> Result<Weight> {
        let (v, line) = self.raw("weights", name)?;
        parse_weight(&v, &self.base).map_err(|msg| config_err(&full_name("weights", name), line, msg))
    }

    /// Error at the key's line for a semantic check.
    fn check(&self, section: &str, name: &str, ok: bool, msg: &str) -> Result<()> {
        if ok {
            return Ok(());
        }
        let line = self.entries.get(&(section.to_string(), name.to_string())).map_or(0, |e| e.line);
        Err(config_err(&full_name(section, name), line, msg))
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty())
}

fn parse_weight(spec: &str, base: &Path) -> std::result::Result<Weight, String> {
    let mut it = spec.split_whitespace();
    let kind = it.next().ok_or("empty weight")?;
    let rest: Vec<&str> = it.collect();
    let nums = || -> std::result::Result<Vec<f64>, String> {
        rest.iter().map(|t| t.trim_matches(',').parse::<f64>().map_err(|e| format!("`{t}`: {e}"))).collect()
    };
    match kind {
        "unit" if rest.is_empty() => Ok(Weight::constant(1.0)),
        "constant" => match nums()?[..] {
            [c] => Ok(Weight::constant(c)),
            _ => Err("constant takes one value".into()),
        },
        "power" => match nums()?[..] {
            [alpha] => Ok(Weight::power(alpha)),
            [alpha, coef] => Ok(Weight::Power { coef, alpha }),
            _ => Err("power takes ALPHA [COEF]".into()),
        },
        "product" => {
            let a = nums()?;
            if a.is_empty() {
                return Err("product needs one exponent per x-axis".into());
            }
            Ok(Weight::product(a))
        }
        "json" => {
            let path = rest.first().ok_or("json needs a path")?;
            let text = std::fs::read_to_string(base.join(path)).map_err(|e| format!("{path}: {e}"))?;
            serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))
        }
        _ => Err(format!("unknown weight `{spec}`")),
    }
}

impl ExperimentConfig {
    pub fn from_str_at(text: &str, base: &Path) -> Result<Self> {
        let r = Reader::parse(text, base.to_path_buf())?;
        let params = Params {
            p: r.get("problem", "p")?,
            q: r.get("problem", "q")?,
            gamma: r.get("problem", "gamma")?,
            mu: r.get("problem", "mu")?,
            n: r.get("problem", "n")?,
            m: r.get("problem", "m")?,
        };
        let dim = params.n + params.m;
        let lo: Vec<f64> = r.list("domain", "lo")?;
        let hi: Vec<f64> = r.list("domain", "hi")?;
        let mut counts: Vec<usize> = r.list("domain", "counts")?;
        if counts.len() == 1 {
            counts = vec![counts[0]; dim];
        }
        r.check("domain", "lo", lo.len() == dim, "needs n + m values")?;
        r.check("domain", "hi", hi.len() == dim, "needs n + m values")?;
        r.check("domain", "counts", counts.len() == dim, "needs one or n + m values")?;

        let refine = Refinement {
            resolution: r.get("weights", "resolution")?,
            levels: r.get("weights", "levels")?,
            growth_factor: r.get("weights", "growth_factor")?,
            ..Refinement::default()
        };
        let weights = WeightsBlock {
            omega: r.weight("omega")?,
            v: r.weight("v")?,
            centers: r.get("weights", "centers")?,
            steps: r.get("weights", "steps")?,
            ratio: r.get("weights", "ratio")?,
            profile_steps: r.get("weights", "profile_steps")?,
            profile_ratio: r.get("weights", "profile_ratio")?,
            profile_fraction: r.get("weights", "profile_fraction")?,
            refine,
            stability: r.get("weights", "stability")?,
            probes: AinfProbes { count: r.get("weights", "ainf_count")?, scales: r.get("weights", "ainf_scales")? },
        };
        let geometry = GeometryBlock {
            radius: r.auto::<f64>("geometry", "radius")?.map(|v| v[0]),
            x0: r.auto("geometry", "x0")?,
            c0: r.get("geometry", "c0")?,
            resolution: r.get("geometry", "resolution")?,
        };
        if let Some(x0) = &geometry.x0 {
            r.check("geometry", "x0", x0.len() == params.n, "needs n values")?;
        }
        let solver = SolverConfig {
            max_iterations: r.get("solver", "max_iterations")?,
            tolerance: r.get("solver", "tolerance")?,
            descent_tolerance: r.get("solver", "descent_tolerance")?,
            armijo: r.get("solver", "armijo")?,
            backtrack: r.get("solver", "backtrack")?,
            path_nodes: r.get("solver", "path_nodes")?,
            path_step: r.get("solver", "path_step")?,
            mp_tolerance: r.get("solver", "mp_tolerance")?,
            mp_max_iterations: r.get("solver", "mp_max_iterations")?,
            max_restarts: r.get("solver", "max_restarts")?,
            polish_iterations: r.get("solver", "polish_iterations")?,
            sphere_slack: r.get("solver", "sphere_slack")?,
            seed: r.get("", "seed")?,
        };
        let contracts = Contracts {
            residual: r.get("solver", "residual")?,
            positivity: r.get("solver", "positivity")?,
            distinct_fraction: r.get("solver", "distinct_fraction")?,
        };
        let verify = VerifyBlock {
            poincare_samples: r.get("verify", "poincare_samples")?,
            poincare_resolution: r.get("verify", "poincare_resolution")?,
            poincare_levels: r.get("verify", "poincare_levels")?,
            lattice: r.get("verify", "lattice")?,
            stability: r.get("verify", "stability")?,
            sphere_samples: r.get("verify", "sphere_samples")?,
            scan_points: r.get("verify", "scan_points")?,
            scan_lo: r.get("verify", "scan_lo")?,
            scan_hi: r.get("verify", "scan_hi")?,
            identity_tolerance: r.get("verify", "identity_tolerance")?,
            gradient_pairs: r.get("verify", "gradient_pairs")?,
            gradient_steps: r.list("verify", "gradient_steps")?,
            qm_samples: r.get("verify", "qm_samples")?,
        };
        r.check("verify", "lattice", verify.lattice >= 3, "needs at least 3 nodes")?;
        r.check("verify", "gradient_steps", verify.gradient_steps.len() >= 2, "needs at least two steps")?;
        r.check("verify", "scan_lo", verify.scan_lo > 0.0 && verify.scan_lo < verify.scan_hi, "needs 0 < scan_lo < scan_hi")?;
        let (dir, _) = r.raw("output", "dir")?;
        Ok(ExperimentConfig {
            problem: ProblemBlock {
                params,
                proportional: r.get("problem", "proportional")?,
                a: r.get("problem", "a")?,
            },
            domain: DomainBlock { lo, hi, counts },
            weights,
            geometry,
            solver,
            contracts,
            verify,
            output: PathBuf::from(dir),
            seed: r.get("", "seed")?,
        })
    }

    /// Reads a config file. Weight files resolve against its directory, the
    /// output directory against the working directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_at(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.solver.seed = seed;
        self
    }

    pub fn grid(&self) -> Result<Grid> {
        let p = &self.problem.params;
        Grid::new(p.n, p.m, self.domain.lo.clone(), self.domain.hi.clone(), self.domain.counts.clone())
    }

    /// `v`, or `a * omega` in the proportional case.
    pub fn v_weight(&self) -> Weight {
        if self.problem.proportional {
            self.weights.omega.scaled(self.problem.a)
        } else {
            self.weights.v.clone()
        }
    }

    /// Enclosing radius and center in R^n.
    pub fn enclosing_ball(&self, grid: &Grid) -> (f64, Vec<f64>) {
        (
            self.geometry.radius.unwrap_or_else(|| grid.circumradius()),
            self.geometry.x0.clone().unwrap_or_else(|| grid.x_center()),
        )
    }

    /// Ball family for the weight constants and the longer ladder for the
    /// compactness profile, both centered on the x-box.
    pub fn families(&self) -> Result<(BallFamily, BallFamily)> {
        let n = self.problem.params.n;
        let lo = &self.domain.lo[..n];
        let hi = &self.domain.hi[..n];
        let x0: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let r = 0.5 * lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        let w = &self.weights;
        Ok((
            BallFamily::lattice(&x0, r, w.centers, w.steps, w.ratio)?,
            BallFamily::lattice(&x0, r, w.centers, w.profile_steps, w.profile_ratio)?,
        ))
    }
}

/// Every key with its default, as a commented config file.
pub fn reference() -> String {
    let mut out = String::from("# Generated key reference. Keys without a default are required.\n");
    let mut section = "";
    for k in KEYS {
        if k.section != section {
            section = k.section;
            out.push_str(&format!("\n[{section}]\n"));
        }
        out.push_str(&format!("# {}\n", k.doc));
        match k.default {
            Some(d) => out.push_str(&format!("{} = {d}\n", k.name)),
            None => out.push_str(&format!("# {} = (required)\n", k.name)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[problem]
p = 1.5
q = 3
gamma = 1.3
mu = 0.05
n = 1
m = 1

[domain]
lo = 0, 0
hi = 1, 1
counts = 17
";

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_str_at(text, Path::new("."))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(MINIMAL).unwrap();
        assert_eq!(c.domain.counts, vec![17, 17]);
        assert_eq!(c.weights.omega, Weight::constant(1.0));
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.contracts, Contracts::default());
        assert_eq!(c.geometry.radius, None);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("mu = 0.05\n", "");
        match parse(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "problem.mu"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_its_line() {
        let text = MINIMAL.replace("q = 3", "q = three");
        match parse(&text) {
            Err(Error::Config { key, line, .. }) => assert_eq!((key.as_str(), line), ("problem.q", 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_section_rejected() {
        assert!(matches!(parse(&format!("{MINIMAL}typo = 1\n")), Err(Error::Config { line: 13, .. })));
        assert!(matches!(parse(&format!("[nope]\n{MINIMAL}")), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse(&format!("{MINIMAL}[domain]\nlo = 0 0\n")), Err(Error::Config { .. })));
    }

    #[test]
    fn weight_forms() {
        let base = Path::new(".");
        assert_eq!(parse_weight("power 0.3", base).unwrap(), Weight::power(0.3));
        assert_eq!(parse_weight("power 0.3 2", base).unwrap(), Weight::Power { coef: 2.0, alpha: 0.3 });
        assert_eq!(parse_weight("product 0.1 0.2", base).unwrap(), Weight::product(vec![0.1, 0.2]));
        assert_eq!(parse_weight("constant 3", base).unwrap(), Weight::constant(3.0));
        assert!(parse_weight("power", base).is_err());
        assert!(parse_weight("gauss 1", base).is_err());
    }

    #[test]
    fn comments_and_overrides() {
        let text = format!("seed = 7 # master\n{MINIMAL}[weights]\nomega = power 0.3 ; weighted\n[output]\ndir = run\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.solver.seed, 7);
        assert_eq!(c.weights.omega, Weight::power(0.3));
        assert_eq!(c.output, Path::new("run"));
    }

    #[test]
    fn reference_parses_once_required_keys_are_added() {
        let r = reference();
        assert!(r.contains("[solver]") && r.contains("mp_tolerance = 5e-2"));
        let mut text = r.replace("[problem]\n", "[problem]\np = 1.5\nq = 3\ngamma = 1.3\nmu = 0.05\nn = 1\nm = 1\n");
        text = text.replace("[domain]\n", "[domain]\nlo = 0 0\nhi = 1 1\ncounts = 9\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.verify.scan_points, 200);
    }
}
