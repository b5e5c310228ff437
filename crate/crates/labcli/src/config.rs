//! Experiment configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use srlab::{SrError, SrStructure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalogue name (`heisenberg`, `martinet`, `engel`) or a structure file.
    pub structure: String,
    pub seed: u64,
    pub grid: usize,
    pub output: PathBuf,
    /// `[x0, x1]` pairs.
    pub endpoints: Vec<[Vec<f64>; 2]>,
    pub restarts: usize,
    pub regularity: RegularitySection,
    pub exponents: ExponentSection,
    pub variation: VariationSection,
    pub kfunc: KfuncSection,
    pub fourier: FourierSection,
    pub ballbox: BallboxSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularitySection {
    pub p: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Relative to `||u||_2`.
    pub eps: Vec<f64>,
    /// Lower bound on the fitted L2 exponent of a solved control.
    pub min_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExponentSection {
    pub q: f64,
    /// `local` or `global`.
    pub case: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariationSection {
    /// Test-function specs: `hat`, `sine-<m>`, `random-<seed>`.
    pub phi: Vec<String>,
    pub lambda: Vec<f64>,
    /// Fields to vary; empty means all.
    pub fields: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfuncSection {
    pub m: Vec<f64>,
    /// Cells for the discretized problems (the control is resampled).
    pub cells: usize,
    pub max_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierSection {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub m_max: usize,
    pub partial: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallboxSection {
    /// Base point; empty means the origin.
    pub point: Vec<f64>,
    /// Probe directions; empty disables the stage.
    pub directions: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub grid: usize,
    pub fit_tol: f64,
}

impl Default for BallboxSection {
    fn default() -> Self {
        Self {
            point: Vec::new(),
            directions: Vec::new(),
            radii: vec![0.4, 0.2, 0.1, 0.05, 0.025],
            grid: srlab::geodesics::BALLBOX_GRID,
            fit_tol: 0.05,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            structure: "heisenberg".into(),
            seed: 0,
            grid: 64,
            output: PathBuf::from("srlab-out"),
            endpoints: Vec::new(),
            restarts: 1,
            regularity: RegularitySection::default(),
            exponents: ExponentSection::default(),
            variation: VariationSection::default(),
            kfunc: KfuncSection::default(),
            fourier: FourierSection::default(),
            ballbox: BallboxSection::default(),
        }
    }
}

impl Default for RegularitySection {
    fn default() -> Self {
        Self {
            p: vec![1.0, 2.0, f64::INFINITY],
            alpha: vec![0.5],
            gamma: vec![1.0, 2.0],
            eps: vec![0.2, 0.1, 0.05],
            min_exponent: 0.9,
        }
    }
}

impl Default for ExponentSection {
    fn default() -> Self {
        Self {
            q: 2.0,
            case: "local".into(),
        }
    }
}

impl Default for VariationSection {
    fn default() -> Self {
        Self {
            phi: vec!["random-0".into(), "hat".into(), "sine-1".into()],
            lambda: vec![1e-3, 1e-2, 1e-1],
            fields: Vec::new(),
        }
    }
}

impl Default for KfuncSection {
    fn default() -> Self {
        Self {
            m: vec![0.25, 1.0, 4.0],
            cells: 32,
            max_gap: 1e-2,
        }
    }
}

impl Default for FourierSection {
    fn default() -> Self {
        Self {
            alpha: vec![0.25, 0.5],
            gamma: vec![1.0, 2.0],
            m_max: 16,
            partial: vec![2, 4, 8, 16],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> srlab::Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| SrError::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> srlab::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SrError::Io(format!("{}: {}", path.display(), e)))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn case(&self) -> srlab::Result<srlab::interpdual::Case> {
        match self.exponents.case.as_str() {
            "local" => Ok(srlab::interpdual::Case::Local),
            "global" => Ok(srlab::interpdual::Case::Global),
            other => Err(SrError::Parse(format!("unknown case '{}' (local, global)", other))),
        }
    }

    pub fn structure(&self) -> srlab::Result<SrStructure> {
        srlab::io::load_structure(&self.structure)
    }

    pub fn validate(&self) -> srlab::Result<()> {
        let s = self.structure()?;
        self.case()?;
        if self.grid < 64 || self.grid % 2 != 0 {
            return Err(SrError::Parse(format!("grid = {} must be even and >= 64", self.grid)));
        }
        for (i, [a, b]) in self.endpoints.iter().enumerate() {
            if a.len() != s.dim() || b.len() != s.dim() {
                return Err(SrError::Parse(format!(
                    "endpoint pair {} does not have dimension {}",
                    i,
                    s.dim()
                )));
            }
        }
        if let Some(f) = self.variation.fields.iter().find(|&&f| f >= s.rank()) {
            return Err(SrError::Parse(format!("field {} out of range (rank {})", f, s.rank())));
        }
        for spec in &self.variation.phi {
            srlab::variation::TestFunction::family(spec, self.grid)?;
        }
        if self.kfunc.cells < 2 || self.kfunc.cells > self.grid {
            return Err(SrError::Parse("kfunc.cells must lie in [2, grid]".into()));
        }
        if self.fourier.m_max + 1 > self.grid / 2 {
            return Err(SrError::Parse("fourier.m_max must be below grid / 2".into()));
        }
        let bb = &self.ballbox;
        if !bb.point.is_empty() && bb.point.len() != s.dim() {
            return Err(SrError::Parse("ballbox.point has the wrong dimension".into()));
        }
        if bb.directions.iter().any(|d| d.len() != s.dim()) {
            return Err(SrError::Parse("ballbox direction has the wrong dimension".into()));
        }
        Ok(())
    }
}
