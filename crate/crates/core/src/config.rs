//! Experiment configuration files (TOML) and the scenarios built from them.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibration::BetaSource;
use crate::control::{lqr, LinearModel};
use crate::exploration::{ExplorationConfig, Scenario};
use crate::gp::{FitOptions, Range};
use crate::kernels::Kernel;
use crate::pcis::BoxSet;
use crate::plants::{Plant, PolynomialPlant, TankParams, TankPlant};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    Poly2d,
    Tank3 {
        #[serde(default)]
        params: TankParams,
        /// Levels the nominal model is linearized at, in m.
        operating_point: [f64; 3],
    },
}

/// Diagonal LQR weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub state_margin: Vec<f64>,
    /// Initial state; the operating point when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    /// Kernel template shared by all output channels.
    pub kernel: Kernel,
    #[serde(default)]
    pub fit: FitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// Plant-coordinate targets for the unfiltered run, cycled per iteration.
    pub targets: Vec<Vec<f64>>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { targets: vec![vec![4.0, 0.0]] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelBenchConfig {
    pub train_points: usize,
    pub test_points: usize,
    pub noise_std: f64,
    /// Sampling box for train and test inputs.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub fit: FitOptions,
}

impl Default for KernelBenchConfig {
    fn default() -> Self {
        Self {
            train_points: 300,
            test_points: 200,
            noise_std: 1e-4,
            lo: vec![-2.0, -2.0],
            hi: vec![2.0, 2.0],
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseBenchConfig {
    pub train_points: usize,
    pub inducing: Vec<usize>,
    pub repeats: usize,
}

impl Default for SparseBenchConfig {
    fn default() -> Self {
        Self { train_points: 200, inducing: vec![10, 20, 30, 40], repeats: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub control: ControlConfig,
    pub constraints: ConstraintConfig,
    pub sensor_std: Vec<f64>,
    pub gp: GpConfig,
    #[serde(default)]
    pub exploration: ExplorationConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub kernel_bench: KernelBenchConfig,
    #[serde(default)]
    pub sparse_bench: SparseBenchConfig,
}

impl ExperimentConfig {
    /// Parses TOML text; errors carry the offending line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn dims(&self) -> (usize, usize) {
        match self.plant {
            PlantConfig::Poly2d => (2, 1),
            PlantConfig::Tank3 { .. } => (3, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.dims();
        let c = &self.constraints;
        let checks = [
            ("control.q", self.control.q.len(), n),
            ("control.r", self.control.r.len(), m),
            ("constraints.x_lo", c.x_lo.len(), n),
            ("constraints.x_hi", c.x_hi.len(), n),
            ("constraints.u_lo", c.u_lo.len(), m),
            ("constraints.u_hi", c.u_hi.len(), m),
            ("constraints.state_margin", c.state_margin.len(), n),
            ("sensor_std", self.sensor_std.len(), n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Config(format!("{name} has {got} entries, expected {want}")));
            }
        }
        if let Some(x0) = &c.x0 {
            if x0.len() != n {
                return Err(Error::Config(format!("constraints.x0 has {} entries, expected {n}", x0.len())));
            }
        }
        self.gp.kernel.validate().map_err(|e| Error::Config(format!("gp.kernel: {e}")))?;
        self.exploration.validate(n, m)?;
        for t in &self.baseline.targets {
            if t.len() != n {
                return Err(Error::Config("baseline targets must be state vectors".into()));
            }
        }
        Ok(())
    }

    /// Overrides every seed in the file.
    pub fn set_seed(&mut self, seed: u64) {
        self.exploration.seed = seed;
        self.gp.fit.seed = seed;
        self.kernel_bench.fit.seed = seed;
    }

    /// Builds the plant, its linearization and the LQR design.
    pub fn scenario(&self) -> Result<Scenario> {
        let c = &self.constraints;
        let x_box = BoxSet::new(c.x_lo.clone(), c.x_hi.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let u_box = BoxSet::new(c.u_lo.clone(), c.u_hi.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let (plant, model, pump, slew): (Box<dyn Plant + Send + Sync>, LinearModel, _, _) = match &self.plant {
            PlantConfig::Poly2d => {
                let (a, b) = PolynomialPlant::nominal();
                (Box::new(PolynomialPlant), LinearModel::continuous(a, b)?, None, None)
            }
            PlantConfig::Tank3 { params, operating_point } => {
                let plant = TankPlant::new(params.clone())?;
                let u_op = plant.steady_state_inputs(operating_point)?;
                let (a, b) = plant.jacobian(operating_point, &u_op)?;
                let model = LinearModel::continuous(a, b)?
                    .with_operating_point(DVector::from_column_slice(operating_point), DVector::from_vec(u_op))?;
                let (pump, slew) = (Some(params.pump), Some(params.r_max));
                (Box::new(plant), model, pump, slew)
            }
        };
        let q = DMatrix::from_diagonal(&DVector::from_column_slice(&self.control.q));
        let r = DMatrix::from_diagonal(&DVector::from_column_slice(&self.control.r));
        let clf = lqr(&model, &q, &r, self.control.lambda)?;
        let n = model.state_dim();
        let x0 = c.x0.clone().unwrap_or_else(|| model.x_op.iter().copied().collect());
        Ok(Scenario {
            plant,
            model,
            clf,
            x_box,
            u_box,
            state_margin: c.state_margin.clone(),
            sensor_std: self.sensor_std.clone(),
            kernels: vec![self.gp.kernel.clone(); n],
            fit: self.gp.fit.clone(),
            pump,
            slew,
            x0,
        })
    }
}

/// Defaults of the two-dimensional polynomial benchmark.
pub fn poly2d_default() -> ExperimentConfig {
    ExperimentConfig {
        plant: PlantConfig::Poly2d,
        control: ControlConfig { q: vec![0.1, 0.1], r: vec![0.1], lambda: None },
        constraints: ConstraintConfig {
            x_lo: vec![-5.0, -5.0],
            x_hi: vec![5.0, 5.0],
            u_lo: vec![-10.0],
            u_hi: vec![10.0],
            state_margin: vec![0.1, 0.1],
            x0: None,
        },
        sensor_std: vec![1e-4, 1e-4],
        gp: GpConfig {
            kernel: Kernel::Rbf { variance: 100.0, lengthscale: 1.0 },
            fit: FitOptions { variance: Range::new(100.0, 1e4), ..FitOptions::default() },
        },
        exploration: ExplorationConfig { initial_spread: vec![0.5, 0.5], ..ExplorationConfig::default() },
        baseline: BaselineConfig::default(),
        kernel_bench: KernelBenchConfig::default(),
        sparse_bench: SparseBenchConfig::default(),
    }
}

/// Defaults of the three-tank process on the 45–87% level band.
pub fn tank3_default() -> ExperimentConfig {
    let band = ([0.135; 3].to_vec(), [0.261; 3].to_vec());
    ExperimentConfig {
        plant: PlantConfig::Tank3 { params: TankParams::default(), operating_point: [0.215, 0.22, 0.215] },
        control: ControlConfig { q: vec![1.0; 3], r: vec![1e-3; 3], lambda: None },
        constraints: ConstraintConfig {
            x_lo: band.0,
            x_hi: band.1,
            u_lo: vec![0.0; 3],
            u_hi: vec![1.0; 3],
            state_margin: vec![0.002; 3],
            x0: Some(vec![0.22; 3]),
        },
        sensor_std: vec![1e-5; 3],
        gp: GpConfig {
            kernel: Kernel::Matern52 { variance: 1.0, lengthscale: 0.05 },
            fit: FitOptions {
                variance: Range::new(1e-2, 1e2),
                lengthscale: Range::new(1e-2, 1.0),
                fit_noise: true,
                standardize: true,
                ..FitOptions::default()
            },
        },
        exploration: ExplorationConfig {
            iterations: 5,
            steps_per_iteration: 400,
            dt: 1.0,
            initial_points: 200,
            initial_spread: vec![0.03; 3],
            initial_input_spread: vec![0.2; 3],
            stride: 2,
            grid: 41,
            beta: BetaSource::Constant { value: 2.797 },
            rho: Some(1e7),
            ..ExplorationConfig::default()
        },
        baseline: BaselineConfig { targets: vec![vec![0.215, 0.22, 0.1356]] },
        kernel_bench: KernelBenchConfig {
            lo: vec![-0.05; 3],
            hi: vec![0.05; 3],
            noise_std: 1e-6,
            fit: FitOptions { standardize: true, ..FitOptions::default() },
            ..KernelBenchConfig::default()
        },
        sparse_bench: SparseBenchConfig::default(),
    }
}
