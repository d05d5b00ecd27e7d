//! Trained predictors on disk.

use std::path::{Path, PathBuf};

use bolus_core::pg::{MealClass, PgPredictor};
use serde::Serialize;

use crate::error::{AppError, AppResult, InvalidContext};

pub const MODEL_EXTENSION: &str = "model.json";

/// A predictor together with the name it was loaded under.
#[derive(Debug, Clone)]
pub struct NamedModel {
    pub name: String,
    pub predictor: PgPredictor<f64>,
}

/// At most one predictor per meal class.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub models: Vec<NamedModel>,
}

impl ModelSet {
    pub fn load(paths: &[PathBuf]) -> AppResult<Self> {
        let mut set = ModelSet::default();
        for path in paths {
            let text = std::fs::read_to_string(path).invalid(&path.display().to_string())?;
            let predictor =
                PgPredictor::from_json(&text).invalid(&path.display().to_string())?;
            set.insert(NamedModel {
                name: model_name(path),
                predictor,
            })?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, model: NamedModel) -> AppResult<()> {
        let class = model.predictor.meal_class;
        if self.get(class).is_some() {
            return Err(AppError::invalid(format!("more than one {class} model supplied")));
        }
        self.models.push(model);
        Ok(())
    }

    pub fn get(&self, class: MealClass) -> Option<&NamedModel> {
        self.models.iter().find(|m| m.predictor.meal_class == class)
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// The model for `class`, or the only model when no class is given.
    pub fn select(&self, class: Option<MealClass>) -> Result<&NamedModel, String> {
        match class {
            Some(c) => self.get(c).ok_or_else(|| format!("no {c} model loaded")),
            None if self.models.len() == 1 => Ok(&self.models[0]),
            None => Err("several models loaded; meal_class is required".to_string()),
        }
    }

    pub fn metadata(&self) -> Vec<ModelInfo> {
        self.models.iter().map(ModelInfo::from).collect()
    }
}

/// File stem without the model extension.
fn model_name(path: &Path) -> String {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    file.strip_suffix(&format!(".{MODEL_EXTENSION}"))
        .or_else(|| file.strip_suffix(".json"))
        .unwrap_or(&file)
        .to_string()
}

pub fn save_model(dir: &Path, class: MealClass, predictor: &PgPredictor<f64>) -> AppResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.{MODEL_EXTENSION}", class.as_str()));
    std::fs::write(&path, predictor.to_json()?)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub step: usize,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub length_scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub name: String,
    pub meal_class: MealClass,
    pub meal_aware: bool,
    pub input_dim: usize,
    pub training_samples: usize,
    pub steps: Vec<StepInfo>,
}

impl From<&NamedModel> for ModelInfo {
    fn from(m: &NamedModel) -> Self {
        let p = &m.predictor;
        ModelInfo {
            name: m.name.clone(),
            meal_class: p.meal_class,
            meal_aware: p.meal_aware,
            input_dim: p.input_dim(),
            training_samples: p.step_models.first().map_or(0, |g| g.dataset().len()),
            steps: p
                .step_models
                .iter()
                .enumerate()
                .map(|(i, g)| StepInfo {
                    step: i + 1,
                    signal_variance: g.params().signal_variance,
                    noise_variance: g.params().noise_variance,
                    length_scales: g.params().length_scales.clone(),
                })
                .collect(),
        }
    }
}
