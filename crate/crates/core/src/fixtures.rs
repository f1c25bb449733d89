//! The two reference models trained on the bundled digits set.

use crate::data::{Dataset, Split};
use crate::network::{Activation, FloatNetwork, LayerSpec, Shape, ShapeError};
use crate::quant::{float_accuracy, Calibration};
use crate::train::{init_network, train, TrainParams};

pub const DEFAULT_SEED: u64 = 42;
pub const TEST_FRACTION: f64 = 0.2;
pub const CALIB_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureModel {
    Mlp,
    Cnn,
}

impl FixtureModel {
    pub fn name(self) -> &'static str {
        match self {
            FixtureModel::Mlp => "mlp",
            FixtureModel::Cnn => "cnn",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "mlp" => Some(FixtureModel::Mlp),
            "cnn" => Some(FixtureModel::Cnn),
            _ => None,
        }
    }

    pub fn specs(self) -> Vec<LayerSpec> {
        match self {
            FixtureModel::Mlp => mlp_specs(),
            FixtureModel::Cnn => cnn_specs(),
        }
    }

    fn train_params(self, seed: u64) -> TrainParams {
        match self {
            FixtureModel::Mlp => TrainParams { epochs: 40, batch: 16, learning_rate: 0.1, decay: 0.95, seed },
            FixtureModel::Cnn => TrainParams { epochs: 20, batch: 16, learning_rate: 0.05, decay: 0.9, seed },
        }
    }
}

/// Three dense layers: 64 -> 32 -> 16 -> 10.
pub fn mlp_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::dense(Shape::new(1, 1, 64), 32),
        LayerSpec::dense(Shape::new(1, 1, 32), 16),
        LayerSpec::dense(Shape::new(1, 1, 16), 10).with_activation(Activation::None),
    ]
}

/// Small LeNet-style network for 8x8 inputs.
pub fn cnn_specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv2d(Shape::new(8, 8, 1), 8, 3, 1, 1),
        LayerSpec::max_pool(Shape::new(8, 8, 8), 2, 2),
        LayerSpec::conv2d(Shape::new(4, 4, 8), 32, 3, 1, 1),
        LayerSpec::conv2d(Shape::new(4, 4, 32), 32, 3, 1, 1),
        LayerSpec::max_pool(Shape::new(4, 4, 32), 2, 2),
        LayerSpec::dense(Shape::new(2, 2, 32), 10).with_activation(Activation::None),
    ]
}

/// A trained fixture with its data split.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub model: FixtureModel,
    pub net: FloatNetwork,
    pub dataset: Dataset,
    pub split: Split,
    pub float_accuracy: f64,
}

impl Fixture {
    pub fn calib_images(&self) -> Vec<Vec<f32>> {
        self.dataset.float_images(&self.split.calib)
    }

    pub fn test_images(&self) -> Vec<Vec<f32>> {
        self.dataset.float_images(&self.split.test)
    }

    pub fn test_labels(&self) -> Vec<u8> {
        self.dataset.labels_of(&self.split.test)
    }

    pub fn calibration(&self) -> Calibration {
        crate::quant::calibrate(&self.net, &self.calib_images()).expect("calibration split is non-empty")
    }
}

pub fn split_for(dataset: &Dataset, seed: u64) -> Split {
    dataset.split(seed, TEST_FRACTION, CALIB_FRACTION)
}

/// Trains a fixture model deterministically from `seed`.
pub fn build(model: FixtureModel, dataset: &Dataset, seed: u64) -> Result<Fixture, ShapeError> {
    let split = split_for(dataset, seed);
    let mut net = init_network(&model.specs(), seed)?;
    let images = dataset.float_images(&split.train);
    let labels = dataset.labels_of(&split.train);
    train(&mut net, &images, &labels, &model.train_params(seed));
    let acc = float_accuracy(&net, &dataset.float_images(&split.test), &dataset.labels_of(&split.test));
    Ok(Fixture { model, net, dataset: dataset.clone(), split, float_accuracy: acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::validate_chain;

    #[test]
    fn specs_chain() {
        validate_chain(&mlp_specs()).unwrap();
        validate_chain(&cnn_specs()).unwrap();
    }
}
