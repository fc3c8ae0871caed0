use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointVector, DOF, HOME_POSITION};
use crate::sim::Observation;
use crate::stage_ocp::Limits;

use super::BlackboxError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerShape {
    /// Valid convolution with a full-width kernel over a single-channel image.
    Conv { rows: usize, cols: usize, channels: usize },
    Dense { inputs: usize, outputs: usize },
}

impl LayerShape {
    pub fn weights(&self) -> usize {
        match *self {
            LayerShape::Conv { rows, cols, channels } => rows * cols * channels,
            LayerShape::Dense { inputs, outputs } => inputs * outputs,
        }
    }

    pub fn biases(&self) -> usize {
        match *self {
            LayerShape::Conv { channels, .. } => channels,
            LayerShape::Dense { outputs, .. } => outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights() + self.biases()
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerShape::Conv { rows, cols, .. } => rows * cols,
            LayerShape::Dense { inputs, .. } => inputs,
        }
    }
}

pub fn layers_param_count(layers: &[LayerShape]) -> usize {
    layers.iter().map(LayerShape::param_count).sum()
}

/// Two convolutional towers (joint history, predicted ball trajectory) whose
/// flattened outputs are concatenated and passed through two dense layers.
///
/// Default shapes for `n_hist = 8`, `n_pred = 12`:
///
/// | layer       | shape           | weights | biases | total |
/// |-------------|-----------------|---------|--------|-------|
/// | history     | 4 x (3 x 7)     | 84      | 4      | 88    |
/// | ball        | 4 x (4 x 6)     | 96      | 4      | 100   |
/// | hidden      | 60 -> 45        | 2700    | 45     | 2745  |
/// | output      | 45 -> 7         | 315     | 7      | 322   |
/// | **total**   |                 |         |        | 3255  |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyArchitecture {
    pub n_hist: usize,
    pub n_pred: usize,
    pub history_kernel_rows: usize,
    pub history_channels: usize,
    pub ball_kernel_rows: usize,
    pub ball_channels: usize,
    pub hidden: usize,
    /// Subtracted from predicted ball positions before the ball tower.
    pub ball_offset: [f64; 3],
    /// Multiplies predicted ball velocities before the ball tower.
    pub velocity_scale: f64,
}

impl Default for PolicyArchitecture {
    fn default() -> Self {
        Self {
            n_hist: 8,
            n_pred: 12,
            history_kernel_rows: 3,
            history_channels: 4,
            ball_kernel_rows: 4,
            ball_channels: 4,
            hidden: 45,
            ball_offset: HOME_POSITION,
            velocity_scale: 0.2,
        }
    }
}

/// Name and position of one parameter block in the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl PolicyArchitecture {
    pub fn validate(&self) -> Result<(), BlackboxError> {
        let ok = self.history_kernel_rows >= 1
            && self.history_kernel_rows <= self.n_hist
            && self.ball_kernel_rows >= 1
            && self.ball_kernel_rows <= self.n_pred
            && self.history_channels >= 1
            && self.ball_channels >= 1
            && self.hidden >= 1;
        if ok {
            Ok(())
        } else {
            Err(BlackboxError::Architecture(format!("{self:?}")))
        }
    }

    fn history_rows_out(&self) -> usize {
        self.n_hist + 1 - self.history_kernel_rows
    }

    fn ball_rows_out(&self) -> usize {
        self.n_pred + 1 - self.ball_kernel_rows
    }

    fn features(&self) -> usize {
        self.history_rows_out() * self.history_channels + self.ball_rows_out() * self.ball_channels
    }

    pub fn layers(&self) -> [LayerShape; 4] {
        [
            LayerShape::Conv { rows: self.history_kernel_rows, cols: DOF, channels: self.history_channels },
            LayerShape::Conv { rows: self.ball_kernel_rows, cols: 6, channels: self.ball_channels },
            LayerShape::Dense { inputs: self.features(), outputs: self.hidden },
            LayerShape::Dense { inputs: self.hidden, outputs: DOF },
        ]
    }

    pub fn param_count(&self) -> usize {
        layers_param_count(&self.layers())
    }

    pub fn layout(&self) -> Vec<ParamBlock> {
        let names = ["history", "ball", "hidden", "output"];
        let mut offset = 0;
        let mut blocks = Vec::new();
        for (name, layer) in names.iter().zip(self.layers()) {
            let shape = match layer {
                LayerShape::Conv { rows, cols, channels } => vec![channels, rows, cols],
                LayerShape::Dense { inputs, outputs } => vec![outputs, inputs],
            };
            blocks.push(ParamBlock { name: format!("{name}.weight"), offset, shape });
            offset += layer.weights();
            blocks.push(ParamBlock { name: format!("{name}.bias"), offset, shape: vec![layer.biases()] });
            offset += layer.biases();
        }
        blocks
    }

    /// Scaled normal initialization; the output layer starts 10x smaller.
    pub fn init<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let layers = self.layers();
        let mut theta = Vec::with_capacity(self.param_count());
        for (i, layer) in layers.iter().enumerate() {
            let mut scale = 1.0 / (layer.fan_in() as f64).sqrt();
            if i == layers.len() - 1 {
                scale *= 0.1;
            }
            theta.extend((0..layer.weights()).map(|_| scale * unit.sample(rng)));
            theta.extend(std::iter::repeat_n(0.0, layer.biases()));
        }
        theta
    }
}

pub fn param_count(arch: &PolicyArchitecture) -> usize {
    arch.param_count()
}

/// `tanh(conv(image))` flattened channel-major.
#[allow(clippy::too_many_arguments)]
fn conv_tower(image: &[f64], rows: usize, cols: usize, kernel_rows: usize, channels: usize, w: &[f64], b: &[f64], out: &mut Vec<f64>) {
    let rows_out = rows + 1 - kernel_rows;
    let kernel = kernel_rows * cols;
    for c in 0..channels {
        let wc = &w[c * kernel..(c + 1) * kernel];
        for r in 0..rows_out {
            let window = &image[r * cols..(r + kernel_rows) * cols];
            let acc: f64 = wc.iter().zip(window).map(|(a, x)| a * x).sum();
            out.push((acc + b[c]).tanh());
        }
    }
}

fn dense(input: &[f64], w: &[f64], b: &[f64], outputs: usize) -> Vec<f64> {
    let n = input.len();
    (0..outputs)
        .map(|o| w[o * n..(o + 1) * n].iter().zip(input).map(|(a, x)| a * x).sum::<f64>() + b[o])
        .collect()
}

/// Joint velocity command for one observation, squashed into the velocity box.
pub fn policy_forward(arch: &PolicyArchitecture, theta: &[f64], obs: &Observation, limits: &Limits) -> Result<JointVector, BlackboxError> {
    let expected = arch.param_count();
    if theta.len() != expected {
        return Err(BlackboxError::ShapeMismatch(format!("theta has {} entries, expected {expected}", theta.len())));
    }
    if obs.joint_history.shape() != (arch.n_hist, DOF) || obs.predicted_ball.shape() != (arch.n_pred, 6) {
        return Err(BlackboxError::ShapeMismatch(format!(
            "observation shapes {:?} and {:?} do not match ({}, {DOF}) and ({}, 6)",
            obs.joint_history.shape(),
            obs.predicted_ball.shape(),
            arch.n_hist,
            arch.n_pred
        )));
    }
    let history: Vec<f64> = (0..arch.n_hist).flat_map(|r| (0..DOF).map(move |c| (r, c))).map(|rc| obs.joint_history[rc]).collect();
    let mut ball = Vec::with_capacity(arch.n_pred * 6);
    for r in 0..arch.n_pred {
        for a in 0..3 {
            ball.push(obs.predicted_ball[(r, a)] - arch.ball_offset[a]);
        }
        for a in 0..3 {
            ball.push(obs.predicted_ball[(r, 3 + a)] * arch.velocity_scale);
        }
    }

    let layers = arch.layers();
    let mut blocks = Vec::with_capacity(8);
    let mut offset = 0;
    for layer in &layers {
        let w = &theta[offset..offset + layer.weights()];
        offset += layer.weights();
        let b = &theta[offset..offset + layer.biases()];
        offset += layer.biases();
        blocks.push((w, b));
    }

    let mut features = Vec::with_capacity(arch.features());
    conv_tower(&history, arch.n_hist, DOF, arch.history_kernel_rows, arch.history_channels, blocks[0].0, blocks[0].1, &mut features);
    conv_tower(&ball, arch.n_pred, 6, arch.ball_kernel_rows, arch.ball_channels, blocks[1].0, blocks[1].1, &mut features);
    let hidden: Vec<f64> = dense(&features, blocks[2].0, blocks[2].1, arch.hidden).into_iter().map(f64::tanh).collect();
    let out = dense(&hidden, blocks[3].0, blocks[3].1, DOF);

    Ok(JointVector::from_fn(|i, _| {
        let (lo, hi) = (limits.qd_lo[i], limits.qd_hi[i]);
        0.5 * (hi + lo) + 0.5 * (hi - lo) * out[i].tanh()
    }))
}

/// Architecture plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub arch: PolicyArchitecture,
    pub theta: Vec<f64>,
}

impl Policy {
    pub fn new(arch: PolicyArchitecture, theta: Vec<f64>) -> Result<Self, BlackboxError> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(BlackboxError::ShapeMismatch(format!("theta has {} entries, expected {}", theta.len(), arch.param_count())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(BlackboxError::ShapeMismatch("theta must be finite".into()));
        }
        Ok(Self { arch, theta })
    }

    pub fn zeros(arch: PolicyArchitecture) -> Self {
        let theta = vec![0.0; arch.param_count()];
        Self { arch, theta }
    }

    pub fn forward(&self, obs: &Observation, limits: &Limits) -> Result<JointVector, BlackboxError> {
        policy_forward(&self.arch, &self.theta, obs, limits)
    }
}
