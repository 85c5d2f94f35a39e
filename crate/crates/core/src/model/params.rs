use rand::Rng;

use super::config::{Aggregation, ModelConfig, Task};
use crate::autograd::{ParamStore, Tensor};
use crate::error::Result;

/// All learnable weights and batch-norm state of a network, plus the
/// configuration that fixes their shapes.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
}

struct Init<'a, R: Rng> {
    store: ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    /// Weight of shape `fan_in x fan_out`, uniform in `±1/sqrt(fan_in)`.
    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| self.rng.gen_range(-bound..=bound))
            .collect();
        self.store
            .add(name, Tensor::from_vec(fan_in, fan_out, data)?)?;
        Ok(())
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        self.weight(&format!("{name}.weight"), fan_in, fan_out)?;
        self.store
            .add(&format!("{name}.bias"), Tensor::zeros(1, fan_out))?;
        Ok(())
    }

    fn batchnorm(&mut self, name: &str, width: usize) -> Result<()> {
        self.store
            .add(&format!("{name}.gamma"), Tensor::filled(1, width, 1.0))?;
        self.store
            .add(&format!("{name}.beta"), Tensor::zeros(1, width))?;
        self.store
            .add_buffer(&format!("{name}.running_mean"), Tensor::zeros(1, width))?;
        self.store
            .add_buffer(&format!("{name}.running_var"), Tensor::filled(1, width, 1.0))?;
        Ok(())
    }

    /// Gate layout `[input, forget, candidate, output]`; forget bias +1.
    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Result<()> {
        self.weight(&format!("{name}.weight"), hidden + input, 4 * hidden)?;
        let mut bias = Tensor::zeros(1, 4 * hidden);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        self.store.add(&format!("{name}.bias"), bias)?;
        Ok(())
    }

    /// Shared MLP with batch norm on every layer; the normalization
    /// makes a linear bias redundant, so layers have none. Returns the
    /// output width.
    fn mlp(&mut self, name: &str, input: usize, widths: &[usize]) -> Result<usize> {
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            self.weight(&format!("{name}.fc{i}.weight"), fan_in, w)?;
            self.batchnorm(&format!("{name}.bn{i}"), w)?;
            fan_in = w;
        }
        Ok(fan_in)
    }

    /// Fully connected stack with batch norm on every hidden layer.
    fn head(&mut self, name: &str, input: usize, hidden: &[usize], out: usize) -> Result<()> {
        let mut fan_in = input;
        for (i, &w) in hidden.iter().enumerate() {
            self.linear(&format!("{name}.fc{i}"), fan_in, w)?;
            self.batchnorm(&format!("{name}.bn{i}"), w)?;
            fan_in = w;
        }
        self.linear(&format!("{name}.out"), fan_in, out)
    }
}

impl ModelParams {
    /// Allocates and initializes every tensor the configuration calls for.
    pub fn init<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config;
        let (d, h, t) = (c.feature_dim, c.hidden_dim, c.num_scales());
        let mut init = Init {
            store: ParamStore::new(),
            rng,
        };

        let mut area = c.area_mlp.clone();
        area.push(d);
        init.mlp("area", 3, &area)?;
        init.linear("area.combine", d + 3, d)?;

        if c.aggregation.uses_encoder() {
            init.lstm("encoder.lstm", d, h)?;
            init.weight("encoder.wa", h, d)?;
        }
        if c.aggregation.uses_decoder() {
            init.lstm("decoder.lstm", h, h)?;
            init.weight("decoder.wb", h, d)?;
        }
        match c.aggregation {
            Aggregation::AttentionEd => {
                init.weight("decoder.wc", h, h)?;
                init.weight("decoder.wd", 2 * h, h)?;
                init.weight("decoder.ws", h, d)?;
            }
            Aggregation::Concatenation => init.linear("concat", t * d, d)?,
            _ => {}
        }

        let mut global = c.global_mlp.clone();
        global.push(c.global_dim);
        init.mlp("global", c.region_dim() + 3, &global)?;

        match c.task {
            Task::Classification => init.head("cls", c.global_dim, &c.classifier, c.classes)?,
            Task::Segmentation => {
                let w1 = init.mlp("seg.prop1", c.global_dim + c.region_dim(), &c.seg_region_mlp)?;
                let w2 = init.mlp(
                    "seg.prop2",
                    w1 + c.point_feature_dim(),
                    &c.seg_point_mlp,
                )?;
                init.head("seg.head", w2, &c.seg_head, c.parts)?;
            }
        }

        Ok(ModelParams {
            config: config.clone(),
            store: init.store,
        })
    }
}
