#![allow(dead_code)]

use secure_jscc::codec::{CodecConfig, ConvLayerSpec, ImageShape};
use secure_jscc::config::{DatasetKind, ExperimentConfig};

pub const TINY_IMAGE: ImageShape = ImageShape {
    height: 8,
    width: 8,
    channels: 3,
};

/// A configuration small enough to train in well under a second.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    c.seed = 11;
    c.dataset.name = DatasetKind::Synthetic;
    c.dataset.synthetic.n_train = 48;
    c.dataset.synthetic.n_test = 24;
    c.dataset.synthetic.num_classes = 4;
    c.dataset.synthetic.image = TINY_IMAGE;
    c.codec = CodecConfig {
        image: TINY_IMAGE,
        antennas: 1,
        bandwidth_ratio: 1.0 / 3.0,
        power: 1.0,
        conv_stack: vec![ConvLayerSpec::new(6, 3, 2), ConvLayerSpec::new(8, 3, 1)],
    };
    c.roster.fading_stds = vec![0.64, 1.0];
    c.channel.eval.batch_size = 16;
    let s = &mut c.schedule;
    s.batch_size = 16;
    s.n_warmup = 2;
    s.n_episodes = 4;
    s.n_legit_epochs = 1;
    s.n_adv_epochs = 2;
    s.eval_every = 2;
    s.checkpoint_every = 2;
    s.eval_repeats = 2;
    s.train_eval_subset = 16;
    c
}
