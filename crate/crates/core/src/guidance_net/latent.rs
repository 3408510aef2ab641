use super::config::NetConfig;
use super::tensor::Tensor;
use crate::motion_field::ReferenceImage;
use crate::{Error, Result};

/// Fixed average-pool stand-in for an image autoencoder. Latent channel `c` is the
/// block mean of `[r, g, b, gray][c % 4]`, mapped from `[0, 1]` to `[-1, 1]`.
pub fn encode_latent(image: &ReferenceImage, cfg: &NetConfig) -> Result<Tensor> {
    if (image.width(), image.height()) != (cfg.image_width, cfg.image_height) {
        return Err(Error::shape(
            "latent encoder input",
            &[cfg.image_height, cfg.image_width],
            &[image.height(), image.width()],
        ));
    }
    let f = cfg.downsample;
    let (h, w) = (cfg.latent_height(), cfg.latent_width());
    let mut out = Tensor::zeros(cfg.latent_shape(1));
    let norm = 1.0 / (f * f) as f64;
    for ly in 0..h {
        for lx in 0..w {
            let mut acc = [0.0; 4];
            for y in ly * f..(ly + 1) * f {
                for x in lx * f..(lx + 1) * f {
                    let p = image.get(x, y);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                    acc[3] += (p[0] + p[1] + p[2]) / 3.0;
                }
            }
            for c in 0..cfg.latent_channels {
                let i = out.index(0, c, ly, lx);
                out.data_mut()[i] = 2.0 * acc[c % 4] * norm - 1.0;
            }
        }
    }
    Ok(out)
}
