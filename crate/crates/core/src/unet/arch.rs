//! The canonical lightweight U-Net.
//!
//! Input is a 2-channel 64x64 patch (spatial and temporal summaries).
//! Encoder levels 1..=3 have 16, 32 and 64 channels; each level is two 3x3
//! convolutions (zero padding 1) with ReLU, followed by 2x2 max-pooling on
//! all but the deepest level. Decoder levels 2 and 1 upsample the level
//! below by nearest-neighbour doubling, concatenate `[skip, upsampled]`
//! along channels, and apply two 3x3 convolutions with ReLU. A 1x1
//! convolution and a logistic sigmoid produce the probability map.

pub const PATCH: usize = 64;
pub const IN_CHANNELS: usize = 2;
pub const WIDTHS: [usize; 3] = [16, 32, 64];

/// Architecture fingerprint embedded in every weight file.
pub const FINGERPRINT: &str = "voltseg-unet/v1;in=2x64x64;enc=16,32,64;conv=3x3p1+relu*2;\
pool=max2;up=nearest2;cat=skip,up;out=1x1+sigmoid;kernel=oihw";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvSpec {
    /// Tensor name prefix, e.g. `enc1.conv1`.
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvSpec {
    fn new(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn kernel_name(&self) -> String {
        format!("{}.kernel", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// `(out, in, ky, kx)`.
    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn parameter_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub convs: Vec<ConvSpec>,
}

impl Architecture {
    pub fn parameter_count(&self) -> usize {
        self.convs.iter().map(ConvSpec::parameter_count).sum()
    }

    /// `(name, shape)` for every tensor, in canonical order.
    pub fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        self.convs
            .iter()
            .flat_map(|c| {
                [
                    (c.kernel_name(), c.kernel_shape()),
                    (c.bias_name(), vec![c.out_channels]),
                ]
            })
            .collect()
    }

    pub fn conv(&self, name: &str) -> Option<&ConvSpec> {
        self.convs.iter().find(|c| c.name == name)
    }
}

pub fn define_architecture() -> Architecture {
    let [w1, w2, w3] = WIDTHS;
    Architecture {
        convs: vec![
            ConvSpec::new("enc1.conv1", IN_CHANNELS, w1, 3),
            ConvSpec::new("enc1.conv2", w1, w1, 3),
            ConvSpec::new("enc2.conv1", w1, w2, 3),
            ConvSpec::new("enc2.conv2", w2, w2, 3),
            ConvSpec::new("enc3.conv1", w2, w3, 3),
            ConvSpec::new("enc3.conv2", w3, w3, 3),
            ConvSpec::new("dec2.conv1", w2 + w3, w2, 3),
            ConvSpec::new("dec2.conv2", w2, w2, 3),
            ConvSpec::new("dec1.conv1", w1 + w2, w1, 3),
            ConvSpec::new("dec1.conv2", w1, w1, 3),
            ConvSpec::new("out.conv", w1, 1, 1),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_concatenations_join_equal_resolutions() {
        // level l runs at PATCH >> (l - 1); decoder level l joins encoder
        // level l with the upsampled output of level l + 1.
        let arch = define_architecture();
        for level in [1usize, 2] {
            let skip = arch.conv(&format!("enc{level}.conv2")).unwrap().out_channels;
            let below = if level == 2 {
                arch.conv("enc3.conv2").unwrap().out_channels
            } else {
                arch.conv("dec2.conv2").unwrap().out_channels
            };
            let dec = arch.conv(&format!("dec{level}.conv1")).unwrap();
            assert_eq!(dec.in_channels, skip + below);
            let skip_res = PATCH >> (level - 1);
            let up_res = (PATCH >> level) * 2;
            assert_eq!(skip_res, up_res);
        }
    }

    #[test]
    fn tensor_names_are_unique() {
        let specs = define_architecture().tensor_specs();
        let mut names: Vec<_> = specs.iter().map(|s| s.0.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), specs.len());
        assert_eq!(specs.len(), 22);
    }
}
