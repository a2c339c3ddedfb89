"""The learnable shape prior is plug-and-play on a skip connection.

One coarse template volume (N classes at 1/16 resolution) is refined by
scan blocks, fused with skip features at a chosen encoder scale, and split
back into an enhanced skip feature plus an enhanced template.  Gradients
reach the template through both the feature path and the template path,
which is what makes it learnable; disabling the module leaves the network
bit-identical to a plain build.
"""

import numpy as np

from spineseg import Tape, Tensor, tsum
from spineseg.network import NetworkConfig, build_network, forward
from spineseg.shape_prior import init_shape_prior, init_vsp_params, vsp_forward
from spineseg.tensor import mul

rng = np.random.default_rng(3)

# standalone module at one skip scale: C=4 feature channels, 3 classes
prior = init_shape_prior(n_classes=3, spatial=(2, 2, 2), rng=rng)
params = init_vsp_params(channels=4, n_classes=3, up_factor=(4, 4, 4),
                         rng=rng, state_size=2, expand=1, conv_width=3)
skip_features = Tensor(rng.standard_normal((1, 4, 8, 8, 8)))

with Tape() as tape:
    enhanced, template = vsp_forward(skip_features, prior, params)
    loss = tsum(mul(enhanced, enhanced))
tape.backward(loss)
print("enhanced skip:", enhanced.shape, " enhanced template:", template.shape)
print("template gradient magnitude:", float(np.abs(prior.v0.grad).max()))

# inside a network: same seed, prior on vs off
cfg = NetworkConfig(patch_size=(16, 16, 16), n_classes=3, channels=[4, 8, 16],
                    pooling_per_axis=[(2, 2, 2)] * 2, variant="bot", vsp=True,
                    vsp_ratio=8, state_size=2, expand=1, conv_width=3)
cfg.validate()
net_plain = build_network(NetworkConfig.from_dict({**cfg.to_dict(), "vsp": False}), seed=5)
net_prior = build_network(cfg, seed=5)
x = Tensor(rng.standard_normal((1, 1, 16, 16, 16)))
off = forward(net_prior, x, use_vsp=False)
base = forward(net_plain, x)
on = forward(net_prior, x, use_vsp=True)
print("prior off == plain build (bit-exact):",
      np.array_equal(off.data, base.data))
print("prior on changes the logits by:", float(np.abs(on.data - base.data).max()))
