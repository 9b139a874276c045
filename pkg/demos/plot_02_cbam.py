"""
Channel and spatial attention on a feature map
==============================================

CBAM first reweights channels with a shared bottleneck MLP over average- and
max-pooled descriptors, then reweights positions with a 7x7 convolution over
the channel-pooled map. Rows of the map are process variables, columns are
timesteps.
"""
import numpy as np

from sccam.attention import ChannelAttentionParams, SpatialAttentionParams, cbam_forward
from sccam.tensor import Tensor

rng = np.random.default_rng(1)
C, H, W = 8, 5, 12

#%%
# A feature map with one loud channel and one loud variable row.
f = rng.normal(scale=0.1, size=(C, H, W))
f[3] += 2.0
f[:, 2, :] += 1.5
cp = ChannelAttentionParams.init(C, reduction=2, rng=rng)
sp = SpatialAttentionParams.init(7, rng)
out = cbam_forward(Tensor(f), cp, sp)

#%%
# ``A_C`` has one weight per channel, ``A_S`` one per (variable, time) cell.
# Both lie in (0, 1).
print("channel weights", np.round(out.channel_map.data.ravel(), 3))
print("spatial map row means", np.round(out.spatial_map.data[0].mean(axis=1), 3))

#%%
# The refined map is ``A_S * (A_C * F)``. The weights are untrained here, so
# the row ordering reflects the input magnitudes rather than anything learned.
row_energy = np.abs(out.refined.data).mean(axis=(0, 2))
print("refined |F_S| per variable", np.round(row_energy, 3))

#%%
# A batch works the same way; every sample gets its own maps.
batch = Tensor(np.stack([f, -f]))
print(cbam_forward(batch, cp, sp).spatial_map.shape)
