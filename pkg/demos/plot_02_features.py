"""
Two convolutional pathways
==========================

The fine-detail pathway sees the full 32x32 image.  The scaled pathway is
1.5x wider and runs at half resolution.  Both end in global average
pooling, and the metadata encoding is appended.
"""
import numpy as np

from spinegrade.data import ImageBuffer, META_LAYOUT
from spinegrade.features import (Pathway, concat_features, fine_detail_config, fit_feature_stats,
                                 apply_feature_norm, pathway_shapes, scaled_config)

fine, scaled = Pathway(fine_detail_config(seed=0)), Pathway(scaled_config(seed=1))
print("fine layers:", [l.out_channels for l in fine.layers], "spatial sizes", fine.check(32, 32))
print("scaled layers:", [l.out_channels for l in scaled.layers], "spatial sizes", scaled.check(32, 32))

# a bright blob and a flat image give visibly different activations
yy, xx = np.mgrid[0:32, 0:32]
blob = ImageBuffer(np.exp(-((xx - 16) ** 2 + (yy - 16) ** 2) / 20.0))
flat = ImageBuffer(np.zeros((32, 32)))
meta = np.zeros(len(META_LAYOUT))
vecs = [concat_features(fine(im), scaled(im), meta) for im in (blob, flat)]
print("combined dimension:", vecs[0].size)
print("blob fine features:", np.round(vecs[0][:6], 4))

# too small an input is caught before any convolution runs
try:
    pathway_shapes(6, 6, fine.layers)
except Exception as exc:
    print("6x6 input:", type(exc).__name__, exc)

stats = fit_feature_stats(vecs + [0.5 * (vecs[0] + vecs[1])])
print("standardised:", np.round(apply_feature_norm(vecs[0], stats)[:4], 3))
