"""Why a matcher wants pooled context: a walk through pyramid_pool.

The operation takes a feature map of C channels and, for each window size in
a list, max-pools it at stride 1 with the window clipped at the borders, then
stacks the results channel-wise. Every pixel keeps its own descriptor (there
is no downsampling), but the descriptor now also summarizes wider and wider
neighborhoods. The point of this script: inside a weakly textured region two
pixels can carry nearly identical local descriptors yet clearly different
pooled ones, because the pooled slabs see past the flat patch.
"""

import numpy as np

from stereo4p.pyramid import pyramid_pool
from stereo4p.synthetic import textured_image, weaken_texture


def main():
    rng = np.random.default_rng(7)

    feat = rng.standard_normal((6, 8, 3)).astype(np.float32)
    ident = pyramid_pool(feat, [1])
    print("pyramid_pool(feat, [1]) is the identity:",
          np.array_equal(ident, feat))

    stacked = pyramid_pool(feat, [27, 9, 3, 1])
    print(f"sizes [27, 9, 3, 1] turn {feat.shape} into {stacked.shape}: "
          "one slab per size, coarsest context first")
    print("the size-1 slab is the original map:",
          np.array_equal(stacked[:, :, 9:12], feat))

    # A 64x64 image with its texture flattened inside a 31x31 square.
    img = textured_image(rng, 64, 64)
    img = weaken_texture(img, (16, 16, 47, 47), 0.02).astype(np.float32)

    # Two pixels deep inside the flat square, 12 columns apart. Their 11x11
    # surroundings are almost equal, the classic aperture problem.
    a = (31, 26)
    b = (31, 38)

    def local_window(y, x, r):
        return img[y - r: y + r + 1, x - r: x + r + 1]

    gap_local = np.abs(local_window(*a, 5) - local_window(*b, 5)).mean()
    print(f"\nmean |difference| of the two 11x11 windows: {gap_local:.5f} "
          "(nearly indistinguishable)")

    pooled = pyramid_pool(img[:, :, None], [27, 9, 3, 1])
    desc_a = pooled[a]
    desc_b = pooled[b]
    for slab, size in enumerate([27, 9, 3, 1]):
        gap = abs(float(desc_a[slab]) - float(desc_b[slab]))
        print(f"pooled descriptor gap at window {size:2d}: {gap:.5f}")
    print("only the 27px window reaches beyond the flat square, so it is the "
          "slab that makes the two pixels distinguishable, at full resolution")


if __name__ == "__main__":
    main()
