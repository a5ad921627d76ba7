"""Cut and paste two families along a shared collar.

Swap the right halves of two families that agree near x = 2.5.  The four
indices satisfy I1 + I2 = I3 + I4 even though the individual values move.
"""

import numpy as np

from dslab import Grid1D, PotentialFamily, build_family, relative_index_values, standard_cover

g = Grid1D.line(-8, 8, 0.1)
kink = build_family({"name": "scalar-profile", "compact": [-2, 2]}, g)

# a potential that is positive everywhere and matches the kink on [3, 4]
flat = np.maximum(np.tanh(g.nodes), np.tanh(2.5))[:, None, None]
other = PotentialFamily(g, flat, *standard_cover(g, (-2, 3)))

collar = (110, 120)
i1, i2, i3, i4 = relative_index_values(kink, other, collar, [(0.2, 2), (0.15, 2), (0.1, 2)])
print(f"I1={i1}  I2={i2}  I3={i3}  I4={i4}")
print("I1 + I2 =", i1 + i2, "  I3 + I4 =", i3 + i4)
