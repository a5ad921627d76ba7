"""A kink in the potential carries one unit of index.

S(x) = tanh(x) goes from -1 to +1.  The operator d/dx + S has a single
decaying solution exp(-log cosh x), and its adjoint has none, so the index
is 1.  The eigenvalue of S crosses zero once, upward, so the spectral flow
is 1 as well.
"""

from dslab import Grid1D, build_family, convergence_study, spectral_flow_crossing

fam = build_family({"name": "scalar-profile"}, Grid1D.line(-20, 20, 0.05))

rep = convergence_study(fam)
print("index", rep.index, "ker", rep.dim_ker, "coker", rep.dim_coker)
for size, L, idx, gap in rep.trail:
    print(f"  N={size:5d}  L_cyl={L:5.1f}  index={idx}  gap ratio={gap:.2e}")

flow = spectral_flow_crossing(fam)
print("net flow", flow.net_flow, "partition oracle", flow.oracle_flow)
for c in flow.crossings:
    print(f"  crossing at x={c.location:+.4f}, direction {c.direction:+d}")

# Flipping the kink flips both numbers.
anti = fam.with_matrices(-fam.matrices)
print("anti-kink index", convergence_study(anti).index, "flow", spectral_flow_crossing(anti).net_flow)
