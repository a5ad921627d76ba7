"""Central numerical tolerances.

Every engine reads its defaults from :data:`DEFAULT`; callers may pass a
modified copy (``dataclasses.replace``) to override individual values.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    eig_residual: float = 1e-9
    orthonormality: float = 1e-10
    projection_cut: float = 1e-8
    # kernel detection
    gap_ratio: float = 100.0
    kernel_ceiling: float = 1e-3
    # spectral flow
    endpoint_sigma: float = 1e-6
    overlap: float = 0.75
    max_depth: int = 20
    zero_floor: float = 1e-12
    # assumptions / transforms
    trivialising_sigma: float = 0.1
    kato_rellich: float = 0.5
    block_offdiag: float = 1e-12
    # cylinder-end classification
    transfer_margin: float = 1e-9
    max_h_potential: float = 1.8
    end_margin_factor: float = 12.0
    # graded index
    grading: float = 1e-10
    # parametrix
    residual_support: float = 1e-8


DEFAULT = Tolerances()
