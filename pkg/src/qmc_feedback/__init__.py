"""Parameter-averaged Riccati feedback for uncertain parabolic LQ tracking.

Subpackages/modules: ``spatial_model`` (discretized operator family),
``riccati`` (differential Riccati and offset solves, feedback assembly),
``lq_oracle`` (all-at-once discrete optimality system), ``qmc`` (lattice and
polynomial-lattice constructions), ``averaging`` (parameter averaging and
error studies), ``closed_loop`` (simulation and error propagation), ``cli``.
"""

__version__ = "0.1.0"
