"""Spectral metrics on the disk, isotopies and PSC concordance certificates."""

from .errors import DiskPSCError
from .mesh import DiskMesh, generate_disk_mesh
from .metric import ConformalMetric, named_metric
from .spectral import Membership, is_in_M, principal_eigenpair
from .isotopy import MetricPath, conformal_segment, prepared_path, spectral_sweep
from .moser import moser_flow, moser_steps
from .concordance import (
    CylinderMetric,
    build_outward_bent,
    build_product_concordance,
    build_warped_concordance,
    build_warped_cylinder,
    verify_concordance,
)

__version__ = "0.1.0"
