"""Lipschitz-Killing curvature regression for random field thresholds.

Typical use::

    from lkcr import load_bundle, fit_pipeline
    result = fit_pipeline(load_bundle("fields.lkcb"))
    print(result.threshold)
"""

from .bundle_io import dump_csv_2d, load_bundle, load_csv_2d, save_bundle
from .covariance import CovMethod, estimate
from .domain import DomainKind, FieldBundle, GridDomain, normalize
from .errors import ComputeError, InputError, LkcError
from .excursion import Connectivity, EcProfile, ec_profile, euler_characteristic, excursion_mask
from .gkf import GAUSSIAN, LkcVector, RhoFamily, chi_squared, expected_ec, rho, tail_probability, threshold, truth_lkcs
from .regression import PipelineOptions, Spacing, design_levels, fit, fit_pipeline
from .simulation import GrfSpec, empirical_threshold, fit_convergence, simulate

__version__ = "0.1.0"
