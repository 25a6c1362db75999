"""Numerical rescaled topological entropy of vector fields on model manifolds."""
from .errors import (ConfigError, ConstructionError, DegenerateMeasureError, DomainError,
                     HorizonError, InfeasibleCoverError, InsufficientDataError, IntegrationError,
                     RescalError, SamplingError, SingularBaseError, UnsupportedError)
from .estimators import (EntropyConfig, EntropyEstimate, estimate_entropy, grid_spanning_set,
                         positivity_certificate, separating_count, spanning_count)
from .flows import BUILTIN_FLOWS, builtin, flow_summary, integrate, integrate_many
from .manifolds import FlatTorus2, ManifoldPoint, MappingTorus, Sphere2, distance
from .orbits import check_growth_bound, growth_rate, orbit_census

__version__ = "0.1.0"
