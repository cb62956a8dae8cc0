"""Information gained by monitoring the quantum-jump trajectories of a decohering probe."""
__version__ = "0.1.0"

from . import channels, errors, estimate, fisher, mcsim, qecmon, qstate, rng, series  # noqa: E402,F401
from .channels import ChannelSpec, InfoTableRow, JumpTimes, Kind, table1_row  # noqa: E402,F401
from .fisher import FisherBreakdown, ParametrizedState, cfi, qfi_mixed, qfi_pure, qfi_qubit_bloch, sld  # noqa: E402,F401
from .qstate import DensityMatrix, Superoperator, evolve, make_density_matrix  # noqa: E402,F401
