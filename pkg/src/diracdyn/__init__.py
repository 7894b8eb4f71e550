"""Dirac and metriplectic Dirac brackets, O(K) tridiagonal inversion, and constrained chain dynamics."""

from .brackets import (BracketKind, BracketMatrix, BracketStructure, PhaseFunction,
                       PhasePoint, bracket_matrix, bracket_value, lift_constraint)
from .dirac import (ExtendedBracketTable, dirac_bracket_at, dirac_determinant,
                    dirac_direct, dirac_recursive_skew, dirac_recursive_symmetric)
from .dynamics import (IntegratorSpec, RhsKind, Trajectory, block_constraint_inverse,
                       diagnostics, integrate, rhs)
from .models import (ChainSpec, ClosedFormTables, ConstraintSet, PairPotential,
                     closed_form_tables, constraints, hamiltonian, lagrangian_data)
from .tridiag import SymTridiag, block_diagonalize, det_sequence, inverse_full, one_pair_factors, solve

__version__ = "0.1.0"
