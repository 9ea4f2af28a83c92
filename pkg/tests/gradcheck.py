"""Finite-difference helpers for the test modules."""
from nmp.selfcheck import check_op, max_rel_error, numeric_grad  # noqa: F401
