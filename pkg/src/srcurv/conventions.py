"""Sign and slot conventions, fixed once against the normal-frame oracle.

Each constant below was chosen by running the independent Jacobi-curve oracle
(:mod:`srcurv.grassmann`) on calibration models and keeping the only choice for
which the closed-form curvature agrees with it.  ``tests/test_conventions.py``
re-runs the calibration so a change here cannot go unnoticed.

* Twisted form: ``sigma(xi, eta) = xi_q . eta_p - xi_p . eta_q - Omega(xi_q, eta_q)``.
  Its Hamiltonian vector field is ``qdot = g^{-1} p``,
  ``pdot = -dH/dq + Omega qdot``.  Integrating the unreduced Heisenberg flow
  reproduces this reduced flow exactly, so the magnetic sign is not free.
* ``J = -g^{-1} Omega`` so that ``g(J v, w) = Omega(v, w)``; the covariant
  equation reads ``nabla_qdot qdot = -J qdot - grad W``.
* Curvature tensor: ``R = -R_std`` so ``g(R(u, v) u, v) = K |u ^ v|^2``.
* Velocity-form orientation: ``G(t) = sym(Z^T Sigma Z')`` is ``+I`` at ``t = 0``
  for a g-orthonormal vertical frame; the curvature operator is extracted as
  ``R = F^T Sigma F'`` (flat -> 0, hyperbolic plane -> -1).
"""

# Which argument of the bilinear expression nabla J^c(a, b) is the direction of
# differentiation.  "first": (nabla_a J)(b); "second": (nabla_b J)(a).
# Calibration outcome: with "second" the warped model agrees with the oracle to
# ~2e-7; "first" is off by O(1) (relative error ~8).
NABLA_J_DIRECTION = "second"

# The closed-form curvature uses the fibre norm |p^h|^2 of the actual state in
# the coefficients 3/(8(c0+W)) and 3/(2(c0+W)), i.e. c0+W is read as |p^h|^2/2.
# With H = 1/2|p|^2 + W the on-shell value is |p^h|^2 = 2(c0 - W).
# Calibration outcome: the state norm agrees with the oracle; the literal
# 2(c0 + W) leaves an O(W) mismatch on any model with a potential.
USE_STATE_NORM = True


def nabla_J_args(a, b):
    """Return (direction, argument) for the bilinear expression nabla J^c(a, b)."""
    if NABLA_J_DIRECTION == "first":
        return a, b
    return b, a
