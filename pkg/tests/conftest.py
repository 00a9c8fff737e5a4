import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def fd_derivative(values, axis, n):
    """Fourth-order central difference on the periodic grid (oracle path)."""
    h = 2.0 * np.pi / n
    return (
        -np.roll(values, -2, axis=axis)
        + 8.0 * np.roll(values, -1, axis=axis)
        - 8.0 * np.roll(values, 1, axis=axis)
        + np.roll(values, 2, axis=axis)
    ) / (12.0 * h)


def field_on_mesh(basis, coeffs, n):
    """Synthesize a coefficient vector on an n^d mesh, shape (d, n, ..., n)."""
    from levyfluid.basis import mode_values, uniform_grid

    pts, _ = uniform_grid(basis.dim, n)
    vals = np.einsum("m,mag->ag", coeffs, mode_values(basis, pts))
    return vals.reshape((basis.dim,) + (n,) * basis.dim)


def quadrature_forms(basis, coeffs, n):
    """Grid-oracle values of the L2, gradient, strain and strain-gradient
    forms of one field, using finite differences for every derivative."""
    d = basis.dim
    u = field_on_mesh(basis, coeffs, n)
    w = (2.0 * np.pi / n) ** d
    grad = np.stack([np.stack([fd_derivative(u[a], j, n) for j in range(d)]) for a in range(d)])
    strain = 0.5 * (grad + grad.transpose(1, 0, *range(2, 2 + d)))
    dstrain = np.stack(
        [fd_derivative(strain[a, b], l, n) for a in range(d) for b in range(d) for l in range(d)]
    )
    return {
        "l2_sq": w * float(np.sum(u * u)),
        "grad_sq": w * float(np.sum(grad * grad)),
        "strain_sq": w * float(np.sum(strain * strain)),
        "a_form": w * float(np.sum(dstrain * dstrain)),
    }
