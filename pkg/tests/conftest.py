import math

import numpy as np
import pytest

from stochks import kernels

TWO_PI = 2 * math.pi


def basis_on_grid(K, L, Q):
    """Explicit sin/cos basis (and x-derivatives) sampled on Q equispaced points of one period."""
    x = -L / 2 + L * np.arange(Q) / Q
    k = 2 * math.pi / L * np.arange(1, K + 1)
    kx = np.outer(x, k)
    s = math.sqrt(2 / L)
    phi = np.empty((Q, 2 * K))
    dphi = np.empty((Q, 2 * K))
    phi[:, 0::2] = s * np.sin(kx)
    phi[:, 1::2] = s * np.cos(kx)
    dphi[:, 0::2] = s * k * np.cos(kx)
    dphi[:, 1::2] = -s * k * np.sin(kx)
    return x, phi, dphi


def quad(f, L):
    """Periodic rectangle rule: exact for trigonometric polynomials of degree < Q."""
    return L / f.shape[0] * np.sum(f, axis=0)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return request.param
