"""Periodic Yee grid for Maxwell's equations.

Staggering (in units of the cell size):

    Ex (i+1/2, j, k)    Bx (i, j+1/2, k+1/2)
    Ey (i, j+1/2, k)    By (i+1/2, j, k+1/2)
    Ez (i, j, k+1/2)    Bz (i+1/2, j+1/2, k)

rho lives on nodes, the current density J is co-located with E so that the
charge-conserving deposition closes the discrete continuity equation.
"""
from dataclasses import dataclass

import numpy as np

E_OFFSETS = np.array([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]])
B_OFFSETS = np.array([[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]])


def _fwd(a, axis, dx):
    return (np.roll(a, -1, axis=axis) - a) / dx


def _bwd(a, axis, dx):
    return (a - np.roll(a, 1, axis=axis)) / dx


@dataclass
class FieldGrid:
    dims: tuple
    dx: float
    E: np.ndarray = None
    B: np.ndarray = None
    rho: np.ndarray = None
    J: np.ndarray = None
    # uniform immobile neutralizing charge density
    rho_background: float = 0.0

    def __post_init__(self):
        self.dims = tuple(int(n) for n in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValueError("grid needs three dimensions of at least 2 cells")
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        shape = self.dims
        if self.E is None:
            self.E = np.zeros((3,) + shape)
        if self.B is None:
            self.B = np.zeros((3,) + shape)
        if self.rho is None:
            self.rho = np.zeros(shape)
        if self.J is None:
            self.J = np.zeros((3,) + shape)

    @property
    def lengths(self):
        return np.array(self.dims, dtype=float) * self.dx

    @property
    def cell_volume(self):
        return self.dx**3

    def copy(self):
        return FieldGrid(self.dims, self.dx, self.E.copy(), self.B.copy(),
                         self.rho.copy(), self.J.copy(), self.rho_background)

    # -- discrete operators -------------------------------------------

    def curl_E(self):
        E, d = self.E, self.dx
        return np.stack([
            _fwd(E[2], 1, d) - _fwd(E[1], 2, d),
            _fwd(E[0], 2, d) - _fwd(E[2], 0, d),
            _fwd(E[1], 0, d) - _fwd(E[0], 1, d),
        ])

    def curl_B(self):
        B, d = self.B, self.dx
        return np.stack([
            _bwd(B[2], 1, d) - _bwd(B[1], 2, d),
            _bwd(B[0], 2, d) - _bwd(B[2], 0, d),
            _bwd(B[1], 0, d) - _bwd(B[0], 1, d),
        ])

    def div_E(self):
        """Divergence of E at the nodes."""
        return sum(_bwd(self.E[c], c, self.dx) for c in range(3))

    def div_B(self):
        """Divergence of B at the cell centres."""
        return sum(_fwd(self.B[c], c, self.dx) for c in range(3))

    def div_J(self):
        return sum(_bwd(self.J[c], c, self.dx) for c in range(3))

    def gauss_residual(self):
        return self.div_E() - (self.rho - self.rho_background)

    # -- energies ------------------------------------------------------

    def field_energy(self):
        return 0.5 * (np.sum(self.E**2) + np.sum(self.B**2)) * self.cell_volume

    def yee_energy(self, dt):
        """Discrete invariant of the vacuum leapfrog, B^{n-1/2}.B^{n+1/2} form."""
        cE = self.curl_E()
        return 0.5 * (np.sum(self.E**2) + np.sum(self.B**2)
                      - 0.25 * dt * dt * np.sum(cE**2)) * self.cell_volume

    # -- initial fields ------------------------------------------------

    def solve_gauss(self):
        """Set E = -grad(phi) with div E = rho - rho_background exactly.

        The Poisson problem is solved in Fourier space with the symbol of the
        discrete Yee Laplacian, so the residual is at round-off.
        """
        net = self.rho - self.rho_background
        k2 = np.zeros(self.dims)
        for axis, n in enumerate(self.dims):
            k = 2.0 * np.pi * np.fft.fftfreq(n)
            s = (2.0 / self.dx * np.sin(k / 2.0)) ** 2
            shape = [1, 1, 1]
            shape[axis] = n
            k2 = k2 + s.reshape(shape)
        rhat = np.fft.fftn(net)
        k2[0, 0, 0] = 1.0
        phat = rhat / k2
        phat[0, 0, 0] = 0.0
        phi = np.real(np.fft.ifftn(phat))
        self.E = np.stack([-_fwd(phi, c, self.dx) for c in range(3)])


def step_maxwell(grid, dt):
    """Leapfrog: half B step, full E step with the current, half B step."""
    grid.B -= 0.5 * dt * grid.curl_E()
    grid.E += dt * (grid.curl_B() - grid.J)
    grid.B -= 0.5 * dt * grid.curl_E()
    return grid


def interpolate_staggered(arr, offset, dx, pos):
    """Trilinear (CIC) interpolation of a periodic staggered component.

    arr has shape (nx, ny, nz) and sample (i, j, k) sits at (idx + offset) * dx.
    pos is (..., 3) in box coordinates.
    """
    dims = arr.shape
    xi = np.asarray(pos, dtype=float) / dx - offset
    base = np.floor(xi)
    frac = xi - base
    base = base.astype(np.int64)
    out = np.zeros(xi.shape[:-1])
    for a in (0, 1):
        wa = frac[..., 0] if a else 1.0 - frac[..., 0]
        ia = np.mod(base[..., 0] + a, dims[0])
        for b in (0, 1):
            wb = frac[..., 1] if b else 1.0 - frac[..., 1]
            ib = np.mod(base[..., 1] + b, dims[1])
            for c in (0, 1):
                wc = frac[..., 2] if c else 1.0 - frac[..., 2]
                ic = np.mod(base[..., 2] + c, dims[2])
                out += wa * wb * wc * arr[ia, ib, ic]
    return out


def interpolate_fields(E, B, dx, pos):
    """E and B at arbitrary positions, each component from its own stagger."""
    pos = np.asarray(pos, dtype=float)
    Ev = np.stack([interpolate_staggered(E[c], E_OFFSETS[c], dx, pos) for c in range(3)], axis=-1)
    Bv = np.stack([interpolate_staggered(B[c], B_OFFSETS[c], dx, pos) for c in range(3)], axis=-1)
    return Ev, Bv
