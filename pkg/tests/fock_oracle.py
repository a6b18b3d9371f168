"""Dense truncated Fock-space oracle, independent of the Gaussian formalism.

States are built by exponentiating the squeezing / mixing generators on
the vacuum ket; statistics are read off the resulting amplitudes.
"""

import itertools

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from freqsqueeze.gaussian import (
    beamsplitter_greens,
    covariance_from_greens,
    embed,
    identity_greens,
    passive_greens,
    squeezer_greens,
    two_mode_squeezer_greens,
)


class FockSpace:
    def __init__(self, modes, cutoff):
        self.modes = modes
        self.cutoff = cutoff
        d = cutoff + 1
        a1 = sp.diags(np.sqrt(np.arange(1, d)), 1, format="csr")
        eye = sp.identity(d, format="csr")
        self.a = []
        for k in range(modes):
            ops = [eye] * modes
            ops[k] = a1
            op = ops[0]
            for o in ops[1:]:
                op = sp.kron(op, o, format="csr")
            self.a.append(op)
        self.dim = d**modes

    def vacuum(self):
        v = np.zeros(self.dim, dtype=complex)
        v[0] = 1.0
        return v

    def evolve(self, gen, psi):
        return expm_multiply(gen, psi)

    # generators: U = exp(gen), Heisenberg a -> U^dag a U

    def squeeze(self, psi, k, r, phi=0.0):
        # a_k -> cosh r a_k + e^{i phi} sinh r a_k^dag
        zeta = -r * np.exp(1j * phi)
        a = self.a[k]
        gen = 0.5 * (np.conj(zeta) * (a @ a) - zeta * (a.T @ a.T))
        return self.evolve(gen, psi)

    def squeeze2(self, psi, k, l, r, phi=0.0):
        zeta = -r * np.exp(1j * phi)
        a, b = self.a[k], self.a[l]
        gen = np.conj(zeta) * (a @ b) - zeta * (a.T @ b.T)
        return self.evolve(gen, psi)

    def mix(self, psi, k, l, theta):
        # a_k -> cos a_k + sin a_l ; a_l -> -sin a_k + cos a_l
        a, b = self.a[k], self.a[l]
        gen = theta * (a.T @ b - a @ b.T)
        return self.evolve(gen, psi)

    def rotate(self, psi, k, theta):
        # a_k -> e^{i theta} a_k
        n = self.a[k].T @ self.a[k]
        return self.evolve(1j * theta * n, psi)

    def expect(self, op, psi):
        return np.vdot(psi, op @ psi)

    def covariance(self, psi):
        """Covariance matrix in the (a, a^dag) basis read from the ket."""
        M = self.modes
        sig = np.zeros((2 * M, 2 * M), dtype=complex)
        ops = self.a + [a.T.tocsr() for a in self.a]
        daggers = [a.T.tocsr() for a in self.a] + self.a
        for i in range(2 * M):
            for j in range(2 * M):
                x, ydag = ops[i], daggers[j]
                sig[i, j] = 0.5 * (self.expect(x @ ydag, psi) + self.expect(ydag @ x, psi))
        return sig

    def number_probs(self, psi):
        d = self.cutoff + 1
        return (np.abs(psi) ** 2).reshape([d] * self.modes)

    def moment(self, psi, powers):
        probs = self.number_probs(psi)
        d = self.cutoff + 1
        grids = np.meshgrid(*[np.arange(d)] * self.modes, indexing="ij")
        w = np.ones_like(probs)
        for g, p in zip(grids, powers):
            w = w * g.astype(float) ** p
        return float(np.sum(w * probs))


def marginal_probs(probs, keep):
    """Sum out the axes not listed in ``keep``."""
    drop = tuple(k for k in range(probs.ndim) if k not in keep)
    return probs.sum(axis=drop)


def all_patterns(modes, cutoff):
    return itertools.product(range(cutoff + 1), repeat=modes)


def build(ops, M, cutoff):
    """The same circuit as a Gaussian covariance matrix and as a Fock-space ket."""
    fs = FockSpace(M, cutoff)
    psi = fs.vacuum()
    g = identity_greens(M)
    for op in ops:
        kind = op[0]
        if kind == "sq":
            _, k, r, phi = op
            psi = fs.squeeze(psi, k, r, phi)
            g = embed(squeezer_greens(r, phi), [k], M) @ g
        elif kind == "sq2":
            _, k, l, r, phi = op
            psi = fs.squeeze2(psi, k, l, r, phi)
            g = embed(two_mode_squeezer_greens(r, phi), [k, l], M) @ g
        elif kind == "mix":
            _, k, l, theta = op
            psi = fs.mix(psi, k, l, theta)
            g = embed(beamsplitter_greens(theta), [k, l], M) @ g
        elif kind == "rot":
            _, k, theta = op
            psi = fs.rotate(psi, k, theta)
            g = embed(passive_greens([[np.exp(1j * theta)]]), [k], M) @ g
    return covariance_from_greens(g), fs, psi


def random_circuit(rng, M, max_r):
    ops = [("sq", k, rng.uniform(0.1, max_r), rng.uniform(0, 2 * np.pi)) for k in range(M)]
    for _ in range(2):
        for k in range(M - 1):
            ops.append(("mix", k, k + 1, rng.uniform(0, np.pi)))
            ops.append(("rot", k, rng.uniform(0, 2 * np.pi)))
    return ops


def pgf(sigma, z):
    """E[z^N] = det(I + (1 - z)(sigma - I/2))^(-1/2) for the total photon number N."""
    M = sigma.M
    return float(np.real(np.linalg.det(np.eye(2 * M) + (1 - z) * (sigma.data - np.eye(2 * M) / 2))) ** -0.5)


def chernoff_tail(sigma, K):
    """Upper bound on P(N > K) from the generating function, minimised over z > 1."""
    M = sigma.M
    lam = np.linalg.eigvalsh(sigma.data - np.eye(2 * M) / 2)
    zmax = 1 + 1 / lam.max() if lam.max() > 0 else 10.0
    zs = 1 + (zmax - 1) * np.linspace(0.01, 0.99, 400)
    return min(pgf(sigma, z) / z ** (K + 1) for z in zs)
