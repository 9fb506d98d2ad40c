"""Small-dimension complex linear algebra for qubit pairs.

Everything here works on dense numpy arrays of shape (2, 2) or (4, 4).
Eigenvalues come from an in-repo cyclic Jacobi solver so that certificate
checks do not depend on a LAPACK build.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Tolerances:
    hermitian: float = 1e-12
    trace: float = 1e-12
    psd: float = 1e-10
    completeness: float = 1e-10


TOL = Tolerances()

I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return M


def hermiticity_defect(M) -> float:
    M = _as_square(M)
    return float(np.max(np.abs(M - M.conj().T))) if M.size else 0.0


def check_hermitian(M, tol: float = TOL.hermitian) -> np.ndarray:
    M = _as_square(M)
    defect = hermiticity_defect(M)
    if defect > tol:
        raise ValueError(f"matrix is not Hermitian (max |M - M^dag| = {defect:.3e})")
    return M


def check_state(rho, tol: float = TOL.psd) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, positive."""
    rho = check_hermitian(rho)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TOL.trace:
        raise ValueError(f"trace is {tr!r}, expected 1")
    lam_min = float(eigvalsh(rho).min())
    if lam_min < -tol:
        raise ValueError(f"state has negative eigenvalue {lam_min:.3e}")
    return rho


# -- eigensolver -----------------------------------------------------------

def eigh(M, tol: float = 1e-14, max_sweeps: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.

    Returns ``(w, V)`` with ascending eigenvalues ``w`` and unitary ``V`` such
    that ``M = V @ diag(w) @ V^dag``.
    """
    A = check_hermitian(M, tol=max(TOL.hermitian, 1e-9)).copy()
    A = 0.5 * (A + A.conj().T)
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    scale = max(float(np.linalg.norm(A)), 1e-300)
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A[offdiag]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = A[p, q]
                mag = abs(b)
                if mag <= 1e-300:
                    continue
                a, d = A[p, p].real, A[q, q].real
                theta = 0.5 * np.arctan2(2.0 * mag, a - d)
                phase = b / mag
                c, s = np.cos(theta), np.sin(theta)
                # columns are the eigenvectors of the 2x2 block [[a, b], [b*, d]]
                G = np.eye(n, dtype=complex)
                G[p, p] = c
                G[q, p] = np.conj(phase) * s
                G[p, q] = -phase * s
                G[q, q] = c
                A = G.conj().T @ A @ G
                A[p, q] = A[q, p] = 0.0
                V = V @ G
    else:
        raise RuntimeError("Jacobi iteration did not converge")
    w = np.diag(A).real.copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def eigvalsh(M) -> np.ndarray:
    return eigh(M)[0]


# -- states ------------------------------------------------------------------

def bb84_state(basis: int, bit: int) -> np.ndarray:
    """Projector onto the BB84 state with the given basis and bit.

    Basis 0 is the X family, (I +/- X)/2; basis 1 the Y family, (I +/- Y)/2.
    Bit 0 picks the + sign.
    """
    if basis not in (0, 1) or bit not in (0, 1):
        raise ValueError(f"basis and bit must be 0 or 1, got ({basis}, {bit})")
    pauli = PAULI_X if basis == 0 else PAULI_Y
    sign = 1.0 if bit == 0 else -1.0
    return 0.5 * (I2 + sign * pauli)


def bb84_vector(basis: int, bit: int) -> np.ndarray:
    """Polarization amplitude (H, V) of the same state, (|H> + i^b (-1)^k |V>)/sqrt(2)."""
    if basis not in (0, 1) or bit not in (0, 1):
        raise ValueError(f"basis and bit must be 0 or 1, got ({basis}, {bit})")
    return np.array([1.0, (1j) ** basis * (-1) ** bit], dtype=complex) / np.sqrt(2.0)


def parity_mixtures() -> tuple[np.ndarray, np.ndarray]:
    """The two four-term mixtures over (b, x, y) with x XOR y = 0 and = 1."""
    rho = [np.zeros((4, 4), dtype=complex), np.zeros((4, 4), dtype=complex)]
    for b in (0, 1):
        for x in (0, 1):
            for y in (0, 1):
                rho[x ^ y] += np.kron(bb84_state(b, x), bb84_state(b, y)) / 4.0
    return rho[0], rho[1]


# -- maps and tests ----------------------------------------------------------

def partial_transpose(M) -> np.ndarray:
    """Transpose on the second qubit of a two-qubit operator."""
    M = _as_square(M)
    if M.shape != (4, 4):
        raise ValueError(f"partial_transpose needs a 4x4 matrix, got {M.shape}")
    # M[(a,b),(c,d)] -> M[(a,d),(c,b)]
    return M.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4).copy()


def is_psd(M, tol: float = TOL.psd) -> tuple[bool, float]:
    """Return ``(flag, min_eigenvalue)``; flag is true iff min eigenvalue >= -tol."""
    M = _as_square(M)
    if hermiticity_defect(M) > tol:
        raise ValueError("is_psd needs a Hermitian matrix")
    lam = float(eigvalsh(M)[0])
    return lam >= -tol, lam


def trace_norm(M) -> float:
    M = check_hermitian(M)
    return float(np.sum(np.abs(eigvalsh(M))))


def bell_projectors() -> dict[str, np.ndarray]:
    """Projectors onto the four Bell states in the (H, V) x (H, V) basis."""
    s = 1.0 / np.sqrt(2.0)
    vecs = {
        "psi_plus": np.array([0, s, s, 0], dtype=complex),
        "psi_minus": np.array([0, s, -s, 0], dtype=complex),
        "phi_plus": np.array([s, 0, 0, s], dtype=complex),
        "phi_minus": np.array([s, 0, 0, -s], dtype=complex),
    }
    return {k: np.outer(v, v.conj()) for k, v in vecs.items()}
