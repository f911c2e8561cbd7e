"""Independent dense operators built from explicit DFT matrices (Kronecker products).

Nothing here calls the package's operator code; it is the brute-force
reference that the matrix-free operators are compared with.
"""
import numpy as np


def dft_derivative(n, L):
    """Matrix of i d/dx on the periodic grid of n points over [-L, L)."""
    j = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    k = (np.pi / L) * np.fft.fftfreq(n, 1.0 / n)
    return F.conj().T @ np.diag(-k) @ F


def covariant(n, L, A):
    """The three matrices i d_j + A_j on the flattened (x, y, z) grid."""
    D = dft_derivative(n, L)
    I = np.eye(n)
    parts = [np.kron(np.kron(D, I), I), np.kron(np.kron(I, D), I), np.kron(np.kron(I, I), D)]
    return [parts[j] + np.diag(np.ravel(A[j])) for j in range(3)]


def H0(n, L, A):
    return sum(Dj @ Dj for Dj in covariant(n, L, A))


def H(n, L, A, V):
    return H0(n, L, A) + np.diag(np.ravel(V))


def K(n, L, A, V, m):
    N = n**3
    M = H(n, L, A, V) + m * m * np.eye(N)
    out = np.zeros((2 * N, 2 * N), dtype=complex)
    out[:N, N:] = 1j * np.eye(N)
    out[N:, :N] = -1j * M
    return out


def fn_hermitian(M, fn):
    lam, U = np.linalg.eigh(0.5 * (M + M.conj().T))
    return (U * fn(lam)) @ U.conj().T
