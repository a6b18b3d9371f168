"""Hafnian by brute-force enumeration of perfect matchings."""


def pairing_oracle(A):
    """Sum over perfect matchings by explicit enumeration."""
    n = A.shape[0]
    if n == 0:
        return 1.0 + 0j
    if n % 2:
        return 0.0 + 0j

    def rec(idx):
        if not idx:
            return 1.0 + 0j
        i, rest = idx[0], idx[1:]
        total = 0.0 + 0j
        for k, j in enumerate(rest):
            total += A[i, j] * rec(rest[:k] + rest[k + 1 :])
        return total

    return rec(tuple(range(n)))


def random_symmetric(n, rng):
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return (B + B.T) / 2
