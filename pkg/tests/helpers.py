import numpy as np

from famec.game import GameTerms


def random_terms(rng, n, convention="printed", spread=10.0):
    """Game coefficients at link-budget scale, effective gains within ``spread`` of each other."""
    scale = 10 ** rng.uniform(-10.5, -8.5)
    phi = scale * 10 ** rng.uniform(-np.log10(spread), 0, n)
    if convention == "printed":
        cross = np.tile(phi, (n, 1))
    else:
        cross = scale * 10 ** rng.uniform(-2, 0, (n, n))
    np.fill_diagonal(cross, 0.0)
    noise = 4e-12 * rng.uniform(0.2, 1.0, n)
    return GameTerms(phi, cross, noise, np.full(n, 0.05))
