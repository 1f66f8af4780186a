"""Statistical bands shared by the test modules."""
import math


def fano_band(mean, modes, n, k=5.0):
    """k-sigma band half-width for the sample Fano factor of a negative binomial.

    Delta method on var/mean with the fourth central moment of NB.
    """
    p = modes / (modes + mean)
    var = mean / p
    mu3 = var * (2 - p) / p
    kurt_ex = 6 / modes + p * p / (modes * (1 - p)) if p < 1 else 0.0
    mu4 = var * var * (3 + kurt_ex)
    # influence of (s2/m): ((x-m)^2 - s2)/m - s2/m^2 (x-m)
    v = (mu4 - var**2) / mean**2 + var**3 / mean**4 - 2 * var * mu3 / mean**3
    return k * math.sqrt(v / n)
