import numpy as np


class FlatMap:
    """Fixed-domain geometry written out by hand: J = 1, B = A = I, no mesh motion.

    Stands in for the Hanzawa map so a step on the flat channel can be compared
    with the same step assembled from a zero shell displacement.
    """

    is_identity = True
    key = b"flat-reference"

    def __init__(self, domain):
        self.domain = domain
        self.eta = np.zeros(domain.nx)
        self.etadot = np.zeros(domain.nx)

    def coeffs(self, where):
        rows = self.domain.ny + (0 if where in ("center", "uface") else 1)
        one = np.ones((rows, self.domain.nx))
        zero = np.zeros((rows, self.domain.nx))
        return {"J": one, "b": zero, "A11": one, "A12": zero, "A22": one, "w2": zero,
                "Jflux": one, "bflux": zero}

    def area(self):
        return self.domain.area


def sine_shell(domain, amp, k=1, phase=0.0):
    return amp * np.cos(2 * np.pi * k * domain.xc / domain.Lx + phase)
