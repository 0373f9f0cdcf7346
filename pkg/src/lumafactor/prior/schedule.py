import numpy as np


class NoiseSchedule:
    """Variance-preserving cosine schedule on continuous t in [0, 1]."""

    def alpha(self, t):
        return np.cos(0.5 * np.pi * np.asarray(t, dtype=np.float64))

    def sigma(self, t):
        return np.sin(0.5 * np.pi * np.asarray(t, dtype=np.float64))

    def __call__(self, t):
        return self.alpha(t), self.sigma(t)


COSINE = NoiseSchedule()


def add_noise(z, t, eps, schedule=COSINE):
    """z_t = alpha(t) z + sigma(t) eps."""
    a, s = schedule(t)
    return a * z + s * eps


def v_target(z, t, eps, schedule=COSINE):
    """v_t = alpha(t) eps - sigma(t) z."""
    a, s = schedule(t)
    return a * eps - s * z


def predict_x0(z_t, v, t, schedule=COSINE):
    a, s = schedule(t)
    return a * z_t - s * v


def predict_eps(z_t, v, t, schedule=COSINE):
    a, s = schedule(t)
    return s * z_t + a * v
