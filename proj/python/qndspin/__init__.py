"""Collective-spin QND measurement simulation and analysis.

Configs are plain dicts in the same layout as the CLI's JSON config files;
missing keys take their defaults.
"""

import json as _json

from . import _qndspin
from ._qndspin import (
    ConfigError,
    DataError,
    DomainError,
    Error,
    EstimationError,
    FitError,
    NumericalError,
    SchemaError,
    conditional_covariance,
    fid_signal,
    larmor_rotation_matrix,
    squeezing_parameter,
    tss_variance,
)

__all__ = [
    "ConfigError", "DataError", "DomainError", "Error", "EstimationError", "FitError",
    "NumericalError", "SchemaError", "analyze", "conditional_covariance", "default_config",
    "fid_signal", "fit_fid", "larmor_rotation_matrix", "normalize_config", "predicted_conditional_covariance",
    "pulse_schedule", "readout_noise_sigma", "simulate", "simulate_shots", "snr",
    "squeezing_parameter", "tss_variance",
]


def _text(config):
    return "" if config is None else _json.dumps(config)


def default_config():
    return _json.loads(_qndspin.default_config())


def normalize_config(config):
    """Fully resolved config; raises ConfigError listing every problem."""
    return _json.loads(_qndspin.normalize_config(_text(config)))


def readout_noise_sigma(config=None):
    return _qndspin.readout_noise_sigma(_text(config))


def snr(n_atoms, config=None):
    return _qndspin.snr(n_atoms, _text(config))


def pulse_schedule(config=None):
    """Preparation-frame component read by each of the six pulses, e.g. 'zyxzyx'."""
    return _qndspin.pulse_schedule(_text(config))


def predicted_conditional_covariance(n_atoms, config=None):
    return _qndspin.predicted_conditional_covariance(n_atoms, _text(config))


def simulate(config=None, workers=1):
    """Full campaign as a dict of arrays: cycle_id, seq_index, is_reference, n_atoms, f1, f2.

    f1 and f2 have shape (n_shots, 3) with columns ordered (z, y, x).
    """
    return _qndspin.simulate(_text(config), workers)


def simulate_shots(n_atoms, count, seed=1, config=None):
    """`count` sequences at a fixed atom number."""
    return _qndspin.simulate_shots(n_atoms, count, seed, _text(config))


def analyze(dataset, config=None):
    """Analysis report (the same document as the CLI's report.json)."""
    return _json.loads(_qndspin.analyze(dataset, _text(config)))


def fit_fid(t_z, theta_z, t_y=None, theta_y=None, g1=9.0e-8, gamma=4.374e6):
    """Field estimate from FID traces; times in seconds, fields in mG."""
    return _json.loads(_qndspin.fit_fid(t_z, theta_z, t_y, theta_y, g1, gamma))
