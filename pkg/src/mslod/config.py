"""Experiment configuration, coefficient generation, and provenance.

Configs are flat TOML files; every key maps 1:1 to a field below and all
defaults are the desk-scale experiment setup (fine exponent 7, 20 strong
samples). Paper-scale runs are reached by overriding fine_exponent and the
sample counts in the file.
"""

import hashlib
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from . import streams
from .errors import ConfigError
from .fem import CoefficientField

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ExperimentConfig:
    fine_exponent: int = 7
    coarse_exponents: list = field(default_factory=lambda: [2, 3, 4, 5])
    epsilon_exponent: int = 6
    contrast_min: float = 0.1
    contrast_max: float = 10.0
    final_time: float = 0.5
    timestep: float = 0.01
    noise_amplitude: float = 1.0
    noise_decay: float = 0.01
    kappa_fraction: float = 1.0 / 16.0
    ell: int = 0                       # 0 means the default rule ell = ceil(log2(1/H))
    gamma: float = 0.01
    delta: float = 1.0
    master_seed: int = 1729
    samples_strong: int = 20
    pilot_samples: int = 5
    weak_noise_amplitude: float = 0.04
    weak_mc_max_exponent: int = 4
    weak_mlmc_max_exponent: int = 5
    noise_pairing: str = "nodal"

    def __post_init__(self):
        n = round(self.final_time / self.timestep)
        if n < 1 or abs(n * self.timestep - self.final_time) > 1e-9 * self.final_time:
            raise ConfigError(f"timestep {self.timestep} does not divide T={self.final_time}")
        if any(e < 1 or e >= self.fine_exponent for e in self.coarse_exponents):
            raise ConfigError("coarse exponents must lie in [1, fine_exponent)")
        if self.epsilon_exponent > self.fine_exponent:
            raise ConfigError("the fine grid must resolve the coefficient grid")
        if not (0.0 < self.contrast_min <= self.contrast_max):
            raise ConfigError("contrast bounds must satisfy 0 < min <= max")
        if self.noise_pairing not in ("nodal", "quadrature"):
            raise ConfigError(f"unknown noise_pairing {self.noise_pairing!r}")
        if self.weak_mc_max_exponent > self.weak_mlmc_max_exponent:
            raise ConfigError("weak MC levels cannot exceed the MLMC levels")
        if self.weak_mlmc_max_exponent >= self.fine_exponent:
            raise ConfigError("weak-study coarse levels must stay below the fine exponent")
        if self.kappa() < 1:
            raise ConfigError("kappa rule yields no noise modes")

    def kappa(self):
        return max(1, round(2 ** self.fine_exponent * self.kappa_fraction))

    def ell_for(self, coarse_exponent):
        """Localization radius: configured override or ceil(log2(1/H))."""
        if self.ell > 0:
            return self.ell
        return int(np.ceil(np.log2(2 ** coarse_exponent)))

    @property
    def steps(self):
        return round(self.final_time / self.timestep)

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**mapping)

    @classmethod
    def from_toml(cls, path):
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        return cls.from_mapping(data)

    def to_toml_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                lines.append(f"{f.name} = {str(v).lower()}")
            elif isinstance(v, (int, np.integer)):
                lines.append(f"{f.name} = {v}")
            elif isinstance(v, float):
                lines.append(f"{f.name} = {v!r}")
            elif isinstance(v, str):
                lines.append(f'{f.name} = "{v}"')
            elif isinstance(v, list):
                lines.append(f"{f.name} = [{', '.join(str(x) for x in v)}]")
            else:
                raise ConfigError(f"unserializable config field {f.name}")
        return "\n".join(lines) + "\n"

    def content_hash(self):
        return hashlib.sha256(self.to_toml_text().encode()).hexdigest()

    def provenance(self):
        from . import __version__

        return f"mslod {__version__} config sha256:{self.content_hash()[:16]} seed {self.master_seed}"


def generate_coefficient(config, coefficient_seed=None):
    """Draw the per-cell log-uniform diffusion grid from the dedicated stream.

    The field is generated once per (seed) and shared by every realization of
    the equation; serialize it next to the study outputs for provenance.
    """
    seed = config.master_seed if coefficient_seed is None else coefficient_seed
    gen = streams.generator(seed, streams.COEFFICIENT)
    n = 2 ** config.epsilon_exponent
    lo, hi = np.log(config.contrast_min), np.log(config.contrast_max)
    values = np.exp(gen.uniform(lo, hi, size=(n, n)))
    # exp/log round-trip can escape the bounds by one ulp
    values = np.clip(values, config.contrast_min, config.contrast_max)
    return CoefficientField(config.epsilon_exponent, values, config.contrast_min, config.contrast_max)
