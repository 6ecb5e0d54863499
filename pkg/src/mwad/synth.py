"""Seeded multivariate sinusoid generator with labeled injected anomalies."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import EventDataset
from .errors import ValidationError

KINDS = ("spike", "mean_shift", "variance_burst")


@dataclass(frozen=True)
class AnomalySpec:
    start: int
    duration: int
    kind: str
    magnitude: float  # in multiples of the noise sigma

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"anomaly kind must be one of {KINDS}, got {self.kind!r}")
        if self.duration < 1:
            raise ValidationError("anomaly duration must be >= 1")
        if not self.magnitude > 0:
            raise ValidationError("anomaly magnitude must be positive")

    @property
    def stop(self):
        return self.start + self.duration


@dataclass(frozen=True)
class SynthConfig:
    n: int = 8
    length: int = 2100
    seed: int = 0
    noise_sigma: float = 0.05
    periods: tuple = (48.0, 130.0, 310.0)
    amplitudes: tuple = (1.0, 0.5, 0.25)
    anomalies: tuple = field(default_factory=tuple)
    step_seconds: int = 60

    def __post_init__(self):
        spans = sorted((a.start, a.stop) for a in self.anomalies)
        for start, stop in spans:
            if start < 0 or stop > self.length:
                raise ValidationError(f"anomaly [{start},{stop}) outside series of length {self.length}")
        for (_, prev_stop), (start, _) in zip(spans, spans[1:]):
            if start < prev_stop:
                raise ValidationError(f"anomaly intervals overlap at row {start}")
        if len(self.periods) != len(self.amplitudes):
            raise ValidationError("periods and amplitudes must have equal length")

    def to_dict(self):
        d = asdict(self)
        d["periods"] = list(self.periods)
        d["amplitudes"] = list(self.amplitudes)
        d["anomalies"] = [asdict(a) for a in self.anomalies]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["anomalies"] = tuple(AnomalySpec(**a) for a in d.get("anomalies", ()))
        for key in ("periods", "amplitudes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def default_config(seed=0):
    """2000 normal + 100 anomalous rows (four 25-row intervals, 6-12 sigma) in the
    last stretch of a 2100-row, 8-feature series, so a 70% time-ordered split
    leaves every anomaly in the test part."""
    anomalies = (
        AnomalySpec(1520, 25, "spike", 12.0),
        AnomalySpec(1660, 25, "mean_shift", 6.0),
        AnomalySpec(1800, 25, "variance_burst", 10.0),
        AnomalySpec(1940, 25, "mean_shift", 8.0),
    )
    return SynthConfig(n=8, length=2100, seed=seed, noise_sigma=0.05, anomalies=anomalies)


def generate(cfg):
    """Build the dataset. Base signal and noise come from one random stream and
    anomaly effects from another, so clean rows do not depend on the anomaly list."""
    base_seq, anomaly_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(base_seq)
    t = np.arange(cfg.length, dtype=np.float64)[:, None]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(len(cfg.periods), cfg.n))
    gains = rng.uniform(0.5, 1.5, size=cfg.n)
    x = np.zeros((cfg.length, cfg.n))
    for c, (period, amp) in enumerate(zip(cfg.periods, cfg.amplitudes)):
        x += amp * np.sin(2.0 * np.pi * t / period + phases[c])
    x *= gains
    x += rng.normal(0.0, cfg.noise_sigma, size=x.shape)

    labels = np.zeros(cfg.length, dtype=np.int64)
    arng = np.random.default_rng(anomaly_seq)
    for spec in cfg.anomalies:
        rows = slice(spec.start, spec.stop)
        size = spec.magnitude * cfg.noise_sigma
        if spec.kind == "spike":
            x[rows] += size
        elif spec.kind == "mean_shift":
            x[rows] += size * arng.choice([-1.0, 1.0], size=cfg.n)
        else:
            x[rows] += arng.normal(0.0, size, size=(spec.duration, cfg.n))
        labels[rows] = 1

    stamps = np.arange(cfg.length, dtype=np.int64) * cfg.step_seconds
    names = tuple(f"f{j}" for j in range(cfg.n))
    return EventDataset(x, labels, stamps, names, f"synth-{cfg.seed}")


def sine_fixture(length=500, n=4, seed=0, noise_sigma=0.02):
    """Anomaly-free smooth fixture used for training sanity checks."""
    return generate(SynthConfig(n=n, length=length, seed=seed, noise_sigma=noise_sigma,
                                periods=(40.0, 95.0), amplitudes=(1.0, 0.4)))
