"""Synthetic pre/post-treatment IMU cohorts.

Signal model (all constants are tunable, none are measured):

* walk: vertical acceleration at the gait frequency plus its second
  harmonic, forward/lateral sway, matching gyro rotations, Gaussian noise and
  per-cycle amplitude jitter;
* stairs: the walk pattern at a lower cadence with a larger vertical swing;
* sit: gravity plus a small noise floor.

Treatment with ``effect_size = e`` multiplies noise and jitter by
``1 / (1 + e)`` and raises the cadence by ``cadence_shift * e``.  Pocket
placement rotates the hand-frame signal and adds impact noise.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import ACTIVITIES, PHASES, PLACEMENTS, SensorRecording, format_recording
from .errors import ConfigError

GRAVITY = 9.81


@dataclass(frozen=True)
class PatientProfile:
    patient_id: str
    nrs_pre: int
    nrs_post: int
    effect_size: float = 0.0
    gait_freq_hz: float = 1.8
    noise_sigma: float = 0.35
    seed: int = 0

    def __post_init__(self):
        for v in (self.nrs_pre, self.nrs_post):
            if not 0 <= v <= 10:
                raise ConfigError(f"NRS values must lie in 0..10, got {v}")
        if self.effect_size < 0:
            raise ConfigError("effect_size must be non-negative")
        if self.gait_freq_hz <= 0 or self.noise_sigma <= 0:
            raise ConfigError("gait_freq_hz and noise_sigma must be positive")


@dataclass(frozen=True)
class SignalConstants:
    vertical_amp: float = 2.5        # m/s^2, walk
    forward_amp: float = 1.2
    lateral_amp: float = 0.8
    gyro_amp: float = 0.9            # rad/s
    amp_jitter: float = 0.15         # per-cycle relative amplitude sd
    stairs_cadence: float = 0.72     # stairs frequency / walk frequency
    stairs_vertical: float = 1.35
    cadence_shift: float = 0.18      # relative cadence gain per unit effect
    sit_noise: float = 0.06          # fraction of noise_sigma kept while sitting
    gyro_noise: float = 0.3          # gyro noise relative to accel noise
    pocket_impact: float = 0.5       # extra accel noise in the pocket, x noise_sigma
    patient_amp_sd: float = 0.12     # between-patient amplitude spread


@dataclass
class CohortSpec:
    profiles: list
    activities: tuple = ACTIVITIES
    placements: tuple = PLACEMENTS
    trials_per_condition: int = 2
    trial_duration_s: float = 30.0
    rate_hz: float = 100.0
    constants: SignalConstants = field(default_factory=SignalConstants)

    def __post_init__(self):
        if self.trials_per_condition < 1:
            raise ConfigError("trials_per_condition must be at least 1")
        if self.trial_duration_s <= 5.0:
            raise ConfigError("trial_duration_s must exceed 5 s to survive trimming")
        if self.rate_hz not in (50.0, 100.0):
            raise ConfigError("rate_hz must be 50 or 100")
        ids = [p.patient_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ConfigError("patient ids must be unique")
        for a in self.activities:
            if a not in ACTIVITIES:
                raise ConfigError(f"unknown activity {a!r}")


def default_cohort_spec(seed=42):
    """Eight patients with the NRS pairs of the pilot cohort.

    Effect sizes are chosen so that NRS-improved patients mostly carry a
    real behavioural change, with one (71000) improving on NRS alone.
    Walking cadences stay at or above 1.7 Hz, clear of the fastest stair
    cadence (0.72 * 1.95 Hz); a slower walker is sometimes read as climbing
    stairs before treatment, and a cadence gain then repairs those errors.
    Patient ``i`` gets generator seed ``seed * 1000 + i``.
    """
    rows = [
        ("12345", 5, 1, 2.0, 1.80),
        ("21000", 6, 2, 3.0, 1.70),
        ("31000", 5, 5, 0.0, 1.90),
        ("41000", 7, 4, 2.5, 1.75),
        ("51000", 3, 2, 1.0, 1.85),
        ("61000", 5, 3, 2.0, 1.95),
        ("71000", 2, 0, 0.0, 1.80),
        ("91000", 4, 3, 0.5, 1.72),
    ]
    profiles = [
        PatientProfile(pid, pre, post, effect, freq, 0.35, seed=seed * 1000 + i)
        for i, (pid, pre, post, effect, freq) in enumerate(rows)
    ]
    return CohortSpec(profiles)


# spec files -------------------------------------------------------------------

def load_cohort_spec(path):
    """Read a JSON cohort spec; syntax errors carry the offending line."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict) or "patients" not in raw:
        raise ConfigError(f"{path}: cohort spec needs a 'patients' list")
    try:
        profiles = [PatientProfile(**{**p, "patient_id": str(p["patient_id"])})
                    for p in raw.pop("patients")]
        constants = SignalConstants(**raw.pop("constants", {}))
        for key in ("activities", "placements"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return CohortSpec(profiles, constants=constants, **raw)
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"{path}: invalid cohort spec: {exc}") from exc


def dump_cohort_spec(spec):
    raw = {
        "trials_per_condition": spec.trials_per_condition,
        "trial_duration_s": spec.trial_duration_s,
        "rate_hz": spec.rate_hz,
        "activities": list(spec.activities),
        "placements": list(spec.placements),
        "constants": asdict(spec.constants),
        "patients": [asdict(p) for p in spec.profiles],
    }
    return json.dumps(raw, indent=2) + "\n"


# generation -------------------------------------------------------------------

def _rotation(axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    r = np.eye(3)
    r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
    return r


# fixed hand-to-pocket frame change
POCKET_ROTATION = _rotation(0, math.pi / 2) @ _rotation(2, math.pi / 5)


_STREAMS = ("phase", "amplitude", "accel", "gyro", "impact")


def _recording_rngs(profile, phase, activity, placement, trial):
    """One generator per noise source.

    Separate streams keep each source's draws fixed when the effect size
    changes the cycle count, so effect sweeps use common random numbers.
    """
    key = [profile.seed, PHASES.index(phase), ACTIVITIES.index(activity),
           PLACEMENTS.index(placement), trial]
    children = np.random.SeedSequence(key).spawn(len(_STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(_STREAMS, children)}


def _patient_scale(profile, constants):
    # patient-level traits depend on the patient seed only, not on the phase
    rng = np.random.default_rng(np.random.SeedSequence([profile.seed, 99]))
    return 1.0 + constants.patient_amp_sd * rng.standard_normal()


def _gait(t, freq, vertical, profile_scale, noise, jitter, c, rngs):
    phase0 = rngs["phase"].uniform(0, 2 * math.pi)
    cycles = freq * t + phase0 / (2 * math.pi)
    n_cycles = int(math.ceil(cycles[-1])) + 2
    amp = 1.0 + jitter * rngs["amplitude"].standard_normal(n_cycles)
    env = amp[np.floor(cycles).astype(int)]
    w = 2 * math.pi * cycles
    s = profile_scale
    acc = np.column_stack([
        s * c.forward_amp * env * np.sin(w + math.pi / 2),
        s * c.lateral_amp * env * np.sin(w / 2),
        GRAVITY + s * vertical * env * (np.sin(w) + 0.35 * np.sin(2 * w + 0.4)),
    ])
    gyro = np.column_stack([
        s * c.gyro_amp * env * np.sin(w + 0.3),
        s * 0.6 * c.gyro_amp * env * np.sin(w / 2 + 1.1),
        s * 0.4 * c.gyro_amp * env * np.sin(w + 2.0),
    ])
    acc += noise * rngs["accel"].standard_normal(acc.shape)
    gyro += c.gyro_noise * noise * rngs["gyro"].standard_normal(gyro.shape)
    return acc, gyro


def generate_recording(profile, phase, activity, placement, trial_index,
                       duration_s=30.0, rate_hz=100.0, constants=None):
    """One deterministic synthetic trial for ``profile``."""
    c = constants or SignalConstants()
    rngs = _recording_rngs(profile, phase, activity, placement, trial_index)
    n = int(round(duration_s * rate_hz))
    t = np.arange(n) / rate_hz

    effect = profile.effect_size if phase == "post" else 0.0
    calm = 1.0 / (1.0 + effect)
    noise = profile.noise_sigma * calm
    jitter = c.amp_jitter * calm
    freq = profile.gait_freq_hz * (1.0 + c.cadence_shift * effect)
    scale = _patient_scale(profile, c)

    if activity == "sit":
        acc = np.tile([0.0, 0.0, GRAVITY], (n, 1))
        acc += c.sit_noise * noise * rngs["accel"].standard_normal((n, 3))
        gyro = c.gyro_noise * c.sit_noise * noise * rngs["gyro"].standard_normal((n, 3))
    elif activity == "walk":
        acc, gyro = _gait(t, freq, c.vertical_amp, scale, noise, jitter, c, rngs)
    else:
        acc, gyro = _gait(t, freq * c.stairs_cadence, c.vertical_amp * c.stairs_vertical,
                          scale, noise, jitter, c, rngs)

    if placement == "pant_pocket":
        acc = acc @ POCKET_ROTATION.T
        gyro = gyro @ POCKET_ROTATION.T
        if activity != "sit":
            acc += c.pocket_impact * noise * rngs["impact"].standard_normal(acc.shape)

    return SensorRecording(
        profile.patient_id, phase, activity, placement, rate_hz,
        np.column_stack([acc, gyro]), t, trial_index,
    )


def recording_filename(patient_id, phase, activity, placement, trial):
    return f"{patient_id}_{phase}_{activity}_{placement}_{trial}.csv"


def iter_cohort(spec):
    """Yield ``(filename, recording)`` in a fixed order."""
    for profile in spec.profiles:
        for phase in PHASES:
            for activity in spec.activities:
                for placement in spec.placements:
                    for trial in range(spec.trials_per_condition):
                        rec = generate_recording(profile, phase, activity, placement, trial,
                                                 spec.trial_duration_s, spec.rate_hz,
                                                 spec.constants)
                        yield recording_filename(profile.patient_id, phase, activity,
                                                 placement, trial), rec


def generate_cohort(spec, out):
    """Write every trial CSV plus ``nrs.csv``; return the manifest.

    The manifest is a list of ``(filename, sha256)`` pairs, also written to
    ``manifest.txt``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    for name, rec in iter_cohort(spec):
        payload = format_recording(rec).encode("utf-8")
        (out / name).write_bytes(payload)
        manifest.append((name, hashlib.sha256(payload).hexdigest()))
    nrs = "patient_id,nrs_pre,nrs_post\n" + "".join(
        f"{p.patient_id},{p.nrs_pre},{p.nrs_post}\n" for p in spec.profiles
    )
    (out / "nrs.csv").write_bytes(nrs.encode("utf-8"))
    manifest.append(("nrs.csv", hashlib.sha256(nrs.encode("utf-8")).hexdigest()))
    text = "".join(f"{digest}  {name}\n" for name, digest in manifest)
    (out / "manifest.txt").write_bytes(text.encode("utf-8"))
    return manifest
