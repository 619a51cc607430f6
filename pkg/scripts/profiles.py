"""
Layer-wise pruning profiles.

A Profile holds one retention fraction beta per prune flag (0.3 keeps 30% of
the channels). Profiles are produced by generators (equally distributed,
ramps, uniform random, or an RL policy), materialized into MaskSets and
scored by the compression they achieve.
"""

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scripts.netzoo import count_params
from utils.exceptions import (
    ArchitectureMismatchError,
    ConfigurationError,
    InfeasibleTargetError,
    MaskLengthError,
)

logger = logging.getLogger(__name__)

BETA_MIN = 0.1

FAMILIES = ("equal", "increasing", "decreasing", "random")
MATERIALIZE_MODES = ("exact", "bernoulli")


def retained_count(beta, length):
    """Channels kept by retention fraction `beta` on a flag of `length` channels"""
    return max(1, int(np.floor(beta * length + 0.5)))


@dataclass(frozen=True)
class Profile:
    """
    Per-flag retention fractions.

    Attributes:
        arch: Architecture id the profile was made for ("cnet-8", "resnet20-4"), or None
        betas: One retention fraction per flag, each in [BETA_MIN, 1]
        provenance: Generator name and parameters, or policy checkpoint reference
        seed: Seed the profile was drawn with
    """

    arch: str
    betas: tuple
    provenance: dict = field(default_factory=dict, hash=False)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for index, beta in enumerate(self.betas):
            if not BETA_MIN <= beta <= 1.0:
                raise ConfigurationError(
                    f"Retention fraction {beta:.4g} of flag {index} is outside "
                    f"[{BETA_MIN}, 1].",
                    field="betas",
                )

    def __len__(self):
        return len(self.betas)

    def for_arch(self, arch):
        return Profile(arch, self.betas, dict(self.provenance), self.seed)

    def check(self, spec):
        """Raise unless this profile fits `spec`."""
        if self.arch and self.arch != spec.arch_id:
            raise ArchitectureMismatchError(spec.arch_id, self.arch)
        if len(self.betas) != len(spec.flags):
            raise ConfigurationError(
                f"Profile has {len(self.betas)} entries but {spec.arch_id} has "
                f"{len(spec.flags)} prune flags.",
                field="betas",
            )

    def to_dict(self):
        return {
            "arch": self.arch,
            "betas": list(self.betas),
            "provenance": self.provenance,
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data.get("arch"), tuple(data["betas"]), dict(data.get("provenance") or {}),
                       int(data.get("seed", 0)))
        except KeyError as e:
            raise ConfigurationError(f"Profile document is missing {e}.", field="profile")

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"Profile file not found: {path}", field="profile")
        return cls.from_dict(json.loads(path.read_text()))


class MaskSet(Mapping):
    """
    Immutable mapping flag id -> Boolean retain vector.
    """

    def __init__(self, masks):
        self._masks = {}
        for flag, vector in masks.items():
            array = np.array(vector, dtype=bool)
            if not array.any():
                raise MaskLengthError(flag, len(array), 0,
                                      message=f"Mask for flag '{flag}' retains no channel.")
            array.flags.writeable = False
            self._masks[flag] = array

    def __getitem__(self, flag):
        return self._masks[flag]

    def __iter__(self):
        return iter(self._masks)

    def __len__(self):
        return len(self._masks)

    @property
    def counts(self):
        return {flag: int(v.sum()) for flag, v in self._masks.items()}

    @classmethod
    def all_ones(cls, spec):
        return cls({f.id: np.ones(f.length, dtype=bool) for f in spec.flags})

    def to_dict(self):
        return {flag: [int(i) for i in np.flatnonzero(v)] for flag, v in self._masks.items()}

    def __repr__(self):
        return f"MaskSet({self.counts})"


def _range_check(value, low, high, name):
    if not low <= value <= high:
        raise ConfigurationError(f"{name} must lie in [{low}, {high}], got {value}.", field=name)


def equally_distributed(flag_count, k, arch=None):
    """Every flag keeps the same fraction `k`."""
    _range_check(k, BETA_MIN, 1.0, "k")
    return Profile(arch, (k,) * flag_count, {"generator": "equal", "k": k})


def ramp(flag_count, slope, direction="increasing", arch=None):
    """
    Linear profile beta_i = slope * i / l for i = 1..l, clamped to [BETA_MIN, 1].

    "increasing" keeps more channels in later layers; "decreasing" is its reversal.
    """
    if not 0 < slope <= 1:
        raise ConfigurationError(f"slope must lie in (0, 1], got {slope}.", field="slope")
    if direction not in ("increasing", "decreasing"):
        raise ConfigurationError(f"Unknown ramp direction '{direction}'.", field="direction")
    betas = [min(1.0, max(BETA_MIN, slope * i / flag_count)) for i in range(1, flag_count + 1)]
    if direction == "decreasing":
        betas.reverse()
    return Profile(arch, tuple(betas), {"generator": direction, "slope": slope})


def random_profile(flag_count, lo=0.3, hi=0.9, seed=0, arch=None):
    """
    I.i.d. uniform retention fractions on [lo, hi].

    Args:
        flag_count: Number of flags
        lo, hi: Bounds with BETA_MIN <= lo < hi <= 1
        seed: Seed (int or sequence of ints)
    """
    if not BETA_MIN <= lo < hi <= 1.0:
        raise ConfigurationError(
            f"Random profile bounds must satisfy {BETA_MIN} <= lo < hi <= 1, got ({lo}, {hi}).",
            field="lo",
        )
    rng = np.random.default_rng(seed)
    betas = rng.uniform(lo, hi, size=flag_count)
    provenance = {"generator": "random", "lo": lo, "hi": hi}
    return Profile(arch, tuple(betas), provenance, _seed_id(seed))


def _seed_id(seed):
    if isinstance(seed, (list, tuple)):
        return int(np.random.SeedSequence(list(seed)).generate_state(1, np.uint64)[0])
    return int(seed)


def _lengths(spec_or_lengths):
    if isinstance(spec_or_lengths, Mapping):
        return dict(spec_or_lengths)
    return spec_or_lengths.flag_lengths


def materialize(profile, spec_or_lengths, rng=None, mode="exact"):
    """
    Draw a MaskSet from a Profile.

    Args:
        profile: Profile (or plain sequence of betas) in flag order
        spec_or_lengths: NetworkSpec or mapping flag id -> channel count
        rng: numpy Generator choosing channel identities
        mode: "exact" keeps retained_count(beta, c) channels chosen uniformly
            without replacement; "bernoulli" keeps each channel with
            probability beta, then forces at least one

    Returns:
        MaskSet
    """
    if mode not in MATERIALIZE_MODES:
        raise ConfigurationError(f"Unknown materialization mode '{mode}'.", field="mode")
    lengths = _lengths(spec_or_lengths)
    betas = profile.betas if isinstance(profile, Profile) else tuple(profile)
    if len(betas) != len(lengths):
        raise ConfigurationError(
            f"Profile has {len(betas)} entries for {len(lengths)} flags.", field="betas"
        )
    rng = rng if rng is not None else np.random.default_rng(0)

    masks = {}
    for (flag, length), beta in zip(lengths.items(), betas):
        mask = np.zeros(length, dtype=bool)
        if mode == "exact":
            keep = retained_count(beta, length)
            mask[rng.choice(length, size=keep, replace=False)] = True
        else:
            mask = rng.random(length) < beta
            if not mask.any():
                mask[rng.integers(length)] = True
        masks[flag] = mask
    return MaskSet(masks)


def expected_counts(profile, spec):
    return {f.id: retained_count(beta, f.length) for f, beta in zip(spec.flags, profile.betas)}


def compression_of(obj, spec):
    """
    Compression factor and pruned fraction of a profile or mask set.

    Args:
        obj: Profile (expected counts round(beta * c)) or mapping of Boolean masks (exact)
        spec: NetworkSpec

    Returns:
        (CF, C) with CF = |w| / |w_p| and C = 1 - |w_p| / |w|
    """
    full = count_params(spec, spec.flag_lengths)
    if isinstance(obj, Profile):
        obj.check(spec)
        pruned = count_params(spec, expected_counts(obj, spec))
    else:
        spec.check_masks(obj)
        pruned = count_params(spec, {fid: int(np.count_nonzero(obj[fid])) for fid in spec.flag_ids})
    return full / pruned, 1.0 - pruned / full


def _family_bounds(family, base):
    if family == "equal":
        return BETA_MIN, 1.0
    if family in ("increasing", "decreasing"):
        return BETA_MIN, 1.0
    # multiplier on the random base: all clamped to BETA_MIN at the low end, all ones at the top
    return BETA_MIN / max(base), 1.0 / min(base)


def family_profile(spec, family, param, seed=0):
    """
    Member of a one-parameter profile family.

    Args:
        spec: NetworkSpec
        family: "equal" (param k), "increasing"/"decreasing" (param slope) or
            "random" (param multiplies a seeded uniform base profile)
        param: Family parameter
        seed: Seed of the random family's base profile
    """
    n = len(spec.flags)
    if family == "equal":
        return equally_distributed(n, float(min(1.0, max(BETA_MIN, param))), spec.arch_id)
    if family in ("increasing", "decreasing"):
        return ramp(n, float(min(1.0, max(BETA_MIN, param))), family, spec.arch_id)
    if family == "random":
        base = random_profile(n, seed=seed).betas
        betas = tuple(min(1.0, max(BETA_MIN, param * b)) for b in base)
        provenance = {"generator": "random-scaled", "multiplier": param, "lo": 0.3, "hi": 0.9}
        return Profile(spec.arch_id, betas, provenance, _seed_id(seed))
    raise ConfigurationError(f"Unknown profile family '{family}'. Use one of: {', '.join(FAMILIES)}.",
                             field="family")


def solve_k_for_cf(spec, family, target, tolerance=0.02, strict=True, seed=0, iterations=60):
    """
    Find the family parameter whose profile reaches compression factor `target`.

    CF decreases monotonically in the parameter, so the solver bisects
    until |CF - target| / target <= tolerance. Integer channel counts make
    CF a step function; when no step lands within tolerance, strict mode
    raises and non-strict mode returns the closest achievable parameter.

    Returns:
        The parameter (k for "equal", slope for ramps, multiplier for "random")

    Raises:
        InfeasibleTargetError: target outside the achievable range, or not hit in strict mode
    """
    if family not in FAMILIES:
        raise ConfigurationError(f"Unknown profile family '{family}'.", field="family")
    base = random_profile(len(spec.flags), seed=seed).betas if family == "random" else None
    low, high = _family_bounds(family, base)

    def cf(param):
        return compression_of(family_profile(spec, family, param, seed), spec)[0]

    def error(value):
        return abs(value - target) / target

    cf_min, cf_max = cf(high), cf(low)
    if target < cf_min * (1 - tolerance) or target > cf_max * (1 + tolerance):
        raise InfeasibleTargetError(target, (cf_min, cf_max))
    if error(cf_min) <= tolerance:
        return high
    if error(cf_max) <= tolerance:
        return low

    best = min(((error(cf_min), high), (error(cf_max), low)))
    for _ in range(iterations):
        mid = 0.5 * (low + high)
        value = cf(mid)
        if error(value) <= tolerance:
            return mid
        best = min(best, (error(value), mid))
        if value > target:
            low = mid
        else:
            high = mid

    if strict:
        raise InfeasibleTargetError(
            target, (cf_min, cf_max),
            message=(
                f"Compression factor {target:.4g} falls between two achievable "
                f"values of the '{family}' family on {spec.arch_id}; the closest is "
                f"{cf(best[1]):.4g}. Integer channel counts cannot hit it within "
                f"{tolerance:.0%}."
            ),
        )
    logger.warning("CF %.4g not reachable within %.0f%% for family %s; using CF %.4g",
                   target, tolerance * 100, family, cf(best[1]))
    return best[1]
