"""Round-level Monte Carlo generator of repetitive readout data.

Each experimental trial is a short Markov chain: a hidden two-valued state is
prepared (possibly wrongly), and every round emits a two-bit outcome drawn
from the state's outcome distribution, then lets the state hop with a small
per-round transition probability.  Detection can optionally be refined with a
photon-count stage (Poisson counts thresholded into bits).

Randomness is counter-based: every trial owns a Philox stream addressed by
``(seed, domain, preparation, trial index)``, so results are bit-identical no
matter how trials are chunked across workers.  Within a trial the draw order
is fixed: one preparation uniform, a block of per-round outcome uniforms, a
block of per-round transition uniforms, then (photon mode only) a block of
bright counts and a block of dark counts.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .estimator import AdaptivePolicy, FixedRoundsPolicy, ReadoutPolicy
from .model import (
    ALL_OUTCOMES,
    DoubleReadoutCounts,
    RoundOutcome,
    Subspace,
)

CONFIG_SCHEMA_VERSION = 1
CHUNK_TRIALS = 16384

# Stream-address domains keep the trial streams of different operations apart.
DOMAIN_FREE = 0
DOMAIN_REFERENCE = 1
DOMAIN_DOUBLE = 2
DOMAIN_SWEEP = 3

_MASK64 = (1 << 64) - 1


class InvalidConfig(ValueError):
    """Raised for malformed or unnormalized generative configurations."""


@dataclass(frozen=True)
class PhotonModel:
    """Poisson photon-count refinement of the two detections per round.

    A detection meant to look bright draws Poisson(lambda_bright) counts,
    a dark one Poisson(lambda_dark); the recorded bit is 1 exactly when the
    count reaches the threshold (``count >= threshold``), so a count of 0 is
    always read as 0.
    """

    lambda_bright: float
    lambda_dark: float
    threshold: int

    def __post_init__(self) -> None:
        if self.lambda_bright < 0 or self.lambda_dark < 0:
            raise InvalidConfig("photon rates must be nonnegative")
        if int(self.threshold) < 1:
            raise InvalidConfig(f"photon threshold must be >= 1, got {self.threshold}")


@dataclass(frozen=True)
class GenerativeConfig:
    """Parameters of the generative round process.

    prep_error[p]
        probability that intending preparation ``p`` actually lands in the
        other state.
    round_outcome_dist
        (2, 4) array, row ``s`` is the outcome distribution over the four
        two-bit outcomes while the hidden state is ``s``.
    transition_prob[s]
        per-round probability of hopping out of state ``s`` (applied after
        the round's outcome is emitted).
    transition_by_outcome
        optional (2, 4) array overriding ``transition_prob`` with an
        outcome-conditioned hop probability ``[s, v]`` (conditioned on the
        latent outcome, before any photon thresholding).
    leak_to_21
        extra error channel for the plus state: with this probability per
        round the latent outcome is replaced by (0,0), emulating population
        stuck in a dark intermediate level.
    """

    prep_error: tuple[float, float]
    round_outcome_dist: np.ndarray
    transition_prob: tuple[float, float]
    seed: int
    photon_model: PhotonModel | None = None
    transition_by_outcome: np.ndarray | None = None
    leak_to_21: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        dist = np.asarray(self.round_outcome_dist, dtype=float)
        if dist.shape != (2, 4):
            raise InvalidConfig(f"round_outcome_dist must have shape (2, 4), got {dist.shape}")
        if np.any(dist < 0) or np.any(dist > 1):
            raise InvalidConfig("outcome probabilities must lie in [0, 1]")
        sums = dist.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-12):
            raise InvalidConfig(f"outcome distributions must sum to 1, got {sums}")
        dist.flags.writeable = False
        object.__setattr__(self, "round_outcome_dist", dist)
        for p in (0, 1):
            if not (0.0 <= self.prep_error[p] <= 1.0):
                raise InvalidConfig(f"prep_error[{p}] out of range")
            if not (0.0 <= self.transition_prob[p] <= 1.0):
                raise InvalidConfig(f"transition_prob[{p}] out of range")
        if self.transition_by_outcome is not None:
            table = np.asarray(self.transition_by_outcome, dtype=float)
            if table.shape != (2, 4):
                raise InvalidConfig(
                    f"transition_by_outcome must have shape (2, 4), got {table.shape}"
                )
            if np.any(table < 0) or np.any(table > 1):
                raise InvalidConfig("transition probabilities must lie in [0, 1]")
            table.flags.writeable = False
            object.__setattr__(self, "transition_by_outcome", table)
        if not (0.0 <= self.leak_to_21 <= 1.0):
            raise InvalidConfig("leak_to_21 must lie in [0, 1]")
        seed = int(self.seed)
        if not (0 <= seed < (1 << 64)):
            raise InvalidConfig("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", seed)

    def effective_outcome_dist(self) -> np.ndarray:
        """Outcome distribution actually sampled, with the leak channel folded in."""
        dist = np.array(self.round_outcome_dist)
        if self.leak_to_21 > 0.0:
            leak = self.leak_to_21
            row = dist[int(Subspace.S_PLUS)]
            mixed = (1.0 - leak) * row
            mixed[int(RoundOutcome.BITS_00)] += leak
            dist[int(Subspace.S_PLUS)] = mixed
        return dist

    def transition_table(self) -> np.ndarray:
        """(2, 4) hop probability indexed ``[state, latent outcome]``."""
        if self.transition_by_outcome is not None:
            return np.array(self.transition_by_outcome)
        return np.repeat(np.asarray(self.transition_prob, dtype=float)[:, None], 4, axis=1)

    def with_seed(self, seed: int) -> "GenerativeConfig":
        return GenerativeConfig(
            prep_error=self.prep_error,
            round_outcome_dist=np.array(self.round_outcome_dist),
            transition_prob=self.transition_prob,
            seed=seed,
            photon_model=self.photon_model,
            transition_by_outcome=None
            if self.transition_by_outcome is None
            else np.array(self.transition_by_outcome),
            leak_to_21=self.leak_to_21,
            name=self.name,
        )

    def to_mapping(self) -> dict:
        """Plain mapping mirroring the config file schema (used for manifests)."""
        out: dict = {
            "schema": CONFIG_SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "prep_error": {"plus": self.prep_error[0], "minus": self.prep_error[1]},
            "round_outcomes": {
                s.label: {
                    str(v): float(self.round_outcome_dist[int(s), int(v)]) for v in ALL_OUTCOMES
                }
                for s in Subspace
            },
            "transition": {
                "plus": self.transition_prob[0],
                "minus": self.transition_prob[1],
            },
        }
        if self.leak_to_21:
            out["leak_to_21"] = self.leak_to_21
        if self.photon_model is not None:
            out["photon_model"] = {
                "lambda_bright": self.photon_model.lambda_bright,
                "lambda_dark": self.photon_model.lambda_dark,
                "threshold": self.photon_model.threshold,
            }
        if self.transition_by_outcome is not None:
            out["transition_by_outcome"] = {
                s.label: {
                    str(v): float(self.transition_by_outcome[int(s), int(v)])
                    for v in ALL_OUTCOMES
                }
                for s in Subspace
            }
        return out

    @classmethod
    def from_mapping(cls, data: dict, name: str = "") -> "GenerativeConfig":
        try:
            schema = int(data["schema"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConfig("config must declare an integer 'schema' key") from exc
        if schema != CONFIG_SCHEMA_VERSION:
            raise InvalidConfig(f"unsupported config schema {schema}")

        def subspace_map(section: dict, field: str) -> tuple[float, float]:
            try:
                return (float(section["plus"]), float(section["minus"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidConfig(f"{field} must map 'plus' and 'minus' to numbers") from exc

        def outcome_rows(section: dict, field: str) -> np.ndarray:
            rows = np.zeros((2, 4))
            for s in Subspace:
                try:
                    row = section[s.label]
                    for v in ALL_OUTCOMES:
                        rows[int(s), int(v)] = float(row[str(v)])
                except (KeyError, TypeError, ValueError) as exc:
                    raise InvalidConfig(
                        f"{field}.{s.label} must map outcome strings '00'..'11' to numbers"
                    ) from exc
            return rows

        try:
            prep = subspace_map(data["prep_error"], "prep_error")
            dist = outcome_rows(data["round_outcomes"], "round_outcomes")
            trans = subspace_map(data["transition"], "transition")
            seed = int(data.get("seed", 0))
        except KeyError as exc:
            raise InvalidConfig(f"config missing required section: {exc}") from exc
        photon = None
        if "photon_model" in data and data["photon_model"] is not None:
            pm = data["photon_model"]
            try:
                photon = PhotonModel(
                    lambda_bright=float(pm["lambda_bright"]),
                    lambda_dark=float(pm["lambda_dark"]),
                    threshold=int(pm["threshold"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise InvalidConfig("photon_model needs lambda_bright, lambda_dark, threshold") from exc
        by_outcome = None
        if "transition_by_outcome" in data and data["transition_by_outcome"] is not None:
            by_outcome = outcome_rows(data["transition_by_outcome"], "transition_by_outcome")
        return cls(
            prep_error=prep,
            round_outcome_dist=dist,
            transition_prob=trans,
            seed=seed,
            photon_model=photon,
            transition_by_outcome=by_outcome,
            leak_to_21=float(data.get("leak_to_21", 0.0)),
            name=str(data.get("name", name)),
        )

    @classmethod
    def from_yaml(cls, path: str | Path) -> "GenerativeConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"could not parse config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidConfig(f"config file {path} must contain a mapping")
        return cls.from_mapping(data, name=path.stem)


def builtin_profiles() -> list[str]:
    """Names of the calibration profiles shipped with the package."""
    profile_dir = Path(__file__).parent / "profiles"
    return sorted(p.stem for p in profile_dir.glob("*.yaml"))


def load_config(name_or_path: str | Path) -> GenerativeConfig:
    """Load a config from a file path or a built-in profile name (e.g. ``45GHz``)."""
    path = Path(name_or_path)
    if path.is_file():
        return GenerativeConfig.from_yaml(path)
    builtin = Path(__file__).parent / "profiles" / f"{name_or_path}.yaml"
    if builtin.is_file():
        return GenerativeConfig.from_yaml(builtin)
    raise InvalidConfig(
        f"config {name_or_path!r} is neither a file nor a built-in profile "
        f"(available: {', '.join(builtin_profiles())})"
    )


# -- trial streams -------------------------------------------------------------


def stream_address(domain: int, prep: int, index: int) -> int:
    """Unique stream id for one trial; stable under any batching of trials."""
    return (int(domain) << 96) | (int(prep) << 64) | int(index)


def _trial_generator(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=int(stream) << 64))


@dataclass(frozen=True)
class TrialRecord:
    """One simulated trial, including the hidden truth for testing.

    ``hidden_trajectory`` has one entry per round boundary
    (``len(outcomes) + 1`` states); ``photon_counts`` is present only in
    photon mode and is always consistent with ``outcomes`` under the
    configured threshold.
    """

    prep: Subspace
    hidden_trajectory: tuple[Subspace, ...]
    outcomes: tuple[RoundOutcome, ...]
    photon_counts: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if len(self.hidden_trajectory) != len(self.outcomes) + 1:
            raise ValueError("trajectory must have one more entry than outcomes")
        if self.photon_counts is not None and len(self.photon_counts) != len(self.outcomes):
            raise ValueError("photon counts must align with outcomes")

    def to_json_dict(self) -> dict:
        out = {
            "prep": self.prep.label,
            "outcomes": [str(v) for v in self.outcomes],
            "hidden": [int(s) for s in self.hidden_trajectory],
        }
        if self.photon_counts is not None:
            out["photons"] = [list(pair) for pair in self.photon_counts]
        return out


def write_trials_jsonl(records: Iterable[TrialRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json_dict()) + "\n")


# -- core engine ---------------------------------------------------------------


class _Engine:
    """Vectorized trial evolution shared by all simulation entry points."""

    def __init__(self, config: GenerativeConfig):
        self.config = config
        dist = config.effective_outcome_dist()
        self.cumdist = np.cumsum(dist, axis=1)
        self.cumdist[:, -1] = 1.0
        self.transition = config.transition_table()
        self.photon = config.photon_model

    def draw(self, prep: int, streams: Sequence[int], n_rounds: int):
        """Fill per-trial uniform (and photon) blocks in the documented order."""
        count = len(streams)
        u_prep = np.empty(count)
        u_out = np.empty((count, n_rounds))
        u_tr = np.empty((count, n_rounds))
        bright = dark = None
        if self.photon is not None:
            bright = np.empty((count, 2 * n_rounds), dtype=np.int64)
            dark = np.empty((count, 2 * n_rounds), dtype=np.int64)
        for i, stream in enumerate(streams):
            rng = _trial_generator(self.config.seed, stream)
            u_prep[i] = rng.random()
            u_out[i] = rng.random(n_rounds)
            u_tr[i] = rng.random(n_rounds)
            if self.photon is not None:
                bright[i] = rng.poisson(self.photon.lambda_bright, 2 * n_rounds)
                dark[i] = rng.poisson(self.photon.lambda_dark, 2 * n_rounds)
        return u_prep, u_out, u_tr, bright, dark

    def evolve(self, prep: int, u_prep, u_out, u_tr, bright, dark, exact_prep: bool):
        """Run the chain; returns (recorded outcomes, trajectory) matrices."""
        count, n_rounds = u_out.shape
        if exact_prep:
            state = np.full(count, prep, dtype=np.int8)
        else:
            flipped = u_prep < self.config.prep_error[prep]
            state = np.where(flipped, 1 - prep, prep).astype(np.int8)
        trajectory = np.empty((count, n_rounds + 1), dtype=np.int8)
        trajectory[:, 0] = state
        outcomes = np.empty((count, n_rounds), dtype=np.int8)
        cum0, cum1 = self.cumdist[0], self.cumdist[1]
        for j in range(n_rounds):
            u = u_out[:, j]
            v0 = np.searchsorted(cum0, u, side="right")
            v1 = np.searchsorted(cum1, u, side="right")
            latent = np.where(state == 0, v0, v1).astype(np.int8)
            if self.photon is not None:
                thr = self.photon.threshold
                bit1 = (latent >> 1) & 1
                bit2 = latent & 1
                count1 = np.where(bit1 == 1, bright[:, 2 * j], dark[:, 2 * j])
                count2 = np.where(bit2 == 1, bright[:, 2 * j + 1], dark[:, 2 * j + 1])
                recorded = (2 * (count1 >= thr) + (count2 >= thr)).astype(np.int8)
            else:
                recorded = latent
            outcomes[:, j] = recorded
            hop_prob = self.transition[state, latent]
            hops = u_tr[:, j] < hop_prob
            state = np.where(hops, 1 - state, state).astype(np.int8)
            trajectory[:, j + 1] = state
        return outcomes, trajectory


def simulate_rounds(
    config: GenerativeConfig, prep: Subspace | int, n_rounds: int, stream: int = 0
) -> TrialRecord:
    """Simulate one trial of ``n_rounds`` repetitions on its own RNG stream."""
    if n_rounds < 0:
        raise ValueError(f"n_rounds must be nonnegative, got {n_rounds}")
    prep = int(prep)
    engine = _Engine(config)
    u_prep, u_out, u_tr, bright, dark = engine.draw(prep, [stream], n_rounds)
    outcomes, trajectory = engine.evolve(prep, u_prep, u_out, u_tr, bright, dark, False)
    photons = None
    if config.photon_model is not None:
        photons = _recorded_photons(engine, prep, u_prep, u_out, u_tr, bright, dark)
    return TrialRecord(
        prep=Subspace(prep),
        hidden_trajectory=tuple(Subspace(int(s)) for s in trajectory[0]),
        outcomes=tuple(RoundOutcome(int(v)) for v in outcomes[0]),
        photon_counts=photons,
    )


def _recorded_photons(engine, prep, u_prep, u_out, u_tr, bright, dark):
    """Replay the latent-outcome selection to recover the per-round photon counts."""
    config = engine.config
    n_rounds = u_out.shape[1]
    flipped = u_prep[0] < config.prep_error[prep]
    state = 1 - prep if flipped else prep
    cum = engine.cumdist
    transition = engine.transition
    pairs = []
    for j in range(n_rounds):
        latent = int(np.searchsorted(cum[state], u_out[0, j], side="right"))
        bit1 = (latent >> 1) & 1
        bit2 = latent & 1
        count1 = int(bright[0, 2 * j] if bit1 else dark[0, 2 * j])
        count2 = int(bright[0, 2 * j + 1] if bit2 else dark[0, 2 * j + 1])
        pairs.append((count1, count2))
        if u_tr[0, j] < transition[state, latent]:
            state = 1 - state
    return tuple(pairs)


def _outcome_matrix_chunk(
    config: GenerativeConfig,
    prep: int,
    n_rounds: int,
    domain: int,
    start: int,
    count: int,
    exact_prep: bool,
) -> np.ndarray:
    engine = _Engine(config)
    streams = [stream_address(domain, prep, start + i) for i in range(count)]
    u_prep, u_out, u_tr, bright, dark = engine.draw(prep, streams, n_rounds)
    outcomes, _ = engine.evolve(prep, u_prep, u_out, u_tr, bright, dark, exact_prep)
    return outcomes


def simulate_outcome_matrix(
    config: GenerativeConfig,
    prep: Subspace | int,
    n_trials: int,
    n_rounds: int,
    domain: int = DOMAIN_SWEEP,
    exact_prep: bool = False,
    workers: int = 1,
) -> np.ndarray:
    """(n_trials, n_rounds) recorded-outcome matrix; row i is trial i's stream."""
    prep = int(prep)
    spans = _chunk_spans(n_trials)
    args = [(config, prep, n_rounds, domain, start, count, exact_prep) for start, count in spans]
    parts = _map_chunks(_outcome_matrix_chunk, args, workers)
    if not parts:
        return np.empty((0, n_rounds), dtype=np.int8)
    return np.concatenate(parts, axis=0)


def _chunk_spans(total: int, chunk: int = CHUNK_TRIALS) -> list[tuple[int, int]]:
    spans = []
    start = 0
    while start < total:
        count = min(chunk, total - start)
        spans.append((start, count))
        start += count
    return spans


def _map_chunks(fn, args_list, workers: int):
    if workers <= 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for args in args_list]
        return [f.result() for f in futures]


# -- reference data ------------------------------------------------------------


def _reference_chunk(config: GenerativeConfig, s: int, start: int, count: int) -> np.ndarray:
    engine = _Engine(config)
    streams = [stream_address(DOMAIN_REFERENCE, s, start + i) for i in range(count)]
    u_prep, u_out, u_tr, bright, dark = engine.draw(s, streams, 2)
    outcomes, _ = engine.evolve(s, u_prep, u_out, u_tr, bright, dark, True)
    # Round 1 is the unrecorded settling round; only round 2 is tallied.
    return np.bincount(outcomes[:, 1], minlength=4).astype(np.int64)


def simulate_reference(
    config: GenerativeConfig, trials_per_subspace: int, workers: int = 1
) -> np.ndarray:
    """Reference counts: (4, 2) tallies of one recorded round per known preparation.

    Preparation is exact (reference preparations are assumed known); one
    unrecorded settling round runs first, during which the state may hop, and
    the following round's outcome is tallied.  Columns sum to
    ``trials_per_subspace`` exactly.
    """
    if trials_per_subspace < 1:
        raise InvalidConfig(f"trials_per_subspace must be >= 1, got {trials_per_subspace}")
    counts = np.zeros((4, 2), dtype=np.int64)
    for s in (0, 1):
        args = [(config, s, start, count) for start, count in _chunk_spans(trials_per_subspace)]
        for part in _map_chunks(_reference_chunk, args, workers):
            counts[:, s] += part
    return counts


# -- double readout --------------------------------------------------------------


@dataclass(frozen=True)
class DoubleReadoutResult:
    """Aggregated double-readout run: counts plus policy bookkeeping."""

    counts: DoubleReadoutCounts
    cap_hits: int
    mean_rounds_herald: float
    mean_rounds_test: float


def _stop_indices(llr_cum: np.ndarray, log_t: float, cap: int):
    """First strict threshold crossing per row of a cumulative log-ratio matrix.

    Returns (rounds_used, estimate_bit, capped) arrays.  Rows with no
    crossing use the MAP sign at the cap (ties to the plus state).
    """
    high = llr_cum > log_t
    low = llr_cum < -log_t
    crossed = high | low
    any_cross = crossed.any(axis=1)
    first = np.argmax(crossed, axis=1)
    rounds = np.where(any_cross, first + 1, cap)
    rows = np.arange(llr_cum.shape[0])
    at_stop = llr_cum[rows, rounds - 1]
    estimate = np.where(
        any_cross,
        high[rows, first].astype(np.int8),
        (at_stop > 0.0).astype(np.int8),
    )
    return rounds, estimate, ~any_cross


def _double_chunk(
    config: GenerativeConfig, policy: ReadoutPolicy, prep: int, start: int, count: int
):
    engine = _Engine(config)
    horizon = 2 * policy.max_rounds
    streams = [stream_address(DOMAIN_DOUBLE, prep, start + i) for i in range(count)]
    u_prep, u_out, u_tr, bright, dark = engine.draw(prep, streams, horizon)
    outcomes, _ = engine.evolve(prep, u_prep, u_out, u_tr, bright, dark, False)

    llr = policy.table.log_likelihood_ratios[outcomes]

    if isinstance(policy, FixedRoundsPolicy):
        n = policy.rounds
        cums = np.cumsum(llr, axis=1)
        herald = (cums[:, n - 1] > 0.0).astype(np.int8)
        test = ((cums[:, 2 * n - 1] - cums[:, n - 1]) > 0.0).astype(np.int8)
        rounds1 = np.full(count, n)
        rounds2 = np.full(count, n)
        capped = 0
    elif isinstance(policy, AdaptivePolicy):
        cap = policy.cap
        log_t = math.log(policy.threshold)
        cums1 = np.cumsum(llr[:, :cap], axis=1)
        rounds1, herald, capped1 = _stop_indices(cums1, log_t, cap)
        offsets = rounds1[:, None] + np.arange(cap)[None, :]
        llr2 = np.take_along_axis(llr, offsets, axis=1)
        cums2 = np.cumsum(llr2, axis=1)
        rounds2, test, capped2 = _stop_indices(cums2, log_t, cap)
        capped = int(capped1.sum()) + int(capped2.sum())
    else:
        raise TypeError(f"unsupported policy type: {type(policy).__name__}")

    cell = 2 * test + herald  # (o_prime, o) flattened
    cell_counts = np.bincount(cell, minlength=4).astype(np.int64)
    return cell_counts, capped, int(rounds1.sum()), int(rounds2.sum())


def simulate_double_readout(
    config: GenerativeConfig,
    policy: ReadoutPolicy,
    trials: dict[Subspace | int, int],
    workers: int = 1,
) -> DoubleReadoutResult:
    """Back-to-back readouts without repreparation, tallied as ``n(o', o, p)``.

    The first readout heralds the state; the second tests it on the hidden
    state left behind by the first.  Capped adaptive readouts are recorded
    with the MAP estimate and counted in ``cap_hits`` (herald and test hits
    both count).  Output is bit-identical for any worker count.
    """
    totals = {int(p): int(n) for p, n in trials.items()}
    for p, n in totals.items():
        if p not in (0, 1):
            raise InvalidConfig(f"preparation must be 0 or 1, got {p}")
        if n < 1:
            raise InvalidConfig(f"trial count for preparation {p} must be >= 1, got {n}")
    arr = np.zeros((2, 2, 2), dtype=np.int64)
    cap_hits = 0
    rounds1_sum = 0
    rounds2_sum = 0
    total_trials = 0
    for p, n in sorted(totals.items()):
        args = [(config, policy, p, start, count) for start, count in _chunk_spans(n)]
        for cell_counts, capped, r1, r2 in _map_chunks(_double_chunk, args, workers):
            for o_prime in (0, 1):
                for o in (0, 1):
                    arr[o_prime, o, p] += cell_counts[2 * o_prime + o]
            cap_hits += capped
            rounds1_sum += r1
            rounds2_sum += r2
        total_trials += n
    return DoubleReadoutResult(
        counts=DoubleReadoutCounts(arr),
        cap_hits=cap_hits,
        mean_rounds_herald=rounds1_sum / total_trials,
        mean_rounds_test=rounds2_sum / total_trials,
    )


def reference_counts_csv(counts: np.ndarray, path: str | Path) -> None:
    """Write reference tallies as CSV rows (v, s, count)."""
    import csv as _csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["v", "s", "count"])
        for v in ALL_OUTCOMES:
            for s in Subspace:
                writer.writerow([str(v), s.label, int(counts[int(v), int(s)])])
