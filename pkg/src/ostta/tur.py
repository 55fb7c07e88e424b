"""Online unknown-rejection engine: per-sample prediction from cycle-
consistent prototype matching, EMA target prototypes, and a memory bank
seeded from the classifier head rows.

The engine never updates model parameters and never compares a score
against a fixed cutoff. State evolves strictly one sample at a time.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import UNKNOWN
from .knn import KnnIndex, build_index, query
from .model import ModelParams, forward, head_logits
from .numeric import l2_normalize
from .trainer import EmbeddingBank

logger = logging.getLogger(__name__)

QUERY_MODES = ("source_centroid", "target_embedding")
COLD_START_MODES = ("seed_on_first_match", "seed_per_class", "copy_source")


@dataclass(frozen=True)
class TurConfig:
    ema_weight: float = 0.3  # weight of the incoming embedding in the EMA
    k: int = 10
    query_vector_mode: str = "source_centroid"
    cold_start_mode: str = "seed_on_first_match"

    def validate(self) -> None:
        if not 0.0 < self.ema_weight < 1.0:
            raise ValueError("ema_weight must be in (0, 1)")
        if self.query_vector_mode not in QUERY_MODES:
            raise ValueError(f"query_vector_mode must be one of {QUERY_MODES}")
        if self.cold_start_mode not in COLD_START_MODES:
            raise ValueError(f"cold_start_mode must be one of {COLD_START_MODES}")


@dataclass
class TurState:
    index: KnnIndex                       # frozen source embeddings
    source_prototypes: np.ndarray         # (num_known, d), frozen
    target_prototypes: dict[int, np.ndarray]  # present classes only
    memory: list[list[np.ndarray]]        # num_known + 1 lists of unit vectors
    followup_prototypes: np.ndarray       # (num_known + 1, d), unit rows
    params: ModelParams                   # read-only; head applied to embeddings
    config: TurConfig
    step_count: int = 0

    @property
    def num_known(self) -> int:
        return self.source_prototypes.shape[0]


@dataclass(frozen=True)
class Prediction:
    label: int  # known index or UNKNOWN
    route: str  # "agreed" or "followup"
    source_match: int
    target_match: int | None
    similarities: dict[str, float] = field(default_factory=dict)


def init_tur(bank: EmbeddingBank, params: ModelParams, config: TurConfig) -> TurState:
    """Fresh state: empty (or source-copied) target prototypes, memory bank
    holding exactly one renormalized head row per class."""
    config.validate()
    if bank.embeddings.shape[1] != params.embed_dim:
        raise ValueError("bank and head embedding dims disagree")
    memory = []
    for k in range(params.num_known + 1):
        row = params.head[k]
        if np.linalg.norm(row) == 0.0:
            raise ValueError(f"head row {k} is zero: cannot seed memory bank")
        memory.append([l2_normalize(row)])
    followup = np.stack([m[0] for m in memory])
    target: dict[int, np.ndarray] = {}
    if config.cold_start_mode == "copy_source":
        target = {k: bank.prototypes[k].copy() for k in range(params.num_known)}
    return TurState(
        index=build_index(bank, k=config.k),
        source_prototypes=bank.prototypes,
        target_prototypes=target,
        memory=memory,
        followup_prototypes=followup,
        params=params,
        config=config,
    )


def match_source(state: TurState, centroid: np.ndarray) -> int:
    """Best source class by cosine against the frozen source prototypes;
    ties go to the lowest index."""
    sims = state.source_prototypes @ centroid
    return int(np.argmax(sims))


def match_target(state: TurState, centroid: np.ndarray) -> int | None:
    """Best class among currently present target prototypes, or None before
    any prototype exists."""
    if not state.target_prototypes:
        return None
    keys = sorted(state.target_prototypes)
    sims = [state.target_prototypes[k] @ centroid for k in keys]
    return keys[int(np.argmax(sims))]


def update_target_prototype(state: TurState, k: int, z_t: np.ndarray) -> None:
    """EMA update (or initial seeding) of target prototype k, renormalized."""
    old = state.target_prototypes.get(k)
    if old is None:
        state.target_prototypes[k] = z_t.copy()
        return
    phi = state.config.ema_weight
    mixed = phi * z_t + (1.0 - phi) * old
    if np.linalg.norm(mixed) == 0.0:
        logger.warning("degenerate EMA for target prototype %d; left unchanged", k)
        return
    state.target_prototypes[k] = l2_normalize(mixed)


def update_memory_bank(state: TurState, z_t: np.ndarray) -> int:
    """Append z_t to the memory list of the head's predicted class and
    refresh that class's follow-up prototype. Returns the chosen class."""
    k = int(np.argmax(head_logits(state.params, z_t)))
    state.memory[k].append(z_t.copy())
    mean = np.mean(state.memory[k], axis=0)
    if np.linalg.norm(mean) > 0.0:
        state.followup_prototypes[k] = l2_normalize(mean)
    else:
        logger.warning("degenerate follow-up prototype for class %d; left unchanged", k)
    return k


def followup_predict(state: TurState, q: np.ndarray) -> int:
    """(num_known + 1)-way argmax over the follow-up prototypes; the last
    index maps to UNKNOWN."""
    sims = state.followup_prototypes @ q
    k = int(np.argmax(sims))
    return UNKNOWN if k == state.num_known else k


def _cold_start_applies(state: TurState, k_src: int, k_tgt: int | None) -> bool:
    """Whether a disagreement is instead treated as provisional agreement
    because the matching prototype has not been seeded yet."""
    mode = state.config.cold_start_mode
    if mode == "seed_on_first_match":
        return k_tgt is None
    if mode == "seed_per_class":
        return k_src not in state.target_prototypes
    return False


def step(state: TurState, x_t: np.ndarray) -> Prediction:
    """Process one test sample: embed, match against both prototype sets,
    take the agreed route on cycle consistency, otherwise fall back to the
    memory-bank prediction. Mutates state in place; never touches params."""
    trace = forward(state.params, x_t)
    z_t = trace.z
    hood = query(state.index, z_t)
    centroid = hood.centroid
    k_src = match_source(state, centroid)
    k_tgt = match_target(state, centroid)
    q = centroid if state.config.query_vector_mode == "source_centroid" else z_t

    sims = {
        "source": float(state.source_prototypes[k_src] @ centroid),
        "neighbor_best": float(hood.similarities[0]),
    }

    if k_tgt is not None and k_tgt == k_src:
        update_target_prototype(state, k_tgt, z_t)
        pred = Prediction(k_tgt, "agreed", k_src, k_tgt, sims)
    elif _cold_start_applies(state, k_src, k_tgt):
        # absence counts as provisional agreement: seed and predict k_src
        update_target_prototype(state, k_src, z_t)
        pred = Prediction(k_src, "agreed", k_src, k_tgt, sims)
    else:
        update_memory_bank(state, z_t)
        pred = Prediction(followup_predict(state, q), "followup", k_src, k_tgt, sims)
    state.step_count += 1
    return pred


def predict_frozen(state: TurState, x: np.ndarray) -> int:
    """Label a point with the current state without mutating it; used for
    decision-grid export after a stream has been processed."""
    trace = forward(state.params, x)
    hood = query(state.index, trace.z)
    k_src = match_source(state, hood.centroid)
    k_tgt = match_target(state, hood.centroid)
    if k_tgt is not None and k_tgt == k_src:
        return k_tgt
    if _cold_start_applies(state, k_src, k_tgt):
        return k_src
    q = hood.centroid if state.config.query_vector_mode == "source_centroid" else trace.z
    return followup_predict(state, q)


def run_stream(state: TurState, stream) -> list[Prediction]:
    """Sequentially adapt over an ordered stream of Samples."""
    return [step(state, s.features) for s in stream]


def save_snapshot(state: TurState, path: str) -> None:
    """Resumable snapshot: prototypes, memory bank, and step counter.
    The frozen bank and model travel in their own files."""
    payload = {
        "step_count": state.step_count,
        "target_prototypes": {
            str(k): v.tolist() for k, v in state.target_prototypes.items()
        },
        "memory": [[v.tolist() for v in m] for m in state.memory],
        "followup_prototypes": state.followup_prototypes.tolist(),
        "config": {
            "ema_weight": state.config.ema_weight,
            "k": state.config.k,
            "query_vector_mode": state.config.query_vector_mode,
            "cold_start_mode": state.config.cold_start_mode,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_snapshot(path: str, bank: EmbeddingBank, params: ModelParams) -> TurState:
    with open(path) as fh:
        payload = json.load(fh)
    config = TurConfig(**payload["config"])
    state = init_tur(bank, params, config)
    state.step_count = payload["step_count"]
    state.target_prototypes = {
        int(k): np.array(v) for k, v in payload["target_prototypes"].items()
    }
    state.memory = [[np.array(v) for v in m] for m in payload["memory"]]
    state.followup_prototypes = np.array(payload["followup_prototypes"])
    return state
