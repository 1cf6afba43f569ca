"""Discrete-emission HMMs: scaled forward algorithm, Baum-Welch, MAP classification."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import kernels

BANK_MAGIC = "HUGB 1"


@dataclass
class HmmModel:
    pi: np.ndarray          # (K,)
    A: np.ndarray           # (K, K)
    phi: np.ndarray         # (K, alphabet)
    gesture_class: Optional[str] = None
    dictionary_hash: Optional[str] = None

    @property
    def K(self) -> int:
        return len(self.pi)

    @property
    def alphabet_size(self) -> int:
        return self.phi.shape[1]


def init_model(K: int, alphabet_size: int, rng_seed: int = 0, left_to_right: bool = True) -> HmmModel:
    """Starting point for Baum-Welch.

    Uniform initial distribution; transitions uniform with the self and
    next-state entries tripled (unless ``left_to_right`` is off); emissions
    uniform with seeded noise small enough that every normalized entry
    stays within 1% of 1/alphabet_size.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng([int(rng_seed), K, alphabet_size])
    pi = np.full(K, 1.0 / K)
    A = np.ones((K, K))
    if left_to_right:
        idx = np.arange(K)
        A[idx, idx] *= 3
        A[idx[:-1], idx[:-1] + 1] *= 3
    A /= A.sum(axis=1, keepdims=True)
    phi = 1 + 0.005 * rng.uniform(-1, 1, size=(K, alphabet_size))
    phi /= phi.sum(axis=1, keepdims=True)
    return HmmModel(pi, A, phi)


def _check(model: HmmModel, S) -> np.ndarray:
    obs = np.ascontiguousarray(np.asarray(getattr(S, "symbols", S)), dtype=np.int64)
    if obs.ndim != 1 or len(obs) == 0:
        raise ValueError("empty observation sequence")
    if obs.min() < 0 or obs.max() >= model.alphabet_size:
        raise ValueError(f"symbol out of range for alphabet of {model.alphabet_size}")
    return obs


def forward_loglik(model: HmmModel, S) -> float:
    """log p(S | model), summing over hidden paths with per-step rescaling."""
    obs = _check(model, S)
    _, scale = kernels.forward_scaled(model.pi, model.A, model.phi, obs)
    return float(np.log(scale).sum())


def baum_welch(sequences: Sequence, K: int, iterations: int = 10, smoothing: float = 1e-3,
               rng_seed: int = 0, alphabet_size: Optional[int] = None,
               init: Optional[HmmModel] = None, left_to_right: bool = True):
    """Multi-sequence EM re-estimation.

    Expected counts from all sequences are pooled each iteration; every
    count table gets ``smoothing`` added before normalising, so no
    probability reaches zero. Returns ``(model, trace)`` where ``trace[i]``
    is the total log-likelihood before update ``i`` and the last entry is
    for the returned model. Strictly, smoothed EM only guarantees
    :func:`penalized_objective` never decreases; the plain trace rises the
    same way in practice.
    """
    seqs = [np.ascontiguousarray(np.asarray(getattr(s, "symbols", s)), dtype=np.int64) for s in sequences]
    if not seqs:
        raise ValueError("empty training corpus")
    if K < 1:
        raise ValueError("K must be >= 1")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if any(len(s) == 0 for s in seqs):
        raise ValueError("empty sequence in training corpus")
    A_size = alphabet_size or int(max(s.max() for s in seqs)) + 1
    model = init or init_model(K, A_size, rng_seed, left_to_right)
    pi, A, phi = model.pi.copy(), model.A.copy(), model.phi.copy()
    trace = []
    for _ in range(iterations):
        acc_pi = np.zeros(K)
        acc_A = np.zeros((K, K))
        acc_B = np.zeros((K, A_size))
        ll = 0.0
        for obs in seqs:
            ll += kernels.estep(pi, A, phi, obs, acc_pi, acc_A, acc_B)
        trace.append(ll)
        acc_pi += smoothing
        acc_A += smoothing
        acc_B += smoothing
        pi = acc_pi / acc_pi.sum()
        A = acc_A / acc_A.sum(axis=1, keepdims=True)
        phi = acc_B / acc_B.sum(axis=1, keepdims=True)
    final = HmmModel(pi, A, phi, model.gesture_class, model.dictionary_hash)
    trace.append(sum(forward_loglik(final, s) for s in seqs))
    return final, np.array(trace)


def penalized_objective(model: HmmModel, sequences: Sequence, smoothing: float) -> float:
    """Total log-likelihood plus ``smoothing * sum(log theta)`` over pi, A and phi.

    Additive smoothing turns EM into MAP-EM under a Dirichlet prior; this
    is the quantity each re-estimation step cannot decrease.
    """
    ll = sum(forward_loglik(model, s) for s in sequences)
    return ll + smoothing * (np.log(model.pi).sum() + np.log(model.A).sum() + np.log(model.phi).sum())


def sample(model: HmmModel, length: int, rng) -> np.ndarray:
    """Draw one observation sequence from ``model``."""
    K = model.K
    z = rng.choice(K, p=model.pi)
    out = np.empty(length, dtype=np.int64)
    for t in range(length):
        out[t] = rng.choice(model.alphabet_size, p=model.phi[z])
        z = rng.choice(K, p=model.A[z])
    return out


@dataclass
class ClassifierBank:
    models: list
    priors: np.ndarray
    classes: tuple
    dictionary_hash: Optional[str] = None
    iterations: int = 10
    smoothing: float = 1e-3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=float)
        if len(self.models) != len(self.classes) or len(self.priors) != len(self.classes):
            raise ValueError("one model and one prior per class required")
        if abs(self.priors.sum() - 1) > 1e-9 or np.any(self.priors <= 0):
            raise ValueError("class priors must be positive and sum to 1")
        sizes = {m.alphabet_size for m in self.models}
        if len(sizes) != 1:
            raise ValueError("all models must share one alphabet")

    @property
    def alphabet_size(self) -> int:
        return self.models[0].alphabet_size

    def to_bytes(self) -> bytes:
        head = [BANK_MAGIC,
                f"classes {len(self.classes)}",
                f"alphabet_size {self.alphabet_size}",
                f"dictionary_hash {self.dictionary_hash or '-'}",
                f"iterations {self.iterations}",
                f"smoothing {self.smoothing!r}",
                "priors " + " ".join(repr(float(p)) for p in self.priors)]
        for i, (c, m) in enumerate(zip(self.classes, self.models)):
            head.append(f"model {i} {c} {m.K}")
        for k in sorted(self.meta):
            head.append(f"meta {k} {self.meta[k]}")
        head.append("data")
        blob = b"".join(np.concatenate([m.pi, m.A.ravel(), m.phi.ravel()]).astype("<f8").tobytes()
                        for m in self.models)
        return ("\n".join(head) + "\n").encode() + blob

    @classmethod
    def from_bytes(cls, data: bytes) -> "ClassifierBank":
        lines, pos = [], 0
        while True:
            end = data.index(b"\n", pos)
            line = data[pos:end].decode()
            pos = end + 1
            if line == "data":
                break
            lines.append(line)
        if not lines or lines[0] != BANK_MAGIC:
            raise ValueError("not a hugesture model bank")
        kv = {}
        models_k, classes, meta = [], [], {}
        for line in lines[1:]:
            key, _, rest = line.partition(" ")
            if key == "model":
                _, name, k = rest.split()
                classes.append(name)
                models_k.append(int(k))
            elif key == "meta":
                mk, _, mv = rest.partition(" ")
                meta[mk] = mv
            else:
                kv[key] = rest
        A_size = int(kv["alphabet_size"])
        models = []
        for c, K in zip(classes, models_k):
            n = K + K * K + K * A_size
            v = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
            pos += 8 * n
            h = None if kv["dictionary_hash"] == "-" else kv["dictionary_hash"]
            models.append(HmmModel(v[:K].copy(), v[K:K + K * K].reshape(K, K).copy(),
                                   v[K + K * K:].reshape(K, A_size).copy(), c, h))
        if pos != len(data):
            raise ValueError("trailing bytes in model bank")
        return cls(models, np.array([float(x) for x in kv["priors"].split()]), tuple(classes),
                   None if kv["dictionary_hash"] == "-" else kv["dictionary_hash"],
                   int(kv["iterations"]), float(kv["smoothing"]), meta)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ClassifierBank":
        return cls.from_bytes(Path(path).read_bytes())


def uniform_priors(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def no_finger_weighted_priors(classes: Sequence[str], weight: float = 0.5) -> np.ndarray:
    """p(no-finger) = weight, the rest shared uniformly."""
    n = len(classes)
    pr = np.full(n, (1 - weight) / (n - 1))
    pr[list(classes).index("no-finger")] = weight
    return pr


def train_bank(sequences_by_class: dict, classes: Sequence[str], K: int = 6, iterations: int = 10,
               smoothing: float = 1e-3, rng_seed: int = 0, priors=None,
               alphabet_size: Optional[int] = None, dictionary_hash: Optional[str] = None,
               left_to_right: bool = True, meta: Optional[dict] = None) -> ClassifierBank:
    models = []
    for i, c in enumerate(classes):
        seqs = sequences_by_class.get(c, [])
        if not seqs:
            raise ValueError(f"no training sequences for class {c!r}")
        m, _ = baum_welch(seqs, K, iterations, smoothing, rng_seed + i,
                          alphabet_size=alphabet_size, left_to_right=left_to_right)
        m.gesture_class = c
        m.dictionary_hash = dictionary_hash
        models.append(m)
    pr = uniform_priors(len(classes)) if priors is None else np.asarray(priors, float)
    return ClassifierBank(models, pr, tuple(classes), dictionary_hash, iterations, smoothing,
                          dict(meta or {}))


def log_likelihoods(bank: ClassifierBank, S) -> np.ndarray:
    return np.array([forward_loglik(m, S) for m in bank.models])


def posterior(loglik: np.ndarray, priors: np.ndarray) -> np.ndarray:
    z = np.asarray(loglik, float) + np.log(priors)
    return np.exp(z - logsumexp(z))


def classify(bank: ClassifierBank, S) -> tuple[np.ndarray, int]:
    """Posterior over classes and the MAP class index (lowest index on ties)."""
    h = getattr(S, "dictionary_hash", None)
    if h is not None and bank.dictionary_hash is not None and h != bank.dictionary_hash:
        raise ValueError("dictionary hash mismatch between sequence and model bank")
    post = posterior(log_likelihoods(bank, S), bank.priors)
    return post, int(np.argmax(post))
