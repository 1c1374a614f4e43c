"""BINN: session (SBL) and preference (PBL) behavior networks fused into a
predicted next-item vector, trained against frozen item embeddings.

Positions ``t`` in this module are 1-based, as in the training range
``t = ts + 1 .. |S_u|``: predicting event ``t`` uses events ``1 .. t-1``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .core import Corpus, Interaction, InteractionSequence, SchemaError, VocabularyError
from .embed import EmbeddingSpace, similarity_scores, top_k_indices
from .nn import (
    AdagradState,
    ClstmParams,
    adagrad_update,
    affine_backward,
    clstm_backprop,
    clstm_run,
    dropout,
    load_checkpoint,
    mse_grad,
    save_checkpoint,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BinnConfig:
    ts: int = 10
    preference: tuple[int, ...] = (2, 3, 4)
    num_behavior_types: int = 4
    hidden: int = 100
    dim: int = 64
    dropout: float = 0.1
    learning_rate: float = 0.1
    epochs: int = 10
    pbl_history_cap: int = 100
    seed: int = 0
    clip_norm: float | None = None
    full_peephole: bool = False
    similarity: str = "cosine"

    def __post_init__(self):
        object.__setattr__(self, "preference", tuple(sorted(int(b) for b in self.preference)))
        if self.ts < 1:
            raise ValueError("ts must be >= 1")
        if not self.preference:
            raise ValueError("the preference behavior set must not be empty")
        for b in self.preference:
            if not 1 <= b <= self.num_behavior_types:
                raise SchemaError(f"preference behavior {b} outside [1, {self.num_behavior_types}]")
        if self.hidden < 1 or self.dim < 1 or self.pbl_history_cap < 1:
            raise ValueError("hidden, dim and pbl_history_cap must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def select_sbl(seq: InteractionSequence, t: int, ts: int, allow_short: bool = False) -> list[Interaction]:
    """Events ``i < t`` with ``t - i <= ts``, oldest first."""
    if not 1 <= t <= len(seq) + 1:
        raise ValueError(f"position {t} outside [1, {len(seq) + 1}]")
    if t <= ts and not allow_short:
        raise ValueError(f"position {t} <= ts={ts} is outside the training range")
    return list(seq.events[max(0, t - 1 - ts):t - 1])


def select_pbl(seq: InteractionSequence, t: int, preference, cap: int | None = None) -> list[Interaction]:
    """Preference-type events before ``t``, keeping the most recent ``cap``."""
    if not 1 <= t <= len(seq) + 1:
        raise ValueError(f"position {t} outside [1, {len(seq) + 1}]")
    pref = set(preference)
    out = [e for e in seq.events[:t - 1] if e.behavior in pref]
    if cap is not None:
        out = out[-cap:] if cap > 0 else []
    return out


def _left_padded(index_lists, width):
    idx = np.zeros((len(index_lists), width), dtype=np.int64)
    mask = np.zeros((len(index_lists), width))
    for r, lst in enumerate(index_lists):
        if lst:
            idx[r, width - len(lst):] = lst
            mask[r, width - len(lst):] = 1.0
    return idx, mask


def _right_padded(index_lists, width):
    idx = np.zeros((len(index_lists), width), dtype=np.int64)
    mask = np.zeros((len(index_lists), width))
    for r, lst in enumerate(index_lists):
        idx[r, :len(lst)] = lst
        mask[r, :len(lst)] = 1.0
    return idx, mask


@dataclass
class _PblCache:
    """Preference-branch state for the distinct preference prefixes of one user.

    Prefixes no longer than the cap all start at the first preference event,
    so their forward states come from a single shared run.  Capped windows
    get their own forward rows.  The backward direction depends on where a
    prefix ends and is run once per prefix.
    """
    sizes: np.ndarray
    short: np.ndarray
    shared: object
    capped: object
    backward: object


@dataclass
class _ForwardCache:
    sbl: object
    pbl: _PblCache | None
    group_of: np.ndarray
    z: np.ndarray
    keep_s: np.ndarray | None
    keep_p: np.ndarray | None


class BinnModel:
    """Parameters, optimizer state and the forward/backward passes of BINN.

    The embedding space is read-only: its retrieval vectors provide both the
    network inputs and the regression targets.
    """

    def __init__(self, space: EmbeddingSpace, config: BinnConfig = BinnConfig()):
        if space.dim != config.dim:
            raise ValueError(f"embedding dim {space.dim} != config dim {config.dim}")
        self.space = space
        self.config = config
        init_ss, drop_ss, order_ss = np.random.SeedSequence(config.seed).spawn(3)
        rng = np.random.default_rng(init_ss)
        H, d, nb = config.hidden, config.dim, config.num_behavior_types
        self.sbl = ClstmParams.init(d, nb, H, rng, config.full_peephole)
        self.pbl_fwd = ClstmParams.init(d, nb, H, rng, config.full_peephole)
        self.pbl_bwd = ClstmParams.init(d, nb, H, rng, config.full_peephole)
        limit = np.sqrt(6.0 / (3 * H + d))
        self.fusion_W = rng.uniform(-limit, limit, size=(d, 3 * H))
        self.fusion_b = np.zeros(d)
        self.adagrad = AdagradState(lr=config.learning_rate)
        self.dropout_rng = np.random.default_rng(drop_ss)
        self.order_rng = np.random.default_rng(order_ss)
        self.loss_log: list[float] = []
        self._eye = np.eye(nb)
        self._pref = np.zeros(nb + 1, dtype=bool)
        self._pref[list(config.preference)] = True

    # -- parameters -------------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, p in (("sbl", self.sbl), ("pbl_fwd", self.pbl_fwd), ("pbl_bwd", self.pbl_bwd)):
            for k, v in p.arrays.items():
                out[f"{prefix}.{k}"] = v
        out["fusion.W"] = self.fusion_W
        out["fusion.b"] = self.fusion_b
        return out

    def _set_parameters(self, arrays: dict[str, np.ndarray]):
        for prefix, p in (("sbl", self.sbl), ("pbl_fwd", self.pbl_fwd), ("pbl_bwd", self.pbl_bwd)):
            for k in p.arrays:
                p.arrays[k] = np.array(arrays[f"{prefix}.{k}"], dtype=np.float64)
        self.fusion_W = np.array(arrays["fusion.W"], dtype=np.float64)
        self.fusion_b = np.array(arrays["fusion.b"], dtype=np.float64)

    # -- encoding ---------------------------------------------------------

    def encode(self, seq: InteractionSequence):
        """Item vectors ``(L, d)``, one-hot behaviors ``(L, nb)`` and raw codes."""
        vocab = self.space.vocab
        idx = vocab.indices(seq.item_ids)
        codes = np.array(seq.behaviors, dtype=np.int64)
        nb = self.config.num_behavior_types
        if len(codes) and (codes.min() < 1 or codes.max() > nb):
            raise SchemaError(f"behavior code outside [1, {nb}] in sequence of {seq.user_id!r}")
        return self.space.vectors[idx], self._eye[codes - 1], codes

    # -- forward / backward ----------------------------------------------

    def _forward(self, enc, positions, training: bool):
        vecs, onehot, codes = enc
        cfg = self.config
        ts, H = cfg.ts, cfg.hidden
        positions = np.asarray(positions, dtype=np.int64)
        P = len(positions)

        windows = [list(range(max(0, t - 1 - ts), t - 1)) for t in positions]
        width = max(1, max(len(w) for w in windows))
        idx, mask = _left_padded(windows, width)
        Xs = vecs[idx] * mask[:, :, None]
        Bs = onehot[idx] * mask[:, :, None]
        Hs, sbl_cache = clstm_run(self.sbl, Xs, Bs, mask)
        psi_s = Hs[:, -1]

        pref_pos = np.nonzero(self._pref[codes])[0]
        m_of = np.searchsorted(pref_pos, positions - 1, side="left")
        groups = sorted(set(int(m) for m in m_of if m > 0))
        group_index = {m: g for g, m in enumerate(groups)}
        group_of = np.array([group_index.get(int(m), -1) for m in m_of], dtype=np.int64)
        psi_p = np.zeros((P, 2 * H))
        pbl = None
        if groups:
            pooled, pbl = self._pbl_forward(vecs, onehot, pref_pos, np.array(groups))
            has = group_of >= 0
            psi_p[has] = pooled[group_of[has]]

        psi_s_d, keep_s = dropout(psi_s, cfg.dropout, training, self.dropout_rng)
        psi_p_d, keep_p = dropout(psi_p, cfg.dropout, training, self.dropout_rng)
        z = np.concatenate([psi_s_d, psi_p_d], axis=1)
        pred = z @ self.fusion_W.T + self.fusion_b
        cache = _ForwardCache(sbl_cache, pbl, group_of, z, keep_s, keep_p)
        return pred, cache

    def _backward(self, cache: _ForwardCache, dpred) -> dict[str, np.ndarray]:
        H = self.config.hidden
        dW, db, dz = affine_backward(self.fusion_W, cache.z, dpred)
        dpsi_s = dz[:, :H]
        dpsi_p = dz[:, H:]
        if cache.keep_s is not None:
            dpsi_s = dpsi_s * cache.keep_s
            dpsi_p = dpsi_p * cache.keep_p
        grads = {}
        dHs = np.zeros(cache.sbl.h_prev.shape)
        dHs[:, -1] = dpsi_s
        g_sbl, _ = clstm_backprop(cache.sbl, dHs)
        if cache.pbl is not None:
            dpooled = np.zeros((len(cache.pbl.sizes), 2 * H))
            has = cache.group_of >= 0
            np.add.at(dpooled, cache.group_of[has], dpsi_p[has])
            g_fwd, g_bwd = self._pbl_backward(cache.pbl, dpooled)
        else:
            g_fwd, g_bwd = self.pbl_fwd.zeros_like(), self.pbl_bwd.zeros_like()
        for prefix, g in (("sbl", g_sbl), ("pbl_fwd", g_fwd), ("pbl_bwd", g_bwd)):
            for k, v in g.arrays.items():
                grads[f"{prefix}.{k}"] = v
        grads["fusion.W"] = dW
        grads["fusion.b"] = db
        return grads

    def _pbl_forward(self, vecs, onehot, pref_pos, groups):
        """Mean Bi-CLSTM state over the preference events of every prefix size in ``groups``."""
        H, cap = self.config.hidden, self.config.pbl_history_cap
        G = len(groups)
        sizes = np.minimum(groups, cap)
        short = groups <= cap
        fwd = np.zeros((G, H))
        shared = capped = None
        if short.any():
            span = pref_pos[:int(groups[short].max())]
            Hf, shared = clstm_run(self.pbl_fwd, vecs[span][None], onehot[span][None])
            running = np.cumsum(Hf[0], axis=0)
            fwd[short] = running[groups[short] - 1] / groups[short][:, None]
        if (~short).any():
            starts = groups[~short] - cap
            idx = pref_pos[starts[:, None] + np.arange(cap)]
            Hf, capped = clstm_run(self.pbl_fwd, vecs[idx], onehot[idx])
            fwd[~short] = Hf.mean(axis=1)
        lists = [pref_pos[m - n:m][::-1] for m, n in zip(groups, sizes)]
        idx, mask = _right_padded(lists, int(sizes.max()))
        Hb, backward = clstm_run(self.pbl_bwd, vecs[idx] * mask[:, :, None], onehot[idx] * mask[:, :, None], mask)
        bwd = (Hb * mask[:, :, None]).sum(axis=1) / sizes[:, None]
        return np.concatenate([fwd, bwd], axis=1), _PblCache(sizes, short, shared, capped, backward)

    def _pbl_backward(self, pc: _PblCache, dpooled):
        H = self.config.hidden
        dF, dB = dpooled[:, :H], dpooled[:, H:]
        g_fwd = self.pbl_fwd.zeros_like()
        if pc.shared is not None:
            T = pc.shared.h_prev.shape[1]
            per_size = np.zeros((T, H))
            sizes = pc.sizes[pc.short]
            per_size[sizes - 1] = dF[pc.short] / sizes[:, None]
            dHf = np.cumsum(per_size[::-1], axis=0)[::-1]
            g, _ = clstm_backprop(pc.shared, dHf[None])
            _accumulate(g_fwd, g)
        if pc.capped is not None:
            cap = pc.capped.h_prev.shape[1]
            dHf = np.repeat((dF[~pc.short] / cap)[:, None, :], cap, axis=1)
            g, _ = clstm_backprop(pc.capped, dHf)
            _accumulate(g_fwd, g)
        mask = pc.backward.mask
        dHb = mask[:, :, None] * (dB / pc.sizes[:, None])[:, None, :]
        g_bwd, _ = clstm_backprop(pc.backward, dHb)
        return g_fwd, g_bwd

    def training_positions(self, seq: InteractionSequence) -> np.ndarray:
        return np.arange(self.config.ts + 1, len(seq) + 1)

    def sequence_loss(self, seq: InteractionSequence, training: bool = False, with_grads: bool = False, enc=None):
        """Per-user loss ``sum_t mse(v_hat_t, v_t) / (|S_u| - ts - 1)`` over ``t = ts+1 .. |S_u|``.

        Returns ``None`` for sequences too short to contribute.
        """
        L, ts = len(seq), self.config.ts
        if L <= ts + 1:
            return None
        enc = self.encode(seq) if enc is None else enc
        positions = self.training_positions(seq)
        pred, cache = self._forward(enc, positions, training)
        targets = enc[0][positions - 1]
        norm = L - ts - 1
        per_step = np.mean((pred - targets) ** 2, axis=1)
        loss = float(per_step.sum() / norm)
        if not with_grads:
            return loss
        return loss, self._backward(cache, mse_grad(pred, targets) / norm)

    def loss(self, corpus: Corpus) -> float:
        """Mean per-user loss over contributing users, inference mode."""
        losses = [l for l in (self.sequence_loss(s) for s in corpus) if l is not None]
        if not losses:
            raise TrainingError("no sequence is longer than ts + 1")
        return float(np.mean(losses))

    def forward(self, seq: InteractionSequence, t: int, training: bool = False, allow_short: bool = False):
        """Predicted vector for event ``t`` from events ``1 .. t-1``."""
        if not 1 <= t <= len(seq) + 1:
            raise ValueError(f"position {t} outside [1, {len(seq) + 1}]")
        if t <= self.config.ts and not allow_short:
            raise ValueError(f"position {t} <= ts={self.config.ts}; pass allow_short for cold-start use")
        pred, _ = self._forward(self.encode(seq.prefix(t - 1)), [t], training)
        return pred[0]

    def fuse(self, psi_sbl, psi_pbl):
        return np.concatenate([psi_sbl, psi_pbl]) @ self.fusion_W.T + self.fusion_b

    def representations(self, seq: InteractionSequence, t: int):
        """``(psi_sbl, psi_pbl)`` at position ``t`` without dropout."""
        enc = self.encode(seq.prefix(t - 1))
        _, cache = self._forward(enc, [t], training=False)
        H = self.config.hidden
        return cache.z[0, :H].copy(), cache.z[0, H:].copy()

    # -- training ---------------------------------------------------------

    def train(self, corpus: Corpus, epochs: int | None = None, callback=None) -> list[float]:
        """Adagrad over users, one update per user sequence; returns per-epoch mean losses."""
        epochs = self.config.epochs if epochs is None else epochs
        eligible = [s for s in corpus if len(s) > self.config.ts + 1]
        if not eligible:
            raise TrainingError("no sequence is longer than ts + 1; nothing to train on")
        encodings = [self.encode(s) for s in eligible]
        params = self.parameters()
        for epoch in range(epochs):
            losses = []
            for u in self.order_rng.permutation(len(eligible)):
                loss, grads = self.sequence_loss(eligible[u], training=True, with_grads=True, enc=encodings[u])
                if self.config.clip_norm is not None:
                    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                    if norm > self.config.clip_norm:
                        grads = {k: g * (self.config.clip_norm / norm) for k, g in grads.items()}
                adagrad_update(params, grads, self.adagrad)
                losses.append(loss)
            self.loss_log.append(float(np.mean(losses)))
            log.info("BINN epoch %d: loss %.6f", len(self.loss_log), self.loss_log[-1])
            if callback is not None:
                callback(self, epoch)
        return self.loss_log

    # -- prediction -------------------------------------------------------

    def predict_vectors(self, seq: InteractionSequence, positions) -> np.ndarray:
        """Inference-mode predictions for several positions of one sequence."""
        positions = np.asarray(positions, dtype=np.int64)
        if len(positions) == 0:
            return np.zeros((0, self.config.dim))
        last = int(positions.max())
        pred, _ = self._forward(self.encode(seq.prefix(last - 1)), positions, training=False)
        return pred

    def recommend_positions(self, seq: InteractionSequence, positions, k: int) -> list[list[str]]:
        pred = self.predict_vectors(seq, positions)
        scores = similarity_scores(self.space, pred, self.config.similarity)
        ids = self.space.vocab.ids
        return [[ids[i] for i in row] for row in top_k_indices(scores, k)]

    def predict_next(self, seq: InteractionSequence, k: int, cold_start: bool = False) -> list[tuple[str, float]]:
        """Top-k items for the event following ``seq``.

        Outside cold-start mode the history must reach the training range
        (at least ``ts`` events).
        """
        n = len(self.space.vocab)
        if not 1 <= k <= n:
            raise ValueError(f"k must lie in [1, {n}]")
        t = len(seq) + 1
        if t <= self.config.ts and not cold_start:
            raise ValueError(f"history of {len(seq)} events is shorter than ts={self.config.ts}")
        pred = self.predict_vectors(seq, [t])
        scores = similarity_scores(self.space, pred, self.config.similarity)
        top = top_k_indices(scores, k)[0]
        return [(self.space.vocab.ids[i], float(scores[0, i])) for i in top]

    # -- persistence ------------------------------------------------------

    def save(self, path) -> None:
        arrays = dict(self.parameters())
        for k, v in self.adagrad.accum.items():
            arrays["adagrad." + k] = v
        cfg = asdict(self.config)
        cfg["preference"] = list(cfg["preference"])
        save_checkpoint(path, arrays, {"binn": cfg, "loss_log": self.loss_log,
                                       "embedding_items": len(self.space.vocab)})

    @classmethod
    def load(cls, path, space: EmbeddingSpace) -> "BinnModel":
        arrays, meta = load_checkpoint(path)
        cfg = dict(meta["binn"])
        cfg["preference"] = tuple(cfg["preference"])
        model = cls(space, BinnConfig(**cfg))
        model._set_parameters(arrays)
        model.adagrad.accum = {k[len("adagrad."):]: np.array(v) for k, v in arrays.items() if k.startswith("adagrad.")}
        model.loss_log = list(meta.get("loss_log", []))
        return model


def _accumulate(total: ClstmParams, part: ClstmParams) -> None:
    for k, v in part.arrays.items():
        total.arrays[k] += v


def vocabulary_check(space: EmbeddingSpace, corpus: Corpus) -> None:
    missing = [i for i in corpus.vocab.ids if i not in space.vocab]
    if missing:
        raise VocabularyError(f"{len(missing)} corpus items lack embeddings, e.g. {missing[0]!r}")
