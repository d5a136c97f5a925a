"""Seq2seq GRU autoencoder in plain numpy, with hand-written BPTT.

embedding -> GRU encoder -> final hidden state -> GRU decoder (teacher
forced) -> softmax over the vocabulary.  The reconstruction loss is the
mean per-token cross-entropy in nats.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BOS, PAD, BehaviorDataset, BehaviorSequence, Vocabulary, encode_sequence
from .errors import EmptyDataset, NonFiniteLoss, VocabMismatch

log = logging.getLogger(__name__)

FORMAT_NAME = "behaviorsynth-gru-autoencoder"
FORMAT_VERSION = 1
PARAM_NAMES = ("emb", "enc_wx", "enc_wh", "enc_b", "dec_wx", "dec_wh", "dec_b", "out_w", "out_b")


@dataclass(frozen=True)
class AutoencoderConfig:
    embed_dim: int = 16
    hidden_dim: int = 32
    epochs: int = 30
    learning_rate: float = 2.0
    batch_size: int = 4
    teacher_forcing: bool = True
    seed: int = 0
    clip_norm: float = 1.0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.embed_dim < 1 or self.hidden_dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("dimensions, batch size must be >= 1 and epochs >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")

    def replace(self, **changes) -> "AutoencoderConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def stable_hash(text: str) -> int:
    """Platform-independent 63-bit hash (Python's ``hash`` is salted)."""
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1


def init_params(vocab_size: int, cfg: AutoencoderConfig, rng: np.random.Generator | None = None,
                zero: bool = False) -> dict[str, np.ndarray]:
    e, h, v = cfg.embed_dim, cfg.hidden_dim, vocab_size
    shapes = {
        "emb": (v, e),
        "enc_wx": (e, 3 * h), "enc_wh": (h, 3 * h), "enc_b": (3 * h,),
        "dec_wx": (e, 3 * h), "dec_wh": (h, 3 * h), "dec_b": (3 * h,),
        "out_w": (h, v), "out_b": (v,),
    }
    params = {}
    for name in PARAM_NAMES:
        if zero or name.endswith("_b"):
            params[name] = np.zeros(shapes[name])
        else:
            params[name] = rng.uniform(-cfg.init_scale, cfg.init_scale, size=shapes[name])
    return params


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru_forward(xs, h0, wx, wh, b, mask=None):
    """Run a GRU over ``xs`` (T, B, E).  Returns hidden states (T+1, B, H) and caches.

    Gate layout in the packed weights is [update z | reset r | candidate n]:
        z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br)
        n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * n + z * h
    Where ``mask`` (T, B) is 0 the state is carried through unchanged.
    """
    T, B, _ = xs.shape
    H = h0.shape[1]
    ax = xs @ wx + b  # (T, B, 3H)
    hs = np.empty((T + 1, B, H))
    hs[0] = h0
    zs = np.empty((T, B, H))
    rs = np.empty((T, B, H))
    ns = np.empty((T, B, H))
    whzr, whn = wh[:, : 2 * H], wh[:, 2 * H :]
    for t in range(T):
        h = hs[t]
        zr = _sigmoid(ax[t, :, : 2 * H] + h @ whzr)
        z, r = zr[:, :H], zr[:, H:]
        n = np.tanh(ax[t, :, 2 * H :] + (r * h) @ whn)
        hn = (1.0 - z) * n + z * h
        if mask is not None:
            m = mask[t][:, None]
            hn = m * hn + (1.0 - m) * h
        hs[t + 1] = hn
        zs[t], rs[t], ns[t] = z, r, n
    return hs, (zs, rs, ns)


def _gru_backward(dhs, xs, hs, cache, wx, wh, mask=None, dh_final=None):
    """BPTT.  ``dhs`` (T, B, H) is the loss gradient w.r.t. each emitted state
    hs[1:].  Returns (dxs, dh0, dwx, dwh, db)."""
    zs, rs, ns = cache
    T, B, H = zs.shape
    whzr, whn = wh[:, : 2 * H], wh[:, 2 * H :]
    dwh = np.zeros_like(wh)
    da_all = np.empty((T, B, 3 * H))
    dh = np.zeros((B, H)) if dh_final is None else dh_final.copy()
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        h, z, r, n = hs[t], zs[t], rs[t], ns[t]
        if mask is not None:
            m = mask[t][:, None]
            dh_carry = (1.0 - m) * dh
            dh = m * dh
        else:
            dh_carry = 0.0
        dz = dh * (h - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        drh = dan @ whn.T
        dr = drh * h
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        dazr = np.concatenate([daz, dar], axis=1)
        dh_prev += dazr @ whzr.T
        dwh[:, : 2 * H] += h.T @ dazr
        dwh[:, 2 * H :] += (r * h).T @ dan
        da_all[t, :, : 2 * H] = dazr
        da_all[t, :, 2 * H :] = dan
        dh = dh_prev + dh_carry
    E = xs.shape[2]
    dwx = xs.reshape(-1, E).T @ da_all.reshape(-1, 3 * H)
    db = da_all.sum(axis=(0, 1))
    dxs = da_all @ wx.T
    return dxs, dh, dwx, dwh, db


def _batch_arrays(id_lists: Sequence[Sequence[int]]):
    B = len(id_lists)
    T = max(len(x) for x in id_lists)
    tokens = np.full((B, T), PAD, dtype=np.int64)
    mask = np.zeros((B, T))
    for i, ids in enumerate(id_lists):
        tokens[i, : len(ids)] = ids
        mask[i, : len(ids)] = 1.0
    return tokens, mask


def forward_backward(params: dict[str, np.ndarray], id_lists: Sequence[Sequence[int]],
                     need_grad: bool = True, teacher_forcing: bool = True):
    """Mean token cross-entropy of a batch, per-sequence losses and gradients."""
    tokens, mask = _batch_arrays(id_lists)
    B, T = tokens.shape
    H = params["enc_wh"].shape[0]
    emb = params["emb"]
    tm = mask.T  # (T, B)

    enc_x = emb[tokens.T]  # (T, B, E)
    enc_hs, enc_cache = _gru_forward(enc_x, np.zeros((B, H)), params["enc_wx"], params["enc_wh"], params["enc_b"], tm)
    code = enc_hs[-1]

    dec_in = np.empty((T, B), dtype=np.int64)
    dec_in[0] = BOS
    dec_in[1:] = tokens.T[:-1]
    if teacher_forcing:
        dec_x = emb[dec_in]
        dec_hs, dec_cache = _gru_forward(dec_x, code, params["dec_wx"], params["dec_wh"], params["dec_b"])
        logits = dec_hs[1:] @ params["out_w"] + params["out_b"]  # (T, B, V)
    else:
        dec_x, dec_hs, dec_cache, logits = _free_running(params, code, T, B)
    logits = logits - logits.max(axis=2, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=2, keepdims=True))
    logp = logits - logz
    target = tokens.T
    nll = -np.take_along_axis(logp, target[:, :, None], axis=2)[:, :, 0] * tm  # (T, B)
    lengths = np.maximum(mask.sum(axis=1), 1.0)
    per_seq = nll.sum(axis=0) / lengths
    n_tok = max(tm.sum(), 1.0)
    loss = float(nll.sum() / n_tok)
    if not need_grad:
        return loss, per_seq, None

    grads = {}
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, target[:, :, None],
                      np.take_along_axis(dlogits, target[:, :, None], axis=2) - 1.0, axis=2)
    dlogits *= (tm / n_tok)[:, :, None]
    dec_out = dec_hs[1:]
    grads["out_w"] = dec_out.reshape(-1, H).T @ dlogits.reshape(-1, dlogits.shape[2])
    grads["out_b"] = dlogits.sum(axis=(0, 1))
    ddec = dlogits @ params["out_w"].T
    ddec_x, dcode, grads["dec_wx"], grads["dec_wh"], grads["dec_b"] = _gru_backward(
        ddec, dec_x, dec_hs, dec_cache[:3], params["dec_wx"], params["dec_wh"])
    denc = np.zeros((T, B, H))
    denc_x, _, grads["enc_wx"], grads["enc_wh"], grads["enc_b"] = _gru_backward(
        denc, enc_x, enc_hs, enc_cache, params["enc_wx"], params["enc_wh"], tm, dh_final=dcode)
    demb = np.zeros_like(emb)
    np.add.at(demb, tokens.T.reshape(-1), denc_x.reshape(-1, denc_x.shape[2]))
    dec_tokens = dec_in if teacher_forcing else dec_cache[-1]
    np.add.at(demb, dec_tokens.reshape(-1), ddec_x.reshape(-1, ddec_x.shape[2]))
    grads["emb"] = demb
    return loss, per_seq, grads


def _free_running(params, code, T, B):
    """Decoder fed its own argmax predictions (inputs are not differentiated)."""
    emb = params["emb"]
    H = code.shape[1]
    h = code
    feed = np.full(B, BOS, dtype=np.int64)
    fed = np.empty((T, B), dtype=np.int64)
    for t in range(T):
        fed[t] = feed
        hs, _ = _gru_forward(emb[feed][None], h, params["dec_wx"], params["dec_wh"], params["dec_b"])
        h = hs[-1]
        feed = np.argmax(h @ params["out_w"] + params["out_b"], axis=1)
    dec_x = emb[fed]
    dec_hs, cache = _gru_forward(dec_x, code, params["dec_wx"], params["dec_wh"], params["dec_b"])
    logits = dec_hs[1:] @ params["out_w"] + params["out_b"]
    return dec_x, dec_hs, (*cache, fed), logits


@dataclass(frozen=True)
class TrainedModel:
    params: dict[str, np.ndarray] = field(repr=False)
    vocab_fingerprint: str
    config: AutoencoderConfig
    history: tuple[float, ...] = ()
    trained_on: tuple[str, ...] = field(default=(), repr=False)

    def weight_dump(self) -> bytes:
        """Canonical byte dump of the weights (used for determinism checks)."""
        return b"".join(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes() for k in PARAM_NAMES)

    def save(self, path: str | Path) -> None:
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "vocab_fingerprint": self.vocab_fingerprint,
            "config": self.config.to_dict(),
            "history": list(self.history),
            "trained_on": list(self.trained_on),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TrainedModel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: not a version-{FORMAT_VERSION} {FORMAT_NAME} file")
        params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
        return cls(params, doc["vocab_fingerprint"], AutoencoderConfig(**doc["config"]),
                   tuple(doc["history"]), tuple(doc["trained_on"]))


def train(ds: BehaviorDataset, vocab: Vocabulary, cfg: AutoencoderConfig) -> TrainedModel:
    """Fit an autoencoder with minibatch SGD (fixed learning rate, global-norm clipping).

    Batch order is reshuffled each epoch from the config seed, so a fixed
    (config, dataset) pair always yields the same weights.
    """
    if len(ds) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    data = [encode_sequence(s, vocab) for s in ds.sequences]
    if any(len(x) == 0 for x in data):
        raise EmptyDataset("dataset contains an empty sequence")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(len(vocab), cfg, rng)
    history = []
    n = len(data)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            batch = [data[i] for i in order[start : start + cfg.batch_size]]
            loss, _, grads = forward_backward(params, batch, teacher_forcing=cfg.teacher_forcing)
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, loss)
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            scale = cfg.learning_rate
            if cfg.clip_norm and norm > cfg.clip_norm:
                scale *= cfg.clip_norm / norm
            for k in PARAM_NAMES:
                params[k] -= scale * grads[k]
            total += loss * len(batch)
            count += len(batch)
        mean = total / count
        if not np.isfinite(mean):
            raise NonFiniteLoss(epoch, mean)
        history.append(mean)
        log.debug("epoch %d loss %.5f", epoch, mean)
    for v in params.values():
        if not np.all(np.isfinite(v)):
            raise NonFiniteLoss(cfg.epochs, float("nan"))
    return TrainedModel(params, vocab.fingerprint, cfg, tuple(history), tuple(ds.ids))


def _check_vocab(model: TrainedModel, vocab: Vocabulary) -> None:
    if vocab.fingerprint != model.vocab_fingerprint:
        raise VocabMismatch(f"model vocabulary {model.vocab_fingerprint} != {vocab.fingerprint}")


def reconstruction_losses(model: TrainedModel, seqs: Sequence[BehaviorSequence], vocab: Vocabulary,
                          batch_size: int = 256) -> np.ndarray:
    """Teacher-forced mean token cross-entropy for each sequence (nats)."""
    _check_vocab(model, vocab)
    out = np.empty(len(seqs))
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        ids = [encode_sequence(s, vocab) for s in chunk]
        _, per_seq, _ = forward_backward(model.params, ids, need_grad=False)
        out[start : start + len(chunk)] = per_seq
    return out


def reconstruction_loss(model: TrainedModel, seq: BehaviorSequence, vocab: Vocabulary) -> float:
    return float(reconstruction_losses(model, [seq], vocab)[0])


def _toy_batch(vocab_size: int, rng: np.random.Generator, length: int = 8) -> list[list[int]]:
    return [list(rng.integers(3, vocab_size, size=length)) for _ in range(2)]


def gradient_check(cfg: AutoencoderConfig = AutoencoderConfig(), probe_count: int = 50,
                   step: float = 1e-4, vocab_size: int = 23, zero_init: bool = False,
                   seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients
    at ``probe_count`` randomly chosen parameters on a 2-sequence toy batch."""
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    rng = np.random.default_rng(seed)
    params = init_params(vocab_size, cfg, rng, zero=zero_init)
    batch = _toy_batch(vocab_size, rng)
    tf = cfg.teacher_forcing
    _, _, grads = forward_backward(params, batch, teacher_forcing=tf)
    sizes = np.array([params[k].size for k in PARAM_NAMES])
    worst = 0.0
    for _ in range(probe_count):
        which = PARAM_NAMES[int(rng.choice(len(PARAM_NAMES), p=sizes / sizes.sum()))]
        flat = params[which].reshape(-1)
        i = int(rng.integers(flat.size))
        old = flat[i]
        flat[i] = old + step
        lp, _, _ = forward_backward(params, batch, need_grad=False, teacher_forcing=tf)
        flat[i] = old - step
        lm, _, _ = forward_backward(params, batch, need_grad=False, teacher_forcing=tf)
        flat[i] = old
        numeric = (lp - lm) / (2 * step)
        analytic = float(grads[which].reshape(-1)[i])
        if not (np.isfinite(numeric) and np.isfinite(analytic)):
            return float("inf")
        denom = max(abs(numeric) + abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst
