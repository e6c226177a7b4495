"""Beleidsnetwerken op de autodiff-laag.

PerceptronClassifier: één verborgen laag (SiLU) van features naar klasse-logits.
SequencePolicy: autoregressief model over het doolhof-vocabulaire met een causale
attention-backbone (RMSNorm, SiLU MLP, geleerde absolute posities, gedeelde in/uit embedding)
of een GRU-backbone. Sampling gebruikt een numpy-pad met cache zonder rekengraaf.
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import (
    ParameterVector,
    Tensor,
    concat,
    embedding,
    gather_last,
    log_softmax,
    masked_fill,
    no_grad,
    rms_norm,
    silu,
    softmax,
)
from .autodiff import RMS_EPS, _softmax_array, _stable_sigmoid
from .errors import ConfigError, ShapeError

INIT_STD = 0.02
MASK_VALUE = -1e9


@dataclass
class SampleResult:
    """Gegenereerde tokens per rij en de som van de next-token entropie over de gegenereerde posities."""

    tokens: List[np.ndarray]
    entropy_sum: np.ndarray

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(t) for t in self.tokens], dtype=np.int64)


def _normal(rng: np.random.Generator, shape: Tuple[int, ...], std: float) -> np.ndarray:
    return rng.standard_normal(shape) * std


class PerceptronClassifier:
    """logits = silu(x W1 + b1) W2 + b2."""

    def __init__(self, params: ParameterVector, feature_dim: int, hidden_dim: int, num_classes: int,
                 init_scale: float = 0.01):
        self.params = params
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.num_classes = num_classes
        self.init_scale = init_scale

    @classmethod
    def create(cls, feature_dim: int, hidden_dim: int, num_classes: int, init_scale: float,
               rng: np.random.Generator, seed: int = 0) -> "PerceptronClassifier":
        params = ParameterVector(seed=seed)
        params.add("w1", _normal(rng, (feature_dim, hidden_dim), 1.0 / math.sqrt(feature_dim)))
        params.add("b1", np.zeros(hidden_dim))
        params.add("w2", _normal(rng, (hidden_dim, num_classes), init_scale / math.sqrt(hidden_dim)))
        params.add("b2", np.zeros(num_classes))
        return cls(params, feature_dim, hidden_dim, num_classes, init_scale)

    def architecture(self) -> Dict[str, object]:
        return {
            "kind": "perceptron",
            "feature_dim": self.feature_dim,
            "hidden_dim": self.hidden_dim,
            "num_classes": self.num_classes,
            "init_scale": self.init_scale,
        }

    def logits(self, features: np.ndarray) -> Tensor:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.feature_dim:
            raise ShapeError(f"Features moeten vorm (B, {self.feature_dim}) hebben, kreeg {x.shape}")
        p = self.params
        hidden = silu(Tensor(x) @ p["w1"] + p["b1"])
        return hidden @ p["w2"] + p["b2"]

    def probabilities(self, features: np.ndarray) -> np.ndarray:
        with no_grad():
            return softmax(self.logits(features), axis=-1).data


class SequencePolicy:
    """Autoregressief beleid over een klein vocabulaire."""

    def __init__(self, params: ParameterVector, vocab_size: int, max_len: int, d_model: int,
                 n_heads: int, n_layers: int, backbone: str):
        if backbone not in ("attention", "gru"):
            raise ConfigError(f"Onbekende backbone '{backbone}'")
        if d_model % n_heads:
            raise ConfigError("d_model moet deelbaar zijn door n_heads")
        self.params = params
        self.vocab_size = vocab_size
        self.max_len = max_len
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.backbone = backbone

    @classmethod
    def create(cls, vocab_size: int, max_len: int, d_model: int = 64, n_heads: int = 2,
               n_layers: int = 2, backbone: str = "attention",
               rng: Optional[np.random.Generator] = None, seed: int = 0) -> "SequencePolicy":
        rng = rng if rng is not None else np.random.default_rng(seed)
        params = ParameterVector(seed=seed)
        d = d_model
        params.add("tok_emb", _normal(rng, (vocab_size, d), INIT_STD))
        if backbone == "attention":
            params.add("pos_emb", _normal(rng, (max_len, d), INIT_STD))
            resid_std = INIT_STD / math.sqrt(2 * n_layers)
            for layer in range(n_layers):
                pre = f"layers.{layer}."
                params.add(pre + "norm1", np.ones(d))
                for name in ("wq", "wk", "wv"):
                    params.add(pre + name, _normal(rng, (d, d), INIT_STD))
                params.add(pre + "wo", _normal(rng, (d, d), resid_std))
                params.add(pre + "norm2", np.ones(d))
                params.add(pre + "w_up", _normal(rng, (d, 4 * d), INIT_STD))
                params.add(pre + "w_down", _normal(rng, (4 * d, d), resid_std))
        else:
            for gate in ("z", "r", "h"):
                params.add(f"gru.w_{gate}", _normal(rng, (d, d), 1.0 / math.sqrt(d)))
                params.add(f"gru.u_{gate}", _normal(rng, (d, d), 1.0 / math.sqrt(d)))
                params.add(f"gru.b_{gate}", np.zeros(d))
        params.add("norm_f", np.ones(d))
        return cls(params, vocab_size, max_len, d_model, n_heads, n_layers, backbone)

    def architecture(self) -> Dict[str, object]:
        return {
            "kind": "sequence",
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "backbone": self.backbone,
        }

    # Forward met rekengraaf
    def logits(self, tokens: np.ndarray) -> Tensor:
        """Next-token logits (B, T, V) voor token ids (B, T)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim != 2:
            raise ShapeError(f"Tokens moeten vorm (B, T) hebben, kreeg {tokens.shape}")
        if tokens.shape[1] > self.max_len:
            raise ShapeError(f"Reeks van {tokens.shape[1]} tokens is langer dan max_len {self.max_len}")
        p = self.params
        x = embedding(p["tok_emb"], tokens)
        if self.backbone == "attention":
            x = x + p["pos_emb"][: tokens.shape[1]]
            for layer in range(self.n_layers):
                x = self._attention_block(x, layer)
        else:
            x = self._gru(x)
        return rms_norm(x, p["norm_f"]) @ p["tok_emb"].transpose()

    def _attention_block(self, x: Tensor, layer: int) -> Tensor:
        p = self.params
        pre = f"layers.{layer}."
        batch, length, d = x.shape
        heads, dh = self.n_heads, d // self.n_heads

        h = rms_norm(x, p[pre + "norm1"])

        def _split(t: Tensor) -> Tensor:
            return t.reshape(batch, length, heads, dh).transpose(0, 2, 1, 3)

        q, k, v = _split(h @ p[pre + "wq"]), _split(h @ p[pre + "wk"]), _split(h @ p[pre + "wv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
        causal = np.triu(np.ones((length, length), dtype=bool), k=1)
        att = softmax(masked_fill(scores, causal, MASK_VALUE), axis=-1)
        out = (att @ v).transpose(0, 2, 1, 3).reshape(batch, length, d)
        x = x + out @ p[pre + "wo"]

        h = rms_norm(x, p[pre + "norm2"])
        return x + silu(h @ p[pre + "w_up"]) @ p[pre + "w_down"]

    def _gru(self, x: Tensor) -> Tensor:
        p = self.params
        batch, length, d = x.shape
        h = Tensor(np.zeros((batch, d)))
        outputs: List[Tensor] = []
        for t in range(length):
            xt = x[:, t]
            z = (xt @ p["gru.w_z"] + h @ p["gru.u_z"] + p["gru.b_z"]).sigmoid()
            r = (xt @ p["gru.w_r"] + h @ p["gru.u_r"] + p["gru.b_r"]).sigmoid()
            cand = (xt @ p["gru.w_h"] + (r * h) @ p["gru.u_h"] + p["gru.b_h"]).tanh()
            h = (1.0 - z) * h + z * cand
            outputs.append(h.reshape(batch, 1, d))
        return concat(outputs, axis=1)

    def response_log_probs(
        self, prompts: np.ndarray, responses: Sequence[np.ndarray], pad_id: int = 0, with_entropy: bool = False,
    ) -> Tuple[Tensor, np.ndarray, Optional[Tensor]]:
        """Log-kansen (B, L) van de gegenereerde tokens, het geldigheidsmasker en optioneel de entropie per positie.

        Alle prompts hebben dezelfde lengte; responses worden tot de langste rechts opgevuld met pad_id.
        """
        prompts = np.asarray(prompts, dtype=np.int64)
        batch, plen = prompts.shape
        if len(responses) != batch:
            raise ShapeError(f"{len(responses)} antwoorden voor {batch} prompts")
        lengths = np.array([len(r) for r in responses], dtype=np.int64)
        width = max(int(lengths.max(initial=0)), 1)
        targets = np.full((batch, width), pad_id, dtype=np.int64)
        for b, resp in enumerate(responses):
            targets[b, : len(resp)] = resp
        inputs = np.concatenate([prompts, targets[:, :-1]], axis=1)
        logp_all = log_softmax(self.logits(inputs)[:, plen - 1:], axis=-1)
        mask = np.arange(width)[None, :] < lengths[:, None]
        logp = gather_last(logp_all, targets)
        entropy = None
        if with_entropy:
            entropy = -(logp_all.exp() * logp_all).sum(axis=-1)
        return logp, mask, entropy

    # Numpy-pad voor sampling
    def _np(self, name: str) -> np.ndarray:
        return self.params[name].data

    @staticmethod
    def _rms_np(x: np.ndarray, gain: np.ndarray) -> np.ndarray:
        return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS) * gain

    def _output_np(self, x_last: np.ndarray) -> np.ndarray:
        return self._rms_np(x_last, self._np("norm_f")) @ self._np("tok_emb").T

    def _attention_np(self, x: np.ndarray, layer: int, cache: Dict[str, np.ndarray], start: int) -> np.ndarray:
        pre = f"layers.{layer}."
        batch, length, d = x.shape
        heads, dh = self.n_heads, d // self.n_heads
        h = self._rms_np(x, self._np(pre + "norm1"))

        def _split(t: np.ndarray) -> np.ndarray:
            return t.reshape(batch, length, heads, dh).transpose(0, 2, 1, 3)

        q = _split(h @ self._np(pre + "wq"))
        keys, values = cache[pre + "k"], cache[pre + "v"]
        keys[:, :, start:start + length] = _split(h @ self._np(pre + "wk"))
        values[:, :, start:start + length] = _split(h @ self._np(pre + "wv"))
        end = start + length
        scores = q @ keys[:, :, :end].transpose(0, 1, 3, 2) / math.sqrt(dh)
        # Query i (absolute positie start+i) ziet posities <= start+i
        future = np.arange(end)[None, :] > (start + np.arange(length))[:, None]
        scores = np.where(future, MASK_VALUE, scores)
        att = _softmax_array(scores, axis=-1)
        out = (att @ values[:, :, :end]).transpose(0, 2, 1, 3).reshape(batch, length, d)
        x = x + out @ self._np(pre + "wo")
        h = self._rms_np(x, self._np(pre + "norm2"))
        up = h @ self._np(pre + "w_up")
        return x + (up * _stable_sigmoid(up)) @ self._np(pre + "w_down")

    def _gru_np(self, x: np.ndarray, h: np.ndarray) -> np.ndarray:
        for t in range(x.shape[1]):
            xt = x[:, t]
            z = _stable_sigmoid(xt @ self._np("gru.w_z") + h @ self._np("gru.u_z") + self._np("gru.b_z"))
            r = _stable_sigmoid(xt @ self._np("gru.w_r") + h @ self._np("gru.u_r") + self._np("gru.b_r"))
            cand = np.tanh(xt @ self._np("gru.w_h") + (r * h) @ self._np("gru.u_h") + self._np("gru.b_h"))
            h = (1.0 - z) * h + z * cand
        return h

    def decode_start(self, prompts: np.ndarray) -> Tuple[np.ndarray, Dict[str, object]]:
        """Verwerk de prompts; geeft logits van de laatste positie en de cache."""
        prompts = np.asarray(prompts, dtype=np.int64)
        batch, length = prompts.shape
        if length > self.max_len:
            raise ShapeError(f"Prompt van {length} tokens past niet in max_len {self.max_len}")
        cache: Dict[str, object] = {"pos": length}
        x = self._np("tok_emb")[prompts]
        if self.backbone == "attention":
            heads, dh = self.n_heads, self.d_model // self.n_heads
            x = x + self._np("pos_emb")[:length]
            for layer in range(self.n_layers):
                pre = f"layers.{layer}."
                cache[pre + "k"] = np.zeros((batch, heads, self.max_len, dh))
                cache[pre + "v"] = np.zeros((batch, heads, self.max_len, dh))
                x = self._attention_np(x, layer, cache, 0)
            return self._output_np(x[:, -1]), cache
        h = self._gru_np(x, np.zeros((batch, self.d_model)))
        cache["h"] = h
        return self._output_np(h), cache

    def decode_step(self, cache: Dict[str, object], tokens: np.ndarray) -> np.ndarray:
        """Voeg één token per rij toe; geeft de nieuwe next-token logits (B, V)."""
        pos = int(cache["pos"])
        if pos >= self.max_len:
            raise ShapeError(f"Positie {pos} buiten max_len {self.max_len}")
        x = self._np("tok_emb")[np.asarray(tokens, dtype=np.int64)][:, None, :]
        if self.backbone == "attention":
            x = x + self._np("pos_emb")[pos]
            for layer in range(self.n_layers):
                x = self._attention_np(x, layer, cache, pos)
            cache["pos"] = pos + 1
            return self._output_np(x[:, -1])
        h = self._gru_np(x, cache["h"])
        cache["h"] = h
        cache["pos"] = pos + 1
        return self._output_np(h)

    def sample(
        self,
        prompts: np.ndarray,
        max_new_tokens: int,
        rngs: Sequence[np.random.Generator],
        temperature: float = 1.0,
        stop_ids: Sequence[int] = (),
        pad_id: int = 0,
    ) -> "SampleResult":
        """Sample per rij tot een stop-token of max_new_tokens; rij b trekt uit rngs[b]."""
        prompts = np.asarray(prompts, dtype=np.int64)
        batch = prompts.shape[0]
        if len(rngs) != batch:
            raise ShapeError(f"{len(rngs)} RNG streams voor {batch} rijen")
        max_new_tokens = min(max_new_tokens, self.max_len - prompts.shape[1])
        stops = np.asarray(list(stop_ids), dtype=np.int64)
        generated: List[List[int]] = [[] for _ in range(batch)]
        finished = np.zeros(batch, dtype=bool)
        entropy = np.zeros(batch)
        with no_grad():
            logits, cache = self.decode_start(prompts)
            for step in range(max_new_tokens):
                probs = _softmax_array(logits / temperature, axis=-1)
                step_entropy = -np.sum(probs * np.log(np.clip(probs, 1e-300, None)), axis=-1)
                entropy = entropy + np.where(finished, 0.0, step_entropy)
                draws = np.array([rng.random() for rng in rngs])
                cdf = np.cumsum(probs, axis=-1)
                tokens = np.minimum((cdf < draws[:, None]).sum(axis=-1), self.vocab_size - 1)
                tokens = np.where(finished, pad_id, tokens)
                for b in np.flatnonzero(~finished):
                    generated[b].append(int(tokens[b]))
                finished = finished | np.isin(tokens, stops)
                if finished.all() or step == max_new_tokens - 1:
                    break
                logits = self.decode_step(cache, tokens)
        return SampleResult([np.asarray(g, dtype=np.int64) for g in generated], entropy)


def build_policy(architecture: Dict[str, object], seed: int = 0):
    """Policy met de juiste vormen uit een architectuur-dict; waarden komen daarna uit een checkpoint."""
    kind = architecture.get("kind")
    rng = np.random.default_rng(seed)
    if kind == "perceptron":
        return PerceptronClassifier.create(
            int(architecture["feature_dim"]), int(architecture["hidden_dim"]),
            int(architecture["num_classes"]), float(architecture.get("init_scale", 0.01)), rng, seed,
        )
    if kind == "sequence":
        return SequencePolicy.create(
            int(architecture["vocab_size"]), int(architecture["max_len"]), int(architecture["d_model"]),
            int(architecture["n_heads"]), int(architecture["n_layers"]), str(architecture["backbone"]),
            rng, seed,
        )
    raise ConfigError(f"Onbekende architectuur '{kind}'")
